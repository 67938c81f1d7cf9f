"""Shared domain types and frame conventions.

Frames
------
n-frame
    Local navigation frame anchored at the robot's initial position with
    north-east-down axes. Planar positions are ``(x, y) = (north, east)`` and
    headings are measured from north towards east.
b-frame
    Robot body, forward-right-down.
w-frame
    The spinning frame of a wheel-mounted IMU. Its z-axis lies along the axle.
    The wheel frame is also called the v-frame in some write-ups; both names
    denote the same frame here.

All angles are radians. Degrees only appear at file boundaries.
"""

from dataclasses import dataclass, field
from typing import Iterator, Literal, NamedTuple, Sequence

import numpy as np

from .errors import (
    DataError,
    EmptyInputError,
    FrameMismatchError,
    InvalidArgumentError,
    InvalidStateError,
    OrderingError,
)

EARTH_RADIUS_M = 6371000.0
IMU_RATE_HZ = 120.0
RTK_RATE_HZ = 5.0

Frame = Literal["wheel", "body"]


def _frozen(a, shape=None, name="array"):
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise InvalidArgumentError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


class ImuSample(NamedTuple):
    t: float
    f: np.ndarray
    w: np.ndarray
    frame: str


@dataclass(frozen=True, eq=False)
class ImuSequence:
    """Uniformly sampled specific force (m/s^2) and angular rate (rad/s).

    Stored column-wise: ``t`` is (N,), ``f`` and ``w`` are (N, 3).
    """

    t: np.ndarray
    f: np.ndarray
    w: np.ndarray
    frame: str = "wheel"
    rate_hz: float = IMU_RATE_HZ

    def __post_init__(self):
        t = _frozen(self.t)
        n = t.shape[0] if t.ndim == 1 else -1
        if t.ndim != 1:
            raise InvalidArgumentError("t must be one-dimensional")
        f = _frozen(self.f, (n, 3), "f")
        w = _frozen(self.w, (n, 3), "w")
        if self.frame not in ("wheel", "body"):
            raise InvalidArgumentError(f"unknown frame tag {self.frame!r}")
        if self.rate_hz <= 0:
            raise InvalidArgumentError("rate_hz must be positive")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(f)) and np.all(np.isfinite(w))):
            raise DataError("IMU sequence contains non-finite values")
        if n > 1 and np.any(np.diff(t) <= 0):
            raise OrderingError("IMU timestamps are not strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample], rate_hz=IMU_RATE_HZ):
        if not samples:
            raise EmptyInputError("no samples")
        frames = {s.frame for s in samples}
        if len(frames) != 1:
            raise FrameMismatchError(f"mixed frame tags {sorted(frames)}")
        return cls(
            t=[s.t for s in samples],
            f=[s.f for s in samples],
            w=[s.w for s in samples],
            frame=frames.pop(),
            rate_hz=rate_hz,
        )

    def __len__(self):
        return self.t.shape[0]

    def __iter__(self) -> Iterator[ImuSample]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k) -> ImuSample:
        return ImuSample(float(self.t[k]), self.f[k], self.w[k], self.frame)

    @property
    def samples(self):
        return list(self)

    @property
    def dt(self):
        return 1.0 / self.rate_hz

    def check_uniform(self, tolerance=0.1):
        """Raise DataError unless every spacing is within ``tolerance`` of 1/rate."""
        if len(self) < 2:
            return
        gaps = np.diff(self.t)
        bad = np.abs(gaps - self.dt) > tolerance * self.dt
        if np.any(bad):
            k = int(np.argmax(bad))
            raise DataError(
                f"non-uniform sampling at index {k}: spacing {gaps[k]:.6g} s "
                f"vs nominal {self.dt:.6g} s"
            )

    def shifted(self, offset):
        return ImuSequence(self.t + offset, self.f, self.w, self.frame, self.rate_hz)

    def slice(self, start, stop):
        return ImuSequence(
            self.t[start:stop], self.f[start:stop], self.w[start:stop], self.frame, self.rate_hz
        )


@dataclass(frozen=True, eq=False)
class NavState:
    """Position, velocity (n-frame) and body-to-nav rotation."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    T: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        p = _frozen(self.p, (3,), "p")
        v = _frozen(self.v, (3,), "v")
        T = _frozen(self.T, (3, 3), "T")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v)) and np.all(np.isfinite(T))):
            raise InvalidStateError("navigation state contains non-finite values")
        if orthonormality_error(T) > 1e-6 or np.linalg.det(T) <= 0:
            raise InvalidStateError("attitude matrix is not a proper rotation")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "T", T)

    @classmethod
    def level(cls, position=(0.0, 0.0), velocity=(0.0, 0.0), heading=0.0):
        """Level state from planar position, planar velocity and heading."""
        return cls(
            p=[position[0], position[1], 0.0],
            v=[velocity[0], velocity[1], 0.0],
            T=yaw_matrix(heading),
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped planar positions, ``t`` (N,) and ``xy`` (N, 2)."""

    t: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        t = _frozen(self.t)
        if t.ndim != 1:
            raise InvalidArgumentError("t must be one-dimensional")
        xy = _frozen(self.xy, (t.shape[0], 2), "xy")
        if t.shape[0] > 1 and np.any(np.diff(t) <= 0):
            raise OrderingError("trajectory timestamps are not strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "xy", xy)

    @classmethod
    def from_points(cls, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(pts[:, 0], pts[:, 1:])

    @property
    def points(self):
        return [(float(t), float(x), float(y)) for t, (x, y) in zip(self.t, self.xy)]

    def __len__(self):
        return self.t.shape[0]

    def path_length(self):
        if len(self) < 2:
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.xy, axis=0), axis=1)))

    def at(self, times):
        """Linear interpolation at ``times``; clamps outside the covered span."""
        times = np.asarray(times, dtype=np.float64)
        return np.column_stack(
            [np.interp(times, self.t, self.xy[:, 0]), np.interp(times, self.t, self.xy[:, 1])]
        )


@dataclass(frozen=True)
class GnssFix:
    """A position fix.

    ``frame`` is ``"geodetic"`` with ``position = (lat, lon, alt)`` in radians
    and metres, or ``"local"`` with ``position = (x, y)`` in metres.
    """

    t: float
    position: tuple
    frame: str = "local"

    def __post_init__(self):
        if self.frame not in ("geodetic", "local"):
            raise InvalidArgumentError(f"unknown fix frame {self.frame!r}")
        n = 3 if self.frame == "geodetic" else 2
        pos = tuple(float(c) for c in self.position)
        if len(pos) != n:
            raise InvalidArgumentError(f"{self.frame} fix needs {n} coordinates")
        if not (np.isfinite(self.t) and all(np.isfinite(pos))):
            raise DataError("non-finite GNSS fix")
        object.__setattr__(self, "position", pos)


def rotation_z(alpha):
    """Frame rotation by ``alpha`` about z.

    Maps the de-rotated wheel axes onto the spinning wheel axes; its transpose
    takes wheel-frame vectors back out.
    """
    if not np.isfinite(alpha):
        raise InvalidArgumentError(f"rotation angle must be finite, got {alpha!r}")
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_matrix(heading):
    """Body-to-nav rotation for a level body with the given heading."""
    return rotation_z(heading).T


def orthonormality_error(T):
    return float(np.max(np.abs(T.T @ T - np.eye(3))))


def geodetic_to_local(fix: GnssFix, origin: GnssFix):
    """North/east offset of ``fix`` from ``origin`` on a local tangent plane."""
    if fix.frame != "geodetic" or origin.frame != "geodetic":
        raise FrameMismatchError("geodetic_to_local needs two geodetic fixes")
    lat, lon, _ = fix.position
    lat0, lon0, _ = origin.position
    north = EARTH_RADIUS_M * (lat - lat0)
    east = EARTH_RADIUS_M * np.cos(lat0) * (lon - lon0)
    return float(north), float(east)
