"""Model-based wheel-mounted inertial navigation.

Pipeline: integrate the wheel spin into a phase angle, de-rotate the wheel
measurements by that angle, permute the axle-aligned axes into the robot's
forward-right-down body frame, then run a strapdown integrator. Earth rate and
transport rate are not modelled.

Axis conventions. After de-rotation the measurement frame still has its z-axis
on the axle, so a fixed mounting matrix maps it into the body frame. With the
default left-pointing axle the wheel z-axis becomes body -y, the de-rotated
x-axis stays forward and the de-rotated y-axis points down. The spin component
is already accounted for by the phase angle and is never fed to the attitude
integrator a second time.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import IMU_RATE_HZ, ImuSample, ImuSequence, NavState, Trajectory, rotation_z
from .errors import (
    ConfigError,
    EmptyInputError,
    FrameMismatchError,
    InvalidArgumentError,
    InvalidStateError,
)

DEFAULT_GRAVITY = 9.7953

# columns are the de-rotated wheel axes expressed in body forward-right-down
LEFT_AXLE_MOUNT = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
RIGHT_AXLE_MOUNT = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class MechanizerConfig:
    dt: float = 1.0 / IMU_RATE_HZ
    gravity: float = DEFAULT_GRAVITY
    planar_2d: bool = True
    initial_state: NavState = field(default_factory=NavState)
    alpha0: float = 0.0
    mount: np.ndarray = field(default_factory=lambda: LEFT_AXLE_MOUNT.copy())
    reorthonormalize_every: int = 1000

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not 9.7 <= self.gravity <= 9.9:
            raise ConfigError(f"gravity {self.gravity} outside [9.7, 9.9] m/s^2")
        mount = np.asarray(self.mount, dtype=float)
        if mount.shape != (3, 3) or not np.allclose(mount.T @ mount, np.eye(3)):
            raise ConfigError("mount must be a 3x3 rotation")


@dataclass(frozen=True, eq=False)
class PhaseSeries:
    t: np.ndarray
    alpha: np.ndarray

    @property
    def alphas(self):
        return list(zip(self.t.tolist(), self.alpha.tolist()))

    def __len__(self):
        return self.alpha.shape[0]


def integrate_phase(wheel_gyro_z, dt, alpha0=0.0, t=None):
    """Cumulative trapezoidal integral of the wheel spin rate.

    No wrapping is applied; downstream rotations are periodic in the angle.
    """
    w = np.asarray(wheel_gyro_z, dtype=np.float64).ravel()
    if w.size == 0:
        raise EmptyInputError("empty gyro series")
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    alpha = np.empty_like(w)
    alpha[0] = alpha0
    alpha[1:] = alpha0 + np.cumsum(0.5 * (w[1:] + w[:-1]) * dt)
    if t is None:
        t = np.arange(w.size) * dt
    return PhaseSeries(np.asarray(t, dtype=np.float64), alpha)


def wheel_to_body(sample: ImuSample, alpha) -> ImuSample:
    """Rotate one wheel-frame sample out of the spinning frame."""
    if sample.frame != "wheel":
        raise FrameMismatchError(f"expected a wheel-frame sample, got {sample.frame!r}")
    C = rotation_z(alpha).T
    return ImuSample(sample.t, C @ np.asarray(sample.f), C @ np.asarray(sample.w), "body")


def derotate(vectors, alpha):
    """Vectorised ``rotation_z(alpha_k).T @ v_k`` for (N, 3) vectors."""
    c, s = np.cos(alpha), np.sin(alpha)
    out = np.empty_like(vectors)
    out[:, 0] = c * vectors[:, 0] - s * vectors[:, 1]
    out[:, 1] = s * vectors[:, 0] + c * vectors[:, 1]
    out[:, 2] = vectors[:, 2]
    return out


def rotvec_exp(phi):
    """Rotation matrix of a rotation vector (Rodrigues)."""
    theta = float(np.sqrt(phi @ phi))
    K = np.array([[0.0, -phi[2], phi[1]], [phi[2], 0.0, -phi[0]], [-phi[1], phi[0], 0.0]])
    if theta < 1e-8:
        # second-order series; exact to rounding at this size
        return np.eye(3) + K + 0.5 * (K @ K)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)
    )


def polar(T):
    U, _, Vt = np.linalg.svd(T)
    return U @ Vt


def _step(p, v, T, f_b, w_b, dt, g_n):
    T = T @ rotvec_exp(w_b * dt)
    v = v + (T @ f_b + g_n) * dt
    p = p + v * dt
    return p, v, T


def strapdown_step(state: NavState, f_b, w_b, dt, gravity=DEFAULT_GRAVITY) -> NavState:
    """One strapdown update: exact attitude exponential, then semi-implicit Euler."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    if not isinstance(state, NavState):
        raise InvalidStateError("state must be a NavState")
    g_n = np.array([0.0, 0.0, gravity])
    p, v, T = _step(state.p, state.v, state.T, np.asarray(f_b, float), np.asarray(w_b, float), dt, g_n)
    return NavState(p, v, T)


def body_signals(imu: ImuSequence, config: MechanizerConfig):
    """Body-frame specific force and attitude rate fed to the integrator.

    Returns (f_b, w_b, alpha). In planar mode the vertical specific force and
    the roll/pitch rates are zeroed; otherwise only the axle component (already
    captured by the phase) is removed from the rate.
    """
    if imu.frame != "wheel":
        raise FrameMismatchError(f"mechanize expects a wheel-frame sequence, got {imu.frame!r}")
    phase = integrate_phase(imu.w[:, 2], config.dt, config.alpha0, imu.t)
    f_v = derotate(imu.f, phase.alpha)
    w_v = derotate(imu.w, phase.alpha)
    w_v[:, 2] = 0.0
    M = np.asarray(config.mount, dtype=float)
    f_b = f_v @ M.T
    w_b = w_v @ M.T
    if config.planar_2d:
        f_b[:, 2] = 0.0
        w_b[:, 0] = 0.0
        w_b[:, 1] = 0.0
    return f_b, w_b, phase.alpha


def mechanize(imu: ImuSequence, config: MechanizerConfig = None) -> Trajectory:
    """Dead-reckon a wheel-frame IMU sequence into a planar trajectory.

    The returned trajectory has one point per IMU timestamp; sample k moves the
    state from t_k to t_k + dt.
    """
    config = config or MechanizerConfig()
    if len(imu) == 0:
        raise EmptyInputError("empty IMU sequence")
    imu.check_uniform()
    if abs(imu.dt - config.dt) > 0.1 * config.dt:
        raise ConfigError(f"config dt {config.dt:.6g} s does not match IMU rate {imu.rate_hz} Hz")
    f_b, w_b, _ = body_signals(imu, config)
    # in planar mode the vertical channel is dropped, so gravity never enters
    g_n = np.array([0.0, 0.0, 0.0 if config.planar_2d else config.gravity])
    s0 = config.initial_state
    p, v, T = s0.p.copy(), s0.v.copy(), s0.T.copy()
    n = len(imu)
    out = np.empty((n, 2))
    out[0] = p[:2]
    dt = config.dt
    every = config.reorthonormalize_every
    for k in range(n - 1):
        p, v, T = _step(p, v, T, f_b[k], w_b[k], dt, g_n)
        if every and (k + 1) % every == 0:
            T = polar(T)
        if not np.all(np.isfinite(p)):
            raise InvalidStateError(f"non-finite state at sample {k}")
        out[k + 1] = p[:2]
    return Trajectory(imu.t, out)


def initial_state_from_track(track: Trajectory, min_displacement=0.05):
    """Level initial state seeded from a ground-truth track.

    Heading follows the first displacement larger than ``min_displacement``;
    velocity is the first finite difference of the track.
    """
    xy = track.xy
    heading = 0.0
    if len(track) >= 2:
        dist = np.linalg.norm(xy - xy[0], axis=1)
        moved = np.nonzero(dist > min_displacement)[0]
        if moved.size:
            d = xy[moved[0]] - xy[0]
            heading = float(np.arctan2(d[1], d[0]))
        vel = (xy[1] - xy[0]) / (track.t[1] - track.t[0])
    else:
        vel = np.zeros(2)
    return NavState.level(position=xy[0], velocity=vel, heading=heading)


def phase_from_gravity(imu: ImuSequence, samples=120, mount=LEFT_AXLE_MOUNT, rest_rate=0.05):
    """Initial wheel phase from the gravity reaction at the start of ``imu``.

    Averages the leading samples (at most ``samples``) whose angular rate
    stays below ``rest_rate``; if the wheel is already turning, only the
    first sample is used. Assumes a level chassis with negligible
    acceleration at that instant.
    """
    if len(imu) == 0:
        raise EmptyInputError("empty IMU sequence")
    moving = np.nonzero(np.linalg.norm(imu.w[:samples], axis=1) > rest_rate)[0]
    n = int(moving[0]) if moving.size else min(samples, len(imu))
    f = imu.f[: max(1, n)].mean(axis=0)
    # level, at rest: f_b = (0, 0, -g); de-rotated f_v = mount.T @ f_b
    up = np.asarray(mount, dtype=float).T @ np.array([0.0, 0.0, -1.0])
    # f_w = rotation_z(alpha) @ f_v, solve for alpha in the wheel plane
    return float(np.arctan2(up[1] * f[0] - up[0] * f[1], up[0] * f[0] + up[1] * f[1]))
