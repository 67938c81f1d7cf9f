"""Synthetic periodic trajectories and the wheel-mounted IMU signals they induce.

The reference point (GNSS antenna) advances along a line while oscillating
sideways. The path is parametrised by the advance distance ``s``:

    position = s * e_adv + A * sin(k * s) * e_lat,    k = 2*pi*f / v

so at constant advance speed ``v`` the lateral offset is a sinusoid of
frequency ``f``. The robot heading follows the path tangent. Optional
stationary periods and cosine speed ramps bracket the motion. All
derivatives are analytic; wheel phase uses the exact arc length (an
incomplete elliptic integral).
"""

import configparser
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ellipeinc

from .core import IMU_RATE_HZ, RTK_RATE_HZ, ImuSequence
from .errors import ConfigError, DataError
from .mechanizer import DEFAULT_GRAVITY, LEFT_AXLE_MOUNT

G0 = 9.80665
DEG = np.pi / 180.0


@dataclass(frozen=True)
class PeriodicTrajSpec:
    speed: float = 0.4
    amplitude: float = 0.3
    frequency: float = 0.2
    duration: float = 60.0
    heading: float = 0.0
    stationary: float = 0.0
    ramp: float = None

    def __post_init__(self):
        if not self.speed > 0:
            raise ConfigError("speed must be positive")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if self.amplitude < 0 or self.frequency < 0 or self.stationary < 0:
            raise ConfigError("amplitude, frequency and stationary time must be nonnegative")
        if self.ramp is None:
            object.__setattr__(self, "ramp", 2.0 if self.stationary > 0 else 0.0)
        if self.ramp < 0:
            raise ConfigError("ramp must be nonnegative")
        if 2 * (self.stationary + self.ramp) > self.duration:
            raise ConfigError("stationary periods and ramps exceed the duration")

    @property
    def wavenumber(self):
        return 2.0 * np.pi * self.frequency / self.speed


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Constant run bias plus white noise per channel (SI units)."""

    gyro_bias: float = 10.0 * DEG / 3600.0
    gyro_noise_density: float = 0.007 * DEG
    accel_bias: float = 0.03e-3 * G0
    accel_noise_density: float = 120e-6 * G0
    seed: int = 0

    def __post_init__(self):
        if min(self.gyro_bias, self.gyro_noise_density, self.accel_bias, self.accel_noise_density) < 0:
            raise ConfigError("noise magnitudes must be nonnegative")


@dataclass(frozen=True)
class WheelGeometry:
    """Wheel layout relative to the GNSS antenna.

    Lever arms are (forward, left) in metres, keyed by wheel tag.
    """

    wheelbase: float = 0.192
    radius: float = 0.05
    lever_arms: dict = field(
        default_factory=lambda: {"wheel-front": (0.096, 0.16), "wheel-rear": (-0.096, 0.16)}
    )

    def __post_init__(self):
        if not self.wheelbase > 0 or not self.radius > 0:
            raise ConfigError("wheelbase and radius must be positive")
        arms = {k: (float(v[0]), float(v[1])) for k, v in self.lever_arms.items()}
        object.__setattr__(self, "lever_arms", arms)
        if "wheel-front" in arms and "wheel-rear" in arms:
            sep = np.hypot(*np.subtract(arms["wheel-front"], arms["wheel-rear"]))
            if abs(sep - self.wheelbase) > 1e-6:
                raise ConfigError(
                    f"front/rear lever arms are {sep:.6f} m apart but wheelbase is {self.wheelbase} m"
                )

    def lever(self, wheel):
        try:
            return self.lever_arms[wheel]
        except KeyError:
            raise ConfigError(f"no lever arm configured for {wheel!r}") from None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Dense reference-point kinematics sampled on a uniform grid."""

    spec: PeriodicTrajSpec
    t: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    heading: np.ndarray
    yaw_rate: np.ndarray
    yaw_accel: np.ndarray
    arc: np.ndarray
    rate_hz: float

    @property
    def speed(self):
        return np.linalg.norm(self.vel, axis=1)


def _advance(spec: PeriodicTrajSpec, t):
    """Advance distance s and its first two derivatives."""
    v, R = spec.speed, spec.ramp
    t1 = spec.stationary
    t2 = t1 + R
    t4 = spec.duration - spec.stationary
    t3 = t4 - R
    s = np.zeros_like(t)
    sd = np.zeros_like(t)
    sdd = np.zeros_like(t)
    if R > 0:
        up = (t >= t1) & (t < t2)
        tau = t[up] - t1
        ph = np.pi * tau / R
        s[up] = 0.5 * v * (tau - (R / np.pi) * np.sin(ph))
        sd[up] = 0.5 * v * (1.0 - np.cos(ph))
        sdd[up] = 0.5 * v * (np.pi / R) * np.sin(ph)
    cruise = (t >= t2) & (t < t3)
    s[cruise] = 0.5 * v * R + v * (t[cruise] - t2)
    sd[cruise] = v
    s3 = 0.5 * v * R + v * (t3 - t2)
    if R > 0:
        down = (t >= t3) & (t < t4)
        tau = t[down] - t3
        ph = np.pi * tau / R
        s[down] = s3 + 0.5 * v * (tau + (R / np.pi) * np.sin(ph))
        sd[down] = 0.5 * v * (1.0 + np.cos(ph))
        sdd[down] = -0.5 * v * (np.pi / R) * np.sin(ph)
    after = t >= t4
    s[after] = s3 + 0.5 * v * R
    if spec.stationary == 0 and R == 0:
        # constant speed over the closed interval, including the final instant
        s[after] = v * (t[after] - t2)
        sd[after] = v
    return s, sd, sdd


def kinematics(spec: PeriodicTrajSpec, t):
    """Analytic reference-point kinematics at arbitrary times."""
    t = np.asarray(t, dtype=np.float64)
    s, sd, sdd = _advance(spec, t)
    A, k = spec.amplitude, spec.wavenumber
    ea = np.array([np.cos(spec.heading), np.sin(spec.heading)])
    el = np.array([-np.sin(spec.heading), np.cos(spec.heading)])
    sin_ks, cos_ks = np.sin(k * s), np.cos(k * s)
    lat = A * sin_ks
    lat_d = A * k * cos_ks * sd
    lat_dd = -A * k * k * sin_ks * sd * sd + A * k * cos_ks * sdd
    pos = np.outer(s, ea) + np.outer(lat, el)
    vel = np.outer(sd, ea) + np.outer(lat_d, el)
    acc = np.outer(sdd, ea) + np.outer(lat_dd, el)

    u = A * k * cos_ks
    u_d = -A * k * k * sin_ks * sd
    u_dd = -A * k**3 * cos_ks * sd * sd - A * k * k * sin_ks * sdd
    q = 1.0 + u * u
    heading = spec.heading + np.arctan(u)
    yaw_rate = u_d / q
    yaw_accel = u_dd / q - 2.0 * u * u_d * u_d / (q * q)

    m = (A * k) ** 2
    if m == 0.0:
        arc = s.copy()
    else:
        arc = np.sqrt(1.0 + m) / k * ellipeinc(k * s, m / (1.0 + m))
    return pos, vel, acc, heading, yaw_rate, yaw_accel, arc


def gen_trajectory(spec: PeriodicTrajSpec, rate=IMU_RATE_HZ) -> GroundTruth:
    """Dense ground truth on ``t = k / rate`` for k = 0..duration*rate inclusive."""
    if rate < 2.0 * spec.frequency:
        raise ConfigError(
            f"sampling rate {rate} Hz is below twice the oscillation frequency {spec.frequency} Hz"
        )
    n = int(round(spec.duration * rate))
    t = np.arange(n + 1) / rate
    return GroundTruth(spec, t, *kinematics(spec, t), rate_hz=float(rate))


def _planar_rot(heading):
    c, s = np.cos(heading), np.sin(heading)
    return c, s


def wheel_motion(gt: GroundTruth, lever):
    """Wheel-centre position, velocity and acceleration (n-frame, planar).

    ``lever`` is (forward, left) from the reference point. Returns
    (pos, vel, acc, forward_speed, rolled_distance).
    """
    lf, ll = lever
    lx, ly = lf, -ll  # forward-right
    c, s = _planar_rot(gt.heading)
    Tl = np.column_stack([c * lx - s * ly, s * lx + c * ly])
    # S @ l with S the planar cross-product matrix for a yaw about down
    sx, sy = -ly, lx
    TSl = np.column_stack([c * sx - s * sy, s * sx + c * sy])
    r, rd, rdd = gt.yaw_rate[:, None], gt.yaw_rate, gt.yaw_accel[:, None]
    pos = gt.pos + Tl
    vel = gt.vel + r * TSl
    acc = gt.acc + rdd * TSl - r * r * Tl
    forward = np.linalg.norm(gt.vel, axis=1) + rd * ll
    rolled = gt.arc + ll * (gt.heading - gt.heading[0])
    return pos, vel, acc, forward, rolled


def _noise(n, rng, noise: ImuNoiseSpec, rate):
    gyro_bias = noise.gyro_bias * rng.choice([-1.0, 1.0], size=3)
    accel_bias = noise.accel_bias * rng.choice([-1.0, 1.0], size=3)
    sq = np.sqrt(rate)
    dw = gyro_bias + noise.gyro_noise_density * sq * rng.standard_normal((n, 3))
    df = accel_bias + noise.accel_noise_density * sq * rng.standard_normal((n, 3))
    return df, dw


def _rng(noise: ImuNoiseSpec, stream):
    return np.random.default_rng([noise.seed, stream])


def simulate_wheel_imu(
    gt: GroundTruth,
    geometry: WheelGeometry,
    wheel="wheel-front",
    noise: ImuNoiseSpec = None,
    alpha0=0.0,
    gravity=DEFAULT_GRAVITY,
    mount=LEFT_AXLE_MOUNT,
    stream=0,
) -> ImuSequence:
    """Specific force and angular rate seen by an IMU at a wheel centre.

    Ideal rolling: spin = forward wheel speed / radius, and the phase is the
    rolled distance over the radius. Bias signs and white noise are drawn from
    ``noise.seed`` and ``stream``.
    """
    _, _, acc, forward, rolled = wheel_motion(gt, geometry.lever(wheel))
    r = geometry.radius
    spin = forward / r
    alpha = alpha0 + rolled / r
    n = gt.t.shape[0]
    c, s = _planar_rot(gt.heading)
    # body forward-right-down
    f_b = np.column_stack([c * acc[:, 0] + s * acc[:, 1], -s * acc[:, 0] + c * acc[:, 1], np.full(n, -gravity)])
    w_b = np.column_stack([np.zeros(n), np.zeros(n), gt.yaw_rate])
    M = np.asarray(mount)
    f_v = f_b @ M  # rows M.T @ f
    w_v = w_b @ M
    ca, sa = np.cos(alpha), np.sin(alpha)
    f_w = np.column_stack([ca * f_v[:, 0] + sa * f_v[:, 1], -sa * f_v[:, 0] + ca * f_v[:, 1], f_v[:, 2]])
    w_w = np.column_stack([ca * w_v[:, 0] + sa * w_v[:, 1], -sa * w_v[:, 0] + ca * w_v[:, 1], w_v[:, 2] + spin])
    if noise is not None:
        df, dw = _noise(n, _rng(noise, stream), noise, gt.rate_hz)
        f_w = f_w + df
        w_w = w_w + dw
    return ImuSequence(gt.t, f_w, w_w, "wheel", gt.rate_hz)


def simulate_chassis_imu(gt: GroundTruth, noise: ImuNoiseSpec = None, gravity=DEFAULT_GRAVITY, stream=99):
    """Body-frame (forward-right-down) IMU at the reference point: no spin."""
    n = gt.t.shape[0]
    c, s = _planar_rot(gt.heading)
    f_b = np.column_stack(
        [c * gt.acc[:, 0] + s * gt.acc[:, 1], -s * gt.acc[:, 0] + c * gt.acc[:, 1], np.full(n, -gravity)]
    )
    w_b = np.column_stack([np.zeros(n), np.zeros(n), gt.yaw_rate])
    if noise is not None:
        df, dw = _noise(n, _rng(noise, stream), noise, gt.rate_hz)
        f_b = f_b + df
        w_b = w_b + dw
    return ImuSequence(gt.t, f_b, w_b, "body", gt.rate_hz)


# -- session files -------------------------------------------------------
#
# A session directory holds:
#   session.ini    [session] metadata and stream list, one [stream.<name>]
#                  section per IMU (file, frame) and a [gnss] section
#   columns.ini    column map: canonical channel = source column [unit]
#   geometry.ini   [geometry] wheelbase, radius, lever.<wheel> = fwd, left
#   imu_<name>.csv, gnss.csv, and gt.csv (dense simulated truth)

IMU_COLUMNS = {
    "t": "time_s s",
    "fx": "acc_x m/s2",
    "fy": "acc_y m/s2",
    "fz": "acc_z m/s2",
    "wx": "gyr_x rad/s",
    "wy": "gyr_y rad/s",
    "wz": "gyr_z rad/s",
}
GNSS_COLUMNS = {"t": "time_s s", "x": "north_m m", "y": "east_m m"}


def _fmt(a):
    return repr(float(a))


def _write_csv(path, header, columns):
    rows = np.column_stack(columns)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_geometry(path, geometry: WheelGeometry):
    cp = configparser.ConfigParser()
    cp["geometry"] = {"wheelbase": repr(geometry.wheelbase), "radius": repr(geometry.radius)}
    for wheel, (lf, ll) in geometry.lever_arms.items():
        cp["geometry"][f"lever.{wheel}"] = f"{lf!r}, {ll!r}"
    with open(path, "w") as fh:
        cp.write(fh)


def write_session(gt: GroundTruth, imu_streams: dict, path, geometry: WheelGeometry, trial="sim", trajectory_class=None):
    """Write a session directory readable by :func:`wheelnav.dataio.load_session`.

    IMU files cover ``[0, duration)``; the GNSS file carries the reference
    point at 5 Hz over the same span.
    """
    try:
        os.makedirs(path, exist_ok=True)
        n = gt.t.shape[0] - 1  # drop the closing instant: files cover [0, T)
        step = int(round(gt.rate_hz / RTK_RATE_HZ))
        cp = configparser.ConfigParser()
        if trajectory_class is None:
            trajectory_class = "periodic" if gt.spec.amplitude > 0 else "straight"
        cp["session"] = {
            "trial": trial,
            "trajectory_class": trajectory_class,
            "duration": repr(float(gt.spec.duration)),
            "imu_rate_hz": repr(float(gt.rate_hz)),
            "streams": ", ".join(imu_streams),
        }
        imu_header = [IMU_COLUMNS[k].split()[0] for k in ("t", "fx", "fy", "fz", "wx", "wy", "wz")]
        for name, imu in imu_streams.items():
            if len(imu) != gt.t.shape[0]:
                raise DataError(f"stream {name} does not match the ground-truth time grid")
            fname = f"imu_{name}.csv"
            cp[f"stream.{name}"] = {"file": fname, "frame": imu.frame}
            _write_csv(
                os.path.join(path, fname),
                imu_header,
                [imu.t[:n], imu.f[:n, 0], imu.f[:n, 1], imu.f[:n, 2], imu.w[:n, 0], imu.w[:n, 1], imu.w[:n, 2]],
            )
        cp["gnss"] = {"file": "gnss.csv", "frame": "local"}
        idx = np.arange(0, n, step)
        _write_csv(
            os.path.join(path, "gnss.csv"),
            [GNSS_COLUMNS[k].split()[0] for k in ("t", "x", "y")],
            [gt.t[idx], gt.pos[idx, 0], gt.pos[idx, 1]],
        )
        _write_csv(
            os.path.join(path, "gt.csv"),
            ["t", "x", "y", "heading", "yaw_rate"],
            [gt.t, gt.pos[:, 0], gt.pos[:, 1], gt.heading, gt.yaw_rate],
        )
        with open(os.path.join(path, "session.ini"), "w") as fh:
            cp.write(fh)
        cols = configparser.ConfigParser()
        cols["imu"] = dict(IMU_COLUMNS)
        cols["gnss"] = dict(GNSS_COLUMNS)
        with open(os.path.join(path, "columns.ini"), "w") as fh:
            cols.write(fh)
        write_geometry(os.path.join(path, "geometry.ini"), geometry)
    except OSError as exc:
        raise DataError(f"cannot write session to {path}: {exc}") from exc
    return path


def simulate_session(
    spec: PeriodicTrajSpec,
    geometry: WheelGeometry = None,
    noise: ImuNoiseSpec = None,
    wheels=("wheel-front", "wheel-rear"),
    chassis=True,
    alpha0=0.0,
    rate=IMU_RATE_HZ,
    gravity=DEFAULT_GRAVITY,
):
    """Ground truth plus one IMU per wheel (and optionally the chassis)."""
    geometry = geometry or WheelGeometry()
    gt = gen_trajectory(spec, rate)
    streams = {}
    for i, wheel in enumerate(wheels):
        streams[wheel] = simulate_wheel_imu(gt, geometry, wheel, noise, alpha0, gravity, stream=i)
    if chassis:
        streams["chassis"] = simulate_chassis_imu(gt, noise, gravity)
    return gt, streams
