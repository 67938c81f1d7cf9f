"""Trajectory metrics, report formatting and the distance-plus-heading baseline.

PRMSE is the root mean square of planar position errors after resampling the
estimate at the ground-truth timestamps; TDE normalises it by the ground-truth
path length, in percent.
"""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import RTK_RATE_HZ, ImuSequence, Trajectory
from .errors import EmptyInputError, InvalidArgumentError, ShapeError

# published reference figures: (method, trajectory) -> (PRMSE m, TDE %)
REFERENCE_RESULTS = {
    ("WMIN", "Traj. 1"): (186.63, 99.00),
    ("WMIN", "Traj. 2"): (168.35, 99.00),
    ("WMIN", "Average"): (177.49, 99.00),
    ("MoRPINet", "Traj. 1"): (3.70, 32.04),
    ("MoRPINet", "Traj. 2"): (3.20, 31.16),
    ("MoRPINet", "Average"): (3.45, 31.60),
    ("WMINet", "Traj. 1"): (1.37, 11.50),
    ("WMINet", "Traj. 2"): (1.71, 14.15),
    ("WMINet", "Average"): (1.54, 12.91),
}
# with / without the wheelbase constraint: trajectory -> (plain, constrained, improvement %)
REFERENCE_WC = {
    "Traj. 1": (1.37, 0.94, 31.38),
    "Traj. 2": (1.71, 1.35, 21.02),
    "Average": (1.54, 1.16, 24.0),
}

REPORT_COLUMNS = ("method", "trajectory", "PRMSE_m", "TDE_pct")


def prmse(gt: Trajectory, est: Trajectory) -> float:
    """Root mean square planar position error at the ground-truth timestamps."""
    if len(gt) < 1 or len(est) < 1:
        raise EmptyInputError("PRMSE needs at least one point in each trajectory")
    if len(est) == len(gt) and np.array_equal(est.t, gt.t):
        xy = est.xy
    else:
        xy = est.at(gt.t)
    err = gt.xy - xy
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def tde(prmse_m, length_m) -> float:
    if not length_m > 0:
        raise InvalidArgumentError(f"trajectory length must be positive, got {length_m}")
    return 100.0 * float(prmse_m) / float(length_m)


def improvement(prmse_a, prmse_b) -> float:
    """Relative PRMSE reduction of b over a, in percent."""
    if not prmse_a > 0:
        raise InvalidArgumentError("baseline PRMSE must be positive")
    return 100.0 * (prmse_a - prmse_b) / prmse_a


# -- Madgwick heading ----------------------------------------------------


class HeadingSeries(NamedTuple):
    t: np.ndarray
    psi: np.ndarray  # rad, clockwise from north, unwrapped


def _qmul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def _qexp(phi):
    """Quaternion of the rotation vector ``phi``."""
    theta = float(np.sqrt(phi @ phi))
    if theta < 1e-12:
        return np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
    s = np.sin(0.5 * theta) / theta
    return np.array([np.cos(0.5 * theta), s * phi[0], s * phi[1], s * phi[2]])


def _tilt_quaternion(acc):
    """Level-frame attitude with zero yaw from one accelerometer sample (z-up axes)."""
    ax, ay, az = acc
    roll = np.arctan2(ay, az)
    pitch = np.arctan2(-ax, np.hypot(ay, az))
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    return np.array([cr * cp, sr * cp, cr * sp, -sr * sp])


def _gradient(q, a):
    w, x, y, z = q
    ax, ay, az = a
    f = np.array([
        2.0 * (x * z - w * y) - ax,
        2.0 * (w * x + y * z) - ay,
        2.0 * (0.5 - x * x - y * y) - az,
    ])
    J = np.array([
        [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
        [0.0, -4.0 * x, -4.0 * y, 0.0],
    ])
    return J.T @ f


def madgwick_heading(imu: ImuSequence, beta=0.1, heading0=0.0) -> HeadingSeries:
    """Heading from the IMU-only gradient-descent orientation filter.

    Input is a body forward-right-down sequence. The filter works in a z-up
    frame, so axes are flipped on entry. The gyro step uses the exact
    quaternion exponential of the trapezoidal mean rate, which makes
    ``beta = 0`` identical to trapezoidal integration of the yaw rate on
    level motion. Samples with a zero accelerometer norm skip the correction.
    """
    if len(imu) == 0:
        raise EmptyInputError("empty IMU sequence")
    if imu.frame == "wheel":
        raise InvalidArgumentError("madgwick_heading expects a body-frame (chassis) sequence")
    imu.check_uniform()
    flip = np.array([1.0, -1.0, -1.0])
    acc = imu.f * flip
    gyr = imu.w * flip
    n = len(imu)
    dt = imu.dt
    a0 = acc[0]
    q = _tilt_quaternion(a0) if np.linalg.norm(a0) > 0 else np.array([1.0, 0.0, 0.0, 0.0])
    yaw = np.empty(n)
    for k in range(n):
        if k > 0:
            q = _qmul(q, _qexp(0.5 * (gyr[k - 1] + gyr[k]) * dt))
            if beta > 0:
                a = acc[k]
                na = np.linalg.norm(a)
                if na > 0:
                    g = _gradient(q, a / na)
                    ng = np.linalg.norm(g)
                    if ng > 0:
                        q = q - beta * (g / ng) * dt
            q = q / np.linalg.norm(q)
        w, x, y, z = q
        yaw[k] = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    # z-up yaw is counter-clockwise; heading is clockwise from north
    return HeadingSeries(imu.t.copy(), heading0 - np.unwrap(yaw))


def morpinet_update(origin, distances, headings, t=None) -> Trajectory:
    """Accumulate per-interval distances along per-interval headings."""
    d = np.asarray(distances, dtype=np.float64).ravel()
    psi = np.asarray(headings, dtype=np.float64).ravel()
    if d.shape != psi.shape:
        raise ShapeError(f"{d.size} distances but {psi.size} headings")
    steps = np.column_stack([d * np.cos(psi), d * np.sin(psi)])
    xy = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)]) + np.asarray(origin, dtype=np.float64)
    if t is None:
        t = np.arange(d.size + 1) / RTK_RATE_HZ
    return Trajectory(t, xy)


def morpinet_oracle(track: Trajectory, chassis: ImuSequence, beta=0.1, heading0=None) -> Trajectory:
    """Distance-plus-heading baseline fed with ground-truth interval distances.

    The distance regressor is replaced by the true distance between
    consecutive fixes; heading comes from the orientation filter sampled at
    each interval midpoint. Isolates the heading contribution to the error.
    """
    if len(track) < 2:
        raise EmptyInputError("need at least two fixes")
    steps = np.diff(track.xy, axis=0)
    d = np.linalg.norm(steps, axis=1)
    if heading0 is None:
        moving = np.nonzero(d > 1e-3)[0]
        first = steps[moving[0]] if moving.size else np.array([1.0, 0.0])
        heading0 = float(np.arctan2(first[1], first[0]))
    hs = madgwick_heading(chassis, beta, 0.0)
    # reference the filter heading to the first fix
    psi_at_start = np.interp(track.t[0], hs.t, hs.psi)
    mid = 0.5 * (track.t[1:] + track.t[:-1])
    psi = heading0 + np.interp(mid, hs.t, hs.psi) - psi_at_start
    return morpinet_update(track.xy[0], d, psi, track.t)


# -- reports -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EvalReport:
    method: str
    trajectory: str
    prmse: float
    tde: float
    length: float
    estimate: Trajectory = None

    def __post_init__(self):
        if self.prmse < 0:
            raise InvalidArgumentError("PRMSE cannot be negative")


def evaluate(estimates, gt: Trajectory, trajectory="traj", length=None):
    """Score each named estimate against ``gt``.

    ``estimates`` maps method name to Trajectory. ``length`` defaults to the
    ground-truth path length.
    """
    if isinstance(estimates, Trajectory):
        estimates = {"estimate": estimates}
    D = gt.path_length() if length is None else float(length)
    out = []
    for method, est in estimates.items():
        e = prmse(gt, est)
        out.append(EvalReport(method, trajectory, e, tde(e, D), D, est))
    return out


def with_averages(reports):
    """Append one ``Average`` row per method (mean PRMSE, mean TDE)."""
    out = list(reports)
    methods = list(dict.fromkeys(r.method for r in reports))
    for m in methods:
        rows = [r for r in reports if r.method == m and r.trajectory != "Average"]
        if len(rows) > 1:
            out.append(EvalReport(m, "Average", float(np.mean([r.prmse for r in rows])),
                                  float(np.mean([r.tde for r in rows])), float(np.mean([r.length for r in rows]))))
    order = {m: i for i, m in enumerate(methods)}
    return sorted(out, key=lambda r: (order[r.method], r.trajectory == "Average"))


def write_report_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([r.method, r.trajectory, f"{r.prmse:.6f}", f"{r.tde:.6f}"])


def read_report_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != REPORT_COLUMNS:
        raise InvalidArgumentError(f"{path}: expected columns {REPORT_COLUMNS}")
    return [EvalReport(r["method"], r["trajectory"], float(r["PRMSE_m"]), float(r["TDE_pct"]), float("nan"))
            for r in rows]


def format_table(reports) -> str:
    lines = [f"{'Method':<28} {'Trajectory':<12} {'PRMSE [m]':>10} {'TDE [%]':>9}"]
    for r in reports:
        lines.append(f"{r.method:<28} {r.trajectory:<12} {r.prmse:>10.2f} {r.tde:>9.2f}")
    return "\n".join(lines)


@dataclass(frozen=True)
class CompareRow:
    trajectory: str
    prmse_a: float
    prmse_b: float
    improvement: float


def compare(reports_a, reports_b):
    """Pair two methods' reports by trajectory; improvement is b over a.

    The average row compares mean PRMSEs (not the mean of per-trajectory
    improvements).
    """
    a = {r.trajectory: r for r in reports_a if r.trajectory != "Average"}
    b = {r.trajectory: r for r in reports_b if r.trajectory != "Average"}
    common = [k for k in a if k in b]
    if not common:
        raise InvalidArgumentError("the two report sets share no trajectory")
    rows = [CompareRow(k, a[k].prmse, b[k].prmse, improvement(a[k].prmse, b[k].prmse)) for k in common]
    if len(rows) > 1:
        ma = float(np.mean([r.prmse_a for r in rows]))
        mb = float(np.mean([r.prmse_b for r in rows]))
        rows.append(CompareRow("Average", ma, mb, improvement(ma, mb)))
    return rows


def write_compare_csv(rows, path, name_a="A", name_b="B"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", f"PRMSE_m_{name_a}", f"PRMSE_m_{name_b}", "improvement_pct"])
        for r in rows:
            w.writerow([r.trajectory, f"{r.prmse_a:.6f}", f"{r.prmse_b:.6f}", f"{r.improvement:.6f}"])


def format_compare(rows, name_a="A", name_b="B") -> str:
    lines = [f"{'Trajectory':<12} {name_a + ' [m]':>14} {name_b + ' [m]':>14} {'Improvement [%]':>16}"]
    for r in rows:
        lines.append(f"{r.trajectory:<12} {r.prmse_a:>14.2f} {r.prmse_b:>14.2f} {r.improvement:>16.2f}")
    return "\n".join(lines)


def write_trajectory_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y"])
        for t, (x, y) in zip(traj.t, traj.xy):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(data[:, 0], data[:, 1:3])
