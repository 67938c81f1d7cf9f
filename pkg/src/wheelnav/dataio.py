"""Session ingestion, clock synchronisation, per-wheel ground truth and windowing.

A session is a directory with CSV files and three INI files (see
``simkit.write_session`` for the layout). Column names and units are taken
from a column map so that datasets with other schemas only need a new
``columns.ini``. Units are normalised to SI on load; nothing downstream
converts units.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .core import IMU_RATE_HZ, RTK_RATE_HZ, GnssFix, ImuSequence, Trajectory, geodetic_to_local
from .errors import ConfigError, DataError, EmptyInputError, OrderingError, SchemaError, SyncError
from .mechanizer import integrate_phase
from .simkit import G0, WheelGeometry
from .tensornet import load_arrays, save_arrays

log = logging.getLogger(__name__)

UNIT_SCALE = {
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "ns": 1e-9,
    "m/s2": 1.0,
    "m/s^2": 1.0,
    "g": G0,
    "mg": 1e-3 * G0,
    "rad/s": 1.0,
    "deg/s": np.pi / 180.0,
    "m": 1.0,
    "rad": 1.0,
    "deg": np.pi / 180.0,
}

IMU_CHANNELS = ("t", "fx", "fy", "fz", "wx", "wy", "wz")


@dataclass(frozen=True)
class ColumnSpec:
    source: str
    unit: str = ""

    @property
    def scale(self):
        if not self.unit:
            return 1.0
        try:
            return UNIT_SCALE[self.unit]
        except KeyError:
            raise SchemaError(f"unknown unit tag {self.unit!r} for column {self.source!r}") from None


@dataclass(frozen=True)
class ColumnMap:
    imu: dict
    gnss: dict

    @classmethod
    def read(cls, path):
        cp = _read_ini(path)
        out = {}
        for section in ("imu", "gnss"):
            if not cp.has_section(section):
                raise SchemaError(f"{path}: missing [{section}] column map")
            specs = {}
            for key, value in cp[section].items():
                parts = value.split()
                specs[key] = ColumnSpec(parts[0], parts[1] if len(parts) > 1 else "")
            out[section] = specs
        missing = [c for c in IMU_CHANNELS if c not in out["imu"]]
        if missing:
            raise SchemaError(f"{path}: IMU column map lacks {missing}")
        if "t" not in out["gnss"] or not ({"x", "y"} <= out["gnss"].keys() or {"lat", "lon"} <= out["gnss"].keys()):
            raise SchemaError(f"{path}: GNSS column map needs t and either x, y or lat, lon")
        return cls(out["imu"], out["gnss"])


@dataclass(frozen=True)
class RecordingSession:
    imu_streams: dict
    gnss: list
    metadata: dict = field(default_factory=dict)
    geometry: WheelGeometry = None
    offsets: dict = None

    @property
    def synchronized(self):
        return self.offsets is not None

    def gnss_track(self):
        """GNSS fixes as a local planar trajectory (geodetic fixes anchored at the first)."""
        if not self.gnss:
            raise EmptyInputError("session has no GNSS fixes")
        origin = self.gnss[0]
        if origin.frame == "geodetic":
            xy = [geodetic_to_local(f, origin) for f in self.gnss]
        else:
            if any(f.frame != "local" for f in self.gnss):
                raise DataError("mixed GNSS frames in one session")
            xy = [f.position for f in self.gnss]
        return Trajectory([f.t for f in self.gnss], xy)


def _read_ini(path):
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return cp


def read_geometry(path) -> WheelGeometry:
    cp = _read_ini(path)
    if not cp.has_section("geometry"):
        raise ConfigError(f"{path}: missing [geometry] section")
    g = cp["geometry"]
    for key in ("wheelbase", "radius"):
        if key not in g:
            raise ConfigError(f"{path}: geometry field {key!r} is mandatory")
    arms = {}
    for key, value in g.items():
        if key.startswith("lever."):
            try:
                lf, ll = (float(v) for v in value.split(","))
            except ValueError:
                raise ConfigError(f"{path}: bad lever arm {key} = {value!r}") from None
            arms[key[len("lever."):]] = (lf, ll)
    if not arms:
        raise ConfigError(f"{path}: at least one lever.<wheel> entry is mandatory")
    return WheelGeometry(wheelbase=g.getfloat("wheelbase"), radius=g.getfloat("radius"), lever_arms=arms)


def _read_columns(path, specs: dict, wanted):
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    try:
        table = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64, encoding="utf-8")
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    table = np.atleast_1d(table)
    names = table.dtype.names or ()
    cols = {}
    for key in wanted:
        spec = specs[key]
        # genfromtxt sanitises header names the same way for lookup
        src = spec.source
        if src not in names:
            raise SchemaError(f"{path}: column {src!r} (for {key}) not found; have {list(names)}")
        cols[key] = np.asarray(table[src], dtype=np.float64) * spec.scale
    data = np.column_stack([cols[k] for k in wanted]) if wanted else np.zeros((0, 0))
    good = np.all(np.isfinite(data), axis=1)
    dropped = int(np.count_nonzero(~good))
    if dropped:
        log.warning("%s: dropped %d row(s) with missing or non-finite values", path, dropped)
    data = data[good]
    if data.shape[0] > 1 and np.any(np.diff(data[:, 0]) <= 0):
        raise OrderingError(f"{path}: timestamps are not strictly increasing")
    return data, dropped


def load_session(path, columns=None, geometry=None) -> RecordingSession:
    """Read a session directory.

    ``columns`` and ``geometry`` may be paths or objects overriding the
    directory's own ``columns.ini`` / ``geometry.ini``.
    """
    if not os.path.isdir(path):
        raise DataError(f"session directory not found: {path}")
    cp = _read_ini(os.path.join(path, "session.ini"))
    if not cp.has_section("session"):
        raise SchemaError(f"{path}/session.ini: missing [session] section")
    meta = dict(cp["session"])
    rate = float(meta.get("imu_rate_hz", IMU_RATE_HZ))
    if columns is None:
        columns = os.path.join(path, "columns.ini")
    colmap = columns if isinstance(columns, ColumnMap) else ColumnMap.read(columns)
    if geometry is None:
        gpath = os.path.join(path, "geometry.ini")
        geometry = read_geometry(gpath) if os.path.exists(gpath) else None
    elif not isinstance(geometry, WheelGeometry):
        geometry = read_geometry(geometry)

    dropped = {}
    streams = {}
    names = [s.strip() for s in meta.get("streams", "").split(",") if s.strip()]
    if not names:
        raise SchemaError(f"{path}/session.ini: no IMU streams listed")
    for name in names:
        sec = f"stream.{name}"
        if not cp.has_section(sec):
            raise SchemaError(f"{path}/session.ini: missing [{sec}]")
        data, dropped[name] = _read_columns(os.path.join(path, cp[sec]["file"]), colmap.imu, IMU_CHANNELS)
        if data.shape[0] == 0:
            raise EmptyInputError(f"stream {name} has no valid rows")
        streams[name] = ImuSequence(data[:, 0], data[:, 1:4], data[:, 4:7], cp[sec].get("frame", "wheel"), rate)

    if not cp.has_section("gnss"):
        raise SchemaError(f"{path}/session.ini: missing [gnss] section")
    gfile = os.path.join(path, cp["gnss"]["file"])
    if {"x", "y"} <= colmap.gnss.keys():
        data, dropped["gnss"] = _read_columns(gfile, colmap.gnss, ("t", "x", "y"))
        fixes = [GnssFix(r[0], (r[1], r[2]), "local") for r in data]
    else:
        keys = ("t", "lat", "lon") + (("alt",) if "alt" in colmap.gnss else ())
        data, dropped["gnss"] = _read_columns(gfile, colmap.gnss, keys)
        alt = data[:, 3] if data.shape[1] > 3 else np.zeros(data.shape[0])
        fixes = [GnssFix(r[0], (r[1], r[2], a), "geodetic") for r, a in zip(data, alt)]
    meta["dropped_rows"] = dropped
    meta["path"] = path
    return RecordingSession(streams, fixes, meta, geometry)


def write_csv_session(session: RecordingSession, path):
    """Write a loaded session back out in the canonical column layout."""
    from .simkit import GNSS_COLUMNS, IMU_COLUMNS, _write_csv, write_geometry

    os.makedirs(path, exist_ok=True)
    cp = configparser.ConfigParser()
    meta = {k: str(v) for k, v in session.metadata.items() if k not in ("dropped_rows", "path")}
    meta["streams"] = ", ".join(session.imu_streams)
    cp["session"] = meta
    header = [IMU_COLUMNS[k].split()[0] for k in IMU_CHANNELS]
    for name, imu in session.imu_streams.items():
        fname = f"imu_{name}.csv"
        cp[f"stream.{name}"] = {"file": fname, "frame": imu.frame}
        _write_csv(os.path.join(path, fname), header, [imu.t, *imu.f.T, *imu.w.T])
    track = session.gnss_track()
    cp["gnss"] = {"file": "gnss.csv", "frame": "local"}
    _write_csv(os.path.join(path, "gnss.csv"), [GNSS_COLUMNS[k].split()[0] for k in ("t", "x", "y")],
               [track.t, track.xy[:, 0], track.xy[:, 1]])
    with open(os.path.join(path, "session.ini"), "w") as fh:
        cp.write(fh)
    cols = configparser.ConfigParser()
    cols["imu"] = dict(IMU_COLUMNS)
    cols["gnss"] = dict(GNSS_COLUMNS)
    with open(os.path.join(path, "columns.ini"), "w") as fh:
        cols.write(fh)
    if session.geometry is not None:
        write_geometry(os.path.join(path, "geometry.ini"), session.geometry)


# -- synchronisation -----------------------------------------------------


def _sustained_onset(values, threshold, run):
    """Index of the first sample starting ``run`` consecutive values above threshold."""
    above = values > threshold
    if run <= 1:
        idx = np.nonzero(above)[0]
        return int(idx[0]) if idx.size else None
    c = np.convolve(above.astype(int), np.ones(run, dtype=int), mode="valid")
    idx = np.nonzero(c == run)[0]
    return int(idx[0]) if idx.size else None


def _crossing_time(t, y, level, start):
    """Linear-interpolated time at which ``y`` first reaches ``level`` from index ``start`` on."""
    idx = np.nonzero(y[start:] >= level)[0]
    if not idx.size:
        return None
    j = start + int(idx[0])
    if j == 0:
        return float(t[0])
    y0, y1 = y[j - 1], y[j]
    frac = 0.0 if y1 == y0 else (level - y0) / (y1 - y0)
    return float(t[j - 1] + np.clip(frac, 0.0, 1.0) * (t[j] - t[j - 1]))


@dataclass(frozen=True)
class SyncSettings:
    gyro_threshold: float = 0.5  # rad/s, wheel spin
    speed_threshold: float = 0.02  # m/s, RTK course
    sustain: float = 0.5  # s
    distance: float = 0.02  # m rolled / travelled that defines onset


def gnss_motion_onset(track: Trajectory, settings=SyncSettings()):
    """Time at which the antenna has moved ``settings.distance`` from rest."""
    speed = _track_speed(track)
    dt = np.median(np.diff(track.t)) if len(track) > 1 else 1.0 / RTK_RATE_HZ
    run = max(1, int(round(settings.sustain / dt)))
    j = _sustained_onset(speed, settings.speed_threshold, run)
    if j is None:
        return None
    rest = track.xy[: max(j, 1)].mean(axis=0)
    dist = np.linalg.norm(track.xy - rest, axis=1)
    coarse = _crossing_time(track.t, dist, settings.distance, max(j - 1, 0))
    if coarse is None or len(track) < 4:
        return coarse
    # 5 Hz fixes are coarse next to the IMU; refine on a cubic through the distances
    k = int(np.searchsorted(track.t, coarse))
    lo, hi = max(k - 4, 0), min(k + 4, len(track))
    if hi - lo < 4:
        return coarse
    spline = CubicSpline(track.t[lo:hi], dist[lo:hi])
    roots = [r for r in spline.solve(settings.distance, extrapolate=False)
             if track.t[max(k - 1, 0)] <= r <= track.t[min(k, len(track) - 1)]]
    return float(roots[0]) if roots else coarse


def imu_motion_onset(imu: ImuSequence, radius, settings=SyncSettings()):
    """Time at which the wheel has rolled ``settings.distance``."""
    mag = np.linalg.norm(imu.w, axis=1)
    run = max(1, int(round(settings.sustain * imu.rate_hz)))
    j = _sustained_onset(mag, settings.gyro_threshold, run)
    if j is None:
        return None
    # rolled distance, measured from the mean phase over the rest period
    phase = integrate_phase(imu.w[:, 2], 1.0 / imu.rate_hz, 0.0, imu.t).alpha
    rest = phase[: max(j, 1)]
    rolled = np.abs(phase - rest.mean()) * radius
    k = max(j - 1, 0)
    # go back to the last sample still at rest before the excursion
    back = np.nonzero(rolled[:k + 1] < 0.25 * settings.distance)[0]
    start = int(back[-1]) if back.size else 0
    return _crossing_time(imu.t, rolled, settings.distance, start)


def synchronize(session: RecordingSession, settings=SyncSettings()) -> RecordingSession:
    """Shift every IMU clock onto GNSS time using motion onsets.

    Wheel streams are aligned individually by matching the rolled distance
    against the antenna displacement at onset. Body-frame streams share the
    IMU clock and take the mean offset of the wheel streams.
    """
    if session.geometry is None:
        raise ConfigError("synchronize needs the wheel geometry (radius)")
    t_gnss = gnss_motion_onset(session.gnss_track(), settings)
    if t_gnss is None:
        raise SyncError("no motion detected in the GNSS track")
    offsets = {}
    for name, imu in session.imu_streams.items():
        if imu.frame != "wheel":
            continue
        t_imu = imu_motion_onset(imu, session.geometry.radius, settings)
        if t_imu is None:
            raise SyncError(f"no motion detected in IMU stream {name}")
        offsets[name] = t_imu - t_gnss
    if not offsets:
        raise SyncError("no wheel streams to synchronise against")
    shared = float(np.mean(list(offsets.values())))
    streams = {}
    for name, imu in session.imu_streams.items():
        off = offsets.setdefault(name, shared)
        streams[name] = imu.shifted(-off)
    return replace(session, imu_streams=streams, offsets=offsets)


# -- ground truth per wheel ----------------------------------------------


def _track_speed(track: Trajectory):
    xy, t = track.xy, track.t
    n = len(track)
    if n < 2:
        return np.zeros(n)
    v = np.empty_like(xy)
    v[1:-1] = (xy[2:] - xy[:-2]) / (t[2:] - t[:-2])[:, None]
    v[0] = (xy[1] - xy[0]) / (t[1] - t[0])
    v[-1] = (xy[-1] - xy[-2]) / (t[-1] - t[-2])
    return np.linalg.norm(v, axis=1)


def course_heading(track: Trajectory, min_speed=0.01):
    """Course over ground from central differences; holds the last valid value below ``min_speed``."""
    xy, t = track.xy, track.t
    n = len(track)
    if n < 3:
        raise EmptyInputError("need at least 3 fixes for a course estimate")
    v = np.empty_like(xy)
    v[1:-1] = (xy[2:] - xy[:-2]) / (t[2:] - t[:-2])[:, None]
    v[0] = (xy[1] - xy[0]) / (t[1] - t[0])
    v[-1] = (xy[-1] - xy[-2]) / (t[-1] - t[-2])
    speed = np.linalg.norm(v, axis=1)
    raw = np.arctan2(v[:, 1], v[:, 0])
    valid = speed >= min_speed
    if not np.any(valid):
        return np.zeros(n)
    heading = np.empty(n)
    last = raw[np.argmax(valid)]  # back-fill the leading gap with the first valid course
    for i in range(n):
        if valid[i]:
            last = raw[i]
        heading[i] = last
    return np.unwrap(heading)


def wheel_ground_truth(track: Trajectory, geometry: WheelGeometry, wheel, heading=None) -> Trajectory:
    """Translate the antenna track to a wheel centre through its lever arm."""
    if heading is None:
        heading = course_heading(track)
    lf, ll = geometry.lever(wheel)
    lx, ly = lf, -ll
    c, s = np.cos(heading), np.sin(heading)
    offset = np.column_stack([c * lx - s * ly, s * lx + c * ly])
    return Trajectory(track.t, track.xy + offset)


def wheel_tracks(track: Trajectory, geometry: WheelGeometry):
    heading = course_heading(track)
    return {w: wheel_ground_truth(track, geometry, w, heading) for w in geometry.lever_arms}


# -- training windows ----------------------------------------------------


class TrainingWindow(NamedTuple):
    acc: np.ndarray  # (3, window)
    gyro: np.ndarray  # (3, window)
    target: np.ndarray  # (intervals, 2) planar displacement per RTK interval
    t_start: float
    wheel: str
    anchors: np.ndarray  # (intervals, 2) wheel position at the start of each interval


def motion_span(track: Trajectory, speed_threshold=0.05, sustain=1.0):
    """Indices (first, last) of fixes bracketing sustained motion, or None."""
    speed = _track_speed(track)
    dt = np.median(np.diff(track.t)) if len(track) > 1 else 1.0 / RTK_RATE_HZ
    run = max(1, int(round(sustain / dt)))
    j0 = _sustained_onset(speed, speed_threshold, run)
    if j0 is None:
        return None
    j1 = _sustained_onset(speed[::-1], speed_threshold, run)
    last = len(track) - 1 - j1
    return max(j0 - 1, 0), min(last + 1, len(track) - 1)


def make_windows(session: RecordingSession, wheel, geometry=None, window=120, stride=None,
                 intervals=5, speed_threshold=0.05):
    """Cut non-overlapping IMU windows aligned to RTK fixes, with per-wheel targets.

    Windows touching the stationary prologue or epilogue are dropped.
    """
    geometry = geometry or session.geometry
    if geometry is None:
        raise ConfigError("make_windows needs the wheel geometry")
    if wheel not in session.imu_streams:
        raise ConfigError(f"session has no stream {wheel!r}")
    imu = session.imu_streams[wheel]
    per = window // intervals
    stride = window if stride is None else stride
    if window % intervals or stride % per or stride <= 0:
        raise ConfigError("window and stride must be whole numbers of RTK intervals")
    track = session.gnss_track()
    span = motion_span(track, speed_threshold)
    if span is None or span[1] - span[0] + 1 < intervals + 1:
        log.warning("%s: fewer than %d RTK fixes in motion; no windows", wheel, intervals + 1)
        return []
    wt = wheel_ground_truth(track, geometry, wheel)
    j_first, j_last = span
    half = 0.5 / imu.rate_hz
    out = []
    for j in range(j_first, j_last - intervals + 1, stride // per):
        i0 = int(np.searchsorted(imu.t, track.t[j] - half))
        if i0 + window > len(imu) or abs(imu.t[i0] - track.t[j]) > half:
            continue
        seg = imu.t[i0 : i0 + window]
        if abs((seg[-1] - seg[0]) - (window - 1) / imu.rate_hz) > 1.0 / imu.rate_hz:
            log.warning("%s: IMU gap inside window at t=%.3f; skipped", wheel, track.t[j])
            continue
        pts = wt.xy[j : j + intervals + 1]
        out.append(
            TrainingWindow(
                acc=imu.f[i0 : i0 + window].T.copy(),
                gyro=imu.w[i0 : i0 + window].T.copy(),
                target=np.diff(pts, axis=0),
                t_start=float(track.t[j]),
                wheel=wheel,
                anchors=pts[:-1].copy(),
            )
        )
    return out


def pair_windows(front, rear):
    """Match front/rear windows by start time for wheelbase-constrained training."""
    from .wminet import WcPair

    by_t = {round(w.t_start, 6): w for w in rear}
    pairs = [WcPair(f, by_t[round(f.t_start, 6)]) for f in front if round(f.t_start, 6) in by_t]
    return pairs


WINDOWS_VERSION = 1


def save_windows(path, windows):
    """Write windows to the versioned array container."""
    if not windows:
        raise EmptyInputError("no windows to save")
    arrays = {
        "acc": np.stack([w.acc for w in windows]),
        "gyro": np.stack([w.gyro for w in windows]),
        "target": np.stack([w.target for w in windows]),
        "anchors": np.stack([w.anchors for w in windows]),
        "t_start": np.array([w.t_start for w in windows]),
    }
    meta = {"kind": "windows", "windows_version": WINDOWS_VERSION, "wheels": [w.wheel for w in windows]}
    save_arrays(path, arrays, meta)


def load_windows(path):
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "windows":
        raise SchemaError(f"{path}: not a window container")
    if meta.get("windows_version") != WINDOWS_VERSION:
        raise SchemaError(f"{path}: unsupported window container version {meta.get('windows_version')}")
    return [
        TrainingWindow(arrays["acc"][i], arrays["gyro"][i], arrays["target"][i], float(arrays["t_start"][i]),
                       meta["wheels"][i], arrays["anchors"][i])
        for i in range(arrays["acc"].shape[0])
    ]


def split_by_trial(sessions, test_trials):
    """Split sessions into (train, test) by whole trial id; never by window."""
    test_trials = {str(t) for t in test_trials}
    train = [s for s in sessions if str(s.metadata.get("trial")) not in test_trials]
    test = [s for s in sessions if str(s.metadata.get("trial")) in test_trials]
    return train, test
