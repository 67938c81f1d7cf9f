import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wheelnav import dataio, simkit
from wheelnav.core import GnssFix, ImuSequence, Trajectory
from wheelnav.errors import ConfigError, DataError, OrderingError, SchemaError, SyncError

GEO = simkit.WheelGeometry()
DT = 1 / 120


def sim_session(tmp_path, name="s", **kw):
    spec = simkit.PeriodicTrajSpec(**{"duration": 20.0, "stationary": 3.0, **kw})
    gt, streams = simkit.simulate_session(spec)
    simkit.write_session(gt, streams, tmp_path / name, GEO, trial=name)
    return gt, dataio.load_session(tmp_path / name)


def replace_line(path, index, new):
    lines = path.read_text().splitlines()
    lines[index] = new
    path.write_text("\n".join(lines) + "\n")


# -- ingestion -----------------------------------------------------------


def test_round_trip_is_bit_equal(tmp_path):
    _, a = sim_session(tmp_path)
    dataio.write_csv_session(a, tmp_path / "copy")
    b = dataio.load_session(tmp_path / "copy")
    assert a.imu_streams.keys() == b.imu_streams.keys()
    for k in a.imu_streams:
        x, y = a.imu_streams[k], b.imu_streams[k]
        assert x.t.tobytes() == y.t.tobytes() and x.f.tobytes() == y.f.tobytes() and x.w.tobytes() == y.w.tobytes()
    assert a.gnss_track().xy.tobytes() == b.gnss_track().xy.tobytes()
    assert a.geometry == b.geometry


def test_shuffled_timestamps_raise_ordering_error(tmp_path):
    sim_session(tmp_path)
    path = tmp_path / "s" / "imu_wheel-front.csv"
    lines = path.read_text().splitlines()
    body = lines[1:]
    np.random.default_rng(0).shuffle(body)
    path.write_text("\n".join([lines[0]] + body) + "\n")
    with pytest.raises(OrderingError):
        dataio.load_session(tmp_path / "s")


def test_degree_per_second_unit_tag(tmp_path):
    sim_session(tmp_path)
    sdir = tmp_path / "s"
    path = sdir / "imu_wheel-front.csv"
    rows = path.read_text().splitlines()
    header, first = rows[0], rows[1].split(",")
    first[6] = "90.0"  # gyr_z
    rows[1] = ",".join(first)
    path.write_text("\n".join(rows) + "\n")
    cols = (sdir / "columns.ini").read_text().replace("gyr_z rad/s", "gyr_z deg/s")
    (sdir / "columns.ini").write_text(cols)
    s = dataio.load_session(sdir)
    assert s.imu_streams["wheel-front"].w[0, 2] == pytest.approx(np.pi / 2, abs=1e-15)
    assert header.split(",")[6] == "gyr_z"


def test_unknown_unit_tag_is_schema_error():
    with pytest.raises(SchemaError):
        dataio.ColumnSpec("a", "furlong").scale


def test_missing_column_is_schema_error(tmp_path):
    sim_session(tmp_path)
    path = tmp_path / "s" / "gnss.csv"
    replace_line(path, 0, "time_s,north_m,east")
    with pytest.raises(SchemaError, match="east_m"):
        dataio.load_session(tmp_path / "s")


def test_missing_values_are_dropped_and_counted(tmp_path, caplog):
    sim_session(tmp_path)
    path = tmp_path / "s" / "imu_wheel-rear.csv"
    row = path.read_text().splitlines()[5].split(",")
    row[2] = ""
    replace_line(path, 5, ",".join(row))
    replace_line(path, 9, ",".join(["nan"] * 7))
    with caplog.at_level(logging.WARNING):
        s = dataio.load_session(tmp_path / "s")
    assert s.metadata["dropped_rows"]["wheel-rear"] == 2
    assert s.metadata["dropped_rows"]["wheel-front"] == 0
    assert "dropped 2" in caplog.text


def test_missing_session_directory(tmp_path):
    with pytest.raises(DataError, match="nowhere"):
        dataio.load_session(tmp_path / "nowhere")


def test_geometry_fields_are_mandatory(tmp_path):
    p = tmp_path / "g.ini"
    p.write_text("[geometry]\nradius = 0.05\nlever.wheel-front = 0.1, 0.1\n")
    with pytest.raises(ConfigError, match="wheelbase"):
        dataio.read_geometry(p)
    p.write_text("[geometry]\nwheelbase = 0.2\nradius = 0.05\n")
    with pytest.raises(ConfigError, match="lever"):
        dataio.read_geometry(p)


def test_geodetic_gnss_columns(tmp_path):
    sim_session(tmp_path)
    sdir = tmp_path / "s"
    lat0, lon0 = np.deg2rad(32.1), np.deg2rad(34.8)
    (sdir / "gnss.csv").write_text(
        "t,lat,lon\n0.0,32.1,34.8\n0.2,%r,34.8\n" % (32.1 + 1 / 3600))
    cols = (sdir / "columns.ini").read_text().split("[gnss]")[0]
    (sdir / "columns.ini").write_text(cols + "[gnss]\nt = t s\nlat = lat deg\nlon = lon deg\n")
    s = dataio.load_session(sdir)
    assert s.gnss[0].frame == "geodetic"
    assert s.gnss[0].position[0] == pytest.approx(lat0) and s.gnss[0].position[1] == pytest.approx(lon0)
    assert s.gnss_track().xy[1, 0] == pytest.approx(30.89, abs=0.01)


# -- synchronisation -----------------------------------------------------


def shifted_session(session, shift):
    streams = {k: v.shifted(shift) for k, v in session.imu_streams.items()}
    return dataio.RecordingSession(streams, session.gnss, session.metadata, session.geometry)


def test_recovers_half_second_shift(tmp_path):
    _, s = sim_session(tmp_path)
    synced = dataio.synchronize(shifted_session(s, 0.5))
    for name in ("wheel-front", "wheel-rear"):
        assert synced.offsets[name] == pytest.approx(0.5, abs=DT)
    assert synced.offsets["chassis"] == pytest.approx(0.5, abs=DT)
    assert synced.synchronized
    np.testing.assert_allclose(synced.imu_streams["wheel-front"].t[0], -0.5 + 0.5, atol=DT)


def test_aligned_streams_have_zero_offset(tmp_path):
    _, s = sim_session(tmp_path)
    synced = dataio.synchronize(s)
    assert all(abs(v) <= DT for v in synced.offsets.values())


def stationary_session(n_sec=10.0):
    t = np.arange(int(n_sec * 120)) / 120
    f = np.tile([0.0, -9.8, 0.0], (len(t), 1))
    imu = ImuSequence(t, f, np.zeros_like(f), "wheel")
    fixes = [GnssFix(k * 0.2, (1.0, 2.0), "local") for k in range(int(n_sec * 5))]
    return dataio.RecordingSession({"wheel-front": imu}, fixes, {"trial": "still"}, GEO)


def test_stationary_session_cannot_be_synchronised():
    with pytest.raises(SyncError):
        dataio.synchronize(stationary_session())


def test_stationary_session_has_no_windows(caplog):
    with caplog.at_level(logging.WARNING):
        assert dataio.make_windows(stationary_session(), "wheel-front") == []
    assert "fewer than 6" in caplog.text


# -- wheel ground truth --------------------------------------------------


def line_track(v, n=40):
    t = np.arange(n) * 0.2
    return Trajectory(t, np.outer(t, v))


def test_straight_east_lever_left_is_north():
    d = 0.192
    geo = simkit.WheelGeometry(wheelbase=d, lever_arms={"wheel-front": (0.0, d / 2)})
    wt = dataio.wheel_ground_truth(line_track([0.0, 0.5]), geo, "wheel-front")
    np.testing.assert_allclose(wt.xy - line_track([0.0, 0.5]).xy, np.tile([d / 2, 0.0], (40, 1)), atol=1e-15)


def test_zero_lever_arms_reproduce_antenna():
    geo = simkit.WheelGeometry(wheelbase=1e-9, lever_arms={"wheel-front": (0.0, 0.0), "wheel-rear": (1e-9, 0.0)})
    tr = line_track([0.3, 0.4])
    np.testing.assert_array_equal(dataio.wheel_ground_truth(tr, geo, "wheel-front").xy, tr.xy)


def test_circle_keeps_wheel_separation():
    t = np.arange(200) * 0.2
    ang = 0.25 * t
    tr = Trajectory(t, 2.0 * np.column_stack([np.cos(ang), np.sin(ang)]))
    w = dataio.wheel_tracks(tr, GEO)
    sep = np.linalg.norm(w["wheel-front"].xy - w["wheel-rear"].xy, axis=1)
    assert np.abs(sep - GEO.wheelbase).max() < 1e-6


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=30))
def test_any_track_keeps_wheel_separation(steps):
    xy = np.cumsum(np.array(steps), axis=0)
    tr = Trajectory(np.arange(len(steps)) * 0.2, xy)
    w = dataio.wheel_tracks(tr, GEO)
    sep = np.linalg.norm(w["wheel-front"].xy - w["wheel-rear"].xy, axis=1)
    assert np.abs(sep - GEO.wheelbase).max() < 1e-6


def test_heading_holds_below_one_centimetre_per_second():
    xy = np.array([[0, 0], [0.1, 0], [0.2, 0], [0.2, 0], [0.2, 0], [0.2, 0.1], [0.2, 0.2]], float)
    h = dataio.course_heading(Trajectory(np.arange(7) * 0.2, xy))
    assert h[3] == h[2] == 0.0
    assert h[-1] == pytest.approx(np.pi / 2)


# -- windows -------------------------------------------------------------


def constant_velocity_session(v, duration=12.0):
    t = np.arange(int(duration * 120)) / 120
    f = np.tile([0.0, -9.8, 0.0], (len(t), 1))
    w = np.tile([0.0, 0.0, np.hypot(*v) / GEO.radius], (len(t), 1))
    imu = ImuSequence(t, f, w, "wheel")
    fixes = [GnssFix(k * 0.2, tuple(np.multiply(v, k * 0.2)), "local") for k in range(int(duration * 5))]
    return dataio.RecordingSession({"wheel-front": imu}, fixes, {}, GEO)


@pytest.mark.parametrize("v, row", [((0.5, 0.0), (0.1, 0.0)), ((0.0, 0.5), (0.0, 0.1))])
def test_constant_velocity_targets(v, row):
    ws = dataio.make_windows(constant_velocity_session(v), "wheel-front")
    assert len(ws) >= 8
    for w in ws:
        np.testing.assert_allclose(w.target, np.tile(row, (5, 1)), atol=1e-12)
        assert w.acc.shape == w.gyro.shape == (3, 120)


def test_two_minute_session_window_count(tmp_path):
    _, s = sim_session(tmp_path, duration=120.0, stationary=10.0)
    ws = dataio.make_windows(s, "wheel-front")
    # 120 s minus two 10 s rests, minus partial windows in the ramps
    assert 90 <= len(ws) <= 100


def test_targets_telescope_to_net_displacement(tmp_path):
    _, s = sim_session(tmp_path, duration=40.0)
    ws = dataio.make_windows(s, "wheel-rear")
    wt = dataio.wheel_ground_truth(s.gnss_track(), GEO, "wheel-rear")
    t = wt.t
    i0 = int(np.argmin(np.abs(t - ws[0].t_start)))
    i1 = int(np.argmin(np.abs(t - ws[-1].t_start))) + 5
    total = sum(w.target.sum(axis=0) for w in ws)
    np.testing.assert_allclose(total, wt.xy[i1] - wt.xy[i0], atol=1e-9)
    for a, b in zip(ws, ws[1:]):
        assert b.t_start == pytest.approx(a.t_start + 1.0)


def test_windows_are_deterministic_and_ordered(tmp_path):
    _, s = sim_session(tmp_path)
    a = dataio.make_windows(s, "wheel-front")
    b = dataio.make_windows(s, "wheel-front")
    assert [w.t_start for w in a] == sorted(w.t_start for w in a)
    assert all(np.array_equal(x.acc, y.acc) and np.array_equal(x.target, y.target) for x, y in zip(a, b))


def test_window_imu_is_aligned_with_fix(tmp_path):
    _, s = sim_session(tmp_path)
    imu = s.imu_streams["wheel-front"]
    for w in dataio.make_windows(s, "wheel-front"):
        i0 = int(round(w.t_start * 120))
        assert np.array_equal(w.acc, imu.f[i0:i0 + 120].T)


def test_stride_must_be_whole_intervals(tmp_path):
    _, s = sim_session(tmp_path)
    with pytest.raises(ConfigError):
        dataio.make_windows(s, "wheel-front", stride=30)
    overlapping = dataio.make_windows(s, "wheel-front", stride=48)
    assert len(overlapping) > len(dataio.make_windows(s, "wheel-front"))


def test_pair_windows_match_by_start(tmp_path):
    _, s = sim_session(tmp_path)
    pairs = dataio.pair_windows(dataio.make_windows(s, "wheel-front"), dataio.make_windows(s, "wheel-rear")[1:])
    assert pairs and all(p.front.t_start == p.rear.t_start for p in pairs)


def test_window_container_round_trip(tmp_path):
    _, s = sim_session(tmp_path)
    ws = dataio.make_windows(s, "wheel-front")
    dataio.save_windows(tmp_path / "w.windows", ws)
    back = dataio.load_windows(tmp_path / "w.windows")
    assert len(back) == len(ws)
    for a, b in zip(ws, back):
        assert a.t_start == b.t_start and a.wheel == b.wheel
        for k in ("acc", "gyro", "target", "anchors"):
            assert np.array_equal(getattr(a, k), getattr(b, k))


def test_split_is_by_whole_trial(tmp_path):
    sessions = [sim_session(tmp_path, name=str(k), duration=12.0)[1] for k in (1, 2, 25)]
    train, test = dataio.split_by_trial(sessions, ["25"])
    assert [s.metadata["trial"] for s in train] == ["1", "2"]
    assert [s.metadata["trial"] for s in test] == ["25"]
