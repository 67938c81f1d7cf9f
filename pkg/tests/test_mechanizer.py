import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wheelnav import simkit
from wheelnav.core import ImuSample, ImuSequence, NavState, orthonormality_error, rotation_z
from wheelnav.errors import (
    ConfigError,
    EmptyInputError,
    FrameMismatchError,
    InvalidStateError,
)
from wheelnav.mechanizer import (
    DEFAULT_GRAVITY,
    MechanizerConfig,
    integrate_phase,
    mechanize,
    phase_from_gravity,
    polar,
    rotvec_exp,
    strapdown_step,
    wheel_to_body,
)

G = DEFAULT_GRAVITY
finite = st.floats(-100.0, 100.0, allow_nan=False)


# -- phase ---------------------------------------------------------------


def test_phase_constant_rate_full_turn():
    ph = integrate_phase(np.full(121, 2 * np.pi), 1 / 120)
    assert ph.alpha[-1] == pytest.approx(2 * np.pi, abs=1e-9)
    assert len(ph) == 121


def test_phase_zero_rate_holds_initial_angle():
    ph = integrate_phase(np.zeros(50), 1 / 120, alpha0=0.7)
    assert np.all(ph.alpha == 0.7)


def test_phase_linear_rate():
    t = np.arange(121) / 120
    ph = integrate_phase(t, 1 / 120, t=t)
    assert ph.alpha[-1] == pytest.approx(0.5, abs=1e-4)
    assert ph.alphas[-1][0] == pytest.approx(1.0)


def test_phase_rejects_empty():
    with pytest.raises(EmptyInputError):
        integrate_phase([], 1 / 120)


def test_phase_is_additive():
    rng = np.random.default_rng(3)
    w = rng.normal(0, 5, 241)
    full = integrate_phase(w, 1 / 120, 0.3)
    first = integrate_phase(w[:121], 1 / 120, 0.3)
    second = integrate_phase(w[120:], 1 / 120, first.alpha[-1])
    assert abs(second.alpha[-1] - full.alpha[-1]) < 1e-10


# -- wheel to body -------------------------------------------------------


def test_wheel_to_body_identity_at_zero_phase():
    s = ImuSample(0.0, np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]), "wheel")
    out = wheel_to_body(s, 0.0)
    assert np.array_equal(out.f, s.f) and np.array_equal(out.w, s.w)
    assert out.frame == "body"


def test_wheel_to_body_quarter_turn():
    s = ImuSample(0.0, np.array([1.0, 0.0, 0.0]), np.zeros(3), "wheel")
    np.testing.assert_allclose(wheel_to_body(s, np.pi / 2).f, [0, 1, 0], atol=1e-15)


@given(finite)
def test_wheel_to_body_keeps_axle_axis(alpha):
    s = ImuSample(0.0, np.array([0.0, 0.0, 1.0]), np.zeros(3), "wheel")
    np.testing.assert_allclose(wheel_to_body(s, alpha).f, [0, 0, 1], atol=1e-15)


@given(st.lists(finite, min_size=3, max_size=3), finite)
def test_wheel_to_body_preserves_norm(f, alpha):
    s = ImuSample(0.0, np.array(f), np.array(f[::-1]), "wheel")
    out = wheel_to_body(s, alpha)
    assert abs(np.linalg.norm(out.f) - np.linalg.norm(s.f)) <= 1e-12 * max(1.0, np.linalg.norm(s.f))


def test_wheel_to_body_rejects_body_sample():
    with pytest.raises(FrameMismatchError):
        wheel_to_body(ImuSample(0.0, np.zeros(3), np.zeros(3), "body"), 0.1)


# -- strapdown -----------------------------------------------------------


def test_rotvec_exp_matches_axis_angle():
    R = rotvec_exp(np.array([0.0, 0.0, np.pi / 2]))
    # body-to-nav after a quarter turn clockwise (seen from above, z down)
    np.testing.assert_allclose(R, rotation_z(np.pi / 2).T, atol=1e-15)


def test_stationary_level_body_stays_put():
    s = NavState()
    for _ in range(120):
        s = strapdown_step(s, [0, 0, -G], [0, 0, 0], 1 / 120, G)
    assert np.all(s.p == 0) and np.all(s.v == 0)


def test_constant_velocity():
    s = NavState(v=[1.0, 0.0, 0.0])
    for _ in range(120):
        s = strapdown_step(s, [0, 0, -G], [0, 0, 0], 1 / 120, G)
    np.testing.assert_allclose(s.p, [1, 0, 0], atol=1e-9)


def test_constant_acceleration_from_rest():
    s = NavState()
    for _ in range(240):
        s = strapdown_step(s, [1.0, 0, -G], [0, 0, 0], 1 / 120, G)
    # semi-implicit Euler overshoots 0.5*a*t^2 by a*dt*t/2
    assert s.p[0] == pytest.approx(2.0, abs=1e-2)
    assert s.p[0] - 2.0 == pytest.approx(1.0 * (1 / 120) * 2.0 / 2, rel=1e-9)


def test_strapdown_rejects_bad_state():
    with pytest.raises(InvalidStateError):
        strapdown_step("not a state", [0, 0, 0], [0, 0, 0], 0.01)


def test_attitude_stays_orthonormal_over_1e5_steps():
    rng = np.random.default_rng(0)
    w = rng.normal(0, 2.0, (100_000, 3))
    T = np.eye(3)
    for k in range(w.shape[0]):
        T = T @ rotvec_exp(w[k] / 120)
        if (k + 1) % 1000 == 0:
            T = polar(T)
    assert orthonormality_error(T) < 1e-6
    NavState(T=T)


# -- mechanize -----------------------------------------------------------


def test_config_rejects_gravity_out_of_range():
    with pytest.raises(ConfigError):
        MechanizerConfig(gravity=9.6)


def test_config_rejects_dt_mismatch():
    imu = ImuSequence(np.arange(10) / 100, np.zeros((10, 3)), np.zeros((10, 3)), "wheel", 100)
    with pytest.raises(ConfigError):
        mechanize(imu, MechanizerConfig())


def test_mechanize_rejects_body_sequence():
    imu = ImuSequence(np.arange(10) / 120, np.zeros((10, 3)), np.zeros((10, 3)), "body")
    with pytest.raises(FrameMismatchError):
        mechanize(imu)


def test_robot_at_rest_stays_at_origin():
    n = 600
    # gravity reaction of a level wheel at phase 0: de-rotated (0, -g, 0)
    f = np.tile([0.0, -G, 0.0], (n, 1))
    imu = ImuSequence(np.arange(n) / 120, f, np.zeros((n, 3)), "wheel")
    for planar in (True, False):
        tr = mechanize(imu, MechanizerConfig(planar_2d=planar))
        assert np.abs(tr.xy).max() < 1e-12
        assert len(tr) == n


def test_straight_roll_endpoint():
    spec = simkit.PeriodicTrajSpec(speed=0.5, amplitude=0.0, duration=10.0)
    gt = simkit.gen_trajectory(spec)
    imu = simkit.simulate_wheel_imu(gt, simkit.WheelGeometry(), "wheel-front")
    start = simkit.wheel_motion(gt, simkit.WheelGeometry().lever("wheel-front"))[0][0]
    cfg = MechanizerConfig(initial_state=NavState.level(start, (0.5, 0.0), 0.0))
    tr = mechanize(imu, cfg)
    np.testing.assert_allclose(tr.xy[-1] - start, [5.0, 0.0], atol=0.05)


def test_straight_roll_three_dimensional_mode_matches_planar():
    spec = simkit.PeriodicTrajSpec(speed=0.5, amplitude=0.0, duration=10.0)
    gt = simkit.gen_trajectory(spec)
    imu = simkit.simulate_wheel_imu(gt, simkit.WheelGeometry(), "wheel-front", alpha0=1.1)
    cfg = dict(initial_state=NavState.level((0, 0), (0.5, 0.0), 0.0), alpha0=1.1)
    a = mechanize(imu, MechanizerConfig(planar_2d=True, **cfg))
    b = mechanize(imu, MechanizerConfig(planar_2d=False, **cfg))
    np.testing.assert_allclose(a.xy[-1], [5.0, 0.0], atol=0.05)
    np.testing.assert_allclose(b.xy[-1], [5.0, 0.0], atol=0.05)


def _periodic_endpoint_error(rate):
    spec = simkit.PeriodicTrajSpec(duration=20.0)
    geo = simkit.WheelGeometry()
    gt = simkit.gen_trajectory(spec, rate)
    imu = simkit.simulate_wheel_imu(gt, geo, "wheel-front")
    pos, vel, _, _, _ = simkit.wheel_motion(gt, geo.lever("wheel-front"))
    state = NavState.level(pos[0], vel[0], gt.heading[0])
    tr = mechanize(imu, MechanizerConfig(dt=1 / rate, initial_state=state))
    return float(np.linalg.norm(tr.xy[-1] - pos[-1]))


def test_error_shrinks_with_step_size():
    e120 = _periodic_endpoint_error(120.0)
    e240 = _periodic_endpoint_error(240.0)
    assert e120 / e240 >= 1.8


def test_phase_from_gravity_recovers_offset():
    gt = simkit.gen_trajectory(simkit.PeriodicTrajSpec(duration=8.0, stationary=2.0))
    for a0 in (0.0, 0.9, -2.4):
        imu = simkit.simulate_wheel_imu(gt, simkit.WheelGeometry(), alpha0=a0)
        assert phase_from_gravity(imu) == pytest.approx(a0, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-np.pi, np.pi))
def test_phase_offset_does_not_change_planar_solution(a0):
    gt = simkit.gen_trajectory(simkit.PeriodicTrajSpec(duration=5.0))
    imu = simkit.simulate_wheel_imu(gt, simkit.WheelGeometry(), alpha0=a0)
    ref = simkit.simulate_wheel_imu(gt, simkit.WheelGeometry(), alpha0=0.0)
    a = mechanize(imu, MechanizerConfig(alpha0=a0))
    b = mechanize(ref, MechanizerConfig(alpha0=0.0))
    np.testing.assert_allclose(a.xy, b.xy, atol=1e-9)
