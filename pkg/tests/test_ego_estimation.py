import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastflock.ego_estimation import (
    FocalParams,
    OdometryFusion,
    SelfStateFilter,
    VioSample,
    focal_model,
    position_fix,
    slew_weight,
    vio_weight_target,
)
from fastflock.tracking import RelativeObservation, TrackView

from .kalman_oracle import oracle_correct, oracle_predict


def vio(c_f, ages, t_a=2.0, c_max=150):
    return VioSample(
        position=np.zeros(2),
        velocity=np.zeros(2),
        acceleration=np.zeros(2),
        feature_count=c_f,
        max_features=c_max,
        track_ages=np.asarray(ages, dtype=float),
        mean_track_age=t_a,
    )


def track(agent_id, x, y):
    return TrackView(agent_id, np.array([x, y]), np.zeros(2), 0.0)


def obs(observed_id, bearing, distance):
    return RelativeObservation(
        observer_id=0,
        observed_id=observed_id,
        bearing=bearing,
        distance=distance,
        stamp=0.0,
    )


class TestFocalModel:
    def test_velocity_decay_entries(self):
        dt, tau = 0.1, 0.3
        model = focal_model(dt, tau, np.zeros(6))
        e_d = math.exp(-dt / tau)
        assert model.a[2, 2] == pytest.approx(e_d)
        assert model.b[2, 0] == pytest.approx(1.0 - e_d)
        assert model.b[0, 0] == 0.0  # input only drives velocity rows

    def test_first_order_velocity_lag(self):
        dt, tau = 0.05, 0.3
        filt = SelfStateFilter(
            FocalParams(tau=tau, q_rate=(0.0,) * 6), dt, np.zeros(2)
        )
        cmd = np.array([1.0, 0.0])
        for k in range(1, 200):
            state = filt.step(cmd, fix=None, accel=None, dt=dt)
            expected_err = math.exp(-k * dt / tau)
            assert abs(state[2] - 1.0) < expected_err + 1e-9

    def test_all_zero_fixpoint(self):
        dt = 0.1
        filt = SelfStateFilter(FocalParams(), dt, np.zeros(2))
        for _ in range(50):
            state = filt.step(
                np.zeros(2), fix=np.zeros(2), accel=np.zeros(2), dt=dt
            )
        assert np.allclose(state, 0.0, atol=1e-12)

    def test_matches_oracle_recursion(self):
        rng = np.random.default_rng(21)
        dt = 0.1
        params = FocalParams(tau=0.3, q_rate=(0.01,) * 6)
        filt = SelfStateFilter(params, dt, np.array([1.0, -1.0]))
        model = filt.model
        ox = filt.state.copy()
        op = filt.cov.copy()
        h_pos = np.array([[1.0, 0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0, 0]])
        h_acc = np.array([[0, 0, 0, 0, 1.0, 0], [0, 0, 0, 0, 0, 1.0]])
        for _ in range(100):
            cmd = rng.standard_normal(2)
            fix = rng.standard_normal(2) if rng.random() < 0.7 else None
            acc = rng.standard_normal(2) if rng.random() < 0.7 else None
            state = filt.step(cmd, fix=fix, accel=acc, dt=dt)
            ox, op = oracle_predict(ox, op, model.a, model.q, b=model.b, u=cmd)
            if fix is not None:
                ox, op = oracle_correct(
                    ox, op, fix, h_pos, params.fix_sigma**2 * np.eye(2)
                )
            if acc is not None:
                ox, op = oracle_correct(
                    ox, op, acc, h_acc, params.accel_sigma**2 * np.eye(2)
                )
            assert np.max(np.abs(state - ox)) < 1e-10
            assert np.max(np.abs(filt.cov - op)) < 1e-10

    def test_velocity_integral_tracks_velocity_only(self):
        dt = 0.1
        filt = SelfStateFilter(
            FocalParams(tau=0.3, q_rate=(0.0,) * 6), dt, np.zeros(2)
        )
        total = np.zeros(2)
        for _ in range(30):
            state = filt.step(np.array([1.0, 0.0]), None, None, dt=dt)
            total = total + state[2:4] * dt
        assert np.allclose(filt.integral_position, total)


class TestPositionFix:
    def test_single_consistent_neighbor(self):
        fix = position_fix([track(1, 10.0, 0.0)], [obs(1, 0.0, 10.0)], 0.0)
        assert np.allclose(fix, [0.0, 0.0], atol=1e-12)

    def test_mean_of_candidates(self):
        views = [track(1, 10.0, 0.0), track(2, 12.0, 0.0)]
        observations = [obs(1, 0.0, 10.0), obs(2, 0.0, 10.0)]
        fix = position_fix(views, observations, 0.0)
        assert np.allclose(fix, [1.0, 0.0], atol=1e-12)

    def test_heading_rotation_applied(self):
        fix = position_fix([track(1, 0.0, 10.0)], [obs(1, 0.0, 10.0)], math.pi / 2)
        assert np.allclose(fix, [0.0, 0.0], atol=1e-12)

    def test_no_qualifying_neighbor(self):
        assert position_fix([track(1, 10.0, 0.0)], [obs(2, 0.0, 5.0)], 0.0) is None
        assert position_fix([], [obs(1, 0.0, 5.0)], 0.0) is None

    def test_fix_error_bounded_under_noise(self):
        # 200 ticks, 3 neighbors, 1 m observation noise: fix RMS below 1 m.
        rng = np.random.default_rng(17)
        truth = np.array([3.0, -2.0])
        neighbors = {1: np.array([15.0, 0.0]), 2: np.array([0.0, 15.0]),
                     3: np.array([-12.0, -5.0])}
        errors = []
        for _ in range(200):
            views, observations = [], []
            for nid, pos in neighbors.items():
                views.append(TrackView(nid, pos + rng.normal(0, 0.3, 2),
                                       np.zeros(2), 0.0))
                rel = pos - truth + rng.normal(0, 1.0, 2)
                observations.append(
                    obs(nid, math.atan2(rel[1], rel[0]), float(np.linalg.norm(rel)))
                )
            fix = position_fix(views, observations, 0.0)
            errors.append(np.linalg.norm(fix - truth) ** 2)
        assert math.sqrt(np.mean(errors)) < 1.0


class TestVioWeightTarget:
    def test_full_feature_set(self):
        sample = vio(150, [2.0] * 150, t_a=2.0, c_max=150)
        assert vio_weight_target(sample) == pytest.approx(1.0)

    def test_no_features(self):
        assert vio_weight_target(vio(0, [], t_a=2.0)) == 0.0

    def test_half_features(self):
        sample = vio(75, [2.0] * 75, t_a=2.0, c_max=150)
        assert vio_weight_target(sample) == pytest.approx(0.25)

    def test_clamped_to_unit_interval(self):
        sample = vio(150, [50.0] * 150, t_a=2.0, c_max=150)
        assert vio_weight_target(sample) == 1.0

    def test_zero_mean_age_means_no_trust(self):
        assert vio_weight_target(vio(150, [2.0] * 150, t_a=0.0)) == 0.0


class TestSlewWeight:
    def test_at_target_unchanged(self):
        assert slew_weight(0.5, 0.5, 0.2, 0.1) == 0.5

    def test_one_step_down(self):
        assert slew_weight(0.8, 0.5, 1.0, 0.1) == pytest.approx(0.7)

    def test_no_overshoot(self):
        assert slew_weight(0.55, 0.5, 1.0, 0.1) == 0.5

    def test_one_step_up(self):
        assert slew_weight(0.2, 0.9, 1.0, 0.1) == pytest.approx(0.3)

    @given(
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.01, 2.0),
        st.floats(0.001, 0.5),
    )
    def test_stays_in_unit_interval_and_converges(self, lam, target, rate, dt):
        # +1 tick of slack: summing rate*dt can round just short of the gap.
        steps = math.ceil(abs(lam - target) / (rate * dt)) + 1
        value = lam
        for _ in range(steps):
            value = slew_weight(value, target, rate, dt)
            assert 0.0 <= value <= 1.0
        assert value == target


class TestFusion:
    def test_full_vio_weight_follows_vio_deltas(self):
        fusion = OdometryFusion(np.zeros(2))
        rng = np.random.default_rng(1)
        vio_pos = np.zeros(2)
        own_pos = np.zeros(2)
        for _ in range(20):
            vio_pos = vio_pos + rng.standard_normal(2)
            own_pos = own_pos + rng.standard_normal(2)
            state = fusion.fuse(vio_pos, np.ones(2), np.zeros(2),
                                own_pos, np.zeros(2), np.zeros(2), 1.0)
        assert np.allclose(state.position, vio_pos)
        assert np.allclose(state.velocity, [1.0, 1.0])

    def test_zero_vio_weight_follows_own_deltas(self):
        fusion = OdometryFusion(np.zeros(2))
        rng = np.random.default_rng(2)
        vio_pos = np.zeros(2)
        own_pos = np.zeros(2)
        for _ in range(20):
            vio_pos = vio_pos + rng.standard_normal(2)
            own_pos = own_pos + rng.standard_normal(2)
            state = fusion.fuse(vio_pos, np.zeros(2), np.zeros(2),
                                own_pos, np.full(2, 3.0), np.ones(2), 0.0)
        assert np.allclose(state.position, own_pos)
        assert np.allclose(state.velocity, [3.0, 3.0])
        assert np.allclose(state.acceleration, [1.0, 1.0])

    def test_midpoint_blend(self):
        fusion = OdometryFusion(np.zeros(2))
        fusion.fuse(np.zeros(2), np.zeros(2), np.zeros(2),
                    np.zeros(2), np.zeros(2), np.zeros(2), 0.5)
        state = fusion.fuse(np.array([1.0, 0.0]), np.zeros(2), np.zeros(2),
                            np.array([0.0, 1.0]), np.zeros(2), np.zeros(2), 0.5)
        assert np.allclose(state.position, [0.5, 0.5])

    def test_identical_streams_pass_through(self):
        rng = np.random.default_rng(3)
        start = np.array([5.0, -1.0])
        fusion = OdometryFusion(start)
        pos = start.copy()
        for k in range(30):
            pos = pos + rng.standard_normal(2)
            vel = rng.standard_normal(2)
            state = fusion.fuse(pos, vel, np.zeros(2), pos, vel, np.zeros(2),
                                float(rng.uniform(0, 1)))
            assert np.allclose(state.position, pos, atol=1e-9)
            assert np.allclose(state.velocity, vel, rtol=0, atol=1e-12)

    def test_translation_equivariance(self):
        shift = np.array([100.0, -50.0])
        rng = np.random.default_rng(4)
        f1 = OdometryFusion(np.zeros(2))
        f2 = OdometryFusion(shift.copy())
        vio_pos, own_pos = np.zeros(2), np.zeros(2)
        for _ in range(15):
            vio_pos = vio_pos + rng.standard_normal(2)
            own_pos = own_pos + rng.standard_normal(2)
            lam = float(rng.uniform(0, 1))
            s1 = f1.fuse(vio_pos, np.zeros(2), np.zeros(2),
                         own_pos, np.zeros(2), np.zeros(2), lam)
            s2 = f2.fuse(vio_pos + shift, np.zeros(2), np.zeros(2),
                         own_pos + shift, np.zeros(2), np.zeros(2), lam)
        assert np.allclose(s2.position - s1.position, shift, atol=1e-9)
