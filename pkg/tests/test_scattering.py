import numpy as np
import pytest

from riesz_kinetics import (GaussianData, RieszParams, TimeSchedule, evolve,
                            log_free_coefficient, modified_distribution,
                            momentum_limit, node_accelerations, ref_flow,
                            sample_ensemble, scattering_residual, seed_grid,
                            tail_limit_fit, trace_seed_trajectories,
                            transport_field, transport_field_divergence,
                            velocity_correction, velocity_correction_gradient,
                            velocity_correction_rate, velocity_softening,
                            wave_operator, wave_operator_limit, evaluate_f0)
from riesz_kinetics.scattering import MomentumLimits, ResidualSeries

ALPHA = 0.75
P = RieszParams(alpha=ALPHA, lam=1.0, eps=0.2)


@pytest.fixture(scope="module")
def zero_run():
    ens = sample_ensemble(GaussianData(eta=0.0), 40, np.random.default_rng(0))
    hist = evolve(ens, TimeSchedule(t_final=40.0, dt_base=0.05), P)
    return hist, ens


@pytest.fixture(scope="module")
def small_run():
    data = GaussianData(eta=1e-5)
    ens = sample_ensemble(data, 250, np.random.default_rng(1))
    hist = evolve(ens, TimeSchedule(t_final=60.0, dt_base=0.02), P)
    return hist, ens, data


def test_log_free_coefficient():
    assert log_free_coefficient(1.0, ALPHA) == 0.0
    assert log_free_coefficient(4.0, 0.5) == pytest.approx(2.0, rel=1e-15)


def test_ref_flow_degenerate_cases():
    x, v = np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3])
    pos, vel = ref_flow(1.0, x, v, np.array([9.0, 9.0, 9.0]), ALPHA)
    assert np.all(pos == x + v) and np.all(vel == v)
    pos, _ = ref_flow(7.0, x, v, np.zeros(3), ALPHA)
    assert np.all(pos == x + 7.0 * v)


def test_velocity_correction_single_node():
    a = velocity_correction(P.with_eps(0.0), [[0.0, 0.0, 0.0]], [1.0],
                            [1.0, 0.0, 0.0])
    assert np.allclose(a, [ALPHA, 0.0, 0.0], rtol=1e-15)


def test_velocity_correction_zero_data(zero_run):
    hist, ens = zero_run
    a = velocity_correction(P, hist.V[-1], hist.weights, np.zeros((2, 3)))
    assert np.all(a == 0.0)


def test_velocity_correction_gradient_matches_fd(small_run):
    hist, ens, _ = small_run
    p_vel = P.with_eps(velocity_softening(P, 1.0, ens.count))
    v0 = np.array([0.4, -0.2, 0.1])
    grad_a = velocity_correction_gradient(p_vel, hist.V[-1], hist.weights, v0)
    h = 1e-6
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fd = (velocity_correction(p_vel, hist.V[-1], hist.weights, v0 + e)
              - velocity_correction(p_vel, hist.V[-1], hist.weights, v0 - e)) / (2 * h)
        assert np.abs(fd - grad_a[:, d]).max() <= 1e-6 * np.abs(grad_a).max()


def test_velocity_correction_rate_matches_fd_in_time(small_run):
    # centered finite differences across companion snapshots
    hist, ens, _ = small_run
    p_vel = P.with_eps(velocity_softening(P, 1.0, ens.count))
    vq = np.array([[0.5, 0.0, -0.5], [0.0, 1.0, 0.0]])
    geo = [t for t in hist.main_times if 10.0 < t < 30.0]
    t0 = geo[len(geo) // 2]
    k0 = hist.index_of(t0)
    km = hist.index_of(round(t0 * 0.96, 12))
    kp = hist.index_of(round(t0 * 1.04, 12))
    rate = velocity_correction_rate(p_vel, hist.V[k0], hist.weights,
                                    node_accelerations(hist, t0), vq)
    a_m = velocity_correction(p_vel, hist.V[km], hist.weights, vq)
    a_0 = velocity_correction(p_vel, hist.V[k0], hist.weights, vq)
    a_p = velocity_correction(p_vel, hist.V[kp], hist.weights, vq)
    h1, h2 = hist.times[k0] - hist.times[km], hist.times[kp] - hist.times[k0]
    fd = (h1 ** 2 * a_p - h2 ** 2 * a_m + (h2 ** 2 - h1 ** 2) * a_0) \
        / (h1 * h2 * (h1 + h2))
    assert np.linalg.norm(rate - fd) <= 0.05 * np.linalg.norm(fd)


class TestTailFit:
    def test_exact_power_law_recovery(self):
        t = np.geomspace(10, 100, 12)
        limit = np.array([[1.0, -2.0, 0.5]])
        c = np.array([[0.3, 0.1, -0.2]])
        series = limit[None] + c[None] * t[:, None, None] ** -0.75
        got, r2, qd, degen = tail_limit_fit(t, series, 0.75)
        assert not degen
        assert np.abs(got - limit).max() <= 1e-12
        assert r2.min() >= 1.0 - 1e-12
        assert qd[0] == pytest.approx(0.75, abs=1e-6)

    def test_degenerate_constant_series(self):
        t = np.geomspace(10, 100, 8)
        series = np.ones((8, 2, 3))
        got, _, _, degen = tail_limit_fit(t, series, 0.75)
        assert degen and np.all(got == 1.0)


def test_momentum_limit_zero_data(zero_run):
    hist, ens = zero_run
    win = hist.times >= 4.0
    with pytest.warns(UserWarning, match="tail below"):
        lims = momentum_limit(hist.times[win], hist.V[win], ALPHA)
    assert isinstance(lims, MomentumLimits)
    assert lims.degenerate
    assert np.all(lims.v_plus == ens.v)


class TestWaveOperator:
    def test_zero_data_identity(self, zero_run):
        hist, _ = zero_run
        seeds = seed_grid(2, 1.0, 1.0)
        rec = np.array([float(hist.main_times[10]), hist.t_final])
        traj = trace_seed_trajectories(hist, seeds, rec)
        for j, t in enumerate(rec):
            w1, w2 = wave_operator(hist, traj[j], float(t), P)
            assert np.abs(w1 - seeds[:, :3]).max() <= 1e-9
            assert np.abs(w2 - seeds[:, 3:]).max() <= 1e-9

    def test_momentum_part_is_trajectory_velocity(self, small_run):
        hist, ens, _ = small_run
        seeds = seed_grid(2, 1.5, 1.5)
        t = float(hist.main_times[-1])
        traj = trace_seed_trajectories(hist, seeds, np.array([t]))
        _, w2 = wave_operator(hist, traj[0], t, P)
        assert np.all(w2 == traj[0][:, 3:])

    def test_coefficient_vanishes_at_t_one(self, small_run):
        hist, ens, _ = small_run
        seeds = seed_grid(2, 1.5, 1.5)
        traj = trace_seed_trajectories(hist, seeds, np.array([1.0]))
        w1, _ = wave_operator(hist, traj[0], 1.0, P)
        expected = traj[0][:, :3] - traj[0][:, 3:]
        assert np.all(w1 == expected)

    def test_limit_warning_near_half(self):
        t = np.geomspace(10, 100, 8)
        series = np.zeros((8, 1, 3)) + t[:, None, None] ** -0.1
        with pytest.warns(UserWarning, match="unreliable"):
            wave_operator_limit(t, series, series, alpha=0.52)

    def test_per_seed_independence(self, small_run):
        # enlarging the seed set must not change existing trajectories
        hist, _, _ = small_run
        small = seed_grid(2, 1.0, 1.0)
        big = np.concatenate([small, seed_grid(2, 0.5, 0.5)])
        rec = np.array([5.0, 20.0])
        t_small = trace_seed_trajectories(hist, small, rec)
        t_big = trace_seed_trajectories(hist, big, rec)
        assert np.all(t_small == t_big[:, :len(small)])


class TestModifiedDistribution:
    def test_zero_data_returns_f0(self, zero_run):
        hist, _ = zero_run
        data = GaussianData(eta=3e-6)  # evaluate against a nonzero profile
        x = np.array([[0.5, 0.0, -0.5]])
        v = np.array([[0.2, -0.1, 0.0]])
        g = modified_distribution(hist, data, float(hist.main_times[-4]), x, v, P)
        assert g[0] == pytest.approx(float(evaluate_f0(data, x[0], v[0])), rel=1e-9)

    def test_nonnegative(self, small_run):
        hist, _, data = small_run
        seeds = seed_grid(2, 2.0, 2.0)
        g = modified_distribution(hist, data, float(hist.main_times[-1]),
                                  seeds[:, :3], seeds[:, 3:], P)
        assert np.all(g >= 0.0)


class TestTransportField:
    def test_zero_data_vanishes(self, zero_run):
        hist, _ = zero_run
        f1, f2 = transport_field(hist, float(hist.main_times[-4]),
                                 np.ones((2, 3)), np.zeros((2, 3)), P)
        assert np.all(f1 == 0.0) and np.all(f2 == 0.0)

    def test_divergence_free(self, small_run):
        hist, ens, _ = small_run
        p_vel = P.with_eps(velocity_softening(P, 1.0, ens.count))
        pts = seed_grid(2, 1.5, 1.5)
        t = float(hist.main_times[-3])
        div, grad_mag = transport_field_divergence(hist, t, pts, p_vel)
        assert np.abs(div).max() <= 1e-3 * grad_mag.max()


class TestResidual:
    def test_zero_data_zero_residual(self, zero_run):
        hist, _ = zero_run
        data = GaussianData(eta=5e-6)
        seeds = seed_grid(2, 1.0, 1.0)
        r_ref, r_til, r_free, _ = scattering_residual(
            hist, data, float(hist.main_times[-4]), seeds, seeds[:, :3],
            seeds[:, 3:], hist.V[-1], P)
        assert r_ref <= 1e-12 and r_til <= 1e-12 and r_free <= 1e-12

    def test_series_validation(self):
        t = np.array([1.0, 2.0])
        good = np.array([1e-9, 5e-10])
        ResidualSeries(t, good, good, good)
        with pytest.raises(ValueError):
            ResidualSeries(t, -good, good, good)

    def test_truncated_history_agreement(self, small_run):
        # residuals recomputed from a half-length history agree at common
        # times: no future-dependence beyond the (time-local) correction
        hist, ens, data = small_run
        t_half = hist.t_final / 2
        keep = hist.times <= t_half + 1e-9
        from riesz_kinetics import FlowHistory
        half = FlowHistory(times=hist.times[keep], X=hist.X[keep],
                           V=hist.V[keep], is_companion=hist.is_companion[keep],
                           weights=hist.weights, params=hist.params,
                           schedule=hist.schedule)
        p_vel = P.with_eps(velocity_softening(P, 1.0, ens.count))
        seeds = seed_grid(2, 1.5, 1.5)

        def limits(h):
            win = h.times >= h.t_final / 10
            rec = h.times[win]
            traj = trace_seed_trajectories(h, seeds, rec)
            W1 = np.empty((len(rec), len(seeds), 3))
            W2 = np.empty_like(W1)
            for j, t in enumerate(rec):
                W1[j], W2[j] = wave_operator(h, traj[j], float(t), p_vel)
            w1p, w2p, _, _ = wave_operator_limit(rec, W1, W2, ALPHA)
            nl = momentum_limit(h.times[win], h.V[win], ALPHA)
            return w1p, w2p, nl.v_plus

        w1f, w2f, vpf = limits(hist)
        w1h, w2h, vph = limits(half)
        t_common = float(half.main_times[-2])
        full_vals = scattering_residual(hist, data, t_common, seeds, w1f, w2f,
                                        vpf, p_vel)[:3]
        half_vals = scattering_residual(half, data, t_common, seeds, w1h, w2h,
                                        vph, p_vel)[:3]
        assert np.abs(np.array(full_vals) - np.array(half_vals)).max() <= 1e-6


def test_velocity_limits_consistent_across_dt(small_run):
    # independent runs at different step sizes give matching corrections
    data = GaussianData(eta=1e-5)
    ens = sample_ensemble(data, 150, np.random.default_rng(2))
    vq = np.array([[0.3, 0.0, -0.3]])
    vals = []
    for dt in (0.04, 0.02):
        hist = evolve(ens, TimeSchedule(t_final=30.0, dt_base=dt), P)
        win = hist.times >= 3.0
        lims = momentum_limit(hist.times[win], hist.V[win], ALPHA)
        p_vel = P.with_eps(velocity_softening(P, 1.0, ens.count))
        vals.append(velocity_correction(p_vel, lims.v_plus, hist.weights, vq))
    assert np.abs(vals[0] - vals[1]).max() <= 1e-4
