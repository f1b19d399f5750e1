"""Acceptance suite: every long-time decay law and structural identity the
package promises, checked at desk scale on the shared CI run.

One criterion per test; each prints a PASS/FAIL line into the terminal
summary.  Two criteria are kept faithful although smooth Gaussian data is
known not to saturate them (see README, "known red criteria"): the second
field derivative decays at the steeper rate -(3+alpha) rather than the -3
bound, and the weighted first transport-field component decays at
-(1+alpha) rather than the -2 alpha bound, whose margin over -(1+alpha)
is exactly the 0.25 tolerance at alpha = 0.75.
"""
import os
import time

import numpy as np

from conftest import record_criterion
from riesz_kinetics import (GaussianData, RadialGaussianDensity,
                            RieszParams, TimeSchedule, evolve,
                            interpolation_ratio, liouville_check,
                            momentum_limit, node_accelerations, rate_fit,
                            sample_ensemble, smallness_norms,
                            transport_field_divergence, velocity_correction,
                            velocity_correction_rate, velocity_softening)
from riesz_kinetics.analysis import read_csv_table
from riesz_kinetics import runner

ALPHA = 0.75


def _entry_check(entries, name, label):
    e = entries[name]
    tol_note = (f"fitted {e['fitted_exponent']:+.3f} vs {e['predicted_exponent']:+.2f}, "
                f"r2={e['r_squared']:.4f}")
    record_criterion(label, bool(e["pass"]), tol_note)
    assert e["pass"], f"{label}: {tol_note}"


# ---------------------------------------------------------------------------
# field decay


def test_field_decay_supE(ci_run):
    _entry_check(ci_run["entries"], "supE", "field decay: supE ~ -(1+alpha) +- 0.2")


def test_field_decay_supGradE(ci_run):
    _entry_check(ci_run["entries"], "supGradE",
                 "field decay: supGradE ~ -(2+alpha) +- 0.2")


def test_field_decay_supHessE(ci_run):
    # known red: smooth Gaussian data decays at -(3+alpha), strictly
    # faster than the -3 bound this criterion encodes
    _entry_check(ci_run["entries"], "supHessE", "field decay: supHessE ~ -3 +- 0.3")


# ---------------------------------------------------------------------------
# momentum limit and velocity correction


def test_momentum_limit_rate(ci_run):
    _entry_check(ci_run["entries"], "V_limit",
                 "momentum limit: sup_seeds |V(t)-V+| ~ -alpha +- 0.15")


def test_momentum_limit_smallness_scales_with_amplitude():
    # |V+ - v| stays O(eta) uniformly: tripling eta on identical draws
    # triples the limit displacement to leading order
    p = RieszParams(alpha=ALPHA, lam=1.0, eps=0.2)
    sup = []
    for eta in (1e-5, 3e-5):
        ens = sample_ensemble(GaussianData(eta=eta), 200, np.random.default_rng(9))
        hist = evolve(ens, TimeSchedule(t_final=40.0, dt_base=0.02), p)
        win = hist.times >= 4.0
        lims = momentum_limit(hist.times[win], hist.V[win], ALPHA)
        sup.append(np.linalg.norm(lims.v_plus - ens.v, axis=1).max())
    ratio = sup[1] / sup[0]
    ok = 2.7 <= ratio <= 3.3
    record_criterion("momentum limit: |V+ - v| = O(eta) (sweep ratio ~ 3)",
                     ok, f"ratio={ratio:.3f}")
    assert ok


def test_velocity_correction_limit_rate(ci_run):
    _entry_check(ci_run["entries"], "A_t_limit",
                 "correction limit: |A_t - A_inf| ~ -alpha +- 0.15")


def test_velocity_correction_rate_decay(ci_run):
    hist, cfg, ens = ci_run["hist"], ci_run["cfg"], ci_run["ens"]
    p_vel = hist.params.with_eps(velocity_softening(hist.params, cfg.sigma_v,
                                                    ens.count, cfg.vel_soft_factor))
    a_t = read_csv_table(os.path.join(ci_run["run_dir"], "a_t.csv"))
    danorm = np.sqrt(a_t["dA1"] ** 2 + a_t["dA2"] ** 2 + a_t["dA3"] ** 2)
    ts = np.unique(a_t["t"])
    sup = np.array([danorm[a_t["t"] == t].max() for t in ts])
    win = ts >= cfg.fit_window_fraction * cfg.t_final
    fit = rate_fit(np.column_stack([ts[win], sup[win]]))
    ok = abs(fit.exponent + (1 + ALPHA)) <= 0.2
    record_criterion("correction rate: |dA_t/dt| ~ -(1+alpha) +- 0.2", ok,
                     f"fitted {fit.exponent:+.3f}, r2={fit.r_squared:.4f}")
    assert ok


def test_velocity_correction_rate_matches_fd(ci_run):
    hist, cfg, ens = ci_run["hist"], ci_run["cfg"], ci_run["ens"]
    p_vel = hist.params.with_eps(velocity_softening(hist.params, cfg.sigma_v,
                                                    ens.count, cfg.vel_soft_factor))
    vq = np.array([[0.8, 0.0, -0.8], [0.0, 1.5, 0.0], [0.3, -0.3, 0.3]])
    geo = [t for t in hist.main_times
           if cfg.t_final / 8 < t < cfg.t_final / 2]
    t0 = geo[len(geo) // 2]
    k0 = hist.index_of(t0)
    km = hist.index_of(round(t0 * 0.96, 12))
    kp = hist.index_of(round(t0 * 1.04, 12))
    rate = velocity_correction_rate(p_vel, hist.V[k0], hist.weights,
                                    node_accelerations(hist, t0), vq)
    a = {k: velocity_correction(p_vel, hist.V[k], hist.weights, vq)
         for k in (km, k0, kp)}
    h1, h2 = hist.times[k0] - hist.times[km], hist.times[kp] - hist.times[k0]
    fd = (h1 ** 2 * a[kp] - h2 ** 2 * a[km] + (h2 ** 2 - h1 ** 2) * a[k0]) \
        / (h1 * h2 * (h1 + h2))
    rel = np.linalg.norm(rate - fd) / np.linalg.norm(fd)
    ok = rel <= 0.05
    record_criterion("correction rate matches FD-in-time <= 5%", ok,
                     f"rel={rel:.2e} at t={t0:.1f}")
    assert ok


# ---------------------------------------------------------------------------
# wave operators


def test_wave_operator_momentum_rate(ci_run):
    _entry_check(ci_run["entries"], "W2",
                 "wave operator: sup |W2(t)-W2+| ~ -alpha +- 0.15")


def test_wave_operator_position_rate(ci_run):
    _entry_check(ci_run["entries"], "W1_weighted",
                 "wave operator: sup |W1(t)-W1+|/<x> ~ -(2 alpha - 1) +- 0.2")


def test_wave_operator_split_rates_ordered(ci_run):
    e1 = ci_run["entries"]["W1_weighted"]["fitted_exponent"]
    e2 = ci_run["entries"]["W2"]["fitted_exponent"]
    ok = e2 < e1
    record_criterion("wave operator: momentum converges strictly faster "
                     "than position", ok, f"W2 {e2:+.3f} < W1 {e1:+.3f}")
    assert ok


def test_wave_operator_almost_identity(ci_run):
    cfg = ci_run["cfg"]
    run_dir = ci_run["run_dir"]
    wave = read_csv_table(os.path.join(run_dir, "wave.csv"))
    meta_norms = smallness_norms(cfg.gaussian_data(), cfg.quadrature_spec(),
                                 check_resolution=False)
    seeds = ci_run["scatter"]["seeds"]
    jb = np.sqrt(1 + np.sum(seeds[:, :3] ** 2, axis=1))
    sid = wave["seed_id"].astype(int)
    dx = np.sqrt((wave["W1x"] - seeds[sid, 0]) ** 2
                 + (wave["W1y"] - seeds[sid, 1]) ** 2
                 + (wave["W1z"] - seeds[sid, 2]) ** 2) / jb[sid]
    dv = np.sqrt((wave["W2x"] - seeds[sid, 3]) ** 2
                 + (wave["W2y"] - seeds[sid, 4]) ** 2
                 + (wave["W2z"] - seeds[sid, 5]) ** 2)
    bound = meta_norms.total
    ok = dx.max() <= bound and dv.max() <= bound
    record_criterion("wave operator: almost identity (|W-id| below the "
                     "data smallness)", ok,
                     f"|W1-x|/<x> max={dx.max():.2e}, |W2-v| max={dv.max():.2e} "
                     f"vs {bound:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# modified scattering


def test_residual_rate(ci_run):
    e = ci_run["entries"]["residual"]
    ok = bool(e["pass"])
    record_criterion("modified scattering: residual ~ t^-(2 alpha - 1) "
                     "(one-sided + r2 >= 0.95)",
                     ok, f"fitted {e['fitted_exponent']:+.3f}, "
                         f"r2={e['r_squared']:.4f}")
    assert ok


def test_residual_monotone_on_last_decade(ci_run):
    cfg = ci_run["cfg"]
    res = read_csv_table(os.path.join(ci_run["run_dir"], "residual.csv"))
    win = res["t"] >= cfg.fit_window_fraction * cfg.t_final
    vals = res["residual_ref"][win]
    ok = bool(np.all(np.diff(vals) < 0))
    record_criterion("modified scattering: residual decreases monotonically "
                     "on the last decade", ok)
    assert ok


def test_classical_scattering_fails(ci_run):
    res = read_csv_table(os.path.join(ci_run["run_dir"], "residual.csv"))
    ratio = res["residual_free"][-1] / res["residual_ref"][-1]
    ok = ratio >= 10.0
    record_criterion("long-range regime: free-flow residual / modified "
                     "residual >= 10 at t_final", ok, f"ratio={ratio:.1f}")
    assert ok


# ---------------------------------------------------------------------------
# modified distribution and transport field


def test_modified_distribution_bounded(ci_run):
    res = read_csv_table(os.path.join(ci_run["run_dir"], "residual.csv"))
    g = res["g_sup"]
    g1 = g[np.argmin(np.abs(res["t"] - 1.0))]
    ok = g.max() <= 1.5 * g1
    record_criterion("modified distribution: sup <x> g bounded "
                     "(max <= 1.5 x value at t=1)", ok,
                     f"max/g(1)={g.max() / g1:.3f}")
    assert ok


def test_transport_field_divergence_free(ci_run):
    hist, cfg, ens = ci_run["hist"], ci_run["cfg"], ci_run["ens"]
    p_vel = hist.params.with_eps(velocity_softening(hist.params, cfg.sigma_v,
                                                    ens.count, cfg.vel_soft_factor))
    seeds = ci_run["scatter"]["seeds"][::4]
    t = float([t for t in hist.main_times
               if t >= cfg.fit_window_fraction * cfg.t_final][2])
    div, grad_mag = transport_field_divergence(hist, t, seeds, p_vel,
                                               step=cfg.divergence_step)
    rel = np.abs(div).max() / grad_mag.max()
    ok = rel <= 1e-3
    record_criterion("transport field: numerical divergence <= 1e-3 relative",
                     ok, f"rel={rel:.2e}")
    assert ok


def test_transport_field_decay(ci_run):
    # known red: the weighted sup decays at -(1+alpha); the -2 alpha bound
    # tracks a term whose coefficient is a factor eta smaller, far below
    # reach at any feasible horizon
    _entry_check(ci_run["entries"], "F1_weighted",
                 "transport field: |F1|/<x> ~ -2 alpha +- 0.25")


# ---------------------------------------------------------------------------
# structural invariants (fast suite)


def test_structural_fast_suite(ci_run):
    t0 = time.time()
    ok = runner.run_check(verbose=False)
    elapsed = time.time() - t0
    record_criterion("structural fast suite (kernel/conservation/transport/"
                     "tree/rate_fit)", ok, f"{elapsed:.0f}s")
    assert ok
    assert elapsed <= 60.0, f"fast suite took {elapsed:.0f}s > 60s"


def test_phase_volume_preserved_on_ci_run(ci_run):
    hist = ci_run["hist"]
    t = float(hist.main_times[np.argmin(np.abs(hist.main_times - 100.0))])
    defect = liouville_check(hist, t, np.array([0.5, -0.3, 0.2, 0.4, 0.0, -0.2]),
                             delta=1e-4, dt_factor=4.0)
    ok = defect <= 1e-4
    record_criterion("flow map: |det - 1| <= 1e-4 at t ~ 1e2", ok,
                     f"defect={defect:.2e} at t={t:.0f}")
    assert ok


def test_interpolation_inequality_scale_invariant():
    p = RieszParams(alpha=ALPHA, lam=1.0)
    base = RadialGaussianDensity(mass=1.0, sigma=1.0)
    x = np.array([0.9, 0.2, -0.3])
    r0 = interpolation_ratio(p, base, x, m=1)
    worst = max(abs(interpolation_ratio(p, RadialGaussianDensity(s ** 3, s),
                                        s * x, m=1) - r0)
                for s in (0.5, 2.0))
    ok = worst <= 0.02 * r0
    record_criterion("interpolation inequality: ratio dilation-invariant "
                     "to 2%", ok, f"drift={worst / r0:.2%}")
    assert ok


def test_smallness_calibration(ci_run):
    cfg = ci_run["cfg"]
    total = smallness_norms(cfg.gaussian_data(), cfg.quadrature_spec(),
                            check_resolution=False).total
    ok = abs(total - cfg.smallness_target) <= 0.1 * cfg.smallness_target
    record_criterion("data amplitude calibrated to smallness ~ 0.01", ok,
                     f"total={total:.4f}")
    assert ok
