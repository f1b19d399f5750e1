"""Run orchestration: simulate / scatter / rates / check pipelines.

Each pipeline reads and writes only through the run directory:

    ensemble.csv   initial particles (x, v, w)
    history.bin    snapshot record (or history.csv)
    metadata.json  resolved config, hash, derived quantities
    fields.csv     t, supE, supGradE, supHessE, n_probes
    wave.csv       t, seed_id, W1*, W2*, wdiff1, diff2
    a_t.csv        t, v_id, A1..A3, dA1..dA3, diff_to_ainf
    residual.csv   t, residual_ref, residual_tilde, residual_free,
                   f1_sup, g_sup
    report.json    fitted rates vs predictions

Every CSV starts with a ``# config_hash=...`` line; mismatched hashes in
one directory are rejected by the rates stage.  All randomness derives
from the single configured seed, and force sums keep fixed per-target
order, so reruns reproduce every output byte for byte.
"""
from __future__ import annotations

import json
import os
import time

import numpy as np

from . import analysis
from .characteristics import (FlowHistory, TimeSchedule, evolve,
                              read_history_bin, read_history_csv,
                              total_energy, write_history_bin,
                              write_history_csv)
from .config import RunConfig
from .initial_data import (Ensemble, discretize, read_ensemble_csv,
                           sample_ensemble, smallness_norms, write_ensemble_csv)
from .kernel import RieszParams, grad, hessian, potential
from .meanfield import (build_probes, diagnostic_params, field_direct,
                        field_tree, sup_field_norms, TreeParams)
from .scattering import (ResidualSeries, WaveTable, log_free_coefficient,
                         momentum_limit, node_accelerations,
                         scattering_residual, seed_grid,
                         trace_seed_trajectories, transport_field,
                         velocity_correction, velocity_correction_rate,
                         velocity_softening, wave_operator,
                         wave_operator_limit)

__all__ = ["run_simulate", "run_scatter", "run_rates", "run_check",
           "build_ensemble", "run_dir_of"]

_FMT = "%.17g"


def _set_threads(cfg: RunConfig) -> int:
    import numba
    n = cfg.threads
    if n <= 0:
        n = int(os.environ.get("RIESZ_KINETICS_THREADS", "0") or "0")
    if n > 0:
        numba.set_num_threads(n)
    return numba.get_num_threads()


def run_dir_of(cfg: RunConfig) -> str:
    return os.path.join(cfg.out_dir, cfg.run_id)


def build_ensemble(cfg: RunConfig) -> Ensemble:
    data = cfg.gaussian_data()
    if cfg.mode == "sample":
        rng = np.random.default_rng(cfg.rng_seed)
        return sample_ensemble(data, cfg.n_particles, rng)
    return discretize(data, cfg.quadrature_spec())


def _write_csv(path, hash_: str, header: str, rows) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(f"# config_hash={hash_}\n")
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(_FMT % v if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def _write_metadata(cfg: RunConfig, run_dir: str, derived: dict) -> None:
    from dataclasses import asdict
    meta = {
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "derived": derived,
        "package": "riesz-kinetics",
    }
    with open(os.path.join(run_dir, "metadata.json"), "w", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def run_simulate(cfg: RunConfig, quiet: bool = True) -> FlowHistory:
    """Build the ensemble, integrate to t_final, write the run directory."""
    nthreads = _set_threads(cfg)
    run_dir = run_dir_of(cfg)
    os.makedirs(run_dir, exist_ok=True)
    h = cfg.config_hash()

    data = cfg.gaussian_data()
    params = cfg.riesz_params()
    ens = build_ensemble(cfg)
    schedule = TimeSchedule(t_final=cfg.t_final, dt_base=cfg.dt_base,
                            snap_ratio=cfg.snap_ratio, uniform_dt=cfg.uniform_dt,
                            companion_delta=cfg.companion_delta)
    max_dv = cfg.max_dv_sigma * cfg.sigma_v if cfg.max_dv_sigma > 0 else None

    t0 = time.time()
    hist = evolve(ens, schedule, params, cfg.tree_params(), max_dv=max_dv,
                  metadata={"config_hash": h})
    if not quiet:
        print(f"evolve: {len(hist.times)} snapshots, {time.time() - t0:.1f}s")

    with open(os.path.join(run_dir, "ensemble.csv"), "w", newline="\n") as f:
        f.write(f"# config_hash={h}\n")
        write_ensemble_csv(ens, f)
    if cfg.history_format == "bin":
        write_history_bin(hist, os.path.join(run_dir, "history.bin"))
    else:
        write_history_csv(hist, os.path.join(run_dir, "history.csv"), h)

    # field sup-norm diagnostics over main snapshots
    rng = np.random.default_rng(cfg.rng_seed + 1)
    n = ens.count
    rows = []
    for t in hist.main_times:
        k = hist.index_of(t)
        probes, excl = build_probes(hist.X[k], rng, cfg.probe_grid,
                                    cfg.probe_max_particles)
        p_diag = diagnostic_params(params, cfg.sigma_x, cfg.sigma_v, n, t,
                                   cfg.field_soft_factor)
        fd_step = cfg.hess_fd_step * max(1.0, t / 10.0)
        sup_e, sup_ge, sup_he = sup_field_norms(p_diag, hist.X[k], hist.weights,
                                                probes, excl, fd_step=fd_step)
        rows.append((float(t), sup_e, sup_ge, sup_he, len(probes)))
    _write_csv(os.path.join(run_dir, "fields.csv"), h,
               "t,supE,supGradE,supHessE,n_probes", rows)

    norms = smallness_norms(data, cfg.quadrature_spec(), check_resolution=False)
    _write_metadata(cfg, run_dir, {
        "n_particles": ens.count,
        "mass": ens.mass,
        "analytic_mass": data.mass,
        "eta": data.eta,
        "eps": params.eps,
        "eps_vel": velocity_softening(params, cfg.sigma_v, ens.count,
                                      cfg.vel_soft_factor),
        "smallness_norms": norms.as_dict(),
        "n_snapshots": len(hist.times),
        "threads": nthreads,
    })
    return hist


def load_run(cfg: RunConfig) -> tuple[FlowHistory, Ensemble]:
    """History and ensemble back from a run directory."""
    run_dir = run_dir_of(cfg)
    ens = read_ensemble_csv(os.path.join(run_dir, "ensemble.csv"))
    schedule = TimeSchedule(t_final=cfg.t_final, dt_base=cfg.dt_base,
                            snap_ratio=cfg.snap_ratio, uniform_dt=cfg.uniform_dt,
                            companion_delta=cfg.companion_delta)
    bin_path = os.path.join(run_dir, "history.bin")
    if os.path.exists(bin_path):
        times, X, V, comp = read_history_bin(bin_path)
    else:
        times, X, V = read_history_csv(os.path.join(run_dir, "history.csv"))
        ref, comp_ref = schedule.snapshot_times()
        comp = comp_ref if len(ref) == len(times) else np.zeros(len(times), bool)
    return FlowHistory(times=times, X=X, V=V, is_companion=comp,
                       weights=ens.w, params=cfg.riesz_params(),
                       schedule=schedule,
                       metadata={"config_hash": cfg.config_hash()}), ens


def run_scatter(cfg: RunConfig, hist: FlowHistory | None = None,
                ens: Ensemble | None = None, quiet: bool = True) -> dict:
    """Asymptotic diagnostics of a stored run: wave operators, velocity
    correction tables, modified-scattering residuals."""
    _set_threads(cfg)
    run_dir = run_dir_of(cfg)
    if hist is None or ens is None:
        if not os.path.exists(os.path.join(run_dir, "metadata.json")):
            raise FileNotFoundError(f"no run directory at {run_dir}; "
                                    "run simulate first")
        hist, ens = load_run(cfg)
    h = cfg.config_hash()
    params = hist.params
    alpha = params.alpha
    data = cfg.gaussian_data()
    T = hist.t_final
    tree = cfg.tree_params()
    p_vel = params.with_eps(velocity_softening(params, cfg.sigma_v, ens.count,
                                               cfg.vel_soft_factor))

    # --- seed trajectories at every snapshot time >= 1
    seeds = seed_grid(cfg.seeds_per_axis, cfg.seed_span_sigma * cfg.sigma_x,
                      cfg.seed_span_sigma * cfg.sigma_v)
    rec_ts = hist.times[hist.times >= 1.0 - 1e-12]
    t0 = time.time()
    traj = trace_seed_trajectories(hist, seeds, rec_ts, tree_params=tree)
    if not quiet:
        print(f"seed trajectories: {time.time() - t0:.1f}s")

    m = len(seeds)
    W1 = np.empty((len(rec_ts), m, 3))
    W2 = np.empty((len(rec_ts), m, 3))
    for j, t in enumerate(rec_ts):
        W1[j], W2[j] = wave_operator(hist, traj[j], float(t), p_vel)
    in_win = rec_ts >= cfg.fit_window_fraction * T - 1e-9
    w1_plus, w2_plus, r2_w1, r2_w2 = wave_operator_limit(
        rec_ts[in_win], W1[in_win], W2[in_win], alpha)
    wave_table = WaveTable(times=rec_ts, seeds=seeds, W1=W1, W2=W2,
                           W1_plus=w1_plus, W2_plus=w2_plus,
                           w1_fit_r2=r2_w1, w2_fit_r2=r2_w2)
    jb = wave_table.seed_weight
    wd1_all = wave_table.weighted_w1_diff()
    d2_all = wave_table.w2_diff()
    rows = []
    for j, t in enumerate(rec_ts):
        for i in range(m):
            rows.append((float(t), i, *W1[j, i], *W2[j, i],
                         float(wd1_all[j, i]), float(d2_all[j, i])))
    _write_csv(os.path.join(run_dir, "wave.csv"), h,
               "t,seed_id,W1x,W1y,W1z,W2x,W2y,W2z,wdiff1,diff2", rows)

    # --- per-node asymptotic velocities feed the limit correction
    iw = hist.times >= cfg.fit_window_fraction * T - 1e-9
    node_limits = momentum_limit(hist.times[iw], hist.V[iw], alpha)
    v_plus_nodes = node_limits.v_plus

    # --- velocity-correction table on the velocity grid
    vg_ax = np.linspace(-cfg.vgrid_span_sigma * cfg.sigma_v,
                        cfg.vgrid_span_sigma * cfg.sigma_v, cfg.vgrid_per_axis)
    vgrid = np.stack(np.meshgrid(vg_ax, vg_ax, vg_ax, indexing="ij"), -1).reshape(-1, 3)
    a_inf = velocity_correction(p_vel, v_plus_nodes, hist.weights, vgrid)
    rows = []
    for t in hist.times:
        k = hist.index_of(float(t))
        a_now = velocity_correction(p_vel, hist.V[k], hist.weights, vgrid)
        nf = node_accelerations(hist, float(t))
        a_rate = velocity_correction_rate(p_vel, hist.V[k], hist.weights, nf, vgrid)
        diff = np.linalg.norm(a_now - a_inf, axis=1)
        for i in range(len(vgrid)):
            rows.append((float(t), i, *a_now[i], *a_rate[i], float(diff[i])))
    _write_csv(os.path.join(run_dir, "a_t.csv"), h,
               "t,v_id,A1,A2,A3,dA1,dA2,dA3,diff_to_ainf", rows)

    # --- residuals, transport field, modified-distribution bound
    # (every window snapshot, every second one before the window: the
    # backward-trace cost concentrates at late times anyway)
    main_ge1 = [float(t) for t in hist.main_times if t >= 1.0 - 1e-12]
    window_lo = cfg.fit_window_fraction * T
    early = [t for t in main_ge1 if t < window_lo - 1e-9]
    res_ts = sorted(set(early[::2] + main_ge1[:1]
                        + [t for t in main_ge1 if t >= window_lo - 1e-9]))
    rows = []
    t0 = time.time()
    for t in res_ts:
        t = float(t)
        k = hist.index_of(t)
        a_seed = velocity_correction(p_vel, hist.V[k], hist.weights, seeds[:, 3:])
        cof = log_free_coefficient(t, alpha)
        gpts = np.concatenate([seeds[:, :3] + t * seeds[:, 3:] - cof * a_seed,
                               seeds[:, 3:]], axis=1)
        r_ref, r_til, r_free, gvals = scattering_residual(
            hist, data, t, seeds, w1_plus, w2_plus, v_plus_nodes, p_vel,
            dt_factor=cfg.trace_dt_factor, tree_params=tree, extra_points=gpts)
        g_sup = float((jb * gvals).max())
        nf = node_accelerations(hist, t)
        f1, _ = transport_field(hist, t, seeds[:, :3], seeds[:, 3:], p_vel, nf)
        f1_sup = float((np.linalg.norm(f1, axis=1) / jb).max())
        rows.append((t, r_ref, r_til, r_free, f1_sup, g_sup))
    if not quiet:
        print(f"residual traces: {time.time() - t0:.1f}s")
    _write_csv(os.path.join(run_dir, "residual.csv"), h,
               "t,residual_ref,residual_tilde,residual_free,f1_sup,g_sup", rows)
    arr = np.array(rows)
    residual_series = ResidualSeries(times=arr[:, 0], residual_ref=arr[:, 1],
                                     residual_tilde=arr[:, 2],
                                     residual_free=arr[:, 3])

    return {
        "wave_table": wave_table,
        "residual_series": residual_series,
        "node_limits": node_limits, "seeds": seeds,
    }


def run_rates(cfg: RunConfig, tolerances: dict | None = None) -> dict:
    return analysis.build_report(run_dir_of(cfg), tolerances=tolerances)


# ---------------------------------------------------------------------------
# fast invariant suite


def run_check(verbose: bool = True) -> bool:
    """Fast structural invariants: kernel identities, conservation on a
    small run, synthetic rate fits.  Returns True when everything holds."""
    _set_threads(RunConfig(threads=0))
    results: list[tuple[str, bool, str]] = []

    def check(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    rng = np.random.default_rng(3)
    p = RieszParams(alpha=0.75, lam=1.0, eps=0.0)

    # kernel: gradient matches finite differences of the potential
    worst = 0.0
    for _ in range(8):
        x = rng.normal(size=3)
        x *= rng.uniform(0.5, 4.0) / np.linalg.norm(x)
        g = grad(p, x)
        fd = np.empty(3)
        hstep = 1e-5
        for d in range(3):
            e = np.zeros(3)
            e[d] = hstep
            fd[d] = (potential(p, x + e) - potential(p, x - e)) / (2 * hstep)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    check("kernel gradient vs finite differences", worst <= 1e-6, f"rel={worst:.2e}")

    # kernel: homogeneity |grad(s x)| s^(1+alpha) = |grad(x)|
    x = rng.normal(size=3)
    base = np.linalg.norm(grad(p, x))
    worst = max(abs(np.linalg.norm(grad(p, s * x)) * s ** (1 + p.alpha) - base) / base
                for s in (0.5, 2.0, 10.0))
    check("kernel homogeneity", worst <= 1e-12, f"rel={worst:.2e}")

    # kernel: oddness and Hessian symmetry
    g1, g2 = grad(p, x), grad(p, -x)
    hess = hessian(p, x)
    check("kernel oddness/symmetry",
          np.all(g1 == -g2) and np.allclose(hess, hess.T, rtol=0, atol=0))

    # momentum conservation + free transport on a tiny run
    from .initial_data import GaussianData
    from .characteristics import TimeSchedule as TS
    data = GaussianData(eta=1e-5)
    ens = sample_ensemble(data, 100, np.random.default_rng(5))
    sched = TS(t_final=10.0, dt_base=0.02)
    pp = RieszParams(alpha=0.75, lam=1.0, eps=0.2)
    hist = evolve(ens, sched, pp)
    p0 = (ens.w[:, None] * ens.v).sum(0)
    pT = (hist.weights[:, None] * hist.V[-1]).sum(0)
    scale = (ens.w[:, None] * np.abs(ens.v)).sum() + 1e-300
    drift = np.abs(pT - p0).max() / scale
    check("momentum conservation (100-node run)", drift <= 1e-12, f"rel={drift:.2e}")

    e0 = total_energy(pp, hist.X[0], hist.V[0], hist.weights)
    eT = total_energy(pp, hist.X[-1], hist.V[-1], hist.weights)
    edrift = abs(eT - e0) / abs(e0)
    check("energy drift (100-node run)", edrift <= 1e-6, f"rel={edrift:.2e}")

    zero = sample_ensemble(GaussianData(eta=0.0), 50, np.random.default_rng(6))
    histz = evolve(zero, TS(t_final=8.0, dt_base=0.05), pp)
    free = zero.x + histz.t_final * zero.v
    err = np.abs(histz.X[-1] - free).max() / np.abs(free).max()
    check("zero-data run is free transport", err <= 1e-12, f"rel={err:.2e}")

    # synthetic rate fits
    fit = analysis.rate_fit(np.column_stack([np.array([1., 2., 4., 8., 16.]),
                                             np.array([1., 2., 4., 8., 16.]) ** -1.0]))
    ok = abs(fit.exponent + 1.0) <= 1e-12 and fit.r_squared >= 1.0 - 1e-12
    for q in (-3.0, -2.0, -0.5, -0.25):
        tt = np.geomspace(1, 100, 7)
        f = analysis.rate_fit(np.column_stack([tt, tt ** q]))
        ok = ok and abs(f.exponent - q) <= 1e-12
    check("rate_fit exact on synthetic power laws", ok)

    # tree vs direct on a random cloud
    x = rng.normal(size=(2000, 3))
    w = rng.uniform(0.5, 1.0, 2000) * 1e-4
    probes = rng.normal(size=(50, 3)) * 1.5
    pt = RieszParams(alpha=0.75, lam=1.0, eps=0.05)
    exact = field_direct(pt, x, w, probes)
    approx = field_tree(TreeParams(theta=0.5), pt, x, w, probes)
    rel = np.linalg.norm(approx - exact, axis=1).max() / np.linalg.norm(exact, axis=1).max()
    check("tree vs direct at theta=0.5", rel <= 1e-3, f"rel={rel:.2e}")

    ok_all = all(ok for _, ok, _ in results)
    if verbose:
        for name, ok, detail in results:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    return ok_all
