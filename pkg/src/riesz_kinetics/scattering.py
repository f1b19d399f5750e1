"""Long-time scattering diagnostics of a stored flow history.

In the long-range regime the free flow is a bad asymptotic reference:
positions acquire a power-law correction built from the velocity
correction

    A_t(v) = -sum_i w_i grad_w(v - V_i(t)),

whose time integral contributes cof(t) A(v) with cof(t) = (t^(1-a)-1)/(1-a)
to the reference flow.  This module computes A_t and its limit and time
derivative, the reference flows, the finite-time modified wave operator
and its extrapolated limit, the modified distribution, the transport
field of the modified equation, and the modified-scattering residual.

All operations are pure functions of an immutable FlowHistory.

Softening conventions.  The velocity-space kernel in A_t uses its own
softening ``eps_vel``: by exact kernel scaling, position softening eps at
spatial scale t corresponds to velocity softening eps/t, so a fixed
eps_vel of order the ensemble's velocity-space interparticle spacing is
the consistent regularization at large t.  The transport-field check
pairs E evaluated with softening eps_vel * t against A_t with eps_vel,
which keeps the leading cancellation in its first component exact.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._accel import field_direct_k, field_gradient_k, hess_dot_k
from .characteristics import FlowHistory, trace_points
from .initial_data import GaussianData, evaluate_f0
from .kernel import RieszParams
from .meanfield import TreeParams, field_direct

__all__ = [
    "log_free_coefficient",
    "velocity_correction",
    "velocity_correction_gradient",
    "velocity_correction_rate",
    "velocity_softening",
    "node_accelerations",
    "ref_flow",
    "MomentumLimits",
    "momentum_limit",
    "WaveTable",
    "wave_operator",
    "wave_operator_limit",
    "tail_limit_fit",
    "trace_seed_trajectories",
    "modified_distribution",
    "transport_field",
    "transport_field_divergence",
    "ResidualSeries",
    "scattering_residual",
    "seed_grid",
]


def log_free_coefficient(t, alpha: float):
    """(t^(1-alpha) - 1) / (1 - alpha): the accumulated weight of the
    velocity correction in the reference flow.  Vanishes at t = 1."""
    return (np.asarray(t, dtype=float) ** (1.0 - alpha) - 1.0) / (1.0 - alpha)


def velocity_softening(p: RieszParams, sigma_v: float, n: int, factor: float = 2.0) -> float:
    """Velocity-space softening for A_t sums: ``factor`` velocity-space
    core spacings, floored at the dynamical softening."""
    return max(p.eps, factor * np.sqrt(2.0 * np.pi) * sigma_v / n ** (1.0 / 3.0))


def velocity_correction(p: RieszParams, velocities, weights, v) -> np.ndarray:
    """A_t at query velocities v: -sum_i w_i grad_w(v - V_i).

    ``velocities`` are the particle velocities of one snapshot (or their
    limits, which gives the t = infinity correction).  The kernel in p
    should carry the velocity-space softening (``velocity_softening``).
    """
    return field_direct(p, velocities, weights, v)


def velocity_correction_gradient(p: RieszParams, velocities, weights, v) -> np.ndarray:
    """d A_t / d v, the analytic weighted Hessian sum; (..., 3, 3)."""
    velocities = np.ascontiguousarray(velocities, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    vq = np.atleast_2d(np.asarray(v, dtype=float))
    out = np.empty((len(vq), 3, 3))
    field_gradient_k(p.alpha, p.lam, p.eps2, velocities, weights,
                     np.ascontiguousarray(vq), np.full(len(vq), -1, np.int64), out)
    return out[0] if np.asarray(v).ndim == 1 else out


def velocity_correction_rate(p: RieszParams, velocities, weights,
                             node_fields, v) -> np.ndarray:
    """d A_t / d t = sum_i w_i hess_w(v - V_i) . E(t, X_i).

    Chain rule on the definition of A_t: each V_i moves with the field at
    its own position, so the kernel Hessian is contracted against the
    per-node accelerations.
    """
    velocities = np.ascontiguousarray(velocities, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    node_fields = np.ascontiguousarray(node_fields, dtype=float)
    vq = np.atleast_2d(np.asarray(v, dtype=float))
    out = np.empty((len(vq), 3))
    hess_dot_k(p.alpha, p.lam, p.eps2, velocities, weights, node_fields,
               np.ascontiguousarray(vq), out)
    return out[0] if np.asarray(v).ndim == 1 else out


def node_accelerations(h: FlowHistory, t: float) -> np.ndarray:
    """Field at every particle position of snapshot t (self-excluded)."""
    k = h.index_of(t)
    X = np.ascontiguousarray(h.X[k])
    out = np.empty_like(X)
    p = h.params
    field_direct_k(p.alpha, p.lam, p.eps2, X, h.weights, X,
                   np.arange(len(X)), out)
    return out


def ref_flow(t: float, x, v, correction, alpha: float):
    """Reference flow (x + t v - cof(t) A(v), v) for a given correction
    value A(v); A = 0 reduces to the free flow."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    correction = np.asarray(correction, dtype=float)
    return x + t * v - log_free_coefficient(t, alpha) * correction, v


# ---------------------------------------------------------------------------
# tail extrapolation


def tail_limit_fit(times: np.ndarray, series: np.ndarray, exponent: float):
    """Extrapolated limit of series(t) -> L under the tail model
    series = L + c t^(-exponent), amplitudes fitted per component.

    series has shape (K, M, 3) (K times, M entities).  Returns
    (limits (M, 3), r2 (M,), diff_exponent (M,), degenerate flag).
    ``diff_exponent`` is a data-driven slope of consecutive-difference
    magnitudes, reported as a cross-check of the modeled exponent.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    K, M = series.shape[0], series.shape[1]
    spread = np.max(np.abs(series - series[-1])) if K else 0.0
    if spread < 1e-14:
        return series[-1].copy(), np.full(M, np.nan), np.full(M, np.nan), True
    basis = np.vstack([np.ones_like(times), times ** (-exponent)]).T
    pinv = np.linalg.pinv(basis)
    coef = np.einsum("jk,kmi->jmi", pinv, series)
    resid = series - np.einsum("kj,jmi->kmi", basis, coef)
    ss_res = (resid ** 2).sum(axis=(0, 2))
    centered = series - series.mean(axis=0, keepdims=True)
    ss_tot = (centered ** 2).sum(axis=(0, 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 1.0)
    # data-driven exponent from consecutive differences (no limit involved)
    diffs = np.linalg.norm(np.diff(series, axis=0), axis=2)
    lt = np.log(times[:-1])
    amat = np.vstack([lt, np.ones_like(lt)]).T
    with np.errstate(divide="ignore"):
        sol = np.linalg.pinv(amat) @ np.log(np.maximum(diffs, 1e-300))
    return coef[0], r2, -sol[0], False


@dataclass(frozen=True)
class MomentumLimits:
    """Per-seed asymptotic velocities with tail-fit bookkeeping."""

    v_plus: np.ndarray
    last_value: np.ndarray
    fit_r2: np.ndarray
    tail_exponent: np.ndarray
    degenerate: bool


def momentum_limit(times: np.ndarray, velocity_series: np.ndarray,
                   alpha: float) -> MomentumLimits:
    """Asymptotic velocity per trajectory: last value plus the power-law
    tail correction from a t^(-alpha) model over the supplied window.

    velocity_series has shape (K, M, 3) sampled at ``times`` (the fit
    window, normally the run's last decade).
    """
    vp, r2, qd, degen = tail_limit_fit(times, velocity_series, alpha)
    if degen:
        warnings.warn("momentum_limit: tail below 1e-14, limit taken as the "
                      "last value", stacklevel=2)
    return MomentumLimits(v_plus=vp, last_value=velocity_series[-1].copy(),
                          fit_r2=r2, tail_exponent=qd, degenerate=degen)


# ---------------------------------------------------------------------------
# seed trajectories and wave operators


def seed_grid(per_axis: int, span_x: float, span_v: float) -> np.ndarray:
    """Tensor grid of per_axis^3 positions x per_axis^3 velocities in
    [-span, span]^3 each; shape (per_axis^6, 6)."""
    ax_x = np.linspace(-span_x, span_x, per_axis)
    ax_v = np.linspace(-span_v, span_v, per_axis)
    gx = np.stack(np.meshgrid(ax_x, ax_x, ax_x, indexing="ij"), -1).reshape(-1, 3)
    gv = np.stack(np.meshgrid(ax_v, ax_v, ax_v, indexing="ij"), -1).reshape(-1, 3)
    sx = np.repeat(gx, len(gv), axis=0)
    sv = np.tile(gv, (len(gx), 1))
    return np.concatenate([sx, sv], axis=1)


def trace_seed_trajectories(h: FlowHistory, seeds: np.ndarray,
                            record_times: np.ndarray,
                            dt_factor: float = 1.0,
                            tree_params: TreeParams | None = None) -> np.ndarray:
    """Forward-integrate seed phase points through the stored history,
    recording states at the given times; shape (K, M, 6)."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    record_times = np.asarray(record_times, dtype=float)
    out = np.empty((len(record_times), len(seeds), 6))
    cur = seeds.copy()
    t_prev = 0.0
    for j, t in enumerate(record_times):
        cur = trace_points(h, t_prev, float(t), cur, dt_factor, tree_params)
        out[j] = cur
        t_prev = float(t)
    return out


def wave_operator(h: FlowHistory, states: np.ndarray, t: float,
                  p_vel: RieszParams) -> tuple[np.ndarray, np.ndarray]:
    """Finite-time modified wave operator components of traced states.

    W2 is the current velocity; W1 removes the ballistic part and adds
    back the accumulated velocity correction:
    W1 = X - t V + cof(t) A_t(V).   At t = 1 the coefficient vanishes and
    W1 reduces to X - V.
    """
    states = np.atleast_2d(states)
    X, V = states[:, :3], states[:, 3:]
    k = h.index_of(t)
    a_val = velocity_correction(p_vel, h.V[k], h.weights, V)
    cof = log_free_coefficient(t, h.params.alpha)
    return X - t * V + cof * a_val, V.copy()


@dataclass(frozen=True)
class WaveTable:
    """Wave-operator samples for a seed set across snapshot times."""

    times: np.ndarray          # (K,)
    seeds: np.ndarray          # (M, 6)
    W1: np.ndarray             # (K, M, 3)
    W2: np.ndarray             # (K, M, 3)
    W1_plus: np.ndarray        # (M, 3)
    W2_plus: np.ndarray        # (M, 3)
    w1_fit_r2: np.ndarray
    w2_fit_r2: np.ndarray

    @property
    def seed_weight(self) -> np.ndarray:
        """sqrt(1 + |x0|^2) per seed: the spatial weight used for the
        position-component convergence diagnostics."""
        return np.sqrt(1.0 + np.sum(self.seeds[:, :3] ** 2, axis=1))

    def weighted_w1_diff(self) -> np.ndarray:
        return np.linalg.norm(self.W1 - self.W1_plus[None], axis=2) / self.seed_weight[None, :]

    def w2_diff(self) -> np.ndarray:
        return np.linalg.norm(self.W2 - self.W2_plus[None], axis=2)


def wave_operator_limit(times: np.ndarray, W1: np.ndarray, W2: np.ndarray,
                        alpha: float):
    """Extrapolated wave-operator limits from window samples.

    The momentum part converges like t^(-alpha), the position part like
    t^(-(2 alpha - 1)); both limits are last-window fits under those tail
    models.  Near alpha = 1/2 the position exponent degenerates and the
    extrapolation is flagged as unreliable.
    """
    if 2.0 * alpha - 1.0 < 0.1:
        warnings.warn("wave_operator_limit: exponent 2*alpha-1 close to 0; "
                      "position-limit extrapolation is unreliable", stacklevel=2)
    w1p, r1, _, _ = tail_limit_fit(times, W1, 2.0 * alpha - 1.0)
    w2p, r2, _, _ = tail_limit_fit(times, W2, alpha)
    return w1p, w2p, r1, r2


# ---------------------------------------------------------------------------
# modified distribution, transport field, residual


def modified_distribution(h: FlowHistory, d: GaussianData, t: float, x, v,
                          p_vel: RieszParams, dt_factor: float = 1.0,
                          tree_params: TreeParams | None = None) -> np.ndarray:
    """Value of the initial data transported along the reference flow:
    f0 evaluated at the time-0 preimage of the reference-flow image of
    (x, v).  Nonnegative by construction."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    k = h.index_of(t)
    a_val = velocity_correction(p_vel, h.V[k], h.weights, v)
    pos, vel = ref_flow(t, x, v, a_val, h.params.alpha)
    pts = np.concatenate([pos, vel], axis=1)
    back = trace_points(h, t, 0.0, pts, dt_factor, tree_params)
    return evaluate_f0(d, back[:, :3], back[:, 3:])


def transport_field(h: FlowHistory, t: float, x, v, p_vel: RieszParams,
                    node_fields: np.ndarray | None = None):
    """Vector field (F1, F2) governing the modified distribution.

    F2 is the force field at the reference position; F1 combines the
    cancellation between t F2 and the instantaneous velocity correction
    with the accumulated-correction terms:

        F1 = -(t F2 - t^-alpha A_t(v))
             + cof(t) (dA_t/dt (v) + (dA_t/dv) F2).

    E is evaluated with softening eps_vel * t, the exact position-space
    image of the A_t softening under kernel scaling, so the leading
    cancellation in F1 is not polluted by mismatched regularizations.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    alpha = h.params.alpha
    k = h.index_of(t)
    vel = h.V[k]
    wts = h.weights
    a_val = velocity_correction(p_vel, vel, wts, v)
    pos, _ = ref_flow(t, x, v, a_val, alpha)
    p_pos = h.params.with_eps(p_vel.eps * t)
    F2 = field_direct(p_pos, h.X[k], wts, pos)
    if node_fields is None:
        node_fields = node_accelerations(h, t)
    a_rate = velocity_correction_rate(p_vel, vel, wts, node_fields, v)
    a_grad = velocity_correction_gradient(p_vel, vel, wts, v)
    cof = log_free_coefficient(t, alpha)
    F1 = -(t * F2 - t ** (-alpha) * a_val) \
        + cof * (a_rate + np.einsum("mij,mj->mi", a_grad, F2))
    return F1, F2


def transport_field_divergence(h: FlowHistory, t: float, pts: np.ndarray,
                               p_vel: RieszParams, step: float = 1e-3,
                               node_fields: np.ndarray | None = None):
    """Central-difference phase-space divergence of (F1, F2) at the given
    points, and the summed gradient magnitude used as its scale.

    The field is divergence-free by construction; the returned ratio
    max|div| / max|grad| measures only finite-difference error.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if node_fields is None:
        node_fields = node_accelerations(h, t)
    div = np.zeros(len(pts))
    grad_mag = np.zeros(len(pts))
    for dim in range(6):
        pp = pts.copy()
        pp[:, dim] += step
        pm = pts.copy()
        pm[:, dim] -= step
        f1p, f2p = transport_field(h, t, pp[:, :3], pp[:, 3:], p_vel, node_fields)
        f1m, f2m = transport_field(h, t, pm[:, :3], pm[:, 3:], p_vel, node_fields)
        if dim < 3:
            div += (f1p[:, dim] - f1m[:, dim]) / (2.0 * step)
        else:
            div += (f2p[:, dim - 3] - f2m[:, dim - 3]) / (2.0 * step)
        grad_mag += np.abs((f1p - f1m) / (2.0 * step)).sum(axis=1)
        grad_mag += np.abs((f2p - f2m) / (2.0 * step)).sum(axis=1)
    return div, grad_mag


@dataclass(frozen=True)
class ResidualSeries:
    """Sup-over-seeds modified-scattering residuals per snapshot time,
    against the limit-correction reference flow, the instantaneous-
    correction reference flow, and the free flow."""

    times: np.ndarray
    residual_ref: np.ndarray
    residual_tilde: np.ndarray
    residual_free: np.ndarray

    def __post_init__(self):
        for name in ("residual_ref", "residual_tilde", "residual_free"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative")


def scattering_residual(h: FlowHistory, d: GaussianData, t: float,
                        seeds: np.ndarray, w1_plus: np.ndarray,
                        w2_plus: np.ndarray, v_plus_nodes: np.ndarray,
                        p_vel: RieszParams, dt_factor: float = 1.0,
                        tree_params: TreeParams | None = None,
                        extra_points: np.ndarray | None = None):
    """One row of the residual series at snapshot time t.

    For each seed, the scattering profile evaluated at the seed's
    wave-operator limit equals f0 at the seed itself; the residual is the
    difference between that value and the solution sampled along the
    reference flow through the limit point:

        sup_seeds | f(t, ref_flow(t)(W1+, W2+)) - f0(seed) |,

    computed for the limit correction, the instantaneous correction, and
    the free flow.  ``extra_points`` (M', 6) are appended to the same
    backward-trace batch and their f0 preimage values returned, letting
    callers amortize modified-distribution samples into the same sweep.
    """
    seeds = np.atleast_2d(seeds)
    m = len(seeds)
    alpha = h.params.alpha
    k = h.index_of(t)
    cof = log_free_coefficient(t, alpha)
    a_inf = velocity_correction(p_vel, v_plus_nodes, h.weights, w2_plus)
    a_now = velocity_correction(p_vel, h.V[k], h.weights, w2_plus)
    base = w1_plus + t * w2_plus
    batches = [
        np.concatenate([base - cof * a_inf, w2_plus], axis=1),
        np.concatenate([base - cof * a_now, w2_plus], axis=1),
        np.concatenate([base, w2_plus], axis=1),
    ]
    if extra_points is not None:
        batches.append(np.atleast_2d(extra_points))
    pts = np.concatenate(batches, axis=0)
    back = trace_points(h, t, 0.0, pts, dt_factor, tree_params)
    fvals = evaluate_f0(d, back[:, :3], back[:, 3:])
    f_seed = evaluate_f0(d, seeds[:, :3], seeds[:, 3:])
    r_ref = float(np.abs(fvals[:m] - f_seed).max())
    r_til = float(np.abs(fvals[m:2 * m] - f_seed).max())
    r_free = float(np.abs(fvals[2 * m:3 * m] - f_seed).max())
    extra = fvals[3 * m:] if extra_points is not None else None
    return r_ref, r_til, r_free, extra
