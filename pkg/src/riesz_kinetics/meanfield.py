"""Self-consistent force field of a weighted particle ensemble.

The field at a probe is the exact pushforward sum

    E(p) = -sum_i w_i grad_w(p - X_i),

with a direct O(N) path and a tree-accelerated path, plus the field
gradient (analytic sum of kernel Hessians), a finite-difference field
Hessian, and sup-norm diagnostics over a probe set.

Probe-set design for the sup norms: probes are the ensemble's own
positions (thinned, self-excluded) plus a grid spanning the current
bounding box of the cloud.  Near a particle the discrete field carries an
O(w_i / dist^(1+alpha)) self-field spike that the smooth mean field does
not have; sup-norm diagnostics therefore evaluate the field with the
softening widened to a fixed multiple of the current core interparticle
spacing (``diagnostic_params``), which caps the spikes while shifting the
smooth field only by a t-independent relative amount.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._accel import field_direct_k, field_gradient_k, tree_walk_k
from .kernel import RieszParams
from .tree import Octree, build_octree

__all__ = [
    "FieldSample",
    "TreeParams",
    "field_direct",
    "field_gradient",
    "field_hessian_fd",
    "field_tree",
    "sample_field",
    "sup_field_norms",
    "build_probes",
    "core_spacing",
    "diagnostic_params",
]

_ORDERS = {"monopole": 0, "monopole+dipole": 1}


@dataclass(frozen=True)
class TreeParams:
    """Tree-walk accuracy knobs; theta = 0 degenerates to direct summation."""

    theta: float = 0.5
    leaf_size: int = 32
    order: str = "monopole+dipole"

    def __post_init__(self):
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must be in [0, 1)")
        if self.order not in _ORDERS:
            raise ValueError(f"order must be one of {sorted(_ORDERS)}")
        if self.leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")


@dataclass(frozen=True)
class FieldSample:
    """Field and its derivatives at one probe point."""

    t: float
    probe: np.ndarray
    E: np.ndarray
    gradE: np.ndarray
    hessE: np.ndarray


def _as_probes(probe) -> tuple[np.ndarray, bool]:
    probe = np.asarray(probe, dtype=float)
    if probe.ndim == 1:
        return np.ascontiguousarray(probe[None, :]), True
    return np.ascontiguousarray(probe), False


def _as_exclude(exclude, m: int) -> np.ndarray:
    if exclude is None:
        return np.full(m, -1, dtype=np.int64)
    if np.isscalar(exclude):
        return np.full(m, int(exclude), dtype=np.int64)
    out = np.ascontiguousarray(exclude, dtype=np.int64)
    if out.shape != (m,):
        raise ValueError("exclude must be None, an int, or shape (n_probes,)")
    return out


def field_direct(p: RieszParams, positions, weights, probe, exclude=None) -> np.ndarray:
    """E(probe) by direct summation; ``exclude`` skips one source index
    per probe (self-interaction removal when probing at a node)."""
    positions = np.ascontiguousarray(positions, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    probes, single = _as_probes(probe)
    if p.eps == 0.0:
        d2 = ((probes[:, None, :] - positions[None, :, :]) ** 2).sum(-1)
        excl = _as_exclude(exclude, len(probes))
        sel = excl >= 0
        if sel.any():
            d2[np.arange(len(probes))[sel], excl[sel]] = np.inf
        if np.any(d2 == 0.0):
            raise ValueError("field evaluated at a source position with eps = 0")
    out = np.empty_like(probes)
    field_direct_k(p.alpha, p.lam, p.eps2, positions, weights, probes,
                   _as_exclude(exclude, len(probes)), out)
    return out[0] if single else out


def field_gradient(p: RieszParams, positions, weights, probe, exclude=None) -> np.ndarray:
    """grad E at probe(s): analytic sum of weighted kernel Hessians."""
    positions = np.ascontiguousarray(positions, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    probes, single = _as_probes(probe)
    out = np.empty((len(probes), 3, 3))
    field_gradient_k(p.alpha, p.lam, p.eps2, positions, weights, probes,
                     _as_exclude(exclude, len(probes)), out)
    return out[0] if single else out


def field_hessian_fd(p: RieszParams, positions, weights, probe, h: float = 1e-3,
                     exclude=None) -> np.ndarray:
    """Second field derivative by central differences of the analytic
    gradient; shape (..., 3, 3, 3), first slot is the FD direction."""
    if h <= 0.0:
        raise ValueError("FD step h must be > 0")
    probes, single = _as_probes(probe)
    excl = _as_exclude(exclude, len(probes))
    out = np.empty((len(probes), 3, 3, 3))
    scale = 0.0
    for d in range(3):
        pp = probes.copy()
        pp[:, d] += h
        pm = probes.copy()
        pm[:, d] -= h
        gp = field_gradient(p, positions, weights, pp, excl)
        gm = field_gradient(p, positions, weights, pm, excl)
        out[:, d] = (gp - gm) / (2.0 * h)
        scale = max(scale, float(np.max(np.abs(gp) + np.abs(gm))))
    if scale > 0.0 and float(np.max(np.abs(out))) * 2.0 * h < 1e-11 * scale:
        warnings.warn("field_hessian_fd: step too small, differences are "
                      "roundoff-dominated", stacklevel=2)
    return out[0] if single else out


def field_tree(tp: TreeParams, p: RieszParams, positions, weights, probe,
               tree: Octree | None = None) -> np.ndarray:
    """Tree-accelerated E(probe); builds the octree unless one is passed."""
    probes, single = _as_probes(probe)
    if tree is None:
        tree = build_octree(np.asarray(positions, float), np.asarray(weights, float),
                            tp.leaf_size)
    out = np.empty_like(probes)
    tree_walk_k(p.alpha, p.lam, p.eps2, tp.theta, _ORDERS[tp.order],
                tree.centers, tree.halfs, tree.children, tree.starts, tree.ends,
                tree.masses, tree.dipoles, tree.offsets, tree.xs, tree.ws,
                probes, out)
    return out[0] if single else out


def sample_field(p: RieszParams, positions, weights, probe, t: float = 0.0,
                 fd_step: float = 1e-3, exclude=None) -> FieldSample:
    """Field, gradient, and FD Hessian bundled for one probe point."""
    probe = np.asarray(probe, dtype=float)
    return FieldSample(
        t=t,
        probe=probe,
        E=field_direct(p, positions, weights, probe, exclude),
        gradE=field_gradient(p, positions, weights, probe, exclude),
        hessE=field_hessian_fd(p, positions, weights, probe, h=fd_step,
                               exclude=exclude),
    )


def core_spacing(sigma_x: float, sigma_v: float, n: int, t: float) -> float:
    """Mean interparticle spacing at the cloud core at time t.

    The cloud's spatial scale is s(t) = hypot(sigma_x, t sigma_v); with n
    particles the peak number density gives spacing sqrt(2 pi) s(t) n^(-1/3).
    """
    s = float(np.hypot(sigma_x, t * sigma_v))
    return np.sqrt(2.0 * np.pi) * s / n ** (1.0 / 3.0)


def diagnostic_params(p: RieszParams, sigma_x: float, sigma_v: float, n: int,
                      t: float, factor: float = 2.0) -> RieszParams:
    """Kernel with softening widened to ``factor`` core spacings at time t,
    used by field diagnostics to keep self-field spikes below the mean field."""
    return p.with_eps(max(p.eps, factor * core_spacing(sigma_x, sigma_v, n, t)))


def build_probes(positions: np.ndarray, rng: np.random.Generator,
                 grid_per_axis: int = 7, max_particle_probes: int = 1000):
    """Probe set covering the ensemble support: thinned particle positions
    (self-excluded) plus a grid over the current bounding box.

    Returns (probes, exclude) ready for the field evaluators.
    """
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    take = min(max_particle_probes, n)
    pick = rng.choice(n, take, replace=False) if take < n else np.arange(n)
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    axes = [np.linspace(lo[d], hi[d], grid_per_axis) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    probes = np.concatenate([positions[pick], grid])
    exclude = np.concatenate([pick, np.full(len(grid), -1)]).astype(np.int64)
    return np.ascontiguousarray(probes), exclude


def sup_field_norms(p: RieszParams, positions, weights, probes, exclude=None,
                    fd_step: float | None = None) -> tuple[float, float, float]:
    """Probe-set maxima of |E|, the operator norm of grad E, and the
    max-entry norm of the FD field Hessian."""
    probes = np.ascontiguousarray(probes, dtype=float)
    if len(probes) == 0:
        return 0.0, 0.0, 0.0
    E = field_direct(p, positions, weights, probes, exclude)
    GE = field_gradient(p, positions, weights, probes, exclude)
    h = fd_step if fd_step is not None else 1e-3
    HE = field_hessian_fd(p, positions, weights, probes, h=h, exclude=exclude)
    sup_e = float(np.linalg.norm(E, axis=1).max())
    sup_ge = float(np.linalg.norm(GE, ord=2, axis=(1, 2)).max())
    sup_he = float(np.abs(HE).max())
    return sup_e, sup_ge, sup_he
