"""Gaussian initial phase-space data and its particle discretizations.

The initial distribution is a separable Gaussian

    f0(x, v) = eta * exp(-|x-cx|^2 / (2 sx^2) - |v-cv|^2 / (2 sv^2)),

the one analytic data family the package supports.  It gives closed-form
mass and derivatives for test oracles and keeps the smallness of the data
controlled by the single amplitude ``eta``.

Two discretizations into weighted particles are provided:

* ``discretize`` -- deterministic tensor-product quadrature (midpoint or
  Gauss-Legendre nodes).  Exact for mass/norm checks, but the velocity
  grid is coarse: all nodes of one velocity cell translate rigidly, and
  the self-field of such a co-moving cluster does not decay.  Long-time
  decay diagnostics are unusable with this ensemble (see README).
* ``sample_ensemble`` -- equal-weight random draws from f0.  Velocities
  are all distinct, so the cloud phase-mixes like the continuum; this is
  the default for simulation runs.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianData",
    "QuadratureSpec",
    "Ensemble",
    "NormBundle",
    "evaluate_f0",
    "grad_f0",
    "smallness_norms",
    "discretize",
    "sample_ensemble",
    "write_ensemble_csv",
    "read_ensemble_csv",
]

_FMT = "%.17g"


@dataclass(frozen=True)
class GaussianData:
    """Analytic small Gaussian initial data."""

    eta: float
    sigma_x: float = 1.0
    sigma_v: float = 1.0
    center_x: tuple = (0.0, 0.0, 0.0)
    center_v: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError("eta must be >= 0")
        if self.sigma_x <= 0.0 or self.sigma_v <= 0.0:
            raise ValueError("sigma_x and sigma_v must be > 0")

    @property
    def mass(self) -> float:
        """Analytic total integral of f0 over phase space."""
        return self.eta * (2.0 * np.pi) ** 3 * self.sigma_x ** 3 * self.sigma_v ** 3


@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor-quadrature parameters for the 6D phase-space grid.

    Radii are absolute truncation half-widths per axis; they must cover
    at least 5 sigma of the data so the truncated tail is < 1e-6 of the
    total mass.  ``weight_cutoff`` optionally prunes nodes whose weight
    falls below the given fraction of the largest weight.
    """

    radius_x: float
    radius_v: float
    n_per_axis: int
    rule: str = "midpoint"
    weight_cutoff: float = 0.0
    max_nodes: int = 2_000_000

    def __post_init__(self):
        if self.rule not in ("midpoint", "gauss"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.n_per_axis < 2:
            raise ValueError("n_per_axis must be >= 2")
        if self.radius_x <= 0 or self.radius_v <= 0:
            raise ValueError("radii must be > 0")

    def validate_for(self, data: GaussianData) -> None:
        if self.radius_x < 5.0 * data.sigma_x - 1e-12:
            raise ValueError("radius_x must be >= 5 sigma_x")
        if self.radius_v < 5.0 * data.sigma_v - 1e-12:
            raise ValueError("radius_v must be >= 5 sigma_v")

    def axis_nodes(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """1D nodes and weights on [-radius, radius]."""
        n = self.n_per_axis
        if self.rule == "midpoint":
            h = 2.0 * radius / n
            nodes = -radius + (np.arange(n) + 0.5) * h
            weights = np.full(n, h)
        else:
            nodes, weights = np.polynomial.legendre.leggauss(n)
            nodes = nodes * radius
            weights = weights * radius
        return nodes, weights


@dataclass(frozen=True)
class Ensemble:
    """Weighted particles (x_i, v_i, w_i) discretizing f0.

    Arrays are frozen after construction; all weights are >= 0 and their
    sum approximates the integral of f0.
    """

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        v = np.ascontiguousarray(self.v, dtype=float)
        w = np.ascontiguousarray(self.w, dtype=float)
        if x.shape != v.shape or x.ndim != 2 or x.shape[1] != 3 or w.shape != (x.shape[0],):
            raise ValueError("ensemble arrays must be (N,3), (N,3), (N,)")
        if np.any(w < 0.0):
            raise ValueError("ensemble weights must be >= 0")
        for a in (x, v, w):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def mass(self) -> float:
        return float(self.w.sum())


def evaluate_f0(d: GaussianData, x, v) -> np.ndarray:
    """f0 value at one point (x, v) or batches (..., 3)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    qx = np.sum((x - np.asarray(d.center_x)) ** 2, axis=-1) / (2.0 * d.sigma_x ** 2)
    qv = np.sum((v - np.asarray(d.center_v)) ** 2, axis=-1) / (2.0 * d.sigma_v ** 2)
    return d.eta * np.exp(-(qx + qv))


def grad_f0(d: GaussianData, x, v) -> tuple[np.ndarray, np.ndarray]:
    """Exact (grad_x f0, grad_v f0); vanishes at the center."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    f = evaluate_f0(d, x, v)
    gx = -(x - np.asarray(d.center_x)) / d.sigma_x ** 2 * f[..., None]
    gv = -(v - np.asarray(d.center_v)) / d.sigma_v ** 2 * f[..., None]
    return gx, gv


@dataclass(frozen=True)
class NormBundle:
    """Weighted mixed-norm estimates of f0.

    ``l1``/``linf`` are W^{1,1} / W^{1,inf} norms of <x> f0 over phase
    space; the ``mixed_*`` entries take L1 in one block of variables and
    sup in the other (first derivatives included throughout).  ``total``
    is max(l1, linf) + max of the two mixed entries, the quantity the
    smallness of the data is measured by.  ``f0_l1``/``f0_linf`` are the
    plain unweighted norms of f0 itself.
    """

    l1: float
    linf: float
    mixed_x1_vinf: float
    mixed_v1_xinf: float
    f0_l1: float
    f0_linf: float

    @property
    def total(self) -> float:
        return max(self.l1, self.linf) + max(self.mixed_x1_vinf, self.mixed_v1_xinf)

    def as_dict(self) -> dict:
        return {
            "l1": self.l1,
            "linf": self.linf,
            "mixed_x1_vinf": self.mixed_x1_vinf,
            "mixed_v1_xinf": self.mixed_v1_xinf,
            "f0_l1": self.f0_l1,
            "f0_linf": self.f0_linf,
            "total": self.total,
        }


def _block_values(g: np.ndarray, sigma: float, center: np.ndarray, weighted: bool):
    """Values and first partials of the block factor (optionally carrying
    the <x> weight) at the given 3D points."""
    rel = g - center
    base = np.exp(-np.sum(rel * rel, axis=1) / (2.0 * sigma ** 2))
    dbase = -rel / sigma ** 2 * base[:, None]
    if not weighted:
        return base, dbase, base
    jb = np.sqrt(1.0 + np.sum(g * g, axis=1))
    vals = jb * base
    dvals = (g / jb[:, None]) * base[:, None] + jb[:, None] * dbase
    return vals, dvals, base


def _norm_groups(d: GaussianData, q: QuadratureSpec, n_override: int | None = None):
    """f0 = eta G(x) H(v), so every mixed norm is a product of per-block
    reductions: L1 parts on the tensor-quadrature grid, sup parts on an
    odd centered grid (which contains the peak exactly)."""
    n = n_override or q.n_per_axis
    spec = QuadratureSpec(q.radius_x, q.radius_v, n, q.rule)
    blocks = []
    for radius, sigma, center, weighted in (
        (q.radius_x, d.sigma_x, np.asarray(d.center_x), True),
        (q.radius_v, d.sigma_v, np.asarray(d.center_v), False),
    ):
        nodes1, wts1 = spec.axis_nodes(radius)
        gq = np.stack(np.meshgrid(nodes1, nodes1, nodes1, indexing="ij"), -1).reshape(-1, 3)
        gq = gq + center
        wq = (wts1[:, None, None] * wts1[None, :, None] * wts1[None, None, :]).ravel()
        ax1 = np.linspace(-radius, radius, 2 * n + 1)
        gs = np.stack(np.meshgrid(ax1, ax1, ax1, indexing="ij"), -1).reshape(-1, 3)
        gs = gs + center
        vq, dvq, baseq = _block_values(gq, sigma, center, weighted)
        vs, dvs, bases = _block_values(gs, sigma, center, weighted)
        l1 = [float(np.sum(np.abs(vq) * wq))] + \
            [float(np.sum(np.abs(dvq[:, i]) * wq)) for i in range(3)]
        li = [float(np.max(np.abs(vs)))] + \
            [float(np.max(np.abs(dvs[:, i]))) for i in range(3)]
        blocks.append((l1, li, float(np.sum(baseq * wq)), float(np.max(bases))))
    (a_l1, a_li, gx_l1, gx_li), (b_l1, b_li, hv_l1, hv_li) = blocks
    eta = d.eta
    # W^{1,1} / W^{1,inf}: multi-indices of total order <= 1 over all six variables
    n_l1 = eta * (a_l1[0] * b_l1[0]
                  + sum(a_l1[1:]) * b_l1[0] + a_l1[0] * sum(b_l1[1:]))
    n_li = eta * (a_li[0] * b_li[0]
                  + sum(a_li[1:]) * b_li[0] + a_li[0] * sum(b_li[1:]))
    # mixed norms: orders <= 1 in each block independently
    n_x1_vinf = eta * sum(a_l1) * sum(b_li)
    n_v1_xinf = eta * sum(a_li) * sum(b_l1)
    return NormBundle(n_l1, n_li, n_x1_vinf, n_v1_xinf,
                      eta * gx_l1 * hv_l1, eta * gx_li * hv_li)


def smallness_norms(d: GaussianData, q: QuadratureSpec, check_resolution: bool = True) -> NormBundle:
    """Numerical estimates of the weighted mixed norms of f0.

    L1 parts use the tensor quadrature, sup parts take grid maxima.  If a
    2x refinement moves any entry by more than 5% a warning is issued.
    """
    q.validate_for(d)
    bundle = _norm_groups(d, q)
    if check_resolution and d.eta > 0.0:
        fine = _norm_groups(d, q, n_override=2 * q.n_per_axis)
        for key, val in bundle.as_dict().items():
            ref = fine.as_dict()[key]
            if ref > 0 and abs(val - ref) > 0.05 * ref:
                warnings.warn(
                    f"smallness_norms under-resolved: entry {key} moves "
                    f"{abs(val - ref) / ref:.1%} under 2x refinement",
                    stacklevel=2,
                )
                break
    return bundle


def discretize(d: GaussianData, q: QuadratureSpec) -> Ensemble:
    """Tensor-quadrature ensemble: nodes on the product grid, weights
    f0(x_i, v_j) times the quadrature weight."""
    q.validate_for(d)
    nx, wx1 = q.axis_nodes(q.radius_x)
    nv, wv1 = q.axis_nodes(q.radius_v)
    gx = np.stack(np.meshgrid(nx, nx, nx, indexing="ij"), -1).reshape(-1, 3) + np.asarray(d.center_x)
    gv = np.stack(np.meshgrid(nv, nv, nv, indexing="ij"), -1).reshape(-1, 3) + np.asarray(d.center_v)
    wqx = (wx1[:, None, None] * wx1[None, :, None] * wx1[None, None, :]).ravel()
    wqv = (wv1[:, None, None] * wv1[None, :, None] * wv1[None, None, :]).ravel()
    relx = gx - np.asarray(d.center_x)
    relv = gv - np.asarray(d.center_v)
    fx = np.exp(-np.sum(relx * relx, axis=1) / (2.0 * d.sigma_x ** 2))
    fv = np.exp(-np.sum(relv * relv, axis=1) / (2.0 * d.sigma_v ** 2))
    wmat = d.eta * np.outer(fx * wqx, fv * wqv)
    if q.weight_cutoff > 0.0 and wmat.size:
        keep = wmat > q.weight_cutoff * wmat.max()
    else:
        keep = wmat >= 0.0
    ii, jj = np.nonzero(keep)
    if len(ii) > q.max_nodes:
        raise ValueError(f"discretize would produce {len(ii)} nodes > max_nodes={q.max_nodes}")
    return Ensemble(x=gx[ii], v=gv[jj], w=wmat[ii, jj])


def sample_ensemble(d: GaussianData, n: int, rng: np.random.Generator) -> Ensemble:
    """Equal-weight random ensemble: n draws from f0 / mass, w_i = mass / n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = rng.normal(0.0, d.sigma_x, (n, 3)) + np.asarray(d.center_x)
    v = rng.normal(0.0, d.sigma_v, (n, 3)) + np.asarray(d.center_v)
    return Ensemble(x=x, v=v, w=np.full(n, d.mass / n))


def write_ensemble_csv(ens: Ensemble, path_or_buf) -> None:
    """Columns x1,x2,x3,v1,v2,v3,w; 17 significant digits; LF endings."""
    close = False
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        f = open(path_or_buf, "w", newline="\n")
        close = True
    else:
        f = path_or_buf
    try:
        f.write("x1,x2,x3,v1,v2,v3,w\n")
        for i in range(ens.count):
            row = np.concatenate([ens.x[i], ens.v[i], [ens.w[i]]])
            f.write(",".join(_FMT % val for val in row) + "\n")
    finally:
        if close:
            f.close()


def read_ensemble_csv(path_or_buf) -> Ensemble:
    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf) as f:
            text = f.read()
    else:
        text = path_or_buf.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("x1,"):
        raise ValueError("ensemble CSV must start with the x1,...,w header")
    data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    if data.shape[1] != 7:
        raise ValueError("ensemble CSV must have 7 columns")
    return Ensemble(x=data[:, 0:3], v=data[:, 3:6], w=data[:, 6])
