"""Closed-form inverse power-law (Riesz) interaction kernel.

The pairwise potential is ``w(x) = lam * (|x|^2 + eps^2)^(-alpha/2)``: a
Plummer-softened version of ``lam |x|^-alpha``.  Everything downstream
(forces, velocity corrections, scattering diagnostics) is built from the
three functions here, so this module is the only place the interaction
law lives.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["RieszParams", "potential", "grad", "hessian"]


@dataclass(frozen=True)
class RieszParams:
    """Identity of the interaction kernel.

    alpha: power-law exponent.  Simulation runs require 0 < alpha < 1
        (long-range regime); the formulas themselves are valid for
        0 < alpha < 3.
    lam: coupling sign, +1 repulsive / -1 attractive.
    eps: Plummer softening length, >= 0.  eps = 0 is allowed only where
        callers guarantee nonzero separation.
    """

    alpha: float
    lam: float = 1.0
    eps: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 3.0:
            raise ValueError(f"alpha must be in (0, 3), got {self.alpha}")
        if self.lam not in (-1.0, 1.0, -1, 1):
            raise ValueError(f"lam must be +1 or -1, got {self.lam}")
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")

    @property
    def eps2(self) -> float:
        return self.eps * self.eps

    def with_eps(self, eps: float) -> "RieszParams":
        return replace(self, eps=eps)


def _r2(p: RieszParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1) + p.eps2
    if p.eps == 0.0 and np.any(r2 == 0.0):
        raise ValueError("kernel evaluated at zero separation with eps = 0")
    return r2


def potential(p: RieszParams, x: np.ndarray) -> np.ndarray:
    """lam * (|x|^2 + eps^2)^(-alpha/2); equals lam |x|^-alpha for eps = 0.

    Accepts a single displacement (3,) or a batch (..., 3).
    """
    return p.lam * _r2(p, x) ** (-0.5 * p.alpha)


def grad(p: RieszParams, x: np.ndarray) -> np.ndarray:
    """Gradient of the potential: -alpha lam x (|x|^2+eps^2)^(-(alpha+2)/2).

    Odd in x; for eps = 0 homogeneous of degree -(1+alpha).
    """
    x = np.asarray(x, dtype=float)
    s = _r2(p, x) ** (-0.5 * (p.alpha + 2.0))
    return -p.alpha * p.lam * x * s[..., None]


def hessian(p: RieszParams, x: np.ndarray) -> np.ndarray:
    """Exact second-derivative matrix of the potential, shape (..., 3, 3).

    Symmetric; for eps = 0 homogeneous of degree -(2+alpha).
    """
    x = np.asarray(x, dtype=float)
    r2 = _r2(p, x)
    s2 = r2 ** (-0.5 * (p.alpha + 2.0))
    s4 = (p.alpha + 2.0) * r2 ** (-0.5 * (p.alpha + 4.0))
    eye = np.eye(3)
    outer = x[..., :, None] * x[..., None, :]
    return -p.alpha * p.lam * (s2[..., None, None] * eye - s4[..., None, None] * outer)
