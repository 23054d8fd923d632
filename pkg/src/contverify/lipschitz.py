"""Global Lipschitz upper bounds, domain-enlargement distance, and the inflation test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .box import Box, box_contains, vector_norm
from .network import Network

NORMS = ("L1", "L2", "LINF")
L2_INFLATION = 1.01


def _norm_name(norm: str) -> str:
    name = norm.upper()
    if name not in NORMS:
        raise ValueError(f"unknown norm {norm!r}; expected one of L1, L2, Linf")
    return name


@dataclass(frozen=True)
class LipschitzBound:
    value: float
    norm: str = "LINF"
    method: str = "norm_product"

    def __post_init__(self):
        object.__setattr__(self, "norm", _norm_name(self.norm))
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ValueError(f"Lipschitz bound must be finite and non-negative, got {self.value}")

    def to_dict(self) -> dict:
        return {"value": float(self.value), "norm": self.norm, "method": self.method}

    @classmethod
    def from_dict(cls, doc: dict) -> "LipschitzBound":
        return cls(float(doc["value"]), doc["norm"], doc.get("method", "norm_product"))


def operator_norm(w: np.ndarray, norm: str) -> float:
    name = _norm_name(norm)
    if name == "L1":
        return float(np.abs(w).sum(axis=0).max(initial=0.0))
    if name == "LINF":
        return float(np.abs(w).sum(axis=1).max(initial=0.0))
    # largest singular value, padded to absorb the solver's rounding
    return float(np.linalg.norm(w, 2)) * L2_INFLATION


def lipschitz_upper_bound(net: Network, norm: str = "LINF") -> LipschitzBound:
    """Product of per-layer operator norms; ReLU contributes a factor of one."""
    value = 1.0
    for layer in net.layers:
        value *= operator_norm(layer.weights, norm)
    return LipschitzBound(value, norm)


def compute_kappa(base: Box, enlarged: Box, norm: str = "LINF") -> float:
    """Largest distance from a point of ``enlarged`` to the nearest point of ``base``."""
    if not box_contains(enlarged, base):
        raise ValueError("base box is not contained in the enlarged box")
    excess = np.maximum(np.maximum(base.lo - enlarged.lo, enlarged.hi - base.hi), 0.0)
    return float(vector_norm(excess, _norm_name(norm)))


def inflate(s_n: Box, ell: float, kappa: float) -> Box:
    return s_n.widen(ell * kappa)


def check_lipschitz_reuse(s_n: Box, ell: float, kappa: float, d_out: Box) -> bool:
    """Whether ``s_n`` grown by ``ell * kappa`` on every side stays inside ``d_out``.

    The grown box contains every point within distance ``ell * kappa`` of ``s_n`` in any
    of the supported norms, so the test is sound whichever norm produced ``ell``.
    """
    if ell < 0 or kappa < 0:
        raise ValueError("ell and kappa must be non-negative")
    if s_n.dim != d_out.dim:
        raise ValueError(f"dimension mismatch: {s_n.dim} vs {d_out.dim}")
    return box_contains(d_out, inflate(s_n, ell, kappa))
