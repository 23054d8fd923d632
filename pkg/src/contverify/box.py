"""Axis-aligned boxes (interval vectors)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"lo has {lo.shape[0]} entries, hi has {hi.shape[0]}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            i = int(np.argmax(lo > hi))
            raise ValueError(f"empty box: lo[{i}]={lo[i]} > hi[{i}]={hi[i]}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "Box":
        arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, lo), np.full(dim, hi))

    @classmethod
    def point(cls, x) -> "Box":
        x = np.asarray(x, dtype=np.float64)
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, inner: "Box", slack: float = 0.0) -> bool:
        return box_contains(self, inner, slack)

    def contains_point(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(self.lo - slack <= x) and np.all(x <= self.hi + slack))

    def hull(self, other: "Box") -> "Box":
        _same_dim(self, other)
        return Box(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other: "Box") -> "Box | None":
        _same_dim(self, other)
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)

    def widen(self, amount) -> "Box":
        amount = np.broadcast_to(np.asarray(amount, dtype=np.float64), self.lo.shape)
        if np.any(amount < 0):
            raise ValueError("widening amount must be non-negative")
        return Box(self.lo - amount, self.hi + amount)

    def split(self, dim: int) -> tuple["Box", "Box"]:
        mid = 0.5 * (self.lo[dim] + self.hi[dim])
        hi_left = self.hi.copy()
        hi_left[dim] = mid
        lo_right = self.lo.copy()
        lo_right[dim] = mid
        return Box(self.lo, hi_left), Box(lo_right, self.hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def to_list(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    @classmethod
    def from_list(cls, pairs) -> "Box":
        return cls.from_pairs(pairs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self) -> str:
        body = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self.lo, self.hi))
        return f"Box({body})"


def _same_dim(a: Box, b: Box) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def box_contains(outer: Box, inner: Box, slack: float = 0.0) -> bool:
    """True iff ``inner`` lies inside ``outer`` grown by ``slack`` on every side."""
    _same_dim(outer, inner)
    if slack < 0:
        raise ValueError("slack must be non-negative")
    return bool(np.all(outer.lo - slack <= inner.lo) and np.all(inner.hi <= outer.hi + slack))


def distance_to_box(points: np.ndarray, box: Box, norm: str) -> np.ndarray:
    """Closed-form distance from each row of ``points`` to the nearest point of ``box``."""
    pts = np.atleast_2d(points)
    excess = np.maximum(np.maximum(box.lo - pts, pts - box.hi), 0.0)
    return vector_norm(excess, norm, axis=1)


def vector_norm(v: np.ndarray, norm: str, axis=None) -> np.ndarray:
    norm = norm.upper()
    if norm == "L1":
        return np.sum(np.abs(v), axis=axis)
    if norm == "L2":
        return np.sqrt(np.sum(np.square(v), axis=axis))
    if norm == "LINF":
        return np.max(np.abs(v), axis=axis, initial=0.0)
    raise ValueError(f"unknown norm {norm!r}")
