"""Finite-state Markov kernel algebra.

Kernels are dense row-stochastic matrices. The support graph of a kernel has
an edge ``i -> j`` iff ``P[i, j] > 0`` (no threshold). Closed communicating
classes of that graph are the ergodic classes; every other state is
transient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    ClassTooLarge,
    InvalidKernel,
    NotClosed,
    NotIrreducible,
    WeightMismatch,
)

ROW_TOL = 1e-12
PARSE_TOL = 1e-9
MAX_DENSE_CLASS = 64


class Kernel:
    """Immutable row-stochastic matrix on states ``0..S-1``.

    Parameters
    ----------
    matrix : array_like, shape (S, S)
        Transition probabilities. Rows must sum to one within ``1e-12``.
    """

    __slots__ = ("_p",)

    def __init__(self, matrix):
        p = np.array(matrix, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
            raise InvalidKernel(f"kernel must be a non-empty square matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvalidKernel("kernel has non-finite entries")
        if np.any(p < 0):
            raise InvalidKernel("kernel has negative entries")
        err = np.abs(p.sum(axis=1) - 1.0).max()
        if err > ROW_TOL:
            raise InvalidKernel(f"row sums deviate from 1 by {err:.3g}")
        p.setflags(write=False)
        self._p = p

    @classmethod
    def normalized(cls, matrix) -> "Kernel":
        """Build a kernel after dividing every row by its sum."""
        p = np.array(matrix, dtype=float)
        if p.ndim != 2:
            raise InvalidKernel("kernel must be two-dimensional")
        sums = p.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise InvalidKernel("cannot normalize a row with zero mass")
        return cls(p / sums)

    @property
    def matrix(self) -> np.ndarray:
        return self._p

    @property
    def size(self) -> int:
        return self._p.shape[0]

    def restrict(self, states: Sequence[int]) -> np.ndarray:
        idx = np.asarray(sorted(states), dtype=int)
        return self._p[np.ix_(idx, idx)]

    def permuted(self, perm: Sequence[int]) -> "Kernel":
        """Relabel states so that new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm, dtype=int)
        return Kernel(self._p[np.ix_(perm, perm)])

    def __array__(self, dtype=None, copy=None):
        return self._p if dtype is None else self._p.astype(dtype)

    def __eq__(self, other):
        return isinstance(other, Kernel) and np.array_equal(self._p, other._p)

    def __hash__(self):
        return hash(self._p.tobytes())

    def __repr__(self):
        return f"Kernel(S={self.size})"

    # plain-text matrix format ------------------------------------------------

    def to_text(self) -> str:
        lines = [str(self.size)]
        for row in self._p:
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Kernel":
        """Parse ``S`` followed by ``S`` rows of ``S`` numbers.

        Rows further than ``1e-9`` from summing to one are rejected; accepted
        rows are renormalized exactly.
        """
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise InvalidKernel("empty kernel document")
        try:
            size = int(lines[0].strip())
        except ValueError as exc:
            raise InvalidKernel(f"first line must be the state count, got {lines[0]!r}") from exc
        if size < 1 or len(lines) != size + 1:
            raise InvalidKernel(f"expected {size} rows after the header, got {len(lines) - 1}")
        rows = []
        for i, ln in enumerate(lines[1:]):
            vals = [float(tok) for tok in ln.split()]
            if len(vals) != size:
                raise InvalidKernel(f"row {i} has {len(vals)} entries, expected {size}")
            rows.append(vals)
        p = np.array(rows)
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidKernel("kernel entries must be finite and non-negative")
        off = np.abs(p.sum(axis=1) - 1.0)
        if off.max() > PARSE_TOL:
            bad = int(off.argmax())
            raise InvalidKernel(f"row {bad} sums to {p[bad].sum()!r}, off by more than {PARSE_TOL}")
        return cls.normalized(p)


def as_kernel(obj) -> Kernel:
    return obj if isinstance(obj, Kernel) else Kernel(obj)


def check_distribution(weights, size: int | None = None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or (size is not None and w.shape[0] != size):
        raise ValueError(f"distribution must be a vector of length {size}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
        raise ValueError("distribution must be non-negative and sum to 1")
    return w


@dataclass(frozen=True)
class Decomposition:
    """Doeblin decomposition of a finite kernel.

    Attributes
    ----------
    classes : tuple of tuple of int
        Closed communicating classes ordered by their smallest state.
    transient : tuple of int
    extremals : tuple of ndarray
        Stationary distribution of each class, zero off the class.
    gaps : tuple of float
        Spectral gap ``1 - |lambda_2|`` of each restricted class kernel
        (``nan`` for classes too large for dense eigen-analysis).
    """

    size: int
    classes: tuple
    transient: tuple
    extremals: tuple
    gaps: tuple

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_of(self, state: int) -> int:
        """Index of the closed class containing ``state`` or ``-1``."""
        for i, c in enumerate(self.classes):
            if state in c:
                return i
        return -1

    def same_structure(self, other: "Decomposition") -> bool:
        return self.classes == other.classes and self.transient == other.transient


def _support(p: np.ndarray) -> np.ndarray:
    return p > 0


def _check_class(kernel: Kernel, states) -> np.ndarray:
    idx = np.asarray(sorted(set(int(s) for s in states)), dtype=int)
    if idx.size == 0:
        raise ValueError("class must be non-empty")
    if idx.min() < 0 or idx.max() >= kernel.size:
        raise IndexError("class contains states outside the state space")
    p = kernel.matrix
    outside = np.ones(kernel.size, dtype=bool)
    outside[idx] = False
    if np.any(p[np.ix_(idx, np.flatnonzero(outside))] > 0):
        raise NotClosed(f"class {idx.tolist()} leaks mass outside itself")
    n_comp, _ = connected_components(_support(p[np.ix_(idx, idx)]), directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducible(f"class {idx.tolist()} splits into {n_comp} communicating classes")
    return idx


def _solve_stationary(q: np.ndarray) -> np.ndarray:
    # (I - Q^T) pi = 0 with a normalization row; works for periodic classes too.
    n = q.shape[0]
    a = np.vstack([np.eye(n) - q.T, np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_distribution(kernel, states: Iterable[int]) -> np.ndarray:
    """Stationary law of ``kernel`` on a closed irreducible class.

    Raises
    ------
    NotClosed, NotIrreducible
    """
    kernel = as_kernel(kernel)
    idx = _check_class(kernel, states)
    out = np.zeros(kernel.size)
    out[idx] = _solve_stationary(kernel.matrix[np.ix_(idx, idx)])
    return out


def _slem(q: np.ndarray) -> float:
    if q.shape[0] == 1:
        return 0.0
    ev = np.linalg.eigvals(q)
    drop = int(np.argmin(np.abs(ev - 1.0)))
    rest = np.delete(ev, drop)
    return float(np.abs(rest).max())


def spectral_gap(kernel, states: Iterable[int]) -> float:
    """``1 - |lambda_2|`` for the kernel restricted to a closed class.

    ``|lambda_2|`` is the largest eigenvalue modulus after removing one copy
    of the eigenvalue 1, so periodic classes have gap 0.
    """
    kernel = as_kernel(kernel)
    idx = _check_class(kernel, states)
    if idx.size > MAX_DENSE_CLASS:
        raise ClassTooLarge(f"class of size {idx.size} exceeds {MAX_DENSE_CLASS}")
    gap = 1.0 - _slem(kernel.matrix[np.ix_(idx, idx)])
    return float(min(max(gap, 0.0), 1.0))


def communicating_classes(kernel) -> list[tuple[int, ...]]:
    kernel = as_kernel(kernel)
    _, labels = connected_components(_support(kernel.matrix), directed=True, connection="strong")
    groups: dict[int, list[int]] = {}
    for s, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(s)
    return sorted((tuple(g) for g in groups.values()), key=lambda g: g[0])


def doeblin_decompose(kernel) -> Decomposition:
    """Split the state space into closed classes and transient states."""
    kernel = as_kernel(kernel)
    supp = _support(kernel.matrix)
    closed, transient = [], []
    for comp in communicating_classes(kernel):
        mask = np.zeros(kernel.size, dtype=bool)
        mask[list(comp)] = True
        if supp[np.ix_(mask, ~mask)].any():
            transient.extend(comp)
        else:
            closed.append(comp)
    extremals, gaps = [], []
    for comp in closed:
        idx = np.asarray(comp)
        q = kernel.matrix[np.ix_(idx, idx)]
        pi = np.zeros(kernel.size)
        pi[idx] = _solve_stationary(q)
        pi.setflags(write=False)
        extremals.append(pi)
        gaps.append(1.0 - _slem(q) if idx.size <= MAX_DENSE_CLASS else float("nan"))
    return Decomposition(
        size=kernel.size,
        classes=tuple(closed),
        transient=tuple(sorted(transient)),
        extremals=tuple(extremals),
        gaps=tuple(float(min(max(g, 0.0), 1.0)) if np.isfinite(g) else g for g in gaps),
    )


def invariant_mixture(decomp: Decomposition, weights) -> np.ndarray:
    """Convex combination of the extremal stationary laws."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] != decomp.n_classes:
        raise WeightMismatch(f"expected {decomp.n_classes} weights, got {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
        raise ValueError("mixture weights must be a probability vector")
    return np.sum([wi * e for wi, e in zip(w, decomp.extremals)], axis=0)


def absorption_probabilities(kernel, decomp: Decomposition | None = None) -> np.ndarray:
    """Matrix ``A[s, c]`` = probability that the chain from ``s`` ends in class ``c``."""
    kernel = as_kernel(kernel)
    decomp = decomp or doeblin_decompose(kernel)
    p = kernel.matrix
    out = np.zeros((kernel.size, decomp.n_classes))
    for c, comp in enumerate(decomp.classes):
        out[list(comp), c] = 1.0
    tr = np.asarray(decomp.transient, dtype=int)
    if tr.size:
        q = p[np.ix_(tr, tr)]
        r = np.stack([p[np.ix_(tr, np.asarray(comp))].sum(axis=1) for comp in decomp.classes], axis=1)
        out[tr] = np.linalg.solve(np.eye(tr.size) - q, r)
    return out


def limiting_distribution(kernel, initial) -> np.ndarray:
    """Cesaro limit of ``initial @ P^n``: absorption-weighted extremals."""
    kernel = as_kernel(kernel)
    mu0 = check_distribution(initial, kernel.size)
    decomp = doeblin_decompose(kernel)
    weights = mu0 @ absorption_probabilities(kernel, decomp)
    weights = np.clip(weights, 0.0, None)
    return invariant_mixture(decomp, weights / weights.sum())


def stationary_residual(kernel, pi) -> float:
    p = as_kernel(kernel).matrix
    pi = np.asarray(pi, dtype=float)
    return float(np.abs(pi @ p - pi).sum())
