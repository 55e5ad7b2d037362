"""Empirical Markov mimic: pair-marginal transition counting.

The mimic of a process is the Markov chain with kernel
``P(Z(n+1) = j | Z(n) = i, x(n) in bin)``. Counts are kept per axis-aligned
bin of iterate space; the default is a single bin covering everything.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import StateOutOfRange
from .markov_core import Decomposition, Kernel, doeblin_decompose


class XBins:
    """Uniform grid of ``per_axis`` bins per coordinate over ``[lo, hi]``.

    Points outside the box are clipped into the boundary bins. With no box the
    grid is the single bin ``"all"``.
    """

    def __init__(self, lo=None, hi=None, per_axis: int = 1):
        if lo is None:
            self.lo = self.hi = None
            self.per_axis = 1
            self.n_bins = 1
            return
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if np.any(self.hi <= self.lo):
            raise ValueError("bin box must have hi > lo")
        self.per_axis = int(per_axis)
        self.n_bins = self.per_axis ** self.lo.shape[0]

    def index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.lo is None:
            return np.zeros(x.shape[0], dtype=np.int64)
        x = x.reshape(x.shape[0], -1)
        cell = np.floor((x - self.lo) / (self.hi - self.lo) * self.per_axis).astype(np.int64)
        cell = np.clip(cell, 0, self.per_axis - 1)
        return np.ravel_multi_index(tuple(cell.T), (self.per_axis,) * self.lo.shape[0])


class TransitionCounts:
    """Integer transition counts ``counts[bin, from, to]``."""

    def __init__(self, num_states: int, bins: XBins | None = None):
        self.num_states = int(num_states)
        self.bins = bins or XBins()
        self.counts = np.zeros((self.bins.n_bins, self.num_states, self.num_states), dtype=np.int64)

    def _add(self, src, dst, bin_idx):
        s = self.num_states
        for arr in (src, dst):
            if arr.size and (arr.min() < 0 or arr.max() >= s):
                raise StateOutOfRange(f"states must lie in 0..{s - 1}")
        flat = (bin_idx * s + src) * s + dst
        self.counts += np.bincount(flat, minlength=self.counts.size).reshape(self.counts.shape)

    def ingest_path(self, states, xs=None) -> "TransitionCounts":
        """Count the transitions of one path (or a ``(B, T)`` stack of paths)."""
        z = np.asarray(states, dtype=np.int64)
        if z.ndim == 1:
            z = z[None, :]
        if z.shape[1] < 2:
            return self
        src, dst = z[:, :-1].ravel(), z[:, 1:].ravel()
        if xs is None:
            bin_idx = np.zeros(src.shape[0], dtype=np.int64)
        else:
            xs = np.asarray(xs, dtype=float)
            xs = xs.reshape(z.shape[0], z.shape[1], -1)[:, :-1].reshape(src.shape[0], -1)
            bin_idx = self.bins.index(xs)
        self._add(src, dst, bin_idx)
        return self

    def merge(self, other: "TransitionCounts") -> "TransitionCounts":
        if other.counts.shape != self.counts.shape:
            raise ValueError("cannot merge counts with different shapes")
        out = TransitionCounts(self.num_states, self.bins)
        out.counts = self.counts + other.counts
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "from", "to", "count"])
            for b, i, j in zip(*np.nonzero(self.counts)):
                w.writerow([int(b), int(i), int(j), int(self.counts[b, i, j])])


def ingest(tc: TransitionCounts, run) -> TransitionCounts:
    """Add the transitions of a recorded run.

    Only pairs of consecutive records with ``n`` differing by one are true
    transitions, so runs should be recorded with stride 1 for full counts.
    """
    n = np.asarray(run.n)
    if n.shape[0] < 2:
        return tc
    z = np.asarray(run.z, dtype=np.int64)
    step = np.flatnonzero(np.diff(n) == 1)
    src, dst = z[step], z[step + 1]
    bin_idx = tc.bins.index(np.asarray(run.x)[step])
    tc._add(src, dst, bin_idx)
    return tc


@dataclass(frozen=True)
class MimicEstimate:
    """Estimated kernel with the mask of states that had outgoing data."""

    kernel: Kernel
    visited: np.ndarray
    empty: bool = False

    def decompose(self) -> Decomposition:
        return doeblin_decompose(self.kernel)

    def visited_classes(self) -> list[tuple[int, ...]]:
        """Closed classes that contain at least one visited state.

        Unvisited rows are self-loops and would otherwise show up as
        spurious singleton classes.
        """
        return [c for c in self.decompose().classes if self.visited[list(c)].any()]


def estimate_kernel(tc: TransitionCounts, bin: int = 0, smoothing: float = 0.0) -> MimicEstimate:
    """Row ``z`` = ``(counts[z] + smoothing) / (sum counts[z] + S * smoothing)``.

    Rows without data and without smoothing become self-loops.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    c = tc.counts[bin].astype(float)
    s = tc.num_states
    totals = c.sum(axis=1)
    visited = totals > 0
    rows = np.eye(s)
    if smoothing > 0:
        rows = (c + smoothing) / (totals[:, None] + s * smoothing)
    else:
        rows[visited] = c[visited] / totals[visited, None]
    empty = not visited.any() and smoothing == 0
    if empty:
        warnings.warn("estimate_kernel: bin has no transitions; returning all self-loops", RuntimeWarning)
    visited.setflags(write=False)
    return MimicEstimate(Kernel.normalized(rows), visited, empty)


def pair_law(kernel, stationary) -> np.ndarray:
    """Joint law of ``(Z(n), Z(n+1))`` for a chain started in ``stationary``."""
    p = np.asarray(kernel, dtype=float)
    return np.asarray(stationary, dtype=float)[:, None] * p


def mimic_fidelity(true_pair_law, estimated, stationary) -> float:
    """Total-variation distance between a pair law and ``stationary x estimated``."""
    j = np.asarray(true_pair_law, dtype=float)
    return 0.5 * float(np.abs(j - pair_law(estimated, stationary)).sum())


def row_tv(a, b) -> np.ndarray:
    """Per-row total-variation distances between two kernels."""
    return 0.5 * np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)).sum(axis=1)


def tail_class(states: Sequence[int], decomp: Decomposition, fraction: float = 0.1) -> int:
    """Closed class holding every state in the last ``fraction`` of a path, else ``-1``."""
    z = np.asarray(states, dtype=np.int64)
    tail = z[max(0, int(np.floor(len(z) * (1.0 - fraction)))):]
    if tail.size == 0:
        return -1
    found = {decomp.class_of(int(s)) for s in np.unique(tail)}
    if len(found) == 1:
        return found.pop()
    return -1
