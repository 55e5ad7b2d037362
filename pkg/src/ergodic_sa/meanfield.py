"""Mean-field ODE for the SA recursion.

The averaged field is ``F(y) = sum_z h(y, z) mu_y(z)`` where ``mu_y`` is either
the stationary law of the x-dependent kernel at ``y``, or a fixed measure (an
extremal of one ergodic class, or a mixture of extremals).
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .errors import ClassStructureChanged, OutOfDomain
from .markov_core import Decomposition, doeblin_decompose
from .noise_models import ParamKernel
from .sa_engine import Drift, SaRun, interpolate

CACHE_LATTICE = 1e-6
CACHE_LIMIT = 200_000
MAX_CANDIDATES = 64


class AveragedField:
    """Averaged drift with a fixed or x-dependent averaging measure.

    Parameters
    ----------
    drift : Drift
    measure : array_like, optional
        Fixed averaging measure (extremal or mixture).
    kernel : ParamKernel, optional
        Average against the stationary law of ``kernel.kernel_at(y)``.
    class_index : int, optional
        Which ergodic class of ``kernel_at(y)`` to use when it has several.
    reference_x : array_like, optional
        Where the reference class structure is taken (default the origin).
    """

    def __init__(self, drift: Drift, measure=None, kernel: ParamKernel | None = None,
                 class_index: int | None = None, reference_x=None):
        if (measure is None) == (kernel is None):
            raise ValueError("give exactly one of measure, kernel")
        self.drift = drift
        self.dim = drift.dim
        self.kernel = kernel
        self.class_index = class_index
        self._cache: dict = {}
        if measure is not None:
            self.measure = np.asarray(measure, dtype=float)
            self.source = "fixed"
            self.reference = None
        else:
            self.measure = None
            self.source = "stationary-at-x"
            ref = np.zeros(drift.dim) if reference_x is None else np.asarray(reference_x, dtype=float)
            self.reference = doeblin_decompose(kernel.kernel_at(ref))
            if class_index is None and self.reference.n_classes != 1:
                raise ValueError("kernel has several ergodic classes; pass class_index")

    def measure_at(self, y) -> np.ndarray:
        if self.measure is not None:
            return self.measure
        key = tuple(np.round(np.asarray(y, dtype=float) / CACHE_LATTICE).astype(np.int64).tolist())
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        yq = np.asarray(key, dtype=float) * CACHE_LATTICE
        decomp = doeblin_decompose(self.kernel.kernel_at(yq))
        if not decomp.same_structure(self.reference):
            raise ClassStructureChanged(
                f"ergodic classes at y={yq.tolist()} are {decomp.classes}, reference is {self.reference.classes}"
            )
        mu = np.array(decomp.extremals[self.class_index or 0])
        if len(self._cache) >= CACHE_LIMIT:
            self._cache.clear()
        self._cache[key] = mu
        return mu

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        """Batched field: ``y`` of shape ``(B, d)`` -> ``(B, d)``."""
        y = np.asarray(y, dtype=float).reshape(-1, self.dim)
        if self.measure is not None:
            support = np.flatnonzero(self.measure > 0)
            out = np.zeros_like(y)
            for z in support:
                out += self.measure[z] * self.drift.h(y, np.full(y.shape[0], z, dtype=np.int64))
            return out
        out = np.empty_like(y)
        for i, yi in enumerate(y):
            mu = self.measure_at(yi)
            support = np.flatnonzero(mu > 0)
            vals = self.drift.h(np.repeat(yi[None, :], support.size, axis=0), support)
            out[i] = mu[support] @ vals
        return out

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim <= 1:
            return self.evaluate(y.reshape(1, self.dim))[0]
        return self.evaluate(y)


def averaged_drift(field: AveragedField, y) -> np.ndarray:
    return field(y)


def extremal_fields(drift: Drift, decomp: Decomposition) -> list[AveragedField]:
    """One fixed-measure field per ergodic class."""
    return [AveragedField(drift, measure=e) for e in decomp.extremals]


@dataclass
class OdePath:
    t: np.ndarray
    y: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = self.y.shape[-1]
            w.writerow(["t"] + [f"y_{i}" for i in range(d)])
            for t, y in zip(self.t.tolist(), self.y.reshape(len(self.t), -1).tolist()):
                w.writerow([repr(t)] + [repr(v) for v in y])


def integrate_ode(field: AveragedField, y0, T: float, dt: float) -> OdePath:
    """Classical RK4 on ``[0, T]``; the last step is shortened to land on ``T``.

    ``y0`` may be a single point ``(d,)`` or a batch ``(B, d)`` integrated
    jointly; ``y`` then has shape ``(steps + 1, B, d)``.
    """
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    y0 = np.asarray(y0, dtype=float)
    single = y0.ndim <= 1
    y = y0.reshape(-1, field.dim).copy()
    n_steps = int(np.ceil(T / dt - 1e-9))
    times = np.minimum(np.arange(n_steps + 1) * dt, T)
    times[-1] = T
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    f = field.evaluate
    for i in range(n_steps):
        h = times[i + 1] - times[i]
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
    if single:
        out = out[:, 0, :]
    return OdePath(times, out)


def tracking_error(run: SaRun, field: AveragedField, window: float, anchors: Sequence[float],
                   dt: float = 0.01) -> np.ndarray:
    """Windowed sup-distance between the interpolated iterates and ODE solutions.

    For each anchor ``T`` the ODE is started at ``xbar(T)`` and compared with
    ``xbar`` on ``[T, T + window]`` at the ODE grid and at every recorded time
    in the window.
    """
    path = interpolate(run)
    lo, hi = path.domain
    anchors = np.asarray(anchors, dtype=float)
    if anchors.size == 0:
        return np.zeros(0)
    if anchors.min() < lo or anchors.max() + window > hi + 1e-12 * max(1.0, hi):
        raise OutOfDomain(f"anchors must lie in [{lo}, {hi - window}]")
    ode = integrate_ode(field, path(anchors), window, dt)
    errs = np.empty(anchors.size)
    for i, a in enumerate(anchors):
        grid_t = a + ode.t
        y_grid = ode.y[:, i, :]
        nodes = path.t[(path.t > a) & (path.t < a + window)]
        when = np.concatenate([grid_t, nodes])
        y_nodes = np.stack([np.interp(nodes, grid_t, y_grid[:, j]) for j in range(field.dim)], axis=-1)
        y_all = np.concatenate([y_grid, y_nodes.reshape(-1, field.dim)])
        xbar = path(np.minimum(when, hi))
        errs[i] = np.sqrt(((xbar - y_all) ** 2).sum(axis=-1)).max()
    return errs


def _refine(f, start, box_lo, box_hi, span):
    sol = optimize.root(f, start, method="hybr", tol=1e-14)
    y = np.asarray(sol.x, dtype=float)
    if not np.all(np.isfinite(y)):
        return None
    for _ in range(3):
        # Newton polish with a finite-difference Jacobian.
        fy = f(y)
        if np.linalg.norm(fy) < 1e-13:
            break
        eps = 1e-7 * np.maximum(1.0, np.abs(y))
        jac = np.column_stack([(f(y + e) - f(y - e)) / (2 * e[k]) for k, e in enumerate(np.diag(eps))])
        try:
            y = y - np.linalg.solve(jac, fy)
        except np.linalg.LinAlgError:
            break
    if np.linalg.norm(f(y)) >= 1e-8:
        return None
    if np.any(y < box_lo - span) or np.any(y > box_hi + span):
        return None
    return y


def find_equilibria(field: AveragedField, box, grid: int = 200, starts=None) -> list[np.ndarray]:
    """Zeros of the averaged field inside ``box``.

    Candidates are local minima of ``|F|`` on a regular grid (``d <= 2``) or
    the given ``starts``; each is refined until ``|F| < 1e-8`` and duplicates
    within ``1e-4`` are merged.
    """
    box = np.asarray(box, dtype=float).reshape(field.dim, 2)
    lo, hi = box[:, 0], box[:, 1]
    span = (hi - lo) / max(grid - 1, 1)

    def f(y):
        return field(np.asarray(y, dtype=float))

    cands = []
    if starts is not None:
        cands = [np.asarray(s, dtype=float).reshape(field.dim) for s in starts]
    elif field.dim <= 2:
        axes = [np.linspace(lo[i], hi[i], grid) for i in range(field.dim)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = field.evaluate(mesh.reshape(-1, field.dim)).reshape(mesh.shape)
        norm = np.sqrt((vals ** 2).sum(axis=-1))
        padded = np.pad(norm, 1, constant_values=np.inf)
        is_min = np.ones(norm.shape, dtype=bool)
        for off in itertools.product((-1, 0, 1), repeat=field.dim):
            if any(off):
                sl = tuple(slice(1 + o, 1 + o + n) for o, n in zip(off, norm.shape))
                is_min &= norm <= padded[sl]
        order = np.argsort(norm[is_min], kind="stable")[:MAX_CANDIDATES]
        cands.extend(mesh[is_min][order])
        if field.dim == 1:
            # sign changes catch zeros the grid straddles
            v = vals[:, 0]
            for i in np.flatnonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0):
                r = optimize.brentq(lambda s: f([s])[0], axes[0][i], axes[0][i + 1], xtol=1e-15)
                cands.append(np.array([r]))
    else:
        raise ValueError("grid search supports d <= 2; pass starts for higher dimensions")

    found: list[np.ndarray] = []
    for c in cands:
        y = _refine(f, c, lo, hi, span)
        if y is None:
            continue
        if all(np.linalg.norm(y - g) > 1e-4 for g in found):
            found.append(y)
    found.sort(key=lambda v: tuple(v.tolist()))
    return found


def tracking_errors_csv(path, anchors, errors) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor", "sup_error"])
        for a, e in zip(np.asarray(anchors).tolist(), np.asarray(errors).tolist()):
            w.writerow([repr(a), repr(e)])
