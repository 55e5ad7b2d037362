"""Gradient drifts and finite-difference gradient estimators.

Under x-dependent noise, the stationary average of the gradient
``sum_z grad F(x, z) pi_x(z)`` differs from the gradient of the averaged
objective ``G(x) = sum_z F(x, z) pi_x(z)`` by ``sum_z F(x, z) d pi_x(z)/dx``.
Finite-difference estimators of ``G`` (Kiefer-Wolfowitz, SPSA) target the
latter.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .noise_models import ParamKernel, stationary_at
from .sa_engine import Drift

OUTER_DELTA = 1e-4


@dataclass(frozen=True)
class Objective:
    """Loss ``F(x, z)`` with analytic gradient in ``x``.

    Both callables are batched: ``x`` is ``(B, d)``, ``z`` is ``(B,)``; ``F``
    returns ``(B,)`` and ``grad`` returns ``(B, d)``. Growth is at most
    quadratic on the projection ball used by the engine.
    """

    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int = 1
    name: str = "custom"

    def value(self, x, z) -> float:
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        return float(self.F(x, np.atleast_1d(np.asarray(z, dtype=np.int64)))[0])

    def gradient(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        return self.grad(x, np.atleast_1d(np.asarray(z, dtype=np.int64)))[0]


def _state_values(values, dim):
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = np.repeat(v[:, None], dim, axis=1) if dim > 1 else v[:, None]
    return v


def quadratic(dim: int = 1) -> Objective:
    """``F = |x|^2 / 2``."""
    return Objective(
        F=lambda x, z: 0.5 * (x * x).sum(axis=1),
        grad=lambda x, z: x.copy(),
        dim=dim, name="quadratic",
    )


def shifted_quadratic(values, dim: int = 1) -> Objective:
    """``F = |x - v(z)|^2 / 2``."""
    v = _state_values(values, dim)
    return Objective(
        F=lambda x, z: 0.5 * ((x - v[z]) ** 2).sum(axis=1),
        grad=lambda x, z: x - v[z],
        dim=v.shape[1], name="shifted-quadratic",
    )


def linear_state(values, dim: int = 1) -> Objective:
    """``F = v(z) . x``."""
    v = _state_values(values, dim)
    return Objective(
        F=lambda x, z: (x * v[z]).sum(axis=1),
        grad=lambda x, z: np.broadcast_to(v[z], x.shape).copy(),
        dim=v.shape[1], name="linear-state",
    )


def double_well(values=None, num_states: int = 1, dim: int = 1) -> Objective:
    """``F = sum_i (x_i^4 / 4 - x_i^2 / 2 - v(z)_i x_i)``; quartic testbed."""
    v = _state_values(np.zeros(num_states) if values is None else values, dim)
    return Objective(
        F=lambda x, z: (x ** 4 / 4 - x ** 2 / 2 - v[z] * x).sum(axis=1),
        grad=lambda x, z: x ** 3 - x - v[z],
        dim=v.shape[1], name="double-well",
    )


OBJECTIVES = {
    "quadratic": quadratic,
    "shifted-quadratic": shifted_quadratic,
    "linear-state": linear_state,
    "double-well": double_well,
}


def sgd_drift(obj: Objective) -> Drift:
    """``h(x, z) = -grad_x F(x, z)``."""
    return Drift(lambda x, z: -obj.grad(x, z), dim=obj.dim, name=f"sgd:{obj.name}")


def _all_states(obj: Objective, x: np.ndarray, size: int):
    xs = np.repeat(np.asarray(x, dtype=float).reshape(1, obj.dim), size, axis=0)
    return xs, np.arange(size, dtype=np.int64)


def averaged_objective(obj: Objective, pk: ParamKernel, class_index: int | None = None) -> Callable:
    """Exact ``G(x) = sum_z F(x, z) pi_x(z)``."""

    def G(x) -> float:
        pi = stationary_at(pk, x, class_index)
        xs, zs = _all_states(obj, x, pk.num_states)
        return float(pi @ obj.F(xs, zs))

    return G


def averaged_gradient(obj: Objective, pk: ParamKernel, x, class_index: int | None = None) -> np.ndarray:
    """``sum_z grad F(x, z) pi_x(z)`` -- the field plain averaged SGD follows."""
    pi = stationary_at(pk, x, class_index)
    xs, zs = _all_states(obj, x, pk.num_states)
    return pi @ obj.grad(xs, zs)


@dataclass(frozen=True)
class GapReport:
    x: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    gap: np.ndarray
    chain_rule: np.ndarray


def averaged_gradient_gap(obj: Objective, pk: ParamKernel, x, delta: float = OUTER_DELTA,
                          class_index: int | None = None) -> GapReport:
    """Compare the averaged gradient with the gradient of the averaged objective.

    ``rhs`` is a central difference of the exact ``G``; ``chain_rule`` is
    ``sum_z F(x, z) d pi_x(z)/dx`` with ``d pi/dx`` also by central differences,
    and should agree with ``gap = rhs - lhs``.
    """
    x = np.asarray(x, dtype=float).reshape(obj.dim)
    G = averaged_objective(obj, pk, class_index)
    lhs = averaged_gradient(obj, pk, x, class_index)
    rhs = np.empty(obj.dim)
    chain = np.empty(obj.dim)
    xs, zs = _all_states(obj, x, pk.num_states)
    fx = obj.F(xs, zs)
    for i in range(obj.dim):
        e = np.zeros(obj.dim)
        e[i] = delta
        rhs[i] = (G(x + e) - G(x - e)) / (2 * delta)
        dpi = (stationary_at(pk, x + e, class_index) - stationary_at(pk, x - e, class_index)) / (2 * delta)
        chain[i] = fx @ dpi
    return GapReport(x=x, lhs=lhs, rhs=rhs, gap=rhs - lhs, chain_rule=chain)


def gap_reports_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "lhs", "rhs", "gap"])
        for r in reports:
            fmt = lambda a: ";".join(repr(float(v)) for v in np.atleast_1d(a))  # noqa: E731
            w.writerow([fmt(r.x), fmt(r.lhs), fmt(r.rhs), fmt(r.gap)])


# ---------------------------------------------------------------------------
# samplers of the averaged objective


def one_sample_sampler(obj: Objective, pk: ParamKernel, class_index: int | None = None) -> Callable:
    """Unbiased ``F(x, Z)`` with ``Z ~ pi_x``."""

    def sample(x, rng: np.random.Generator) -> float:
        pi = stationary_at(pk, x, class_index)
        z = int(np.searchsorted(np.cumsum(pi), rng.random() * pi.sum(), side="right"))
        return obj.value(x, min(z, pi.size - 1))

    return sample


def long_run_sampler(obj: Objective, pk: ParamKernel, steps: int = 1000, burn_in: int = 100) -> Callable:
    """Time average of ``F(x, Z(n))`` along the chain ``K(x)`` after a burn-in."""

    def sample(x, rng: np.random.Generator) -> float:
        k = pk.kernel_at(x).matrix
        cum = np.cumsum(k, axis=1)
        cum /= cum[:, -1:]
        u = rng.random(burn_in + steps)
        z = 0
        xs = np.asarray(x, dtype=float).reshape(1, obj.dim)
        visits = np.zeros(pk.num_states)
        for i in range(burn_in + steps):
            z = int((cum[z] <= u[i]).sum())
            if i >= burn_in:
                visits[z] += 1
        _, zs = _all_states(obj, x, pk.num_states)
        return float(visits @ obj.F(np.repeat(xs, pk.num_states, axis=0), zs) / steps)

    return sample


def exact_sampler(G: Callable) -> Callable:
    """Wrap a deterministic ``G(x)`` in the sampler signature."""
    return lambda x, rng=None: float(G(x))


# ---------------------------------------------------------------------------
# finite-difference estimators


def kw_gradient(G_sampler, x, delta: float, reps: int = 1, rng=None) -> np.ndarray:
    """Kiefer-Wolfowitz: coordinate-wise central differences averaged over ``reps``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    est = np.empty((reps, d))
    for r in range(reps):
        for i in range(d):
            e = np.zeros(d)
            e[i] = 1.0
            est[r, i] = (G_sampler(x + delta * e, rng) - G_sampler(x - delta * e, rng)) / (2 * delta)
    return est.mean(axis=0)


def spsa_gradient(G_sampler, x, delta: float, reps: int = 1, rng=None, return_samples: bool = False):
    """SPSA with Rademacher perturbations: two evaluations per rep for any dimension."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if rng is None:
        raise ValueError("SPSA needs an rng for its perturbations")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    est = np.empty((reps, d))
    for r in range(reps):
        sign = 2.0 * rng.integers(0, 2, size=d) - 1.0
        diff = (G_sampler(x + delta * sign, rng) - G_sampler(x - delta * sign, rng)) / (2 * delta)
        est[r] = diff / sign
    if return_samples:
        return est.mean(axis=0), est
    return est.mean(axis=0)


def sa_with_estimator(estimator: Callable, x0, steps: int, c: float = 1.0, gamma: float = 1.0,
                      offset: int = 1, radius: float = 1e3) -> np.ndarray:
    """Projected descent ``x <- x - a(n) * estimator(x, n)``; returns the final iterate."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    for n in range(steps):
        a = c / (n + offset) ** gamma
        x = x - a * np.asarray(estimator(x, n), dtype=float)
        nr = np.linalg.norm(x)
        if nr > radius:
            x *= radius / nr
    return x
