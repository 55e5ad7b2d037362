"""Driving processes for the SA recursion.

Three kinds of noise are provided, all simulated for a batch of independent
replicas at once:

* :class:`MarkovNoise` -- ``Z(n+1) ~ p_{x(n)}(. | Z(n))`` for a
  :class:`ParamKernel`.
* :class:`OrderKNoise` -- after a warm-up of ``k`` steps the first ``k+1``
  states are summarized into a label that selects the kernel forever.
* :class:`StoppedSumNoise` -- an exponentially discounted sum of marks taken
  at stopping times, bucketed into a label that selects the kernel.

Processes are single-owner mutable objects. ``advance`` consumes two uniforms
per replica and step (column 0 picks the next state, column 1 drives
randomized stopping rules) so the stream layout is identical across variants.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteInput, StateOutOfRange, UnresolvableLabel
from .markov_core import (
    Kernel,
    _solve_stationary,
    as_kernel,
    check_distribution,
    doeblin_decompose,
    limiting_distribution,
)

UNIFORMS_PER_STEP = 2
ENUMERATION_CAP = 200_000


def logistic(t):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=float)))


def _as_batch(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"iterate has dimension {x.shape[1]}, expected {dim}")
    return x


def _row_l1_norm(m: np.ndarray) -> float:
    return float(np.abs(m).sum(axis=1).max())


# ---------------------------------------------------------------------------
# x-parametrized kernels


class ParamKernel:
    """Kernel family ``x -> K(x)`` with ``K(0) == base``.

    Subclasses implement :meth:`rows`. ``lipschitz_bound`` refers to the
    max-row-L1 norm on kernels and the Euclidean norm on ``x``; it is
    documented, not enforced.
    """

    family = "abstract"

    def __init__(self, base, dim: int = 1):
        self.base = as_kernel(base)
        self.dim = int(dim)

    @property
    def num_states(self) -> int:
        return self.base.size

    @property
    def is_constant(self) -> bool:
        return False

    @property
    def lipschitz_bound(self) -> float:
        raise NotImplementedError

    def rows(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Rows ``K(x[b])[z[b], :]`` for a batch; shape ``(B, S)``."""
        raise NotImplementedError

    def kernel_at(self, x) -> Kernel:
        x = np.asarray(x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("kernel_at requires a finite iterate")
        if x.shape[0] != self.dim:
            raise ValueError(f"iterate has dimension {x.shape[0]}, expected {self.dim}")
        s = self.num_states
        rows = self.rows(np.repeat(x[None, :], s, axis=0), np.arange(s))
        return Kernel(rows)


def kernel_at(pk: ParamKernel, x) -> Kernel:
    return pk.kernel_at(x)


class ConstantKernel(ParamKernel):
    family = "constant"

    @property
    def is_constant(self):
        return True

    @property
    def lipschitz_bound(self):
        return 0.0

    def rows(self, x, z):
        return self.base.matrix[np.asarray(z, dtype=int)]

    def kernel_at(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("kernel_at requires a finite iterate")
        return self.base


class LogisticTilt(ParamKernel):
    """Exponential tilt of each base row by ``tilt[j] * (w . x)``.

    ``K(x)[i, j]`` is proportional to ``base[i, j] * exp(tilt[j] * w.x)``. On
    two states with a uniform base and ``tilt = (0, 1)`` every row is
    ``(1 - s, s)`` with ``s = logistic(w.x)``. Zero entries of the base stay
    zero, so the class structure does not move with ``x``.
    """

    family = "logistic-tilt"

    def __init__(self, base, weight, tilt=None):
        weight = np.atleast_1d(np.asarray(weight, dtype=float))
        super().__init__(base, dim=weight.shape[0])
        self.weight = weight
        s = self.num_states
        if tilt is None:
            tilt = np.arange(s) == s - 1
        self.tilt = np.asarray(tilt, dtype=float)
        if self.tilt.shape != (s,):
            raise ValueError(f"tilt must have length {s}")

    @property
    def lipschitz_bound(self):
        return float(np.linalg.norm(self.weight) * (self.tilt.max() - self.tilt.min()))

    def rows(self, x, z):
        t = _as_batch(x) @ self.weight
        logits = self.tilt[None, :] * t[:, None]
        logits -= logits.max(axis=1, keepdims=True)
        r = self.base.matrix[np.asarray(z, dtype=int)] * np.exp(logits)
        return r / r.sum(axis=1, keepdims=True)


class SoftmaxMix(ParamKernel):
    """``K(x) = (1 - s) A + s B`` with ``s = logistic(w.x + bias)``.

    The base is ``K(0)``.
    """

    family = "softmax-mix"

    def __init__(self, first, second, weight, bias: float = 0.0):
        self.first = as_kernel(first)
        self.second = as_kernel(second)
        if self.first.size != self.second.size:
            raise ValueError("mixed kernels must share the state space")
        self.weight = np.atleast_1d(np.asarray(weight, dtype=float))
        self.bias = float(bias)
        s0 = float(logistic(self.bias))
        base = (1.0 - s0) * self.first.matrix + s0 * self.second.matrix
        super().__init__(Kernel.normalized(base), dim=self.weight.shape[0])

    @property
    def lipschitz_bound(self):
        diff = self.second.matrix - self.first.matrix
        return float(np.linalg.norm(self.weight) / 4.0 * _row_l1_norm(diff))

    def rows(self, x, z):
        s = logistic(_as_batch(x) @ self.weight + self.bias)[:, None]
        z = np.asarray(z, dtype=int)
        return (1.0 - s) * self.first.matrix[z] + s * self.second.matrix[z]


MODULATIONS = {
    "constant": ConstantKernel,
    "logistic-tilt": LogisticTilt,
    "softmax-mix": SoftmaxMix,
}


def stationary_at(pk: ParamKernel, x, class_index: int | None = None) -> np.ndarray:
    """Stationary law of ``K(x)``; ``class_index`` picks an extremal when there are several."""
    k = pk.kernel_at(x)
    if class_index in (None, 0) and (k.matrix > 0).all():
        # strictly positive: one class, skip the graph search
        return _solve_stationary(k.matrix)
    decomp = doeblin_decompose(k)
    if class_index is None:
        if decomp.n_classes != 1:
            raise ValueError(f"K(x) has {decomp.n_classes} ergodic classes; pass class_index")
        class_index = 0
    return np.array(decomp.extremals[class_index])


# ---------------------------------------------------------------------------
# summaries, stopping rules, buckets


class StateMap:
    """Label ``mapping[Z(position)]``."""

    def __init__(self, mapping: Sequence[int], position: int = 0):
        self.mapping = np.asarray(mapping, dtype=int)
        self.position = int(position)
        self.n_labels = int(self.mapping.max()) + 1

    def __call__(self, head: np.ndarray) -> np.ndarray:
        return self.mapping[head[:, self.position]]


class SumMod:
    """Label ``(Z(0) + ... + Z(k)) mod n_labels``."""

    def __init__(self, n_labels: int):
        self.n_labels = int(n_labels)

    def __call__(self, head: np.ndarray) -> np.ndarray:
        return head.sum(axis=1) % self.n_labels


SUMMARIES = {"state-map": StateMap, "sum-mod": SumMod}


class DeterministicStops:
    """``tau_m = m * period``."""

    def __init__(self, period: int = 1):
        if int(period) < 1:
            raise ValueError("period must be >= 1")
        self.period = int(period)

    def is_stop(self, n: int, u: np.ndarray) -> np.ndarray:
        return np.full(u.shape[0], n % self.period == 0)


class GeometricStops:
    """``tau_0 = 0``, then each later step is a stopping time with probability ``q``."""

    def __init__(self, q: float):
        if not 0.0 < q <= 1.0:
            raise ValueError("q must lie in (0, 1]")
        self.q = float(q)

    def is_stop(self, n: int, u: np.ndarray) -> np.ndarray:
        if n == 0:
            return np.ones(u.shape[0], dtype=bool)
        return u < self.q


STOP_RULES = {"deterministic": DeterministicStops, "geometric": GeometricStops}


class Buckets:
    """Half-open interval bucketing of a vector, flattened to one label."""

    def __init__(self, edges: Sequence[Sequence[float]]):
        self.edges = [np.asarray(e, dtype=float) for e in edges]
        for e in self.edges:
            if np.any(np.diff(e) <= 0):
                raise ValueError("bucket edges must be strictly increasing")
        self.shape = tuple(len(e) + 1 for e in self.edges)
        self.n_labels = int(np.prod(self.shape))

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        idx = [np.searchsorted(e, xi[:, i], side="right") for i, e in enumerate(self.edges)]
        return np.ravel_multi_index(idx, self.shape)


# ---------------------------------------------------------------------------
# processes


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cum rows end in exactly 1.0 and u < 1, so states with zero mass are skipped.
    return (cum <= u[:, None]).sum(axis=1)


def _cumulative(rows: np.ndarray) -> np.ndarray:
    c = np.cumsum(rows, axis=-1)
    return c / c[..., -1:]


class NoiseProcess:
    """Batched driving process; see the concrete subclasses."""

    variant = "abstract"

    dim = 1

    def __init__(self, num_states: int, history_len: int = 2):
        self.num_states = int(num_states)
        self.history_len = max(int(history_len), 2)
        self.n = 0
        self.state = None
        self.history = None

    def start(self, states) -> "NoiseProcess":
        z = np.atleast_1d(np.asarray(states, dtype=np.int64)).copy()
        if z.size and (z.min() < 0 or z.max() >= self.num_states):
            raise StateOutOfRange(f"start states must lie in 0..{self.num_states - 1}")
        self.n = 0
        self.state = z
        self.history = np.zeros((z.shape[0], self.history_len), dtype=np.int64)
        self.history[:, 0] = z
        self._on_start()
        return self

    @property
    def batch(self) -> int:
        return 0 if self.state is None else self.state.shape[0]

    def _on_start(self):
        pass

    def _next_rows_cum(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def advance(self, x, u) -> np.ndarray:
        """Draw ``Z(n+1)`` for every replica given ``x(n)`` and uniforms ``u``."""
        cum = self._next_rows_cum(x, u)
        z = _pick(cum, u[:, 0])
        self.n += 1
        self.state = z
        self.history[:, self.n % self.history_len] = z
        self._on_advance(z)
        return z

    def _on_advance(self, z):
        pass

    def sample_next(self, x, rng) -> np.ndarray:
        """Convenience wrapper: draw the uniforms from ``rng`` and advance."""
        x = _as_batch(x)
        if x.shape[0] == 1 and self.batch > 1:
            x = np.repeat(x, self.batch, axis=0)
        if isinstance(rng, np.random.Generator):
            u = rng.random((self.batch, UNIFORMS_PER_STEP))
        else:
            u = rng.next()
        return self.advance(x, u)

    def kernels_for_labels(self):
        raise NotImplementedError


class MarkovNoise(NoiseProcess):
    variant = "markov"

    def __init__(self, kernel: ParamKernel):
        if not isinstance(kernel, ParamKernel):
            kernel = ConstantKernel(kernel)
        super().__init__(kernel.num_states)
        self.kernel = kernel
        self.dim = kernel.dim
        self._cum = _cumulative(kernel.base.matrix) if kernel.is_constant else None

    def _next_rows_cum(self, x, u):
        if self._cum is not None:
            return self._cum[self.state]
        return _cumulative(self.kernel.rows(x, self.state))


class _LabelledNoise(NoiseProcess):
    """Shared machinery for processes whose kernel is picked by a label."""

    def __init__(self, kernels: Sequence[ParamKernel], history_len: int):
        kernels = [k if isinstance(k, ParamKernel) else ConstantKernel(k) for k in kernels]
        sizes = {k.num_states for k in kernels}
        if len(sizes) != 1:
            raise ValueError("all conditional kernels must share the state space")
        super().__init__(sizes.pop(), history_len)
        self.kernels = kernels
        self.n_labels = len(kernels)
        self.dim = kernels[0].dim
        if all(k.is_constant for k in kernels):
            self._cum = np.stack([_cumulative(k.base.matrix) for k in kernels])
        else:
            self._cum = None

    def _labelled_cum(self, x, labels):
        if self._cum is not None:
            return self._cum[labels, self.state]
        rows = np.empty((self.batch, self.num_states))
        for lab in np.unique(labels):
            mask = labels == lab
            rows[mask] = self.kernels[lab].rows(x[mask], self.state[mask])
        return _cumulative(rows)


class OrderKNoise(_LabelledNoise):
    """Label ``g(Z(0), ..., Z(k))`` frozen from step ``k`` on.

    Steps ``0..k-1`` are driven by ``warmup``.
    """

    variant = "order-k"

    def __init__(self, k: int, summary: Callable, kernels, warmup=None):
        if int(k) < 0:
            raise ValueError("k must be >= 0")
        super().__init__(kernels, history_len=int(k) + 1)
        self.k = int(k)
        self.summary = summary
        if warmup is None:
            warmup = self.kernels[0]
        self.warmup = warmup if isinstance(warmup, ParamKernel) else ConstantKernel(warmup)
        self._warm_cum = _cumulative(self.warmup.base.matrix) if self.warmup.is_constant else None
        self.label = None

    def _on_start(self):
        self.label = np.full(self.batch, -1, dtype=np.int64)
        if self.k == 0:
            self._freeze()

    def _freeze(self):
        head = self.history[:, : self.k + 1]
        lab = np.asarray(self.summary(head), dtype=np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= self.n_labels):
            raise UnresolvableLabel(f"summary produced a label outside 0..{self.n_labels - 1}")
        self.label = lab

    def _next_rows_cum(self, x, u):
        if self.n < self.k:
            if self._warm_cum is not None:
                return self._warm_cum[self.state]
            return _cumulative(self.warmup.rows(x, self.state))
        return self._labelled_cum(x, self.label)

    def _on_advance(self, z):
        if self.n == self.k:
            self._freeze()

    def producible_labels(self) -> set[int]:
        """All labels the summary can emit, by enumerating ``S**(k+1)`` heads."""
        s, k = self.num_states, self.k
        if s ** (k + 1) > ENUMERATION_CAP:
            raise UnresolvableLabel("history space too large to enumerate")
        heads = np.array(list(itertools.product(range(s), repeat=k + 1)), dtype=np.int64)
        return set(int(v) for v in np.unique(self.summary(heads)))


class StoppedSumNoise(_LabelledNoise):
    """Kernel picked by bucketing ``xi(n) = sum_m alpha**tau_m * zeta_m``.

    ``marks[s]`` is the mark recorded when a stopping time finds the chain in
    state ``s``.
    """

    variant = "stopped-sum"

    def __init__(self, alpha: float, marks, stop_rule, buckets: Buckets, kernels):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        super().__init__(kernels, history_len=2)
        self.alpha = float(alpha)
        marks = np.asarray(marks, dtype=float)
        self.marks = marks.reshape(marks.shape[0], -1)
        if self.marks.shape[0] != self.num_states:
            raise ValueError("need one mark per state")
        self.stop_rule = stop_rule
        self.buckets = buckets
        if buckets.n_labels != self.n_labels:
            raise ValueError(f"buckets produce {buckets.n_labels} labels but {self.n_labels} kernels given")
        self.mark_bound = float(np.linalg.norm(self.marks, axis=1).max())
        self.xi = None
        self.stops = None
        self.xi_norm_max = None

    @property
    def mark_dim(self) -> int:
        return self.marks.shape[1]

    def _on_start(self):
        self.xi = np.zeros((self.batch, self.mark_dim))
        self.stops = np.zeros(self.batch, dtype=np.int64)
        self.xi_norm_max = np.zeros(self.batch)

    def _accumulate(self, u_stop):
        hit = self.stop_rule.is_stop(self.n, u_stop)
        if hit.any():
            self.xi[hit] += (self.alpha ** self.n) * self.marks[self.state[hit]]
            self.stops[hit] += 1
            self.xi_norm_max = np.maximum(self.xi_norm_max, np.linalg.norm(self.xi, axis=1))

    @property
    def label(self) -> np.ndarray:
        return self.buckets(self.xi)

    def _next_rows_cum(self, x, u):
        self._accumulate(u[:, 1])
        return self._labelled_cum(x, self.label)


# ---------------------------------------------------------------------------
# exact mimic


def label_mixture(process: OrderKNoise, x, label_weights=None, start_law=None):
    """Label weights and per-label limiting laws of an order-k process at frozen ``x``.

    Either ``label_weights`` (one per label; each weighted label kernel must
    have a single ergodic class) or ``start_law`` (law of ``Z(0)``, from which
    the joint law of label and ``Z(k)`` is enumerated) must be given.

    Returns
    -------
    weights : ndarray, shape (L,)
    laws : list of ndarray or None
        Limiting law of ``Z(n)`` given each label (``None`` for zero weight).
    kernels : list of Kernel
    """
    kernels = [k.kernel_at(x) for k in process.kernels]
    s, n_lab = process.num_states, process.n_labels
    if (label_weights is None) == (start_law is None):
        raise ValueError("pass exactly one of label_weights, start_law")
    laws: list = [None] * n_lab
    if start_law is not None:
        mu0 = check_distribution(start_law, s)
        w = process.warmup.kernel_at(x).matrix
        k = process.k
        if s ** (k + 1) > ENUMERATION_CAP:
            raise UnresolvableLabel("history space too large to enumerate")
        heads = np.array(list(itertools.product(range(s), repeat=k + 1)), dtype=np.int64)
        prob = mu0[heads[:, 0]].copy()
        for i in range(k):
            prob *= w[heads[:, i], heads[:, i + 1]]
        labels = np.asarray(process.summary(heads), dtype=int)
        if labels.min() < 0 or labels.max() >= n_lab:
            raise UnresolvableLabel("summary produced a label outside the kernel list")
        weights = np.bincount(labels, weights=prob, minlength=n_lab)
        for lab in range(n_lab):
            if weights[lab] <= 0:
                continue
            mask = labels == lab
            law_k = np.bincount(heads[mask, k], weights=prob[mask], minlength=s) / weights[lab]
            laws[lab] = limiting_distribution(kernels[lab], law_k)
        return weights / weights.sum(), laws, kernels

    weights = check_distribution(label_weights, n_lab)
    producible = process.producible_labels()
    for lab in range(n_lab):
        if weights[lab] <= 0:
            continue
        if lab not in producible:
            raise UnresolvableLabel(f"label {lab} has weight but the summary never produces it")
        decomp = doeblin_decompose(kernels[lab])
        if decomp.n_classes != 1:
            raise UnresolvableLabel(
                f"kernel of label {lab} has {decomp.n_classes} ergodic classes; pass start_law instead"
            )
        laws[lab] = np.array(decomp.extremals[0])
    return weights, laws, kernels


def exact_mimic_kernel(process: NoiseProcess, x, label_weights=None, start_law=None) -> Kernel:
    """Pair-marginal kernel ``P(Z(n+1) | Z(n))`` of the stationary mixture.

    Row ``z`` is the posterior-weighted average of the label kernels' rows at
    ``z``. States carrying no stationary mass get a self-loop.
    """
    if isinstance(process, MarkovNoise):
        return process.kernel.kernel_at(x)
    if not isinstance(process, OrderKNoise):
        raise TypeError("exact mimic is available for Markov and order-k processes only")
    weights, laws, kernels = label_mixture(process, x, label_weights, start_law)
    s = process.num_states
    num = np.zeros((s, s))
    den = np.zeros(s)
    for w, law, ker in zip(weights, laws, kernels):
        if law is None or w == 0:
            continue
        mass = w * law
        num += mass[:, None] * ker.matrix
        den += mass
    out = np.eye(s)
    seen = den > 0
    out[seen] = num[seen] / den[seen, None]
    return Kernel.normalized(out)


def mixture_stationary(process: OrderKNoise, x, label_weights=None, start_law=None) -> np.ndarray:
    weights, laws, _ = label_mixture(process, x, label_weights, start_law)
    return np.sum([w * law for w, law in zip(weights, laws) if law is not None], axis=0)


def simulate(process: NoiseProcess, n_steps: int, seed: int, replicas: Sequence[int], start_states,
             x=None, keep_path: bool = True):
    """Run the noise alone at a frozen iterate.

    Returns the ``(B, n_steps + 1)`` state array when ``keep_path`` is true,
    else the final states.
    """
    from .streams import replica_streams

    replicas = list(replicas)
    x = np.zeros((len(replicas), getattr(process, "dim", 1))) if x is None else _as_batch(x)
    if x.shape[0] == 1 and len(replicas) > 1:
        x = np.repeat(x, len(replicas), axis=0)
    process.start(start_states)
    u = replica_streams(seed, replicas, "noise", shape=(UNIFORMS_PER_STEP,))
    path = np.empty((len(replicas), n_steps + 1), dtype=np.int64) if keep_path else None
    if keep_path:
        path[:, 0] = process.state
    for i in range(n_steps):
        z = process.advance(x, u.next())
        if keep_path:
            path[:, i + 1] = z
    return path if keep_path else process.state
