"""The stochastic approximation recursion.

``x(n+1) = Proj_R[x(n) + a(n) (h(x(n), Z(n)) + M(n+1))]`` where ``Z(n+1)`` is
drawn from the noise process using ``x(n)``. Replicas are simulated as one
vectorized batch; each replica's random numbers come from its own streams, so
a replica's trajectory is the same whether it runs alone or in a batch.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import NonFiniteDrift, OutOfDomain
from .noise_models import UNIFORMS_PER_STEP, NoiseProcess
from .streams import BLOCK, replica_streams

DEFAULT_RADIUS = 1e3
MAX_RECORDS = 10_000
TIME_RESOLUTION = 0.01


@dataclass(frozen=True)
class StepSchedule:
    """``a(n) = c / (n + offset)**gamma``.

    ``family="zero"`` is a test-only schedule with ``a(n) = 0``.
    """

    c: float = 1.0
    gamma: float = 1.0
    offset: int = 1
    family: str = "power"

    def values(self, start: int, count: int) -> np.ndarray:
        if self.family == "zero":
            return np.zeros(count)
        n = np.arange(start, start + count, dtype=float)
        return self.c / (n + self.offset) ** self.gamma

    def __call__(self, n: int) -> float:
        return float(self.values(n, 1)[0])


class ScheduleCheck(NamedTuple):
    accepted: bool
    reason: str

    def __bool__(self):
        return self.accepted


def validate_schedule(schedule: StepSchedule) -> ScheduleCheck:
    """Accept iff ``gamma`` lies in ``(1/2, 1]`` and ``c > 0``."""
    if schedule.family != "power":
        return ScheduleCheck(False, f"family {schedule.family!r} is not a Robbins-Monro schedule")
    if not schedule.c > 0:
        return ScheduleCheck(False, "c must be positive (a(n) > 0)")
    if schedule.offset < 1:
        return ScheduleCheck(False, "offset must be a positive integer")
    if schedule.gamma <= 0.5:
        return ScheduleCheck(False, "Σa(n)² < ∞ violated: Σa(n)² = ∞ for gamma <= 1/2")
    if schedule.gamma > 1.0:
        return ScheduleCheck(False, "Σa(n) = ∞ violated: Σa(n) < ∞ for gamma > 1")
    return ScheduleCheck(True, "ok")


@dataclass(frozen=True)
class Drift:
    """Vector field ``h(x, z)``.

    ``h`` is batched: ``x`` has shape ``(B, d)``, ``z`` shape ``(B,)``, and the
    result shape ``(B, d)``. Calling the drift directly also accepts a single
    point.
    """

    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int = 1
    name: str = "custom"
    lipschitz_bound: float = float("nan")

    def __call__(self, x, z):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            xb = x.reshape(1, self.dim)
            return self.h(xb, np.atleast_1d(np.asarray(z, dtype=np.int64)))[0]
        return self.h(x, np.asarray(z, dtype=np.int64))


def linear_target(values) -> Drift:
    """``h(x, z) = v(z) - x`` pulling the iterate toward the state value."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]

    def h(x, z):
        return v[z] - x

    return Drift(h, dim=v.shape[1], name="linear-target", lipschitz_bound=1.0)


@dataclass(frozen=True)
class MartingaleNoise:
    """Zero-mean noise with ``E|M|^2 = K (1 + |x|^2)``.

    ``gaussian-scaled`` uses standard normals, ``bounded-uniform`` uniforms on
    ``[-sqrt 3, sqrt 3]``, both scaled per coordinate by
    ``sqrt(K (1 + |x|^2) / d)``.
    """

    family: str = "none"
    K: float = 0.0

    FAMILIES = ("none", "gaussian-scaled", "bounded-uniform")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(f"unknown martingale family {self.family!r}")
        if self.K < 0:
            raise ValueError("K must be non-negative")

    @property
    def active(self) -> bool:
        return self.family != "none" and self.K > 0

    @property
    def draw_kind(self) -> str:
        return "normal" if self.family == "gaussian-scaled" else "uniform"

    def sigma(self, x: np.ndarray) -> np.ndarray:
        d = x.shape[-1]
        return np.sqrt(self.K * (1.0 + (x * x).sum(axis=-1)) / d)

    def from_draws(self, x: np.ndarray, draws: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros_like(x)
        if self.family == "bounded-uniform":
            draws = (2.0 * draws - 1.0) * math.sqrt(3.0)
        return self.sigma(x)[:, None] * draws

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.draw_kind == "normal":
            draws = rng.standard_normal(x.shape)
        else:
            draws = rng.random(x.shape)
        return self.from_draws(x, draws)


NO_NOISE = MartingaleNoise()


def _project(x: np.ndarray, radius: float) -> np.ndarray:
    nr2 = (x * x).sum(axis=1)
    out = nr2 > radius * radius
    if out.any():
        x = x.copy()
        x[out] *= (radius / np.sqrt(nr2[out]))[:, None]
    return x


def _step(x, z, a, drift: Drift, m, radius):
    hx = drift.h(x, z)
    if not np.isfinite(hx).all():
        raise NonFiniteDrift(f"drift {drift.name!r} returned a non-finite value")
    if m is not None:
        hx = hx + m
    return _project(x + a * hx, radius)


def sa_step(x, z, a: float, drift: Drift, mn: MartingaleNoise = NO_NOISE, rng=None,
            radius: float = DEFAULT_RADIUS) -> np.ndarray:
    """One projected SA update for a single iterate."""
    if not a >= 0:
        raise ValueError("step size must be non-negative")
    x = np.asarray(x, dtype=float).reshape(1, drift.dim)
    z = np.atleast_1d(np.asarray(z, dtype=np.int64))
    m = None
    if mn.active:
        if rng is None:
            raise ValueError("martingale noise needs an rng")
        m = mn.sample(x, rng)
    return _step(x, z, a, drift, m, radius)[0]


@dataclass
class SaRun:
    """Recorded trajectory of one replica.

    ``n``, ``t``, ``x`` and ``z`` are the downsampled records (strictly
    increasing ``n``); ``t`` is algorithmic time ``sum_{k<n} a(k)``.
    """

    seed: int
    replica: int
    schedule: StepSchedule
    horizon: int
    radius: float
    n: np.ndarray
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    final_x: np.ndarray
    final_z: int
    start_state: int
    noise_spec: object = None
    label: int | None = None
    stride: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "t"] + [f"x_{i}" for i in range(self.dim)] + ["z"])
        for n, t, x, z in zip(self.n.tolist(), self.t.tolist(), self.x.tolist(), self.z.tolist()):
            w.writerow([n, repr(t)] + [repr(v) for v in x] + [z])


def record_stride(horizon: int) -> int:
    return max(1, math.ceil(horizon / MAX_RECORDS))


def run_batch(drift: Drift, process: NoiseProcess, schedule: StepSchedule, horizon: int, seed: int,
              replicas: Sequence[int], start_states, x0=None, martingale: MartingaleNoise = NO_NOISE,
              radius: float = DEFAULT_RADIUS, record_every: int | None = None,
              time_resolution: float | None = TIME_RESOLUTION, noise_spec=None,
              observers: Sequence = ()) -> list[SaRun]:
    """Simulate several replicas of the recursion side by side.

    Records every ``record_every``-th step (default ``ceil(N / 10**4)``), any
    step where algorithmic time moved by ``time_resolution`` since the last
    record, and the final step. Each observer is called as ``obs(n, x)``
    with the batch of iterates after every step.
    """
    replicas = [int(r) for r in replicas]
    b, d = len(replicas), drift.dim
    if b == 0:
        return []
    horizon = int(horizon)
    x = np.zeros((b, d)) if x0 is None else np.array(np.broadcast_to(np.asarray(x0, dtype=float), (b, d)))
    starts = np.broadcast_to(np.asarray(start_states, dtype=np.int64), (b,)).copy()
    process.start(starts)
    z = process.state
    u_stream = replica_streams(seed, replicas, "noise", shape=(UNIFORMS_PER_STEP,))
    m_stream = None
    if martingale.active:
        m_stream = replica_streams(seed, replicas, "martingale", shape=(d,), kind=martingale.draw_kind)
    stride = record_every or record_stride(horizon)
    res = float("inf") if time_resolution is None else float(time_resolution)

    rec_n, rec_t, rec_x, rec_z = [0], [0.0], [x.copy()], [z.copy()]
    t = 0.0
    t_last = 0.0
    n = 0
    while n < horizon:
        count = min(BLOCK, horizon - n)
        steps = schedule.values(n, count).tolist()
        for a in steps:
            m = None
            if m_stream is not None:
                m = martingale.from_draws(x, m_stream.next())
            x_new = _step(x, z, a, drift, m, radius)
            z = process.advance(x, u_stream.next())
            x = x_new
            t += a
            n += 1
            for obs in observers:
                obs(n, x)
            if n % stride == 0 or t - t_last >= res or n == horizon:
                rec_n.append(n)
                rec_t.append(t)
                rec_x.append(x)
                rec_z.append(z)
                t_last = t

    ns = np.asarray(rec_n, dtype=np.int64)
    ts = np.asarray(rec_t)
    xs = np.stack(rec_x, axis=1)
    zs = np.stack(rec_z, axis=1)
    labels = getattr(process, "label", None)
    runs = []
    for i, r in enumerate(replicas):
        runs.append(SaRun(
            seed=int(seed), replica=r, schedule=schedule, horizon=horizon, radius=float(radius),
            n=ns, t=ts, x=xs[i], z=zs[i], final_x=x[i].copy(), final_z=int(z[i]),
            start_state=int(starts[i]), noise_spec=noise_spec,
            label=None if labels is None else int(np.asarray(labels)[i]), stride=stride,
        ))
    return runs


class LastExit:
    """Last step at which ``|x(n) - center| >= threshold``, per replica."""

    def __init__(self, center, threshold: float, batch: int):
        self.center = np.asarray(center, dtype=float).reshape(1, -1)
        self.threshold = float(threshold)
        self.last = np.zeros(batch, dtype=np.int64)

    def __call__(self, n, x):
        d = x - self.center
        far = (d * d).sum(axis=1) >= self.threshold ** 2
        if far.any():
            self.last[far] = n

    def settle_steps(self) -> np.ndarray:
        """Steps until the iterate enters the band for good."""
        return self.last + 1


def run_sa(drift: Drift, process: NoiseProcess, schedule: StepSchedule, horizon: int, seed: int,
           replica: int = 0, start_state: int = 0, **kwargs) -> SaRun:
    """Single-replica form of :func:`run_batch`."""
    return run_batch(drift, process, schedule, horizon, seed, [replica], [start_state], **kwargs)[0]


class InterpolatedPath:
    """Piecewise-linear ``xbar(t)`` through the recorded points."""

    def __init__(self, t: np.ndarray, x: np.ndarray):
        t = np.asarray(t, dtype=float)
        if t.shape[0] < 2:
            raise ValueError("need at least two samples to interpolate")
        if np.any(np.diff(t) < 0):
            raise ValueError("sample times must be non-decreasing")
        self.t = t
        self.x = np.asarray(x, dtype=float).reshape(t.shape[0], -1)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def __call__(self, when) -> np.ndarray:
        q = np.asarray(when, dtype=float)
        lo, hi = self.domain
        slack = 1e-12 * max(1.0, abs(hi))
        if np.any(q < lo - slack) or np.any(q > hi + slack):
            raise OutOfDomain(f"query outside [{lo}, {hi}]")
        flat = np.atleast_1d(q)
        out = np.stack([np.interp(flat, self.t, self.x[:, i]) for i in range(self.x.shape[1])], axis=-1)
        return out.reshape(q.shape + (self.x.shape[1],))


def interpolate(run: SaRun) -> InterpolatedPath:
    return InterpolatedPath(run.t, run.x)
