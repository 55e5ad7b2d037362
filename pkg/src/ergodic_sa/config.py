"""Experiment config documents (JSON) and the objects they describe.

A document looks like::

    {
      "scenario": "class-memory",
      "noise": {"variant": "order-k", "k": 1, ...},
      "drift": {"family": "linear-target", "values": [0, 1, 0, 1]},
      "schedule": {"c": 1, "gamma": 1, "offset": 1},
      "horizon": 1000000,
      "replicas": 40,
      "seed": 2024,
      "analyses": {"class-memory": {...}, "equilibria": {...}}
    }

See ``docs/config.md`` for every key. Validation collects all problems and
raises one :class:`SchemaError` (or :class:`UnknownFamily` /
:class:`InvalidSchedule`) listing ``(path, reason)`` pairs.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradient_schemes as gs
from .errors import InvalidSchedule, SchemaError, UnknownFamily
from .markov_core import Kernel
from .noise_models import (
    MODULATIONS,
    STOP_RULES,
    SUMMARIES,
    Buckets,
    ConstantKernel,
    LogisticTilt,
    MarkovNoise,
    OrderKNoise,
    SoftmaxMix,
    StoppedSumNoise,
)
from .sa_engine import DEFAULT_RADIUS, Drift, MartingaleNoise, StepSchedule, linear_target, validate_schedule

OUTPUT_ENV = "ERGODIC_SA_OUT"
NOISE_VARIANTS = ("markov", "order-k", "stopped-sum")
DRIFT_FAMILIES = ("linear-target", "sgd")
ANALYSES = ("decompose", "mimic-estimate", "ode-track", "equilibria", "class-memory",
            "spectral-mixing", "gradient-gap")


class _Errors:
    def __init__(self):
        self.items: list[tuple[str, str, str]] = []

    def add(self, path, reason, kind="schema"):
        self.items.append((path, reason, kind))

    def raise_if_any(self):
        if not self.items:
            return
        pairs = [(p, r) for p, r, _ in self.items]
        kinds = {k for _, _, k in self.items}
        if "family" in kinds:
            raise UnknownFamily(pairs)
        if kinds == {"schedule"}:
            raise InvalidSchedule(pairs)
        raise SchemaError(pairs)


def _join(path, key) -> str:
    return key if path == "$" else f"{path}.{key}"


def _get(obj, key, path, errs, kind=None, required=True, default=None):
    if not isinstance(obj, dict):
        errs.add(path, "expected an object")
        return default
    if key not in obj:
        if required:
            errs.add(_join(path, key), "missing required key")
        return default
    val = obj[key]
    if kind is not None and not _is(val, kind):
        errs.add(_join(path, key), f"expected {kind}")
        return default
    return val


def _is(val, kind) -> bool:
    if kind == "int":
        return isinstance(val, int) and not isinstance(val, bool)
    if kind == "number":
        return isinstance(val, (int, float)) and not isinstance(val, bool) and np.isfinite(val)
    if kind == "str":
        return isinstance(val, str)
    if kind == "list":
        return isinstance(val, list)
    if kind == "object":
        return isinstance(val, dict)
    if kind == "bool":
        return isinstance(val, bool)
    raise ValueError(kind)


def _matrix(spec, key, path, errs, base_dir):
    """Kernel from an inline matrix or a ``<key>_file`` in the text format."""
    try:
        if isinstance(spec, dict) and f"{key}_file" in spec:
            p = Path(spec[f"{key}_file"])
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            return Kernel.from_text(p.read_text())
        val = _get(spec, key, path, errs, "list")
        return None if val is None else Kernel(val)
    except (OSError, ValueError) as exc:
        errs.add(f"{path}.{key}", str(exc))
        return None


def build_kernel(spec, path, errs, base_dir=None):
    fam = _get(spec, "family", path, errs, "str")
    if fam is None:
        return None
    if fam not in MODULATIONS:
        errs.add(f"{path}.family", f"unknown kernel family {fam!r}", "family")
        return None
    try:
        if fam == "constant":
            k = _matrix(spec, "matrix", path, errs, base_dir)
            return None if k is None else ConstantKernel(k)
        if fam == "logistic-tilt":
            k = _matrix(spec, "base", path, errs, base_dir)
            w = _get(spec, "weight", path, errs, "list")
            tilt = _get(spec, "tilt", path, errs, "list", required=False)
            return None if k is None or w is None else LogisticTilt(k, w, tilt)
        a = _matrix(spec, "first", path, errs, base_dir)
        b = _matrix(spec, "second", path, errs, base_dir)
        w = _get(spec, "weight", path, errs, "list")
        bias = _get(spec, "bias", path, errs, "number", required=False, default=0.0)
        return None if a is None or b is None or w is None else SoftmaxMix(a, b, w, bias)
    except ValueError as exc:
        errs.add(path, str(exc))
        return None


@dataclass(frozen=True)
class NoiseSpec:
    """Validated noise section; :meth:`build` makes a fresh process."""

    raw: dict
    base_dir: str | None = None

    @property
    def variant(self) -> str:
        return self.raw["variant"]

    def build(self):
        errs = _Errors()
        proc = build_noise(self.raw, "noise", errs, self.base_dir)
        errs.raise_if_any()
        return proc

    def start_states(self, replicas) -> np.ndarray:
        starts = self.raw.get("start_states", [0])
        return np.asarray([starts[r % len(starts)] for r in replicas], dtype=np.int64)


def build_noise(spec, path, errs, base_dir=None):
    variant = _get(spec, "variant", path, errs, "str")
    if variant is None:
        return None
    if variant not in NOISE_VARIANTS:
        errs.add(f"{path}.variant", f"unknown noise variant {variant!r}", "family")
        return None
    starts = _get(spec, "start_states", path, errs, "list", required=False, default=[0])
    if not starts or not all(_is(s, "int") and s >= 0 for s in starts):
        errs.add(f"{path}.start_states", "expected a non-empty list of state indices")
    try:
        if variant == "markov":
            k = build_kernel(_get(spec, "kernel", path, errs, "object"), f"{path}.kernel", errs, base_dir)
            proc = None if k is None else MarkovNoise(k)
        elif variant == "order-k":
            proc = _build_order_k(spec, path, errs, base_dir)
        else:
            proc = _build_stopped_sum(spec, path, errs, base_dir)
    except ValueError as exc:
        errs.add(path, str(exc))
        return None
    if proc is not None and starts and any(_is(s, "int") and s >= proc.num_states for s in starts):
        errs.add(f"{path}.start_states", f"states must lie in 0..{proc.num_states - 1}")
    return proc


def _kernel_list(spec, path, errs, base_dir):
    items = _get(spec, "kernels", path, errs, "list")
    if not items:
        if items is not None:
            errs.add(f"{path}.kernels", "need at least one kernel")
        return None
    ks = [build_kernel(it, f"{path}.kernels[{i}]", errs, base_dir) for i, it in enumerate(items)]
    return None if any(k is None for k in ks) else ks


def _build_order_k(spec, path, errs, base_dir):
    k = _get(spec, "k", path, errs, "int")
    if k is not None and k < 0:
        errs.add(f"{path}.k", "k must be >= 0")
    kernels = _kernel_list(spec, path, errs, base_dir)
    summ = _get(spec, "summary", path, errs, "object")
    summary = None
    if summ is not None:
        fam = _get(summ, "family", f"{path}.summary", errs, "str")
        if fam is not None and fam not in SUMMARIES:
            errs.add(f"{path}.summary.family", f"unknown summary family {fam!r}", "family")
        elif fam == "state-map":
            mapping = _get(summ, "mapping", f"{path}.summary", errs, "list")
            pos = _get(summ, "position", f"{path}.summary", errs, "int", required=False, default=0)
            if mapping is not None:
                summary = SUMMARIES[fam](mapping, pos)
                if k is not None and not 0 <= pos <= k:
                    errs.add(f"{path}.summary.position", "position must lie in 0..k")
        elif fam == "sum-mod":
            n = _get(summ, "n_labels", f"{path}.summary", errs, "int")
            if n is not None:
                summary = SUMMARIES[fam](n)
    warm = None
    if "warmup" in spec:
        warm = build_kernel(spec["warmup"], f"{path}.warmup", errs, base_dir)
    if kernels is None or summary is None or k is None:
        return None
    if summary.n_labels > len(kernels):
        errs.add(f"{path}.kernels", f"summary emits {summary.n_labels} labels but {len(kernels)} kernels given")
        return None
    return OrderKNoise(k, summary, kernels, warmup=warm)


def _build_stopped_sum(spec, path, errs, base_dir):
    alpha = _get(spec, "alpha", path, errs, "number")
    if alpha is not None and not 0 < alpha < 1:
        errs.add(f"{path}.alpha", "alpha must lie in (0, 1)")
    marks = _get(spec, "marks", path, errs, "list")
    kernels = _kernel_list(spec, path, errs, base_dir)
    rule_spec = _get(spec, "stop_rule", path, errs, "object")
    rule = None
    if rule_spec is not None:
        fam = _get(rule_spec, "family", f"{path}.stop_rule", errs, "str")
        if fam is not None and fam not in STOP_RULES:
            errs.add(f"{path}.stop_rule.family", f"unknown stop rule {fam!r}", "family")
        elif fam == "deterministic":
            rule = STOP_RULES[fam](_get(rule_spec, "period", f"{path}.stop_rule", errs, "int", False, 1))
        elif fam == "geometric":
            q = _get(rule_spec, "q", f"{path}.stop_rule", errs, "number")
            rule = None if q is None else STOP_RULES[fam](q)
    edges = _get(spec, "buckets", path, errs, "list")
    if None in (alpha, marks, kernels, rule, edges) or not 0 < alpha < 1:
        return None
    return StoppedSumNoise(alpha, marks, rule, Buckets(edges), kernels)


def build_objective(spec, path, errs):
    fam = _get(spec, "family", path, errs, "str")
    if fam is None:
        return None
    if fam not in gs.OBJECTIVES:
        errs.add(f"{path}.family", f"unknown objective {fam!r}", "family")
        return None
    dim = _get(spec, "dim", path, errs, "int", required=False, default=1)
    if fam == "quadratic":
        return gs.quadratic(dim)
    values = _get(spec, "values", path, errs, "list")
    return None if values is None else gs.OBJECTIVES[fam](values, dim=dim)


def build_drift(spec, path, errs) -> Drift | None:
    fam = _get(spec, "family", path, errs, "str")
    if fam is None:
        return None
    if fam not in DRIFT_FAMILIES:
        errs.add(f"{path}.family", f"unknown drift family {fam!r}", "family")
        return None
    if fam == "linear-target":
        values = _get(spec, "values", path, errs, "list")
        return None if values is None else linear_target(values)
    obj = build_objective(_get(spec, "objective", path, errs, "object"), f"{path}.objective", errs)
    return None if obj is None else gs.sgd_drift(obj)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    noise: NoiseSpec | None
    arms: tuple
    drift_spec: dict
    martingale: MartingaleNoise
    schedule: StepSchedule
    horizon: int
    replicas: int
    seed: int
    radius: float
    x0: tuple
    record_every: int | None
    time_resolution: float | None
    output_dir: str
    analyses: dict = field(default_factory=dict)
    description: str = ""
    raw: dict = field(default_factory=dict)
    base_dir: str | None = None

    def drift(self) -> Drift:
        errs = _Errors()
        d = build_drift(self.drift_spec, "drift", errs)
        errs.raise_if_any()
        return d

    def arm_specs(self) -> list[tuple[str, NoiseSpec]]:
        if self.arms:
            return list(self.arms)
        return [("main", self.noise)]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return parse_config(json.dumps(dict(self.raw, seed=int(seed))), self.base_dir)

    def with_output(self, out: str) -> "ExperimentConfig":
        return parse_config(json.dumps(dict(self.raw, output_dir=str(out))), self.base_dir)


def _check_analyses(an, errs):
    if an is None:
        return {}
    for key in an:
        if key not in ANALYSES:
            errs.add(f"analyses.{key}", f"unknown analysis {key!r}", "family")
        elif not isinstance(an[key], dict):
            errs.add(f"analyses.{key}", "expected an object")
    gg = an.get("gradient-gap")
    if isinstance(gg, dict):
        for i, case in enumerate(gg.get("cases", [])):
            p = f"analyses.gradient-gap.cases[{i}]"
            build_kernel(_get(case, "kernel", p, errs, "object"), f"{p}.kernel", errs)
            _get(case, "x", p, errs, "list")
        if "objective" in gg:
            build_objective(gg["objective"], "analyses.gradient-gap.objective", errs)
        cmp_ = gg.get("sa-compare")
        if isinstance(cmp_, dict):
            build_objective(_get(cmp_, "objective", "analyses.gradient-gap.sa-compare", errs, "object"),
                            "analyses.gradient-gap.sa-compare.objective", errs)
            build_kernel(_get(cmp_, "kernel", "analyses.gradient-gap.sa-compare", errs, "object"),
                         "analyses.gradient-gap.sa-compare.kernel", errs)
    return dict(an)


def parse_config(text: str, base_dir: str | None = None) -> ExperimentConfig:
    """Parse and fully validate a JSON experiment document."""
    errs = _Errors()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([("$", f"invalid JSON: {exc}")]) from exc
    if not isinstance(doc, dict):
        raise SchemaError([("$", "config must be a JSON object")])

    scenario = _get(doc, "scenario", "$", errs, "str")
    noise = arms = None
    if "arms" in doc:
        items = _get(doc, "arms", "$", errs, "list")
        arms = []
        for i, arm in enumerate(items or []):
            name = _get(arm, "name", f"arms[{i}]", errs, "str")
            proc = build_noise(_get(arm, "noise", f"arms[{i}]", errs, "object"), f"arms[{i}].noise", errs, base_dir)
            if name is not None and proc is not None:
                arms.append((name, NoiseSpec(arm["noise"], base_dir)))
        if len({a[0] for a in arms}) != len(arms):
            errs.add("arms", "arm names must be unique")
    else:
        nspec = _get(doc, "noise", "$", errs, "object")
        if nspec is not None and build_noise(nspec, "noise", errs, base_dir) is not None:
            noise = NoiseSpec(nspec, base_dir)

    drift_spec = _get(doc, "drift", "$", errs, "object")
    drift = build_drift(drift_spec, "drift", errs) if drift_spec is not None else None

    mspec = _get(doc, "martingale", "$", errs, "object", required=False, default={"family": "none"})
    mart = MartingaleNoise()
    if mspec is not None:
        fam = _get(mspec, "family", "martingale", errs, "str", default="none")
        if fam not in MartingaleNoise.FAMILIES:
            errs.add("martingale.family", f"unknown martingale family {fam!r}", "family")
        else:
            K = _get(mspec, "K", "martingale", errs, "number", required=fam != "none", default=0.0)
            if K is not None and K < 0:
                errs.add("martingale.K", "K must be non-negative")
            else:
                mart = MartingaleNoise(fam, float(K or 0.0))

    sspec = _get(doc, "schedule", "$", errs, "object")
    schedule = StepSchedule()
    if sspec is not None:
        c = _get(sspec, "c", "schedule", errs, "number", required=False, default=1.0)
        gamma = _get(sspec, "gamma", "schedule", errs, "number")
        off = _get(sspec, "offset", "schedule", errs, "int", required=False, default=1)
        fam = _get(sspec, "family", "schedule", errs, "str", required=False, default="power")
        override = _get(sspec, "test_override", "schedule", errs, "bool", required=False, default=False)
        if fam not in ("power", "zero"):
            errs.add("schedule.family", f"unknown schedule family {fam!r}", "family")
        elif None not in (c, gamma, off):
            schedule = StepSchedule(float(c), float(gamma), int(off), fam)
            verdict = validate_schedule(schedule)
            if not verdict and not override:
                errs.add("schedule", verdict.reason, "schedule")

    horizon = _get(doc, "horizon", "$", errs, "int")
    replicas = _get(doc, "replicas", "$", errs, "int")
    seed = _get(doc, "seed", "$", errs, "int")
    for key, val in (("horizon", horizon), ("replicas", replicas), ("seed", seed)):
        if val is not None and val < 0:
            errs.add(key, "must be non-negative")
    radius = _get(doc, "projection_radius", "$", errs, "number", required=False, default=DEFAULT_RADIUS)
    if radius is not None and radius <= 0:
        errs.add("projection_radius", "must be positive")
    dim = drift.dim if drift is not None else 1
    x0 = _get(doc, "x0", "$", errs, "list", required=False, default=[0.0] * dim)
    if x0 is not None and (len(x0) != dim or not all(_is(v, "number") for v in x0)):
        errs.add("x0", f"expected {dim} numbers")
    rec = _get(doc, "record", "$", errs, "object", required=False, default={})
    every = res = None
    if rec is not None:
        every = rec.get("every")
        res = rec.get("time_resolution", 0.01)
        if every is not None and not (_is(every, "int") and every >= 1):
            errs.add("record.every", "expected a positive integer or null")
        if res is not None and not (_is(res, "number") and res > 0):
            errs.add("record.time_resolution", "expected a positive number or null")
    out = _get(doc, "output_dir", "$", errs, "str", required=False, default=f"out/{scenario or 'scenario'}")
    out = os.environ.get(OUTPUT_ENV, out)
    analyses = _check_analyses(_get(doc, "analyses", "$", errs, "object", required=False, default={}), errs)
    if noise is not None and drift is not None:
        proc = noise.build()
        if proc.dim != drift.dim and not all(getattr(k, "is_constant", True) for k in _kernels_of(proc)):
            errs.add("noise", "kernel modulation dimension differs from the drift dimension")
    errs.raise_if_any()
    return ExperimentConfig(
        scenario=scenario, noise=noise, arms=tuple(arms or ()), drift_spec=drift_spec, martingale=mart,
        schedule=schedule, horizon=horizon, replicas=replicas, seed=seed, radius=float(radius),
        x0=tuple(float(v) for v in x0), record_every=every, time_resolution=res, output_dir=out,
        analyses=analyses, description=doc.get("description", ""), raw=doc, base_dir=base_dir,
    )


def _kernels_of(proc):
    if hasattr(proc, "kernels"):
        return list(proc.kernels)
    return [proc.kernel]


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p.parent))
