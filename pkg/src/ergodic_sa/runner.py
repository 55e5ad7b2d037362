"""Execute an :class:`ExperimentConfig` and write its artifact bundle.

Bundle layout under ``output_dir``::

    trajectories/<arm>_replica_<i>.csv   n,t,x_0..,z
    decomposition_<arm>.json              closed classes, extremals, gaps
    reference_kernel_<arm>.txt            kernel used for class labels
    equilibria_<arm>.csv                  class,y_0..
    tracking/<arm>_replica_<i>.csv        anchor,sup_error
    mimic_counts.csv, mimic_estimated.txt, mimic_exact.txt
    gradient_gap.csv                      x,lhs,rhs,gap
    summary.json

Everything is a deterministic function of the config (including its seed).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gradient_schemes as gs
from .config import ExperimentConfig, _Errors, build_kernel, build_objective, parse_config
from .markov_core import Decomposition, Kernel, doeblin_decompose
from .meanfield import AveragedField, find_equilibria, tracking_error, tracking_errors_csv
from .mimic import TransitionCounts, estimate_kernel, pair_law, row_tv, tail_class
from .noise_models import MarkovNoise, OrderKNoise, StoppedSumNoise, exact_mimic_kernel, mixture_stationary, simulate
from .sa_engine import LastExit, run_batch
from .streams import replica_generator

log = logging.getLogger(__name__)

MIMIC_REPLICA_OFFSET = 1_000_000
TAIL_FRACTION = 0.1


@dataclass
class ArmReference:
    """Class structure and per-class averaged fields used to label an arm."""

    kernel: Kernel
    decomp: Decomposition
    fields: list
    equilibria: list = field(default_factory=list)


@dataclass
class ScenarioResult:
    summary: dict
    output_dir: Path
    runs: dict

    @property
    def passed(self) -> bool:
        return self.summary["passed"]


def _start_law(proc, starts):
    law = np.bincount(np.asarray(starts, dtype=int), minlength=proc.num_states).astype(float)
    return law / law.sum()


def arm_reference(cfg: ExperimentConfig, proc, drift, replicas) -> ArmReference:
    x_ref = np.asarray(cfg.x0, dtype=float)
    if isinstance(proc, MarkovNoise):
        kernel = proc.kernel.kernel_at(x_ref)
        decomp = doeblin_decompose(kernel)
        if proc.kernel.is_constant:
            fields = [AveragedField(drift, measure=e) for e in decomp.extremals]
        else:
            fields = [AveragedField(drift, kernel=proc.kernel, class_index=c, reference_x=x_ref)
                      for c in range(decomp.n_classes)]
    else:
        if isinstance(proc, OrderKNoise):
            starts = cfg.arm_specs()[0][1].start_states(replicas or [0])
            kernel = exact_mimic_kernel(proc, x_ref, start_law=_start_law(proc, starts))
        else:
            # stopped-sum: the union of label kernels fixes the reachable structure
            kernel = Kernel.normalized(np.mean([k.kernel_at(x_ref).matrix for k in proc.kernels], axis=0))
        decomp = doeblin_decompose(kernel)
        fields = [AveragedField(drift, measure=e) for e in decomp.extremals]
    return ArmReference(kernel, decomp, fields)


def _simulate_chunk(raw: str, base_dir, arm: str, replicas: list, observer_spec=None):
    cfg = parse_config(raw, base_dir)
    spec = dict(cfg.arm_specs())[arm]
    proc = spec.build()
    observers = []
    if observer_spec is not None:
        observers.append(LastExit(observer_spec["center"], observer_spec["threshold"], len(replicas)))
    runs = run_batch(
        cfg.drift(), proc, cfg.schedule, cfg.horizon, cfg.seed, replicas, spec.start_states(replicas),
        x0=cfg.x0, martingale=cfg.martingale, radius=cfg.radius, record_every=cfg.record_every,
        time_resolution=cfg.time_resolution, noise_spec=spec.raw, observers=observers,
    )
    settle = observers[0].settle_steps().tolist() if observers else None
    return runs, settle


def simulate_arm(cfg: ExperimentConfig, arm: str, workers: int = 1, observer_spec=None):
    """Run every replica of one arm, optionally split over worker processes."""
    replicas = list(range(cfg.replicas))
    raw = json.dumps(cfg.raw)
    if workers <= 1 or len(replicas) < 2:
        return _simulate_chunk(raw, cfg.base_dir, arm, replicas, observer_spec)
    chunks = [c.tolist() for c in np.array_split(np.asarray(replicas), workers) if c.size]
    runs, settle = [], []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_simulate_chunk, raw, cfg.base_dir, arm, c, observer_spec) for c in chunks]
        for fut in futures:
            r, s = fut.result()
            runs.extend(r)
            if s is not None:
                settle.extend(s)
    return runs, (settle if observer_spec is not None else None)


def _check(name, value, tolerance, passed):
    return {"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed)}


def _nearest(points, x):
    if not points:
        return math.inf
    return float(min(np.linalg.norm(np.asarray(x) - p) for p in points))


def _equilibria_for(ref: ArmReference, an: dict, dim: int):
    box = an.get("box", [[-10.0, 10.0]] * dim)
    grid = int(an.get("grid", 401))
    return [find_equilibria(f, box, grid) for f in ref.fields]


def _tail_label(run, decomp):
    keep = run.n >= (1.0 - TAIL_FRACTION) * run.horizon
    return tail_class(run.z[keep], decomp, fraction=1.0)


def _write_decomposition(path: Path, decomp: Decomposition):
    doc = {
        "classes": [list(c) for c in decomp.classes],
        "transient": list(decomp.transient),
        "extremals": [e.tolist() for e in decomp.extremals],
        "gaps": list(decomp.gaps),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_scenario(cfg: ExperimentConfig, workers: int = 1) -> ScenarioResult:
    """Run all arms and analyses of a config; returns the summary."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"scenario": cfg.scenario, "seed": cfg.seed, "horizon": cfg.horizon,
               "replicas": [], "arms": {}, "analyses": {}, "checks": [], "warnings": []}
    if cfg.replicas == 0:
        msg = "replicas = 0: nothing to simulate"
        warnings.warn(msg, RuntimeWarning)
        summary["warnings"].append(msg)
        summary["passed"] = True
        _write_summary(out, summary)
        return ScenarioResult(summary, out, {})

    drift = cfg.drift()
    an = cfg.analyses
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    all_runs, refs = {}, {}
    for arm, spec in cfg.arm_specs():
        proc = spec.build()
        ref = arm_reference(cfg, proc, drift, list(range(cfg.replicas)))
        if any(k in an for k in ("equilibria", "class-memory", "spectral-mixing")):
            eq_cfg = an.get("equilibria", an.get("spectral-mixing", {}))
            ref.equilibria = _equilibria_for(ref, eq_cfg, drift.dim)
        refs[arm] = ref
        observer = None
        sm = an.get("spectral-mixing")
        if sm is not None and arm in (sm.get("fast"), sm.get("slow")):
            if len(ref.equilibria) != 1 or len(ref.equilibria[0]) != 1:
                raise RuntimeError(f"spectral-mixing arm {arm!r} needs exactly one equilibrium")
            observer = {"center": ref.equilibria[0][0].tolist(), "threshold": float(sm.get("threshold", 0.05))}
        log.info("scenario %s arm %s: %d replicas x %d steps", cfg.scenario, arm, cfg.replicas, cfg.horizon)
        runs, settle = simulate_arm(cfg, arm, workers, observer)
        all_runs[arm] = runs
        arm_info = {"reference_classes": [list(c) for c in ref.decomp.classes],
                    "gaps": list(ref.decomp.gaps),
                    "equilibria": [[e.tolist() for e in eqs] for eqs in ref.equilibria]}
        if settle is not None:
            arm_info["settle_steps"] = settle
        summary["arms"][arm] = arm_info
        for run in runs:
            run.to_csv(traj_dir / f"{arm}_replica_{run.replica:03d}.csv")
            summary["replicas"].append({
                "arm": arm, "replica": run.replica, "start_state": run.start_state,
                "start_class": ref.decomp.class_of(run.start_state),
                "tail_class": _tail_label(run, ref.decomp),
                "label": run.label, "final_x": run.final_x.tolist(),
            })
        if "decompose" in an:
            _write_decomposition(out / f"decomposition_{arm}.json", ref.decomp)
            (out / f"reference_kernel_{arm}.txt").write_text(ref.kernel.to_text())
        if ref.equilibria:
            with open(out / f"equilibria_{arm}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["class"] + [f"y_{i}" for i in range(drift.dim)])
                for c, eqs in enumerate(ref.equilibria):
                    for e in eqs:
                        w.writerow([c] + [repr(float(v)) for v in e])

    checks = summary["checks"]
    rows = summary["replicas"]
    if "class-memory" in an:
        checks.extend(_class_memory(an["class-memory"], rows, refs))
    if "equilibria" in an:
        checks.extend(_equilibrium_check(an["equilibria"], rows, refs))
    if "ode-track" in an:
        res, chk = _ode_track(an["ode-track"], all_runs, refs, rows, out)
        summary["analyses"]["ode-track"] = res
        checks.extend(chk)
    if "mimic-estimate" in an:
        res, chk = _mimic_estimate(cfg, an["mimic-estimate"], all_runs, out, drift)
        summary["analyses"]["mimic-estimate"] = res
        checks.extend(chk)
    if "spectral-mixing" in an:
        res, chk = _spectral_mixing(an["spectral-mixing"], summary["arms"], refs)
        summary["analyses"]["spectral-mixing"] = res
        checks.extend(chk)
    if "gradient-gap" in an:
        res, chk = _gradient_gap(cfg, an["gradient-gap"], out)
        summary["analyses"]["gradient-gap"] = res
        checks.extend(chk)
    summary["passed"] = all(c["passed"] for c in checks)
    _write_summary(out, summary)
    return ScenarioResult(summary, out, all_runs)


def _write_summary(out: Path, summary: dict):
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# analyses


def _class_memory(opts, rows, refs):
    own_tol = float(opts.get("own_tol", 0.02))
    other_min = float(opts.get("other_min", 0.4))
    own_d, other_d, matched = [], [], 0
    for row in rows:
        ref = refs[row["arm"]]
        c = row["start_class"]
        x = row["final_x"]
        own_d.append(_nearest(ref.equilibria[c], x) if c >= 0 else math.inf)
        others = [_nearest(eqs, x) for j, eqs in enumerate(ref.equilibria) if j != c]
        other_d.append(min(others) if others else math.inf)
        row["own_class_distance"] = own_d[-1]
        row["other_class_distance"] = other_d[-1]
        matched += int(row["tail_class"] == c and c >= 0)
    return [
        _check("class-memory: max distance to own-class equilibrium", max(own_d), own_tol, max(own_d) <= own_tol),
        _check("class-memory: min distance to other-class equilibria", min(other_d), other_min,
               min(other_d) >= other_min),
        _check("class-memory: tail class matches starting class", f"{matched}/{len(rows)}", "all",
               matched == len(rows)),
    ]


def _equilibrium_check(opts, rows, refs):
    tol = float(opts.get("tol", 0.05))
    worst = 0.0
    for row in rows:
        ref = refs[row["arm"]]
        c = row["tail_class"] if row["tail_class"] >= 0 else row["start_class"]
        d = _nearest(ref.equilibria[c], row["final_x"]) if c >= 0 else math.inf
        row["equilibrium_distance"] = d
        worst = max(worst, d)
    return [_check("final iterates near an equilibrium of their class field", worst, tol, worst <= tol)]


def decade_medians(errors: np.ndarray) -> tuple[float, float]:
    """Median tracking error over the first and the last tenth of the anchors."""
    k = max(1, int(math.ceil(len(errors) / 10)))
    return float(np.median(errors[:k])), float(np.median(errors[-k:]))


def _ode_track(opts, all_runs, refs, rows, out):
    window = float(opts.get("window", 5.0))
    n_anchor = int(opts.get("anchors", 50))
    dt = float(opts.get("dt", 0.01))
    min_frac = float(opts.get("min_fraction", 0.9))
    tdir = out / "tracking"
    tdir.mkdir(exist_ok=True)
    by_key = {(r["arm"], r["replica"]): r for r in rows}
    improved, total, res = 0, 0, {}
    for arm, runs in all_runs.items():
        ref = refs[arm]
        for run in runs:
            row = by_key[(arm, run.replica)]
            c = row["tail_class"] if row["tail_class"] >= 0 else row["start_class"]
            t_end = float(run.t[-1])
            if t_end <= window or c < 0:
                continue
            anchors = np.linspace(0.0, t_end - window, n_anchor)
            errs = tracking_error(run, ref.fields[c], window, anchors, dt)
            tracking_errors_csv(tdir / f"{arm}_replica_{run.replica:03d}.csv", anchors, errs)
            first, last = decade_medians(errs)
            row["tracking_median_first"] = first
            row["tracking_median_last"] = last
            improved += int(last < first)
            total += 1
    res["improved"] = improved
    res["total"] = total
    frac = improved / total if total else 0.0
    return res, [_check("ode-track: last-decade median error below first-decade", frac, min_frac,
                        total > 0 and frac >= min_frac)]


def _mimic_estimate(cfg: ExperimentConfig, opts, all_runs, out, drift):
    arm, spec = cfg.arm_specs()[0]
    proc = spec.build()
    reps = int(opts.get("replicas", 1000))
    steps = int(opts.get("steps", 1000))
    burn = int(opts.get("burn_in", 0))
    smoothing = float(opts.get("smoothing", 0.0))
    tv_max = float(opts.get("row_tv_max", 0.01))
    x = np.asarray(opts.get("x", cfg.x0), dtype=float)
    ids = list(range(MIMIC_REPLICA_OFFSET, MIMIC_REPLICA_OFFSET + reps))
    starts = spec.start_states(range(reps))
    paths = simulate(proc, burn + steps, cfg.seed, ids, starts, x=x)
    tc = TransitionCounts(proc.num_states).ingest_path(paths[:, burn:])
    tc.to_csv(out / "mimic_counts.csv")
    est = estimate_kernel(tc, 0, smoothing)
    (out / "mimic_estimated.txt").write_text(est.kernel.to_text())
    res: dict = {"transitions": int(tc.counts.sum())}
    checks = []
    if isinstance(proc, (OrderKNoise, MarkovNoise)):
        law = _start_law(proc, starts)
        if isinstance(proc, OrderKNoise):
            exact = exact_mimic_kernel(proc, x, start_law=law)
            mu = mixture_stationary(proc, x, start_law=law)
        else:
            exact = proc.kernel.kernel_at(x)
            mu = doeblin_decompose(exact).extremals[0]
        (out / "mimic_exact.txt").write_text(exact.to_text())
        tv = row_tv(est.kernel, exact)
        res["row_tv"] = tv.tolist()
        res["pair_law_tv"] = 0.5 * float(np.abs(pair_law(exact, mu) - pair_law(est.kernel, mu)).sum())
        checks.append(_check("mimic: per-row TV empirical vs exact", float(tv.max()), tv_max, tv.max() <= tv_max))
    pairs = int(opts.get("sa_pairs", 0))
    if pairs and isinstance(proc, OrderKNoise):
        diffs = []
        for run in all_runs[arm][:pairs]:
            onehot = np.zeros(proc.n_labels)
            onehot[run.label] = 1.0
            mimic = MarkovNoise(exact_mimic_kernel(proc, x, label_weights=onehot))
            twin = run_batch(drift, mimic, cfg.schedule, cfg.horizon, cfg.seed, [run.replica], [run.start_state],
                             x0=cfg.x0, martingale=cfg.martingale, radius=cfg.radius,
                             record_every=cfg.horizon or 1, time_resolution=None)[0]
            diffs.append(float(np.linalg.norm(twin.final_x - run.final_x)))
        res["sa_final_differences"] = diffs
        lim = float(opts.get("sa_diff_max", 0.02))
        checks.append(_check("mimic: SA original vs exact mimic final_x difference", max(diffs), lim,
                             max(diffs) <= lim))
    return res, checks


def _spectral_mixing(opts, arms, refs):
    fast, slow = opts["fast"], opts["slow"]
    ratio_min = float(opts.get("min_ratio", 3.0))
    frac_min = float(opts.get("min_fraction", 0.9))
    sf = np.asarray(arms[fast]["settle_steps"], dtype=float)
    ss = np.asarray(arms[slow]["settle_steps"], dtype=float)
    ratios = ss / sf
    ok = int((ratios >= ratio_min).sum())
    res = {"gap_fast": refs[fast].decomp.gaps[0], "gap_slow": refs[slow].decomp.gaps[0],
           "settle_fast": sf.tolist(), "settle_slow": ss.tolist(), "ratios": ratios.tolist()}
    frac = ok / len(ratios)
    return res, [_check(f"spectral-mixing: slow/fast settle ratio >= {ratio_min}", frac, frac_min, frac >= frac_min)]


def _gradient_gap(cfg: ExperimentConfig, opts, out):
    errs = _Errors()
    obj = build_objective(opts.get("objective", {"family": "quadratic"}), "objective", errs)
    errs.raise_if_any()
    res: dict = {"cases": []}
    checks = []
    reports = []
    for case in opts.get("cases", []):
        pk = build_kernel(case["kernel"], "kernel", errs)
        errs.raise_if_any()
        rep = gs.averaged_gradient_gap(obj, pk, case["x"])
        reports.append(rep)
        entry = {"name": case.get("name", pk.family), "x": rep.x.tolist(), "lhs": rep.lhs.tolist(),
                 "rhs": rep.rhs.tolist(), "gap": rep.gap.tolist(), "chain_rule": rep.chain_rule.tolist()}
        res["cases"].append(entry)
        if "expected_gap" in case:
            err = float(np.abs(rep.gap - np.asarray(case["expected_gap"])).max())
            checks.append(_check(f"gradient-gap[{entry['name']}]: |gap - expected|", err, case["tol"],
                                 err <= case["tol"]))
        if "max_abs_gap" in case:
            g = float(np.abs(rep.gap).max())
            checks.append(_check(f"gradient-gap[{entry['name']}]: |gap|", g, case["max_abs_gap"],
                                 g <= case["max_abs_gap"]))
    if opts.get("cases"):
        pk0 = build_kernel(opts["cases"][0]["kernel"], "kernel", errs)
        for p in opts.get("points", []):
            reports.append(gs.averaged_gradient_gap(obj, pk0, [p]))
    gs.gap_reports_csv(out / "gradient_gap.csv", reports)
    cmp_ = opts.get("sa-compare")
    if cmp_ is not None:
        r, c = _sa_compare(cfg, cmp_)
        res["sa-compare"] = r
        checks.extend(c)
    return res, checks


def sa_compare(obj, pk, steps, delta, x0, seed, replica=0):
    """Final iterates of SA on the averaged gradient and of SA on SPSA estimates of G."""
    rng = replica_generator(seed, replica, "estimator")
    sampler = gs.one_sample_sampler(obj, pk)
    spsa_x = gs.sa_with_estimator(lambda x, n: gs.spsa_gradient(sampler, x, delta, 1, rng), x0, steps)
    lhs_x = gs.sa_with_estimator(lambda x, n: gs.averaged_gradient(obj, pk, x), x0, steps)
    return lhs_x, spsa_x


def _sa_compare(cfg, opts):
    errs = _Errors()
    obj = build_objective(opts["objective"], "objective", errs)
    pk = build_kernel(opts["kernel"], "kernel", errs)
    errs.raise_if_any()
    lhs_x, spsa_x = sa_compare(obj, pk, int(opts.get("steps", 100_000)), float(opts.get("delta", 0.1)),
                               opts.get("x0", [0.0]), cfg.seed)
    dim = obj.dim
    box = opts.get("box", [[-10.0, 10.0]] * dim)
    G = gs.averaged_objective(obj, pk)
    grad_G = AveragedField(gs.sgd_drift(obj), kernel=pk)  # zeros of the averaged-gradient field
    lhs_zeros = find_equilibria(grad_G, box, 2001 if dim == 1 else 201)
    from scipy.optimize import minimize

    g_min = minimize(lambda v: G(v), np.asarray(opts.get("x0", [0.0]), dtype=float), method="Nelder-Mead",
                     options={"xatol": 1e-10, "fatol": 1e-14}).x
    tol = float(opts.get("tol", 0.02))
    sep = float(np.linalg.norm(lhs_x - spsa_x))
    res = {"sgd_final": lhs_x.tolist(), "spsa_final": spsa_x.tolist(), "lhs_zeros": [z.tolist() for z in lhs_zeros],
           "G_minimizer": g_min.tolist(), "separation": sep}
    d_spsa = float(np.linalg.norm(spsa_x - g_min))
    d_lhs = _nearest(lhs_zeros, lhs_x)
    return res, [
        _check("sa-compare: SPSA limit near minimizer of averaged objective", d_spsa, tol, d_spsa <= tol),
        _check("sa-compare: averaged-SGD limit near zero of averaged gradient", d_lhs, tol, d_lhs <= tol),
        _check("sa-compare: the two limits differ", sep, float(opts.get("min_difference", 0.05)),
               sep >= float(opts.get("min_difference", 0.05))),
    ]
