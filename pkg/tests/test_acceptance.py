"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. The preset-backed
criteria take a few minutes in total on one core.
"""
import math
import time

import numpy as np
import pytest

from ergodic_sa import gradient_schemes as gs
from ergodic_sa.markov_core import Kernel, doeblin_decompose, spectral_gap, stationary_residual
from ergodic_sa.noise_models import Buckets, DeterministicStops, GeometricStops, StoppedSumNoise, simulate
from ergodic_sa.presets import preset_config, preset_document
from ergodic_sa.runner import run_scenario
from ergodic_sa.sa_engine import StepSchedule, validate_schedule
from oracles import block_kernel, brute_force_classes, power_stationary, random_kernel

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(request):
    tr = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}" + (f"  [{detail}]" if detail else "")
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        else:  # pragma: no cover
            print(line)
        assert ok, line

    return emit


def _run(name, tmp_path):
    return run_scenario(preset_config(name, out=str(tmp_path / name)))


def test_criterion_1_class_memory(tmp_path, report):
    doc = preset_document("class-memory")
    warm = np.asarray(doc["noise"]["warmup"]["matrix"])
    values = np.asarray(doc["drift"]["values"])
    # class means from an independent power iteration on each closed block
    m_a = power_stationary(warm[:2, :2]) @ values[:2]
    m_b = power_stationary(warm[2:, 2:]) @ values[2:]
    means = [m_a, m_b]

    t0 = time.perf_counter()
    res = _run("class-memory", tmp_path)
    elapsed = time.perf_counter() - t0
    rows = res.summary["replicas"]
    per_class = [sum(r["start_class"] == c for r in rows) for c in (0, 1)]
    own = [abs(r["final_x"][0] - means[r["start_class"]]) for r in rows]
    other = [abs(r["final_x"][0] - means[1 - r["start_class"]]) for r in rows]
    matched = sum(r["tail_class"] == r["start_class"] for r in rows)
    ok = (abs(m_a - m_b) >= 0.5 and per_class == [20, 20] and max(own) <= 0.02 and min(other) >= 0.4
          and matched == 40 and elapsed <= 60.0 and res.passed)
    report(1, "ergodic-class memory", ok,
           f"|mA-mB|={abs(m_a - m_b):.3f} own<={max(own):.4f} other>={min(other):.3f} "
           f"tail {matched}/40 in {elapsed:.1f}s")


def test_criterion_2_mimic_fidelity(tmp_path, report):
    res = _run("mimic-fidelity", tmp_path)
    an = res.summary["analyses"]["mimic-estimate"]
    tv = max(an["row_tv"])
    diffs = an["sa_final_differences"]
    ok = an["transitions"] >= 1_000_000 and tv <= 0.01 and len(diffs) == 20 and max(diffs) <= 0.02
    report(2, "Markov-mimic fidelity", ok,
           f"{an['transitions']} transitions, row TV {tv:.4f}, max SA diff {max(diffs):.2e} over {len(diffs)} pairs")


def test_criterion_3_ode_tracking(tmp_path, report):
    res = _run("ode-tracking", tmp_path)
    rows = res.summary["replicas"]
    improved = sum(r["tracking_median_last"] < r["tracking_median_first"] for r in rows)
    # y' = E_pi[v] - y has a single zero at the stationary mean 1/6
    worst_eq = max(r["equilibrium_distance"] for r in rows)
    worst_closed = max(abs(r["final_x"][0] - 1 / 6) for r in rows)
    ok = len(rows) == 20 and improved >= 18 and worst_eq <= 0.05 and worst_closed <= 0.05
    report(3, "ODE tracking", ok, f"improved {improved}/20, max distance to equilibrium {worst_eq:.4f}")


def test_criterion_4_decomposition_oracle(report):
    rng = np.random.default_rng(4)
    mismatches, worst_res = 0, 0.0
    for i in range(200):
        s = int(rng.integers(1, 51))
        if i % 2:
            p = random_kernel(rng, s, float(rng.uniform(0.02, 0.3)))
        else:
            n_blocks = int(rng.integers(1, 4))
            sizes = [max(1, s // (n_blocks + 1))] * n_blocks
            p = block_kernel(rng, sizes, max(0, s - sum(sizes)))
        d = doeblin_decompose(p)
        classes, transient = brute_force_classes(p)
        mismatches += int(list(d.classes) != classes or list(d.transient) != transient)
        for pi in d.extremals:
            worst_res = max(worst_res, stationary_residual(p, pi))
    gap_dev = 0.0
    for _ in range(50):
        s = int(rng.integers(2, 30))
        p = rng.random((s, s)) + 0.01
        k = Kernel.normalized(p)
        g = spectral_gap(k, range(s))
        gap_dev = max(gap_dev, abs(spectral_gap(k.permuted(rng.permutation(s)), range(s)) - g))
    ok = mismatches == 0 and worst_res <= 1e-12 and gap_dev <= 1e-9
    report(4, "decomposition oracle equivalence", ok,
           f"{mismatches} mismatches, max residual {worst_res:.1e}, gap drift {gap_dev:.1e}")


def test_criterion_5_spectral_mixing(tmp_path, report):
    doc = preset_document("spectral-mixing")
    gaps = {}
    for arm in doc["arms"]:
        ev = np.sort(np.abs(np.linalg.eigvals(np.asarray(arm["noise"]["kernel"]["matrix"]))))
        gaps[arm["name"]] = 1.0 - ev[-2]
    res = _run("spectral-mixing", tmp_path)
    sf = np.asarray(res.summary["arms"]["fast"]["settle_steps"], dtype=float)
    ss = np.asarray(res.summary["arms"]["slow"]["settle_steps"], dtype=float)
    wins = int((ss >= 3 * sf).sum())
    ok = (abs(gaps["fast"] - 0.6) <= 1e-12 and abs(gaps["slow"] - 0.05) <= 1e-12
          and len(sf) == 20 and wins >= 18)
    report(5, "spectral gap vs emergence rate", ok,
           f"gaps {gaps['fast']:.2f}/{gaps['slow']:.2f}, slow >= 3x fast in {wins}/20, "
           f"median ratio {np.median(ss / sf):.1f}")


def test_criterion_6_gradient_gap(tmp_path, report):
    closed = math.e / (1 + math.e) ** 2
    res = _run("gradient-gap", tmp_path)
    cases = {c["name"]: c for c in res.summary["analyses"]["gradient-gap"]["cases"]}
    err = abs(cases["logistic-tilt"]["gap"][0] - closed)
    const = abs(cases["x-independent"]["gap"][0])
    ok = err <= 1e-4 and const <= 1e-6 and res.passed
    report(6, "gradient discrepancy", ok, f"|gap - sigma'(1)| = {err:.1e}, constant-kernel gap {const:.1e}")


def test_criterion_7_estimator_audits(report):
    kw_err = 0.0
    # central differences carry no truncation error on quadratics; only rounding,
    # about eps * |G| / delta, so delta stays well above the 1e-12 target scale
    for x in (-2.0, 0.0, 1.0, 3.5):
        for delta in (0.1, 0.5, 1.0):
            G = gs.exact_sampler(lambda v: float(v[0] ** 2))
            kw_err = max(kw_err, abs(gs.kw_gradient(G, [x], delta)[0] - 2 * x))
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    Gq = gs.exact_sampler(lambda v: float(v @ a @ v / 2))
    kw_err = max(kw_err, float(np.abs(gs.kw_gradient(Gq, [0.4, -0.7], 0.2) - a @ [0.4, -0.7]).max()))

    obj = gs.double_well(dim=3)
    x = np.array([0.5, -1.2, 2.0])
    Gw = gs.exact_sampler(lambda v: obj.value(v, 0))
    mean, samples = gs.spsa_gradient(Gw, x, 0.01, 10_000, np.random.default_rng(7), return_samples=True)
    se = samples.std(axis=0, ddof=1) / math.sqrt(len(samples))
    z = np.abs(mean - (x ** 3 - x)) / se

    rng = np.random.default_rng(8)
    same = all(gs.spsa_gradient(Gw1, [x1], d, 1, rng).tobytes() == gs.kw_gradient(Gw1, [x1], d).tobytes()
               for Gw1 in [gs.exact_sampler(lambda v: float(v[0] ** 4 / 4 - v[0] ** 2 / 2))]
               for x1 in (-1.5, 0.2, 0.9) for d in (0.01, 0.2))
    ok = kw_err <= 1e-12 and bool(np.all(z <= 3)) and same
    report(7, "estimator audits", ok, f"KW err {kw_err:.1e}, SPSA max z {z.max():.2f}, d=1 bitwise {same}")


def test_criterion_8_schedule_gate(report):
    accepted = all(validate_schedule(StepSchedule(1.0, g)) for g in (0.51, 0.6, 0.75, 0.99, 1.0))
    low, high = validate_schedule(StepSchedule(1.0, 0.5)), validate_schedule(StepSchedule(1.0, 1.2))
    ok = accepted and not low and not high and "Σa(n)² < ∞" in low.reason and "Σa(n) = ∞" in high.reason
    report(8, "schedule gate", ok, f"0.5 -> {low.reason!r}; 1.2 -> {high.reason!r}")


def test_criterion_9_stopped_sum_bound(report):
    a = [[0.9, 0.1], [0.5, 0.5]]
    b = [[0.3, 0.7], [0.2, 0.8]]
    alpha = 0.9
    worst, bound = 0.0, 10.0  # 1 / (1 - alpha), compared against the literal value
    # every step a stopping time (tau_m = m) with equal marks is the extreme case
    for rule in (DeterministicStops(1), GeometricStops(0.5)):
        proc = StoppedSumNoise(alpha, [1.0, 1.0], rule, Buckets([[5.0]]), [a, b])
        simulate(proc, 100_000, 9, range(100), np.zeros(100, dtype=int), keep_path=False)
        assert proc.mark_bound == 1.0
        worst = max(worst, float(proc.xi_norm_max.max()))
    ok = worst <= bound
    report(9, "stopped-sum bound", ok, f"max |xi| = {worst!r} <= {bound!r} over 100 replicas x 1e5 steps")
