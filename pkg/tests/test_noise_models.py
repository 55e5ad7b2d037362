import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodic_sa.errors import NonFiniteInput, StateOutOfRange, UnresolvableLabel
from ergodic_sa.markov_core import doeblin_decompose, stationary_distribution
from ergodic_sa.noise_models import (
    Buckets,
    ConstantKernel,
    DeterministicStops,
    GeometricStops,
    LogisticTilt,
    MarkovNoise,
    OrderKNoise,
    SoftmaxMix,
    StateMap,
    StoppedSumNoise,
    SumMod,
    exact_mimic_kernel,
    kernel_at,
    logistic,
    mixture_stationary,
    simulate,
    stationary_at,
)
from oracles import enumerate_order_k_mimic

UNIFORM2 = [[0.5, 0.5], [0.5, 0.5]]
A = [[0.9, 0.1], [0.5, 0.5]]
B = [[0.3, 0.7], [0.2, 0.8]]


def _row_l1(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum(axis=1).max())


def _block_order1():
    """k = 1, label = first state's block; label kernels confine to {0,1} / {2,3}."""
    z = np.zeros((4, 4))
    k0, k1 = z.copy(), z.copy()
    k0[:2, :2] = A
    k0[2:, :2] = 0.5
    k1[2:, 2:] = B
    k1[:2, 2:] = 0.5
    warm = z.copy()
    warm[:2, :2] = A
    warm[2:, 2:] = B
    return OrderKNoise(1, StateMap([0, 0, 1, 1], 0), [k0, k1], warmup=warm)


# -- parametrized kernels -------------------------------------------------------


def test_constant_family_ignores_x():
    pk = ConstantKernel(A)
    for x in ([0.0], [3.0], [-1e6]):
        assert kernel_at(pk, x) == pk.base


def test_logistic_tilt_examples():
    pk = LogisticTilt(UNIFORM2, [1.0], [0.0, 1.0])
    assert np.allclose(kernel_at(pk, [0.0]).matrix, 0.5, atol=1e-15)
    # [DERIVED] logistic(ln 3) = 3 / (1 + 3)
    k = kernel_at(pk, [math.log(3.0)]).matrix
    assert np.allclose(k, [[0.25, 0.75], [0.25, 0.75]], atol=1e-14)
    w = LogisticTilt(UNIFORM2, [2.0], [0.0, 1.0])
    assert kernel_at(w, [0.7]).matrix[0, 1] == pytest.approx(logistic(1.4), abs=1e-14)


def test_logistic_tilt_keeps_zero_pattern():
    base = [[1.0, 0.0, 0.0], [0.2, 0.3, 0.5], [0.0, 0.5, 0.5]]
    pk = LogisticTilt(base, [1.5, -0.5])
    for x in ([1.0, 2.0], [-3.0, 0.5]):
        k = kernel_at(pk, x).matrix
        assert np.array_equal(k > 0, np.asarray(base) > 0)


def test_softmax_mix_at_origin_is_base():
    pk = SoftmaxMix(A, B, [1.0], bias=0.3)
    s = logistic(0.3)
    assert np.allclose(pk.base.matrix, (1 - s) * np.asarray(A) + s * np.asarray(B), atol=1e-15)
    assert kernel_at(pk, [0.0]) == pk.base


def test_kernel_at_rejects_non_finite():
    pk = LogisticTilt(UNIFORM2, [1.0])
    with pytest.raises(NonFiniteInput):
        kernel_at(pk, [np.nan])
    with pytest.raises(NonFiniteInput):
        kernel_at(pk, [np.inf])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.floats(-2, 2),
)
def test_lipschitz_bounds_hold(x, y, w, bias):
    rng = np.random.default_rng(0)
    first = rng.dirichlet(np.ones(3), size=3)
    second = rng.dirichlet(np.ones(3), size=3)
    dx = float(np.linalg.norm(np.subtract(x, y)))
    for pk in (LogisticTilt(first, w, [0.0, 0.5, 2.0]), SoftmaxMix(first, second, w, bias)):
        lhs = _row_l1(kernel_at(pk, x).matrix, kernel_at(pk, y).matrix)
        assert lhs <= pk.lipschitz_bound * dx + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=3))
def test_produced_kernels_are_valid(x):
    rng = np.random.default_rng(3)
    base = rng.dirichlet(np.ones(4), size=4)
    for pk in (LogisticTilt(base, np.ones(len(x))), SoftmaxMix(base, np.eye(4), np.ones(len(x)))):
        k = kernel_at(pk, x).matrix
        assert np.all(k >= 0) and np.abs(k.sum(axis=1) - 1).max() <= 1e-12


def test_stationary_at_picks_class():
    z = np.zeros((4, 4))
    z[:2, :2] = A
    z[2:, 2:] = B
    pk = ConstantKernel(z)
    with pytest.raises(ValueError):
        stationary_at(pk, [0.0])
    assert np.allclose(stationary_at(pk, [0.0], 1), [0, 0, 2 / 9, 7 / 9])
    assert np.allclose(stationary_at(ConstantKernel(A), [0.0]), [5 / 6, 1 / 6], atol=1e-14)


# -- sampling -----------------------------------------------------------------------


def test_dirac_row_is_deterministic():
    proc = MarkovNoise(ConstantKernel([[0.0, 1.0], [0.3, 0.7]])).start([0] * 50)
    rng = np.random.default_rng(0)
    assert np.all(proc.sample_next([0.0], rng) == 1)


def test_start_state_out_of_range():
    with pytest.raises(StateOutOfRange):
        MarkovNoise(ConstantKernel(A)).start([2])


@pytest.mark.parametrize("pk", [ConstantKernel([[0.2, 0.5, 0.3], [0.6, 0.0, 0.4], [0.1, 0.1, 0.8]]),
                                LogisticTilt([[0.2, 0.5, 0.3], [0.6, 0.0, 0.4], [0.1, 0.1, 0.8]], [0.8])])
def test_one_step_frequencies_match_rows(pk):
    n = 1_000_000
    s = pk.num_states
    x = [0.5]
    k = kernel_at(pk, x).matrix
    rng = np.random.default_rng(42)
    for i in range(s):
        proc = MarkovNoise(pk).start(np.full(n, i))
        z = proc.sample_next(x, rng)
        freq = np.bincount(z, minlength=s) / n
        tv = 0.5 * np.abs(freq - k[i]).sum()
        assert tv <= 3 * math.sqrt(s / n)


def test_simulate_is_reproducible_and_batch_independent():
    proc = MarkovNoise(ConstantKernel(A))
    a = simulate(proc, 500, 9, [0, 1, 2, 3], [0, 0, 1, 1])
    b = simulate(proc, 500, 9, [0, 1, 2, 3], [0, 0, 1, 1])
    c = simulate(proc, 500, 9, [2], [1])
    assert np.array_equal(a, b)
    assert np.array_equal(a[2], c[0])
    assert not np.array_equal(a[0], a[1])


# -- order-k template -------------------------------------------------------------------


def test_order_k_label_freezes():
    proc = _block_order1()
    proc.start(np.tile([0, 1, 2, 3], 25))
    rng = np.random.default_rng(1)
    assert np.all(proc.label == -1)
    proc.sample_next([0.0], rng)
    frozen = proc.label.copy()
    assert np.all(frozen >= 0)
    for _ in range(2000):
        proc.sample_next([0.0], rng)
        assert np.array_equal(proc.label, frozen)


def test_order_k_zero_freezes_at_start():
    proc = OrderKNoise(0, StateMap([0, 1], 0), [A, B]).start([0, 1])
    assert proc.label.tolist() == [0, 1]


def test_closed_class_confinement():
    proc = _block_order1()
    paths = simulate(proc, 10_000, 123, range(100), np.repeat([0, 2], 50))
    for i in range(100):
        allowed = {0, 1} if i < 50 else {2, 3}
        assert set(np.unique(paths[i]).tolist()) <= allowed


def test_sum_mod_summary():
    heads = np.array([[0, 1], [1, 1], [2, 2]])
    assert SumMod(3)(heads).tolist() == [1, 2, 1]


def test_out_of_range_label_is_reported():
    proc = OrderKNoise(0, StateMap([0, 2], 0), [A, B])
    with pytest.raises(UnresolvableLabel):
        proc.start([1])


# -- stopped sums ---------------------------------------------------------------------


def _stopped(alpha, rule, marks=(1.0, 1.0), edges=((0.5,),)):
    b = Buckets([list(e) for e in edges])
    return StoppedSumNoise(alpha, list(marks), rule, b, [A, B, A][:b.n_labels])


def test_stopped_sum_three_marks():
    proc = _stopped(0.5, DeterministicStops(1)).start([0])
    rng = np.random.default_rng(0)
    for _ in range(3):
        proc.sample_next([0.0], rng)
    assert proc.stops.tolist() == [3]
    assert proc.xi[0, 0] == pytest.approx(1.75, abs=1e-15)


def test_stopped_sum_label_follows_buckets():
    proc = _stopped(0.5, DeterministicStops(1), edges=((0.5, 1.5),))
    assert proc.n_labels == 3
    b = proc.buckets
    assert b(np.array([[0.0], [0.5], [1.49], [1.5]])).tolist() == [0, 1, 1, 2]


@pytest.mark.parametrize("rule", [DeterministicStops(1), DeterministicStops(3), GeometricStops(0.3)])
def test_stopped_sum_bound(rule):
    alpha = 0.9
    proc = StoppedSumNoise(alpha, [[1.0, 0.0], [0.0, -1.0]], rule, Buckets([[2.0], [0.0]]), [A, B, A, B])
    assert proc.mark_bound == 1.0
    simulate(proc, 5000, 17, range(64), np.zeros(64, dtype=int), keep_path=False)
    assert proc.xi_norm_max.max() <= proc.mark_bound / (1 - alpha)


def test_buckets_reject_unsorted_edges():
    with pytest.raises(ValueError):
        Buckets([[1.0, 0.5]])


# -- exact mimic ------------------------------------------------------------------------


def test_mimic_single_label_is_that_kernel():
    proc = OrderKNoise(0, StateMap([0, 0], 0), [A])
    assert exact_mimic_kernel(proc, [0.0], label_weights=[1.0]) == ConstantKernel(A).base


def test_mimic_disjoint_supports_is_block_diagonal():
    z = np.zeros((4, 4))
    k0, k1 = z.copy(), z.copy()
    k0[:2, :2] = A
    k0[2:, 2:] = np.eye(2)
    k1[2:, 2:] = B
    k1[:2, :2] = np.eye(2)
    proc = OrderKNoise(0, StateMap([0, 0, 1, 1], 0), [k0, k1])
    m = exact_mimic_kernel(proc, [0.0], start_law=[0.5, 0, 0.5, 0]).matrix
    assert np.allclose(m[:2, :2], A) and np.allclose(m[2:, 2:], B)
    assert np.all(m[:2, 2:] == 0) and np.all(m[2:, :2] == 0)


def test_mimic_overlapping_bayes_posterior():
    proc = OrderKNoise(0, StateMap([0, 1], 0), [A, B])
    pi0 = stationary_distribution(A, [0, 1])
    pi1 = stationary_distribution(B, [0, 1])
    ka, kb = np.asarray(A), np.asarray(B)
    # [DERIVED] posterior-weighted rows with label weights (1/2, 1/2)
    expect = (0.5 * pi0[:, None] * ka + 0.5 * pi1[:, None] * kb) / (0.5 * pi0 + 0.5 * pi1)[:, None]
    got = exact_mimic_kernel(proc, [0.0], label_weights=[0.5, 0.5]).matrix
    assert np.allclose(got, expect, atol=1e-14)


def test_mimic_overlapping_matches_simulation():
    from ergodic_sa.mimic import TransitionCounts, estimate_kernel

    proc = OrderKNoise(0, StateMap([0, 1], 0), [A, B])
    reps, burn, steps = 10_000, 100, 100
    paths = simulate(proc, burn + steps, 5, range(reps), np.tile([0, 1], reps // 2))
    est = estimate_kernel(TransitionCounts(2).ingest_path(paths[:, burn:])).kernel.matrix
    exact = exact_mimic_kernel(proc, [0.0], label_weights=[0.5, 0.5]).matrix
    assert 0.5 * np.abs(est - exact).sum(axis=1).max() <= 0.01


def test_mimic_matches_path_enumeration():
    k0 = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]]
    k1 = [[0.1, 0.2, 0.7], [0.4, 0.1, 0.5], [0.2, 0.6, 0.2]]
    warm = [[0.5, 0.25, 0.25], [0.2, 0.3, 0.5], [0.1, 0.1, 0.8]]
    mapping = [0, 1, 1]
    proc = OrderKNoise(1, StateMap(mapping, 1), [k0, k1], warmup=warm)
    law = np.array([0.6, 0.0, 0.4])
    joint = enumerate_order_k_mimic(warm, [k0, k1], lambda h: mapping[h[1]], 1, law, 2000, 4000)
    oracle = joint / joint.sum(axis=1, keepdims=True)
    got = exact_mimic_kernel(proc, [0.0], start_law=law).matrix
    assert np.abs(got - oracle).max() <= 1e-9
    mu = mixture_stationary(proc, [0.0], start_law=law)
    assert np.abs(mu - joint.sum(axis=1)).max() <= 1e-9


def test_mimic_unresolvable_label():
    proc = OrderKNoise(0, StateMap([0, 0], 0), [A, B])
    with pytest.raises(UnresolvableLabel):
        exact_mimic_kernel(proc, [0.0], label_weights=[0.5, 0.5])
    z = np.eye(2)
    two_class = OrderKNoise(0, StateMap([0, 0], 0), [z])
    with pytest.raises(UnresolvableLabel):
        exact_mimic_kernel(two_class, [0.0], label_weights=[1.0])


def test_mimic_of_markov_is_kernel():
    pk = LogisticTilt(UNIFORM2, [1.0])
    assert exact_mimic_kernel(MarkovNoise(pk), [0.3]) == kernel_at(pk, [0.3])


def test_mimic_not_defined_for_stopped_sum():
    with pytest.raises(TypeError):
        exact_mimic_kernel(_stopped(0.5, DeterministicStops(1)), [0.0])


def test_markov_extremal_structure_reference():
    z = np.zeros((4, 4))
    z[:2, :2] = A
    z[2:, 2:] = B
    d = doeblin_decompose(z)
    assert d.n_classes == 2
