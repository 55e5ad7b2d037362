import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodic_sa.errors import (
    ClassTooLarge, InvalidKernel, NotClosed, NotIrreducible, WeightMismatch,
)
from ergodic_sa.markov_core import (
    Kernel,
    absorption_probabilities,
    communicating_classes,
    doeblin_decompose,
    invariant_mixture,
    limiting_distribution,
    spectral_gap,
    stationary_distribution,
    stationary_residual,
)
from oracles import block_kernel, brute_force_classes, power_stationary, random_kernel, two_state_stationary

SWAP = [[0.0, 1.0], [1.0, 0.0]]
TWO = [[0.9, 0.1], [0.5, 0.5]]


# -- kernel type ------------------------------------------------------------


def test_kernel_rejects_bad_rows():
    with pytest.raises(InvalidKernel):
        Kernel([[0.5, 0.4], [0.5, 0.5]])
    with pytest.raises(InvalidKernel):
        Kernel([[1.5, -0.5], [0.5, 0.5]])
    with pytest.raises(InvalidKernel):
        Kernel([[np.nan, 1.0], [0.5, 0.5]])
    with pytest.raises(InvalidKernel):
        Kernel([[1.0, 0.0]])


def test_kernel_is_immutable():
    k = Kernel(TWO)
    with pytest.raises(ValueError):
        k.matrix[0, 0] = 0.0


def test_normalized_rows_sum_to_one():
    rng = np.random.default_rng(0)
    for s in (1, 3, 17, 50):
        k = Kernel.normalized(rng.random((s, s)) * 7)
        assert np.abs(k.matrix.sum(axis=1) - 1).max() <= 1e-12


def test_text_roundtrip_is_exact():
    rng = np.random.default_rng(1)
    k = Kernel(random_kernel(rng, 6, 0.4))
    back = Kernel.from_text(k.to_text())
    # repr floats are exact; renormalization may move entries by an ulp
    assert np.abs(back.matrix - k.matrix).max() <= 1e-15


def test_text_parser_tolerance():
    ok = "2\n0.5 0.5000000001\n0.3 0.7\n"
    k = Kernel.from_text(ok)
    assert np.abs(k.matrix.sum(axis=1) - 1).max() <= 1e-12
    with pytest.raises(InvalidKernel):
        Kernel.from_text("2\n0.5 0.51\n0.3 0.7\n")
    with pytest.raises(InvalidKernel):
        Kernel.from_text("3\n0.5 0.5\n0.3 0.7\n")


# -- stationary distribution -------------------------------------------------


def test_stationary_two_cycle():
    assert np.allclose(stationary_distribution(SWAP, [0, 1]), [0.5, 0.5], atol=1e-14)


def test_stationary_two_state_closed_form():
    # [DERIVED] pi = (q, p) / (p + q) for [[1-p, p], [q, 1-q]]
    assert np.allclose(stationary_distribution(TWO, [0, 1]), two_state_stationary(0.1, 0.5), atol=1e-14)
    assert np.allclose(stationary_distribution(TWO, [0, 1]), [5 / 6, 1 / 6], atol=1e-14)


def test_stationary_absorbing_state():
    assert np.array_equal(stationary_distribution([[1.0]], [0]), [1.0])
    p = [[1.0, 0.0], [0.3, 0.7]]
    assert np.array_equal(stationary_distribution(p, [0]), [1.0, 0.0])


def test_stationary_errors():
    p = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.3, 0.2]]
    with pytest.raises(NotClosed):
        stationary_distribution(p, [2])
    with pytest.raises(NotIrreducible):
        stationary_distribution(p, [0, 1])


def test_stationary_zero_off_class():
    rng = np.random.default_rng(2)
    p = block_kernel(rng, [3, 4], 2)
    pi = stationary_distribution(p, [3, 4, 5, 6])
    assert np.all(pi[[0, 1, 2, 7, 8]] == 0)


@pytest.mark.parametrize("seed", range(10))
def test_stationary_matches_power_iteration(seed):
    rng = np.random.default_rng(100 + seed)
    s = int(rng.integers(2, 30))
    p = rng.random((s, s)) + 0.01  # positive, hence aperiodic and irreducible
    p /= p.sum(axis=1, keepdims=True)
    pi = stationary_distribution(p, range(s))
    assert stationary_residual(p, pi) <= 1e-12
    assert np.abs(pi - power_stationary(p)).max() <= 1e-8


# -- decomposition ------------------------------------------------------------


def test_decompose_two_blocks():
    p = np.zeros((4, 4))
    p[:2, :2] = SWAP
    p[2:, 2:] = SWAP
    d = doeblin_decompose(p)
    assert d.classes == ((0, 1), (2, 3))
    assert d.transient == ()


def test_decompose_transient_feeder():
    d = doeblin_decompose([[1, 0, 0], [0, 1, 0], [0.5, 0.3, 0.2]])
    assert d.classes == ((0,), (1,))
    assert d.transient == (2,)
    assert d.class_of(2) == -1 and d.class_of(1) == 1


def test_decompose_irreducible():
    d = doeblin_decompose(TWO)
    assert d.classes == ((0, 1),) and d.transient == ()
    assert d.gaps[0] == pytest.approx(0.6, abs=1e-12)


def _check_against_oracle(p):
    d = doeblin_decompose(p)
    closed, transient = brute_force_classes(p)
    assert sorted(d.classes) == closed
    assert list(d.transient) == transient
    # partition
    flat = sorted([s for c in d.classes for s in c] + list(d.transient))
    assert flat == list(range(p.shape[0]))
    for c, e in zip(d.classes, d.extremals):
        assert stationary_residual(p, e) <= 1e-12
        mask = np.ones(p.shape[0], dtype=bool)
        mask[list(c)] = False
        assert np.all(e[mask] == 0)
        assert abs(e.sum() - 1) <= 1e-12
    return d


def test_decompose_matches_oracle_on_random_kernels():
    rng = np.random.default_rng(2024)
    for i in range(200):
        s = int(rng.integers(1, 51))
        if i % 2:
            p = random_kernel(rng, s, float(rng.uniform(0.02, 0.3)))
        else:
            n_blocks = int(rng.integers(1, 4))
            sizes = [max(1, s // (n_blocks + 1))] * n_blocks
            p = block_kernel(rng, sizes, max(0, s - sum(sizes)))
        _check_against_oracle(p)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0.05, 0.6), st.integers(0, 2**32 - 1))
def test_decompose_property(s, density, seed):
    p = random_kernel(np.random.default_rng(seed), s, density)
    _check_against_oracle(p)


def test_communicating_classes_cover_state_space():
    p = block_kernel(np.random.default_rng(5), [2, 3], 3)
    comps = communicating_classes(p)
    assert sorted(s for c in comps for s in c) == list(range(8))


def test_same_structure():
    a = doeblin_decompose(TWO)
    b = doeblin_decompose([[0.5, 0.5], [0.5, 0.5]])
    c = doeblin_decompose(np.eye(2))
    assert a.same_structure(b)
    assert not a.same_structure(c)


# -- spectral gap ---------------------------------------------------------------


def test_gap_periodic_is_zero():
    assert spectral_gap(SWAP, [0, 1]) == pytest.approx(0.0, abs=1e-12)


def test_gap_rank_one_is_one():
    row = [0.2, 0.3, 0.5]
    assert spectral_gap([row] * 3, [0, 1, 2]) == pytest.approx(1.0, abs=1e-12)


def test_gap_two_state_trace_identity():
    # [DERIVED] for 2x2 stochastic P, lambda_2 = trace - 1
    for p, q in [(0.1, 0.5), (0.01, 0.04), (0.7, 0.7)]:
        m = [[1 - p, p], [q, 1 - q]]
        assert spectral_gap(m, [0, 1]) == pytest.approx(1 - abs(1 - p - q), abs=1e-12)


def test_gap_repeated_unit_eigenvalue_removes_one_copy():
    # identity on a class is reducible, but a 3-cycle has eigenvalues on the unit circle
    cyc = np.roll(np.eye(3), 1, axis=1)
    assert spectral_gap(cyc, [0, 1, 2]) == pytest.approx(0.0, abs=1e-12)


def test_gap_permutation_invariance():
    rng = np.random.default_rng(77)
    for _ in range(50):
        s = int(rng.integers(2, 20))
        p = rng.random((s, s)) * (rng.random((s, s)) < 0.5) + np.eye(s) * 0.01
        p[np.arange(s), (np.arange(s) + 1) % s] += 0.01  # a spanning cycle makes it irreducible
        k = Kernel.normalized(p)
        perm = rng.permutation(s)
        g = spectral_gap(k, range(s))
        assert spectral_gap(k.permuted(perm), range(s)) == pytest.approx(g, abs=1e-9)


def test_gap_large_class_rejected():
    s = 65
    p = np.full((s, s), 1.0 / s)
    with pytest.raises(ClassTooLarge):
        spectral_gap(p, range(s))
    assert np.isnan(doeblin_decompose(p).gaps[0])


# -- mixtures ----------------------------------------------------------------------


def _two_block():
    p = np.zeros((4, 4))
    p[:2, :2] = SWAP
    p[2:, 2:] = SWAP
    return p


def test_mixture_examples():
    d = doeblin_decompose(_two_block())
    assert np.array_equal(invariant_mixture(d, [1, 0]), d.extremals[0])
    assert np.allclose(invariant_mixture(d, [0.5, 0.5]), [0.25] * 4, atol=1e-15)
    single = doeblin_decompose(TWO)
    assert np.allclose(invariant_mixture(single, [1.0]), [5 / 6, 1 / 6])
    with pytest.raises(WeightMismatch):
        invariant_mixture(d, [1.0])


def test_mixture_is_stationary_for_random_weights():
    rng = np.random.default_rng(9)
    p = block_kernel(rng, [3, 2, 4], 3)
    d = doeblin_decompose(p)
    for _ in range(50):
        w = rng.dirichlet(np.ones(d.n_classes))
        assert stationary_residual(p, invariant_mixture(d, w)) <= 1e-12


def test_limiting_distribution_from_transient_start():
    p = [[1, 0, 0], [0, 1, 0], [0.5, 0.3, 0.2]]
    # [DERIVED] absorption from 2: 0.5/0.8 into {0}, 0.3/0.8 into {1}
    assert np.allclose(absorption_probabilities(p)[2], [0.625, 0.375])
    assert np.allclose(limiting_distribution(p, [0, 0, 1]), [0.625, 0.375, 0.0])
