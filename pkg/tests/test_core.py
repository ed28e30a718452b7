"""Low-level numeric kernel tests: matmul, reductions, minibatch sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muprune import derive_rng, derive_seed, make_rng, matmul, reduce_std, sample_minibatch
from muprune.errors import ShapeMismatchError


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def test_matmul_matches_triple_loop():
    rng = make_rng(1)
    for _ in range(10):
        m, k, n = rng.integers(1, 7, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        got = matmul(a, b)
        want = naive_matmul(a, b)
        assert got.shape == (m, n)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_matmul_identity():
    rng = make_rng(2)
    a = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(matmul(a, np.eye(4)), a)


def test_matmul_rejects_bad_ranks_and_shapes():
    with pytest.raises(ShapeMismatchError):
        matmul(np.zeros(3), np.zeros((3, 2)))
    with pytest.raises(ShapeMismatchError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3, 1)))
    with pytest.raises(ShapeMismatchError) as err:
        matmul(np.zeros((2, 3)), np.zeros((4, 5)))
    # the message must name both offending shapes
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_reduce_std_worked_example():
    x = np.array([1.0, 2.0, 3.0])
    assert reduce_std(x, divisor_mode="sample") == pytest.approx(1.0, rel=1e-15)
    assert reduce_std(x, divisor_mode="population") == pytest.approx(
        np.sqrt(2.0 / 3.0), rel=1e-15
    )


def test_reduce_std_matches_numpy_ddof():
    rng = make_rng(3)
    x = rng.standard_normal(257)
    assert reduce_std(x, divisor_mode="sample") == pytest.approx(
        np.std(x, ddof=1), rel=1e-13
    )
    assert reduce_std(x, divisor_mode="population") == pytest.approx(
        np.std(x, ddof=0), rel=1e-13
    )


def test_reduce_std_rejects_unknown_mode():
    with pytest.raises(ValueError):
        reduce_std(np.ones(3), divisor_mode="bessel")


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40),
    st.floats(-100, 100),
    st.floats(0.1, 10),
)
def test_reduce_std_translation_and_scale(values, shift, scale):
    x = np.asarray(values)
    base = reduce_std(x, divisor_mode="population")
    shifted = reduce_std(x + shift, divisor_mode="population")
    scaled = reduce_std(scale * x, divisor_mode="population")
    assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert scaled == pytest.approx(scale * base, rel=1e-9, abs=1e-9)


def test_sample_minibatch_without_replacement_is_permutation():
    rng = make_rng(4)
    idx = sample_minibatch(rng, 10, 10, with_replacement=False)
    assert sorted(idx.tolist()) == list(range(10))


def test_sample_minibatch_subset_bounds_and_size():
    rng = make_rng(5)
    idx = sample_minibatch(rng, 100, 7, with_replacement=False)
    assert idx.shape == (7,)
    assert len(set(idx.tolist())) == 7
    assert idx.min() >= 0 and idx.max() < 100

    idx_r = sample_minibatch(rng, 5, 64, with_replacement=True)
    assert idx_r.shape == (64,)
    assert idx_r.min() >= 0 and idx_r.max() < 5


def test_sample_minibatch_deterministic_per_seed():
    a = sample_minibatch(make_rng(9), 50, 20, with_replacement=True)
    b = sample_minibatch(make_rng(9), 50, 20, with_replacement=True)
    c = sample_minibatch(make_rng(10), 50, 20, with_replacement=True)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_minibatch_rejects_oversized_draw_without_replacement():
    with pytest.raises(ValueError):
        sample_minibatch(make_rng(0), 5, 6, with_replacement=False)
    with pytest.raises(ValueError):
        sample_minibatch(make_rng(0), 0, 1, with_replacement=True)


def test_derive_seed_is_deterministic_and_path_sensitive():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    # derived streams differ from the root stream
    root = make_rng(1).integers(0, 2**32)
    child = derive_rng(1, 0).integers(0, 2**32)
    assert root != child


def test_derive_rng_streams_are_independent():
    a = derive_rng(0, 1).standard_normal(8)
    b = derive_rng(0, 2).standard_normal(8)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, derive_rng(0, 1).standard_normal(8))
