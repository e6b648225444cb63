import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otmdr import BACKEND, _fallback, kernels

core = pytest.importorskip("otmdr._core")

# SplitMix64 reference outputs for state 0 (Vigna's published generator)
SPLITMIX_STATE0 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


class TestBackendSelection:
    def test_compiled_core_active(self):
        assert BACKEND == "cython"
        assert kernels.normal_block is core.normal_block


class TestSplitMix:
    @pytest.mark.parametrize("impl", [_fallback, core], ids=["python", "cython"])
    def test_reference_vector(self, impl):
        assert [int(x) for x in impl.splitmix_block(0, 0, 3)] == SPLITMIX_STATE0

    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(0, 300))
    @settings(max_examples=60, deadline=None)
    def test_backends_bit_equal(self, key, start, n):
        np.testing.assert_array_equal(core.splitmix_block(key, start, n), _fallback.splitmix_block(key, start, n))
        np.testing.assert_array_equal(core.uniform_block(key, start, n), _fallback.uniform_block(key, start, n))

    def test_counter_offset(self):
        block = core.splitmix_block(99, 0, 10)
        np.testing.assert_array_equal(core.splitmix_block(99, 4, 6), block[4:])


class TestNormals:
    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(1, 301))
    @settings(max_examples=60, deadline=None)
    def test_backends_agree_to_ulps(self, key, start, n):
        a = core.normal_block(key, start, n)
        b = _fallback.normal_block(key, start, n)
        assert a.shape == b.shape == (n,)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-14)

    def test_odd_length_is_prefix_of_even(self):
        np.testing.assert_array_equal(core.normal_block(5, 0, 7), core.normal_block(5, 0, 8)[:7])

    def test_moments(self):
        z = core.normal_block(123, 0, 200_000)
        assert abs(z.mean()) < 4 / np.sqrt(z.size)
        assert abs(z.var() - 1.0) < 0.02


class TestPairwiseSum:
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), max_size=200))
    @settings(max_examples=100, deadline=None)
    def test_backends_bit_equal(self, values):
        assert core.pairwise_sum(values) == _fallback.pairwise_sum(values)

    def test_tree_order(self):
        # ((a0+a1)+(a2+a3))+a4 for five terms
        v = [1e16, 1.0, -1e16, 1.0, 3.0]
        expected = ((v[0] + v[1]) + (v[2] + v[3])) + v[4]
        assert core.pairwise_sum(v) == expected

    def test_input_not_mutated(self):
        a = np.arange(9, dtype=np.float64)
        core.pairwise_sum(a)
        np.testing.assert_array_equal(a, np.arange(9))

    def test_empty(self):
        assert core.pairwise_sum([]) == 0.0


class TestSoftmaxXent:
    def test_backends_agree(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(50, 7)) * 10
        y = rng.integers(0, 7, size=50)
        la, pa = core.softmax_xent(z, y)
        lb, pb = _fallback.softmax_xent(z, y)
        np.testing.assert_allclose(la, lb, rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(pa, pb, rtol=1e-13, atol=1e-15)

    def test_definition(self):
        z = np.array([[0.0, np.log(3.0)], [1000.0, 0.0]])
        losses, probs = core.softmax_xent(z, np.array([1, 1]))
        np.testing.assert_allclose(probs[0], [0.25, 0.75], rtol=1e-15)
        np.testing.assert_allclose(losses, [-np.log(0.75), 1000.0], rtol=1e-14)
