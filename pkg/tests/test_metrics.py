import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otmdr.metrics import (
    DEFAULT_BINS,
    calibrated_metrics,
    compute_metrics,
    expected_calibration_error,
    nll_at_temperature,
    probs_to_logits,
    temperature_scale,
)


def calibrated_logits():
    """Rows with rational softmax probabilities, labels in exactly those proportions.

    d NLL / d(1/T) at T=1 is sum_n (z_{n,y} - E_p z_n), which vanishes group by
    group, so T=1 is the exact optimum.
    """
    groups = [
        (np.log([1.0, 3.0]), [1, 3]),
        (np.log([1.0, 4.0]), [1, 4]),
        (np.log([2.0, 3.0]), [2, 3]),
    ]
    rows, labels = [], []
    for z, counts in groups:
        for c, k in enumerate(counts):
            rows += [z] * k
            labels += [c] * k
    return np.array(rows), np.array(labels)


def three_class_calibrated():
    z = np.log([1.0, 2.0, 3.0])
    return np.tile(z, (6, 1)), np.array([0, 1, 1, 2, 2, 2])


def grid_temperature(logits, labels, step=1e-3):
    ts = np.arange(0.05, 10.0 + step / 2, step)
    vals = [nll_at_temperature(logits, labels, t) for t in ts]
    return float(ts[int(np.argmin(vals))])


def random_probs(seed, n=200, c=4):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, c)) * 3
    p = np.exp(z - z.max(axis=1, keepdims=True))
    return p / p.sum(axis=1, keepdims=True), rng.integers(0, c, size=n)


class TestComputeMetrics:
    def test_one_hot_correct(self):
        m = compute_metrics(np.eye(3)[[0, 1, 2, 1]], [0, 1, 2, 1])
        assert (m.acc, m.nll, m.brier, m.ece, m.aac) == (1.0, 0.0, 0.0, 0.0, 0.0)

    def test_two_sample_fixture(self):
        m = compute_metrics(np.array([[0.8, 0.2], [0.6, 0.4]]), [0, 1])
        assert m.acc == 0.5
        assert abs(m.nll - (-(math.log(0.8) + math.log(0.4)) / 2)) < 1e-9
        assert abs(m.nll - 0.5697171415941173) < 1e-9
        assert abs(m.brier - 0.40) < 1e-9
        # bins hold one sample each: 0.5*|1-0.8| + 0.5*|0-0.6|
        assert abs(m.ece - 0.4) < 1e-9
        assert abs(m.aac - 0.6) < 1e-9

    def test_default_bins(self):
        assert DEFAULT_BINS == 15

    def test_ties_go_to_lowest_class(self):
        m = compute_metrics(np.array([[0.5, 0.5], [0.5, 0.5]]), [0, 1])
        assert m.acc == 0.5

    def test_nll_clamped(self):
        m = compute_metrics(np.array([[1.0, 0.0]]), [1])
        assert m.nll == pytest.approx(-math.log(1e-12), rel=1e-15)
        assert m.brier == 2.0

    def test_non_simplex_row_named(self):
        p = np.array([[0.5, 0.5], [0.7, 0.7], [1.0, 0.0]])
        with pytest.raises(ValueError, match="row 1"):
            compute_metrics(p, [0, 0, 0])
        with pytest.raises(ValueError, match="row 0"):
            compute_metrics(np.array([[1.1, -0.1]]), [0])

    def test_acc_is_exact_fraction(self):
        p, y = random_probs(3, n=7)
        assert compute_metrics(p, y).acc == int(np.sum(p.argmax(1) == y)) / 7

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_ranges_and_order_invariance(self, seed):
        p, y = random_probs(seed)
        m = compute_metrics(p, y)
        assert 0.0 <= m.brier <= 2.0 and m.nll >= 0.0 and 0.0 <= m.ece <= 1.0 and 0.0 <= m.aac <= 1.0
        perm = np.random.default_rng(seed + 1).permutation(len(y))
        mp = compute_metrics(p[perm], y[perm])
        for f in ("acc", "nll", "brier", "ece", "aac"):
            assert getattr(mp, f) == pytest.approx(getattr(m, f), abs=1e-12)


class TestECE:
    def test_perfectly_calibrated_stream(self):
        # 100 confidence levels in (0.5, 1), 100 samples each, round(100 c) of them correct
        probs, labels = [], []
        for j in range(100):
            c = 0.5 + (j + 0.5) / 200
            k = int(round(100 * c))
            probs += [[c, 1 - c]] * 100
            labels += [0] * k + [1] * (100 - k)
        probs = np.array(probs)
        assert probs.shape[0] == 10_000
        assert expected_calibration_error(probs, labels) < 0.01

    def test_overconfident(self):
        probs = np.tile([0.9, 0.1], (10, 1))
        labels = [0] * 5 + [1] * 5
        assert expected_calibration_error(probs, labels) == pytest.approx(0.4, abs=1e-12)

    def test_empty_bins_skipped(self):
        # all mass in one bin, result equals that bin's gap
        probs = np.tile([0.97, 0.03], (4, 1))
        assert expected_calibration_error(probs, [0, 0, 0, 1], n_bins=15) == pytest.approx(abs(0.75 - 0.97), abs=1e-12)


class TestTemperature:
    @pytest.mark.parametrize("case", [calibrated_logits, three_class_calibrated])
    def test_fixed_point(self, case):
        z, y = case()
        assert abs(temperature_scale(z, y) - 1.0) < 1e-3

    @pytest.mark.parametrize("case", [calibrated_logits, three_class_calibrated])
    def test_recovers_two(self, case):
        z, y = case()
        t = temperature_scale(2.0 * z, y)
        assert abs(t - 2.0) < 1e-2
        assert abs(t - grid_temperature(2.0 * z, y)) < 2e-3

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_never_increases_nll(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(50, 3)) * rng.uniform(0.1, 20)
        y = rng.integers(0, 3, size=50)
        t = temperature_scale(z, y)
        assert 0.05 <= t <= 10.0
        assert nll_at_temperature(z, y, t) <= nll_at_temperature(z, y, 1.0)

    def test_argmax_invariant(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(30, 5))
        for t in (0.1, 0.5, 3.0, 9.0):
            np.testing.assert_array_equal((z / t).argmax(1), z.argmax(1))

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            temperature_scale(np.zeros((1, 2)), [0])

    def test_calibrated_metrics_fields(self):
        z, y = calibrated_logits()
        rec = calibrated_metrics(3.0 * z, y, 3.0 * z, y)
        assert rec.temperature == pytest.approx(3.0, abs=1e-2)
        assert rec.ece_raw is not None and rec.ece_calibrated == rec.ece
        assert rec.nll <= compute_metrics(_sm(3.0 * z), y).nll
        np.testing.assert_allclose(np.exp(probs_to_logits(_sm(z))), _sm(z), rtol=1e-14)
        assert set(rec.as_dict()) == {"acc", "nll", "brier", "ece", "aac", "temperature", "ece_raw", "ece_calibrated"}


def _sm(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
