"""Lloyd-Max design and quantization tests."""

import numpy as np
import pytest

from dsckit.model import DegenerateDataError
from dsckit.quantizer import design_lloyd_max, quantize, quantize_array


def test_two_point_symmetry():
    samples = np.array([-1.0, 1.0] * 50)
    q = design_lloyd_max(samples, 2)
    assert q.codewords == pytest.approx([-1.0, 1.0])
    assert q.boundaries == pytest.approx([0.0])


def test_gaussian_one_bit_optimum():
    # the optimal 1-bit quantizer of a standard normal puts codewords at
    # +/- sqrt(2/pi); compare against the matching sample statistic
    rng = np.random.default_rng(12)
    samples = rng.standard_normal(20000)
    q = design_lloyd_max(samples, 2)
    analytic = np.sqrt(2.0 / np.pi)
    assert abs(q.codewords[1] - analytic) / analytic < 0.02
    assert abs(-q.codewords[0] - analytic) / analytic < 0.02
    sample_estimate = samples[samples > np.median(samples)].mean()
    assert q.codewords[1] == pytest.approx(sample_estimate, rel=0.02)


def test_thirty_two_regions():
    rng = np.random.default_rng(1)
    q = design_lloyd_max(rng.standard_normal(20000), 32)
    assert q.region_count == 32
    assert np.all(np.diff(q.codewords) > 0)
    assert np.all(np.diff(q.boundaries) > 0)


def test_monotone_descent_per_iteration():
    rng = np.random.default_rng(2)
    history = []
    design_lloyd_max(rng.standard_normal(5000), 8, history=history)
    assert len(history) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_degenerate_data_rejected():
    with pytest.raises(DegenerateDataError):
        design_lloyd_max(np.full(100, 3.25), 2)


def test_left_closed_convention():
    q = design_lloyd_max(np.array([-1.0, 1.0] * 10), 2)
    assert quantize(-3.0, q) == 0
    assert quantize(0.0, q) == 1  # boundary belongs to the right region


def test_quantize_matches_linear_scan():
    rng = np.random.default_rng(3)
    q = design_lloyd_max(rng.standard_normal(3000), 16)
    xs = rng.uniform(-4, 4, size=500)
    got = quantize_array(xs, q)
    for x, g in zip(xs, got):
        scan = 0
        for b in q.boundaries:
            if x >= b:
                scan += 1
            else:
                break
        assert scan == g == quantize(x, q)


def test_quantize_monotone():
    rng = np.random.default_rng(4)
    q = design_lloyd_max(rng.standard_normal(2000), 8)
    xs = np.sort(rng.uniform(-5, 5, size=300))
    idx = quantize_array(xs, q)
    assert np.all(np.diff(idx) >= 0)
