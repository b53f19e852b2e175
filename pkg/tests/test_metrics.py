import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biphoton_scatter.grid import make_grid
from biphoton_scatter.metrics import (
    MetricsError,
    MetricsReport,
    NoScatteringError,
    dominant_frequency,
    estimate_strength,
    mtf,
    predict_ratio,
    rms,
)
from biphoton_scatter.pipeline import Configuration, lines_object

from oracles import naive_mtf_1d

BOTH, ONE = Configuration.BOTH_PHOTONS, Configuration.ONE_ARM
THREE_LINE_MTF = 0.185993168069438  # plain-DFT oracle, three 8 px lines, 16 px gaps, M=128


@given(st.floats(0.01, 1.0), st.integers(4, 60))
def test_cosine_mtf_is_half_contrast(C, k0):
    x = np.arange(128)
    img = 1 + C * np.cos(2 * np.pi * k0 * x / 128)
    m, k = mtf(img, img)
    assert k == k0
    assert abs(m - C / 2) < 1e-9


def test_three_line_mask_regression():
    t = lines_object(make_grid(128)).transmission
    m, k0 = mtf(t, t)
    assert k0 == 5
    assert m == pytest.approx(THREE_LINE_MTF, abs=1e-12)
    assert m == pytest.approx(naive_mtf_1d(t, t)[0], abs=1e-12)


def test_mtf_2d_annulus():
    y, x = np.mgrid[:64, :64]
    img = 1 + 0.4 * np.cos(2 * np.pi * (6 * x + 8 * y) / 64)
    m, k0 = mtf(img, img)
    assert k0 == pytest.approx(10.0)
    assert m == pytest.approx(0.2, abs=1e-9)


def test_no_dominant_frequency():
    with pytest.raises(MetricsError, match="dominant"):
        mtf(np.ones(64), np.ones(64))
    with pytest.raises(MetricsError, match="dominant"):
        dominant_frequency(np.exp(-((np.arange(256) - 128.0) / 6) ** 2))
    delta = np.zeros(128)
    delta[40] = 1.0
    with pytest.raises(MetricsError, match="dominant"):
        dominant_frequency(delta)


@given(st.floats(1e-3, 1e3), st.integers(0, 127))
def test_mtf_scale_and_translation(c, shift):
    x = np.arange(128)
    truth = 1 + 0.5 * np.cos(2 * np.pi * 8 * x / 128)
    img = np.exp(-((x - 64) ** 2) / 800) * truth
    base = mtf(img, truth)[0]
    assert mtf(c * img, truth)[0] == pytest.approx(base, rel=1e-12)
    assert abs(mtf(np.roll(img, shift), truth)[0] - base) < 1e-9


def test_rms_limits():
    a = np.array([1.0, 2.0, 3.0, 0.0])
    assert rms(a, 2 * a) == 0
    assert rms(np.array([1.0, 0, 0]), np.array([0, 0, 5.0])) == pytest.approx(1.0)
    with pytest.raises(MetricsError):
        rms(np.zeros(3), a[:3])
    with pytest.raises(MetricsError):
        rms(-a, a)


@given(st.lists(st.floats(0, 10), min_size=4, max_size=4), st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_rms_symmetric_and_bounded(a, b):
    a, b = np.array(a), np.array(b)
    if a.sum() <= 0 or b.sum() <= 0:
        return
    r = rms(a, b)
    assert r == pytest.approx(rms(b, a), abs=1e-15)
    assert -1e-15 <= r <= 1 + 1e-15


def test_closed_form_examples():
    assert predict_ratio(3.4, BOTH) == pytest.approx(math.sqrt(1 + 3 * 3.4**2))
    assert predict_ratio(3.4, BOTH) == pytest.approx(5.97, abs=0.005)
    assert predict_ratio(6.8, ONE) == pytest.approx(8.35, abs=0.01)
    assert abs(estimate_strength(predict_ratio(3.4, BOTH), 1.0, BOTH) - 3.4) < 1e-12
    assert abs(estimate_strength(predict_ratio(6.8, ONE), 1.0, ONE) - 6.8) < 1e-12
    assert estimate_strength(1.0, 1.0, BOTH) == 0.0
    assert predict_ratio(0.0, BOTH) == 1.0


@given(st.floats(0.1, 100.0), st.sampled_from([BOTH, ONE]), st.floats(0.5, 20))
def test_round_trip_exact(s, conf, w0):
    r = predict_ratio(s, conf)
    assert abs(estimate_strength(r * w0, w0, conf) - s) <= 1e-12 * max(1.0, s)


@given(st.floats(1e-6, 0.1), st.sampled_from([BOTH, ONE]))
def test_round_trip_weak_scattering(s, conf):
    # r - 1 ~ s^2 here, so only s^2 survives the round trip to machine precision
    r = predict_ratio(s, conf)
    est = estimate_strength(r, 1.0, conf)
    assert abs(3 * est**2 - 3 * s**2) <= 8 * np.finfo(float).eps * r**2 * (2 if conf is ONE else 1)


def test_below_minimum_ratio_is_no_scattering():
    with pytest.raises(NoScatteringError, match="no measurable scattering"):
        estimate_strength(0.9, 1.0, BOTH)
    with pytest.raises(NoScatteringError):
        estimate_strength(0.6, 1.0, ONE)


def test_report_serialization():
    rep = MetricsReport(0.1, 0.2, 16.0, 5.0, 1.0, 1.4)
    text = rep.as_text()
    assert "mtf = 0.1\n" in text and "k0_band = 2\n" in text
    assert rep.as_row()["strength_estimate"] == 1.4
