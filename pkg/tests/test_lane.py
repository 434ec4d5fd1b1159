import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.stats import binom, pearsonr

from reisim.geometry import Side
from reisim.lane import (
    CountWindow,
    DegenerateSeries,
    NonIdentifiable,
    ReadRateCurve,
    cross_correlation,
    cross_correlation_lags,
    estimate_position,
    estimate_series,
    log_likelihood,
    merge_sides,
    tau_max,
    window_counts,
)

from support import grid_oracle, lane_instance

CURVE = ReadRateCurve.plateau(0.8, -2.0, 2.2, start=-4.0)


def test_curve_interpolates_and_holds_ends():
    c = ReadRateCurve((-1.0, 0.0, 1.0), (0.9, 0.5, 0.1))
    assert c(-0.5) == pytest.approx(0.7)
    assert c(-7.0) == 0.9 and c(7.0) == 0.1
    assert c.half_width() == 1.0


@pytest.mark.parametrize("x, p", [((0.0,), (0.5,)), ((0.0, 0.0), (0.5, 0.5)), ((0.0, 1.0), (0.5, 1.5))])
def test_curve_validation(x, p):
    with pytest.raises(ValueError):
        ReadRateCurve(x, p)


def test_curve_csv_round_trip(tmp_path):
    path = tmp_path / "curve.csv"
    CURVE.to_csv(path)
    assert path.read_text().splitlines()[0] == "offset_m,probability"
    back = ReadRateCurve.from_csv(path)
    assert back.offsets == CURVE.offsets and back.probabilities == CURVE.probabilities


def test_plateau_shape():
    assert CURVE(-3.0) == 0.8 and CURVE(-2.0) == 0.8 and CURVE(2.2) == 0.0
    assert CURVE(0.1) == pytest.approx(0.4)


@given(W=st.floats(2.0, 5.0), v=st.floats(1.0, 40.0), a=st.floats(0.0, 1.2))
def test_tau_max_formula(W, v, a):
    assert tau_max(W, v, a) == pytest.approx(W / (2 * v * math.cos(a)))


def test_tau_max_rejects_bad_input():
    with pytest.raises(ValueError):
        tau_max(3.6, 0.0, 0.0)


@dataclass
class _Ev:
    t: float


def test_window_counts_exact():
    rounds = [0.00, 0.03, 0.06, 0.09, 0.12, 0.15, 0.18]
    # two reads in the first round count once; one read in round 0.12
    trace = [_Ev(0.01), _Ev(0.02), _Ev(0.13)]
    w = window_counts(trace, 0.1, Side.right, rounds, 0.0, 0.2)
    assert [(c.n, c.z_left, c.z_right) for c in w] == [(4, 0, 1), (3, 0, 1)]
    wl = window_counts(trace, 0.1, "left", rounds, 0.0, 0.2)
    assert [(c.z_left, c.z_right) for c in wl] == [(1, 0), (1, 0)]
    m = merge_sides(wl, w)
    assert (m[0].z_left, m[0].z_right, m[0].n_r) == (1, 1, 4)
    with pytest.raises(ValueError):
        merge_sides(wl, w[:1])


@given(pos=st.floats(-2, 2), n=st.integers(1, 100), data=st.data())
def test_log_likelihood_matches_binomial_oracle(pos, n, data):
    zl = data.draw(st.integers(0, n))
    zr = data.draw(st.integers(0, n))
    pl, pr = CURVE(-pos), CURVE(pos)
    expect = binom.logpmf(zl, n, pl) + binom.logpmf(zr, n, pr)
    got = log_likelihood(pos, zl, zr, n, CURVE)
    if math.isinf(expect):
        assert got == expect
    else:
        assert got == pytest.approx(expect, rel=1e-9, abs=1e-9)


def test_mle_matches_grid_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        curve, _, n, zl, zr, prev = lane_instance(rng)
        e = estimate_position(zl, zr, n, curve, prev, bounds=(-1.8, 1.8))
        g, best = grid_oracle(zl, zr, n, curve, prev)
        assert abs(e.pos - g) <= 5e-4 or e.log_likelihood >= best - 1e-9


def test_closed_form_and_iterative_agree():
    rng = np.random.default_rng(12)
    for _ in range(200):
        curve, _, n, zl, zr, prev = lane_instance(rng)
        a = estimate_position(zl, zr, n, curve, prev, bounds=(-1.8, 1.8))
        b = estimate_position(zl, zr, n, curve, prev, bounds=(-1.8, 1.8), method="iterative")
        assert abs(a.pos - b.pos) <= 1e-3


@settings(max_examples=200, deadline=None)
@given(n=st.integers(5, 200), fl=st.floats(0, 1), fr=st.floats(0, 1), prev=st.floats(-1, 1))
def test_mirror_equivariance(n, fl, fr, prev):
    zl, zr = round(fl * n), round(fr * n)
    assume(not (zl == zr and prev == 0.0))
    a = estimate_position(zl, zr, n, CURVE, prev)
    b = estimate_position(zr, zl, n, CURVE, -prev)
    assert b.pos == -a.pos


def test_counts_out_of_range():
    with pytest.raises(ValueError):
        estimate_position(5, 0, 4, CURVE)
    with pytest.raises(ValueError):
        estimate_position(0, 0, 4, CURVE, method="newton")


def test_non_identifiable():
    zero = ReadRateCurve((-1.0, 1.0), (0.0, 0.0))
    est = estimate_position(0, 0, 10, zero, pos_prev=0.3)
    assert est.pos == 0.3 and not est.converged
    with pytest.raises(NonIdentifiable):
        estimate_position(0, 0, 10, zero, strict=True)


def test_estimate_series_carries_previous_estimate():
    ws = [CountWindow(0.0, 0.1, 0, 0, 0), CountWindow(0.1, 0.1, 40, 30, 2)]
    est = estimate_series(ws, CURVE, pos0=0.25)
    assert est[0].pos == 0.25 and not est[0].converged
    assert est[1].pos > 0.0


def test_cross_correlation_basics():
    x = np.sin(np.linspace(0, 6, 50))
    assert cross_correlation(x, x) == pytest.approx(1.0)
    assert cross_correlation(x, -x) == pytest.approx(-1.0)
    y = x + np.random.default_rng(0).normal(0, 0.3, 50)
    assert cross_correlation(x, y) == pytest.approx(pearsonr(x, y)[0])
    with pytest.raises(DegenerateSeries):
        cross_correlation(np.ones(5), x[:5])
    with pytest.raises(ValueError):
        cross_correlation(x, x[:-1])


def test_cross_correlation_lags_finds_shift():
    x = np.sin(np.linspace(0, 12, 120))
    # the estimate trails the reference by three windows
    lags = cross_correlation_lags(x[:-3], x[3:], 5)
    assert max(lags, key=lags.get) == 3
