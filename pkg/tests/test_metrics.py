import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcfolio.metrics import (
    calmar,
    compute_report,
    max_drawdown,
    sharpe,
    sortino,
    total_return,
)
from oracles import (
    calmar_oracle,
    max_drawdown_oracle,
    sharpe_oracle,
    sortino_oracle,
    total_return_oracle,
)


def random_curve(rng, t=None):
    t = t or int(rng.integers(5, 300))
    rets = 0.0005 + 0.02 * rng.standard_normal(t)
    return 100.0 * np.cumprod(np.concatenate([[1.0], 1.0 + np.clip(rets, -0.5, 0.5)]))


class TestTotalReturn:
    def test_constant_curve(self):
        assert total_return(np.full(10, 50.0)) == 0.0

    def test_twenty_percent(self):
        assert total_return([100.0, 111.0, 120.0]) == pytest.approx(0.20)

    def test_oracle_match(self, rng):
        for _ in range(50):
            c = random_curve(rng)
            assert total_return(c) == pytest.approx(total_return_oracle(c), rel=1e-12)


class TestSharpe:
    def test_zero_mean_exact(self):
        # returns +1% then -1% exactly: mean zero -> Sharpe 0
        curve = [100.0]
        for i in range(10):
            r = 0.01 if i % 2 == 0 else -0.01
            curve.append(curve[-1] * (1 + r))
        assert sharpe(curve) == pytest.approx(0.0, abs=1e-12)

    def test_constant_positive_return_undefined(self):
        curve = 100.0 * 1.01 ** np.arange(10)
        assert sharpe(curve) is None

    def test_hand_value(self):
        # returns [0.01, 0.03]: mean 0.02, sample std sqrt(2)*0.01
        curve = [100.0, 101.0, 101.0 * 1.03]
        want = np.sqrt(252) * 0.02 / (np.sqrt(2) * 0.01)
        assert sharpe(curve) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(22.449, abs=1e-3)


class TestSortino:
    def test_zero_mean_is_zero(self):
        curve = [100.0]
        for i in range(8):
            curve.append(curve[-1] * (1 + (0.01 if i % 2 == 0 else -0.01)))
        got = sortino(curve)
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_all_negative_equal_returns(self):
        curve = 100.0 * 0.99 ** np.arange(6)
        # downside deviation 0.01, mean -0.01 -> -sqrt(252)
        assert sortino(curve) == pytest.approx(-np.sqrt(252), rel=1e-12)
        assert sortino(curve) == pytest.approx(-15.87, abs=1e-2)

    def test_all_positive_undefined(self):
        curve = 100.0 * 1.02 ** np.arange(6)
        assert sortino(curve) is None


class TestMaxDrawdown:
    def test_monotone_rising(self):
        assert max_drawdown(100.0 * 1.01 ** np.arange(10)) == 0.0

    def test_hand_value(self):
        assert max_drawdown([100.0, 120.0, 90.0, 110.0]) == pytest.approx(0.25)

    def test_single_drop_and_recovery(self):
        assert max_drawdown([100.0, 50.0, 100.0]) == pytest.approx(0.5)


class TestCalmar:
    def test_undefined_without_drawdown(self):
        assert calmar(100.0 * 1.01 ** np.arange(10)) is None

    def test_hand_value_unit_exponent(self):
        # TR = 0.2 over T = 252 with MDD = 0.1 -> (1.2 - 1)/0.1 = 2.0
        curve = np.concatenate([
            np.linspace(100.0, 125.0, 251),
            [112.5, 120.0],
        ])
        assert curve.size == 253
        assert total_return(curve) == pytest.approx(0.2, rel=1e-12)
        assert max_drawdown(curve) == pytest.approx(0.1, rel=1e-12)
        assert calmar(curve) == pytest.approx(2.0, rel=1e-9)

    def test_oracle_match(self, rng):
        for _ in range(50):
            c = random_curve(rng)
            want = calmar_oracle(c)
            got = calmar(c)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, rel=1e-12)


def test_all_metrics_match_oracles_on_random_curves(rng):
    pairs = [
        (total_return, total_return_oracle),
        (sharpe, sharpe_oracle),
        (sortino, sortino_oracle),
        (max_drawdown, max_drawdown_oracle),
        (calmar, calmar_oracle),
    ]
    for _ in range(1000):
        curve = random_curve(rng)
        for fast, slow in pairs:
            got, want = fast(curve), slow(curve)
            if want is None:
                assert got is None
            else:
                assert np.isclose(got, want, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1e6), st.integers(0, 100_000))
def test_scale_invariance(k, seed):
    rng = np.random.default_rng(seed)
    curve = random_curve(rng, t=60)
    scaled = k * curve
    for fn in (total_return, sharpe, sortino, max_drawdown, calmar):
        a, b = fn(curve), fn(scaled)
        if a is None:
            assert b is None
        else:
            assert np.isclose(a, b, rtol=1e-9, atol=1e-12)


def test_report_flags_and_ranges(rng):
    for _ in range(100):
        curve = random_curve(rng)
        rep = compute_report(curve)
        assert 0.0 <= rep.max_drawdown < 1.0
        assert rep.total_return > -1.0
        if rep.sharpe is not None:
            r = np.diff(curve) / curve[:-1]
            assert np.sign(rep.sharpe) == np.sign(r.mean())
        row = rep.format_row()
        assert set(row) == {"total_return_pct", "sharpe", "calmar", "sortino",
                            "max_drawdown_pct"}

    flat = np.full(10, 7.0)
    rep = compute_report(flat)
    assert rep.undefined == ("sharpe", "sortino", "calmar")
    assert rep.to_dict()["sharpe"] is None
