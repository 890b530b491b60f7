import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpm_tse.schedule import (CSV_HEADER, StepPlan, build_linear_schedule, dump_schedule,
                              from_alpha_bars, plan_inference_steps, rescale_zero_terminal_snr,
                              schedule_csv, snr)


def running_product_oracle(betas):
    # plain python loop, independent of numpy's cumprod
    out, acc = [], 1.0
    for b in betas:
        acc *= 1.0 - float(b)
        out.append(acc)
    return np.array(out)


linear_args = st.tuples(
    st.integers(min_value=2, max_value=400),
    st.floats(min_value=1e-5, max_value=0.05),
    st.floats(min_value=0.0, max_value=0.5),
).map(lambda a: (a[0], a[1], min(a[1] + a[2], 0.9)))


def test_linear_endpoints_default():
    s = build_linear_schedule(1000, 0.0001, 0.02)
    assert s.T == 1000
    assert s.beta(1) == 0.0001
    assert s.beta(1000) == 0.02
    assert not s.terminal_is_zero


def test_linear_endpoints_short_schedule():
    s = build_linear_schedule(100, 0.0001, 0.06)
    assert s.beta(100) == pytest.approx(0.06, abs=1e-15)


def test_single_step_schedule():
    s = build_linear_schedule(1, 0.5, 0.5)
    assert s.T == 1
    assert s.alpha_bar(1) == 0.5


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (-3, 1e-4, 0.02), (10, 0.0, 0.02),
                                  (10, 1e-4, 1.0), (10, 0.03, 0.02), (2.5, 1e-4, 0.02)])
def test_linear_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_linear_schedule(*args)


def test_alpha_bar_zero_is_one():
    assert build_linear_schedule(10).alpha_bar(0) == 1.0


def test_alpha_bars_match_running_product():
    s = build_linear_schedule(1000, 1e-4, 0.02)
    ref = running_product_oracle(s.betas)
    np.testing.assert_allclose(s.alpha_bars, ref, rtol=1e-12)


def test_snr_examples():
    s = build_linear_schedule(1000, 1e-4, 0.02)
    assert snr(s, 1) == pytest.approx(9999.0, rel=1e-12)
    assert snr(from_alpha_bars([0.5, 0.25]), 1) == 1.0


def test_snr_rejects_unit_alpha_bar():
    s = build_linear_schedule(3, 1e-4, 0.02)
    with pytest.raises(ZeroDivisionError):
        snr(s, 0)


def test_default_terminal_snr_is_positive():
    s = build_linear_schedule(1000, 1e-4, 0.02)
    # direct product, as stated for the default schedule
    abar_T = math.prod(1.0 - b for b in np.linspace(1e-4, 0.02, 1000))
    assert snr(s, 1000) > 0
    assert s.alpha_bar(1000) == pytest.approx(abar_T, rel=1e-12)
    assert s.alpha_bar(1000) == pytest.approx(4.04e-5, rel=2e-3)
    assert snr(s, 1000) == pytest.approx(4.04e-5, rel=2e-3)


def test_rescale_hand_example():
    toy = from_alpha_bars(np.array([0.9, 0.5, 0.1]) ** 2)
    out = rescale_zero_terminal_snr(toy)
    np.testing.assert_allclose(out.sqrt_alpha_bars, [0.9, 0.45, 0.0], atol=1e-15)
    assert out.alpha_bar(3) == 0.0
    assert out.beta(3) == 1.0
    assert out.alpha(3) == 0.0
    assert out.terminal_is_zero


def test_rescale_default_schedule():
    s = build_linear_schedule(1000, 1e-4, 0.02)
    r = rescale_zero_terminal_snr(s)
    assert snr(r, 1000) == 0.0
    assert abs(r.sqrt_alpha_bars[0] - s.sqrt_alpha_bars[0]) <= 1e-12
    assert r.betas[-1] == 1.0


def test_rescale_errors():
    with pytest.raises(ValueError):
        rescale_zero_terminal_snr(build_linear_schedule(1, 0.5, 0.5))


@settings(max_examples=60, deadline=None)
@given(linear_args)
def test_rescale_properties(args):
    s = build_linear_schedule(*args)
    r = rescale_zero_terminal_snr(s)
    assert snr(r, r.T) == 0.0
    assert abs(r.sqrt_alpha_bars[0] - s.sqrt_alpha_bars[0]) <= 1e-12
    # betas back-derived from the new alpha_bars reproduce them
    np.testing.assert_allclose(running_product_oracle(r.betas)[:-1], r.alpha_bars[:-1], rtol=1e-10)
    assert r.betas[-1] == 1.0
    assert np.all((r.betas > 0) & (r.betas <= 1))
    twice = rescale_zero_terminal_snr(r)
    np.testing.assert_allclose(twice.alpha_bars, r.alpha_bars, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(linear_args, st.booleans())
def test_snr_monotone(args, corrected):
    s = build_linear_schedule(*args)
    if corrected:
        s = rescale_zero_terminal_snr(s)
    values = snr(s, np.arange(1, s.T + 1))
    assert np.all(np.diff(values[:-1]) < 0)
    assert values[-1] < values[-2] or values[-1] == 0.0
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.alpha_bars >= 0) & (s.alpha_bars < 1))


def test_plan_examples():
    plan = plan_inference_steps(build_linear_schedule(1000), 50)
    assert list(plan.steps) == list(range(1000, 0, -20))
    assert list(plan_inference_steps(10, 10).steps) == list(range(10, 0, -1))
    p30 = plan_inference_steps(100, 30)
    assert len(p30) == 30 and p30.steps[0] == 100
    assert p30.steps[:4] == (100, 97, 93, 90)


@pytest.mark.parametrize("S", [0, -1, 11])
def test_plan_errors(S):
    with pytest.raises(ValueError):
        plan_inference_steps(10, S)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 2000).flatmap(lambda T: st.tuples(st.just(T), st.integers(1, T))))
def test_plan_invariants(ts):
    T, S = ts
    plan = plan_inference_steps(T, S)
    steps = np.array(plan.steps)
    assert steps[0] == T and steps[-1] >= 1
    assert np.all(np.diff(steps) < 0)
    assert len(plan) == S  # the rounding rule never collides for S <= T
    assert plan.transitions()[-1][1] == 0


def test_step_plan_validation():
    with pytest.raises(ValueError):
        StepPlan((5, 5, 1))
    with pytest.raises(ValueError):
        StepPlan((5, 0))


def test_dump_rows_and_csv():
    s = build_linear_schedule(1000)
    plan = plan_inference_steps(s, 50)
    rows = dump_schedule(rescale_zero_terminal_snr(s), plan)
    assert len(rows) == 1000
    assert rows[-1]["snr"] == 0.0
    assert dump_schedule(s, plan)[-1]["snr"] > 0
    assert sum(r["in_plan"] for r in rows) == 50
    text = schedule_csv(dump_schedule(s, plan))
    parsed = list(csv.reader(io.StringIO(text)))
    assert tuple(parsed[0]) == CSV_HEADER
    assert len(parsed) == 1001
    # full precision: the text round-trips the stored float
    assert float(parsed[500][2]) == s.alpha_bars[499]


def test_schedule_is_immutable():
    s = build_linear_schedule(10)
    with pytest.raises(ValueError):
        s.betas[0] = 0.5
