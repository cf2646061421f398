import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnslab.schedule import (
    ALPHA_SKIP_ADVISORY,
    NoiseSchedule,
    alpha_continuous,
    build_linear_schedule,
    plan_skip,
)


schedule_params = st.tuples(
    st.integers(min_value=2, max_value=400),
    st.floats(min_value=1e-6, max_value=0.05),
    st.floats(min_value=0.05, max_value=0.5),
)


@given(schedule_params)
@settings(max_examples=60, deadline=None)
def test_linear_schedule_invariants(params):
    n, bmin, bmax = params
    s = build_linear_schedule(n, bmin, bmax)
    assert s.betas.shape == (n,)
    assert np.all(s.betas > 0) and np.all(s.betas < 1)
    assert np.all(np.diff(s.betas) >= 0)
    assert np.array_equal(s.alphas, 1.0 - s.betas)
    # cumulative product is strictly decreasing and stays in (0, 1)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[0] < 1.0 and s.alpha_bars[-1] > 0.0
    np.testing.assert_allclose(s.alpha_bars, np.cumprod(s.alphas), rtol=0, atol=0)


def test_endpoint_betas_and_index_accessors(default_schedule):
    s = default_schedule
    assert s.beta(1) == 1e-4
    assert s.beta(1000) == 0.02
    assert s.alpha(1) == 1.0 - 1e-4
    assert s.alpha_bar(0) == 1.0
    assert s.alpha_bar(1) == s.alphas[0]
    assert s.alpha_bar(1000) == pytest.approx(np.prod(s.alphas), rel=1e-12)


def test_index_bounds_rejected(default_schedule):
    s = default_schedule
    with pytest.raises(ValueError):
        s.beta(0)
    with pytest.raises(ValueError):
        s.alpha(1001)
    with pytest.raises(ValueError):
        s.alpha_bar(-1)
    with pytest.raises(ValueError):
        s.alpha_bar(1001)


def test_time_index_round_trip(default_schedule):
    s = default_schedule
    for i in (0, 1, 499, 500, 1000):
        assert s.index_of_time(s.time_of_index(i)) == i
    assert s.time_of_index(0) == 0.0
    assert s.time_of_index(1000) == s.horizon
    with pytest.raises(ValueError):
        s.index_of_time(-0.01)
    with pytest.raises(ValueError):
        s.index_of_time(1.01)


def test_alpha_continuous_is_sqrt_alpha_bar(default_schedule):
    s = default_schedule
    for i in (0, 1, 368, 1000):
        assert alpha_continuous(s, i) == pytest.approx(
            np.sqrt(s.alpha_bar(i)), rel=0, abs=0
        )
    assert alpha_continuous(s, 0) == 1.0


def test_construction_rejects_inconsistent_arrays():
    betas = np.linspace(1e-4, 0.02, 10)
    alphas = 1.0 - betas
    good_bars = np.cumprod(alphas)
    with pytest.raises(ValueError):
        NoiseSchedule(10, betas, alphas + 1e-9, good_bars)
    with pytest.raises(ValueError):
        NoiseSchedule(10, betas, alphas, good_bars[::-1].copy())
    with pytest.raises(ValueError):
        NoiseSchedule(1, betas[:1], alphas[:1], good_bars[:1])
    with pytest.raises(ValueError):
        build_linear_schedule(10, 0.02, 1e-4)
    with pytest.raises(ValueError):
        build_linear_schedule(10, 0.0, 0.02)


def test_fingerprint_pins_the_grid(default_schedule):
    assert (
        default_schedule.fingerprint()
        == "linear(n=1000,beta_min=0.0001,beta_max=0.02,T=1)"
    )
    other = build_linear_schedule(999, 1e-4, 0.02)
    assert other.fingerprint() != default_schedule.fingerprint()


def test_plan_skip_start_index_and_alpha(default_schedule):
    s = default_schedule
    plan = plan_skip(s, 0)
    assert plan.n_skip == 1000
    assert plan.alpha_at_skip == alpha_continuous(s, 1000)

    plan = plan_skip(s, 632)
    assert plan.n_skip == 368
    # near the half-signal point used by the worked Gaussian examples
    assert plan.alpha_at_skip == pytest.approx(0.5, abs=5e-4)
    assert not plan.recipe_violated

    with pytest.raises(ValueError):
        plan_skip(s, 1000)
    with pytest.raises(ValueError):
        plan_skip(s, -1)


def test_skip_recipe_advisory_flag(default_schedule):
    # a full-length run starts at alpha(T) ~ 0.006 < 0.01: flagged, not an error
    plan = plan_skip(default_schedule, 0)
    assert plan.alpha_at_skip < ALPHA_SKIP_ADVISORY
    assert plan.recipe_violated


@given(st.integers(min_value=0, max_value=199))
@settings(max_examples=40, deadline=None)
def test_plan_skip_alpha_matches_grid(delta):
    s = build_linear_schedule(200, 1e-3, 0.05)
    plan = plan_skip(s, delta)
    assert plan.alpha_at_skip == np.sqrt(s.alpha_bar(200 - delta))
