import numpy as np
import pytest

from braingen.errors import ConfigError, ShapeError
from braingen.schedule import build_linear_schedule, forward_step, q_sample

# Frozen oracle values for the T=1000, beta 1e-4..0.02 linear schedule,
# computed independently from cumprod(1 - linspace(1e-4, 0.02, 1000)).
ABAR_1 = 0.9999
ABAR_100 = 0.89701814567496
ABAR_1000 = 4.035829765375676e-05
SIGMA_2 = 0.007384570171175973


@pytest.fixture(scope="module")
def sched():
    return build_linear_schedule(1000)


def test_beta_endpoints(sched):
    assert sched.beta(1) == pytest.approx(1e-4, rel=0, abs=0)
    assert sched.beta(1000) == pytest.approx(0.02, rel=0, abs=0)


def test_alpha_bar_oracle_values(sched):
    assert sched.alpha_bar(1) == pytest.approx(ABAR_1, rel=1e-12)
    assert sched.alpha_bar(100) == pytest.approx(ABAR_100, rel=1e-12)
    assert sched.alpha_bar(1000) == pytest.approx(ABAR_1000, rel=1e-12)


def test_terminal_step_is_nearly_pure_noise(sched):
    # sqrt(1 - abar_T) ~ 1: the forward process ends at standard noise.
    assert np.sqrt(1.0 - sched.alpha_bar(1000)) > 0.9999


def test_sigma_one_is_zero(sched):
    assert sched.sigma(1) == 0.0
    assert sched.sigma(2) == pytest.approx(SIGMA_2, rel=1e-12)


def test_alpha_bars_strictly_decreasing_in_unit_interval(sched):
    ab = sched.alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab > 0) & (ab < 1))


def test_posterior_vars_below_betas(sched):
    # beta~_t <= beta_t for every t.
    assert np.all(sched.posterior_vars <= sched.betas + 1e-15)


def test_time_index_bounds(sched):
    for t in (0, 1001, -3):
        with pytest.raises(IndexError):
            sched.beta(t)
        with pytest.raises(IndexError):
            sched.alpha_bar(t)


def test_build_validation():
    with pytest.raises(ConfigError):
        build_linear_schedule(0)
    with pytest.raises(ConfigError):
        build_linear_schedule(10, 0.0, 0.02)
    with pytest.raises(ConfigError):
        build_linear_schedule(10, 0.02, 0.01)
    with pytest.raises(ConfigError):
        build_linear_schedule(10, 0.5, 1.0)


def test_q_sample_shape_mismatch(sched):
    with pytest.raises(ShapeError):
        q_sample(np.zeros(3), 1, np.zeros(4), sched)
    with pytest.raises(ShapeError):
        forward_step(np.zeros(3), 1, np.zeros(4), sched)


def test_noiseless_iteration_telescopes_to_closed_form():
    # With zero noise, iterating forward_step multiplies by sqrt(1 - beta_t),
    # which telescopes exactly to the sqrt(abar_t) factor of q_sample.
    sched = build_linear_schedule(50, 1e-3, 0.1)
    y0 = np.array([1.0, -2.0, 0.3])
    y = y0.copy()
    zero = np.zeros_like(y0)
    for t in range(1, 26):
        y = forward_step(y, t, zero, sched)
    assert np.allclose(y, q_sample(y0, 25, zero, sched), rtol=1e-12)


def test_iterated_forward_matches_marginal_moments():
    # Small Monte-Carlo version of the consistency check (the acceptance
    # suite runs the full-size one): iterated steps vs the closed form.
    sched = build_linear_schedule(100, 1e-3, 0.05)
    rng = np.random.default_rng(7)
    n = 20000
    y0 = 1.3
    y = np.full(n, y0)
    for t in range(1, 51):
        y = forward_step(y, t, rng.standard_normal(n), sched)
    closed = q_sample(np.full(n, y0), 50, rng.standard_normal(n), sched)
    assert y.mean() == pytest.approx(closed.mean(), abs=0.03)
    assert y.std() == pytest.approx(closed.std(), rel=0.03)
