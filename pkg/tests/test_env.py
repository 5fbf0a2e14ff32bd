import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from polymerlab.env import (DisorderSpec, EnvironmentField, l2_region_check,
                            lambda2, log_mgf)
from polymerlab.errors import DimensionError, DivergenceError, WindowError

ALL_SPECS = [
    DisorderSpec.gaussian(0.3),
    DisorderSpec.bernoulli_pm(0.5),
    DisorderSpec.exponential(0.3, rate=1.0),
    DisorderSpec.exponential(0.3, rate=1.0, centered=False),
    DisorderSpec.gaussian(0.2, mean=0.5, variance=2.0),
]


# ---------------------------------------------------------------------------
# log-moment-generating functions
# ---------------------------------------------------------------------------

def test_gaussian_log_mgf_closed_form():
    spec = DisorderSpec.gaussian(0.3)
    assert log_mgf(spec, 0.3) == pytest.approx(0.045, abs=1e-15)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_log_mgf_zero(spec):
    assert log_mgf(spec, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_bernoulli_log_mgf_two_point_oracle():
    # direct two-point expectation, the stated independent oracle
    spec = DisorderSpec.bernoulli_pm(0.5)
    direct = math.log(0.5 * math.exp(0.5 * 1.0) + 0.5 * math.exp(0.5 * -1.0))
    assert direct == pytest.approx(math.log(math.cosh(0.5)), abs=1e-14)
    assert log_mgf(spec, 0.5) == pytest.approx(direct, abs=1e-13)
    assert log_mgf(spec, 0.5) == pytest.approx(0.120114, abs=1e-6)


def test_exponential_log_mgf_quadrature_oracle():
    spec = DisorderSpec.exponential(0.3, rate=1.0, centered=True)
    val, _ = integrate.quad(lambda x: math.exp(0.4 * (x - 1.0) - x), 0, np.inf)
    assert log_mgf(spec, 0.4) == pytest.approx(math.log(val), abs=1e-10)


def test_exponential_divergence():
    spec = DisorderSpec.exponential(0.3, rate=1.0)
    with pytest.raises(DivergenceError):
        log_mgf(spec, 1.0)
    with pytest.raises(DivergenceError):
        DisorderSpec.exponential(0.6, rate=1.0)  # lambda(2 beta) infinite


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_log_mgf_convexity(spec):
    hi = 0.45 if spec.kind == "exponential" else 2.0
    bs = np.linspace(-2.0, hi, 41)
    vals = np.array([log_mgf(spec, b) for b in bs])
    second = np.diff(vals, 2)
    assert np.all(second >= -1e-9)


def test_lambda2_values():
    assert lambda2(DisorderSpec.gaussian(0.3)) == pytest.approx(0.09, abs=1e-14)
    assert lambda2(DisorderSpec.gaussian(0.0)) == pytest.approx(0.0, abs=1e-15)
    bp = DisorderSpec.bernoulli_pm(0.5)
    expect = math.log(math.cosh(1.0)) - 2.0 * math.log(math.cosh(0.5))
    assert lambda2(bp) == pytest.approx(expect, abs=1e-13)


@pytest.mark.parametrize("spec", ALL_SPECS)
@pytest.mark.parametrize("beta", [0.05, 0.1, 0.2, 0.4])
def test_lambda2_positive(spec, beta):
    s = DisorderSpec(**{**spec.__dict__, "beta": beta})
    assert lambda2(s) > 0.0
    assert lambda2(DisorderSpec(**{**spec.__dict__, "beta": 0.0})) == pytest.approx(
        0.0, abs=1e-14)


# ---------------------------------------------------------------------------
# the single-factor normalization: exact integral of e^{beta eta - lambda}
# ---------------------------------------------------------------------------

def test_normalization_gaussian_quadrature():
    spec = DisorderSpec.gaussian(0.3)
    lam = log_mgf(spec, spec.beta)
    val, _ = integrate.quad(
        lambda x: math.exp(spec.beta * x - lam) * math.exp(-x * x / 2)
        / math.sqrt(2 * math.pi), -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_normalization_bernoulli_exact_sum():
    spec = DisorderSpec.bernoulli_pm(0.5, p=0.3, a=2.0, b=-1.0)
    lam = log_mgf(spec, spec.beta)
    val = 0.3 * math.exp(0.5 * 2.0 - lam) + 0.7 * math.exp(0.5 * -1.0 - lam)
    assert val == pytest.approx(1.0, abs=1e-12)


def test_normalization_exponential_quadrature():
    spec = DisorderSpec.exponential(0.4, rate=2.0)
    lam = log_mgf(spec, spec.beta)
    val, _ = integrate.quad(
        lambda x: 2.0 * math.exp(spec.beta * (x - 0.5) - lam - 2.0 * x),
        0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# invariants of the disorder spec
# ---------------------------------------------------------------------------

def test_spec_rejects_constant_distributions():
    with pytest.raises(ValueError):
        DisorderSpec.gaussian(0.1, variance=0.0)
    with pytest.raises(ValueError):
        DisorderSpec.bernoulli_pm(0.1, p=0.5, a=1.0, b=1.0)
    with pytest.raises(ValueError):
        DisorderSpec.bernoulli_pm(0.1, p=0.0)
    with pytest.raises(ValueError):
        DisorderSpec.exponential(0.1, rate=-1.0)


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_spec_config_round_trip(spec):
    assert DisorderSpec.from_config(spec.to_config()) == spec


# ---------------------------------------------------------------------------
# environment field determinism and statistics
# ---------------------------------------------------------------------------

def test_field_determinism_resampled():
    spec = DisorderSpec.gaussian(0.3)
    rng = np.random.default_rng(0)
    f1 = EnvironmentField(spec=spec, seed=123, d=3, n_max=50)
    f2 = EnvironmentField(spec=spec, seed=123, d=3, n_max=50)
    for _ in range(10_000):
        n = int(rng.integers(1, 51))
        x = tuple(int(v) for v in rng.integers(-50, 51, size=3))
        assert f1.eta(n, x) == f2.eta(n, x)


def test_field_scalar_matches_block():
    spec = DisorderSpec.exponential(0.2, rate=1.0)
    f = EnvironmentField(spec=spec, seed=9, d=3, n_max=4)
    blk = f.eta_block(2, (-2, -2, -2), (5, 5, 5))
    for i in range(5):
        for j in range(5):
            assert blk[i, j, 0] == f.eta(2, (i - 2, j - 2, -2))


def test_field_seeds_differ():
    spec = DisorderSpec.gaussian(0.3)
    f1 = EnvironmentField(spec=spec, seed=1, d=3, n_max=4)
    f2 = EnvironmentField(spec=spec, seed=2, d=3, n_max=4)
    assert f1.eta(1, (0, 0, 0)) != f2.eta(1, (0, 0, 0))


def test_field_gaussian_sample_statistics():
    spec = DisorderSpec.gaussian(0.3)
    f = EnvironmentField(spec=spec, seed=77, d=3, n_max=1,
                         window_lo=(-50, -50, -50), window_hi=(49, 49, 49))
    blk = f.eta_block(1, (-50, -50, -50), (100, 100, 100))
    m = blk.size
    assert m == 10 ** 6
    assert abs(blk.mean()) <= 3e-3  # 3 / sqrt(10^6) at unit variance
    lam = log_mgf(spec, spec.beta)
    w = np.exp(spec.beta * blk - lam)
    se = w.std() / math.sqrt(m)
    assert abs(w.mean() - 1.0) <= 3.0 * se


@pytest.mark.parametrize("spec", ALL_SPECS)
def test_field_factor_normalization_all_kinds(spec):
    f = EnvironmentField(spec=spec, seed=5, d=3, n_max=1,
                         window_lo=(-40, -40, -40), window_hi=(39, 39, 39))
    blk = f.eta_block(1, (-40, -40, -40), (80, 80, 80))
    lam = log_mgf(spec, spec.beta)
    w = np.exp(spec.beta * blk - lam)
    se = w.std() / math.sqrt(blk.size)
    assert abs(w.mean() - 1.0) <= 3.0 * se


def test_window_errors():
    spec = DisorderSpec.gaussian(0.3)
    f = EnvironmentField(spec=spec, seed=1, d=3, n_max=5,
                         window_lo=(-3, -3, -3), window_hi=(3, 3, 3))
    with pytest.raises(WindowError):
        f.eta(6, (0, 0, 0))
    with pytest.raises(WindowError):
        f.eta(1, (4, 0, 0))
    with pytest.raises(WindowError):
        f.check_ball((0, 0, 0), 4, 5)


def test_generic_dimension_field():
    spec = DisorderSpec.gaussian(0.3)
    f2 = EnvironmentField(spec=spec, seed=3, d=2, n_max=4)
    v = f2.eta(1, (1, -1))
    assert v == f2.eta(1, (1, -1))
    f1 = EnvironmentField(spec=spec, seed=3, d=1, n_max=4)
    assert f1.eta(2, (0,)) == f1.eta(2, 0)


@given(st.integers(min_value=0, max_value=2 ** 63 - 1),
       st.integers(min_value=1, max_value=100),
       st.tuples(st.integers(-100, 100), st.integers(-100, 100),
                 st.integers(-100, 100)))
@settings(max_examples=50, deadline=None)
def test_field_pure_function_property(seed, n, x):
    spec = DisorderSpec.bernoulli_pm(0.4)
    f = EnvironmentField(spec=spec, seed=seed, d=3, n_max=100)
    assert f.eta(n, x) == f.eta(n, x)
    assert f.eta(n, x) in (1.0, -1.0)


# ---------------------------------------------------------------------------
# L2-region criterion
# ---------------------------------------------------------------------------

def test_l2_region_beta_zero():
    res = l2_region_check(DisorderSpec.gaussian(0.0), 3)
    assert res.in_region
    assert res.margin == pytest.approx(1.0772, abs=2e-3)


def test_l2_region_small_beta():
    res = l2_region_check(DisorderSpec.gaussian(0.2), 3)
    assert res.in_region
    assert res.margin == pytest.approx(1.0772 - 0.04, abs=2e-3)


def test_l2_region_large_beta():
    res = l2_region_check(DisorderSpec.gaussian(2.0), 3)
    assert not res.in_region
    assert res.lam2 == pytest.approx(4.0, abs=1e-12)


def test_l2_region_low_dimension_rejected():
    with pytest.raises(DimensionError):
        l2_region_check(DisorderSpec.gaussian(0.1), 2)
