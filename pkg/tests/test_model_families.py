import math

import numpy as np
import pytest

from bdpd_errors import ParameterDomainError, SupportError, UnsupportedInputError
from model_families import (
    ExponentialScale,
    MomentKind,
    NormalLocationScale,
    NormalMean,
    NormalScale,
    adaptive_integral,
    log_density,
    log_power_integral,
    make_family,
    model_moment,
    quadrature_moment,
    score,
    score_jacobian,
)

FAMILY_CASES = [
    (ExponentialScale(), [1.7]),
    (NormalLocationScale(), [0.3, 0.7]),
    (NormalMean(fixed_sd=1.4), [-0.6]),
    (NormalScale(fixed_mean=5.0), [2.2]),
]


@pytest.mark.parametrize("family,theta", FAMILY_CASES)
@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 1.0])
@pytest.mark.parametrize("kind", list(MomentKind))
def test_closed_form_moments_match_quadrature(family, theta, alpha, kind):
    closed = family.closed_form_moment(np.asarray(theta, dtype=float), 1.0 + alpha, kind)
    oracle = quadrature_moment(family, theta, alpha, kind)
    np.testing.assert_allclose(closed, oracle, rtol=1e-8, atol=1e-10)


def test_log_density_scalar_in_scalar_out():
    value = log_density(NormalScale(0.0), [1.0], 0.0)
    assert isinstance(value, float)
    assert value == pytest.approx(-0.5 * math.log(2.0 * math.pi), abs=1e-15)


def test_exponential_log_density_outside_support():
    assert log_density(ExponentialScale(), [1.0], -0.5) == -math.inf
    assert log_density(ExponentialScale(), [2.0], 1.0) == pytest.approx(-math.log(2.0) - 0.5)


@pytest.mark.parametrize("family,theta", [
    (ExponentialScale(), 0.0),
    (ExponentialScale(), -1.0),
    (NormalLocationScale(), [0.0, 0.0]),
    (NormalLocationScale(), [1.0]),
    (NormalScale(), float('nan')),
])
def test_check_theta_rejects_out_of_domain(family, theta):
    with pytest.raises(ParameterDomainError):
        family.check_theta(theta)


def test_score_outside_support_raises():
    with pytest.raises(SupportError):
        score(ExponentialScale(), [1.0], -1.0)


@pytest.mark.parametrize("family,theta", FAMILY_CASES)
@pytest.mark.parametrize("x", [0.4, 2.5])
def test_score_matches_finite_differences(family, theta, x):
    theta = np.asarray(theta, dtype=float)
    analytic = score(family, theta, x)
    numeric = np.empty(theta.size)
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        numeric[j] = (log_density(family, up, x) - log_density(family, down, x)) / (2.0 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("family,theta", FAMILY_CASES)
def test_score_jacobian_matches_finite_differences(family, theta):
    theta = np.asarray(theta, dtype=float)
    x = 1.3
    analytic = score_jacobian(family, theta, x)
    numeric = np.empty((theta.size, theta.size))
    for j in range(theta.size):
        h = 1e-6 * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        numeric[:, j] = (score(family, up, x) - score(family, down, x)) / (2.0 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-7)


@pytest.mark.parametrize("family,theta", FAMILY_CASES)
def test_information_identity_at_alpha_zero(family, theta):
    q0 = model_moment(family, theta, 0.0, MomentKind.Q0)
    s0 = model_moment(family, theta, 0.0, MomentKind.S0)
    np.testing.assert_allclose(q0 + s0, np.zeros_like(q0), atol=1e-12)
    np.testing.assert_allclose(model_moment(family, theta, 0.0, MomentKind.R0), 0.0, atol=1e-12)


def test_normal_power_integral_hand_value():
    expected = (2.0 * math.pi) ** -0.25 / math.sqrt(1.5)
    assert NormalScale().base_power_integral(0.5) == pytest.approx(expected, rel=1e-14)
    assert ExponentialScale().base_power_integral(0.5) == pytest.approx(1.0 / 1.5)


@pytest.mark.parametrize("family,theta", FAMILY_CASES)
@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_log_power_integral_matches_moment(family, theta, alpha):
    expected = math.log(float(model_moment(family, theta, alpha, MomentKind.P0)))
    assert log_power_integral(family, theta, alpha) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_log_power_integral_matches_quadrature_across_scales():
    family = ExponentialScale()
    for sigma in (1e-6, 1e-2, 1.0, 1e2, 1e6):
        oracle = float(quadrature_moment(family, [sigma], 0.5, MomentKind.P0))
        assert log_power_integral(family, [sigma], 0.5) == pytest.approx(math.log(oracle), abs=1e-8)


def test_log_power_integral_beyond_float_range():
    # int f^2 = 1 / (2 sqrt(pi) sigma) exceeds the largest double here
    sigma = 1e-310
    value = log_power_integral(NormalScale(0.0), [sigma], 1.0)
    assert math.isfinite(value)
    assert value > math.log(np.finfo(float).max)
    assert value == pytest.approx(-math.log(2.0 * math.sqrt(math.pi)) - math.log(sigma), rel=1e-12)
    tiny = log_power_integral(ExponentialScale(), [1e300], 1.0)
    assert tiny == pytest.approx(math.log(0.5) - 300.0 * math.log(10.0), rel=1e-12)


def test_model_moment_rejects_negative_alpha():
    with pytest.raises(UnsupportedInputError):
        model_moment(ExponentialScale(), [1.0], -0.1, MomentKind.P0)
    with pytest.raises(UnsupportedInputError):
        log_power_integral(ExponentialScale(), [1.0], -0.1)


def test_quadrature_rejects_nonpositive_tolerance():
    with pytest.raises(UnsupportedInputError):
        quadrature_moment(ExponentialScale(), [1.0], 0.5, MomentKind.P0, tol=0.0)


def test_adaptive_integral_exponential_tail():
    value = adaptive_integral(lambda x: math.exp(-x), 0.0, math.inf, [1.0, 4.0])
    assert value == pytest.approx(1.0, abs=1e-10)


def test_unconstrained_coordinates_only_touch_scales():
    family = NormalLocationScale()
    s = family.to_unconstrained([-2.0, 3.0])
    np.testing.assert_allclose(s, [-2.0, math.log(3.0)])
    np.testing.assert_allclose(family.from_unconstrained(s), [-2.0, 3.0])


@pytest.mark.parametrize("name,cls", [
    ('exponential', ExponentialScale),
    ('normal', NormalLocationScale),
    ('normal-mean', NormalMean),
    ('normal-scale', NormalScale),
    ('normal-scale-fixed-mean', NormalScale),
])
def test_make_family_aliases(name, cls):
    assert isinstance(make_family(name), cls)


def test_make_family_fixed_parameters():
    assert make_family('normal-scale', fixed_mean=5.0).fixed_mean == 5.0
    assert make_family('normal-mean', fixed_sd=2.0).fixed_sd == 2.0


def test_make_family_unknown():
    with pytest.raises(UnsupportedInputError):
        make_family('cauchy')
