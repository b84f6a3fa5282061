import numpy as np
import pytest

import sandwich_variance
from bdpd_errors import InvalidInputError, SingularInformationError
from bridge_divergence import BridgeConfig
from bridge_optimizer import StartSpec, chain_fit, lambda_grid
from model_families import NormalLocationScale, NormalScale
from sandwich_variance import (
    assemble_k_j,
    closeness_det,
    closeness_trace,
    empirical_moments,
    model_moments,
    sandwich,
    tune,
)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_alpha_zero_is_classical_sandwich(normal20, lam):
    family = NormalLocationScale()
    theta = np.array([0.1, 1.1])
    u = family.score(theta, normal20)
    centered = u - u.mean(axis=0)
    K = centered.T @ centered / normal20.size
    J = -family.score_jacobian(theta, normal20).mean(axis=0)
    expected = np.linalg.solve(J, np.linalg.solve(J, K).T).T

    result = sandwich(family, theta, normal20, BridgeConfig(0.0, lam))
    np.testing.assert_allclose(result.K, K, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(result.J, J, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(result.V, 0.5 * (expected + expected.T), rtol=1e-9, atol=1e-12)
    assert result.det_V == pytest.approx(np.linalg.det(result.V), rel=1e-12)


def test_sandwich_payload(normal20):
    result = sandwich(NormalScale(0.0), [1.2], normal20, BridgeConfig(0.8, 0.5))
    payload = result.to_dict()
    assert set(payload) == {'K', 'J', 'V', 'det_V', 'trace_V', 'condition_number'}
    assert payload['det_V'] > 0.0
    assert payload['trace_V'] == pytest.approx(payload['V'][0][0])


def test_singular_information_is_reported(monkeypatch, normal20):
    monkeypatch.setattr(sandwich_variance, 'assemble_k_j',
                        lambda moments, cfg: (np.eye(1), np.zeros((1, 1))))
    with pytest.raises(SingularInformationError):
        sandwich(NormalScale(0.0), [1.0], normal20, BridgeConfig(0.5, 0.5))


def test_closeness_det_is_monotone_in_loewner_order(rng):
    for _ in range(1000):
        a = rng.normal(size=(2, 2))
        b = rng.normal(size=(2, 2))
        lower = a @ a.T
        upper = lower + b @ b.T
        assert closeness_det(upper) >= closeness_det(lower) * (1.0 - 1e-12) - 1e-15


def test_closeness_measures_reject_bad_matrices():
    with pytest.raises(InvalidInputError):
        closeness_det(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        closeness_det([[1.0, 0.5], [0.0, 1.0]])
    assert closeness_trace([[2.0, 0.1], [0.1, 3.0]]) == pytest.approx(5.0)
    assert closeness_det([[2.0]]) == pytest.approx(2.0)


def test_empirical_moment_shapes(normal20):
    moments = empirical_moments(NormalLocationScale(), [0.0, 1.0], normal20, 0.5)
    assert isinstance(moments['p1_a'], float)
    assert moments['r1_a'].shape == (2,)
    assert moments['q1_2a'].shape == (2, 2)
    assert moments['s1_a'].shape == (2, 2)
    with pytest.raises(InvalidInputError):
        empirical_moments(NormalLocationScale(), [0.0, 1.0], [], 0.5)


def test_plug_in_moments_approach_model_integrals(rng):
    family = NormalLocationScale()
    theta = np.array([0.0, 1.0])
    data = rng.normal(0.0, 1.0, size=200_000)
    alpha = 0.5
    empirical = empirical_moments(family, theta, data, alpha)
    model = model_moments(family, theta, alpha)
    assert empirical['p1_a'] == pytest.approx(model.p0_model, abs=5e-3)
    np.testing.assert_allclose(empirical['r1_a'], model.r0_model, atol=1e-2)
    np.testing.assert_allclose(empirical['q1_a'], model.q0_model, atol=2e-2)
    np.testing.assert_allclose(empirical['s1_a'], model.s0_model, atol=2e-2)


def test_tuning_prefers_dpd_on_printed_normal_sample(normal20):
    result = tune(NormalScale(0.0), normal20, [0.8], [1.0, 0.5, 0.0])
    assert result.alpha_star == 0.8
    assert result.lambda_star == 1.0
    assert list(result.table.columns[:3]) == ['alpha', 'lambda', 'sigma']
    assert len(result.table) == 3


def test_tuning_prefers_mle_on_clean_data(rng):
    data = rng.normal(0.0, 1.0, size=2000)
    starts = StartSpec.from_points([[0.0, 1.0]])
    result = tune(NormalLocationScale(), data, [0.0, 0.5, 1.0], [1.0, 0.0], starts)
    assert result.alpha_star == 0.0
    assert result.table['valid'].all()
    assert result.invalid_cells == []
    payload = result.to_dict()
    assert payload['alpha_star'] == 0.0
    assert len(payload['table']) == 6


def test_tuning_rejects_empty_alpha_grid(normal20):
    with pytest.raises(InvalidInputError):
        tune(NormalScale(0.0), normal20, [], [1.0, 0.0])


def test_tuning_det_v_falls_monotonically_towards_dpd(normal20):
    result = tune(NormalScale(0.0), normal20, [0.8], lambda_grid())
    assert result.lambda_star == 1.0
    table = result.table.sort_values('lambda')
    assert len(table) == 11
    assert table['valid'].all()
    assert (np.diff(table['det_V'].to_numpy()) < 0.0).all()


@pytest.mark.parametrize("family,alpha,data_kind", [
    (NormalScale(0.0), 0.8, 'printed'),
    (NormalLocationScale(), 0.5, 'clean'),
])
def test_information_k_is_psd_at_chain_roots(family, alpha, data_kind, normal20, rng):
    data = normal20 if data_kind == 'printed' else rng.normal(0.0, 1.0, size=200)
    path = chain_fit(family, data, alpha)
    for lam, fit in zip(path.lambdas, path.fits):
        result = sandwich(family, fit.theta_hat, data, BridgeConfig(alpha, lam))
        eigvals = np.linalg.eigvalsh(result.K)
        assert eigvals.min() >= -1e-10 * max(1.0, eigvals.max())
        np.testing.assert_allclose(result.K, result.K.T, atol=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_sandwich_is_continuous_as_alpha_reaches_zero(normal20, lam):
    family = NormalLocationScale()
    theta = [0.1, 1.1]
    at_zero = sandwich(family, theta, normal20, BridgeConfig(0.0, lam))
    near_zero = sandwich(family, theta, normal20, BridgeConfig(1e-6, lam))
    np.testing.assert_allclose(near_zero.V, at_zero.V, rtol=1e-4, atol=1e-8)


def _model_sandwich(family, theta, cfg):
    """V when g is the model itself: every plug-in mean replaced by its integral"""
    alpha = cfg.alpha
    moments = model_moments(family, theta, alpha)
    doubled = model_moments(family, theta, 2.0 * alpha)
    moments.p1_a, moments.r1_a, moments.q1_a = moments.p0_model, moments.r0_model, moments.q0_model
    moments.s1_a = moments.s0_model
    moments.p1_2a, moments.r1_2a, moments.q1_2a = doubled.p0_model, doubled.r0_model, doubled.q0_model
    K, J = assemble_k_j(moments, cfg)
    V = np.linalg.solve(J, np.linalg.solve(J, K).T).T
    return 0.5 * (V + V.T)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_plug_in_variance_approaches_model_variance(lam, rng):
    family = NormalScale(0.0)
    cfg = BridgeConfig(0.4, lam)
    target = _model_sandwich(family, [1.0], cfg)
    errors = []
    for n in (2_000, 200_000):
        data = rng.normal(0.0, 1.0, size=n)
        errors.append(abs(sandwich(family, [1.0], data, cfg).V[0, 0] - target[0, 0]) / target[0, 0])
    assert errors[0] < 0.3
    assert errors[1] < 0.05
