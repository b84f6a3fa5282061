import numpy as np
import pandas as pd
import pytest

from bdpd_errors import InvalidInputError
from bridge_divergence import BridgeConfig, ModelComponent
from bridge_optimizer import StartSpec
from model_families import NormalScale
from simulation_engine import SimConfig, SimReport, exponential_outer
from trend_analyzer import (
    NORMALITY_TOLERANCE,
    StudyTrendAnalyzer,
    asymptotic_normality_check,
    pure_model_samples,
)

N = 100
REPS = 200
# spread of sqrt(n)(theta_hat - theta*) per (alpha, lambda)
SPREAD = {
    (0.0, 1.0): 1.0, (0.0, 0.5): 1.0, (0.0, 0.0): 1.0,
    (0.5, 1.0): 1.5, (0.5, 0.5): 1.2, (0.5, 0.0): 1.0,
}
FAILED_REPLICATIONS = {0, 1, 2, 3, 4}


def _synthetic_report(spread=SPREAD, reps=REPS, failed=FAILED_REPLICATIONS, seed=129):
    config = SimConfig(exponential_outer(0.0), n=N, reps=reps, alpha_grid=[0.0, 0.5],
                       lambda_grid=[1.0, 0.5, 0.0])
    z = np.random.default_rng(seed).normal(size=reps)
    rows = []
    for r in range(reps):
        for (alpha, lam), s in spread.items():
            fails = alpha == 0.0 and lam == 0.0 and r in failed
            rows.append({'replication': r, 'alpha': alpha, 'lambda': lam,
                         'sigma': float('nan') if fails else 1.0 + z[r] * s / np.sqrt(N),
                         'failed': fails})
    return SimReport.from_estimates(config, pd.DataFrame(rows))


@pytest.fixture(scope='module')
def analyzer():
    return StudyTrendAnalyzer(_synthetic_report())


def test_lambda_trends(analyzer):
    robust = analyzer.analyze_lambda_trend(0.5)
    assert robust['trend'] == 'decreasing'
    assert robust['decreasing_ok'] and not robust['increasing_ok']
    assert robust['mse_last'] < robust['mse_first']
    assert [s['from_lambda'] for s in robust['steps']] == [1.0, 0.5]
    assert analyzer.analyze_lambda_trend(0.0)['trend'] == 'stable'
    assert analyzer.analyze_lambda_trend(0.25)['trend'] == 'no_data'


def test_failed_replications_are_left_out_of_pairs(analyzer):
    steps = analyzer.analyze_lambda_trend(0.0)['steps']
    assert steps[0]['pairs'] == REPS
    assert steps[1]['pairs'] == REPS - len(FAILED_REPLICATIONS)


def test_mle_row_is_minimal(analyzer):
    for lam in (1.0, 0.5, 0.0):
        analysis = analyzer.analyze_alpha_trend(lam)
        assert analysis['mle_minimal'] is True
    assert analyzer.analyze_alpha_trend(1.0)['best_alpha'] == 0.0


def test_alerts_sorted_by_severity(analyzer):
    alerts = analyzer.generate_alerts({'lambda_trend': {0.5: 'increasing', 0.0: 'decreasing'},
                                       'mle_minimal': True})
    kinds = [a['alert_type'] for a in alerts]
    assert kinds == ['failure_rate', 'trend_contradiction']
    assert alerts[0]['severity'] == 'high'
    assert alerts[0]['lambda'] == 0.0
    assert '5 of 200' in alerts[0]['message']
    assert alerts[1]['alpha'] == 0.5


def test_noisy_cells_raise_low_alerts():
    config = SimConfig(exponential_outer(0.0), n=N, reps=3, alpha_grid=[0.0], lambda_grid=[1.0, 0.0])
    rows = [{'replication': r, 'alpha': 0.0, 'lambda': lam, 'sigma': value, 'failed': False}
            for r, value in enumerate([1.0, 1.0, 2.0]) for lam in (1.0, 0.0)]
    alerts = StudyTrendAnalyzer(SimReport.from_estimates(config, pd.DataFrame(rows))).generate_alerts()
    assert {a['alert_type'] for a in alerts} == {'high_noise'}
    assert all(a['severity'] == 'low' for a in alerts)


def test_dashboard_summary(analyzer):
    summary = analyzer.get_dashboard_summary()
    assert summary['total_cells'] == 6
    assert summary['flagged_cells'] == 1
    assert summary['failed_estimates'] == 5
    assert summary['decreasing'] == 1
    assert summary['stable'] == 1
    assert summary['mle_minimal_columns'] == 3
    assert [row['alpha'] for row in summary['row_status']] == [0.0, 0.5]


def test_export_trend_report(analyzer, tmp_path):
    text = analyzer.export_trend_report()
    assert "SIMULATION TREND ANALYSIS REPORT" in text
    assert "[HIGH] failure_rate" in text
    assert "alpha = 0.5:" in text
    assert "Trend: decreasing" in text
    path = tmp_path / 'trend.txt'
    assert analyzer.export_trend_report(str(path)) == str(path)
    assert path.read_text() == text


def test_analyzer_rejects_bad_arguments(analyzer):
    with pytest.raises(InvalidInputError):
        analyzer.analyze_lambda_trend(0.5, parameter='mu')
    with pytest.raises(InvalidInputError):
        StudyTrendAnalyzer(analyzer.report, tolerance_se=-1.0)


def test_pure_model_samples_are_reproducible():
    component = ModelComponent(NormalScale(0.0), (1.0,))
    first = pure_model_samples(component, 10, 3, master_seed=5)
    second = pure_model_samples(component, 10, 3, master_seed=5)
    assert len(first) == 3
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_standardized_errors_look_standard_normal():
    component = ModelComponent(NormalScale(0.0), (1.0,))
    data_sets = pure_model_samples(component, 200, 600)
    result = asymptotic_normality_check(component.family, data_sets, BridgeConfig(0.5, 0.5), [1.0],
                                        StartSpec.from_points([[1.0]]))
    assert result['replications'] + result['failures'] == 600
    assert result['failures'] == 0
    assert abs(result['mean']) < 0.3
    assert abs(result['variance'] - 1.0) <= NORMALITY_TOLERANCE
    assert result['accepted']


def test_normality_check_needs_two_replications():
    component = ModelComponent(NormalScale(0.0), (1.0,))
    with pytest.raises(InvalidInputError):
        asymptotic_normality_check(component.family, pure_model_samples(component, 50, 1),
                                   BridgeConfig(0.5, 0.5), [1.0], StartSpec.from_points([[1.0]]))


@pytest.mark.slow
def test_standardized_error_variance_accepted():
    component = ModelComponent(NormalScale(0.0), (1.0,))
    data_sets = pure_model_samples(component, 500, 1000)
    result = asymptotic_normality_check(component.family, data_sets, BridgeConfig(0.4, 0.5), [1.0],
                                        StartSpec.from_points([[1.0]]))
    assert result['accepted']
