"""
Study Trend Analyzer Module
Trend analysis and alerting for simulation studies, including:
- Lambda trends of scaled MSE per alpha row, judged on paired replication differences
- Alpha comparisons per lambda column (is the MLE row minimal?)
- Alert generation for failing cells, contradicted trends and noisy cells
- Dashboard summary and plain-text trend report export
- Standardized-error check of the sandwich variance on pure-model samples
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from bdpd_errors import BdpdError, InvalidInputError
from bridge_divergence import BridgeConfig, ModelComponent
from bridge_optimizer import StartSpec, interior_root
from model_families import FamilyModel
from sandwich_variance import sandwich
from simulation_engine import FAILURE_FLAG_RATE, SimReport, replication_rng

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE_SE = 2.0
NOISE_RATIO = 0.2
NORMALITY_TOLERANCE = 0.15


class StudyTrendAnalyzer:
    """Analyzes MSE trends of a SimReport and generates alerts"""

    def __init__(self, report: SimReport, tolerance_se: float = DEFAULT_TOLERANCE_SE):
        """
        Initialize trend analyzer

        Args:
            report: Finished simulation study
            tolerance_se: Standard errors a paired difference may move against a trend
        """
        if tolerance_se < 0:
            raise InvalidInputError(f"tolerance_se must be nonnegative, got {tolerance_se}")
        self.report = report
        self.tolerance_se = tolerance_se
        self.lambdas = sorted(report.cells['lambda'].unique(), reverse=True)
        self.alphas = sorted(report.cells['alpha'].unique())

    def _squared_errors(self, parameter: Optional[str]) -> pd.DataFrame:
        """n (theta_hat - theta*)^2 per replication, indexed by (replication, alpha, lambda)"""
        parameter = parameter or self.report.param_names[0]
        if parameter not in self.report.param_names:
            raise InvalidInputError(f"unknown parameter '{parameter}'")
        target = self.report.target[self.report.param_names.index(parameter)]
        ok = self.report.estimates[~self.report.estimates['failed']].copy()
        ok['sq_error'] = self.report.n * (ok[parameter] - target) ** 2
        return ok[['replication', 'alpha', 'lambda', 'sq_error']]

    @staticmethod
    def _paired(first: pd.Series, second: pd.Series) -> Dict[str, float]:
        """Mean and standard error of second - first over replications present in both"""
        diff = (second - first).dropna()
        count = int(diff.size)
        if count < 2:
            return {'mean_diff': float('nan'), 'se': float('nan'), 'pairs': count}
        return {'mean_diff': float(diff.mean()),
                'se': float(diff.std(ddof=1) / math.sqrt(count)),
                'pairs': count}

    def analyze_lambda_trend(self, alpha: float, parameter: Optional[str] = None) -> Dict[str, Any]:
        """
        Analyze how scaled MSE moves as lambda steps from 1 to 0

        Args:
            alpha: Row of the study
            parameter: Parameter name (defaults to the first)

        Returns:
            Dictionary with per-step paired differences and the trend label
            ('decreasing', 'increasing', 'stable' or 'mixed')
        """
        errors = self._squared_errors(parameter)
        row = errors[np.isclose(errors['alpha'], alpha)]
        if row.empty:
            return {'alpha': alpha, 'trend': 'no_data', 'message': 'No converged replications'}
        wide = row.pivot_table(index='replication', columns='lambda', values='sq_error')
        lambdas = [lam for lam in self.lambdas if lam in wide.columns]
        if len(lambdas) < 2:
            return {'alpha': alpha, 'trend': 'insufficient_data',
                    'message': 'Fewer than two lambda cells with estimates'}

        steps = []
        for prev, nxt in zip(lambdas, lambdas[1:]):
            step = {'from_lambda': prev, 'to_lambda': nxt}
            step.update(self._paired(wide[prev], wide[nxt]))
            limit = self.tolerance_se * step['se']
            step['against_decreasing'] = bool(step['mean_diff'] > limit)
            step['against_increasing'] = bool(step['mean_diff'] < -limit)
            steps.append(step)

        decreasing_ok = not any(s['against_decreasing'] for s in steps)
        increasing_ok = not any(s['against_increasing'] for s in steps)
        if decreasing_ok and increasing_ok:
            trend = 'stable'
        elif decreasing_ok:
            trend = 'decreasing'
        elif increasing_ok:
            trend = 'increasing'
        else:
            trend = 'mixed'

        mse = wide[lambdas].mean()
        return {
            'alpha': alpha,
            'trend': trend,
            'decreasing_ok': decreasing_ok,
            'increasing_ok': increasing_ok,
            'mse_first': float(mse.iloc[0]),
            'mse_last': float(mse.iloc[-1]),
            'steps': steps,
        }

    def analyze_alpha_trend(self, lam: float, parameter: Optional[str] = None) -> Dict[str, Any]:
        """Compare every alpha row against alpha = 0 within one lambda column"""
        errors = self._squared_errors(parameter)
        column = errors[np.isclose(errors['lambda'], lam)]
        wide = column.pivot_table(index='replication', columns='alpha', values='sq_error')
        if wide.empty or 0.0 not in wide.columns:
            return {'lambda': lam, 'trend': 'no_data', 'mle_minimal': None,
                    'message': 'No alpha = 0 cell in this column'}
        comparisons = []
        for alpha in [a for a in self.alphas if a != 0.0 and a in wide.columns]:
            entry = {'alpha': alpha}
            entry.update(self._paired(wide[0.0], wide[alpha]))
            entry['beats_mle'] = bool(entry['mean_diff'] < -self.tolerance_se * entry['se'])
            comparisons.append(entry)
        mse = wide.mean()
        return {
            'lambda': lam,
            'trend': 'compared',
            'mle_minimal': not any(c['beats_mle'] for c in comparisons),
            'best_alpha': float(mse.idxmin()),
            'mse_by_alpha': {float(a): float(v) for a, v in mse.items()},
            'comparisons': comparisons,
        }

    def _cell_noise(self, parameter: Optional[str]) -> pd.DataFrame:
        errors = self._squared_errors(parameter)
        grouped = errors.groupby(['alpha', 'lambda'])['sq_error']
        frame = grouped.agg(['mean', 'std', 'count']).reset_index()
        frame['se'] = frame['std'] / np.sqrt(frame['count'].clip(lower=1))
        return frame

    def generate_alerts(self, expectations: Optional[Dict[str, Any]] = None,
                        parameter: Optional[str] = None) -> List[Dict[str, Any]]:
        """
        Generate alerts for failing cells and trends that contradict expectations

        Args:
            expectations: Optional {'lambda_trend': {alpha: 'decreasing'|'increasing'},
                'mle_minimal': bool}
            parameter: Parameter name (defaults to the first)

        Returns:
            List of alert dictionaries sorted by severity
        """
        expectations = expectations or {}
        alerts: List[Dict[str, Any]] = []

        flagged = self.report.cells[self.report.cells['flagged']]
        for _, cell in flagged.drop_duplicates(['alpha', 'lambda']).iterrows():
            total = int(cell['failures'] + cell['n_ok'])
            alerts.append({
                'alert_type': 'failure_rate',
                'severity': 'high',
                'alpha': float(cell['alpha']),
                'lambda': float(cell['lambda']),
                'message': f"{int(cell['failures'])} of {total} replications failed "
                           f"(limit {FAILURE_FLAG_RATE:.0%})",
            })

        for alpha, expected in expectations.get('lambda_trend', {}).items():
            analysis = self.analyze_lambda_trend(float(alpha), parameter)
            ok_key = 'decreasing_ok' if expected == 'decreasing' else 'increasing_ok'
            if analysis.get(ok_key) is False:
                alerts.append({
                    'alert_type': 'trend_contradiction',
                    'severity': 'medium',
                    'alpha': float(alpha),
                    'lambda': None,
                    'message': f"alpha={float(alpha):g}: expected {expected} MSE toward lambda=0, "
                               f"observed {analysis['trend']}",
                })

        if expectations.get('mle_minimal'):
            for lam in self.lambdas:
                analysis = self.analyze_alpha_trend(lam, parameter)
                if analysis.get('mle_minimal') is False:
                    alerts.append({
                        'alert_type': 'mle_not_minimal',
                        'severity': 'medium',
                        'alpha': analysis['best_alpha'],
                        'lambda': float(lam),
                        'message': f"lambda={lam:g}: alpha={analysis['best_alpha']:g} beats the MLE row",
                    })

        noise = self._cell_noise(parameter)
        for _, cell in noise[noise['se'] > NOISE_RATIO * noise['mean']].iterrows():
            alerts.append({
                'alert_type': 'high_noise',
                'severity': 'low',
                'alpha': float(cell['alpha']),
                'lambda': float(cell['lambda']),
                'message': f"scaled MSE {cell['mean']:.4g} has standard error {cell['se']:.3g}",
            })

        severity_order = {'high': 0, 'medium': 1, 'low': 2}
        alerts.sort(key=lambda a: severity_order.get(a['severity'], 3))
        return alerts

    def get_dashboard_summary(self, parameter: Optional[str] = None) -> Dict[str, Any]:
        summary = {
            'total_cells': int(self.report.cells[['alpha', 'lambda']].drop_duplicates().shape[0]),
            'flagged_cells': int(self.report.cells.loc[self.report.cells['flagged'], ['alpha', 'lambda']]
                                 .drop_duplicates().shape[0]),
            'failed_estimates': int(self.report.estimates['failed'].sum()),
            'decreasing': 0,
            'increasing': 0,
            'stable': 0,
            'mixed': 0,
            'mle_minimal_columns': 0,
            'row_status': [],
        }
        for alpha in self.alphas:
            analysis = self.analyze_lambda_trend(alpha, parameter)
            if analysis['trend'] in summary:
                summary[analysis['trend']] += 1
            summary['row_status'].append({'alpha': alpha, 'trend': analysis['trend'],
                                          'mse_first': analysis.get('mse_first'),
                                          'mse_last': analysis.get('mse_last')})
        for lam in self.lambdas:
            if self.analyze_alpha_trend(lam, parameter).get('mle_minimal'):
                summary['mle_minimal_columns'] += 1
        return summary

    def export_trend_report(self, filename: Optional[str] = None,
                            expectations: Optional[Dict[str, Any]] = None) -> str:
        """
        Export trend analysis report

        Args:
            filename: Optional path; when given the report is written there
            expectations: Passed to generate_alerts

        Returns:
            Report text, or the filename when one was given
        """
        config = self.report.config
        lines = []
        lines.append("=" * 80)
        lines.append("SIMULATION TREND ANALYSIS REPORT")
        lines.append(f"n={self.report.n}  reps={config.get('reps')}  seed={config.get('master_seed')}")
        lines.append("=" * 80)
        lines.append("")

        summary = self.get_dashboard_summary()
        lines.append("DASHBOARD SUMMARY:")
        lines.append(f"  Cells: {summary['total_cells']}")
        lines.append(f"  Flagged Cells: {summary['flagged_cells']}")
        lines.append(f"  Failed Estimates: {summary['failed_estimates']}")
        lines.append(f"  Columns Where MLE Is Minimal: {summary['mle_minimal_columns']} of {len(self.lambdas)}")
        lines.append("")
        lines.append("LAMBDA TRENDS:")
        lines.append(f"  Decreasing: {summary['decreasing']}")
        lines.append(f"  Increasing: {summary['increasing']}")
        lines.append(f"  Stable: {summary['stable']}")
        lines.append(f"  Mixed: {summary['mixed']}")
        lines.append("")

        alerts = self.generate_alerts(expectations)
        if alerts:
            lines.append("=" * 80)
            lines.append("ALERTS:")
            lines.append("=" * 80)
            lines.append("")
            for alert in alerts:
                lines.append(f"[{alert['severity'].upper()}] {alert['alert_type']}")
                lines.append(f"  Message: {alert['message']}")
                lines.append("")

        lines.append("=" * 80)
        lines.append("DETAILED ROW ANALYSIS:")
        lines.append("=" * 80)
        for alpha in self.alphas:
            analysis = self.analyze_lambda_trend(alpha)
            lines.append(f"\nalpha = {alpha:g}:")
            lines.append("-" * 40)
            if 'steps' not in analysis:
                lines.append(f"  Status: {analysis['message']}")
                continue
            lines.append(f"  Trend: {analysis['trend']}")
            lines.append(f"  Scaled MSE: {analysis['mse_first']:.4f} (lambda=1) -> "
                         f"{analysis['mse_last']:.4f} (lambda=0)")
            for step in analysis['steps']:
                lines.append(f"  {step['from_lambda']:g} -> {step['to_lambda']:g}: "
                             f"{step['mean_diff']:+.4f} (se {step['se']:.4f})")
        lines.append("")

        text = "\n".join(lines)
        if filename:
            with open(filename, 'w') as fh:
                fh.write(text)
            logger.info("✓ trend report written to %s", filename)
            return filename
        return text


def pure_model_samples(component: ModelComponent, n: int, reps: int,
                       master_seed: int = 129) -> List[np.ndarray]:
    """reps independent samples of size n from one model component"""
    return [component.family.sample(component.theta_array, n, replication_rng(master_seed, r))
            for r in range(reps)]


def asymptotic_normality_check(family: FamilyModel, data_sets: Sequence[Sequence[float]],
                               cfg: BridgeConfig, target: Sequence[float],
                               starts: Optional[StartSpec] = None, coordinate: int = 0) -> Dict[str, Any]:
    """
    Standardized errors sqrt(n) (theta_hat - theta*) / sqrt(V_hat) over replications

    Each data set is fitted by the chain root at cfg.lam and V_hat is the
    plug-in sandwich at the fit. Replications whose fit or sandwich fails are
    counted and skipped.

    Returns:
        Dictionary with z values, their mean and variance, and accepted
        (variance within 1 +- 0.15)
    """
    target = family.check_theta(target)
    z_values: List[float] = []
    failures = 0
    for data in data_sets:
        x = np.asarray(data, dtype=float)
        try:
            fit = interior_root(family, x, cfg.alpha, cfg.lam, starts)
            V = sandwich(family, fit.theta_hat, x, cfg).V
        except BdpdError as exc:
            failures += 1
            logger.debug("Normality check replication skipped: %s", exc)
            continue
        var = float(V[coordinate, coordinate])
        if var <= 0.0:
            failures += 1
            continue
        z_values.append(math.sqrt(x.size) * (fit.theta_hat[coordinate] - target[coordinate]) / math.sqrt(var))

    if len(z_values) < 2:
        raise InvalidInputError("fewer than two replications produced a standardized error")
    z = np.asarray(z_values)
    variance = float(z.var(ddof=1))
    accepted = abs(variance - 1.0) <= NORMALITY_TOLERANCE
    if not accepted:
        logger.warning("Warning: standardized error variance %.4f outside 1 +- %.2f (%s)",
                       variance, NORMALITY_TOLERANCE, cfg.label())
    return {
        'alpha': cfg.alpha,
        'lambda': cfg.lam,
        'replications': len(z_values),
        'failures': failures,
        'mean': float(z.mean()),
        'variance': variance,
        'accepted': bool(accepted),
        'z': z_values,
    }
