"""
Sandwich Variance Module
Asymptotic variance of bridge estimators and tuning-parameter selection, including:
- Model-side and empirical plug-in moments of the score under density powers
- K and J matrices and the sandwich V = J^-1 K J^-T
- Determinant (and trace) closeness measures
- Grid tuning of (alpha, lambda) along chain roots
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from bdpd_errors import ChainBrokenError, InvalidInputError, SingularInformationError
from bridge_divergence import BridgeConfig
from bridge_optimizer import FitResult, StartSpec, chain_fit, validate_lambda_grid
from model_families import FamilyModel, MomentKind, ThetaLike, model_moment

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12


@dataclass
class MomentSet:
    """
    Score moments entering K and J

    The *_model fields are exact integrals against f^(1+alpha); the rest are
    sample means standing in for integrals against the unknown g.
    """
    p0_model: float
    r0_model: np.ndarray
    q0_model: np.ndarray
    s0_model: np.ndarray
    p1_a: float = float('nan')
    p1_2a: float = float('nan')
    r1_a: Optional[np.ndarray] = None
    r1_2a: Optional[np.ndarray] = None
    q1_a: Optional[np.ndarray] = None
    q1_2a: Optional[np.ndarray] = None
    s1_a: Optional[np.ndarray] = None


@dataclass
class SandwichVariance:
    K: np.ndarray
    J: np.ndarray
    V: np.ndarray
    det_V: float
    condition_number: float
    moments: Optional[MomentSet] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'K': self.K.tolist(),
            'J': self.J.tolist(),
            'V': self.V.tolist(),
            'det_V': self.det_V,
            'trace_V': float(np.trace(self.V)),
            'condition_number': self.condition_number,
        }


def empirical_moments(family: FamilyModel, theta: ThetaLike, data: Sequence[float],
                      alpha: float) -> Dict[str, Any]:
    """
    Plug-in means replacing integrals against g

    Args:
        family: Model family
        theta: Parameter vector
        data: Observations
        alpha: Robustness parameter

    Returns:
        Dictionary with p1_a, p1_2a (scalars), r1_a, r1_2a (p-vectors),
        q1_a, q1_2a and s1_a (p x p matrices)
    """
    theta = family.check_theta(theta)
    x = family.check_support(np.asarray(data, dtype=float).ravel())
    if x.size == 0:
        raise InvalidInputError("empty dataset")
    log_f = family.log_density(theta, x)
    w_a = np.exp(alpha * log_f)
    w_2a = np.exp(2.0 * alpha * log_f)
    u = family.score(theta, x)
    grad_u = family.score_jacobian(theta, x)
    outer = u[:, :, None] * u[:, None, :]
    n = x.size
    return {
        'p1_a': float(w_a.mean()),
        'p1_2a': float(w_2a.mean()),
        'r1_a': w_a @ u / n,
        'r1_2a': w_2a @ u / n,
        'q1_a': np.tensordot(w_a, outer, axes=1) / n,
        'q1_2a': np.tensordot(w_2a, outer, axes=1) / n,
        's1_a': np.tensordot(w_a, grad_u, axes=1) / n,
    }


def model_moments(family: FamilyModel, theta: ThetaLike, alpha: float) -> MomentSet:
    """Exact integrals against f^(1+alpha) (empirical fields left empty)"""
    theta = family.check_theta(theta)
    return MomentSet(
        p0_model=float(model_moment(family, theta, alpha, MomentKind.P0)),
        r0_model=np.asarray(model_moment(family, theta, alpha, MomentKind.R0), dtype=float),
        q0_model=np.asarray(model_moment(family, theta, alpha, MomentKind.Q0), dtype=float),
        s0_model=np.asarray(model_moment(family, theta, alpha, MomentKind.S0), dtype=float),
    )


def moment_set(family: FamilyModel, theta: ThetaLike, data: Sequence[float], alpha: float) -> MomentSet:
    moments = model_moments(family, theta, alpha)
    for key, value in empirical_moments(family, theta, data, alpha).items():
        setattr(moments, key, value)
    return moments


def assemble_k_j(m: MomentSet, cfg: BridgeConfig) -> Tuple[np.ndarray, np.ndarray]:
    """K and J from a complete MomentSet"""
    alpha, lam, lb = cfg.alpha, cfg.lam, cfg.lam_bar
    r0 = m.r0_model[:, None]
    r1a = m.r1_a[:, None]
    r12a = m.r1_2a[:, None]
    c0 = lam + lb * m.p0_model
    c1 = lam + lb * m.p1_a

    K = (lb ** 2 * m.p1_2a * (r0 @ r0.T)
         - lb * c0 * (r0 @ r12a.T + r12a @ r0.T)
         + c0 ** 2 * m.q1_2a
         - lb ** 2 * m.p1_a ** 2 * (r0 @ r0.T)
         + lb * c0 * m.p1_a * (r1a @ r0.T + r0 @ r1a.T)
         - c0 ** 2 * (r1a @ r1a.T))
    J = ((alpha + 1.0) * m.q0_model * c1
         + m.s0_model * c1
         - alpha * m.q1_a * c0
         - m.s1_a * c0
         + lb * alpha * (r1a @ r0.T)
         - lb * (alpha + 1.0) * (r0 @ r1a.T))
    return 0.5 * (K + K.T), J


def sandwich(family: FamilyModel, theta: ThetaLike, data: Sequence[float],
             cfg: BridgeConfig) -> SandwichVariance:
    """
    Plug-in sandwich variance of the bridge estimator at theta

    Args:
        family: Model family
        theta: Fitted parameter
        data: Observations
        cfg: Tuning pair

    Returns:
        SandwichVariance with per-observation V (no 1/n factor)
    """
    moments = moment_set(family, theta, data, cfg.alpha)
    K, J = assemble_k_j(moments, cfg)
    condition = float(np.linalg.cond(J))
    if not math.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularInformationError(condition)
    left = linalg.solve(J, K)
    V = linalg.solve(J, left.T).T
    V = 0.5 * (V + V.T)
    return SandwichVariance(K=K, J=J, V=V, det_V=closeness_det(V),
                            condition_number=condition, moments=moments)


def _check_symmetric(V: np.ndarray) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise InvalidInputError(f"closeness measures need a square matrix, got shape {V.shape}")
    scale = max(1.0, float(np.max(np.abs(V))))
    if not np.allclose(V, V.T, rtol=0.0, atol=1e-10 * scale):
        raise InvalidInputError("closeness measures need a symmetric matrix")
    return V


def closeness_det(V) -> float:
    """Determinant of a symmetric positive semidefinite variance matrix"""
    V = _check_symmetric(V)
    return float(max(np.linalg.det(V), 0.0))


def closeness_trace(V) -> float:
    """Trace, reported for comparison only"""
    return float(np.trace(_check_symmetric(V)))


@dataclass
class TuningResult:
    alpha_star: float
    lambda_star: float
    table: pd.DataFrame
    invalid_cells: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'alpha_star': self.alpha_star,
            'lambda_star': self.lambda_star,
            'invalid_cells': self.invalid_cells,
            'table': self.table.to_dict(orient='records'),
        }


def _tune_alpha_row(family: FamilyModel, data: np.ndarray, alpha: float,
                    lambdas: List[float], starts: Optional[StartSpec]) -> List[Dict[str, Any]]:
    """One alpha row of the tuning table"""
    rows: List[Dict[str, Any]] = []
    try:
        path = chain_fit(family, data, alpha, lambdas, starts)
        fits: List[FitResult] = path.fits
        broken_reason = ""
    except ChainBrokenError as exc:
        fits = list(exc.partial_path)
        broken_reason = str(exc)

    for i, lam in enumerate(lambdas):
        row: Dict[str, Any] = {'alpha': alpha, 'lambda': lam}
        if i >= len(fits):
            row.update({name: float('nan') for name in family.param_names})
            row.update({'det_V': float('nan'), 'trace_V': float('nan'),
                        'valid': False, 'reason': broken_reason or 'chain broken'})
            rows.append(row)
            continue
        theta = fits[i].theta_hat
        row.update({name: float(v) for name, v in zip(family.param_names, theta)})
        try:
            result = sandwich(family, theta, data, BridgeConfig(alpha, lam))
            row.update({'det_V': result.det_V, 'trace_V': float(np.trace(result.V)),
                        'valid': True, 'reason': ''})
        except SingularInformationError as exc:
            row.update({'det_V': float('nan'), 'trace_V': float('nan'),
                        'valid': False, 'reason': str(exc)})
        rows.append(row)
    return rows


def tune(family: FamilyModel, data: Sequence[float], alpha_grid: Sequence[float],
         lambda_grid: Sequence[float], starts: Optional[StartSpec] = None,
         threads: int = 1) -> TuningResult:
    """
    Pick (alpha, lambda) minimizing det V over chain roots

    Args:
        family: Model family
        data: Observations
        alpha_grid: Candidate alpha values
        lambda_grid: Descending lambda grid from 1 to 0
        starts: Multistart design for each DPD problem
        threads: Worker processes for the alpha rows

    Returns:
        TuningResult with the full table (columns alpha, lambda, parameters,
        det_V, trace_V, valid, reason)
    """
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise InvalidInputError("alpha grid is empty")
    lambdas = validate_lambda_grid(lambda_grid)
    x = np.asarray(data, dtype=float)

    if threads > 1 and len(alphas) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_tune_alpha_row, family, x, a, lambdas, starts) for a in alphas]
            row_groups = [f.result() for f in futures]
    else:
        row_groups = [_tune_alpha_row(family, x, a, lambdas, starts) for a in alphas]

    table = pd.DataFrame([row for group in row_groups for row in group])
    invalid = table.loc[~table['valid'], ['alpha', 'lambda', 'reason']].to_dict(orient='records')
    for cell in invalid:
        logger.warning("Warning: tuning cell alpha=%g lambda=%g invalid: %s",
                       cell['alpha'], cell['lambda'], cell['reason'])
    valid = table[table['valid']]
    if valid.empty:
        raise InvalidInputError("no valid tuning cell")
    best = valid.loc[valid['det_V'].idxmin()]
    logger.info("✓ tuning complete: alpha*=%g lambda*=%g det_V=%.6g",
                best['alpha'], best['lambda'], best['det_V'])
    return TuningResult(alpha_star=float(best['alpha']), lambda_star=float(best['lambda']),
                        table=table, invalid_cells=invalid)
