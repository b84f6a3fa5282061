"""
Bridge Optimizer Module
Minimization of bridge objectives and root selection, including:
- Local descent on the log-reparameterized domain with Newton polishing
- Multi-start global search with a record of every distinct local minimum
- The chain algorithm from the DPD global minimizer down a lambda grid
- Objective profiles, population fits and spurious-minimum diagnostics
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from bdpd_errors import (
    ChainBrokenError,
    GlobalSearchFailedError,
    InvalidInputError,
    ParameterDomainError,
    StartRejectedError,
    UnsupportedInputError,
)
from bridge_divergence import BridgeConfig, GSpec, SampleObjective, population_objective
from model_families import FamilyModel, Structure, ThetaLike

logger = logging.getLogger(__name__)

DEDUP_TOL = 1e-6
CHAIN_DISAGREEMENT = 1e-3

# 25 starts near the boundary, 75 across the bulk
SCALE_START_BLOCKS = ((25, ((0.0, 0.1),)), (75, ((0.1, 10.0),)))
PROBE_START_COUNT = 25
LOCATION_START_COUNT = 50


class FitKind(Enum):
    LOCAL = "local"
    GLOBAL = "global-multistart"
    CHAIN = "chain-step"
    POPULATION = "population"


@dataclass(frozen=True)
class Tolerances:
    """Stopping rules for local descent"""
    gradient: float = 1e-8
    residual: float = 1e-7
    max_iter: int = 500
    polish_steps: int = 20
    fd_step: float = 1e-5


@dataclass
class FitResult:
    """Outcome of one minimization"""
    theta_hat: np.ndarray
    objective: float
    gradient_norm: float
    converged: bool
    n_evals: int
    kind: FitKind
    alpha: float = float('nan')
    lam: float = float('nan')
    start: Optional[np.ndarray] = None
    start_index: Optional[int] = None
    message: str = ""
    residual_norm: float = float('nan')
    local_minima: List['FitResult'] = field(default_factory=list)
    start_diagnostics: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self, param_names: Sequence[str] = ()) -> Dict[str, Any]:
        names = list(param_names) or [f"theta{i}" for i in range(len(self.theta_hat))]
        out = {
            'kind': self.kind.value,
            'alpha': self.alpha,
            'lambda': self.lam,
            'theta_hat': dict(zip(names, (float(v) for v in self.theta_hat))),
            'objective': float(self.objective),
            'gradient_norm': float(self.gradient_norm),
            'residual_norm': float(self.residual_norm),
            'converged': bool(self.converged),
            'n_evals': int(self.n_evals),
            'message': self.message,
        }
        if self.start is not None:
            out['start'] = [float(v) for v in self.start]
        if self.local_minima:
            out['local_minima'] = [
                {'theta_hat': [float(v) for v in m.theta_hat], 'objective': float(m.objective),
                 'gradient_norm': float(m.gradient_norm), 'start_index': m.start_index}
                for m in self.local_minima
            ]
        if self.start_diagnostics:
            failed = [d for d in self.start_diagnostics if d.get('status') != 'converged']
            out['starts_total'] = len(self.start_diagnostics)
            out['starts_failed'] = len(failed)
        return out


@dataclass
class ChainPath:
    """Chain roots along a descending lambda grid"""
    alpha: float
    lambdas: List[float]
    fits: List[FitResult]
    max_step: float
    global_fit: Optional[FitResult] = None

    def root_at(self, lam: float) -> FitResult:
        for value, fit in zip(self.lambdas, self.fits):
            if abs(value - lam) < 1e-12:
                return fit
        raise InvalidInputError(f"lambda={lam} is not on the chain grid")

    def to_frame(self, param_names: Sequence[str]) -> pd.DataFrame:
        rows = []
        for lam, fit in zip(self.lambdas, self.fits):
            row = {'alpha': self.alpha, 'lambda': lam}
            row.update({name: float(v) for name, v in zip(param_names, fit.theta_hat)})
            row.update({'objective': fit.objective, 'gradient_norm': fit.gradient_norm,
                        'converged': fit.converged})
            rows.append(row)
        return pd.DataFrame(rows)


@dataclass(frozen=True)
class StartBlock:
    count: int
    bounds: Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class StartSpec:
    """Uniform random starts, block by block, from one master seed"""
    blocks: Tuple[StartBlock, ...]
    master_seed: int = 129

    def __post_init__(self):
        if not self.blocks:
            raise InvalidInputError("StartSpec needs at least one block")
        for block in self.blocks:
            if block.count < 1:
                raise InvalidInputError(f"Start block count must be positive, got {block.count}")
            for lo, hi in block.bounds:
                if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                    raise InvalidInputError(f"Bad start interval ({lo}, {hi})")

    @classmethod
    def for_family(cls, family: FamilyModel, data: Sequence[float], master_seed: int = 129,
                   boundary_starts: bool = False) -> 'StartSpec':
        """
        Default starts for a family

        Scale families use 25 starts on [0, 0.1] and 75 on (0.1, 10]. With
        boundary_starts, 25 more starts on (0, 10 d_min] where d_min is the
        smallest nonzero distance between an observation and the fixed location.
        """
        x = np.asarray(data, dtype=float)
        if family.structure is Structure.SCALE:
            blocks = [StartBlock(n, b) for n, b in SCALE_START_BLOCKS]
            if boundary_starts:
                dist = np.abs(x - family.location(family.standard_theta()))
                dist = dist[dist > 0.0]
                if dist.size:
                    blocks.append(StartBlock(PROBE_START_COUNT, ((0.0, 10.0 * float(dist.min())),)))
            return cls(tuple(blocks), master_seed)
        lo, hi = float(x.min()), float(x.max())
        if family.structure is Structure.LOCATION:
            return cls((StartBlock(LOCATION_START_COUNT, ((lo, hi),)),), master_seed)
        return cls((StartBlock(LOCATION_START_COUNT, ((lo, hi), (0.01, 10.0))),), master_seed)

    @classmethod
    def from_points(cls, points: Sequence[ThetaLike], master_seed: int = 129) -> 'StartSpec':
        """Deterministic starts: one degenerate block per point"""
        blocks = []
        for point in points:
            values = np.atleast_1d(np.asarray(point, dtype=float))
            blocks.append(StartBlock(1, tuple((float(v), float(v)) for v in values)))
        return cls(tuple(blocks), master_seed)

    @property
    def total(self) -> int:
        return sum(b.count for b in self.blocks)

    def draw(self, family: FamilyModel) -> np.ndarray:
        """All starts in block order, shape (total, p)"""
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.master_seed)))
        rows = []
        for block in self.blocks:
            if len(block.bounds) != family.dim:
                raise InvalidInputError(
                    f"Start block has {len(block.bounds)} coordinates, family has {family.dim}")
            lows = np.array([b[0] for b in block.bounds])
            highs = np.array([b[1] for b in block.bounds])
            rows.append(lows + (highs - lows) * rng.random((block.count, family.dim)))
        return np.vstack(rows)

    def to_dict(self) -> Dict[str, Any]:
        return {'master_seed': self.master_seed,
                'blocks': [{'count': b.count, 'bounds': [list(x) for x in b.bounds]} for b in self.blocks]}


class _Counted:
    """Objective and gradient in unconstrained coordinates with an evaluation count"""

    def __init__(self, problem, family: FamilyModel):
        self.problem = problem
        self.family = family
        self.n_evals = 0

    def theta(self, s: np.ndarray) -> np.ndarray:
        return self.family.from_unconstrained(s)

    def value(self, s: np.ndarray) -> float:
        self.n_evals += 1
        try:
            with np.errstate(all='ignore'):
                value = float(self.problem.value(self.theta(s)))
        except ParameterDomainError:
            return math.inf
        return value if not math.isnan(value) else math.inf

    def gradient(self, s: np.ndarray) -> np.ndarray:
        theta = self.theta(s)
        try:
            with np.errstate(all='ignore'):
                grad = np.asarray(self.problem.gradient(theta), dtype=float)
        except ParameterDomainError:
            return np.full(self.family.dim, np.nan)
        return grad * self.family.chain_factor(theta)

    def residual_norm(self, s: np.ndarray) -> float:
        """Norm of the estimating-equation residual in theta; 0 when the problem has none"""
        residual = getattr(self.problem, 'residual', None)
        if residual is None:
            return 0.0
        try:
            with np.errstate(all='ignore'):
                r = np.asarray(residual(self.theta(s)), dtype=float)
        except ParameterDomainError:
            return math.inf
        return float(np.linalg.norm(r)) if np.all(np.isfinite(r)) else math.inf

    def value_and_gradient(self, s: np.ndarray) -> Tuple[float, np.ndarray]:
        value = self.value(s)
        grad = self.gradient(s)
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            return math.inf, np.zeros(self.family.dim)
        return value, grad

    def hessian(self, s: np.ndarray, step: float) -> np.ndarray:
        """Central differences of the analytic gradient, symmetrized"""
        p = s.size
        out = np.empty((p, p))
        for j in range(p):
            e = np.zeros(p)
            e[j] = step
            out[:, j] = (self.gradient(s + e) - self.gradient(s - e)) / (2.0 * step)
        return 0.5 * (out + out.T)


def _newton_polish(counted: _Counted, s: np.ndarray, value: float, grad: np.ndarray,
                   tol: Tolerances) -> Tuple[np.ndarray, float, np.ndarray, Optional[np.ndarray]]:
    hess = None
    for _ in range(tol.polish_steps):
        gnorm = float(np.linalg.norm(grad))
        # small scales shrink the log-coordinate gradient, so theta is checked too
        if gnorm <= tol.gradient * 1e-3 and counted.residual_norm(s) <= tol.residual * 1e-2:
            break
        hess = counted.hessian(s, tol.fd_step)
        if not np.all(np.isfinite(hess)):
            break
        eigvals = np.linalg.eigvalsh(hess)
        if eigvals.min() > 0.0:
            direction = -np.linalg.solve(hess, grad)
        else:
            direction = -grad
        step = 1.0
        accepted = False
        for _ in range(40):
            trial = s + step * direction
            trial_value = counted.value(trial)
            if math.isfinite(trial_value):
                trial_grad = counted.gradient(trial)
                slack = 1e-12 * (1.0 + abs(value))
                if np.all(np.isfinite(trial_grad)) and trial_value <= value + slack \
                        and (trial_value < value or np.linalg.norm(trial_grad) < gnorm):
                    s, value, grad = trial, trial_value, trial_grad
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
    hess = counted.hessian(s, tol.fd_step)
    return s, value, grad, hess


def local_minimize(problem, start: ThetaLike, tol: Tolerances = Tolerances(),
                   kind: FitKind = FitKind.LOCAL) -> FitResult:
    """
    Descend from one start to a local minimum

    Args:
        problem: Object exposing family, value(theta) and gradient(theta)
            (SampleObjective or PopulationProblem)
        start: Starting parameter vector inside the family domain
        tol: Stopping rules
        kind: Label stored on the result

    Returns:
        FitResult; converged=False with a message when no local minimum was certified
    """
    family = problem.family
    start = family.check_theta(start)
    counted = _Counted(problem, family)
    s0 = family.to_unconstrained(start)
    f0 = counted.value(s0)
    if not math.isfinite(f0):
        raise StartRejectedError(start.tolist(), f0)

    result = minimize(counted.value_and_gradient, s0, jac=True, method='BFGS',
                      options={'gtol': tol.gradient, 'maxiter': tol.max_iter})
    s = np.asarray(result.x, dtype=float)
    value = counted.value(s)
    if not math.isfinite(value) or value > f0:
        s, value = s0, f0
    grad = counted.gradient(s)
    message = str(result.message)
    hess = None
    if np.all(np.isfinite(grad)):
        s, value, grad, hess = _newton_polish(counted, s, value, grad, tol)

    gnorm = float(np.linalg.norm(grad)) if np.all(np.isfinite(grad)) else math.inf
    curvature_ok = hess is not None and np.all(np.isfinite(hess)) \
        and float(np.linalg.eigvalsh(hess).min()) > 0.0
    rnorm = counted.residual_norm(s)
    converged = gnorm <= tol.gradient and rnorm <= tol.residual and curvature_ok
    if not converged:
        if gnorm > tol.gradient:
            message = f"gradient norm {gnorm:.3e} above tolerance ({message})"
        elif rnorm > tol.residual:
            message = f"moment residual {rnorm:.3e} above tolerance"
        else:
            message = "stationary point without positive curvature"
    theta_hat = family.from_unconstrained(s)
    cfg = getattr(problem, 'cfg', None)
    return FitResult(
        theta_hat=theta_hat,
        objective=value,
        gradient_norm=gnorm,
        converged=bool(converged),
        n_evals=counted.n_evals,
        kind=kind,
        alpha=cfg.alpha if cfg is not None else float('nan'),
        lam=cfg.lam if cfg is not None else float('nan'),
        start=start,
        message=message if not converged else "converged",
        residual_norm=rnorm,
    )


def _same_minimum(family: FamilyModel, a: np.ndarray, b: np.ndarray) -> bool:
    for x, y, is_scale in zip(a, b, family.scale_mask):
        limit = DEDUP_TOL * (max(x, y) if is_scale else max(1.0, abs(x)))
        if abs(x - y) > limit:
            return False
    return True


def _selection_key(family: FamilyModel, fit: FitResult):
    """Lowest objective; near-ties go to the larger scale, then the earlier start"""
    scale = family.scale(fit.theta_hat)
    rounded = round(fit.objective, 10) if math.isfinite(fit.objective) else math.inf
    index = fit.start_index if fit.start_index is not None else -1
    return (rounded, -(scale if scale is not None else 0.0), index)


def distinct_minima(family: FamilyModel, fits: Sequence[FitResult]) -> List[FitResult]:
    """Deduplicate converged fits, keeping the best representative of each"""
    ordered = sorted((f for f in fits if f.converged), key=lambda f: _selection_key(family, f))
    kept: List[FitResult] = []
    for fit in ordered:
        if not any(_same_minimum(family, fit.theta_hat, k.theta_hat) for k in kept):
            kept.append(fit)
    return kept


def multistart_global(family: FamilyModel, data: Sequence[float], cfg: BridgeConfig,
                      starts: Optional[StartSpec] = None, tol: Tolerances = Tolerances()) -> FitResult:
    """
    Best converged local minimum over a set of random starts

    Args:
        family: Model family
        data: Observations
        cfg: Tuning pair
        starts: Start design (defaults to StartSpec.for_family)
        tol: Local stopping rules

    Returns:
        FitResult of kind global-multistart carrying every distinct local minimum
    """
    problem = SampleObjective(family, data, cfg)
    starts = starts or StartSpec.for_family(family, problem.data)
    points = starts.draw(family)
    fits: List[FitResult] = []
    diagnostics: List[Dict[str, Any]] = []
    total_evals = 0
    for index, point in enumerate(points):
        entry: Dict[str, Any] = {'index': index, 'start': point.tolist()}
        try:
            fit = local_minimize(problem, point, tol)
        except (StartRejectedError, ParameterDomainError) as exc:
            entry.update({'status': 'rejected', 'reason': str(exc)})
            diagnostics.append(entry)
            continue
        fit.start_index = index
        total_evals += fit.n_evals
        entry.update({'status': 'converged' if fit.converged else 'failed',
                      'objective': fit.objective, 'theta_hat': fit.theta_hat.tolist(),
                      'message': fit.message})
        diagnostics.append(entry)
        fits.append(fit)

    minima = distinct_minima(family, fits)
    if not minima:
        logger.warning("Warning: no converged start for %s (%s)", family.name, cfg.label())
        raise GlobalSearchFailedError(diagnostics)
    best = minima[0]
    logger.debug("Multistart %s: %d distinct minima, best theta=%s objective=%.10g",
                 cfg.label(), len(minima), best.theta_hat, best.objective)
    return FitResult(
        theta_hat=best.theta_hat.copy(),
        objective=best.objective,
        gradient_norm=best.gradient_norm,
        converged=True,
        n_evals=total_evals,
        kind=FitKind.GLOBAL,
        alpha=cfg.alpha,
        lam=cfg.lam,
        start=best.start,
        start_index=best.start_index,
        message="converged",
        residual_norm=best.residual_norm,
        local_minima=minima,
        start_diagnostics=diagnostics,
    )


def lambda_grid(step: float = 0.1, n: Optional[int] = None) -> List[float]:
    """
    Descending grid 1 = lambda_K > ... > lambda_0 = 0

    Args:
        step: Grid mesh
        n: Sample size; when given, 1 - n^(-1/2) is inserted after 1

    Returns:
        List of lambda values
    """
    if not 0.0 < step <= 1.0:
        raise InvalidInputError(f"lambda step must lie in (0, 1], got {step}")
    count = int(math.ceil(1.0 / step - 1e-9))
    grid = [round(max(1.0 - k * step, 0.0), 12) for k in range(count)] + [0.0]
    if n is not None and n > 1:
        near_one = 1.0 - 1.0 / math.sqrt(n)
        if near_one > grid[1]:
            grid.insert(1, near_one)
    return grid


def validate_lambda_grid(grid: Sequence[float]) -> List[float]:
    values = [float(v) for v in grid]
    if len(values) < 2 or values[0] != 1.0 or values[-1] != 0.0:
        raise InvalidInputError("lambda grid must start at 1 and end at 0")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise InvalidInputError("lambda grid must be strictly decreasing")
    return values


def _descend(family: FamilyModel, data: np.ndarray, alpha: float, lambdas: Sequence[float],
             first: FitResult, tol: Tolerances, path_fits: List[FitResult]) -> List[FitResult]:
    previous = first
    for lam in lambdas:
        cfg = BridgeConfig(alpha, lam)
        try:
            fit = local_minimize(SampleObjective(family, data, cfg), previous.theta_hat, tol,
                                 kind=FitKind.CHAIN)
        except (StartRejectedError, ParameterDomainError) as exc:
            raise ChainBrokenError(path_fits, lam, str(exc)) from exc
        if not fit.converged:
            raise ChainBrokenError(path_fits, lam, fit.message)
        path_fits.append(fit)
        previous = fit
    return path_fits


def chain_fit(family: FamilyModel, data: Sequence[float], alpha: float,
              lambdas: Optional[Sequence[float]] = None, starts: Optional[StartSpec] = None,
              tol: Tolerances = Tolerances(), dpd_fit: Optional[FitResult] = None) -> ChainPath:
    """
    Track a root from the DPD global minimizer down a lambda grid

    Args:
        family: Model family
        data: Observations
        alpha: Robustness parameter
        lambdas: Descending grid from 1 to 0 (default step 0.1)
        starts: Multistart design for the DPD problem
        tol: Local stopping rules
        dpd_fit: Already computed DPD global fit to reuse

    Returns:
        ChainPath; a failed step raises ChainBrokenError carrying the partial path
    """
    grid = validate_lambda_grid(lambdas if lambdas is not None else lambda_grid())
    values = np.asarray(data, dtype=float)
    if dpd_fit is None:
        try:
            dpd_fit = multistart_global(family, values, BridgeConfig(alpha, 1.0), starts, tol)
        except GlobalSearchFailedError as exc:
            raise ChainBrokenError([], 1.0, str(exc)) from exc
    fits: List[FitResult] = [dpd_fit]
    _descend(family, values, alpha, grid[1:], dpd_fit, tol, fits)
    max_step = max(a - b for a, b in zip(grid, grid[1:]))
    logger.debug("✓ chain alpha=%g complete: theta(0)=%s", alpha, fits[-1].theta_hat)
    return ChainPath(alpha=alpha, lambdas=grid, fits=fits, max_step=max_step, global_fit=dpd_fit)


def global_comparison(family: FamilyModel, data: Sequence[float], path: ChainPath,
                      starts: Optional[StartSpec] = None, tol: Tolerances = Tolerances()) -> pd.DataFrame:
    """
    Chain root next to the multistart global minimizer for every lambda on a chain

    Returns:
        DataFrame with lambda, chain_* and global_* columns and a disagrees flag
    """
    values = np.asarray(data, dtype=float)
    starts = starts or StartSpec.for_family(family, values, boundary_starts=True)
    rows = []
    for lam, chain in zip(path.lambdas, path.fits):
        glob = multistart_global(family, values, BridgeConfig(path.alpha, lam), starts, tol)
        row = {'alpha': path.alpha, 'lambda': lam}
        for i, name in enumerate(family.param_names):
            row[f"chain_{name}"] = float(chain.theta_hat[i])
            row[f"global_{name}"] = float(glob.theta_hat[i])
        row['chain_objective'] = chain.objective
        row['global_objective'] = glob.objective
        row['disagrees'] = bool(np.max(np.abs(chain.theta_hat - glob.theta_hat)) > CHAIN_DISAGREEMENT)
        if row['disagrees']:
            logger.warning("Warning: lambda=%g chain root %s differs from global minimizer %s",
                           lam, chain.theta_hat, glob.theta_hat)
        rows.append(row)
    return pd.DataFrame(rows)


def _theta_rows(family: FamilyModel, theta_grid) -> np.ndarray:
    grid = np.asarray(theta_grid, dtype=float)
    if grid.ndim == 1:
        if family.dim != 1:
            raise InvalidInputError(f"{family.name} needs a grid of {family.dim}-vectors")
        grid = grid[:, None]
    if grid.ndim != 2 or grid.shape[1] != family.dim:
        raise InvalidInputError(f"theta grid must have shape (m, {family.dim})")
    return grid


def profile_objective(family: FamilyModel, source: Union[Sequence[float], GSpec], cfg: BridgeConfig,
                      theta_grid) -> pd.DataFrame:
    """
    Objective landscape over a grid of parameter values

    Args:
        family: Model family
        source: Observations (sample objective) or a GSpec (population objective)
        cfg: Tuning pair
        theta_grid: 1-d grid for one-parameter families, else an (m, p) array

    Returns:
        DataFrame with one column per parameter and an objective column
    """
    rows = _theta_rows(family, theta_grid)
    if isinstance(source, GSpec):
        def evaluate(theta):
            return population_objective(source, family, theta, cfg)
    else:
        problem = SampleObjective(family, source, cfg)
        evaluate = problem.value
    values = []
    with np.errstate(all='ignore'):
        for theta in rows:
            values.append(evaluate(family.check_theta(theta)))
    frame = pd.DataFrame(rows, columns=list(family.param_names))
    frame['objective'] = values
    return frame


def grid_minima(profile: pd.DataFrame) -> pd.DataFrame:
    """Rows of a one-parameter profile that are strict local minima along the grid"""
    obj = profile['objective'].to_numpy()
    keep = [i for i in range(1, len(obj) - 1) if obj[i] < obj[i - 1] and obj[i] < obj[i + 1]]
    return profile.iloc[keep]


class PopulationProblem:
    """Population objective with central-difference gradients"""

    def __init__(self, g: GSpec, family: FamilyModel, cfg: BridgeConfig, step: float = 1e-6):
        self.g = g
        self.family = family
        self.cfg = cfg
        self.step = step

    def value(self, theta: np.ndarray) -> float:
        return population_objective(self.g, self.family, theta, self.cfg)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        grad = np.empty(theta.size)
        for j in range(theta.size):
            h = self.step * max(1.0, abs(theta[j])) if not self.family.scale_mask[j] \
                else self.step * theta[j]
            up, down = theta.copy(), theta.copy()
            up[j] += h
            down[j] -= h
            grad[j] = (self.value(up) - self.value(down)) / (2.0 * h)
        return grad


def population_fit(g: GSpec, family: FamilyModel, cfg: BridgeConfig, start: ThetaLike,
                   tol: Tolerances = Tolerances(gradient=1e-6)) -> FitResult:
    """Local minimizer of the population objective reached from start"""
    return local_minimize(PopulationProblem(g, family, cfg), start, tol, kind=FitKind.POPULATION)


# --- spurious minima ----------------------------------------------------------------

RAY_EXPONENTS = tuple(range(2, 13))


@dataclass
class SpuriousReport:
    """Boundary behaviour of one (alpha, lambda) objective"""
    family: str
    alpha: float
    lam: float
    spurious: bool
    interior: FitResult
    boundary_objective: float
    witness_theta: np.ndarray
    ray: pd.DataFrame
    af_threshold: Optional[float] = None
    n_exceeds_af: Optional[bool] = None
    remark_bound: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self, param_names: Sequence[str] = ()) -> Dict[str, Any]:
        return {
            'family': self.family,
            'alpha': self.alpha,
            'lambda': self.lam,
            'spurious': self.spurious,
            'interior': self.interior.to_dict(param_names),
            'boundary_objective': self.boundary_objective,
            'witness_theta': [float(v) for v in self.witness_theta],
            'af_threshold': self.af_threshold,
            'n_exceeds_af': self.n_exceeds_af,
            'remark_bound': self.remark_bound,
            'ray': self.ray.to_dict(orient='records'),
            'notes': list(self.notes),
        }


def dpd_sample_size_threshold(family: FamilyModel, alpha: float) -> float:
    """a_f = (1 + alpha) f^alpha(0) / (alpha int f^(1+alpha)) for the standardized f"""
    if alpha <= 0.0:
        raise UnsupportedInputError("the DPD threshold needs alpha > 0")
    f0 = math.exp(alpha * float(family.base_log_density(np.array([0.0]))[0]))
    return (1.0 + alpha) * f0 / (alpha * family.base_power_integral(alpha))


def scale_remark_bound(family: FamilyModel, data: Sequence[float], alpha: float) -> float:
    """
    Upper bound on the infimum of the LDPD objective of a scale family

    log(n^(1+1/alpha) d_(1)) + log int f^(1+alpha) - (1+alpha) log f(1), where
    d_(1) is the smallest distance between an observation and the fixed location.
    """
    if family.structure is not Structure.SCALE:
        raise UnsupportedInputError(f"{family.name} is not a scale family")
    if alpha <= 0.0:
        raise UnsupportedInputError("the scale bound needs alpha > 0")
    x = np.asarray(data, dtype=float)
    d_min = float(np.min(np.abs(x - family.location(family.standard_theta()))))
    if d_min <= 0.0:
        return -math.inf
    log_f1 = float(family.base_log_density(np.array([1.0]))[0])
    d_f = math.log(family.base_power_integral(alpha)) - (1.0 + alpha) * log_f1
    return math.log(x.size ** (1.0 + 1.0 / alpha) * d_min) + d_f


def interior_root(family: FamilyModel, data: np.ndarray, alpha: float, lam: float,
                  starts: Optional[StartSpec] = None, tol: Tolerances = Tolerances(),
                  dpd_fit: Optional[FitResult] = None) -> FitResult:
    """Chain root at lambda reached from the DPD global minimizer in steps of at most 0.1"""
    if dpd_fit is None:
        dpd_fit = multistart_global(family, data, BridgeConfig(alpha, 1.0), starts, tol)
    if lam == 1.0:
        return dpd_fit
    grid = [v for v in lambda_grid() if v > lam] + [lam]
    fits = _descend(family, data, alpha, grid[1:], dpd_fit, tol, [dpd_fit])
    return fits[-1]


def spurious_report(family: FamilyModel, data: Sequence[float], alpha: float, lam: float,
                    starts: Optional[StartSpec] = None, tol: Tolerances = Tolerances(),
                    dpd_fit: Optional[FitResult] = None) -> SpuriousReport:
    """
    Decide whether the (alpha, lambda) objective has a spurious boundary minimum

    The interior root is reached from the DPD global minimizer by warm-started
    descent. The boundary is searched along sigma -> 0 rays anchored at every
    observation (location-scale) or around the smallest distance to the fixed
    location (scale), including a local descent started at that notch.

    Args:
        family: Scale or location-scale family
        data: Observations
        alpha: Robustness parameter (> 0)
        lam: Bridge parameter
        starts: Multistart design for the DPD problem
        tol: Local stopping rules
        dpd_fit: Already computed DPD global fit to reuse

    Returns:
        SpuriousReport
    """
    if family.structure is Structure.LOCATION:
        raise UnsupportedInputError(f"{family.name} has no scale parameter to send to zero")
    if alpha <= 0.0:
        raise UnsupportedInputError("spurious_report needs alpha > 0")
    x = np.asarray(data, dtype=float)
    cfg = BridgeConfig(alpha, lam)
    problem = SampleObjective(family, x, cfg)
    interior = interior_root(family, x, alpha, lam, starts, tol, dpd_fit)
    interior_scale = family.scale(interior.theta_hat)
    notes: List[str] = []

    rows = []
    candidates: List[Tuple[float, np.ndarray]] = []
    with np.errstate(all='ignore'):
        if family.structure is Structure.LOCATION_SCALE:
            for anchor in np.unique(x):
                for k in RAY_EXPONENTS:
                    theta = family.with_location_scale(float(anchor), 10.0 ** (-k))
                    value = problem.value(theta)
                    rows.append({'anchor': float(anchor), 'sigma': 10.0 ** (-k), 'objective': value})
                    candidates.append((value, theta))
        else:
            m = family.location(family.standard_theta())
            dist = np.abs(x - m)
            dist = dist[dist > 0.0]
            d_min = float(dist.min())
            for factor in (0.1, 0.3, 1.0, math.sqrt(1.0 + alpha), 1.0 + alpha, 3.0, 10.0):
                theta = family.with_location_scale(m, d_min * factor)
                value = problem.value(theta)
                rows.append({'anchor': m, 'sigma': d_min * factor, 'objective': value})
                candidates.append((value, theta))
            for factor in (math.sqrt(1.0 + alpha), 1.0 + alpha):
                try:
                    notch = local_minimize(problem, family.with_location_scale(m, d_min * factor), tol)
                except (StartRejectedError, ParameterDomainError):
                    continue
                if notch.converged:
                    candidates.append((notch.objective, notch.theta_hat))
                    notes.append(f"notch descent from sigma={d_min * factor:.6g} "
                                 f"reached sigma={family.scale(notch.theta_hat):.9g}")

    finite = [(v, t) for v, t in candidates if math.isfinite(v)]
    boundary_value, witness = min(finite, key=lambda c: c[0]) if finite else (math.inf, interior.theta_hat)
    witness_scale = family.scale(witness)
    near_boundary = witness_scale is not None and interior_scale is not None \
        and witness_scale < 1e-2 * interior_scale
    spurious = bool(near_boundary and boundary_value < interior.objective)

    af = dpd_sample_size_threshold(family, alpha)
    remark = scale_remark_bound(family, x, alpha) \
        if family.structure is Structure.SCALE and lam == 0.0 else None
    if spurious:
        logger.warning("Warning: spurious minimum for %s at %s (objective %.6g < interior %.6g)",
                       cfg.label(), witness, boundary_value, interior.objective)
    return SpuriousReport(
        family=family.name,
        alpha=alpha,
        lam=lam,
        spurious=spurious,
        interior=interior,
        boundary_objective=boundary_value,
        witness_theta=np.asarray(witness, dtype=float),
        ray=pd.DataFrame(rows),
        af_threshold=af,
        n_exceeds_af=bool(x.size > af),
        remark_bound=remark,
        notes=notes,
    )


def spurious_boundary(family: FamilyModel, data: Sequence[float], axis: str, fixed: float,
                      lo: float, hi: float, tol: float = 1e-2,
                      starts: Optional[StartSpec] = None) -> float:
    """
    Bisect the switch between spurious and non-spurious along alpha or lambda

    Args:
        family: Scale or location-scale family
        data: Observations
        axis: 'alpha' (lambda held at fixed) or 'lambda' (alpha held at fixed)
        fixed: Value of the other tuning parameter
        lo, hi: Bracket whose endpoints classify differently
        tol: Bracket width at which bisection stops

    Returns:
        Midpoint of the final bracket
    """
    if axis not in ('alpha', 'lambda'):
        raise InvalidInputError(f"axis must be 'alpha' or 'lambda', got {axis!r}")
    x = np.asarray(data, dtype=float)
    dpd_cache: Dict[float, FitResult] = {}

    def classify(value: float) -> bool:
        alpha, lam = (value, fixed) if axis == 'alpha' else (fixed, value)
        if alpha not in dpd_cache:
            dpd_cache[alpha] = multistart_global(family, x, BridgeConfig(alpha, 1.0), starts)
        return spurious_report(family, x, alpha, lam, starts, dpd_fit=dpd_cache[alpha]).spurious

    low_state, high_state = classify(lo), classify(hi)
    if low_state == high_state:
        raise InvalidInputError(f"no spurious switch between {axis}={lo} and {axis}={hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if classify(mid) == low_state:
            lo = mid
        else:
            hi = mid
    boundary = 0.5 * (lo + hi)
    logger.info("Spurious switch along %s (other fixed at %g): %.6g", axis, fixed, boundary)
    return boundary
