"""
Bridge Divergence Module
Sample and population objectives of the bridge density power divergence, including:
- Sample objective, analytic gradient and moment residual (estimating equation)
- Mixture truths g built from model components, point masses and uniform slabs
- Population objective and the full divergence with the g-only term
- Cross entropy, induced divergence and the Pythagorean defect
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from bdpd_errors import InvalidInputError, UnsupportedInputError
from model_families import (
    DEFAULT_QUAD_TOL,
    ExponentialScale,
    FamilyModel,
    MomentKind,
    ThetaLike,
    NormalFamily,
    adaptive_integral,
    log_power_integral,
    model_moment,
)

logger = logging.getLogger(__name__)

# Above this log t, lambda + lambda_bar * t is evaluated with logaddexp
LOG_BRIDGE_SWITCH = 30.0


@dataclass(frozen=True)
class BridgeConfig:
    """Tuning pair (alpha, lambda) of the bridge divergence"""
    alpha: float
    lam: float

    def __post_init__(self):
        for name, value in (('alpha', self.alpha), ('lambda', self.lam)):
            if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value!r}")

    @property
    def lam_bar(self) -> float:
        return 1.0 - self.lam

    @property
    def is_dpd(self) -> bool:
        return self.lam == 1.0

    @property
    def is_ldpd(self) -> bool:
        return self.lam == 0.0

    @property
    def is_mle(self) -> bool:
        return self.alpha == 0.0

    def label(self) -> str:
        return f"alpha={self.alpha:g}, lambda={self.lam:g}"


@dataclass(frozen=True)
class EmpiricalMoments:
    """t1 = int f^(1+a), t2_hat = mean f^a(X_i), s_hat = mean f^a(X_i) u(X_i)"""
    t1: float
    t2_hat: float
    s_hat: np.ndarray
    log_t1: float
    log_t2_hat: float


def bridge_log(lam: float, log_t: float) -> float:
    """log(lambda + (1 - lambda) t) given log t"""
    if lam == 0.0:
        return log_t
    if log_t == -math.inf:
        return math.log(lam)
    if log_t > LOG_BRIDGE_SWITCH:
        return float(np.logaddexp(math.log(lam), math.log1p(-lam) + log_t)) if lam < 1.0 else 0.0
    return math.log1p((1.0 - lam) * math.expm1(log_t))


def _safe_exp(value: float) -> float:
    return math.exp(value) if value < 709.0 else math.inf


def _bridge_value(cfg: BridgeConfig, log_t1: float, log_t2: float) -> float:
    """Theta-dependent bridge terms from log t1 and log t2"""
    if cfg.is_dpd:
        return _safe_exp(log_t1) - (1.0 + 1.0 / cfg.alpha) * _safe_exp(log_t2)
    if cfg.is_ldpd and log_t2 == -math.inf:
        return math.inf
    lb = cfg.lam_bar
    return (bridge_log(cfg.lam, log_t1) - (1.0 + cfg.alpha) / cfg.alpha * bridge_log(cfg.lam, log_t2)) / lb


class SampleObjective:
    """
    Bridge objective of one dataset under one family

    The data vector is copied and validated once; value, gradient and residual
    can then be evaluated at many parameter points.
    """

    def __init__(self, family: FamilyModel, data: Sequence[float], cfg: BridgeConfig):
        values = np.asarray(data, dtype=float).ravel()
        if values.size == 0:
            raise InvalidInputError("empty dataset")
        self.family = family
        self.data = family.check_support(values)
        self.data.setflags(write=False)
        self.cfg = cfg
        self.n = values.size

    def _log_weights(self, theta: np.ndarray) -> np.ndarray:
        """alpha log f(X_i); f^0 = 1 on the support"""
        log_f = self.family.log_density(theta, self.data)
        if self.cfg.alpha == 0.0:
            return np.where(np.isneginf(log_f), -np.inf, 0.0)
        return self.cfg.alpha * log_f

    def moments(self, theta: ThetaLike) -> EmpiricalMoments:
        theta = self.family.check_theta(theta)
        log_t1 = log_power_integral(self.family, theta, self.cfg.alpha)
        weights_log = self._log_weights(theta)
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            log_t2 = float(logsumexp(weights_log)) - math.log(self.n)
            if np.isfinite(weights_log).any():
                m = float(np.max(weights_log))
                w = np.exp(weights_log - m)
                u = self.family.score(theta, self.data)
                s_hat = np.exp(m) * (w @ u) / self.n
            else:
                s_hat = np.zeros(self.family.dim)
            t2_hat = float(np.exp(log_t2))
        return EmpiricalMoments(
            t1=_safe_exp(log_t1),
            t2_hat=t2_hat,
            s_hat=np.asarray(s_hat, dtype=float),
            log_t1=log_t1,
            log_t2_hat=log_t2,
        )

    def value(self, theta: ThetaLike) -> float:
        theta = self.family.check_theta(theta)
        if self.cfg.is_mle:
            log_f = self.family.log_density(theta, self.data)
            return float(-np.mean(log_f))
        mom = self.moments(theta)
        return _bridge_value(self.cfg, mom.log_t1, mom.log_t2_hat)

    def residual(self, theta: ThetaLike) -> np.ndarray:
        """R0 / (lambda + lambda_bar t1) - s_hat / (lambda + lambda_bar t2_hat)"""
        theta = self.family.check_theta(theta)
        cfg = self.cfg
        lam, lb = cfg.lam, cfg.lam_bar
        t1 = float(model_moment(self.family, theta, cfg.alpha, MomentKind.P0))
        r0 = np.asarray(model_moment(self.family, theta, cfg.alpha, MomentKind.R0), dtype=float)
        model_term = r0 / (lam + lb * t1)

        weights_log = self._log_weights(theta)
        if not np.isfinite(weights_log).any():
            if lam == 0.0:
                return np.full(self.family.dim, math.inf)
            return model_term
        m = float(np.max(weights_log))
        w = np.exp(weights_log - m)
        u = self.family.score(theta, self.data)
        # weights shifted by exp(-m) so f^a never overflows
        with np.errstate(over='ignore', invalid='ignore'):
            denom = lb * w.sum()
            if lam > 0.0:
                denom = denom + self.n * lam * np.exp(-m)
            data_term = (w @ u) / denom
        return model_term - data_term

    def gradient(self, theta: ThetaLike) -> np.ndarray:
        return (1.0 + self.cfg.alpha) * self.residual(theta)


def sample_objective(family: FamilyModel, theta: ThetaLike, data: Sequence[float],
                     cfg: BridgeConfig) -> float:
    """
    Bridge sample objective at theta

    Args:
        family: Model family
        theta: Parameter vector in the family domain
        data: Observations
        cfg: Tuning pair

    Returns:
        Objective value; math.inf when lambda = 0 and every density weight vanishes
    """
    return SampleObjective(family, data, cfg).value(theta)


def objective_gradient(family: FamilyModel, theta: ThetaLike, data: Sequence[float],
                       cfg: BridgeConfig) -> np.ndarray:
    """Exact theta-gradient of sample_objective; equals (1 + alpha) moment_residual"""
    return SampleObjective(family, data, cfg).gradient(theta)


def moment_residual(family: FamilyModel, theta: ThetaLike, data: Sequence[float],
                    cfg: BridgeConfig) -> np.ndarray:
    return SampleObjective(family, data, cfg).residual(theta)


# --- population side ------------------------------------------------------------------

@dataclass(frozen=True)
class ModelComponent:
    """A family member f_theta used as a density"""
    family: FamilyModel
    theta: Tuple[float, ...]

    def __post_init__(self):
        values = self.family.check_theta(self.theta)
        object.__setattr__(self, 'theta', tuple(float(v) for v in values))

    @property
    def theta_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return self.family.log_density(self.theta_array, np.asarray(x, dtype=float))

    def breaks(self) -> List[float]:
        points = list(self.family.quadrature_breaks(self.theta_array))
        points.extend(v for v in self.family.support if math.isfinite(v))
        return points

    def bounds(self) -> Tuple[float, float]:
        return self.family.support


@dataclass(frozen=True)
class PointMass:
    location: float

    def bounds(self) -> Tuple[float, float]:
        return (self.location, self.location)


@dataclass(frozen=True)
class UniformSlab:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise InvalidInputError(f"Uniform slab needs finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), -math.log(self.width), -np.inf)

    def breaks(self) -> List[float]:
        return [self.lo, self.hi]

    def bounds(self) -> Tuple[float, float]:
        return (self.lo, self.hi)


Component = Union[ModelComponent, PointMass, UniformSlab]


@dataclass(frozen=True)
class GSpec:
    """Mixture truth g = sum_k w_k g_k"""
    components: Tuple[Tuple[float, Component], ...] = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple((float(w), c) for w, c in self.components)
        if not comps:
            raise InvalidInputError("GSpec needs at least one component")
        for w, _ in comps:
            if not 0.0 <= w <= 1.0:
                raise InvalidInputError(f"Mixture weight {w} outside [0, 1]")
        total = sum(w for w, _ in comps)
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"Mixture weights sum to {total}, expected 1")
        object.__setattr__(self, 'components', comps)

    @classmethod
    def single(cls, component: Component) -> 'GSpec':
        return cls(((1.0, component),))

    @classmethod
    def contaminated(cls, majority: Component, contaminant: Component, eps: float) -> 'GSpec':
        """(1 - eps) majority + eps contaminant"""
        return cls(((1.0 - eps, majority), (eps, contaminant)))

    @property
    def has_point_mass(self) -> bool:
        return any(isinstance(c, PointMass) and w > 0.0 for w, c in self.components)

    def active(self) -> List[Tuple[float, Component]]:
        return [(w, c) for w, c in self.components if w > 0.0]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        if self.has_point_mass:
            raise UnsupportedInputError("g has a point mass and no density")
        x = np.asarray(x, dtype=float)
        parts = [math.log(w) + c.log_density(x) for w, c in self.active()]
        return logsumexp(np.stack(parts), axis=0)

    def breaks(self) -> List[float]:
        points: List[float] = []
        for _, c in self.active():
            if not isinstance(c, PointMass):
                points.extend(c.breaks())
        return points

    def bounds(self) -> Tuple[float, float]:
        spans = [c.bounds() for _, c in self.active()]
        return min(s[0] for s in spans), max(s[1] for s in spans)

    def describe(self) -> List[dict]:
        out = []
        for w, c in self.components:
            if isinstance(c, ModelComponent):
                out.append({'weight': w, 'family': c.family.name, 'theta': list(c.theta)})
            elif isinstance(c, PointMass):
                out.append({'weight': w, 'point_mass': c.location})
            else:
                out.append({'weight': w, 'uniform': [c.lo, c.hi]})
        return out


def _closed_power_overlap(comp: ModelComponent, family: FamilyModel, theta: np.ndarray,
                          alpha: float) -> Optional[float]:
    """log int g_k f^alpha for same-type exponential or normal pairs"""
    if isinstance(comp.family, ExponentialScale) and isinstance(family, ExponentialScale):
        s, sigma = comp.theta[0], float(theta[0])
        return -alpha * math.log(sigma) - math.log1p(alpha * s / sigma)
    if isinstance(comp.family, NormalFamily) and isinstance(family, NormalFamily) and alpha > 0.0:
        m, s = comp.family.mean_sd(comp.theta_array)
        mu, sigma = family.mean_sd(theta)
        # f^a is a scaled N(mu, sigma^2 / a) density
        var = s * s + sigma * sigma / alpha
        log_scale = -alpha * (math.log(sigma) + 0.5 * math.log(2.0 * math.pi)) \
            + 0.5 * math.log(2.0 * math.pi * sigma * sigma / alpha)
        return log_scale - 0.5 * math.log(2.0 * math.pi * var) - 0.5 * (m - mu) ** 2 / var
    return None


def _log_component_overlap(comp: Component, family: FamilyModel, theta: np.ndarray,
                           alpha: float, tol: float) -> float:
    """log int g_k f_theta^alpha"""
    if isinstance(comp, PointMass):
        return float(alpha * family.log_density(theta, np.array([comp.location]))[0])
    if isinstance(comp, ModelComponent):
        closed = _closed_power_overlap(comp, family, theta, alpha)
        if closed is not None:
            return closed
        lo, hi = comp.bounds()

        def integrand(x: float) -> float:
            point = np.array([x])
            total = comp.log_density(point)[0] + alpha * family.log_density(theta, point)[0]
            return math.exp(total) if total > -math.inf else 0.0

        breaks = comp.breaks() + list(family.quadrature_breaks(theta))
        value = adaptive_integral(integrand, lo, hi, breaks, tol)
        return math.log(value) if value > 0.0 else -math.inf

    # uniform slab: mean of f^alpha over [lo, hi], integrated on [0, 1]
    width = comp.width

    def slab_integrand(t: float) -> float:
        lf = family.log_density(theta, np.array([comp.lo + t * width]))[0]
        return math.exp(alpha * lf) if lf > -math.inf else 0.0

    interior = [(b - comp.lo) / width for b in family.quadrature_breaks(theta)]
    value = adaptive_integral(slab_integrand, 0.0, 1.0, interior, tol)
    return math.log(value) if value > 0.0 else -math.inf


def log_power_overlap(g: GSpec, family: FamilyModel, theta: ThetaLike, alpha: float,
                      tol: float = DEFAULT_QUAD_TOL) -> float:
    """log of t2(theta) = int g f_theta^alpha"""
    theta = family.check_theta(theta)
    parts = [math.log(w) + _log_component_overlap(c, family, theta, alpha, tol)
             for w, c in g.active()]
    return float(logsumexp(parts))


def log_self_power(g: GSpec, alpha: float, tol: float = DEFAULT_QUAD_TOL) -> float:
    """log of t3 = int g^(1+alpha); undefined when g has a point mass"""
    if g.has_point_mass:
        raise UnsupportedInputError("int g^(1+alpha) is undefined for point-mass contamination")
    active = g.active()
    if len(active) == 1 and isinstance(active[0][1], ModelComponent):
        comp = active[0][1]
        return log_power_integral(comp.family, comp.theta_array, alpha)
    if len(active) == 1:
        return -alpha * math.log(active[0][1].width)
    lo, hi = g.bounds()

    def integrand(x: float) -> float:
        lg = g.log_density(np.array([x]))[0]
        return math.exp((1.0 + alpha) * lg) if lg > -math.inf else 0.0

    value = adaptive_integral(integrand, lo, hi, g.breaks(), tol)
    return math.log(value)


def _require_positive_alpha(cfg: BridgeConfig, what: str):
    if cfg.alpha <= 0.0:
        raise UnsupportedInputError(f"{what} is defined for alpha > 0 only")


def population_objective(g: GSpec, family: FamilyModel, theta: ThetaLike,
                         cfg: BridgeConfig) -> float:
    """
    Theta-dependent part of the population bridge divergence between g and f_theta

    The g-only term is omitted; it does not move the minimizer and is undefined
    when g carries a point mass.
    """
    _require_positive_alpha(cfg, "population_objective")
    theta = family.check_theta(theta)
    log_t1 = log_power_integral(family, theta, cfg.alpha)
    log_t2 = log_power_overlap(g, family, theta, cfg.alpha)
    return _bridge_value(cfg, log_t1, log_t2)


def full_population_divergence(g: GSpec, family: FamilyModel, theta: ThetaLike,
                               cfg: BridgeConfig) -> float:
    """Population bridge divergence including the g-only term (zero at g = f_theta)"""
    value = population_objective(g, family, theta, cfg)
    log_t3 = log_self_power(g, cfg.alpha)
    if cfg.is_dpd:
        return value + math.exp(log_t3) / cfg.alpha
    return value + bridge_log(cfg.lam, log_t3) / (cfg.alpha * cfg.lam_bar)


def _cross_entropy_from_logs(cfg: BridgeConfig, log_h_power: float, log_overlap: float) -> float:
    alpha = cfg.alpha
    if cfg.is_dpd:
        return _safe_exp(log_h_power) / (1.0 + alpha) - _safe_exp(log_overlap) / alpha
    if cfg.is_ldpd and log_overlap == -math.inf:
        return math.inf
    lb = cfg.lam_bar
    return bridge_log(cfg.lam, log_h_power) / (lb * (1.0 + alpha)) \
        - bridge_log(cfg.lam, log_overlap) / (alpha * lb)


def cross_entropy(g: GSpec, h: ModelComponent, cfg: BridgeConfig) -> float:
    """
    Cross entropy d(g, h) of the bridge family

    Args:
        g: Mixture truth
        h: Model density
        cfg: Tuning pair with alpha > 0

    Returns:
        d(g, h)
    """
    _require_positive_alpha(cfg, "cross_entropy")
    log_h_power = log_power_integral(h.family, h.theta_array, cfg.alpha)
    log_overlap = log_power_overlap(g, h.family, h.theta_array, cfg.alpha)
    return _cross_entropy_from_logs(cfg, log_h_power, log_overlap)


def self_cross_entropy(g: GSpec, cfg: BridgeConfig) -> float:
    """d(g, g); needs int g^(1+alpha)"""
    _require_positive_alpha(cfg, "self_cross_entropy")
    log_t3 = log_self_power(g, cfg.alpha)
    return _cross_entropy_from_logs(cfg, log_t3, log_t3)


def induced_divergence(g: GSpec, h: ModelComponent, cfg: BridgeConfig) -> float:
    """D(g, h) = d(g, h) - d(g, g), equal to the full divergence over (1 + alpha)"""
    if g.has_point_mass:
        raise UnsupportedInputError("induced_divergence needs a g without point masses")
    return cross_entropy(g, h, cfg) - self_cross_entropy(g, cfg)


def pythagorean_defect(f: ModelComponent, delta: Union[ModelComponent, UniformSlab], eps: float,
                       h: ModelComponent, cfg: BridgeConfig) -> Tuple[float, float]:
    """
    Defect D(g,h) - D(g,f) - D(f,h) for g = (1 - eps) f + eps delta

    Args:
        f: Majority density
        delta: Contaminating density (no point masses)
        eps: Contamination proportion in [0, 1]
        h: Competing model density
        cfg: Tuning pair

    Returns:
        (defect, nu) with nu = lambda + lambda_bar * max(int delta f^a, int delta h^a)
    """
    if isinstance(delta, PointMass):
        raise UnsupportedInputError("pythagorean_defect needs a contaminating density")
    if not 0.0 <= eps <= 1.0:
        raise InvalidInputError(f"eps must lie in [0, 1], got {eps}")
    _require_positive_alpha(cfg, "pythagorean_defect")
    g = GSpec.contaminated(f, delta, eps)
    f_spec = GSpec.single(f)
    # the d(g, g) terms cancel
    defect = (cross_entropy(g, h, cfg) - cross_entropy(g, f, cfg)
              + cross_entropy(f_spec, f, cfg) - cross_entropy(f_spec, h, cfg))
    delta_spec = GSpec.single(delta)
    a_f = math.exp(log_power_overlap(delta_spec, f.family, f.theta_array, cfg.alpha))
    a_h = math.exp(log_power_overlap(delta_spec, h.family, h.theta_array, cfg.alpha))
    nu = cfg.lam + cfg.lam_bar * max(a_f, a_h)
    return defect, nu


def expansion_remainder_scale(f: ModelComponent, delta: Union[ModelComponent, UniformSlab],
                              h: ModelComponent, eps: float, cfg: BridgeConfig) -> float:
    """
    Remainder scale of the cross-entropy expansion under contamination

    eps/(1-eps) * (lambda + lambda_bar a) / (alpha lambda_bar (lambda + lambda_bar b))
    with a = int delta h^alpha and b = int f h^alpha.
    """
    _require_positive_alpha(cfg, "expansion_remainder_scale")
    if cfg.is_dpd:
        raise UnsupportedInputError("expansion_remainder_scale needs lambda < 1")
    if not 0.0 <= eps < 1.0:
        raise InvalidInputError(f"eps must lie in [0, 1), got {eps}")
    a = math.exp(log_power_overlap(GSpec.single(delta), h.family, h.theta_array, cfg.alpha))
    b = math.exp(log_power_overlap(GSpec.single(f), h.family, h.theta_array, cfg.alpha))
    lam, lb = cfg.lam, cfg.lam_bar
    return eps / (1.0 - eps) * (lam + lb * a) / (cfg.alpha * lb * (lam + lb * b))
