"""
Model Families Module
Parametric density families used by every estimator in the toolkit, including:
- Exponential scale family (mean sigma)
- Normal location-scale family and its fixed-mean / fixed-variance restrictions
- Scores, score Jacobians and closed-form model moments
- Adaptive quadrature used as the independent oracle for the closed forms
"""

import logging
import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad

from bdpd_errors import ParameterDomainError, QuadratureError, SupportError, UnsupportedInputError

logger = logging.getLogger(__name__)

ThetaLike = Union[float, Sequence[float], np.ndarray]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

DEFAULT_QUAD_TOL = 1e-10
QUAD_EVAL_BUDGET = 1_000_000
QUAD_SUBINTERVAL_LIMIT = 500


class FamilyId(Enum):
    EXPONENTIAL_SCALE = "exponential-scale"
    NORMAL_LOCATION_SCALE = "normal-location-scale"
    NORMAL_MEAN = "normal-mean-fixed-variance"
    NORMAL_SCALE = "normal-scale-fixed-mean"


class MomentKind(Enum):
    """Model integrals against f^(1+alpha)"""
    P0 = "P0"  # int f^(1+a)
    R0 = "R0"  # int f^(1+a) u
    Q0 = "Q0"  # int f^(1+a) u u^T
    S0 = "S0"  # int f^(1+a) grad u


class Structure(Enum):
    SCALE = "scale"
    LOCATION = "location"
    LOCATION_SCALE = "location-scale"


class FamilyModel(ABC):
    """Base class for a parametric density family f_theta"""

    family_id: FamilyId
    param_names: Tuple[str, ...]
    scale_mask: Tuple[bool, ...]
    structure: Structure
    support: Tuple[float, float] = (-math.inf, math.inf)

    @property
    def dim(self) -> int:
        return len(self.param_names)

    @property
    def name(self) -> str:
        return self.family_id.value

    def describe(self) -> Dict:
        """Plain dictionary description used in serialized results"""
        return {
            'family': self.name,
            'parameters': list(self.param_names),
            'support': [self.support[0], self.support[1]],
        }

    def check_theta(self, theta: ThetaLike) -> np.ndarray:
        """
        Validate a parameter vector against the family domain

        Args:
            theta: Scalar or sequence of parameter values

        Returns:
            Parameter vector as a float array of length dim
        """
        values = np.atleast_1d(np.asarray(theta, dtype=float))
        if values.shape != (self.dim,):
            raise ParameterDomainError(
                f"theta (expected dimension {self.dim}, got {values.size})", float('nan'))
        for name, value, is_scale in zip(self.param_names, values, self.scale_mask):
            if not math.isfinite(value) or (is_scale and value <= 0.0):
                raise ParameterDomainError(name, float(value))
        return values

    def in_support(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.support
        return (x >= lo) & (x <= hi)

    def check_support(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        inside = self.in_support(x)
        if not np.all(inside):
            raise SupportError(float(x[~inside][0]), self.name)
        return x

    # --- unconstrained coordinates -------------------------------------------------

    def to_unconstrained(self, theta: ThetaLike) -> np.ndarray:
        values = self.check_theta(theta)
        mask = np.asarray(self.scale_mask)
        return np.where(mask, np.log(np.where(mask, values, 1.0)), values)

    def from_unconstrained(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        mask = np.asarray(self.scale_mask)
        return np.where(mask, np.exp(np.where(mask, s, 0.0)), s)

    def chain_factor(self, theta: np.ndarray) -> np.ndarray:
        """d theta / d s for each coordinate of the log-reparameterization"""
        return np.where(np.asarray(self.scale_mask), theta, 1.0)

    # --- density side ---------------------------------------------------------------

    @abstractmethod
    def log_density(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """log f_theta(x), -inf outside the support"""

    @abstractmethod
    def score(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Score vectors, shape (n, p)"""

    @abstractmethod
    def score_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Second theta-derivatives of log f, shape (n, p, p)"""

    def closed_form_moment(self, theta: np.ndarray, gamma: float, kind: MomentKind):
        """Analytic int f^gamma (.) or None when the family has no closed form"""
        return None

    @abstractmethod
    def quadrature_breaks(self, theta: np.ndarray) -> List[float]:
        """Finite split points (mode first) for adaptive quadrature"""

    @abstractmethod
    def sample(self, theta: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
        pass

    # --- location / scale structure ---------------------------------------------------

    def location(self, theta: np.ndarray) -> float:
        return 0.0

    def scale(self, theta: np.ndarray) -> Optional[float]:
        return None

    def with_location_scale(self, location: float, scale: float) -> np.ndarray:
        """Parameter vector placing the family at (location, scale) where free"""
        raise UnsupportedInputError(f"{self.name} has no free scale parameter")

    @abstractmethod
    def base_log_density(self, z: np.ndarray) -> np.ndarray:
        """log f of the standardized member (location 0, scale 1)"""

    def base_power_integral(self, alpha: float) -> float:
        """int f^(1+alpha) for the standardized member"""
        raise UnsupportedInputError(f"{self.name} has no standardized member")

    def standard_theta(self) -> np.ndarray:
        raise UnsupportedInputError(f"{self.name} has no standardized member")


class ExponentialScale(FamilyModel):
    """Exponential distributions with mean sigma on [0, inf)"""

    family_id = FamilyId.EXPONENTIAL_SCALE
    param_names = ('sigma',)
    scale_mask = (True,)
    structure = Structure.SCALE
    support = (0.0, math.inf)

    def log_density(self, theta, x):
        sigma = theta[0]
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid='ignore'):
            out = -math.log(sigma) - x / sigma
        return np.where(x >= 0.0, out, -np.inf)

    def score(self, theta, x):
        sigma = theta[0]
        x = self.check_support(x)
        return ((x - sigma) / sigma ** 2)[:, None]

    def score_jacobian(self, theta, x):
        sigma = theta[0]
        x = self.check_support(x)
        return (1.0 / sigma ** 2 - 2.0 * x / sigma ** 3)[:, None, None]

    def closed_form_moment(self, theta, gamma, kind):
        sigma = theta[0]
        # int sigma^-g e^{-g x/sigma} x^k dx = sigma^-g k! (sigma/g)^(k+1)
        p0 = sigma ** (1.0 - gamma) / gamma
        if kind is MomentKind.P0:
            return p0
        if kind is MomentKind.R0:
            return np.array([p0 * (1.0 / gamma - 1.0) / sigma])
        if kind is MomentKind.Q0:
            return np.array([[p0 * (2.0 / gamma ** 2 - 2.0 / gamma + 1.0) / sigma ** 2]])
        return np.array([[p0 * (1.0 - 2.0 / gamma) / sigma ** 2]])

    def quadrature_breaks(self, theta):
        sigma = theta[0]
        return [sigma * k for k in (1.0, 4.0, 16.0, 64.0)]

    def sample(self, theta, size, rng):
        return rng.exponential(theta[0], size=size)

    def scale(self, theta):
        return float(theta[0])

    def with_location_scale(self, location, scale):
        return np.array([scale])

    def base_log_density(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0.0, -z, -np.inf)

    def base_power_integral(self, alpha):
        return 1.0 / (1.0 + alpha)

    def standard_theta(self):
        return np.array([1.0])


class NormalFamily(FamilyModel):
    """Shared algebra for the normal families, z = (x - mu) / sigma"""

    def mean_sd(self, theta: np.ndarray) -> Tuple[float, float]:
        raise NotImplementedError

    def log_density(self, theta, x):
        mu, sigma = self.mean_sd(theta)
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return -0.5 * z * z - math.log(sigma) - LOG_SQRT_2PI

    def _full_score(self, theta, x):
        mu, sigma = self.mean_sd(theta)
        z = (self.check_support(x) - mu) / sigma
        return np.stack([z / sigma, (z * z - 1.0) / sigma], axis=1)

    def _full_jacobian(self, theta, x):
        mu, sigma = self.mean_sd(theta)
        z = (self.check_support(x) - mu) / sigma
        out = np.empty((z.size, 2, 2))
        out[:, 0, 0] = -1.0 / sigma ** 2
        out[:, 0, 1] = out[:, 1, 0] = -2.0 * z / sigma ** 2
        out[:, 1, 1] = (1.0 - 3.0 * z * z) / sigma ** 2
        return out

    def _full_moment(self, sigma: float, gamma: float, kind: MomentKind):
        # Under f^gamma / P0, z ~ N(0, 1/gamma)
        p0 = 1.0 / (math.sqrt(gamma) * (math.sqrt(2.0 * math.pi) * sigma) ** (gamma - 1.0))
        if kind is MomentKind.P0:
            return p0
        if kind is MomentKind.R0:
            return np.array([0.0, p0 * (1.0 / gamma - 1.0) / sigma])
        if kind is MomentKind.Q0:
            return np.array([
                [p0 / (gamma * sigma ** 2), 0.0],
                [0.0, p0 * (3.0 / gamma ** 2 - 2.0 / gamma + 1.0) / sigma ** 2],
            ])
        return np.array([
            [-p0 / sigma ** 2, 0.0],
            [0.0, p0 * (1.0 - 3.0 / gamma) / sigma ** 2],
        ])

    def quadrature_breaks(self, theta):
        mu, sigma = self.mean_sd(theta)
        return [mu + sigma * k for k in (-12.0, -4.0, -1.0, 0.0, 1.0, 4.0, 12.0)]

    def sample(self, theta, size, rng):
        mu, sigma = self.mean_sd(theta)
        return rng.normal(mu, sigma, size=size)

    def base_log_density(self, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * z * z - LOG_SQRT_2PI

    def base_power_integral(self, alpha):
        return self._full_moment(1.0, 1.0 + alpha, MomentKind.P0)


class NormalLocationScale(NormalFamily):
    """N(mu, sigma^2) with both parameters free, theta = (mu, sigma)"""

    family_id = FamilyId.NORMAL_LOCATION_SCALE
    param_names = ('mu', 'sigma')
    scale_mask = (False, True)
    structure = Structure.LOCATION_SCALE

    def mean_sd(self, theta):
        return float(theta[0]), float(theta[1])

    def score(self, theta, x):
        return self._full_score(theta, x)

    def score_jacobian(self, theta, x):
        return self._full_jacobian(theta, x)

    def closed_form_moment(self, theta, gamma, kind):
        return self._full_moment(float(theta[1]), gamma, kind)

    def location(self, theta):
        return float(theta[0])

    def scale(self, theta):
        return float(theta[1])

    def with_location_scale(self, location, scale):
        return np.array([location, scale])

    def standard_theta(self):
        return np.array([0.0, 1.0])


class NormalMean(NormalFamily):
    """N(mu, sd^2) with the standard deviation held fixed"""

    family_id = FamilyId.NORMAL_MEAN
    param_names = ('mu',)
    scale_mask = (False,)
    structure = Structure.LOCATION

    def __init__(self, fixed_sd: float = 1.0):
        if not fixed_sd > 0.0:
            raise ParameterDomainError('fixed_sd', fixed_sd)
        self.fixed_sd = float(fixed_sd)

    def describe(self):
        info = super().describe()
        info['fixed_sd'] = self.fixed_sd
        return info

    def mean_sd(self, theta):
        return float(theta[0]), self.fixed_sd

    def score(self, theta, x):
        return self._full_score(theta, x)[:, :1]

    def score_jacobian(self, theta, x):
        return self._full_jacobian(theta, x)[:, :1, :1]

    def closed_form_moment(self, theta, gamma, kind):
        value = self._full_moment(self.fixed_sd, gamma, kind)
        if kind is MomentKind.P0:
            return value
        if kind is MomentKind.R0:
            return value[:1]
        return value[:1, :1]

    def location(self, theta):
        return float(theta[0])


class NormalScale(NormalFamily):
    """N(m, sigma^2) with the mean m held fixed"""

    family_id = FamilyId.NORMAL_SCALE
    param_names = ('sigma',)
    scale_mask = (True,)
    structure = Structure.SCALE

    def __init__(self, fixed_mean: float = 0.0):
        self.fixed_mean = float(fixed_mean)

    def describe(self):
        info = super().describe()
        info['fixed_mean'] = self.fixed_mean
        return info

    def mean_sd(self, theta):
        return self.fixed_mean, float(theta[0])

    def score(self, theta, x):
        return self._full_score(theta, x)[:, 1:]

    def score_jacobian(self, theta, x):
        return self._full_jacobian(theta, x)[:, 1:, 1:]

    def closed_form_moment(self, theta, gamma, kind):
        value = self._full_moment(float(theta[0]), gamma, kind)
        if kind is MomentKind.P0:
            return value
        if kind is MomentKind.R0:
            return value[1:]
        return value[1:, 1:]

    def location(self, theta):
        return self.fixed_mean

    def scale(self, theta):
        return float(theta[0])

    def with_location_scale(self, location, scale):
        return np.array([scale])

    def standard_theta(self):
        return np.array([1.0])


FAMILY_ALIASES = {
    'exponential': FamilyId.EXPONENTIAL_SCALE,
    'exponential-scale': FamilyId.EXPONENTIAL_SCALE,
    'normal': FamilyId.NORMAL_LOCATION_SCALE,
    'normal-location-scale': FamilyId.NORMAL_LOCATION_SCALE,
    'normal-mean': FamilyId.NORMAL_MEAN,
    'normal-mean-fixed-variance': FamilyId.NORMAL_MEAN,
    'normal-scale': FamilyId.NORMAL_SCALE,
    'normal-scale-fixed-mean': FamilyId.NORMAL_SCALE,
}


def make_family(name: str, fixed_mean: Optional[float] = None,
                fixed_sd: Optional[float] = None) -> FamilyModel:
    """
    Build a family from its command-line name

    Args:
        name: Family name or alias (see FAMILY_ALIASES)
        fixed_mean: Fixed mean for the normal scale family (default 0)
        fixed_sd: Fixed standard deviation for the normal mean family (default 1)

    Returns:
        FamilyModel instance
    """
    family_id = FAMILY_ALIASES.get(name)
    if family_id is None:
        raise UnsupportedInputError(
            f"Unknown family '{name}'. Choose from: {', '.join(sorted(FAMILY_ALIASES))}")
    if family_id is FamilyId.EXPONENTIAL_SCALE:
        return ExponentialScale()
    if family_id is FamilyId.NORMAL_LOCATION_SCALE:
        return NormalLocationScale()
    if family_id is FamilyId.NORMAL_MEAN:
        return NormalMean(1.0 if fixed_sd is None else fixed_sd)
    return NormalScale(0.0 if fixed_mean is None else fixed_mean)


# --- evaluation surface ------------------------------------------------------------------

def log_density(family: FamilyModel, theta: ThetaLike, x) -> np.ndarray:
    """log f_theta(x); -inf outside the support. Scalars in, scalar out."""
    values = family.check_theta(theta)
    out = family.log_density(values, np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def score(family: FamilyModel, theta: ThetaLike, x: float) -> np.ndarray:
    """Score vector u_theta(x) of length p"""
    return family.score(family.check_theta(theta), np.atleast_1d(float(x)))[0]


def score_jacobian(family: FamilyModel, theta: ThetaLike, x: float) -> np.ndarray:
    """p x p matrix of second theta-derivatives of log f_theta(x)"""
    return family.score_jacobian(family.check_theta(theta), np.atleast_1d(float(x)))[0]


def adaptive_integral(fn: Callable[[float], float], lo: float, hi: float,
                      breaks: Sequence[float], tol: float = DEFAULT_QUAD_TOL) -> float:
    """
    Integrate a scalar function over [lo, hi], splitting at the given points

    Args:
        fn: Integrand
        lo, hi: Integration limits (may be infinite)
        breaks: Interior split points; points outside (lo, hi) are ignored
        tol: Absolute tolerance for the whole integral

    Returns:
        Integral value
    """
    points = sorted({float(b) for b in breaks if lo < b < hi})
    edges = [lo] + points + [hi]
    pieces = len(edges) - 1
    total = 0.0
    total_error = 0.0
    n_evals = 0
    for a, b in zip(edges[:-1], edges[1:]):
        result = quad(fn, a, b, epsabs=tol / pieces, epsrel=1e-12,
                      limit=QUAD_SUBINTERVAL_LIMIT, full_output=1)
        value, error, info = result[0], result[1], result[2]
        n_evals += int(info.get('neval', 0))
        if len(result) > 3 and error > tol / pieces:
            raise QuadratureError(error, tol, f"on [{a:g}, {b:g}]: {result[3]}")
        total += value
        total_error += error
    if n_evals > QUAD_EVAL_BUDGET:
        raise QuadratureError(total_error, tol, f"evaluation budget exceeded ({n_evals})")
    if total_error > tol:
        raise QuadratureError(total_error, tol)
    return total


def _moment_integrand(family: FamilyModel, theta: np.ndarray, gamma: float,
                      kind: MomentKind, i: int, j: int) -> Callable[[float], float]:
    def integrand(x: float) -> float:
        point = np.array([x])
        log_f = family.log_density(theta, point)[0]
        if not math.isfinite(log_f):
            return 0.0
        weight = math.exp(gamma * log_f)
        if kind is MomentKind.P0:
            return weight
        if kind is MomentKind.R0:
            return weight * family.score(theta, point)[0, i]
        if kind is MomentKind.Q0:
            u = family.score(theta, point)[0]
            return weight * u[i] * u[j]
        return weight * family.score_jacobian(theta, point)[0, i, j]
    return integrand


def quadrature_moment(family: FamilyModel, theta: ThetaLike, alpha: float,
                      kind: MomentKind, tol: float = DEFAULT_QUAD_TOL):
    """
    Model moment by adaptive quadrature (independent oracle for closed forms)

    Args:
        family: Model family
        theta: Parameter vector
        alpha: Robustness parameter; the weight is f^(1+alpha)
        kind: Which moment (P0, R0, Q0, S0)
        tol: Absolute tolerance per integral

    Returns:
        Scalar (P0), p-vector (R0) or p x p matrix (Q0, S0)
    """
    if not tol > 0.0:
        raise UnsupportedInputError("Quadrature tolerance must be positive")
    values = family.check_theta(theta)
    gamma = 1.0 + alpha
    lo, hi = family.support
    breaks = family.quadrature_breaks(values)

    def integrate(i: int, j: int) -> float:
        fn = _moment_integrand(family, values, gamma, kind, i, j)
        return adaptive_integral(fn, lo, hi, breaks, tol)

    p = family.dim
    if kind is MomentKind.P0:
        return integrate(0, 0)
    if kind is MomentKind.R0:
        return np.array([integrate(i, 0) for i in range(p)])
    out = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            if kind is MomentKind.Q0 and j < i:
                out[i, j] = out[j, i]
            else:
                out[i, j] = integrate(i, j)
    return out


def model_moment(family: FamilyModel, theta: ThetaLike, alpha: float, kind: MomentKind):
    """
    Exact model integral of f^(1+alpha) times (1, u, u u^T, grad u)

    Uses the family's closed form when it has one, otherwise adaptive quadrature.
    """
    values = family.check_theta(theta)
    if alpha < 0.0:
        raise UnsupportedInputError(f"alpha must be non-negative, got {alpha}")
    value = family.closed_form_moment(values, 1.0 + alpha, kind)
    if value is None:
        logger.debug("No closed form for %s %s; using quadrature", family.name, kind.value)
        return quadrature_moment(family, values, alpha, kind)
    return value


def log_power_integral(family: FamilyModel, theta: ThetaLike, alpha: float) -> float:
    """
    log int f^(1+alpha), kept in log space

    For families with a free scale this is log int f0^(1+alpha) - alpha log sigma,
    which stays finite where the linear-space integral under- or overflows.
    """
    values = family.check_theta(theta)
    if alpha < 0.0:
        raise UnsupportedInputError(f"alpha must be non-negative, got {alpha}")
    sigma = family.scale(values)
    if sigma is not None:
        return math.log(family.base_power_integral(alpha)) - alpha * math.log(sigma)
    value = float(model_moment(family, values, alpha, MomentKind.P0))
    return math.log(value) if value > 0.0 else -math.inf
