"""
Run Configuration Module
Options of one command-line run, including:
- Defaults for every flag (grids, seed, threads, output format)
- JSON configuration files merged over the defaults
- Explicit flags merged over the file
- Grid, contaminant and theta parsing with validation
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from bdpd_errors import InvalidInputError
from bridge_divergence import BridgeConfig, PointMass, UniformSlab
from bridge_optimizer import lambda_grid as default_lambda_grid
from bridge_optimizer import validate_lambda_grid
from simulation_engine import DEFAULT_ALPHA_GRID

logger = logging.getLogger(__name__)

COMMANDS = ('fit', 'chain', 'profile', 'tune', 'simulate', 'diagnose')
FORMATS = ('json', 'csv', 'xlsx')
DATA_COMMANDS = ('fit', 'chain', 'tune', 'diagnose')

GridLike = Union[str, Sequence[float]]


def parse_grid(text: GridLike) -> List[float]:
    """
    Parse a grid given as a list, 'a,b,c' or 'start:stop:step' (stop included)

    Args:
        text: Grid description

    Returns:
        List of floats in the given order
    """
    if not isinstance(text, str):
        return [float(v) for v in text]
    text = text.strip()
    if ':' in text:
        parts = text.split(':')
        if len(parts) != 3:
            raise InvalidInputError(f"grid '{text}' must look like start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step == 0.0 or (stop - start) * step < 0:
            raise InvalidInputError(f"grid '{text}' never reaches its stop value")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 12) + 0.0 for k in range(count)]
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as exc:
        raise InvalidInputError(f"grid '{text}' is not a comma-separated list of numbers") from exc


def parse_profile_grid(text: str, log_scale: bool = False) -> np.ndarray:
    """'lo:hi:count' into count points, geometric when log_scale"""
    parts = str(text).split(':')
    if len(parts) != 3:
        raise InvalidInputError(f"profile grid '{text}' must look like lo:hi:count")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise InvalidInputError(f"profile grid '{text}' has a non-numeric field") from exc
    if count < 2 or not lo < hi:
        raise InvalidInputError(f"profile grid '{text}' needs lo < hi and count >= 2")
    if log_scale:
        if lo <= 0.0:
            raise InvalidInputError("a log grid needs lo > 0")
        return np.geomspace(lo, hi, count)
    return np.linspace(lo, hi, count)


def parse_contaminant(text: str) -> Union[UniformSlab, PointMass]:
    """'slab:LO:HI' or 'point:X'"""
    kind, _, rest = str(text).partition(':')
    try:
        values = [float(v) for v in rest.split(':') if v]
    except ValueError as exc:
        raise InvalidInputError(f"contaminant '{text}' has a non-numeric field") from exc
    if kind == 'slab' and len(values) == 2:
        return UniformSlab(values[0], values[1])
    if kind == 'point' and len(values) == 1:
        return PointMass(values[0])
    raise InvalidInputError(f"contaminant '{text}' must be slab:LO:HI or point:X")


def parse_theta(text: Union[str, Sequence[float], float, None]) -> Optional[List[float]]:
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return [float(text)]
    return parse_grid(text)


@dataclass
class RunConfig:
    """Every option of one run with its default"""
    command: str = 'fit'
    family: str = 'normal-scale'
    fixed_mean: Optional[float] = None
    fixed_sd: Optional[float] = None
    alpha: float = 0.5
    lam: float = 1.0
    alpha_grid: List[float] = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    lambda_grid: List[float] = field(default_factory=default_lambda_grid)
    data: Optional[str] = None
    gspec: Optional[str] = None
    grid: Optional[str] = None
    log_grid: bool = False
    design: Optional[str] = None
    epsilon: float = 0.0
    contaminant: Optional[str] = None
    theta: Optional[List[float]] = None
    n: int = 100
    reps: int = 1000
    seed: int = 129
    threads: int = 1
    out: Optional[str] = None
    format: str = 'json'
    trend_report: Optional[str] = None

    @classmethod
    def load(cls, command: str, config_file: Optional[str] = None,
             overrides: Optional[Dict[str, Any]] = None) -> 'RunConfig':
        """
        Build a RunConfig: defaults, then the JSON file, then explicit flags

        Args:
            command: Subcommand name
            config_file: Optional JSON file of option values
            overrides: Flag values actually given on the command line (None means unset)

        Returns:
            Merged and normalized RunConfig
        """
        values: Dict[str, Any] = asdict(cls())
        if config_file:
            path = Path(config_file)
            if not path.exists():
                raise InvalidInputError(f"config file {config_file} does not exist")
            try:
                with open(path, 'r') as f:
                    loaded = json.load(f)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"config file {config_file}: {exc}") from exc
            if not isinstance(loaded, dict):
                raise InvalidInputError(f"config file {config_file} must hold a JSON object")
            known = {f.name for f in fields(cls)}
            unknown = sorted(set(loaded) - known)
            if unknown:
                raise InvalidInputError(f"config file {config_file} has unknown keys: {', '.join(unknown)}")
            values.update(loaded)
            logger.debug("Loaded %d options from %s", len(loaded), config_file)
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        values['command'] = command
        config = cls(**values)
        config.normalize()
        return config

    def normalize(self):
        self.alpha_grid = parse_grid(self.alpha_grid)
        self.lambda_grid = parse_grid(self.lambda_grid)
        self.theta = parse_theta(self.theta)
        self.alpha = float(self.alpha)
        self.lam = float(self.lam)
        self.epsilon = float(self.epsilon)
        self.n = int(self.n)
        self.reps = int(self.reps)
        self.seed = int(self.seed)
        self.threads = int(self.threads)

    def bridge_config(self) -> BridgeConfig:
        return BridgeConfig(self.alpha, self.lam)

    def validate(self) -> 'RunConfig':
        """Check grids, counts and referenced files; raises InvalidInputError"""
        if self.command not in COMMANDS:
            raise InvalidInputError(f"unknown command '{self.command}'")
        if self.format not in FORMATS:
            raise InvalidInputError(f"format must be one of {', '.join(FORMATS)}")
        if self.format == 'xlsx' and self.command != 'simulate':
            raise InvalidInputError("xlsx output is only available for simulate")
        self.bridge_config()
        if not self.alpha_grid or any(not 0.0 <= a <= 1.0 for a in self.alpha_grid):
            raise InvalidInputError("alpha grid values must lie in [0, 1]")
        self.lambda_grid = validate_lambda_grid(self.lambda_grid)
        if self.command in DATA_COMMANDS or (self.command == 'profile' and not self.gspec):
            if not self.data:
                raise InvalidInputError(f"{self.command} needs --data")
        for label, path in (('data', self.data), ('gspec', self.gspec)):
            if path and not Path(path).exists():
                raise InvalidInputError(f"{label} file {path} does not exist")
        if self.command == 'profile' and not self.grid:
            raise InvalidInputError("profile needs --grid lo:hi:count")
        if self.command == 'simulate':
            if self.n < 2:
                raise InvalidInputError(f"n must be at least 2, got {self.n}")
            if self.reps < 1:
                raise InvalidInputError(f"reps must be at least 1, got {self.reps}")
            if not 0.0 <= self.epsilon <= 1.0:
                raise InvalidInputError(f"epsilon must lie in [0, 1], got {self.epsilon}")
            if self.epsilon > 0.0 and not (self.contaminant or self.design):
                raise InvalidInputError("epsilon > 0 needs --contaminant or --design")
        if self.threads < 1:
            raise InvalidInputError(f"threads must be at least 1, got {self.threads}")
        return self
