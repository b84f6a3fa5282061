"""
Data I/O Module
Reading observations and writing results, including:
- One-column CSV data files with an optional `x` header
- Line-numbered errors for non-numeric and non-finite cells
- JSON results with shortest round-trip floats
- CSV tables with 17 significant digits and xlsx workbooks
- Mixture truths (GSpec) from JSON files
"""

import json
import logging
import math
import re
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from bdpd_errors import DataFormatError, InvalidInputError
from bridge_divergence import Component, GSpec, ModelComponent, PointMass, UniformSlab
from model_families import make_family

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.17g'
HEADER = 'x'


def read_data(path: str) -> np.ndarray:
    """
    Read one numeric observation per line

    Args:
        path: CSV file; blank lines are skipped and a first line `x` is a header

    Returns:
        Observations in file order
    """
    try:
        raw = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=False,
                          keep_default_na=False)
    except FileNotFoundError as exc:
        raise InvalidInputError(f"data file {path} does not exist") from exc
    except pd.errors.EmptyDataError:
        raise DataFormatError(path, None, "empty dataset")
    except pd.errors.ParserError as exc:
        found = re.search(r"line (\d+)", str(exc))
        raise DataFormatError(path, int(found.group(1)) if found else None,
                              "expected one value per line") from exc

    if raw.shape[1] != 1:
        extra = raw.iloc[:, 1:].apply(lambda col: col.fillna('').str.strip() != '')
        bad_rows = extra.any(axis=1)
        if bad_rows.any():
            line = int(bad_rows.idxmax()) + 1
            raise DataFormatError(path, line, "expected one value per line")

    values = []
    header_seen = False
    for index, cell in raw.iloc[:, 0].items():
        line = int(index) + 1
        text = '' if pd.isna(cell) else str(cell).strip()
        if not text:
            continue
        if not values and not header_seen and text == HEADER:
            header_seen = True
            continue
        try:
            value = float(text)
        except ValueError:
            raise DataFormatError(path, line, f"non-numeric value '{text}'")
        if not math.isfinite(value):
            raise DataFormatError(path, line, f"non-finite value '{text}'")
        values.append(value)

    if not values:
        raise DataFormatError(path, None, "empty dataset")
    logger.info("Loaded %d observations from %s", len(values), path)
    return np.asarray(values, dtype=float)


def _json_default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, pd.DataFrame):
        return obj.to_dict(orient='records')
    if hasattr(obj, 'to_dict'):
        return obj.to_dict()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def to_json_text(result: Any) -> str:
    return json.dumps(result, indent=2, default=_json_default)


def write_results(result: Any, fmt: str, path: Optional[str] = None) -> Optional[str]:
    """
    Serialize a result

    Args:
        result: dict, DataFrame or an object with to_dict (SimReport also
            provides the supplement table and the workbook)
        fmt: 'json', 'csv' or 'xlsx'
        path: Output file; None writes json/csv to stdout

    Returns:
        The path written, or None for stdout
    """
    if fmt == 'json':
        text = to_json_text(result)
    elif fmt == 'csv':
        table = _as_table(result)
        keep_index = isinstance(table.index, pd.MultiIndex)
        text = table.to_csv(index=keep_index, float_format=CSV_FLOAT_FORMAT)
    elif fmt == 'xlsx':
        if path is None:
            raise InvalidInputError("xlsx output needs --out")
        if hasattr(result, 'to_xlsx'):
            result.to_xlsx(path)
        else:
            _as_table(result).to_excel(path, index=False, engine='openpyxl')
        logger.info("✓ results written to %s", path)
        return path
    else:
        raise InvalidInputError(f"unknown output format '{fmt}'")

    if path is None:
        sys.stdout.write(text if text.endswith('\n') else text + '\n')
        return None
    with open(path, 'w', newline='') as fh:
        fh.write(text)
    logger.info("✓ results written to %s", path)
    return path


def _as_table(result: Any) -> pd.DataFrame:
    if isinstance(result, pd.DataFrame):
        return result
    if hasattr(result, 'to_supplement_table'):
        return result.to_supplement_table()
    if hasattr(result, 'table') and isinstance(result.table, pd.DataFrame):
        return result.table
    raise InvalidInputError(f"{type(result).__name__} has no tabular form; use --format json")


def _component_from_dict(entry: Dict[str, Any]) -> Component:
    kind = entry.get('type', 'model')
    if kind == 'model':
        family = make_family(entry['family'], entry.get('fixed_mean'), entry.get('fixed_sd'))
        return ModelComponent(family, tuple(entry['theta']))
    if kind == 'slab':
        return UniformSlab(float(entry['lo']), float(entry['hi']))
    if kind == 'point':
        return PointMass(float(entry['location']))
    raise InvalidInputError(f"unknown component type '{kind}'")


def gspec_from_json(path: str) -> GSpec:
    """
    Load a mixture truth

    The file holds {"components": [{"weight": w, "type": "model", "family": name,
    "theta": [...]}, {"weight": w, "type": "slab", "lo": a, "hi": b},
    {"weight": w, "type": "point", "location": x}]}.
    """
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, exc.lineno, exc.msg) from exc
    try:
        components = tuple((float(c['weight']), _component_from_dict(c)) for c in spec['components'])
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"{path}: malformed mixture component ({exc})") from exc
    return GSpec(components)
