"""JSON problem configuration and CSV data interchange.

Config schema::

    {
      "N": 100, "n": 2, "m": 1,
      "G": [[...]] | [[[...]], ...],     # one matrix (broadcast) or one per step
      "H": ..., "Q": ..., "R": ...,      # same convention
      "x0": [...],
      "process_penalty": PENALTY,
      "measurement_penalty": PENALTY
    }

where PENALTY is ``{"kind": "l2"}``, ``{"kind": "l1", "scale": s}``,
``{"kind": "huber", "kappa": k}``, ``{"kind": "vapnik", "epsilon": e}``,
``{"kind": "plq", "A": ..., "a": ..., "M": ..., "b": ..., "B": ...}``, or a
list of those (length 1 or N, recycled per step).

Measurement CSV: comma separated, ``.`` decimal point, N rows of m columns,
optional header row (detected by a non-numeric first row).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import StateSpaceModel
from .penalties import AtomKind, PlqPenalty, make_atom

__all__ = [
    "ConfigError",
    "load_config",
    "parse_penalty_spec",
    "read_measurements_csv",
    "write_matrix_csv",
]


class ConfigError(ValueError):
    """Invalid configuration or data file; message names the offending field."""


_ATOM_PARAM_KEY = {"l1": "scale", "huber": "kappa", "vapnik": "epsilon"}


def parse_penalty_spec(obj, label: str):
    """Penalty (or per-step list of penalties) from its JSON form."""
    if isinstance(obj, list):
        return [parse_penalty_spec(item, f"{label}[{i}]") for i, item in enumerate(obj)]
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"{label}: expected an object with a 'kind' field")
    kind = obj["kind"]
    if kind == "plq":
        try:
            return PlqPenalty(
                A=np.asarray(obj["A"], dtype=float),
                a=np.asarray(obj["a"], dtype=float),
                M=np.asarray(obj["M"], dtype=float),
                b=np.asarray(obj["b"], dtype=float),
                B=np.asarray(obj["B"], dtype=float),
            )
        except KeyError as exc:
            raise ConfigError(f"{label}: raw penalty is missing field {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{label}: {exc}") from None
    if kind in ("l2", "l1", "huber", "vapnik"):
        param_key = _ATOM_PARAM_KEY.get(kind)
        param = float(obj.get(param_key, 1.0)) if param_key else 1.0
        try:
            return make_atom(AtomKind(kind, param))
        except ValueError as exc:
            raise ConfigError(f"{label}: {exc}") from None
    raise ConfigError(f"{label}: unknown penalty kind {kind!r}")


def load_config(path) -> dict:
    """Model and penalty specs from a JSON config file.

    Returns a dict with keys ``model`` (a :class:`StateSpaceModel`),
    ``process_penalty`` and ``measurement_penalty`` (penalty specs accepted
    by :func:`plqsmooth.model.build_problem`).
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    for field in ("N", "n", "m", "G", "H", "Q", "R", "x0"):
        if field not in raw:
            raise ConfigError(f"config is missing required field '{field}'")
    try:
        model = StateSpaceModel(
            N=int(raw["N"]), n=int(raw["n"]), m=int(raw["m"]),
            G_seq=raw["G"], H_seq=raw["H"], Q_seq=raw["Q"], R_seq=raw["R"],
            x0=raw["x0"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid model data: {exc}") from None
    out = {"model": model}
    for key in ("process_penalty", "measurement_penalty"):
        spec = raw.get(key, {"kind": "l2"})
        out[key] = parse_penalty_spec(spec, key)
    return out


def read_measurements_csv(path) -> np.ndarray:
    """Numeric rows of a comma-separated file as a 2-D array.

    A non-numeric first row is treated as a header.  Malformed rows raise
    :class:`ConfigError` naming the 1-based line number.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read measurements {path}: {exc}") from None
    rows: list[list[float]] = []
    width = None
    for lineno, record in enumerate(csv.reader(lines), start=1):
        if not record or all(not cell.strip() for cell in record):
            continue
        try:
            values = [float(cell) for cell in record]
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise ConfigError(
                f"{path}: row {lineno} contains a non-numeric value"
            ) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ConfigError(
                f"{path}: row {lineno} has {len(values)} columns, expected {width}"
            )
        rows.append(values)
    if not rows:
        raise ConfigError(f"{path}: no numeric rows found")
    return np.asarray(rows, dtype=float)


def write_matrix_csv(path, data: np.ndarray) -> None:
    """Write a 2-D array as CSV with round-trip-exact doubles."""
    arr = np.atleast_2d(np.asarray(data, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
