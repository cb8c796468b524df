"""Reading and writing trials, model configs and result objects.

All JSON documents carry ``schema_version``.  A trial is exchanged either as
CSV with columns ``t, z, x, y, w, observed`` or as a JSON envelope holding
the same columns plus the generating :class:`ModelSpec` when known.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, DataError, InvalidArgumentError
from .sim_models import (
    DEFAULT_BURN_IN,
    ComplianceKind,
    ComplianceSpec,
    ErrorFamily,
    ModelSpec,
    ResponseFamily,
    ResponseModelSpec,
    TrialSeries,
)

SCHEMA_VERSION = 1
TRIAL_COLUMNS = ("t", "z", "x", "y", "w", "observed")

# config key -> (section, attribute, type)
_RESPONSE_KEYS = {
    "family": str, "phi1": float, "theta1": float, "phi11": float, "phi12": float,
    "a1": float, "b1": float, "mu_sigma": float, "beta": float, "delta1": float,
    "lambda": float, "eta": float, "psi": float, "garch_strict": bool,
}
_COMPLIANCE_KEYS = {
    "kind": str, "alpha": float, "omega": float, "gamma": float, "varphi": float, "rho": float,
}
_TOP_KEYS = {
    "errors": str, "n": int, "seed": int, "allow_nonstationary": bool, "burn_in": int,
    "schema_version": int,
}
_ATTR = {"lambda": "lam"}
_KEY = {v: k for k, v in _ATTR.items()}


def dumps(obj: Any, **kw) -> str:
    """Deterministic JSON: sorted keys, NaN and infinities written as null."""
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False, **kw)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if hasattr(obj, "value") and isinstance(obj.value, str):
        return obj.value
    return obj


def _coerce(key: str, value, typ):
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return int(value)
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", key)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", key)
    return value


def _field_of(message: str) -> str | None:
    m = re.match(r"(\w+)=", message)
    if not m:
        return None
    return _KEY.get(m.group(1), m.group(1))


def model_spec_from_dict(doc: dict, *, allow_nonstationary: bool | None = None,
                         garch_strict: bool | None = None) -> ModelSpec:
    """Build and validate a :class:`ModelSpec` from a flat config mapping.

    Keyword overrides take precedence over the document (used by CLI flags).

    Raises
    ------
    ConfigError
        Unknown keys, wrong types, bad enum values or violated invariants;
        ``field`` names the offending key.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {**_RESPONSE_KEYS, **_COMPLIANCE_KEYS, **_TOP_KEYS}
    for key in doc:
        if key not in known:
            raise ConfigError("unknown key", key)
    for key in ("family", "kind", "alpha"):
        if key not in doc:
            raise ConfigError("required key missing", key)
    values = {k: _coerce(k, v, known[k]) for k, v in doc.items() if v is not None}
    if values.get("schema_version", SCHEMA_VERSION) > SCHEMA_VERSION:
        raise ConfigError(f"unsupported version {values['schema_version']}", "schema_version")
    if allow_nonstationary is not None:
        values["allow_nonstationary"] = allow_nonstationary or values.get("allow_nonstationary", False)
    if garch_strict is not None:
        values["garch_strict"] = garch_strict or values.get("garch_strict", False)

    try:
        ResponseFamily(values["family"])
    except ValueError:
        raise ConfigError(f"unknown family {values['family']!r}", "family") from None
    try:
        ComplianceKind(values["kind"])
    except ValueError:
        raise ConfigError(f"unknown compliance kind {values['kind']!r}", "kind") from None
    try:
        ErrorFamily(values.get("errors", "gaussian"))
    except ValueError:
        raise ConfigError(f"unknown error family {values['errors']!r}", "errors") from None

    response = ResponseModelSpec(**{_ATTR.get(k, k): values[k] for k in _RESPONSE_KEYS if k in values})
    compliance = ComplianceSpec(**{k: values[k] for k in _COMPLIANCE_KEYS if k in values})
    spec = ModelSpec(
        response=response,
        compliance=compliance,
        errors=values.get("errors", "gaussian"),
        n=values.get("n", 200),
        seed=values.get("seed", 0),
        allow_nonstationary=values.get("allow_nonstationary", False),
        burn_in=values.get("burn_in", DEFAULT_BURN_IN),
    )
    try:
        spec.validate()
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc), _field_of(str(exc))) from exc
    return spec


def model_spec_to_dict(spec: ModelSpec) -> dict:
    r, c = spec.response, spec.compliance
    out = {"schema_version": SCHEMA_VERSION}
    for key in _RESPONSE_KEYS:
        out[key] = _clean(getattr(r, _ATTR.get(key, key)))
    for key in _COMPLIANCE_KEYS:
        out[key] = _clean(getattr(c, key))
    out.update(
        errors=spec.errors.value, n=int(spec.n), seed=int(spec.seed),
        allow_nonstationary=bool(spec.allow_nonstationary), burn_in=int(spec.burn_in),
    )
    return out


def read_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_model_spec(path, **overrides) -> ModelSpec:
    return model_spec_from_dict(read_json(path), **overrides)


# ---------------------------------------------------------------- trials

def trial_to_csv(trial: TrialSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRIAL_COLUMNS if trial.w is not None else [c for c in TRIAL_COLUMNS if c != "w"])
    for t in range(trial.n):
        row = [t, int(trial.z[t]), _num(trial.x[t]), _num(trial.y[t])]
        if trial.w is not None:
            row.append(_num(trial.w[t]))
        row.append(int(trial.observed[t]))
        writer.writerow(row)
    return buf.getvalue()


def _num(v) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def trial_to_json(trial: TrialSeries, spec: ModelSpec | None = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "trial",
        "model_spec": model_spec_to_dict(spec) if spec is not None else None,
        "columns": {
            "t": list(range(trial.n)),
            "z": trial.z.astype(int).tolist(),
            "x": trial.x.tolist(),
            "y": trial.y.tolist(),
            "w": None if trial.w is None else trial.w.tolist(),
            "observed": trial.observed.astype(int).tolist(),
        },
    }
    return dumps(doc, indent=1)


def _parse_float(value: str, column: str, row: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} is not numeric ({value!r})") from None


def _trial_from_columns(cols: dict) -> TrialSeries:
    for name in ("z", "x", "y"):
        if cols.get(name) is None:
            raise DataError(f"missing required column {name!r}")
    try:
        z = np.asarray(cols["z"], dtype=float)
        observed = cols.get("observed")
        return TrialSeries(
            z=z,
            x=np.asarray(cols["x"], dtype=float),
            y=np.asarray(cols["y"], dtype=float),
            w=None if cols.get("w") is None else np.asarray(cols["w"], dtype=float),
            observed=None if observed is None else np.asarray(observed, dtype=float) != 0,
        )
    except InvalidArgumentError as exc:
        raise DataError(str(exc)) from exc


def trial_from_csv(text: str) -> TrialSeries:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in ("z", "x", "y") if c not in header]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}")
    cols: dict[str, list] = {c: [] for c in header if c in TRIAL_COLUMNS}
    for i, row in enumerate(reader, start=2):
        for c in cols:
            cols[c].append(_parse_float(row[c], c, i))
    if not cols["z"]:
        raise DataError("trial file has no rows")
    return _trial_from_columns(cols)


def trial_from_json(text: str) -> tuple[TrialSeries, dict | None]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "columns" not in doc:
        raise DataError("JSON trial must contain a 'columns' object")
    return _trial_from_columns(doc["columns"]), doc.get("model_spec")


def load_trial(path) -> TrialSeries:
    """Read a trial from ``.json`` or CSV (any other suffix)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if path.suffix.lower() == ".json":
        return trial_from_json(text)[0]
    return trial_from_csv(text)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """Flat dicts to CSV; floats keep full precision, None becomes empty."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        out = []
        for c in columns:
            v = _clean(row.get(c))
            out.append("" if v is None else repr(v) if isinstance(v, float) else v)
        writer.writerow(out)
    return buf.getvalue()
