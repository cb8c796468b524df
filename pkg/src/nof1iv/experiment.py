"""Monte Carlo harness: simulate, estimate and test over a grid of cells.

A cell is one (response model, setting) pair.  Each cell draws a maximin
Latin hypercube over the parameter ranges and produces one record per design
point.  Records are plain dicts, written as newline-delimited JSON in
canonical (cell, replicate) order, so a run can be resumed cell by cell and
re-aggregated without re-simulation.

Random streams are keyed as

* ``(seed, 0, model, setting, replicate)`` for the simulated data,
* ``(seed, 1, model, setting, replicate)`` for the permutations,
* ``(seed, 2, model, setting)`` for the design,

so the output does not depend on the number of worker processes.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .design import (
    ALT_SETTINGS,
    NULL_SETTINGS,
    PARAM_RANGES,
    SETTINGS,
    SettingSpec,
    design_axes,
    lhs_maximin,
)
from .errors import ConfigError, InvalidArgumentError, Nof1Error
from .estimators import full_report, residualize_on_w
from .io import SCHEMA_VERSION, dumps
from .rand_inference import RandTestConfig, sharp_null_pvalues
from .seeding import derive_seed
from .sim_models import (
    ComplianceSpec,
    ModelSpec,
    ResponseFamily,
    ResponseModelSpec,
    TrialSeries,
    simulate_trial,
)

MODELS = tuple(f.value for f in ResponseFamily)
STRESS_MODELS = ("ARMA11", "ARMA10", "TAR1", "SETAR1")
UNIT_ROOT_COEFFICIENTS = ("phi1", "phi11", "phi12", "rho")
METHODS = {
    "iv_raw": "p_iv_raw",
    "iv_adj": "p_iv_adj",
    "t_raw": "p_t_raw",
    "t_adj": "p_t_adj",
}
DEFAULT_ALPHAS = tuple(round(0.005 * k, 3) for k in range(1, 201))
FISHER_LEVEL = 0.05

BETA_BINS = ((0.0, 1.0, "[0,1)"), (1.0, 3.0, "[1,3)"), (3.0, math.inf, "[3,4]"))
N_BINS = ((50, 200, "[50,200)"), (200, 400, "[200,400)"), (400, 600, "[400,600)"), (600, math.inf, "[600,800]"))
COR_BINS = (
    (-math.inf, 0.25, "(-1,0.25)"),
    (0.25, 0.5, "[0.25,0.5)"),
    (0.5, 0.75, "[0.5,0.75)"),
    (0.75, math.inf, "[0.75,1]"),
)
_BIN_LABELS = {
    "beta_bin": [b[2] for b in BETA_BINS],
    "n_bin": [b[2] for b in N_BINS],
    "cor_bin": [b[2] for b in COR_BINS],
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a record stream.

    ``unit_root`` replaces the autoregressive coefficients drawn by the
    design with 1 (keeping every other parameter), which is how the
    non-stationarity stress runs are produced.
    """

    models: tuple[str, ...] = MODELS
    settings: tuple[int, ...] = tuple(SETTINGS)
    n_datasets: int = 250
    n_perm: int = 2000
    seed: int = 0
    n_sweeps: int = 50
    p_convention: str = "plain"
    garch_strict: bool = False
    unit_root: bool = False
    allow_nonstationary: bool = False
    burn_in: int = 100

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(ResponseFamily(m).value for m in self.models))
        object.__setattr__(self, "settings", tuple(int(s) for s in self.settings))
        for s in self.settings:
            if s not in SETTINGS:
                raise ConfigError(f"unknown setting {s}", "settings")
        if not self.models or not self.settings:
            raise ConfigError("at least one model and one setting are required", "models")
        if self.n_datasets < 1:
            raise ConfigError(f"must be >= 1, got {self.n_datasets}", "n_datasets")
        if self.unit_root and not self.allow_nonstationary:
            raise ConfigError("unit-root runs require allow_nonstationary", "allow_nonstationary")
        try:
            self.rand_config(0)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc), "n_perm") from exc

    def rand_config(self, seed: int) -> RandTestConfig:
        return RandTestConfig(n_perm=self.n_perm, p_convention=self.p_convention, seed=seed)

    def cells(self) -> list[tuple[str, int]]:
        return [(m, s) for m in MODELS if m in self.models for s in sorted(set(self.settings))]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        d["settings"] = list(self.settings)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("experiment config must be a JSON object")
        doc = dict(doc)
        doc.pop("schema_version", None)
        known = {f for f in cls.__dataclass_fields__}
        for key in doc:
            if key not in known:
                raise ConfigError("unknown key", key)
        try:
            return cls(**doc)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        return hashlib.sha256(dumps(self.to_dict()).encode()).hexdigest()


def cell_id(model: str, setting: int) -> str:
    return f"{model}/s{setting}"


def _model_index(model: str) -> int:
    return MODELS.index(model)


def build_model_spec(
    model: str,
    setting: SettingSpec,
    params: dict,
    seed: int,
    garch_strict: bool = False,
    allow_nonstationary: bool = False,
    burn_in: int = 100,
) -> ModelSpec:
    """Turn one design row into a :class:`ModelSpec`; absent parameters are 0."""
    p = lambda k: float(params.get(k, 0.0))  # noqa: E731
    response = ResponseModelSpec(
        family=model,
        phi1=p("phi1"), theta1=p("theta1"), phi11=p("phi11"), phi12=p("phi12"), a1=p("a1"),
        beta=p("beta"), delta1=p("delta1"), lam=p("lambda"), eta=p("eta"), psi=p("psi"),
        garch_strict=garch_strict,
    )
    compliance = ComplianceSpec(
        kind=setting.compliance, alpha=p("alpha"), omega=p("omega"), gamma=p("gamma"),
        varphi=p("varphi"), rho=p("rho"),
    )
    return ModelSpec(
        response=response, compliance=compliance, errors=setting.errors, n=int(params["n"]),
        seed=seed, allow_nonstationary=allow_nonstationary, burn_in=burn_in,
    )


def cell_design(cfg: ExperimentConfig, model: str, setting: int) -> list[dict]:
    """Design rows of one cell, with unit-root overrides applied."""
    spec = SETTINGS[setting]
    axes = design_axes(model, spec)
    design = lhs_maximin(
        cfg.n_datasets if cfg.n_datasets >= 2 else 2,
        [PARAM_RANGES[a] for a in axes],
        n_sweeps=cfg.n_sweeps,
        seed=derive_seed(cfg.seed, 2, _model_index(model), setting),
    )
    rows = design.rows()[: cfg.n_datasets]
    for row in rows:
        row["n"] = int(row["n"])
        if spec.null:
            row["beta"] = 0.0
        if cfg.unit_root:
            for k in UNIT_ROOT_COEFFICIENTS:
                if k in row:
                    row[k] = 1.0
    return rows


def fisher_pvalue(z: np.ndarray, x: np.ndarray) -> float:
    """Two-sided Fisher exact test of association in the 2x2 (z, x) table."""
    z1 = z == 1
    x1 = x == 1
    table = [
        [int(np.sum(z1 & x1)), int(np.sum(z1 & ~x1))],
        [int(np.sum(~z1 & x1)), int(np.sum(~z1 & ~x1))],
    ]
    return float(stats.fisher_exact(table).pvalue)


def analyze_trial(trial: TrialSeries, rand_cfg: RandTestConfig) -> dict:
    """Estimates and sharp-null p-values recorded for every simulated trial.

    Raw and residualized responses are tested against the same permutations.
    """
    raw = full_report(trial)
    adj = full_report(trial, adjusted=True)
    resid = residualize_on_w(trial)
    p_raw, p_adj = sharp_null_pvalues(trial.z, [trial.y, resid.y], rand_cfg)
    fisher_p = fisher_pvalue(trial.z, trial.x)
    return {
        "raw": raw.to_dict(),
        "adj": adj.to_dict(),
        "p_iv_raw": p_raw,
        "p_iv_adj": p_adj,
        "p_t_raw": raw.naive_p,
        "p_t_adj": adj.naive_p,
        "cor_zx": raw.cor_zx,
        "fisher_p": fisher_p,
        "compliance_significant": fisher_p < FISHER_LEVEL,
    }


def run_replicate(cfg: ExperimentConfig, model: str, setting: int, replicate: int, params: dict) -> dict:
    mi = _model_index(model)
    spec_s = SETTINGS[setting]
    data_seed = derive_seed(cfg.seed, 0, mi, setting, replicate)
    perm_seed = derive_seed(cfg.seed, 1, mi, setting, replicate)
    rec = {
        "cell": cell_id(model, setting),
        "model": model,
        "setting": setting,
        "replicate": replicate,
        "hypothesis": spec_s.hypothesis,
        "errors": spec_s.errors.value,
        "compliance": spec_s.compliance.value,
        "unit_root": cfg.unit_root,
        "params": params,
        "beta_true": float(params.get("beta", 0.0)),
        "n": int(params["n"]),
        "data_seed": data_seed,
        "perm_seed": perm_seed,
        "failed": False,
        "fail_reason": None,
    }
    try:
        spec = build_model_spec(
            model, spec_s, params, data_seed, cfg.garch_strict, cfg.allow_nonstationary, cfg.burn_in,
        )
        with np.errstate(over="ignore", invalid="ignore"):
            trial = simulate_trial(spec)
        if not (np.isfinite(trial.y).all() and np.abs(trial.y).max() < 1e150):
            raise FloatingPointError("non-finite response")
        rec.update(analyze_trial(trial, cfg.rand_config(perm_seed)))
    except (Nof1Error, FloatingPointError) as exc:
        rec["failed"] = True
        rec["fail_reason"] = f"{type(exc).__name__}: {exc}"
    return rec


def run_cell(cfg: ExperimentConfig, model: str, setting: int) -> list[dict]:
    rows = cell_design(cfg, model, setting)
    return [run_replicate(cfg, model, setting, i, row) for i, row in enumerate(rows)]


def _run_cell_packed(args):
    return run_cell(*args)


def record_line(rec: dict) -> str:
    return dumps(rec, separators=(",", ":"))


def default_workers() -> int:
    env = os.environ.get("NOF1IV_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"expected an integer, got {env!r}", "NOF1IV_THREADS") from None
        if value < 1:
            raise ConfigError("must be >= 1", "NOF1IV_THREADS")
        return value
    return os.cpu_count() or 1


def iter_cells(cfg: ExperimentConfig, cells, workers: int = 1) -> Iterator[list[dict]]:
    """Yield each cell's records in the given order, whatever the worker count."""
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        for m, s in cells:
            yield run_cell(cfg, m, s)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_cell_packed, [(cfg, m, s) for m, s in cells])


def read_records(path) -> list[dict]:
    """Parse an NDJSON record file; a truncated final line is ignored."""
    out = []
    with open(path) as fh:
        lines = fh.read().split("\n")
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise
    return out


def _complete_cells(records: list[dict], n_datasets: int) -> dict[str, list[dict]]:
    by_cell: dict[str, list[dict]] = {}
    for rec in records:
        by_cell.setdefault(rec["cell"], []).append(rec)
    return {
        c: sorted(rs, key=lambda r: r["replicate"])
        for c, rs in by_cell.items()
        if len({r["replicate"] for r in rs}) == n_datasets
    }


def manifest(cfg: ExperimentConfig, **extra) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "experiment_manifest",
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": __import__("scipy").__version__,
        **extra,
    }


def manifest_path(records_path) -> Path:
    p = Path(records_path)
    return p.with_name(p.name + ".manifest.json")


def run_experiment(
    cfg: ExperimentConfig,
    out_path=None,
    workers: int = 1,
    resume: bool = True,
    progress=None,
) -> list[dict]:
    """Run every cell of ``cfg`` and return the records in canonical order.

    With ``out_path`` the records are streamed to newline-delimited JSON and
    a manifest is written next to it.  If the file already exists and its
    manifest matches ``cfg``, complete cells are reused and only missing
    cells are simulated.
    """
    done: dict[str, list[dict]] = {}
    if out_path is not None:
        out_path = Path(out_path)
        mpath = manifest_path(out_path)
        if out_path.exists() and resume:
            if mpath.exists():
                old = json.loads(mpath.read_text())
                if old.get("config_hash") != cfg.config_hash():
                    raise ConfigError(
                        f"{out_path} was produced by a different configuration; "
                        "remove it or choose another output path", "config",
                    )
            done = _complete_cells(read_records(out_path), cfg.n_datasets)
        mpath.write_text(dumps(manifest(cfg, records=out_path.name, complete=False), indent=1) + "\n")

    cells = cfg.cells()
    todo = [(m, s) for m, s in cells if cell_id(m, s) not in done]
    results: dict[str, list[dict]] = dict(done)
    fh = None
    if out_path is not None:
        fh = open(out_path, "w")
        # rewrite kept cells in canonical order, dropping partial ones
        for m, s in cells:
            for rec in done.get(cell_id(m, s), []):
                fh.write(record_line(rec) + "\n")
        fh.flush()
    try:
        for (m, s), recs in zip(todo, iter_cells(cfg, todo, workers)):
            results[cell_id(m, s)] = recs
            if fh is not None:
                fh.write("".join(record_line(r) + "\n" for r in recs))
                fh.flush()
            if progress is not None:
                progress(cell_id(m, s), len(recs))
    finally:
        if fh is not None:
            fh.close()
    ordered = [r for m, s in cells for r in results[cell_id(m, s)]]
    if out_path is not None:
        manifest_path(out_path).write_text(
            dumps(manifest(cfg, records=out_path.name, complete=True, n_records=len(ordered)), indent=1) + "\n"
        )
    if out_path is not None:
        # the file holds resumed cells first; canonicalize it
        out_path.write_text("".join(record_line(r) + "\n" for r in ordered))
    return ordered


def canonical_order(records: Iterable[dict]) -> list[dict]:
    """Sort records by (model, setting, replicate) in grid order."""
    return sorted(records, key=lambda r: (_model_index(r["model"]), r["setting"], r["replicate"]))


# ---------------------------------------------------------------- aggregation

def _bin(value: float, bins) -> str | None:
    if value is None or not math.isfinite(value):
        return None
    for lo, hi, label in bins:
        if lo <= value < hi:
            return label
    return bins[-1][2] if value >= bins[-1][0] else None


def records_frame(records: Iterable[dict]) -> pd.DataFrame:
    """One row per record with p-values, estimates and stratification labels."""
    rows = []
    for r in records:
        raw = r.get("raw") or {}
        adj = r.get("adj") or {}
        rows.append({
            "cell": r["cell"],
            "model": r["model"],
            "setting": r["setting"],
            "replicate": r["replicate"],
            "hypothesis": r["hypothesis"],
            "failed": bool(r.get("failed")),
            "beta_true": r["beta_true"],
            "n": r["n"],
            "cor_zx": _num(r.get("cor_zx")),
            "fisher_p": _num(r.get("fisher_p")),
            "compliance_significant": r.get("compliance_significant"),
            **{col: _num(r.get(col)) for col in METHODS.values()},
            "beta_iv_raw": _num(raw.get("beta_iv")),
            "beta_iv_adj": _num(adj.get("beta_iv")),
            "beta_itt_raw": _num(raw.get("beta_itt")),
            "beta_itt_adj": _num(adj.get("beta_itt")),
            "naive_raw": _num(raw.get("naive_slope")),
            "naive_adj": _num(adj.get("naive_slope")),
            "beta_bin": _bin(abs(r["beta_true"]), BETA_BINS),
            "n_bin": _bin(r["n"], N_BINS),
            "cor_bin": _bin(_num(r.get("cor_zx")), COR_BINS),
        })
    return pd.DataFrame(rows)


def _num(v) -> float:
    return math.nan if v is None else float(v)


@dataclass
class CurveTable:
    """Empirical rejection rates per method, stratum and nominal level."""

    frame: pd.DataFrame
    strata: tuple[str, ...]
    n_failed: int = 0
    meta: dict = field(default_factory=dict)

    def rate(self, method: str, alpha: float, **stratum) -> float:
        f = self.frame
        sel = (f["method"] == method) & np.isclose(f["alpha"], alpha)
        for k, v in stratum.items():
            sel &= f[k] == v
        rows = f[sel]
        if len(rows) != 1:
            raise InvalidArgumentError(f"{len(rows)} rows match {method}, {alpha}, {stratum}")
        return float(rows["rate"].iloc[0])

    def to_csv(self, path=None) -> str:
        text = self.frame.to_csv(index=False, lineterminator="\n", float_format="%.10g")
        if path is not None:
            Path(path).write_text(text)
        return text


def aggregate_curves(
    records: Iterable[dict] | pd.DataFrame,
    strata: tuple[str, ...] = ("hypothesis",),
    alphas=DEFAULT_ALPHAS,
    methods=tuple(METHODS),
) -> CurveTable:
    """Fraction of records with ``p <= alpha`` for every method and stratum.

    Failed records are excluded and counted in ``n_failed``.  Binned strata
    (``beta_bin``, ``n_bin``, ``cor_bin``) always list every bin; an empty
    stratum is emitted with count 0, rate NaN and ``empty=True``.
    """
    df = records if isinstance(records, pd.DataFrame) else records_frame(records)
    if df.empty:
        raise InvalidArgumentError("no records to aggregate")
    n_failed = int(df["failed"].sum())
    df = df[~df["failed"]]
    alphas = np.asarray(alphas, dtype=float)
    levels = []
    for s in strata:
        if s in _BIN_LABELS:
            levels.append(_BIN_LABELS[s])
        elif s in df:
            levels.append(sorted(df[s].dropna().unique().tolist()))
        else:
            raise InvalidArgumentError(f"unknown stratum {s!r}")
    groups = {k if isinstance(k, tuple) else (k,): g for k, g in df.groupby(list(strata))} if strata else {(): df}
    out = []
    for key in pd.MultiIndex.from_product(levels).tolist() if strata else [()]:
        key = key if isinstance(key, tuple) else (key,)
        g = groups.get(key)
        for method in methods:
            p = np.sort(g[METHODS[method]].dropna().to_numpy()) if g is not None else np.empty(0)
            count = len(p)
            hits = np.searchsorted(p, alphas, side="right") if count else np.zeros(len(alphas), int)
            for a, h in zip(alphas, hits):
                out.append({
                    "method": method,
                    **dict(zip(strata, key)),
                    "alpha": float(a),
                    "count": count,
                    "rejections": int(h),
                    "rate": h / count if count else math.nan,
                    "empty": count == 0,
                })
    return CurveTable(pd.DataFrame(out), tuple(strata), n_failed)


_BIAS_METHODS = {
    "iv_raw": "beta_iv_raw",
    "iv_adj": "beta_iv_adj",
    "itt_raw": "beta_itt_raw",
    "itt_adj": "beta_itt_adj",
    "naive_raw": "naive_raw",
    "naive_adj": "naive_adj",
}


def _summary(bias: np.ndarray, aligned: np.ndarray) -> dict:
    if bias.size == 0:
        return {"count": 0}
    q25, med, q75 = np.quantile(bias, [0.25, 0.5, 0.75])
    return {
        "count": int(bias.size),
        "median": float(med),
        "mean": float(bias.mean()),
        "se_mean": float(bias.std(ddof=1) / math.sqrt(bias.size)) if bias.size > 1 else math.nan,
        "q25": float(q25),
        "q75": float(q75),
        "iqr": float(q75 - q25),
        "max_abs": float(np.abs(bias).max()),
        "median_aligned": float(np.median(aligned)),
    }


def bias_table(records: Iterable[dict] | pd.DataFrame, max_cor: float | None = None) -> pd.DataFrame:
    """Distribution of ``beta_true - estimate`` per method and hypothesis.

    ``median_aligned`` multiplies the bias by ``sign(beta_true)`` so positive
    values mean attenuation towards zero.  Each (method, hypothesis) block is
    also split by whether the Fisher test found the instrument associated
    with the treatment.  ``max_cor`` keeps only records with ``cor_zx`` below
    it.  Non-finite estimates (degenerate instruments) are dropped.
    """
    df = records if isinstance(records, pd.DataFrame) else records_frame(records)
    df = df[~df["failed"]]
    if max_cor is not None:
        df = df[df["cor_zx"] < max_cor]
    rows = []
    for hyp in ("alt", "null"):
        h = df[df["hypothesis"] == hyp]
        for compliance, sub in (
            ("all", h),
            ("significant", h[h["compliance_significant"] == True]),  # noqa: E712
            ("nonsignificant", h[h["compliance_significant"] == False]),  # noqa: E712
        ):
            for method, col in _BIAS_METHODS.items():
                est = sub[col].to_numpy(dtype=float)
                beta = sub["beta_true"].to_numpy(dtype=float)
                ok = np.isfinite(est)
                bias = beta[ok] - est[ok]
                aligned = np.sign(beta[ok]) * bias if hyp == "alt" else bias
                rows.append({
                    "method": method, "hypothesis": hyp, "compliance": compliance,
                    **_summary(bias, aligned),
                })
    return pd.DataFrame(rows)


def cochran_armitage(successes, totals, scores=None) -> dict:
    """Cochran-Armitage test for a linear trend in binomial proportions.

    Returns the z statistic with one-sided p-values for an increasing and a
    decreasing trend.
    """
    r = np.asarray(successes, dtype=float)
    n = np.asarray(totals, dtype=float)
    keep = n > 0
    r, n = r[keep], n[keep]
    s = np.arange(len(keep), dtype=float)[keep] if scores is None else np.asarray(scores, float)[keep]
    if len(n) < 2:
        raise InvalidArgumentError("trend test needs at least two non-empty groups")
    N = n.sum()
    pbar = r.sum() / N
    t = float(np.sum(s * (r - n * pbar)))
    var = pbar * (1 - pbar) * float(np.sum(n * s * s) - np.sum(n * s) ** 2 / N)
    if var <= 0:
        return {"z": 0.0, "p_increasing": 1.0, "p_decreasing": 1.0}
    z = t / math.sqrt(var)
    return {"z": z, "p_increasing": float(stats.norm.sf(z)), "p_decreasing": float(stats.norm.cdf(z))}


# ---------------------------------------------------------------- studies

def nonstationarity_stress(
    cfg: ExperimentConfig,
    workers: int = 1,
    out_path=None,
    control: bool = True,
) -> dict:
    """Unit-root runs for the autoregressive models plus a matched control.

    The control reuses the same seeds and design with the autoregressive
    coefficients left as drawn, so each unit-root record has a stationary
    twin.  Only models with an autoregressive coefficient are run.
    """
    if not cfg.allow_nonstationary:
        raise ConfigError("the stress run needs allow_nonstationary", "allow_nonstationary")
    models = tuple(m for m in cfg.models if m in STRESS_MODELS) or STRESS_MODELS
    ur_cfg = replace(cfg, models=models, unit_root=True)
    ur = run_experiment(ur_cfg, out_path, workers)
    out = {"unit_root": ur, "curves": aggregate_curves(ur, ("hypothesis", "beta_bin"))}
    if control:
        ctl_cfg = replace(cfg, models=models, unit_root=False,
                          settings=tuple(s for s in cfg.settings if s in ALT_SETTINGS) or ALT_SETTINGS)
        ctl_path = None if out_path is None else Path(out_path).with_name(Path(out_path).stem + ".control.ndjson")
        ctl = run_experiment(ctl_cfg, ctl_path, workers)
        out["control"] = ctl
        out["control_curves"] = aggregate_curves(ctl, ("hypothesis", "beta_bin"))
    return out


def low_compliance_study(
    n_target: int = 1000,
    seed: int = 0,
    n_perm: int = 2000,
    models=MODELS,
    settings=NULL_SETTINGS,
    batch: int = 250,
    max_batches: int = 10_000,
) -> list[dict]:
    """Collect null trials whose instrument is not detectably associated with x.

    Designs are drawn batch by batch, cycling over (model, setting); only
    trials with a Fisher p-value of at least 0.05 are tested and kept.
    Settings default to the null ones so the records measure type-I error.
    """
    cfg = ExperimentConfig(models=tuple(models), settings=tuple(settings), n_datasets=batch, n_perm=n_perm)
    kept: list[dict] = []
    cells = cfg.cells()
    for b in range(max_batches):
        m, s = cells[b % len(cells)]
        round_cfg = replace(cfg, seed=derive_seed(seed, 3, b))
        for i, params in enumerate(cell_design(round_cfg, m, s)):
            spec = build_model_spec(m, SETTINGS[s], params, derive_seed(round_cfg.seed, 0, _model_index(m), s, i))
            trial = simulate_trial(spec)
            if fisher_pvalue(trial.z, trial.x) < FISHER_LEVEL:
                continue
            rec = run_replicate(round_cfg, m, s, i, params)
            rec["batch"] = b
            kept.append(rec)
            if len(kept) >= n_target:
                return kept
    raise InvalidArgumentError(f"only {len(kept)} low-compliance trials found in {max_batches} batches")


@dataclass(frozen=True)
class SelectionStudyResult:
    mechanism: str
    mean_bias: float
    se: float
    n_reps: int
    mean_observed_fraction: float

    @property
    def z(self) -> float:
        return self.mean_bias / self.se


def selection_study(sel, n_reps: int = 2000, seed: int = 0, n: int = 200, base: ModelSpec | None = None):
    """Mean IV estimate over replicates after applying a missingness mechanism.

    The default data-generating process has ``beta = 0``, a latent
    confounder ``u`` acting on the response only, and an observed ``w``
    acting on the response only.  Keeping both off the compliance equation
    means the treatment is not a collider of instrument and confounders, so
    any bias comes from the selection mechanism itself.
    """
    from .sim_models import apply_selection
    from .seeding import stream

    base = base or ModelSpec(
        response=ResponseModelSpec("ARMA10", phi1=0.3, beta=0.0, lam=1.0, eta=2.0, psi=1.0),
        compliance=ComplianceSpec("simple", alpha=1.5),
        n=n,
    )
    est = np.empty(n_reps)
    frac = np.empty(n_reps)
    for r in range(n_reps):
        trial = simulate_trial(replace(base, seed=derive_seed(seed, 4, r)))
        masked = apply_selection(trial, sel, stream(seed, 5, r))
        rep = full_report(masked)
        est[r] = rep.beta_iv
        frac[r] = masked.n_observed / masked.n
    est = est[np.isfinite(est)]
    bias = est - base.response.beta
    return SelectionStudyResult(
        mechanism=sel.mechanism.value,
        mean_bias=float(bias.mean()),
        se=float(bias.std(ddof=1) / math.sqrt(bias.size)),
        n_reps=int(bias.size),
        mean_observed_fraction=float(frac.mean()),
    )
