"""Command-line interface.

Exit codes: 0 success (degenerate analyses included), 2 configuration or
usage error, 3 data error, 4 inference impossible (K = 0 or an empty
interval).
"""
from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from . import io as nio
from .errors import (
    CannotInvertError,
    ConfigError,
    DataError,
    EmptyIntervalError,
    InvalidArgumentError,
    Nof1Error,
)

EXIT_CONFIG, EXIT_DATA, EXIT_INFERENCE = 2, 3, 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (CannotInvertError, EmptyIntervalError) as exc:
            _fail(EXIT_INFERENCE, str(exc))
        except (ConfigError, InvalidArgumentError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except (DataError, Nof1Error) as exc:
            _fail(EXIT_DATA, str(exc))
    return wrapper


def _emit(text: str, out: str | None):
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _json(doc: dict) -> str:
    return nio.dumps({"schema_version": nio.SCHEMA_VERSION, **doc}, indent=1)


seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                           help="Root seed (overrides the config file).")
out_option = click.option("--out", type=click.Path(dir_okay=False), default=None,
                          help="Output file (stdout when omitted).")


def format_option(default="json"):
    return click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default=default,
                        show_default=True)


def rand_options(default_n_perm: int):
    def deco(fn):
        fn = click.option("--n-perm", type=int, default=default_n_perm, show_default=True,
                          help="Number of permutations (>= 100).")(fn)
        fn = click.option("--p-convention", type=click.Choice(["plain", "plus-one"]), default="plain",
                          show_default=True)(fn)
        fn = click.option("--adjusted", is_flag=True, help="Residualize x and y on w first.")(fn)
        return fn
    return deco


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="artifact")
def main():
    """IV estimation and randomization inference for n-of-1 trials."""


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@seed_option
@out_option
@format_option("csv")
@click.option("--allow-non-stationary", is_flag=True, help="Accept unit-root or explosive coefficients.")
@click.option("--garch-strict", is_flag=True, help="Use b1 = 0.99 (1 - a1) for GARCH(1,1).")
@handle_errors
def simulate(config, seed, out, fmt, allow_non_stationary, garch_strict):
    """Simulate one trial from a model config."""
    from dataclasses import replace

    from .sim_models import simulate_trial

    spec = nio.load_model_spec(
        config,
        allow_nonstationary=allow_non_stationary or None,
        garch_strict=garch_strict or None,
    )
    if seed is not None:
        spec = replace(spec, seed=seed)
    trial = simulate_trial(spec)
    if fmt == "json":
        _emit(nio.trial_to_json(trial, spec), out)
        return
    _emit(nio.trial_to_csv(trial), out)
    if out is not None:
        Path(out + ".manifest.json").write_text(
            _json({"kind": "trial_manifest", "model_spec": nio.model_spec_to_dict(spec)}) + "\n"
        )


@main.command()
@click.argument("trial", type=click.Path(exists=True, dir_okay=False))
@click.option("--adjusted", is_flag=True, help="Residualize x and y on w first.")
@out_option
@format_option()
@handle_errors
def analyze(trial, adjusted, out, fmt):
    """Point estimates and diagnostics for a trial file."""
    from .estimators import full_report

    data = nio.load_trial(trial)
    if adjusted and data.w is None:
        raise DataError("--adjusted needs a w column in the trial file")
    rep = full_report(data, adjusted=adjusted).to_dict()
    if fmt == "csv":
        _emit(nio.rows_to_csv([rep]), out)
    else:
        _emit(_json({"kind": "estimate_report", "input": trial, **rep}), out)


@main.command()
@click.argument("trial", type=click.Path(exists=True, dir_okay=False))
@rand_options(10_000)
@click.option("--sided", type=click.Choice(["two-sided", "greater", "less"]), default="two-sided",
              show_default=True)
@click.option("--statistic", type=click.Choice(["iv", "itt"]), default="iv", show_default=True)
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@out_option
@format_option()
@handle_errors
def test(trial, n_perm, p_convention, adjusted, sided, statistic, seed, out, fmt):
    """Randomization test of the sharp null of no effect."""
    from .rand_inference import RandTestConfig, rand_test_sharp_null

    cfg = RandTestConfig(n_perm=n_perm, sidedness=sided, p_convention=p_convention, seed=seed)
    res = rand_test_sharp_null(nio.load_trial(trial), cfg, statistic, adjusted=adjusted).to_dict()
    if fmt == "csv":
        summary = res.pop("null_summary")
        _emit(nio.rows_to_csv([{**res, **{f"null_{k}": v for k, v in summary.items()}, "seed": seed}]), out)
    else:
        _emit(_json({"kind": "rand_test_result", "input": trial, "adjusted": adjusted,
                     "config": {"n_perm": n_perm, "sidedness": sided,
                                "p_convention": p_convention, "seed": seed}, **res}), out)


@main.command()
@click.argument("trial", type=click.Path(exists=True, dir_okay=False))
@rand_options(2_000)
@click.option("--alpha", "alphas", type=float, multiple=True,
              help="One-sided level; repeat for several intervals (default 0.05, 0.025, 0.005).")
@click.option("--grid-step", type=float, default=None, help="Profile step (default max(|beta_iv|/50, 0.01)).")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True)
@click.option("--profile-csv", type=click.Path(dir_okay=False), default=None,
              help="Also write the p-value profile as CSV (beta_j, p).")
@out_option
@format_option()
@handle_errors
def ci(trial, n_perm, p_convention, adjusted, alphas, grid_step, seed, profile_csv, out, fmt):
    """Randomization confidence intervals from the one-sided p-value profile."""
    from .rand_inference import RandTestConfig, ci_from_profile, pvalue_profile

    alphas = alphas or (0.05, 0.025, 0.005)
    for a in alphas:
        if not 0 < a < 0.5:
            raise ConfigError(f"{a} must lie in (0, 0.5)", "--alpha")
    cfg = RandTestConfig(n_perm=n_perm, p_convention=p_convention, seed=seed)
    prof = pvalue_profile(nio.load_trial(trial), cfg, grid_step=grid_step, include=(0.0,), adjusted=adjusted)
    rows = []
    for a in alphas:
        lo, hi = ci_from_profile(prof, a)
        rows.append({"alpha": a, "level": 1 - 2 * a, "lo": lo, "hi": hi})
    if profile_csv:
        Path(profile_csv).write_text(prof.to_csv())
    if fmt == "csv":
        _emit(nio.rows_to_csv(rows), out)
    else:
        _emit(_json({"kind": "confidence_intervals", "input": trial, "adjusted": adjusted,
                     "config": {"n_perm": n_perm, "p_convention": p_convention, "seed": seed,
                                "grid_step": prof.grid_step},
                     "beta_hat": prof.beta_hat, "k": prof.k, "intervals": rows,
                     "profile": prof.to_dict()["grid"]}), out)


# ---------------------------------------------------------------- experiments

def _experiment_config(config, seed, n_datasets, n_perm, models, settings, extra=None):
    from .experiment import ExperimentConfig

    doc = nio.read_json(config) if config else {}
    if not isinstance(doc, dict):
        raise ConfigError("experiment config must be a JSON object")
    for key, value in (("seed", seed), ("n_datasets", n_datasets), ("n_perm", n_perm)):
        if value is not None:
            doc[key] = value
    if models:
        doc["models"] = list(models)
    if settings:
        doc["settings"] = list(settings)
    doc.update(extra or {})
    try:
        return ExperimentConfig.from_dict(doc)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _threads(threads):
    from .experiment import default_workers

    return threads if threads is not None else default_workers()


def _write_tables(records, out_dir: Path, prefix: str = ""):
    from .experiment import aggregate_curves, bias_table

    out_dir.mkdir(parents=True, exist_ok=True)
    aggregate_curves(records, ("hypothesis",)).to_csv(out_dir / f"{prefix}curves.csv")
    aggregate_curves(records, ("hypothesis", "beta_bin", "n_bin", "cor_bin")).to_csv(
        out_dir / f"{prefix}curves_stratified.csv"
    )
    bias_table(records).to_csv(out_dir / f"{prefix}bias.csv", index=False, lineterminator="\n")


def experiment_options(fn):
    fn = click.option("--settings", type=int, multiple=True, help="Setting ids (repeatable).")(fn)
    fn = click.option("--models", type=str, multiple=True, help="Response families (repeatable).")(fn)
    fn = click.option("--n-perm", type=int, default=None)(fn)
    fn = click.option("--n-datasets", type=int, default=None, help="Datasets per cell.")(fn)
    fn = click.option("--threads", type=click.IntRange(1), default=None,
                      help="Worker processes (default: $NOF1IV_THREADS or CPU count).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")(fn)
    fn = seed_option(fn)
    fn = click.argument("config", type=click.Path(exists=True, dir_okay=False), required=False)(fn)
    return fn


@main.command()
@experiment_options
@click.option("--garch-strict", is_flag=True)
@handle_errors
def experiment(config, seed, out, threads, n_datasets, n_perm, models, settings, garch_strict):
    """Run the simulation grid; resumes from an existing records file."""
    from .experiment import run_experiment

    extra = {"garch_strict": True} if garch_strict else {}
    cfg = _experiment_config(config, seed, n_datasets, n_perm, models, settings, extra)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = run_experiment(
        cfg, out_dir / "records.ndjson", workers=_threads(threads),
        progress=lambda cell, k: click.echo(f"{cell}: {k} records", err=True),
    )
    _write_tables(records, out_dir)
    click.echo(f"{len(records)} records written to {out_dir}")


@main.command()
@click.argument("records", type=click.Path(exists=True, dir_okay=False), nargs=-1, required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@handle_errors
def aggregate(records, out):
    """Rebuild curve and bias tables from one or more record files."""
    from .experiment import canonical_order, read_records

    recs = []
    for path in records:
        try:
            recs.extend(read_records(path))
        except (ValueError, KeyError) as exc:
            raise DataError(f"{path}: {exc}") from exc
    if not recs:
        raise DataError("no records found")
    _write_tables(canonical_order(recs), Path(out))
    click.echo(f"aggregated {len(recs)} records into {out}")


@main.command()
@experiment_options
@click.option("--allow-non-stationary", is_flag=True, help="Required: acknowledges unit-root data.")
@click.option("--no-control", is_flag=True, help="Skip the matched stationary control run.")
@handle_errors
def stress(config, seed, out, threads, n_datasets, n_perm, models, settings, allow_non_stationary, no_control):
    """Unit-root stress runs for the autoregressive models."""
    from .experiment import STRESS_MODELS, nonstationarity_stress

    if not allow_non_stationary:
        raise ConfigError("the stress run generates unit-root data; pass --allow-non-stationary",
                          "--allow-non-stationary")
    cfg = _experiment_config(config, seed, n_datasets, n_perm, models or STRESS_MODELS, settings,
                             {"allow_nonstationary": True})
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = nonstationarity_stress(cfg, workers=_threads(threads), out_path=out_dir / "records.ndjson",
                                 control=not no_control)
    _write_tables(res["unit_root"], out_dir)
    if "control" in res:
        _write_tables(res["control"], out_dir, prefix="control_")
    click.echo(f"{len(res['unit_root'])} unit-root records written to {out_dir}")


if __name__ == "__main__":
    main()
