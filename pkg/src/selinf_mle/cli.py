"""Command-line entry point ``selinf``.

Exit codes: 0 success, 1 internal or solver failure, 2 empty selection,
64 usage or input error.
"""
from dataclasses import fields
from importlib import resources
import json
import math
import os
import sys

import click
import jsonschema
import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .exceptions import EmptySelection, SelinfError
from .filedrawer import FileDrawerProblem, conditioned_pivots
from .multi import ms_then_slope_pipeline, multi_infer, two_lasso_pipeline
from .queries import (Dataset, RandomizationSpec, build_target, lasso_kkt, ms_kkt,
                      slope_kkt, solve_marginal_screening, solve_randomized_lasso,
                      solve_randomized_slope)
from .selective_mle import infer
from .simulation import (ExperimentConfig, cross_validate_lambda, lambda_theory,
                         randomization_variance, run_experiment)

SCHEMA_TAG = "selinf-mle/1"
EXIT_OK, EXIT_INTERNAL, EXIT_EMPTY, EXIT_USAGE = 0, 1, 2, 64


def _timestamp():
    # reproducible builds convention; absent means no timestamp, which keeps
    # repeated runs byte-identical
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    import datetime
    return datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc).isoformat()


def manifest(subcommand, config, seed, outputs):
    return dict(subcommand=subcommand, config=config, seed=seed, version=__version__,
                timestamp=_timestamp(), outputs=list(outputs))


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text, path):
    if path is None:
        click.echo(text, nl=False)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# data ingestion

def load_dataset(csv_path, response, standardize=True, sigma2=None):
    """Read a CSV into a :class:`Dataset` plus the predictor names.

    With ``standardize`` the response is centered and each predictor is
    centered and scaled to unit sample standard deviation.
    """
    try:
        df = pd.read_csv(csv_path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise click.UsageError(f"cannot parse {csv_path}: {exc}") from None
    if response not in df.columns:
        raise click.UsageError(f"response column {response!r} not found")
    bad = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    if bad:
        raise click.UsageError(f"non-numeric columns: {', '.join(map(str, bad))}")
    values = df.to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise click.UsageError("CSV contains missing, NaN or infinite cells")
    names = [str(c) for c in df.columns if c != response]
    if not names:
        raise click.UsageError("no predictor columns")
    X = df[names].to_numpy(dtype=float)
    y = df[response].to_numpy(dtype=float)
    if standardize:
        y = y - y.mean()
        X = X - X.mean(axis=0)
        sd = X.std(axis=0, ddof=1)
        if np.any(sd == 0):
            raise click.UsageError("a predictor column is constant")
        X = X / sd
    n, p = X.shape
    if sigma2 is None and n <= p:
        raise click.UsageError("n <= p: supply --sigma2 for the noise variance")
    try:
        return Dataset.from_arrays(X, y, sigma2), names
    except SelinfError as exc:
        raise click.UsageError(str(exc)) from None


def resolve_lambda(spec, data, rng):
    if spec == "theory":
        return lambda_theory(data.X, data.sigma2, 500, rng)
    if spec in ("cv.min", "cv.1se"):
        cv_min, cv_1se = cross_validate_lambda(data.X, data.y, rng=rng)
        return cv_min if spec == "cv.min" else cv_1se
    try:
        lam = float(spec)
    except ValueError:
        raise click.BadParameter(f"expected theory, cv.min, cv.1se or a number, got {spec!r}",
                                 param_hint="--lambda") from None
    if not (lam > 0 and math.isfinite(lam)):
        raise click.BadParameter("lambda must be positive", param_hint="--lambda")
    return lam


def run_inference(data, query, lam, rand_ratio, q, target_kind, alpha, seed, ramp=0.5):
    """Library-level pipeline used by ``selinf infer``; returns ``(MleResult, extra)``."""
    rng = np.random.default_rng(seed)
    lam_value = resolve_lambda(lam, data, rng) if query != "screening" else None
    eta2 = randomization_variance(data, rand_ratio)
    rand = RandomizationSpec.isotropic(eta2, data.p)
    eps = 1.0 / math.sqrt(data.n)
    if query == "lasso":
        out = solve_randomized_lasso(data, rand, lam_value, eps, rng=rng)
        target = build_target(data, out.E, target_kind)
        res = infer(target, lasso_kkt(data, out, lam_value, eps, target), rand.cov, q)
    elif query == "screening":
        out = solve_marginal_screening(data, rand, alpha, rng=rng)
        target = build_target(data, out.E, target_kind)
        res = infer(target, ms_kkt(data, out, target), rand.cov, q)
    elif query == "slope":
        lam_seq = lam_value * np.linspace(1.0, ramp, data.p)
        out = solve_randomized_slope(data, rand, lam_seq, rng=rng)
        target = build_target(data, out.E, target_kind)
        res = infer(target, slope_kkt(data, out, lam_seq, target), rand.cov, q)
    elif query == "lasso2":
        setup, _ = two_lasso_pipeline(data, [rand, rand], lam_value, eps, rng, target_kind)
        res = multi_infer(setup, q)
    elif query == "ms-slope":
        setup, _ = ms_then_slope_pipeline(
            data, [rand, rand], alpha,
            lambda m: lam_value * np.linspace(1.0, ramp, m), rng, target_kind)
        res = multi_infer(setup, q)
    else:
        raise click.BadParameter(f"unknown query {query!r}", param_hint="--query")
    return res, dict(lambda_value=lam_value, eta2=eta2, sigma2=data.sigma2)


# ---------------------------------------------------------------------------
# commands

@click.group()
@click.version_option(__version__, prog_name="selinf")
def cli():
    """Selective inference by approximate maximum likelihood."""


@cli.command("infer")
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--response", required=True, help="Name of the response column.")
@click.option("--query", type=click.Choice(["lasso", "screening", "slope", "lasso2", "ms-slope"]),
              default="lasso", show_default=True)
@click.option("--lambda", "lam", default="theory", show_default=True,
              help="theory, cv.min, cv.1se or a positive number.")
@click.option("--rand-ratio", type=click.FloatRange(min=0, min_open=True), default=0.5,
              show_default=True, help="Randomization variance relative to the noise scale of X'y.")
@click.option("--level", "q", type=click.FloatRange(0, 1, min_open=True, max_open=True),
              default=0.10, show_default=True, help="Error level q; intervals have coverage 1-q.")
@click.option("--target", "target_kind", type=click.Choice(["partial", "full"]),
              default="partial", show_default=True)
@click.option("--alpha", type=click.FloatRange(0, 1, min_open=True, max_open=True),
              default=0.10, show_default=True, help="Screening level for screening queries.")
@click.option("--sigma2", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Noise variance; estimated by OLS when omitted.")
@click.option("--standardize/--no-standardize", default=True, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def cmd_infer(csv_path, response, query, lam, rand_ratio, q, target_kind, alpha,
              sigma2, standardize, seed, output):
    """Run a randomized query on CSV data and report selective inference."""
    data, names = load_dataset(csv_path, response, standardize, sigma2)
    if target_kind == "full" and data.n <= data.p:
        raise click.UsageError("--target full needs n > p")
    res, extra = run_inference(data, query, lam, rand_ratio, q, target_kind, alpha, seed)
    config = dict(csv=str(csv_path), response=response, query=query, lam=lam,
                  rand_ratio=rand_ratio, level=q, target=target_kind, alpha=alpha,
                  standardize=standardize, n=data.n, p=data.p, **extra)
    report = res.to_dict()
    report["selected_names"] = [names[j] for j in res.E]
    doc = dict(schema=SCHEMA_TAG, result=report,
               manifest=manifest("infer", config, seed, [output] if output else []))
    _emit(_dump(doc), output)


def _load_config(path, overrides):
    base = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            base = json.load(fh)
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(base) - known
        if unknown:
            raise click.UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**base)
    except (SelinfError, TypeError) as exc:
        raise click.UsageError(str(exc)) from None


@cli.command("simulate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n", type=click.IntRange(min=2), default=None)
@click.option("--p", type=click.IntRange(min=6), default=None)
@click.option("--rho", type=float, default=None)
@click.option("--snr", "snr_grid", type=float, multiple=True, help="Repeat for a grid.")
@click.option("--reps", type=click.IntRange(min=1), default=None)
@click.option("--query", type=click.Choice(["lasso", "lasso2", "ms-slope"]), default=None)
@click.option("--signal", type=click.Choice(["type4", "flat"]), default=None)
@click.option("--lambda-scheme", type=click.Choice(["theory", "cv_min", "cv_1se"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
def cmd_simulate(config_path, n, p, rho, snr_grid, reps, query, signal, lambda_scheme,
                 seed, out_dir):
    """Run the coverage/power simulation and write summary.json and summary.csv."""
    cfg = _load_config(config_path, dict(
        n=n, p=p, rho=rho, snr_grid=tuple(snr_grid) or None, reps=reps, query=query,
        signal=signal, lambda_scheme=lambda_scheme, seed=seed))
    summary = run_experiment(cfg)
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "summary.json")
    csv_path = os.path.join(out_dir, "summary.csv")
    man = manifest("simulate", cfg.to_dict(), cfg.seed, [json_path, csv_path])
    doc = dict(schema=SCHEMA_TAG, manifest=man, **summary.to_dict())
    schema = json.loads(resources.files("selinf_mle").joinpath(
        "schema/summary.schema.json").read_text(encoding="utf-8"))
    jsonschema.validate(doc, schema)
    _emit(_dump(doc), json_path)
    _emit("# " + json.dumps(man, sort_keys=True) + "\n" + summary.to_csv(), csv_path)
    click.echo(_dump(dict(schema=SCHEMA_TAG, outputs=[json_path, csv_path])), nl=False)


@cli.command("pivot-check")
@click.option("--beta", type=float, required=True)
@click.option("--tau", type=float, default=0.0, show_default=True)
@click.option("--eta2", type=click.FloatRange(min=0, min_open=True), default=1.0, show_default=True)
@click.option("--draws", type=click.IntRange(min=1), default=10000, show_default=True)
@click.option("--sampler", type=click.Choice(["exact", "rejection"]), default="exact",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_csv", type=click.Path(dir_okay=False), default=None,
              help="Where to write the empirical CDF of the pivots.")
def cmd_pivot_check(beta, tau, eta2, draws, sampler, seed, out_csv):
    """Check uniformity of the file-drawer pivot at a given true mean."""
    prob = FileDrawerProblem(tau, eta2)
    piv = np.sort(conditioned_pivots(beta, prob, draws, np.random.default_rng(seed), sampler))
    ks = stats.kstest(piv, "uniform")
    config = dict(beta=beta, tau=tau, eta2=eta2, draws=draws, sampler=sampler)
    man = manifest("pivot-check", config, seed, [out_csv] if out_csv else [])
    if out_csv is not None:
        ecdf = np.arange(1, draws + 1) / draws
        lines = ["# " + json.dumps(man, sort_keys=True), "pivot,ecdf"]
        lines += [f"{a!r},{b!r}" for a, b in zip(piv.tolist(), ecdf.tolist())]
        _emit("\n".join(lines) + "\n", out_csv)
    doc = dict(schema=SCHEMA_TAG, manifest=man,
               result=dict(ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
                           passes_1pct=bool(ks.pvalue > 0.01), draws=draws))
    click.echo(_dump(doc), nl=False)


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="selinf", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_INTERNAL
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except EmptySelection as exc:
        click.echo(f"empty selection: {exc}", err=True)
        return EXIT_EMPTY
    except (SelinfError, ArithmeticError, np.linalg.LinAlgError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
