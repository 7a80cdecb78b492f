"""Command-line entry point."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import benchmarks as bm
from . import harness as hs


def _echo_record(r: dict) -> None:
    if r["status"] != "ok":
        click.echo(f"  trial {r['trial']}: {r['status']} ({r['error']})", err=True)
        return
    mark = "valid" if r["valid"] else "INVALID"
    click.echo(f"  trial {r['trial']}: F_max={r['f_max']:.6f}  ground truth={r['ground_truth_pfail']:.6f}  "
               f"{mark}  ({r['wall_time']:.1f} s)", err=True)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    """Upper-bound failure probabilities of composite systems from per-component validation data."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _config(benchmark, input_mode, model_mode, method, trials, seed, v, n_m, confidence, lengthscales, tau):
    ls = [float(x) for x in lengthscales.split(",")] if lengthscales else None
    t = tau if tau in ("calibrated", "reference") else float(tau)
    return hs.RunConfig(benchmark, input_mode, model_mode, method, trials=trials, seed=seed, V=v, n_M=n_m,
                        confidence=confidence, lengthscales=ls, tau=t)


_common = [
    click.option("--trials", default=5, show_default=True),
    click.option("--seed", default=2349, show_default=True, help="Base seed; trial t uses seed + t."),
    click.option("--V", "v", default=100, show_default=True, help="Validation samples per component."),
    click.option("--n-M", "n_m", default=500, show_default=True, help="Simulation samples."),
    click.option("--confidence", default=0.95, show_default=True, help="MCCP confidence level."),
    click.option("--lengthscales", default=None, help="Comma-separated flat lengthscale vector."),
    click.option("--tau", default="calibrated", show_default=True, help="'calibrated', 'reference' or a number."),
    click.option("--workers", default=1, show_default=True),
]


def _apply(f):
    for opt in reversed(_common):
        f = opt(f)
    return f


@main.command()
@click.option("--benchmark", required=True, help="Benchmark name, e.g. ChainedSolvers.")
@click.option("--input", "input_mode", type=click.Choice(hs.INPUT_MODES), default="perfect", show_default=True)
@click.option("--model", "model_mode", type=click.Choice(hs.MODEL_MODES), default="perfect", show_default=True)
@click.option("--method", type=click.Choice(hs.METHODS), default="dpbound", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write run records as JSON.")
@_apply
def run(benchmark, input_mode, model_mode, method, out, trials, seed, v, n_m, confidence, lengthscales, tau, workers):
    """Validate one (benchmark, input, model, method) cell."""
    try:
        cfg = _config(benchmark, input_mode, model_mode, method, trials, seed, v, n_m, confidence, lengthscales, tau)
    except (KeyError, ValueError) as exc:
        raise click.BadParameter(str(exc)) from None
    click.echo(f"{cfg.benchmark} [{cfg.label}] {cfg.method}", err=True)
    rep = hs.run_validation(cfg, workers, on_record=_echo_record)
    if out:
        rep.save(out)
    click.echo(json.dumps(rep.summary(), indent=1))


@main.command()
@click.option("--all", "run_all", is_flag=True, help="All eight benchmarks.")
@click.option("--benchmark", "benchmarks", multiple=True, help="Restrict to these benchmarks.")
@click.option("--method", "methods", multiple=True, type=click.Choice(hs.METHODS), help="Default: dpbound.")
@click.option("--out-dir", type=click.Path(file_okay=False), default="results", show_default=True)
@click.option("--skip-existing", is_flag=True, help="Keep cells whose result file already exists.")
@_apply
def sweep(run_all, benchmarks, methods, out_dir, skip_existing, trials, seed, v, n_m, confidence, lengthscales, tau,
          workers):
    """Run the benchmark x input x model grid; one JSON file per cell."""
    if not run_all and not benchmarks:
        raise click.UsageError("pass --all or at least one --benchmark")
    names = bm.BENCHMARK_NAMES if run_all else [bm.resolve_name(b) for b in benchmarks]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = tau if tau in ("calibrated", "reference") else float(tau)
    ls = [float(x) for x in lengthscales.split(",")] if lengthscales else None
    cfgs = hs.sweep_configs(names, methods or ("dpbound",), trials=trials, seed=seed, V=v, n_M=n_m,
                            confidence=confidence, lengthscales=ls, tau=t)
    for cfg in cfgs:
        tag = "mccp" + (f"{cfg.confidence:g}".replace("0.", "")) if cfg.method == "mccp" else cfg.method
        path = out / f"{cfg.benchmark}_{cfg.input_mode}-input_{cfg.model_mode}-model_{tag}.json"
        if skip_existing and path.exists():
            continue
        click.echo(f"{cfg.benchmark} [{cfg.label}] {cfg.method}", err=True)
        hs.run_validation(cfg, workers, on_record=_echo_record).save(path)


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["table", "csv", "json"]), default="table", show_default=True)
def report(files, fmt):
    """Aggregate run-record files into per-cell and per-quadrant statistics."""
    recs = [r for f in files for r in hs.ValidationReport.load(f).records]
    agg = hs.aggregate(recs)
    if fmt == "json":
        click.echo(json.dumps(agg, indent=1))
    elif fmt == "csv":
        cols = ["benchmark", "input", "model", "method", "mean_f_max", "std_f_max", "mean_ground_truth",
                "invalidness", "n", "n_failed"]
        click.echo(",".join(cols))
        for c in agg["cells"]:
            click.echo(",".join(str(c[k]) for k in cols))
    else:
        click.echo(hs.format_table(agg))


@main.command("illustrate-gaussian")
@click.option("--config", "case", type=click.Choice(hs.GAUSSIAN_CASES), default=None,
              help="Default: both illustration cases.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write full reports (with weights) as JSON.")
def illustrate_gaussian(case, seed, out):
    """Single linear component with Gaussian inputs: misfit model vs. biased input."""
    cases = [case] if case else ["misfit_perfect_input", "perfect_biased_input"]
    reports = [hs.gaussian_illustration(c, seed) for c in cases]
    for r in reports:
        click.echo(f"{r['config']:<22} B(0->1)={r['B_0_1']:.5f}  B(1->2)={r['B_1_2']:.5f}  "
                   f"F_max={r['f_max']:.5f}  model tail={r['naive_tail']:.5f}  true tail={r['true_tail']:.5f}")
    if out:
        Path(out).write_text(json.dumps(reports, indent=1))


@main.command()
@click.argument("benchmark")
@click.option("--no-calibrate", is_flag=True, help="Show the reference threshold instead of calibrating.")
def describe(benchmark, no_calibrate):
    """Dump every constant of a benchmark."""
    try:
        spec = bm.make_benchmark(benchmark, tau="reference" if no_calibrate else "calibrated")
    except KeyError as exc:
        raise click.BadParameter(str(exc)) from None
    click.echo(json.dumps(spec.describe(), indent=1, default=float))


@main.command()
@click.option("--benchmark", required=True)
@click.option("--budget", default=40, show_default=True)
@click.option("--seed", default=2349, show_default=True)
@click.option("--trace", type=click.Path(dir_okay=False), default=None, help="Write the evaluation trace as CSV.")
@click.option("--include-defaults/--no-include-defaults", default=True, show_default=True,
              help="Evaluate the built-in lengthscales as the first candidate.")
def tune(benchmark, budget, seed, trace, include_defaults):
    """Search lengthscales minimizing F_max (perfect input, perfect model)."""
    from .tuning import benchmark_pipeline, benchmark_space, search_lengthscales

    spec = bm.make_benchmark(benchmark, tau="reference")
    res = search_lengthscales(
        benchmark_pipeline(spec.name, seed), benchmark_space(spec), budget, seed,
        initial=[spec.default_lengthscales()] if include_defaults else (),
        on_eval=lambda e: click.echo(f"  [{e.index}] {e.status} F_max={e.f_max}", err=True),
    )
    if trace:
        res.to_csv(trace)
    best = None if res.best is None else [float(v) for v in np.asarray(res.best)]
    click.echo(json.dumps({"benchmark": spec.name, "best_f_max": res.best_f_max, "lengthscales": best}, indent=1))


if __name__ == "__main__":
    sys.exit(main())
