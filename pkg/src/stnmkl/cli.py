"""Command-line entry point: generate, features, run, report."""
from __future__ import annotations

import csv
import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from .errors import ConfigError, DataError, NonConvergence
from .experiment import (
    CLASSIFIERS,
    ExperimentConfig,
    experiment_recording,
    extract_features,
    load_config,
    report_json,
    run_experiment,
)
from .features import FeatureView, write_feature_csv
from .lfp_data import save_recording

EXIT_CONFIG = 2
EXIT_DATA = 3


def _guarded(fn):
    """Map library errors onto exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (DataError, OSError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except NonConvergence as exc:
            click.echo(f"solver did not converge: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _parse_rates(ctx, param, value):
    if value is None:
        return None
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise click.BadParameter("expected comma-separated numbers, e.g. 5000,500,10")


def _common(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="TOML or JSON config file."),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Master seed."),
        click.option("--rates", callback=_parse_rates, help="Comma-separated rates in Hz, descending."),
        click.option("--tasks", type=click.Choice(["3", "5"]), help="Task set size."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True),
        click.option("--threads", type=click.IntRange(1), help="Worker threads for fold evaluation."),
        click.option("-v", "--verbose", is_flag=True, help="Debug logging (and MKL traces for run)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _build_config(config_path, seed, rates, tasks, threads, classifiers=()) -> ExperimentConfig:
    cfg = load_config(config_path) if config_path else ExperimentConfig()
    over = {}
    if seed is not None:
        over["seed"] = seed
    if rates is not None:
        over["rates"] = rates
    if tasks is not None:
        over["tasks"] = int(tasks)
    if threads is not None:
        over["threads"] = threads
    if classifiers:
        over["classifiers"] = tuple(classifiers)
    return replace(cfg, **over) if over else cfg


def _setup(verbose: bool, out_dir) -> Path:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("stnmkl").setLevel(logging.DEBUG if verbose else logging.WARNING)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
def main():
    """Beta-band spectrogram features and multiple kernel learning for STN-LFP."""


@main.command()
@_common
@_guarded
def generate(config_path, seed, rates, tasks, out_dir, threads, verbose):
    """Write a synthetic recording (recording.lfp plus JSON sidecar)."""
    out = _setup(verbose, out_dir)
    cfg = _build_config(config_path, seed, rates, tasks, threads)
    rec = experiment_recording(replace(cfg, data=None))
    path = out / "recording.lfp"
    save_recording(rec, path)
    click.echo(str(path))


@main.command()
@_common
@_guarded
def features(config_path, seed, rates, tasks, out_dir, threads, verbose):
    """Extract per-rate feature vectors and write them as CSV."""
    out = _setup(verbose, out_dir)
    cfg = _build_config(config_path, seed, rates, tasks, threads)
    fs = extract_features(experiment_recording(cfg), cfg)
    for rate in cfg.rates:
        views = []
        for i, label in enumerate(fs.labels):
            for view in ("left", "right"):
                views.append(FeatureView(fs.matrix(rate, view)[i], label, view, rate))
        path = out / f"features_{rate:g}Hz.csv"
        write_feature_csv(views, path)
        click.echo(str(path))


@main.command()
@_common
@click.option(
    "--classifier", "classifiers", multiple=True, type=click.Choice(CLASSIFIERS), help="Repeat to run several."
)
@click.option("--no-figures", is_flag=True, help="Skip PNG rendering.")
@_guarded
def run(config_path, seed, rates, tasks, out_dir, threads, verbose, classifiers, no_figures):
    """Cross-validate the classifiers over the rate sweep and write the report."""
    from .report import format_table, render_report

    out = _setup(verbose, out_dir)
    cfg = _build_config(config_path, seed, rates, tasks, threads, classifiers)
    traces = [] if verbose else None
    report = run_experiment(cfg, traces)
    (out / "report.json").write_text(report_json(report))
    render_report(report, out, figures=not no_figures)
    if traces:
        _write_traces(traces, out / "mkl_trace.csv")
    click.echo(format_table(report), nl=False)


def _write_traces(rows, path) -> None:
    n_d = max(len(r["d"]) for r in rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate", "fold", "model", "iteration", "objective", "primal", "dual", "gap"] + [f"d{m}" for m in range(n_d)])
        for r in rows:
            w.writerow(
                [f"{r['rate']:g}", r["fold"], r["model"], r["iteration"]]
                + [repr(r[k]) for k in ("objective", "primal", "dual", "gap")]
                + [repr(x) for x in r["d"]]
            )


@main.command()
@click.argument("report_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--format", "fmt", type=click.Choice(["text", "json", "csv"]), default="text", show_default=True)
@click.option("--no-figures", is_flag=True, help="Skip PNG rendering.")
@click.option("-v", "--verbose", is_flag=True)
@_guarded
def report(report_path, out_dir, fmt, no_figures, verbose):
    """Render table, CSV and figures from a saved report.json."""
    from .report import format_table, load_report, render_report

    out = _setup(verbose, out_dir)
    try:
        rep = load_report(report_path)
    except json.JSONDecodeError as exc:
        raise DataError(f"{report_path}: not a JSON report ({exc})") from exc
    if "results" not in rep:
        raise DataError(f"{report_path}: missing 'results'")
    render_report(rep, out, figures=not no_figures)
    if fmt == "json":
        click.echo(report_json(rep))
    elif fmt == "csv":
        click.echo((out / "accuracy.csv").read_text(), nl=False)
    else:
        click.echo(format_table(rep), nl=False)


if __name__ == "__main__":
    main()
