"""Command-line entry point: ``python cli.py {fit,simulate,benchmark,diffop}``."""

import functools
import json
import logging
import os
import sys
from dataclasses import asdict

import click

from benchmark import METHODS, SamplerSettings, run_benchmark
from errors import BQTFError, ConfigError, InvalidArgumentError, ValidationError
from gibbs import run_chains, run_gibbs, write_samples
from graph import difference_operator, regularize_operator
from model import ModelSpec, Prior
from posterior import metrics, summarize, summarize_vb, trace_acf_frame, write_metrics
from settings import DEFAULT_OUT, DEFAULT_SEED, DEFAULT_WORKERS, LOG_LEVEL, PROTOCOLS, RunConfig, load_config_file, parse_lattice
from simgen import Kind, Noise, Scenario, write_replications
from vb import run_vb, write_vb_state

logger = logging.getLogger(__name__)

USAGE_ERRORS = (ConfigError, ValidationError, InvalidArgumentError, FileNotFoundError)
FLOAT_FORMAT = "%.17g"


# ================== HELPERS ==================

def handle_errors(func):
    """Usage and validation problems exit 2, other library failures exit 1."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except USAGE_ERRORS as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(2)
        except BQTFError as exc:
            click.echo(f"Error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(1)
    return wrapper


def _stack(*decorators):
    def apply(func):
        for deco in reversed(decorators):
            func = deco(func)
        return func
    return apply


graph_options = _stack(
    click.option("--edges", type=click.Path(dir_okay=False), help="Edge-list CSV u,v[,w], 1-based."),
    click.option("--chain", type=int, help="Built-in chain graph with N vertices."),
    click.option("--lattice", help="Built-in 4-neighbour lattice, ROWSxCOLS."),
    click.option("--coords", type=click.Path(dir_okay=False),
                 help="CSV x,value: observations at 1-D locations, weighted chain graph."),
    click.option("--coords2d", type=click.Path(dir_okay=False), help="CSV x,y vertex coordinates."),
    click.option("--radius", type=float, help="Distance threshold for --coords2d."),
)

model_options = _stack(
    click.option("--p", type=float, default=0.5, show_default=True, help="Quantile level in (0, 1)."),
    click.option("--k", type=int, default=0, show_default=True, help="Trend order."),
    click.option("--prior", type=click.Choice([p.value for p in Prior]), default="horseshoe", show_default=True),
    click.option("--a-sigma", type=float, default=0.1, show_default=True),
    click.option("--b-sigma", type=float, default=0.1, show_default=True),
    click.option("--lower", type=float, default=1e-10, show_default=True, help="Lower bound on local scales."),
    click.option("--upper", type=float, default=1e10, show_default=True, help="Upper bound on local scales."),
)

sampler_options = _stack(
    click.option("--protocol", type=click.Choice(list(PROTOCOLS)), default="simulation", show_default=True),
    click.option("--iters", type=int, help="MCMC iterations (protocol default)."),
    click.option("--burnin", type=int, help="MCMC burn-in (protocol default)."),
    click.option("--thin", type=int, help="MCMC thinning (protocol default)."),
    click.option("--max-iter", type=int, default=500, show_default=True, help="VB iteration cap."),
    click.option("--tol", type=float, default=1e-6, show_default=True, help="VB relative-change tolerance."),
    click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True),
    click.option("--backend", type=click.Choice(["auto", "cholmod", "dense"]), default="auto", show_default=True),
    click.option("--workers", type=int, default=DEFAULT_WORKERS, show_default=True),
)

scenario_options = _stack(
    click.option("--scenario", type=click.Choice([k.value for k in Kind]), required=True),
    click.option("--noise", type=click.Choice([n.value for n in Noise]), required=True),
    click.option("--n", type=int, default=100, show_default=True, help="Chain length for pc/vs."),
    click.option("--lattice", default="10x10", show_default=True, help="Lattice size for the lattice scenario."),
    click.option("--mu", type=float, default=10.0, show_default=True, help="Contamination mean."),
    click.option("--mixed-sd", is_flag=True, help="Read the mixed-normal 0.5 as a standard deviation."),
)


def _scenario(scenario, noise, n, lattice, mu, mixed_sd) -> Scenario:
    rows, cols = parse_lattice(lattice)
    return Scenario(scenario, noise, n=n, rows=rows, cols=cols, mu=mu, sd_reading=mixed_sd)


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


# ================== COMMANDS ==================

@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="Flat TOML file whose keys mirror the flags; flags win.")
@click.option("--log-level", default=LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.pass_context
def cli(ctx, config_path, log_level):
    """Bayesian quantile trend filtering on graphs."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if config_path:
        try:
            values = load_config_file(config_path)
        except ConfigError as exc:
            click.echo(f"Error: {exc}", err=True)
            sys.exit(2)
        ctx.default_map = {name: values for name in ctx.command.commands}


@cli.command()
@graph_options
@click.option("--data", type=click.Path(dir_okay=False), help="Observation CSV node,value, 1-based.")
@model_options
@click.option("--method", type=click.Choice(["mcmc", "vb"]), default="mcmc", show_default=True)
@sampler_options
@click.option("--chains", type=int, default=1, show_default=True)
@click.option("--acf-lag", type=int, default=50, show_default=True)
@click.option("--point", type=click.Choice(["mean", "median"]), default="mean", show_default=True)
@click.option("--truth", type=click.Path(dir_okay=False), help="CSV with true values for metrics.csv.")
@click.option("--truth-column", default="quantile", show_default=True)
@click.option("--out", default=DEFAULT_OUT, show_default=True)
@handle_errors
def fit(workers, **options):
    """Fit one model and write summary, draws/state and metadata."""
    cfg = RunConfig.from_options(options)
    spec = cfg.model_spec()
    graph, data = cfg.load_inputs()
    truth = cfg.load_truth(graph.n_vertices)
    os.makedirs(cfg.out, exist_ok=True)
    extra = {"config": cfg.to_dict()}

    if cfg.method == "mcmc":
        if cfg.chains == 1:
            samples = run_gibbs(spec, graph, data, cfg.iters, cfg.burnin, cfg.thin, cfg.seed, backend=cfg.backend)
        else:
            samples = run_chains(spec, graph, data, cfg.chains, cfg.iters, cfg.burnin, cfg.thin, cfg.seed,
                                 n_jobs=workers, backend=cfg.backend)
        summary = summarize(samples, point=cfg.point)
        write_samples(samples, os.path.join(cfg.out, "samples.csv"), os.path.join(cfg.out, "meta.json"), extra)
        trace_acf_frame(samples, cfg.acf_lag).to_csv(os.path.join(cfg.out, "trace_acf.csv"),
                                                     index=False, float_format=FLOAT_FORMAT)
    else:
        result = run_vb(spec, graph, data, cfg.max_iter, cfg.tol, backend=cfg.backend)
        summary = summarize_vb(result)
        write_vb_state(result, os.path.join(cfg.out, "vb_state.csv"), os.path.join(cfg.out, "meta.json"), extra)

    summary.write(os.path.join(cfg.out, "summary.csv"))
    if truth is not None:
        write_metrics(metrics(summary, truth), os.path.join(cfg.out, "metrics.csv"))
    click.echo(cfg.out)


@cli.command()
@scenario_options
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--p", type=float, help="Also write the true p-quantile curve.")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--out", default=DEFAULT_OUT, show_default=True)
@handle_errors
def simulate(scenario, noise, n, lattice, mu, mixed_sd, reps, p, seed, out):
    """Write seeded replications of a benchmark scenario."""
    scn = _scenario(scenario, noise, n, lattice, mu, mixed_sd)
    write_replications(scn, seed, reps, out, p=p)
    click.echo(out)


@cli.command()
@scenario_options
@click.option("--k", type=click.IntRange(0, 2), default=0, show_default=True,
              help="Trend order; benchmark scenarios are defined for k = 0, 1 or 2 only.")
@click.option("--reps", type=int, default=100, show_default=True)
@click.option("--p", "levels", type=float, multiple=True, default=(0.25, 0.5, 0.75), show_default=True)
@click.option("--methods", type=click.Choice(list(METHODS)), multiple=True, default=METHODS, show_default=True)
@click.option("--priors", type=click.Choice([p.value for p in Prior]), multiple=True,
              default=tuple(p.value for p in Prior), show_default=True)
@click.option("--a-sigma", type=float, default=0.1, show_default=True)
@click.option("--b-sigma", type=float, default=0.1, show_default=True)
@sampler_options
@click.option("--out", default=DEFAULT_OUT, show_default=True)
@handle_errors
def benchmark(scenario, noise, n, lattice, mu, mixed_sd, k, reps, levels, methods, priors,
              a_sigma, b_sigma, protocol, iters, burnin, thin, max_iter, tol, seed, backend, workers, out):
    """Average MSE, MAD, MCIW and CP over replications for a method x prior grid."""
    scn = _scenario(scenario, noise, n, lattice, mu, mixed_sd)
    cfg = RunConfig.from_options(dict(protocol=protocol, iters=iters, burnin=burnin, thin=thin))
    settings = SamplerSettings(cfg.iters, cfg.burnin, cfg.thin, max_iter, tol, backend)
    base = ModelSpec(p=0.5, k=k, a_sigma=a_sigma, b_sigma=b_sigma)

    table, cells = run_benchmark(scn, k, reps, seed, methods=methods, priors=[Prior(p) for p in priors],
                                 levels=levels, settings=settings, n_jobs=workers, base_spec=base)
    os.makedirs(out, exist_ok=True)
    table.to_csv(os.path.join(out, "benchmark.csv"), index=False, float_format=FLOAT_FORMAT)
    cells.to_csv(os.path.join(out, "cells.csv"), index=False, float_format=FLOAT_FORMAT)
    _write_json({
        "scenario": scn.to_dict(),
        "k": k,
        "reps": reps,
        "seed": seed,
        "levels": list(levels),
        "methods": list(methods),
        "priors": list(priors),
        "settings": asdict(settings),
    }, os.path.join(out, "meta.json"))
    click.echo(table.to_string(index=False))


@cli.command()
@graph_options
@click.option("--k", type=int, default=0, show_default=True)
@click.option("--out", default=DEFAULT_OUT, show_default=True)
@handle_errors
def diffop(k, out, **options):
    """Dump the order-(k+1) difference operator as 1-based triplets."""
    cfg = RunConfig.from_options(dict(options, k=k, out=out))
    graph = cfg.load_graph()
    op = difference_operator(graph, k)
    reg = regularize_operator(op, graph.n_vertices)

    frame = op.triplets()
    frame["row"] += 1
    frame["col"] += 1
    os.makedirs(out, exist_ok=True)
    frame.to_csv(os.path.join(out, "operator.csv"), index=False, float_format=FLOAT_FORMAT)

    pinned = reg.matrix[list(reg.fixed_rows)].tocoo()
    _write_json({
        "order": op.order,
        "n_rows": op.n_rows,
        "n_cols": op.n_cols,
        "nnz": int(op.matrix.nnz),
        "weighted": graph.is_weighted,
        "adjusted": graph.is_weighted and k == 1,
        "fixed_rows": [r + 1 for r in reg.fixed_rows],
        "fixed_vertices": sorted(int(c) + 1 for c in pinned.col),
    }, os.path.join(out, "meta.json"))
    click.echo(f"{len(frame)} triplets, {len(reg.fixed_rows)} pinned rows -> {out}")


if __name__ == "__main__":
    cli()
