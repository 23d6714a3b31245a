"""Replication grid over methods, priors and quantile levels, averaged into
one metrics table per scenario.
"""

import logging
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import pandas as pd
from joblib import Parallel, delayed

from gibbs import sample_model
from model import PRIOR_LABELS, ModelSpec, Prior, validate_spec
from posterior import METRIC_NAMES, metrics, summarize, summarize_vb
from simgen import Scenario, generate
from vb import fit_model

logger = logging.getLogger(__name__)

METHODS = ("mcmc", "vb")
DEFAULT_LEVELS = (0.25, 0.5, 0.75)
# fits draw from (seed + FIT_SEED_OFFSET, rep) so they never reuse a data stream
FIT_SEED_OFFSET = 1


@dataclass(frozen=True)
class SamplerSettings:
    n_iter: int = 5000
    burn_in: int = 0
    thin: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    backend: str = "auto"


def fit_replication(scenario: Scenario, spec: ModelSpec, method: str, rep: int, seed: int,
                    settings: SamplerSettings) -> dict:
    data = generate(scenario, seed, rep)
    model = validate_spec(spec, scenario.graph(), data, backend=settings.backend)
    if method == "mcmc":
        samples = sample_model(model, settings.n_iter, settings.burn_in, settings.thin,
                               seed + FIT_SEED_OFFSET, rep)
        summary = summarize(samples)
        extra = {}
    elif method == "vb":
        fit = fit_model(model, settings.max_iter, settings.tol)
        summary = summarize_vb(fit)
        extra = {"converged": fit.report.converged}
    else:
        raise ValueError(f"Unsupported method: {method}")

    row = metrics(summary, scenario.truth(spec.p))
    row.update(method=method, prior=spec.prior.value, p=spec.p, rep=rep, **extra)
    return row


def run_benchmark(scenario: Scenario, k: int, reps: int, seed: int,
                  methods: Sequence[str] = METHODS,
                  priors: Sequence[Prior] = tuple(Prior),
                  levels: Sequence[float] = DEFAULT_LEVELS,
                  settings: SamplerSettings = SamplerSettings(),
                  n_jobs: int = 1,
                  base_spec: ModelSpec = None):
    """Returns (table, cells): the wide averaged table and the per-replication rows."""
    tasks = []
    for method, prior, p in product(methods, priors, levels):
        if base_spec is None:
            spec = ModelSpec(p=p, k=k, prior=prior)
        else:
            spec = ModelSpec(p=p, k=k, prior=prior, a_sigma=base_spec.a_sigma,
                             b_sigma=base_spec.b_sigma, bounds=base_spec.bounds)
        tasks.extend((spec, method, r) for r in range(reps))

    rows = Parallel(n_jobs=n_jobs)(
        delayed(fit_replication)(scenario, spec, method, r, seed, settings) for spec, method, r in tasks)
    cells = pd.DataFrame(rows)

    for (method, prior, p), grp in cells.groupby(["method", "prior", "p"], sort=False):
        logger.info(f"{scenario.kind.value}/{scenario.noise.value} k={k} {method}-{prior} p={p:g}: "
                    + ", ".join(f"{m}={grp[m].mean():.4f}" for m in METRIC_NAMES))
    return metrics_table(cells, methods, priors, levels), cells


def metrics_table(cells: pd.DataFrame, methods, priors, levels) -> pd.DataFrame:
    means = cells.groupby(["method", "prior", "p"])[list(METRIC_NAMES)].mean()
    records = []
    for method, prior in product(methods, priors):
        prior = Prior(prior)
        rec = {"method": f"{method.upper()}-{PRIOR_LABELS[prior]}"}
        for metric, p in product(METRIC_NAMES, levels):
            rec[f"{metric}_{p:g}"] = float(means.loc[(method, prior.value, p), metric])
        records.append(rec)
    return pd.DataFrame(records)
