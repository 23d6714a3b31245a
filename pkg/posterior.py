"""Posterior summaries, evaluation metrics and chain diagnostics."""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import InvalidArgumentError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

LOWER_Q = 0.025
UPPER_Q = 0.975
METRIC_NAMES = ("MSE", "MAD", "MCIW", "CP")
ROUNDING_ULPS = 16


@dataclass
class FitSummary:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    method: str
    metadata: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "node": np.arange(1, self.point.size + 1),
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
        })

    def write(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def summarize(samples, point: str = "mean") -> FitSummary:
    draws = np.asarray(samples.theta, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2:
        raise InvalidArgumentError("summary needs at least two retained draws")
    if point == "mean":
        center = draws.mean(axis=0)
    elif point == "median":
        center = np.median(draws, axis=0)
    else:
        raise ValueError(f"Unsupported point estimate: {point}")

    lower, upper = np.quantile(draws, [LOWER_Q, UPPER_Q], axis=0, method="linear")
    slack = ROUNDING_ULPS * np.spacing(np.maximum(np.abs(lower), np.abs(upper)))
    outside = np.flatnonzero((center < lower - slack) | (center > upper + slack))
    if outside.size:
        raise NumericalError(f"point estimate outside its 95% band at nodes {(outside + 1).tolist()}")
    # averaging rounding only
    center = np.clip(center, lower, upper)
    meta = dict(getattr(samples, "metadata", {}))
    meta["point"] = point
    return FitSummary(center, lower, upper, meta.get("method", "mcmc"), meta)


def summarize_vb(fit) -> FitSummary:
    meta = dict(fit.metadata)
    meta["point"] = "mean"
    return FitSummary(fit.state.mean.copy(), fit.lower, fit.upper, "vb", meta)


def metrics(summary: FitSummary, truth) -> dict:
    truth = np.asarray(truth, dtype=float)
    if truth.shape != summary.point.shape:
        raise ValidationError(f"truth has shape {truth.shape}, summary has {summary.point.shape}")
    err = summary.point - truth
    covered = (summary.lower <= truth) & (truth <= summary.upper)
    return {
        "MSE": float(np.mean(err ** 2)),
        "MAD": float(np.mean(np.abs(err))),
        "MCIW": float(np.mean(summary.upper - summary.lower)),
        "CP": float(np.mean(covered)),
    }


def write_metrics(values: dict, path) -> None:
    pd.DataFrame([values]).to_csv(path, index=False, float_format="%.17g")


# ================== DIAGNOSTICS ==================

def autocorrelation(trace, max_lag: int) -> np.ndarray:
    """Biased sample ACF for lags 0..max_lag."""
    x = np.asarray(trace, dtype=float)
    if max_lag < 0 or x.size <= max_lag:
        raise InvalidArgumentError(f"trace of length {x.size} too short for max_lag={max_lag}")
    x = x - x.mean()
    denom = float(np.dot(x, x))
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if denom == 0.0:
        return out
    n = x.size
    for lag in range(1, max_lag + 1):
        out[lag] = np.dot(x[:n - lag], x[lag:]) / denom
    return out


def trace_acf_frame(samples, max_lag: int = 50, top: int = 5) -> pd.DataFrame:
    """ACF table for sigma2, tau2 and the highest-variance theta coordinates."""
    rows = slice(None) if samples.chain is None else samples.chain == 0
    theta, sigma2, tau2 = samples.theta[rows], samples.sigma2[rows], samples.tau2[rows]
    max_lag = min(max_lag, theta.shape[0] - 1)
    columns = {"lag": np.arange(max_lag + 1)}
    columns["sigma2"] = autocorrelation(sigma2, max_lag)
    columns["tau2"] = autocorrelation(tau2, max_lag)
    var = theta.var(axis=0)
    picked = np.argsort(-var, kind="stable")[:top]
    for i in sorted(picked):
        columns[f"theta_{i + 1}"] = autocorrelation(theta[:, i], max_lag)
    return pd.DataFrame(columns)
