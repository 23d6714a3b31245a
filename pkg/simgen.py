"""Seeded benchmark scenarios: 1-D piecewise-constant and varying-smoothness
signals with heteroscedastic noise, and a contaminated 2-D lattice.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy.optimize import bisect
from scipy.stats import norm

from errors import InvalidArgumentError
from graph import Graph, build_chain_graph, build_lattice_graph, write_edge_list
from model import Dataset, write_observations

logger = logging.getLogger(__name__)

PC_LEVELS = (2.5, 1.0, 3.5, 1.5, 1.5)
MIXED_SCALE = 0.5
MIXED_SHIFT = 0.2
CONTAMINATION = 0.05
LATTICE_LEVEL = 5.0
LATTICE_BLOCK_FRACTION = 0.4
BISECT_XTOL = 1e-10


class Kind(str, Enum):
    PC = "pc"
    VS = "vs"
    LATTICE = "lattice"


class Noise(str, Enum):
    GAUSS = "gauss"
    BETA = "beta"
    MIXED = "mixed"
    CONTAMINATED = "contaminated"


# ================== SIGNALS ==================

def pc_signal(n: int = 100) -> np.ndarray:
    """Four blocks at 20/20/20/40 percent of the chain."""
    if n < 1:
        raise InvalidArgumentError(f"n must be positive, got {n}")
    i = np.arange(1, n + 1)
    block = (5 * i + n - 1) // n
    return np.asarray(PC_LEVELS)[block - 1]


def vs_signal(n: int = 100) -> np.ndarray:
    if n < 1:
        raise InvalidArgumentError(f"n must be positive, got {n}")
    u = 4.0 * np.arange(1, n + 1) / n - 2.0
    return 2.0 + np.sin(u) + 2.0 * np.exp(-30.0 * u * u)


def lattice_signal(rows: int = 10, cols: int = 10) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"lattice dimensions must be positive, got {rows}x{cols}")
    signal = np.zeros((rows, cols))
    h = int(round(LATTICE_BLOCK_FRACTION * rows))
    w = int(round(LATTICE_BLOCK_FRACTION * cols))
    r0, c0 = (rows - h) // 2, (cols - w) // 2
    signal[r0:r0 + h, c0:c0 + w] = LATTICE_LEVEL
    return signal.ravel()


# ================== NOISE ==================

def gauss_sd(x):
    return (1.0 + np.asarray(x, dtype=float) ** 2) / 4.0


def beta_shape(x):
    return 11.0 - 10.0 * np.asarray(x, dtype=float)


def mixed_sd(sd_reading: bool = False) -> float:
    return MIXED_SCALE if sd_reading else np.sqrt(MIXED_SCALE)


def noise_draw(kind, x, rng, mu: float = 0.0, sd_reading: bool = False):
    x = np.asarray(x, dtype=float)
    kind = Noise(kind)
    if kind == Noise.GAUSS:
        return rng.normal(0.0, gauss_sd(x))
    if kind == Noise.BETA:
        return rng.beta(1.0, beta_shape(x))
    if kind == Noise.MIXED:
        left = rng.random(x.shape) < x
        center = np.where(left, -MIXED_SHIFT, MIXED_SHIFT)
        return rng.normal(center, mixed_sd(sd_reading))
    if kind == Noise.CONTAMINATED:
        hit = rng.random(x.shape) < CONTAMINATION
        return rng.normal(np.where(hit, mu, 0.0), 1.0)
    raise ValueError(f"Unsupported noise: {kind}")


def _mixture_quantile(cdf, p, lo, hi) -> float:
    return bisect(lambda q: cdf(q) - p, lo, hi, xtol=BISECT_XTOL)


def true_quantile(kind, x, p: float, mu: float = 0.0, sd_reading: bool = False):
    """p-quantile of the noise at design point x."""
    if not (0.0 < p < 1.0):
        raise InvalidArgumentError(f"quantile level must lie in (0, 1), got {p}")
    kind = Noise(kind)
    x = np.asarray(x, dtype=float)
    if kind == Noise.GAUSS:
        out = gauss_sd(x) * norm.ppf(p)
    elif kind == Noise.BETA:
        out = 1.0 - (1.0 - p) ** (1.0 / beta_shape(x))
    elif kind == Noise.MIXED:
        s = mixed_sd(sd_reading)
        span = MIXED_SHIFT + 20.0 * s
        out = np.array([
            _mixture_quantile(lambda q, w=w: w * norm.cdf(q, -MIXED_SHIFT, s) + (1 - w) * norm.cdf(q, MIXED_SHIFT, s),
                              p, -span, span)
            for w in np.atleast_1d(x)
        ]).reshape(x.shape)
    elif kind == Noise.CONTAMINATED:
        span = abs(mu) + 20.0
        q = _mixture_quantile(
            lambda q: (1 - CONTAMINATION) * norm.cdf(q) + CONTAMINATION * norm.cdf(q, mu, 1.0), p, -span, span)
        out = np.full(x.shape, q)
    else:
        raise ValueError(f"Unsupported noise: {kind}")
    return float(out) if out.ndim == 0 else out


# ================== SCENARIOS ==================

@dataclass(frozen=True)
class Scenario:
    kind: Kind
    noise: Noise
    n: int = 100
    rows: int = 10
    cols: int = 10
    mu: float = 10.0
    sd_reading: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", Kind(self.kind))
            object.__setattr__(self, "noise", Noise(self.noise))
        except ValueError as exc:
            raise InvalidArgumentError(f"Unsupported scenario: {exc}") from None
        lattice = self.kind == Kind.LATTICE
        if lattice != (self.noise == Noise.CONTAMINATED):
            raise InvalidArgumentError(
                f"scenario {self.kind.value} cannot use {self.noise.value} noise "
                "(lattice pairs with contaminated noise only)")

    @property
    def n_nodes(self) -> int:
        return self.rows * self.cols if self.kind == Kind.LATTICE else self.n

    def design(self) -> np.ndarray:
        if self.kind == Kind.LATTICE:
            return np.ones(self.n_nodes)
        return np.arange(1, self.n + 1) / self.n

    def signal(self) -> np.ndarray:
        if self.kind == Kind.PC:
            return pc_signal(self.n)
        if self.kind == Kind.VS:
            return vs_signal(self.n)
        return lattice_signal(self.rows, self.cols)

    def graph(self) -> Graph:
        if self.kind == Kind.LATTICE:
            return build_lattice_graph(self.rows, self.cols)
        return build_chain_graph(self.n)

    def truth(self, p: float) -> np.ndarray:
        return self.signal() + true_quantile(self.noise, self.design(), p, self.mu, self.sd_reading)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        out["noise"] = self.noise.value
        return out


def lattice_scenario(rows: int = 10, cols: int = 10, mu: float = 10.0, rng=None):
    """(signal, observations) for the contaminated lattice."""
    rng = np.random.default_rng() if rng is None else rng
    signal = lattice_signal(rows, cols)
    y = signal + noise_draw(Noise.CONTAMINATED, np.ones(signal.size), rng, mu=mu)
    return signal, y


def replication_rng(seed: int, rep: int):
    return np.random.default_rng([seed, rep])


def generate(scenario: Scenario, seed: int, rep: int = 0) -> Dataset:
    """One observation per node for replication ``rep``."""
    rng = replication_rng(seed, rep)
    if scenario.kind == Kind.LATTICE:
        _, y = lattice_scenario(scenario.rows, scenario.cols, scenario.mu, rng)
    else:
        y = scenario.signal() + noise_draw(scenario.noise, scenario.design(), rng,
                                           sd_reading=scenario.sd_reading)
    return Dataset.one_per_node(y)


# ================== FILES ==================

def write_replications(scenario: Scenario, seed: int, reps: int, out_dir, p: Optional[float] = None) -> dict:
    if reps < 1:
        raise InvalidArgumentError(f"need at least one replication, got {reps}")
    os.makedirs(out_dir, exist_ok=True)
    write_edge_list(scenario.graph(), os.path.join(out_dir, "edges.csv"))

    truth = {"node": np.arange(1, scenario.n_nodes + 1), "signal": scenario.signal()}
    if p is not None:
        truth["quantile"] = scenario.truth(p)
    pd.DataFrame(truth).to_csv(os.path.join(out_dir, "truth.csv"), index=False, float_format="%.17g")

    files = []
    for r in range(reps):
        name = f"data_{r + 1:03d}.csv"
        write_observations(generate(scenario, seed, r), os.path.join(out_dir, name))
        files.append(name)

    manifest = {
        "scenario": scenario.to_dict(),
        "seed": seed,
        "replications": reps,
        "p": p,
        "edges": "edges.csv",
        "truth": "truth.csv",
        "datasets": files,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"wrote {reps} replications of {scenario.kind.value}/{scenario.noise.value} to {out_dir}")
    return manifest
