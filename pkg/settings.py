import logging
import os
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import toml
from dotenv import load_dotenv

from dists import DEFAULT_LOWER, DEFAULT_UPPER, TruncationBounds
from errors import ConfigError
from graph import (
    Graph,
    build_chain_graph,
    build_lattice_graph,
    build_radius_graph,
    build_weighted_chain,
    float_column,
    read_edge_list,
    read_table,
)
from model import DEFAULT_A_SIGMA, DEFAULT_B_SIGMA, ModelSpec, read_located_observations, read_observations

logger = logging.getLogger(__name__)

# ================== ENVIRONMENT ==================

load_dotenv()

DEFAULT_SEED = int(os.getenv("BQTF_SEED", "2023"))
DEFAULT_WORKERS = int(os.getenv("BQTF_WORKERS", str(os.cpu_count() or 1)))
LOG_LEVEL = os.getenv("BQTF_LOG_LEVEL", "INFO").upper()
DEFAULT_OUT = os.getenv("BQTF_OUT", "runs")

PROTOCOLS = {
    # name: (iterations, burn-in, thin)
    "simulation": (5000, 0, 10),
    "analysis": (25000, 5000, 1),
}

GRAPH_SOURCES = ("edges", "chain", "lattice", "coords", "coords2d")


# ================== CONFIG FILE ==================

def load_config_file(path) -> dict:
    """Flat TOML whose keys mirror the command-line flags."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = toml.load(path)
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: nested table [{key}] not supported, keys must be flat")
        out[key.replace("-", "_")] = value
    return out


def parse_lattice(text: str):
    try:
        rows, cols = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"lattice must look like ROWSxCOLS, got {text!r}") from None
    return rows, cols


def _require_file(path) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"file not found: {path}")
    return path


# ================== RUN CONFIG ==================

@dataclass
class RunConfig:
    data: Optional[str] = None
    edges: Optional[str] = None
    chain: Optional[int] = None
    lattice: Optional[str] = None
    coords: Optional[str] = None
    coords2d: Optional[str] = None
    radius: Optional[float] = None
    truth: Optional[str] = None
    truth_column: str = "quantile"
    p: float = 0.5
    k: int = 0
    prior: str = "horseshoe"
    method: str = "mcmc"
    protocol: str = "simulation"
    iters: Optional[int] = None
    burnin: Optional[int] = None
    thin: Optional[int] = None
    max_iter: int = 500
    tol: float = 1e-6
    seed: int = DEFAULT_SEED
    chains: int = 1
    acf_lag: int = 50
    point: str = "mean"
    a_sigma: float = DEFAULT_A_SIGMA
    b_sigma: float = DEFAULT_B_SIGMA
    lower: float = DEFAULT_LOWER
    upper: float = DEFAULT_UPPER
    backend: str = "auto"
    out: str = DEFAULT_OUT

    @classmethod
    def from_options(cls, options: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in options.items() if k in names and v is not None})
        cfg.resolve_protocol()
        return cfg

    def resolve_protocol(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"Unsupported protocol: {self.protocol}")
        iters, burnin, thin = PROTOCOLS[self.protocol]
        self.iters = iters if self.iters is None else self.iters
        self.burnin = burnin if self.burnin is None else self.burnin
        self.thin = thin if self.thin is None else self.thin

    def graph_source(self, need_data: bool = True) -> str:
        chosen = [s for s in GRAPH_SOURCES if getattr(self, s) is not None]
        if len(chosen) != 1:
            names = ", ".join("--" + s for s in GRAPH_SOURCES)
            raise ConfigError(f"exactly one graph source required among {names}; got {len(chosen)}")
        source = chosen[0]
        if source == "coords2d" and self.radius is None:
            raise ConfigError("--coords2d needs --radius")
        if self.radius is not None and source != "coords2d":
            raise ConfigError("--radius only applies with --coords2d")
        if need_data and source != "coords" and self.data is None:
            raise ConfigError("--data is required unless --coords supplies the observations")
        if source == "coords" and self.data is not None:
            raise ConfigError("--coords already carries the observations; drop --data")
        return source

    def model_spec(self) -> ModelSpec:
        if not (0.0 < self.p < 1.0):
            raise ConfigError(f"--p must lie in (0, 1), got {self.p}")
        if self.k < 0:
            raise ConfigError(f"--k must be non-negative, got {self.k}")
        return ModelSpec(
            p=self.p,
            k=self.k,
            prior=self.prior,
            a_sigma=self.a_sigma,
            b_sigma=self.b_sigma,
            bounds=TruncationBounds(self.lower, self.upper),
        )

    def load_graph(self) -> Graph:
        source = self.graph_source(need_data=False)
        if source == "edges":
            return read_edge_list(_require_file(self.edges))
        if source == "chain":
            return build_chain_graph(int(self.chain))
        if source == "lattice":
            return build_lattice_graph(*parse_lattice(self.lattice))
        if source == "coords":
            locations, _ = read_located_observations(_require_file(self.coords))
            return build_weighted_chain(locations)
        frame = read_table(_require_file(self.coords2d))
        if [c.strip().lower() for c in frame.columns] != ["x", "y"]:
            raise ConfigError(f"{self.coords2d}: expected header x,y")
        coords = np.column_stack([float_column(frame, 0, self.coords2d), float_column(frame, 1, self.coords2d)])
        return build_radius_graph(coords, float(self.radius))

    def load_inputs(self):
        """(graph, dataset) for the configured run."""
        source = self.graph_source(need_data=True)
        if source == "coords":
            locations, data = read_located_observations(_require_file(self.coords))
            return build_weighted_chain(locations), data
        graph = self.load_graph()
        data = read_observations(_require_file(self.data), n_nodes=graph.n_vertices)
        return graph, data

    def load_truth(self, n: int) -> Optional[np.ndarray]:
        if self.truth is None:
            return None
        frame = read_table(_require_file(self.truth))
        if self.truth_column not in frame.columns:
            raise ConfigError(f"{self.truth}: no column {self.truth_column!r}")
        values = float_column(frame, frame.columns.get_loc(self.truth_column), self.truth)
        if values.size != n:
            raise ConfigError(f"{self.truth}: {values.size} truth values for {n} nodes")
        return values

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
