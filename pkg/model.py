"""Model specification, observation containers and the checked model instance."""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from dists import TruncationBounds
from errors import InvalidArgumentError, ValidationError
from graph import DifferenceOperator, Graph, difference_operator, float_column, read_table, regularize_operator
from precision import PenaltyAssembler, PrecisionFactor

logger = logging.getLogger(__name__)

DEFAULT_A_SIGMA = 0.1
DEFAULT_B_SIGMA = 0.1


class Prior(str, Enum):
    NORMAL = "normal"
    LAPLACE = "laplace"
    HORSESHOE = "horseshoe"


PRIOR_LABELS = {Prior.HORSESHOE: "HS", Prior.LAPLACE: "Lap", Prior.NORMAL: "Norm"}


def derive_augmentation_constants(p: float):
    """(psi, t2) of the normal variance-mean mixture for AL(p)."""
    if not (0.0 < p < 1.0):
        raise InvalidArgumentError(f"quantile level must lie in (0, 1), got {p}")
    q = p * (1.0 - p)
    return (1.0 - 2.0 * p) / q, 2.0 / q


# ================== SPEC ==================

@dataclass(frozen=True)
class ModelSpec:
    p: float
    k: int = 0
    prior: Prior = Prior.HORSESHOE
    a_sigma: float = DEFAULT_A_SIGMA
    b_sigma: float = DEFAULT_B_SIGMA
    bounds: TruncationBounds = field(default_factory=TruncationBounds)

    def __post_init__(self):
        derive_augmentation_constants(self.p)
        if int(self.k) != self.k or self.k < 0:
            raise InvalidArgumentError(f"order k must be a non-negative integer, got {self.k}")
        try:
            object.__setattr__(self, "prior", Prior(self.prior))
        except ValueError:
            raise InvalidArgumentError(f"Unsupported prior: {self.prior}") from None

    @property
    def psi(self) -> float:
        return derive_augmentation_constants(self.p)[0]

    @property
    def t2(self) -> float:
        return derive_augmentation_constants(self.p)[1]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["prior"] = self.prior.value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelSpec":
        raw = dict(raw)
        bounds = raw.pop("bounds", None)
        if bounds is not None:
            raw["bounds"] = TruncationBounds(**bounds)
        return cls(**raw)


# ================== DATA ==================

@dataclass(frozen=True, eq=False)
class Dataset:
    n_nodes: int
    node_index: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.node_index, dtype=np.int64)
        y = np.asarray(self.values, dtype=float)
        if idx.shape != y.shape or idx.ndim != 1:
            raise ValidationError("node indices and values must be matching 1-D arrays")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_nodes):
            raise ValidationError(f"observation node outside 0..{self.n_nodes - 1}")
        if not np.all(np.isfinite(y)):
            raise ValidationError("observations must be finite")
        order = np.argsort(idx, kind="stable")
        object.__setattr__(self, "node_index", idx[order])
        object.__setattr__(self, "values", y[order])

    @classmethod
    def from_lists(cls, observations: Sequence[Sequence[float]]) -> "Dataset":
        idx = [i for i, obs in enumerate(observations) for _ in obs]
        vals = [v for obs in observations for v in obs]
        return cls(len(observations), np.array(idx, dtype=np.int64), np.array(vals, dtype=float))

    @classmethod
    def one_per_node(cls, y) -> "Dataset":
        y = np.asarray(y, dtype=float)
        return cls(y.size, np.arange(y.size), y)

    @property
    def total(self) -> int:
        return int(self.values.size)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.node_index, minlength=self.n_nodes)

    def node_sums(self, x) -> np.ndarray:
        return np.bincount(self.node_index, weights=np.asarray(x, dtype=float), minlength=self.n_nodes)

    def observations(self, i: int) -> np.ndarray:
        return self.values[self.node_index == i]

    def negated(self) -> "Dataset":
        return Dataset(self.n_nodes, self.node_index.copy(), -self.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"node": self.node_index + 1, "value": self.values})


@dataclass
class PriorState:
    """Local-scale block. Normal keeps w2 at one; pinned rows hold the upper bound."""
    w2: np.ndarray
    gamma2: Optional[float] = None
    nu: Optional[float] = None
    nu_local: Optional[np.ndarray] = None

    def copy(self) -> "PriorState":
        return PriorState(self.w2.copy(), self.gamma2, self.nu,
                          None if self.nu_local is None else self.nu_local.copy())


# ================== CHECKED MODEL ==================

@dataclass(eq=False)
class FittedModel:
    spec: ModelSpec
    graph: Graph
    data: Dataset
    operator: DifferenceOperator
    assembler: PenaltyAssembler
    factor: PrecisionFactor
    initial_theta: np.ndarray
    initial_prior: PriorState

    @property
    def n(self) -> int:
        return self.graph.n_vertices

    @property
    def penalized(self) -> np.ndarray:
        return self.operator.penalized_mask()

    @property
    def m_penalized(self) -> int:
        return int(self.penalized.sum())


def initial_theta(spec: ModelSpec, data: Dataset) -> np.ndarray:
    fallback = float(np.median(data.values))
    theta = np.full(data.n_nodes, fallback)
    for i in np.unique(data.node_index):
        theta[i] = np.quantile(data.observations(i), spec.p)
    return theta


def initial_prior_state(spec: ModelSpec, operator: DifferenceOperator) -> PriorState:
    w2 = np.ones(operator.n_rows)
    w2[list(operator.fixed_rows)] = spec.bounds.upper
    if not (spec.bounds.lower < 1.0 < spec.bounds.upper):
        # keep every free scale strictly inside the bounds
        w2[operator.penalized_mask()] = np.sqrt(spec.bounds.lower * spec.bounds.upper)
    if spec.prior == Prior.LAPLACE:
        return PriorState(w2, gamma2=1.0, nu=1.0)
    if spec.prior == Prior.HORSESHOE:
        return PriorState(w2, nu_local=np.ones(operator.n_rows))
    return PriorState(w2)


def validate_spec(spec: ModelSpec, g: Graph, d: Dataset, backend: str = "auto") -> FittedModel:
    if d.n_nodes != g.n_vertices:
        raise ValidationError(f"dataset has {d.n_nodes} nodes but graph has {g.n_vertices} vertices")
    if d.total == 0:
        raise ValidationError("dataset has no observations")
    if not (spec.a_sigma > 0 and spec.b_sigma > 0):
        raise ValidationError(f"a_sigma and b_sigma must be positive, got {spec.a_sigma}, {spec.b_sigma}")

    op = regularize_operator(difference_operator(g, spec.k), g.n_vertices)
    assembler = PenaltyAssembler(op.matrix)
    factor = PrecisionFactor(assembler.pattern(), backend=backend)
    logger.debug(f"model: n={g.n_vertices}, rows={op.n_rows}, pinned={len(op.fixed_rows)}, N={d.total}")
    return FittedModel(spec, g, d, op, assembler, factor,
                       initial_theta(spec, d), initial_prior_state(spec, op))


# ================== FILES ==================

def read_observations(path, n_nodes: Optional[int] = None) -> Dataset:
    """Read a ``node,value`` CSV with 1-based node indices."""
    frame = read_table(path)
    cols = [c.strip().lower() for c in frame.columns]
    if cols != ["node", "value"]:
        raise ValidationError(f"{path}: expected header node,value, got {','.join(frame.columns)}")
    node = frame.iloc[:, 0].to_numpy()
    if frame.empty:
        raise ValidationError(f"{path}: no observations")
    if not np.issubdtype(node.dtype, np.integer) or node.min() < 1:
        raise ValidationError(f"{path}: node indices must be 1-based integers")
    n = int(node.max()) if n_nodes is None else int(n_nodes)
    return Dataset(n, node - 1, float_column(frame, 1, path))


def observations_from_locations(x, values):
    """Group (location, value) rows onto the sorted distinct locations."""
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    locations, index = np.unique(x, return_inverse=True)
    return locations, Dataset(locations.size, index, values)


def read_located_observations(path):
    frame = read_table(path)
    cols = [c.strip().lower() for c in frame.columns]
    if cols != ["x", "value"]:
        raise ValidationError(f"{path}: expected header x,value, got {','.join(frame.columns)}")
    return observations_from_locations(float_column(frame, 0, path), float_column(frame, 1, path))


def write_observations(d: Dataset, path) -> None:
    d.to_frame().to_csv(path, index=False, float_format="%.17g")
