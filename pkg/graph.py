"""Graphs and graph difference operators.

Vertices are 0-based inside the library; edge-list files use 1-based indices.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from errors import InvalidArgumentError, ValidationError

logger = logging.getLogger(__name__)


# ================== TYPES ==================

@dataclass(frozen=True, eq=False)
class Graph:
    n_vertices: int
    edges: tuple
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.n_vertices < 1:
            raise InvalidArgumentError(f"graph needs at least one vertex, got {self.n_vertices}")

        pairs = [(int(min(i, j)), int(max(i, j))) for i, j in self.edges]
        weights = None if self.weights is None else [float(w) for w in self.weights]
        if weights is not None and len(weights) != len(pairs):
            raise ValidationError(f"{len(weights)} weights for {len(pairs)} edges")

        order = sorted(range(len(pairs)), key=lambda e: pairs[e])
        pairs = [pairs[e] for e in order]
        for e, (i, j) in enumerate(pairs):
            if i < 0 or j >= self.n_vertices:
                raise ValidationError(f"edge ({i}, {j}) outside vertex range 0..{self.n_vertices - 1}")
            if i == j:
                raise ValidationError(f"self-loop at vertex {i}")
            if e > 0 and pairs[e - 1] == (i, j):
                raise ValidationError(f"duplicate edge ({i}, {j})")

        if weights is not None:
            weights = [weights[e] for e in order]
            if not all(np.isfinite(w) and w > 0 for w in weights):
                raise ValidationError("edge weights must be finite and strictly positive")
            weights = tuple(weights)

        object.__setattr__(self, "edges", tuple(pairs))
        object.__setattr__(self, "weights", weights)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def is_weighted(self) -> bool:
        return self.weights is not None

    def edge_array(self) -> np.ndarray:
        return np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class DifferenceOperator:
    matrix: sp.csr_matrix
    order: int
    fixed_rows: tuple = ()

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    def penalized_mask(self) -> np.ndarray:
        """True for rows that carry a local shrinkage prior (not pinned)."""
        mask = np.ones(self.n_rows, dtype=bool)
        mask[list(self.fixed_rows)] = False
        return mask

    def triplets(self) -> pd.DataFrame:
        coo = self.matrix.tocoo()
        frame = pd.DataFrame({"row": coo.row, "col": coo.col, "value": coo.data})
        return frame.sort_values(["row", "col"], kind="mergesort").reset_index(drop=True)


# ================== CONSTRUCTORS ==================

def build_chain_graph(n: int) -> Graph:
    if n < 2:
        raise InvalidArgumentError(f"chain graph needs n >= 2, got {n}")
    return Graph(n, tuple((i, i + 1) for i in range(n - 1)))


def build_lattice_graph(rows: int, cols: int) -> Graph:
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"lattice dimensions must be positive, got {rows}x{cols}")
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    return Graph(rows * cols, tuple(edges))


def build_weighted_chain(locations: Sequence[float]) -> Graph:
    """Chain over strictly increasing locations, weighted by the gaps."""
    x = np.asarray(locations, dtype=float)
    if x.size < 2:
        raise InvalidArgumentError("weighted chain needs at least two locations")
    gaps = np.diff(x)
    if np.any(gaps <= 0):
        raise InvalidArgumentError("locations must be strictly increasing")
    return Graph(x.size, tuple((i, i + 1) for i in range(x.size - 1)), tuple(gaps))


def build_radius_graph(coords: np.ndarray, radius: float) -> Graph:
    """Connect every pair of points closer than ``radius``."""
    pts = np.asarray(coords, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise InvalidArgumentError("coordinates must be a non-empty (n, d) array")
    if radius <= 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    if len(pairs):
        dist = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        pairs = pairs[dist < radius]
    logger.debug(f"radius graph: {pts.shape[0]} vertices, {len(pairs)} edges at r={radius:g}")
    return Graph(pts.shape[0], tuple(map(tuple, pairs)))


# ================== OPERATORS ==================

def first_difference_operator(g: Graph) -> DifferenceOperator:
    e = g.edge_array()
    m = g.n_edges
    rows = np.repeat(np.arange(m), 2)
    cols = e.ravel()
    vals = np.tile([1.0, -1.0], m)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m, g.n_vertices))
    return DifferenceOperator(mat, 1)


def higher_difference_operator(g: Graph, k: int) -> DifferenceOperator:
    if k < 0:
        raise InvalidArgumentError(f"order k must be non-negative, got {k}")
    d1 = first_difference_operator(g).matrix
    mat = d1
    for j in range(1, k + 1):
        mat = (d1.T @ mat) if j % 2 == 1 else (d1 @ mat)
    mat = sp.csr_matrix(mat)
    mat.eliminate_zeros()
    mat.sort_indices()
    return DifferenceOperator(mat, k + 1)


def adjusted_second_difference(g: Graph) -> DifferenceOperator:
    if not g.is_weighted:
        raise InvalidArgumentError("adjusted operator needs edge weights")
    d1 = first_difference_operator(g).matrix
    inv_w = sp.diags(1.0 / np.asarray(g.weights))
    mat = sp.csr_matrix(d1.T @ inv_w @ d1)
    mat.eliminate_zeros()
    mat.sort_indices()
    return DifferenceOperator(mat, 2)


def difference_operator(g: Graph, k: int) -> DifferenceOperator:
    """Operator used for fitting: adjusted form for weighted graphs at k=1."""
    if g.is_weighted and k == 1:
        return adjusted_second_difference(g)
    if g.is_weighted:
        logger.warning(f"edge weights ignored for k={k}; adjusted operator only defined for k=1")
    return higher_difference_operator(g, k)


def regularize_operator(op: DifferenceOperator, n: int) -> DifferenceOperator:
    """Append unit rows so the operator has full column rank ``n``.

    The nullspace of every recursive and adjusted operator is spanned by the
    indicators of connected components of its coupling pattern; one unit row
    is added at the lowest-index vertex of each such component.
    """
    if op.n_cols != n:
        raise InvalidArgumentError(f"operator has {op.n_cols} columns, expected {n}")
    if op.fixed_rows:
        return op

    pattern = abs(op.matrix)
    coupling = sp.csr_matrix(pattern.T @ pattern)
    n_comp, labels = connected_components(coupling, directed=False)

    # zero-row operators (edgeless graphs) pin every vertex
    tol = 1e-10 * max(1.0, np.abs(op.matrix.data).max(initial=0.0))
    anchors = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        indicator = np.zeros(n)
        indicator[members] = 1.0
        if np.abs(op.matrix @ indicator).max(initial=0.0) <= tol:
            anchors.append(int(members.min()))
    if not anchors:
        return op

    anchors.sort()
    extra = sp.csr_matrix((np.ones(len(anchors)), (np.arange(len(anchors)), anchors)),
                          shape=(len(anchors), n))
    mat = sp.vstack([op.matrix, extra], format="csr")
    fixed = tuple(range(op.n_rows, op.n_rows + len(anchors)))
    logger.debug(f"regularized order-{op.order} operator: pinned rows {fixed} at vertices {anchors}")
    return DifferenceOperator(mat, op.order, fixed)


# ================== FILES ==================

def read_table(path) -> pd.DataFrame:
    """CSV with exact float round-trip; unreadable content is a ValidationError."""
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def float_column(frame: pd.DataFrame, i: int, path) -> np.ndarray:
    try:
        return frame.iloc[:, i].to_numpy(dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{path}: column {frame.columns[i]!r} must be numeric") from None


def read_edge_list(path, n_vertices: Optional[int] = None) -> Graph:
    """Read a ``u,v[,w]`` CSV with 1-based vertex indices."""
    frame = read_table(path)
    cols = [c.strip().lower() for c in frame.columns]
    if cols[:2] != ["u", "v"] or len(cols) > 3 or (len(cols) == 3 and cols[2] != "w"):
        raise ValidationError(f"{path}: expected header u,v[,w], got {','.join(frame.columns)}")
    if frame.empty:
        raise ValidationError(f"{path}: no edges")
    u = frame.iloc[:, 0].to_numpy()
    v = frame.iloc[:, 1].to_numpy()
    if not (np.issubdtype(u.dtype, np.integer) and np.issubdtype(v.dtype, np.integer)):
        raise ValidationError(f"{path}: vertex indices must be integers")
    if min(u.min(), v.min()) < 1:
        raise ValidationError(f"{path}: vertex indices are 1-based")
    n = int(max(u.max(), v.max())) if n_vertices is None else int(n_vertices)
    weights = tuple(float_column(frame, 2, path)) if len(cols) == 3 else None
    return Graph(n, tuple(zip(u - 1, v - 1)), weights)


def write_edge_list(g: Graph, path) -> None:
    e = g.edge_array() + 1
    frame = pd.DataFrame({"u": e[:, 0], "v": e[:, 1]})
    if g.is_weighted:
        frame["w"] = g.weights
    frame.to_csv(path, index=False, float_format="%.17g")
