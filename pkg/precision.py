"""Assembly and factorization of the Gaussian precision matrices shared by the
Gibbs and variational engines:

    A = D^T diag(row_scale) D + diag(node_weight)

The sparsity pattern of A is fixed by the operator, so the pattern and the
symbolic (fill-reducing) analysis are computed once and reused.
"""

import logging

import numpy as np
import scipy.sparse as sp
from scipy import linalg

from errors import FactorizationError

logger = logging.getLogger(__name__)

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, analyze
    CHOLMOD_AVAILABLE = True
except ImportError:
    CHOLMOD_AVAILABLE = False


# ================== ASSEMBLY ==================

class PenaltyAssembler:
    def __init__(self, operator: sp.csr_matrix):
        D = sp.csr_matrix(operator)
        m, n = D.shape
        self.n = n
        self.m = m

        owner, first, second, value = [], [], [], []
        for r in range(m):
            cols = D.indices[D.indptr[r]:D.indptr[r + 1]]
            vals = D.data[D.indptr[r]:D.indptr[r + 1]]
            c1, c2 = np.meshgrid(cols, cols, indexing="ij")
            v1, v2 = np.meshgrid(vals, vals, indexing="ij")
            owner.append(np.full(c1.size, r))
            first.append(c1.ravel())
            second.append(c2.ravel())
            value.append((v1 * v2).ravel())

        owner = np.concatenate(owner) if owner else np.zeros(0, dtype=int)
        first = np.concatenate(first) if first else np.zeros(0, dtype=int)
        second = np.concatenate(second) if second else np.zeros(0, dtype=int)
        self._pen_value = np.concatenate(value) if value else np.zeros(0)
        self._pen_owner = owner

        diag = np.arange(n)
        # column-major keys give CSC order directly
        keys = np.concatenate([second * n + first, diag * n + diag])
        unique, inverse = np.unique(keys, return_inverse=True)
        self._pen_slot = inverse[:owner.size]
        self._diag_slot = inverse[owner.size:]
        self._nnz = unique.size
        self._indices = (unique % n).astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(unique // n, minlength=n))]).astype(np.int32)

    def assemble(self, row_scale, node_weight) -> sp.csc_matrix:
        data = np.bincount(self._pen_slot, weights=self._pen_value * np.asarray(row_scale)[self._pen_owner],
                           minlength=self._nnz)
        data += np.bincount(self._diag_slot, weights=np.asarray(node_weight, dtype=float), minlength=self._nnz)
        return sp.csc_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.n, self.n))

    def pattern(self) -> sp.csc_matrix:
        return self.assemble(np.ones(self.m), np.ones(self.n))


# ================== FACTORIZATION ==================

class PrecisionFactor:
    """Cholesky factor of an SPD precision with a fixed sparsity pattern."""

    def __init__(self, pattern: sp.csc_matrix, backend: str = "auto"):
        if backend == "auto":
            backend = "cholmod" if CHOLMOD_AVAILABLE else "dense"
        if backend == "cholmod" and not CHOLMOD_AVAILABLE:
            raise ValueError("Unsupported factorization backend: scikit-sparse is not installed")
        if backend not in ("cholmod", "dense"):
            raise ValueError(f"Unsupported factorization backend: {backend}")
        self.backend = backend
        self.n = pattern.shape[0]
        self._symbolic = analyze(pattern) if backend == "cholmod" else None
        self._factor = None
        logger.debug(f"precision factor backend={backend}, n={self.n}, nnz={pattern.nnz}")

    def factorize(self, A: sp.csc_matrix) -> "PrecisionFactor":
        if self.backend == "cholmod":
            try:
                self._factor = self._symbolic.cholesky(A)
            except CholmodNotPositiveDefiniteError as exc:
                raise FactorizationError(f"precision not positive definite: {exc}", A.diagonal()) from exc
        else:
            try:
                self._factor = linalg.cholesky(A.toarray(), lower=True, check_finite=True)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise FactorizationError(f"precision not positive definite: {exc}", A.diagonal()) from exc
        return self

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.backend == "cholmod":
            return self._factor.solve_A(b)
        return linalg.cho_solve((self._factor, True), b)

    def whiten(self, eps: np.ndarray) -> np.ndarray:
        """Map standard normals to N(0, A^-1)."""
        if self.backend == "cholmod":
            return self._factor.apply_Pt(self._factor.solve_Lt(eps, use_LDLt_decomposition=False))
        return linalg.solve_triangular(self._factor, eps, lower=True, trans="T")

    def inverse_quadratic_diag(self, M) -> np.ndarray:
        """diag(M A^-1 M^T) for the rows of M, batched over all rows."""
        rhs = M.T.toarray() if sp.issparse(M) else np.asarray(M, dtype=float).T
        if self.backend == "cholmod":
            half = self._factor.solve_L(self._factor.apply_P(rhs), use_LDLt_decomposition=False)
        else:
            half = linalg.solve_triangular(self._factor, rhs, lower=True)
        return np.einsum("ij,ij->j", half, half)
