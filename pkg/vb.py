"""Mean-field variational Bayes for quantile trend filtering.

Coordinate ascent over q(theta) q(z) q(sigma2) q(tau2) q(xi) q(local) in the
same order as the Gibbs sweep. Deterministic: no random numbers are drawn.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from dists import (
    A_FLOOR,
    gig_moment_arrays,
    truncated_gig_moment_arrays,
    truncated_ig_expectations,
)
from errors import InvalidArgumentError, NumericalError
from model import FittedModel, ModelSpec, Prior, validate_spec

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6
Z_975 = 1.959963984540054


@dataclass
class VariationalState:
    # q(theta): mean B^-1 C, covariance E[sigma2] B^-1
    mean: np.ndarray
    var: np.ndarray
    e_theta2: np.ndarray
    e_eta2: np.ndarray
    # q(z) per observation
    a_z: np.ndarray
    b_z: np.ndarray
    e_z: np.ndarray
    e_inv_z: np.ndarray
    # q(sigma2)
    a_sigma2: float
    e_sigma2: float
    e_inv_sigma2: float
    # q(tau2), q(xi)
    a_tau2: float
    e_inv_tau2: float
    e_inv_xi: float
    # local scales, pinned rows hold 1 / upper bound
    e_inv_w2: np.ndarray
    e_w2: Optional[np.ndarray] = None
    e_gamma2: Optional[float] = None
    e_inv_gamma2: Optional[float] = None
    e_inv_nu: Optional[float] = None
    e_inv_nu_local: Optional[np.ndarray] = None

    def check(self) -> None:
        for name in ("e_z", "e_inv_z", "e_inv_w2", "var"):
            vals = getattr(self, name)
            assert np.all(np.isfinite(vals)) and np.all(vals > 0), f"{name} left the positive reals"
        assert np.all(self.e_eta2 >= 0), "negative second moment"
        assert self.e_sigma2 > 0 and self.e_inv_sigma2 > 0 and self.e_inv_tau2 > 0


@dataclass
class ConvergenceReport:
    converged: bool
    n_iter: int
    final_change: float
    history: List[float] = field(default_factory=list)


@dataclass
class VBFit:
    state: VariationalState
    report: ConvergenceReport
    metadata: dict = field(default_factory=dict)

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.state.var)

    @property
    def lower(self) -> np.ndarray:
        return self.state.mean - Z_975 * self.sd

    @property
    def upper(self) -> np.ndarray:
        return self.state.mean + Z_975 * self.sd

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "node": np.arange(1, self.state.mean.size + 1),
            "mean": self.state.mean,
            "sd": self.sd,
            "lower": self.lower,
            "upper": self.upper,
            "e_theta2": self.state.e_theta2,
        })


def initial_variational_state(model: FittedModel) -> VariationalState:
    n, N, m = model.n, model.data.total, model.operator.n_rows
    prior = model.initial_prior
    theta = model.initial_theta.copy()
    state = VariationalState(
        mean=theta,
        var=np.ones(n),
        e_theta2=theta * theta + 1.0,
        e_eta2=np.ones(m),
        a_z=np.ones(N),
        b_z=np.ones(N),
        e_z=np.ones(N),
        e_inv_z=np.ones(N),
        a_sigma2=1.0,
        e_sigma2=1.0,
        e_inv_sigma2=1.0,
        a_tau2=1.0,
        e_inv_tau2=1.0,
        e_inv_xi=1.0,
        e_inv_w2=1.0 / prior.w2,
    )
    if model.spec.prior == Prior.LAPLACE:
        state.e_inv_xi = 0.0
        state.e_w2 = prior.w2.copy()
        state.e_gamma2 = prior.gamma2
        state.e_inv_gamma2 = 1.0 / prior.gamma2
        state.e_inv_nu = 1.0 / prior.nu
    elif model.spec.prior == Prior.HORSESHOE:
        state.e_inv_nu_local = 1.0 / prior.nu_local
    return state


def _sigma2_shape2(model: FittedModel) -> float:
    # twice the shape of q(sigma2)
    return model.n + 3 * model.data.total + 2.0 * model.spec.a_sigma


# ================== UPDATES ==================

def vb_update_theta(state: VariationalState, model: FittedModel) -> VariationalState:
    spec, data = model.spec, model.data
    B = model.assembler.assemble(state.e_inv_tau2 * state.e_inv_w2, data.node_sums(state.e_inv_z) / spec.t2)
    C = (data.node_sums(data.values * state.e_inv_z) - spec.psi * data.counts) / spec.t2

    factor = model.factor.factorize(B)
    state.mean = factor.solve(C)
    state.var = state.e_sigma2 * factor.inverse_quadratic_diag(sp.identity(model.n, format="csr"))
    state.e_theta2 = state.mean ** 2 + state.var

    D = model.operator.matrix
    eta = D @ state.mean
    state.e_eta2 = eta ** 2 + state.e_sigma2 * factor.inverse_quadratic_diag(D)
    return state


def vb_update_z(state: VariationalState, model: FittedModel) -> VariationalState:
    spec, data = model.spec, model.data
    y = data.values
    m = state.mean[data.node_index]
    sq = y * y - 2.0 * y * m + state.e_theta2[data.node_index]
    state.a_z = np.maximum(sq * state.e_inv_sigma2 / spec.t2, A_FLOOR)
    state.b_z = np.full(y.size, (spec.psi ** 2 / spec.t2 + 2.0) * state.e_inv_sigma2)
    state.e_z, state.e_inv_z = gig_moment_arrays(0.5, state.a_z, state.b_z)
    return state


def sigma2_rate(state: VariationalState, model: FittedModel) -> float:
    spec, data = model.spec, model.data
    y = data.values
    m = state.mean[data.node_index]
    e2 = state.e_theta2[data.node_index]
    obs = np.sum(state.e_inv_z * (y * y - 2.0 * y * m + e2)
                 - 2.0 * spec.psi * (y - m)
                 + spec.psi ** 2 * state.e_z) / (2.0 * spec.t2)
    penalty = 0.5 * state.e_inv_tau2 * np.sum(state.e_eta2 * state.e_inv_w2)
    rate = obs + penalty + np.sum(state.e_z) + spec.b_sigma
    if not (np.isfinite(rate) and rate > 0):
        raise NumericalError(f"q(sigma2) rate is not a positive finite number: {rate}")
    return float(rate)


def vb_update_sigma2(state: VariationalState, model: FittedModel) -> VariationalState:
    shape2 = _sigma2_shape2(model)
    state.a_sigma2 = sigma2_rate(state, model)
    state.e_inv_sigma2 = shape2 / (2.0 * state.a_sigma2)
    state.e_sigma2 = 2.0 * state.a_sigma2 / (shape2 - 2.0)
    return state


def vb_update_tau2_xi(state: VariationalState, model: FittedModel) -> VariationalState:
    if model.spec.prior == Prior.LAPLACE:
        state.e_inv_tau2 = 1.0
        state.e_inv_xi = 0.0
        return state
    state.a_tau2 = 0.5 * state.e_inv_sigma2 * float(np.sum(state.e_eta2 * state.e_inv_w2)) + state.e_inv_xi
    state.e_inv_tau2 = (model.n + 1) / (2.0 * state.a_tau2)
    state.e_inv_xi = 1.0 / (state.e_inv_tau2 + 1.0)
    return state


def vb_update_local(state: VariationalState, model: FittedModel) -> VariationalState:
    spec = model.spec
    pen = model.penalized
    if spec.prior == Prior.NORMAL:
        state.e_inv_w2[pen] = 1.0
        return state

    if not pen.any():
        return state

    if spec.prior == Prior.HORSESHOE:
        rate = state.e_inv_nu_local[pen] + 0.5 * state.e_inv_sigma2 * state.e_inv_tau2 * state.e_eta2[pen]
        state.e_inv_w2[pen] = truncated_ig_expectations(1.0, rate, spec.bounds)
        state.e_inv_nu_local[pen] = 1.0 / (state.e_inv_w2[pen] + 1.0)
        return state

    if spec.prior == Prior.LAPLACE:
        a = state.e_inv_sigma2 * state.e_eta2[pen]
        e_w2, e_inv_w2 = truncated_gig_moment_arrays(0.5, a, np.full(a.size, state.e_gamma2), spec.bounds)
        state.e_w2[pen] = e_w2
        state.e_inv_w2[pen] = e_inv_w2
        g, g_inv = gig_moment_arrays(model.m_penalized - 0.5, 2.0 * state.e_inv_nu, np.sum(e_w2))
        state.e_gamma2, state.e_inv_gamma2 = float(g), float(g_inv)
        state.e_inv_nu = 1.0 / (state.e_inv_gamma2 + 1.0)
        return state

    raise ValueError(f"Unsupported prior: {spec.prior}")


def vb_pass(state: VariationalState, model: FittedModel) -> VariationalState:
    state = vb_update_theta(state, model)
    state = vb_update_z(state, model)
    state = vb_update_sigma2(state, model)
    state = vb_update_tau2_xi(state, model)
    state = vb_update_local(state, model)
    state.check()
    return state


# ================== DRIVER ==================

def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.max(np.abs(new - old)) / max(np.max(np.abs(old)), 1e-12))


def fit_model(model: FittedModel, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> VBFit:
    if max_iter < 1 or not tol > 0:
        raise InvalidArgumentError(f"need max_iter >= 1 and tol > 0, got {max_iter}, {tol}")
    state = initial_variational_state(model)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        old = state.mean.copy()
        state = vb_pass(state, model)
        change = relative_change(state.mean, old)
        history.append(change)
        logger.debug(f"vb iter {it}: max relative change {change:.3e}")
        if change < tol:
            converged = True
            break

    report = ConvergenceReport(converged, it, history[-1], history)
    if converged:
        logger.info(f"vb converged after {it} iterations (change {report.final_change:.2e})")
    else:
        logger.warning(f"vb did not converge in {max_iter} iterations (change {report.final_change:.2e} >= {tol:g})")

    meta = {
        "method": "vb",
        "interval": "variational",
        "max_iter": max_iter,
        "tol": tol,
        "converged": converged,
        "n_iter": it,
        "final_change": report.final_change,
        "e_sigma2": state.e_sigma2,
        "e_inv_tau2": state.e_inv_tau2,
        "backend": model.factor.backend,
        "spec": model.spec.to_dict(),
    }
    return VBFit(state, report, meta)


def run_vb(spec: ModelSpec, graph, data, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
           backend: str = "auto") -> VBFit:
    model = validate_spec(spec, graph, data, backend=backend)
    return fit_model(model, max_iter, tol)


# ================== EXPORT ==================

def write_vb_state(fit: VBFit, path, meta_path=None, extra: Optional[dict] = None) -> None:
    fit.to_frame().to_csv(path, index=False, float_format="%.17g")
    if meta_path is not None:
        meta = dict(fit.metadata)
        meta.update(extra or {})
        with open(meta_path, "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
