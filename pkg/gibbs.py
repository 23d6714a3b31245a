"""Gibbs sampler for Bayesian quantile trend filtering.

One sweep draws, in order: theta, z, sigma2, (tau2, xi), local scales.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from dists import (
    sample_gig_array,
    sample_inverse_gamma,
    sample_truncated_gig_array,
    sample_truncated_inverse_gamma,
)
from errors import InvalidArgumentError, NumericalError
from model import FittedModel, ModelSpec, Prior, PriorState, validate_spec

logger = logging.getLogger(__name__)

DEFAULT_ITERS = 5000
DEFAULT_BURN_IN = 0
DEFAULT_THIN = 10
PROGRESS_EVERY = 1000


# ================== STATE ==================

@dataclass
class ChainState:
    theta: np.ndarray
    z: np.ndarray
    sigma2: float
    tau2: float
    xi: float
    prior: PriorState

    def check(self) -> None:
        assert np.all(np.isfinite(self.theta)), "theta not finite"
        assert np.all(self.z > 0), "z not positive"
        assert self.sigma2 > 0 and self.tau2 > 0 and self.xi > 0, "global scales not positive"
        assert np.all(self.prior.w2 > 0), "local scales not positive"


@dataclass
class PosteriorSamples:
    theta: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    metadata: dict = field(default_factory=dict)
    chain: Optional[np.ndarray] = None

    @property
    def n_retained(self) -> int:
        return self.theta.shape[0]

    def to_frame(self) -> pd.DataFrame:
        cols = {f"theta_{i + 1}": self.theta[:, i] for i in range(self.theta.shape[1])}
        frame = pd.DataFrame(cols)
        frame["sigma2"] = self.sigma2
        frame["tau2"] = self.tau2
        if self.chain is not None:
            frame.insert(0, "chain", self.chain)
        return frame


def initial_state(model: FittedModel) -> ChainState:
    return ChainState(
        theta=model.initial_theta.copy(),
        z=np.ones(model.data.total),
        sigma2=1.0,
        tau2=1.0,
        xi=1.0,
        prior=model.initial_prior.copy(),
    )


# ================== CONDITIONALS ==================

def penalty_quadratic(theta, w2, model: FittedModel) -> float:
    """theta^T D^T W^-1 D theta over all rows, pinned ones included."""
    eta = model.operator.matrix @ theta
    return float(np.sum(eta * eta / w2))


def update_theta(state: ChainState, model: FittedModel, rng) -> np.ndarray:
    spec, data = model.spec, model.data
    row_scale = 1.0 / (state.tau2 * state.prior.w2)
    node_weight = data.node_sums(1.0 / state.z) / spec.t2
    linear = data.node_sums((data.values - spec.psi * state.z) / state.z) / spec.t2

    factor = model.factor.factorize(model.assembler.assemble(row_scale, node_weight))
    mean = factor.solve(linear)
    return mean + np.sqrt(state.sigma2) * factor.whiten(rng.standard_normal(model.n))


def update_z(state: ChainState, model: FittedModel, rng) -> np.ndarray:
    spec, data = model.spec, model.data
    resid = data.values - state.theta[data.node_index]
    scale = spec.t2 * state.sigma2
    a = resid * resid / scale
    b = spec.psi ** 2 / scale + 2.0 / state.sigma2
    return sample_gig_array(0.5, a, b, rng)


def sigma2_rate(state: ChainState, model: FittedModel) -> float:
    spec, data = model.spec, model.data
    resid = data.values - state.theta[data.node_index] - spec.psi * state.z
    rate = (np.sum(resid * resid / state.z) / (2.0 * spec.t2)
            + penalty_quadratic(state.theta, state.prior.w2, model) / (2.0 * state.tau2)
            + np.sum(state.z)
            + spec.b_sigma)
    if not np.isfinite(rate):
        raise NumericalError(f"sigma2 rate is not finite: {rate}")
    return float(rate)


def sigma2_shape(model: FittedModel) -> float:
    return 0.5 * (model.n + 3 * model.data.total) + model.spec.a_sigma


def update_sigma2(state: ChainState, model: FittedModel, rng) -> float:
    return sample_inverse_gamma(sigma2_shape(model), sigma2_rate(state, model), rng)


def update_tau2_xi(state: ChainState, model: FittedModel, rng):
    if model.spec.prior == Prior.LAPLACE:
        return state.tau2, state.xi
    quad = penalty_quadratic(state.theta, state.prior.w2, model)
    tau2 = sample_inverse_gamma(0.5 * (model.n + 1), quad / (2.0 * state.sigma2) + 1.0 / state.xi, rng)
    xi = sample_inverse_gamma(1.0, 1.0 / tau2 + 1.0, rng)
    return tau2, xi


def update_local_scales(state: ChainState, model: FittedModel, rng) -> PriorState:
    spec = model.spec
    prior = state.prior.copy()
    if spec.prior == Prior.NORMAL:
        return prior

    pen = model.penalized
    if not pen.any():
        return prior
    eta = model.operator.matrix @ state.theta
    eta2 = eta[pen] ** 2

    if spec.prior == Prior.HORSESHOE:
        rate = 1.0 / prior.nu_local[pen] + eta2 / (2.0 * state.sigma2 * state.tau2)
        w2 = np.atleast_1d(sample_truncated_inverse_gamma(1.0, rate, spec.bounds, rng))
        prior.w2[pen] = w2
        prior.nu_local[pen] = sample_inverse_gamma(1.0, 1.0 / w2 + 1.0, rng)
        return prior

    if spec.prior == Prior.LAPLACE:
        w2 = sample_truncated_gig_array(0.5, eta2 / state.sigma2, np.full(eta2.size, prior.gamma2),
                                        spec.bounds, rng)
        prior.w2[pen] = w2
        prior.gamma2 = float(sample_gig_array(model.m_penalized - 0.5, np.array([2.0 / prior.nu]),
                                              np.array([np.sum(w2)]), rng)[0])
        prior.nu = sample_inverse_gamma(1.0, 1.0 / prior.gamma2 + 1.0, rng)
        return prior

    raise ValueError(f"Unsupported prior: {spec.prior}")


def sweep(state: ChainState, model: FittedModel, rng) -> ChainState:
    state.theta = update_theta(state, model, rng)
    state.z = update_z(state, model, rng)
    state.sigma2 = update_sigma2(state, model, rng)
    state.tau2, state.xi = update_tau2_xi(state, model, rng)
    state.prior = update_local_scales(state, model, rng)
    state.check()
    return state


# ================== DRIVER ==================

def retained_count(n_iter: int, burn_in: int, thin: int) -> int:
    if n_iter < 1 or burn_in < 0 or thin < 1:
        raise InvalidArgumentError(f"need n_iter >= 1, burn_in >= 0, thin >= 1; got {n_iter}, {burn_in}, {thin}")
    kept, rem = divmod(n_iter - burn_in, thin)
    if kept < 1 or rem:
        raise InvalidArgumentError(f"(n_iter - burn_in) = {n_iter - burn_in} is not a positive multiple of thin={thin}")
    return kept


def chain_rng(seed: int, chain: int = 0):
    return np.random.default_rng([seed, chain])


def sample_model(model: FittedModel, n_iter: int = DEFAULT_ITERS, burn_in: int = DEFAULT_BURN_IN,
                 thin: int = DEFAULT_THIN, seed: int = 2023, chain: int = 0) -> PosteriorSamples:
    kept = retained_count(n_iter, burn_in, thin)
    rng = chain_rng(seed, chain)
    state = initial_state(model)

    theta = np.empty((kept, model.n))
    sigma2 = np.empty(kept)
    tau2 = np.empty(kept)
    slot = 0
    for it in range(1, n_iter + 1):
        state = sweep(state, model, rng)
        if it > burn_in and (it - burn_in) % thin == 0:
            theta[slot] = state.theta
            sigma2[slot] = state.sigma2
            tau2[slot] = state.tau2
            slot += 1
        if it % PROGRESS_EVERY == 0:
            logger.debug(f"chain {chain}: iter {it}/{n_iter}, sigma2={state.sigma2:.4g}, tau2={state.tau2:.4g}")

    logger.info(f"chain {chain}: {n_iter} iterations, {kept} draws retained "
                f"(burn-in {burn_in}, thin {thin}, prior {model.spec.prior.value})")
    meta = {
        "method": "mcmc",
        "seed": seed,
        "chain": chain,
        "n_iter": n_iter,
        "burn_in": burn_in,
        "thin": thin,
        "retained": kept,
        "backend": model.factor.backend,
        "spec": model.spec.to_dict(),
    }
    return PosteriorSamples(theta, sigma2, tau2, meta)


def run_gibbs(spec: ModelSpec, graph, data, n_iter: int = DEFAULT_ITERS, burn_in: int = DEFAULT_BURN_IN,
              thin: int = DEFAULT_THIN, seed: int = 2023, chain: int = 0, backend: str = "auto") -> PosteriorSamples:
    model = validate_spec(spec, graph, data, backend=backend)
    return sample_model(model, n_iter, burn_in, thin, seed, chain)


def run_chains(spec: ModelSpec, graph, data, n_chains: int = 1, n_iter: int = DEFAULT_ITERS,
               burn_in: int = DEFAULT_BURN_IN, thin: int = DEFAULT_THIN, seed: int = 2023,
               n_jobs: int = 1, backend: str = "auto") -> PosteriorSamples:
    """Independent chains seeded by (seed, chain); draws stacked chain by chain."""
    if n_chains < 1:
        raise InvalidArgumentError(f"need at least one chain, got {n_chains}")
    retained_count(n_iter, burn_in, thin)
    if n_chains == 1:
        runs = [run_gibbs(spec, graph, data, n_iter, burn_in, thin, seed, 0, backend)]
    else:
        runs = Parallel(n_jobs=min(n_jobs, n_chains))(
            delayed(run_gibbs)(spec, graph, data, n_iter, burn_in, thin, seed, c, backend)
            for c in range(n_chains))

    meta = dict(runs[0].metadata)
    meta.pop("chain")
    meta["n_chains"] = n_chains
    return PosteriorSamples(
        theta=np.vstack([r.theta for r in runs]),
        sigma2=np.concatenate([r.sigma2 for r in runs]),
        tau2=np.concatenate([r.tau2 for r in runs]),
        metadata=meta,
        chain=np.repeat(np.arange(n_chains), runs[0].n_retained),
    )


# ================== EXPORT ==================

def write_samples(samples: PosteriorSamples, path, meta_path=None, extra: Optional[dict] = None) -> None:
    samples.to_frame().to_csv(path, index=False, float_format="%.17g")
    if meta_path is not None:
        meta = dict(samples.metadata)
        meta.update(extra or {})
        with open(meta_path, "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
