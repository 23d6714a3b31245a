from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from dists import (
    GigParams,
    TruncationBounds,
    al_log_density,
    gig_moments,
    sample_inverse_gamma,
    sample_truncated_inverse_gamma,
    truncated_gig_expectations,
)
from errors import InvalidArgumentError
from gibbs import (
    ChainState,
    initial_state,
    penalty_quadratic,
    retained_count,
    run_chains,
    run_gibbs,
    sample_model,
    sigma2_rate,
    sigma2_shape,
    sweep,
    update_local_scales,
    update_tau2_xi,
    update_theta,
    update_z,
    write_samples,
)
from graph import Graph, build_chain_graph
from model import Dataset, ModelSpec, Prior, PriorState, validate_spec
from posterior import summarize
from simgen import Kind, Noise, Scenario, generate


def state_for(model, theta=None, z=None, sigma2=1.0, tau2=1.0, xi=1.0):
    st = initial_state(model)
    if theta is not None:
        st.theta = np.asarray(theta, dtype=float)
    if z is not None:
        st.z = np.asarray(z, dtype=float)
    st.sigma2, st.tau2, st.xi = sigma2, tau2, xi
    return st


# ================== THETA ==================

def test_theta_scalar_collapse(make_model):
    y, z, sigma2 = 1.7, 0.8, 0.6
    model = make_model(Graph(1, ()), Dataset.one_per_node([y]), p=0.3)
    spec = model.spec
    st = state_for(model, z=[z], sigma2=sigma2)

    draw = update_theta(st, model, np.random.default_rng(4))
    eps = np.random.default_rng(4).standard_normal(1)
    A = 1.0 / spec.bounds.upper + 1.0 / (spec.t2 * z)
    B = (y - spec.psi * z) / (spec.t2 * z)
    np.testing.assert_allclose(draw, B / A + np.sqrt(sigma2 / A) * eps, rtol=1e-10)


def test_theta_diffuse_limit_is_weighted_mean(make_model, rng):
    data = Dataset.from_lists([[0.2, 0.9], [1.5, 1.1], [-0.4, 0.3], [2.0, 2.2]])
    model = make_model(build_chain_graph(4), data, p=0.25)
    st = state_for(model, z=rng.uniform(0.5, 2.0, data.total), sigma2=1e-20)
    st.prior.w2[:] = model.spec.bounds.upper

    draw = update_theta(st, model, rng)
    psi = model.spec.psi
    expected = data.node_sums((data.values - psi * st.z) / st.z) / data.node_sums(1.0 / st.z)
    np.testing.assert_allclose(draw, expected, rtol=1e-6)


def test_theta_draw_is_deterministic(make_model, chain5, small_data):
    model = make_model(chain5, small_data)
    st = state_for(model, z=np.linspace(0.5, 1.5, small_data.total))
    a = update_theta(st, model, np.random.default_rng(1))
    b = update_theta(st, model, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


# ================== Z ==================

def test_z_parameters_at_median(make_model):
    n_obs = 200_000
    model = make_model(Graph(1, ()), Dataset(1, np.zeros(n_obs, dtype=int), np.ones(n_obs)))
    st = state_for(model, theta=[0.0], z=np.ones(n_obs))
    draws = update_z(st, model, np.random.default_rng(2))
    mean, _ = gig_moments(GigParams(0.5, 1.0 / 8.0, 2.0))
    assert draws.mean() == pytest.approx(mean, rel=0.01)


def test_z_exact_fit_stays_positive(make_model, rng):
    model = make_model(build_chain_graph(3), Dataset.one_per_node([1.0, 2.0, 3.0]))
    st = state_for(model, theta=[1.0, 2.0, 3.0])
    z = update_z(st, model, rng)
    assert np.all(np.isfinite(z)) and np.all(z > 0)


# ================== SIGMA2 ==================

def test_sigma2_rate_collapse(make_model):
    data = Dataset.one_per_node(np.zeros(4))
    model = make_model(build_chain_graph(4), data, b_sigma=0.3, a_sigma=0.7)
    st = state_for(model, theta=np.zeros(4), z=np.ones(4))
    assert sigma2_rate(st, model) == pytest.approx(4 + 0.3)
    assert sigma2_shape(model) == pytest.approx((4 + 3 * 4) / 2 + 0.7)


def test_penalty_quadratic_matches_dense(make_model, rng, chain5, small_data):
    model = make_model(chain5, small_data, k=1)
    theta = rng.normal(size=5)
    w2 = rng.uniform(0.5, 2.0, model.operator.n_rows)
    D = model.operator.matrix.toarray()
    assert penalty_quadratic(theta, w2, model) == pytest.approx(theta @ D.T @ np.diag(1 / w2) @ D @ theta)


def test_sigma2_rate_terms(make_model, rng, chain5, small_data):
    model = make_model(chain5, small_data, p=0.7)
    spec, data = model.spec, model.data
    st = state_for(model, theta=rng.normal(size=5), z=rng.uniform(0.2, 2.0, data.total), tau2=2.5)
    st.prior.w2 = rng.uniform(0.5, 2.0, model.operator.n_rows)
    r = data.values - st.theta[data.node_index] - spec.psi * st.z
    D = model.operator.matrix.toarray()
    quad = st.theta @ D.T @ np.diag(1 / st.prior.w2) @ D @ st.theta
    expected = np.sum(r ** 2 / st.z) / (2 * spec.t2) + quad / (2 * 2.5) + st.z.sum() + spec.b_sigma
    assert sigma2_rate(st, model) == pytest.approx(expected)


# ================== TAU2 / XI ==================

def test_tau2_with_zero_theta(make_model, chain5, small_data):
    model = make_model(chain5, small_data, prior=Prior.NORMAL)
    st = state_for(model, theta=np.zeros(5), xi=0.4)
    tau2, xi = update_tau2_xi(st, model, np.random.default_rng(8))
    rng = np.random.default_rng(8)
    expected_tau2 = sample_inverse_gamma(3.0, 1.0 / 0.4, rng)
    expected_xi = sample_inverse_gamma(1.0, 1.0 / expected_tau2 + 1.0, rng)
    assert tau2 == pytest.approx(expected_tau2)
    assert xi == pytest.approx(expected_xi)


def test_laplace_keeps_tau2_at_one(make_model, chain5, small_data):
    model = make_model(chain5, small_data, prior=Prior.LAPLACE)
    samples = sample_model(model, n_iter=40, burn_in=0, thin=1, seed=3)
    np.testing.assert_array_equal(samples.tau2, 1.0)


@pytest.mark.slow
def test_global_scale_prior_is_half_cauchy():
    """Prior-only chain: theta drawn from its prior given tau2, then (tau2, xi)."""
    g = build_chain_graph(2)
    spec = ModelSpec(p=0.5, prior=Prior.NORMAL, bounds=TruncationBounds(1e-4, 10.0))
    model = validate_spec(spec, g, Dataset.one_per_node([0.0, 0.0]), backend="dense")
    rng = np.random.default_rng(21)
    st = state_for(model)
    taus = []
    for it in range(40_000):
        A = model.assembler.assemble(1.0 / (st.tau2 * st.prior.w2), np.zeros(2))
        st.theta = model.factor.factorize(A).whiten(rng.standard_normal(2))
        st.tau2, st.xi = update_tau2_xi(st, model, rng)
        if it >= 1000 and it % 4 == 0:
            taus.append(np.sqrt(st.tau2))
    taus = np.asarray(taus)
    # half-Cauchy(0, 1) quartiles: tan(pi/8), 1, tan(3pi/8)
    for q, ref in [(0.25, np.tan(np.pi / 8)), (0.5, 1.0), (0.75, np.tan(3 * np.pi / 8))]:
        assert np.mean(taus <= ref) == pytest.approx(q, abs=0.03)


# ================== LOCAL SCALES ==================

def test_normal_local_scales_unchanged(make_model, chain5, small_data, rng):
    model = make_model(chain5, small_data, prior=Prior.NORMAL)
    st = state_for(model, theta=rng.normal(size=5))
    out = update_local_scales(st, model, rng)
    np.testing.assert_array_equal(out.w2, st.prior.w2)


def test_horseshoe_zero_differences(make_model, chain5, small_data):
    model = make_model(chain5, small_data, prior=Prior.HORSESHOE)
    st = state_for(model, theta=np.full(5, 0.7))
    st.prior.nu_local[:] = np.array([0.5, 1.0, 2.0, 4.0, 1.0])
    out = update_local_scales(st, model, np.random.default_rng(6))

    rng = np.random.default_rng(6)
    pen = model.penalized
    expected = sample_truncated_inverse_gamma(1.0, 1.0 / st.prior.nu_local[pen], model.spec.bounds, rng)
    np.testing.assert_allclose(out.w2[pen], expected)
    assert out.w2[~pen] == model.spec.bounds.upper


def test_laplace_local_scale_moments():
    bounds = TruncationBounds(0.5, 3.0)
    spec = ModelSpec(p=0.5, prior=Prior.LAPLACE, bounds=bounds)
    model = validate_spec(spec, build_chain_graph(2), Dataset.one_per_node([0.0, 1.0]), backend="dense")
    st = state_for(model, theta=[0.0, 1.0], sigma2=1.0)
    st.prior = PriorState(np.array([1.0, bounds.upper]), gamma2=1.0, nu=1.0)
    rng = np.random.default_rng(17)
    draws = np.array([update_local_scales(st, model, rng).w2[0] for _ in range(20_000)])
    assert np.all((draws >= 0.5) & (draws <= 3.0))
    mean, _ = truncated_gig_expectations(GigParams(0.5, 1.0, 1.0), bounds)
    assert draws.mean() == pytest.approx(mean, rel=0.03)


# ================== DRIVER ==================

def test_retained_count():
    assert retained_count(5000, 0, 10) == 500
    assert retained_count(25000, 5000, 1) == 20000
    with pytest.raises(InvalidArgumentError):
        retained_count(100, 5, 10)
    with pytest.raises(InvalidArgumentError):
        retained_count(10, 10, 1)


def test_run_gibbs_retention_and_metadata():
    scn = Scenario(Kind.PC, Noise.GAUSS)
    samples = run_gibbs(ModelSpec(p=0.5, k=0), scn.graph(), generate(scn, 1, 0),
                        n_iter=500, burn_in=100, thin=8, seed=11, backend="dense")
    assert samples.theta.shape == (50, 100)
    assert samples.metadata["retained"] == 50
    assert samples.metadata["seed"] == 11
    assert np.all(samples.sigma2 > 0) and np.all(samples.tau2 > 0)


@pytest.mark.parametrize("prior", list(Prior))
def test_same_seed_bit_identical(prior, chain5, small_data):
    spec = ModelSpec(p=0.4, k=1, prior=prior)
    a = run_gibbs(spec, chain5, small_data, n_iter=60, thin=3, seed=5, backend="dense")
    b = run_gibbs(spec, chain5, small_data, n_iter=60, thin=3, seed=5, backend="dense")
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.sigma2, b.sigma2)


@pytest.mark.parametrize("prior", list(Prior))
def test_edgeless_graph_samples(prior):
    data = Dataset.from_lists([[0.4, 0.6], [2.0], [-1.0, -1.5, -0.5]])
    samples = run_gibbs(ModelSpec(p=0.5, prior=prior), Graph(3, ()), data, n_iter=40, thin=4, seed=3,
                        backend="dense")
    assert samples.theta.shape == (10, 3)
    assert np.all(np.isfinite(samples.theta))


def test_sweep_keeps_scales_positive(make_model, chain5, small_data, rng):
    for prior in Prior:
        model = make_model(chain5, small_data, prior=prior, k=2)
        st = initial_state(model)
        for _ in range(30):
            st = sweep(st, model, rng)
        assert isinstance(st, ChainState)
        assert np.all(st.prior.w2 >= model.spec.bounds.lower)
        assert np.all(st.prior.w2 <= model.spec.bounds.upper)


def test_run_chains_stacks(chain5, small_data):
    out = run_chains(ModelSpec(p=0.5), chain5, small_data, n_chains=2, n_iter=20, thin=2, seed=9,
                     n_jobs=1, backend="dense")
    assert out.theta.shape == (20, 5)
    assert out.chain.tolist() == [0] * 10 + [1] * 10
    single = run_gibbs(ModelSpec(p=0.5), chain5, small_data, n_iter=20, thin=2, seed=9, chain=1, backend="dense")
    np.testing.assert_array_equal(out.theta[10:], single.theta)


def test_samples_export(tmp_path, chain5, small_data):
    samples = run_gibbs(ModelSpec(p=0.5), chain5, small_data, n_iter=20, thin=2, seed=9, backend="dense")
    write_samples(samples, tmp_path / "samples.csv", tmp_path / "meta.json", {"protocol": "test"})
    header = (tmp_path / "samples.csv").read_text().splitlines()[0]
    assert header == "theta_1,theta_2,theta_3,theta_4,theta_5,sigma2,tau2"
    assert '"protocol": "test"' in (tmp_path / "meta.json").read_text()


@pytest.mark.slow
def test_quantile_reflection():
    rng = np.random.default_rng(0)
    data = Dataset.one_per_node(np.sin(np.linspace(0, 3, 12)) + 0.3 * rng.standard_t(3, 12))
    g = build_chain_graph(12)
    up = summarize(run_gibbs(ModelSpec(p=0.25, k=1), g, data, n_iter=6000, burn_in=1000, thin=5, seed=1))
    down = summarize(run_gibbs(ModelSpec(p=0.75, k=1), g, data.negated(), n_iter=6000, burn_in=1000, thin=5,
                               seed=2))
    np.testing.assert_allclose(down.point, -up.point, atol=0.12)


# ================== VALIDATION ==================

def _prior_state_draw(model, rng):
    """Exact draw of all parameters from the joint prior (square operator)."""
    spec = model.spec
    t = spec.bounds
    sigma2 = sample_inverse_gamma(spec.a_sigma, spec.b_sigma, rng)
    xi = sample_inverse_gamma(0.5, 1.0, rng)
    tau2 = sample_inverse_gamma(0.5, 1.0 / xi, rng)
    pen = model.penalized
    w2 = np.full(model.operator.n_rows, t.upper)
    for r in np.flatnonzero(pen):
        while True:
            w = abs(rng.standard_cauchy())
            if t.lower <= w * w <= t.upper:
                w2[r] = w * w
                break
    nu = np.ones_like(w2)
    nu[pen] = sample_inverse_gamma(1.0, 1.0 / w2[pen] + 1.0, rng)
    eta = rng.normal(0.0, np.sqrt(sigma2 * tau2 * w2))
    theta = np.linalg.solve(model.operator.matrix.toarray(), eta)
    z = rng.exponential(sigma2, model.data.total)
    return ChainState(theta, z, sigma2, tau2, xi, PriorState(w2, nu_local=nu))


def _draw_data(model, st, rng):
    spec, data = model.spec, model.data
    mean = st.theta[data.node_index] + spec.psi * st.z
    y = mean + np.sqrt(spec.t2 * st.sigma2 * st.z) * rng.standard_normal(st.z.size)
    return replace(model, data=Dataset(data.n_nodes, data.node_index, y))


def _test_functions(st):
    return np.array([
        np.tanh(st.theta[0]),
        np.tanh(st.theta[2]),
        np.tanh(st.theta[1] - st.theta[0]) ** 2,
        np.log(st.sigma2),
        np.log(st.tau2),
        np.log(st.prior.w2[0]),
        np.log(st.z[1]),
    ])


@pytest.mark.slow
def test_getting_it_right():
    spec = ModelSpec(p=0.3, k=0, prior=Prior.HORSESHOE, a_sigma=3.0, b_sigma=2.0,
                     bounds=TruncationBounds(1e-3, 10.0))
    model = validate_spec(spec, build_chain_graph(3), Dataset.one_per_node(np.zeros(3)), backend="dense")
    assert model.operator.n_rows == 3
    reps = 10_000

    rng = np.random.default_rng(2024)
    forward = np.array([_test_functions(_prior_state_draw(model, rng)) for _ in range(reps)])

    rng = np.random.default_rng(2025)
    st = _prior_state_draw(model, rng)
    chain = np.empty((reps, forward.shape[1]))
    for i in range(reps):
        st = sweep(st, _draw_data(model, st, rng), rng)
        chain[i] = _test_functions(st)

    batches = chain.reshape(50, -1, chain.shape[1]).mean(axis=1)
    se_chain = batches.std(axis=0, ddof=1) / np.sqrt(batches.shape[0])
    se_forward = forward.std(axis=0, ddof=1) / np.sqrt(reps)
    z = (forward.mean(axis=0) - chain.mean(axis=0)) / np.sqrt(se_forward ** 2 + se_chain ** 2)
    assert np.all(np.abs(z) < 4), z


def _horseshoe_row_table(bounds):
    """log h(u) for the N(0, w^2) scale mixture over a truncated half-Cauchy w."""
    wl, wu = np.sqrt(bounds.lower), np.sqrt(bounds.upper)
    mass = (np.arctan(wu) - np.arctan(wl)) * 2 / np.pi
    grid = np.concatenate([[0.0], np.geomspace(1e-6, 400.0, 1500)])
    vals = np.empty_like(grid)
    for k, u in enumerate(grid):
        f = lambda w: stats.norm.pdf(u / w) / w * 2 / (np.pi * (1 + w * w))
        brk = [x for x in (u, 1.0) if wl < x < wu]
        v, _ = integrate.quad(f, wl, wu, epsabs=0, epsrel=1e-10, limit=200, points=brk or None)
        vals[k] = np.log(v / mass) if v > 0 else -np.inf
    return grid, vals


def _cell_widths(x):
    mid = 0.5 * (x[1:] + x[:-1])
    return np.diff(np.concatenate([[x[0]], mid, [x[-1]]]))


@pytest.mark.slow
def test_posterior_matches_grid_integration():
    y = np.array([0.2, 1.0, 0.9])
    p = 0.3
    bounds = TruncationBounds(1e-4, 100.0)
    spec = ModelSpec(p=p, k=0, prior=Prior.HORSESHOE, a_sigma=3.0, b_sigma=2.0, bounds=bounds)
    samples = run_gibbs(spec, build_chain_graph(3), Dataset.one_per_node(y), n_iter=101_000, burn_in=1000,
                        thin=1, seed=77, backend="dense")

    # vertex 0 carries the pinned row; the two rows are theta_0 - theta_1 and theta_1 - theta_2
    u_tab, log_h = _horseshoe_row_table(bounds)
    anchor = np.linspace(-6.0, 7.0, 101)
    step = anchor[1] - anchor[0]
    cell_lo = anchor[0] - step / 2
    edges = np.linspace(-6.0, 7.0, 27)
    inner = edges[1:-1]
    uniform = np.linspace(-8.0, 8.0, 81)
    v = np.linspace(-np.arcsinh(6000.0), np.arcsinh(6000.0), 61)

    parts = []
    for ls in np.linspace(np.log(0.02), np.log(50.0), 30):
        s2 = np.exp(ls)
        lik0 = al_log_density(y[0] - anchor, p, s2)[:, None, None]
        log_sigma_prior = stats.invgamma.logpdf(s2, 3.0, scale=2.0) + ls
        for lt in np.linspace(np.log(1e-5), np.log(1e5), 34):
            tau2 = np.exp(lt)
            s = np.sqrt(s2 * tau2)
            eta = np.unique(np.concatenate([uniform, np.clip(s * 0.01 * np.sinh(v), -8.0, 8.0)]))
            log_eta = np.interp(np.abs(eta) / s, u_tab, log_h, right=-np.inf) - np.log(s) \
                + np.log(_cell_widths(eta))
            e1 = eta[None, :, None]
            e2 = eta[None, None, :]
            t0 = anchor[:, None, None]
            t1 = t0 - e1
            t2 = t1 - e2
            log_tau_prior = -np.log(np.pi) - 0.5 * lt - np.log1p(tau2) + lt
            logw = (lik0 + al_log_density(y[1] - t1, p, s2) + al_log_density(y[2] - t2, p, s2)
                    + log_eta[None, :, None] + log_eta[None, None, :]
                    + stats.norm.logpdf(t0, 0.0, s * np.sqrt(bounds.upper))
                    + log_sigma_prior + log_tau_prior)
            top = logw.max()
            w = np.exp(logw - top)
            cum = np.concatenate([np.zeros((1,) + w.shape[1:]), np.cumsum(w, axis=0)])

            cdfs = []
            for shift in (np.zeros((eta.size, eta.size)), e1[0] + 0 * e2[0], e1[0] + e2[0]):
                pos = np.clip((inner[:, None, None] + shift[None] - cell_lo) / step, 0, anchor.size)
                j = np.minimum(np.floor(pos).astype(int), anchor.size - 1)
                frac = pos - j
                lo = np.take_along_axis(cum, j, axis=0)
                hi = np.take_along_axis(cum, j + 1, axis=0)
                cdfs.append((lo + frac * (hi - lo)).sum(axis=(1, 2)))
            parts.append((top, w.sum(), cdfs))

    peak = max(t for t, _, _ in parts)
    total = sum(np.exp(t - peak) * z for t, z, _ in parts)
    for i in range(3):
        cdf = sum(np.exp(t - peak) * c[i] for t, _, c in parts) / total
        grid_probs = np.diff(np.concatenate([[0.0], cdf, [1.0]]))
        draws = np.clip(samples.theta[:, i], -6.0, 7.0)
        gibbs_probs = np.histogram(draws, bins=edges)[0] / draws.size
        tv = 0.5 * np.abs(grid_probs - gibbs_probs).sum()
        assert tv < 0.05, (i, tv)
