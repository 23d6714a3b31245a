"""Distribution kernels: asymmetric Laplace, GIG, inverse gamma and their
truncated versions, plus Bessel-K ratios.

GIG convention throughout: (nu, a, b) with density
    f(x) ∝ x^(nu-1) exp(-(a/x + b*x)/2),  x > 0.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.integrate import quad_vec
from scipy.optimize import brentq
from scipy.stats import geninvgauss

from errors import DegenerateTruncationError, InvalidArgumentError, NumericalError

logger = logging.getLogger(__name__)

# ================== CONSTANTS ==================

DEFAULT_LOWER = 1e-10
DEFAULT_UPPER = 1e10

# floor applied to a GIG a-parameter that collapses to zero (exact-fit residuals)
A_FLOOR = 1e-12

# rejection sampling falls back to inverse-CDF below this acceptance rate
MIN_ACCEPTANCE = 1e-3
REJECTION_ROUNDS = 50

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11


# ================== TYPES ==================

@dataclass(frozen=True)
class GigParams:
    nu: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidArgumentError(f"GIG needs a > 0 and b > 0, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class TruncationBounds:
    lower: float = DEFAULT_LOWER
    upper: float = DEFAULT_UPPER

    def __post_init__(self):
        if not (0 < self.lower < self.upper):
            raise InvalidArgumentError(f"need 0 < lower < upper, got ({self.lower}, {self.upper})")


# ================== ASYMMETRIC LAPLACE ==================

def _check_level(p: float) -> None:
    if not (0.0 < p < 1.0):
        raise InvalidArgumentError(f"quantile level must lie in (0, 1), got {p}")


def check_loss(r, p: float) -> float:
    _check_level(p)
    r = np.asarray(r, dtype=float)
    return float(np.sum(r * (p - (r < 0))))


def al_log_density(x, p: float, sigma2: float):
    _check_level(p)
    if not sigma2 > 0:
        raise InvalidArgumentError(f"AL scale must be positive, got {sigma2}")
    u = np.asarray(x, dtype=float) / sigma2
    out = np.log(p * (1.0 - p) / sigma2) - u * (p - (u < 0))
    return float(out) if np.ndim(out) == 0 else out


# ================== BESSEL RATIOS ==================

def bessel_k_ratio(nu: float, x):
    """K_{nu+1}(x) / K_nu(x), using ratio recurrences only."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise InvalidArgumentError("Bessel ratio needs x > 0")
    if nu < -0.5:
        # K_{-v} = K_v turns R_nu into 1 / R_{-nu-1}
        return 1.0 / bessel_k_ratio(-nu - 1.0, x)

    steps = int(np.floor(nu + 0.5))
    nu0 = nu - steps
    if nu0 == -0.5:
        ratio = np.ones_like(x)
    else:
        ratio = special.kve(nu0 + 1.0, x) / special.kve(nu0, x)
        if not np.all(np.isfinite(ratio)):
            raise NumericalError(f"Bessel seed ratio overflow at order {nu0}")
    order = nu0
    for _ in range(steps):
        order += 1.0
        ratio = 1.0 / ratio + 2.0 * order / x
    return float(ratio) if ratio.ndim == 0 else ratio


# ================== GIG ==================

def gig_moment_arrays(nu: float, a, b):
    """Vectorized (E[X], E[1/X]) for GIG(nu, a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    omega = np.sqrt(a * b)
    mean = np.sqrt(a / b) * bessel_k_ratio(nu, omega)
    # E[1/X] = sqrt(b/a) K_{nu-1}/K_nu, free of the 2nu/a cancellation
    mean_inv = np.sqrt(b / a) / bessel_k_ratio(nu - 1.0, omega)
    return mean, mean_inv


def gig_moments(g: GigParams):
    mean, mean_inv = gig_moment_arrays(g.nu, g.a, g.b)
    return float(mean), float(mean_inv)


def _inverse_gaussian(mu, lam, rng):
    """Michael-Schucany-Haas draw, picking the smaller root as mu^2 / larger."""
    y = rng.standard_normal(np.shape(mu)) ** 2
    half = mu * y / (2.0 * lam)
    big = mu * (1.0 + half + np.sqrt(half * (2.0 + half)))
    small = mu * mu / big
    u = rng.random(np.shape(mu))
    return np.where(u <= mu / (mu + small), small, big)


def _sample_gig_half(a, b, rng):
    # X ~ GIG(1/2, a, b) is s/W with s = sqrt(a/b), W ~ IGauss(1, sqrt(ab))
    omega = np.sqrt(a * b)
    w = _inverse_gaussian(np.ones_like(omega), omega, rng)
    return np.sqrt(a / b) / w


def sample_gig_array(nu: float, a, b, rng):
    a = np.maximum(np.asarray(a, dtype=float), A_FLOOR)
    b = np.asarray(b, dtype=float) * np.ones_like(a)
    if nu == 0.5:
        return _sample_gig_half(a, b, rng)
    if nu == -0.5:
        return 1.0 / _sample_gig_half(b, a, rng)
    omega = np.sqrt(a * b)
    if omega.size == 0:
        return np.empty_like(omega)
    if np.all(omega == omega.flat[0]):
        # a single shape value lets scipy generate the whole batch at once
        return geninvgauss.rvs(nu, omega.flat[0], scale=np.sqrt(a / b), size=omega.shape, random_state=rng)
    return geninvgauss.rvs(nu, omega, scale=np.sqrt(a / b), random_state=rng)


def sample_gig(g: GigParams, rng, size=None):
    if size is None:
        return float(sample_gig_array(g.nu, np.array([g.a]), np.array([g.b]), rng)[0])
    return sample_gig_array(g.nu, np.full(size, g.a), np.full(size, g.b), rng)


def gig_log_normalizer(nu: float, a, b):
    """log of the integral of x^(nu-1) exp(-(a/x + b x)/2) over (0, inf)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    omega = np.sqrt(a * b)
    return np.log(2.0) + 0.5 * nu * np.log(a / b) + np.log(special.kve(nu, omega)) - omega


def _gig_log_kernel(s, nu, a, b):
    # density on the log axis s = log x, Jacobian included
    return nu * s - 0.5 * (a * np.exp(-s) + b * np.exp(s))


def _gig_log_mode(nu, a, b):
    root = np.sqrt(nu * nu + a * b)
    x = np.where(nu >= 0, (nu + root) / b, a / np.maximum(root - nu, 1e-300))
    return np.log(x)


def _break_points(mode, nu, a, b, lo, hi, upper=None):
    # kernel is log-concave in s; narrow peaks must not fall between GK nodes
    upper = hi if upper is None else upper
    width = 1.0 / np.sqrt(0.5 * (a * np.exp(-mode) + b * np.exp(mode)))
    offsets = np.array([0.0, -1.0, 1.0, -4.0, 4.0, -16.0, 16.0])
    pts = (mode[:, None] + offsets[None, :] * width[:, None]).ravel()
    pts = np.unique(pts[(pts > lo) & (pts < upper)])
    return pts if pts.size else None


def gig_log_mass(nu: float, a, b, t: TruncationBounds):
    """log P(lower <= X <= upper) for GIG(nu, a, b), vectorized over a and b."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float)) * np.ones_like(a)
    lo, hi = np.log(t.lower), np.log(t.upper)
    mode = np.clip(_gig_log_mode(nu, a, b), lo, hi)
    peak = _gig_log_kernel(mode, nu, a, b)

    def integrand(s):
        return np.exp(_gig_log_kernel(s, nu, a, b) - peak)

    integral, _ = quad_vec(integrand, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                           norm="max", points=_break_points(mode, nu, a, b, lo, hi))
    with np.errstate(divide="ignore"):
        out = peak + np.log(integral) - gig_log_normalizer(nu, a, b)
    return np.minimum(out, 0.0)


# ================== INVERSE GAMMA ==================

def sample_inverse_gamma(shape, rate, rng):
    rate = np.asarray(rate, dtype=float)
    draw = rate / rng.gamma(shape, 1.0, size=np.shape(rate))
    return float(draw) if draw.ndim == 0 else draw


def _gamma_interval(shape, rate, t: TruncationBounds):
    # X ~ IG(shape, rate) in [lower, upper]  <=>  rate/X ~ Gamma(shape, 1) in [u1, u2]
    u1 = rate / t.upper
    u2 = rate / t.lower
    p1 = special.gammainc(shape, u1)
    upper_tail = p1 >= 0.5
    mass = np.where(upper_tail,
                    special.gammaincc(shape, u1) - special.gammaincc(shape, u2),
                    special.gammainc(shape, u2) - p1)
    return u1, u2, upper_tail, mass


def ig_log_mass(shape: float, rate, t: TruncationBounds):
    *_, mass = _gamma_interval(shape, np.asarray(rate, dtype=float), t)
    with np.errstate(divide="ignore"):
        return np.log(mass)


def sample_truncated_inverse_gamma(shape: float, rate, t: TruncationBounds, rng):
    """Exact inverse-CDF draw from IG(shape, rate) restricted to the bounds."""
    rate = np.asarray(rate, dtype=float)
    u1, u2, upper_tail, mass = _gamma_interval(shape, rate, t)
    if np.any(~(mass > 0)):
        raise DegenerateTruncationError(f"inverse gamma has no mass in [{t.lower:g}, {t.upper:g}]")
    u = rng.random(np.shape(rate))
    q_hi = special.gammaincc(shape, u2)
    p_lo = special.gammainc(shape, u1)
    with np.errstate(invalid="ignore"):
        g = np.where(upper_tail,
                     special.gammainccinv(shape, q_hi + u * mass),
                     special.gammaincinv(shape, p_lo + u * mass))
    draw = np.clip(rate / g, t.lower, t.upper)
    return float(draw) if draw.ndim == 0 else draw


def truncated_ig_expectations(shape: float, rate, t: TruncationBounds):
    """E[1/X] for IG(shape, rate) restricted to the bounds."""
    rate = np.asarray(rate, dtype=float)
    log_f = ig_log_mass(shape, rate, t)
    log_g = ig_log_mass(shape + 1.0, rate, t)
    if np.any(~np.isfinite(log_f)):
        raise DegenerateTruncationError(f"inverse gamma has no mass in [{t.lower:g}, {t.upper:g}]")
    out = np.exp(log_g - log_f) * shape / rate
    return float(out) if out.ndim == 0 else out


# ================== TRUNCATED GIG ==================

def truncated_gig_moment_arrays(nu: float, a, b, t: TruncationBounds):
    """(E[X], E[1/X]) for GIG(nu, a, b) restricted to the bounds, vectorized."""
    a = np.maximum(np.atleast_1d(np.asarray(a, dtype=float)), A_FLOOR)
    b = np.atleast_1d(np.asarray(b, dtype=float)) * np.ones_like(a)
    log_f = gig_log_mass(nu, a, b, t)
    if np.any(~np.isfinite(log_f)):
        raise DegenerateTruncationError(f"GIG({nu:g}) has no mass in [{t.lower:g}, {t.upper:g}]")
    log_g = gig_log_mass(nu + 1.0, a, b, t)
    log_h = gig_log_mass(nu - 1.0, a, b, t)
    mean, mean_inv = gig_moment_arrays(nu, a, b)
    return np.exp(log_g - log_f) * mean, np.exp(log_h - log_f) * mean_inv


def truncated_gig_expectations(g: GigParams, t: TruncationBounds):
    mean, mean_inv = truncated_gig_moment_arrays(g.nu, g.a, g.b, t)
    return float(mean[0]), float(mean_inv[0])


def _truncated_gig_inverse_cdf(nu, a, b, t: TruncationBounds, rng) -> float:
    lo, hi = np.log(t.lower), np.log(t.upper)
    mode = np.clip(_gig_log_mode(nu, np.array([a]), np.array([b])), lo, hi)
    peak = float(_gig_log_kernel(mode[0], nu, a, b))

    def mass(upper):
        if upper <= lo:
            return 0.0
        val, _ = quad_vec(lambda s: np.exp(_gig_log_kernel(s, nu, a, b) - peak), lo, upper,
                          epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                          points=_break_points(mode, nu, a, b, lo, hi, upper=upper))
        return float(val)

    total = mass(hi)
    if not total > 0:
        raise DegenerateTruncationError(f"GIG({nu:g}, {a:g}, {b:g}) has no mass in bounds")
    target = rng.random() * total
    s = brentq(lambda u: mass(u) - target, lo, hi, xtol=1e-12)
    return float(np.exp(s))


def sample_truncated_gig_array(nu: float, a, b, t: TruncationBounds, rng):
    """Rejection from the untruncated sampler, inverse-CDF for low acceptance."""
    a = np.maximum(np.asarray(a, dtype=float), A_FLOOR)
    b = np.asarray(b, dtype=float) * np.ones_like(a)
    draw = sample_gig_array(nu, a, b, rng)
    todo = np.flatnonzero((draw < t.lower) | (draw > t.upper))
    for _ in range(REJECTION_ROUNDS):
        if todo.size == 0:
            break
        redraw = sample_gig_array(nu, a[todo], b[todo], rng)
        draw[todo] = redraw
        todo = todo[(redraw < t.lower) | (redraw > t.upper)]

    if todo.size:
        log_mass = gig_log_mass(nu, a[todo], b[todo], t)
        if np.any(~np.isfinite(log_mass)):
            raise DegenerateTruncationError(f"GIG({nu:g}) has no mass in [{t.lower:g}, {t.upper:g}]")
        for idx, lm in zip(todo, log_mass):
            if lm < np.log(MIN_ACCEPTANCE):
                draw[idx] = _truncated_gig_inverse_cdf(nu, a[idx], b[idx], t, rng)
                continue
            while True:
                x = sample_gig_array(nu, a[idx:idx + 1], b[idx:idx + 1], rng)[0]
                if t.lower <= x <= t.upper:
                    draw[idx] = x
                    break
        logger.debug(f"truncated GIG: {todo.size} draws needed the slow path")
    return draw


def sample_truncated_gig(g: GigParams, t: TruncationBounds, rng) -> float:
    return float(sample_truncated_gig_array(g.nu, np.array([g.a]), np.array([g.b]), t, rng)[0])
