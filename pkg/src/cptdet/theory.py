"""Theoretical distributions of the relaxed activity estimates.

For each mechanism this module provides an evaluable conditional distribution
of the relaxed estimate given the true activity level:

ucpt   : exact shifted-exponential closed form.
acptf  : Gaussian surrogate (Rayleigh-sum moment fit) with the closed-form
         variance; plus the exact K-fold Rayleigh-integral distribution as a
         Monte-Carlo-integrated oracle at desk scale.
acptd  : scaled Student's-t surrogate for the accumulated CSI perturbation
         (second-moment + characteristic-function fit), binomially mixed over
         the transmitting count and mapped through the silence correction;
         plus the exact Z-integral distribution as an MC-integrated oracle.

Also here: closed-form variance formulas with the dynamic-mechanism variance
bound, NI-band success probabilities, and the likelihood families consumed by
ML rounding.  Everything is pure; the Student fit is cached per
(k_prime, xi, t_match).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from . import numerics
from .cpt import AcptdConfig, CptParams, configure_acptd
from .deployment import Deployment

__all__ = [
    "AcptdMlFamily",
    "AcptfMlFamily",
    "DetectionStats",
    "DistModel",
    "UcptMlFamily",
    "acptd_cdf",
    "acptd_fz_pdf",
    "acptd_map_config",
    "acptd_model",
    "acptd_student_fit",
    "acptf_gaussian_model",
    "fz_char",
    "fz_second_moment",
    "make_stats",
    "ml_family",
    "oracle_acptd_exact_cdf",
    "oracle_acptf_exact_cdf",
    "sample_z",
    "success_probability_theory",
    "ucpt_cdf",
    "ucpt_model",
    "ucpt_pdf",
    "variance_formulas",
]


# ----------------------------------------------------------------------------
# shared small pieces
# ----------------------------------------------------------------------------

def _norm_cdf(x):
    return 0.5 * numerics.erfc(-np.asarray(x) / math.sqrt(2.0))


def _norm_pdf(x):
    x = np.asarray(x)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _t_pdf(x, nu: float):
    """Standard Student's-t density."""
    x = np.asarray(x, dtype=float)
    lognorm = gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0) - 0.5 * math.log(nu * math.pi)
    return np.exp(lognorm - 0.5 * (nu + 1.0) * np.log1p(x * x / nu))


def _t_cdf(t: float, nu: float) -> float:
    """Standard Student's-t CDF via the regularized incomplete beta."""
    if t == 0.0:
        return 0.5
    half = 0.5 * numerics.reg_inc_beta(nu / (nu + t * t), nu / 2.0, 0.5)
    return half if t < 0.0 else 1.0 - half


def _binom_pmf(k, n, p: float):
    """Binomial pmf via gammaln (vector-friendly in k and n)."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    logc = gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)
    return np.exp(logc + k * math.log(p) + (n - k) * math.log1p(-p))


def _silence_map(k_hat, xi: float):
    """Invert the corollary silence correction: the relaxed estimate k_hat is
    an affine function of the transmitting-count statistic, so CDF thresholds
    transform as k' threshold = (k_hat (1-xi)^2 - xi)/((1-xi)^2 + xi)."""
    c = (1.0 - xi) ** 2
    return (np.asarray(k_hat) * c - xi) / (c + xi)


def _silence_map_slope(xi: float) -> float:
    c = (1.0 - xi) ** 2
    return c / (c + xi)


@dataclass(frozen=True)
class DetectionStats:
    """Deployment/frame summary the approximate distributions consume."""

    N1: int
    N2: int
    gamma_bar_prime: float
    gamma_bar_c: float


def make_stats(deployment: Deployment, params: CptParams) -> DetectionStats:
    return DetectionStats(
        N1=params.N1, N2=params.N2,
        gamma_bar_prime=deployment.gamma_bar_prime,
        gamma_bar_c=params.power.gamma_bar,
    )


# ----------------------------------------------------------------------------
# distribution models
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DistModel:
    """Tagged, JSON-exportable parameter bundle of one conditional
    distribution of the relaxed estimate, with evaluable cdf/pdf."""

    mechanism: str
    params: dict

    def cdf(self, k_hat):
        if self.mechanism == "ucpt":
            p = self.params
            return ucpt_cdf(k_hat, p["K"], p["N"], p["gamma_bar"])
        if self.mechanism == "acptf":
            p = self.params
            return _norm_cdf((np.asarray(k_hat) - p["mean"]) / math.sqrt(p["variance"]))
        if self.mechanism == "acptd":
            return _acptd_model_cdf(self, k_hat)
        raise ValueError(f"unknown mechanism {self.mechanism!r}")

    def pdf(self, k_hat):
        if self.mechanism == "ucpt":
            p = self.params
            return ucpt_pdf(k_hat, p["K"], p["N"], p["gamma_bar"])
        if self.mechanism == "acptf":
            p = self.params
            sd = math.sqrt(p["variance"])
            return _norm_pdf((np.asarray(k_hat) - p["mean"]) / sd) / sd
        if self.mechanism == "acptd":
            return _acptd_model_pdf(self, k_hat)
        raise ValueError(f"unknown mechanism {self.mechanism!r}")

    def to_json(self) -> str:
        clean = {}
        for key, value in self.params.items():
            if isinstance(value, np.ndarray):
                clean[key] = [float(v) for v in value]
            elif isinstance(value, (list, tuple)):
                clean[key] = [float(v) for v in value]
            else:
                clean[key] = value
        return json.dumps({"mechanism": self.mechanism, "params": clean}, indent=1)


def ucpt_cdf(k_hat, K: int, N: int, gamma_bar: float):
    """Exact conditional CDF, a shifted exponential supported on
    k_hat >= -1/(N gamma_bar):  F = 1 - exp(-(1+N g k_hat)/(1+N g K))."""
    k_hat = np.asarray(k_hat, dtype=float)
    a = N * gamma_bar
    with np.errstate(over="ignore"):  # below-support lanes are masked out
        out = 1.0 - np.exp(-(1.0 + a * k_hat) / (1.0 + a * K))
    return np.where(k_hat < -1.0 / a, 0.0, out)


def ucpt_pdf(k_hat, K: int, N: int, gamma_bar: float):
    k_hat = np.asarray(k_hat, dtype=float)
    a = N * gamma_bar
    scale = a / (1.0 + a * K)
    with np.errstate(over="ignore"):  # below-support lanes are masked out
        out = scale * np.exp(-(1.0 + a * k_hat) / (1.0 + a * K))
    return np.where(k_hat < -1.0 / a, 0.0, out)


def ucpt_model(K: int, N: int, gamma_bar: float) -> DistModel:
    return DistModel("ucpt", {"K": K, "N": N, "gamma_bar": gamma_bar})


def acptf_gaussian_model(K: int, N1: int, N2: int, gamma_bar_prime: float,
                         gamma_bar_c: float) -> DistModel:
    """Gaussian surrogate: mean K, closed-form variance
    (4-pi)K/pi + (1 + N1 g'/(N2 gc)) / (pi (1 + N1 g'))."""
    g1 = N1 * gamma_bar_prime
    variance = (4.0 - math.pi) / math.pi * K \
        + (1.0 + g1 / (N2 * gamma_bar_c)) / (math.pi * (1.0 + g1))
    return DistModel("acptf", {"mean": float(K), "variance": float(variance),
                               "K": K, "N1": N1, "N2": N2,
                               "gamma_bar_prime": gamma_bar_prime,
                               "gamma_bar_c": gamma_bar_c})


# ----------------------------------------------------------------------------
# the silenced-channel perturbation Z and its Student surrogate
# ----------------------------------------------------------------------------

def acptd_fz_pdf(z, xi: float):
    """Density of the per-device CSI perturbation ratio Z under silencing:
    f_Z(z) = Gamma(3/2, -(z^2/2+1) ln(1-xi)) / ((1-xi) sqrt(2 pi (z^2/2+1)^3)).

    Even in z; integrates to 1; second moment -li(1-xi)/(1-xi).
    """
    if not 0.0 < xi < 1.0:
        raise ValueError("acptd_fz_pdf requires 0 < xi < 1")
    z = np.asarray(z, dtype=float)
    q = -math.log1p(-xi)
    base = z * z / 2.0 + 1.0
    return numerics.gamma_upper(1.5, base * q) / ((1.0 - xi) * np.sqrt(2.0 * math.pi * base**3))


def fz_second_moment(xi: float) -> float:
    """E[Z^2] = -li(1-xi)/(1-xi)."""
    return -numerics.log_integral(1.0 - xi) / (1.0 - xi)


def sample_z(rng: np.random.Generator, n: int, xi: float) -> np.ndarray:
    """Draw Z = X / sqrt(q + E): X ~ N(0,1), E ~ Exp(1), q = -ln(1-xi).

    This is Z = X/Y with Y the conditional (transmitting) normalized channel
    magnitude: Y^2 is exponential truncated to [q, inf), i.e. q + Exp(1) by
    memorylessness.
    """
    q = -math.log1p(-xi)
    x = rng.standard_normal(n)
    y2 = q + rng.standard_exponential(n)
    return x / np.sqrt(y2)


def fz_char(t: float, xi: float) -> float:
    """Characteristic function of Z at t >= 0, via the smooth identity
    E[e^{itZ}] = E[e^{-t^2/(2 Y^2)}] (Gaussian CF conditioned on Y)
               = e^q ( 2 sqrt(a) K_1(2 sqrt(a)) - int_0^q e^{-v - a/v} dv ),
    with a = t^2/2 and Y^2 = q + Exp(1).

    The Bessel term is the full half-line integral; the correction removes the
    [0, q) part, which is utterly negligible whenever a/q is large (always the
    case at the characteristic-function matching point).  This path is exact
    and cancellation-free, unlike direct oscillatory quadrature of cos(tz)f_Z,
    whose alternating partial sums hit the double-precision noise floor for
    values this small (~1e-15).
    """
    if t < 0.0:
        raise ValueError("fz_char expects t >= 0")
    if t == 0.0:
        return 1.0
    q = -math.log1p(-xi)
    a = t * t / 2.0
    x = 2.0 * math.sqrt(a)
    log_main = math.log(x) + numerics.log_bessel_k(1.0, x)
    # correction for the [0, q) gap, only when it could matter
    log_gap_bound = -a / q  # integrand bound e^{-a/v} at its largest, times q<=1
    if log_gap_bound > log_main - 34.0:
        gap, _ = integrate.quad(lambda v: math.exp(-v - a / v), 0.0, q)
        return math.exp(q) * (math.exp(log_main) - gap)
    return math.exp(q + log_main)


def _log_fz_char(t: float, xi: float) -> float:
    value = fz_char(t, xi)
    if value <= 0.0:
        raise numerics.AccuracyError(f"characteristic function non-positive at t={t}")
    return math.log(value)


@lru_cache(maxsize=4096)
def _student_fit_cached(k_prime: int, xi: float, t_match: float) -> tuple[float, float]:
    omega1 = k_prime * fz_second_moment(xi)
    log_omega2 = k_prime * _log_fz_char(t_match, xi)

    def residual(nu: float) -> float:
        arg = t_match * math.sqrt(omega1 * (nu - 2.0))
        lhs = numerics.log_bessel_k(nu / 2.0, arg) + (nu / 2.0) * math.log(arg)
        rhs = (nu / 2.0 - 1.0) * math.log(2.0) + gammaln(nu / 2.0) + log_omega2
        return lhs - rhs

    # residual -> -log_omega2 > 0 as nu -> 2+; scan for the sign change
    lo = 2.0 + 1e-6
    r_lo = residual(lo)
    if r_lo <= 0.0:
        raise numerics.AccuracyError(
            f"Student fit residual not positive at nu->2+ (k'={k_prime}, xi={xi})")
    hi = None
    r_prev, nu_prev = r_lo, lo
    for nu in 2.0 + np.geomspace(1e-5, 198.0, 60):
        r = residual(nu)
        if r <= 0.0:
            lo, hi = nu_prev, nu
            break
        r_prev, nu_prev = r, nu
    if hi is None:
        raise numerics.AccuracyError(
            f"Student fit found no sign change for nu in (2, 200] "
            f"(k'={k_prime}, xi={xi}, t={t_match})")
    nu = numerics.find_root(residual, numerics.RootBracket(lo, hi, tol=1e-11))
    scale = math.sqrt(omega1 * (nu - 2.0) / nu)
    return nu, scale


def acptd_student_fit(k_prime: int, xi: float, t_match: float = 26.0) -> tuple[float, float]:
    """Fit (nu, scale) of the scaled Student's-t surrogate of T, the sum of
    k_prime i.i.d. Z perturbations.

    The second moment pins scale^2 nu/(nu-2) = omega1 = k' E[Z^2]; nu solves
    the characteristic-function match at t = t_match (log-domain root solve
    on the Bessel-form CF).  Results are cached per (k_prime, xi, t_match).
    """
    if k_prime < 1:
        raise ValueError("acptd_student_fit requires k_prime >= 1")
    if not 0.0 < xi <= 0.5:
        raise ValueError("acptd_student_fit requires xi in (0, 0.5]")
    return _student_fit_cached(int(k_prime), float(xi), float(t_match))


# ----------------------------------------------------------------------------
# acptd conditional distribution (Student route)
# ----------------------------------------------------------------------------

def _acptd_kprime_cdf(x, k_prime: int, xi: float, stats: DetectionStats,
                      gamma_bar_c_prime: float, t_match: float):
    """CDF of the transmitting-count statistic given k' transmitters:
    k' + (scaled T) + V, by 1-D quadrature of the noise density against the
    Student CDF.

    This pairing keeps the integrand inside a finite Gaussian window (the
    Student CDF is smooth and bounded); the transposed pairing -- Student
    density against the noise CDF -- leaves power-law tails on an infinite
    interval that adaptive quadrature resolves poorly deep in the tails.
    """
    noise_scale = math.sqrt(stats.N2 * gamma_bar_c_prime)  # erfc argument scale
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if k_prime == 0:
        out = 1.0 - 0.5 * numerics.erfc(x * noise_scale)
        return out if out.shape else float(out)
    nu, scale = acptd_student_fit(k_prime, xi, t_match)
    csi_scale = scale / math.sqrt(2.0 * (stats.N1 * stats.gamma_bar_prime + 1.0))
    noise_sd = 1.0 / math.sqrt(2.0 * stats.N2 * gamma_bar_c_prime)
    lim = 9.0 * noise_sd  # truncation error below 1e-18
    out = np.empty_like(x)
    for j, xv in enumerate(x):
        shift0 = xv - k_prime

        def integrand(v, _s=shift0):
            return (_norm_pdf(v / noise_sd) / noise_sd
                    * _t_cdf((_s - v) / csi_scale, nu))

        pts = [shift0] if -lim < shift0 < lim else None
        val, _ = integrate.quad(integrand, -lim, lim, limit=400, points=pts)
        out[j] = val
    return out


def _acptd_kprime_pdf(x, k_prime: int, xi: float, stats: DetectionStats,
                      gamma_bar_c_prime: float, t_match: float):
    """Density counterpart of :func:`_acptd_kprime_cdf` (noise Gaussian
    convolved with the scaled Student density)."""
    noise_sd = 1.0 / math.sqrt(2.0 * stats.N2 * gamma_bar_c_prime)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if k_prime == 0:
        return _norm_pdf(x / noise_sd) / noise_sd
    nu, scale = acptd_student_fit(k_prime, xi, t_match)
    csi_scale = scale / math.sqrt(2.0 * (stats.N1 * stats.gamma_bar_prime + 1.0))
    out = np.empty_like(x)
    for j, xv in enumerate(x):
        def integrand(tau, _xv=xv):
            shift = _xv - k_prime - csi_scale * tau
            return _t_pdf(tau, nu) * _norm_pdf(shift / noise_sd) / noise_sd
        val, _ = integrate.quad(integrand, -np.inf, np.inf, limit=400)
        out[j] = val
    return out


def acptd_model(K: int, cfg: AcptdConfig, stats: DetectionStats,
                t_match: float = 26.0) -> DistModel:
    """Bundle the per-k' Student fits and binomial weights for the dynamic
    mechanism conditioned on K active devices."""
    xi = cfg.xi
    kps = np.arange(K + 1)
    weights = _binom_pmf(kps, K, 1.0 - xi)
    nus, scales = [], []
    for kp in kps:
        if kp == 0:
            nus.append(float("nan"))
            scales.append(float("nan"))
        else:
            nu, scale = acptd_student_fit(int(kp), xi, t_match)
            nus.append(nu)
            scales.append(scale)
    return DistModel("acptd", {
        "K": int(K), "xi": xi, "t_match": t_match,
        "weights": weights, "nu": np.asarray(nus), "scale": np.asarray(scales),
        "gamma_bar_c_prime": cfg.gamma_bar_c_prime,
        "N1": stats.N1, "N2": stats.N2,
        "gamma_bar_prime": stats.gamma_bar_prime,
        "gamma_bar_c": stats.gamma_bar_c,
    })


def _model_stats(model: DistModel) -> tuple[DetectionStats, float, float, float]:
    p = model.params
    stats = DetectionStats(N1=p["N1"], N2=p["N2"],
                           gamma_bar_prime=p["gamma_bar_prime"],
                           gamma_bar_c=p["gamma_bar_c"])
    return stats, p["xi"], p["gamma_bar_c_prime"], p["t_match"]


def _acptd_model_cdf(model: DistModel, k_hat):
    stats, xi, gcp, t_match = _model_stats(model)
    x = _silence_map(k_hat, xi)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = np.zeros_like(x)
    for kp, w in enumerate(model.params["weights"]):
        total += w * _acptd_kprime_cdf(x, kp, xi, stats, gcp, t_match)
    return total if total.shape != (1,) or np.ndim(k_hat) else float(total[0])


def _acptd_model_pdf(model: DistModel, k_hat):
    stats, xi, gcp, t_match = _model_stats(model)
    x = _silence_map(k_hat, xi)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = np.zeros_like(x)
    for kp, w in enumerate(model.params["weights"]):
        total += w * _acptd_kprime_pdf(x, kp, xi, stats, gcp, t_match)
    total *= _silence_map_slope(xi)
    return total if total.shape != (1,) or np.ndim(k_hat) else float(total[0])


def acptd_cdf(k_hat, K: int, cfg: AcptdConfig, stats: DetectionStats,
              t_match: float = 26.0):
    """Conditional CDF of the silence-corrected relaxed estimate given K:
    binomial mixture over the transmitting count of the per-k' Student-route
    CDFs, with the correction inverted by its affine map.  The k'=0 term is
    the pure-noise Gaussian."""
    return acptd_model(K, cfg, stats, t_match).cdf(k_hat)


# ----------------------------------------------------------------------------
# exact-distribution oracles (desk scale, Monte-Carlo-integrated)
# ----------------------------------------------------------------------------

_DESK_Q = 12
_DESK_K = 6


def _desk_guard(Q: int, K: int) -> None:
    if Q > _DESK_Q or K > _DESK_K:
        raise ValueError(
            f"exact-CDF oracle is desk-scale only (Q <= {_DESK_Q}, K <= {_DESK_K}); "
            f"got Q={Q}, K={K}")


def oracle_acptf_exact_cdf(k_hat, K: int, deployment: Deployment,
                           params: CptParams, samples: int = 20000,
                           seed: int = 0):
    """Monte-Carlo integration of the exact fixed-power conditional CDF.

    The K-dimensional Rayleigh integral is estimated by sampling the Rayleigh
    vector (noise and CSI-error Gaussians are integrated analytically into an
    erfc), and the combinatorial average enumerates every K-subset
    explicitly.  Returns (cdf, stderr) arrays matching k_hat.
    """
    _desk_guard(deployment.Q, K)
    rng = np.random.default_rng(seed)
    k_hat = np.atleast_1d(np.asarray(k_hat, dtype=float))
    gamma = deployment.gamma_bar_i
    upsilon = 2.0 / math.sqrt(
        math.pi * (1.0 + 1.0 / (params.N1 * deployment.gamma_bar_prime)))
    gamma_c = params.power.gamma_bar

    if K == 0:
        phi = math.sqrt(1.0 / (params.N2 * gamma_c))
        cdf = 1.0 - 0.5 * numerics.erfc(k_hat / (upsilon * phi))
        return cdf, np.zeros_like(cdf)

    subsets = list(itertools.combinations(range(deployment.Q), K))
    mean_acc = np.zeros_like(k_hat)
    var_acc = np.zeros_like(k_hat)
    for subset in subsets:
        idx = np.asarray(subset)
        ray_scale = np.sqrt(1.0 + 1.0 / (params.N1 * gamma[idx]))
        phi = math.sqrt(1.0 / (params.N2 * gamma_c) + np.sum(1.0 / gamma[idx]) / params.N1)
        u_sum = rng.rayleigh(scale=ray_scale, size=(samples, K)).sum(axis=1)
        args = k_hat[None, :] / (upsilon * phi) - u_sum[:, None] / (math.sqrt(2.0) * phi)
        vals = 0.5 * numerics.erfc(args)
        mean_acc += vals.mean(axis=0)
        var_acc += vals.var(axis=0, ddof=1) / samples
    M = len(subsets)
    cdf = 1.0 - mean_acc / M
    stderr = np.sqrt(var_acc) / M
    return cdf, stderr


def oracle_acptd_exact_cdf(k_hat, k_prime: int, deployment: Deployment,
                           params: CptParams, samples: int = 20000,
                           seed: int = 0):
    """Monte-Carlo integration of the exact dynamic-power conditional CDF
    given the transmitting count k'.

    Per transmitting device the CSI perturbation is Z_i/sqrt(2(N1 gamma_i+1))
    with Z_i the truncated-channel ratio; the noise integrates analytically
    into an erfc.  All k'-subsets are enumerated explicitly.  Returns
    (cdf, stderr) arrays matching k_hat.
    """
    _desk_guard(deployment.Q, k_prime)
    rng = np.random.default_rng(seed)
    k_hat = np.atleast_1d(np.asarray(k_hat, dtype=float))
    cfg = configure_acptd(deployment, params)
    noise_scale = math.sqrt(params.N2 * cfg.gamma_bar_c_prime)
    gamma = deployment.gamma_bar_i

    if k_prime == 0:
        cdf = 1.0 - 0.5 * numerics.erfc(k_hat * noise_scale)
        return cdf, np.zeros_like(cdf)

    subsets = list(itertools.combinations(range(deployment.Q), k_prime))
    mean_acc = np.zeros_like(k_hat)
    var_acc = np.zeros_like(k_hat)
    for subset in subsets:
        idx = np.asarray(subset)
        csi_scale = 1.0 / np.sqrt(2.0 * (params.N1 * gamma[idx] + 1.0))
        z = np.stack([sample_z(rng, samples, params.xi) for _ in idx], axis=1)
        shift = (z * csi_scale[None, :]).sum(axis=1)
        args = (k_hat[None, :] - k_prime - shift[:, None]) * noise_scale
        vals = 1.0 - 0.5 * numerics.erfc(args)
        mean_acc += vals.mean(axis=0)
        var_acc += vals.var(axis=0, ddof=1) / samples
    M = len(subsets)
    cdf = mean_acc / M
    stderr = np.sqrt(var_acc) / M
    return cdf, stderr


# ----------------------------------------------------------------------------
# variance formulas and NI-band success probabilities
# ----------------------------------------------------------------------------

def _acptd_gamma_c_prime(xi: float, gamma_bar_c: float) -> float:
    """rho/sigma2 implied by the silencing design at this xi."""
    return -gamma_bar_c * (1.0 - xi) / numerics.log_integral(1.0 - xi)


def acptd_map_config(xi: float, gamma_bar_c: float) -> AcptdConfig:
    """Deployment-free AcptdConfig carrying just the scalars the theoretical
    distribution needs (rho and the thresholds are per-deployment and left
    unset)."""
    if not 0.0 < xi < 1.0:
        raise ValueError("acptd_map_config requires 0 < xi < 1")
    return AcptdConfig(
        rho=float("nan"), mu_i=np.empty(0), vartheta_i=np.empty(0),
        psi=1.0 + xi**2 / (1.0 - xi) ** 4,
        gamma_bar_c_prime=_acptd_gamma_c_prime(xi, gamma_bar_c), xi=xi)


def variance_formulas(mechanism: str, k: int, params: CptParams,
                      stats: DetectionStats | None = None):
    """Closed-form variance of the relaxed estimate.

    ucpt  : exact, K^2 + 2K/(N gamma) + 1/(N gamma)^2.
    acptf : homogenized form (k = K active devices).
    acptd : homogenized form conditioned on k = K' transmitters; returns
            (variance, bound) and raises if the bound is violated.
    """
    if mechanism == "ucpt":
        a = params.N * params.power.gamma_bar
        return float(k**2 + 2.0 * k / a + 1.0 / a**2)
    if stats is None:
        raise ValueError(f"{mechanism} variance needs DetectionStats")
    if mechanism == "acptf":
        return acptf_gaussian_model(
            k, stats.N1, stats.N2, stats.gamma_bar_prime, stats.gamma_bar_c
        ).params["variance"]
    if mechanism == "acptd":
        xi = params.xi
        if not 0.0 < xi < 1.0:
            raise ValueError("acptd variance requires 0 < xi < 1")
        psi = 1.0 + xi**2 / (1.0 - xi) ** 4
        gcp = _acptd_gamma_c_prime(xi, stats.gamma_bar_c)
        g1 = stats.N1 * stats.gamma_bar_prime
        var = psi / 2.0 * (
            1.0 / (stats.N2 * gcp) + fz_second_moment(xi) * k / (1.0 + g1))
        bound = psi / 2.0 * math.log(1.0 - 1.0 / math.log1p(-xi)) * k / (1.0 + g1) \
            + psi / (2.0 * stats.N2 * gcp)
        if var > bound:
            raise RuntimeError(
                f"acptd variance {var} exceeds its bound {bound} (k'={k}, xi={xi})")
        return var, bound
    raise ValueError(f"unknown mechanism {mechanism!r}")


def success_probability_theory(mechanism: str, K: int, params: CptParams,
                               stats: DetectionStats | None = None,
                               rounding: str = "ni") -> float:
    """NI-band success probability F(K+1/2) - F(K-1/2) under the mechanism's
    theoretical distribution.  ML success has no closed form (Monte Carlo
    only)."""
    if rounding != "ni":
        raise ValueError("closed-form success probability exists only for NI rounding")
    if mechanism == "ucpt":
        model = ucpt_model(K, params.N, params.power.gamma_bar)
    elif mechanism == "acptf":
        if stats is None:
            raise ValueError("acptf needs DetectionStats")
        model = acptf_gaussian_model(K, stats.N1, stats.N2,
                                     stats.gamma_bar_prime, stats.gamma_bar_c)
    elif mechanism == "acptd":
        if stats is None:
            raise ValueError("acptd needs DetectionStats")
        model = acptd_model(K, acptd_map_config(params.xi, stats.gamma_bar_c), stats)
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    hi = model.cdf(K + 0.5)
    lo = model.cdf(K - 0.5)
    return float(hi - lo)


# ----------------------------------------------------------------------------
# ML likelihood families
# ----------------------------------------------------------------------------

class UcptMlFamily:
    """Shifted-exponential likelihood of the relaxed estimate."""

    def __init__(self, params: CptParams):
        self.a = params.N * params.power.gamma_bar

    def loglikelihood(self, ks, k_real: float):
        ks = np.asarray(ks, dtype=float)
        denom = 1.0 + self.a * ks
        return -np.log(denom) - (1.0 + self.a * k_real) / denom


class AcptfMlFamily:
    """Gaussian likelihood with the closed-form, k-dependent variance."""

    def __init__(self, params: CptParams, stats: DetectionStats):
        g1 = stats.N1 * stats.gamma_bar_prime
        self.floor = (1.0 + g1 / (stats.N2 * stats.gamma_bar_c)) / (math.pi * (1.0 + g1))
        self.slope = (4.0 - math.pi) / math.pi

    def loglikelihood(self, ks, k_real: float):
        ks = np.asarray(ks, dtype=float)
        var = self.slope * ks + self.floor
        return -0.5 * np.log(var) - (k_real - ks) ** 2 / (2.0 * var)


class AcptdMlFamily:
    """Binomial mixture of per-k' perturbation densities, evaluated from
    precomputed grids (built lazily per k', cached on the instance).

    The densities are in the transmitting-count coordinate; the affine
    silence-correction map contributes only a k-independent Jacobian, so the
    returned loglikelihood is exact up to a k-independent constant — all that
    ML rounding needs.
    """

    #: grid half-width and step in the transmitting-count coordinate
    GRID_HALF = 36.0
    GRID_STEP = 0.01

    def __init__(self, params: CptParams, stats: DetectionStats,
                 t_match: float = 26.0):
        self.xi = params.xi
        self.stats = stats
        self.t_match = t_match
        self.gamma_bar_c_prime = _acptd_gamma_c_prime(params.xi, stats.gamma_bar_c)
        self.noise_sd = 1.0 / math.sqrt(2.0 * stats.N2 * self.gamma_bar_c_prime)
        self.delta_grid = np.arange(-self.GRID_HALF, self.GRID_HALF + self.GRID_STEP,
                                    self.GRID_STEP)
        self._density_grids: dict[int, np.ndarray] = {}

    def _build_grid(self, k_prime: int) -> np.ndarray:
        """Density of (scaled T + V) on delta_grid by direct numerical
        convolution: dense linear nodes through the sharp Student core plus
        logarithmic tail nodes."""
        if k_prime == 0:
            return _norm_pdf(self.delta_grid / self.noise_sd) / self.noise_sd
        nu, scale = acptd_student_fit(k_prime, self.xi, self.t_match)
        csi_scale = scale / math.sqrt(
            2.0 * (self.stats.N1 * self.stats.gamma_bar_prime + 1.0))
        t_sd = csi_scale * math.sqrt(nu / (nu - 2.0))
        u_lin = 10.0 * t_sd
        lin = np.linspace(-u_lin, u_lin, 501)
        tail = np.geomspace(u_lin, self.GRID_HALF + 8.0 * self.noise_sd, 220)[1:]
        u = np.concatenate([-tail[::-1], lin, tail])
        w = np.empty_like(u)
        w[1:-1] = (u[2:] - u[:-2]) / 2.0
        w[0] = u[1] - u[0]
        w[-1] = u[-1] - u[-2]
        ft = _t_pdf(u / csi_scale, nu) / csi_scale
        # convolution against the noise Gaussian, vectorized over the grid
        diff = self.delta_grid[:, None] - u[None, :]
        dens = (np.exp(-0.5 * (diff / self.noise_sd) ** 2)
                / (self.noise_sd * math.sqrt(2.0 * math.pi))) @ (w * ft)
        return dens

    def density_grid(self, k_prime: int) -> np.ndarray:
        if k_prime not in self._density_grids:
            self._density_grids[k_prime] = self._build_grid(k_prime)
        return self._density_grids[k_prime]

    def _kprime_density_at(self, k_prime: int, x: float) -> float:
        return float(np.interp(x - k_prime, self.delta_grid,
                               self.density_grid(k_prime)))

    def loglikelihood(self, ks, k_real: float):
        ks = np.asarray(ks, dtype=int)
        x = float(_silence_map(k_real, self.xi))
        dens_at = np.array([self._kprime_density_at(kp, x)
                            for kp in range(int(ks.max()) + 1)])
        out = np.empty(len(ks))
        for j, k in enumerate(ks):
            kps = np.arange(k + 1)
            mix = float(_binom_pmf(kps, int(k), 1.0 - self.xi) @ dens_at[:k + 1])
            out[j] = np.log(mix) if mix > 0.0 else -np.inf
        return out


def ml_family(mechanism: str, params: CptParams, stats: DetectionStats | None = None):
    """Likelihood family for ML rounding of the given mechanism."""
    if mechanism == "ucpt":
        return UcptMlFamily(params)
    if stats is None:
        raise ValueError(f"{mechanism} ML family needs DetectionStats")
    if mechanism == "acptf":
        return AcptfMlFamily(params, stats)
    if mechanism == "acptd":
        return AcptdMlFamily(params, stats)
    raise ValueError(f"unknown mechanism {mechanism!r}")
