"""Slot-level simulation of the three coordinated pilot transmission (CPT)
mechanisms and the relaxed/rounded estimators of the activity level K.

Mechanisms
----------
ucpt   : devices transmit a shared pilot right away with statistical inverse
         power control p_i = p_bar/beta_i; the coordinator sees one aggregate
         Rayleigh coefficient.
acptf  : a downlink broadcast pilot lets each device pre-rotate the uplink
         pilot by its estimated channel phase, so per-device contributions
         add coherently in the real part.
acptd  : the downlink estimate additionally drives dynamic inverse power
         control rho/|h_hat_i|^2; devices whose |h_hat_i|^2 falls below a
         threshold mu_i stay silent (probability xi by design), and the
         estimator adds a posterior-mean correction for them.

The relaxed estimate k_real is a real number; round_ni / round_ml /
detect_ucpt_optimal turn it (or the raw observation) into an integer in
{0..Q}.  All simulators are pure given (deployment, params, rng stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import numerics
from .deployment import Deployment, PowerConfig

__all__ = [
    "AcptdConfig",
    "CptParams",
    "Estimate",
    "MECHANISMS",
    "SlotRealization",
    "configure_acptd",
    "detect_ucpt_optimal",
    "estimate_acptd",
    "estimate_acptf",
    "estimate_ucpt",
    "round_ml",
    "round_ni",
    "silence_correction",
    "simulate_acptd_slot",
    "simulate_acptf_slot",
    "simulate_ucpt_slot",
]

MECHANISMS = ("ucpt", "acptf", "acptd")


@dataclass(frozen=True)
class CptParams:
    """Frame layout, silencing probability and pilots for one CPT slot.

    N  : total CPT symbols; N2 = N - N1 uplink symbols for the assisted
         mechanisms (ucpt uses all N).
    N1 : downlink training symbols (assisted mechanisms).
    xi : probability that an active device is silenced under acptd.
    pilot_s : unit-modulus shared pilot; length N for ucpt, N2 for acpt.
              None means the all-ones sequence of the required length.
    pilot_v : downlink pilot, length N1 with ||v||^2 = N1; None = all-ones.
    """

    N: int = 6
    N1: int = 2
    xi: float = 0.01
    pilot_s: np.ndarray | None = None
    pilot_v: np.ndarray | None = None
    power: PowerConfig = field(default_factory=PowerConfig)

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 1 <= self.N1 < self.N:
            raise ValueError("N1 must satisfy 1 <= N1 < N")
        if not 0.0 <= self.xi < 1.0:
            raise ValueError("xi must be in [0, 1)")
        if self.pilot_s is not None:
            s = np.asarray(self.pilot_s)
            if not np.allclose(np.abs(s), 1.0, rtol=0, atol=1e-12):
                raise ValueError("pilot_s must be unit modulus, |s[n]| = 1")
        if self.pilot_v is not None:
            v = np.asarray(self.pilot_v)
            if len(v) != self.N1:
                raise ValueError("pilot_v must have length N1")
            if not np.isclose(np.vdot(v, v).real, self.N1):
                raise ValueError("pilot_v must satisfy ||v||^2 = N1")

    @property
    def N2(self) -> int:
        return self.N - self.N1


def _pilot(params: CptParams, length: int) -> np.ndarray:
    """Shared pilot of the requested length (all-ones when unset)."""
    if params.pilot_s is None:
        return np.ones(length, dtype=complex)
    s = np.asarray(params.pilot_s, dtype=complex)
    if len(s) != length:
        raise ValueError(f"pilot_s has length {len(s)}, this mechanism needs {length}")
    return s


@dataclass(frozen=True)
class AcptdConfig:
    """Derived constants of the dynamic-power mechanism.

    rho       : uplink power coefficient; chosen so that, with the silencing
                thresholds below, the average transmit power matches the
                statistical inverse power control p_bar/beta_i.
    mu_i      : per-device silencing threshold on |h_hat_i|^2; the silence
                probability is exactly xi for every device.
    vartheta_i: E[|h_hat_i|^2] = beta_i (1 + 1/(N1 gamma_bar_i)).
    psi       : variance inflation of the silence-corrected estimate,
                1 + xi^2/(1-xi)^4.
    gamma_bar_c_prime : rho/sigma2, the uplink receive-SNR scale.
    xi        : the silencing probability the thresholds were derived for.
    """

    rho: float
    mu_i: np.ndarray
    vartheta_i: np.ndarray
    psi: float
    gamma_bar_c_prime: float
    xi: float = float("nan")


@dataclass(frozen=True)
class SlotRealization:
    """Everything drawn for one slot of one mechanism."""

    mechanism: str
    active_set: np.ndarray
    y: np.ndarray
    transmitting_set: np.ndarray | None = None  # acptd only
    silent_set: np.ndarray | None = None        # acptd only
    channels: np.ndarray | None = None          # h_i per active device
    h_hat: np.ndarray | None = None             # estimates (assisted)
    h_err: np.ndarray | None = None             # estimation errors (assisted)
    h_err_rotated: np.ndarray | None = None     # phase-projected error used in y (acptf)
    h_aggregate: complex | None = None          # aggregate coefficient (ucpt)


@dataclass(frozen=True)
class Estimate:
    """A relaxed estimate and its integer rounding."""

    mechanism: str
    k_real: float
    k_int: int
    rounding: str

    def __post_init__(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.rounding not in ("ni", "ml", "optimal"):
            raise ValueError(f"unknown rounding {self.rounding!r}")


def _cn(rng: np.random.Generator, var: float | np.ndarray, shape) -> np.ndarray:
    """Circular complex Gaussian draw(s) with the given variance."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return np.sqrt(np.asarray(var) / 2.0) * (re + 1j * im)


# ----------------------------------------------------------------------------
# U-CPT
# ----------------------------------------------------------------------------

def simulate_ucpt_slot(deployment: Deployment, active_set: np.ndarray,
                       params: CptParams, rng: np.random.Generator) -> SlotRealization:
    """One unassisted slot: y[n] = sqrt(K p_bar) h' s[n] + w[n].

    With inverse power control every active device arrives at power p_bar, so
    the aggregate coefficient h' ~ CN(0, 1) is quasi-static across the slot.
    """
    K = len(active_set)
    s = _pilot(params, params.N)
    p_bar = params.power.p_bar_lin
    h_agg = complex(_cn(rng, 1.0, ()))
    w = _cn(rng, params.power.sigma2_lin, params.N)
    y = np.sqrt(K * p_bar) * h_agg * s + w
    return SlotRealization(
        mechanism="ucpt", active_set=np.asarray(active_set), y=y, h_aggregate=h_agg,
    )


def estimate_ucpt(y: np.ndarray, params: CptParams) -> float:
    """Relaxed estimate from the sample variance of the matched filter output:
    (|s^H y|^2/N^2 - sigma2/N)/p_bar.  Can be (slightly) negative.
    """
    s = _pilot(params, params.N)
    N = params.N
    stat = np.abs(np.vdot(s, y)) ** 2 / N**2
    return float((stat - params.power.sigma2_lin / N) / params.power.p_bar_lin)


def ucpt_loglik_metric(k, matched_energy: float, params: CptParams):
    """Log-likelihood of hypothesis K=k given |s^H y|^2, up to a k-independent
    constant.

    Under hypothesis k the observation is zero-mean complex Gaussian with
    covariance k p_bar s s^H + sigma2 I; its log-density reduces (after
    dropping terms common to every k) to
        -log(1 + N gamma k) + (k gamma / (1 + N gamma k)) |s^H y|^2/sigma2.
    """
    k = np.asarray(k, dtype=float)
    gamma = params.power.gamma_bar
    t = matched_energy / params.power.sigma2_lin
    a = 1.0 + params.N * gamma * k
    return -np.log(a) + (k * gamma / a) * t


def detect_ucpt_optimal(y: np.ndarray, params: CptParams, Q: int) -> int:
    """Optimal (max-likelihood) integer detector, argmax over k in {0..Q}.

    Evaluated in log-domain; ties break toward the smaller k (np.argmax
    returns the first maximum).  y = 0 yields k = 0: the zero-mean Gaussian
    density at the origin is largest under the smallest-variance hypothesis.
    """
    s = _pilot(params, params.N)
    u2 = float(np.abs(np.vdot(s, y)) ** 2)
    ks = np.arange(Q + 1)
    return int(np.argmax(ucpt_loglik_metric(ks, u2, params)))


# ----------------------------------------------------------------------------
# A-CPT-F
# ----------------------------------------------------------------------------

def _draw_channel_and_estimate(deployment, active_set, params, rng):
    """Per active device: true channel h, estimation error h_tilde, estimate
    h_hat = h + h_tilde with h_tilde ~ CN(0, 1/(N1 varrho))."""
    beta = deployment.beta[np.asarray(active_set)]
    h = _cn(rng, beta, beta.shape)
    h_err = _cn(rng, 1.0 / (params.N1 * params.power.varrho), beta.shape)
    return beta, h, h_err, h + h_err


def simulate_acptf_slot(deployment: Deployment, active_set: np.ndarray,
                        params: CptParams, rng: np.random.Generator, *,
                        explicit_downlink: bool = False) -> SlotRealization:
    """One fixed-power assisted slot.

    Each active device rotates the shared pilot by the phase of its downlink
    channel estimate, so its contribution arrives as
    sqrt(p_bar/beta_i)(|h_hat_i| - h_tilde_i') with h_tilde_i' distributed as
    the estimation error.  By default h_tilde_i' is a fresh independent
    CN(0, 1/(N1 varrho)) draw (the rotation-invariance shortcut); with
    ``explicit_downlink`` the downlink pilot, the per-device MMSE-style
    estimate and the literal phase rotation are simulated instead.
    """
    active_set = np.asarray(active_set)
    s = _pilot(params, params.N2)
    p_bar = params.power.p_bar_lin

    if explicit_downlink:
        beta = deployment.beta[active_set]
        h = _cn(rng, beta, beta.shape)
        v = (np.ones(params.N1, dtype=complex) if params.pilot_v is None
             else np.asarray(params.pilot_v, dtype=complex))
        # downlink receive + pilot-matched combining at each device
        w_dl = _cn(rng, params.power.sigma2_lin, (len(active_set), params.N1))
        h_err = (w_dl @ v.conj()) / (np.sqrt(params.power.p_lin) * params.N1)
        h_hat = h + h_err
        phase = np.exp(-1j * np.angle(h_hat))
        amp = np.sqrt(p_bar / beta) * h * phase
        h_err_rot = h_err * phase
    else:
        beta, h, h_err, h_hat = _draw_channel_and_estimate(
            deployment, active_set, params, rng)
        h_err_rot = _cn(rng, 1.0 / (params.N1 * params.power.varrho), beta.shape)
        amp = np.sqrt(p_bar / beta) * (np.abs(h_hat) - h_err_rot)

    w = _cn(rng, params.power.sigma2_lin, params.N2)
    y = amp.sum() * s + w
    return SlotRealization(
        mechanism="acptf", active_set=active_set, y=y, channels=h,
        h_hat=h_hat if not explicit_downlink else h_hat,
        h_err=h_err, h_err_rotated=h_err_rot,
    )


def estimate_acptf(y: np.ndarray, params: CptParams, gamma_bar_prime: float) -> float:
    """2 Re{s^H y / N2} / sqrt(pi p_bar (1 + 1/(N1 gamma_bar_prime)))."""
    if gamma_bar_prime <= 0.0:
        raise ValueError("gamma_bar_prime must be positive")
    s = _pilot(params, params.N2)
    zeta = np.vdot(s, y) / params.N2
    mean_scale = np.sqrt(
        np.pi * params.power.p_bar_lin * (1.0 + 1.0 / (params.N1 * gamma_bar_prime)))
    return float(2.0 * zeta.real / mean_scale)


# ----------------------------------------------------------------------------
# A-CPT-D
# ----------------------------------------------------------------------------

def configure_acptd(deployment: Deployment, params: CptParams) -> AcptdConfig:
    """Power coefficient and silencing thresholds for the dynamic mechanism.

    rho = -p_bar (1-xi)/li(1-xi) and mu_i = -vartheta_i ln(1-xi) make the
    per-device silence probability exactly xi while keeping the average
    transmit power at p_bar/beta_i (in the accurate-CSI limit).  xi = 0 is
    rejected: the threshold vanishes and rho degenerates (li(1) -> -inf).
    """
    xi = params.xi
    if not 0.0 < xi < 1.0:
        raise ValueError("acptd requires 0 < xi < 1 (xi = 0 leaves rho undefined)")
    li = numerics.log_integral(1.0 - xi)
    rho = -params.power.p_bar_lin * (1.0 - xi) / li
    vartheta = deployment.beta * (1.0 + 1.0 / (params.N1 * deployment.gamma_bar_i))
    mu = -vartheta * np.log1p(-xi)
    psi = 1.0 + xi**2 / (1.0 - xi) ** 4
    return AcptdConfig(
        rho=float(rho), mu_i=mu, vartheta_i=vartheta, psi=float(psi),
        gamma_bar_c_prime=float(rho / params.power.sigma2_lin), xi=float(xi),
    )


def simulate_acptd_slot(deployment: Deployment, active_set: np.ndarray,
                        params: CptParams, cfg: AcptdConfig,
                        rng: np.random.Generator) -> SlotRealization:
    """One dynamic-power assisted slot.

    Active devices with |h_hat_i|^2 >= mu_i transmit with power rho/|h_hat_i|^2
    and pre-rotate by their estimate; the rest stay silent.  The received
    sequence collapses to y[n] = (sqrt(rho) K' + phi) s[n] + w[n] with
    phi = sqrt(rho) sum_{i in K'} h_hat_i^* h_tilde_i / |h_hat_i|^2.
    """
    active_set = np.asarray(active_set)
    s = _pilot(params, params.N2)
    beta, h, h_err, h_hat = _draw_channel_and_estimate(
        deployment, active_set, params, rng)
    mu = cfg.mu_i[active_set]
    transmit = np.abs(h_hat) ** 2 >= mu
    k_prime = int(np.count_nonzero(transmit))
    phi = np.sqrt(cfg.rho) * np.sum(
        (np.conj(h_hat[transmit]) * h_err[transmit]) / np.abs(h_hat[transmit]) ** 2)
    w = _cn(rng, params.power.sigma2_lin, params.N2)
    y = (np.sqrt(cfg.rho) * k_prime + phi) * s + w
    return SlotRealization(
        mechanism="acptd", active_set=active_set, y=y,
        transmitting_set=active_set[transmit], silent_set=active_set[~transmit],
        channels=h, h_hat=h_hat, h_err=h_err,
    )


def _posterior_truncation(k_prime: float, xi: float) -> float:
    """Truncation depth K_l of the silenced-count posterior: the number of
    silenced-device hypotheses that carries (essentially) all posterior mass.

    K_l solves I_xi(1 + K_l, 1 + k') = xi, where I is the regularized
    incomplete beta; the left side is strictly decreasing in K_l, so the root
    is unique.  k' = 0 gives K_l = 0 exactly.
    """
    def f(kl: float) -> float:
        return numerics.reg_inc_beta(xi, 1.0 + kl, 1.0 + k_prime) - xi

    if f(0.0) <= 0.0:
        return 0.0
    hi = 1.0
    while f(hi) > 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise numerics.AccuracyError("posterior truncation bracket blew up")
    return numerics.find_root(f, numerics.RootBracket(0.0, hi, tol=1e-12))


def _log_binom(x: float, m: float) -> float:
    """log of the generalized binomial coefficient C(x, m) via gammaln."""
    return gammaln(x + 1.0) - gammaln(m + 1.0) - gammaln(x - m + 1.0)


def silence_correction(k_prime_real: float, xi: float, mode: str = "corollary") -> float:
    """Posterior-mean estimate of the silenced-device count K''.

    corollary : xi (1 + k') / (1-xi)^2 — the large-truncation limit of the
                exact posterior mean; accurate already for small xi.
    full_mmse : the exact truncated posterior mean, evaluated in closed form
                (hypergeometric representation) at the real truncation depth
                K_l solved from the posterior-mass condition.  The posterior
                is over silenced counts given k' observed transmitters, so
                negative relaxed observations are clamped to 0 here.
    """
    if not 0.0 < xi < 1.0:
        raise ValueError("silence_correction requires 0 < xi < 1")
    if mode == "corollary":
        return xi * (1.0 + k_prime_real) / (1.0 - xi) ** 2
    if mode != "full_mmse":
        raise ValueError(f"unknown mode {mode!r}")

    kp = max(float(k_prime_real), 0.0)
    kl = _posterior_truncation(kp, xi)
    f1 = numerics.hyp2f1(1.0 + kl, -kp, 2.0 + kl, xi)
    f2 = numerics.hyp2f1(1.0 + kl, -kp, 3.0 + kl, xi)
    bracket = (
        (xi - 1.0) * (kl + 1.0) * np.exp(_log_binom(1.0 + kl + kp, 1.0 + kl)) * f1
        - np.exp(_log_binom(2.0 + kl + kp, 2.0 + kl)) * xi * f2
    )
    return float(xi / (1.0 - xi) ** 2 * (xi**kl * bracket + kp + 1.0))


def estimate_acptd(y: np.ndarray, cfg: AcptdConfig, params: CptParams,
                   mode: str = "corollary") -> float:
    """Relaxed estimate K' + K'': transmitting-count statistic plus the
    posterior-mean correction for silenced devices."""
    s = _pilot(params, params.N2)
    k_prime_real = float(np.vdot(s, y).real / (params.N2 * np.sqrt(cfg.rho)))
    return k_prime_real + silence_correction(k_prime_real, params.xi, mode)


# ----------------------------------------------------------------------------
# rounding
# ----------------------------------------------------------------------------

def round_ni(k_real, Q: int):
    """Nearest integer in {0..Q}; exact halves round up."""
    k = np.floor(np.asarray(k_real, dtype=float) + 0.5)
    k = np.clip(k, 0, Q)
    if np.ndim(k_real) == 0:
        return int(k)
    return k.astype(np.int64)


def round_ml(k_real: float, mechanism: str, dist_context, Q: int, *,
             window: int | None = None) -> int:
    """Argmax over k in {0..Q} of the conditional density of the relaxed
    estimate under K=k; ties break toward the smaller k.

    ``dist_context`` is a likelihood family from :mod:`cptdet.theory`
    (an object with ``loglikelihood(ks, k_real)``).  ``window`` restricts the
    search to NI(k_real) +/- window — an accelerator for large Q; the default
    searches every k.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    if window is None:
        ks = np.arange(Q + 1)
    else:
        center = round_ni(k_real, Q)
        ks = np.arange(max(0, center - window), min(Q, center + window) + 1)
    ll = dist_context.loglikelihood(ks, float(k_real))
    return int(ks[np.argmax(ll)])
