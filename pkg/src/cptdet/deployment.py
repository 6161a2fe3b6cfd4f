"""Device deployment generation and large-scale channel statistics.

Devices are dropped uniformly over an annulus around the coordinator; the
log-distance pathloss fixes each device's average channel power gain beta_i,
and the power configuration turns those into the downlink pilot SNRs
gamma_bar_i = varrho * beta_i and their harmonic mean gamma_bar_prime that the
estimators consume.  A generated Deployment is immutable and can be shared
freely across parallel workers; it serializes to JSON for bit-exact replay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Deployment",
    "PowerConfig",
    "draw_active_set",
    "generate_deployment",
    "harmonic_mean_snr",
    "homogeneous_deployment",
    "nominal_harmonic_snr",
    "pathloss_db",
]

# log-distance pathloss at d kilometers: 130 + 37.6 log10(d) dB
_PL_INTERCEPT_DB = 130.0
_PL_SLOPE_DB = 37.6


def _dbm_to_mw(x_dbm: float) -> float:
    return 10.0 ** (x_dbm / 10.0)


@dataclass(frozen=True)
class PowerConfig:
    """Transmit/noise powers in dBm and the derived linear ratios.

    p        : coordinator (downlink pilot) transmit power
    p_bar    : target average receive power at the coordinator
    sigma2   : noise power

    All internal computation is linear-scale (mW); conversion happens here,
    exactly once.  ``gamma_bar`` is the target average receive SNR
    p_bar/sigma2 (also written gamma_bar_c), ``varrho`` is p/sigma2.
    """

    p: float = 30.0
    p_bar: float = -110.0
    sigma2: float = -120.0

    def __post_init__(self) -> None:
        for name in ("p", "p_bar", "sigma2"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"power field {name} must be finite")

    @property
    def p_lin(self) -> float:
        return _dbm_to_mw(self.p)

    @property
    def p_bar_lin(self) -> float:
        return _dbm_to_mw(self.p_bar)

    @property
    def sigma2_lin(self) -> float:
        return _dbm_to_mw(self.sigma2)

    @property
    def varrho(self) -> float:
        """Downlink pilot SNR scale p/sigma2 (linear)."""
        return self.p_lin / self.sigma2_lin

    @property
    def gamma_bar(self) -> float:
        """Target average receive SNR p_bar/sigma2 (linear)."""
        return self.p_bar_lin / self.sigma2_lin

    # the same ratio, under the name used on the uplink combining side
    gamma_bar_c = gamma_bar

    def to_dict(self) -> dict:
        return {"p": self.p, "p_bar": self.p_bar, "sigma2": self.sigma2}


@dataclass(frozen=True)
class Deployment:
    """One realization of device positions and their slow-fading statistics.

    distances are in kilometers.  gamma_bar_prime is the harmonic mean of the
    per-device SNRs over ALL Q devices (not only the active ones):
        gamma_bar_prime = (Q^-1 sum_i 1/gamma_bar_i)^-1.
    """

    Q: int
    distances: np.ndarray
    beta: np.ndarray
    gamma_bar_i: np.ndarray = field(repr=False)
    gamma_bar_prime: float = field(repr=False)
    power: PowerConfig = field(default_factory=PowerConfig)
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if len(self.distances) != self.Q or len(self.beta) != self.Q:
            raise ValueError("distances/beta length must equal Q")
        if np.any(self.beta <= 0.0):
            raise ValueError("all beta must be positive")

    def to_json(self, path) -> None:
        payload = {
            "Q": self.Q,
            "seed": self.seed,
            "distances": [float(d) for d in self.distances],
            "betas": [float(b) for b in self.beta],
            "power": self.power.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "Deployment":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        power = PowerConfig(**payload["power"])
        beta = np.asarray(payload["betas"], dtype=float)
        return cls._from_betas(
            np.asarray(payload["distances"], dtype=float), beta, power, payload["seed"]
        )

    @classmethod
    def _from_betas(cls, distances, beta, power: PowerConfig,
                    seed: int | None) -> "Deployment":
        gamma_bar_i = power.varrho * beta
        gamma_bar_prime = len(beta) / np.sum(1.0 / gamma_bar_i)
        return cls(
            Q=len(beta), distances=distances, beta=beta, gamma_bar_i=gamma_bar_i,
            gamma_bar_prime=float(gamma_bar_prime), power=power, seed=seed,
        )


def pathloss_db(d_km) -> np.ndarray:
    """Pathloss in dB at distance d kilometers (attenuation, positive dB)."""
    return _PL_INTERCEPT_DB + _PL_SLOPE_DB * np.log10(d_km)


def generate_deployment(Q: int, r_in: float, r_out: float, power: PowerConfig,
                        seed: int | None) -> Deployment:
    """Drop Q devices uniformly over the annulus area [r_in, r_out] (km).

    Uniform over AREA means radial density proportional to r, i.e. radius
    CDF (r^2 - r_in^2)/(r_out^2 - r_in^2).  Gain per device is
    beta = 10^(-PL(d)/10) with PL(d) = 130 + 37.6 log10(d[km]).
    """
    if not 0.0 < r_in < r_out:
        raise ValueError(f"radii must satisfy 0 < r_in < r_out, got ({r_in}, {r_out})")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random(Q)
    d = np.sqrt(r_in**2 + (r_out**2 - r_in**2) * u)
    beta = 10.0 ** (-pathloss_db(d) / 10.0)
    return Deployment._from_betas(d, beta, power, seed)


def homogeneous_deployment(Q: int, beta: float, power: PowerConfig) -> Deployment:
    """Synthetic deployment with identical gain beta for every device.

    Useful for checks against simplified closed forms that assume
    gamma_bar_i = gamma_bar_prime for all i.  The distance stored is the one
    the pathloss model would invert to.
    """
    d = 10.0 ** ((-10.0 * np.log10(beta) - _PL_INTERCEPT_DB) / _PL_SLOPE_DB)
    betas = np.full(Q, float(beta))
    return Deployment._from_betas(np.full(Q, d), betas, power, seed=None)


def draw_active_set(deployment: Deployment, K: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random K-subset of the Q devices, as a sorted index array."""
    if not 0 <= K <= deployment.Q:
        raise ValueError(f"K must be in [0, Q={deployment.Q}], got {K}")
    idx = rng.choice(deployment.Q, size=K, replace=False)
    return np.sort(idx)


def harmonic_mean_snr(deployment: Deployment) -> float:
    """(Q^-1 sum_i 1/gamma_bar_i)^-1 over all devices."""
    g = deployment.gamma_bar_i
    if np.any(g <= 0.0):
        raise ValueError("all gamma_bar_i must be positive")
    return float(deployment.Q / np.sum(1.0 / g))


def nominal_harmonic_snr(r_in: float, r_out: float, power: PowerConfig) -> float:
    """Population (infinite-Q) harmonic-mean SNR over the annulus.

    E[beta^-1] has a closed form under uniform-over-area sampling:
        E[d^a] = 2 (r_out^(a+2) - r_in^(a+2)) / ((a+2)(r_out^2 - r_in^2))
    with a = 3.76 from the pathloss slope.  Used to build deterministic
    detection contexts that do not depend on a particular deployment draw.
    """
    if not 0.0 < r_in < r_out:
        raise ValueError("radii must satisfy 0 < r_in < r_out")
    a = _PL_SLOPE_DB / 10.0
    moment = 2.0 * (r_out ** (a + 2) - r_in ** (a + 2)) / ((a + 2) * (r_out**2 - r_in**2))
    mean_inv_beta = 10.0 ** (_PL_INTERCEPT_DB / 10.0) * moment
    return power.varrho / mean_inv_beta
