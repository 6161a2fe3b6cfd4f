"""Low-level numerical kernels shared by the estimator and theory code.

This is a thin, contract-checked layer over scipy.  The point is to give the
rest of the package one place where accuracy expectations, domain checks and
failure reporting live, and to keep call sites free of scipy-specific
conventions (argument order of ``betainc``, ``kve`` vs ``kv`` scaling, quad
bookkeeping, ...).  Every function here is pure and deterministic.

Accuracy contract: a quadrature or root solve that cannot meet its tolerance
raises :class:`AccuracyError` instead of silently returning a bad value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "AccuracyError",
    "QuadratureSpec",
    "RootBracket",
    "bessel_k",
    "erfc",
    "find_root",
    "gamma_upper",
    "hyp2f1",
    "integrate_1d",
    "log_bessel_k",
    "log_integral",
    "reg_inc_beta",
]


class AccuracyError(RuntimeError):
    """A numerical routine could not reach the requested accuracy."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Accuracy/effort budget for one-dimensional quadrature.

    abs_tol / rel_tol: the integral estimate must satisfy
        err <= max(abs_tol, rel_tol * |value|).
    max_subdivisions: adaptive subdivision limit per smooth piece (>= 16).
    truncation_tail_mass: for piecewise (oscillatory) evaluation on an
        unbounded domain, stop once a piece contributes less than this
        fraction of the largest piece seen so far.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 200
    truncation_tail_mass: float = 1e-14

    def __post_init__(self) -> None:
        if self.max_subdivisions < 16:
            raise ValueError("max_subdivisions must be >= 16")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class RootBracket:
    """Sign-changing interval [lo, hi] for a scalar root solve."""

    lo: float
    hi: float
    tol: float = 1e-12

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError(f"bracket requires lo < hi, got [{self.lo}, {self.hi}]")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


# ----------------------------------------------------------------------------
# special functions
# ----------------------------------------------------------------------------

def log_integral(x: float) -> float:
    """Logarithmic integral li(x) = Ei(ln x) for x in (0, 1).

    On (0, 1) the value is strictly negative and strictly decreasing:
    li(x) -> 0- as x -> 0+ and li(x) -> -inf as x -> 1- (the defining
    integral diverges at 1).  Only the unit interval is supported because
    that is the domain the silencing design needs (argument 1 - xi).
    """
    if not 0.0 < x < 1.0:
        raise ValueError(f"log_integral requires x in (0, 1), got {x}")
    return float(special.expi(np.log(x)))


def erfc(x):
    """Complementary error function (elementwise)."""
    return special.erfc(x)


def gamma_upper(s: float, x) -> float:
    """Upper incomplete gamma Gamma(s, x), not regularized; s > 0, x >= 0."""
    if s <= 0.0:
        raise ValueError(f"gamma_upper requires s > 0, got {s}")
    if np.any(np.asarray(x) < 0.0):
        raise ValueError("gamma_upper requires x >= 0")
    return special.gamma(s) * special.gammaincc(s, x)


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta I_x(a, b) for x in [0, 1], a, b > 0."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"reg_inc_beta requires x in [0, 1], got {x}")
    if a <= 0.0 or b <= 0.0:
        raise ValueError("reg_inc_beta requires a, b > 0")
    return float(special.betainc(a, b, x))


def bessel_k(nu: float, x) -> float:
    """Modified Bessel function of the second kind K_nu(x), nu > 0, x > 0."""
    if nu <= 0.0:
        raise ValueError(f"bessel_k requires nu > 0, got {nu}")
    if np.any(np.asarray(x) <= 0.0):
        raise ValueError("bessel_k requires x > 0")
    return special.kv(nu, x)


def log_bessel_k(nu: float, x: float) -> float:
    """log K_nu(x), stable for large x where K_nu underflows and for small x
    with large nu where K_nu overflows.

    Uses the exponentially scaled kve (log K = log(kve) - x) when it is
    representable; otherwise climbs the exact upward recurrence
    K_{m+1}(x) = K_{m-1}(x) + (2m/x) K_m(x) from a low order, renormalizing
    into an accumulated log scale.  The recurrence is forward-stable for K.
    """
    if nu <= 0.0 or x <= 0.0:
        raise ValueError("log_bessel_k requires nu > 0 and x > 0")
    val = special.kve(nu, x)
    if np.isfinite(val) and val > 0.0:
        return float(np.log(val) - x)
    steps = int(np.ceil(nu)) - 1
    mu = nu - steps                      # in (0, 1]
    a = float(special.kve(mu - 1.0, x))  # K is even in its order
    b = float(special.kve(mu, x))
    log_scale = -x
    order = mu
    for _ in range(steps):
        a, b = b, a + (2.0 * order / x) * b
        order += 1.0
        if b > 1e250:
            a *= 1e-250
            b *= 1e-250
            log_scale += 250.0 * np.log(10.0)
    return float(np.log(b) + log_scale)


def hyp2f1(a: float, b: float, c: float, z: float) -> float:
    """Gauss hypergeometric function 2F1(a, b; c; z) for |z| < 1."""
    if abs(z) >= 1.0:
        raise ValueError(f"hyp2f1 requires |z| < 1, got {z}")
    return float(special.hyp2f1(a, b, c, z))


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------

def _quad_piece(f, lo: float, hi: float, spec: QuadratureSpec) -> tuple[float, float]:
    """One adaptive-quadrature call with explicit failure reporting."""
    out = integrate.quad(
        f, lo, hi,
        epsabs=spec.abs_tol, epsrel=spec.rel_tol,
        limit=spec.max_subdivisions, full_output=1,
    )
    value, abserr = out[0], out[1]
    if len(out) > 3:  # scipy appends an explanation message on trouble
        raise AccuracyError(
            f"quadrature on [{lo}, {hi}] did not converge: {out[3]} "
            f"(estimate {value}, error estimate {abserr})"
        )
    return value, abserr


def integrate_1d(f, domain, spec: QuadratureSpec | None = None, *,
                 period: float | None = None) -> float:
    """Adaptive 1-D quadrature of ``f`` over ``domain`` = (a, b).

    Either endpoint may be infinite.  For oscillatory integrands pass the
    oscillation ``period``: the domain is then split at half-period
    boundaries, each smooth piece is integrated adaptively, and the ordered
    piece sum is truncated on unbounded domains once pieces fall below
    ``truncation_tail_mass`` of the largest piece.

    Raises :class:`AccuracyError` when the requested accuracy cannot be
    certified -- never returns a silently bad value.
    """
    if spec is None:
        spec = QuadratureSpec()
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise ValueError(f"domain must satisfy a < b, got ({a}, {b})")

    if period is None:
        value, abserr = _quad_piece(f, a, b, spec)
        if abserr > max(spec.abs_tol, spec.rel_tol * abs(value)):
            raise AccuracyError(
                f"quadrature error estimate {abserr} exceeds tolerance "
                f"(abs_tol={spec.abs_tol}, rel_tol={spec.rel_tol}, value={value})"
            )
        return value

    if period <= 0.0:
        raise ValueError(f"period must be positive, got {period}")
    if not np.isfinite(a):
        raise ValueError("oscillatory splitting needs a finite lower endpoint")

    half = period / 2.0
    # generous piece budget: enough to cover finite domains and to let the
    # tail-truncation rule terminate unbounded ones
    max_pieces = 64 * spec.max_subdivisions
    total = 0.0
    total_err = 0.0
    largest = 0.0
    lo = a
    for j in range(max_pieces):
        hi = min(lo + half, b)
        value, abserr = _quad_piece(f, lo, hi, spec)
        total += value
        total_err += abserr
        largest = max(largest, abs(value))
        lo = hi
        if lo >= b:  # finite domain exhausted
            break
        if j >= 4 and largest > 0.0 and abs(value) < spec.truncation_tail_mass * largest:
            break
    else:
        raise AccuracyError(
            f"oscillatory quadrature did not settle within {max_pieces} half-periods"
        )
    if total_err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        raise AccuracyError(
            f"oscillatory quadrature error estimate {total_err} exceeds tolerance "
            f"(abs_tol={spec.abs_tol}, rel_tol={spec.rel_tol}, value={total})"
        )
    return total


# ----------------------------------------------------------------------------
# root finding
# ----------------------------------------------------------------------------

def find_root(f, bracket: RootBracket) -> float:
    """Root of scalar ``f`` inside ``bracket`` (Brent); deterministic.

    The endpoints must bracket a sign change (an exact zero at an endpoint is
    accepted).  On return, either |f(root)| < tol or the final interval width
    is below tol.
    """
    flo = f(bracket.lo)
    fhi = f(bracket.hi)
    if flo == 0.0:
        return bracket.lo
    if fhi == 0.0:
        return bracket.hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError(
            f"bracket [{bracket.lo}, {bracket.hi}] does not straddle a root "
            f"(f(lo)={flo}, f(hi)={fhi})"
        )
    root, info = optimize.brentq(
        f, bracket.lo, bracket.hi, xtol=bracket.tol, maxiter=200, full_output=True
    )
    if not info.converged:
        raise AccuracyError(f"root solve did not converge on [{bracket.lo}, {bracket.hi}]")
    return float(root)
