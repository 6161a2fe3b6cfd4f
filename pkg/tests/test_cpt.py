"""Tests for slot simulation and the relaxed/rounded estimators.

Monte Carlo checks run the actual slot simulators in a loop with fixed
seeds; distributional targets come from the closed-form moments, and the
integer detector is checked against a brute-force likelihood-integration
oracle (direct 2-D marginalization of the shared fading coefficient).
"""

import math
from math import comb

import numpy as np
import pytest
from scipy import stats as sp_stats
from scipy.integrate import dblquad

from cptdet import theory
from cptdet.cpt import (
    AcptdConfig,
    CptParams,
    Estimate,
    _posterior_truncation,
    configure_acptd,
    detect_ucpt_optimal,
    estimate_acptd,
    estimate_acptf,
    estimate_ucpt,
    round_ml,
    round_ni,
    silence_correction,
    simulate_acptd_slot,
    simulate_acptf_slot,
    simulate_ucpt_slot,
    ucpt_loglik_metric,
)
from cptdet.deployment import (
    PowerConfig,
    draw_active_set,
    generate_deployment,
    homogeneous_deployment,
)

# oracle-computed constants (series li / direct formula, 16-17 digits)
RHO_XI001_PBAR1 = 0.2454773463414369          # 0.99 / |li(0.99)|
MU_OVER_VARTHETA_XI001 = 0.010050335853501442  # -ln(0.99)
PSI_XI001 = 1.0001041020355685                 # 1 + 1e-4/0.99^4
CORR_COROLLARY_KP5_XI001 = 0.061218243036424855
CORR_FULL_KP1_XI001 = 0.008471555076698651
CORR_FULL_KP5_XI001 = 0.045373408498681135
CORR_FULL_KP20_XI001 = 0.19044825107455715
TRUNC_DEPTH_XI001_KP5 = 0.53838211884795456

DEFAULT_POWER = PowerConfig()          # 30 / -110 / -120 dBm
DEFAULT_PARAMS = CptParams()           # N=6, N1=2, xi=0.01


def _homogeneous(n1_gamma: float, Q: int = 20,
                 params: CptParams = DEFAULT_PARAMS):
    """Homogeneous deployment with N1*gamma_bar_i pinned to n1_gamma."""
    beta = n1_gamma / (params.N1 * params.power.varrho)
    return homogeneous_deployment(Q, beta, params.power)


def _var_stderr(x: np.ndarray) -> float:
    """Standard error of the sample variance (moment-based, no normality)."""
    n = len(x)
    c = x - x.mean()
    m2 = float(np.mean(c**2))
    m4 = float(np.mean(c**4))
    return math.sqrt(max(m4 - m2**2, 0.0) / n)


# ---------------------------------------------------------------------------
# CptParams validation
# ---------------------------------------------------------------------------

def test_params_defaults():
    p = CptParams()
    assert p.N == 6 and p.N1 == 2 and p.N2 == 4 and p.xi == 0.01


def test_params_invalid_frame():
    with pytest.raises(ValueError, match="N1 must satisfy 1 <= N1 < N"):
        CptParams(N=6, N1=6)
    with pytest.raises(ValueError, match="N1 must satisfy 1 <= N1 < N"):
        CptParams(N=6, N1=0)
    with pytest.raises(ValueError):
        CptParams(N=0, N1=1)
    with pytest.raises(ValueError):
        CptParams(xi=1.0)
    with pytest.raises(ValueError):
        CptParams(xi=-0.1)


def test_params_pilot_validation():
    s = np.exp(1j * np.linspace(0, 1, 6))
    CptParams(pilot_s=s)  # unit modulus, fine
    with pytest.raises(ValueError, match="unit modulus"):
        CptParams(pilot_s=np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="length N1"):
        CptParams(pilot_v=np.array([1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        CptParams(pilot_v=np.array([0.5, 0.5]))  # ||v||^2 != N1


def test_estimate_type_validation():
    Estimate("ucpt", 4.2, 4, "ni")
    with pytest.raises(ValueError):
        Estimate("bogus", 4.2, 4, "ni")
    with pytest.raises(ValueError):
        Estimate("ucpt", 4.2, 4, "round-down")


# ---------------------------------------------------------------------------
# U-CPT slots and relaxed estimate
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ucpt_runs():
    """10^5 simulated slots at K=5, defaults: (k_real, matched_energy/N^2)."""
    dep = generate_deployment(50, 0.025, 0.5, DEFAULT_POWER, seed=1)
    rng = np.random.default_rng(42)
    active = draw_active_set(dep, 5, rng)
    s = np.ones(DEFAULT_PARAMS.N, dtype=complex)
    k_real = np.empty(100_000)
    stat = np.empty(100_000)
    for i in range(len(k_real)):
        slot = simulate_ucpt_slot(dep, active, DEFAULT_PARAMS, rng)
        k_real[i] = estimate_ucpt(slot.y, DEFAULT_PARAMS)
        stat[i] = abs(np.vdot(s, slot.y)) ** 2 / DEFAULT_PARAMS.N ** 2
    return k_real, stat


def test_ucpt_zero_received_energy():
    y = np.zeros(6, dtype=complex)
    # -sigma2/(N p_bar) = -1/(N gamma) = -1/60 at defaults
    assert estimate_ucpt(y, DEFAULT_PARAMS) == pytest.approx(-1.0 / 60.0, rel=1e-12)


def test_ucpt_noiseless_plugin():
    # y = sqrt(K p_bar) h' s with |h'| = 1, K = 4  ->  exactly 4 - 1/60
    p_bar = DEFAULT_POWER.p_bar_lin
    h = np.exp(1j * 0.7)
    y = np.sqrt(4.0 * p_bar) * h * np.ones(6, dtype=complex)
    assert estimate_ucpt(y, DEFAULT_PARAMS) == pytest.approx(4.0 - 1.0 / 60.0,
                                                             rel=1e-12)


def test_ucpt_slot_empty_active_set():
    dep = generate_deployment(10, 0.025, 0.5, DEFAULT_POWER, seed=2)
    rng = np.random.default_rng(0)
    slot = simulate_ucpt_slot(dep, np.array([], dtype=int), DEFAULT_PARAMS, rng)
    # pure noise: mean |y[n]|^2 ~ sigma2
    n = 20_000
    acc = 0.0
    for _ in range(n):
        slot = simulate_ucpt_slot(dep, np.array([], dtype=int), DEFAULT_PARAMS, rng)
        acc += float(np.mean(np.abs(slot.y) ** 2))
    mean = acc / n
    sigma2 = DEFAULT_POWER.sigma2_lin
    assert mean == pytest.approx(sigma2, rel=0.05)


def test_ucpt_matched_filter_variance(ucpt_runs):
    # s^H y / N ~ CN(0, K p_bar + sigma2/N): check the sample variance
    _, stat = ucpt_runs
    K, N = 5, DEFAULT_PARAMS.N
    target = K * DEFAULT_POWER.p_bar_lin + DEFAULT_POWER.sigma2_lin / N
    sample = float(np.mean(stat))          # E|s^H y/N|^2 = variance (zero mean)
    se = float(np.std(stat, ddof=1) / math.sqrt(len(stat)))
    assert abs(sample - target) < 3.0 * se


def test_ucpt_unbiased(ucpt_runs):
    k_real, _ = ucpt_runs
    se = float(np.std(k_real, ddof=1) / math.sqrt(len(k_real)))
    assert abs(float(np.mean(k_real)) - 5.0) < 3.0 * se


def test_ucpt_variance_formula(ucpt_runs):
    # var = K^2 + 2K/(N gamma) + 1/(N gamma)^2 = 25.16694... at defaults
    k_real, _ = ucpt_runs
    target = theory.variance_formulas("ucpt", 5, DEFAULT_PARAMS)
    assert target == pytest.approx(25.0 + 10.0 / 60.0 + 1.0 / 3600.0, rel=1e-14)
    sv = float(np.var(k_real))
    assert abs(sv - target) < 3.0 * _var_stderr(k_real)


def test_ucpt_matched_energy_exponential(ucpt_runs):
    # |s^H y|^2/N^2 is exponential with mean K p_bar + sigma2/N
    _, stat = ucpt_runs
    K, N = 5, DEFAULT_PARAMS.N
    mean = K * DEFAULT_POWER.p_bar_lin + DEFAULT_POWER.sigma2_lin / N
    res = sp_stats.kstest(stat / mean, "expon")
    assert res.pvalue > 0.01


def test_ucpt_phase_invariance():
    # replacing s by e^{j theta} s leaves the relaxed estimate unchanged
    rng = np.random.default_rng(3)
    y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    base = estimate_ucpt(y, DEFAULT_PARAMS)
    for theta in (0.3, 1.1, -2.0, np.pi):
        rotated = CptParams(pilot_s=np.exp(1j * theta) * np.ones(6))
        assert estimate_ucpt(y, rotated) == pytest.approx(base, rel=1e-12)


def test_ucpt_slot_deterministic_given_stream():
    dep = generate_deployment(30, 0.025, 0.5, DEFAULT_POWER, seed=5)
    active = np.arange(5)
    a = simulate_ucpt_slot(dep, active, DEFAULT_PARAMS, np.random.default_rng(9))
    b = simulate_ucpt_slot(dep, active, DEFAULT_PARAMS, np.random.default_rng(9))
    np.testing.assert_array_equal(a.y, b.y)


# ---------------------------------------------------------------------------
# optimal U-CPT detector
# ---------------------------------------------------------------------------

def test_detect_zero_input_picks_zero():
    assert detect_ucpt_optimal(np.zeros(6, dtype=complex), DEFAULT_PARAMS, 10) == 0


def test_detect_matches_likelihood_integration_oracle():
    """Brute-force oracle: f(y; K=k) by direct 2-D integration over the
    shared CN(0,1) coefficient, at N=2, Q=3, real pilot, O(1) powers."""
    p_bar_dbm = 10.0 * math.log10(2.0)       # p_bar = 2 mW
    power = PowerConfig(p=10.0, p_bar=p_bar_dbm, sigma2=0.0)   # sigma2 = 1 mW
    params = CptParams(N=2, N1=1, power=power)
    p_bar, sig2, N, Q = 2.0, 1.0, 2, 3
    s = np.ones(N)

    def log_f(y, k):
        def integrand(hi, hr):
            h = hr + 1j * hi
            r = np.abs(y - math.sqrt(k * p_bar) * h * s) ** 2
            return (1.0 / math.pi) * math.exp(-(hr * hr + hi * hi)) \
                * (1.0 / (math.pi * sig2)) ** N * math.exp(-float(np.sum(r)) / sig2)
        val, _ = dblquad(integrand, -6.5, 6.5, -6.5, 6.5,
                         epsabs=1e-13, epsrel=1e-10)
        return math.log(val)

    rng = np.random.default_rng(17)
    for _ in range(6):
        y = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        log_fs = np.array([log_f(y, k) for k in range(Q + 1)])
        u2 = float(abs(np.vdot(s, y)) ** 2)
        metric = ucpt_loglik_metric(np.arange(Q + 1), u2, params)
        # metric is the log-density up to a k-independent constant
        np.testing.assert_allclose(metric - metric[0], log_fs - log_fs[0],
                                   atol=1e-7)
        assert detect_ucpt_optimal(y, params, Q) == int(np.argmax(log_fs))


def test_detect_ties_toward_smaller_k():
    # duplicate-metric construction: with Q=0 there is only k=0
    assert detect_ucpt_optimal(np.ones(6, dtype=complex), DEFAULT_PARAMS, 0) == 0


def test_detect_agrees_with_ml_rounding():
    # slot-wise: optimal integer detection == ML rounding of the relaxed
    # estimate (two-candidate reduction around the continuous argmax)
    dep = generate_deployment(50, 0.025, 0.5, DEFAULT_POWER, seed=21)
    rng = np.random.default_rng(52)
    family = theory.ml_family("ucpt", DEFAULT_PARAMS)
    active = draw_active_set(dep, 5, rng)
    for _ in range(400):
        slot = simulate_ucpt_slot(dep, active, DEFAULT_PARAMS, rng)
        k_real = estimate_ucpt(slot.y, DEFAULT_PARAMS)
        assert round_ml(k_real, "ucpt", family, 40) == \
            detect_ucpt_optimal(slot.y, DEFAULT_PARAMS, 40)


# ---------------------------------------------------------------------------
# A-CPT-F
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def acptf_runs():
    """4*10^4 homogeneous slots at K=5, N1*gamma = 1e4."""
    dep = _homogeneous(1e4)
    rng = np.random.default_rng(7)
    active = np.arange(5)
    s = np.ones(DEFAULT_PARAMS.N2, dtype=complex)
    k_real = np.empty(40_000)
    re_zeta = np.empty(40_000)
    for i in range(len(k_real)):
        slot = simulate_acptf_slot(dep, active, DEFAULT_PARAMS, rng)
        k_real[i] = estimate_acptf(slot.y, DEFAULT_PARAMS, dep.gamma_bar_prime)
        re_zeta[i] = float((np.vdot(s, slot.y) / DEFAULT_PARAMS.N2).real)
    return dep, k_real, re_zeta


def test_acptf_no_silencing():
    dep = _homogeneous(1e4)
    rng = np.random.default_rng(11)
    slot = simulate_acptf_slot(dep, np.arange(7), DEFAULT_PARAMS, rng)
    # fixed-power mechanism never silences: no transmit/silent partition
    assert slot.transmitting_set is None and slot.silent_set is None
    assert slot.y.shape == (DEFAULT_PARAMS.N2,)


def test_acptf_perfect_csi_coherent_combining():
    # N1 varrho beta -> inf and noise off: s^H y/N2 = sqrt(p_bar/beta) |h|
    power = PowerConfig(p=30.0, p_bar=-110.0, sigma2=-350.0)
    params = CptParams(power=power)
    beta = 1e-12
    dep = homogeneous_deployment(3, beta, power)
    rng = np.random.default_rng(13)
    slot = simulate_acptf_slot(dep, np.array([0]), params, rng)
    zeta = complex(np.vdot(np.ones(params.N2), slot.y) / params.N2)
    expect = math.sqrt(power.p_bar_lin / beta) * abs(complex(slot.channels[0]))
    assert zeta.real == pytest.approx(expect, rel=1e-5)
    assert abs(zeta.imag) < 1e-6 * zeta.real
    assert zeta.real > 0.0


def test_acptf_mean_statistic(acptf_runs):
    # E[Re zeta_K] = (K sqrt(pi p_bar)/2) sqrt(1 + 1/(N1 gamma'))
    dep, _, re_zeta = acptf_runs
    K = 5
    p_bar = DEFAULT_POWER.p_bar_lin
    target = (K * math.sqrt(math.pi * p_bar) / 2.0) * math.sqrt(
        1.0 + 1.0 / (DEFAULT_PARAMS.N1 * dep.gamma_bar_prime))
    se = float(np.std(re_zeta, ddof=1) / math.sqrt(len(re_zeta)))
    assert abs(float(np.mean(re_zeta)) - target) < 3.0 * se


def test_acptf_estimator_unbiased(acptf_runs):
    _, k_real, _ = acptf_runs
    se = float(np.std(k_real, ddof=1) / math.sqrt(len(k_real)))
    assert abs(float(np.mean(k_real)) - 5.0) < 3.0 * se


def test_acptf_variance_formula(acptf_runs):
    dep, k_real, _ = acptf_runs
    stats = theory.make_stats(dep, DEFAULT_PARAMS)
    target = theory.variance_formulas("acptf", 5, DEFAULT_PARAMS, stats)
    sv = float(np.var(k_real))
    assert abs(sv - target) < 3.0 * _var_stderr(k_real)


def test_acptf_exact_inversion():
    # Re zeta = (sqrt(pi p_bar (1+1/(N1 gamma')))/2) * 7  ->  estimate == 7
    gamma_prime = 1e4 / DEFAULT_PARAMS.N1
    scale = math.sqrt(math.pi * DEFAULT_POWER.p_bar_lin
                      * (1.0 + 1.0 / (DEFAULT_PARAMS.N1 * gamma_prime)))
    y = np.full(DEFAULT_PARAMS.N2, 7.0 * scale / 2.0, dtype=complex)
    assert estimate_acptf(y, DEFAULT_PARAMS, gamma_prime) == pytest.approx(
        7.0, rel=1e-12)


def test_acptf_zero_input():
    y = np.zeros(DEFAULT_PARAMS.N2, dtype=complex)
    assert estimate_acptf(y, DEFAULT_PARAMS, 1e3) == 0.0
    with pytest.raises(ValueError):
        estimate_acptf(y, DEFAULT_PARAMS, 0.0)


def test_acptf_explicit_downlink_equivalent_mean():
    # the literal downlink simulation and the rotation-invariance shortcut
    # produce the same Re{zeta} mean in the accurate-CSI regime (the
    # rotated-error trick ignores the estimate/error correlation, which
    # enters at order 1/(N1 gamma))
    dep = _homogeneous(1e4, Q=10)
    rng = np.random.default_rng(29)
    s = np.ones(DEFAULT_PARAMS.N2, dtype=complex)
    n = 20_000
    means = {}
    for flag in (False, True):
        acc = np.empty(n)
        for i in range(n):
            slot = simulate_acptf_slot(dep, np.arange(5), DEFAULT_PARAMS, rng,
                                       explicit_downlink=flag)
            acc[i] = float((np.vdot(s, slot.y) / DEFAULT_PARAMS.N2).real)
        means[flag] = (float(np.mean(acc)),
                       float(np.std(acc, ddof=1) / math.sqrt(n)))
    m0, se0 = means[False]
    m1, se1 = means[True]
    assert abs(m0 - m1) < 3.0 * math.hypot(se0, se1)


# ---------------------------------------------------------------------------
# A-CPT-D configuration
# ---------------------------------------------------------------------------

def test_configure_acptd_frozen_values():
    # p_bar normalized to 1 mW so rho is the bare ratio (1-xi)/|li(1-xi)|
    power = PowerConfig(p=10.0, p_bar=0.0, sigma2=0.0)
    dep = homogeneous_deployment(4, 1.0, power)
    params = CptParams(xi=0.01, power=power)
    cfg = configure_acptd(dep, params)
    assert cfg.rho == pytest.approx(RHO_XI001_PBAR1, rel=1e-10)
    np.testing.assert_allclose(cfg.mu_i / cfg.vartheta_i,
                               MU_OVER_VARTHETA_XI001, rtol=1e-12)
    assert cfg.psi == pytest.approx(PSI_XI001, rel=1e-12)
    assert cfg.xi == 0.01
    assert cfg.gamma_bar_c_prime == pytest.approx(cfg.rho / power.sigma2_lin,
                                                  rel=1e-12)


def test_configure_acptd_vartheta():
    dep = _homogeneous(1e3)
    cfg = configure_acptd(dep, DEFAULT_PARAMS)
    expect = dep.beta * (1.0 + 1.0 / (DEFAULT_PARAMS.N1 * dep.gamma_bar_i))
    np.testing.assert_allclose(cfg.vartheta_i, expect, rtol=1e-12)
    assert cfg.psi >= 1.0
    assert cfg.rho > 0.0
    assert np.all(cfg.mu_i > 0.0)


def test_configure_acptd_rejects_zero_xi():
    dep = _homogeneous(1e3)
    with pytest.raises(ValueError):
        configure_acptd(dep, CptParams(xi=0.0))


def test_acptd_average_transmit_power():
    # rho E[1/|h_hat|^2 given transmit] -> p_bar/beta within 2% at N1 gamma >= 1e3
    params = DEFAULT_PARAMS
    rng = np.random.default_rng(101)
    for n1_gamma in (1e3, 1e4):
        dep = _homogeneous(n1_gamma, Q=4)
        cfg = configure_acptd(dep, params)
        q = -math.log1p(-params.xi)
        # conditioned on transmitting, |h_hat|^2 = mu + Exp(vartheta)
        m = 2_000_000
        h2 = cfg.mu_i[0] + cfg.vartheta_i[0] * rng.standard_exponential(m)
        avg_power = cfg.rho * float(np.mean(1.0 / h2))
        target = params.power.p_bar_lin / dep.beta[0]
        assert abs(avg_power / target - 1.0) < 0.02, n1_gamma


# ---------------------------------------------------------------------------
# A-CPT-D slots
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def acptd_runs():
    """2*10^4 homogeneous slots at K=5, xi=1e-3, N1*gamma = 1e4."""
    params = CptParams(xi=1e-3)
    dep = _homogeneous(1e4, params=params)
    cfg = configure_acptd(dep, params)
    rng = np.random.default_rng(23)
    active = np.arange(5)
    rows = []
    for _ in range(20_000):
        slot = simulate_acptd_slot(dep, active, params, cfg, rng)
        k_real = estimate_acptd(slot.y, cfg, params)
        rows.append((len(slot.transmitting_set), k_real))
    return params, dep, cfg, np.asarray(rows)


def test_acptd_partition_invariant():
    params = CptParams(xi=0.3)     # frequent silencing exercises both sides
    dep = _homogeneous(1e3, params=params)
    cfg = configure_acptd(dep, params)
    rng = np.random.default_rng(31)
    for _ in range(200):
        active = draw_active_set(dep, 6, rng)
        slot = simulate_acptd_slot(dep, active, params, cfg, rng)
        union = np.union1d(slot.transmitting_set, slot.silent_set)
        np.testing.assert_array_equal(union, np.sort(active))
        assert np.intersect1d(slot.transmitting_set, slot.silent_set).size == 0
        # threshold condition holds device-by-device
        mask = np.isin(slot.active_set, slot.transmitting_set)
        h2 = np.abs(slot.h_hat) ** 2
        mu = cfg.mu_i[slot.active_set]
        assert np.all(h2[mask] >= mu[mask])
        assert np.all(h2[~mask] < mu[~mask])


def test_acptd_silence_probability():
    # empirical per-device silence frequency == xi within 4 sigma
    params = DEFAULT_PARAMS                      # xi = 0.01
    dep = _homogeneous(1e4, params=params)
    cfg = configure_acptd(dep, params)
    rng = np.random.default_rng(37)
    active = np.arange(5)
    n_slots = 20_000
    silent = 0
    for _ in range(n_slots):
        slot = simulate_acptd_slot(dep, active, params, cfg, rng)
        silent += len(slot.silent_set)
    n_draws = n_slots * len(active)
    p_hat = silent / n_draws
    band = 4.0 * math.sqrt(params.xi * (1.0 - params.xi) / n_draws)
    assert abs(p_hat - params.xi) < band


def test_acptd_perfect_csi_counts_transmitters():
    # h_err ~ 0 and noise off: Re{s^H y}/(N2 sqrt(rho)) = K' exactly
    power = PowerConfig(p=30.0, p_bar=-110.0, sigma2=-350.0)
    params = CptParams(xi=0.2, power=power)
    dep = homogeneous_deployment(10, 1e-12, power)
    cfg = configure_acptd(dep, params)
    rng = np.random.default_rng(41)
    for _ in range(20):
        slot = simulate_acptd_slot(dep, np.arange(8), params, cfg, rng)
        k_prime = len(slot.transmitting_set)
        stat = float(np.vdot(np.ones(params.N2), slot.y).real
                     / (params.N2 * math.sqrt(cfg.rho)))
        assert stat == pytest.approx(k_prime, abs=1e-5)


def test_acptd_variance_formula(acptd_runs):
    # conditional on K' = 5 transmitters, the sample variance of the full
    # relaxed estimate matches the homogenized closed form (and its bound)
    params, dep, cfg, rows = acptd_runs
    k_real = rows[rows[:, 0] == 5.0, 1]
    assert len(k_real) > 15_000
    stats = theory.make_stats(dep, params)
    target, bound = theory.variance_formulas("acptd", 5, params, stats)
    assert target <= bound
    sv = float(np.var(k_real))
    assert abs(sv - target) < 3.0 * _var_stderr(k_real)


def test_acptd_estimator_tracks_k(acptd_runs):
    # with xi tiny, K' = K almost always and the estimate is unbiased for K
    _, _, _, rows = acptd_runs
    k_real = rows[:, 1]
    se = float(np.std(k_real, ddof=1) / math.sqrt(len(k_real)))
    assert abs(float(np.mean(k_real)) - 5.0) < 4.0 * se + 5e-3


# ---------------------------------------------------------------------------
# silence correction (posterior mean of the silenced count)
# ---------------------------------------------------------------------------

def test_corollary_correction_spot_value():
    got = silence_correction(5.0, 0.01, "corollary")
    assert got == pytest.approx(CORR_COROLLARY_KP5_XI001, rel=1e-12)
    # xi -> 0 kills the correction
    assert silence_correction(5.0, 1e-12, "corollary") < 1e-11


def test_full_mmse_frozen_values():
    assert silence_correction(1.0, 0.01, "full_mmse") == pytest.approx(
        CORR_FULL_KP1_XI001, rel=1e-9)
    assert silence_correction(5.0, 0.01, "full_mmse") == pytest.approx(
        CORR_FULL_KP5_XI001, rel=1e-9)
    assert silence_correction(20.0, 0.01, "full_mmse") == pytest.approx(
        CORR_FULL_KP20_XI001, rel=1e-9)
    # k' = 0 gives truncation depth 0 and an empty correction sum
    assert silence_correction(0.0, 0.01, "full_mmse") == pytest.approx(0.0,
                                                                       abs=1e-15)


def test_truncation_depth_frozen_value():
    assert _posterior_truncation(5.0, 0.01) == pytest.approx(
        TRUNC_DEPTH_XI001_KP5, abs=1e-10)
    assert _posterior_truncation(0.0, 0.01) == 0.0


def test_truncation_depth_shrinks_with_xi():
    # the posterior-mass truncation gets SHALLOWER as xi -> 0 (the captured
    # negative-binomial mass concentrates on k'' = 0)
    depths = [_posterior_truncation(5.0, x) for x in (0.1, 0.01, 0.001, 1e-4)]
    assert all(a > b for a, b in zip(depths, depths[1:]))
    assert depths[-1] < 0.3


def test_full_mmse_matches_partial_sum_oracle():
    # closed form at an integer truncation == the defining truncated sum
    # sum_{k''=0}^{m} k'' C(k'+k'', k'') xi^k'' (1-xi)^k'
    from cptdet.cpt import _log_binom
    from cptdet.numerics import hyp2f1
    xi = 0.01

    def closed_at(kp, kl):
        f1 = hyp2f1(1.0 + kl, -kp, 2.0 + kl, xi)
        f2 = hyp2f1(1.0 + kl, -kp, 3.0 + kl, xi)
        bracket = ((xi - 1.0) * (kl + 1.0)
                   * np.exp(_log_binom(1.0 + kl + kp, 1.0 + kl)) * f1
                   - np.exp(_log_binom(2.0 + kl + kp, 2.0 + kl)) * xi * f2)
        return float(xi / (1.0 - xi) ** 2 * (xi ** kl * bracket + kp + 1.0))

    def partial_sum(kp, m):
        return sum(kpp * comb(kp + kpp, kpp) * xi ** kpp * (1 - xi) ** kp
                   for kpp in range(m + 1))

    for kp in (0, 1, 5, 20):
        for m in (0, 1, 2, 5, 10):
            assert closed_at(float(kp), float(m)) == pytest.approx(
                partial_sum(kp, m), abs=1e-13), (kp, m)


def test_full_mmse_untruncated_limit_is_corollary():
    # as the truncation depth grows the exact posterior mean converges to
    # the corollary form xi (1+k')/(1-xi)^2 -- they are NOT close at the
    # depth the posterior-mass equation actually selects (see the frozen
    # values above: ~35% relative gap in the correction at k'=5, xi=0.01)
    from cptdet.numerics import hyp2f1
    from cptdet.cpt import _log_binom
    xi = 0.01
    for kp in (1.0, 5.0, 20.0):
        kl = 60.0
        f1 = hyp2f1(1.0 + kl, -kp, 2.0 + kl, xi)
        f2 = hyp2f1(1.0 + kl, -kp, 3.0 + kl, xi)
        bracket = ((xi - 1.0) * (kl + 1.0)
                   * np.exp(_log_binom(1.0 + kl + kp, 1.0 + kl)) * f1
                   - np.exp(_log_binom(2.0 + kl + kp, 2.0 + kl)) * xi * f2)
        deep = float(xi / (1.0 - xi) ** 2 * (xi ** kl * bracket + kp + 1.0))
        assert deep == pytest.approx(silence_correction(kp, xi, "corollary"),
                                     rel=1e-10)
    # and the measured gap at the solved depth stays large
    gap = abs(silence_correction(5.0, xi, "full_mmse")
              - silence_correction(5.0, xi, "corollary"))
    assert gap / silence_correction(5.0, xi, "full_mmse") > 0.3


def test_silence_correction_domain():
    with pytest.raises(ValueError):
        silence_correction(5.0, 0.0, "corollary")
    with pytest.raises(ValueError):
        silence_correction(5.0, 0.01, "bogus")


def test_estimate_acptd_modes():
    params = DEFAULT_PARAMS
    dep = _homogeneous(1e4)
    cfg = configure_acptd(dep, params)
    # synthetic y with Re{s^H y}/(N2 sqrt(rho)) = 5 exactly
    y = np.full(params.N2, 5.0 * math.sqrt(cfg.rho), dtype=complex)
    corr = estimate_acptd(y, cfg, params, mode="corollary")
    assert corr == pytest.approx(5.0 + CORR_COROLLARY_KP5_XI001, rel=1e-10)
    full = estimate_acptd(y, cfg, params, mode="full_mmse")
    assert full == pytest.approx(5.0 + CORR_FULL_KP5_XI001, rel=1e-9)
    # negative relaxed observation: correction argument clamps at zero
    y_neg = np.full(params.N2, -0.4 * math.sqrt(cfg.rho), dtype=complex)
    got = estimate_acptd(y_neg, cfg, params, mode="full_mmse")
    assert got == pytest.approx(-0.4 + 0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# rounding
# ---------------------------------------------------------------------------

def test_round_ni_basics():
    assert round_ni(5.49, 1000) == 5
    assert round_ni(5.51, 1000) == 6
    assert round_ni(5.5, 1000) == 6      # half rounds up
    assert round_ni(-0.3, 1000) == 0     # clamp at zero
    assert round_ni(-0.5, 1000) == 0
    assert round_ni(1000.7, 1000) == 1000  # clamp at Q
    assert round_ni(0.0, 1000) == 0


def test_round_ni_vectorized():
    out = round_ni(np.array([-1.0, 0.49, 0.5, 7.2]), 6)
    np.testing.assert_array_equal(out, [0, 0, 1, 6])
    assert out.dtype == np.int64


def test_round_ni_within_half_of_clamp():
    rng = np.random.default_rng(43)
    for k_real in rng.uniform(-3, 15, size=200):
        k_int = round_ni(float(k_real), 10)
        assert 0 <= k_int <= 10
        assert abs(k_int - min(max(k_real, 0.0), 10.0)) <= 0.5 + 1e-12


def test_round_ml_gaussian_family_peak():
    dep = _homogeneous(1e4)
    stats = theory.make_stats(dep, DEFAULT_PARAMS)
    family = theory.ml_family("acptf", DEFAULT_PARAMS, stats)
    # density peak at the mean: integer k_real snaps to itself (variance
    # grows with k, so the tie against k-1 resolves within {k-1, k})
    assert round_ml(0.0, "acptf", family, 20) == 0
    for k in (1.0, 3.0, 7.0):
        assert round_ml(k, "acptf", family, 20) in (int(k) - 1, int(k))


def test_round_ml_window_matches_full_search():
    dep = _homogeneous(1e4)
    stats = theory.make_stats(dep, DEFAULT_PARAMS)
    family = theory.ml_family("acptf", DEFAULT_PARAMS, stats)
    rng = np.random.default_rng(47)
    for k_real in rng.uniform(-0.5, 15.0, size=50):
        full = round_ml(float(k_real), "acptf", family, 30)
        windowed = round_ml(float(k_real), "acptf", family, 30, window=8)
        assert full == windowed


def test_round_ml_rejects_unknown_mechanism():
    with pytest.raises(ValueError):
        round_ml(1.0, "bogus", None, 10)
