"""cptdet — detecting how many devices are simultaneously active in a
massive-IoT slot from one shared pilot, under three coordinated pilot
transmission mechanisms (unassisted, phase-assisted, dynamically
power-controlled), with exact/approximate theory and a reproducible Monte
Carlo harness."""

from .cpt import (AcptdConfig, CptParams, Estimate, MECHANISMS,
                  SlotRealization, configure_acptd, detect_ucpt_optimal,
                  estimate_acptd, estimate_acptf, estimate_ucpt, round_ml,
                  round_ni, silence_correction, simulate_acptd_slot,
                  simulate_acptf_slot, simulate_ucpt_slot)
from .deployment import (Deployment, PowerConfig, draw_active_set,
                         generate_deployment, harmonic_mean_snr,
                         homogeneous_deployment, nominal_harmonic_snr,
                         pathloss_db)
from .experiments import (Campaign, CampaignResult, run_pmf, run_sweep,
                          run_table3, run_validation_suite)
from .numerics import AccuracyError, QuadratureSpec, RootBracket
from .theory import (DetectionStats, DistModel, acptd_cdf, acptd_student_fit,
                     acptf_gaussian_model, make_stats, ml_family,
                     success_probability_theory, ucpt_cdf, variance_formulas)

__version__ = "0.1.0"
