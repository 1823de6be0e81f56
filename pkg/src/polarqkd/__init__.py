"""Simulation and noise analysis for polarization-rotation key distribution."""
from .adversary import EveStrategy, IntensityMonitor, apply_siphon, intercept_resend, monitor
from .noise import (
    LinkNoise,
    analyze,
    error_prob_exact,
    error_prob_quadrature,
    error_prob_series,
    error_prob_single_exact,
    pdf_sum_links,
    sample_link_error,
)
from .polarization import Basis, PolarizationState, Pulse, encode_bit, measure, rotate, split_pulse
from .protocols import ChannelModel, KeyBits, RoundRecord, Transcript, qber, run_bb84, run_three_stage, run_two_stage
from .reconcile import ReconciliationConfig, ReconciliationReport, choose_block_length, digest, permute, reconcile, verify_keys
from .rng import RandomStream

__version__ = "0.1.0"
