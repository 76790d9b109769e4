"""Numerical laboratory for coindex-1 heterodimensional cycles."""

__version__ = "0.1.0"

from .cycle_model import CycleParams, MultiplierCase, TailSpec, ref1, ref2, ref_df, ref_sf, validate_nondegeneracy
from .return_map import CrossMap, LiteralReturn, ReturnCoeffs, compose_T_km, cross_map_T_km, return_coeffs
from .cone_checker import ConeSpec, check_all_cones, check_cone_invariance
from .covering_engine import CoveringSet, build_covering_set, build_P_N, search_km, verify_covering
from .blender_verifier import BlenderCertificate, Disc, verify_blender
from .cycle_analysis import (
    activation_intervals, compute_moduli, focus_sequences, rational_theta_check, regime_report,
    secondary_cycle_mu, sweep_mu, theta_prime_estimate,
)

__all__ = [
    "ActivationInterval", "BlenderCertificate", "ConeSpec", "CoveringSet", "CrossMap", "CycleParams", "Disc",
    "LiteralReturn", "MultiplierCase", "ReturnCoeffs", "TailSpec", "activation_intervals", "build_P_N",
    "build_covering_set", "check_all_cones", "check_cone_invariance", "compose_T_km", "compute_moduli",
    "cross_map_T_km", "focus_sequences", "rational_theta_check", "ref1", "ref2", "ref_df", "ref_sf",
    "regime_report", "return_coeffs", "search_km", "secondary_cycle_mu", "sweep_mu", "theta_prime_estimate",
    "validate_nondegeneracy", "verify_blender", "verify_covering",
]
from .cycle_analysis import ActivationInterval  # noqa: E402
