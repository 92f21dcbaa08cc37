"""Quadrature and cubature rules with few nodes from truncated moment data."""

from .conic import LpProblem, SdpProblem, solve_lp, solve_sdp
from .curve import AffineMap, CurveSpec, curve_grid_rule, line_quadrature, pushforward, solve_curve_grid, szego_rule
from .gauss import PenaltySpec, golub_welsch, gauss_rule, penalty_optimize, sign_condition_root_bound_check, solve_gauss
from .moments import (MeasureSpec, MomentError, MomentVector, localizing_matrix, moment_matrix, parse_measure_spec,
                      parse_moments, psd_rank, riesz_apply, serialize_moments, standard_moments)
from .plane import (CertificatePolynomial, cubature_rule, degree3_rule, gradient_ideal_roots, grid_lower_bound_instance,
                    solve_cubature)
from .poly import Polynomial, format_polynomial, monomial_basis, parse_polynomial
from .rules import (NumericalFailure, QuadratureRule, VerificationReport, bound_table, caratheodory_prune, merge_nodes,
                    verify_exactness, weights_nnls)

__version__ = "0.1.0"

__all__ = [
    "AffineMap", "CertificatePolynomial", "CurveSpec", "LpProblem", "MeasureSpec", "MomentError", "MomentVector",
    "NumericalFailure", "PenaltySpec", "Polynomial", "QuadratureRule", "SdpProblem", "VerificationReport",
    "bound_table", "caratheodory_prune", "cubature_rule", "curve_grid_rule", "degree3_rule", "format_polynomial",
    "gauss_rule", "golub_welsch", "gradient_ideal_roots", "grid_lower_bound_instance", "line_quadrature",
    "localizing_matrix", "merge_nodes", "moment_matrix", "monomial_basis", "parse_measure_spec", "parse_moments",
    "parse_polynomial", "penalty_optimize", "psd_rank", "pushforward", "riesz_apply", "serialize_moments",
    "sign_condition_root_bound_check", "solve_cubature", "solve_curve_grid", "solve_gauss", "solve_lp", "solve_sdp",
    "standard_moments", "szego_rule", "verify_exactness", "weights_nnls",
]
