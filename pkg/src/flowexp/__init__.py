"""Exact Lie-series expansions (Chen-Fliess, Magnus, CBHD, Sussmann) for
control-affine systems, checked against an adaptive reference solver."""
from ._kernels import BACKEND_NAME
from .coords import (CoordTable, bernoulli, cbhd_coeffs, coord_first_kind,
                     coord_pseudo_first_kind, coord_second_kind)
from .fields import Space, RPoly, VField, lie_bracket, substitute_bracket
from .flows import (FlowResult, MatrixControl, OdeProblem, autonomous_flow, flow_with_jacobian,
                    matrix_exp, matrix_magnus, solve_reference)
from .freealg import NCSeries, Truncation, nc_exp, nc_log
from .hall import Bracket, HallBasis, X, build_hall_basis, hall_decompose
from .signals import Control, ControlTuple, word_series

__version__ = "0.1.0"
