from .grid import Axis, Grid, DiscreteLevel
from .evalexpr import Evaluator, OpaqueTable, scalar_opaque, constant_opaque
from .discretize import DiscreteBracket, DiscreteProjection, pushforward
from .checks import (antisymmetry_defect, jacobi_residual, jacobi_order,
                     trt_defect, pushforward_defect, nullspace_pair,
                     closure_discrepancy)
from .evolve import DiscreteFunctional, evolve, conservation_report
from .states import random_state, symmetrizer
