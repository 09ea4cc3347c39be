"""Embedded random-walk skeleton scheme for Brownian functionals."""

__version__ = "0.1.0"

from .exit_sampler import (DEFAULT_LAW, RootSearchError, UnitExitLaw, exit_scale,
                           sample_exit, sample_unit_exit, unit_exit_survival)
from .skeleton import (SkeletonPath, SkeletonTooLargeError, StepFunction, bracket_walk,
                       counting, simulate_paths, simulate_skeleton, walk_value)
from .functionals import (CATALOG, FunctionalSpec, bachelier_call, brownian_identity,
                          compensated_square, constant, digital, generic_terminal,
                          make_functional)
from .discrete_calculus import (ProjectedPath, ProjectionError, bracket_of_bracket,
                                covariation_with_walk, discrete_integral, max_jump, project,
                                reconstruct)

__all__ = [n for n in dir() if not n.startswith("_")]
