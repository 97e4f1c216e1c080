"""Slow periodic orbits near a critical hypersurface of a potential.

Periodic solutions of ``x'' + V'(x)/eps = 0`` with unit period shadow
closed geodesics of the critical manifold ``M = {V' = 0}`` as ``eps -> 0``.
The package builds the geometry of ``M``, closed geodesics, the second-order
expansion of the orbits, a Newton corrector, the reduction to a functional
on loops in ``M`` and a claims harness that checks the predicted rates.
"""

from .errors import *  # noqa: F401,F403
from .expansion import ExpansionBundle, build_bundle, residual
from .geometry import (CircleScenario, Scenario, SphereScenario, TorusScenario,
                       make_scenario, scenario_bounds)
from .loops import (JacobiOperator, Loop, TangentField, energy, energy_gradient,
                    find_geodesic, manifold_loop)
from .orbit import adiabatic_sweep, attractive_correct, correct_orbit
from .periodic_ode import solve_constant, solve_perturbed
from .reduction import (minimize_reduced, reduced_energy, reduced_gradient,
                        solve_normal)

__version__ = "0.1.0"
