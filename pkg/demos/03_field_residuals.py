"""
Field-equation residuals and grid refinement
============================================

Build velocity fields from the equilibrium log-amplitude and phase, evaluate
the residual of every field equation exactly and on grids, and watch a
perturbed solution fail the checks in proportion to the perturbation.
"""

import sympy as sp

from nelson_tfd import PhysicalParams
from nelson_tfd.fields import (
    X,
    Grid,
    ScalarField2D,
    continuity_residual,
    dynamical_residual,
    equilibrium_fields,
    fokker_planck_residual,
    kinematical_residual,
    osmotic_residual,
    velocities_from_rs,
)

params = PhysicalParams.from_beta_bar(1.0)
R, S, P = equilibrium_fields(params)

# Closed-form fields differentiate symbolically: residuals sit at rounding.
vel = velocities_from_rs(R, S, params)
grid = Grid(4.0, 0.05)
print("closed form")
print("  osmotic      ", osmotic_residual(vel, P, params, grid))
print("  continuity   ", continuity_residual(vel, P, params, grid))
print("  Fokker-Planck", fokker_planck_residual(vel, P, params, "forward", grid))
print("  kinematical  ", kinematical_residual(vel, params, grid))
print("  dynamical    ", dynamical_residual(vel, None, params, grid))

# Sampled fields use second-order stencils.  The Fokker-Planck residual drops
# by four for each halving of h.
print("gridded Fokker-Planck residual")
for h in (0.04, 0.02, 0.01):
    g = Grid(4.0, h)
    vel_g = velocities_from_rs(R.sample(g), S.sample(g), params)
    print(f"  h={h:<5} {fokker_planck_residual(vel_g, P.sample(g), params, 'forward'):.3e}")

# A wrong log-amplitude breaks the osmotic equation by exactly the slope of
# the perturbation.
for eps in (0.05, 0.1):
    bumped = velocities_from_rs(R + ScalarField2D.from_expr(eps * X), S, params)
    print(f"osmotic residual with R + {eps} x: {osmotic_residual(bumped, P, params, grid):.4f}")

# Dropping the potential leaves the force term omega^2 x unbalanced.
print("dynamical residual with V = 0:", dynamical_residual(vel, sp.Integer(0), params, grid))
