"""Safe quadcopter flight: convex B-spline planning, barrier-filtered tracking.

The package splits into layers that mirror the pipeline:

- splines: clamped uniform B-splines, derivative control points, snap Gram.
- flatness: maps between flat outputs, full state/input, and reduced inputs.
- socp: a small second-order cone program container with a conic solver.
- planner: compiles mission constraints onto spline coefficients and solves.
- tracker: barrier-based safety filter around a nominal controller.
- simverify: double-integrator closed loop and dense constraint verification.
- cli: scenario-file driven entry points (plan / track / verify / export).
"""

from .splines import (
    KnotVector,
    SplineCurve,
    basis_eval,
    build_derivative_matrix,
    clamped_uniform_knots,
    curve_eval,
    derivative_control_points,
    snap_gram,
)

__all__ = [
    "KnotVector",
    "SplineCurve",
    "basis_eval",
    "build_derivative_matrix",
    "clamped_uniform_knots",
    "curve_eval",
    "derivative_control_points",
    "snap_gram",
]

__version__ = "0.1.0"
