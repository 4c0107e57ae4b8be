"""Signal-free intersection simulator.

Vehicles negotiate crossing priority through a consensus auction and each
one plans its own acceleration with a convex model-predictive controller.
The package exposes the building blocks (geometry, dynamics, auction,
priorities, QP solver, MPC), the closed-loop simulator, trace metrics,
and a CLI entry point.
"""

__version__ = "0.1.0"
