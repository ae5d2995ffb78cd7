"""Bifurcation diagrams for regularized MEMS equilibria.

Adaptive P1 finite elements coupled to pseudo arc-length continuation,
with fold and branch-point detection, branch switching, and an
independent ODE oracle for the unit disk.
"""

__version__ = "0.1.0"
