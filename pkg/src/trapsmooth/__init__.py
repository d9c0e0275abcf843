"""Billiard trapping, coherent-state smoothing scans and cutoff-resolvent estimates
for the Schrödinger equation outside convex obstacles in the plane."""
from .billiard import PhasePoint, SymbolSpec, flow, trap_integral, two_obstacle_periodic_orbit
from .cutoffs import Cutoff, constant, plateau_disc, plateau_rect, power_decay, radial_bump
from .geometry import SceneGeometry, check_ikawa, make_disc, make_ellipse, make_scene

__version__ = "0.1.0"

__all__ = [
    "PhasePoint", "SymbolSpec", "flow", "trap_integral", "two_obstacle_periodic_orbit",
    "Cutoff", "constant", "plateau_disc", "plateau_rect", "power_decay", "radial_bump",
    "SceneGeometry", "check_ikawa", "make_disc", "make_ellipse", "make_scene",
]
