"""Trapped vs escaping rays in the two-disc scene.

The ray along the common perpendicular never leaves, so the trapping
integral grows by a fixed amount per period. A generic ray escapes after a
few bounces and its integral stops growing.
"""
from trapsmooth import PhasePoint, SymbolSpec, check_ikawa, make_disc, make_scene, plateau_disc, trap_integral
from trapsmooth.billiard import two_obstacle_periodic_orbit

scene = make_scene([make_disc((0, 0), 1), make_disc((4, 0), 1)], name="two-disc")
print("Ikawa hypotheses:", check_ikawa(scene).to_dict())

orb = two_obstacle_periodic_orbit(scene, 0, 1)
print("periodic orbit: period", orb.period, "eigenvalues", orb.eigenvalues.real)

symbol = SymbolSpec(plateau_disc((2, 0), 0.5, 1.0))
for label, start in [("trapped", PhasePoint((2, 0), (1, 0))), ("escaping", PhasePoint((2, 0.3), (0.8, 0.6)))]:
    for T in (25.0, 50.0, 100.0):
        r = trap_integral(start, symbol, T, scene)
        print(f"{label:9s} T={T:5.0f}  integral={r.value:9.4f}  diagnosis={r.diagnosis}")
