"""Cutoff resolvent norms against the log bound, with and without trapping.

B(λ) = ‖χ R(λ + iε) χ‖ (1 + √λ) / log(2 + λ) should stay bounded as λ grows
for the two-disc scene; for a single disc even B'(λ) = ‖·‖ (1 + √λ) does.
"""
import numpy as np

from trapsmooth import make_disc, make_scene, plateau_disc
from trapsmooth.resolvent import assemble_helmholtz, resolvent_scan

box = (-1.85, 1.85, -1.85, 1.85)
chi = plateau_disc((0, 0), 0.95, 1.25)
lam = np.geomspace(1, 400, 16)
scenes = {
    "two discs": make_scene([make_disc((-0.8, 0), 0.4), make_disc((0.8, 0), 0.4)]),
    "one disc": make_scene([make_disc((0, 0), 0.4)]),
}
for name, scene in scenes.items():
    rep = resolvent_scan(assemble_helmholtz(scene, 96, box=box, lambda_max=400), lam, chi)
    print(f"\n{name}: argmax B at lambda={rep.argmax_B():.3g}, "
          f"trend of B on [50, 400]: {rep.trend(50.0)['growth']:.3f}")
    print("  lambda        norm         B        B'")
    for r in rep.rows:
        print(f"  {r.lam:8.3f}  {r.norm:10.4e}  {r.B:8.4f}  {r.B_prime:8.4f}")
