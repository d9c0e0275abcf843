"""Smoothing integral S(n) for a trapped and a non-trapped launch.

Small n keeps this under a minute. At n = 32 the packet is too wide for the
trapped growth to show (its ratio comes out below 1); the acceptance scan
uses n = 64, 128, 256 (see demos/configs/scan_smoothing.ini).
"""
from trapsmooth import make_disc, make_scene, plateau_disc
from trapsmooth.schrodinger import smoothing_scan

n_list = [32, 64]
two = make_scene([make_disc((0, 0), 1), make_disc((4, 0), 1)], name="two-disc")
one = make_scene([make_disc((0, 0), 1)], name="disc")

runs = [
    ("trapped", two, (2.0, 0.0), plateau_disc((2, 0), 0.3, 0.6)),
    ("non-trapped", one, (-1.5, 1.3), plateau_disc((0, 0), 1.3, 1.8)),
]
for label, scene, z0, chi in runs:
    rep = smoothing_scan(scene, n_list, z0, (1.0, 0.0), chi, 0.1, progress=print)
    print(f"{label}: classification={rep.classification} "
          f"plain ratios={[round(q, 4) for q in rep.ratios_plain]} "
          f"log ratios={[round(q, 4) for q in rep.ratios_log]}\n")
