import math

import numpy as np
import pytest

from trapsmooth.billiard import GlancingAbort, PhasePoint, flow, reflect
from trapsmooth.geometry import SceneGeometry, make_disc, make_scene, signed_distance_and_normal
from trapsmooth.phasespace import (
    PhaseWindow,
    check_propagation,
    husimi,
    husimi_centroid,
    measure_mass_near,
    propagation_run,
)
from trapsmooth.schrodinger import CoherentParams, GridField, coherent_state, make_domain

N = 64
H = 1.0 / N
P0 = PhasePoint((0.0, 0.0), (0.8, 0.6))
EMPTY = SceneGeometry(())


@pytest.fixture(scope="module")
def packet():
    dom = make_domain(None, N, q=16, box=(-1.0, 1.0, -1.0, 1.0), absorber=False)
    return coherent_state(CoherentParams(N, P0.z, P0.zeta), dom)


@pytest.fixture(scope="module")
def packet_husimi(packet):
    return husimi(packet, H, PhaseWindow.around(P0, H))


def _cell(Hf):
    return [np.diff(a).mean() for a in (Hf.zx, Hf.zy, Hf.zetax, Hf.zetay)]


def test_argmax_at_launch_point(packet_husimi):
    am = packet_husimi.argmax()
    c = _cell(packet_husimi)
    d = np.abs(np.r_[am.z, am.zeta] - np.r_[P0.z, P0.zeta])
    assert np.all(d <= np.array(c) + 1e-12)


def test_positive_and_own_point_concentration(packet_husimi):
    assert packet_husimi.values.min() >= 0.0
    fr = measure_mass_near(packet_husimi, P0, 5.0)
    assert fr.fraction >= 0.9 and not fr.zero_mass


def test_far_point_fraction_small(packet_husimi, packet):
    far = PhasePoint((0.0, 0.0), (0.8 + 12 * math.sqrt(H), 0.6))
    Hf = husimi(packet, H, PhaseWindow.around(far, H))
    assert measure_mass_near(Hf, far, 5.0).fraction <= 0.05


def test_zero_field(packet):
    z = GridField(np.zeros_like(packet.values), packet.domain, 0.0)
    Hf = husimi(z, H, PhaseWindow.around(P0, H))
    assert np.all(Hf.values == 0)
    fr = measure_mass_near(Hf, P0)
    assert fr.fraction == 0.0 and fr.zero_mass


def test_translation_covariance(packet):
    shift = 20  # nodes along x
    g = packet.grid
    moved = GridField(np.roll(packet.values, shift, axis=0), packet.domain, 0.0)
    dz = shift * g.dx
    w = PhaseWindow((-0.5, 0.7, -0.4, 0.4), (0.4, 1.2, 0.2, 1.0))
    a = husimi(packet, H, w)
    b = husimi(moved, H, w)
    am, bm = a.argmax(), b.argmax()
    assert abs((bm.z[0] - am.z[0]) - dz) <= np.diff(a.zx).mean() + 1e-12
    assert bm.z[1] == am.z[1] and bm.zeta == am.zeta


def test_frame_mass_consistency(packet):
    w = PhaseWindow((-0.6, 0.6, -0.6, 0.6), (0.8 - 0.7, 0.8 + 0.7, 0.6 - 0.7, 0.6 + 0.7))
    Hf = husimi(packet, H, w)
    assert 0.9 <= Hf.total() / packet.mass() <= 1.1


def test_under_resolved_window(packet):
    with pytest.raises(ValueError):
        husimi(packet, H, PhaseWindow((-0.2, 0.2, -0.2, 0.2), (0.0, 60.0, 0.0, 1.0)))


@pytest.fixture(scope="module")
def free_run():
    start = PhasePoint((-0.6, 0.0), (1.0, 0.0))
    res = propagation_run(EMPTY, start, N, [0.0, 0.25, 0.5], box=(-1.5, 1.5, -1.0, 1.0), q=32, dt_factor=0.1,
                          absorber=False)
    return start, res


def test_free_space_checkpoints(free_run):
    start, res = free_run
    rep = check_propagation(res.snapshots, start, EMPTY, N)
    assert len(rep.fractions) == 3
    assert rep.fractions[0] >= 0.9
    assert rep.min_fraction >= 0.9 and rep.passed
    assert rep.to_dict()["status"] == "PASS"


def test_husimi_centroid_moves_at_twice_zeta(free_run):
    start, res = free_run
    cs = []
    for f in res.snapshots:
        s = N * f.t
        p = PhasePoint((start.z[0] + 2 * s, 0.0), (1.0, 0.0))
        cs.append(husimi_centroid(husimi(f, H, PhaseWindow.around(p, H)), p))
    s = np.array([N * f.t for f in res.snapshots])
    v = np.polyfit(s, [c.z[0] for c in cs], 1)[0]
    assert v == pytest.approx(2.0, rel=0.02)


def test_reflection_follows_specular_law():
    n = 128
    scene = make_scene([make_disc((0, 0), 1.0)])
    start = PhasePoint((-1.5, 0.3), (1.0, 0.0))
    res = propagation_run(scene, start, n, [0.0, 0.45], box=(-2.3, -0.3, -0.5, 1.3))
    rep = check_propagation(res.snapshots, start, scene, n)
    assert rep.min_fraction >= 0.6
    traj = flow(start, 1.0, scene)
    hit = traj.hits[0]
    normal = signed_distance_and_normal(scene.obstacles[hit.obstacle], hit.point).normal
    predicted = reflect(np.array(start.zeta), normal)
    pre, post = rep.centroids
    assert np.linalg.norm(np.array(pre.zeta) - start.zeta) <= 0.05
    assert np.linalg.norm(np.array(post.zeta) - predicted) <= 0.05 * np.linalg.norm(predicted)


def test_glancing_reference_aborts(packet):
    scene = make_scene([make_disc((0.0, 2.0), 1.0)])
    start = PhasePoint((-3.0, 1.0), (1.0, 0.0))
    f = GridField(packet.values, packet.domain, 2.0 / N)
    with pytest.raises(GlancingAbort):
        check_propagation([f], start, scene, N)


def test_checkpoints_beyond_horizon_are_skipped(packet):
    late = GridField(packet.values, packet.domain, 10.0)
    with pytest.raises(ValueError):
        check_propagation([late], P0, EMPTY, N)
