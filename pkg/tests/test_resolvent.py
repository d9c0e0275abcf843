import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapsmooth.cutoffs import plateau_disc
from trapsmooth.geometry import make_disc, make_scene
from trapsmooth.maxprinciple import MaxPrincipleCase, check_hypotheses, verify_max_principle
from trapsmooth.resolvent import (
    ResolutionBudgetError,
    assemble_helmholtz,
    bound_statistic,
    cutoff_resolvent_norm,
    dense_cutoff_resolvent_norm,
    epsilon_policy,
    resolvent_scan,
    tt_star_consistency,
)

BOX = (-1.85, 1.85, -1.85, 1.85)
CHI = plateau_disc((0, 0), 0.95, 1.25)


@pytest.fixture(scope="module")
def empty96():
    return assemble_helmholtz(None, 96, box=BOX, lambda_max=400)


@pytest.fixture(scope="module")
def empty48():
    return assemble_helmholtz(None, 48, box=BOX, lambda_max=90)


def test_real_part_spectrum_matches_dense_laplacian():
    d = assemble_helmholtz(None, 32, box=(0, 1, 0, 1), absorber=False)
    A = d.matrix.toarray()
    assert np.abs(A - A.T).max() == 0 and np.abs(A.imag).max() == 0
    h = d.grid.dx
    m = 32
    # Dirichlet 5-point eigenvalues on the m x m node block
    k = np.arange(1, m + 1)
    mu = (4 / h ** 2) * np.sin(k * np.pi / (2 * (m + 1))) ** 2
    expected = np.sort((mu[:, None] + mu[None, :]).ravel())
    got = np.linalg.eigvalsh(A)
    assert np.allclose(got, expected, rtol=1e-10, atol=1e-10 * expected.max())


def test_obstacle_rows_are_identity():
    scene = make_scene([make_disc((0, 0), 0.5)])
    d = assemble_helmholtz(scene, 40, box=BOX, lambda_max=50)
    A = d.matrix.tocsr()
    for i in np.flatnonzero(d.obstacle.ravel())[:50]:
        row = A.getrow(i)
        assert row.nnz == 1 and row[0, i] == 1.0
    assert np.all(d.sigma[d.obstacle] == 0)


def test_absorber_lives_in_the_margin(empty48):
    d = empty48
    xmin, xmax, ymin, ymax = d.box
    w = 0.15 * (xmax - xmin)
    X, Y = np.meshgrid(d.grid.x, d.grid.y, indexing="ij")
    inner = (X > xmin + w) & (X < xmax - w) & (Y > ymin + w) & (Y < ymax - w)
    assert np.all(d.sigma[inner] == 0) and d.sigma.max() > 0
    A = d.matrix
    assert abs(A - A.T).max() == 0  # complex symmetric, real part symmetric


def test_resolution_budget():
    with pytest.raises(ResolutionBudgetError):
        assemble_helmholtz(None, 48, box=BOX, lambda_max=400)


def test_elliptic_region_bound(empty96):
    est = cutoff_resolvent_norm(empty96, -1.0, 0.0, CHI)
    assert est.converged and est.norm <= 1.05


@pytest.mark.parametrize("lam", [-400.0, -200.0, -100.0])
def test_negative_lambda_matches_spectral_distance(empty96, lam):
    est = cutoff_resolvent_norm(empty96, lam, 0.0, CHI)
    assert est.norm * abs(lam) == pytest.approx(1.0, rel=0.05)
    assert est.norm <= 1.0 / abs(lam) * 1.05


@pytest.mark.parametrize("lam", [-50.0, -5.0])
def test_epsilon_insensitive_away_from_spectrum(empty96, lam):
    a = cutoff_resolvent_norm(empty96, lam, 1e-2, CHI).norm
    b = cutoff_resolvent_norm(empty96, lam, 1e-3, CHI).norm
    assert a == pytest.approx(b, rel=0.01)


@settings(max_examples=6, deadline=None)
@given(st.floats(1.0, 80.0), st.floats(0.05, 2.0))
def test_norm_below_inverse_epsilon(empty48, lam, eps):
    est = cutoff_resolvent_norm(empty48, lam, eps, CHI)
    assert est.norm <= 1.0 / eps * 1.05


@pytest.mark.parametrize("lam,eps", [(-5.0, 0.0), (20.0, 0.2), (60.0, 0.1)])
def test_power_iteration_matches_dense_svd(empty48, lam, eps):
    est = cutoff_resolvent_norm(empty48, lam, eps, CHI)
    ref = dense_cutoff_resolvent_norm(empty48, lam, eps, CHI)
    assert est.norm == pytest.approx(ref, rel=1e-3)


@pytest.mark.parametrize("lam,eps", [(3.0, 0.3), (60.0, 0.1)])
def test_conjugation_symmetry(empty48, lam, eps):
    a = cutoff_resolvent_norm(empty48, lam, eps, CHI, rtol=1e-10, maxiter=20000).norm
    b = cutoff_resolvent_norm(empty48.conjugate(), lam, -eps, CHI, rtol=1e-10, maxiter=20000).norm
    assert a == pytest.approx(b, rel=1e-6)


def test_epsilon_policy():
    assert epsilon_policy(0.0) == pytest.approx(1 / math.log(2))
    assert epsilon_policy(100.0, c=2.0) == pytest.approx(2 / math.log(102))
    assert epsilon_policy(5.0, c=0.3, kind="const") == 0.3
    with pytest.raises(ValueError):
        epsilon_policy(1.0, kind="sqrt")


def test_bound_statistic():
    assert bound_statistic(2.0, 4.0) == pytest.approx(2 * 3 / math.log(6))


@pytest.fixture(scope="module")
def scans():
    lam = np.geomspace(1, 400, 30)
    two = make_scene([make_disc((-0.8, 0), 0.4), make_disc((0.8, 0), 0.4)], name="two-disc")
    one = make_scene([make_disc((0, 0), 0.4)], name="one-disc")
    out = {}
    for name, sc in (("two", two), ("one", one)):
        d = assemble_helmholtz(sc, 96, box=BOX, lambda_max=400)
        out[name] = resolvent_scan(d, lam, CHI)
    return out


def test_two_disc_scan_shape(scans):
    rep = scans["two"]
    assert len(rep.rows) == 30 and all(r.norm > 0 for r in rep.rows)
    assert math.isfinite(rep.C_star)
    assert rep.max_in_lowest_decade()
    assert rep.trend(50.0)["growth"] <= 1.2


def test_nontrapping_scan_bprime_bounded(scans):
    rep = scans["one"]
    bp = [r.B_prime for r in rep.rows if r.lam >= 50]
    assert max(bp) / min(bp) <= 1.5
    assert rep.trend(50.0, "B_prime")["growth"] <= 1.2


def test_scan_is_deterministic(scans):
    two = make_scene([make_disc((-0.8, 0), 0.4), make_disc((0.8, 0), 0.4)], name="two-disc")
    d = assemble_helmholtz(two, 96, box=BOX, lambda_max=400)
    again = resolvent_scan(d, np.geomspace(1, 400, 30)[:5], CHI)
    assert [r.norm for r in again.rows] == [r.norm for r in scans["two"].rows[:5]]


def test_outlier_rule():
    from trapsmooth.resolvent import _mark_outliers
    flags = _mark_outliers([1.0, 1.1, 0.9, 50.0, 1.0, 1.2, 1.0])
    assert flags.tolist() == [False, False, False, True, False, False, False]


def test_tt_star_is_informational(scans):
    out = tt_star_consistency(0.8, scans["one"])
    assert out["gating"] is False and math.isfinite(out["ratio"])


# -- maximum principle --------------------------------------------------------------

def test_single_pole_family_passes():
    res = verify_max_principle(MaxPrincipleCase("single_pole"))
    assert res.status == "PASS" and res.hypotheses_ok
    c = [r["c_h"] for r in res.rows]
    assert all(x <= 2 * res.C_star for x in c)
    # closed form: max on [4/5, 6/5] is 1/(β h α)
    for r in res.rows:
        assert r["max_abs_f"] == pytest.approx(1 / (1.5 * r["h"]), rel=1e-6)


def test_constant_family_passes():
    res = verify_max_principle(MaxPrincipleCase("constant"))
    assert res.status == "PASS"
    for r in res.rows:
        assert r["c_h"] == pytest.approx(r["h"] / math.log(1 / r["h"]))


def test_pole_inside_strip_is_a_hypothesis_violation():
    res = verify_max_principle(MaxPrincipleCase("single_pole", beta=0.5))
    assert res.status == "HYPOTHESIS_VIOLATION" and not res.passed


def test_lower_half_plane_bound_sampled():
    hyp = check_hypotheses(MaxPrincipleCase("single_pole"), 1e-3)
    assert hyp["holomorphic"] and hyp["lower_ok"] and hyp["lower_bound_ratio"] <= 1.0


def test_pole_array_reported():
    res = verify_max_principle(MaxPrincipleCase("pole_array", assert_result=False))
    assert res.status in ("PASS", "FAIL", "HYPOTHESIS_VIOLATION")
    assert "informational" in " ".join(res.notes)


def test_unknown_family():
    with pytest.raises(ValueError):
        verify_max_principle(MaxPrincipleCase("gaussian"))
