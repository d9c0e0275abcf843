import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapsmooth.cutoffs import plateau_disc, radial_bump
from trapsmooth.geometry import make_disc, make_scene
from trapsmooth.schrodinger import (
    ABSORBER,
    OBSTACLE,
    CoherentParams,
    CrankNicolson,
    EnvelopeOverlapError,
    GridField,
    ResolutionError,
    SmoothingProbe,
    SplitStepper,
    coherent_state,
    evolve,
    load_snapshot,
    make_domain,
    multiplier_sq,
    save_snapshot,
    smoothing_observable,
    smoothing_scan,
    step_crank_nicolson,
)
from oracles import free_gaussian

BOX = (-3.5, 3.0, -2.5, 2.5)
DISC = make_scene([make_disc((0.5, 0.0), 0.6)])


def _free_domain(n, dx, box=BOX, scene=None):
    return make_domain(scene, n, dx=dx, box=box, absorber=False)


def _gaussian_field(dom, n, z0=(0.0, 0.0), zeta0=(1.0, 0.0)):
    g = dom.grid
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    return GridField(free_gaussian(X, Y, 0.0, z0, zeta0, n), dom, 0.0), X, Y


# -- coherent states ------------------------------------------------------------------

def test_coherent_state_unit_mass():
    dom = make_domain(None, 100, q=8, box=(1.0, 3.0, -1.0, 1.0), absorber=False)
    f = coherent_state(CoherentParams(100, (2.0, 0.0), (1.0, 0.0)), dom)
    assert f.mass() == pytest.approx(1.0, abs=1e-6)


def test_coherent_state_fourier_concentration():
    n = 100
    dom = make_domain(None, n, q=8, box=(1.0, 3.0, -1.0, 1.0), absorber=False)
    u = coherent_state(CoherentParams(n, (2.0, 0.0), (1.0, 0.0)), dom).values
    g = dom.grid
    P = np.abs(np.fft.fft2(u)) ** 2
    kx = 2 * np.pi * np.fft.fftfreq(g.nx, g.dx)
    ky = 2 * np.pi * np.fft.fftfreq(g.ny, g.dy)
    r = np.hypot(kx[:, None] - n, ky[None, :])
    # |û|² ∝ exp(-|ξ - nζ0|²/n): a disc of radius C√n holds 1 - exp(-C²) of it
    C = 2.0
    frac = P[r <= C * math.sqrt(n)].sum() / P.sum()
    assert frac >= 0.9
    assert frac == pytest.approx(1 - math.exp(-C * C), abs=0.01)


def test_coherent_state_width_scales_like_inverse_sqrt_n():
    def second_moment(n):
        dom = make_domain(None, n, q=8, box=(0.5, 3.5, -1.5, 1.5), absorber=False)
        f = coherent_state(CoherentParams(n, (2.0, 0.0), (1.0, 0.0)), dom)
        g = dom.grid
        X, Y = np.meshgrid(g.x, g.y, indexing="ij")
        p = np.abs(f.values) ** 2 * g.cell
        return float(np.sum(p * ((X - 2) ** 2 + Y ** 2)))

    m64, m128 = second_moment(64), second_moment(128)
    assert m64 == pytest.approx(1.0 / 64, rel=0.05)
    assert m64 / m128 == pytest.approx(2.0, rel=0.05)


def test_coherent_state_errors():
    dom = make_domain(None, 50, q=8, box=(-1, 1, -1, 1), absorber=False)
    with pytest.raises(ResolutionError):
        coherent_state(CoherentParams(60, (0, 0), (1, 0)), dom)
    dom = make_domain(DISC, 64, q=8, box=BOX, absorber=False)
    with pytest.raises(EnvelopeOverlapError):
        coherent_state(CoherentParams(64, (-0.15, 0.0), (1, 0)), dom)
    with pytest.raises(ValueError):
        CoherentParams(64, (0, 0), (1, 1))


def test_coherent_state_zero_on_obstacle():
    dom = make_domain(DISC, 32, q=8, box=BOX, absorber=False)
    f = coherent_state(CoherentParams(32, (-1.2, 0.0), (1, 0)), dom)
    assert np.all(f.values[dom.obstacle] == 0)


# -- steppers --------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["split", "cn"])
def test_unitarity_per_step(scheme):
    n = 16
    dom = make_domain(DISC, n, q=8, box=BOX, absorber=False)
    u = coherent_state(CoherentParams(n, (-1.8, 0.1), (1, 0)), dom).values
    stepper = SplitStepper(dom, 0.002) if scheme == "split" else CrankNicolson(dom, 0.002)
    cell = dom.grid.cell
    m0 = np.sum(np.abs(u) ** 2) * cell
    for _ in range(5):
        u = stepper.step(u)
        m1 = np.sum(np.abs(u) ** 2) * cell
        assert abs(m1 - m0) < 1e-12
        m0 = m1


def test_mass_drift_over_thousand_steps():
    n = 16
    dom = make_domain(DISC, n, q=8, box=BOX, absorber=False)
    f = coherent_state(CoherentParams(n, (-1.8, 0.1), (1, 0)), dom)
    r = evolve(f, 1000 * 0.001, 0.001, probes={"m": lambda fl: fl.mass()}, probe_every=50)
    assert r.steps == 1000
    assert np.max(np.abs(r.probes["m"] - 1.0)) < 1e-10
    assert abs(r.mass[-1] - r.mass[0]) < 1e-10


@pytest.mark.parametrize("scheme", ["split", "cn"])
def test_second_order_against_free_gaussian(scheme):
    n, T = 8, 0.05
    errs = []
    for k in (1, 2, 3):
        dom = _free_domain(n, 0.08 / 2 ** k)
        f, X, Y = _gaussian_field(dom, n)
        r = evolve(f, T, 0.005 / 2 ** k, scheme=scheme)
        errs.append(np.abs(r.field.values - free_gaussian(X, Y, T, (0, 0), (1, 0), n)).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4.0) <= 0.5), ratios


@pytest.mark.parametrize("scheme", ["split", "cn"])
def test_field_on_obstacle_is_annihilated(scheme):
    dom = make_domain(DISC, 16, q=8, box=BOX, absorber=False)
    u = np.zeros(dom.grid.shape, dtype=complex)
    u[dom.obstacle] = 1.0 + 2.0j
    if scheme == "cn":
        out = step_crank_nicolson(GridField(u, dom, 0.0), 0.001).values
    else:
        out = SplitStepper(dom, 0.001).step(u)
    assert np.all(out == 0)


def test_dirichlet_nodes_stay_zero_and_mask_flags():
    n = 16
    dom = make_domain(DISC, n, q=8, box=BOX)
    f = coherent_state(CoherentParams(n, (-1.8, 0.0), (1, 0)), dom)
    r = evolve(f, 0.05, 0.001)
    assert np.all(r.field.values[dom.obstacle] == 0)
    m = dom.mask
    assert np.all(m[dom.obstacle] & OBSTACLE)
    assert np.any(m & ABSORBER) and not np.any((m & ABSORBER)[dom.obstacle])


def test_cn_direct_and_gmres_agree():
    dom = make_domain(DISC, 16, q=8, box=BOX)
    u = coherent_state(CoherentParams(16, (-1.8, 0.1), (1, 0)), dom).values
    a = CrankNicolson(dom, 0.002, solver="direct").step(u)
    b = CrankNicolson(dom, 0.002, solver="gmres").step(u)
    assert np.abs(a - b).max() < 1e-10


def test_invalid_dt():
    dom = make_domain(None, 8, q=8, box=BOX, absorber=False)
    with pytest.raises(ValueError):
        SplitStepper(dom, 0.0)
    with pytest.raises(ValueError):
        CrankNicolson(dom, -1.0)


# -- evolve ----------------------------------------------------------------------------

def test_zero_field_gives_zero_probes():
    dom = make_domain(DISC, 16, q=8, box=BOX)
    f = GridField(np.zeros(dom.grid.shape, dtype=complex), dom, 0.0)
    chi = radial_bump((-1, 0), 0.8)
    r = evolve(f, 0.01, 0.001, probes={"F": lambda fl: smoothing_observable(fl, chi)})
    assert np.all(r.probes["F"] == 0) and np.all(r.mass == 0)


def test_probes_receive_read_only_views():
    dom = make_domain(None, 8, q=8, box=BOX, absorber=False)
    f, _, _ = _gaussian_field(dom, 8)

    def writer(fl):
        fl.values[0, 0] = 1.0

    with pytest.raises(ValueError):
        evolve(f, 0.002, 0.001, probes={"w": writer})


def test_group_velocity_matches_billiard_convention():
    n, T = 16, 0.02
    dom = make_domain(None, n, q=32, box=(-1.5, 2.5, -1.5, 1.5), absorber=False)
    f = coherent_state(CoherentParams(n, (0.0, 0.0), (0.6, 0.8)), dom)
    g = dom.grid
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")

    def centroid(fl):
        p = np.abs(fl.values) ** 2
        return np.array([np.sum(p * X), np.sum(p * Y)]) / np.sum(p)

    r = evolve(f, T, 1.0 / (4 * n * n), probes={"c": centroid}, probe_every=10)
    v = (r.probes["c"][-1] - r.probes["c"][0]) / (n * (r.times[-1] - r.times[0]))
    assert np.linalg.norm(v - 2 * np.array([0.6, 0.8])) <= 0.02 * 2


def test_mass_in_window_decays_after_transit():
    n = 16
    box = (-2.0, 2.0, -1.5, 1.5)
    dom = make_domain(None, n, q=8, box=box)
    f = coherent_state(CoherentParams(n, (-0.5, 0.0), (1, 0)), dom)
    chi = plateau_disc((-0.5, 0.0), 0.4, 0.7)
    w = chi(dom.grid.points()) ** 2
    r = evolve(f, 0.08, 0.0005, probes={"m": lambda fl: float(np.sum(w * np.abs(fl.values) ** 2) * dom.grid.cell)})
    m = r.probes["m"]
    # the packet leaves supp χ after (0.7 + 3/√n)/(2n) and never returns
    k0 = int(np.searchsorted(r.times, (0.7 + 3 / math.sqrt(n)) / (2 * n)))
    tail = m[k0:]
    assert tail[-1] < 1e-3 * m[0]
    assert np.all(np.diff(tail) <= 1e-12)
    assert r.absorbed[-1] > 0.5


# -- smoothing observable ----------------------------------------------------------------

def test_zero_field_observable():
    dom = make_domain(None, 8, q=8, box=BOX, absorber=False)
    f = GridField(np.zeros(dom.grid.shape, dtype=complex), dom, 0.0)
    assert smoothing_observable(f, radial_bump((0, 0), 1.0)) == 0.0


@pytest.mark.parametrize("n", [64, 128])
def test_plane_wave_patch(n):
    dom = make_domain(None, n, q=8, box=(-1.2, 1.2, -1.2, 1.2), absorber=False)
    g = dom.grid
    X, _ = np.meshgrid(g.x, g.y, indexing="ij")
    chi = radial_bump((0, 0), 0.8)
    f = GridField(np.exp(1j * n * X), dom, 0.0)
    chi_l2 = float(np.sum(chi(g.points()) ** 2) * g.cell)
    plain = smoothing_observable(f, chi, "plain_half")
    log = smoothing_observable(f, chi, "log_loss")
    assert plain == pytest.approx(math.sqrt(1 + n * n) * chi_l2, rel=0.1)
    assert plain / log == pytest.approx(math.log(2 + n * n), rel=0.1)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1e8, allow_nan=False))
def test_log_multiplier_dominated(xi2):
    assert multiplier_sq(xi2, "log_loss") <= multiplier_sq(xi2, "plain_half")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_log_observable_dominated_for_random_fields(seed):
    rng = np.random.default_rng(seed)
    dom = make_domain(None, 8, q=8, box=(-1, 1, -1, 1), absorber=False)
    u = rng.standard_normal(dom.grid.shape) + 1j * rng.standard_normal(dom.grid.shape)
    f = GridField(u, dom, 0.0)
    chi = radial_bump((0, 0), 0.9)
    assert smoothing_observable(f, chi, "log_loss") <= smoothing_observable(f, chi, "plain_half")


def test_unknown_weight():
    with pytest.raises(ValueError):
        multiplier_sq(1.0, "h1")


def test_discrete_symbol_matches_dense_eigendecomposition():
    # periodic 64x64 grid: the FFT diagonalises the 5-point Laplacian exactly
    m, h = 64, 2.0 / 64
    box = (-1.0, -1.0 + (m - 1) * h, -1.0, -1.0 + (m - 1) * h)
    dom = make_domain(None, 8, dx=h, box=box, absorber=False)
    assert dom.grid.shape == (m, m)
    rng = np.random.default_rng(7)
    u = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    chi = radial_bump((0.0, 0.0), 0.8)
    f = GridField(u, dom, 0.0)
    D1 = (np.diag(-2 * np.ones(m)) + np.diag(np.ones(m - 1), 1) + np.diag(np.ones(m - 1), -1))
    D1[0, -1] = D1[-1, 0] = 1.0
    D1 /= h * h
    L = np.kron(D1, np.eye(m)) + np.kron(np.eye(m), D1)
    lam, V = np.linalg.eigh(-L)
    lam = np.clip(lam, 0.0, None)
    v = (chi(dom.grid.points()) * u).ravel()
    c = V.T @ v
    for w in ("plain_half", "log_loss"):
        dense = float(np.sum(multiplier_sq(lam, w) * np.abs(c) ** 2) * h * h)
        fft = smoothing_observable(f, chi, w, window="full", symbol="discrete")
        assert fft == pytest.approx(dense, rel=1e-6)


def test_support_window_matches_full_window():
    n = 32
    dom = make_domain(DISC, n, q=8, box=BOX)
    f = coherent_state(CoherentParams(n, (-1.0, 0.3), (1, 0)), dom)
    chi = plateau_disc((-1.0, 0.3), 0.3, 0.6)
    for w in ("plain_half", "log_loss"):
        full = smoothing_observable(f, chi, w, window="full")
        supp = smoothing_observable(f, chi, w, window="support")
        assert supp == pytest.approx(full, rel=1e-3)


def test_probe_returns_both_weights():
    dom = make_domain(None, 8, q=8, box=BOX, absorber=False)
    f, _, _ = _gaussian_field(dom, 8)
    out = SmoothingProbe(dom, radial_bump((0, 0), 1.0))(f.values)
    assert set(out) == {"plain_half", "log_loss"} and out["log_loss"] <= out["plain_half"]


# -- scan and snapshots ----------------------------------------------------------------------

def test_small_scan_report_structure():
    scene = make_scene([make_disc((0, 0), 0.3)], margin=1.5, name="small-disc")
    rep = smoothing_scan(scene, [24, 48], (-1.0, 0.9), (1, 0), plateau_disc((0, 0), 0.5, 0.9), T_phys=0.05)
    assert rep.classification == "non-trapped"
    assert [r.n for r in rep.rows] == [24, 48]
    assert all(r.norm_half >= r.norm_half_logloss >= 0 for r in rep.rows)
    assert all(r.mass_drift >= 0 and r.valid for r in rep.rows)
    assert len(rep.ratios_plain) == 1
    d = rep.to_dict()
    assert d["classification"] == "non-trapped" and len(d["rows"]) == 2
    with pytest.raises(ValueError):
        smoothing_scan(scene, [48, 24], (-1.0, 0.9), (1, 0), plateau_disc((0, 0), 0.5, 0.9))


def test_scan_skips_over_budget():
    scene = make_scene([make_disc((0, 0), 0.3)], margin=1.5)
    rep = smoothing_scan(scene, [24, 4096], (-1.0, 0.9), (1, 0), plateau_disc((0, 0), 0.5, 0.9), T_phys=0.02,
                         max_nodes=100_000)
    assert rep.rows[1].skipped and math.isnan(rep.rows[1].norm_half)


def test_snapshot_round_trip(tmp_path):
    dom = make_domain(DISC, 16, q=8, box=BOX)
    f = coherent_state(CoherentParams(16, (-1.8, 0.1), (1, 0)), dom)
    f.t = 0.125
    p = tmp_path / "f.bin"
    save_snapshot(p, f)
    values, meta = load_snapshot(p)
    assert np.array_equal(values, f.values)
    assert meta["t"] == 0.125 and meta["dx"] == dom.grid.dx and meta["x0"] == dom.grid.x0
    raw = p.read_bytes()
    assert raw[:4] == b"GFLD" and len(raw) == 4 + 4 + 8 + 8 + 5 * 8 + 16 * values.size
