"""Husimi (anti-Wick) phase-space densities and transport diagnostics.

With the Gaussian frame

    g_{z,ζ,h}(x) = (πh)^{-1/2} exp(-|x - z|²/(2h)) exp(i ζ·(x - z)/h)

the Husimi density H(z, ζ) = |<g_{z,ζ,h}, u>|² / (2πh)² is nonnegative and
integrates to ‖u‖² over phase space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .billiard import GlancingAbort, PhasePoint, flow, reflect
from .geometry import SceneGeometry
from .schrodinger import CoherentParams, GridField, coherent_state, evolve, make_domain

__all__ = [
    "PhaseWindow",
    "HusimiField",
    "husimi",
    "measure_mass_near",
    "MassFraction",
    "check_propagation",
    "PropagationReport",
    "husimi_centroid",
    "position_centroid",
    "propagation_run",
    "specular_prediction",
]


@dataclass(frozen=True)
class PhaseWindow:
    """Rectangular phase-space window: z box, ζ box and optional lattice steps."""

    z_box: tuple[float, float, float, float]
    zeta_box: tuple[float, float, float, float]
    z_step: float | None = None
    zeta_step: float | None = None

    @classmethod
    def around(cls, p: PhasePoint, h: float, radius: float = 5.0, margin: float = 1.2, z_step=None):
        """Window holding the phase-space ball of ``radius`` frame widths about ``p``."""
        w = margin * radius * math.sqrt(h)
        (x, y), (a, b) = p.z, p.zeta
        return cls((x - w, x + w, y - w, y + w), (a - w, a + w, b - w, b + w), z_step)

    def to_dict(self) -> dict:
        return {"z_box": list(self.z_box), "zeta_box": list(self.zeta_box), "z_step": self.z_step,
                "zeta_step": self.zeta_step}


@dataclass
class HusimiField:
    """values[iz_x, iz_y, iζ_x, iζ_y] on the lattice zx × zy × ζx × ζy."""

    values: np.ndarray
    h: float
    zx: np.ndarray
    zy: np.ndarray
    zetax: np.ndarray
    zetay: np.ndarray
    field_mass: float | None = None

    @property
    def cell(self) -> float:
        d = [np.diff(a).mean() if a.size > 1 else 1.0 for a in (self.zx, self.zy, self.zetax, self.zetay)]
        return float(np.prod(d))

    def total(self) -> float:
        return float(self.values.sum() * self.cell)

    def argmax(self) -> PhasePoint:
        i = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return PhasePoint((self.zx[i[0]], self.zy[i[1]]), (self.zetax[i[2]], self.zetay[i[3]]))

    def position_marginal(self) -> np.ndarray:
        """∫ H dζ on the z lattice."""
        dz = self.cell / ((self.zx[1] - self.zx[0]) * (self.zy[1] - self.zy[0])) if self.zx.size > 1 else 1.0
        return self.values.sum(axis=(2, 3)) * dz

    def momentum_slice(self, z) -> np.ndarray:
        """H(z*, ·) at the lattice point nearest to ``z``."""
        i = int(np.argmin(np.abs(self.zx - z[0])))
        j = int(np.argmin(np.abs(self.zy - z[1])))
        return self.values[i, j]


def _axis(lo, hi, step):
    """Lattice lo..hi with the given step, symmetric about the centre."""
    c = 0.5 * (lo + hi)
    k = int(math.floor(0.5 * (hi - lo) / step + 1e-9))
    return c + step * np.arange(-k, k + 1)


def _frame_matrix(coords, centers, zetas, h, reach):
    """G[k, (a, b)] = exp(-(x_k - z_a)²/(2h)) exp(-i ζ_b x_k / h), zero beyond ``reach``."""
    d = coords[:, None] - centers[None, :]
    g = np.exp(-d * d / (2 * h))
    g[np.abs(d) > reach] = 0.0
    ph = np.exp(-1j * coords[:, None] * (zetas[None, :] / h))
    return (g[:, :, None] * ph[:, None, :]).reshape(coords.size, centers.size * zetas.size)


def husimi(field_: GridField, h: float, window: PhaseWindow) -> HusimiField:
    """Husimi density on ``window``.

    The frame factorises as g(x - zx) g(y - zy) e^{-i(ζx x + ζy y)/h}, so the
    inner products for all lattice points come from two dense products over
    the grid rows and columns that meet the window (the Gaussian is cut at
    6√h). The z lattice step defaults to √h/2 and the ζ step to √h/4.
    """
    g = field_.grid
    if not h > 0:
        raise ValueError("h must be positive")
    sh = math.sqrt(h)
    if sh < 2.0 * max(g.dx, g.dy):
        raise ValueError(f"grid too coarse for frame width sqrt(h)={sh:.3g}")
    # the requested momenta must lie below the grid Nyquist frequency
    zmax = max(abs(v) for v in window.zeta_box)
    if zmax / h >= math.pi / max(g.dx, g.dy):
        raise ValueError("ζ window exceeds the grid Nyquist frequency (window under-resolved)")
    zstep = window.z_step or sh / 2.0
    kstep = window.zeta_step or sh / 4.0
    zx = _axis(window.z_box[0], window.z_box[1], zstep)
    zy = _axis(window.z_box[2], window.z_box[3], zstep)
    kx = _axis(window.zeta_box[0], window.zeta_box[1], kstep)
    ky = _axis(window.zeta_box[2], window.zeta_box[3], kstep)
    reach = 6.0 * sh
    sx, sy = g.index_window((zx[0], zx[-1], zy[0], zy[-1]), pad=reach)
    u = field_.values[sx, sy]
    if u.size == 0:
        out = np.zeros((zx.size, zy.size, kx.size, ky.size))
    else:
        Gx = _frame_matrix(g.x[sx], zx, kx, h, reach)
        Gy = _frame_matrix(g.y[sy], zy, ky, h, reach)
        V = u @ Gy                      # (rows, zy·ky)
        W = Gx.T @ V                    # (zx·kx, zy·ky)
        scale = (g.cell ** 2 / (math.pi * h)) / (2 * math.pi * h) ** 2
        P = (W.real ** 2 + W.imag ** 2) * scale
        out = P.reshape(zx.size, kx.size, zy.size, ky.size).transpose(0, 2, 1, 3).copy()
    return HusimiField(out, h, zx, zy, kx, ky, field_.mass())


@dataclass
class MassFraction:
    fraction: float
    zero_mass: bool
    ball_mass: float
    total: float


def _ball_weights(H: HusimiField, p: PhasePoint, radius: float):
    s = math.sqrt(H.h)
    dzx = (H.zx - p.z[0]) / s
    dzy = (H.zy - p.z[1]) / s
    dkx = (H.zetax - p.zeta[0]) / s
    dky = (H.zetay - p.zeta[1]) / s
    r2 = (dzx[:, None, None, None] ** 2 + dzy[None, :, None, None] ** 2
          + dkx[None, None, :, None] ** 2 + dky[None, None, None, :] ** 2)
    return r2 <= radius * radius


def measure_mass_near(H: HusimiField, p: PhasePoint, radius: float = 5.0, total: str = "field") -> MassFraction:
    """Fraction of Husimi mass in the ball |Δz|² + |Δζ|² ≤ (radius √h)².

    The denominator is the field mass (the exact total of the Husimi density
    over all of phase space) when known and ``total='field'``; otherwise the
    integral over the computed window. Zero fields give fraction 0 with the
    ``zero_mass`` flag set.
    """
    inside = _ball_weights(H, p, radius)
    ball = float(H.values[inside].sum() * H.cell)
    denom = H.field_mass if (total == "field" and H.field_mass is not None) else H.total()
    if not denom > 0:
        return MassFraction(0.0, True, 0.0, 0.0)
    return MassFraction(min(1.0, ball / denom), False, ball, denom)


def husimi_centroid(H: HusimiField, p: PhasePoint | None = None, radius: float = 5.0) -> PhasePoint:
    """Husimi-weighted mean (z, ζ), optionally restricted to a ball about ``p``."""
    w = H.values if p is None else H.values * _ball_weights(H, p, radius)
    tot = w.sum()
    if not tot > 0:
        raise ValueError("no Husimi mass in the selection")
    zx = float((w.sum(axis=(1, 2, 3)) * H.zx).sum() / tot)
    zy = float((w.sum(axis=(0, 2, 3)) * H.zy).sum() / tot)
    kx = float((w.sum(axis=(0, 1, 3)) * H.zetax).sum() / tot)
    ky = float((w.sum(axis=(0, 1, 2)) * H.zetay).sum() / tot)
    return PhasePoint((zx, zy), (kx, ky))


def position_centroid(field_: GridField) -> np.ndarray:
    p = np.abs(field_.values) ** 2
    tot = p.sum()
    g = field_.grid
    return np.array([(p.sum(axis=1) * g.x).sum() / tot, (p.sum(axis=0) * g.y).sum() / tot])


@dataclass
class PropagationReport:
    checkpoints: list
    fractions: list
    predicted: list
    min_fraction: float
    horizon: float
    threshold: float
    passed: bool
    n: int
    radius: float
    centroids: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "checkpoints_s": self.checkpoints,
            "fractions": self.fractions,
            "predicted": [{"z": list(p.z), "zeta": list(p.zeta)} for p in self.predicted],
            "centroids": [{"z": list(p.z), "zeta": list(p.zeta)} for p in self.centroids],
            "min_fraction": self.min_fraction,
            "ehrenfest_horizon_s": self.horizon,
            "threshold": self.threshold,
            "radius_frame_widths": self.radius,
            "status": "PASS" if self.passed else "FAIL",
        }


def propagation_run(scene: SceneGeometry, start: PhasePoint, n: int, checkpoints_s, box, *, q: float = 16.0,
                    dt_factor: float = 0.25, absorber: bool = True):
    """Evolve the Gaussian coherent state at ``start`` and keep snapshots at semiclassical times.

    Finer sampling than the smoothing runs (q = 16 points per wavelength,
    dt = 0.25/n²) keeps the numerical group-velocity lag near 4%.
    """
    cps = sorted(float(s) for s in checkpoints_s)
    dom = make_domain(scene, n, q=q, box=box, absorber=absorber)
    f0 = coherent_state(CoherentParams(n, tuple(start.z), tuple(start.zeta)), dom)
    T = max(cps[-1], 1e-12) / n
    return evolve(f0, T, dt_factor / n ** 2, checkpoints=[s / n for s in cps])


def check_propagation(snapshots, start: PhasePoint, scene: SceneGeometry, n: int, *, radius: float = 5.0,
                      threshold: float = 0.6, ehrenfest_c: float = 0.5, t0: float = 0.0) -> PropagationReport:
    """Compare Husimi concentration of each snapshot with the classical prediction.

    Snapshot times t_k are converted to semiclassical times s_k = n (t_k - t0).
    The prediction at s_k is the billiard flow of ``start`` (ż = 2ζ, the
    direction in which the packet actually moves under i u_t = -Δu).
    Checkpoints beyond the horizon c·log n are skipped.
    """
    h = 1.0 / n
    horizon = ehrenfest_c * math.log(n)
    snaps = [f for f in snapshots if n * (f.t - t0) <= horizon + 1e-12]
    if not snaps:
        raise ValueError("no checkpoint inside the Ehrenfest horizon")
    s_last = max(n * (f.t - t0) for f in snaps)
    traj = flow(start, max(s_last, 1e-9) + 1e-9, scene, stop_on_escape=False)
    if traj.terminal == "glancing_abort":
        raise GlancingAbort(traj.s_end, np.array(traj.hits[-1].point))
    cps, fracs, preds, cents = [], [], [], []
    for f in snaps:
        s = n * (f.t - t0)
        p = traj.state_at(min(s, traj.s_end))
        H = husimi(f, h, PhaseWindow.around(p, h, radius))
        fr = measure_mass_near(H, p, radius)
        cps.append(float(s))
        fracs.append(fr.fraction)
        preds.append(p)
        try:
            cents.append(husimi_centroid(H, p, radius))
        except ValueError:
            cents.append(p)
    mn = float(min(fracs))
    return PropagationReport(cps, fracs, preds, mn, horizon, threshold, mn >= threshold, n, radius, cents)


def specular_prediction(zeta_in, normal):
    return reflect(np.asarray(zeta_in, dtype=float), np.asarray(normal, dtype=float))
