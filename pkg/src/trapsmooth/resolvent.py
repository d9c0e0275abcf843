"""Cutoff resolvent norms of the truncated exterior Dirichlet Laplacian.

The operator is A = -Δ_h - iσ on the kept (non-obstacle) nodes of a uniform
grid, with σ ≥ 0 a complex absorber in the outer margin standing in for the
outgoing condition. For z = λ + iε we estimate ‖χ (A - z)^{-1} χ‖ by power
iteration on K^H K, K = χ (A - z)^{-1} χ, with one sparse LU per z.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cutoffs import Cutoff
from .geometry import SceneGeometry
from .schrodinger import Domain, Grid, _obstacle_mask, absorber_profile, laplacian_5pt

__all__ = [
    "HelmholtzDiscretization",
    "ResolutionBudgetError",
    "assemble_helmholtz",
    "cutoff_resolvent_norm",
    "NormEstimate",
    "resolvent_scan",
    "ResolventRow",
    "ResolventReport",
    "epsilon_policy",
    "tt_star_consistency",
    "dense_cutoff_resolvent_norm",
]


class ResolutionBudgetError(ValueError):
    """The grid cannot resolve the requested spectral window."""


@dataclass
class HelmholtzDiscretization:
    """-Δ_h - iσ on a grid; ``matrix`` has identity rows on obstacle nodes."""

    grid: Grid
    obstacle: np.ndarray
    sigma: np.ndarray
    matrix: sp.csr_matrix
    box: tuple
    scene_name: str = ""
    lambda_max: float | None = None
    _reduced: sp.csc_matrix | None = field(default=None, repr=False)

    @property
    def keep(self) -> np.ndarray:
        return ~self.obstacle

    @property
    def kept_index(self) -> np.ndarray:
        return np.flatnonzero(self.keep.ravel())

    def reduced(self) -> sp.csc_matrix:
        """The operator acting on kept nodes only."""
        if self._reduced is None:
            idx = self.kept_index
            self._reduced = self.matrix[idx][:, idx].tocsc()
        return self._reduced

    def conjugate(self) -> "HelmholtzDiscretization":
        """The discretisation with the absorber sign flipped (-Δ_h + iσ)."""
        return HelmholtzDiscretization(self.grid, self.obstacle, -self.sigma, self.matrix.conj().tocsr(), self.box,
                                       self.scene_name, self.lambda_max)

    def cutoff_vector(self, chi: Cutoff) -> np.ndarray:
        return chi(self.grid.points()).ravel()[self.kept_index]

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "box": list(self.box),
            "obstacle_nodes": int(self.obstacle.sum()),
            "sigma_max": float(np.abs(self.sigma).max()) if self.sigma.size else 0.0,
            "scene": self.scene_name,
            "lambda_max": self.lambda_max,
        }


def assemble_helmholtz(scene: SceneGeometry | None, nx: int, ny: int | None = None, *, box=None,
                       absorber: bool = True, absorber_frac: float = 0.15, sigma_max: float | None = None,
                       lambda_max: float | None = None, ppw: float = 8.0) -> HelmholtzDiscretization:
    """Assemble -Δ_h - iσ on an nx × ny grid covering ``box``.

    With ``lambda_max`` given, the grid must carry at least ``ppw`` points per
    wavelength 2π/√λ_max. The absorber defaults to σ_max = 10 √λ_max / w
    (w the layer width), i.e. about three units of amplitude decay per pass at
    the top frequency, more at lower ones.
    """
    ny = nx if ny is None else ny
    if box is None:
        if scene is None:
            raise ValueError("a bounding box is required")
        box = scene.box
    xmin, xmax, ymin, ymax = (float(b) for b in box)
    dx = (xmax - xmin) / (nx - 1)
    dy = (ymax - ymin) / (ny - 1)
    if lambda_max is not None and lambda_max > 0:
        wl = 2 * math.pi / math.sqrt(lambda_max)
        if max(dx, dy) > wl / ppw:
            raise ResolutionBudgetError(
                f"grid spacing {max(dx, dy):.4g} exceeds wavelength/{ppw:g} = {wl / ppw:.4g} at lambda_max={lambda_max:g}")
    grid = Grid(nx, ny, dx, dy, xmin, ymin)
    obstacle = _obstacle_mask(scene, grid)
    sigma = np.zeros(grid.shape)
    if absorber:
        width = (absorber_frac * (xmax - xmin), absorber_frac * (ymax - ymin))
        if sigma_max is None:
            if lambda_max is None:
                raise ValueError("absorber strength needs lambda_max or sigma_max")
            sigma_max = 10.0 * math.sqrt(max(lambda_max, 1.0)) / min(width)
        sigma = absorber_profile(grid, (xmin, xmax, ymin, ymax), width, sigma_max)
        sigma[obstacle] = 0.0
    keep = ~obstacle
    L = laplacian_5pt(grid, keep)
    A = -L - 1j * sp.diags(sigma.ravel())
    A = A + sp.diags(obstacle.ravel().astype(float))
    return HelmholtzDiscretization(grid, obstacle, sigma, A.tocsr(), (xmin, xmax, ymin, ymax),
                                   getattr(scene, "name", "") if scene is not None else "empty", lambda_max)


def helmholtz_from_domain(domain: Domain) -> HelmholtzDiscretization:
    """Reuse a Schrödinger domain (same grid, mask and absorber)."""
    keep = domain.keep
    A = -laplacian_5pt(domain.grid, keep) - 1j * sp.diags(domain.sigma.ravel()) + sp.diags(domain.obstacle.ravel().astype(float))
    return HelmholtzDiscretization(domain.grid, domain.obstacle, domain.sigma, A.tocsr(), domain.box,
                                   getattr(domain.scene, "name", ""))


@dataclass
class NormEstimate:
    norm: float
    iterations: int
    converged: bool
    status: str = "ok"
    residual: float = 0.0


def _power_iteration(apply, apply_h, size, rtol, maxiter, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    x /= np.linalg.norm(x)
    est, prev = 0.0, 0.0
    streak = 0
    for k in range(1, maxiter + 1):
        y = apply(x)
        w = apply_h(y)
        est = math.sqrt(max(float(np.vdot(x, w).real), 0.0))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, k, True
        x = w / nw
        if prev > 0 and abs(est - prev) <= 0.1 * rtol * est:
            streak += 1
            if streak >= 2:
                return est, k, True
        else:
            streak = 0
        prev = est
    return est, maxiter, False


def cutoff_resolvent_norm(disc: HelmholtzDiscretization, lam: float, eps: float, chi: Cutoff, *,
                          rtol: float = 1e-3, maxiter: int = 2000, seed: int = 0,
                          solve_tol: float = 1e-10) -> NormEstimate:
    """Largest singular value of χ (A - λ - iε)^{-1} χ by power iteration on K^H K."""
    z = complex(lam, eps)
    A = disc.reduced()
    M = (A - z * sp.identity(A.shape[0], format="csc")).tocsc()
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        return NormEstimate(math.nan, 0, False, f"factorization failed: {exc}")
    c = disc.cutoff_vector(chi)
    probe = np.random.default_rng(seed + 1).standard_normal(A.shape[0]) * c
    y = lu.solve(probe.astype(complex))
    res = float(np.linalg.norm(M @ y - probe) / max(np.linalg.norm(probe), 1e-300))
    if not np.isfinite(res) or res > solve_tol:
        return NormEstimate(math.nan, 0, False, "linear solve breakdown", res)

    def apply(v):
        return c * lu.solve(c * v)

    def apply_h(v):
        return c * lu.solve(c * v, trans="H")

    est, it, ok = _power_iteration(apply, apply_h, A.shape[0], rtol, maxiter, seed)
    return NormEstimate(est, it, ok, "ok" if ok else "power iteration not converged", res)


def dense_cutoff_resolvent_norm(disc: HelmholtzDiscretization, lam: float, eps: float, chi: Cutoff) -> float:
    """Reference value by dense inversion and SVD (small grids only)."""
    A = disc.reduced().toarray()
    R = np.linalg.inv(A - complex(lam, eps) * np.eye(A.shape[0]))
    c = disc.cutoff_vector(chi)
    return float(np.linalg.norm(c[:, None] * R * c[None, :], 2))


def epsilon_policy(lam: float, c: float = 1.0, kind: str = "log") -> float:
    """ε(λ) = c / log(2 + |λ|) ("log"), or the constant c ("const")."""
    if kind == "log":
        return c / math.log(2.0 + abs(lam))
    if kind == "const":
        return c
    raise ValueError(f"unknown epsilon policy {kind!r}")


@dataclass
class ResolventRow:
    lam: float
    eps: float
    norm: float
    iterations: int
    converged: bool
    status: str
    B: float
    B_prime: float
    outlier: bool = False

    def to_dict(self) -> dict:
        return dict(lam=self.lam, eps=self.eps, norm=self.norm, iterations=self.iterations, converged=self.converged,
                    status=self.status, B=self.B, B_prime=self.B_prime, outlier=self.outlier)


def bound_statistic(norm, lam):
    """B(λ) = norm (1 + √|λ|) / log(2 + |λ|)."""
    return norm * (1.0 + math.sqrt(abs(lam))) / math.log(2.0 + abs(lam))


def _mark_outliers(norms, window=5, factor=10.0):
    x = np.asarray(norms, dtype=float)
    out = np.zeros(x.size, dtype=bool)
    half = window // 2
    for i in range(x.size):
        lo, hi = max(0, i - half), min(x.size, i + half + 1)
        med = np.nanmedian(np.delete(x[lo:hi], i - lo)) if hi - lo > 1 else np.nan
        out[i] = bool(np.isfinite(med) and x[i] > factor * med)
    return out


@dataclass
class ResolventReport:
    rows: list
    grid: dict
    chi: dict
    eps_policy: dict
    scene: str = ""

    def _arrays(self, include_outliers=False):
        rows = [r for r in self.rows if np.isfinite(r.norm) and (include_outliers or not r.outlier)]
        lam = np.array([r.lam for r in rows])
        return rows, lam

    @property
    def C_star(self) -> float:
        """max over valid positive-λ rows of B(λ)."""
        vals = [r.B for r in self.rows if r.lam > 0 and np.isfinite(r.B) and not r.outlier]
        return float(max(vals)) if vals else math.nan

    def argmax_B(self) -> float:
        rows = [r for r in self.rows if r.lam > 0 and np.isfinite(r.B) and not r.outlier]
        return float(max(rows, key=lambda r: r.B).lam) if rows else math.nan

    def max_in_lowest_decade(self) -> bool:
        pos = [r.lam for r in self.rows if r.lam > 0]
        if not pos:
            return False
        return self.argmax_B() <= 10.0 * min(pos)

    def trend(self, lam_min: float = 50.0, stat: str = "B") -> dict:
        """Least-squares trend of log stat vs log λ on λ ≥ lam_min (outliers excluded).

        ``growth`` is the fitted factor between the first and last λ of the
        range; ``spread`` is max/min of the raw statistic there.
        """
        rows = [r for r in self.rows if r.lam >= lam_min and np.isfinite(r.norm) and not r.outlier]
        if len(rows) < 2:
            return {"growth": math.nan, "spread": math.nan, "slope": math.nan, "rows": len(rows)}
        lam = np.array([r.lam for r in rows])
        val = np.array([getattr(r, stat) for r in rows])
        slope, _ = np.polyfit(np.log(lam), np.log(val), 1)
        growth = float(np.exp(slope * math.log(lam.max() / lam.min())))
        return {"growth": growth, "spread": float(val.max() / val.min()), "slope": float(slope), "rows": len(rows)}

    def empty_scene_check(self) -> list:
        """Relative deviation of norm from 1/|λ| on λ < 0 rows."""
        return [abs(r.norm * abs(r.lam) - 1.0) for r in self.rows if r.lam < 0 and np.isfinite(r.norm)]

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "grid": self.grid,
            "chi": self.chi,
            "eps_policy": self.eps_policy,
            "C_star": self.C_star,
            "argmax_B": self.argmax_B(),
            "max_in_lowest_decade": self.max_in_lowest_decade(),
            "trend_B_lambda_ge_50": self.trend(50.0, "B"),
            "trend_Bprime_lambda_ge_50": self.trend(50.0, "B_prime"),
            "outliers": [r.lam for r in self.rows if r.outlier],
            "rows": [r.to_dict() for r in self.rows],
        }

    def csv_rows(self):
        header = ["lambda", "eps", "norm", "iterations", "converged", "status", "B", "B_prime", "outlier"]
        return header, [[r.lam, r.eps, r.norm, r.iterations, r.converged, r.status, r.B, r.B_prime, r.outlier]
                        for r in self.rows]


def resolvent_scan(disc: HelmholtzDiscretization, lam_grid, chi: Cutoff, *, eps_c: float = 1.0,
                   eps_kind: str = "log", rtol: float = 1e-3, maxiter: int = 2000, seed: int = 0,
                   jobs: int = 1, progress=None) -> ResolventReport:
    """Tabulate cutoff resolvent norms and the bound statistics over ``lam_grid``.

    B(λ) = norm (1+√λ)/log(2+λ) and B'(λ) = norm (1+√λ). Rows whose norm
    exceeds ten times the median of their neighbours are marked as outliers.
    Rows are independent; ``jobs > 1`` evaluates them on a thread pool (every
    row uses the same seed, so the table does not depend on ``jobs``).
    """
    def one(lam):
        lam = float(lam)
        eps = epsilon_policy(lam, eps_c, eps_kind)
        est = cutoff_resolvent_norm(disc, lam, eps, chi, rtol=rtol, maxiter=maxiter, seed=seed)
        B = bound_statistic(est.norm, lam) if np.isfinite(est.norm) else math.nan
        Bp = est.norm * (1.0 + math.sqrt(abs(lam))) if np.isfinite(est.norm) else math.nan
        if progress is not None:
            progress(f"lambda={lam:.4g} eps={eps:.3g} norm={est.norm:.6g} it={est.iterations}")
        return ResolventRow(lam, eps, est.norm, est.iterations, est.converged, est.status, B, Bp)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, lam_grid))
    else:
        rows = [one(lam) for lam in lam_grid]
    pos = [r for r in rows if r.lam > 0]
    flags = _mark_outliers([r.norm for r in pos])
    for r, f in zip(pos, flags):
        r.outlier = bool(f)
    return ResolventReport(rows, disc.to_dict(), chi.to_dict(), {"kind": eps_kind, "c": eps_c}, disc.scene_name)


def tt_star_consistency(smoothing_constant: float, report: ResolventReport, factor: float = 5.0) -> dict:
    """Compare a measured smoothing constant with max B'(λ) of a non-trapping scan (informational)."""
    vals = [r.B_prime for r in report.rows if r.lam > 0 and np.isfinite(r.B_prime) and not r.outlier]
    bmax = float(max(vals)) if vals else math.nan
    ratio = smoothing_constant / bmax if bmax and np.isfinite(bmax) else math.nan
    return {"smoothing_constant": smoothing_constant, "max_B_prime": bmax, "ratio": ratio,
            "within_factor": bool(np.isfinite(ratio) and 1.0 / factor <= ratio <= factor), "factor": factor,
            "gating": False}
