"""Smooth scalar cutoff functions of position.

Used both as the amplitude ``a(z)`` of the order-1/2 observable
``a(z)|D|^{1/2}`` and as spatial cutoffs ``chi``. All functions take values
in [0, 1] and are C-infinity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Cutoff", "radial_bump", "plateau_disc", "plateau_rect", "constant", "power_decay", "smooth_step"]


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    out[t >= 1] = 1.0
    mid = (t > 0) & (t < 1)
    tm = t[mid]
    f0 = np.exp(-1.0 / tm)
    f1 = np.exp(-1.0 / (1.0 - tm))
    out[mid] = f0 / (f0 + f1)
    return out


@dataclass(frozen=True)
class Cutoff:
    """A smooth cutoff ``a(z)``.

    kind:
      ``bump``      exp(1 - 1/(1 - r^2/R^2)) inside |z - c| < R (peak value 1)
      ``plateau``   1 on |z - c| <= r_in, smooth decay to 0 at r_out
      ``rect``      1 on [x0, x1] x [y0, y1], smooth decay over ``width``
      ``constant``  identically 1
      ``decay``     (1 + |z - c|^2)^(-power/2); not compactly supported
    """

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    inner: float = 0.0
    rect: tuple[float, float, float, float] | None = None
    width: float = 0.0
    power: float = 0.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.ones(z.shape[:-1])
        if self.kind == "rect":
            x0, x1, y0, y1 = self.rect
            w = self.width
            x, y = z[..., 0], z[..., 1]
            fx = smooth_step((x - (x0 - w)) / w) * smooth_step(((x1 + w) - x) / w)
            fy = smooth_step((y - (y0 - w)) / w) * smooth_step(((y1 + w) - y) / w)
            return fx * fy
        r = np.hypot(z[..., 0] - self.center[0], z[..., 1] - self.center[1])
        if self.kind == "bump":
            q = np.clip(r / self.radius, 0.0, 1.0)
            out = np.zeros_like(q)
            m = q < 1
            out[m] = np.exp(1.0 - 1.0 / (1.0 - q[m] ** 2))
            return out
        if self.kind == "plateau":
            return smooth_step((self.radius - r) / (self.radius - self.inner))
        if self.kind == "decay":
            return (1.0 + r * r) ** (-0.5 * self.power)
        raise ValueError(f"unknown cutoff kind {self.kind!r}")

    @property
    def compact(self) -> bool:
        return self.kind in ("bump", "plateau", "rect")

    def support_bbox(self):
        """Axis-aligned box containing the support, or None if unbounded."""
        if self.kind in ("bump", "plateau"):
            cx, cy = self.center
            R = self.radius
            return (cx - R, cx + R, cy - R, cy + R)
        if self.kind == "rect":
            x0, x1, y0, y1 = self.rect
            w = self.width
            return (x0 - w, x1 + w, y0 - w, y1 + w)
        return None

    def support_ball(self):
        """(centre, radius) of a disc containing the support, or None."""
        if self.kind in ("bump", "plateau"):
            return np.asarray(self.center, dtype=float), self.radius
        if self.kind == "rect":
            x0, x1, y0, y1 = self.support_bbox()
            c = np.array([(x0 + x1) / 2, (y0 + y1) / 2])
            return c, 0.5 * math.hypot(x1 - x0, y1 - y0)
        return None

    def length_scale(self) -> float:
        """Smallest length over which the cutoff varies appreciably."""
        if self.kind == "bump":
            return self.radius
        if self.kind == "plateau":
            return self.radius - self.inner
        if self.kind == "rect":
            return self.width
        if self.kind == "decay":
            return 1.0
        return math.inf

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("bump", "plateau", "decay"):
            d["center"] = list(self.center)
        if self.kind in ("bump", "plateau"):
            d["radius"] = self.radius
        if self.kind == "plateau":
            d["inner"] = self.inner
        if self.kind == "rect":
            d["rect"] = list(self.rect)
            d["width"] = self.width
        if self.kind == "decay":
            d["power"] = self.power
        return d


def radial_bump(center, radius) -> Cutoff:
    if not radius > 0:
        raise ValueError("bump radius must be positive")
    return Cutoff("bump", (float(center[0]), float(center[1])), float(radius))


def plateau_disc(center, inner, outer) -> Cutoff:
    if not (0 <= inner < outer):
        raise ValueError("plateau needs 0 <= inner < outer")
    return Cutoff("plateau", (float(center[0]), float(center[1])), float(outer), inner=float(inner))


def plateau_rect(x0, x1, y0, y1, width) -> Cutoff:
    if not (x0 < x1 and y0 < y1 and width > 0):
        raise ValueError("rectangle plateau needs x0 < x1, y0 < y1, width > 0")
    return Cutoff("rect", rect=(float(x0), float(x1), float(y0), float(y1)), width=float(width))


def constant() -> Cutoff:
    return Cutoff("constant")


def power_decay(center, power) -> Cutoff:
    if not power > 0:
        raise ValueError("decay power must be positive")
    return Cutoff("decay", (float(center[0]), float(center[1])), power=float(power))
