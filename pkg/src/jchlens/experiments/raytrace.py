"""Geometric ray tracing across x-slabs and the refraction-convention resolver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..bands import bloch_energy, group_velocity
from ..lattice import RegionParams
from ..optics import MatchingError, scatter, solve_k2x


class NoRayError(RuntimeError):
    """A ray meets a slab in which its mode is evanescent."""


@dataclass(frozen=True)
class Slab:
    x0: float
    x1: float
    params: RegionParams
    name: str = ""


@dataclass
class RayPath:
    points: np.ndarray  # (M, 2) vertices at the source and every interface crossing
    slopes: list  # dy/dx in each traversed slab
    k_x: list  # x-momentum in each traversed slab
    image: tuple[float, float] | None = None


def ray_trace(
    source: Sequence[float],
    slabs: Sequence[Slab],
    k: Sequence[float],
    branch="+",
    orientation: str = "rotated",
    *,
    image_x: float | None = None,
) -> RayPath:
    """Straight segments along the group velocity in each slab.

    The ray starts at ``source`` with Bloch momentum ``k`` in the slab that
    contains it and moves in +x; ``k_y`` and the energy are conserved at
    every interface.  If ``image_x`` is given the path stops there and
    ``image`` holds the crossing point.
    """
    slabs = sorted(slabs, key=lambda s: s.x0)
    x, y = float(source[0]), float(source[1])
    start = next((i for i, s in enumerate(slabs) if s.x0 <= x < s.x1), None)
    if start is None:
        raise ValueError("source lies outside every slab")
    E = float(bloch_energy(np.asarray(k, dtype=float), slabs[start].params, branch, orientation))
    ky = float(k[1])
    kx = float(k[0])
    pts, slopes, kxs = [(x, y)], [], []
    image = None
    for i in range(start, len(slabs)):
        s = slabs[i]
        if i > start:
            try:
                mode = solve_k2x(E, ky, s.params, branch, orientation)
            except MatchingError as exc:
                raise NoRayError(str(exc)) from exc
            if not mode.propagating:
                raise NoRayError(f"evanescent in slab {s.name or i}")
            kx = mode.real
        v = group_velocity(np.array([kx, ky]), s.params, branch, orientation)
        if v[0] <= 0:
            raise NoRayError(f"ray does not advance in slab {s.name or i}")
        slope = v[1] / v[0]
        slopes.append(slope)
        kxs.append(kx)
        x_end = s.x1
        if image_x is not None and x <= image_x <= s.x1:
            y_img = y + slope * (image_x - x)
            pts.append((image_x, y_img))
            image = (image_x, y_img)
            break
        y = y + slope * (x_end - x)
        x = x_end
        pts.append((x, y))
    return RayPath(np.asarray(pts), slopes, kxs, image)


def axis_crossing(path: RayPath, y_axis: float) -> float | None:
    """First x beyond the last interface where the final segment meets ``y = y_axis``."""
    x, y = path.points[-1]
    slope = path.slopes[-1]
    if slope == 0:
        return None
    xc = x + (y_axis - y) / slope
    return float(xc) if xc >= x else None


def predict_focus(
    source: Sequence[float],
    slabs: Sequence[Slab],
    k: Sequence[float],
    branch="+",
    orientation: str = "rotated",
) -> float:
    """Image-side focus of the symmetric ray pair ``(k_x, +/-k_y)`` from ``source``.

    The pair meets on the line ``y = source_y`` by mirror symmetry; the
    focus is the x of that meeting after the last interface.
    """
    slabs = sorted(slabs, key=lambda s: s.x0)
    path = ray_trace(source, slabs, k, branch, orientation)
    # the final vertex sits at the far edge of the last slab; step back to its entry
    last = path.points[-2]
    slope = path.slopes[-1]
    if slope == 0:
        raise NoRayError("ray parallel to the axis in the image slab")
    xc = last[0] + (source[1] - last[1]) / slope
    if xc < last[0]:
        raise NoRayError("rays meet before the image slab")
    return float(xc)


@dataclass
class Convention:
    """Branch, detuning sign and incidence momentum that fix the refraction convention."""

    branch: str
    delta_sign: int
    k_diag: float
    theta_pred: float  # radians, predicted refraction angle
    target: float
    candidates: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "branch": self.branch,
            "delta_sign": self.delta_sign,
            "k_diag": self.k_diag,
            "k_diag_over_pi": self.k_diag / math.pi,
            "theta_pred_deg": math.degrees(self.theta_pred),
            "target_deg": math.degrees(self.target),
            "candidates": self.candidates,
        }


def resolve_convention(
    delta1: float = 0.0,
    delta2: float = -5.27,
    beta: float = 100.0,
    target_deg: float = -25.0,
    divisors: Sequence[int] = (4, 5, 6, 7, 8),
    orientation: str = "rotated",
) -> Convention:
    """Pick the (branch, detuning sign, k = pi/n) whose refraction is nearest the target.

    Each candidate applies ``sign * label`` as the physical detuning of both
    regions and launches along the diagonal ``k = (pi/n, pi/n)``.
    Evanescent candidates are listed but never chosen.
    """
    target = math.radians(target_deg)
    rows = []
    best = None
    for branch in ("+", "-"):
        for sign in (1, -1):
            for n in divisors:
                k = math.pi / n
                p1 = RegionParams(0.0, sign * delta1, beta, 1.0)
                p2 = RegionParams(0.0, sign * delta2, beta, 1.0)
                sol = scatter((k, k), p1, p2, branch, orientation)
                th = sol.theta_r
                rows.append(
                    {
                        "branch": branch,
                        "delta_sign": sign,
                        "n": n,
                        "theta_deg": None if th is None else math.degrees(th),
                        "propagating": sol.propagating,
                    }
                )
                if th is not None and (best is None or abs(th - target) < abs(best[3] - target)):
                    best = (branch, sign, k, th)
    if best is None:
        raise NoRayError("no propagating candidate convention")
    return Convention(best[0], best[1], best[2], best[3], target, rows)
