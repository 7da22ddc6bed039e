"""Bloch bands of a homogeneous JCH lattice.

Momenta are arrays whose last axis is ``(k_x, k_y)`` in radians per ``d``;
the Brillouin zone is ``(-pi/d, pi/d]^2`` for both orientations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .hamiltonian import _branch_sign
from .lattice import RegionParams

SQRT2 = math.sqrt(2.0)


def hopping_kernel(k, orientation: str = "rotated", kappa: float = 1.0, d: float = 1.0):
    """K(k): 4 kappa cos(kx d) cos(ky d) (rotated) or 2 kappa [cos kx d + cos ky d]."""
    k = np.asarray(k, dtype=float)
    cx, cy = np.cos(k[..., 0] * d), np.cos(k[..., 1] * d)
    if orientation == "rotated":
        return 4 * kappa * cx * cy
    if orientation == "unrotated":
        return 2 * kappa * (cx + cy)
    raise ValueError(f"unknown orientation {orientation!r}")


def kernel_gradient(k, orientation: str = "rotated", kappa: float = 1.0, d: float = 1.0):
    k = np.asarray(k, dtype=float)
    kx, ky = k[..., 0] * d, k[..., 1] * d
    if orientation == "rotated":
        gx = -4 * kappa * d * np.sin(kx) * np.cos(ky)
        gy = -4 * kappa * d * np.cos(kx) * np.sin(ky)
    elif orientation == "unrotated":
        gx = -2 * kappa * d * np.sin(kx)
        gy = -2 * kappa * d * np.sin(ky)
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    return np.stack([gx, gy], axis=-1)


def kernel_hessian(k, orientation: str = "rotated", kappa: float = 1.0, d: float = 1.0):
    k = np.asarray(k, dtype=float)
    kx, ky = k[..., 0] * d, k[..., 1] * d
    if orientation == "rotated":
        hxx = -4 * kappa * d * d * np.cos(kx) * np.cos(ky)
        hyy = hxx
        hxy = 4 * kappa * d * d * np.sin(kx) * np.sin(ky)
    else:
        hxx = -2 * kappa * d * d * np.cos(kx)
        hyy = -2 * kappa * d * d * np.cos(ky)
        hxy = np.zeros_like(hxx)
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def energy_from_kernel(K, params: RegionParams, branch="+"):
    """E(K) = (omega + eps - K)/2 +/- sqrt((delta - K)^2 + 4 beta^2)/2."""
    s = _branch_sign(branch)
    K = np.asarray(K, dtype=float)
    root = np.sqrt((params.delta - K) ** 2 + 4 * params.beta**2)
    return 0.5 * (params.omega + params.eps - K) + s * 0.5 * root


def bloch_energy(k, params: RegionParams, branch="+", orientation: str = "rotated", d: float = 1.0):
    """Band energy ``E^+/-(k)`` of a homogeneous region."""
    K = hopping_kernel(k, orientation, params.kappa, d)
    return energy_from_kernel(K, params, branch)


def bloch_bands(k, params: RegionParams, orientation: str = "rotated", d: float = 1.0):
    """Both bands ``(E^-, E^+)`` at once."""
    K = hopping_kernel(k, orientation, params.kappa, d)
    return energy_from_kernel(K, params, "-"), energy_from_kernel(K, params, "+")


def group_velocity(k, params: RegionParams, branch="+", orientation: str = "rotated", d: float = 1.0):
    """Analytic ``grad_k E^+/-``, shape ``k.shape``."""
    s = _branch_sign(branch)
    K = hopping_kernel(k, orientation, params.kappa, d)
    x = params.delta - K
    root = np.sqrt(x**2 + 4 * params.beta**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(root > 0, x / np.where(root > 0, root, 1.0), 0.0)
    pref = (-1 - s * ratio) / 2
    return pref[..., None] * kernel_gradient(k, orientation, params.kappa, d)


def polariton_weights(K, params: RegionParams, branch="+"):
    """Normalised (photon, atom) amplitudes of the Bloch eigenvector at kernel value K."""
    E = energy_from_kernel(K, params, branch)
    # (omega - K - E) c + beta a = 0
    c = np.asarray(params.beta, dtype=float) * np.ones_like(np.asarray(E, dtype=float))
    a = E - (params.omega - np.asarray(K, dtype=float))
    nrm = np.hypot(c, a)
    bad = nrm == 0
    c = np.where(bad, 1.0, c)
    nrm = np.where(bad, 1.0, nrm)
    return c / nrm, a / nrm


def band_range(params: RegionParams, branch="+", orientation: str = "rotated"):
    """(min, max) of a band; K spans [-4 kappa, 4 kappa] for both orientations."""
    e = energy_from_kernel(np.array([-4 * params.kappa, 4 * params.kappa]), params, branch)
    return float(np.min(e)), float(np.max(e))


# ---------------------------------------------------------------------------
# isoenergy contours
# ---------------------------------------------------------------------------


@dataclass
class IsoContour:
    energy: float
    points: np.ndarray  # (M, 2) k-points; closed contours repeat the first point
    closed: bool
    convex: bool

    def __len__(self):
        return len(self.points)


def _is_convex(pts: np.ndarray, tol: float = 1e-9) -> bool:
    p = pts[:-1] if np.allclose(pts[0], pts[-1]) else pts
    if len(p) < 3:
        return True
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    scale = np.max(np.abs(cross)) or 1.0
    c = cross / scale
    return bool(np.all(c >= -tol) or np.all(c <= tol))


def isoenergy_contours(
    E0: float,
    params: RegionParams,
    branch="+",
    orientation: str = "rotated",
    samples: int = 512,
    tol: float = 1e-8,
    d: float = 1.0,
) -> list[IsoContour]:
    """Level sets ``E(k) = E0`` in the first Brillouin zone.

    Marching squares on a ``samples x samples`` grid locates crossings on
    grid edges; each vertex is then refined by bisection along its edge to
    ``|E - E0| <= tol``.  Returns an empty list when ``E0`` is outside the
    band.
    """
    from skimage.measure import find_contours

    lo, hi = band_range(params, branch, orientation)
    if E0 < lo or E0 > hi:
        return []
    ks = np.linspace(-math.pi / d, math.pi / d, samples + 1)
    KX, KY = np.meshgrid(ks, ks, indexing="ij")
    f = bloch_energy(np.stack([KX, KY], -1), params, branch, orientation, d) - E0
    out = []
    for raw in find_contours(f, 0.0):
        pts = np.empty_like(raw)
        for n, (ri, ci) in enumerate(raw):
            pts[n] = _refine_vertex(ri, ci, ks, f, E0, params, branch, orientation, tol, d)
        closed = bool(np.allclose(raw[0], raw[-1]))
        out.append(IsoContour(E0, pts, closed, _is_convex(pts) if closed else False))
    return out


def isoenergy_contour(E0, params, branch="+", orientation="rotated", samples=512, tol=1e-8, d=1.0) -> IsoContour:
    """Longest contour at ``E0`` (an empty, open contour when E0 is outside the band)."""
    cs = isoenergy_contours(E0, params, branch, orientation, samples, tol, d)
    if not cs:
        return IsoContour(E0, np.empty((0, 2)), False, False)
    return max(cs, key=len)


def _refine_vertex(ri, ci, ks, f, E0, params, branch, orientation, tol, d):
    step = ks[1] - ks[0]
    i0, j0 = int(math.floor(ri)), int(math.floor(ci))
    on_row = abs(ri - round(ri)) < 1e-12
    on_col = abs(ci - round(ci)) < 1e-12
    if on_row and on_col:
        return np.array([ks[int(round(ri))], ks[int(round(ci))]])
    if on_row:  # moves along k_y between columns j0, j0+1
        i = int(round(ri))
        a, b = ks[j0], ks[min(j0 + 1, len(ks) - 1)]

        def g(y):
            return float(bloch_energy(np.array([ks[i], y]), params, branch, orientation, d)) - E0

        fixed_axis = 0
        fixed = ks[i]
    else:
        j = int(round(ci))
        a, b = ks[i0], ks[min(i0 + 1, len(ks) - 1)]

        def g(x):
            return float(bloch_energy(np.array([x, ks[j]]), params, branch, orientation, d)) - E0

        fixed_axis = 1
        fixed = ks[j]
    ga, gb = g(a), g(b)
    if ga == 0:
        t = a
    elif gb == 0 or ga * gb > 0:
        t = b if abs(gb) < abs(ga) else a
        # interpolated point as fallback; should not happen for a true crossing
        t = a + (ri - i0 if not on_row else ci - j0) * step if ga * gb > 0 else t
    else:
        t = brentq(g, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)
        if abs(g(t)) > tol:  # pragma: no cover - brentq to machine precision
            raise RuntimeError("contour refinement failed")
    return np.array([fixed, t]) if fixed_axis == 0 else np.array([t, fixed])


def contour_normals(contour: IsoContour) -> np.ndarray:
    """Unit normals from second-order tangents of the polyline.

    The tangent at each vertex is the derivative of the quadratic through it
    and its two neighbours, parameterised by chord length, so unevenly
    spaced marching-squares vertices keep second-order accuracy.
    """
    p = contour.points
    closed = contour.closed and len(p) > 3
    q = p[:-1] if closed else p
    if closed:
        prev, nxt = np.roll(q, 1, axis=0), np.roll(q, -1, axis=0)
    else:
        prev = np.vstack([q[:1], q[:-1]])
        nxt = np.vstack([q[1:], q[-1:]])
    a = q - prev
    b = nxt - q
    h1 = np.linalg.norm(a, axis=1)[:, None]
    h2 = np.linalg.norm(b, axis=1)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (h1**2 * b + h2**2 * a) / (h1 * h2 * (h1 + h2))
    # endpoints of open polylines and collapsed vertices fall back to one-sided chords
    bad = ~np.all(np.isfinite(t), axis=1)
    t[bad] = np.where(h2[bad] > 0, b[bad], a[bad])
    if not closed and len(q) >= 3:
        t[0] = _endpoint_tangent(q[0], q[1], q[2])
        t[-1] = -_endpoint_tangent(q[-1], q[-2], q[-3])
    if closed:
        t = np.vstack([t, t[:1]])
    n = np.column_stack([t[:, 1], -t[:, 0]])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _endpoint_tangent(p0, p1, p2):
    """Derivative at ``p0`` of the chord-length quadratic through three points."""
    h1 = np.linalg.norm(p1 - p0)
    h2 = np.linalg.norm(p2 - p1)
    if h1 == 0 or h2 == 0:
        return p1 - p0 if h1 > 0 else p2 - p0
    return -(2 * h1 + h2) / (h1 * (h1 + h2)) * p0 + (h1 + h2) / (h1 * h2) * p1 - h1 / (h2 * (h1 + h2)) * p2


def free_space_circle(radius: float, samples: int = 256) -> np.ndarray:
    th = np.linspace(0, 2 * math.pi, samples + 1)
    return radius * np.column_stack([np.cos(th), np.sin(th)])


# ---------------------------------------------------------------------------
# extrema
# ---------------------------------------------------------------------------


@dataclass
class BandExtremum:
    k: np.ndarray
    energy: float
    kind: str  # "min", "max" or "saddle"


def band_extrema(params: RegionParams, branch="+", orientation: str = "rotated", samples: int = 64, d: float = 1.0):
    """Critical points of a band in the zone, Newton-refined from a grid.

    The band prefactor never vanishes for ``beta != 0``, so critical points
    of ``E`` are those of the kernel ``K``.
    """
    ks = np.linspace(-math.pi / d, math.pi / d, samples, endpoint=False)
    KX, KY = np.meshgrid(ks, ks, indexing="ij")
    grid = np.stack([KX, KY], -1)
    gnorm = np.linalg.norm(kernel_gradient(grid, orientation, params.kappa, d), axis=-1)
    # local minima of |grad K| on the periodic grid
    cand = np.ones_like(gnorm, dtype=bool)
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            if sx or sy:
                cand &= gnorm <= np.roll(np.roll(gnorm, sx, 0), sy, 1)
    found = []
    for k in grid[cand]:
        for _ in range(50):
            g = kernel_gradient(k, orientation, params.kappa, d)
            Hm = kernel_hessian(k, orientation, params.kappa, d)
            try:
                dk = np.linalg.solve(Hm, g)
            except np.linalg.LinAlgError:
                break
            k = k - dk
            if np.linalg.norm(dk) < 1e-14:
                break
        if np.linalg.norm(kernel_gradient(k, orientation, params.kappa, d)) > 1e-10:
            continue
        k = (k + math.pi / d) % (2 * math.pi / d) - math.pi / d
        k[np.isclose(k, -math.pi / d)] = math.pi / d
        if any(np.allclose(k, f.k, atol=1e-8) for f in found):
            continue
        hess_e = _energy_hessian(k, params, branch, orientation, d)
        ev = np.linalg.eigvalsh(hess_e)
        kind = "min" if np.all(ev > 0) else "max" if np.all(ev < 0) else "saddle"
        found.append(BandExtremum(k, float(bloch_energy(k, params, branch, orientation, d)), kind))
    return found


def _energy_hessian(k, params, branch, orientation, d, h=1e-4):
    Hm = np.empty((2, 2))
    for a in range(2):
        e = np.zeros(2)
        e[a] = h
        Hm[a] = (group_velocity(k + e, params, branch, orientation, d) - group_velocity(k - e, params, branch, orientation, d)) / (2 * h)
    return 0.5 * (Hm + Hm.T)


# ---------------------------------------------------------------------------
# surface bands
# ---------------------------------------------------------------------------


def surface_hamiltonian(k_y, kappa, omega, beta, eps_s, eps_b, d: float = 1.0):
    """4x4 Bloch Hamiltonian of a two-site surface cell (surface, bulk).

    Basis: (surface photon, surface atom, bulk photon, bulk atom).
    """
    hop = -kappa * (1 + np.exp(1j * k_y * SQRT2 * d))
    return np.array(
        [
            [omega, beta, hop, 0],
            [beta, eps_s, 0, 0],
            [np.conj(hop), 0, omega, beta],
            [0, 0, beta, eps_b],
        ],
        dtype=complex,
    )


def surface_band(k_y, kappa, omega, beta, eps_s, eps_b, d: float = 1.0, *, vectors: bool = False):
    """Eigenvalues (ascending) of the surface-cell Hamiltonian at each ``k_y``.

    Returns shape ``(..., 4)``; with ``vectors=True`` also the surface-site
    weight of each eigenvector.
    """
    ky = np.atleast_1d(np.asarray(k_y, dtype=float))
    vals = np.empty(ky.shape + (4,))
    wts = np.empty(ky.shape + (4,))
    for idx, q in np.ndenumerate(ky):
        w, v = np.linalg.eigh(surface_hamiltonian(q, kappa, omega, beta, eps_s, eps_b, d))
        vals[idx] = w
        wts[idx] = np.sum(np.abs(v[:2]) ** 2, axis=0)
    if np.ndim(k_y) == 0:
        vals, wts = vals[0], wts[0]
    return (vals, wts) if vectors else vals


def band_table(params: RegionParams, orientation="rotated", samples=128, d: float = 1.0):
    """Columns (k_x, k_y, E-, E+, v_x, v_y) over the zone; v is the + branch velocity."""
    ks = np.linspace(-math.pi / d, math.pi / d, samples, endpoint=False) + math.pi / (d * samples)
    KX, KY = np.meshgrid(ks, ks, indexing="ij")
    k = np.stack([KX.ravel(), KY.ravel()], -1)
    em, ep = bloch_bands(k, params, orientation, d)
    v = group_velocity(k, params, "+", orientation, d)
    return np.column_stack([k, em, ep, v])
