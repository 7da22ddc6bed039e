"""Cavity-array geometry, region partition and per-site parameters.

Sites live on an ``nx`` by ``ny`` integer grid indexed row-major over
``(ix, iy)``: ``site = ix * ny + iy``.  The interface normal is the +x
axis.  Energies are in units of the hopping rate, lengths in units of the
spacing ``d`` (natural units, hbar = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

ORIENTATIONS = ("rotated", "unrotated")
BOUNDARIES = ("open", "periodic")
INTERFACE_KAPPA_RULES = ("geometric", "arithmetic", "min", "max", "left", "right")

# one representative per neighbour pair; the mirror offsets are implied
_FORWARD_OFFSETS = {
    "rotated": ((1, 1), (1, -1)),
    "unrotated": ((1, 0), (0, 1)),
}


class LatticeError(ValueError):
    """Inconsistent lattice or region description."""


def neighbor_offsets(orientation: str) -> tuple[tuple[int, int], ...]:
    """All four nearest-neighbour offsets (in units of ``d``) for an orientation."""
    fwd = _FORWARD_OFFSETS[orientation]
    return fwd + tuple((-a, -b) for a, b in fwd)


@dataclass(frozen=True)
class LatticeSpec:
    """Grid size, connectivity orientation, spacing and boundary conditions.

    ``boundary`` is either one of ``"open"``/``"periodic"`` (both axes) or a
    pair ``(x_bc, y_bc)``; a quasi-1D strip is ``("open", "periodic")``.
    """

    nx: int
    ny: int
    orientation: str = "rotated"
    d: float = 1.0
    boundary: str | tuple[str, str] = "open"

    def __post_init__(self):
        if int(self.nx) < 2 or int(self.ny) < 2:
            raise LatticeError(f"lattice needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not self.d > 0:
            raise LatticeError("spacing d must be positive")
        if self.orientation not in ORIENTATIONS:
            raise LatticeError(f"unknown orientation {self.orientation!r}")
        bc = self.boundary
        if isinstance(bc, str):
            bc = (bc, bc)
        bc = tuple(bc)
        if len(bc) != 2 or any(b not in BOUNDARIES for b in bc):
            raise LatticeError(f"bad boundary {self.boundary!r}")
        object.__setattr__(self, "boundary", bc)
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))

    @property
    def n_sites(self) -> int:
        return self.nx * self.ny

    @property
    def periodic_x(self) -> bool:
        return self.boundary[0] == "periodic"

    @property
    def periodic_y(self) -> bool:
        return self.boundary[1] == "periodic"

    def site_index(self, ix, iy):
        return np.asarray(ix) * self.ny + np.asarray(iy)


@dataclass(frozen=True)
class RegionParams:
    """Physical parameters of one homogeneous region.

    ``delta`` is the detuning ``omega - eps``.
    """

    omega: float = 0.0
    delta: float = 0.0
    beta: float = 100.0
    kappa: float = 1.0

    @property
    def eps(self) -> float:
        return self.omega - self.delta

    def replace(self, **kw) -> "RegionParams":
        vals = dict(omega=self.omega, delta=self.delta, beta=self.beta, kappa=self.kappa)
        vals.update(kw)
        return RegionParams(**vals)


@dataclass(frozen=True)
class GrinProfile:
    """Sin^2 detuning ramp across a lens of ``width`` columns.

    ``delta1`` is the detuning at the lens faces, ``delta2`` the plateau,
    ``w`` the ramp length.  ``width`` defaults to the width of the region
    the profile is attached to.
    """

    delta1: float
    delta2: float
    w: float
    width: int | None = None
    literal: bool = False


def grin_detuning(x, delta1, delta2, w, width, *, literal=False):
    """Ramped detuning at distance ``x`` (sites, ``0 < x <= width``) into a lens.

    The entry ramp is ``(delta2 - delta1) sin^2(pi x / 2w) + delta1``, the
    plateau is ``delta2`` and the exit ramp mirrors the entry one,
    ``(delta2 - delta1) cos^2(pi (x - (width - w)) / 2w) + delta1``, so the
    profile returns to ``delta1`` at ``x = width``.  With ``literal=True`` the
    exit branch uses ``cos^2(pi (x + width - w) / 2w)`` instead, which is only
    continuous for special ``w, width``; it is kept for comparison.
    """
    x_arr = np.asarray(x, dtype=float)
    if not (0 < w <= width / 2):
        raise LatticeError(f"GRIN ramp needs 0 < w <= W/2, got w={w}, W={width}")
    if np.any(x_arr <= 0) or np.any(x_arr > width):
        raise LatticeError(f"GRIN position out of range (0, {width}]")
    span = delta2 - delta1
    entry = span * np.sin(np.pi * x_arr / (2 * w)) ** 2 + delta1
    if literal:
        exit_ = span * np.cos(np.pi * (x_arr + width - w) / (2 * w)) ** 2 + delta1
    else:
        exit_ = span * np.cos(np.pi * (x_arr - (width - w)) / (2 * w)) ** 2 + delta1
    out = np.where(x_arr <= w, entry, np.where(x_arr <= width - w, delta2, exit_))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class RegionMap:
    """Region id per site plus parameters (and optional GRIN ramp) per region."""

    site_region: np.ndarray  # shape (nx, ny), int
    params: dict[int, RegionParams]
    grin: dict[int, GrinProfile] = field(default_factory=dict)
    names: dict[int, str] = field(default_factory=dict)

    @classmethod
    def uniform(cls, spec: LatticeSpec, params: RegionParams, name: str = "bulk") -> "RegionMap":
        return cls(np.zeros((spec.nx, spec.ny), dtype=int), {0: params}, names={0: name})

    @classmethod
    def from_x_slabs(cls, spec: LatticeSpec, slabs: Sequence[Mapping]) -> "RegionMap":
        """Build from a list of ``{"x": [start, stop), "params": RegionParams, ...}``.

        Slabs must tile ``[0, nx)`` without gaps or overlaps.  Optional keys:
        ``name`` and ``grin`` (a :class:`GrinProfile`).
        """
        site_region = np.full((spec.nx, spec.ny), -1, dtype=int)
        params, grin, names = {}, {}, {}
        for rid, slab in enumerate(slabs):
            x0, x1 = (int(v) for v in slab["x"])
            if not (0 <= x0 < x1 <= spec.nx):
                raise LatticeError(f"slab x-range {slab['x']} outside [0, {spec.nx})")
            if np.any(site_region[x0:x1] >= 0):
                raise LatticeError(f"slab {slab.get('name', rid)} overlaps another region")
            site_region[x0:x1] = rid
            params[rid] = slab["params"]
            names[rid] = slab.get("name", f"region{rid}")
            if slab.get("grin") is not None:
                grin[rid] = slab["grin"]
        if np.any(site_region < 0):
            missing = sorted(set(np.where(site_region < 0)[0].tolist()))
            raise LatticeError(f"columns {missing[:5]}... not covered by any region")
        return cls(site_region, params, grin, names)

    def region_id(self, name_or_id) -> int:
        if isinstance(name_or_id, (int, np.integer)):
            if int(name_or_id) not in self.params:
                raise KeyError(f"unknown region id {name_or_id}")
            return int(name_or_id)
        for rid, nm in self.names.items():
            if nm == name_or_id:
                return rid
        raise KeyError(f"unknown region {name_or_id!r}")


def _combine_kappa(ki, kj, rule, xi, xj):
    if rule == "geometric":
        return np.sqrt(ki * kj)
    if rule == "arithmetic":
        return 0.5 * (ki + kj)
    if rule == "min":
        return np.minimum(ki, kj)
    if rule == "max":
        return np.maximum(ki, kj)
    left = xi <= xj
    if rule == "left":
        return np.where(left, ki, kj)
    if rule == "right":
        return np.where(left, kj, ki)
    raise LatticeError(f"unknown interface kappa rule {rule!r}")


@dataclass(frozen=True)
class SiteTable:
    """Resolved lattice: positions, region ids, per-site parameters, bonds.

    ``edges`` holds one row ``(i, j)`` per bond with ``edge_kappa`` its
    hopping.  On small periodic lattices two bonds may join the same pair
    of sites; they are kept separately so that every site has exactly four
    bond ends.
    """

    spec: LatticeSpec
    regions: RegionMap
    positions: np.ndarray  # (N, 2) in units of d
    region: np.ndarray  # (N,)
    omega: np.ndarray
    eps: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    edges: np.ndarray  # (E, 2) int
    edge_kappa: np.ndarray  # (E,)

    @property
    def n_sites(self) -> int:
        return self.spec.n_sites

    @property
    def delta(self) -> np.ndarray:
        return self.omega - self.eps

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_sites)

    def mask(self, *regions) -> np.ndarray:
        """Boolean site mask for the union of the named/numbered regions."""
        ids = [self.regions.region_id(r) for r in regions]
        return np.isin(self.region, ids)

    def column_mask(self, x0: int, x1: int) -> np.ndarray:
        ix = np.arange(self.n_sites) // self.spec.ny
        return (ix >= x0) & (ix < x1)

    def region_columns(self, name_or_id) -> tuple[int, int]:
        rid = self.regions.region_id(name_or_id)
        cols = np.where(np.any(self.regions.site_region == rid, axis=1))[0]
        return int(cols.min()), int(cols.max()) + 1

    def neighbors(self, site: int) -> list[int]:
        a = self.edges[self.edges[:, 0] == site, 1]
        b = self.edges[self.edges[:, 1] == site, 0]
        return sorted(np.concatenate([a, b]).tolist())


def build_lattice(spec: LatticeSpec, regions: RegionMap, *, interface_kappa: str = "geometric") -> SiteTable:
    """Resolve geometry and parameters into a :class:`SiteTable`.

    Raises :class:`LatticeError` on dimension mismatch, region id gaps,
    non-positive hopping or an invalid GRIN descriptor.
    """
    if interface_kappa not in INTERFACE_KAPPA_RULES:
        raise LatticeError(f"unknown interface kappa rule {interface_kappa!r}")
    sr = np.asarray(regions.site_region)
    if sr.shape != (spec.nx, spec.ny):
        raise LatticeError(f"region map shape {sr.shape} != lattice ({spec.nx}, {spec.ny})")
    ids = set(np.unique(sr).tolist())
    missing = ids - set(regions.params)
    if missing:
        raise LatticeError(f"region ids {sorted(missing)} have no parameters")
    for rid, p in regions.params.items():
        if not p.kappa > 0:
            raise LatticeError(f"region {rid}: hopping kappa must be > 0, got {p.kappa}")

    n = spec.n_sites
    ix, iy = np.divmod(np.arange(n), spec.ny)
    positions = np.column_stack([ix, iy]).astype(float) * spec.d
    region = sr.ravel().astype(int)

    omega = np.empty(n)
    delta = np.empty(n)
    beta = np.empty(n)
    kappa = np.empty(n)
    for rid, p in regions.params.items():
        m = region == rid
        omega[m], delta[m], beta[m], kappa[m] = p.omega, p.delta, p.beta, p.kappa

    for rid, g in regions.grin.items():
        cols = np.where(np.any(sr == rid, axis=1))[0]
        x0, x1 = int(cols.min()), int(cols.max()) + 1
        width = g.width if g.width is not None else x1 - x0
        if width > x1 - x0:
            raise LatticeError(f"GRIN width {width} exceeds lens width {x1 - x0}")
        m = region == rid
        xp = ix[m] - x0 + 1
        inside = xp <= width
        vals = np.full(xp.shape, regions.params[rid].delta, dtype=float)
        vals[inside] = grin_detuning(xp[inside], g.delta1, g.delta2, g.w, width, literal=g.literal)
        delta[m] = vals

    eps = omega - delta

    src, dst = [], []
    for ox, oy in _FORWARD_OFFSETS[spec.orientation]:
        jx, jy = ix + ox, iy + oy
        ok = np.ones(n, dtype=bool)
        if spec.periodic_x:
            jx = jx % spec.nx
        else:
            ok &= (jx >= 0) & (jx < spec.nx)
        if spec.periodic_y:
            jy = jy % spec.ny
        else:
            ok &= (jy >= 0) & (jy < spec.ny)
        src.append(np.arange(n)[ok])
        dst.append((jx * spec.ny + jy)[ok])
    edges = np.column_stack([np.concatenate(src), np.concatenate(dst)]).astype(np.int64)
    if np.any(edges[:, 0] == edges[:, 1]):  # pragma: no cover - impossible for nx, ny >= 2
        raise LatticeError("self-bond produced")
    ki, kj = kappa[edges[:, 0]], kappa[edges[:, 1]]
    edge_kappa = np.where(
        region[edges[:, 0]] == region[edges[:, 1]],
        ki,
        _combine_kappa(ki, kj, interface_kappa, ix[edges[:, 0]], ix[edges[:, 1]]),
    )
    return SiteTable(spec, regions, positions, region, omega, eps, beta, kappa, edges, edge_kappa)


def allowed_momenta(spec: LatticeSpec) -> np.ndarray:
    """Crystal momenta compatible with a fully periodic lattice, shape (nx*ny, 2)."""
    kx = 2 * math.pi * np.arange(spec.nx) / (spec.nx * spec.d)
    ky = 2 * math.pi * np.arange(spec.ny) / (spec.ny * spec.d)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    return np.column_stack([KX.ravel(), KY.ravel()])
