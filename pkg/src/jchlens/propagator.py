"""Time-domain engine: wave packets, well eigenstates, evolution, measurements.

States are complex vectors in the blocked basis of
:mod:`jchlens.hamiltonian` (photonic amplitudes first, then atomic).
Evolution defaults to ``exp(-i H t)``; ``sign=+1`` gives ``exp(+i H t)``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.optimize import least_squares
from scipy.special import gammaln, jv

from . import _kernels
from .bands import hopping_kernel, polariton_weights
from .hamiltonian import DENSE_CAP, SparseHamiltonian, dense_spectrum, gershgorin_bounds
from .lattice import RegionParams, SiteTable

MAX_CHUNK_PHASE = 2000.0
SAFETY = 1.01


class PropagationError(RuntimeError):
    pass


class PacketTruncationWarning(UserWarning):
    pass


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------


@dataclass
class WavePacketSpec:
    """Gaussian packet: a superposition of plane waves under one envelope.

    ``components`` is a list of ``(k0, weight)`` pairs.  ``mixing`` is either
    a fixed ``(photon, atom)`` amplitude pair or ``"bloch"``, which uses the
    Bloch eigenvector of ``params``/``branch`` at each ``k0``.
    """

    components: list
    sigma_k: float = math.pi / 20
    r0: tuple[float, float] = (0.0, 0.0)
    mixing: tuple | str = (1.0, 1.0)
    params: RegionParams | None = None
    branch: str = "+"

    def __post_init__(self):
        if not self.sigma_k > 0:
            raise ValueError("sigma_k must be positive")
        comps = [(np.asarray(k, dtype=float), complex(w)) for k, w in self.components]
        if not comps:
            raise ValueError("packet needs at least one component")
        norm = math.sqrt(sum(abs(w) ** 2 for _, w in comps))
        self.components = [(k, w / norm) for k, w in comps]


def _displacement(pos, r0, spec):
    dx = pos[:, 0] - r0[0]
    dy = pos[:, 1] - r0[1]
    if spec.periodic_x:
        L = spec.nx * spec.d
        dx = (dx + L / 2) % L - L / 2
    if spec.periodic_y:
        L = spec.ny * spec.d
        dy = (dy + L / 2) % L - L / 2
    return dx, dy


def edge_mask(sites: SiteTable, depth: int = 2) -> np.ndarray:
    """Sites within ``depth`` columns/rows of an open boundary."""
    spec = sites.spec
    ix, iy = np.divmod(np.arange(sites.n_sites), spec.ny)
    m = np.zeros(sites.n_sites, dtype=bool)
    if not spec.periodic_x:
        m |= (ix < depth) | (ix >= spec.nx - depth)
    if not spec.periodic_y:
        m |= (iy < depth) | (iy >= spec.ny - depth)
    return m


def gaussian_packet(spec: WavePacketSpec, sites: SiteTable, *, edge_threshold: float = 1e-6) -> np.ndarray:
    """Normalised packet ``sum_j w_j exp(i k_j.r) exp(-|r - r0|^2 sigma_k^2 / 2)``.

    Emits :class:`PacketTruncationWarning` when more than ``edge_threshold``
    of the population sits on the outermost rows/columns of an open edge.
    """
    pos = sites.positions
    dx, dy = _displacement(pos, spec.r0, sites.spec)
    env = np.exp(-(dx**2 + dy**2) * spec.sigma_k**2 / 2)
    n = sites.n_sites
    psi = np.zeros(2 * n, dtype=complex)
    for k0, w in spec.components:
        # phase relative to r0 keeps the packet centre at zero phase
        wave = w * env * np.exp(1j * (k0[0] * dx + k0[1] * dy))
        if isinstance(spec.mixing, str):
            if spec.mixing != "bloch" or spec.params is None:
                raise ValueError("mixing='bloch' needs region params")
            K = hopping_kernel(k0, sites.spec.orientation, spec.params.kappa, sites.spec.d)
            cp, ca = polariton_weights(K, spec.params, spec.branch)
        else:
            cp, ca = (complex(v) for v in spec.mixing)
        psi[:n] += cp * wave
        psi[n:] += ca * wave
    psi /= np.linalg.norm(psi)
    edge = population_by_site(psi, n)[edge_mask(sites, 1)].sum()
    if edge > edge_threshold:
        warnings.warn(f"packet truncated: {edge:.2e} of the population on open edges", PacketTruncationWarning)
    return psi


@dataclass
class WellState:
    psi: np.ndarray
    energy: float
    residual: float
    index: int
    spectrum: np.ndarray


def well_eigenstate(
    H: SparseHamiltonian,
    mask: np.ndarray,
    E_target: float,
    *,
    window: float | None = None,
    cap: int = DENSE_CAP,
    iterative: bool = True,
) -> WellState:
    """Eigenstate of ``H`` restricted to ``mask`` nearest ``E_target``.

    The restricted eigenvector is embedded in the full lattice with zeros
    outside the mask.  Raises :class:`PropagationError` if no eigenvalue lies
    within ``window`` of the target.
    """
    sub, idx = H.subspace(mask)
    target = E_target - H.shift
    if sub.dim <= cap:
        w, v = np.linalg.eigh(sub.matrix.toarray())
    elif iterative:
        w, v = spla.eigsh(sub.matrix, k=min(6, sub.dim - 2), sigma=target, which="LM")
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    else:
        raise PropagationError(f"masked dimension {sub.dim} exceeds dense cap {cap}")
    j = int(np.argmin(np.abs(w - target)))
    if window is not None and abs(w[j] - target) > window:
        raise PropagationError(f"no eigenvalue within {window} of {E_target}")
    vec = v[:, j]
    res = float(np.linalg.norm(sub.matrix @ vec - w[j] * vec))
    psi = np.zeros(H.dim, dtype=complex)
    psi[idx] = vec
    psi /= np.linalg.norm(psi)
    return WellState(psi, float(w[j] + H.shift), res, j, w + H.shift)


def tail_decay_rate(psi: np.ndarray, sites: SiteTable, x0: int, x1: int, floor: float = 1e-28) -> float:
    """Amplitude decay rate per site from a log-linear fit of column populations on ``[x0, x1)``."""
    pops = column_population(psi, sites)
    xs = np.arange(x0, x1)
    p = pops[x0:x1]
    ok = p > floor
    if ok.sum() < 2:
        raise FitError("tail population below floor")
    slope = np.polyfit(xs[ok], np.log(p[ok]), 1)[0]
    return float(-slope / 2)


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


@dataclass
class EvolutionResult:
    psi: np.ndarray
    times: np.ndarray
    snapshots: list = field(default_factory=list)
    norm_drift: float = 0.0
    error_bound: float = 0.0
    matvecs: int = 0
    boundary_population: float = 0.0
    boundary_flag: bool = False
    method: str = "chebyshev"


def chebyshev_terms(x: float, tol: float, max_terms: int = 10**6) -> tuple[int, float]:
    """Smallest order ``K`` whose certified tail ``2 sum_{k>K} |J_k(x)|`` is below ``tol``.

    Uses ``|J_k(x)| <= (x/2)^k / k!`` and a geometric bound on the ratio of
    consecutive terms once ``k + 1 > x / 2``.
    """
    x = abs(x)
    if x == 0:
        return 0, 0.0
    k = max(1, int(x))
    while True:
        if k > max_terms:
            raise PropagationError(f"Chebyshev order exceeds {max_terms} for tol={tol}")
        m = k + 1
        ratio = x / (2 * (m + 1))
        if ratio < 1:
            log_tail = m * math.log(x / 2) - gammaln(m + 1) - math.log1p(-ratio)
            bound = 2 * math.exp(log_tail)
            if bound <= tol:
                return k, bound
        k += max(1, k // 50)


def _chebyshev_step(mat, psi, dt, center, half, tol, sign, force_numpy, max_terms):
    x = half * dt
    K, bound = chebyshev_terms(x, tol, max_terms)
    ks = np.arange(K + 1)
    coeffs = 2.0 * jv(ks, x) * (-1j) ** ks
    coeffs[0] /= 2
    if sign > 0:
        coeffs = np.conj(coeffs)
    out = _kernels.chebyshev_series(mat, center, half, coeffs, psi, force_numpy=force_numpy)
    out *= np.exp(sign * 1j * center * dt)
    return out, bound, K


def _lanczos_step(mat, psi, dt, tol, sign, m_max=40):
    """One Krylov step of length up to ``dt``; returns (state, taken dt, error estimate, matvecs)."""
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        return psi.copy(), dt, 0.0, 0
    n = psi.shape[0]
    m_max = min(m_max, n)
    V = np.zeros((m_max + 1, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = psi / nrm
    m = m_max
    for j in range(m_max):
        w = mat @ V[j]
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j else 0)
        # full reorthogonalisation keeps the small basis clean
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])):
            m = j + 1
            beta[j] = 0.0
            break
        V[j + 1] = w / beta[j]
    T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
    tau = dt
    while True:
        E = sla.expm(sign * 1j * tau * T)[:, 0]
        err = nrm * beta[m - 1] * abs(E[m - 1])
        if err <= tol * tau / dt or tau < 1e-12 * dt:
            break
        tau /= 2
    return nrm * (V[:m].T @ E), tau, err, m


def evolve(
    H: SparseHamiltonian,
    psi0: np.ndarray,
    t: float,
    tol: float = 1e-10,
    *,
    method: str = "chebyshev",
    times: Sequence[float] | None = None,
    sign: int = -1,
    observer: Callable[[float, np.ndarray], None] | None = None,
    store: str | None = "populations",
    sites: SiteTable | None = None,
    guard_threshold: float = 1e-4,
    max_chunk_phase: float = MAX_CHUNK_PHASE,
    max_terms: int = 10**6,
    eig: tuple[np.ndarray, np.ndarray] | None = None,
    force_numpy: bool = False,
) -> EvolutionResult:
    """Apply ``exp(sign * i H t)`` to ``psi0`` with a certified 2-norm error.

    ``method`` is ``"chebyshev"`` (default; Bessel expansion on the
    Gershgorin interval, split into chunks with at most ``max_chunk_phase``
    radians of spectral phase), ``"krylov"`` (Lanczos with adaptive steps;
    a-posteriori error estimate) or ``"dense"`` (eigendecomposition; pass
    ``eig`` to reuse one across runs).

    ``times`` are snapshot times in ``[0, t]``.  At each one (and at 0)
    ``observer(time, psi)`` is called and, with ``store="populations"``, the
    per-site ``(photon, atom)`` populations are kept; ``store="states"``
    keeps full state copies.  When ``sites`` is given, population within two
    sites of an open boundary is tracked and flagged above
    ``guard_threshold``.
    """
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    if not (1e-14 < tol < 1e-4):
        raise ValueError("tol must lie in (1e-14, 1e-4)")
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    psi = np.array(psi0, dtype=complex, copy=True)
    norm0 = np.linalg.norm(psi)
    stops = sorted({float(s) for s in (times if times is not None else [])} | {float(t)})
    if stops and (stops[0] < 0 or stops[-1] > t):
        raise ValueError("snapshot times must lie in [0, t]")
    snap_set = {float(s) for s in times} if times is not None else set()

    guard = edge_mask(sites, 2) if sites is not None else None
    n = H.n_sites
    result = EvolutionResult(psi, np.array(sorted(snap_set)), method=method)

    def record(tt, state):
        if guard is not None:
            b = float(population_by_site(state, n)[guard].sum())
            result.boundary_population = max(result.boundary_population, b)
        if tt in snap_set:
            if observer is not None:
                observer(tt, state)
            if store == "populations":
                result.snapshots.append(site_populations(state, n))
            elif store == "states":
                result.snapshots.append(state.copy())

    record(0.0, psi)

    mat = H.matrix
    if method == "chebyshev":
        lo, hi = gershgorin_bounds(H)
        center = 0.5 * (hi + lo)
        half = max(0.5 * (hi - lo) * SAFETY, 1e-12)
        intervals = np.diff([0.0] + stops)
        nchunks = [max(1, math.ceil(half * dt / max_chunk_phase)) if dt > 0 else 0 for dt in intervals]
        total = max(1, sum(nchunks))
        chunk_tol = tol / total
        tnow = 0.0
        for stop, dt, nc in zip(stops, intervals, nchunks):
            for _ in range(nc):
                psi, bound, K = _chebyshev_step(mat, psi, dt / nc, center, half, chunk_tol, sign, force_numpy, max_terms)
                result.error_bound += bound
                result.matvecs += K
            tnow = stop
            if stop > 0:
                record(stop, psi)
    elif method == "krylov":
        tnow = 0.0
        for stop in stops:
            while stop - tnow > 1e-15 * max(1.0, stop):
                psi, taken, err, m = _lanczos_step(mat, psi, stop - tnow, tol * (stop - tnow) / max(t, 1e-300), sign)
                tnow += taken
                result.error_bound += err
                result.matvecs += m
            tnow = stop
            if stop > 0:
                record(stop, psi)
    elif method == "dense":
        if eig is None:
            w, v = dense_spectrum(H, vectors=True)
            w = w - H.shift
        else:
            w, v = eig
        coef = v.conj().T @ psi
        for stop in stops:
            if stop > 0:
                psi = v @ (np.exp(sign * 1j * w * stop) * coef)
                record(stop, psi)
        # rounding only: unitary eigenbasis, phases exact to machine precision
        result.error_bound = 1e-15 * math.sqrt(H.dim)
    else:
        raise ValueError(f"unknown method {method!r}")

    if H.shift:
        # the shifted frame only adds a global phase; restore it for the final state
        psi = psi * np.exp(sign * 1j * H.shift * t)
    result.psi = psi
    result.norm_drift = abs(float(np.linalg.norm(psi)) - norm0)
    result.boundary_flag = result.boundary_population > guard_threshold
    return result


def dense_expm_oracle(H: SparseHamiltonian, psi0: np.ndarray, t: float, sign: int = -1) -> np.ndarray:
    """Reference ``expm(sign i H t) psi0`` with the shift restored (small systems only)."""
    if H.dim > DENSE_CAP:
        raise PropagationError("dense oracle beyond cap")
    A = H.matrix.toarray() + H.shift * np.eye(H.dim)
    return sla.expm(sign * 1j * t * A) @ np.asarray(psi0, dtype=complex)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------


def population_by_site(psi: np.ndarray, n_sites: int) -> np.ndarray:
    a = np.abs(psi) ** 2
    return a[:n_sites] + a[n_sites:]


def site_populations(psi: np.ndarray, n_sites: int) -> np.ndarray:
    """``(2, N)`` array of photonic and atomic populations."""
    a = np.abs(psi) ** 2
    return np.stack([a[:n_sites], a[n_sites:]])


def region_population(psi: np.ndarray, where, sites: SiteTable | None = None) -> float:
    """Population ``sum |c_r|^2 + |d_r|^2`` on a site mask or named region(s)."""
    if isinstance(where, np.ndarray) and where.dtype == bool:
        mask = where
        n = mask.shape[0]
    else:
        if sites is None:
            raise KeyError("region lookup needs a SiteTable")
        names = where if isinstance(where, (list, tuple)) else [where]
        mask = sites.mask(*names)
        n = sites.n_sites
    return float(population_by_site(psi, n)[mask].sum())


def column_population(psi: np.ndarray, sites: SiteTable) -> np.ndarray:
    return population_by_site(psi, sites.n_sites).reshape(sites.spec.nx, sites.spec.ny).sum(axis=1)


@dataclass
class RabiFit:
    omega: float  # coupling Omega
    eta: float  # detuning eta
    residual: float  # rms misfit
    amplitude: float  # 4 Omega^2 / (eta^2 + 4 Omega^2)
    frequency: float  # sqrt(eta^2 + 4 Omega^2)


def rabi_model(t, omega, eta):
    g2 = eta**2 + 4 * omega**2
    return 2 * omega**2 / g2 * (1 - np.cos(np.sqrt(g2) * t))


def fit_rabi(t, P, *, min_periods: float = 3.0) -> RabiFit:
    """Least-squares fit of ``2 W^2/(eta^2+4W^2) [1 - cos(sqrt(eta^2+4W^2) t)]``.

    Fitted in amplitude/frequency form ``A (1 - cos(g t)) / 2`` with
    ``A`` bounded to ``[0, 1]``; then ``Omega = g sqrt(A) / 2`` and
    ``eta = g sqrt(1 - A)``.
    """
    t = np.asarray(t, dtype=float)
    P = np.asarray(P, dtype=float)
    if t.shape != P.shape or t.size < 8:
        raise FitError("need at least 8 matching (t, P) samples")
    if np.ptp(P) < 1e-12:
        raise FitError("flat series: no oscillation to fit")
    # frequency guess from the dominant non-zero Fourier component
    tu = np.linspace(t.min(), t.max(), max(256, 4 * t.size))
    Pu = np.interp(tu, t, P)
    spec = np.abs(np.fft.rfft(Pu - Pu.mean()))
    freqs = np.fft.rfftfreq(tu.size, tu[1] - tu[0])
    j = int(np.argmax(spec[1:]) + 1)
    g0 = 2 * math.pi * freqs[j]
    span = t.max() - t.min()
    if g0 * span / (2 * math.pi) < min_periods - 0.5:
        raise FitError(f"fewer than {min_periods} oscillation periods sampled")
    A0 = min(1.0, max(1e-6, float(P.max())))

    def resid(p):
        A, g = p
        return A * (1 - np.cos(g * t)) / 2 - P

    best = None
    for gs in (g0 * (1 + s) for s in (0.0, -0.5 / max(1, j), 0.5 / max(1, j))):
        sol = least_squares(resid, [A0, gs], bounds=([0.0, 0.0], [1.0, np.inf]), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if best is None or sol.cost < best.cost:
            best = sol
    if not best.success:
        raise FitError(f"fit did not converge: {best.message}")
    A, g = best.x
    if g * span / (2 * math.pi) < min_periods:
        raise FitError(f"fewer than {min_periods} oscillation periods sampled")
    rms = float(np.sqrt(np.mean(best.fun**2)))
    return RabiFit(g * math.sqrt(A) / 2, g * math.sqrt(max(0.0, 1 - A)), rms, float(A), float(g))


@dataclass
class CentroidTrack:
    times: np.ndarray
    centroids: np.ndarray  # (M, 2)
    populations: np.ndarray
    velocity: np.ndarray  # (2,)
    angle: float  # radians, atan2(v_y, v_x)
    angle_err: float


def centroid_track(times, snapshots, sites: SiteTable, mask: np.ndarray | None = None, threshold: float = 1e-3) -> CentroidTrack:
    """Population-weighted centroids inside ``mask`` and their fitted direction.

    ``snapshots`` are per-site populations, either ``(N,)`` totals or the
    ``(2, N)`` photon/atom pairs stored by :func:`evolve`.  Snapshots with
    less than ``threshold`` population in the mask are skipped.
    """
    pos = sites.positions
    mask = np.ones(sites.n_sites, dtype=bool) if mask is None else mask
    keep_t, cents, pops = [], [], []
    for tt, s in zip(times, snapshots):
        p = np.asarray(s)
        if p.ndim == 2:
            p = p.sum(axis=0)
        p = p * mask
        tot = p.sum()
        if tot < threshold:
            continue
        keep_t.append(tt)
        cents.append(p @ pos / tot)
        pops.append(tot)
    if len(keep_t) < 2:
        raise FitError("fewer than two snapshots with population in the mask")
    T = np.asarray(keep_t, dtype=float)
    C = np.asarray(cents)
    A = np.column_stack([T, np.ones_like(T)])
    coef, *_ = np.linalg.lstsq(A, C, rcond=None)
    v = coef[0]
    angle = math.atan2(v[1], v[0])
    if len(T) > 2:
        res = C - A @ coef
        s2 = np.sum(res**2, axis=0) / (len(T) - 2)
        var_slope = s2 / np.sum((T - T.mean()) ** 2)
        sp2 = v @ v
        dth = math.sqrt((v[0] ** 2 * var_slope[1] + v[1] ** 2 * var_slope[0]) / sp2**2) if sp2 > 0 else math.inf
    else:
        dth = math.inf
    return CentroidTrack(T, C, np.asarray(pops), v, angle, dth)


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

_SNAP_MAGIC = b"JCHS"
_SNAP_HEADER = struct.Struct("<4sdIII")  # magic, time, nx, ny, layout (0 = row-major)


def write_snapshot(path, time: float, populations: np.ndarray, nx: int, ny: int) -> None:
    """Header then photonic and atomic population planes, float64 row-major."""
    p = np.asarray(populations, dtype="<f8").reshape(2, nx, ny)
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(_SNAP_MAGIC, float(time), nx, ny, 0))
        fh.write(np.ascontiguousarray(p).tobytes())


def read_snapshot(path) -> tuple[float, np.ndarray]:
    with open(path, "rb") as fh:
        magic, time, nx, ny, layout = _SNAP_HEADER.unpack(fh.read(_SNAP_HEADER.size))
        if magic != _SNAP_MAGIC or layout != 0:
            raise ValueError(f"{path}: not a snapshot file")
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(2, nx, ny)
    return time, data.copy()


def write_snapshot_series(directory, times, snapshots, nx: int, ny: int, prefix: str = "snap") -> Path:
    """Write one file per snapshot plus ``index.txt`` (index, time, file)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# index time file"]
    for i, (tt, s) in enumerate(zip(times, snapshots)):
        name = f"{prefix}_{i:05d}.bin"
        write_snapshot(directory / name, tt, s, nx, ny)
        lines.append(f"{i} {tt:.17g} {name}")
    idx = directory / "index.txt"
    idx.write_text("\n".join(lines) + "\n")
    return idx


def read_snapshot_series(directory) -> tuple[np.ndarray, list[np.ndarray]]:
    directory = Path(directory)
    times, snaps = [], []
    for line in (directory / "index.txt").read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        _, _, name = line.split()
        tt, s = read_snapshot(directory / name)
        times.append(tt)
        snaps.append(s)
    return np.asarray(times), snaps
