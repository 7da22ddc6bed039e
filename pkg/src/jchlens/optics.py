"""Closed-form interface optics for a flat interface normal to +x.

Covers transmitted-mode matching across an interface, the refraction
angle, single-interface reflection (including unequal hopping on the two
sides), pulse-averaged reflection, the lens round-trip transmission and
the resolution estimators.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass

import numpy as np

from .bands import bloch_energy, group_velocity
from .hamiltonian import _branch_sign
from .lattice import RegionParams

log = logging.getLogger(__name__)

CLAMP_EXCESS = 1e-12
DIVERGENCE_EPS = 1e-9


class MatchingError(ValueError):
    """No transmitted mode can be defined (pole or degenerate kernel)."""


class SingularMatchingError(ZeroDivisionError):
    """Reflection denominator vanishes."""


@dataclass(frozen=True)
class TransmittedMode:
    """Transmitted x-momentum; ``k2x`` is complex when evanescent.

    Evanescent modes are ``1j * kappa_ev`` (zone-centre type) or
    ``pi/d + 1j * kappa_ev`` (zone-edge type), decaying into region 2.
    """

    k2x: complex
    propagating: bool
    argument: float  # the cosine the solver inverted

    @property
    def kappa_ev(self) -> float:
        return 0.0 if self.propagating else float(self.k2x.imag)

    @property
    def real(self) -> float:
        return float(self.k2x.real)


@dataclass(frozen=True)
class ScatteringSolution:
    k1: tuple[float, float]
    k2x: complex
    propagating: bool
    theta_r: float | None  # radians, None when evanescent
    R: float
    energy: float

    @property
    def T(self) -> float:
        return 1.0 - self.R

    @property
    def kappa_ev(self) -> float:
        return 0.0 if self.propagating else float(np.imag(self.k2x))


def required_kernel(E1: float, params2: RegionParams) -> float:
    """Kernel value a region-2 mode needs to carry energy ``E1``."""
    gap = E1 - params2.eps
    if gap == 0:
        raise MatchingError("energy sits on the atomic pole E = eps of region 2")
    return params2.omega - E1 + params2.beta**2 / gap


def solve_k2x(
    E1: float,
    k_y: float,
    params2: RegionParams,
    branch="+",
    orientation: str = "rotated",
    d: float = 1.0,
) -> TransmittedMode:
    """Transmitted ``k_x`` in region 2 at energy ``E1`` and conserved ``k_y``.

    Of the two real roots the one whose group velocity points into
    region 2 (``v_x > 0``) is returned.
    """
    K = required_kernel(E1, params2)
    if orientation == "rotated":
        cy = math.cos(k_y * d)
        if abs(cy) < 1e-12:
            raise MatchingError("k_y at the zone edge: cos(k_y d) = 0 leaves k_x undetermined")
        arg = K / (4 * params2.kappa * cy)
    elif orientation == "unrotated":
        arg = K / (2 * params2.kappa) - math.cos(k_y * d)
    else:
        raise ValueError(f"unknown orientation {orientation!r}")

    if abs(arg) <= 1.0:
        kx = math.acos(arg) / d
        v = group_velocity(np.array([kx, k_y]), params2, branch, orientation, d)[0]
        if v < 0:
            kx = -kx
        return TransmittedMode(complex(kx, 0.0), True, arg)
    kev = math.acosh(abs(arg)) / d
    base = 0.0 if arg > 0 else math.pi / d
    return TransmittedMode(complex(base, kev), False, arg)


def refraction_angle(k1y: float, k2x, d: float = 1.0) -> float:
    """``arctan(tan(k1y d) cot(k2x d))`` for a rotated-lattice interface."""
    if np.iscomplexobj(k2x) and np.imag(k2x) != 0:
        raise MatchingError("evanescent transmission has no refraction angle")
    k2x = float(np.real(k2x))
    s = math.sin(k2x * d)
    if s == 0:
        return math.copysign(math.pi / 2, math.tan(k1y * d) * math.cos(k2x * d))
    return math.atan(math.tan(k1y * d) * math.cos(k2x * d) / s)


def propagation_angle(k, params: RegionParams, branch="+", orientation="rotated", d: float = 1.0) -> float:
    """Direction ``atan2(v_y, v_x)`` of the group velocity at ``k``."""
    v = group_velocity(np.asarray(k, dtype=float), params, branch, orientation, d)
    return float(math.atan2(v[1], v[0]))


def reflection(k1x: float, k2x, kappa1: float = 1.0, kappa2: float = 1.0, d: float = 1.0) -> float:
    """Single-interface reflection ``R = |r|^2``.

    ``R = [k1^2 + k2^2 - 2 k1 k2 cos(a - b)] / [k1^2 + k2^2 - 2 k1 k2 cos(a + b)]``
    with ``a = k1x d``, ``b = k2x d`` and ``k1, k2`` the hoppings.  An
    evanescent ``k2x`` (non-zero imaginary part) reflects fully.
    """
    if np.iscomplexobj(k2x) and np.imag(k2x) != 0:
        return 1.0
    a, b = k1x * d, float(np.real(k2x)) * d
    num = kappa1**2 + kappa2**2 - 2 * kappa1 * kappa2 * math.cos(a - b)
    den = kappa1**2 + kappa2**2 - 2 * kappa1 * kappa2 * math.cos(a + b)
    if abs(den) < 1e-300 or (kappa1 == kappa2 and abs(den) <= 1e-15 * kappa1**2):
        raise SingularMatchingError("k1x + k2x = 0 mod 2pi with equal hopping")
    R = num / den
    return _clamp(R)


def reflection_array(k1x, k2x, kappa1=1.0, kappa2=1.0, d: float = 1.0) -> np.ndarray:
    """Vectorised :func:`reflection`; entries with complex ``k2x`` are 1."""
    k1x = np.asarray(k1x, dtype=float)
    k2x = np.asarray(k2x)
    ev = np.imag(k2x) != 0
    a, b = k1x * d, np.real(k2x) * d
    num = kappa1**2 + kappa2**2 - 2 * kappa1 * kappa2 * np.cos(a - b)
    den = kappa1**2 + kappa2**2 - 2 * kappa1 * kappa2 * np.cos(a + b)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(ev, 1.0, num / den)
    if np.any(~ev & (np.abs(den) < 1e-300)):
        raise SingularMatchingError("k1x + k2x = 0 mod 2pi with equal hopping")
    return np.clip(R, 0.0, 1.0)


def _clamp(R: float) -> float:
    if R < 0 or R > 1:
        excess = -R if R < 0 else R - 1
        if excess > CLAMP_EXCESS:
            log.warning("reflection %.3e outside [0, 1] by %.3e; clamped", R, excess)
        else:
            log.debug("reflection clamped by %.3e", excess)
        return min(1.0, max(0.0, R))
    return R


def scatter(
    k1,
    params1: RegionParams,
    params2: RegionParams,
    branch="+",
    orientation: str = "rotated",
    d: float = 1.0,
) -> ScatteringSolution:
    """Full single-interface solution for an incident Bloch mode ``k1``."""
    k1 = (float(k1[0]), float(k1[1]))
    E1 = float(bloch_energy(np.array(k1), params1, branch, orientation, d))
    mode = solve_k2x(E1, k1[1], params2, branch, orientation, d)
    if mode.propagating:
        theta = propagation_angle((mode.real, k1[1]), params2, branch, orientation, d)
        R = reflection(k1[0], mode.real, params1.kappa, params2.kappa, d)
    else:
        theta, R = None, 1.0
    return ScatteringSolution(k1, mode.k2x, mode.propagating, theta, R, E1)


# ---------------------------------------------------------------------------
# pulse-averaged reflection
# ---------------------------------------------------------------------------


@dataclass
class MomentumDistribution:
    """Normalised weights ``G(k)`` on a set of sample momenta."""

    k: np.ndarray  # (M, 2)
    weights: np.ndarray  # (M,)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != self.k.shape[0]:
            raise ValueError("weights and k samples differ in length")
        if np.any(w < 0):
            raise ValueError("momentum weights must be non-negative")
        total = w.sum()
        if not total > 0:
            raise ValueError("momentum distribution has zero weight")
        self.weights = w / total

    @classmethod
    def point(cls, k) -> "MomentumDistribution":
        return cls(np.asarray(k, dtype=float).reshape(1, 2), np.ones(1))

    @classmethod
    def from_amplitudes(cls, amp: np.ndarray, d: float = 1.0, cutoff: float = 1e-14) -> "MomentumDistribution":
        """``|FFT|^2`` of a 2-D amplitude grid ``(nx, ny)`` (summed if a stack).

        ``amp`` may have a leading axis of internal components (photon,
        atom), whose power spectra are added.  Samples with relative weight
        below ``cutoff`` are dropped.
        """
        a = np.asarray(amp)
        if a.ndim == 2:
            a = a[None]
        power = np.sum(np.abs(np.fft.fft2(a, axes=(-2, -1))) ** 2, axis=0)
        nx, ny = power.shape
        kx = 2 * math.pi * np.fft.fftfreq(nx) / d
        ky = 2 * math.pi * np.fft.fftfreq(ny) / d
        KX, KY = np.meshgrid(kx, ky, indexing="ij")
        keep = power > cutoff * power.max()
        return cls(np.column_stack([KX[keep], KY[keep]]), power[keep])


def effective_reflection(
    G: MomentumDistribution,
    params1: RegionParams,
    params2: RegionParams,
    branch="+",
    orientation: str = "rotated",
    d: float = 1.0,
) -> float:
    """``sum_k G(k) R(k)`` for a pulse hitting the interface from region 1.

    Components that do not move towards the interface (``v_x <= 0``) stay
    on the incident side and count as reflected (``R = 1``), as do
    evanescent ones.
    """
    R = reflection_per_component(G.k, params1, params2, branch, orientation, d)
    return float(np.dot(G.weights, R))


def reflection_per_component(k, params1, params2, branch="+", orientation="rotated", d: float = 1.0) -> np.ndarray:
    k = np.asarray(k, dtype=float).reshape(-1, 2)
    E = bloch_energy(k, params1, branch, orientation, d)
    vx = group_velocity(k, params1, branch, orientation, d)[:, 0]
    out = np.ones(len(k))
    for i in np.flatnonzero(vx > 0):
        try:
            mode = solve_k2x(float(E[i]), float(k[i, 1]), params2, branch, orientation, d)
        except MatchingError:
            continue
        if mode.propagating:
            out[i] = reflection(float(k[i, 0]), mode.real, params1.kappa, params2.kappa, d)
    return out


# ---------------------------------------------------------------------------
# lens transmission and resolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LensTransmission:
    value: complex
    denominator: complex
    divergent: bool


def lens_transmission(T12, T23, R23, k2x, W, *, reading: str = "literal") -> LensTransmission:
    """Round-trip transmission through a slab of width ``W``.

    ``reading="literal"`` evaluates ``T12 T23 R23 / (exp(-2i k2x W) - R23^2)``.
    ``reading="fabry_perot"`` replaces the ``R23`` numerator factor by the
    single-pass phase ``exp(-i k2x W)``, which stays finite for matched
    inner interfaces.  A denominator below ``1e-9`` in modulus is flagged
    as a resonance instead of raising.
    """
    k2x = complex(k2x)
    den = cmath.exp(-2j * k2x * W) - complex(R23) ** 2
    if reading == "literal":
        num = complex(T12) * complex(T23) * complex(R23)
    elif reading == "fabry_perot":
        num = complex(T12) * complex(T23) * cmath.exp(-1j * k2x * W)
    else:
        raise ValueError(f"unknown reading {reading!r}")
    if abs(den) < DIVERGENCE_EPS:
        return LensTransmission(complex(math.inf, 0.0) if num != 0 else complex(math.nan), den, True)
    return LensTransmission(num / den, den, False)


@dataclass(frozen=True)
class Resolution:
    delta: float
    subwavelength: bool


def resolution(d: float, wavelength: float) -> Resolution:
    """Smallest resolvable feature ``d / (1 - d / wavelength)``."""
    if not 0 < d < wavelength:
        raise ValueError("resolution needs 0 < d < wavelength")
    delta = d / (1 - d / wavelength)
    return Resolution(delta, delta < wavelength)


def relative_resolution(omega: float, beta: float, branch="+") -> float:
    """Free-space over lens resolution, ``(omega -/+ beta) / (omega +/- beta)``."""
    if not omega > beta or beta < 0:
        raise ValueError("relative resolution needs omega > beta >= 0")
    s = _branch_sign(branch)
    return (omega - s * beta) / (omega + s * beta)
