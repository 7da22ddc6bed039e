import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jchlens.bands import (
    band_extrema,
    band_range,
    bloch_bands,
    bloch_energy,
    contour_normals,
    free_space_circle,
    group_velocity,
    hopping_kernel,
    isoenergy_contour,
    isoenergy_contours,
    kernel_gradient,
    polariton_weights,
    surface_band,
)
from jchlens.lattice import RegionParams
from oracles import bloch_pair

P_SRC = RegionParams(0.0, 0.0, 100.0, 1.0)
P_LENS = RegionParams(0.0, 5.27, 100.0, 1.0)
ks = st.floats(-math.pi, math.pi)


@settings(max_examples=200, deadline=None)
@given(kx=ks, ky=ks, orientation=st.sampled_from(["rotated", "unrotated"]), delta=st.sampled_from([0.0, 5.27, -3.0]))
def test_bands_match_numerical_2x2(kx, ky, orientation, delta):
    p = RegionParams(0.4, delta, 100.0, 1.3)
    lo, hi = bloch_bands(np.array([kx, ky]), p, orientation)
    ref = bloch_pair((kx, ky), p.omega, p.delta, p.beta, p.kappa, orientation)
    assert lo == pytest.approx(ref[0], rel=1e-12, abs=1e-12)
    assert hi == pytest.approx(ref[1], rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(kx=ks, ky=ks, orientation=st.sampled_from(["rotated", "unrotated"]))
def test_reciprocal_periodicity_and_inversion(kx, ky, orientation):
    k = np.array([kx, ky])
    e = bloch_energy(k, P_LENS, "+", orientation)
    assert bloch_energy(k + [2 * math.pi, 0], P_LENS, "+", orientation) == pytest.approx(e, abs=1e-10)
    assert bloch_energy(k + [0, -2 * math.pi], P_LENS, "+", orientation) == pytest.approx(e, abs=1e-10)
    assert bloch_energy(-k, P_LENS, "+", orientation) == pytest.approx(e, abs=1e-12)


def test_kernels():
    k = np.array([0.3, -1.1])
    assert hopping_kernel(k, "rotated") == pytest.approx(4 * math.cos(0.3) * math.cos(-1.1))
    assert hopping_kernel(k, "unrotated") == pytest.approx(2 * (math.cos(0.3) + math.cos(-1.1)))
    h = 1e-6
    for o in ("rotated", "unrotated"):
        fd = [(hopping_kernel(k + e * h, o) - hopping_kernel(k - e * h, o)) / (2 * h) for e in np.eye(2)]
        assert np.allclose(kernel_gradient(k, o), fd, atol=1e-8)


def test_velocity_vanishes_at_zone_centre():
    assert np.allclose(group_velocity(np.zeros(2), P_SRC, "+"), 0)


@pytest.mark.parametrize("branch", ["+", "-"])
def test_weights_are_normalised(branch):
    K = np.linspace(-4, 4, 9)
    ph, at = polariton_weights(K, P_LENS, branch)
    assert np.allclose(np.abs(ph) ** 2 + np.abs(at) ** 2, 1)


def test_band_range_brackets_samples():
    lo, hi = band_range(P_LENS, "+", "rotated")
    g = np.linspace(-math.pi, math.pi, 101)
    E = bloch_energy(np.stack(np.meshgrid(g, g), -1), P_LENS, "+")
    assert lo <= E.min() + 1e-12 and E.max() <= hi + 1e-12


def test_contour_outside_band_is_empty():
    lo, hi = band_range(P_SRC, "+")
    assert isoenergy_contours(hi + 1.0, P_SRC) == []


def test_contour_near_band_bottom_is_closed_convex_loop():
    # the rotated band has degenerate minima at the zone centre and corner
    ext = [e for e in band_extrema(P_SRC, "+") if e.kind == "min" and np.allclose(e.k, 0, atol=1e-9)]
    assert len(ext) == 1
    c = isoenergy_contour(ext[0].energy + 0.05, P_SRC, "+")
    assert c.closed and c.convex
    assert np.max(np.abs(bloch_energy(c.points, P_SRC, "+") - c.energy)) <= 1e-8


def test_contour_normals_follow_group_velocity():
    E0 = float(bloch_energy(np.array([math.pi / 6, math.pi / 6]), P_SRC, "+"))
    for c in isoenergy_contours(E0, P_SRC, "+"):
        n = contour_normals(c)
        v = group_velocity(c.points, P_SRC, "+")
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        ang = np.arccos(np.clip(np.abs(np.sum(n * v, axis=1)), 0, 1))
        assert ang.max() < 1e-3


def test_free_space_circle_radius():
    c = free_space_circle(2.5)
    assert np.allclose(np.hypot(c[:, 0], c[:, 1]), 2.5)


def test_extrema_are_stationary():
    for e in band_extrema(P_LENS, "+"):
        assert np.linalg.norm(group_velocity(e.k, P_LENS, "+")) < 1e-8


def test_surface_band_decoupled_atoms():
    ky = 0.7
    hop = abs(1 + np.exp(1j * ky * math.sqrt(2)))
    vals = surface_band(ky, 1.0, 0.5, 0.0, -1.0, 2.0)
    assert np.allclose(vals, np.sort([-1.0, 2.0, 0.5 - hop, 0.5 + hop]))


def test_surface_band_at_cancelling_phase_gives_jc_pairs():
    ky = math.pi / math.sqrt(2)
    w, b, es, eb = 0.0, 3.0, -1.0, 0.5
    vals = surface_band(ky, 1.0, w, b, es, eb)
    pairs = []
    for e in (es, eb):
        pairs += list(np.linalg.eigvalsh([[w, b], [b, e]]))
    assert np.allclose(vals, np.sort(pairs), atol=1e-12)


def test_surface_band_equal_eps_folds_the_strip_band():
    q = np.linspace(-math.pi, math.pi, 17)
    vals = surface_band(q / math.sqrt(2), 1.0, 0.0, 100.0, -5.0, -5.0)
    p = RegionParams(0.0, 5.0, 100.0, 1.0)
    # the two-column strip has column kernels K = +/- 2 kappa |cos(q/2)|
    for row, qq in zip(vals, q):
        ref = []
        for K in (2 * abs(math.cos(qq / 2)), -2 * abs(math.cos(qq / 2))):
            ref += list(np.linalg.eigvalsh([[p.omega - K, p.beta], [p.beta, p.eps]]))
        assert np.allclose(row, np.sort(ref), atol=1e-10)
