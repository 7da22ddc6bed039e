import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jchlens.hamiltonian import (
    DenseCapError,
    assemble,
    dense_spectrum,
    dressed_energy,
    gershgorin_bounds,
    load_operator,
    mixing_angle,
    save_operator,
)
from jchlens.lattice import LatticeSpec, RegionMap, RegionParams, build_lattice
from oracles import dense_torus


def torus(n, orientation, params):
    spec = LatticeSpec(n, n, orientation, boundary="periodic")
    return assemble(build_lattice(spec, RegionMap.uniform(spec, params)))


@pytest.mark.parametrize("orientation", ["rotated", "unrotated"])
@pytest.mark.parametrize("n", [3, 4, 5])
def test_matrix_matches_loop_construction(orientation, n):
    p = RegionParams(0.3, -5.27, 100.0, 1.0)
    H = torus(n, orientation, p)
    ref = dense_torus(n, p.omega, p.delta, p.beta, p.kappa, orientation)
    assert np.allclose(H.matrix.toarray(), ref, atol=0)


def test_shift_is_restored_in_spectrum():
    p = RegionParams(2.0, 1.0, 10.0, 1.0)
    spec = LatticeSpec(4, 4, boundary="periodic")
    sites = build_lattice(spec, RegionMap.uniform(spec, p))
    a = dense_spectrum(assemble(sites), vectors=False)
    b = dense_spectrum(assemble(sites, shift="omega"), vectors=False)
    assert np.allclose(a, b, atol=1e-12)


def test_gershgorin_brackets_spectrum():
    H = torus(4, "rotated", RegionParams(0, 3.0, 100, 1))
    lo, hi = gershgorin_bounds(H)
    w = dense_spectrum(H, vectors=False)
    assert lo <= w.min() and w.max() <= hi


def test_dense_cap():
    H = torus(4, "rotated", RegionParams())
    with pytest.raises(DenseCapError):
        dense_spectrum(H, cap=10)


def test_operator_round_trip(tmp_path):
    H = torus(3, "unrotated", RegionParams(0.1, 0.2, 3.0, 0.7))
    save_operator(tmp_path / "h.bin", H)
    G = load_operator(tmp_path / "h.bin")
    assert (G.matrix != H.matrix).nnz == 0 and G.n_sites == H.n_sites and G.shift == H.shift


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 5), omega=st.floats(-5, 5), eps=st.floats(-5, 5), beta=st.floats(0.1, 10))
def test_dressed_energies_are_jc_eigenvalues(n, omega, eps, beta):
    # |n, g> and |n-1, e> block of a single Jaynes-Cummings cavity
    block = np.array([[n * omega, math.sqrt(n) * beta], [math.sqrt(n) * beta, (n - 1) * omega + eps]])
    w = np.linalg.eigvalsh(block)
    assert dressed_energy(n, omega, eps, beta, "-") == pytest.approx(w[0], abs=1e-9)
    assert dressed_energy(n, omega, eps, beta, "+") == pytest.approx(w[1], abs=1e-9)


def test_mixing_angle_resonance_and_errors():
    assert mixing_angle(1, 1.0, 0.0) == pytest.approx(math.pi / 4)
    assert mixing_angle(2, 1.0, -1.0) == pytest.approx(0.5 * math.atan(2 * math.sqrt(2)))
    with pytest.raises(ValueError):
        dressed_energy(0, 1, 1, 1)
