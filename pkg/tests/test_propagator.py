import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jchlens.hamiltonian import assemble
from jchlens.lattice import LatticeSpec, RegionMap, RegionParams, build_lattice
from jchlens.propagator import (
    FitError,
    PacketTruncationWarning,
    WavePacketSpec,
    centroid_track,
    chebyshev_terms,
    dense_expm_oracle,
    evolve,
    fit_rabi,
    gaussian_packet,
    population_by_site,
    rabi_model,
    read_snapshot,
    read_snapshot_series,
    region_population,
    well_eigenstate,
    write_snapshot,
    write_snapshot_series,
)
from oracles import expm_evolve


def small_system(nx=8, ny=6, orientation="rotated", boundary=("open", "periodic")):
    spec = LatticeSpec(nx, ny, orientation, boundary=boundary)
    regions = RegionMap.from_x_slabs(
        spec,
        [
            {"x": [0, nx // 2], "params": RegionParams(0.0, 0.0, 10.0, 1.0), "name": "a"},
            {"x": [nx // 2, nx], "params": RegionParams(0.5, 3.0, 10.0, 1.5), "name": "b"},
        ],
    )
    sites = build_lattice(spec, regions)
    return sites, assemble(sites)


def random_state(dim, seed=1):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


@pytest.mark.parametrize("method", ["chebyshev", "krylov", "dense"])
@pytest.mark.parametrize("sign", [-1, 1])
def test_matches_scipy_expm(method, sign):
    sites, H = small_system()
    psi = random_state(H.dim)
    ref = expm_evolve(H.matrix.toarray(), psi, 7.3, sign)
    out = evolve(H, psi, 7.3, 1e-10, method=method, sign=sign)
    assert np.linalg.norm(out.psi - ref) < 1e-8
    assert out.error_bound < 1e-8


def test_shifted_operator_gives_same_state():
    spec = LatticeSpec(6, 6, boundary="periodic")
    sites = build_lattice(spec, RegionMap.uniform(spec, RegionParams(50.0, 1.0, 10.0, 1.0)))
    psi = random_state(2 * spec.n_sites)
    a = evolve(assemble(sites), psi, 3.0, 1e-11).psi
    b = evolve(assemble(sites, shift="omega"), psi, 3.0, 1e-11).psi
    assert np.linalg.norm(a - b) < 1e-9


def test_long_run_is_chunked_and_unitary():
    sites, H = small_system()
    psi = random_state(H.dim)
    out = evolve(H, psi, 800.0, 1e-10, max_chunk_phase=500)
    assert abs(np.linalg.norm(out.psi) - 1) < 1e-10
    ref = dense_expm_oracle(H, psi, 800.0)
    assert np.linalg.norm(out.psi - ref) < 1e-8


def test_snapshots_and_observer():
    sites, H = small_system()
    psi = random_state(H.dim)
    seen = []
    out = evolve(H, psi, 2.0, 1e-10, times=[0.0, 1.0, 2.0], observer=lambda t, s: seen.append(t))
    assert seen == [0.0, 1.0, 2.0]
    assert len(out.snapshots) == 3 and out.snapshots[0].shape == (2, sites.n_sites)
    assert np.allclose([s.sum() for s in out.snapshots], 1)


def test_bad_arguments():
    sites, H = small_system()
    psi = random_state(H.dim)
    with pytest.raises(ValueError):
        evolve(H, psi, 1.0, 1e-3)
    with pytest.raises(ValueError):
        evolve(H, psi, -1.0)
    with pytest.raises(ValueError):
        evolve(H, psi, 1.0, times=[2.0])


def test_numpy_fallback_agrees():
    sites, H = small_system(20, 20)
    psi = random_state(H.dim)
    a = evolve(H, psi, 5.0, 1e-10).psi
    b = evolve(H, psi, 5.0, 1e-10, force_numpy=True).psi
    assert np.linalg.norm(a - b) < 1e-12


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.1, 500.0), tol=st.sampled_from([1e-6, 1e-10, 1e-13]))
def test_chebyshev_tail_bound_is_certified(x, tol):
    from scipy.special import jv

    m, bound = chebyshev_terms(x, tol)
    assert bound <= tol
    tail = 2 * sum(abs(jv(k, x)) for k in range(m + 1, m + 60))
    assert tail <= bound * 1.0001 + 1e-300


def test_packet_normalisation_mixing_and_momentum():
    spec = LatticeSpec(64, 64, "rotated", boundary="periodic")
    sites = build_lattice(spec, RegionMap.uniform(spec, RegionParams()))
    k0 = (2 * math.pi * 6 / 64, 2 * math.pi * 6 / 64)
    psi = gaussian_packet(WavePacketSpec([(k0, 1.0)], sigma_k=math.pi / 10, r0=(32, 32)), sites)
    n = sites.n_sites
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    assert np.sum(np.abs(psi[:n]) ** 2) == pytest.approx(0.5)
    spec_k = np.abs(np.fft.fft2(psi[:n].reshape(64, 64))) ** 2
    i, j = np.unravel_index(np.argmax(spec_k), spec_k.shape)
    assert (i, j) == (6, 6)


def test_packet_truncation_warns():
    spec = LatticeSpec(20, 20, boundary="open")
    sites = build_lattice(spec, RegionMap.uniform(spec, RegionParams()))
    with pytest.warns(PacketTruncationWarning):
        gaussian_packet(WavePacketSpec([((0.5, 0.5), 1.0)], sigma_k=math.pi / 20, r0=(2, 10)), sites)


def test_boundary_guard_flags_edge_population():
    spec = LatticeSpec(20, 6, boundary=("open", "periodic"))
    sites = build_lattice(spec, RegionMap.uniform(spec, RegionParams(0, 0, 10, 1)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        psi = gaussian_packet(WavePacketSpec([((math.pi / 2, 0.0), 1.0)], sigma_k=math.pi / 4, r0=(14, 3)), sites)
    out = evolve(H := assemble(sites), psi, 10.0, 1e-9, sites=sites)
    assert out.boundary_flag and out.boundary_population > 1e-4
    assert H.dim == 2 * sites.n_sites


def test_well_eigenstate_and_region_population():
    sites, H = small_system()
    st_ = well_eigenstate(H, sites.mask("a"), 10.0)
    assert st_.residual < 1e-10
    assert region_population(st_.psi, "a", sites) == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(omega=st.floats(0.02, 0.2), eta=st.floats(0.0, 0.3))
def test_fit_rabi_recovers_parameters(omega, eta):
    g = math.sqrt(eta**2 + 4 * omega**2)
    t = np.linspace(0, 8 * 2 * math.pi / g, 1200)
    fit = fit_rabi(t, rabi_model(t, omega, eta))
    assert fit.omega == pytest.approx(omega, rel=1e-6)
    assert fit.eta == pytest.approx(eta, abs=1e-6 * g)
    assert fit.residual < 1e-8


def test_fit_rabi_needs_three_periods():
    t = np.linspace(0, 2 * math.pi / 0.2 * 1.5, 200)
    with pytest.raises(FitError):
        fit_rabi(t, rabi_model(t, 0.1, 0.0))


def test_centroid_track_recovers_direction():
    spec = LatticeSpec(40, 40, boundary="open")
    sites = build_lattice(spec, RegionMap.uniform(spec, RegionParams()))
    pos = sites.positions
    times = np.arange(6.0)
    snaps = []
    for t in times:
        c = np.array([10 + 2 * t, 20 - t])
        snaps.append(np.exp(-np.sum((pos - c) ** 2, axis=1) / 8))
    snaps = [s / s.sum() for s in snaps]
    tr = centroid_track(times, snaps, sites)
    assert tr.angle == pytest.approx(math.atan2(-1, 2), abs=1e-6)


def test_snapshot_round_trip(tmp_path):
    pops = np.random.default_rng(0).random((2, 12))
    write_snapshot(tmp_path / "s.bin", 1.5, pops, 3, 4)
    t, back = read_snapshot(tmp_path / "s.bin")
    assert t == 1.5 and np.array_equal(back.reshape(2, 12), pops)
    write_snapshot_series(tmp_path / "series", [0.0, 1.0], [pops, 2 * pops], 3, 4)
    ts, series = read_snapshot_series(tmp_path / "series")
    assert list(ts) == [0.0, 1.0] and np.array_equal(series[1].reshape(2, 12), 2 * pops)


def test_population_by_site_sums_components():
    psi = np.array([1, 0, 0, 1j]) / math.sqrt(2)
    assert np.allclose(population_by_site(psi, 2), [0.5, 0.5])
