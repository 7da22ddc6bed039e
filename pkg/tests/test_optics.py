import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jchlens.bands import bloch_energy
from jchlens.lattice import RegionParams
from jchlens.optics import (
    MatchingError,
    MomentumDistribution,
    SingularMatchingError,
    effective_reflection,
    lens_transmission,
    reflection,
    reflection_per_component,
    refraction_angle,
    relative_resolution,
    resolution,
    scatter,
    solve_k2x,
)
from oracles import band, chain_reflection, refraction_angle_deg

P1 = RegionParams(0.0, 0.0, 100.0, 1.0)
P2 = RegionParams(0.0, 5.27, 100.0, 1.0)  # physical detuning for the -5.27 label
P2_RETUNED = RegionParams(0.0, 6.0, 100.0, 1.0)
K_DIAG = (math.pi / 6, math.pi / 6)

# frozen from tests/oracles.py (numerical 2x2 bands, bracketing root search,
# finite-difference velocities and a 2x2 scattering solve on the reduced chain)
THETA_R_DEG = -24.638369495192233
R_LENS = 0.5943372748694691
THETA_R_RETUNED_DEG = -39.211957080545076
R_RETUNED = 0.7105759448391575
R_TWO_KAPPA_LEFT_BOND = 0.18146029604788308
R_TWO_KAPPA_GEOMETRIC_BOND = 0.07179676972449284


def test_oracle_reproduces_frozen_values():
    assert refraction_angle_deg(K_DIAG, tuple(vars(P1).values()), tuple(vars(P2).values()), "+") == pytest.approx(THETA_R_DEG, abs=1e-9)
    E = band(K_DIAG, (0, 0, 100, 1), "+")
    assert chain_reflection(E, K_DIAG[1], (0, 0, 100, 1), (0, 5.27, 100, 1), 1.0, "+") == pytest.approx(R_LENS, abs=1e-12)


@pytest.mark.parametrize("p2,theta,R", [(P2, THETA_R_DEG, R_LENS), (P2_RETUNED, THETA_R_RETUNED_DEG, R_RETUNED)])
def test_lens_interface_against_oracle(p2, theta, R):
    sol = scatter(K_DIAG, P1, p2, "+")
    assert sol.propagating
    assert math.degrees(sol.theta_r) == pytest.approx(theta, abs=1e-6)
    assert sol.R == pytest.approx(R, abs=1e-9)
    assert sol.R + sol.T == pytest.approx(1.0)


def test_two_kappa_reflection_against_chain_oracle():
    beta = 100.0
    omega2 = beta + 2 - 0.5 * math.sqrt(16 + 4 * beta**2)
    q2 = RegionParams(omega2, 0.0, beta, 2.0)
    E = float(bloch_energy(np.array([math.pi / 2, 0.0]), P1))
    mode = solve_k2x(E, 0.0, q2)
    assert mode.real == pytest.approx(math.pi / 3, abs=1e-12)
    assert reflection(math.pi / 2, mode.k2x, 1.0, 2.0) == pytest.approx(R_TWO_KAPPA_LEFT_BOND, abs=1e-12)
    # the equal-kappa form is what a geometric-mean interface bond produces
    assert reflection(math.pi / 2, mode.k2x, 1.0, 1.0) == pytest.approx(R_TWO_KAPPA_GEOMETRIC_BOND, abs=1e-12)


def test_identical_regions_do_not_reflect():
    sol = scatter((0.4, 0.3), P1, P1)
    assert sol.R == pytest.approx(0.0, abs=1e-12)
    assert sol.k2x.real == pytest.approx(0.4)


def test_normal_incidence_goes_straight():
    sol = scatter((0.5, 0.0), P1, P2)
    assert sol.theta_r == pytest.approx(0.0, abs=1e-12)


def test_literal_quarter_pi_incidence_is_evanescent():
    for p2 in (P2, RegionParams(0.0, -5.27, 100.0, 1.0)):
        for branch in ("+", "-"):
            sol = scatter((math.pi / 4, math.pi / 4), P1, p2, branch)
            assert not sol.propagating and sol.R == 1.0 and sol.kappa_ev > 0


def test_zone_edge_ky_raises():
    with pytest.raises(MatchingError):
        solve_k2x(99.0, math.pi / 2, P2)


def test_refraction_angle_literal_form():
    assert refraction_angle(0.3, 1.1) == pytest.approx(math.atan(math.tan(0.3) / math.tan(1.1)))
    with pytest.raises(MatchingError):
        refraction_angle(0.3, 1j)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0.05, 3.0), b=st.floats(0.05, 3.0), k1=st.floats(0.2, 3.0), k2=st.floats(0.2, 3.0))
def test_reflection_in_unit_interval(a, b, k1, k2):
    if abs(math.cos(a + b) - 1) < 1e-6:
        return
    assert 0.0 <= reflection(a, b, k1, k2) <= 1.0


def test_reflection_singular_and_evanescent():
    assert reflection(0.3, 0.5 + 0.2j) == 1.0
    with pytest.raises(SingularMatchingError):
        reflection(math.pi, math.pi)


def test_effective_reflection_of_point_distribution():
    G = MomentumDistribution.point(K_DIAG)
    assert effective_reflection(G, P1, P2) == pytest.approx(R_LENS, abs=1e-12)


def test_backward_components_count_as_reflected():
    R = reflection_per_component(np.array([[-0.5, 0.5], [0.5, 0.5]]), P1, P2)
    assert R[0] == 1.0 and R[1] < 1.0


def test_distribution_from_amplitudes_is_normalised_and_peaked():
    n = 64
    x = np.arange(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    k0 = 2 * math.pi * 5 / n
    amp = np.exp(1j * k0 * (X + Y)) * np.exp(-((X - 32) ** 2 + (Y - 32) ** 2) / 50)
    G = MomentumDistribution.from_amplitudes(np.stack([amp, amp]))
    assert G.weights.sum() == pytest.approx(1.0)
    assert np.allclose(G.k[np.argmax(G.weights)], [k0, k0])


def test_lens_transmission_readings():
    lt = lens_transmission(0.5, 0.5, 0.5, 0.3, 10)
    assert lt.value == pytest.approx(0.125 / (np.exp(-6j) - 0.25))
    fp = lens_transmission(0.5, 0.5, 0.0, 0.3, 10, reading="fabry_perot")
    assert abs(fp.value) == pytest.approx(0.25)
    res = lens_transmission(1.0, 1.0, 1.0, 0.0, 1)
    assert res.divergent
    with pytest.raises(ValueError):
        lens_transmission(1, 1, 1, 0.1, 1, reading="other")


def test_resolution_at_half_wavelength_is_the_wavelength():
    r = resolution(0.5, 1.0)
    assert r.delta == 1.0 and not r.subwavelength
    lam = 3.7
    assert resolution(lam / 2, lam).delta == lam
    assert resolution(0.25, 1.0).delta == 0.25 / 0.75 and resolution(0.25, 1.0).subwavelength


def test_relative_resolution_arithmetic():
    assert relative_resolution(300.0, 100.0, "+") == (300.0 - 100.0) / (300.0 + 100.0)
    assert relative_resolution(300.0, 100.0, "-") == (300.0 + 100.0) / (300.0 - 100.0)
    with pytest.raises(ValueError):
        relative_resolution(1.0, 2.0)
