import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freeadd.freeconv import (
    SolverConfig,
    SubordinationError,
    VanishingDensityError,
    density_at_zero,
    free_convolution_density,
    phi,
    phi_jacobian,
    semicircle_flow,
    solve_perturbed,
    solve_subordination,
)
from freeadd.measures import (
    AtomicMeasure,
    Semicircle,
    Uniform,
    quantile_atoms,
    symmetrize,
)
from oracle_values import (
    CONTINUUM_UNIFORM_RHO_ETA_1EM6,
    GENERIC_M,
    GENERIC_W_ALPHA,
    GENERIC_W_BETA,
    GENERIC_Z,
    STABILITY_C,
    UNIFORM200_RHO0,
    UNIFORM200_RHO_ETA_1EM4,
    UNIFORM200_RHO_ETA_1EM5,
)

GOLDEN = (math.sqrt(5) - 1) / 2


BERN = AtomicMeasure.bernoulli(1.0)
SEMI = Semicircle(1.0)
UNIF200 = symmetrize(quantile_atoms(Uniform(0, 1), 200))
GEN_A = AtomicMeasure([-1.0, 0.5, 2.0], [0.2, 0.5, 0.3])
GEN_B = AtomicMeasure([-0.7, 0.1, 1.3], [0.4, 0.35, 0.25])

PAIRS = {
    "bernoulli": (BERN, BERN),
    "semicircle": (SEMI, SEMI),
    "uniform200": (UNIF200, UNIF200),
    "generic": (GEN_A, GEN_B),
}


def _envelope(eta):
    return max(1.0, eta ** -4)


# --- phi ------------------------------------------------------------------------

def test_phi_vanishes_at_solution():
    s = solve_subordination(BERN, BERN, 1j)
    f1, f2 = phi(s.w_alpha, s.w_beta, s.z, BERN, BERN)
    assert abs(f1) <= 1e-12 and abs(f2) <= 1e-12


def test_phi_bernoulli_at_origin():
    f1, f2 = phi(0j, 0j, 1j, BERN, BERN)
    assert f1 == pytest.approx(-1j, abs=1e-14)
    assert f2 == pytest.approx(-1j, abs=1e-14)


@pytest.mark.parametrize("w1,w2,z", [(0.3j, 0.1 + 0.2j, 1j), (1 + 1j, -0.5 + 2j, -0.3 + 0.2j)])
def test_phi_second_component_for_point_mass(w1, w2, z):
    assert phi(w1, w2, z, AtomicMeasure.point(0.0), SEMI)[1] == w2


# --- solver examples ------------------------------------------------------------

def test_semicircle_pair_at_i():
    s = solve_subordination(SEMI, SEMI, 1j)
    assert s.w_alpha == pytest.approx(0.5j, abs=1e-12)
    assert s.w_beta == pytest.approx(0.5j, abs=1e-12)
    assert s.m == pytest.approx(0.5j, abs=1e-12)


def test_bernoulli_pair_at_i():
    s = solve_subordination(BERN, BERN, 1j)
    assert s.m == pytest.approx(1j / math.sqrt(5), abs=1e-12)
    assert s.w_alpha == pytest.approx(1j * GOLDEN, abs=1e-12)
    assert s.w_beta == pytest.approx(1j * GOLDEN, abs=1e-12)


def test_generic_pair_matches_oracle():
    s = solve_subordination(GEN_A, GEN_B, GENERIC_Z)
    assert s.w_alpha == pytest.approx(GENERIC_W_ALPHA, abs=1e-11)
    assert s.w_beta == pytest.approx(GENERIC_W_BETA, abs=1e-11)
    assert s.m == pytest.approx(GENERIC_M, abs=1e-11)


def test_point_mass_at_zero_is_identity():
    z = 0.2 + 0.3j
    s = solve_subordination(AtomicMeasure.point(0.0), SEMI, z)
    assert s.m == pytest.approx(SEMI.stieltjes(z), abs=1e-14)
    assert s.w_beta == 0


def test_point_mass_shift():
    a, z = 0.7, 0.1 + 0.4j
    s = solve_subordination(AtomicMeasure.point(a), SEMI, z)
    assert s.m == pytest.approx(SEMI.stieltjes(z - a), abs=1e-14)


def test_rejects_spectral_parameter_below_floor():
    with pytest.raises(ValueError):
        solve_subordination(SEMI, SEMI, 0.5 + 1e-12j)


def test_reports_nonconvergence():
    cfg = SolverConfig(max_fixed_point_iters=1, max_newton_iters=1)
    with pytest.raises(SubordinationError) as info:
        solve_subordination(GEN_A, GEN_B, 0.3 + 1e-6j, cfg)
    assert info.value.residual > 0


def test_trace_records_phases():
    trace = []
    solve_subordination(GEN_A, GEN_B, 0.1 + 0.01j, trace=trace)
    phases = {r["phase"] for r in trace}
    assert {"fixed_point", "newton"} <= phases


def test_warm_start_reproduces_cold_solve():
    cold = solve_subordination(UNIF200, UNIF200, 0.2 + 1e-3j)
    warm = solve_subordination(UNIF200, UNIF200, 0.2 + 1e-3j, w0=(cold.w_alpha + 1e-4, cold.w_beta))
    assert warm.w_alpha == pytest.approx(cold.w_alpha, abs=1e-10)


@pytest.mark.parametrize("name", list(PAIRS))
@pytest.mark.parametrize("eta", [1.0, 1e-1, 1e-2, 1e-3])
def test_residual_below_threshold_for_eta_at_least_1e_3(name, eta):
    a, b = PAIRS[name]
    for E in (-1.3, -0.2, 0.0, 0.5, 1.7):
        s = solve_subordination(a, b, complex(E, eta))
        assert s.residual <= 1e-10
        assert s.w_alpha.imag >= 0 and s.w_beta.imag >= 0
        f1, f2 = phi(s.w_alpha, s.w_beta, s.z, a, b)
        assert max(abs(f1), abs(f2)) <= 1e-10
        assert s.m == pytest.approx(-1 / (s.z + s.w_alpha + s.w_beta), abs=1e-12)


# --- symmetry properties --------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(1e-3, 2.0))
def test_equal_inputs_give_equal_subordination(E, eta):
    s = solve_subordination(UNIF200, UNIF200, complex(E, eta))
    assert abs(s.w_alpha - s.w_beta) <= 10 * SolverConfig().tol + 1e-11


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 2.5), st.floats(1e-3, 2.0))
def test_reflection_symmetry(E, eta):
    a, b = UNIF200, symmetrize(AtomicMeasure([0.2, 0.9, 1.4], [0.3, 0.3, 0.4]))
    right = solve_subordination(a, b, complex(E, eta))
    left = solve_subordination(a, b, complex(-E, eta))
    assert left.w_alpha == pytest.approx(-np.conj(right.w_alpha), abs=1e-9)
    assert left.w_beta == pytest.approx(-np.conj(right.w_beta), abs=1e-9)


def test_density_output_is_even():
    grid = np.linspace(-2, 2, 81)
    d = free_convolution_density(UNIF200, UNIF200, grid, 1e-2)
    np.testing.assert_allclose(d.values, d.values[::-1], atol=1e-10)


# --- stability ------------------------------------------------------------------

def test_jacobian_examples():
    s = solve_subordination(SEMI, SEMI, 1j)
    J = phi_jacobian(s, SEMI, SEMI)
    assert J.p == pytest.approx(J.q, abs=1e-12)
    assert J.p_tilde * J.q_tilde == pytest.approx(1 / 9, abs=1e-12)

    s0 = solve_subordination(AtomicMeasure.point(0.0), SEMI, 1j)
    J0 = phi_jacobian(s0, AtomicMeasure.point(0.0), SEMI)
    assert J0.q == 0
    assert J0.inverse_norm <= np.linalg.norm(np.array([[1, J0.p], [0, 1]]), 2) + 1e-12


def _sweep():
    for name, (a, b) in PAIRS.items():
        for eta in (1.0, 0.3, 1e-1, 1e-2, 1e-3, 1e-4):
            for E in (-1.5, -0.3, 0.0, 0.4, 1.1):
                yield name, a, b, solve_subordination(a, b, complex(E, eta))


def test_stability_constant_holds_across_states():
    ratios = []
    for _, a, b, s in _sweep():
        J = phi_jacobian(s, a, b)
        assert J.p_tilde >= abs(J.p) - 1e-12
        assert J.q_tilde >= abs(J.q) - 1e-12
        assert J.p_tilde * J.q_tilde < 1
        ratios.append(J.inverse_norm / _envelope(s.z.imag))
    assert max(ratios) <= STABILITY_C


def test_perturbation_response_is_bounded():
    rng = np.random.default_rng(11)
    for _, a, b, s in _sweep():
        r = rng.normal(size=2) + 1j * rng.normal(size=2)
        r *= 1e-6 / np.linalg.norm(r)
        p = solve_perturbed(s, r, a, b)
        f1, f2 = phi(p.w_alpha, p.w_beta, s.z, a, b)
        assert np.linalg.norm([f1 - r[0], f2 - r[1]]) <= 1e-12
        dw = np.linalg.norm([p.w_alpha - s.w_alpha, p.w_beta - s.w_beta])
        assert dw / 1e-6 <= STABILITY_C * _envelope(s.z.imag)


def test_perturbed_solve_near_singular_jacobian():
    # at E = 0, eta = 1e-5 the Bernoulli pair has ||DPhi^-1|| ~ 1/eta and w moves by O(0.1)
    s = solve_subordination(BERN, BERN, 1e-5j)
    r = np.array([0.6e-6 + 0.3e-6j, -0.5e-6 + 0.5e-6j])
    p = solve_perturbed(s, r, BERN, BERN)
    f1, f2 = phi(p.w_alpha, p.w_beta, s.z, BERN, BERN)
    assert np.linalg.norm([f1 - r[0], f2 - r[1]]) <= 1e-10
    assert (s.z + p.w_alpha).imag > 0 and (s.z + p.w_beta).imag > 0
    dw = np.linalg.norm([p.w_alpha - s.w_alpha, p.w_beta - s.w_beta])
    assert 1e-3 < dw <= STABILITY_C * 1e20 * np.linalg.norm(r)


# --- densities ------------------------------------------------------------------

def test_bernoulli_pair_gives_arcsine():
    grid = np.linspace(-1.9, 1.9, 381)
    d = free_convolution_density(BERN, BERN, grid, 1e-5)
    exact = 1 / (np.pi * np.sqrt(4 - grid ** 2))
    assert not d.flags.any()
    assert np.max(np.abs(d.values - exact)) <= 1e-3


def test_semicircle_pair_gives_wider_semicircle():
    grid = np.linspace(-2.7, 2.7, 271)
    d = free_convolution_density(SEMI, SEMI, grid, 1e-5)
    exact = np.sqrt(8 - grid ** 2) / (4 * np.pi)
    assert np.max(np.abs(d.values - exact)) <= 1e-4


def test_point_mass_with_semicircle_is_semicircle():
    grid = np.linspace(-1.9, 1.9, 39)
    d = free_convolution_density(AtomicMeasure.point(0.0), SEMI, grid, 1e-6)
    np.testing.assert_allclose(d.values, np.sqrt(4 - grid ** 2) / (2 * np.pi), atol=1e-6)


def test_uniform_quantile_density_at_small_eta():
    grid = np.array([-0.01, 0.0])
    d = free_convolution_density(UNIF200, UNIF200, grid, 1e-4)
    assert d.values[1] == pytest.approx(UNIFORM200_RHO_ETA_1EM4, abs=1e-10)
    d = free_convolution_density(UNIF200, UNIF200, grid, 1e-5)
    assert d.values[1] == pytest.approx(UNIFORM200_RHO_ETA_1EM5, abs=1e-10)


def test_density_below_eta_floor_is_rejected():
    with pytest.raises(ValueError):
        free_convolution_density(SEMI, SEMI, [0.0, 0.1], 1e-12)


# --- density at zero ------------------------------------------------------------

def test_rho0_bernoulli():
    assert density_at_zero(BERN, BERN) == pytest.approx(1 / (2 * math.pi), abs=1e-6)


def test_rho0_semicircle():
    assert density_at_zero(SEMI, SEMI) == pytest.approx(math.sqrt(2) / (2 * math.pi), abs=1e-6)


def test_rho0_symmetrized_quarter_circle():
    # the symmetrized quarter-circle law is the unit semicircle
    assert density_at_zero(AtomicMeasure.point(0.0), Semicircle(1.0)) == pytest.approx(1 / math.pi, abs=1e-6)


def test_rho0_uniform_quantiles():
    assert density_at_zero(UNIF200, UNIF200) == pytest.approx(UNIFORM200_RHO0, abs=1e-10)


def test_rho0_continuum_uniform():
    u = Uniform(-1, 1)
    assert density_at_zero(u, u) == pytest.approx(CONTINUUM_UNIFORM_RHO_ETA_1EM6, abs=1e-5)


def test_rho0_requires_symmetric_inputs():
    with pytest.raises(ValueError):
        density_at_zero(GEN_A, GEN_B)


def test_rho0_vanishing_is_an_error():
    far = symmetrize(AtomicMeasure.point(5.0))
    with pytest.raises(VanishingDensityError):
        density_at_zero(far, AtomicMeasure.point(0.0))


# --- semicircle flow ------------------------------------------------------------

def test_flow_at_time_zero_is_identity():
    z = 0.4 + 0.2j
    assert semicircle_flow(GEN_A, 0.0, z) == pytest.approx(GEN_A.stieltjes(z), abs=1e-14)


def test_flow_of_semicircle_adds_variance():
    assert semicircle_flow(SEMI, 1.0, 1j) == pytest.approx(0.5j, abs=1e-12)


def test_flow_of_point_mass():
    assert semicircle_flow(lambda zeta: -1 / zeta, 1.0, 1j) == pytest.approx(1j * GOLDEN, abs=1e-9)


def test_flow_rejects_negative_time():
    with pytest.raises(ValueError):
        semicircle_flow(SEMI, -1.0, 1j)
