"""End-to-end acceptance checks.

Each test records a one-line verdict through ``record_criterion``; the lines
are repeated in the terminal summary.  The Monte Carlo criteria are slow
(roughly fifteen minutes in total on one core).
"""

import math
import time

import numpy as np
import pytest

from freeadd.analysis import (
    delocalization_stats,
    density_near_zero,
    empirical_bound_check,
    hat_a_growth,
    ks_two_sample,
    model_local_law,
    universality_experiment,
)
from freeadd.dynamics import (
    FlowConfig,
    ParticleState,
    matrix_flow_run,
    particle_drift,
    sv_sde_step,
    unitarity_deviation,
)
from freeadd.ensembles import (
    assemble_model,
    green_diag,
    hermitize,
    resolvent,
    sample_ginibre_reference,
)
from freeadd.freeconv import (
    free_convolution_density,
    phi,
    phi_jacobian,
    solve_perturbed,
    solve_subordination,
)
from freeadd.measures import AtomicMeasure, Semicircle, Uniform, quantile_atoms, symmetrize
from freeadd.runner import sample_rng

from oracle_values import STABILITY_C

N_LSV = 200
N_SAMPLES = 20_000

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

pytestmark = pytest.mark.slow


def _uniform(N):
    return quantile_atoms(Uniform(0, 1), N).locations


def _envelope(eta):
    return max(1.0, eta ** -4)


@pytest.fixture(scope="module")
def runs():
    """Monte Carlo runs shared between criteria, computed on first use."""
    cache = {}

    def get(key, make):
        if key not in cache:
            cache[key] = make()
        return cache[key]

    return get


def _model_run(field, seed):
    return universality_experiment(Uniform(0, 1), Uniform(0, 1), N_LSV, N_SAMPLES, field, seed)


def _ginibre_run(N, field, seed):
    return universality_experiment(None, None, N, N_SAMPLES, field, seed, reference=True)


# --- least singular value --------------------------------------------------------

def test_criterion_01_complex_universality(runs, record_criterion):
    model = runs("model-complex", lambda: _model_run("complex", 101))
    gin = runs("ginibre-complex-200", lambda: _ginibre_run(200, "complex", 301))
    ok = model.ks_distance <= 0.02
    record_criterion(1, ok, f"KS={model.ks_distance:.4f} (<= 0.02), Ginibre at equal budget "
                            f"KS={gin.ks_distance:.4f}, scaling={model.scaling:.5f}, "
                            f"{model.runtime_seconds:.0f}s")
    assert ok


def test_criterion_02_real_universality(runs, record_criterion):
    real = runs("model-real", lambda: _model_run("real", 102))
    cplx = runs("model-complex", lambda: _model_run("complex", 101))
    gin = runs("ginibre-real-200", lambda: _ginibre_run(200, "real", 302))
    d_real = density_near_zero(real.statistics, h=0.1)
    d_cplx = density_near_zero(cplx.statistics, h=0.1)
    # exact densities at 0: 1 for the real law, 0 for the complex law (2r near 0)
    ok = real.ks_distance <= 0.03 and d_real >= 0.5 and d_cplx <= 0.25 and d_real >= 4 * d_cplx
    record_criterion(2, ok, f"KS={real.ks_distance:.4f} (<= 0.03), Ginibre KS={gin.ks_distance:.4f}; "
                            f"density on [0, 0.1]: real {d_real:.3f}, complex {d_cplx:.3f}")
    assert ok


def test_criterion_03_ginibre_baseline(runs, record_criterion):
    small = runs("ginibre-complex-50", lambda: _ginibre_run(50, "complex", 303))
    large = runs("ginibre-complex-200", lambda: _ginibre_run(200, "complex", 301))
    ok = small.ks_distance <= 0.015 and large.ks_distance <= 0.015
    record_criterion(3, ok, f"KS N=50: {small.ks_distance:.4f}, N=200: {large.ks_distance:.4f} "
                            f"(<= 0.015, n={N_SAMPLES})")
    assert ok


# --- free convolution ------------------------------------------------------------

def _density_states():
    """Solved states from the two density oracles (reused by the stability check)."""
    states = []
    g1 = np.linspace(-1.9, 1.9, 381)
    d1, s1 = free_convolution_density(BERN, BERN, g1, 1e-5, return_states=True)
    states += [(BERN, BERN, s) for s in s1]
    g2 = np.linspace(-3.0, 3.0, 601)
    d2, s2 = free_convolution_density(SEMI, SEMI, g2, 1e-5, return_states=True)
    states += [(SEMI, SEMI, s) for s in s2]
    return (g1, d1), (g2, d2), states


def test_criterion_04_free_convolution_oracles(runs, record_criterion):
    start = time.perf_counter()
    (g1, d1), (g2, d2), _ = runs("density-states", _density_states)
    arcsine_err = float(np.max(np.abs(d1.values - 1 / (np.pi * np.sqrt(4 - g1 ** 2)))))
    semi_err = float(np.max(np.abs(d2.values - np.sqrt(np.clip(8 - g2 ** 2, 0, None)) / (4 * np.pi))))
    worst = 0.0
    for a, b in PAIRS.values():
        for eta in (1.0, 0.3, 1e-1, 1e-2, 1e-3):
            for E in np.linspace(-2.5, 2.5, 21):
                worst = max(worst, solve_subordination(a, b, complex(E, eta)).residual)
    elapsed = time.perf_counter() - start
    ok = (arcsine_err <= 1e-3 and semi_err <= 1e-4 and worst <= 1e-10
          and not d1.flags.any() and not d2.flags.any())
    record_criterion(4, ok, f"arcsine sup err {arcsine_err:.2e}, semicircle sup err {semi_err:.2e}, "
                            f"max residual (eta >= 1e-3) {worst:.1e}, {elapsed:.1f}s")
    assert ok


def _sweep_states():
    out = []
    for a, b in PAIRS.values():
        for eta in (1.0, 0.3, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
            for E in (-1.5, -0.3, 0.0, 0.4, 1.1):
                out.append((a, b, solve_subordination(a, b, complex(E, eta))))
    return out


def test_criterion_05_stability(runs, record_criterion):
    _, _, grid_states = runs("density-states", _density_states)
    sweep = _sweep_states()
    states = sweep + [(a, b, s) for a, b, s in grid_states if s is not None]
    pq_max = ratio_max = 0.0
    for a, b, s in states:
        J = phi_jacobian(s, a, b)
        pq_max = max(pq_max, J.p_tilde * J.q_tilde)
        ratio_max = max(ratio_max, J.inverse_norm / _envelope(s.z.imag))
    rng = np.random.default_rng(5)
    pert_max = resid_max = 0.0
    for a, b, s in sweep:
        r = rng.normal(size=2) + 1j * rng.normal(size=2)
        r *= 1e-6 / np.linalg.norm(r)
        p = solve_perturbed(s, r, a, b)
        f1, f2 = phi(p.w_alpha, p.w_beta, s.z, a, b)
        resid_max = max(resid_max, float(np.linalg.norm([f1 - r[0], f2 - r[1]])))
        dw = np.linalg.norm([p.w_alpha - s.w_alpha, p.w_beta - s.w_beta])
        pert_max = max(pert_max, dw / 1e-6 / _envelope(s.z.imag))
    ok = pq_max < 1 and ratio_max <= STABILITY_C and pert_max <= STABILITY_C and resid_max <= 1e-10
    record_criterion(5, ok, f"{len(states)} states: max p~q~={pq_max:.6f}, "
                            f"max ||DPhi^-1||/(1 v eta^-4)={ratio_max:.3f}, "
                            f"max perturbation ratio={pert_max:.3f} (C={STABILITY_C})")
    assert ok


# --- flows ----------------------------------------------------------------------

def test_criterion_06_flow_invariance(record_criterion):
    N, n = 50, 2000
    x = _uniform(N)
    cfg = FlowConfig(N, n_steps=20)
    fin_min, fin_med, fresh_min, fresh_med = [], [], [], []
    endpoint = deviation = 0.0
    for i in range(n):
        rng = sample_rng(6, i)
        res = matrix_flow_run(assemble_model(x, x, "complex", rng), cfg, rng, track_remainder=False)
        s = np.sort(np.linalg.svd(res.final.M, compute_uv=False))
        fin_min.append(s[0])
        fin_med.append(s[N // 2])
        endpoint = max(endpoint, res.endpoint_error)
        deviation = max(deviation, res.max_deviation)
        fresh = assemble_model(x, x, "complex", sample_rng(7, i)).singular_values
        fresh_min.append(fresh[0])
        fresh_med.append(fresh[N // 2])
    ks_min = ks_two_sample(fin_min, fresh_min)
    ks_med = ks_two_sample(fin_med, fresh_med)

    # without projection the compensation term is what keeps U near the group
    smp = assemble_model(x, x, "complex", sample_rng(8, 0))
    on = matrix_flow_run(smp, FlowConfig(N, project=False), sample_rng(8, 1), track_remainder=False)
    off = matrix_flow_run(smp, FlowConfig(N, project=False, compensate=False), sample_rng(8, 1),
                          track_remainder=False)
    dev_on, dev_off = unitarity_deviation(on.final.U), unitarity_deviation(off.final.U)
    ok = (ks_min <= 0.06 and ks_med <= 0.06 and endpoint <= 1e-12 and deviation <= 1e-8
          and dev_off >= 3 * dev_on)
    record_criterion(6, ok, f"KS least={ks_min:.4f}, median={ks_med:.4f} (<= 0.06); endpoint "
                            f"{endpoint:.1e}; max deviation {deviation:.1e}; unprojected "
                            f"deviation with/without compensation {dev_on:.2e}/{dev_off:.2e}")
    assert ok


def test_criterion_07_sde_normalization(record_criterion):
    N, delta, n = 50, 1e-6, 100_000
    lam = assemble_model(_uniform(N), _uniform(N), "complex", sample_rng(9, 0)).singular_values
    cfg = FlowConfig(N, dt=delta)
    state = ParticleState(0.0, lam, "complex")
    rng = np.random.default_rng(70)
    inc = np.empty((n, N))
    for k in range(n):
        inc[k] = sv_sde_step(state, cfg, rng, dt=delta).lam - lam
    c = inc - inc.mean(axis=0)
    var = (c ** 2).mean(axis=0)
    se = np.sqrt(((c ** 2 - var) ** 2).mean(axis=0) / n)
    z = np.abs(var - delta / (2 * N)) / se
    variance_ok = bool(np.all(z <= 5))

    coef = np.ones((N, N))
    gap = particle_drift(lam, coef, "complex") - particle_drift(lam, coef, "real")
    mirror_ok = bool(np.allclose(gap, 1 / (2 * lam) / (2 * N), rtol=1e-12, atol=0))

    one = FlowConfig(1, field="real", dt=delta)
    rng1 = np.random.default_rng(71)
    b = np.array([sv_sde_step(ParticleState(0.0, [1.0], "real"), one, rng1, dt=delta).lam[0] - 1.0
                  for _ in range(n)])
    se_mean = math.sqrt(delta / 2 / n)
    se_var = math.sqrt(2 / n) * delta / 2
    brownian_ok = abs(b.mean()) <= 5 * se_mean and abs((b ** 2).mean() - delta / 2) <= 5 * se_var
    ok = variance_ok and mirror_ok and brownian_ok
    record_criterion(7, ok, f"max |var - delta/2N|/SE over {N} particles = {z.max():.2f} (<= 5); "
                            f"real drift omits mirror term: {mirror_ok}; N=1 real "
                            f"var/(delta/2)={(b ** 2).mean() / (delta / 2):.4f}")
    assert ok


# --- resolvent identities and local statistics -----------------------------------------

def test_criterion_08_resolvent_identities(record_criterion):
    sym = ward = bound = diag = 0.0
    N = 100
    for k, field in enumerate(("complex", "real")):
        s = assemble_model(_uniform(N), _uniform(N), field, sample_rng(10, k))
        op = hermitize(s.M)
        ev = np.sort(np.linalg.eigvalsh(op.dense()))
        sym = max(sym, float(np.max(np.abs(ev + ev[::-1]))))
        for z in (1j, 0.1j, 0.3 + 0.5j, -0.8 + 0.05j):
            G = resolvent(op, z)
            ward = max(ward, float(np.max(np.abs((np.abs(G) ** 2).sum(axis=1) - G.diagonal().imag / z.imag))))
            bound = max(bound, float(np.max(np.abs(G)) * z.imag))
            diag = max(diag, float(np.max(np.abs(G.diagonal() - green_diag(op, z)))))
    ok = sym <= 1e-10 and ward <= 1e-10 and bound <= 1 + 1e-12 and diag <= 1e-10
    record_criterion(8, ok, f"sign symmetry {sym:.1e}, Ward {ward:.1e}, max eta|G_ij| {bound:.6f}, "
                            f"diagonal formula {diag:.1e}")
    assert ok


def test_criterion_09_local_law_trend(record_criterion):
    medians = []
    for N in (100, 200, 400):
        x = _uniform(N)
        res = [model_local_law(assemble_model(x, x, "complex",
                                              np.random.default_rng(np.random.SeedSequence(9, spawn_key=(N, i)))),
                               [0.1j]).trace_residual[0]
               for i in range(20)]
        medians.append(float(np.median(res)))
    ok = all(a > b for a, b in zip(medians, medians[1:]))
    record_criterion(9, ok, "median trace residual at z=0.1i for N=100, 200, 400: "
                            + ", ".join(f"{m:.5f}" for m in medians))
    assert ok


def test_criterion_10_delocalization(record_criterion):
    N = 400
    x = _uniform(N)
    samples = [assemble_model(x, x, "complex", sample_rng(11, i), vectors=True) for i in range(50)]
    # the bulk window stays clear of the soft upper edge near 1.6
    rep = delocalization_stats(samples, bulk_interval=(0.0, 1.0))
    ref = delocalization_stats([sample_ginibre_reference(N, "complex", sample_rng(12, i), vectors=True)
                                for i in range(50)])
    thr = 10 * math.log(N) / N
    ok = rep.max_weight <= thr and rep.max_gamma <= 10 * rep.gamma_scale
    record_criterion(10, ok, f"global max weight {rep.max_weight:.4f} vs bound {thr:.4f} "
                             f"(bulk [0, 1] max {rep.bulk_max_weight:.4f}, Ginibre max "
                             f"{ref.max_weight:.4f}); max gamma {rep.max_gamma:.4f} vs 10 x scale "
                             f"{10 * rep.gamma_scale:.4f}")
    assert ok


def test_criterion_11_empirical_bounds(record_criterion):
    rep = empirical_bound_check(_uniform(1000), 0.5, np.linspace(-1.5, 1.5, 61))
    growth = hat_a_growth([50, 100, 200, 500, 1000], _uniform)
    ratios = [r["A_hat_ratio"] for r in growth["rows"]]
    spread = max(ratios) / min(ratios)
    ok = rep["passed"] and spread <= 1.5
    record_criterion(11, ok, f"C_hat={rep['C_hat']:.3f}; max sums {max(rep['sum_inverse']):.3f} "
                             f"<= {rep['bound_inverse']:.2f}, {max(rep['sum_inverse_squared']):.2f} "
                             f"<= {rep['bound_inverse_squared']:.1f}; ||A_hat||/(1+log N) "
                             + ", ".join(f"{r:.4f}" for r in ratios))
    assert ok
