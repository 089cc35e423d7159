"""Command-line entry point ``freeadd``.

Exit codes: 0 success, 1 numeric failure, 2 usage or assumption error,
3 invariant failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import (
    AssumptionError,
    LAWS,
    delocalization_stats,
    density_near_zero,
    empirical_bound_check,
    hat_a_growth,
    ks_two_sample,
    model_local_law,
    regularity_check,
    universality_experiment,
)
from .dynamics import (
    CollisionError,
    FlowConfig,
    ParticleState,
    StepRejected,
    build_index_set,
    coupled_comparison,
    gamma_table,
    matrix_flow_run,
    particle_run,
    reference_dbm_run,
    remainder_estimate,
)
from .ensembles import (
    DiagonalData,
    ModelSample,
    assemble_model,
    green_diag,
    hermitize,
    resolvent,
    sample_ginibre_reference,
)
from .files import parse_measure, read_config, write_csv, write_json
from .freeconv import (
    SolverConfig,
    SubordinationError,
    VanishingDensityError,
    density_at_zero,
    free_convolution_density,
)
from .measures import AtomicMeasure, Semicircle, quantile_atoms, symmetrize
from .runner import sample_rng

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2, 3
STOCHASTIC = {"sample-lsv", "flow", "verify", "reference"}


class UsageError(Exception):
    pass


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="RNG seed (required for stochastic commands)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (0 = all CPUs)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", default=None, help="key=value file; command-line flags win")
    p.add_argument("--plots", type=_bool, default=True, help="write PNG figures (true/false)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freeadd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    p = parser.commands["sample-lsv"] = sub.add_parser("sample-lsv", help="least singular value Monte Carlo for the model")
    _common(p)
    p.add_argument("--field", choices=["complex", "real"], default="complex")
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--mu1", default="uniform:0,1", help="law of X entries")
    p.add_argument("--mu2", default="uniform:0,1", help="law of Y entries")

    p = parser.commands["reference"] = sub.add_parser("reference", help="least singular value of the Gaussian reference")
    _common(p)
    p.add_argument("--field", choices=["complex", "real"], default="complex")
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--samples", type=int, default=20000)

    p = parser.commands["freeconv"] = sub.add_parser("freeconv", help="density of a free additive convolution")
    _common(p)
    p.add_argument("--mu1", default="bernoulli:1")
    p.add_argument("--mu2", default="bernoulli:1")
    p.add_argument("--grid", default="-3,3,601", help="lo,hi,count")
    p.add_argument("--eta", type=float, default=1e-3)
    p.add_argument("--symmetrize", type=_bool, default=False)
    p.add_argument("--quantiles", type=int, default=0,
                   help="replace continuous inputs by this many quantile atoms (0 = keep)")
    p.add_argument("--tol", type=float, default=1e-12)

    p = parser.commands["flow"] = sub.add_parser("flow", help="matrix flow and particle dynamics")
    _common(p)
    p.add_argument("--field", choices=["complex", "real"], default="complex")
    p.add_argument("--N", type=int, default=50)
    p.add_argument("--mu1", default="uniform:0,1")
    p.add_argument("--mu2", default="uniform:0,1")
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--b", type=float, default=0.004)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--steps", type=int, default=100, help="time steps on [0, tau]")
    p.add_argument("--trajectories", type=int, default=1)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--project", type=_bool, default=True)
    p.add_argument("--compensate", type=_bool, default=True)
    p.add_argument("--compare", choices=["none", "fresh"], default="none")

    p = parser.commands["verify"] = sub.add_parser("verify", help="identity, local law, eigenvector and bound checks")
    _common(p)
    p.add_argument("--field", choices=["complex", "real"], default="complex")
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--mu1", default="uniform:0,1")
    p.add_argument("--mu2", default="uniform:0,1")
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--trend-N", type=_int_list, default="100,200,400")
    p.add_argument("--trend-samples", type=int, default=20)
    p.add_argument("--deloc-N", type=int, default=400)
    p.add_argument("--deloc-samples", type=int, default=50)
    p.add_argument("--bound-N", type=int, default=1000)
    p.add_argument("--growth-N", type=_int_list, default="50,100,200,400,1000")
    return parser


def parse_args(argv: Optional[List[str]] = None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        sub = parser.commands[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(values) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        # string defaults pass through each option's type converter
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    for key in ("trend_N", "growth_N"):
        if isinstance(getattr(args, key, None), str):
            setattr(args, key, _int_list(getattr(args, key)))
    return args


# settings that cannot change results; kept out of embedded configs so that
# outputs stay byte-identical across worker counts and output locations
EXECUTION_ONLY = ("config", "workers", "out", "plots")


def _resolved(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in EXECUTION_ONLY}
    d["version"] = __version__
    return d


def _require(cond, message):
    if not cond:
        raise UsageError(message)


def _diag_entries(spec, N):
    mu = parse_measure(spec)
    if isinstance(mu, AtomicMeasure):
        if mu.is_point_mass():
            x = np.full(N, mu.point_location())
        elif len(mu) == N:
            x = np.sort(mu.locations)
        else:
            raise AssumptionError(f"{spec}: atomic input needs exactly N={N} atoms")
    else:
        x = quantile_atoms(mu, N).locations
    if np.any(x < 0):
        raise AssumptionError(f"{spec}: diagonal entries must be nonnegative")
    return x


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _write_lsv_outputs(args, report, out):
    n = report.statistics.size
    raw = report.statistics / report.scaling
    write_csv(os.path.join(out, "lsv.csv"), ["sample_index", "sigma_min", "N_lambda1", "scaled"],
              ((i, raw[i] / report.N, raw[i], report.statistics[i]) for i in range(n)))
    write_csv(os.path.join(out, "cdf.csv"), ["r", "empirical", "target"], report.cdf_table())
    payload = report.to_dict(_resolved(args))
    payload["density_near_zero"] = density_near_zero(report.statistics)
    write_json(os.path.join(out, "report.json"), payload)
    if args.plots:
        from .plotting import plot_lsv

        law_name, law = LAWS[report.field]
        plot_lsv(report.statistics, law, law_name, os.path.join(out, "lsv.png"),
                 title=f"{report.field}, N={report.N}, n={n}")
    print(f"ks_distance={report.ks_distance:.6f} scaling={report.scaling:.6f}")


def cmd_sample_lsv(args):
    _require(args.N >= 1, "--N must be at least 1")
    _require(args.samples >= 1, "--samples must be at least 1")
    x = _diag_entries(args.mu1, args.N)
    y = _diag_entries(args.mu2, args.N)
    try:
        report = universality_experiment(x, y, args.N, args.samples, args.field, args.seed,
                                         workers=args.workers)
    except VanishingDensityError as exc:
        raise AssumptionError(str(exc)) from exc
    _write_lsv_outputs(args, report, args.out)
    return EXIT_OK


def cmd_reference(args):
    _require(args.N >= 1, "--N must be at least 1")
    _require(args.samples >= 1, "--samples must be at least 1")
    report = universality_experiment(None, None, args.N, args.samples, args.field, args.seed,
                                     workers=args.workers, reference=True)
    _write_lsv_outputs(args, report, args.out)
    return EXIT_OK


def cmd_freeconv(args):
    try:
        lo, hi, n = args.grid.split(",")
        grid = np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise UsageError(f"--grid must be lo,hi,count: {exc}") from exc
    _require(args.eta > 0, "--eta must be positive")
    mus = [parse_measure(args.mu1), parse_measure(args.mu2)]
    if args.quantiles:
        mus = [quantile_atoms(m, args.quantiles) if not isinstance(m, AtomicMeasure) else m
               for m in mus]
    if args.symmetrize:
        mus = [symmetrize(m) for m in mus]
    cfg = SolverConfig(tol=args.tol)
    dens = free_convolution_density(mus[0], mus[1], grid, args.eta, cfg)
    write_csv(os.path.join(args.out, "density.csv"), ["E", "rho"],
              zip(dens.grid, dens.values))
    rho0 = None
    note = "ok"
    try:
        rho0 = density_at_zero(mus[0], mus[1], cfg)
    except VanishingDensityError as exc:
        note = f"vanishing density: {exc}"
    except ValueError as exc:
        note = str(exc)
    write_json(os.path.join(args.out, "rho0.json"),
               {"rho0": rho0, "note": note, "unconverged_points": int(dens.flags.sum()),
                "mass": dens.mass(), "config": _resolved(args), "version": __version__})
    if args.plots:
        from .plotting import plot_density

        plot_density(dens.grid, dens.values, os.path.join(args.out, "density.png"), dens.flags)
    if dens.flags.any():
        print(f"{int(dens.flags.sum())} grid points did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"rho0={rho0}")
    return EXIT_OK


def cmd_flow(args):
    _require(args.trajectories >= 1, "--trajectories must be at least 1")
    _require(args.steps >= 1, "--steps must be at least 1")
    try:
        cfg = FlowConfig(args.N, args.field, args.a, args.b, args.c, n_steps=args.steps,
                         project=args.project, compensate=args.compensate)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    x = DiagonalData(_diag_entries(args.mu1, args.N))
    y = DiagonalData(_diag_entries(args.mu2, args.N))
    out = args.out
    finals_min, finals_med = [], []
    diag = {"max_deviation_before_projection": 0.0, "max_deviation": 0.0, "endpoint_error": 0.0}
    first = None
    for i in range(args.trajectories):
        rng = sample_rng(args.seed, i)
        sample = assemble_model(x, y, args.field, rng)
        res = matrix_flow_run(sample, cfg, rng, stride=args.stride if i == 0 else 0)
        s = np.sort(np.linalg.svd(res.final.M, compute_uv=False))
        finals_min.append(s[0])
        finals_med.append(s[s.size // 2])
        diag["max_deviation_before_projection"] = max(diag["max_deviation_before_projection"],
                                                      res.max_deviation_before_projection)
        diag["max_deviation"] = max(diag["max_deviation"], res.max_deviation)
        diag["endpoint_error"] = max(diag["endpoint_error"], res.endpoint_error)
        if i == 0:
            first = (sample, res)
    sample, res = first
    rows = []
    for st in res.states:
        sv = np.sort(np.linalg.svd(st.M_hat, compute_uv=False))
        rows.append([st.t, *sv])
    write_csv(os.path.join(out, "matrix_flow.csv"),
              ["t"] + [f"lambda_{k + 1}" for k in range(args.N)], rows)
    diag.update(remainder_estimate(res, cfg))

    # particle dynamics started from the singular values of M_hat(0)
    start = res.states[0]
    s0 = ModelSample(args.N, args.field, x, y, start.M_hat, np.empty(0), U=start.U, V=start.V)
    s0.with_vectors()
    lam0 = s0.singular_values
    prng = sample_rng(args.seed, args.trajectories + 1)
    gamma = gamma_table(s0, build_index_set(y, args.a))
    traj = particle_run(ParticleState(0.0, lam0, args.field, gamma), cfg, prng, stride=args.stride)
    traj.to_csv(os.path.join(out, "particles.csv"))
    ref = reference_dbm_run(lam0, cfg, sample_rng(args.seed, args.trajectories + 2), stride=args.stride)
    ref.to_csv(os.path.join(out, "reference.csv"))
    diag["particle_repairs"] = traj.repairs
    diag["particle_substeps"] = traj.substeps
    diag["reference_repairs"] = ref.repairs
    diag["coupled"] = coupled_comparison(lam0, gamma, cfg, sample_rng(args.seed, args.trajectories + 3))
    diag["tau"] = cfg.tau
    diag["dt"] = cfg.dt

    if args.compare == "fresh":
        fresh_min, fresh_med = [], []
        for i in range(args.trajectories):
            s = assemble_model(x, y, args.field,
                               np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(1, i))))
            fresh_min.append(s.singular_values[0])
            fresh_med.append(s.singular_values[args.N // 2])
        diag["ks_least_singular_value"] = ks_two_sample(finals_min, fresh_min)
        diag["ks_median_singular_value"] = ks_two_sample(finals_med, fresh_med)
    else:
        diag["ks_least_singular_value"] = None
        diag["ks_median_singular_value"] = None
    diag["config"] = _resolved(args)
    diag["version"] = __version__
    write_json(os.path.join(out, "flow_diag.json"), diag)
    if args.plots:
        from .plotting import plot_trajectory

        t = np.array([r[0] for r in rows])
        plot_trajectory(t, np.array([r[1:] for r in rows]), os.path.join(out, "matrix_flow.png"))
        plot_trajectory(traj.t, traj.lam, os.path.join(out, "particles.png"))
    print(f"endpoint_error={diag['endpoint_error']:.3g} max_deviation={diag['max_deviation']:.3g}")
    return EXIT_OK


def _identity_checks(args, rng):
    x = _diag_entries(args.mu1, args.N)
    y = _diag_entries(args.mu2, args.N)
    s = assemble_model(x, y, args.field, rng)
    op = hermitize(s.M)
    ev = np.linalg.eigvalsh(op.dense())
    sym_err = float(np.max(np.abs(np.sort(ev) + np.sort(ev)[::-1])))
    sv = np.sort(np.linalg.svd(s.M, compute_uv=False))
    match_err = float(np.max(np.abs(np.sort(ev) - np.sort(np.concatenate([-sv, sv])))))
    z = complex(0.0, args.eta)
    G = resolvent(op, z)
    ward = float(np.max(np.abs((np.abs(G) ** 2).sum(axis=1) - G.diagonal().imag / z.imag)))
    bound = float(np.max(np.abs(G)) * z.imag)
    diag_err = float(np.max(np.abs(G.diagonal() - green_diag(op, z))))
    return {
        "hermitization": {"sign_symmetry_error": sym_err, "svd_match_error": match_err,
                          "passed": sym_err <= 1e-10 and match_err <= 1e-10},
        "ward": {"z": z, "max_error": ward, "passed": ward <= 1e-10},
        "resolvent_bound": {"z": z, "max_abs_entry_times_eta": bound,
                            "diagonal_consistency": diag_err,
                            "passed": bound <= 1 + 1e-12 and diag_err <= 1e-10},
    }


def cmd_verify(args):
    out = args.out
    seed = args.seed
    hard = _identity_checks(args, sample_rng(seed, 0))
    for name, payload in hard.items():
        payload["config"] = _resolved(args)
        write_json(os.path.join(out, f"{name}.json"), payload)

    z = complex(0.0, args.eta)
    trend = []
    for k, N in enumerate(args.trend_N):
        x = _diag_entries(args.mu1, N)
        y = _diag_entries(args.mu2, N)
        res = []
        for i in range(args.trend_samples):
            smp = assemble_model(x, y, args.field,
                                 np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, k, i))))
            rep = model_local_law(smp, [z])
            res.append((rep.trace_residual[0], rep.max_residual[0]))
        res = np.array(res)
        trend.append({"N": N, "median_trace_residual": float(np.median(res[:, 0])),
                      "median_max_residual": float(np.median(res[:, 1]))})
    med = [t["median_trace_residual"] for t in trend]
    write_json(os.path.join(out, "local_law.json"),
               {"z": z, "trend": trend,
                "monotone_decreasing": bool(all(a > b for a, b in zip(med, med[1:]))),
                "config": _resolved(args)})

    N = args.deloc_N
    x = _diag_entries(args.mu1, N)
    y = _diag_entries(args.mu2, N)
    smps = [assemble_model(x, y, args.field,
                           np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, i))),
                           vectors=True) for i in range(args.deloc_samples)]
    rep = delocalization_stats(smps, a_exp=args.a)
    thr = 10 * math.log(N) / N
    write_json(os.path.join(out, "delocalization.json"),
               {"N": N, "n_samples": rep.n_samples, "max_weight": rep.max_weight,
                "weight_threshold": thr, "max_gamma": rep.max_gamma,
                "gamma_scale": rep.gamma_scale, "mean_weight": rep.mean_weight,
                "passed": bool(rep.max_weight <= thr and rep.max_gamma <= 10 * rep.gamma_scale),
                "config": _resolved(args)})

    yb = _diag_entries(args.mu2, args.bound_N)
    E = np.linspace(-1.5, 1.5, 61)
    eb = empirical_bound_check(yb, args.a, E)
    eb["config"] = _resolved(args)
    write_json(os.path.join(out, "empirical_bounds.json"), eb)
    growth = hat_a_growth(args.growth_N, lambda n: _diag_entries(args.mu2, n), args.a)
    growth["config"] = _resolved(args)
    write_json(os.path.join(out, "drift_growth.json"), growth)

    g = sample_ginibre_reference(400, args.field, sample_rng(seed, 4))
    reg = regularity_check(g.singular_values, Semicircle(1.0), 0.05, 0.5, 0.05)
    reg["config"] = _resolved(args)
    write_json(os.path.join(out, "regularity.json"), reg)

    failed = [name for name, p in hard.items() if not p["passed"]]
    if failed:
        print("invariant failures: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVARIANT
    print("identities passed; local-law medians " + ", ".join(f"{m:.3g}" for m in med))
    return EXIT_OK


COMMANDS = {
    "sample-lsv": cmd_sample_lsv,
    "reference": cmd_reference,
    "freeconv": cmd_freeconv,
    "flow": cmd_flow,
    "verify": cmd_verify,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command in STOCHASTIC and args.seed is None:
            raise UsageError(f"{args.command} requires --seed")
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](args)
    except (UsageError, AssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SubordinationError, VanishingDensityError, CollisionError, StepRejected,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
