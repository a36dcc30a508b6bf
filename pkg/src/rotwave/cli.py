"""Batch command-line driver.

Every command reads the same JSON configuration (``--config``), writes into
``--out`` and exits with 0 on success, 1 on a computational failure and 2 on
a usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .continuation import (
    ContinuationRun,
    NewtonInfo,
    PolarField,
    ResidualOptions,
    continue_in_alpha,
    jacobian,
)
from .lattice import DomainError, build_wedge
from .operators import (
    assemble_M,
    gadget_table,
    norm_n,
    norm_X,
    quadratic_form_check,
    spectrum_T,
    staircase_n_of_mu,
)
from .phase import PhaseSolveInfo, SolverError, check_weights, residual_expression, solve_phase
from .rotating import (
    corotating_residual,
    extend_to_full,
    quarter_turn_defect,
    random_state,
    simulate,
    stability_probe,
    tiling_audit,
    verify_rotating_wave,
)
from . import storage

log = logging.getLogger("rotwave")


class ComputationFailed(RuntimeError):
    pass


class Context:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.digest = cfg.digest()
        self.out = cfg.out
        self.wedge = build_wedge(cfg.N)
        self.model = cfg.model()

    @property
    def theta_path(self) -> Path:
        return self.out / "theta_bar.csv"

    @property
    def run_dir(self) -> Path:
        return self.out / "continuation"

    def theta_bar(self):
        if self.theta_path.exists():
            return storage.read_phase_csv(self.theta_path, self.wedge)
        cmd_solve_phase(self)
        return storage.read_phase_csv(self.theta_path, self.wedge)

    def load_run(self) -> ContinuationRun:
        if not (self.run_dir / "run.json").exists():
            raise ComputationFailed(f"no continuation run in {self.run_dir}; run 'continue' first")
        return storage.load_run(self.run_dir, self.wedge, self.model, self.cfg.newton_settings())

    def solution(self, alpha: float) -> PolarField:
        run = self.load_run()
        try:
            return run.solution_at(alpha)
        except KeyError:
            raise ComputationFailed(f"no continued solution at alpha={alpha:g}; largest is {run.max_alpha:g}") from None


def cmd_solve_phase(ctx: Context) -> int:
    cfg = ctx.cfg
    settings = cfg.phase_settings()
    info = PhaseSolveInfo(0, np.inf, 0)
    try:
        theta = solve_phase(ctx.wedge, settings, info=info)
    except SolverError as exc:
        storage.write_json(
            ctx.out / "phase_report.json",
            {"N": cfg.N, "converged": False, "error": str(exc), "diagnostics": exc.diagnostics},
            ctx.digest,
        )
        if exc.best is not None:
            storage.write_phase_csv(ctx.out / "theta_bar_failed.csv", exc.best, ctx.digest)
        raise ComputationFailed(str(exc)) from exc
    weights = check_weights(theta)
    storage.write_phase_csv(ctx.theta_path, theta, ctx.digest)
    storage.write_json(
        ctx.out / "phase_report.json",
        {
            "N": cfg.N,
            "converged": info.residual <= settings.tol,
            "iterations": info.iterations,
            "gradient_steps": info.gradient_steps,
            "residual": info.residual,
            "tol": settings.tol,
            "gauge": {"site": list(settings.gauge), "value": theta[settings.gauge]},
            "weights": weights.to_json(),
            "equation_at_1_1": residual_expression(ctx.wedge, (1, 1)),
        },
        ctx.digest,
    )
    print(f"solve-phase: N={cfg.N} iterations={info.iterations} residual={info.residual:.3e}")
    return 0 if info.residual <= settings.tol else 1


def cmd_continue(ctx: Context, resume: bool = False) -> int:
    cfg = ctx.cfg
    settings = cfg.newton_settings()
    grid = cfg.grid()
    if resume and (ctx.run_dir / "run.json").exists():
        run = continue_in_alpha(grid, ctx.model, ctx.wedge, settings, resume=ctx.load_run())
    else:
        run = continue_in_alpha(grid, ctx.model, ctx.wedge, settings, theta_bar=ctx.theta_bar())
    storage.save_run(run, ctx.run_dir, ctx.digest)
    print(f"continue: {len(run.stats)} solutions, max alpha {run.max_alpha:g}")
    if run.failure is not None:
        print(f"continue: stopped at alpha={run.failure['alpha']:g}: {run.failure['error']}", file=sys.stderr)
        return 1
    return 0


def cmd_diagnose(ctx: Context) -> int:
    cfg = ctx.cfg
    theta = ctx.theta_bar()
    op = assemble_M(theta, ctx.model)
    rng = np.random.default_rng(cfg.seed)

    spectra = spectrum_T(op.T)
    qf = [quadratic_form_check(op, rng.standard_normal(ctx.wedge.size)) for _ in range(cfg.diag["psi_samples"])]
    rel = [q.difference / max(1.0, abs(q.direct)) for q in qf]
    storage.write_json(
        ctx.out / "spectral_report.json",
        {
            "seed": cfg.seed,
            "spectrum": spectra.to_json(),
            "quadratic_form": {
                "samples": len(qf),
                "max_relative_difference": max(rel),
                "max_direct": max(q.direct for q in qf),
                "all_nonpositive": all(q.nonpositive for q in qf),
            },
        },
        ctx.digest,
    )

    n_max = min(int(cfg.diag["n_max"]), cfg.N - 2)
    if n_max < 1:
        raise ConfigError("diagnostics need N >= 3 for a staircase")
    ns, C, G = gadget_table(op, n_max + 1)
    table = staircase_n_of_mu(ns, C, G)
    storage.write_csv(
        ctx.out / "staircase.csv",
        ["n", "C", "Gamma", "mu"],
        ((int(r["n"]), r["C"], r["Gamma"], r["mu"]) for r in table.rows()),
        ctx.digest,
    )
    mus = np.sort(rng.uniform(table.mu[-1], 1.0, cfg.diag["mu_samples"]))
    mus = mus[mus > table.mu[-1]]

    base = PolarField.base(theta, ctx.model.a)
    J = jacobian(0.0, base, ctx.model, ResidualOptions(weighted=True)).toarray()
    Md = op.dense()
    n = ctx.wedge.size
    xs = [rng.standard_normal(op.size) for _ in range(cfg.diag["norm_samples"])]
    norm_ok = all(
        all(norm_n(op, x, k) <= norm_n(op, x, k + 1) + 1e-15 for k in range(1, cfg.N))
        and norm_n(op, x, cfg.N) <= norm_X(x) + 1e-15
        for x in xs
    )
    storage.write_json(
        ctx.out / "blockop_check.json",
        {
            "seed": cfg.seed,
            "operator": op.to_json(),
            "jacobian_vs_blocks": float(np.max(np.abs(J - Md[1:]))),
            "zero_blocks": {
                "dF1_dpsi": float(np.max(np.abs(Md[1 : n + 1, n + 1 :]))),
                "dG2_dalpha": float(np.max(np.abs(Md[n + 1 :, 0]))),
            },
            "staircase": {
                "k0": table.k0,
                "C_nondecreasing": bool(np.all(np.diff(C) >= 0)),
                "Gamma_nondecreasing": bool(np.all(np.diff(G) >= 0)),
                "mu_samples": int(mus.size),
                "bound_holds": bool(np.all(table.bound_holds(mus))),
                "rows": table.rows(),
            },
            "norm_family_monotone": norm_ok,
        },
        ctx.digest,
    )
    print(f"diagnose: kernel dimension {spectra.kernel_dimension}, Gamma(1..{n_max}) = {G[0]:.3g}..{G[n_max - 1]:.3g}")
    return 0


def _sim_alpha(ctx: Context) -> float:
    return float(ctx.cfg.sim["alpha"])


def cmd_extend(ctx: Context) -> int:
    alpha = _sim_alpha(ctx)
    x = ctx.solution(alpha)
    state = extend_to_full(x)
    o = state.offset
    rows = (
        (a + o, b + o, state.z[a, b].real, state.z[a, b].imag)
        for a in range(state.z.shape[0])
        for b in range(state.z.shape[1])
    )
    storage.write_csv(ctx.out / "full_state.csv", ["i", "j", "re", "im"], rows, ctx.digest)
    interior = state.interior_mask(1)
    audit = tiling_audit(ctx.cfg.N)
    storage.write_json(
        ctx.out / "extension_report.json",
        {
            "alpha": alpha,
            "L": state.L,
            "tiling": {k: audit[k] for k in ("square_sites", "covered")} | {"exact": not (audit["missing"] or audit["outside"] or audit["multiple"])},
            "quarter_turn_defect": quarter_turn_defect(state),
            "corotating_residual_bulk_frequency": corotating_residual(state, alpha, ctx.model).max_over(interior),
            "corotating_residual_wave_frequency": corotating_residual(
                state, alpha, ctx.model, x.frequency(ctx.model, alpha)
            ).max_over(interior),
            "bulk_frequency": ctx.model.frequency(alpha),
            "wave_frequency": x.frequency(ctx.model, alpha),
        },
        ctx.digest,
    )
    print(f"extend: alpha={alpha:g} onto the {2 * state.L}x{2 * state.L} square")
    return 0


def _periods(ctx: Context, x: PolarField | None, alpha: float) -> tuple[float, float]:
    bulk = 2 * np.pi / ctx.model.frequency(alpha)
    wave = x.period(ctx.model, alpha) if x is not None else bulk
    return bulk, wave


def cmd_simulate(ctx: Context) -> int:
    sim = ctx.cfg.sim
    alpha = _sim_alpha(ctx)
    if sim["random_state"]:
        x = None
        z0 = random_state(ctx.cfg.N, ctx.cfg.seed, ctx.model.a)
    else:
        x = ctx.solution(alpha)
        z0 = extend_to_full(x)
    bulk, wave = _periods(ctx, x, alpha)
    T = bulk if sim["period"] == "bulk" else wave
    t_end = float(sim["periods"]) * max(bulk, wave)
    trace = simulate(z0, alpha, ctx.model, t_end, float(sim["dt"]), int(sim["stride"]))
    meta = {
        "initial": "random" if x is None else "continuation",
        "seed": ctx.cfg.seed,
        "bulk_period": bulk,
        "wave_period": wave,
        "period_used": T,
        "t_end": t_end,
        "stride": int(sim["stride"]),
    }
    storage.write_trace(ctx.out / "trace.ndjson", trace, meta, ctx.digest)
    print(f"simulate: alpha={alpha:g} t_end={t_end:.6g} stored={trace.times.size}")
    if not trace.completed:
        raise ComputationFailed("simulation produced a non-finite state")
    return 0


def cmd_verify(ctx: Context) -> int:
    path = ctx.out / "trace.ndjson"
    if not path.exists():
        raise ComputationFailed(f"no trace at {path}; run 'simulate' first")
    trace, meta = storage.read_trace(path)
    sim = ctx.cfg.sim
    collar, thr = int(sim["collar"]), float(sim["threshold"])
    checks = {}
    for name in ("bulk", "wave"):
        T = float(meta[f"{name}_period"])
        if trace.t_end >= T * (1 - 1e-12):
            checks[name] = verify_rotating_wave(trace, T, collar, thr).to_json()
    chosen = checks.get(sim["period"])
    if chosen is None:
        raise ComputationFailed("trace does not cover the requested period")
    storage.write_json(
        ctx.out / "defect_report.json",
        {
            "alpha": trace.alpha,
            "initial": meta["initial"],
            "period_choice": sim["period"],
            "period": chosen["period"],
            "collar": collar,
            "max_defect": chosen["max_defect"],
            "is_rotating_wave": chosen["is_rotating_wave"],
            "by_period": checks,
        },
        ctx.digest,
    )
    verdict = "rotating wave" if chosen["is_rotating_wave"] else "not a rotating wave"
    print(f"verify: max defect {chosen['max_defect']:.3e} over T={chosen['period']:.6g} ({verdict})")
    return 0


def cmd_probe(ctx: Context) -> int:
    alpha = _sim_alpha(ctx)
    x = ctx.solution(alpha)
    report = stability_probe(x, alpha, ctx.model, seed=ctx.cfg.seed)
    storage.write_json(ctx.out / "probe_report.json", report, ctx.digest)
    print(f"probe: perturbation grew by a factor {report['growth_ratio']:.3g} over one period")
    return 0


def cmd_all(ctx: Context) -> int:
    for step in (cmd_solve_phase, cmd_continue, cmd_diagnose, cmd_extend, cmd_simulate, cmd_verify):
        code = step(ctx)
        if code:
            return code
    return 0


COMMANDS = {
    "solve-phase": cmd_solve_phase,
    "continue": cmd_continue,
    "diagnose": cmd_diagnose,
    "extend": cmd_extend,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "probe": cmd_probe,
    "all": cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--seed", type=int, help="seed for randomized checks")
    common.add_argument("--N", type=int, dest="N", help="wedge size")
    common.add_argument("--alpha", type=float, help="coupling used by extend/simulate/verify/probe")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field, e.g. model.eps_prime=0 (VALUE parsed as JSON)",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rotwave", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rotwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "continue":
            p.add_argument("--resume", action="store_true", help="extend the saved run in --out")
        if name == "simulate":
            p.add_argument("--random-state", action="store_true", help="negative control: random initial data")
    return parser


def _overrides(args) -> dict:
    over = {}
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            over[key] = json.loads(raw)
        except json.JSONDecodeError:
            over[key] = raw
    if args.out is not None:
        over["out"] = args.out
    if args.seed is not None:
        over["seed"] = args.seed
    if args.N is not None:
        over["N"] = args.N
    if args.alpha is not None:
        over["simulation.alpha"] = args.alpha
    if getattr(args, "random_state", False):
        over["simulation.random_state"] = True
    return over


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        ctx = Context(cfg)
        if args.command == "continue":
            return cmd_continue(ctx, resume=args.resume)
        return COMMANDS[args.command](ctx)
    except (ConfigError, DomainError) as exc:
        print(f"rotwave: error: {exc}", file=sys.stderr)
        return 2
    except (ComputationFailed, SolverError) as exc:
        print(f"rotwave: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
