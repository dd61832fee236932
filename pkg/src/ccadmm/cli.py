"""Batch experiment driver.

Subcommands::

    ccadmm run       --config PATH [--out DIR] [--seed INT]
    ccadmm compare   --config PATH [--out DIR] [--seed INT]
    ccadmm verify    --config PATH [--out DIR]
    ccadmm microgrid [--n-units 10 --dim 5 ...] [--out DIR] [--seed INT]

Exit codes: 0 converged / all certificates pass, 1 configuration or
validation error, 2 iteration budget exhausted, 3 diverged, 4 a certificate
failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .errors import CCAdmmError, ConfigError, DivergedError, NoCertifiedPError, SpectralAmbiguityError
from .network import (
    CONVERGED,
    DIVERGED,
    Params,
    ScheduleModel,
    Trace,
    find_step_size,
    initial_world,
    run,
)
from .oracle import SaddlePoint, solve_saddle_point
from .problem import (
    ProblemInstance,
    default_microgrid,
    problem_from_dict,
    random_quadratic_instance,
    validate,
)

log = logging.getLogger("ccadmm")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_MAX_ITER, EXIT_DIVERGED, EXIT_CERT = 0, 1, 2, 3, 4


@dataclass
class RunConfig:
    problem: dict
    gamma: float | str = "auto"
    kappa: float = 1.0
    rho: float = 1.0
    beta: float = 0.5
    schedule: str = "sync"
    p_act: float = 1.0
    p_drop: float = 0.0
    seed: int = 0
    tol_d: float = 1e-8
    max_iter: int = 10**6
    out: str = "out"
    plot: bool = True
    gamma0: float = 1.0
    search_max_iter: int = 200_000
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        schema = d.get("schema")
        if schema != SCHEMA_VERSION:
            raise ConfigError(f"schema: expected {SCHEMA_VERSION}, got {schema!r}")
        if "problem" not in d or not isinstance(d["problem"], dict):
            raise ConfigError("problem: missing or not an object")
        params = d.get("params", {})
        sched = d.get("schedule", {"kind": "sync"})
        search = d.get("step_search", {})
        cfg = cls(
            problem=d["problem"],
            gamma=params.get("gamma", "auto"),
            kappa=_num(params, "kappa", 1.0, "params"),
            rho=_num(params, "rho", 1.0, "params"),
            beta=_num(params, "beta", 0.5, "params"),
            schedule=sched.get("kind", "sync"),
            p_act=_num(sched, "p_act", 1.0 if sched.get("kind", "sync") == "sync" else 0.5, "schedule"),
            p_drop=_num(d, "p_drop", 0.0, ""),
            seed=int(d.get("seed", 0)),
            tol_d=_num(d, "tol_d", 1e-8, ""),
            max_iter=int(d.get("max_iter", 10**6)),
            out=str(d.get("out", "out")),
            plot=bool(d.get("plot", True)),
            gamma0=_num(search, "gamma0", 1.0, "step_search"),
            search_max_iter=int(search.get("max_iter", 200_000)),
            base_dir=base_dir or Path.cwd(),
        )
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.gamma != "auto":
            if not isinstance(self.gamma, (int, float)) or not self.gamma > 0:
                raise ConfigError(f"params.gamma must be a positive number or \"auto\", got {self.gamma!r}")
        if not self.kappa > 0:
            raise ConfigError(f"params.kappa must be positive, got {self.kappa}")
        if not self.rho > 0:
            raise ConfigError(f"params.rho must be positive, got {self.rho}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"params.beta must lie in (0, 1), got {self.beta}")
        if self.schedule not in ("sync", "async"):
            raise ConfigError(f"schedule.kind must be \"sync\" or \"async\", got {self.schedule!r}")
        if not 0 <= self.p_act <= 1:
            raise ConfigError(f"schedule.p_act must lie in [0, 1], got {self.p_act}")
        if not 0 <= self.p_drop < 1:
            raise ConfigError(f"p_drop must lie in [0, 1), got {self.p_drop}")
        if not self.tol_d > 0:
            raise ConfigError(f"tol_d must be positive, got {self.tol_d}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {self.max_iter}")

    def schedule_model(self) -> ScheduleModel:
        if self.schedule == "sync":
            return ScheduleModel("sync", 1.0, 0.0, self.seed)
        return ScheduleModel("async", self.p_act, self.p_drop, self.seed)


def _num(d: dict, key: str, default: float, prefix: str) -> float:
    v = d.get(key, default)
    name = f"{prefix}.{key}" if prefix else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    return float(v)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno <= len(text.splitlines()) else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc
    return RunConfig.from_dict(data, path.parent)


def build_problem(source: dict, base_dir: Path) -> ProblemInstance:
    kind = source.get("kind")
    try:
        if kind == "inline":
            return problem_from_dict(source["data"])
        if kind == "file":
            return problem_from_dict(json.loads((base_dir / source["path"]).read_text()))
        if kind == "random_quadratic":
            return random_quadratic_instance(
                int(source.get("N", 5)), int(source.get("n_i", 3)), int(source.get("m", 2)),
                int(source.get("seed", 0)), float(source.get("edge_prob", 0.4)),
            )
        if kind == "microgrid":
            return default_microgrid(
                N_x=int(source.get("N_x", 10)), m=int(source.get("m", 5)), R_g=float(source.get("R_g", 0.1)),
                seed=int(source.get("seed", 0)), zero_b=bool(source.get("zero_b", False)),
                eps=float(source.get("eps", 1e-3)),
            )
    except KeyError as exc:
        raise ConfigError(f"problem: missing field {exc.args[0]!r}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"problem.path: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from exc
    raise ConfigError(f"problem.kind: unknown kind {kind!r}")


def _prepare(cfg: RunConfig) -> tuple[ProblemInstance, SaddlePoint]:
    problem = build_problem(cfg.problem, cfg.base_dir)
    report = validate(problem)
    if not report.passed:
        raise ConfigError("problem violates the convergence assumptions: " + "; ".join(report.failures()))
    oracle = solve_saddle_point(problem, kappa=cfg.kappa)
    return problem, oracle


def _resolve_gamma(cfg: RunConfig, problem: ProblemInstance, oracle: SaddlePoint) -> float:
    if cfg.gamma != "auto":
        return float(cfg.gamma)
    gamma, _ = find_step_size(
        problem, oracle, cfg.kappa, cfg.rho, cfg.beta,
        gamma0=cfg.gamma0, tol_d=cfg.tol_d, max_iter=cfg.search_max_iter,
    )
    log.info("step size search settled on gamma=%g", gamma)
    return gamma


def _exit_for(*statuses: str) -> int:
    if DIVERGED in statuses:
        return EXIT_DIVERGED
    if all(s == CONVERGED for s in statuses):
        return EXIT_OK
    return EXIT_MAX_ITER


def _plot(curves: dict[str, np.ndarray], path: Path, tol: float) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, d in curves.items():
        d = np.asarray(d)
        ok = np.isfinite(d) & (d > 0)
        ax.semilogy(np.arange(d.size)[ok], d[ok], label=label)
    ax.axhline(tol, color="grey", ls=":", lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("squared distance to optimum")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _write_trace(trace: Trace, out: Path, stem: str) -> None:
    (out / f"{stem}.csv").write_text(trace.to_csv())


def _outdir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override) if override else cfg.base_dir / cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(config_path, out: str | None = None, seed: int | None = None) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    problem, oracle = _prepare(cfg)
    gamma = _resolve_gamma(cfg, problem, oracle)
    params = Params(gamma, cfg.kappa, cfg.rho, cfg.beta)
    trace = run(initial_world(problem), params, cfg.schedule_model(), oracle, cfg.tol_d, cfg.max_iter)
    outdir = _outdir(cfg, out)
    _write_trace(trace, outdir, "trace")
    (outdir / "oracle.json").write_text(oracle.to_json())
    (outdir / "summary.json").write_text(trace.summary_json())
    if cfg.plot:
        _plot({cfg.schedule: trace.column("d")}, outdir / "convergence.png", cfg.tol_d)
    print(f"{trace.status}: {trace.iterations} iterations, final d = {trace.final_d:.3e} (gamma={gamma:g})")
    return _exit_for(trace.status)


def compare(cfg: RunConfig, problem: ProblemInstance, oracle: SaddlePoint, outdir: Path) -> dict:
    """Run both schedules on one instance and write traces, summary and plot."""
    gamma = _resolve_gamma(cfg, problem, oracle)
    params = Params(gamma, cfg.kappa, cfg.rho, cfg.beta)
    w0 = initial_world(problem)
    sync = run(w0, params, ScheduleModel("sync", seed=cfg.seed), oracle, cfg.tol_d, cfg.max_iter)
    asyn = run(
        w0, params, ScheduleModel("async", cfg.p_act, cfg.p_drop, cfg.seed), oracle, cfg.tol_d, cfg.max_iter
    )
    _write_trace(sync, outdir, "trace_sync")
    _write_trace(asyn, outdir, "trace_async")
    lines = ["schedule," + sync.to_csv().splitlines()[0]]
    for label, tr in (("sync", sync), ("async", asyn)):
        lines += [f"{label},{row}" for row in tr.to_csv().splitlines()[1:]]
    (outdir / "compare.csv").write_text("\n".join(lines) + "\n")
    (outdir / "oracle.json").write_text(oracle.to_json())
    summary = {
        "status": "converged" if sync.status == asyn.status == CONVERGED else "failed",
        "sync": sync.summary(),
        "async": asyn.summary(),
        "iters_sync": sync.iterations,
        "iters_async": asyn.iterations,
        "params": {"gamma": gamma, "kappa": cfg.kappa, "rho": cfg.rho, "beta": cfg.beta},
        "seed": cfg.seed,
        "x_gap_sync_async": float(np.linalg.norm(sync.final.x - asyn.final.x)),
    }
    if cfg.plot:
        _plot({"synchronous": sync.column("d"), "asynchronous": asyn.column("d")},
              outdir / "compare.png", cfg.tol_d)
    summary["_traces"] = (sync, asyn)
    return summary


def _finish_compare(summary: dict, outdir: Path) -> int:
    sync, asyn = summary.pop("_traces")
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"sync:  {sync.status} after {sync.iterations} iterations (final d {sync.final_d:.3e})")
    print(f"async: {asyn.status} after {asyn.iterations} iterations (final d {asyn.final_d:.3e})")
    return _exit_for(sync.status, asyn.status)


def cmd_compare(config_path, out: str | None = None, seed: int | None = None) -> int:
    cfg = load_config(config_path)
    if cfg.schedule != "async":
        raise ConfigError("schedule.kind must be \"async\" for compare (the synchronous leg is implicit)")
    if seed is not None:
        cfg.seed = seed
    problem, oracle = _prepare(cfg)
    outdir = _outdir(cfg, out)
    return _finish_compare(compare(cfg, problem, oracle, outdir), outdir)


def _print_table(report: dict) -> None:
    rows = [
        ("spectrum", f"max|eig T| = {report['spectrum']['max_modulus']:.12f}, "
                     f"radius(T_perp) = {report['spectrum']['spectral_radius_perp']:.6f}, "
                     f"unit eigenvalues = {report['spectrum']['unit_count']}"),
        ("reconstruction", f"max error = {report['reconstruction']['max_error']:.3e}"),
    ]
    pd = report["primal_dual_lyapunov"]
    rows.append(("primal-dual lyapunov",
                 f"p = {pd['p']:.4g}, margin = {pd['margin']:.4g}, q = {pd['q']:.4g}"
                 + (" (sampled)" if pd["sampled"] else "") if pd["passed"] else pd["error"]))
    cl = report["consensus_lyapunov"]
    rows.append(("consensus lyapunov",
                 f"b1 = {cl['b1']:.4g}, b2 = {cl['b2']:.4g}, residual = {cl['residual']:.2e}"
                 if "b1" in cl else cl["error"]))
    for name, detail in rows:
        key = name.replace(" ", "_").replace("-", "_")
        flag = "PASS" if report[key]["passed"] else "FAIL"
        print(f"{flag:4}  {name:22}  {detail}")


def cmd_verify(config_path, out: str | None = None) -> int:
    cfg = load_config(config_path)
    problem = build_problem(cfg.problem, cfg.base_dir)
    vr = validate(problem)
    if not vr.passed:
        raise ConfigError("problem violates the convergence assumptions: " + "; ".join(vr.failures()))
    report = analysis.certificate_report(problem, cfg.kappa, cfg.rho, cfg.beta, seed=cfg.seed)
    _print_table(report)
    outdir = _outdir(cfg, out)
    (outdir / "verify.json").write_text(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_CERT


def cmd_microgrid(args: argparse.Namespace) -> int:
    if args.n_units < 1 or not args.r_grid > 0:
        raise ConfigError("n-units must be >= 1 and r-grid positive")
    seed = 0 if args.seed is None else args.seed
    cfg = RunConfig.from_dict(
        {
            "schema": SCHEMA_VERSION,
            "problem": {"kind": "microgrid", "N_x": args.n_units, "m": args.dim, "R_g": args.r_grid,
                        "seed": seed, "zero_b": args.zero_b, "eps": args.eps},
            "params": {"gamma": "auto" if args.gamma is None else args.gamma,
                       "kappa": args.kappa, "rho": args.rho, "beta": args.beta},
            "schedule": {"kind": "async", "p_act": args.p_act},
            "p_drop": args.p_drop,
            "seed": seed,
            "tol_d": args.tol,
            "max_iter": args.max_iter,
            "plot": not args.no_plot,
        }
    )
    problem, oracle = _prepare(cfg)
    outdir = _outdir(cfg, args.out or "microgrid_out")
    summary = compare(cfg, problem, oracle, outdir)
    sync, asyn = summary["_traces"]
    m = problem.m
    summary["feasibility"] = {
        label: float(np.max(np.abs(tr.final.x.reshape(problem.N, m).sum(axis=0) - problem.b)))
        for label, tr in (("sync", sync), ("async", asyn))
    }
    summary["oracle_kind"] = "kkt" if problem.is_quadratic else "primal_dual"
    print(f"max |sum x_i - g|: sync {summary['feasibility']['sync']:.2e}, "
          f"async {summary['feasibility']['async']:.2e}")
    return _finish_compare(summary, outdir)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ccadmm", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "compare", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        if name != "verify":
            sp.add_argument("--seed", type=int)
    mg = sub.add_parser("microgrid", help="reactive-power dispatch benchmark, sync vs async")
    mg.add_argument("--n-units", type=int, default=10)
    mg.add_argument("--dim", type=int, default=5, choices=(5, 6))
    mg.add_argument("--r-grid", type=float, default=0.1)
    mg.add_argument("--eps", type=float, default=1e-3)
    mg.add_argument("--zero-b", action="store_true", help="drop the norm term so every cost is quadratic")
    mg.add_argument("--gamma", type=float)
    mg.add_argument("--kappa", type=float, default=1.0)
    mg.add_argument("--rho", type=float, default=1.0)
    mg.add_argument("--beta", type=float, default=0.5)
    mg.add_argument("--p-act", type=float, default=0.5)
    mg.add_argument("--p-drop", type=float, default=0.2)
    mg.add_argument("--tol", type=float, default=1e-14)
    mg.add_argument("--max-iter", type=int, default=10**6)
    mg.add_argument("--no-plot", action="store_true")
    mg.add_argument("--seed", type=int)
    mg.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed)
        if args.command == "compare":
            return cmd_compare(args.config, args.out, args.seed)
        if args.command == "verify":
            return cmd_verify(args.config, args.out)
        return cmd_microgrid(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SpectralAmbiguityError as exc:
        print(f"spectral split failed: {exc}\n  try another beta in (0, 1) or rho > 0", file=sys.stderr)
        return EXIT_CERT
    except NoCertifiedPError as exc:
        print(f"no Lyapunov certificate: {exc}\n  widen the p grid or check strong convexity", file=sys.stderr)
        return EXIT_CERT
    except CCAdmmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
