"""Command line driver: run, baseline, schedule, analyze-alpha, speedup-model.

Configuration is one flat JSON object read from a file or stdin (``-``).
Exit codes: 0 success, 1 configuration error, 2 no convergence, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .collocation import radau_tableau
from .core import (
    ALPHA_MARGIN,
    ForbiddenAlphaError,
    InnerSolveError,
    SolveResult,
    near_forbidden,
    paralpha_solve,
    sequential_solve,
)
from .problems import composite_rhs, make_problem
from .runtime import RankFailure, TransportError, make_setup, run_parallel, run_socket_rank
from .schedule import EPS_DEFAULT, AlphaSchedule, ScheduleConfig, estimate_m0
from .spectral import NotDiagonalizable, forbidden_alphas, is_power_of_two

log = logging.getLogger("paralpha")

SCHEMA_VERSION = "1.0.0"
EXIT_OK, EXIT_CONFIG, EXIT_NOCONV, EXIT_SOLVER = 0, 1, 2, 3
CSV_COLUMNS = ["k", "alpha", "m_k", "consec_diff", "true_err", "gmres_iters", "wall_s"]
DEFAULT_ORDER = {"heat": 4, "advection": 5}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    equation: str = "dahlquist"
    n_per_dim: int = 16
    order: Optional[int] = None
    T: float = 1.0
    L: int = 8
    M: int = 2
    # Dahlquist coefficient; a number or [re, im]
    lam: object = -1.0
    tol_outer: float = 1e-9
    tau_inner: float = 1e-12
    tau_reference: float = 1e-14
    gmres_restart: int = 50
    m0_strategy: str = "operator_bound"
    m0_value: Optional[float] = None
    alpha_mode: str = "adaptive"
    alpha: Optional[float] = None
    alpha_sequence: Optional[list] = None
    transport: str = "serial"
    n_step: Optional[int] = None
    n_coll: int = 1
    seed: int = 0
    eps_override: Optional[float] = None
    max_iter: int = 50
    output: Optional[str] = None
    csv: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        if cfg.order is None and cfg.equation in DEFAULT_ORDER:
            cfg.order = DEFAULT_ORDER[cfg.equation]
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @property
    def eps(self) -> float:
        return EPS_DEFAULT if self.eps_override is None else float(self.eps_override)

    @property
    def lam_value(self) -> complex:
        if isinstance(self.lam, (list, tuple)):
            return complex(self.lam[0], self.lam[1])
        return complex(self.lam)

    def validate(self, *, need_pow2: bool = True) -> None:
        if self.equation not in ("dahlquist", "heat", "advection"):
            raise ConfigError(f"equation must be dahlquist, heat or advection, got {self.equation!r}")
        if self.L < 1 or self.M < 1:
            raise ConfigError("L and M must be positive")
        if need_pow2 and not is_power_of_two(self.L):
            raise ConfigError(f"L={self.L} is not a power of two; the radix-2 step transform needs L = 2^j")
        if self.transport not in ("serial", "loopback", "socket"):
            raise ConfigError(f"transport must be serial, loopback or socket, got {self.transport!r}")
        if self.transport != "serial":
            n_step = self.n_step if self.n_step is not None else self.L
            if not is_power_of_two(n_step):
                raise ConfigError(f"n_step={n_step} is not a power of two; butterflies pair ranks by XOR")
            if n_step != self.L:
                raise ConfigError(f"n_step={n_step} must equal L={self.L}")
            if self.n_coll not in (1, self.M):
                raise ConfigError(f"n_coll must be 1 or M={self.M}, got {self.n_coll}")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if not (self.tol_outer > 0 and self.tau_inner > 0 and self.tau_reference > 0):
            raise ConfigError("tolerances must be positive")
        if self.alpha_mode == "fixed":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ConfigError(f"alpha_mode=fixed needs alpha in (0, 1), got {self.alpha}")
        elif self.alpha_mode == "sequence":
            seq = self.alpha_sequence or []
            if not seq or not all(0.0 < a < 1.0 for a in seq):
                raise ConfigError("alpha_mode=sequence needs a non-empty alpha_sequence inside (0, 1)")
        elif self.alpha_mode != "adaptive":
            raise ConfigError(f"alpha_mode must be adaptive, fixed or sequence, got {self.alpha_mode!r}")
        if self.m0_strategy not in ("user", "dt_multiple", "operator_bound"):
            raise ConfigError(f"unknown m0_strategy {self.m0_strategy!r}")
        if self.m0_strategy == "user" and self.m0_value is None:
            raise ConfigError("m0_strategy=user needs m0_value")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")

    def build(self):
        try:
            ivp = make_problem(self.equation, n_per_dim=self.n_per_dim, order=self.order, T=self.T, L=self.L,
                               lam=self.lam_value)
            tableau = radau_tableau(self.M)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return ivp, tableau


def load_config(path: str) -> RunConfig:
    try:
        text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
        raw = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read configuration {path!r}: {exc}") from exc
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- reports


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _record_dict(rec) -> dict:
    return {
        "k": rec.k,
        "alpha": _num(rec.alpha),
        "m_k": _num(rec.m_k),
        "consec_diff": _num(rec.consec_diff),
        "true_err": _num(rec.true_err),
        "exact_err": _num(rec.exact_err),
        "gmres_iters": int(rec.gmres_iters),
        "wall_s": float(rec.wall_s),
    }


def solve_report(cfg: RunConfig, result: SolveResult, m0: Optional[float], transport_info: dict) -> dict:
    records = [_record_dict(r) for r in result.records]
    last = records[-1] if records else {}
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "run",
        "config": cfg.to_dict(),
        "converged": bool(result.converged),
        "reason": result.reason,
        "iterations": len(records),
        "gamma": _num(result.gamma),
        "m0": _num(m0),
        "final_error": last.get("exact_err"),
        "final_true_error": last.get("true_err"),
        "records": records,
        "alpha_adjustments": [[int(k), float(a), float(b)] for k, a, b in result.alpha_adjustments],
        "timings": {key: float(v) for key, v in result.timings.items()},
        "transport": transport_info,
    }


def load_schema() -> dict:
    return json.loads(resources.files("paralpha").joinpath("report_schema.json").read_text(encoding="utf-8"))


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, load_schema())


def normalize_timings(report: dict) -> dict:
    """Copy with every wall-clock field zeroed, for byte comparisons."""
    out = json.loads(json.dumps(report))
    for rec in out.get("records", []):
        rec["wall_s"] = 0.0
    out["timings"] = {k: 0.0 for k in out.get("timings", {})}
    return out


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_outputs(report: dict, output: Optional[str], csv_path: Optional[str]) -> None:
    validate_report(report)
    text = dump_report(report)
    if output and output != "-":
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for rec in report["records"]:
                writer.writerow({k: ("" if rec[k] is None else rec[k]) for k in CSV_COLUMNS})


# --------------------------------------------------------------- commands


def execute_run(cfg: RunConfig) -> dict:
    cfg.validate()
    ivp, tableau = cfg.build()
    m0 = None
    if cfg.alpha_mode == "adaptive":
        try:
            m0 = estimate_m0(cfg.m0_strategy, ivp, value=cfg.m0_value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    reference = sequential_solve(ivp, tableau, tau=cfg.tau_reference, restart=cfg.gmres_restart).u[-1]
    kwargs = dict(tol=cfg.tol_outer, tau=cfg.tau_inner, alpha_mode=cfg.alpha_mode, m0=m0, alpha=cfg.alpha,
                  sequence=cfg.alpha_sequence, eps=cfg.eps, max_iter=cfg.max_iter, restart=cfg.gmres_restart,
                  reference=reference)
    info = {"name": cfg.transport, "ranks": 1}
    if cfg.transport == "serial":
        result = paralpha_solve(ivp, tableau, **kwargs)
    else:
        n_step = cfg.n_step or cfg.L
        kwargs.pop("restart")
        setup = make_setup(ivp, tableau, restart=cfg.gmres_restart, **kwargs)
        info["ranks"] = n_step * cfg.n_coll
        if cfg.transport == "loopback":
            result, hub = run_parallel(setup, n_step, cfg.n_coll)
            info["messages"] = {name: hub.sends(name) for name in
                                ("butterfly", "stage_reduce", "last_step", "collective", "gather")}
        else:
            result = run_socket_rank(setup, n_step, cfg.n_coll)
            if result is None:
                return None
    return solve_report(cfg, result, m0, info)


def execute_baseline(cfg: RunConfig) -> dict:
    cfg.validate(need_pow2=False)
    ivp, tableau = cfg.build()
    seq = sequential_solve(ivp, tableau, tau=cfg.tau_inner, restart=cfg.gmres_restart)
    records = []
    for l, it in enumerate(seq.gmres_iters):
        err = None
        if ivp.exact is not None:
            err = float(np.max(np.abs(seq.u[l, -1] - ivp.exact(ivp.grid.step_start(l + 1)))))
        records.append({"k": l + 1, "alpha": None, "m_k": None, "consec_diff": None, "true_err": None,
                        "exact_err": err, "gmres_iters": int(it), "wall_s": 0.0})
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "baseline",
        "config": cfg.to_dict(),
        "converged": True,
        "reason": "sequential",
        "iterations": len(records),
        "gamma": None,
        "m0": None,
        "final_error": _num(seq.final_error),
        "final_true_error": None,
        "records": records,
        "alpha_adjustments": [],
        "timings": {"transform": 0.0, "solve": float(seq.wall_s), "comm": 0.0},
        "transport": {"name": "serial", "ranks": 1},
    }


def schedule_rows(cfg: RunConfig) -> tuple[float, float, list]:
    cfg.validate()
    ivp, tableau = cfg.build()
    w_norm = float(np.max(np.abs(composite_rhs(ivp, ivp.grid, tableau))))
    m0 = estimate_m0(cfg.m0_strategy, ivp, value=cfg.m0_value)
    sc = ScheduleConfig(tau=cfg.tau_inner, L=cfg.L, w_norm=w_norm, m0=m0, tol=cfg.tol_outer, eps=cfg.eps)
    sched = AlphaSchedule.from_config(sc)
    return sc.gamma, m0, sched.preview(max_steps=cfg.max_iter)


def speedup_model(L: int, M: int, k: int, t_sol: float, t_sol_par: float) -> dict:
    """Cost model for sequential, node-parallel and Paralpha runs (logarithms base 2).

    The bounds share their numerators with the ratios and use denominators
    that are never larger, so the inequalities also hold in floating point.
    """
    for name, v in (("L", L), ("M", M), ("k", k), ("t_sol", t_sol), ("t_sol_par", t_sol_par)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    lg_l, lg_m = math.log2(L), math.log2(M)
    t_seq = L * M * (t_sol + 2 * M)
    t_mpar = L * (t_sol + 2 * M * lg_m)
    overhead = 2 * lg_l + 3 * M * lg_m
    t_par = k * (t_sol_par + overhead)
    s_seq = t_seq / t_par
    s_mpar = t_mpar / t_par
    bound_seq = t_seq / (k * (t_sol_par + 2 * M))
    bound_mpar = t_mpar / (k * (t_sol_par + 2 * M * lg_m))
    return {
        "L": L, "M": M, "k": k, "t_sol": t_sol, "t_sol_par": t_sol_par,
        "t_seq": t_seq, "t_mpar": t_mpar, "t_par": t_par,
        "speedup_seq": s_seq, "speedup_mpar": s_mpar,
        "bound_seq": bound_seq, "bound_mpar": bound_mpar,
        "bound_seq_applies": L >= 2,
        "no_speedup": s_seq <= 1.0,
    }


def _print_table(rows: list[dict], columns: list[str]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)))
    for row in cells:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = execute_run(cfg)
    if report is None:  # non-root socket rank
        return EXIT_OK
    write_outputs(report, args.output or cfg.output, args.csv or cfg.csv)
    return EXIT_OK if report["converged"] else EXIT_NOCONV


def cmd_baseline(args) -> int:
    cfg = load_config(args.config)
    report = execute_baseline(cfg)
    write_outputs(report, args.output or cfg.output, args.csv or cfg.csv)
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = load_config(args.config)
    gamma, m0, rows = schedule_rows(cfg)
    table = [{"k": k, "alpha": a, "m_k": m} for k, a, m in rows]
    if args.json:
        print(json.dumps({"gamma": gamma, "m0": m0, "rows": table}, indent=2))
    else:
        print(f"gamma = {gamma:.6g}   m0 = {m0:.6g}")
        _print_table(table, ["k", "alpha", "m_k"])
    return EXIT_OK


def cmd_analyze_alpha(args) -> int:
    cfg = load_config(args.config)
    if cfg.M > 5:
        raise ConfigError(f"analyze-alpha supports M <= 5, got M={cfg.M}")
    tableau = radau_tableau(cfg.M)
    found = forbidden_alphas(tableau, cfg.L, flip_r=args.flip_r)
    radii = [f.alpha_star for f in found]
    if cfg.alpha_mode == "adaptive":
        scheduled = [a for _, a, _ in schedule_rows(cfg)[2]]
    elif cfg.alpha_mode == "fixed":
        scheduled = [cfg.alpha]
    else:
        scheduled = list(cfg.alpha_sequence or [])
    flagged = [{"k": i + 1, "alpha": a, "near": near_forbidden(a, radii, ALPHA_MARGIN)}
               for i, a in enumerate(scheduled) if near_forbidden(a, radii, ALPHA_MARGIN) is not None]
    if args.json:
        print(json.dumps({"forbidden": [f.to_dict() for f in found], "flagged": flagged}, indent=2))
    else:
        if found:
            _print_table([f.to_dict() for f in found], ["r_re", "r_im", "alpha_star"])
        else:
            print("no defective shifts")
        for item in flagged:
            print(f"alpha_{item['k']} = {item['alpha']:.6g} is within {ALPHA_MARGIN:g} of {item['near']:.6g}")
    return EXIT_OK


def cmd_speedup(args) -> int:
    if args.random:
        rng = np.random.default_rng(args.seed)
        rows = [speedup_model(int(2 ** rng.integers(0, 11)), int(rng.integers(1, 10)), int(rng.integers(1, 50)),
                              float(rng.uniform(1, 1e4)), float(rng.uniform(1, 1e4))) for _ in range(args.random)]
    else:
        rows = [speedup_model(args.L, args.M, args.k, args.t_sol, args.t_sol_par if args.t_sol_par else args.t_sol)]
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        _print_table(rows, ["L", "M", "k", "t_seq", "t_mpar", "t_par", "speedup_seq", "bound_seq",
                            "speedup_mpar", "bound_mpar", "no_speedup"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paralpha", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in (("run", cmd_run, "Paralpha solve"), ("baseline", cmd_baseline, "sequential collocation")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="JSON config file, or - for stdin")
        p.add_argument("-o", "--output", help="report path (default stdout)")
        p.add_argument("--csv", help="per-iteration CSV path")
        p.set_defaults(func=func)

    p = sub.add_parser("schedule", help="preview the adaptive alpha sequence")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("analyze-alpha", help="defective-shift radii and scheduled alpha check")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.add_argument("--flip-r", action="store_true",
                   help="use the characteristic polynomial with r replaced by -r")
    p.set_defaults(func=cmd_analyze_alpha)

    p = sub.add_parser("speedup-model", help="evaluate the theoretical speedups")
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--M", type=int, default=3)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--t-sol", type=float, default=100.0)
    p.add_argument("--t-sol-par", type=float, default=None)
    p.add_argument("--random", type=int, default=0, help="evaluate this many random parameter draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_speedup)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InnerSolveError, NotDiagonalizable, ForbiddenAlphaError, RankFailure, TransportError,
            ZeroDivisionError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
