"""Command-line front end: ``lqgame solve | verify | simulate``.

Exit codes: 0 success, 1 invalid input, 2 no regular Riccati solution
(closed-loop saddle refused), 3 numerical blow-up, 4 statistically
inconclusive, 5 a probe verdict failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from .adjoint import eta_to_csv, solve_eta, value_at
from .errors import InvalidInputError, NumericOverflowError, RegularityError
from .matrix import DEFAULT_RANGE_TOL, DEFAULT_SIGN_TOL
from .problem import MatrixFunction, ScalarExpr, StackedProblem, _coefficient, assemble, resolve_problem
from .riccati import (
    check_regularity,
    integrate_riccati,
    residual_verify,
    riccati_from_csv,
    riccati_to_csv,
    supplied_solution,
    uniform_grid,
)
from .simulate import (
    DEFAULT_PATHS,
    DEFAULT_STEPS,
    Z_RULE,
    BrownianBatch,
    Perturbation,
    convexity_probe,
    default_seed,
    divergence_probe,
    paths_to_csv,
    saddle_test,
    simulate_closed_loop,
    stationarity_probe,
)
from .strategy import ClosedLoopStrategy, build_saddle, strategy_to_csv

log = logging.getLogger("lqgame")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_REGULAR = 2
EXIT_BLOWUP = 3
EXIT_INCONCLUSIVE = 4
EXIT_VERDICT = 5

SCHEMA_VERSION = 1
RESIDUAL_TOL = 1e-6
REFINE_FACTOR = 4


class _Exit(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """JSON-safe copy: arrays to lists, non-finite floats to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def load_schema() -> dict:
    return json.loads(resources.files("lqgame").joinpath("report.schema.json").read_text())


def write_report(report: dict, out: Path | None) -> str:
    doc = _clean(report)
    jsonschema.validate(doc, load_schema())
    text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text)
    return text


def _parse_vector(text: str, n: int) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InvalidInputError(f"cannot parse vector {text!r}") from None
    if len(vals) == 1 and n > 1:
        vals = vals * n
    if len(vals) != n or not all(math.isfinite(v) for v in vals):
        raise InvalidInputError(f"vector {text!r} must have {n} finite entries")
    return np.array(vals)


def _x_list(args, n: int) -> list[np.ndarray]:
    return [_parse_vector(x, n) for x in args.x] if args.x else [np.ones(n)]


def parse_candidate(text: str, n: int, t0: float, T: float):
    """Candidate ``P`` from ``const:``, ``poly:``, ``json:`` or a CSV path.

    Returns a ``MatrixFunction`` or ``(grid, values)`` for sampled data.
    """
    if text.startswith("const:"):
        body = text[len("const:"):]
        try:
            val = json.loads(body)
        except json.JSONDecodeError:
            raise InvalidInputError(f"--p const: cannot parse {body!r}") from None
        arr = np.asarray(val, dtype=float)
        if arr.ndim == 0:
            arr = arr * np.eye(n) if n > 1 else arr.reshape(1, 1)
        if arr.shape != (n, n):
            raise InvalidInputError(f"--p const: expected an {n}x{n} matrix")
        return MatrixFunction.const(arr)
    if text.startswith("poly:"):
        body = text[len("poly:"):]
        try:
            coeffs = json.loads(body)
        except json.JSONDecodeError:
            raise InvalidInputError(f"--p poly: cannot parse {body!r}") from None
        if n != 1 or not isinstance(coeffs, list) or not coeffs:
            raise InvalidInputError("--p poly: needs a coefficient list and n = 1")
        return MatrixFunction.scalar(ScalarExpr.poly([float(c) for c in coeffs]))
    if text.startswith("json:"):
        try:
            doc = json.loads(text[len("json:"):])
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"--p json: {exc}") from None
        return _coefficient(doc, "P", (n, n))
    path = Path(text)
    if path.suffix.lower() == ".csv" and path.is_file():
        grid, vals = riccati_from_csv(path)
        if vals.shape[1] != n:
            raise InvalidInputError(f"{text}: candidate has dimension {vals.shape[1]}, expected {n}")
        return grid, vals
    raise InvalidInputError(f"--p {text!r}: expected const:, poly:, json: or a .csv file")


def _problem_info(sp: StackedProblem, source: str) -> dict:
    return {
        "source": source,
        "name": sp.name,
        "horizon": {"t0": sp.t0, "T": sp.T},
        "dims": {"n": sp.n, "m1": sp.m1, "m2": sp.m2},
    }


@dataclass
class _Solved:
    sp: StackedProblem
    P: Any
    adj: Any
    regularity: Any
    strategy: Any


def _audit(args, sp: StackedProblem, P, report: dict, out: Path | None) -> _Solved:
    """Adjoint, regularity and saddle construction shared by all commands."""
    report["riccati"] = P.diagnostics()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        riccati_to_csv(P, out / "riccati.csv")
    if not P.complete:
        raise _Exit(EXIT_BLOWUP, f"Riccati solution blew up at s={P.blowup:.6g}")
    try:
        adj = solve_eta(sp, P)
    except NumericOverflowError as exc:
        raise _Exit(EXIT_BLOWUP, str(exc)) from None
    if out is not None:
        eta_to_csv(adj, out / "eta.csv")
    reg = check_regularity(P, sp, adj, tol_range=args.tol_range, tol_sign=args.tol_sign)
    report["regularity"] = reg.to_dict()
    return _Solved(sp, P, adj, reg, None)


def _saddle(solved: _Solved, report: dict, out: Path | None, xs, extra_failed=()) -> _Solved:
    failed = list(solved.regularity.failed) + list(extra_failed)
    report["verdicts"]["regular"] = not failed
    if failed:
        report["strategy"] = None
        report["refusal"] = failed
        raise _Exit(EXIT_NOT_REGULAR, "no regular Riccati solution; failed: " + ", ".join(failed))
    try:
        st = build_saddle(solved.sp, solved.P, solved.adj, report=solved.regularity)
    except RegularityError as exc:
        report["verdicts"]["regular"] = False
        report["strategy"] = None
        report["refusal"] = exc.failed
        raise _Exit(EXIT_NOT_REGULAR, str(exc)) from None
    report["strategy"] = st.summary()
    report["refusal"] = None
    if out is not None:
        strategy_to_csv(st, out / "strategy.csv")
    report["value_samples"] = [
        {"x": x.tolist(), "t": solved.sp.t0, "V": value_at(solved.sp, solved.P, solved.adj, solved.sp.t0, x)} for x in xs
    ]
    solved.strategy = st
    return solved


def _solve_pipeline(args, sp: StackedProblem, report: dict, out: Path | None, xs) -> _Solved:
    P = integrate_riccati(sp, args.steps)
    return _saddle(_audit(args, sp, P, report, out), report, out, xs)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_solve(args, report: dict) -> int:
    out = Path(args.out) if args.out else None
    sp = assemble(resolve_problem(args.problem))
    report["problem"] = _problem_info(sp, args.problem)
    xs = _x_list(args, sp.n)
    _solve_pipeline(args, sp, report, out, xs)
    return EXIT_OK


def cmd_verify(args, report: dict) -> int:
    out = Path(args.out) if args.out else None
    sp = assemble(resolve_problem(args.problem))
    report["problem"] = _problem_info(sp, args.problem)
    xs = _x_list(args, sp.n)
    cand = parse_candidate(args.p, sp.n, sp.t0, sp.T)
    if isinstance(cand, tuple):
        grid, vals = cand
        span = max(1.0, sp.T - sp.t0)
        if abs(grid[0] - sp.t0) > 1e-9 * span or abs(grid[-1] - sp.T) > 1e-9 * span:
            raise InvalidInputError("candidate samples must span the horizon")
        P = supplied_solution(vals, grid)
        residual = residual_verify(P, sp)
        res_grid = {"kind": "candidate", "nodes": int(grid.size)}
    else:
        grid = uniform_grid(sp.t0, sp.T, args.steps)
        P = supplied_solution(cand, grid)
        mid = 0.5 * (grid[1:] + grid[:-1])
        residual = residual_verify(cand, sp, mid)
        res_grid = {"kind": "midpoints", "nodes": int(mid.size)}
    report["residual"] = {"max": residual, "grid": res_grid, "tol": args.tol_residual}
    is_solution = math.isfinite(residual) and residual <= args.tol_residual
    report["verdicts"]["is_solution"] = is_solution
    solved = _audit(args, sp, P, report, out)
    _saddle(solved, report, out, xs, extra_failed=() if is_solution else ("residual",))
    return EXIT_OK


def _default_perturbations(sp: StackedProblem, delta: float) -> list[Perturbation]:
    perts = [Perturbation.constant(1, delta)]
    if sp.m2:
        perts += [
            Perturbation.constant(2, delta),
            Perturbation(2, lambda s: np.asarray(s, dtype=float), "linear(s)"),
            Perturbation(2, lambda s: np.sin(2 * np.pi * np.asarray(s, dtype=float)), "sin(2 pi s)"),
        ]
    return perts


def cmd_simulate(args, report: dict) -> int:
    out = Path(args.out) if args.out else None
    sp = assemble(resolve_problem(args.problem))
    report["problem"] = _problem_info(sp, args.problem)
    xs = _x_list(args, sp.n)
    seed = default_seed() if args.seed is None else args.seed
    report["config"]["seed"] = seed
    batch = BrownianBatch.uniform(seed, args.paths, sp.t0, sp.T, args.steps)
    report["simulation"] = {"mode": args.mode, "batch": batch.describe(), "x0": xs[0].tolist()}
    sim = report["simulation"]
    code = EXIT_OK

    if args.mode in ("saddle-test", "stationarity"):
        solved = _solve_pipeline(args, sp, report, out, xs)
        if args.mode == "saddle-test":
            perts = _default_perturbations(sp, args.delta)
            rep, base = saddle_test(
                sp, solved.P, solved.adj, solved.strategy, perts, batch, xs[0],
                threads=args.threads, regularity=solved.regularity,
            )
            sim["saddle_test"] = rep.to_dict()
            V = report["value_samples"][0]["V"]
            est = rep.baseline
            sim["value_check"] = {"V": V, "J": est.to_dict(), "ok": abs(est.mean - V) <= Z_RULE * est.stderr + 1e-9 * max(1, abs(V))}
            if out is not None:
                paths_to_csv(base, out / "paths.csv")
            unresolved = [r.label for r in rep.results if r.predicted > 0 and r.gap.mean < Z_RULE * r.gap.stderr]
            report["verdicts"].update({
                "inequalities": rep.inequalities_ok,
                "predictions": rep.predictions_ok,
                "value_check": sim["value_check"]["ok"],
                "unresolved": unresolved,
            })
            if not (rep.passed and sim["value_check"]["ok"]):
                code = EXIT_VERDICT
            elif unresolved:
                code = EXIT_INCONCLUSIVE
        else:
            coarse_steps = max(2, args.steps // REFINE_FACTOR)
            r_fine = stationarity_probe(sp, solved.P, solved.adj, solved.strategy, xs[0], batch, threads=args.threads)
            r_zero = stationarity_probe(
                sp, solved.P, solved.adj, ClosedLoopStrategy.zero(sp, solved.P.grid), xs[0], batch, threads=args.threads
            )
            Pc = integrate_riccati(sp, coarse_steps)
            adj_c = solve_eta(sp, Pc)
            st_c = build_saddle(sp, Pc, adj_c)
            batch_c = BrownianBatch.uniform(seed, args.paths, sp.t0, sp.T, coarse_steps)
            r_coarse = stationarity_probe(sp, Pc, adj_c, st_c, xs[0], batch_c, threads=args.threads)
            sim["stationarity"] = {
                "residual": r_fine,
                "residual_coarse": r_coarse,
                "coarse_steps": coarse_steps,
                "residual_zero_strategy": r_zero,
            }
            refine_ok = r_fine <= 0.5 * r_coarse
            zero_ok = r_zero >= 10 * r_fine and r_zero > 0
            report["verdicts"].update(refinement=refine_ok, zero_strategy_separated=zero_ok)
            if out is not None:
                paths_to_csv(simulate_closed_loop(sp, solved.strategy, xs[0], batch, threads=args.threads), out / "paths.csv")
            if not (refine_ok and zero_ok):
                code = EXIT_VERDICT
    elif args.mode == "convexity":
        player = args.player
        if player == 2 and sp.m2 == 0:
            raise InvalidInputError("problem has no player 2")
        controls = [
            ("constant(1)", lambda s: np.ones_like(np.asarray(s, dtype=float))),
            ("linear(s)", lambda s: np.asarray(s, dtype=float)),
        ]
        res = convexity_probe(sp, player, controls, batch, threads=args.threads)
        sim["convexity"] = {"player": player, "results": [r.to_dict() for r in res]}
        violated = [r.label for r in res if r.violated]
        resolved = [r for r in res if abs(r.value.mean) >= Z_RULE * r.value.stderr]
        report["verdicts"].update(violation_found=bool(violated), violations=violated)
        if not resolved:
            code = EXIT_INCONCLUSIVE
    elif args.mode == "divergence":
        try:
            lam = [float(v) for v in args.lambdas.split(",")]
        except ValueError:
            raise InvalidInputError(f"cannot parse --lambdas {args.lambdas!r}") from None
        if not all(math.isfinite(v) for v in lam):
            raise InvalidInputError("--lambdas must be finite")
        if sp.m2:
            family = lambda l: (lambda s: np.stack([np.zeros_like(s)] * sp.m1 + [np.full_like(s, -l)] * sp.m2, axis=1))
            desc = "u1 = 0, u2 = -lambda"
        else:
            family = lambda l: (lambda s: np.full((np.size(s), sp.m1), l))
            desc = "u1 = lambda"
        fit = divergence_probe(sp, family, lam, xs[0], batch, threads=args.threads)
        sim["divergence"] = {"family": desc, "fit": fit.to_dict()}
        report["verdicts"].update(upper_value=fit.verdict)
        if fit.verdict == "bounded":
            code = EXIT_INCONCLUSIVE
    return code


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the invalid-input code, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lqgame", description="LQ zero-sum stochastic differential games")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("problem", help="built-in name (example-6.1, example-6.2, example-6.3) or problem JSON file")
        p.add_argument("--steps", type=_positive_int, default=DEFAULT_STEPS, help="time steps (default %(default)s)")
        p.add_argument("--out", help="output directory for report.json and CSV files")
        p.add_argument("--tol-range", type=_positive_float, default=DEFAULT_RANGE_TOL, help="range-inclusion tolerance")
        p.add_argument("--tol-sign", type=_positive_float, default=DEFAULT_SIGN_TOL, help="definiteness tolerance")
        p.add_argument("--x", action="append", help="initial state, comma separated (repeatable; default all ones)")

    common(sub.add_parser("solve", help="integrate the Riccati equation and build the saddle strategy"))
    pv = sub.add_parser("verify", help="audit a candidate Riccati solution")
    common(pv)
    pv.add_argument("--p", required=True, help="candidate: const:<value>, poly:[c0,c1,...], json:<coefficient>, or a CSV file")
    pv.add_argument("--tol-residual", type=_positive_float, default=RESIDUAL_TOL, help="residual accepted as a solution")
    ps = sub.add_parser("simulate", help="Monte Carlo probes")
    common(ps)
    ps.add_argument("mode", choices=["saddle-test", "stationarity", "convexity", "divergence"])
    ps.add_argument("--paths", type=_positive_int, default=DEFAULT_PATHS, help="Monte Carlo paths (default %(default)s)")
    ps.add_argument("--seed", type=int, default=None, help="master seed (default: $LQGAME_SEED or 0)")
    ps.add_argument("--threads", type=_positive_int, default=1, help="worker threads (1 is bit-reproducible)")
    ps.add_argument("--delta", type=float, default=0.5, help="player-1 perturbation size for saddle-test")
    ps.add_argument("--player", type=int, choices=[1, 2], default=2, help="player for convexity")
    ps.add_argument("--lambdas", default="0,1,2,4", help="lambda values for divergence")
    return ap


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "simulate": cmd_simulate}


def run(argv=None) -> tuple[int, dict]:
    """Execute a command; returns ``(exit_code, report)``."""
    args = build_parser().parse_args(argv)
    config = {k: v for k, v in vars(args).items() if k not in ("command", "out")}
    report: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": config,
        "problem": None,
        "verdicts": {},
        "error": None,
    }
    out = Path(args.out) if args.out else None
    try:
        code = COMMANDS[args.command](args, report)
    except _Exit as exc:
        code = exc.code
        report["error"] = str(exc) or None
    except InvalidInputError as exc:
        code = EXIT_INVALID
        report["error"] = str(exc)
    except NumericOverflowError as exc:
        code = EXIT_BLOWUP
        report["error"] = str(exc)
    report["exit_code"] = code
    text = write_report(report, out)
    if out is None:
        sys.stdout.write(text)
    if report["error"]:
        print(f"lqgame: {report['error']}", file=sys.stderr)
    return code, report


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
