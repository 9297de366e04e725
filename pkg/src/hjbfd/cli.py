"""Command-line driver.

Configuration precedence: built-in defaults, then the JSON file given with
``--config``, then individual flags.  Exit codes: 0 success, 2 invalid
configuration, 3 solver or study failure, 4 failed check suite.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import formats
from .checks import SUITES
from .lattice import EmptyInteriorError, build_grid
from .problem import CATALOGUE, list_problems, make_problem, parse_params, validate_problem
from .solver import METHODS, MonotonicityError, SolverError, solve
from .stencil import DIRECTION_SETS, InfeasibleDecomposition, decompose_matrix, get_directions
from .study import NestingError, StudyError, run_convergence_study

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
RATE_FLOOR = 2.0 / 3.0 - 0.05
COMMANDS = ("solve", "study", "check", "decompose", "list-problems")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "solve"
    problem: str = "linear-manufactured-disk"
    params: dict = field(default_factory=dict)
    h: float = 0.05
    h_list: list = field(default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    method: str = "policy"
    linear_solver: str = "direct"
    tol: float = 1e-8
    max_iter: int = 500_000
    reference: str = "auto"
    output_dir: str = "hjbfd-out"
    plot: bool = False
    seed: int = 42
    threads: int = 1
    suites: list = field(default_factory=lambda: list(SUITES))
    matrix: list | None = None
    directions: str = "canonical"
    floor: float = 0.0

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; choose from {COMMANDS}")
        if self.command in ("solve", "study"):
            if self.problem not in CATALOGUE:
                raise ConfigError(f"unknown problem {self.problem!r}; available: "
                                  + ", ".join(sorted(CATALOGUE)))
            try:
                self.params = parse_params(self.problem, self.params)
            except (KeyError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        if not _is_number(self.tol) or not self.tol > 0:
            raise ConfigError("tol must be a positive number")
        if not _is_number(self.h) or not self.h > 0:
            raise ConfigError("h must be a positive number")
        if not self.h_list or any(not _is_number(h) or not h > 0 for h in self.h_list):
            raise ConfigError("h_list must hold positive numbers")
        if any(b >= a for a, b in zip(self.h_list, self.h_list[1:])):
            raise ConfigError(f"h_list must be strictly decreasing: {self.h_list}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.linear_solver not in ("direct", "gauss_seidel"):
            raise ConfigError("linear_solver must be 'direct' or 'gauss_seidel'")
        if self.reference not in ("auto", "exact", "fine-grid"):
            raise ConfigError("reference must be 'auto', 'exact' or 'fine-grid'")
        if not isinstance(self.max_iter, int) or self.max_iter < 1:
            raise ConfigError("max_iter must be a positive integer")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads must be a positive integer")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        bad = [s for s in self.suites if s not in SUITES]
        if bad or not self.suites:
            raise ConfigError(f"unknown suite(s) {bad}; available: {', '.join(SUITES)}")
        if self.directions not in DIRECTION_SETS:
            raise ConfigError(f"directions must be one of {sorted(DIRECTION_SETS)}")
        if not _is_number(self.floor) or self.floor < 0:
            raise ConfigError("floor must be nonnegative")
        if self.command == "decompose" and self.matrix is None:
            raise ConfigError("decompose needs --matrix")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjbfd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", dest="output_dir", help="output directory")
        p.add_argument("--seed", type=int)

    def solving(p):
        p.add_argument("--problem")
        p.add_argument("--param", action="append", default=[], metavar="KEY=JSON",
                       help="problem parameter (repeatable)")
        p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
        p.add_argument("--linear-solver", dest="linear_solver")
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--threads", type=int, help="max concurrent solves")
        p.add_argument("--plot", action="store_true", default=None, help="write SVG figures")

    s = sub.add_parser("solve", help="solve one problem at one step")
    common(s)
    solving(s)
    s.add_argument("--h", type=float)

    s = sub.add_parser("study", help="convergence study over a sequence of steps")
    common(s)
    solving(s)
    s.add_argument("--h-list", dest="h_list", help="comma-separated, decreasing")
    s.add_argument("--reference", help="auto, exact or fine-grid")

    s = sub.add_parser("check", help="run randomised property suites")
    common(s)
    s.add_argument("--suite", dest="suites", action="append",
                   help=f"one of {', '.join(SUITES)} (repeatable; default all)")

    s = sub.add_parser("decompose", help="split a matrix into direction dyads")
    common(s)
    s.add_argument("--matrix", help="JSON nested list")
    s.add_argument("--directions", help=f"one of {', '.join(sorted(DIRECTION_SETS))}")
    s.add_argument("--floor", type=float)

    s = sub.add_parser("list-problems", help="print the problem catalogue")
    common(s)
    return ap


def resolve_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    data: dict = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    data["command"] = args.command
    for key, val in vars(args).items():
        if key in ("config", "command", "param") or val is None:
            continue
        if key == "h_list":
            try:
                val = [float(x) for x in val.split(",") if x.strip()]
            except ValueError:
                raise ConfigError(f"bad --h-list {val!r}") from None
        if key == "matrix":
            val = _parse_value(val)
        data[key] = val
    for item in getattr(args, "param", []) or []:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        data.setdefault("params", {})
        data["params"] = dict(data["params"], **{k: _parse_value(v)})
    return RunConfig.from_json(data).validate()


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(cfg: RunConfig) -> int:
    p = make_problem(cfg.problem, cfg.params)
    out = _outdir(cfg)
    try:
        grid = build_grid(p.domain, cfg.h, p.directions)
    except EmptyInteriorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    val = validate_problem(p, cfg.h, grid.points[grid.interior])
    if not val.ok:
        print(formats.to_json(val.to_json()), file=sys.stderr, end="")
        print("error: problem fails validation at this step", file=sys.stderr)
        return EXIT_SOLVER
    status = EXIT_OK
    try:
        sol, rep = solve(p, grid, cfg.method, cfg.tol, cfg.max_iter,
                         linear_solver=cfg.linear_solver)
    except SolverError as exc:
        sol, rep = exc.solution, exc.report
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_SOLVER
    except MonotonicityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    (out / "solution.hjbgrid").write_text(formats.dump_grid(grid, sol))
    formats.write_json(out / "solve_report.json",
                       {"config": cfg.to_json(), "report": rep.to_json(),
                        "validation": val.to_json()})
    formats.write_json(out / "timing.json", {"wall_time": rep.wall_time})
    if cfg.plot:
        from .plotting import solution_plot
        solution_plot(sol, out / "solution.svg")
    print(f"{p.name}: h={cfg.h:.12g} method={rep.method} iterations={rep.iterations} "
          f"residual={rep.residual:.12g} converged={rep.converged}")
    return status


def cmd_study(cfg: RunConfig) -> int:
    p = make_problem(cfg.problem, cfg.params)
    out = _outdir(cfg)
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        rep = run_convergence_study(p, cfg.h_list, cfg.reference, method=cfg.method,
                                    tol=cfg.tol, max_iter=cfg.max_iter,
                                    threads=cfg.threads, seed=cfg.seed)
    except StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        rep, status = exc.partial, EXIT_SOLVER
    except (NestingError, ValueError, EmptyInteriorError, MonotonicityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    formats.write_json(out / "study_report.json", {"config": cfg.to_json(), "report": rep.to_json()})
    (out / "errors.csv").write_text(formats.error_table_csv(rep.rows()))
    formats.write_json(out / "timing.json", {"wall_time": time.perf_counter() - t0,
                                             "solves": [s.wall_time for s in rep.solves]})
    if cfg.plot:
        from .plotting import rate_plot
        rate_plot(rep, out / "rate.svg")
    print(formats.format_table(rep.rows()))
    if rep.rate is None:
        print("rate: undefined (" + "; ".join(rep.rate_notes) + ")")
    else:
        verdict = "PASS" if rep.rate >= RATE_FLOOR else "FAIL"
        print(f"rate: {rep.rate:.12g}  (floor {RATE_FLOOR:.12g}: {verdict})")
    return status


def cmd_check(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    results = []
    first = None
    for name in cfg.suites:
        res = SUITES[name](cfg.seed)
        results.append(res)
        print(f"{name}: {res.passed}/{res.total} passed"
              + (f" ({res.skipped} skipped)" if res.skipped else ""))
        if first is None and res.counterexample is not None:
            first = {"suite": name, "counterexample": res.counterexample}
    formats.write_json(out / "check_report.json",
                       {"seed": cfg.seed, "suites": [r.to_json() for r in results]})
    if first is not None:
        print(formats.to_json(first), end="")
        return EXIT_CHECK
    return EXIT_OK


def cmd_decompose(cfg: RunConfig) -> int:
    try:
        a = np.asarray(cfg.matrix, dtype=float)
        dirs = get_directions(cfg.directions, a.shape[0])
        lam = decompose_matrix(a, dirs, cfg.floor)
    except InfeasibleDecomposition as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rows = [(" ".join(str(int(c)) for c in e), format(x, ".12g"))
            for e, x in zip(dirs.unsigned, lam)]
    width = max(len(r[0]) for r in rows)
    for e, x in rows:
        print(f"{e.rjust(width)}  {x}")
    print(formats.to_json({"directions": dirs.to_json(), "lambda": lam.tolist()}), end="")
    return EXIT_OK


def cmd_list_problems(cfg: RunConfig) -> int:
    print(formats.to_json(list_problems()), end="")
    return EXIT_OK


HANDLERS = {"solve": cmd_solve, "study": cmd_study, "check": cmd_check,
            "decompose": cmd_decompose, "list-problems": cmd_list_problems}


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    return HANDLERS[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
