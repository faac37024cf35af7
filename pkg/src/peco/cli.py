"""Command-line entry point ``peco``.

Exit codes: 0 success, 2 a computation stage failed, 3 bad configuration or
unreadable input.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import data as data_mod
from .densities import ProductDensity, alpha_from_beta, contour_grid
from .dep import SOLVERS, Solver, SolverConfig, build_dep
from .dsl import ProblemSpec
from .errors import ConfigError, DimensionError, DslSyntaxError, PecoError, StageError
from .pipeline import PipelineConfig, run_pipeline
from .samplesize import RhoInput, monte_carlo_rho, plan_sample_size, rho
from .sdds import MAX_EXHAUSTIVE, SddsFamily, enumerate_sdds

EXIT_OK = 0
EXIT_STAGE = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _write_text(path, text: str) -> None:
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _read_csv(path) -> data_mod.DataSet:
    try:
        return data_mod.read_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _load_family(path) -> SddsFamily:
    try:
        return SddsFamily.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad family file {path}: {exc}") from None


# subcommands

def cmd_dalpha(args) -> int:
    d = _read_csv(args.data)
    eta = args.eta if args.eta is not None else data_mod.rule_of_thumb_eta(d)
    out = data_mod.build_d_alpha(d, args.alpha, eta, args.norm)
    data_mod.write_csv(out, args.out)
    print(json.dumps({"d": len(d), "d_alpha": len(out), "eta": eta}), file=sys.stderr)
    return EXIT_OK


def cmd_samplesize(args) -> int:
    family = _load_family(args.family)
    plan = plan_sample_size(RhoInput.from_family(family, args.dalpha_size), args.target, args.seed)
    _write_json(args.out, plan.to_dict())
    return EXIT_OK


def cmd_validate_rho(args) -> int:
    family = _load_family(args.family)
    inp = RhoInput.from_family(family, args.dalpha_size)
    exact = rho(inp, args.z)
    mc = monte_carlo_rho(family, args.dalpha_size, args.z, args.trials, args.seed)
    print(json.dumps({"z": args.z, "rho": exact, "monte_carlo": mc, "trials": args.trials,
                      "seed": args.seed, "abs_diff": abs(mc - exact)}, sort_keys=True))
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    extra = _load_json(args.solver_config) if getattr(args, "solver_config", None) else {}
    if getattr(args, "solver", None):
        extra["solver_id"] = args.solver
    return SolverConfig.from_dict(extra)


def _load_problem(path) -> ProblemSpec:
    try:
        return ProblemSpec.load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def cmd_solve(args) -> int:
    spec = _load_problem(args.problem)
    emb = _read_csv(args.embed)
    cfg = _solver_config(args)
    sol = Solver(spec, cfg).solve(build_dep(spec, emb, allow_empty=True))
    _write_text(args.out, sol.to_json() + "\n")
    return EXIT_OK if sol.status == "optimal" else EXIT_STAGE


def cmd_sdds(args) -> int:
    spec = _load_problem(args.problem)
    scen = data_mod.underlying_set(_read_csv(args.scenarios))
    if scen.dimension != spec.u:
        raise DimensionError(f"scenarios have dimension {scen.dimension}, problem expects u={spec.u}")
    if len(scen) > MAX_EXHAUSTIVE:
        raise ConfigError(f"{len(scen)} scenarios; sdds enumerates at most {MAX_EXHAUSTIVE}")
    family = enumerate_sdds(spec, scen, _solver_config(args))
    _write_text(args.out, json.dumps(family.to_dict(), sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    report = run_pipeline(PipelineConfig.load(args.config), args.store)
    _write_text(args.out, report.to_json())
    return EXIT_OK


def cmd_alpha_from_beta(args) -> int:
    d = ProductDensity.from_dict(_load_json(args.density))
    print(json.dumps({"beta": args.beta, "alpha": alpha_from_beta(d, args.beta, normalize=args.normalize)}))
    return EXIT_OK


def cmd_contour(args) -> int:
    d = ProductDensity.from_dict(_load_json(args.density))
    rows = contour_grid(d, args.alpha, args.nodes)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["xi1", "xi2", "density", "member"])
        for a, b, p, m in rows:
            w.writerow([repr(a), repr(b), repr(p), int(m)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="peco", description="Probable-event constrained optimization toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("dalpha", help="extract probable data points")
    s.add_argument("--data", required=True)
    s.add_argument("--alpha", type=float, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--eta", type=float)
    g.add_argument("--eta-rule", action="store_true", help="rule-of-thumb vicinity radius")
    s.add_argument("--norm", choices=data_mod.NORMS, default="l2")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dalpha)

    s = sub.add_parser("samplesize", help="smallest z reaching a target rho")
    s.add_argument("--family", required=True)
    s.add_argument("--dalpha-size", type=int, required=True)
    s.add_argument("--target", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_samplesize)

    s = sub.add_parser("validate-rho", help="compare rho(z) with Monte Carlo")
    s.add_argument("--family", required=True)
    s.add_argument("--dalpha-size", type=int, required=True)
    s.add_argument("--z", type=int, required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_validate_rho)

    s = sub.add_parser("solve", help="solve a data-embedded program")
    s.add_argument("--problem", required=True)
    s.add_argument("--embed", required=True)
    s.add_argument("--solver", choices=SOLVERS, required=True)
    s.add_argument("--solver-config", help="JSON file of extra solver settings")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sdds", help="enumerate solution-determining sets")
    s.add_argument("--problem", required=True)
    s.add_argument("--scenarios", required=True)
    s.add_argument("--solver", choices=SOLVERS)
    s.add_argument("--solver-config", help="JSON file of extra solver settings")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sdds)

    s = sub.add_parser("pipeline", help="run the full procedure")
    s.add_argument("--config", required=True)
    s.add_argument("--store", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("alpha-from-beta", help="density level for a chance-constraint risk")
    s.add_argument("--density", required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--normalize", action="store_true", help="measure beta against the total mass")
    s.set_defaults(func=cmd_alpha_from_beta)

    s = sub.add_parser("contour", help="density grid with superlevel membership")
    s.add_argument("--density", required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--nodes", type=int, default=201)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_contour)
    return p


def _is_config_error(exc: BaseException) -> bool:
    return isinstance(exc, (ConfigError, DslSyntaxError, DimensionError))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"peco: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except PecoError as exc:
        code = EXIT_CONFIG if _is_config_error(exc) else EXIT_STAGE
        print(f"peco: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except ValueError as exc:
        print(f"peco: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
