"""Command-line entry point: ``mfbsvie {solve,particles,chaos,validate} --config run.toml``.

Exit codes: 0 success, 2 Picard non-convergence (artifacts still written),
1 validation or other run errors (message on standard error).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import io
from .bounds import a_priori_bounds
from .chaos import run_study
from .config import RunConfig
from .errors import MfbsvieError, NonConvergenceError, ValidationError
from .generators import assumption_report, resolved_constants
from .particles import solve_particles
from .solver import picard_solve

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < (1 << 64):
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfbsvie", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve the mean-field equation"),
                        ("particles", "solve the N-particle system"),
                        ("chaos", "run a propagation-of-chaos N-sweep"),
                        ("validate", "print the assumption report and a-priori bounds")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker processes for chaos replications (default: all cores)")
        p.add_argument("--seed-override", type=_seed, default=None,
                       help="replace the config seed (unsigned 64-bit)")
    return parser


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out if args.out is not None else cfg.output)


def cmd_solve(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    status = EXIT_OK
    try:
        sol = picard_solve(cfg.problem(), cfg.picard)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sol, status = exc.solution, EXIT_NONCONVERGED
    io.write_solution(out, sol, cfg.hash, cfg.seed)
    d = sol.diagnostics
    print(f"converged={d['converged']} iterations={d['iterations']} "
          f"final_norm={d['norm_trail'][-1]:.3e} -> {out}")
    return status


def cmd_particles(args, cfg: RunConfig) -> int:
    if cfg.particles is None:
        raise ValidationError("the particles command needs a [particles] table")
    out = _out_dir(args, cfg)
    status = EXIT_OK
    try:
        sol = solve_particles(cfg.particles["N"], cfg.problem(with_ensemble=False), cfg.picard,
                              seed=cfg.seed, paths=cfg.paths, offdiag=cfg.particles["offdiag"])
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sol, status = exc.solution, EXIT_NONCONVERGED
    io.write_particles(out, sol, cfg.hash, cfg.seed)
    print(f"converged={sol.diagnostics['converged']} iterations={sol.diagnostics['iterations']} "
          f"-> {out}")
    return status


def cmd_chaos(args, cfg: RunConfig) -> int:
    if cfg.study is None:
        raise ValidationError("the chaos command needs a [study] table")
    report = run_study(cfg.study, cfg.problem(with_ensemble=False), cfg.picard,
                       workers=max(1, args.threads), config_hash=cfg.hash)
    io.write_chaos(_out_dir(args, cfg), report, cfg.hash, cfg.seed)
    print(report.verdict())
    return EXIT_OK


def cmd_validate(args, cfg: RunConfig) -> int:
    T = cfg.grid.horizon
    report = assumption_report(cfg.generator, cfg.free_term, T)
    payload = {"assumptions": report}
    if cfg.generator.is_quadratic:
        c = resolved_constants(cfg.generator, cfg.free_term, T)
        payload["bounds"] = a_priori_bounds(c, T, growth=cfg.generator.growth).as_dict()
    print(json.dumps(io.to_jsonable(payload), sort_keys=True, indent=2))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "particles": cmd_particles, "chaos": cmd_chaos,
            "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config, args.seed_override)
        return COMMANDS[args.command](args, cfg)
    except MfbsvieError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
