"""Command-line entry point: ``peridyn {build,run,bench,calibrate}``.

Every command reads a flat ``key = value`` config (see
:mod:`peridyn.config` for the keys) and writes only under the output
directory. Exit status is 0 on success, 1 for invalid input and 2 when a
run fails.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .core import DamageModel, DomainError, PeridynError
from .config import AXES, ConfigError, RunConfig, assemble, build_geometry, corrections_for, load_config
from .geometry import build_family
from .io import FormatError

log = logging.getLogger("peridyn")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _out_dir(args, cfg: Optional[RunConfig]) -> str:
    if args.out:
        return args.out
    if cfg is not None and cfg.has("out"):
        return cfg.path("out")
    return "peridyn_out"


def _cache_path(args, cfg: RunConfig) -> Optional[str]:
    if getattr(args, "cache", None):
        return args.cache
    return cfg.path("cache")


def cmd_build(args) -> int:
    from .io import save_cache

    cfg = load_config(args.config)
    particles, horizon = build_geometry(cfg)
    family = build_family(particles.coords, horizon)
    corrections = corrections_for(cfg, particles, family)
    path = _cache_path(args, cfg) or os.path.join(_out_dir(args, cfg), "family.pdnl")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_cache(path, family, corrections)
    counts = family.n_neigh
    print(f"nodes={family.n} group_size={family.group_size} bonds={family.bond_count()} "
          f"family_min={counts.min()} family_max={counts.max()} cache={path}")
    return EXIT_OK


def _load_family(args, cfg: RunConfig):
    from .io import load_cache

    path = _cache_path(args, cfg)
    if path is None:
        return None, None
    if not os.path.exists(path):
        raise ConfigError(f"neighbour-list cache {path} does not exist; run 'build' first")
    return load_cache(path)


def _write_tips(path: str, series) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tip", "step", "ux", "uy", "uz", "vx", "vy", "vz", "ax", "ay", "az",
                    "body_fx", "body_fy", "body_fz", "ext_fx", "ext_fy", "ext_fz"])
        for name, s in series.items():
            cols = [s.array(k) for k in ("u", "ud", "udd", "body_force", "force")]
            for k, step in enumerate(s.step):
                w.writerow([name, step] + ["%.17g" % v for c in cols for v in c[k]])


def cmd_run(args) -> int:
    from .io import Snapshot, load_state, save_state, write_vtk

    cfg = load_config(args.config)
    family, corrections = _load_family(args, cfg)
    asm = assemble(cfg, family, corrections, args.precision, args.variant)
    model = asm.model
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    if args.restart:
        state = load_state(args.restart)
        first = state.step if args.first_step is None else args.first_step
        if state.u.dtype != model.dtype:
            raise DomainError(f"restart state is {state.u.dtype}, the run uses {np.dtype(model.dtype)}")
    else:
        if args.first_step is not None:
            raise DomainError("--first-step needs --restart")
        state = model.initial_state(ud=asm.initial_velocity.astype(model.dtype))
        first = 0
    remaining = asm.steps - first
    if remaining < 1:
        raise DomainError(f"first step {first} is not before the final step {asm.steps}")
    observers = []
    if cfg.bool("vtk"):
        def vtk(m, st, _force):
            snap = Snapshot(st.step, m.particles.coords, st.u, st.ud, m.damage(st))
            write_vtk(os.path.join(out, f"snapshot_{st.step:07d}.vtk"), snap)
        observers.append(vtk)
    state, series = model.simulate(remaining, state=state, first_step=first,
                                   write_every=asm.write_every, out_dir=out, observers=observers)
    _write_tips(os.path.join(out, "tips.csv"), series)
    save_state(os.path.join(out, "state.pdst"), state)
    print(f"steps={first}..{state.step} dt={model.dt:.6g} max_damage={model.damage(state).max():.4f} out={out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import memory_table, run_scaling_suite

    cfg = load_config(args.config) if args.config else RunConfig({}, {}, [])
    ints = lambda key, default: cfg.ints(key) or list(default)
    sizes = ints("bench.sizes", (20000, 40000, 80000))
    groups = ints("bench.group_sizes", (64, 128))
    variants = (cfg.str("bench.variants") or "bpr").split()
    for v in variants:
        if v not in ("bpr", "node"):
            raise ConfigError(f"unknown bench variant {v!r}")
    steps = cfg.int("bench.steps", 200)
    repeats = cfg.int("bench.repeats", 3)
    if steps < 1 or repeats < 1:
        raise ConfigError("bench.steps and bench.repeats must be positive")
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    report = run_scaling_suite(sizes, groups, variants, steps=steps, repeats=repeats)
    report.write_csv(os.path.join(out, "bench.csv"))
    lines = [report.summary(), "memory model, max nodes (millions) in 11 GiB for N = 64 128 256:"]
    for (multi, corr), row in memory_table().items():
        lines.append(f"multi_material={int(multi)} corrections={int(corr)} " + " ".join(f"{v:.1f}" for v in row))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "bench_summary.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibrate import PARAMETERS, CurveProblem, ExperimentCurve, calibrate_trilinear

    cfg = load_config(args.config)
    target_path = cfg.path("calibrate.target")
    if target_path is None:
        raise ConfigError("calibrate.target is required")
    target = ExperimentCurve.from_csv(target_path, label="target")
    brackets = {}
    for name in ("c",) + PARAMETERS:
        vals = cfg.floats(f"calibrate.{name}", 2)
        if vals is not None:
            if not 0 < vals[0] < vals[1]:
                raise ConfigError(f"calibrate.{name} must satisfy 0 < lo < hi")
            brackets[name] = tuple(vals)
    c_fixed = cfg.float("c")
    if "c" not in brackets and c_fixed is None:
        raise ConfigError("give c or a calibrate.c bracket")
    # the stiffest candidate sets the automatic time step
    c_dt = brackets["c"][1] if "c" in brackets else c_fixed
    placeholder = DamageModel.pmb(c_dt, 1e30, damping=cfg.float("damping", 0.0))
    family, corrections = _load_family(args, cfg)
    asm = assemble(cfg, family, corrections, args.precision, args.variant, law=placeholder)
    axis = cfg.str("calibrate.axis", "x")
    if axis not in AXES:
        raise ConfigError("calibrate.axis must be x, y or z")
    problem = CurveProblem(asm.model, asm.steps, asm.write_every, cfg.str("calibrate.tip", "grip"),
                           axis=AXES[axis], kink=cfg.float("kink", 0.25),
                           force_sign=cfg.float("calibrate.force_sign", -1.0))
    order = (cfg.str("calibrate.order") or " ".join(PARAMETERS)).split()
    result = calibrate_trilinear(problem, target, brackets, order=order,
                                 c=None if "c" in brackets else c_fixed,
                                 max_cycles=cfg.int("calibrate.max_cycles", 6))
    out = _out_dir(args, cfg)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "estimates.txt")
    result.write(path)
    print(" ".join(f"{k}={v:.2g}" for k, v in result.estimates.items())
          + f" converged={result.converged} cycles={result.cycles} out={path}")
    return EXIT_OK


COMMANDS = {"build": cmd_build, "run": cmd_run, "bench": cmd_bench, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peridyn", description="Bond-based peridynamics on a neighbour-list engine.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("build", "build and cache the neighbour list"),
                            ("run", "run a simulation"),
                            ("bench", "time the force kernels and print the memory model"),
                            ("calibrate", "fit a trilinear law to a force-displacement curve")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "bench", help="key = value config file")
        p.add_argument("--out", help="output directory (overrides the out key)")
        if name in ("build", "run", "calibrate"):
            p.add_argument("--cache", help="neighbour-list cache file")
        if name in ("run", "calibrate"):
            p.add_argument("--precision", choices=("f32", "f64"))
            p.add_argument("--variant", choices=("bpr", "node"))
        if name == "run":
            p.add_argument("--restart", help="state file to resume from")
            p.add_argument("--first-step", type=int, help="step index of the restart state")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DomainError, FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PeridynError, OSError, FloatingPointError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
