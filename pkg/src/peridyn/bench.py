"""Desk-scale performance harness and the global-memory model."""
from __future__ import annotations

import csv
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import DamageModel, DomainError, NeighborList, ParticleSet, pmb_micromodulus
from .engine import Model, VelocityVerlet
from .geometry import build_family, regular_grid

log = logging.getLogger(__name__)

GIB = 1 << 30

# horizon/spacing ratios whose interior lattice family just fits each group size
# (32, 56, 122 and 250 neighbours); none of them puts a lattice point on the horizon
GROUP_HORIZON_RATIO = {32: 2.1, 64: 2.3, 128: math.pi, 256: 3.9}


def memory_estimate(n: int, N: int, multi_material: bool = False,
                    stiffness_corrections: bool = False) -> int:
    """Bytes of global memory for ``n`` nodes with group size ``N``.

    Sixteen double-precision per-node values, the int32 neighbour list with
    three extra int32 per node, two more int32 per bond slot for bond types
    and history when several materials or an n-linear law are used, and one
    double per bond slot for stiffness corrections.
    """
    if n < 1 or N < 1:
        raise DomainError("n and N must be at least 1")
    doubles = 16 + (N if stiffness_corrections else 0)
    ints = (3 * N if multi_material else N) + 3
    return n * (doubles * 8 + ints * 4)


def max_nodes(memory_bytes: float, N: int, multi_material: bool = False,
              stiffness_corrections: bool = False) -> int:
    return int(memory_bytes // memory_estimate(1, N, multi_material, stiffness_corrections))


def memory_table(memory_bytes: float = 11 * GIB, group_sizes=(64, 128, 256)) -> Dict[Tuple[bool, bool], List[float]]:
    """Max node counts in millions, keyed by (multi_material, stiffness_corrections)."""
    rows = {}
    for multi in (False, True):
        for corr in (False, True):
            rows[(multi, corr)] = [max_nodes(memory_bytes, N, multi, corr) / 1e6 for N in group_sizes]
    return rows


def family_size_spread(family: NeighborList) -> Tuple[float, float, float]:
    """(min, max, mean) family size; an isolated single node gives zeros."""
    counts = family.n_neigh
    if counts.max(initial=0) == 0:
        return 0, 0, 0.0
    return int(counts.min()), int(counts.max()), float(counts.mean())


def bench_grid_counts(n: int, width: int) -> Tuple[int, int, int]:
    """Bar of ``width`` x ``width`` cross-section holding about ``n`` nodes."""
    return max(1, round(n / (width * width))), width, width


@dataclass
class BenchRow:
    n: int
    N: int
    variant: str
    steps: int
    wall_s: float


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    def wall(self, n: int, N: int, variant: str) -> float:
        for r in self.rows:
            if (r.n, r.N, r.variant) == (n, N, variant):
                return r.wall_s
        raise KeyError((n, N, variant))

    def fits(self) -> Dict[Tuple[int, str], Dict[str, float]]:
        """Least-squares wall = a + b n per (N, variant).

        ``nodes_per_second`` is 1/b, the number of extra nodes that adds one
        second of wall time for the timed number of steps; ``r2`` measures
        linearity.
        """
        out = {}
        keys = sorted({(r.N, r.variant) for r in self.rows})
        for key in keys:
            pts = [(r.n, r.wall_s) for r in self.rows if (r.N, r.variant) == key]
            if len({n for n, _ in pts}) < 2:
                continue
            x, y = np.array(pts, dtype=float).T
            b, a = np.polyfit(x, y, 1)
            resid = y - (a + b * x)
            ss = float(((y - y.mean()) ** 2).sum())
            r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0
            out[key] = {"slope": float(b), "intercept": float(a), "r2": r2,
                        "nodes_per_second": float(1.0 / b) if b > 0 else math.inf}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "N", "variant", "steps", "wall_s"])
            for r in self.rows:
                w.writerow([r.n, r.N, r.variant, r.steps, "%.6f" % r.wall_s])

    def summary(self) -> str:
        lines = []
        for (N, variant), f in self.fits().items():
            lines.append(f"N={N} variant={variant} slope={f['slope']:.4g} s/node "
                         f"nodes_per_second={f['nodes_per_second']:.4g} r2={f['r2']:.4f}")
        lines += [f"skipped: {s}" for s in self.skipped]
        return "\n".join(lines) + "\n"


def available_memory() -> int:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return 8 * GIB


def engine_footprint(n: int, N: int, itemsize: int = 8) -> int:
    """Approximate bytes held by a bench model and its state."""
    # entries twice (family and live copy), history, and ~24 per-node vectors
    return n * N * (8 + itemsize) + n * 24 * 3 * itemsize


def build_bench_model(n: int, N: int, width: int = 27, spacing: float = 1e-3,
                      variant: str = "bpr", seed: int = 0) -> Tuple[Model, np.ndarray]:
    """A steel-like bar with a small random displacement field.

    Returns the model and the initial displacement. The critical stretch is
    far above the strains reached, so every variant sees identical bonds.
    """
    if N not in GROUP_HORIZON_RATIO:
        raise DomainError(f"no bench horizon for group size {N}; choose from {sorted(GROUP_HORIZON_RATIO)}")
    coords = regular_grid(bench_grid_counts(n, width), spacing)
    horizon = GROUP_HORIZON_RATIO[N] * spacing
    family = build_family(coords, horizon)
    particles = ParticleSet(coords, spacing ** 3, 7800.0)
    c = pmb_micromodulus(126.67e9, horizon)
    model = Model(particles, family, DamageModel.pmb(c, 1.0), VelocityVerlet(1e-8), variant=variant)
    u0 = 1e-6 * spacing * np.random.default_rng(seed).standard_normal((len(coords), 3))
    return model, u0


def time_model(model: Model, u0: np.ndarray, steps: int, repeats: int = 3) -> float:
    """Median wall time of ``steps`` steps; the first call is a warm-up."""
    start = model.initial_state(u=u0)
    model.simulate(1, state=start.copy())
    walls = []
    for _ in range(repeats):
        state = start.copy()
        t0 = time.perf_counter()
        model.simulate(steps, state=state)
        walls.append(time.perf_counter() - t0)
    return statistics.median(walls)


def run_scaling_suite(sizes: Sequence[int], group_sizes: Sequence[int], variants: Sequence[str] = ("bpr",),
                      steps: int = 200, repeats: int = 3, memory_limit: Optional[int] = None,
                      width: int = 27) -> BenchReport:
    """Time every (n, N, variant) combination sequentially.

    Family construction is excluded from the timings. Combinations whose
    footprint exceeds ``memory_limit`` bytes are skipped and listed in the
    report.
    """
    limit = available_memory() // 2 if memory_limit is None else memory_limit
    report = BenchReport()
    for N in group_sizes:
        for n in sizes:
            if engine_footprint(n, N) > limit:
                note = f"n={n} N={N}: needs ~{engine_footprint(n, N) / GIB:.2f} GiB, limit {limit / GIB:.2f} GiB"
                log.warning("skipping %s", note)
                report.skipped.append(note)
                continue
            model, u0 = build_bench_model(n, N, width=width)
            for variant in variants:
                m = model if variant == model.variant else _with_variant(model, variant)
                wall = time_model(m, u0, steps, repeats)
                report.rows.append(BenchRow(m.n, N, variant, steps, wall))
                log.info("n=%d N=%d %s: %.3f s", m.n, N, variant, wall)
    return report


def _with_variant(model: Model, variant: str) -> Model:
    other = model.with_damage_model(model.damage_model)
    other.variant = variant
    return other
