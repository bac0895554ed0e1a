"""Point estimation of damage-law parameters from a force-control curve.

The inner solve is the explicit engine; the outer loop is a per-parameter
bisection on the mean squared error between simulated and target curves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import DISPLACEMENT, DamageModel, DomainError, SimulationState
from .engine import Model

log = logging.getLogger(__name__)

PARAMETERS = ("s0", "s1", "sc")


@dataclass
class ExperimentCurve:
    """Force samples against a strictly increasing control value."""

    control: np.ndarray
    force: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.control = np.asarray(self.control, dtype=np.float64).ravel()
        self.force = np.asarray(self.force, dtype=np.float64).ravel()
        if self.control.shape != self.force.shape or len(self.control) < 2:
            raise DomainError("a curve needs at least two (control, force) samples")
        if not (np.isfinite(self.control).all() and np.isfinite(self.force).all()):
            raise DomainError("curve samples must be finite")
        if np.any(np.diff(self.control) <= 0):
            raise DomainError("control values must be strictly increasing")

    @classmethod
    def from_csv(cls, path, label: str = "") -> "ExperimentCurve":
        from .io import read_curve

        control, force = read_curve(path)
        return cls(control, force, label or str(path))

    def to_csv(self, path) -> None:
        from .io import write_curve

        write_curve(path, self.control, self.force)

    def up_to(self, limit: float) -> "ExperimentCurve":
        keep = self.control <= limit
        return ExperimentCurve(self.control[keep], self.force[keep], self.label)

    @property
    def peak_control(self) -> float:
        return float(self.control[np.argmax(self.force)])


def _as_pair(curve) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(curve, ExperimentCurve):
        return curve.control, curve.force
    control, force = curve
    return np.asarray(control, dtype=np.float64), np.asarray(force, dtype=np.float64)


def mse_loss(sim_curve, exp_curve) -> float:
    """Mean squared force error at the experimental control values.

    The simulated curve is linearly interpolated (held constant beyond its
    ends). It may be an :class:`ExperimentCurve` or a ``(control, force)``
    pair whose control values are sorted here if necessary.
    """
    xs, fs = _as_pair(sim_curve)
    xe, fe = _as_pair(exp_curve)
    if len(xs) == 0 or len(xe) == 0:
        raise DomainError("curves must be nonempty")
    order = np.argsort(xs, kind="stable")
    xs, fs = xs[order], fs[order]
    if xs[-1] < xe[0] or xs[0] > xe[-1]:
        raise DomainError("simulated and experimental control ranges do not overlap")
    resampled = np.interp(xe, xs, fs)
    return float(np.mean((resampled - fe) ** 2))


def significant_unit(x: float, sig_figs: int = 2) -> float:
    """Place value of the last kept digit when ``x`` is written to ``sig_figs`` figures."""
    if x == 0 or not math.isfinite(x):
        raise DomainError("significant figures are undefined for zero or non-finite values")
    return 10.0 ** (math.floor(math.log10(abs(x))) - (sig_figs - 1))


def round_sig(x: float, sig_figs: int = 2) -> float:
    if x == 0:
        return 0.0
    return float(f"{x:.{sig_figs - 1}e}")


def binary_search_parameter(objective: Callable[[float], float], lo: float, hi: float,
                            sig_figs: int = 2, name: str = "parameter",
                            trace: Optional[list] = None, tolerance: Optional[float] = None) -> float:
    """Bisect toward the lower objective until the bracket is below one significant unit.

    Each iteration compares the objective a quarter of the half-width on
    either side of the midpoint and keeps the half on the better side, which
    assumes the objective is unimodal on the bracket. The result is the
    final midpoint rounded to ``sig_figs`` figures. With an absolute
    ``tolerance`` the search stops once the bracket is narrower than it and
    returns the unrounded midpoint.
    """
    if not lo < hi:
        raise DomainError(f"empty bracket [{lo}, {hi}] for {name}")
    if tolerance is not None and not tolerance > 0:
        raise DomainError("tolerance must be positive")
    while True:
        mid = 0.5 * (lo + hi)
        width = hi - lo
        if tolerance is not None:
            if width < tolerance:
                return mid
        else:
            scale = mid if mid != 0 else max(abs(lo), abs(hi))
            if width < significant_unit(scale, sig_figs):
                return round_sig(mid, sig_figs)
        left, right = mid - width / 8.0, mid + width / 8.0
        f_left, f_right = objective(left), objective(right)
        for x, f in ((left, f_left), (right, f_right)):
            if not math.isfinite(f):
                raise DomainError(f"objective is not finite at {name} = {x!r}")
        if trace is not None:
            trace.append((lo, hi, f_left, f_right))
        if f_left <= f_right:
            hi = mid
        else:
            lo = mid


@dataclass
class CurveProblem:
    """Displacement-driven forward problem producing a force-control curve.

    ``tip`` names the tip set whose mean displacement along ``axis`` is the
    control value; the reaction is ``force_sign`` times the summed bond force
    on that set. The model's damage law is replaced for every evaluation
    while geometry, boundary conditions and damping are kept.
    """

    model: Model
    steps: int
    write_every: int
    tip: str
    axis: int = 0
    kink: float = 0.25
    force_sign: float = -1.0

    def __post_init__(self):
        if self.tip not in self.model.bc.tip_sets:
            raise DomainError(f"model has no tip set named {self.tip!r}")
        if self.steps < 1 or self.write_every < 1:
            raise DomainError("steps and write_every must be positive")

    @property
    def damping(self) -> float:
        return self.model.damage_model.damping

    def trilinear(self, c, s0, s1, sc) -> DamageModel:
        return DamageModel.trilinear(c, s0, s1, sc, self.kink, damping=self.damping)

    def linear(self, c) -> DamageModel:
        # a PMB law whose critical stretch is never reached
        return DamageModel.pmb(c, 1e30, damping=self.damping)

    def damageable_history(self, state: SimulationState) -> float:
        """Largest stretch reached by any bond that is allowed to break."""
        entries = self.model.family.entries
        no_fail = self.model.bc.no_failure
        exempt = no_fail[:, None] | no_fail[np.where(entries >= 0, entries, 0)]
        live = (entries >= 0) & ~exempt
        return float(state.bond_history[live].max(initial=0.0))

    def control_at(self, step: int) -> float:
        """Prescribed control value at ``step`` (first node of the tip set)."""
        bc = self.model.bc
        node = int(bc.tip_sets[self.tip][0])
        if bc.kind[node, self.axis] != DISPLACEMENT:
            raise DomainError("the tip set is not displacement controlled along the control axis")
        return float(bc.magnitude[node, self.axis] * bc.ramps[bc.ramp_id[node, self.axis]].scale(step))

    def steps_to_reach(self, control: float) -> int:
        """First write step at which the control reaches ``control`` (capped at ``steps``)."""
        for step in range(self.write_every, self.steps + 1, self.write_every):
            if self.control_at(step) >= control:
                return step
        return self.steps - self.steps % self.write_every

    def run(self, law: DamageModel, steps: Optional[int] = None,
            state: Optional[SimulationState] = None, observers=()) -> Tuple[SimulationState, np.ndarray, np.ndarray]:
        """Simulate and return ``(state, control, force)`` sampled at every write."""
        model = self.model.with_damage_model(law)
        steps = self.steps if steps is None else steps
        first = None if state is None else state.step
        state, series = model.simulate(steps, state=state, first_step=first,
                                       write_every=self.write_every, observers=observers)
        tip = series[self.tip]
        control = tip.array("u")[:, self.axis] if tip.step else np.zeros(0)
        force = self.force_sign * tip.array("body_force")[:, self.axis] if tip.step else np.zeros(0)
        return state, control, force

    def curve(self, law: DamageModel, label: str = "") -> ExperimentCurve:
        _, control, force = self.run(law)
        return ExperimentCurve(control, force, label)


def elastic_slope(control, force) -> float:
    """Least-squares slope through the origin."""
    control = np.asarray(control, dtype=np.float64)
    return float(np.dot(control, force) / np.dot(control, control))


@dataclass
class CalibrationResult:
    c: float
    s0: float
    s1: float
    sc: float
    converged: bool
    cycles: int
    evaluations: int
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def estimates(self) -> Dict[str, float]:
        return {"c": self.c, "s0": self.s0, "s1": self.s1, "sc": self.sc}

    def write(self, path) -> None:
        lines = [f"{k}={v!r}" for k, v in self.estimates.items()]
        lines += [f"converged={str(self.converged).lower()}", f"cycles={self.cycles}",
                  f"evaluations={self.evaluations}"]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _ordered_bracket(name, bracket, current, sig_figs):
    lo, hi = bracket
    i = PARAMETERS.index(name)
    if i > 0:
        lo = max(lo, current[PARAMETERS[i - 1]] * (1 + 1e-9))
    if i < len(PARAMETERS) - 1:
        hi = min(hi, current[PARAMETERS[i + 1]] * (1 - 1e-9))
    if not lo < hi:
        raise DomainError(f"bracket for {name} is empty once ordered against its neighbours")
    return lo, hi


def _feasible_steps(base, d, brackets, t_lo: float, t_hi: float) -> Tuple[float, float]:
    """Clip [t_lo, t_hi] so base + t d stays in the brackets with s0 < s1 < sc."""
    for k in PARAMETERS:
        lo, hi = brackets[k]
        if d[k] > 0:
            t_lo, t_hi = max(t_lo, (lo - base[k]) / d[k]), min(t_hi, (hi - base[k]) / d[k])
        elif d[k] < 0:
            t_lo, t_hi = max(t_lo, (hi - base[k]) / d[k]), min(t_hi, (lo - base[k]) / d[k])
    for a, b in zip(PARAMETERS, PARAMETERS[1:]):
        gap, rate = base[b] - base[a], d[b] - d[a]
        # keep a margin so the ends of the interval stay strictly ordered
        if rate < 0:
            t_hi = min(t_hi, 0.999 * gap / -rate)
        elif rate > 0:
            t_lo = max(t_lo, -0.999 * gap / rate)
    return t_lo, t_hi


def _line_search(loss, base, d, brackets, search_figs, t_lo: float = -1.0, t_hi: float = 4.0):
    """Bisect the loss along base + t d and return the better of that point and ``base``.

    The step resolution matches one unit in the ``search_figs`` figure of
    the most sensitive parameter.
    """
    moving = [k for k in PARAMETERS if d[k] != 0]
    if not moving:
        return dict(base)
    t_lo, t_hi = _feasible_steps(base, d, brackets, t_lo, t_hi)
    if not t_lo < t_hi:
        return dict(base)
    tol = min(significant_unit(base[k], search_figs) / abs(d[k]) for k in moving)

    def point(t):
        return {k: base[k] + t * d[k] for k in PARAMETERS}

    if t_hi - t_lo < tol:
        return dict(base)
    t = binary_search_parameter(lambda t: loss(point(t)), t_lo, t_hi, name="direction step", tolerance=tol)
    best = point(t)
    return best if loss(best) < loss(base) else dict(base)


def calibrate_trilinear(problem: CurveProblem, target: ExperimentCurve,
                        brackets: Dict[str, Tuple[float, float]],
                        order: Sequence[str] = PARAMETERS, c: Optional[float] = None,
                        max_cycles: int = 6, elastic_fraction: float = 0.3,
                        sig_figs: int = 2, warm_start: bool = True,
                        search_figs: Optional[int] = None, directions: int = 2) -> CalibrationResult:
    """Fit (c, s0, s1, sc) of a trilinear law to ``target``.

    ``c`` is fitted first on the elastic part of the curve (controls up to
    ``elastic_fraction`` of the control at peak force) unless given. The
    stretch parameters are then refined one at a time in ``order`` until a
    full cycle leaves all of them unchanged at ``sig_figs`` figures, each
    having moved less than a quarter of a unit in the last reported figure,
    or ``max_cycles`` is reached. With ``warm_start`` every evaluation resumes
    from a saved state in which no bond has reached the lower end of the s0
    bracket, so the shared elastic prefix is simulated only once.

    Two parameters that compensate each other produce a narrow curved
    valley in which steps along the coordinates alone advance very slowly.
    The net displacement of every cycle is therefore added to a set of
    search directions (the ``directions`` most recent ones are kept, as in
    Powell's conjugate direction method) and each cycle also bisects along
    every stored direction.
    The stretch searches resolve ``search_figs`` figures (default one more
    than ``sig_figs``) and cycling keeps the unrounded values: rounding every
    coordinate to ``sig_figs`` between searches can lock the cycle onto a
    neighbouring grid point when two parameters compensate each other.
    Reported estimates are rounded to ``sig_figs``.
    """
    search_figs = sig_figs + 1 if search_figs is None else search_figs
    if search_figs < sig_figs:
        raise DomainError("search_figs must be at least sig_figs")
    if sorted(order) != sorted(PARAMETERS):
        raise DomainError(f"order must be a permutation of {PARAMETERS}")
    for name in PARAMETERS:
        if name not in brackets:
            raise DomainError(f"missing bracket for {name}")
    evaluations = 0

    if c is None:
        if "c" not in brackets:
            raise DomainError("missing bracket for c")
        limit = elastic_fraction * target.peak_control
        elastic = target.up_to(limit)
        steps_c = problem.steps_to_reach(limit)

        def c_objective(value):
            nonlocal evaluations
            evaluations += 1
            _, x, f = problem.run(problem.linear(value), steps=steps_c)
            return mse_loss((x, f), elastic)

        c = binary_search_parameter(c_objective, *brackets["c"], sig_figs=sig_figs, name="c")
        log.info("elastic fit c = %.3g", c)

    prefix_x = np.zeros(0)
    prefix_f = np.zeros(0)
    warm: Optional[SimulationState] = None
    if warm_start:
        threshold = brackets["s0"][0]
        state = None
        done = 0
        linear = problem.linear(c)
        while done < problem.steps:
            chunk = min(problem.write_every, problem.steps - done)
            trial = None if state is None else state.copy()
            trial, x, f = problem.run(linear, steps=chunk, state=trial)
            if problem.damageable_history(trial) >= threshold:
                break
            state, done = trial, done + chunk
            prefix_x, prefix_f = np.concatenate([prefix_x, x]), np.concatenate([prefix_f, f])
        warm = state
        evaluations += 1
        log.info("warm start at step %d", done)

    cache: Dict[Tuple[float, float, float], float] = {}

    def loss(params: Dict[str, float]) -> float:
        nonlocal evaluations
        key = (params["s0"], params["s1"], params["sc"])
        if key not in cache:
            evaluations += 1
            law = problem.trilinear(c, *key)
            if warm is None:
                _, x, f = problem.run(law)
            else:
                _, x, f = problem.run(law, steps=problem.steps - warm.step, state=warm.copy())
                x, f = np.concatenate([prefix_x, x]), np.concatenate([prefix_f, f])
            cache[key] = mse_loss((x, f), target)
        return cache[key]

    current = {}
    for name in PARAMETERS:
        lo, hi = brackets[name]
        current[name] = round_sig(0.5 * (lo + hi), sig_figs)
    if not current["s0"] < current["s1"] < current["sc"]:
        raise DomainError("bracket midpoints must satisfy s0 < s1 < sc")

    history = [dict(current, c=c)]
    converged = False
    cycles = 0
    search_dirs: List[Dict[str, float]] = []
    while cycles < max_cycles:
        cycles += 1
        changed = False
        start = dict(current)
        for name in order:
            lo, hi = _ordered_bracket(name, brackets[name], current, sig_figs)

            def objective(value, name=name):
                return loss(dict(current, **{name: value}))

            value = binary_search_parameter(objective, lo, hi, sig_figs=search_figs, name=name)
            value = min(max(value, lo), hi)
            # the rounded search result is kept only when it does not lose ground
            if objective(value) <= loss(current):
                current[name] = value
        for d in search_dirs:
            current = _line_search(loss, current, d, brackets, search_figs)
        if directions > 0:
            d = {k: current[k] - start[k] for k in PARAMETERS}
            if any(d.values()):
                current = _line_search(loss, current, d, brackets, search_figs)
                search_dirs = (search_dirs + [d])[-directions:]
        for k in PARAMETERS:
            # equal rounding alone can hide a steady drift inside one unit
            unit = significant_unit(current[k], sig_figs)
            if round_sig(current[k], sig_figs) != round_sig(start[k], sig_figs) or \
                    abs(current[k] - start[k]) > 0.25 * unit:
                changed = True
        history.append(dict(current, c=c))
        log.info("cycle %d: %s", cycles, current)
        if not changed:
            converged = True
            break
    if not converged:
        log.warning("calibration stopped after %d cycles without a fixed point", cycles)
    final = {k: round_sig(v, sig_figs) for k, v in current.items()}
    return CalibrationResult(c, final["s0"], final["s1"], final["sc"], converged,
                             cycles, evaluations, history)
