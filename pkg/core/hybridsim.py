#!/usr/bin/env python3
"""
Hybrid Simulator

Simulates impulsive systems x' = f(x, u) between impulse times and
x(t_i) = g(x^-(t_i), u^-(t_i)) at impulse times. Impulse times are known in
advance, so the integrator is driven segment by segment and stops exactly at
every impulse time and every input breakpoint.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from core.errors import ExprError, SimulationError
from core.expr import BinOp, Expr, Num, Var, constant, evaluate, free_vars, parse, to_source
from core.impulseseq import ImpulseSequence
from core.settings import get_settings

logger = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-12


def _linear_form(row: Sequence[float], names: Sequence[str]) -> Optional[Expr]:
    expr: Optional[Expr] = None
    for coeff, name in zip(row, names):
        if coeff == 0:
            continue
        term = Var(name) if coeff == 1 else BinOp("*", constant(coeff), Var(name))
        expr = term if expr is None else BinOp("+", expr, term)
    return expr


@dataclass(frozen=True)
class SystemDef:
    """
    An impulsive system given by expressions.

    f and g hold one expression per state over the state names, the input
    names and the named parameters. x = 0, u = 0 must be an equilibrium of
    both maps.
    """

    name: str
    state_names: Tuple[str, ...]
    input_names: Tuple[str, ...]
    f: Tuple[Expr, ...]
    g: Tuple[Expr, ...]
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        n = len(self.state_names)
        if n == 0:
            raise ExprError(f"system '{self.name}' has no states")
        if len(self.f) != n or len(self.g) != n:
            raise ExprError(f"system '{self.name}': f and g need {n} components each")
        names = set(self.state_names) | set(self.input_names)
        if len(names) != n + len(self.input_names):
            raise ExprError(f"system '{self.name}': state and input names must be distinct")
        allowed = names | {k for k, _ in self.params}
        for label, exprs in (("f", self.f), ("g", self.g)):
            for i, e in enumerate(exprs):
                extra = free_vars(e) - allowed
                if extra:
                    raise ExprError(f"system '{self.name}': {label}[{i}] uses undeclared names {sorted(extra)}")

        zero_x, zero_u = np.zeros(n), np.zeros(self.m)
        for label, values in (("f", self.flow(zero_x, zero_u)), ("g", self.jump(zero_x, zero_u))):
            if np.max(np.abs(values)) > EQUILIBRIUM_TOL:
                raise ExprError(f"system '{self.name}': {label}(0, 0) = {values.tolist()} is not zero")

    @classmethod
    def from_sources(
        cls,
        name: str,
        f: Sequence[str],
        g: Sequence[str],
        states: Optional[Sequence[str]] = None,
        inputs: Optional[Sequence[str]] = None,
        params: Optional[Mapping[str, float]] = None,
    ) -> "SystemDef":
        """
        Build a system from expression strings.

        Args:
            name: System name
            f: Flow right-hand sides
            g: Jump maps
            states: State names (default x1..xn, or x for a scalar system)
            inputs: Input names (default: free names that are neither states nor params)
            params: Named constants
        """
        f_exprs = tuple(parse(s) for s in f)
        g_exprs = tuple(parse(s) for s in g)
        params = {k: float(v) for k, v in (params or {}).items()}
        used = frozenset().union(*(free_vars(e) for e in f_exprs + g_exprs))
        if states is None:
            states = ["x"] if len(f_exprs) == 1 and "x" in used else [f"x{i + 1}" for i in range(len(f_exprs))]
        if inputs is None:
            inputs = sorted(used - set(states) - set(params))
        kept = tuple(sorted((k, v) for k, v in params.items() if k in used))
        return cls(name, tuple(states), tuple(inputs), f_exprs, g_exprs, kept)

    @classmethod
    def linear(
        cls,
        R: np.ndarray,
        C: Optional[np.ndarray] = None,
        D: Optional[np.ndarray] = None,
        F: Optional[np.ndarray] = None,
        name: str = "linear",
    ) -> "SystemDef":
        """x' = R x + C u between impulses, x = D x^- + F u^- at impulses."""
        R = np.atleast_2d(np.asarray(R, dtype=float))
        n = R.shape[0]
        C = np.zeros((n, 0)) if C is None else np.atleast_2d(np.asarray(C, dtype=float)).reshape(n, -1)
        D = np.eye(n) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
        F = np.zeros((n, C.shape[1])) if F is None else np.atleast_2d(np.asarray(F, dtype=float)).reshape(n, -1)
        states = [f"x{i + 1}" for i in range(n)]
        inputs = [f"u{j + 1}" for j in range(C.shape[1])]
        names = states + inputs

        def rows(A: np.ndarray, B: np.ndarray) -> Tuple[Expr, ...]:
            out = []
            for i in range(n):
                e = _linear_form(np.concatenate([A[i], B[i]]), names)
                out.append(e if e is not None else Num(0.0))
            return tuple(out)

        return cls(name, tuple(states), tuple(inputs), rows(R, C), rows(D, F))

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.input_names)

    def _eval_vector(self, exprs: Tuple[Expr, ...], x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        env: Dict[str, Any] = dict(self.params)
        for name, row in zip(self.state_names, x):
            env[name] = row
        for name, row in zip(self.input_names, u):
            env[name] = row
        shape = np.broadcast_shapes(x.shape[1:], u.shape[1:] if u.ndim > 1 else ())
        return np.stack([np.broadcast_to(evaluate(e, env), shape) for e in exprs])

    def flow(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """f(x, u); x has shape (n,) or (n, K), u has shape (m,) or (m, K)."""
        return self._eval_vector(self.f, x, u)

    def jump(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """g(x, u) with the same shape conventions as flow."""
        return self._eval_vector(self.g, x, u)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "states": list(self.state_names),
            "inputs": list(self.input_names),
            "f": [to_source(e) for e in self.f],
            "g": [to_source(e) for e in self.g],
            "params": dict(self.params),
        }


def build_interconnection(subsystems: Sequence[SystemDef], name: str = "interconnection") -> SystemDef:
    """
    Join subsystems that share one impulse sequence.

    A subsystem input named like another subsystem's state is an internal
    coupling; the other inputs become external inputs of the interconnection.
    """
    states: List[str] = []
    for sub in subsystems:
        for s in sub.state_names:
            if s in states:
                raise ExprError(f"state '{s}' is declared by more than one subsystem")
            states.append(s)

    inputs: List[str] = []
    params: Dict[str, float] = {}
    for sub in subsystems:
        for u in sub.input_names:
            if u not in states and u not in inputs:
                inputs.append(u)
        for k, v in sub.params:
            if k in params and params[k] != v:
                raise ExprError(f"parameter '{k}' has conflicting values across subsystems")
            params[k] = v

    f = tuple(e for sub in subsystems for e in sub.f)
    g = tuple(e for sub in subsystems for e in sub.g)
    logger.debug("Interconnection %s: states %s, external inputs %s", name, states, inputs)
    return SystemDef(name, tuple(states), tuple(inputs), f, g, tuple(sorted(params.items())))


class InputSignal:
    """
    Right-continuous piecewise-constant input.

    values[i] holds on [breakpoints[i], breakpoints[i + 1]); the last value
    holds from the last breakpoint on.
    """

    def __init__(self, breakpoints: Sequence[float], values: Sequence[Sequence[float]]):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)
        self.values = vals.reshape(len(self.breakpoints), -1) if vals.size or vals.ndim < 2 else vals
        if self.breakpoints.ndim != 1 or len(self.breakpoints) == 0:
            raise SimulationError("input needs at least one breakpoint")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise SimulationError("input breakpoints must be strictly increasing")
        if self.values.shape[0] != len(self.breakpoints):
            raise SimulationError("input needs one value row per breakpoint")
        self._norms = np.linalg.norm(self.values, axis=1) if self.m else np.zeros(len(self.breakpoints))

    @classmethod
    def constant(cls, value: Sequence[float], t0: float = 0.0) -> "InputSignal":
        return cls([t0], [np.atleast_1d(np.asarray(value, dtype=float))])

    @classmethod
    def zero(cls, m: int, t0: float = 0.0) -> "InputSignal":
        return cls([t0], np.zeros((1, m)))

    @classmethod
    def random_piecewise(
        cls, rng: np.random.Generator, m: int, t0: float, horizon: float, pieces: int, amplitude: float
    ) -> "InputSignal":
        """Random values in the box [-amplitude, amplitude]^m on equal pieces."""
        bps = np.linspace(t0, horizon, pieces + 1)[:-1]
        vals = amplitude * rng.uniform(-1.0, 1.0, size=(pieces, m))
        return cls(bps, vals)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def value(self, t: float) -> np.ndarray:
        i = max(int(np.searchsorted(self.breakpoints, t, side="right")) - 1, 0)
        return self.values[i]

    def left_value(self, t: float) -> np.ndarray:
        """u^-(t): the value on the piece ending at t when t is a breakpoint."""
        i = max(int(np.searchsorted(self.breakpoints, t, side="left")) - 1, 0)
        return self.values[i]

    @property
    def sup_norm(self) -> float:
        return float(np.max(self._norms)) if len(self._norms) else 0.0

    def sup_norm_until(self, t: float) -> float:
        """Sup norm of the input restricted to times <= t."""
        i = max(int(np.searchsorted(self.breakpoints, t, side="right")) - 1, 0)
        return float(np.max(self._norms[: i + 1]))

    def shifted(self, s: float) -> "InputSignal":
        return InputSignal(self.breakpoints + s, self.values)

    def to_dict(self) -> Dict[str, Any]:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], m: int) -> "InputSignal":
        if "constant" in data:
            return cls.constant(data["constant"], data.get("t0", 0.0))
        values = np.asarray(data["values"], dtype=float).reshape(len(data["breakpoints"]), m)
        return cls(data["breakpoints"], values)


@dataclass(frozen=True)
class SimOptions:
    rtol: float = 1e-9
    atol: float = 1e-9
    blowup: float = 1e9
    samples_per_segment: int = 200

    @classmethod
    def from_settings(cls, **overrides) -> "SimOptions":
        cfg = get_settings("simulation")
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        return cls(float(cfg["rtol"]), float(cfg["atol"]), float(cfg["blowup"]), int(cfg["samples_per_segment"]))


@dataclass
class Segment:
    start: float
    end: float
    times: np.ndarray
    states: np.ndarray  # (n, k)
    interpolant: Optional[Callable[[float], np.ndarray]] = None

    def at(self, t: float) -> np.ndarray:
        if self.interpolant is not None and self.end > self.start:
            return np.asarray(self.interpolant(t), dtype=float)
        return self.states[:, -1] if t >= self.end else self.states[:, 0]


@dataclass
class JumpRecord:
    time: float
    pre_state: np.ndarray
    post_state: np.ndarray
    pre_input: np.ndarray


@dataclass
class HybridTrajectory:
    """Flow segments plus the jumps between them; each segment starts at the post-jump state."""

    system: str
    t0: float
    tf: float
    x0: np.ndarray
    segments: List[Segment]
    jumps: List[JumpRecord]
    diverged_at: Optional[float] = None
    stats: Dict[str, int] = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def end_time(self) -> float:
        return self.segments[-1].end

    def _check_range(self, t: float) -> None:
        if not self.t0 <= t <= self.end_time:
            raise SimulationError(f"t={t:g} outside the simulated range [{self.t0:g}, {self.end_time:g}]")

    def state(self, t: float) -> np.ndarray:
        """x(t); at an impulse time this is the post-jump state."""
        self._check_range(t)
        for jump in self.jumps:
            if jump.time == t:
                return jump.post_state.copy()
        for seg in self.segments:
            if seg.start <= t <= seg.end:
                return seg.at(t)
        return self.segments[-1].states[:, -1].copy()

    def left_limit(self, t: float) -> np.ndarray:
        """x^-(t): the recorded pre-jump state at impulse times, x(t) elsewhere."""
        self._check_range(t)
        for jump in self.jumps:
            if jump.time == t:
                return jump.pre_state.copy()
        if t == self.t0:
            return self.x0.copy()
        return self.state(t)

    @property
    def final_state(self) -> np.ndarray:
        return self.segments[-1].states[:, -1].copy()

    def rows(self) -> List[Tuple[float, np.ndarray, bool, Optional[np.ndarray]]]:
        """(t, x, is_jump, pre-jump x) rows; a jump row replaces the segment's last sample."""
        jump_at = {j.time: j for j in self.jumps}
        out: List[Tuple[float, np.ndarray, bool, Optional[np.ndarray]]] = []
        for k, seg in enumerate(self.segments):
            count = len(seg.times)
            skip_last = k + 1 < len(self.segments) and seg.end in jump_at
            for i in range(count - 1 if skip_last else count):
                t = float(seg.times[i])
                if i == 0 and k > 0 and t in jump_at:
                    out.append((t, seg.states[:, i], True, jump_at[t].pre_state))
                elif out and out[-1][0] == t:
                    # segment boundary at an input breakpoint
                    continue
                else:
                    out.append((t, seg.states[:, i], False, None))
        return out

    def norms(self) -> Tuple[np.ndarray, np.ndarray]:
        """Times and Euclidean norms of all samples, left limits included."""
        times: List[float] = []
        values: List[float] = []
        for seg in self.segments:
            times.extend(seg.times.tolist())
            values.extend(np.linalg.norm(seg.states, axis=0).tolist())
        return np.asarray(times), np.asarray(values)

    @property
    def peak_norm(self) -> float:
        return float(np.max(self.norms()[1]))

    def to_csv(self, state_names: Optional[Sequence[str]] = None) -> str:
        n = len(self.x0)
        names = list(state_names) if state_names else [f"x{i + 1}" for i in range(n)]
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["t"] + names + ["is_jump"] + [f"pre_{name}" for name in names])
        for t, x, is_jump, pre in self.rows():
            pre_cells = [repr(float(v)) for v in pre] if pre is not None else [""] * n
            writer.writerow([repr(t)] + [repr(float(v)) for v in x] + [int(is_jump)] + pre_cells)
        return buffer.getvalue()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "system": self.system,
            "t0": self.t0,
            "tf": self.tf,
            "x0": self.x0.tolist(),
            "final_state": self.final_state.tolist(),
            "diverged_at": self.diverged_at,
            "jumps": [
                {
                    "time": j.time,
                    "pre_state": j.pre_state.tolist(),
                    "post_state": j.post_state.tolist(),
                    "pre_input": j.pre_input.tolist(),
                }
                for j in self.jumps
            ],
            "peak_norm": self.peak_norm,
            "stats": self.stats,
            "seed": self.seed,
        }


def simulate(
    sys: SystemDef,
    seq: ImpulseSequence,
    u: Optional[InputSignal] = None,
    x0: Optional[Sequence[float]] = None,
    t0: Optional[float] = None,
    tf: Optional[float] = None,
    opts: Optional[SimOptions] = None,
    seed: Optional[int] = None,
) -> HybridTrajectory:
    """
    Simulate an impulsive system along a prescribed impulse sequence.

    Args:
        sys: System definition
        seq: Impulse sequence; times <= t0 are ignored
        u: Piecewise-constant input (default zero)
        x0: Initial state
        t0: Initial time (default seq.t0)
        tf: Final time (default seq.horizon), must be <= seq.horizon
        opts: Solver options (default from settings)
        seed: Recorded in the trajectory metadata

    Returns:
        HybridTrajectory, marked diverged when the norm passes opts.blowup

    Raises:
        SimulationError: the integrator failed (e.g. step-size underflow) or bad arguments
    """
    opts = opts or SimOptions.from_settings()
    t0 = seq.t0 if t0 is None else float(t0)
    tf = seq.horizon if tf is None else float(tf)
    u = u or InputSignal.zero(sys.m, t0)
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(sys.n)
    if tf > seq.horizon:
        raise SimulationError(f"tf={tf:g} is beyond the sequence horizon {seq.horizon:g}")
    if tf < t0:
        raise SimulationError("tf must be >= t0")
    if not np.all(np.isfinite(x)):
        raise SimulationError("x0 must be finite")
    if u.m != sys.m:
        raise SimulationError(f"input has dimension {u.m}, system '{sys.name}' expects {sys.m}")

    impulses = [t for t in seq.times if t0 < t <= tf]
    impulse_set = set(impulses)
    breaks = [float(b) for b in u.breakpoints if t0 < b < tf]
    stops = sorted(set(impulses) | set(breaks) | {tf})

    def blowup_event(t, y):
        return opts.blowup - np.linalg.norm(y)

    blowup_event.terminal = True
    blowup_event.direction = -1

    segments: List[Segment] = []
    jumps: List[JumpRecord] = []
    stats = {"nfev": 0, "segments": 0}
    x0_arr = x.copy()
    start = t0
    diverged_at: Optional[float] = None

    for stop in stops:
        if stop > start:
            u_seg = u.value(start)
            sol = solve_ivp(
                lambda t, y: sys.flow(y, u_seg),
                (start, stop),
                x,
                method="RK45",
                rtol=opts.rtol,
                atol=opts.atol,
                dense_output=True,
                events=blowup_event,
            )
            if sol.status == -1:
                raise SimulationError(f"integration failed on [{start:g}, {stop:g}]: {sol.message}")
            stats["nfev"] += int(sol.nfev)
            stats["segments"] += 1
            end = float(sol.t[-1])
            times = np.linspace(start, end, opts.samples_per_segment)
            states = sol.sol(times)
            states[:, 0] = x
            states[:, -1] = sol.y[:, -1]
            segments.append(Segment(start, end, times, states, sol.sol))
            x = sol.y[:, -1].copy()
            if sol.status == 1:
                diverged_at = end
                logger.info("Trajectory of %s diverged at t=%.6g", sys.name, end)
                break
        elif not segments:
            segments.append(Segment(start, start, np.array([start]), x.reshape(-1, 1).copy()))

        if stop in impulse_set:
            pre_input = u.left_value(stop).copy()
            post = sys.jump(x, pre_input)
            jumps.append(JumpRecord(stop, x.copy(), post.copy(), pre_input))
            x = post
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > opts.blowup:
                diverged_at = stop
                segments.append(Segment(stop, stop, np.array([stop]), x.reshape(-1, 1).copy()))
                logger.info("Trajectory of %s diverged at the impulse t=%.6g", sys.name, stop)
                break
            if stop == tf:
                segments.append(Segment(stop, stop, np.array([stop]), x.reshape(-1, 1).copy()))
        start = stop

    if not segments:
        segments.append(Segment(t0, t0, np.array([t0]), x0_arr.reshape(-1, 1)))
    stats["jumps"] = len(jumps)
    return HybridTrajectory(sys.name, t0, tf, x0_arr, segments, jumps, diverged_at, stats, seed)


def shift_invariance_check(
    sys: SystemDef,
    seq: ImpulseSequence,
    u: Optional[InputSignal],
    x0: Sequence[float],
    s: float,
    opts: Optional[SimOptions] = None,
) -> float:
    """
    Max deviation between a trajectory and its time-shifted counterpart.

    Simulates on [t0, horizon] and on [t0 + s, horizon + s] with the sequence
    and the input shifted by s, then compares states on matched times.
    """
    if not s > -seq.t0:
        raise SimulationError(f"shift s={s:g} must be > -t0 = {-seq.t0:g}")
    u = u or InputSignal.zero(sys.m, seq.t0)
    base = simulate(sys, seq, u, x0, opts=opts)
    moved = simulate(sys, seq.shifted(s), u.shifted(s), x0, opts=opts)
    deviation = 0.0
    for seg in base.segments:
        for t in seg.times:
            if t + s > moved.end_time or t > base.end_time:
                continue
            deviation = max(deviation, float(np.linalg.norm(base.state(t) - moved.state(t + s))))
    for jump, other in zip(base.jumps, moved.jumps):
        deviation = max(deviation, float(np.linalg.norm(jump.pre_state - other.pre_state)))
        deviation = max(deviation, float(np.linalg.norm(jump.post_state - other.post_state)))
    return deviation
