#!/usr/bin/env python3
"""
Lyapunov Certificate Checks

Sampling-based verification of ISS-Lyapunov certificates for impulsive
systems in implication form and in max form, conversions between the two
forms, and the dwell-time conditions derived from a certificate (the
nonlinear fixed dwell-time bound and the generalized ADT check).

A certified verdict means "no violation on the sample plan"; it is a
falsification attempt, not a proof. Flow inequalities are checked against
constant inputs u = xi only.
"""

import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from core.cmpfun import (
    ClassTag,
    ExprFn,
    LambdaFn,
    ScalarFn,
    TabulatedFn,
    as_scalar_fn,
    default_grid,
    invert,
    linear,
    require_class,
    validate_class,
)
from core.errors import CertificateError, ClassValidationError, ExprError, SequenceError
from core.expr import Call, Expr, evaluate, free_vars, parse, substitute, to_source
from core.hybridsim import InputSignal, SystemDef
from core.impulseseq import GADT, ImpulseSequence, MembershipResult, member
from core.settings import get_settings

logger = logging.getLogger(__name__)

CERTIFIED = "certified-on-samples"
VIOLATED = "violated"

FORMS = ("implication", "max")
STABILIZING_FLOW = "stabilizing-flow"
STABILIZING_JUMPS = "stabilizing-jumps"


# State functions


class StateFn(ABC):
    """A function of the state vector, evaluated row-wise on (K, n) batches."""

    @abstractmethod
    def __call__(self, X: np.ndarray) -> Union[float, np.ndarray]:
        raise NotImplementedError

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    def expression(self) -> Optional[Expr]:
        return None


class ExprStateFn(StateFn):
    """V(x) given by an expression over named state components."""

    def __init__(self, body: Expr, state_names: Sequence[str], params: Optional[Mapping[str, float]] = None):
        self.body = body
        self.state_names = tuple(state_names)
        self.params = {k: float(v) for k, v in (params or {}).items() if k in free_vars(body)}
        extra = free_vars(body) - set(self.state_names) - set(self.params)
        if extra:
            raise ExprError(f"V = '{to_source(body)}' uses names {sorted(extra)} that are not states")

    @classmethod
    def from_source(cls, source: str, state_names: Sequence[str], params: Optional[Mapping[str, float]] = None):
        return cls(parse(source), state_names, params)

    def with_states(self, state_names: Sequence[str]) -> "ExprStateFn":
        """The same function evaluated on a larger state vector."""
        return ExprStateFn(self.body, state_names, self.params)

    def __call__(self, X: np.ndarray) -> Union[float, np.ndarray]:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        env: Dict[str, Any] = dict(self.params)
        for j, name in enumerate(self.state_names):
            env[name] = X2[:, j]
        out = np.broadcast_to(np.asarray(evaluate(self.body, env), dtype=float), (X2.shape[0],))
        return float(out[0]) if single else np.array(out)

    def expression(self) -> Expr:
        return self.body

    @property
    def label(self) -> str:
        return to_source(self.body)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"expr": to_source(self.body)}
        if self.params:
            out["params"] = dict(self.params)
        return out


class MaxCompositeFn(StateFn):
    """V(x) = max_i sigma_i^{-1}(V_i(x))."""

    def __init__(self, parts: Sequence[Tuple[ScalarFn, StateFn]]):
        self.parts = list(parts)

    def __call__(self, X: np.ndarray) -> Union[float, np.ndarray]:
        values = [np.asarray(sigma_inv(np.asarray(V(X), dtype=float)), dtype=float) for sigma_inv, V in self.parts]
        out = np.max(np.stack(values), axis=0)
        return float(out) if out.ndim == 0 else out

    def expression(self) -> Optional[Expr]:
        """Closed form when every sigma_i^{-1} is an expression."""
        terms = []
        for sigma_inv, V in self.parts:
            inner = V.expression()
            if not isinstance(sigma_inv, ExprFn) or inner is None:
                return None
            bound = substitute(sigma_inv.body, dict(sigma_inv.params))
            terms.append(substitute(bound, {sigma_inv.var: inner}))
        return terms[0] if len(terms) == 1 else Call("max", tuple(terms))

    def to_dict(self) -> Dict[str, Any]:
        expr = self.expression()
        if expr is not None:
            return {"expr": to_source(expr)}
        return {"max_of": [{"sigma_inv": s.to_dict(), "V": V.to_dict()} for s, V in self.parts]}


# Candidates


@dataclass
class LyapunovCandidate:
    """
    ISS-Lyapunov candidate.

    Exactly one of phi / c gives the flow rate (V' <= -phi(V), phi(s) = c s)
    and exactly one of alpha / d the jump rate (V(g) <= alpha(V),
    alpha(s) = exp(-d) s).
    """

    V: StateFn
    psi1: ScalarFn
    psi2: ScalarFn
    chi: ScalarFn
    phi: Optional[ScalarFn] = None
    c: Optional[float] = None
    alpha: Optional[ScalarFn] = None
    d: Optional[float] = None
    form: str = "implication"
    gamma: Optional[ScalarFn] = None
    local_radius: Optional[float] = None
    name: str = "candidate"

    def __post_init__(self):
        if (self.phi is None) == (self.c is None):
            raise CertificateError(f"candidate '{self.name}' needs exactly one of phi or c")
        if (self.alpha is None) == (self.d is None):
            raise CertificateError(f"candidate '{self.name}' needs exactly one of alpha or d")
        if self.form not in FORMS:
            raise CertificateError(f"candidate '{self.name}': form must be one of {FORMS}")

    @property
    def is_exponential(self) -> bool:
        return self.c is not None and self.d is not None

    def flow_rate_fn(self) -> ScalarFn:
        return self.phi if self.phi is not None else linear(self.c, ClassTag.NONE)

    def jump_fn(self) -> ScalarFn:
        return self.alpha if self.alpha is not None else linear(math.exp(-self.d), ClassTag.NONE)

    def validate(self, grid=None) -> None:
        """Validate the declared classes; raises ClassValidationError naming the grid point."""
        require_class(self.psi1, ClassTag.KINF, grid, what="psi1")
        require_class(self.psi2, ClassTag.KINF, grid, what="psi2")
        require_class(self.chi, self.chi.declared_class if self.chi.declared_class is not ClassTag.NONE else ClassTag.KINF, grid, what="chi")
        if self.phi is not None:
            require_class(self.phi, None, grid, what="phi")
        if self.alpha is not None:
            require_class(self.alpha, None, grid, what="alpha")
        if self.gamma is not None:
            require_class(self.gamma, None, grid, what="gamma")

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "name": self.name,
            "form": self.form,
            "V": self.V.to_dict(),
            "psi1": self.psi1.to_dict(),
            "psi2": self.psi2.to_dict(),
            "chi": self.chi.to_dict(),
        }
        if self.c is not None:
            out["c"] = self.c
        else:
            out["phi"] = self.phi.to_dict()
        if self.d is not None:
            out["d"] = self.d
        else:
            out["alpha"] = self.alpha.to_dict()
        if self.gamma is not None:
            out["gamma"] = self.gamma.to_dict()
        if self.local_radius is not None:
            out["local_radius"] = self.local_radius
        return out


def candidate_from_dict(
    data: Dict[str, Any],
    state_names: Sequence[str],
    params: Optional[Mapping[str, float]] = None,
    name: str = "candidate",
) -> LyapunovCandidate:
    """Build a candidate from the certificate JSON schema."""
    params = dict(params or {})
    v_spec = data["V"]
    v_source = v_spec["expr"] if isinstance(v_spec, dict) else v_spec
    V = ExprStateFn.from_source(v_source, state_names, params)

    def fn(key: str, tag: ClassTag) -> Optional[ScalarFn]:
        if key not in data:
            return None
        return as_scalar_fn(data[key], tag, params, var="r")

    return LyapunovCandidate(
        V=V,
        psi1=fn("psi1", ClassTag.KINF),
        psi2=fn("psi2", ClassTag.KINF),
        chi=fn("chi", ClassTag.KINF),
        phi=fn("phi", ClassTag.PD),
        c=float(data["c"]) if "c" in data else None,
        alpha=fn("alpha", ClassTag.PD),
        d=float(data["d"]) if "d" in data else None,
        form=data.get("form", "implication"),
        gamma=fn("gamma", ClassTag.NONE),
        local_radius=data.get("local_radius"),
        name=data.get("name", name),
    )


# Sampling


@dataclass(frozen=True)
class SamplePlan:
    interior: int = 4096
    boundary: int = 512
    near_zero: int = 64
    radius: float = 10.0
    input_min: float = 1e-4
    local_radius: Optional[float] = None

    @classmethod
    def from_settings(cls, **overrides) -> "SamplePlan":
        cfg = get_settings("certificate")
        plan = cls(
            int(cfg["interior_samples"]),
            int(cfg["boundary_samples"]),
            int(cfg["near_zero_samples"]),
            float(cfg["box_radius"]),
            float(cfg["input_min"]),
        )
        fields = {k: v for k, v in overrides.items() if v is not None}
        return SamplePlan(**{**plan.__dict__, **fields}) if fields else plan

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _unit_directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


class StateSampler:
    """
    Deterministic (per seed) state/input sample sets.

    Box mode: Sobol points in [-R, R]^n, points on the box faces and points
    near zero. Ball mode (local_radius set): the same sets mapped into the
    ball of that radius, with input magnitudes capped by it.
    """

    def __init__(self, n: int, m: int, plan: Optional[SamplePlan] = None, seed: int = 0):
        self.n = n
        self.m = m
        self.plan = plan or SamplePlan.from_settings()
        self.seed = int(seed)
        self._states: Optional[np.ndarray] = None
        self._pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def radius(self) -> float:
        return self.plan.local_radius if self.plan.local_radius is not None else self.plan.radius

    def states(self) -> np.ndarray:
        if self._states is not None:
            return self._states
        plan, n = self.plan, self.n
        rng = np.random.default_rng(self.seed)
        sobol = qmc.Sobol(d=n, scramble=True, seed=rng)
        count = plan.interior
        if count & (count - 1) == 0:
            unit = sobol.random_base2(int(math.log2(count)))
        else:
            unit = sobol.random(count)
        cube = 2.0 * unit - 1.0

        faces = rng.uniform(-1.0, 1.0, size=(plan.boundary, n))
        axis = rng.integers(0, n, size=plan.boundary)
        faces[np.arange(plan.boundary), axis] = rng.choice([-1.0, 1.0], size=plan.boundary)

        near_r = 10.0 ** rng.uniform(-6.0, -2.0, size=plan.near_zero)
        near = _unit_directions(rng, plan.near_zero, n) * near_r[:, None]

        if plan.local_radius is None:
            R = plan.radius
            states = np.vstack([R * cube, R * faces, R * near])
        else:
            rho = plan.local_radius
            inf_norm = np.max(np.abs(cube), axis=1, keepdims=True)
            two_norm = np.linalg.norm(cube, axis=1, keepdims=True)
            two_norm[two_norm == 0] = 1.0
            ball = cube * inf_norm / two_norm
            sphere = _unit_directions(rng, plan.boundary, n)
            states = np.vstack([rho * ball, rho * sphere, rho * near])
        self._states = states
        return states

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Each state paired with xi = 0 and with one random xi (log-uniform magnitude)."""
        if self._pairs is not None:
            return self._pairs
        X = self.states()
        K = X.shape[0]
        if self.m == 0:
            self._pairs = (X, np.zeros((K, 0)))
            return self._pairs
        rng = np.random.default_rng(self.seed + 1)
        R = self.radius
        lo = min(self.plan.input_min, 1e-2 * R)
        mags = np.exp(rng.uniform(math.log(lo), math.log(R), size=K))
        xi = _unit_directions(rng, K, self.m) * mags[:, None]
        self._pairs = (np.vstack([X, X]), np.vstack([np.zeros((K, self.m)), xi]))
        return self._pairs


def default_sampler(sys: SystemDef, L: Optional[LyapunovCandidate] = None, seed: int = 0, **overrides) -> StateSampler:
    local = L.local_radius if L is not None else None
    if local is not None and overrides.get("local_radius") is None:
        overrides["local_radius"] = local
    return StateSampler(sys.n, sys.m, SamplePlan.from_settings(**overrides), seed)


# Dini derivative


def _rk4(sys: SystemDef, X: np.ndarray, U: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One classical RK4 step per column; X is (n, K), U is (m, K), h is (K,)."""
    k1 = sys.flow(X, U)
    k2 = sys.flow(X + 0.5 * h * k1, U)
    k3 = sys.flow(X + 0.5 * h * k2, U)
    k4 = sys.flow(X + h * k3, U)
    return X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def dini_batch(
    sys: SystemDef, V: StateFn, X: np.ndarray, U: np.ndarray, h0: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Upper-right Dini derivative of V along the flow with constant inputs.

    Forward differences at h, h/2, h/4 with two levels of Richardson
    extrapolation; h is h0 scaled down by the local rate |f| / |x|.

    Args:
        sys: System
        V: State function
        X: States, shape (K, n)
        U: Constant inputs, shape (K, m)
        h0: Base step (default from settings)

    Returns:
        (estimates, error estimates), each of shape (K,)
    """
    h0 = float(get_settings("certificate")["dini_h0"]) if h0 is None else float(h0)
    if not h0 > 0:
        raise ValueError("h0 must be positive")
    Xt = np.asarray(X, dtype=float).T
    Ut = np.asarray(U, dtype=float).T
    if Ut.ndim == 1:
        Ut = Ut.reshape(-1, Xt.shape[1])
    speed = np.linalg.norm(sys.flow(Xt, Ut), axis=0)
    size = np.maximum(np.linalg.norm(Xt, axis=0), 1e-12)
    h = h0 / np.maximum(1.0, speed / size)

    v0 = np.asarray(V(Xt.T), dtype=float)
    diffs = []
    for scale in (1.0, 0.5, 0.25):
        hs = h * scale
        diffs.append((np.asarray(V(_rk4(sys, Xt, Ut, hs).T), dtype=float) - v0) / hs)
    d1, d2, d4 = diffs
    r1_coarse = 2.0 * d2 - d1
    r1_fine = 2.0 * d4 - d2
    r2 = (4.0 * r1_fine - r1_coarse) / 3.0
    return r2, np.abs(r2 - r1_fine)


@dataclass(frozen=True)
class DiniEstimate:
    value: float
    error: float


def dini_derivative(
    sys: SystemDef,
    V: StateFn,
    x: Sequence[float],
    u: Union[InputSignal, Sequence[float], None] = None,
    h0: Optional[float] = None,
) -> DiniEstimate:
    """Dini derivative of V at one state under the input's first value."""
    if isinstance(u, InputSignal):
        xi = u.value(float(u.breakpoints[0]))
    elif u is None:
        xi = np.zeros(sys.m)
    else:
        xi = np.asarray(u, dtype=float).reshape(sys.m)
    x = np.asarray(x, dtype=float).reshape(1, sys.n)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    est, err = dini_batch(sys, V, x, xi.reshape(1, sys.m), h0)
    return DiniEstimate(float(est[0]), float(err[0]))


# Reports


@dataclass
class CertificateReport:
    """Outcome of a certificate check on a sample plan."""

    verdict: str
    form: str
    worst_flow_margin: float
    worst_jump_margin: float
    worst_sandwich_margin: float
    witness: Optional[Dict[str, Any]]
    counts: Dict[str, int]
    tol: float
    seed: int
    notes: List[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict,
            "form": self.form,
            "worst_margin": {
                "flow": self.worst_flow_margin,
                "jump": self.worst_jump_margin,
                "sandwich": self.worst_sandwich_margin,
            },
            "witness": self.witness,
            "counts": self.counts,
            "tol": self.tol,
            "seed": self.seed,
            "notes": self.notes,
        }


def _worst(margins: np.ndarray) -> Tuple[float, int]:
    if margins.size == 0:
        return -float("inf"), -1
    i = int(np.argmax(margins))
    return float(margins[i]), i


def _sandwich_margins(L: LyapunovCandidate, X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    v = np.asarray(L.V(X), dtype=float)
    return np.maximum(np.asarray(L.psi1(norms)) - v, v - np.asarray(L.psi2(norms)))


def check_sandwich(
    L: LyapunovCandidate, sampler: StateSampler, tol: Optional[float] = None
) -> Tuple[bool, float, Optional[np.ndarray]]:
    """Whether psi1(|x|) <= V(x) <= psi2(|x|) holds on the states, the worst margin and its state."""
    tol = float(get_settings("certificate")["tol"]) if tol is None else tol
    X = sampler.states()
    worst, i = _worst(_sandwich_margins(L, X))
    return worst <= tol, worst, (X[i] if i >= 0 else None)


def _check(
    sys: SystemDef,
    L: LyapunovCandidate,
    flow_gain: ScalarFn,
    jump_gain: Optional[ScalarFn],
    sampler: Optional[StateSampler],
    tol: Optional[float],
    h0: Optional[float],
    form: str,
) -> CertificateReport:
    tol = float(get_settings("certificate")["tol"]) if tol is None else float(tol)
    sampler = sampler or default_sampler(sys, L)
    X, Xi = sampler.pairs()
    v = np.asarray(L.V(X), dtype=float)
    xi_norm = np.linalg.norm(Xi, axis=1) if sys.m else np.zeros(len(X))

    guard = v >= np.asarray(flow_gain(xi_norm), dtype=float)
    if not np.any(guard):
        raise CertificateError(f"no sample pair satisfies the guard V(x) >= gain(|xi|) for '{L.name}'")

    Xg, Ug, vg = X[guard], Xi[guard], v[guard]
    vdot, vdot_err = dini_batch(sys, L.V, Xg, Ug, h0)
    flow_margins = vdot + np.asarray(L.flow_rate_fn()(vg), dtype=float)

    alpha = L.jump_fn()
    if jump_gain is None:
        Xj, Uj, vj = Xg, Ug, vg
        bound = np.asarray(alpha(vj), dtype=float)
    else:
        Xj, Uj, vj = X, Xi, v
        xi_j = xi_norm
        bound = np.maximum(np.asarray(alpha(vj), dtype=float), np.asarray(jump_gain(xi_j), dtype=float))
    v_next = np.asarray(L.V(sys.jump(Xj.T, Uj.T).T), dtype=float)
    jump_margins = v_next - bound

    states = sampler.states()
    sandwich = _sandwich_margins(L, states)

    worst_flow, i_flow = _worst(flow_margins)
    worst_jump, i_jump = _worst(jump_margins)
    worst_sw, i_sw = _worst(sandwich)

    candidates = [
        (worst_flow, "flow", Xg[i_flow] if i_flow >= 0 else None, Ug[i_flow] if i_flow >= 0 else None),
        (worst_jump, "jump", Xj[i_jump] if i_jump >= 0 else None, Uj[i_jump] if i_jump >= 0 else None),
        (worst_sw, "sandwich", states[i_sw] if i_sw >= 0 else None, np.zeros(sys.m)),
    ]
    margin, branch, wx, wxi = max(candidates, key=lambda item: item[0])
    violated = margin > tol
    witness = None
    if violated:
        witness = {"x": wx.tolist(), "xi": wxi.tolist(), "branch": branch, "margin": margin}
        if branch == "flow":
            witness["dini_error"] = float(vdot_err[i_flow])

    notes = ["flow inequality checked with constant inputs u = xi only"]
    if sampler.plan.local_radius is not None:
        notes.append(f"local check on the ball of radius {sampler.plan.local_radius:g}")
    counts = {
        "states": int(len(states)),
        "pairs": int(len(X)),
        "guarded_flow": int(guard.sum()),
        "jump_pairs": int(len(Xj)),
    }
    logger.info(
        "%s-form check of %s: flow %.3g, jump %.3g, sandwich %.3g over %d pairs",
        form, L.name, worst_flow, worst_jump, worst_sw, len(X),
    )
    return CertificateReport(
        VIOLATED if violated else CERTIFIED,
        form,
        worst_flow,
        worst_jump,
        worst_sw,
        witness,
        counts,
        tol,
        sampler.seed,
        notes,
    )


def check_implication_form(
    sys: SystemDef,
    L: LyapunovCandidate,
    sampler: Optional[StateSampler] = None,
    tol: Optional[float] = None,
    h0: Optional[float] = None,
) -> CertificateReport:
    """
    Check V(x) >= chi(|xi|) => V' <= -phi(V(x)) and V(g(x, xi)) <= alpha(V(x)).

    Raises:
        CertificateError: no sampled pair satisfies the guard
    """
    return _check(sys, L, L.chi, None, sampler, tol, h0, "implication")


def check_max_form(
    sys: SystemDef,
    L: LyapunovCandidate,
    gamma: Optional[ScalarFn] = None,
    sampler: Optional[StateSampler] = None,
    tol: Optional[float] = None,
    h0: Optional[float] = None,
) -> CertificateReport:
    """
    Check V(g(x, xi)) <= max{alpha(V(x)), gamma(|xi|)} for all pairs and the
    flow inequality under the guard V(x) >= gamma(|xi|).
    """
    gamma = gamma or L.gamma or L.chi
    return _check(sys, L, gamma, gamma, sampler, tol, h0, "max")


def recheck_witness(sys: SystemDef, L: LyapunovCandidate, report: CertificateReport, h0: Optional[float] = None) -> float:
    """Re-evaluate a violated report's witness; returns the recomputed margin."""
    if report.witness is None:
        raise CertificateError("report has no witness")
    x = np.asarray(report.witness["x"], dtype=float).reshape(1, sys.n)
    xi = np.asarray(report.witness["xi"], dtype=float).reshape(1, sys.m)
    v = np.asarray(L.V(x), dtype=float)
    branch = report.witness["branch"]
    if branch == "flow":
        est, _ = dini_batch(sys, L.V, x, xi, h0)
        return float(est[0] + np.asarray(L.flow_rate_fn()(v))[0])
    if branch == "jump":
        v_next = float(np.asarray(L.V(sys.jump(x.T, xi.T).T))[0])
        bound = float(np.asarray(L.jump_fn()(v))[0])
        if report.form == "max":
            gamma = L.gamma or L.chi
            bound = max(bound, float(gamma(float(np.linalg.norm(xi)))))
        return v_next - bound
    return float(_sandwich_margins(L, x)[0])


# Form conversions


@dataclass
class FormConversion:
    chi: ScalarFn
    rho: ScalarFn


def _conversion_grid() -> np.ndarray:
    return np.geomspace(1e-6, 1e6, 257)


def max_form_to_implication(
    gamma: ScalarFn,
    alpha: ScalarFn,
    rho: Optional[ScalarFn] = None,
    grid: Optional[np.ndarray] = None,
) -> FormConversion:
    """
    Convert a max-form jump gain into an implication-form gain.

    Picks rho in K-infinity with rho > alpha on the grid and returns the
    tabulated chi = max{gamma, rho^{-1} o gamma}.

    Raises:
        ClassValidationError: alpha is not PD, or no valid rho was found
    """
    check_grid = default_grid()
    alpha_values = np.asarray(alpha(check_grid), dtype=float)

    if rho is None:
        if np.all(alpha_values == 0):
            logger.warning("alpha vanishes on the grid; using rho = id so that chi = gamma")
            rho = ExprFn.from_source("r", "r", ClassTag.KINF)
        else:
            require_class(alpha, ClassTag.PD, what="alpha")
            primary = _shifted_rho(alpha)
            fallback = _max_rho(alpha)
            for option in (primary, fallback):
                if validate_class(option, ClassTag.KINF).ok and np.all(np.asarray(option(check_grid)) > alpha_values):
                    rho = option
                    break
            if rho is None:
                raise ClassValidationError("no rho in K-infinity with rho > alpha on the grid")
    else:
        require_class(rho, ClassTag.KINF, what="rho")
        if not np.all(np.asarray(rho(check_grid)) > alpha_values) and not np.all(alpha_values == 0):
            raise ClassValidationError("rho must exceed alpha on the grid")

    xs = _conversion_grid() if grid is None else np.asarray(grid, dtype=float)
    gamma_values = np.asarray(gamma(xs), dtype=float)
    inverse_values = np.array([invert(rho, float(y)) if y > 0 else 0.0 for y in gamma_values])
    chi_values = np.maximum(gamma_values, inverse_values)
    mode = "loglog" if np.all(chi_values > 0) else "linear"
    chi = TabulatedFn(xs, chi_values, ClassTag.KINF if mode == "loglog" else ClassTag.NONE, mode=mode,
                      tail="power" if mode == "loglog" else "linear", label=f"max({gamma.label}, rho^-1({gamma.label}))")
    return FormConversion(chi, rho)


def _shifted_rho(alpha: ScalarFn) -> ScalarFn:
    return LambdaFn(lambda r: np.asarray(alpha(r)) + 1e-3 * r, f"{alpha.label} + 1e-3 r", ClassTag.KINF)


def _max_rho(alpha: ScalarFn) -> ScalarFn:
    return LambdaFn(lambda r: 1.001 * np.maximum(np.asarray(alpha(r)), r), f"1.001 max({alpha.label}, r)", ClassTag.KINF)


def implication_candidate(L: LyapunovCandidate, gamma: Optional[ScalarFn] = None) -> LyapunovCandidate:
    """The implication-form candidate obtained from a max-form one."""
    gamma = gamma or L.gamma or L.chi
    conversion = max_form_to_implication(gamma, L.jump_fn())
    return LyapunovCandidate(
        V=L.V,
        psi1=L.psi1,
        psi2=L.psi2,
        chi=conversion.chi,
        phi=L.phi,
        c=L.c,
        alpha=conversion.rho,
        form="implication",
        local_radius=L.local_radius,
        name=f"{L.name}-implication",
    )


def implication_to_max_form(
    sys: SystemDef,
    L: LyapunovCandidate,
    sampler: Optional[StateSampler] = None,
    grid: Optional[np.ndarray] = None,
) -> TabulatedFn:
    """
    A max-form jump gain for an implication-form candidate.

    gamma >= max{chi, omega} with omega(r) the sampled supremum of V(g(x, xi))
    over |xi| <= r and V(x) <= chi(r); values are shifted one grid point to
    the left so the table dominates between grid points.
    """
    sampler = sampler or default_sampler(sys, L)
    X, Xi = sampler.pairs()
    v = np.asarray(L.V(X), dtype=float)
    v_next = np.asarray(L.V(sys.jump(X.T, Xi.T).T), dtype=float)
    xi_norm = np.linalg.norm(Xi, axis=1) if sys.m else np.zeros(len(X))

    xs = default_grid() if grid is None else np.asarray(grid, dtype=float)
    chi_values = np.asarray(L.chi(xs), dtype=float)
    omega = np.zeros(len(xs))
    for k, r in enumerate(xs):
        mask = (xi_norm <= r) & (v <= chi_values[k])
        if np.any(mask):
            omega[k] = float(np.max(v_next[mask]))
    shifted = np.concatenate([omega[1:], omega[-1:]])
    values = np.maximum.accumulate(np.maximum(chi_values, shifted)) + 1e-9 * xs
    return TabulatedFn(xs, values, ClassTag.KINF, label=f"gamma({L.name})")


# Dwell-time conditions


@dataclass
class FDTResult:
    bound: float
    direction: str
    argsup: Optional[float]
    a_grid: np.ndarray
    values: np.ndarray
    diverged: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bound": self.bound,
            "direction": self.direction,
            "attained_at": self.argsup,
            "grid_points": len(self.a_grid),
            "spread": float(np.max(self.values[np.isfinite(self.values)]) - np.min(self.values[np.isfinite(self.values)]))
            if np.any(np.isfinite(self.values))
            else None,
            "diverged_at": self.diverged,
        }


def _log_integral(rate: ScalarFn, lo: float, hi: float) -> Tuple[float, bool]:
    """Integral of 1 / rate(s) over [lo, hi] (0 < lo) with s = exp(w); flags divergence."""
    if hi == lo:
        return 0.0, False
    a, b = (lo, hi) if hi > lo else (hi, lo)
    sign = 1.0 if hi > lo else -1.0
    probe = np.geomspace(a, b, 65)
    if np.any(np.asarray(rate(probe), dtype=float) <= 0):
        return float("inf"), True

    def integrand(w: float) -> float:
        s = math.exp(w)
        return s / float(rate(s))

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, _ = integrate.quad(integrand, math.log(a), math.log(b), epsabs=1e-12, epsrel=1e-12, limit=200)
        except integrate.IntegrationWarning:
            try:
                value, _ = integrate.quad(integrand, math.log(a), math.log(b), epsabs=1e-10, epsrel=1e-10, limit=500)
            except integrate.IntegrationWarning:
                return float("inf"), True
    return sign * value, not math.isfinite(value)


def fdt_threshold(
    phi: ScalarFn,
    alpha: ScalarFn,
    a_grid: Optional[np.ndarray] = None,
    direction: str = STABILIZING_FLOW,
) -> FDTResult:
    """
    Fixed dwell-time bound of a certificate.

    stabilizing-flow: sup over a of the integral of 1/phi from a to alpha(a);
    any theta - delta >= bound works. stabilizing-jumps: inf over a of the
    integral of 1/(-phi) from alpha(a) to a; any theta + delta <= bound works.

    Returns:
        FDTResult; bound is +inf when an integral diverges (stabilizing-flow)
    """
    grid = default_grid() if a_grid is None else np.asarray(a_grid, dtype=float)
    if direction == STABILIZING_FLOW:
        rate = phi
    elif direction == STABILIZING_JUMPS:
        rate = LambdaFn(lambda s: -np.asarray(phi(s), dtype=float), f"-({phi.label})")
    else:
        raise ValueError(f"unknown direction '{direction}'")

    values = np.empty(len(grid))
    diverged: List[float] = []
    for k, a in enumerate(grid):
        target = float(alpha(float(a)))
        if direction == STABILIZING_FLOW:
            value, div = _log_integral(rate, float(a), target)
        else:
            value, div = _log_integral(rate, target, float(a))
        if div:
            diverged.append(float(a))
            value = float("inf")
        values[k] = value

    if direction == STABILIZING_FLOW:
        k = int(np.argmax(values))
    else:
        k = int(np.argmin(values))
    bound = float(values[k])
    logger.info("FDT bound (%s): %.10g at a=%.3g, %d divergent cells", direction, bound, grid[k], len(diverged))
    return FDTResult(bound, direction, float(grid[k]), grid, values, diverged)


@dataclass
class DwellTimeVerdict:
    ok: bool
    conclusion: str
    sequence_class: str
    theta: float
    delta: float
    bound: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def certify_dwell_time(result: FDTResult, theta: float, delta: float = 0.0) -> DwellTimeVerdict:
    """
    Split the bound into (theta, delta). delta > 0 concludes ISS and delta = 0
    concludes GS, uniformly over S_theta (stabilizing flow, gaps >= theta) or
    over sequences with gaps <= theta (stabilizing jumps).
    """
    if delta < 0 or theta <= 0:
        raise ValueError("need theta > 0 and delta >= 0")
    if result.direction == STABILIZING_FLOW:
        ok = theta - delta >= result.bound
        cls = f"fdt_min_gap(theta={theta:g})"
    else:
        ok = theta + delta <= result.bound
        cls = f"fdt_max_gap(theta={theta:g})"
    conclusion = ("ISS" if delta > 0 else "GS") if ok else "inconclusive"
    return DwellTimeVerdict(ok, conclusion, cls, theta, delta, result.bound)


def gadt_check(
    c: float, d: float, h: ScalarFn, seq: ImpulseSequence, tol: Optional[float] = None
) -> MembershipResult:
    """
    Whether a sequence satisfies the generalized ADT condition for rates (c, d).

    Raises:
        SequenceError: d == 0
        ClassValidationError: h admits no L-majorant
    """
    if d == 0:
        raise SequenceError("the gADT condition needs d != 0")
    cls = GADT(h, c, d)
    return member(seq, cls) if tol is None else member(seq, cls, tol)
