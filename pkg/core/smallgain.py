#!/usr/bin/env python3
"""
Small-Gain Composition

Gain networks of interconnected impulsive subsystems sharing one impulse
sequence: the gain operator, the cycle small-gain condition, spectral radius
of linear gain matrices, Omega-paths, composite Lyapunov certificates (general
and exponential for power gains) and the gain/dwell-time trade-off.
"""

import logging
import math
from dataclasses import dataclass
from itertools import product
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from core.cmpfun import (
    ClassTag,
    ExprFn,
    LambdaFn,
    ScalarFn,
    TabulatedFn,
    check_grid,
    fit_power,
    identity,
    linear,
    tabulate,
    zero,
    validate_class,
)
from core.errors import SmallGainError
from core.hybridsim import SystemDef, build_interconnection
from core.lyapcheck import ExprStateFn, LyapunovCandidate, MaxCompositeFn
from core.settings import get_settings

logger = logging.getLogger(__name__)

POWER_TOL = 1e-9
BREAKPOINT_TOL = 1e-6
PATH_RTOL = 1e-12


def small_gain_grid() -> np.ndarray:
    """64 log-spaced points on [1e-6, 1e6] unless settings say otherwise."""
    cfg = get_settings("small_gain")
    return np.geomspace(cfg["grid_min"], cfg["grid_max"], int(cfg["grid_points"]))


class GainNetwork:
    """
    n subsystems with cross gains gains[i][j] (gain from V_j into subsystem i).

    None means a zero gain; the diagonal must be zero. jump_gains default to
    the flow gains.
    """

    def __init__(
        self,
        gains: Sequence[Sequence[Optional[ScalarFn]]],
        external: Optional[Sequence[Optional[ScalarFn]]] = None,
        certificates: Optional[Sequence[LyapunovCandidate]] = None,
        names: Optional[Sequence[str]] = None,
        jump_gains: Optional[Sequence[Sequence[Optional[ScalarFn]]]] = None,
        systems: Optional[Sequence[SystemDef]] = None,
    ):
        self.n = len(gains)
        if any(len(row) != self.n for row in gains):
            raise SmallGainError("gain matrix must be square")
        for i in range(self.n):
            if gains[i][i] is not None:
                raise SmallGainError(f"diagonal gain ({i}, {i}) must be zero")
        self.gains = [list(row) for row in gains]
        self.jump_gains = [list(row) for row in (jump_gains if jump_gains is not None else gains)]
        if len(self.jump_gains) != self.n or any(len(row) != self.n for row in self.jump_gains):
            raise SmallGainError("jump gain matrix must match the gain matrix")
        self.external = list(external) if external is not None else [None] * self.n
        self.certificates = list(certificates) if certificates is not None else []
        self.names = list(names) if names is not None else [f"S{i + 1}" for i in range(self.n)]
        self.systems = list(systems) if systems is not None else []
        if self.certificates and len(self.certificates) != self.n:
            raise SmallGainError("need one certificate per subsystem")

    @classmethod
    def from_matrix(cls, G: np.ndarray, **kwargs) -> "GainNetwork":
        """Linear gains gamma_ij(s) = G_ij s."""
        G = np.asarray(G, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise SmallGainError("gain matrix must be square")
        if np.any(G < 0):
            raise SmallGainError("gain matrix must be nonnegative")
        if np.any(np.diag(G) != 0):
            raise SmallGainError("gain matrix diagonal must be zero")
        gains = [[linear(G[i, j]) if G[i, j] > 0 else None for j in range(len(G))] for i in range(len(G))]
        return cls(gains, **kwargs)

    def edges(self) -> List[Tuple[int, int]]:
        return [(i, j) for i in range(self.n) for j in range(self.n) if self.gains[i][j] is not None]

    def _fits(self):
        grid = small_gain_grid()
        return {(i, j): fit_power(self.gains[i][j], grid) for i, j in self.edges()}

    @property
    def power_flag(self) -> bool:
        return all(fit.is_power(POWER_TOL) for fit in self._fits().values())

    @property
    def linear_flag(self) -> bool:
        return all(fit.is_power(POWER_TOL) and abs(fit.b - 1.0) <= POWER_TOL for fit in self._fits().values())

    def linear_matrix(self) -> np.ndarray:
        if not self.linear_flag:
            raise SmallGainError("gains are not all linear")
        G = np.zeros((self.n, self.n))
        for (i, j), fit in self._fits().items():
            G[i, j] = float(self.gains[i][j](1.0))
        return G

    def state_names(self) -> List[Tuple[str, ...]]:
        if self.systems:
            return [s.state_names for s in self.systems]
        return [tuple(c.V.state_names) for c in self.certificates]

    def interconnection(self, name: str = "interconnection") -> SystemDef:
        if not self.systems:
            raise SmallGainError("network has no subsystem definitions")
        return build_interconnection(self.systems, name)

    def to_dict(self) -> Dict[str, Any]:
        def fn(f: Optional[ScalarFn]):
            return f.to_dict() if f is not None else None

        return {
            "names": self.names,
            "gains": [[fn(f) for f in row] for row in self.gains],
            "jump_gains": [[fn(f) for f in row] for row in self.jump_gains],
            "external": [fn(f) for f in self.external],
        }


def _apply(gains: List[List[Optional[ScalarFn]]], s: np.ndarray) -> np.ndarray:
    n = len(gains)
    out = np.zeros_like(s, dtype=float)
    for i in range(n):
        for j in range(n):
            if gains[i][j] is not None:
                out[i] = np.maximum(out[i], np.asarray(gains[i][j](s[j]), dtype=float))
    return out


def gamma_apply(net: GainNetwork, s: Sequence[float]) -> np.ndarray:
    """Gamma(s)_i = max_j gamma_ij(s_j); s has shape (n,) or (n, K)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise SmallGainError("gain operator needs a nonnegative vector")
    return _apply(net.gains, s)


def simple_cycles(net: GainNetwork) -> List[List[int]]:
    """Simple cycles of the gain digraph (edge i -> j when gamma_ij != 0), smallest node first."""
    adjacency = {i: [j for j in range(net.n) if net.gains[i][j] is not None] for i in range(net.n)}
    cycles: List[List[int]] = []

    def walk(start: int, node: int, path: List[int], seen: set):
        for nxt in adjacency[node]:
            if nxt == start:
                cycles.append(list(path))
            elif nxt > start and nxt not in seen:
                seen.add(nxt)
                path.append(nxt)
                walk(start, nxt, path, seen)
                path.pop()
                seen.discard(nxt)

    for start in range(net.n):
        walk(start, start, [start], {start})
    return cycles


def _cycle_values(net: GainNetwork, cycle: Sequence[int], s: np.ndarray) -> Tuple[np.ndarray, Dict[int, np.ndarray]]:
    """gamma_{k1 k2} o ... o gamma_{kp k1}(s) and the intermediate values along the cycle."""
    values = {cycle[0]: s}
    current = s
    p = len(cycle)
    for idx in range(p - 1, -1, -1):
        i, j = cycle[idx], cycle[(idx + 1) % p]
        current = np.asarray(net.gains[i][j](current), dtype=float)
        if idx > 0:
            values[i] = current
    return current, values


@dataclass
class SmallGainResult:
    holds: bool
    cycles_checked: int
    cycle: Optional[List[int]] = None
    point: Optional[float] = None
    ratio: Optional[float] = None
    violating_points: int = 0
    witness: Optional[List[float]] = None

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def small_gain_check(net: GainNetwork, r_grid: Optional[np.ndarray] = None) -> SmallGainResult:
    """
    Check that every cycle composition stays below the identity on the grid.

    Every rotation of every simple cycle is checked. On failure the result
    carries a vector v with Gamma(v) >= v.
    """
    grid = check_grid(small_gain_grid() if r_grid is None else r_grid)
    cycles = simple_cycles(net)
    checked = 0
    for cycle in cycles:
        for shift in range(len(cycle)):
            rotated = cycle[shift:] + cycle[:shift]
            checked += 1
            composed, _ = _cycle_values(net, rotated, grid)
            bad = composed >= grid
            if np.any(bad):
                k = int(np.argmax(composed / grid))
                _, along = _cycle_values(net, rotated, grid[k : k + 1])
                witness = [0.0] * net.n
                for node, value in along.items():
                    witness[node] = float(np.asarray(value).ravel()[0])
                logger.info("Small-gain violated on cycle %s at s=%.3g", rotated, grid[k])
                return SmallGainResult(
                    False,
                    checked,
                    [int(c) for c in rotated],
                    float(grid[k]),
                    float(composed[k] / grid[k]),
                    int(bad.sum()),
                    witness,
                )
    return SmallGainResult(True, checked)


def gamma_not_geq_check(
    net: GainNetwork, samples: Optional[np.ndarray] = None, count: int = 1000, seed: int = 0
) -> Tuple[bool, Optional[np.ndarray]]:
    """
    Gamma(s) not >= s on sampled nonzero vectors; returns a counterexample when found.

    Default samples have log-uniform components over the small-gain grid range.
    """
    if samples is None:
        rng = np.random.default_rng(seed)
        grid = small_gain_grid()
        samples = np.exp(rng.uniform(np.log(grid[0]), np.log(grid[-1]), size=(count, net.n)))
    S = np.asarray(samples, dtype=float).T
    G = gamma_apply(net, S)
    nonzero = np.any(S > 0, axis=0)
    geq = np.all(G >= S, axis=0) & nonzero
    if np.any(geq):
        return False, S[:, int(np.argmax(geq))]
    return True, None


def spectral_radius(net: GainNetwork, tol: float = 1e-10, max_iter: int = 100000) -> float:
    """
    Spectral radius of a linear gain matrix by shifted power iteration per
    strongly connected component, stopped by Collatz-Wielandt bounds.

    Raises:
        SmallGainError: a gain is not linear
    """
    G = net.linear_matrix()
    return _spectral_radius_matrix(G, tol, max_iter)


def _spectral_radius_matrix(G: np.ndarray, tol: float = 1e-10, max_iter: int = 100000) -> float:
    count, labels = connected_components(csr_matrix(G > 0), directed=True, connection="strong")
    radius = 0.0
    for comp in range(count):
        idx = np.flatnonzero(labels == comp)
        if len(idx) < 2:
            continue
        B = G[np.ix_(idx, idx)]
        tau = float(np.mean(B.sum(axis=1))) or 1.0
        M = B + tau * np.eye(len(idx))
        x = np.ones(len(idx)) / len(idx)
        lower, upper = 0.0, float("inf")
        for _ in range(max_iter):
            y = M @ x
            ratios = y / x
            lower, upper = float(np.min(ratios)), float(np.max(ratios))
            x = y / np.sum(y)
            if upper - lower <= tol * max(1.0, upper):
                break
        else:
            logger.warning("Power iteration stopped at the iteration limit (gap %.3g)", upper - lower)
        radius = max(radius, 0.5 * (upper + lower) - tau)
    return radius


# Omega-paths


@dataclass
class OmegaPath:
    """sigma_i in K-infinity with Gamma(sigma(r)) <= sigma(r) on the grid."""

    sigmas: List[ScalarFn]
    inverses: List[ScalarFn]
    grid: np.ndarray
    variant: str
    direction: Optional[List[float]] = None
    worst_ratio: float = 0.0

    @classmethod
    def from_functions(
        cls,
        net: GainNetwork,
        sigmas: Sequence[ScalarFn],
        inverses: Optional[Sequence[ScalarFn]] = None,
        r_grid: Optional[np.ndarray] = None,
    ) -> "OmegaPath":
        """Validate a user-supplied path on the grid."""
        grid = check_grid(small_gain_grid() if r_grid is None else r_grid)
        if len(sigmas) != net.n:
            raise SmallGainError(f"need {net.n} path components, got {len(sigmas)}")
        if inverses is None:
            inverses = [tabulate(s, grid, ClassTag.KINF).inverse() for s in sigmas]
        variant, worst = _validate_path(net, sigmas, grid)
        return cls(list(sigmas), list(inverses), grid, variant, None, worst)

    def values(self, r: np.ndarray) -> np.ndarray:
        return np.stack([np.asarray(s(r), dtype=float) for s in self.sigmas])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma": [s.to_dict() for s in self.sigmas],
            "variant": self.variant,
            "direction": self.direction,
            "worst_ratio": self.worst_ratio,
        }


def _validate_path(net: GainNetwork, sigmas: Sequence[ScalarFn], grid: np.ndarray) -> Tuple[str, float]:
    for i, s in enumerate(sigmas):
        check = validate_class(s, ClassTag.KINF, grid)
        if not check.ok:
            raise SmallGainError(f"sigma_{i + 1} is not K-infinity at r={check.counterexample:g}: {check.reason}")
    sigma = np.stack([np.asarray(s(grid), dtype=float) for s in sigmas])
    image = gamma_apply(net, sigma)
    ratio = image / sigma
    worst = float(np.max(ratio))
    if worst > 1.0 + PATH_RTOL:
        i, k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        raise SmallGainError(
            f"Gamma(sigma(r)) > sigma(r) in component {i + 1} at r={grid[k]:g} (ratio {ratio[i, k]:.6g})"
        )
    return ("strict" if worst < 1.0 else "quasi"), worst


def _q_operator(net: GainNetwork, x: np.ndarray) -> np.ndarray:
    """Q(x) = max{x, Gamma(x), ..., Gamma^{n-1}(x)}."""
    out = x.copy()
    current = x
    for _ in range(net.n - 1):
        current = gamma_apply(net, current)
        out = np.maximum(out, current)
    return out


def omega_path(net: GainNetwork, a: Optional[Sequence[float]] = None, r_grid: Optional[np.ndarray] = None) -> OmegaPath:
    """
    Omega-path sigma(t) = Q(a t), tabulated on the grid.

    Raises:
        SmallGainError: the small-gain condition fails or Gamma(sigma) <= sigma fails on the grid
    """
    grid = check_grid(small_gain_grid() if r_grid is None else r_grid)
    direction = np.ones(net.n) if a is None else np.asarray(a, dtype=float)
    if direction.shape != (net.n,) or np.any(direction <= 0):
        raise SmallGainError("path direction must be a positive n-vector")
    result = small_gain_check(net, grid)
    if not result.holds:
        raise SmallGainError(f"small-gain condition fails on cycle {result.cycle} at s={result.point:g}")

    values = _q_operator(net, direction[:, None] * grid[None, :])
    sigmas: List[ScalarFn] = [
        TabulatedFn(grid, values[i], ClassTag.KINF, label=f"sigma_{i + 1}") for i in range(net.n)
    ]
    inverses = [s.inverse() for s in sigmas]
    variant, worst = _validate_path(net, sigmas, grid)
    logger.info("Omega-path (%s) validated on %d points, worst ratio %.6g", variant, len(grid), worst)
    return OmegaPath(sigmas, inverses, grid, variant, direction.tolist(), worst)


# Composite certificates


def _derivative(f: ScalarFn, y: np.ndarray, rel_step: float) -> np.ndarray:
    h = rel_step * y
    return (np.asarray(f(y + h), dtype=float) - np.asarray(f(y - h), dtype=float)) / (2.0 * h)


def _composite_parts(net: GainNetwork, path: OmegaPath):
    if not net.certificates:
        raise SmallGainError("network has no subsystem certificates")
    names = [name for sub in net.state_names() for name in sub]
    parts = []
    for inv, cert in zip(path.inverses, net.certificates):
        V = cert.V.with_states(names) if isinstance(cert.V, ExprStateFn) else cert.V
        parts.append((inv, V))
    return names, parts


def _external_gain(net: GainNetwork, path: OmegaPath) -> ScalarFn:
    pairs = [(inv, g) for inv, g in zip(path.inverses, net.external) if g is not None]
    if not pairs:
        return zero()
    return LambdaFn(
        lambda r: np.max(np.stack([np.asarray(inv(np.asarray(g(r), dtype=float)), dtype=float) for inv, g in pairs]), axis=0),
        "max_i sigma_i^-1(chi_i)",
        ClassTag.KINF,
    )


def _sandwich(net: GainNetwork, path: OmegaPath) -> Tuple[ScalarFn, ScalarFn]:
    n = net.n
    certs = net.certificates
    psi1 = LambdaFn(
        lambda r: np.min(
            np.stack([np.asarray(inv(np.asarray(c.psi1(r / math.sqrt(n)), dtype=float))) for inv, c in zip(path.inverses, certs)]),
            axis=0,
        ),
        "min_i sigma_i^-1(psi1_i(r / sqrt(n)))",
        ClassTag.KINF,
    )
    psi2 = LambdaFn(
        lambda r: np.max(
            np.stack([np.asarray(inv(np.asarray(c.psi2(r), dtype=float))) for inv, c in zip(path.inverses, certs)]),
            axis=0,
        ),
        "max_i sigma_i^-1(psi2_i(r))",
        ClassTag.KINF,
    )
    return psi1, psi2


def _eta_values(net: GainNetwork, path: OmegaPath, grid: np.ndarray) -> np.ndarray:
    """eta(r) = max_{i != j} sigma_i^-1(jump gain_ij(sigma_j(r)))."""
    eta = np.zeros(len(grid))
    sigma = path.values(grid)
    for i, j in product(range(net.n), range(net.n)):
        gain = net.jump_gains[i][j]
        if gain is not None and i != j:
            eta = np.maximum(eta, np.asarray(path.inverses[i](np.asarray(gain(sigma[j]), dtype=float)), dtype=float))
    return eta


def compose_certificate(net: GainNetwork, path: OmegaPath, name: str = "composite") -> LyapunovCandidate:
    """
    Composite max-form certificate V(x) = max_i sigma_i^-1(V_i(x_i)).

    chi = max_i sigma_i^-1 o chi_i, phi(r) = min_i (sigma_i^-1)'(sigma_i(r)) phi_i(sigma_i(r)),
    alpha = max{alpha*, eta} with alpha* a grid majorant of max_i sigma_i^-1 o alpha_i o sigma_i.

    Raises:
        SmallGainError: eta >= id somewhere on the grid (the path is inadequate)
    """
    names, parts = _composite_parts(net, path)
    grid = path.grid
    ratio = float(grid[1] / grid[0])
    rel_step = min(1e-4, (ratio - 1.0) / 10.0)
    certs = net.certificates

    def phi_fn(r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        rates = []
        for sigma, inv, cert in zip(path.sigmas, path.inverses, certs):
            y = np.asarray(sigma(r), dtype=float)
            safe = np.where(y > 0, y, 1.0)
            slope = np.where(y > 0, _derivative(inv, safe, rel_step), 0.0)
            rates.append(slope * np.asarray(cert.flow_rate_fn()(y), dtype=float))
        return np.min(np.stack(rates), axis=0)

    phi = LambdaFn(phi_fn, "min_i (sigma_i^-1)'(sigma_i) phi_i(sigma_i)", ClassTag.NONE)

    sigma_grid = path.values(grid)
    lifted = np.zeros(len(grid))
    for i, cert in enumerate(certs):
        jumped = np.asarray(cert.jump_fn()(sigma_grid[i]), dtype=float)
        lifted = np.maximum(lifted, np.asarray(path.inverses[i](jumped), dtype=float))
    alpha_star = np.maximum.accumulate(lifted) + 1e-12 * grid

    eta = _eta_values(net, path, grid)
    if np.any(eta >= grid):
        k = int(np.argmax(eta >= grid))
        raise SmallGainError(f"eta >= id at r={grid[k]:g}: the Omega-path is inadequate for the jump gains")
    alpha_values = np.maximum.accumulate(np.maximum(alpha_star, eta))
    alpha = TabulatedFn(grid, alpha_values, ClassTag.K, label="max(alpha*, eta)")

    psi1, psi2 = _sandwich(net, path)
    chi = _external_gain(net, path)
    return LyapunovCandidate(
        V=MaxCompositeFn(parts),
        psi1=psi1,
        psi2=psi2,
        chi=chi,
        phi=phi,
        alpha=alpha,
        form="max",
        gamma=chi,
        name=name,
    )


@dataclass
class ExponentProfile:
    exponents: List[float]
    breakpoints: List[float]


def piecewise_exponents(f: ScalarFn, grid: np.ndarray) -> ExponentProfile:
    """Exponents of a piecewise power function from second differences of log f against log r."""
    lr = np.log(grid)
    lf = np.log(np.asarray(f(grid), dtype=float))
    slopes = np.diff(lf) / np.diff(lr)
    exponents = [float(slopes[0])]
    breakpoints: List[float] = []
    for k in range(1, len(slopes)):
        if abs(slopes[k] - slopes[k - 1]) > BREAKPOINT_TOL:
            exponents.append(float(slopes[k]))
            breakpoints.append(float(grid[k]))
    singles = sum(1 for k in range(1, len(slopes) - 1)
                  if abs(slopes[k] - slopes[k - 1]) > BREAKPOINT_TOL and abs(slopes[k + 1] - slopes[k]) > BREAKPOINT_TOL)
    if singles > len(slopes) // 2:
        raise SmallGainError(f"'{f.label}' is not piecewise power on the grid")
    return ExponentProfile(exponents, breakpoints)


def compose_exponential(net: GainNetwork, path: Optional[OmegaPath] = None, name: str = "composite-exp") -> LyapunovCandidate:
    """
    Exponential composite certificate for power gains.

    c = min over i and the exponents p of sigma_i^-1 of c_i p; the jump factor
    is the largest value of sigma_i^-1(alpha_i(sigma_i(r))) / r and of
    eta(r) / r on the grid, reported as exp(-d).

    Raises:
        SmallGainError: gains not in class P, certificates not exponential or small-gain fails
    """
    if not net.power_flag:
        raise SmallGainError("compose_exponential needs power gains (class P)")
    if not net.certificates or not all(c.is_exponential for c in net.certificates):
        raise SmallGainError("compose_exponential needs exponential subsystem certificates")
    path = path or omega_path(net)
    grid = path.grid

    rate = float("inf")
    factor = 0.0
    sigma_grid = path.values(grid)
    for i, cert in enumerate(net.certificates):
        profile = piecewise_exponents(path.inverses[i], grid)
        rate = min(rate, min(cert.c * p for p in profile.exponents))
        jumped = np.asarray(path.inverses[i](math.exp(-cert.d) * sigma_grid[i]), dtype=float)
        factor = max(factor, float(np.max(jumped / grid)))
    eta = _eta_values(net, path, grid)
    eta_ratio = float(np.max(eta / grid))
    if eta_ratio >= 1.0:
        raise SmallGainError("eta >= id on the grid")
    factor = max(factor, eta_ratio, 1e-300)
    d = -math.log(factor)

    names, parts = _composite_parts(net, path)
    psi1, psi2 = _sandwich(net, path)
    chi = _external_gain(net, path)
    logger.info("Exponential composite: c=%.6g, d=%.6g", rate, d)
    return LyapunovCandidate(
        V=MaxCompositeFn(parts), psi1=psi1, psi2=psi2, chi=chi, c=rate, d=d, form="max", gamma=chi, name=name
    )


# Trade-off between gains and impulse frequency


@dataclass
class TradeoffPoint:
    k: float
    rho_k: float
    c_k: float
    omega: float
    chi_ext_k: Optional[List[float]] = None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"k": self.k, "rho_k": self.rho_k, "c_k": self.c_k, "omega": self.omega}
        if self.chi_ext_k is not None:
            out["chi_ext_k"] = self.chi_ext_k
        return out


@dataclass
class TradeoffResult:
    rho: float
    points: List[TradeoffPoint]
    omega_decreasing: bool
    small_gain_everywhere: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rho": self.rho,
            "points": [p.to_dict() for p in self.points],
            "omega_decreasing": self.omega_decreasing,
            "small_gain_everywhere": self.small_gain_everywhere,
        }


def tradeoff_curve(
    chi_matrix: np.ndarray,
    chi_ext: Optional[np.ndarray],
    c_tilde: float,
    d: float,
    k_grid: Optional[Sequence[float]] = None,
) -> TradeoffResult:
    """
    Scaled gains Gamma_k = chi / k, rates c_k = c~ - k and impulse frequency
    omega(k) = (c~ - k) / (-d) for k in (rho(chi), c~). External gains, when
    given, are scaled the same way (chi_ext / k).

    Raises:
        SmallGainError: d >= 0, c~ <= rho or k outside (rho, c~)
    """
    chi_matrix = np.asarray(chi_matrix, dtype=float)
    if not d < 0:
        raise SmallGainError(f"trade-off needs d < 0, got {d}")
    rho = _spectral_radius_matrix(chi_matrix)
    if not c_tilde > rho:
        raise SmallGainError(f"trade-off needs c~ > rho = {rho:g}, got {c_tilde:g}")
    ks = np.linspace(rho, c_tilde, 34)[1:-1] if k_grid is None else np.asarray(k_grid, dtype=float)
    if np.any(ks <= rho) or np.any(ks >= c_tilde):
        raise SmallGainError(f"every k must lie in ({rho:g}, {c_tilde:g})")

    ext = None if chi_ext is None else np.asarray(chi_ext, dtype=float).ravel()
    points = []
    for k in ks:
        rho_k = _spectral_radius_matrix(chi_matrix / k)
        ext_k = None if ext is None else (ext / k).tolist()
        points.append(TradeoffPoint(float(k), float(rho_k), float(c_tilde - k), float((c_tilde - k) / -d), ext_k))
    omegas = np.array([p.omega for p in points])
    order = np.argsort(ks)
    decreasing = bool(np.all(np.diff(omegas[order]) < 0))
    everywhere = all(p.rho_k < 1.0 for p in points)
    return TradeoffResult(rho, points, decreasing, everywhere)


def solve_example_tradeoff() -> Tuple[float, float]:
    """
    Best b for the two-subsystem example: (a - 1) = 2(3b - 1) on the small-gain
    boundary a b^2 = 1, i.e. 6b^3 - b^2 - 1 = 0. Returns (b, 2(3b - 1)).
    """
    b = optimize.bisect(lambda x: 6 * x**3 - x**2 - 1, 0.5, 1.0, xtol=1e-12, maxiter=200)
    return float(b), float(2 * (3 * b - 1))


def example_network(a: float, b: float) -> GainNetwork:
    """
    Two coupled scalar subsystems x1' = -x1 + x2^2, x2' = -x2 + 3 sqrt(|x1|),
    both jumping by x = exp(-1) x^-, with V_i = |x_i|, gains r^2/a and sqrt(r)/b
    and exponential rates c1 = 1 - a, c2 = 1 - 3b, d = 1. Jumps are uncoupled.
    """
    params = {"a": float(a), "b": float(b)}
    sub1 = SystemDef.from_sources("S1", ["-x1 + x2^2"], ["exp(-1)*x1"], states=["x1"], inputs=["x2"])
    sub2 = SystemDef.from_sources("S2", ["-x2 + 3*sqrt(abs(x1))"], ["exp(-1)*x2"], states=["x2"], inputs=["x1"])
    g12 = ExprFn.from_source("r^2/a", "r", ClassTag.KINF, params)
    g21 = ExprFn.from_source("sqrt(r)/b", "r", ClassTag.KINF, params)
    ident = identity()
    cert1 = LyapunovCandidate(
        V=ExprStateFn.from_source("abs(x1)", ["x1"]), psi1=ident, psi2=ident, chi=g12,
        c=1.0 - a, d=1.0, form="implication", name="V1",
    )
    cert2 = LyapunovCandidate(
        V=ExprStateFn.from_source("abs(x2)", ["x2"]), psi1=ident, psi2=ident, chi=g21,
        c=1.0 - 3.0 * b, d=1.0, form="implication", name="V2",
    )
    return GainNetwork(
        [[None, g12], [g21, None]],
        certificates=[cert1, cert2],
        names=["S1", "S2"],
        jump_gains=[[None, None], [None, None]],
        systems=[sub1, sub2],
    )


def example_path(net: GainNetwork, s: float) -> OmegaPath:
    """The path sigma_1(r) = r, sigma_2(r) = sqrt(r)/s, valid for 1/b < 1/s < sqrt(a)."""
    sigma1 = ExprFn.from_source("r", "r", ClassTag.KINF)
    sigma2 = ExprFn.from_source("sqrt(r)/s", "r", ClassTag.KINF, {"s": s})
    inv2 = ExprFn.from_source("s^2*r^2", "r", ClassTag.KINF, {"s": s})
    return OmegaPath.from_functions(net, [sigma1, sigma2], [sigma1, inv2])
