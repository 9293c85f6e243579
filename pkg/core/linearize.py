#!/usr/bin/env python3
"""
Local Quadratic Certificates

Finite-dimensional linearization at the origin: numeric Jacobians of the flow
and jump maps, the Lyapunov equation R^T P + P R = -I solved in the symmetric
unknowns, and a local exponential ISS-Lyapunov candidate V(x) = x^T P x with
gain chi(r) = sqrt(r).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.cmpfun import ClassTag, ExprFn
from core.errors import LinearizationError
from core.expr import BinOp, Expr, Var, constant
from core.hybridsim import SystemDef
from core.lyapcheck import ExprStateFn, LyapunovCandidate
from core.settings import get_settings

logger = logging.getLogger(__name__)

HURWITZ_MARGIN = 1e-10
RESIDUAL_TOL = 1e-9
SYMMETRY_TOL = 1e-12
RATE_MARGIN = 0.9
JUMP_MARGIN = 1.01
SMOOTHNESS_TOL = 1e-3
MIN_JUMP_FACTOR = 1e-12


@dataclass
class Linearization:
    """Linear parts at the origin and sampled residual bounds w(rho)."""

    R: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    rho_grid: np.ndarray
    w_f: np.ndarray
    w_g: np.ndarray
    system: SystemDef
    warnings: List[str] = field(default_factory=list)

    @property
    def nonsmooth(self) -> bool:
        return bool(self.warnings)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "R": self.R.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "F": self.F.tolist(),
            "residual": {"rho": self.rho_grid.tolist(), "w_f": self.w_f.tolist(), "w_g": self.w_g.tolist()},
            "warnings": list(self.warnings),
        }


def _rho_grid() -> np.ndarray:
    cfg = get_settings("linearize")
    return np.geomspace(cfg["rho_min"], cfg["rho_max"], int(cfg["rho_points"]))


def _map_columns(fn, n: int, m: int, Z: np.ndarray) -> np.ndarray:
    """Evaluate a system map on stacked (x, u) columns Z of shape (n + m, K)."""
    return np.asarray(fn(Z[:n], Z[n:]), dtype=float).reshape(n, -1)


def _jacobian(fn, n: int, m: int, h: float) -> Tuple[np.ndarray, List[int]]:
    """Richardson-refined central differences at 0; also the columns where one-sided slopes disagree."""
    dim = n + m
    eye = np.eye(dim)

    def central(step: float) -> np.ndarray:
        plus = _map_columns(fn, n, m, step * eye)
        minus = _map_columns(fn, n, m, -step * eye)
        return (plus - minus) / (2.0 * step)

    J = (4.0 * central(h / 2.0) - central(h)) / 3.0
    base = _map_columns(fn, n, m, np.zeros((dim, 1)))
    forward = (_map_columns(fn, n, m, h * eye) - base) / h
    backward = (base - _map_columns(fn, n, m, -h * eye)) / h
    gap = np.abs(forward - backward) > SMOOTHNESS_TOL * (1.0 + np.abs(J))
    return J, [int(k) for k in np.flatnonzero(np.any(gap, axis=0))]


def _residual_curve(fn, lin: np.ndarray, n: int, m: int, rhos: np.ndarray, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n + m, count))
    directions /= np.linalg.norm(directions, axis=0, keepdims=True)
    w = np.zeros(len(rhos))
    for k, rho in enumerate(rhos):
        Z = rho * directions
        rest = _map_columns(fn, n, m, Z) - lin @ Z
        scale = np.linalg.norm(Z[:n], axis=0) + np.linalg.norm(Z[n:], axis=0)
        w[k] = float(np.max(np.linalg.norm(rest, axis=0) / scale))
    return w


def numeric_jacobians(sys: SystemDef, h: Optional[float] = None, samples: Optional[int] = None, seed: int = 0) -> Linearization:
    """
    Jacobians of f and g at (0, 0) and the residual estimator w(rho).

    Args:
        sys: System to linearize
        h: Difference step (default from settings, 1e-6)
        samples: Directions per rho on the (x, u) sphere
        seed: Seed for the sphere directions

    Returns:
        Linearization with a warning per map and variable where the one-sided
        slopes disagree (non-Lipschitz terms such as sqrt(|x|))
    """
    cfg = get_settings("linearize")
    h = float(cfg["step"] if h is None else h)
    count = int(cfg["samples"] if samples is None else samples)
    n, m = sys.n, sys.m
    names = list(sys.state_names) + list(sys.input_names)

    Jf, bad_f = _jacobian(sys.flow, n, m, h)
    Jg, bad_g = _jacobian(sys.jump, n, m, h)
    warnings = [f"f is not smooth in '{names[k]}' at the origin" for k in bad_f]
    warnings += [f"g is not smooth in '{names[k]}' at the origin" for k in bad_g]
    for w in warnings:
        logger.warning("%s: %s", sys.name, w)

    rhos = _rho_grid()
    w_f = _residual_curve(sys.flow, Jf, n, m, rhos, count, seed)
    w_g = _residual_curve(sys.jump, Jg, n, m, rhos, count, seed + 1)
    return Linearization(Jf[:, :n], Jf[:, n:], Jg[:, :n], Jg[:, n:], rhos, w_f, w_g, sys, warnings)


def spectral_abscissa(R: np.ndarray) -> float:
    return float(np.max(np.real(np.linalg.eigvals(R))))


def _symmetric_basis(n: int) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """Duplication matrix mapping the upper-triangle unknowns to vec(P)."""
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    dup = np.zeros((n * n, len(pairs)))
    for k, (i, j) in enumerate(pairs):
        dup[i * n + j, k] = 1.0
        dup[j * n + i, k] = 1.0
    return dup, pairs


def solve_lyapunov_equation(R: np.ndarray) -> np.ndarray:
    """
    Solve R^T P + P R = -I as a dense system in the n(n+1)/2 symmetric unknowns.

    Raises:
        LinearizationError: R is not Hurwitz, the residual exceeds 1e-9 or P is not positive definite
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[0] != R.shape[1]:
        raise LinearizationError(f"R must be square, got shape {R.shape}")
    n = R.shape[0]
    abscissa = spectral_abscissa(R)
    if abscissa >= -HURWITZ_MARGIN:
        raise LinearizationError(f"R is not Hurwitz (spectral abscissa {abscissa:.6g})")

    # vec(R^T P + P R) = (I kron R^T + R^T kron I) vec(P) in row-major order
    eye = np.eye(n)
    K = np.kron(R.T, eye) + np.kron(eye, R.T)
    dup, pairs = _symmetric_basis(n)
    rows = [i * n + j for i, j in pairs]
    A = (K @ dup)[rows]
    b = -eye.reshape(-1)[rows]
    try:
        p = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise LinearizationError(f"Lyapunov system is singular (spectral abscissa {abscissa:.6g})") from e
    P = (dup @ p).reshape(n, n)
    P = 0.5 * (P + P.T)

    residual = float(np.linalg.norm(R.T @ P + P @ R + eye, "fro"))
    if residual > RESIDUAL_TOL:
        raise LinearizationError(f"Lyapunov residual {residual:.3g} exceeds {RESIDUAL_TOL:g}")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as e:
        raise LinearizationError("Lyapunov solution is not positive definite") from e
    logger.debug("Lyapunov equation solved, n=%d, residual %.3g", n, residual)
    return P


def quadratic_expression(P: np.ndarray, state_names: List[str]) -> Expr:
    """x^T P x as an expression over the state names."""
    expr: Optional[Expr] = None
    n = len(state_names)
    for i in range(n):
        for j in range(i, n):
            coeff = P[i, i] if i == j else 2.0 * P[i, j]
            if coeff == 0:
                continue
            if i == j:
                monomial: Expr = BinOp("^", Var(state_names[i]), constant(2.0))
            else:
                monomial = BinOp("*", Var(state_names[i]), Var(state_names[j]))
            term = BinOp("*", constant(coeff), monomial)
            expr = term if expr is None else BinOp("+", expr, term)
    return expr if expr is not None else constant(0.0)


@dataclass
class QuadraticCertificate:
    """V(x) = x^T P x on the ball of radius rho."""

    P: np.ndarray
    eps: float
    rho: float
    c_local: float
    r2: float
    state_names: List[str]
    samples: int = 0

    @property
    def norm_P(self) -> float:
        return float(np.max(np.linalg.eigvalsh(self.P)))

    @property
    def jump_factor(self) -> float:
        return max(self.r2 / self.eps, MIN_JUMP_FACTOR)

    @property
    def d(self) -> float:
        return -math.log(self.jump_factor)

    def expression(self) -> Expr:
        return quadratic_expression(self.P, self.state_names)

    def to_candidate(self, name: str = "quadratic") -> LyapunovCandidate:
        eps, norm_P = self.eps, self.norm_P
        return LyapunovCandidate(
            V=ExprStateFn(self.expression(), self.state_names),
            psi1=ExprFn.from_source("e*r^2", "r", ClassTag.KINF, {"e": eps}),
            psi2=ExprFn.from_source("p*r^2", "r", ClassTag.KINF, {"p": norm_P}),
            chi=ExprFn.from_source("sqrt(r)", "r", ClassTag.KINF),
            c=self.c_local,
            d=self.d,
            form="implication",
            local_radius=self.rho,
            name=name,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "P": self.P.tolist(),
            "eps": self.eps,
            "norm_P": self.norm_P,
            "rho": self.rho,
            "c_local": self.c_local,
            "r2": self.r2,
            "jump_factor": self.jump_factor,
            "d": self.d,
            "samples": self.samples,
            "certificate": self.to_candidate().to_dict(),
        }


def _ball_samples(
    rng: np.random.Generator, P: np.ndarray, m: int, rho: float, count: int
) -> Tuple[np.ndarray, np.ndarray]:
    """States in the rho-ball (a quarter on its sphere) and inputs with sqrt(||u||) <= V(x), ||u|| <= rho."""
    n = P.shape[0]
    dirs = rng.standard_normal((count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rho * rng.uniform(0.0, 1.0, size=count) ** (1.0 / n)
    radii[: count // 4] = rho
    radii = np.maximum(radii, 1e-12 * rho)
    X = dirs * radii[:, None]
    if m == 0:
        return X, np.zeros((count, 0))
    udirs = rng.standard_normal((count, m))
    udirs /= np.linalg.norm(udirs, axis=1, keepdims=True)
    cap = np.minimum(rho, np.einsum("ki,ij,kj->k", X, P, X) ** 2)
    umag = cap * rng.uniform(0.0, 1.0, size=count)
    umag[: count // 2] = 0.0
    return X, udirs * umag[:, None]


def build_local_certificate(
    lin: Linearization,
    P: Optional[np.ndarray] = None,
    rho_grid: Optional[np.ndarray] = None,
    samples: Optional[int] = None,
    seed: int = 0,
) -> QuadraticCertificate:
    """
    Largest grid rho on which V = x^T P x decays along the flow.

    Samples are drawn on the ball of radius 2 rho inside the gain guard
    V(x) >= sqrt(||u||).
    The flow rate is c = 0.9 times the sampled worst decay ratio; the jump
    factor is r2 / eps with r2 = 1.01 max(sampled V(g) / ||x||^2, lambda_max(D^T P D)).

    Raises:
        LinearizationError: no rho on the grid passes the flow check
    """
    sys = lin.system
    P = solve_lyapunov_equation(lin.R) if P is None else np.asarray(P, dtype=float)
    if np.max(np.abs(P - P.T)) > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(P)))):
        raise LinearizationError("P must be symmetric")
    eigs = np.linalg.eigvalsh(P)
    eps = float(eigs[0])
    if eps <= 0:
        raise LinearizationError(f"P is not positive definite (smallest eigenvalue {eps:.3g})")
    rhos = np.sort(_rho_grid() if rho_grid is None else np.asarray(rho_grid, dtype=float))
    count = int(get_settings("linearize")["samples"] if samples is None else samples)
    n, m = sys.n, sys.m
    names = list(sys.state_names)
    linear_jump = float(np.max(np.linalg.eigvalsh(lin.D.T @ P @ lin.D)))

    chosen: Optional[Tuple[float, float, float]] = None
    for k, rho in enumerate(rhos):
        rng = np.random.default_rng(seed + k)
        X, U = _ball_samples(rng, P, m, 2.0 * rho, count)
        Xt, Ut = X.T, U.T
        V = np.einsum("ik,ij,jk->k", Xt, P, Xt)
        Vdot = 2.0 * np.einsum("ik,ij,jk->k", Xt, P, sys.flow(Xt, Ut))
        worst = float(np.max(Vdot / V))
        if not np.isfinite(worst) or worst > 0:
            logger.debug("rho=%.3g fails the flow check (worst V'/V %.3g)", rho, worst)
            continue
        G = sys.jump(Xt, Ut)
        VG = np.einsum("ik,ij,jk->k", G, P, G)
        r2 = JUMP_MARGIN * max(float(np.max(VG / np.sum(X**2, axis=1))), linear_jump)
        chosen = (float(rho), -RATE_MARGIN * worst, r2)

    if chosen is None:
        raise LinearizationError(
            f"no rho in [{rhos[0]:g}, {rhos[-1]:g}] certifies decay: "
            "the origin linearization is unstable or the residuals are too large"
        )
    rho, c_local, r2 = chosen
    cert = QuadraticCertificate(P, eps, rho, c_local, r2, names, count)
    logger.info(
        "Local certificate: rho=%.3g, c=%.6g, jump factor %.6g (d=%.6g)", rho, c_local, cert.jump_factor, cert.d
    )
    return cert
