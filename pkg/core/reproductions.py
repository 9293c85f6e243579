#!/usr/bin/env python3
"""
Reference Reproductions

Deterministic checks of the reference numbers: dwell-time bounds of the
scalar nonlinear example, the exponential bound, the trade-off root, the
small-gain boundary, the composite certificate, gADT tightness, the scalar
closed form, the N / N* agreement and the linearization jump factor.
Every row is computed from a fixed seed, so two runs give identical reports.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from core.cmpfun import ExprFn, ClassTag
from core.falsify import gadt_tightness_demo
from core.hybridsim import SystemDef, simulate
from core.impulseseq import count_jumps, equivalence_check_NstarN, theta_star, uniform_random
from core.linearize import build_local_certificate, numeric_jacobians
from core.lyapcheck import StateSampler, SamplePlan, check_max_form, fdt_threshold
from core.settings import resolve_seed
from core.smallgain import (
    compose_certificate,
    example_network,
    example_path,
    small_gain_check,
    solve_example_tradeoff,
)

logger = logging.getLogger(__name__)


@dataclass
class ReproRow:
    name: str
    description: str
    expected: str
    observed: str
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _fmt(value: float, digits: int = 6) -> str:
    return f"{value:.{digits}f}"


def _example_fdt(a: float) -> float:
    phi = ExprFn.from_source("(1-a)*r^3", "r", ClassTag.PD, {"a": a})
    alpha = ExprFn.from_source("r + (1+a)*r^3", "r", ClassTag.PD, {"a": a})
    return fdt_threshold(phi, alpha).bound


def fdt_rows(seed: int) -> List[ReproRow]:
    rows = []
    for a, expected in ((0.5, 3.0), (0.1, 1.1 / 0.9)):
        bound = _example_fdt(a)
        rows.append(
            ReproRow(
                f"fdt_a{a:g}",
                f"FDT bound of the scalar nonlinear example at a={a:g}",
                _fmt(expected, 4),
                _fmt(bound, 4),
                abs(bound - expected) <= 1e-4,
            )
        )
    result = fdt_threshold(linear_fn(2.0), linear_fn(math.exp(1.0)))
    spread = float(np.max(result.values) - np.min(result.values))
    rows.append(
        ReproRow(
            "fdt_exponential",
            "FDT bound for c=2, d=-1 (constant over the a-grid)",
            _fmt(0.5, 8),
            _fmt(result.bound, 8),
            abs(result.bound - 0.5) <= 1e-8 and spread <= 1e-8,
        )
    )
    return rows


def linear_fn(k: float) -> ExprFn:
    return ExprFn.from_source("k*r", "r", ClassTag.KINF, {"k": k})


def tradeoff_rows(seed: int) -> List[ReproRow]:
    b, c = solve_example_tradeoff()
    residual = abs(6 * b**3 - b**2 - 1)
    return [
        ReproRow("tradeoff_b", "Trade-off root of 6b^3 - b^2 - 1 = 0", "0.612", _fmt(b, 4), abs(b - 0.612) <= 1e-3 and residual <= 1e-9),
        ReproRow("tradeoff_c", "Composite growth coefficient 2(3b - 1)", "1.672", _fmt(c, 4), abs(c - 1.672) <= 1e-2),
    ]


def theta_star_rows(seed: int) -> List[ReproRow]:
    value = theta_star(2.0, -1.0, 1.0)
    return [ReproRow("theta_star", "theta* = -d / (c - lam) for c=2, d=-1, lam=1", "1.000000", _fmt(value), abs(value - 1.0) <= 1e-12)]


def small_gain_rows(seed: int) -> List[ReproRow]:
    holds = small_gain_check(example_network(1.5, 1.0))
    fails = small_gain_check(example_network(0.9, 1.0))
    return [
        ReproRow("small_gain_holds", "Cycle condition with a b^2 = 1.5", "holds", "holds" if holds.holds else "fails", holds.holds),
        ReproRow(
            "small_gain_fails",
            "Cycle condition with a b^2 = 0.9 (every grid point violated)",
            "fails",
            "holds" if fails.holds else f"fails at {fails.violating_points} points",
            not fails.holds and fails.violating_points == 64,
        ),
    ]


def composite_rows(seed: int) -> List[ReproRow]:
    a, b, s = 1.5, 1.0, 0.9
    net = example_network(a, b)
    L = compose_certificate(net, example_path(net, s))
    sys = net.interconnection()
    plan = SamplePlan.from_settings(interior=4096)
    report = check_max_form(sys, L, sampler=StateSampler(sys.n, sys.m, plan, seed))
    rate = max(a - 1.0, 2.0 * (3.0 * b - 1.0))
    phi_at_one = float(L.phi(1.0))
    return [
        ReproRow(
            "composite_certificate",
            "max{|x1|, s^2 x2^2} on the interconnection (jump e^-1 V, flow bound 4V)",
            "certified-on-samples",
            report.verdict,
            report.certified and abs(phi_at_one + rate) <= 1e-6,
        )
    ]


def tightness_rows(seed: int) -> List[ReproRow]:
    report = gadt_tightness_demo(2.0, -1.0)
    regimes = {run.gap: run for run in report.runs}
    grow = regimes[0.8 * 0.5]
    ok = (
        regimes[1.2 * 0.5].regime == "decreasing"
        and grow.exceeded_at is not None
        and grow.exceeded_at < 60.0
        and regimes[0.5].regime == "constant"
    )
    observed = ", ".join(f"{run.gap:g}:{run.regime}" for run in report.runs)
    return [ReproRow("gadt_tightness", "gap 0.6 decays, 0.4 exceeds 1e3 before t=60, 0.5 constant", "0.6:decreasing, 0.4:growing, 0.5:constant", observed, ok)]


def closed_form_rows(seed: int) -> List[ReproRow]:
    sys = SystemDef.from_sources("linear_scalar", ["-c*x"], ["exp(-d)*x"], states=["x"], inputs=[], params={"c": 2.0, "d": -1.0})
    worst = 0.0
    for k in range(10):
        seq = uniform_random(0.5, 50.0, seed + k, max_gap=1.5)
        traj = simulate(sys, seq, x0=[1.0])
        for t, x, _, _ in traj.rows():
            exact = math.exp(count_jumps(seq, 0.0, t) - 2.0 * t)
            worst = max(worst, abs(float(x[0]) - exact))
    return [ReproRow("closed_form", "Scalar linear impulsive system vs exp(-d N - c t), 10 sequences", "<= 1e-6", f"{worst:.2e}", worst <= 1e-6)]


def equivalence_rows(seed: int) -> List[ReproRow]:
    rng = np.random.default_rng(seed)
    agree = 0
    total = 200
    for _ in range(total):
        seq = uniform_random(float(rng.uniform(0.2, 1.0)), 10.0, int(rng.integers(2**31)))
        agree += equivalence_check_NstarN(seq, 1.0, 1.0, 2.0, -1.0)
    return [ReproRow("n_nstar", "ADT verdicts with N and N* agree", f"{total}/{total}", f"{agree}/{total}", agree == total)]


def linearization_rows(seed: int) -> List[ReproRow]:
    sys = SystemDef.from_sources("quadratic", ["-x + x^2"], ["2*x"], states=["x"], inputs=[])
    cert = build_local_certificate(numeric_jacobians(sys, seed=seed), seed=seed)
    return [
        ReproRow(
            "linearization_jump",
            "Jump factor r2/eps for f = -x + x^2, g = 2x (d < 0)",
            "4.0 (+1%)",
            _fmt(cert.jump_factor, 4),
            4.0 <= cert.jump_factor <= 4.05 and cert.d < 0,
        )
    ]


REPRODUCTIONS: Dict[str, Callable[[int], List[ReproRow]]] = {
    "fdt": fdt_rows,
    "tradeoff": tradeoff_rows,
    "theta_star": theta_star_rows,
    "small_gain": small_gain_rows,
    "composite": composite_rows,
    "tightness": tightness_rows,
    "closed_form": closed_form_rows,
    "equivalence": equivalence_rows,
    "linearization": linearization_rows,
}


def run_reproductions(seed: Optional[int] = None, only: Optional[List[str]] = None) -> Dict[str, Any]:
    """Run the reproductions (all, or the named groups) and return the report dict."""
    seed = resolve_seed(seed)
    rows: List[ReproRow] = []
    for name, fn in REPRODUCTIONS.items():
        if only and name not in only:
            continue
        logger.info("Reproduction group %s", name)
        rows.extend(fn(seed))
    return {
        "seed": seed,
        "passed": all(r.passed for r in rows),
        "rows": [r.to_dict() for r in rows],
    }
