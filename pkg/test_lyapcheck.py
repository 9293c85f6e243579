#!/usr/bin/env python3
"""
Tests for certificate checks: Dini derivatives, the implication and max
forms, form conversions, fixed dwell-time bounds and the gADT condition.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.cmpfun import ClassTag, ExprFn, default_grid, identity
from core.errors import CertificateError, SequenceError
from core.hybridsim import InputSignal, SystemDef
from core.impulseseq import ImpulseSequence, periodic
from core.lyapcheck import (
    CERTIFIED,
    STABILIZING_FLOW,
    STABILIZING_JUMPS,
    VIOLATED,
    ExprStateFn,
    LyapunovCandidate,
    SamplePlan,
    StateSampler,
    candidate_from_dict,
    certify_dwell_time,
    check_implication_form,
    check_max_form,
    default_sampler,
    dini_derivative,
    fdt_threshold,
    gadt_check,
    implication_candidate,
    implication_to_max_form,
    max_form_to_implication,
    recheck_witness,
)


def fn(source, cls=None, **params):
    return ExprFn.from_source(source, "r", cls, params)


def small_sampler(sys_def, seed=0):
    return StateSampler(sys_def.n, sys_def.m, SamplePlan.from_settings(interior=1024, boundary=128), seed)


def test_dini_of_cubic_decay(nonlinear_system):
    V = ExprStateFn.from_source("abs(x)", ["x"])
    assert dini_derivative(nonlinear_system, V, [1.0], [0.0]).value == pytest.approx(-1.0, abs=1e-5)


def test_dini_with_constant_input(nonlinear_system):
    V = ExprStateFn.from_source("abs(x)", ["x"])
    u = InputSignal.constant([0.1])
    assert dini_derivative(nonlinear_system, V, [1.0], u).value == pytest.approx(-0.9, abs=1e-5)


def test_dini_at_equilibrium():
    sys_def = SystemDef.from_sources("decay", ["-x"], ["x"], states=["x"], inputs=[])
    V = ExprStateFn.from_source("x^2", ["x"])
    assert dini_derivative(sys_def, V, [0.0]).value == pytest.approx(0.0, abs=1e-12)


def test_dini_rejects_non_finite_state(nonlinear_system):
    V = ExprStateFn.from_source("abs(x)", ["x"])
    with pytest.raises(ValueError):
        dini_derivative(nonlinear_system, V, [float("nan")])


def test_example_certificate_is_certified(nonlinear_system, example_candidate):
    example_candidate.validate()
    report = check_implication_form(nonlinear_system, example_candidate, default_sampler(nonlinear_system, seed=1))
    assert report.verdict == CERTIFIED
    assert report.witness is None
    assert report.worst_flow_margin <= report.tol
    assert report.counts["guarded_flow"] > 0
    assert report.counts["pairs"] == 2 * report.counts["states"]


def test_too_fast_rate_is_violated(nonlinear_system, candidate_factory):
    L = candidate_factory(phi="2*r^3")
    report = check_implication_form(nonlinear_system, L, small_sampler(nonlinear_system))
    assert report.verdict == VIOLATED
    assert report.witness["branch"] == "flow"
    assert recheck_witness(nonlinear_system, L, report) > report.tol


def test_jump_growth_is_violated(nonlinear_system, candidate_factory):
    L = candidate_factory(alpha="r")
    report = check_implication_form(nonlinear_system, L, small_sampler(nonlinear_system))
    assert report.verdict == VIOLATED
    assert report.witness["branch"] == "jump"
    assert recheck_witness(nonlinear_system, L, report) == pytest.approx(report.witness["margin"], rel=1e-9)


def test_zero_system_is_certified():
    sys_def = SystemDef.from_sources("zero", ["0*x1", "0*x2"], ["0*x1", "0*x2"], states=["x1", "x2"], inputs=[])
    L = LyapunovCandidate(
        V=ExprStateFn.from_source("x1^2 + x2^2", ["x1", "x2"]),
        psi1=fn("r^2", ClassTag.KINF),
        psi2=fn("r^2", ClassTag.KINF),
        chi=identity(),
        phi=fn("0*r"),
        alpha=identity(),
        name="zero",
    )
    report = check_implication_form(sys_def, L, small_sampler(sys_def))
    assert report.certified


def test_sampling_is_deterministic(nonlinear_system, example_candidate):
    a = check_implication_form(nonlinear_system, example_candidate, small_sampler(nonlinear_system, seed=5))
    b = check_implication_form(nonlinear_system, example_candidate, small_sampler(nonlinear_system, seed=5))
    assert a.to_dict() == b.to_dict()


def test_guard_must_select_samples():
    sys_def = SystemDef.from_sources("decay", ["-x + u"], ["x"], states=["x"], inputs=["u"])
    L = LyapunovCandidate(
        V=ExprStateFn.from_source("abs(x)", ["x"]),
        psi1=identity(),
        psi2=identity(),
        chi=fn("1e9 + r"),
        c=0.5,
        d=0.0,
        name="unreachable",
    )
    with pytest.raises(CertificateError):
        check_implication_form(sys_def, L, small_sampler(sys_def))


def test_candidate_needs_one_rate():
    with pytest.raises(CertificateError):
        LyapunovCandidate(V=ExprStateFn.from_source("abs(x)", ["x"]), psi1=identity(), psi2=identity(), chi=identity(), d=1.0)
    with pytest.raises(CertificateError):
        LyapunovCandidate(
            V=ExprStateFn.from_source("abs(x)", ["x"]), psi1=identity(), psi2=identity(), chi=identity(), c=1.0, phi=identity(), d=1.0
        )


def test_candidate_from_dict_exponential(linear_scalar):
    L = candidate_from_dict({"V": "abs(x)", "psi1": "r", "psi2": "r", "chi": "r", "c": 2, "d": -1}, ["x"])
    assert L.is_exponential
    assert float(L.jump_fn()(1.0)) == pytest.approx(math.e)
    report = check_implication_form(linear_scalar, L, small_sampler(linear_scalar))
    assert report.certified


def test_max_form_with_zero_gain_reduces_to_alpha(linear_scalar):
    L = candidate_from_dict({"V": "abs(x)", "psi1": "r", "psi2": "r", "chi": "r", "c": 2, "d": -1}, ["x"])
    assert check_max_form(linear_scalar, L, fn("0*r"), small_sampler(linear_scalar)).certified
    tight = candidate_from_dict({"V": "abs(x)", "psi1": "r", "psi2": "r", "chi": "r", "c": 2, "d": 0}, ["x"])
    report = check_max_form(linear_scalar, tight, fn("0*r"), small_sampler(linear_scalar))
    assert report.verdict == VIOLATED
    assert report.witness["branch"] == "jump"


def test_conversion_with_identity_rho():
    conversion = max_form_to_implication(identity(), fn("r/2", ClassTag.PD), rho=identity())
    xs = np.geomspace(1e-3, 1e3, 13)
    np.testing.assert_allclose(conversion.chi(xs), xs, rtol=1e-9)


def test_conversion_dominates_gain():
    gamma = fn("r^2", ClassTag.KINF)
    conversion = max_form_to_implication(gamma, fn("exp(-1)*r", ClassTag.PD))
    xs = np.geomspace(1e-4, 1e4, 40)
    assert np.all(conversion.chi(xs) >= gamma(xs) * (1 - 1e-9))
    assert np.all(np.asarray(conversion.rho(default_grid())) > np.exp(-1) * default_grid())


def test_conversion_with_vanishing_alpha():
    gamma = fn("r^2", ClassTag.KINF)
    conversion = max_form_to_implication(gamma, fn("0*r"))
    xs = np.geomspace(1e-3, 1e3, 13)
    np.testing.assert_allclose(conversion.chi(xs), gamma(xs), rtol=1e-9)


def test_implication_candidate_keeps_certificate(linear_scalar):
    L = candidate_from_dict({"V": "abs(x)", "psi1": "r", "psi2": "r", "chi": "r", "c": 2, "d": -1, "form": "max"}, ["x"])
    converted = implication_candidate(L)
    assert converted.form == "implication"
    assert check_implication_form(linear_scalar, converted, small_sampler(linear_scalar)).certified


def test_implication_to_max_form_gain_dominates_chi(nonlinear_system, example_candidate):
    gamma = implication_to_max_form(nonlinear_system, example_candidate, small_sampler(nonlinear_system))
    xs = default_grid()
    assert np.all(gamma(xs) >= example_candidate.chi(xs))


@pytest.mark.parametrize("a, expected", [(0.5, 3.0), (0.1, 1.1 / 0.9)])
def test_fdt_bound_of_example(a, expected):
    phi = fn("(1-a)*r^3", ClassTag.PD, a=a)
    alpha = fn("r + (1+a)*r^3", ClassTag.PD, a=a)
    result = fdt_threshold(phi, alpha)
    assert result.bound == pytest.approx(expected, abs=1e-6)
    assert result.argsup == pytest.approx(default_grid()[0])


def test_fdt_values_match_closed_form():
    # integral of dr / ((1-a) r^3) from y to alpha(y) is (1/y^2 - 1/alpha(y)^2) / (2 (1-a))
    a = 0.5
    ys = np.geomspace(0.05, 20.0, 9)
    result = fdt_threshold(fn("(1-a)*r^3", ClassTag.PD, a=a), fn("r + (1+a)*r^3", ClassTag.PD, a=a), a_grid=ys)
    alpha = ys + (1 + a) * ys**3
    expected = (1 / ys**2 - 1 / alpha**2) / (2 * (1 - a))
    np.testing.assert_allclose(result.values, expected, rtol=1e-6)


def test_fdt_bound_is_constant_for_exponential_rates():
    result = fdt_threshold(fn("2*r"), fn("exp(1)*r"))
    assert result.bound == pytest.approx(0.5, abs=1e-10)
    assert np.max(result.values) - np.min(result.values) <= 1e-8


def test_fdt_stabilizing_jumps():
    result = fdt_threshold(fn("-r", ClassTag.NPD), fn("exp(-1)*r"), direction=STABILIZING_JUMPS)
    assert result.bound == pytest.approx(1.0, abs=1e-10)
    assert certify_dwell_time(result, 0.8, 0.1).conclusion == "ISS"
    assert certify_dwell_time(result, 0.99, 0.0).conclusion == "GS"
    assert not certify_dwell_time(result, 1.2, 0.0).ok


def test_fdt_divergent_integral():
    # phi vanishes at r = 1, the end of the cell starting at 0.5
    result = fdt_threshold(fn("r*(r - 1)^2"), fn("2*r"), a_grid=np.array([0.25, 0.5, 2.0]))
    assert result.bound == math.inf
    assert result.diverged == [0.5]


def test_certify_dwell_time_split():
    result = fdt_threshold(fn("0.5*r^3", ClassTag.PD), fn("r + 1.5*r^3", ClassTag.PD))
    assert result.direction == STABILIZING_FLOW
    verdict = certify_dwell_time(result, 3.5, 0.5)
    assert verdict.ok and verdict.conclusion == "ISS"
    assert certify_dwell_time(result, 3.0 + 1e-6, 0.0).conclusion == "GS"
    assert certify_dwell_time(result, 2.0, 0.1).conclusion == "inconclusive"
    with pytest.raises(ValueError):
        certify_dwell_time(result, 3.0, -1.0)


def test_gadt_check():
    h = ExprFn.from_source("exp(1 - 0.5*x)", "x")
    assert gadt_check(2.0, -1.0, h, periodic(1.0, 20.0)).member
    bad = gadt_check(2.0, -1.0, h, periodic(0.4, 20.0))
    assert not bad.member
    assert bad.witness is not None
    assert gadt_check(2.0, -1.0, h, ImpulseSequence.empty(0.0, 10.0)).member
    with pytest.raises(SequenceError):
        gadt_check(2.0, 0.0, h, periodic(1.0, 5.0))


def test_sampler_radius_precedence(linear_scalar):
    L = candidate_from_dict({"V": "abs(x)", "psi1": "r", "psi2": "r", "chi": "r", "c": 2, "d": -1, "local_radius": 0.25}, ["x"])
    assert default_sampler(linear_scalar, L).plan.local_radius == 0.25
    assert default_sampler(linear_scalar, L, local_radius=None).plan.local_radius == 0.25
    assert default_sampler(linear_scalar, L, local_radius=0.5).plan.local_radius == 0.5
    assert default_sampler(linear_scalar, local_radius=None).plan.local_radius is None


def test_candidate_fixtures(example_candidate, candidate_factory):
    assert isinstance(example_candidate, LyapunovCandidate)
    assert example_candidate.name == "example_V"
    faster = candidate_factory(phi="2*r^3")
    assert isinstance(faster, LyapunovCandidate)
    assert float(faster.flow_rate_fn()(1.0)) == pytest.approx(2.0)
