#!/usr/bin/env python3
"""
Tests for impulse sequences: jump counters, dwell-time class membership,
the relations between the conditions and the sequence generators.
"""

import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.cmpfun import ExprFn
from core.errors import ClassValidationError, SequenceError
from core.impulseseq import (
    ADT,
    GADT,
    FDTMaxGap,
    FDTMinGap,
    ImpulseSequence,
    adt_inclusion,
    count_jumps,
    densest_admissible,
    dwell_class_from_dict,
    equivalence_check_NstarN,
    generate,
    impulse_frequency,
    margin,
    member,
    parse_sequence_spec,
    periodic,
    theta_star,
    uniform_random,
)


@pytest.fixture
def three_jumps():
    return ImpulseSequence(0.0, (1.0, 2.0, 3.0), 5.0)


def test_counts(three_jumps):
    assert count_jumps(three_jumps, 0.0, 2.5) == 2
    assert count_jumps(three_jumps, 1.0, 1.0) == 0
    assert count_jumps(three_jumps, 1.0, 1.0, closed=True) == 1
    assert count_jumps(three_jumps, 1.0, 3.0) == 2
    assert count_jumps(three_jumps, 1.0, 3.0, closed=True) == 3


def test_count_query_must_be_ordered(three_jumps):
    with pytest.raises(SequenceError):
        count_jumps(three_jumps, 2.0, 1.0)
    with pytest.raises(SequenceError):
        count_jumps(three_jumps, 0.0, 6.0)


@pytest.mark.parametrize(
    "t0, times, horizon",
    [(0.0, (0.0, 1.0), 2.0), (0.0, (1.0, 1.0), 2.0), (0.0, (2.0, 1.0), 3.0), (0.0, (1.0, 3.0), 2.0), (0.0, (1.0, float("nan")), 2.0)],
)
def test_invalid_sequences(t0, times, horizon):
    with pytest.raises(SequenceError):
        ImpulseSequence(t0, times, horizon)


def test_periodic_count_is_floor():
    seq = periodic(0.7, 10.0)
    for t in (0.5, 0.7, 3.3, 9.9, 10.0):
        assert count_jumps(seq, 0.0, t) == int(np.floor(t / 0.7 + 1e-12))


def test_periodic_generator():
    seq = periodic(1.0, 10.0)
    assert seq.times == tuple(float(k) for k in range(1, 11))
    assert seq.horizon == 10.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=10.0, allow_nan=False), min_size=3, max_size=3), st.integers(0, 2**31 - 1))
def test_counter_is_additive(points, seed):
    r, s, t = sorted(points)
    seq = uniform_random(0.1, 10.0, seed, max_gap=1.0)
    assert count_jumps(seq, r, s) + count_jumps(seq, s, t) == count_jumps(seq, r, t)


def test_fdt_min_gap_membership():
    assert member(periodic(1.0, 20.0), FDTMinGap(1.0)).member
    result = member(ImpulseSequence(0.0, (1.0, 1.5, 3.0), 4.0), FDTMinGap(1.0))
    assert not result.member
    assert result.witness == (1.0, 1.5)
    assert result.worst_margin == pytest.approx(0.5)


def test_fdt_max_gap_membership():
    assert member(periodic(1.0, 20.0), FDTMaxGap(1.5)).member
    assert not member(ImpulseSequence(0.0, (1.0, 3.0), 4.0), FDTMaxGap(1.5)).member


def test_adt_periodic_on_the_boundary():
    result = member(periodic(1.0, 20.0), ADT(mu=1.0, lam=1.0, c=2.0, d=-1.0))
    assert result.member
    assert result.worst_margin == pytest.approx(0.0, abs=1e-12)


def test_adt_periodic_too_dense():
    result = member(periodic(0.9, 20.0), ADT(mu=1.0, lam=1.0, c=2.0, d=-1.0))
    assert not result.member
    assert result.worst_margin > 0


def test_adt_cluster_witness():
    seq = ImpulseSequence(0.0, (1.0, 1.05, 5.0, 9.0, 13.0), 15.0)
    cls = ADT(mu=1.0, lam=1.5, c=2.0, d=-1.0)
    result = member(seq, cls)
    assert not result.member
    assert result.worst_margin == pytest.approx(0.975)
    s, t = result.witness
    assert s == pytest.approx(1.0, abs=1e-8)
    assert s < 1.0
    assert t == pytest.approx(1.05)
    assert margin(seq, cls, s, t) == pytest.approx(0.975, abs=1e-8)
    assert margin(seq, cls, s, t) > 0


def test_gadt_membership():
    h = ExprFn.from_source("exp(1 - 0.5*x)", "x")
    cls = GADT(h, c=2.0, d=-1.0)
    assert member(periodic(1.0, 20.0), cls).member
    bad = member(periodic(0.4, 20.0), cls)
    assert not bad.member
    s, t = bad.witness
    assert margin(periodic(0.4, 20.0), cls, s, t) > 0


def test_gadt_empty_sequence_is_member():
    h = ExprFn.from_source("exp(1 - 0.5*x)", "x")
    assert member(ImpulseSequence.empty(0.0, 10.0), GADT(h, c=2.0, d=-1.0)).member


def test_gadt_needs_decaying_h():
    with pytest.raises(ClassValidationError):
        GADT(ExprFn.from_source("1 + x", "x"), c=2.0, d=-1.0)


def test_adt_as_gadt_agrees():
    cls = ADT(mu=1.0, lam=1.0, c=2.0, d=-1.0)
    for delta in (0.6, 1.0, 1.4):
        seq = periodic(delta, 15.0)
        assert member(seq, cls).member == member(seq, cls.as_gadt()).member


@pytest.mark.parametrize("c, d, lam, expected", [(2.0, -1.0, 1.0, 1.0), (1.672, -1.0, 0.672, 1.0), (2.0, -0.5, 1.0, 0.5)])
def test_theta_star(c, d, lam, expected):
    assert theta_star(c, d, lam) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("c, d, lam", [(2.0, 1.0, 1.0), (2.0, -1.0, 2.0), (2.0, -1.0, 0.0)])
def test_theta_star_preconditions(c, d, lam):
    with pytest.raises(SequenceError):
        theta_star(c, d, lam)


def test_fixed_dwell_time_matches_adt():
    c, d, lam = 2.0, -1.0, 1.0
    theta = theta_star(c, d, lam)
    rng = np.random.default_rng(7)
    agreed = 0
    for _ in range(1000):
        gap = float(rng.uniform(0.6, 1.3)) * theta
        seq = uniform_random(gap, 10.0, int(rng.integers(2**31)), max_gap=gap * 1.5)
        agreed += member(seq, FDTMinGap(theta)).member == member(seq, ADT(-d, lam, c, d)).member
    assert agreed == 1000


def test_frequency_and_inclusion():
    assert impulse_frequency(2.0, -1.0) == 2.0
    mu1, lam1 = adt_inclusion(3.0, -1.0, 2.0, -1.0, 1.0, 1.0)
    assert mu1 == pytest.approx(1.0)
    assert lam1 == pytest.approx(2.0)
    with pytest.raises(SequenceError):
        adt_inclusion(1.0, -1.0, 2.0, -1.0, 1.0, 1.0)


def test_n_and_nstar_agree_on_random_sequences():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        seq = uniform_random(float(rng.uniform(0.2, 1.0)), 10.0, int(rng.integers(2**31)))
        assert equivalence_check_NstarN(seq, 1.0, 1.0, 2.0, -1.0)


@pytest.mark.parametrize("seq", [periodic(1.0, 10.0), ImpulseSequence(0.0, (2.0,), 5.0), ImpulseSequence.empty(0.0, 3.0)])
def test_n_and_nstar_agree_on_simple_sequences(seq):
    assert equivalence_check_NstarN(seq, 1.0, 1.0, 2.0, -1.0)
    assert equivalence_check_NstarN(seq, 0.5, 0.5, 1.0, -2.0)


def test_densest_fixed_dwell_time_is_periodic():
    seq = densest_admissible(FDTMinGap(0.5), 10.0)
    np.testing.assert_allclose(seq.gaps(), 0.5)


def test_densest_adt_rate():
    cls = ADT(mu=1.0, lam=1.0, c=2.0, d=-1.0)
    seq = densest_admissible(cls, 50.0)
    # asymptotic rate (c - lam) / (-d) plus the mu / (-d) burst at the start
    assert len(seq) / 50.0 == pytest.approx(1.0, abs=0.05)
    assert member(seq, cls, tol=1e-6).member


def test_densest_needs_destabilizing_jumps():
    with pytest.raises(SequenceError):
        densest_admissible(ADT(mu=1.0, lam=1.0, c=2.0, d=1.0), 10.0)
    with pytest.raises(SequenceError):
        densest_admissible(FDTMaxGap(1.0), 10.0)


def test_uniform_random_is_reproducible():
    a = uniform_random(0.5, 20.0, 42, max_gap=1.5)
    b = uniform_random(0.5, 20.0, 42, max_gap=1.5)
    assert a == b
    assert np.all(a.gaps() >= 0.5)
    assert np.all(a.gaps() <= 1.5)


def test_sequence_specs():
    assert parse_sequence_spec("periodic:2", 10.0).times == (2.0, 4.0, 6.0, 8.0, 10.0)
    assert parse_sequence_spec("0.5, 0.6, 3", 5.0).times == (0.5, 0.6, 3.0)
    assert len(parse_sequence_spec("uniform:1:2", 20.0, seed=3)) > 0
    with pytest.raises(SequenceError):
        parse_sequence_spec("periodic:x", 10.0)


def test_class_from_dict():
    cls = dwell_class_from_dict({"kind": "gadt", "h": "exp(1 - 0.5*x)", "c": 2, "d": -1})
    assert isinstance(cls, GADT)
    assert dwell_class_from_dict({"kind": "adt", "mu": 1, "lam": 1, "c": 2, "d": -1}) == ADT(1.0, 1.0, 2.0, -1.0)
    with pytest.raises(SequenceError):
        dwell_class_from_dict({"kind": "adt", "mu": 1})
    with pytest.raises(SequenceError):
        dwell_class_from_dict({"kind": "sometimes"})


def test_shift_and_restrict():
    seq = periodic(1.0, 10.0)
    moved = seq.shifted(3.0)
    assert moved.t0 == 3.0
    assert moved.times[0] == 4.0
    assert seq.restricted(4.5).times == (1.0, 2.0, 3.0, 4.0)
    assert ImpulseSequence.from_dict(seq.to_dict()) == seq


def test_densest_generation_needs_no_seed():
    seq = generate("densest", 10.0, cls=FDTMinGap(0.5))
    np.testing.assert_allclose(seq.gaps(), 0.5)
    assert seq == generate("densest", 10.0, seed=7, cls=FDTMinGap(0.5))
