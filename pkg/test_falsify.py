#!/usr/bin/env python3
"""
Tests for Monte Carlo falsification: envelope fitting, ISS and GS sweeps,
divergence witnesses and the gADT tightness demonstration.
"""

import os
import sys

import numpy as np
import pytest

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.errors import FalsificationError
from core.falsify import (
    CONSISTENT,
    MIN_TRIALS,
    NOT_ISS,
    StepEnvelope,
    TrialRecord,
    admissible_sequences,
    fit_envelope,
    gadt_tightness_demo,
    gs_check,
    iss_sweep,
)
from core.hybridsim import SystemDef
from core.impulseseq import ADT, FDTMinGap, member


def record(index, r0, times, norms):
    return TrialRecord(
        index=index,
        sequence_index=0,
        r0=r0,
        times=times,
        norms=norms,
        input_norms=np.zeros(len(times)),
        diverged=False,
        x0=[r0],
        input={},
    )


def test_step_envelope():
    env = StepEnvelope.fit(np.array([1.0, 2.0, 3.0]), np.array([1.0, 3.0, 2.0]))
    np.testing.assert_array_equal(env(np.array([0.5, 1.0, 2.5, 3.0, 9.0])), [0.0, 1.0, 3.0, 3.0, 3.0])
    empty = StepEnvelope.fit(np.zeros(0), np.zeros(0))
    np.testing.assert_array_equal(empty(np.array([1.0, 2.0])), [0.0, 0.0])


def test_exponential_fit_recovers_rate():
    t = np.linspace(0.0, 10.0, 201)
    records = [record(i, r0, t, r0 * np.exp(-t)) for i, r0 in enumerate((0.2, 0.5, 1.0))]
    env = fit_envelope(records, 10.0)
    assert env.kind == "exponential"
    assert env.lam == pytest.approx(1.0)
    assert env.M == pytest.approx(1.0)
    assert env.dominates(records)


def test_flat_trials_fall_back_to_table():
    t = np.linspace(0.0, 10.0, 101)
    records = [record(i, r0, t, np.full(len(t), r0)) for i, r0 in enumerate((0.2, 0.5, 1.0))]
    env = fit_envelope(records, 10.0)
    assert env.kind == "kl-table"
    assert env.dominates(records)


def test_sweep_needs_enough_trials(linear_scalar):
    with pytest.raises(FalsificationError):
        iss_sweep(linear_scalar, FDTMinGap(0.8), trials=MIN_TRIALS - 1)


def test_admissible_sequences_start_with_extreme():
    rng = np.random.default_rng(0)
    cls = ADT(mu=1.0, lam=1.0, c=2.0, d=-1.0)
    seqs = admissible_sequences(cls, 20.0, 4, rng)
    assert len(seqs) == 4
    assert len(seqs[0]) >= max(len(s) for s in seqs[1:])
    assert all(member(s, cls, tol=1e-6).member for s in seqs)
    fixed = admissible_sequences(FDTMinGap(0.5), 10.0, 3, rng)
    np.testing.assert_allclose(fixed[0].gaps(), 0.5)


def test_decaying_system_is_consistent(linear_scalar):
    report = iss_sweep(linear_scalar, FDTMinGap(0.8), trials=100, seed=1, horizon=10.0)
    assert report.verdict == CONSISTENT
    assert report.diverged == 0
    assert report.witness is None
    assert report.pooled.dominates(report.records)
    assert report.peak_csv().splitlines()[0] == "trial,sequence,r0,peak,diverged"


def test_candidate_envelope_violations(linear_scalar):
    report = iss_sweep(
        linear_scalar, FDTMinGap(0.8), trials=100, seed=1, horizon=5.0, candidate=(lambda r, t: 0.0 * t, lambda w: 0.0 * w)
    )
    assert report.violation_count > 0
    assert 0 < len(report.violations) <= 20
    assert not report.passed


def test_zero_system_is_consistent():
    sys_def = SystemDef.from_sources("zero", ["0*x1", "0*x2"], ["0*x1", "0*x2"], states=["x1", "x2"], inputs=[])
    report = iss_sweep(sys_def, FDTMinGap(1.0), trials=100, seed=2, horizon=5.0)
    assert report.verdict == CONSISTENT
    assert report.diverged == 0


@pytest.mark.slow
def test_too_dense_impulses_diverge(linear_scalar):
    # 0.4 is below the critical gap 0.5: each period grows by exp(0.2)
    report = iss_sweep(linear_scalar, FDTMinGap(0.4), trials=100, seed=3, horizon=30.0)
    assert report.verdict == NOT_ISS
    assert report.diverged_fraction > 0.01
    witness = report.witness
    assert witness["trial"] == 0
    assert witness["seed"] == 3
    np.testing.assert_allclose(np.diff(witness["sequence"]["times"]), 0.4)
    assert witness["diverged_at"] <= 30.0


@pytest.mark.slow
def test_sweep_is_reproducible(linear_scalar):
    a = iss_sweep(linear_scalar, FDTMinGap(0.8), trials=100, seed=9, horizon=5.0)
    b = iss_sweep(linear_scalar, FDTMinGap(0.8), trials=100, seed=9, horizon=5.0)
    assert a.to_dict() == b.to_dict()


def test_marginal_system_is_globally_stable(linear_scalar):
    holds, fit, report = gs_check(linear_scalar, FDTMinGap(0.5), trials=100, seed=4, horizon=10.0)
    assert holds
    assert report.mode == "gs"
    assert float(fit.xi(1.0)) <= 1.0 + 1e-6


def test_tightness_regimes():
    report = gadt_tightness_demo(2.0, -1.0)
    assert report.critical_gap == 0.5
    runs = {run.gap: run for run in report.runs}
    assert runs[0.6].regime == "decreasing"
    assert runs[0.4].regime == "growing"
    assert runs[0.4].exceeded_at is not None and runs[0.4].exceeded_at < 60.0
    assert runs[0.5].regime == "constant"
    assert report.admissible["member"]
    assert report.admissible["under_envelope"]


def test_tightness_needs_destabilizing_jumps():
    with pytest.raises(FalsificationError):
        gadt_tightness_demo(2.0, 1.0)
