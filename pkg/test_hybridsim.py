#!/usr/bin/env python3
"""
Tests for the hybrid simulator: closed-form trajectories, left limits at
impulses, time-shift invariance, divergence detection and CSV output.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.errors import ExprError, SimulationError
from core.hybridsim import InputSignal, SimOptions, SystemDef, build_interconnection, shift_invariance_check, simulate
from core.impulseseq import ImpulseSequence, count_jumps, periodic, uniform_random


@pytest.mark.parametrize("seed", range(5))
def test_scalar_linear_closed_form(linear_scalar, seed):
    seq = uniform_random(0.5, 10.0, seed, max_gap=1.5)
    traj = simulate(linear_scalar, seq, x0=[1.0], opts=SimOptions(rtol=1e-10, atol=1e-14))
    assert len(traj.jumps) == len(seq)
    for t, x, _, _ in traj.rows():
        exact = math.exp(count_jumps(seq, 0.0, t) - 2.0 * t)
        assert abs(float(x[0]) - exact) <= 1e-6 * exact


def test_pure_flow_without_impulses():
    sys_def = SystemDef.from_sources("decay", ["-x"], ["x"], states=["x"], inputs=[])
    traj = simulate(sys_def, ImpulseSequence.empty(0.0, 5.0), x0=[1.0])
    assert not traj.jumps
    assert float(traj.final_state[0]) == pytest.approx(math.exp(-5.0), abs=1e-8)
    for t in (0.5, 1.7, 3.2):
        assert float(traj.state(t)[0]) == pytest.approx(math.exp(-t), abs=1e-7)


def test_nonlinear_example_matches_closed_flow(nonlinear_system):
    # between impulses x' = -x^3 has x(t) = x / sqrt(1 + 2 x^2 t)
    seq = periodic(1.2, 12.0)
    traj = simulate(nonlinear_system, seq, InputSignal.zero(1), x0=[0.5])
    x = 0.5
    posts = []
    for jump in traj.jumps:
        x = x / math.sqrt(1.0 + 2.0 * x * x * 1.2)
        assert float(jump.pre_state[0]) == pytest.approx(x, abs=1e-7)
        x = x + x**3
        assert float(jump.post_state[0]) == pytest.approx(x, abs=1e-7)
        posts.append(float(jump.post_state[0]))
    assert not traj.diverged
    assert posts == sorted(posts, reverse=True)
    assert posts[-1] < 0.5


def test_left_limits(nonlinear_system):
    seq = periodic(1.0, 5.0)
    traj = simulate(nonlinear_system, seq, InputSignal.constant([0.1]), x0=[0.8])
    np.testing.assert_array_equal(traj.left_limit(0.0), [0.8])
    np.testing.assert_allclose(traj.left_limit(1.5), traj.state(1.5))
    for jump in traj.jumps:
        pre = traj.left_limit(jump.time)
        post = traj.state(jump.time)
        np.testing.assert_allclose(post, nonlinear_system.jump(pre, jump.pre_input))


def test_left_limit_of_flow_is_continuous(linear_scalar):
    traj = simulate(linear_scalar, periodic(1.0, 3.0), x0=[1.0])
    before = traj.state(1.0 - 1e-7)
    np.testing.assert_allclose(traj.left_limit(1.0), before, rtol=1e-5)


def test_jump_uses_input_left_limit():
    sys_def = SystemDef.from_sources("kick", ["0*x"], ["x + u"], states=["x"], inputs=["u"])
    u = InputSignal([0.0, 1.0], [[1.0], [5.0]])
    traj = simulate(sys_def, ImpulseSequence(0.0, (1.0,), 2.0), u, x0=[0.0])
    assert float(traj.jumps[0].pre_input[0]) == 1.0
    assert float(traj.final_state[0]) == pytest.approx(1.0)


@pytest.mark.parametrize("s", [0.0, 3.0])
def test_shift_invariance_linear(linear_scalar, s):
    seq = uniform_random(0.5, 10.0, 3, max_gap=1.0)
    assert shift_invariance_check(linear_scalar, seq, None, [1.0], s) <= 1e-7


def test_shift_invariance_nonlinear(nonlinear_system):
    seq = periodic(1.2, 10.0)
    u = InputSignal([0.0, 2.0, 4.0], [[0.1], [-0.05], [0.0]])
    assert shift_invariance_check(nonlinear_system, seq, u, [0.5], 1.5) <= 1e-5


def test_shift_must_keep_time_positive(linear_scalar):
    with pytest.raises(SimulationError):
        shift_invariance_check(linear_scalar, periodic(1.0, 5.0), None, [1.0], -1.0)


def test_divergence_is_reported():
    sys_def = SystemDef.from_sources("growth", ["x"], ["2*x"], states=["x"], inputs=[])
    traj = simulate(sys_def, periodic(1.0, 40.0), x0=[1.0])
    assert traj.diverged
    assert traj.diverged_at < 40.0
    assert traj.end_time == pytest.approx(traj.diverged_at)


def test_bad_arguments(linear_scalar, nonlinear_system):
    seq = periodic(1.0, 5.0)
    with pytest.raises(SimulationError):
        simulate(linear_scalar, seq, x0=[1.0], tf=6.0)
    with pytest.raises(SimulationError):
        simulate(nonlinear_system, seq, InputSignal.constant([0.1, 0.2]), x0=[1.0])
    with pytest.raises(SimulationError):
        simulate(linear_scalar, seq, x0=[float("inf")])


def test_state_outside_range(linear_scalar):
    traj = simulate(linear_scalar, periodic(1.0, 5.0), x0=[1.0])
    with pytest.raises(SimulationError):
        traj.state(7.0)


def test_csv_output(linear_scalar):
    traj = simulate(linear_scalar, periodic(1.0, 2.0), x0=[1.0])
    lines = traj.to_csv(["x"]).splitlines()
    assert lines[0] == "t,x,is_jump,pre_x"
    jump_rows = [line for line in lines[1:] if line.split(",")[2] == "1"]
    assert len(jump_rows) == 2
    assert all(line.split(",")[3] for line in jump_rows)


def test_system_must_have_equilibrium():
    with pytest.raises(ExprError):
        SystemDef.from_sources("offset", ["1 - x"], ["x"], states=["x"], inputs=[])
    with pytest.raises(ExprError):
        SystemDef.from_sources("undeclared", ["-x + y"], ["x"], states=["x"], inputs=[])


def test_linear_system_builder():
    sys_def = SystemDef.linear(np.array([[-1.0, 0.5], [0.0, -2.0]]), D=np.eye(2) * 0.5)
    np.testing.assert_allclose(sys_def.flow(np.array([1.0, 2.0]), np.zeros(0)), [0.0, -4.0])
    np.testing.assert_allclose(sys_def.jump(np.array([1.0, 2.0]), np.zeros(0)), [0.5, 1.0])


def test_interconnection_couples_states():
    s1 = SystemDef.from_sources("S1", ["-x1 + x2^2"], ["exp(-1)*x1"], states=["x1"], inputs=["x2"])
    s2 = SystemDef.from_sources("S2", ["-x2 + 3*sqrt(abs(x1))"], ["exp(-1)*x2"], states=["x2"], inputs=["x1"])
    joined = build_interconnection([s1, s2])
    assert joined.state_names == ("x1", "x2")
    assert joined.input_names == ()
    np.testing.assert_allclose(joined.flow(np.array([4.0, 1.0]), np.zeros(0)), [-3.0, 5.0])


def test_rows_have_one_entry_per_time_at_input_breakpoints():
    sys_def = SystemDef.from_sources("driven", ["-x + u"], ["0.5*x"], states=["x"], inputs=["u"])
    u = InputSignal([0.0, 1.5], [[0.0], [1.0]])
    traj = simulate(sys_def, periodic(1.0, 3.0), u, x0=[1.0])
    times = [row[0] for row in traj.rows()]
    assert len(times) == len(set(times))
    assert times.count(1.5) == 1
    assert sum(1 for row in traj.rows() if row[2]) == len(traj.jumps)
