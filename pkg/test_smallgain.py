#!/usr/bin/env python3
"""
Tests for gain networks: the cycle condition, spectral radius, Omega-paths,
composite certificates and the gain/dwell-time trade-off.
"""

import os
import sys

import numpy as np
import pytest

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.cmpfun import ClassTag, ExprFn
from core.errors import SmallGainError
from core.lyapcheck import SamplePlan, StateSampler, check_max_form
from core.smallgain import (
    GainNetwork,
    compose_certificate,
    compose_exponential,
    example_network,
    example_path,
    gamma_apply,
    gamma_not_geq_check,
    omega_path,
    simple_cycles,
    small_gain_check,
    small_gain_grid,
    solve_example_tradeoff,
    spectral_radius,
    tradeoff_curve,
)


def fn(source, **params):
    return ExprFn.from_source(source, "r", ClassTag.KINF, params)


def random_gain_matrix(rng, n=5, density=0.6):
    G = rng.uniform(0.1, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
    np.fill_diagonal(G, 0.0)
    return G


def test_gain_operator():
    net = example_network(1.0, 1.0)
    np.testing.assert_allclose(gamma_apply(net, [1.0, 1.0]), [1.0, 1.0])
    np.testing.assert_allclose(gamma_apply(net, [4.0, 2.0]), [4.0, 2.0])
    np.testing.assert_array_equal(gamma_apply(net, [0.0, 0.0]), [0.0, 0.0])
    with pytest.raises(SmallGainError):
        gamma_apply(net, [-1.0, 1.0])


def test_network_shape_errors():
    with pytest.raises(SmallGainError):
        GainNetwork([[None, fn("r")]])
    with pytest.raises(SmallGainError):
        GainNetwork([[fn("r"), None], [None, None]])
    with pytest.raises(SmallGainError):
        GainNetwork.from_matrix(np.array([[0.0, -0.5], [0.5, 0.0]]))
    with pytest.raises(SmallGainError):
        GainNetwork.from_matrix(np.array([[0.1, 0.5], [0.5, 0.0]]))


def test_simple_cycles_of_complete_graph():
    net = GainNetwork.from_matrix(np.ones((3, 3)) - np.eye(3))
    assert sorted(simple_cycles(net)) == [[0, 1], [0, 1, 2], [0, 2], [0, 2, 1], [1, 2]]


def test_small_gain_holds(two_subsystem_network):
    result = small_gain_check(two_subsystem_network)
    assert result.holds
    assert result.cycles_checked == 2
    assert result.witness is None


def test_small_gain_fails_everywhere():
    result = small_gain_check(example_network(0.9, 1.0))
    assert not result.holds
    assert result.violating_points == 64
    assert result.ratio == pytest.approx(1.0 / 0.9, rel=1e-9)
    assert sorted(result.cycle) == [0, 1]


def test_failed_check_witness_is_not_decreased():
    net = example_network(0.9, 1.0)
    result = small_gain_check(net)
    v = np.array(result.witness)
    assert np.all(gamma_apply(net, v) >= v)
    ok, counterexample = gamma_not_geq_check(net, samples=v[None, :])
    assert not ok
    np.testing.assert_allclose(counterexample, v)


def test_gamma_not_geq_when_small_gain_holds(two_subsystem_network):
    ok, counterexample = gamma_not_geq_check(two_subsystem_network, count=2000, seed=3)
    assert ok
    assert counterexample is None


def test_single_subsystem_holds_vacuously():
    result = small_gain_check(GainNetwork([[None]]))
    assert result.holds
    assert result.cycles_checked == 0


@pytest.mark.parametrize("G, expected", [([[0.0, 0.5], [0.5, 0.0]], 0.5), ([[0.0, 2.0], [2.0, 0.0]], 2.0), ([[0.0, 1.0], [0.0, 0.0]], 0.0)])
def test_spectral_radius_examples(G, expected):
    assert spectral_radius(GainNetwork.from_matrix(np.array(G))) == pytest.approx(expected, abs=1e-9)


def test_spectral_radius_matches_eigenvalues():
    rng = np.random.default_rng(2)
    for _ in range(20):
        G = random_gain_matrix(rng)
        expected = float(np.max(np.abs(np.linalg.eigvals(G))))
        assert spectral_radius(GainNetwork.from_matrix(G)) == pytest.approx(expected, abs=1e-8)


def test_spectral_radius_needs_linear_gains(two_subsystem_network):
    with pytest.raises(SmallGainError):
        spectral_radius(two_subsystem_network)


def test_omega_path_on_random_linear_networks():
    rng = np.random.default_rng(5)
    grid = small_gain_grid()
    for _ in range(10):
        G = random_gain_matrix(rng, density=0.8)
        rho = float(np.max(np.abs(np.linalg.eigvals(G))))
        if rho == 0.0:
            continue
        net = GainNetwork.from_matrix(G * 0.8 / rho)
        path = omega_path(net)
        assert path.worst_ratio <= 1.0 + 1e-12
        sigma = path.values(grid)
        assert np.all(gamma_apply(net, sigma) <= sigma * (1.0 + 1e-12))


def test_omega_path_of_example(two_subsystem_network):
    path = omega_path(two_subsystem_network, a=[1.0, 2.0])
    assert path.direction == [1.0, 2.0]
    assert path.variant in ("strict", "quasi")


def test_omega_path_needs_small_gain():
    with pytest.raises(SmallGainError):
        omega_path(example_network(0.9, 1.0))
    with pytest.raises(SmallGainError):
        omega_path(example_network(1.5, 1.0), a=[1.0, 0.0])


def test_example_path(two_subsystem_network):
    path = example_path(two_subsystem_network, 0.9)
    assert path.variant == "strict"
    assert path.worst_ratio == pytest.approx(0.9, rel=1e-9)
    with pytest.raises(SmallGainError):
        example_path(two_subsystem_network, 1.2)


def test_composite_function_values(two_subsystem_network):
    L = compose_certificate(two_subsystem_network, example_path(two_subsystem_network, 0.9))
    assert L.V(np.array([1.0, 2.0])) == pytest.approx(max(1.0, 0.81 * 4.0))
    assert L.V(np.array([3.0, 0.5])) == pytest.approx(3.0)
    assert L.form == "max"
    # no external inputs: the composite gain vanishes
    assert float(L.chi(5.0)) == 0.0


def test_composite_flow_rate(two_subsystem_network):
    L = compose_certificate(two_subsystem_network, example_path(two_subsystem_network, 0.9))
    # max{a - 1, 2(3b - 1)} = 4 for a = 1.5, b = 1
    assert float(L.phi(1.0)) == pytest.approx(-4.0, abs=1e-6)


@pytest.mark.slow
def test_composite_certificate_is_certified(two_subsystem_network):
    L = compose_certificate(two_subsystem_network, example_path(two_subsystem_network, 0.9))
    joined = two_subsystem_network.interconnection()
    sampler = StateSampler(joined.n, joined.m, SamplePlan.from_settings(interior=4096), 0)
    assert check_max_form(joined, L, sampler=sampler).certified


def test_composite_needs_certificates():
    net = GainNetwork.from_matrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
    with pytest.raises(SmallGainError):
        compose_certificate(net, omega_path(net))


def test_exponential_composite(two_subsystem_network):
    L = compose_exponential(two_subsystem_network, example_path(two_subsystem_network, 0.9))
    assert L.is_exponential
    assert L.c == pytest.approx(-4.0, abs=1e-9)
    assert L.d == pytest.approx(1.0, abs=1e-9)


def test_exponential_composite_needs_power_gains():
    net = GainNetwork([[None, fn("r + r^2")], [fn("r/2"), None]])
    with pytest.raises(SmallGainError):
        compose_exponential(net)


def test_tradeoff_point():
    result = tradeoff_curve(np.array([[0.0, 0.5], [0.5, 0.0]]), None, 2.0, -1.0, k_grid=[1.0])
    assert result.rho == pytest.approx(0.5)
    point = result.points[0]
    assert point.rho_k == pytest.approx(0.5)
    assert point.c_k == pytest.approx(1.0)
    assert point.omega == pytest.approx(1.0)
    assert "chi_ext_k" not in point.to_dict()


def test_tradeoff_scales_external_gains():
    result = tradeoff_curve(np.array([[0.0, 0.5], [0.5, 0.0]]), np.array([1.0, 2.0]), 2.0, -1.0, k_grid=[1.0, 1.5])
    for point in result.points:
        np.testing.assert_allclose(point.chi_ext_k, np.array([1.0, 2.0]) / point.k)
        assert point.to_dict()["chi_ext_k"] == point.chi_ext_k


def test_tradeoff_curve_shape():
    result = tradeoff_curve(np.array([[0.0, 0.5], [0.5, 0.0]]), None, 2.0, -1.0)
    assert len(result.points) == 32
    assert result.omega_decreasing
    assert result.small_gain_everywhere


@pytest.mark.parametrize("c_tilde, d, k_grid", [(2.0, 0.0, None), (0.4, -1.0, None), (2.0, -1.0, [3.0]), (2.0, -1.0, [0.5])])
def test_tradeoff_preconditions(c_tilde, d, k_grid):
    with pytest.raises(SmallGainError):
        tradeoff_curve(np.array([[0.0, 0.5], [0.5, 0.0]]), None, c_tilde, d, k_grid)


def test_example_tradeoff_root():
    b, c = solve_example_tradeoff()
    assert b == pytest.approx(0.612, abs=1e-3)
    assert abs(6 * b**3 - b**2 - 1) <= 1e-9
    assert c == pytest.approx(1.672, abs=1e-2)
