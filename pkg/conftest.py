#!/usr/bin/env python3
"""
Shared test fixtures: regression systems, the scalar nonlinear example
certificate, the two-subsystem gain network and the bundled project files.
"""

import os
import sys

import pytest

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.cmpfun import ClassTag, ExprFn, identity
from core.hybridsim import SystemDef
from core.lyapcheck import ExprStateFn, LyapunovCandidate
from core.smallgain import example_network

CONFIG_DIR = os.path.join(script_dir, "configs")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: statistical or long-running test")


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv("ISS_SEED", raising=False)


@pytest.fixture
def nonlinear_system():
    """x' = -x^3 + u, x = x + x^3 + u at impulses."""
    return SystemDef.from_sources("nonlinear", ["-x^3 + u"], ["x + x^3 + u"], states=["x"], inputs=["u"])


@pytest.fixture
def linear_scalar():
    """x' = -2x, x = e x^- at impulses (c = 2, d = -1)."""
    return SystemDef.from_sources(
        "linear_scalar", ["-c*x"], ["exp(-d)*x"], states=["x"], inputs=[], params={"c": 2.0, "d": -1.0}
    )


def make_example_candidate(a: float = 0.5, phi: str = "(1-a)*r^3", alpha: str = "r + (1+a)*r^3") -> LyapunovCandidate:
    params = {"a": a}
    return LyapunovCandidate(
        V=ExprStateFn.from_source("abs(x)", ["x"]),
        psi1=identity(),
        psi2=identity(),
        chi=ExprFn.from_source("(r/a)^(1/3)", "r", ClassTag.KINF, params),
        phi=ExprFn.from_source(phi, "r", ClassTag.PD, params),
        alpha=ExprFn.from_source(alpha, "r", ClassTag.PD, params),
        name="example_V",
    )


@pytest.fixture
def example_candidate():
    return make_example_candidate()


@pytest.fixture
def candidate_factory():
    return make_example_candidate


@pytest.fixture
def two_subsystem_network():
    return example_network(1.5, 1.0)


@pytest.fixture
def scalar_config_path():
    return os.path.join(CONFIG_DIR, "scalar_examples.json")


@pytest.fixture
def interconnection_config_path():
    return os.path.join(CONFIG_DIR, "interconnection.json")
