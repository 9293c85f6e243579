#!/usr/bin/env python3
"""
Tests for the reference reproductions.
"""

import os
import sys

import pytest

# Add repository root to path
script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(script_dir)

from core.reproductions import REPRODUCTIONS, run_reproductions


@pytest.mark.parametrize("group", ["fdt", "tradeoff", "theta_star", "small_gain", "equivalence", "linearization", "tightness"])
def test_group_passes(group):
    report = run_reproductions(seed=1, only=[group])
    assert report["rows"]
    failed = [row for row in report["rows"] if not row["passed"]]
    assert not failed, failed


@pytest.mark.slow
@pytest.mark.parametrize("group", ["composite", "closed_form"])
def test_slow_group_passes(group):
    report = run_reproductions(seed=1, only=[group])
    assert report["passed"], report["rows"]


def test_report_is_deterministic():
    a = run_reproductions(seed=7, only=["equivalence", "linearization"])
    b = run_reproductions(seed=7, only=["equivalence", "linearization"])
    assert a == b
    assert a["seed"] == 7


def test_every_group_is_covered():
    assert set(REPRODUCTIONS) == {
        "fdt", "tradeoff", "theta_star", "small_gain", "composite",
        "tightness", "closed_form", "equivalence", "linearization",
    }
