#!/usr/bin/env python3
"""
ISS Toolkit Settings

Loads the tool settings from core/config.json and merges them over the
defaults held here, so a missing file or key never leaves a module without
a value. Also resolves the effective random seed.
"""

import copy
import json
import logging
import os
from functools import lru_cache
from typing import Any, Dict, Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "ISS_SEED"

DEFAULT_CONFIG: Dict[str, Any] = {
    "default_seed": 20240611,
    "cmpfun": {"grid_min": 1e-4, "grid_max": 1e4, "grid_points": 64, "tol": 1e-9},
    "dwell_time": {
        "epsilon": 1e-9,
        "min_separation": 1e-12,
        "gadt_cell_samples": 33,
        "search_resolution": 1e-10,
    },
    "simulation": {"rtol": 1e-9, "atol": 1e-9, "blowup": 1e9, "samples_per_segment": 200},
    "certificate": {
        "tol": 1e-6,
        "dini_h0": 1e-3,
        "box_radius": 10.0,
        "interior_samples": 4096,
        "boundary_samples": 512,
        "near_zero_samples": 64,
        "input_min": 1e-4,
    },
    "small_gain": {"grid_min": 1e-6, "grid_max": 1e6, "grid_points": 64},
    "linearize": {"step": 1e-6, "rho_min": 1e-4, "rho_max": 10.0, "rho_points": 32, "samples": 4096},
    "falsify": {
        "trials": 500,
        "horizon": 20.0,
        "divergence_fraction": 0.01,
        "x0_radius": 1.0,
        "input_amplitude": 0.1,
        "input_pieces": 8,
        "divergence_norm": 1e3,
        "sequences": 8,
        "lambda_max": 10.0,
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load settings from a config file, falling back to DEFAULT_CONFIG.

    Args:
        config_path: Path to a config.json. If None, uses the one next to this module

    Returns:
        Settings dictionary (the "settings" block merged over the defaults)
    """
    if config_path is None:
        config_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.json")

    if not os.path.exists(config_path):
        logger.debug("No settings file at %s, using defaults", config_path)
        return copy.deepcopy(DEFAULT_CONFIG)

    with open(config_path, "r") as f:
        config = json.load(f)
    return _merge(DEFAULT_CONFIG, config.get("settings", {}))


@lru_cache(maxsize=1)
def _cached_settings() -> Dict[str, Any]:
    return load_settings()


def get_settings(section: Optional[str] = None) -> Dict[str, Any]:
    """
    Get the merged tool settings.

    Args:
        section: Optional block name (e.g. "simulation"); returns the whole dict if None

    Returns:
        A copy of the requested settings
    """
    settings = _cached_settings()
    if section is None:
        return copy.deepcopy(settings)
    return copy.deepcopy(settings[section])


def resolve_seed(seed: Optional[int] = None, project_seed: Optional[int] = None) -> int:
    """
    Resolve the effective seed: explicit flag, then ISS_SEED (environment or
    .env file), then the project file's seed, then the settings default.
    """
    if seed is not None:
        return int(seed)

    load_dotenv()
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed:
        try:
            return int(env_seed)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", SEED_ENV_VAR, env_seed)

    if project_seed is not None:
        return int(project_seed)
    return int(get_settings()["default_seed"])
