#!/usr/bin/env python3
"""
Project Files

Loads a JSON project file (systems, certificates, dwell-time classes,
sequences, inputs, gain networks and analysis requests), validates every
reference, expression and declared class at load time and reports the first
problem as a ConfigError carrying a JSON pointer.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from core.cmpfun import ClassTag, ScalarFn, as_scalar_fn, require_class
from core.errors import ConfigError, ISSToolkitError
from core.expr import parse
from core.hybridsim import InputSignal, SystemDef
from core.impulseseq import DwellTimeClass, ImpulseSequence, dwell_class_from_dict, parse_sequence_spec
from core.lyapcheck import LyapunovCandidate, candidate_from_dict
from core.smallgain import GainNetwork, OmegaPath

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {
    "name", "description", "seed", "params", "systems", "certificates",
    "classes", "sequences", "inputs", "networks", "analyses",
}
ANALYSIS_COMMANDS = {
    "simulate", "check-certificate", "fdt", "gadt", "sequence-class",
    "compose", "tradeoff", "linearize", "falsify",
}
CERTIFICATE_FUNCTIONS = {
    "psi1": ClassTag.KINF,
    "psi2": ClassTag.KINF,
    "chi": ClassTag.KINF,
    "phi": None,
    "alpha": None,
    "gamma": None,
}


def _escape(token: str) -> str:
    return str(token).replace("~", "~0").replace("/", "~1")


def pointer(*parts: Any) -> str:
    """JSON pointer for a path of keys and indices."""
    return "".join("/" + _escape(p) for p in parts)


@dataclass
class NetworkSpec:
    network: GainNetwork
    path: Optional[OmegaPath] = None


@dataclass
class ProjectConfig:
    """A fully validated project file."""

    name: str
    path: Optional[str]
    seed: Optional[int]
    params: Dict[str, float]
    systems: Dict[str, SystemDef] = field(default_factory=dict)
    certificates: Dict[str, LyapunovCandidate] = field(default_factory=dict)
    certificate_systems: Dict[str, str] = field(default_factory=dict)
    classes: Dict[str, DwellTimeClass] = field(default_factory=dict)
    sequences: Dict[str, ImpulseSequence] = field(default_factory=dict)
    inputs: Dict[str, InputSignal] = field(default_factory=dict)
    networks: Dict[str, NetworkSpec] = field(default_factory=dict)
    analyses: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    def _get(self, section: str, kind: str, name: str):
        table = getattr(self, section)
        if name not in table:
            known = ", ".join(sorted(table)) or "none"
            raise ConfigError(f"unknown {kind} '{name}' (known: {known})", pointer(section))
        return table[name]

    def system(self, name: str) -> SystemDef:
        return self._get("systems", "system", name)

    def certificate(self, name: str) -> LyapunovCandidate:
        return self._get("certificates", "certificate", name)

    def dwell_class(self, name: str) -> DwellTimeClass:
        return self._get("classes", "dwell-time class", name)

    def sequence(self, name: str) -> ImpulseSequence:
        return self._get("sequences", "sequence", name)

    def network(self, name: str) -> NetworkSpec:
        return self._get("networks", "network", name)

    def input_signal(self, name: str) -> InputSignal:
        return self._get("inputs", "input", name)

    def analysis(self, name: str) -> Dict[str, Any]:
        return self._get("analyses", "analysis", name)

    def system_for(self, certificate: str) -> SystemDef:
        return self.system(self.certificate_systems[certificate])


def _require(data: Mapping[str, Any], key: str, at: str) -> Any:
    if key not in data:
        raise ConfigError(f"missing required key '{key}'", at)
    return data[key]


def _section(data: Mapping[str, Any], key: str) -> Dict[str, Any]:
    value = data.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be an object", pointer(key))
    return value


def _params(data: Mapping[str, Any], base: Mapping[str, float], at: str) -> Dict[str, float]:
    merged = dict(base)
    local = data.get("params", {})
    if not isinstance(local, dict):
        raise ConfigError("'params' must be an object", at + "/params")
    for key, value in local.items():
        if not isinstance(value, (int, float)):
            raise ConfigError("parameter values must be numbers", f"{at}/params/{_escape(key)}")
        merged[key] = float(value)
    return merged


def _check_sources(sources: Any, at: str) -> List[str]:
    if not isinstance(sources, list) or not all(isinstance(s, str) for s in sources):
        raise ConfigError("expected a list of expression strings", at)
    for i, source in enumerate(sources):
        try:
            parse(source)
        except ISSToolkitError as e:
            raise ConfigError(str(e), f"{at}/{i}") from e
    return sources


def _load_system(name: str, data: Dict[str, Any], params: Dict[str, float]) -> SystemDef:
    at = pointer("systems", name)
    try:
        if "linear" in data:
            lin = data["linear"]
            return SystemDef.linear(_require(lin, "R", at + "/linear"), lin.get("C"), lin.get("D"), lin.get("F"), name=name)
        f = _check_sources(_require(data, "f", at), at + "/f")
        g = _check_sources(_require(data, "g", at), at + "/g")
        local = _params(data, params, at)
        return SystemDef.from_sources(name, f, g, data.get("states"), data.get("inputs"), local)
    except ConfigError:
        raise
    except (ISSToolkitError, ValueError, TypeError) as e:
        raise ConfigError(str(e), at) from e


def _scalar(spec: Any, tag: Optional[ClassTag], params: Dict[str, float], at: str) -> ScalarFn:
    try:
        fn = as_scalar_fn(spec, tag, params, var="r")
        check_tag = fn.declared_class if fn.declared_class is not ClassTag.NONE else tag
        if check_tag is not None and check_tag is not ClassTag.NONE:
            require_class(fn, check_tag, what=at)
        return fn
    except ISSToolkitError as e:
        raise ConfigError(str(e), at) from e


def _load_certificate(
    name: str, data: Dict[str, Any], systems: Dict[str, SystemDef], params: Dict[str, float]
) -> LyapunovCandidate:
    at = pointer("certificates", name)
    sys_name = _require(data, "system", at)
    if sys_name not in systems:
        raise ConfigError(f"unknown system '{sys_name}'", at + "/system")
    local = _params(data, params, at)
    for key, tag in CERTIFICATE_FUNCTIONS.items():
        if key in data:
            _scalar(data[key], tag, local, f"{at}/{key}")
    v_spec = _require(data, "V", at)
    try:
        parse(v_spec["expr"] if isinstance(v_spec, dict) else v_spec)
    except ISSToolkitError as e:
        raise ConfigError(str(e), at + "/V") from e
    try:
        return candidate_from_dict(data, systems[sys_name].state_names, local, name)
    except (ISSToolkitError, KeyError, ValueError) as e:
        raise ConfigError(str(e), at) from e


def _load_sequence(name: str, data: Any, params: Dict[str, float], seed: Optional[int]) -> ImpulseSequence:
    at = pointer("sequences", name)
    try:
        if isinstance(data, str):
            raise ConfigError("a sequence needs an object with 'spec' and 'horizon' or 'times'", at)
        if "spec" in data:
            return parse_sequence_spec(
                str(data["spec"]), float(_require(data, "horizon", at)), data.get("seed", seed), float(data.get("t0", 0.0))
            )
        return ImpulseSequence.from_dict(data)
    except ConfigError:
        raise
    except (ISSToolkitError, ValueError, TypeError) as e:
        raise ConfigError(str(e), at) from e


def _load_network(
    name: str,
    data: Dict[str, Any],
    systems: Dict[str, SystemDef],
    certificates: Dict[str, LyapunovCandidate],
    params: Dict[str, float],
) -> NetworkSpec:
    at = pointer("networks", name)
    local = _params(data, params, at)
    subsystems = _require(data, "subsystems", at)
    for i, sys_name in enumerate(subsystems):
        if sys_name not in systems:
            raise ConfigError(f"unknown system '{sys_name}'", f"{at}/subsystems/{i}")
    n = len(subsystems)

    def matrix(key: str) -> Optional[List[List[Optional[ScalarFn]]]]:
        if key not in data:
            return None
        rows = data[key]
        if not isinstance(rows, list) or len(rows) != n or any(not isinstance(r, list) or len(r) != n for r in rows):
            raise ConfigError(f"'{key}' must be a {n}x{n} array", f"{at}/{key}")
        return [
            [None if rows[i][j] is None else _scalar(rows[i][j], ClassTag.KINF, local, f"{at}/{key}/{i}/{j}") for j in range(n)]
            for i in range(n)
        ]

    gains = matrix("gains")
    if gains is None:
        raise ConfigError("missing required key 'gains'", at)
    external = None
    if "external" in data:
        external = [
            None if spec is None else _scalar(spec, ClassTag.KINF, local, f"{at}/external/{i}")
            for i, spec in enumerate(data["external"])
        ]
    certs = None
    if "certificates" in data:
        certs = []
        for i, cert_name in enumerate(data["certificates"]):
            if cert_name not in certificates:
                raise ConfigError(f"unknown certificate '{cert_name}'", f"{at}/certificates/{i}")
            certs.append(certificates[cert_name])
    try:
        network = GainNetwork(
            gains,
            external=external,
            certificates=certs,
            names=list(subsystems),
            jump_gains=matrix("jump_gains"),
            systems=[systems[s] for s in subsystems],
        )
    except ISSToolkitError as e:
        raise ConfigError(str(e), at) from e

    path = None
    if "path" in data:
        spec = data["path"]
        sigmas = [_scalar(s, ClassTag.KINF, local, f"{at}/path/sigma/{i}") for i, s in enumerate(_require(spec, "sigma", at + "/path"))]
        inverses = None
        if "inverse" in spec:
            inverses = [_scalar(s, ClassTag.KINF, local, f"{at}/path/inverse/{i}") for i, s in enumerate(spec["inverse"])]
        try:
            path = OmegaPath.from_functions(network, sigmas, inverses)
        except ISSToolkitError as e:
            raise ConfigError(str(e), at + "/path") from e
    return NetworkSpec(network, path)


def load_project(path: str) -> ProjectConfig:
    """
    Load and validate a project file.

    Args:
        path: Path to the JSON project file

    Returns:
        The validated ProjectConfig

    Raises:
        ConfigError: unreadable file, bad JSON or the first validation problem
    """
    if not os.path.exists(path):
        raise ConfigError(f"project file not found: {path}")
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    project = project_from_dict(data, path)
    logger.info(
        "Loaded project '%s': %d systems, %d certificates, %d networks",
        project.name, len(project.systems), len(project.certificates), len(project.networks),
    )
    return project


def project_from_dict(data: Any, path: Optional[str] = None) -> ProjectConfig:
    if not isinstance(data, dict):
        raise ConfigError("a project file must hold a JSON object")
    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}'", pointer(unknown[0]))
    seed = data.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError("'seed' must be an integer", "/seed")
    params = _params(data, {}, "")

    project = ProjectConfig(str(data.get("name", os.path.basename(path or "project"))), path, seed, params, raw=data)
    for name, spec in _section(data, "systems").items():
        project.systems[name] = _load_system(name, spec, params)
    for name, spec in _section(data, "certificates").items():
        project.certificates[name] = _load_certificate(name, spec, project.systems, params)
        project.certificate_systems[name] = spec["system"]
    for name, spec in _section(data, "classes").items():
        try:
            project.classes[name] = dwell_class_from_dict(spec, params)
        except ISSToolkitError as e:
            raise ConfigError(str(e), pointer("classes", name)) from e
    for name, spec in _section(data, "sequences").items():
        project.sequences[name] = _load_sequence(name, spec, params, seed)
    for name, spec in _section(data, "inputs").items():
        try:
            system = project.systems.get(spec.get("system", ""))
            m = system.m if system is not None else int(spec.get("m", 1))
            project.inputs[name] = InputSignal.from_dict(spec, m)
        except (ISSToolkitError, KeyError, ValueError, TypeError) as e:
            raise ConfigError(str(e), pointer("inputs", name)) from e
    for name, spec in _section(data, "networks").items():
        project.networks[name] = _load_network(name, spec, project.systems, project.certificates, params)
    for name, spec in _section(data, "analyses").items():
        command = spec.get("command") if isinstance(spec, dict) else None
        if command not in ANALYSIS_COMMANDS:
            raise ConfigError(f"unknown analysis command '{command}'", pointer("analyses", name, "command"))
        project.analyses[name] = spec
    return project
