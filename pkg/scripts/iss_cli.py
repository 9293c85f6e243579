#!/usr/bin/env python3
"""
ISS Toolkit CLI

Command-line interface for simulating impulsive systems, checking
ISS-Lyapunov certificates, dwell-time conditions, small-gain compositions,
linearization certificates and Monte-Carlo falsification runs described by
a JSON project file.

Exit codes: 0 when every check passed, 1 when a certificate or condition is
violated (the witness is in the report), 2 for usage and config errors.
"""

import glob
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

# Add parent directory to path
script_dir = os.path.dirname(os.path.abspath(__file__))
repo_root = os.path.dirname(script_dir)
sys.path.append(repo_root)

from core.errors import ConfigError, ISSToolkitError, LinearizationError
from core.falsify import gadt_tightness_demo, gs_check, iss_sweep
from core.hybridsim import simulate
from core.impulseseq import (
    ADT,
    GADT,
    densest_admissible,
    impulse_frequency,
    member,
    parse_sequence_spec,
    theta_star,
)
from core.linearize import build_local_certificate, numeric_jacobians
from core.lyapcheck import (
    STABILIZING_FLOW,
    STABILIZING_JUMPS,
    certify_dwell_time,
    check_implication_form,
    check_max_form,
    default_sampler,
    fdt_threshold,
    gadt_check,
)
from core.cmpfun import as_scalar_fn
from core.project import ProjectConfig, load_project, pointer
from core.reproductions import ReproRow, run_reproductions
from core.settings import resolve_seed
from core.smallgain import (
    compose_certificate,
    compose_exponential,
    omega_path,
    small_gain_check,
    solve_example_tradeoff,
    spectral_radius,
    tradeoff_curve,
)

logger = logging.getLogger("iss_cli")

DEFAULT_CONFIG = os.path.join(repo_root, "configs", "scalar_examples.json")
BUNDLED_CONFIGS = os.path.join(repo_root, "configs", "*.json")


class ConfigUsageError(click.ClickException):
    """Config and input problems; click prints the message and exits with 2."""

    exit_code = 2


@dataclass
class Outcome:
    report: Dict[str, Any]
    ok: bool
    text: str


class CliState:
    def __init__(self, config: str, seed: Optional[int], output: Optional[str]):
        self.config = config
        self.seed = seed
        self.output = output
        self._project: Optional[ProjectConfig] = None

    def project(self) -> ProjectConfig:
        if self._project is None:
            try:
                self._project = load_project(self.config)
            except ConfigError as e:
                raise ConfigUsageError(str(e)) from e
            except ISSToolkitError as e:
                raise ConfigUsageError(f"{self.config}: {e}") from e
        return self._project


def setup_logging(debug=False):
    """Setup logging configuration (rich handler on stderr)"""
    level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(name)s: %(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False, show_time=False)],
        force=True,
    )


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def dump_report(report: Dict[str, Any]) -> str:
    return json.dumps(report, indent=2, default=_jsonable) + "\n"


def _float_list(value: Any, what: str) -> List[float]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        items = value
    else:
        items = [v for v in str(value).split(",") if v.strip()]
    try:
        return [float(v) for v in items]
    except ValueError as e:
        raise ConfigUsageError(f"{what}: expected numbers, got {value!r}") from e


def _a_grid(spec: Any) -> Optional[np.ndarray]:
    """'default', 'lo:hi:n' (log-spaced) or an explicit list."""
    if spec is None or spec == "default":
        return None
    if isinstance(spec, str) and ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigUsageError(f"--a-grid: expected lo:hi:n, got {spec!r}")
        return np.geomspace(float(parts[0]), float(parts[1]), int(parts[2]))
    values = _float_list(spec, "--a-grid")
    if not values or min(values) <= 0:
        raise ConfigUsageError("--a-grid needs positive points")
    return np.asarray(values)


def _sequence(project: ProjectConfig, spec: str, horizon: float, seed: int):
    if spec in project.sequences:
        return project.sequence(spec)
    return parse_sequence_spec(spec, horizon, seed)


def _class_label(cls) -> str:
    return ", ".join(f"{k}={v}" for k, v in cls.to_dict().items() if not isinstance(v, dict))


# Formatting


def format_certificate_report(name: str, report) -> str:
    """Format a certificate check for display"""
    lines = [
        f"Certificate {name} ({report.form} form): {report.verdict}",
        f"  worst flow margin     {report.worst_flow_margin:.6g}",
        f"  worst jump margin     {report.worst_jump_margin:.6g}",
        f"  worst sandwich margin {report.worst_sandwich_margin:.6g}",
        f"  samples: {report.counts['pairs']} pairs, {report.counts['guarded_flow']} under the flow guard (seed {report.seed})",
    ]
    if report.witness:
        w = report.witness
        lines.append(f"  witness ({w['branch']}): x={w['x']} xi={w['xi']} margin={w['margin']:.6g}")
    for note in report.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines) + "\n"


def format_fdt(name: str, result, verdict=None) -> str:
    """Format a fixed dwell-time bound and the certified theta range"""
    lines = [f"FDT bound for {name} ({result.direction}): {result.bound:.10g}"]
    if result.argsup is not None:
        lines.append(f"  attained at a = {result.argsup:.6g} over {len(result.a_grid)} grid points")
    if not math.isfinite(result.bound):
        lines.append("  an integral diverges: no fixed dwell time is certified")
    elif result.direction == STABILIZING_FLOW:
        lines.append(f"  ISS for every theta > {result.bound:.10g}, GS at theta = {result.bound:.10g} (gaps >= theta)")
    else:
        lines.append(f"  ISS for every theta < {result.bound:.10g}, GS at theta = {result.bound:.10g} (gaps <= theta)")
    if result.diverged:
        lines.append(f"  divergent integrals at {len(result.diverged)} grid points")
    if verdict is not None:
        lines.append(
            f"  theta={verdict.theta:g}, delta={verdict.delta:g}: {verdict.conclusion} over {verdict.sequence_class}"
        )
    return "\n".join(lines) + "\n"


def format_membership(label: str, seq, result) -> str:
    """Format a dwell-time membership verdict"""
    status = "member" if result.member else "NOT a member"
    lines = [
        f"Sequence ({len(seq)} impulses on [{seq.t0:g}, {seq.horizon:g}]) is {status} of {label}",
        f"  worst margin {result.worst_margin:.6g}",
    ]
    if result.witness:
        lines.append(f"  witness pair s={result.witness[0]:.10g}, t={result.witness[1]:.10g}")
    if result.note:
        lines.append(f"  note: {result.note}")
    return "\n".join(lines) + "\n"


def format_sweep(report) -> str:
    """Format a falsification sweep summary"""
    lines = [
        f"{report.mode.upper()} sweep: {report.verdict} (seed {report.seed})",
        f"  trials {report.trials}, diverged {report.diverged} ({100 * report.diverged_fraction:.2f}%)",
        f"  envelope violations {report.violation_count}",
    ]
    if report.pooled is not None:
        lines.append(f"  pooled envelope: {report.pooled.kind}")
    if report.witness:
        lines.append(f"  witness: {json.dumps(report.witness, default=_jsonable)}")
    return "\n".join(lines) + "\n"


def format_repro_table(rows: Sequence[Dict[str, Any]], seed: int) -> Table:
    """Pass/fail table of the reference reproductions"""
    table = Table(title=f"Reference reproductions (seed {seed})")
    table.add_column("Check")
    table.add_column("Expected")
    table.add_column("Observed")
    table.add_column("Result")
    for row in rows:
        result = "[green]PASS[/green]" if row["passed"] else "[red]FAIL[/red]"
        table.add_row(row["name"], row["expected"], row["observed"], result)
    return table


# Analyses: (project, seed, **params) -> Outcome


def run_simulate(
    project: ProjectConfig,
    seed: int,
    system: str,
    seq: str,
    horizon: float = 20.0,
    x0: Any = None,
    input: Optional[str] = None,
    plot_data: Optional[str] = None,
) -> Outcome:
    sys_def = project.system(system)
    sequence = _sequence(project, seq, horizon, seed)
    x_init = _float_list(x0, "--x0") or [1.0] * sys_def.n
    if len(x_init) != sys_def.n:
        raise ConfigUsageError(f"--x0 needs {sys_def.n} values, got {len(x_init)}")
    u = project.input_signal(input) if input else None
    traj = simulate(sys_def, sequence, u=u, x0=x_init, seed=seed)
    if plot_data:
        times, norms = traj.norms()
        with open(plot_data, "w") as f:
            f.write("t,norm\n")
            for t, n in zip(times, norms):
                f.write(f"{t!r},{n!r}\n")
    if traj.diverged:
        logger.warning("Trajectory of %s diverged at t=%g", system, traj.diverged_at)
    report = {"system": system, "sequence": sequence.to_dict(), "trajectory": traj.to_dict()}
    return Outcome(report, not traj.diverged, traj.to_csv(sys_def.state_names))


def run_check_certificate(
    project: ProjectConfig,
    seed: int,
    certificate: str,
    samples: Optional[int] = None,
    local_radius: Optional[float] = None,
) -> Outcome:
    L = project.certificate(certificate)
    sys_def = project.system_for(certificate)
    sampler = default_sampler(sys_def, L, seed, interior=samples, local_radius=local_radius)
    if L.form == "max":
        report = check_max_form(sys_def, L, sampler=sampler)
    else:
        report = check_implication_form(sys_def, L, sampler=sampler)
    out = {"certificate": L.to_dict(), "system": sys_def.name, "check": report.to_dict()}
    return Outcome(out, report.certified, format_certificate_report(certificate, report))


def run_fdt(
    project: ProjectConfig,
    seed: int,
    certificate: str,
    a_grid: Any = "default",
    direction: Optional[str] = None,
    theta: Optional[float] = None,
    delta: float = 0.0,
) -> Outcome:
    L = project.certificate(certificate)
    phi, alpha = L.flow_rate_fn(), L.jump_fn()
    if direction is None:
        direction = STABILIZING_FLOW if float(phi(1.0)) > 0 else STABILIZING_JUMPS
    result = fdt_threshold(phi, alpha, _a_grid(a_grid), direction)
    verdict = certify_dwell_time(result, float(theta), float(delta)) if theta is not None else None
    if verdict is not None:
        ok = verdict.ok
    elif direction == STABILIZING_FLOW:
        ok = math.isfinite(result.bound)
    else:
        ok = result.bound > 0
    report = {"certificate": certificate, "fdt": result.to_dict(), "verdict": verdict.to_dict() if verdict else None}
    return Outcome(report, ok, format_fdt(certificate, result, verdict))


def run_gadt(
    project: ProjectConfig,
    seed: int,
    cls: Optional[str] = None,
    seq: Optional[str] = None,
    horizon: float = 20.0,
    h: Optional[str] = None,
    c: Optional[float] = None,
    d: Optional[float] = None,
    demo: bool = False,
) -> Outcome:
    if demo:
        if c is None or d is None:
            raise ConfigUsageError("the tightness demo needs --c and --d")
        tight = gadt_tightness_demo(float(c), float(d), max(horizon, 60.0))
        ok = bool(tight.admissible.get("member")) and bool(tight.admissible.get("under_envelope"))
        text = "".join(
            f"gap {run.gap:.6g}: factor {run.factor:.6g}, peaks {run.regime}"
            + (f", exceeded at t={run.exceeded_at:.4g}" if run.exceeded_at is not None else "")
            + "\n"
            for run in tight.runs
        )
        return Outcome({"tightness": tight.to_dict()}, ok, f"critical gap {tight.critical_gap:.6g}\n" + text)

    if cls is not None:
        dwell = project.dwell_class(cls)
        if isinstance(dwell, ADT):
            dwell = dwell.as_gadt()
        if not isinstance(dwell, GADT):
            raise ConfigUsageError(f"class '{cls}' is not an ADT or gADT class")
        h_fn, c_val, d_val = dwell.h, dwell.c, dwell.d
    else:
        if h is None or c is None or d is None:
            raise ConfigUsageError("gadt needs --class or all of --h, --c and --d")
        h_fn = as_scalar_fn(h, params=project.params, var="x")
        c_val, d_val = float(c), float(d)
    if seq is None:
        raise ConfigUsageError("gadt needs --seq (or --demo)")
    sequence = _sequence(project, seq, horizon, seed)
    result = gadt_check(c_val, d_val, h_fn, sequence)
    label = f"gADT(h={h_fn.label}, c={c_val:g}, d={d_val:g})"
    report = {"class": label, "sequence": sequence.to_dict(), "membership": result.to_dict()}
    return Outcome(report, result.member, format_membership(label, sequence, result))


def run_sequence_class(
    project: ProjectConfig,
    seed: int,
    cls: str,
    seq: Optional[str] = None,
    horizon: float = 20.0,
    densest: bool = False,
    slack: float = 0.0,
) -> Outcome:
    dwell = project.dwell_class(cls)
    if densest:
        sequence = densest_admissible(dwell, horizon, slack=slack)
    elif seq is not None:
        sequence = _sequence(project, seq, horizon, seed)
    else:
        raise ConfigUsageError("sequence-class needs --seq or --densest")
    result = member(sequence, dwell)
    report: Dict[str, Any] = {"class": dwell.to_dict(), "sequence": sequence.to_dict(), "membership": result.to_dict()}
    if isinstance(dwell, ADT) and dwell.d < 0:
        report["impulse_frequency"] = impulse_frequency(dwell.c, dwell.d)
        if dwell.lam < dwell.c:
            report["theta_star"] = theta_star(dwell.c, dwell.d, dwell.lam)
    text = format_membership(f"{dwell.kind}({_class_label(dwell)})", sequence, result)
    if densest:
        text += "  times: " + ", ".join(f"{t:.10g}" for t in sequence.times) + "\n"
    return Outcome(report, result.member, text)


def run_compose(
    project: ProjectConfig,
    seed: int,
    network: str,
    exponential: bool = False,
    samples: Optional[int] = None,
    local_radius: Optional[float] = None,
) -> Outcome:
    spec = project.network(network)
    net = spec.network
    sg = small_gain_check(net)
    report: Dict[str, Any] = {"network": net.to_dict(), "small_gain": sg.to_dict()}
    if net.linear_flag:
        report["spectral_radius"] = spectral_radius(net)
    if not sg.holds:
        text = f"Small-gain condition fails on cycle {sg.cycle} at s={sg.point:g} (ratio {sg.ratio:.6g})\n"
        return Outcome(report, False, text)

    path = spec.path or omega_path(net)
    L = compose_exponential(net, path) if exponential else compose_certificate(net, path)
    sys_def = net.interconnection(network)
    check = check_max_form(sys_def, L, sampler=default_sampler(sys_def, L, seed, interior=samples, local_radius=local_radius))
    report.update({"path": path.to_dict(), "certificate": L.to_dict(), "check": check.to_dict()})
    text = f"Omega-path ({path.variant}), worst ratio {path.worst_ratio:.6g}\n"
    text += format_certificate_report(L.name, check)
    return Outcome(report, check.certified, text)


def run_tradeoff(
    project: ProjectConfig,
    seed: int,
    chi: Any = None,
    chi_ext: Any = None,
    c_tilde: Optional[float] = None,
    d: Optional[float] = None,
    k_grid: Any = None,
) -> Outcome:
    if chi is None:
        b, c = solve_example_tradeoff()
        report = {"example": {"b": b, "c": c, "residual": 6 * b**3 - b**2 - 1}}
        return Outcome(report, True, f"b = {b:.6f}, c = 2(3b - 1) = {c:.6f}\n")
    if c_tilde is None or d is None:
        raise ConfigUsageError("tradeoff needs --c-tilde and --d with --chi")
    matrix = np.asarray(json.loads(chi) if isinstance(chi, str) else chi, dtype=float)
    ext = None if chi_ext is None else np.asarray(_float_list(chi_ext, "--chi-ext"))
    grid = _float_list(k_grid, "--k-grid") or None
    result = tradeoff_curve(matrix, ext, float(c_tilde), float(d), grid)
    text = f"rho(chi) = {result.rho:.10g}\n"
    for p in result.points:
        text += f"  k={p.k:.6g}: rho_k={p.rho_k:.6g}, c_k={p.c_k:.6g}, omega={p.omega:.6g}"
        if p.chi_ext_k is not None:
            text += ", chi_ext/k=" + ", ".join(f"{g:.6g}" for g in p.chi_ext_k)
        text += "\n"
    return Outcome({"tradeoff": result.to_dict()}, result.small_gain_everywhere and result.omega_decreasing, text)


def run_linearize(project: ProjectConfig, seed: int, system: str, samples: Optional[int] = None) -> Outcome:
    sys_def = project.system(system)
    lin = numeric_jacobians(sys_def, seed=seed)
    for warning in lin.warnings:
        logger.warning(warning)
    try:
        cert = build_local_certificate(lin, samples=samples, seed=seed)
    except LinearizationError as e:
        return Outcome({"system": system, "linearization": lin.to_dict(), "error": str(e)}, False, f"{e}\n")
    L = cert.to_candidate(f"{system}-quadratic")
    check = check_implication_form(sys_def, L, sampler=default_sampler(sys_def, L, seed))
    report = {
        "system": system,
        "linearization": lin.to_dict(),
        "certificate": cert.to_dict(),
        "candidate": L.to_dict(),
        "check": check.to_dict(),
    }
    text = (
        f"Local certificate on |x| <= {cert.rho:.6g}: c = {cert.c_local:.6g}, "
        f"jump factor {cert.jump_factor:.6g} (d = {cert.d:.6g})\n"
    )
    text += format_certificate_report(L.name, check)
    return Outcome(report, check.certified, text)


def run_falsify(
    project: ProjectConfig,
    seed: int,
    system: str,
    cls: str,
    trials: Optional[int] = None,
    horizon: Optional[float] = None,
    gs: bool = False,
    peaks: Optional[str] = None,
) -> Outcome:
    sys_def = project.system(system)
    dwell = project.dwell_class(cls)
    if gs:
        holds, fit, sweep = gs_check(sys_def, dwell, trials, seed, horizon)
        ok = holds
        report = {"gs": {"holds": holds, "fit": fit.to_dict() if fit else None}, "sweep": sweep.to_dict()}
    else:
        sweep = iss_sweep(sys_def, dwell, trials, seed, horizon)
        ok = sweep.passed
        report = {"sweep": sweep.to_dict()}
    if peaks:
        with open(peaks, "w") as f:
            f.write(sweep.peak_csv())
    return Outcome(report, ok, format_sweep(sweep))


ANALYSES: Dict[str, Callable[..., Outcome]] = {
    "simulate": run_simulate,
    "check-certificate": run_check_certificate,
    "fdt": run_fdt,
    "gadt": run_gadt,
    "sequence-class": run_sequence_class,
    "compose": run_compose,
    "tradeoff": run_tradeoff,
    "linearize": run_linearize,
    "falsify": run_falsify,
}


def execute(ctx: click.Context, command: str, fn: Callable[..., Outcome], **params) -> None:
    """Load the project, run one analysis, print its text, write the JSON report and exit."""
    state: CliState = ctx.obj
    project = state.project()
    seed = resolve_seed(state.seed, project.seed)
    logger.info("Running %s (seed %d)", command, seed)
    try:
        outcome = fn(project, seed, **params)
    except ConfigError as e:
        raise ConfigUsageError(str(e)) from e
    except ISSToolkitError as e:
        raise ConfigUsageError(f"{command}: {e}") from e

    click.echo(outcome.text, nl=False)
    report = {"command": command, "project": project.name, "seed": seed, "ok": outcome.ok, **outcome.report}
    if state.output:
        with open(state.output, "w") as f:
            f.write(dump_report(report))
        logger.info("Report written to %s", state.output)
    ctx.exit(0 if outcome.ok else 1)


def bundled_config_rows(seed: int) -> List[ReproRow]:
    """Every bundled project file loads and its declared analyses run."""
    rows = []
    for path in sorted(glob.glob(BUNDLED_CONFIGS)):
        name = os.path.basename(path)
        try:
            project = load_project(path)
        except ISSToolkitError as e:
            rows.append(ReproRow(f"config:{name}", "Bundled project file loads", "loads", str(e), False))
            continue
        rows.append(ReproRow(f"config:{name}", "Bundled project file loads", "loads", "loads", True))
        for analysis, spec in sorted(project.analyses.items()):
            params = {k: v for k, v in spec.items() if k not in ("command", "description")}
            try:
                outcome = ANALYSES[spec["command"]](project, seed, **params)
                observed, passed = ("ok" if outcome.ok else "violated"), outcome.ok
            except (ISSToolkitError, click.ClickException, TypeError) as e:
                observed, passed = f"error: {e}", False
            rows.append(ReproRow(f"{name}:{analysis}", f"Declared analysis '{spec['command']}'", "ok", observed, passed))
    return rows


# Commands


@click.group()
@click.option("--config", "config", default=DEFAULT_CONFIG, show_default=True, help="Project file (JSON)")
@click.option("--seed", type=int, default=None, help="Seed override (else ISS_SEED, then the project seed)")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None, help="Write the JSON report here")
@click.option("--debug", is_flag=True, help="Enable debug output")
@click.pass_context
def cli(ctx, config, seed, output, debug):
    """ISS toolkit for impulsive systems."""
    setup_logging(debug)
    ctx.obj = CliState(config, seed, output)


@cli.command("simulate")
@click.option("--system", required=True, help="System name")
@click.option("--seq", required=True, help="Sequence name, periodic:DELTA, uniform:GAP[:MAX] or t1,t2,...")
@click.option("--horizon", type=float, default=20.0, show_default=True)
@click.option("--x0", default=None, help="Initial state, comma separated (default all ones)")
@click.option("--input", "input_name", default=None, help="Input signal name")
@click.option("--plot-data", type=click.Path(dir_okay=False), default=None, help="Write t,|x| CSV here")
@click.pass_context
def simulate_cmd(ctx, system, seq, horizon, x0, input_name, plot_data):
    """Simulate one trajectory and print it as CSV."""
    execute(ctx, "simulate", run_simulate, system=system, seq=seq, horizon=horizon, x0=x0, input=input_name, plot_data=plot_data)


@cli.command("check-certificate")
@click.option("--certificate", required=True, help="Certificate name")
@click.option("--samples", type=int, default=None, help="Interior sample count")
@click.option("--local-radius", type=float, default=None, help="Sample the ball of this radius (local certificates)")
@click.pass_context
def check_certificate_cmd(ctx, certificate, samples, local_radius):
    """Check an ISS-Lyapunov candidate on sampled states and inputs."""
    execute(
        ctx, "check-certificate", run_check_certificate, certificate=certificate, samples=samples, local_radius=local_radius
    )


@cli.command("fdt")
@click.option("--certificate", required=True, help="Certificate name")
@click.option("--a-grid", default="default", show_default=True, help="'default', lo:hi:n or a comma list")
@click.option("--direction", type=click.Choice([STABILIZING_FLOW, STABILIZING_JUMPS]), default=None)
@click.option("--theta", type=float, default=None, help="Dwell time to certify")
@click.option("--delta", type=float, default=0.0, show_default=True)
@click.pass_context
def fdt_cmd(ctx, certificate, a_grid, direction, theta, delta):
    """Fixed dwell-time bound of a certificate."""
    execute(ctx, "fdt", run_fdt, certificate=certificate, a_grid=a_grid, direction=direction, theta=theta, delta=delta)


@cli.command("gadt")
@click.option("--class", "cls", default=None, help="ADT or gADT class name")
@click.option("--seq", default=None, help="Sequence name or spec")
@click.option("--horizon", type=float, default=20.0, show_default=True)
@click.option("--h", default=None, help="h(x) expression when no class is named")
@click.option("--c", type=float, default=None)
@click.option("--d", type=float, default=None)
@click.option("--demo", is_flag=True, help="Run the periodic tightness demonstration for (c, d)")
@click.pass_context
def gadt_cmd(ctx, cls, seq, horizon, h, c, d, demo):
    """Generalized average dwell-time check."""
    execute(ctx, "gadt", run_gadt, cls=cls, seq=seq, horizon=horizon, h=h, c=c, d=d, demo=demo)


@cli.command("sequence-class")
@click.option("--class", "cls", required=True, help="Dwell-time class name")
@click.option("--seq", default=None, help="Sequence name or spec")
@click.option("--horizon", type=float, default=20.0, show_default=True)
@click.option("--densest", is_flag=True, help="Check the densest admissible sequence of the class")
@click.option("--slack", type=float, default=0.0, show_default=True)
@click.pass_context
def sequence_class_cmd(ctx, cls, seq, horizon, densest, slack):
    """Membership of a sequence in a dwell-time class."""
    execute(ctx, "sequence-class", run_sequence_class, cls=cls, seq=seq, horizon=horizon, densest=densest, slack=slack)


@cli.command("compose")
@click.option("--network", required=True, help="Network name")
@click.option("--exponential", is_flag=True, help="Compose exponential rates for power gains")
@click.option("--samples", type=int, default=None)
@click.option("--local-radius", type=float, default=None, help="Sample the ball of this radius")
@click.pass_context
def compose_cmd(ctx, network, exponential, samples, local_radius):
    """Small-gain check and composite certificate of a network."""
    execute(ctx, "compose", run_compose, network=network, exponential=exponential, samples=samples, local_radius=local_radius)


@cli.command("tradeoff")
@click.option("--chi", default=None, help="Linear gain matrix as JSON (default: the two-subsystem example)")
@click.option("--chi-ext", default=None, help="External gains, comma separated")
@click.option("--c-tilde", type=float, default=None)
@click.option("--d", type=float, default=None)
@click.option("--k-grid", default=None, help="Scale factors, comma separated")
@click.pass_context
def tradeoff_cmd(ctx, chi, chi_ext, c_tilde, d, k_grid):
    """Gain/rate trade-off curve for linear gains."""
    execute(ctx, "tradeoff", run_tradeoff, chi=chi, chi_ext=chi_ext, c_tilde=c_tilde, d=d, k_grid=k_grid)


@cli.command("linearize")
@click.option("--system", required=True, help="System name")
@click.option("--samples", type=int, default=None)
@click.pass_context
def linearize_cmd(ctx, system, samples):
    """Local quadratic certificate from the linearization at the origin."""
    execute(ctx, "linearize", run_linearize, system=system, samples=samples)


@cli.command("falsify")
@click.option("--system", required=True, help="System name")
@click.option("--class", "cls", required=True, help="Dwell-time class name")
@click.option("--trials", type=int, default=None)
@click.option("--horizon", type=float, default=None)
@click.option("--gs", is_flag=True, help="Fit a global-stability envelope instead of ISS")
@click.option("--peaks", type=click.Path(dir_okay=False), default=None, help="Write per-trial peaks CSV here")
@click.pass_context
def falsify_cmd(ctx, system, cls, trials, horizon, gs, peaks):
    """Monte-Carlo ISS falsification over a dwell-time class."""
    execute(ctx, "falsify", run_falsify, system=system, cls=cls, trials=trials, horizon=horizon, gs=gs, peaks=peaks)


@cli.command("run")
@click.argument("analysis")
@click.pass_context
def run_cmd(ctx, analysis):
    """Run an analysis declared in the project file."""
    project = ctx.obj.project()
    try:
        spec = project.analysis(analysis)
    except ConfigError as e:
        raise ConfigUsageError(str(e)) from e
    command = spec["command"]
    params = {k: v for k, v in spec.items() if k not in ("command", "description")}
    try:
        execute(ctx, command, ANALYSES[command], **params)
    except TypeError as e:
        raise ConfigUsageError(f"{pointer('analyses', analysis)}: {e}") from e


@cli.command("repro-paper")
@click.option("--only", multiple=True, help="Run only the named reproduction groups")
@click.pass_context
def repro_paper_cmd(ctx, only):
    """Run every reference reproduction and print a pass/fail table."""
    state: CliState = ctx.obj
    seed = resolve_seed(state.seed)
    report = run_reproductions(seed, list(only) or None)
    if not only:
        extra = bundled_config_rows(seed)
        report["rows"].extend(r.to_dict() for r in extra)
        report["passed"] = report["passed"] and all(r.passed for r in extra)
    Console().print(format_repro_table(report["rows"], seed))
    if state.output:
        with open(state.output, "w") as f:
            f.write(dump_report({"command": "repro-paper", **report}))
    ctx.exit(0 if report["passed"] else 1)


cli.add_command(repro_paper_cmd, "reproduce")


def main():
    """Main CLI entry point"""
    try:
        return cli.main(standalone_mode=False) or 0
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1


if __name__ == "__main__":
    sys.exit(main())
