#!/usr/bin/env python3
"""
Monte Carlo ISS Falsification

Sweeps random initial states, piecewise-constant inputs and class-admissible
impulse sequences through the simulator, fits ISS (or GS) envelopes that
dominate every recorded norm, flags empirical divergence with a reproducible
witness and runs the gADT tightness demonstration.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import FalsificationError, SimulationError
from core.hybridsim import InputSignal, SimOptions, SystemDef, simulate
from core.impulseseq import (
    ADT,
    GADT,
    DwellTimeClass,
    FDTMaxGap,
    FDTMinGap,
    ImpulseSequence,
    densest_admissible,
    member,
    periodic,
    uniform_random,
)
from core.settings import get_settings, resolve_seed

logger = logging.getLogger(__name__)

MIN_TRIALS = 100
LAMBDA_POINTS = 201
KL_R_BINS = 16
KL_T_BINS = 64
MAX_LISTED_VIOLATIONS = 20

CONSISTENT = "consistent-with-iss"
NOT_ISS = "not-iss-empirical"


@dataclass
class StepEnvelope:
    """Nondecreasing right-continuous step function through observed (x, y) pairs; 0 below the first x."""

    xs: np.ndarray
    ys: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "StepEnvelope":
        if len(x) == 0:
            return cls(np.zeros(0), np.zeros(0))
        order = np.argsort(x, kind="stable")
        xs, ys = np.asarray(x)[order], np.maximum.accumulate(np.asarray(y)[order])
        keep = np.append(xs[1:] != xs[:-1], True)
        return cls(xs[keep], ys[keep])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(self.xs) == 0:
            return np.zeros_like(x)
        idx = np.searchsorted(self.xs, x, side="right") - 1
        return np.where(idx >= 0, self.ys[np.maximum(idx, 0)], 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"x": self.xs.tolist(), "y": self.ys.tolist()}


@dataclass
class KLTable:
    """Sample-sound KL table: beta(r, t) = max norm over samples with r0 <= r edge and time >= t edge."""

    r_edges: np.ndarray
    t_edges: np.ndarray
    values: np.ndarray

    @classmethod
    def fit(cls, r0: np.ndarray, t: np.ndarray, s: np.ndarray, horizon: float) -> "KLTable":
        positive = r0[r0 > 0]
        lo, hi = float(np.min(positive)), float(np.max(positive))
        r_edges = np.geomspace(lo, hi, KL_R_BINS) if hi > lo else np.array([hi])
        t_edges = np.linspace(0.0, horizon, KL_T_BINS)
        ri = np.minimum(np.searchsorted(r_edges, r0, side="left"), len(r_edges) - 1)
        ti = np.maximum(np.searchsorted(t_edges, t, side="right") - 1, 0)
        values = np.zeros((len(r_edges), len(t_edges)))
        np.maximum.at(values, (ri, ti), s)
        values = np.maximum.accumulate(values, axis=0)
        values = np.maximum.accumulate(values[:, ::-1], axis=1)[:, ::-1]
        return cls(r_edges, t_edges, values)

    def __call__(self, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        r, t = np.asarray(r, dtype=float), np.asarray(t, dtype=float)
        ri = np.searchsorted(self.r_edges, r, side="left")
        ti = np.maximum(np.searchsorted(self.t_edges, t, side="right") - 1, 0)
        inside = ri < len(self.r_edges)
        out = np.where(inside, self.values[np.minimum(ri, len(self.r_edges) - 1), ti], np.inf)
        return np.where(r > 0, out, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"r": self.r_edges.tolist(), "t": self.t_edges.tolist(), "values": self.values.tolist()}


@dataclass
class TrialRecord:
    index: int
    sequence_index: int
    r0: float
    times: np.ndarray
    norms: np.ndarray
    input_norms: np.ndarray
    diverged: bool
    x0: List[float]
    input: Dict[str, Any]
    diverged_at: Optional[float] = None
    seed_key: Tuple[int, ...] = ()

    @property
    def peak(self) -> float:
        return float(np.max(self.norms)) if len(self.norms) else 0.0


@dataclass
class EnvelopeFit:
    """
    ISS envelope ||x(t)|| <= beta(||x0||, t - t0) + gamma(||u||_[t0, t]).

    beta is M r exp(-lam t) when an exponential rate fits, otherwise a KL table.
    """

    kind: str
    gamma: StepEnvelope
    M: float = 0.0
    lam: float = 0.0
    table: Optional[KLTable] = None
    trials: int = 0

    def beta(self, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        if self.table is not None:
            return self.table(r, t)
        return self.M * np.asarray(r, dtype=float) * np.exp(-self.lam * np.asarray(t, dtype=float))

    def bound(self, r: np.ndarray, t: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.beta(r, t) + self.gamma(w)

    def dominates(self, records: Sequence[TrialRecord]) -> bool:
        return all(np.all(rec.norms <= self.bound(rec.r0, rec.times, rec.input_norms)) for rec in records)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind, "trials": self.trials, "gamma": self.gamma.to_dict()}
        if self.table is not None:
            out["beta_table"] = self.table.to_dict()
        else:
            out["M"] = self.M
            out["lambda"] = self.lam
        return out


def _causal_input_norms(u: InputSignal, times: np.ndarray, t0: float) -> np.ndarray:
    norms = np.linalg.norm(u.values, axis=1) if u.m else np.zeros(len(u.breakpoints))
    running = np.maximum.accumulate(norms)
    idx = np.maximum(np.searchsorted(u.breakpoints, times + t0, side="right") - 1, 0)
    return running[idx]


def _fit_exponential(records: Sequence[TrialRecord], horizon: float, lam_max: float) -> Optional[Tuple[float, float]]:
    """(M, lam) minimizing the area under M exp(-lam t) among exact dominators; None when lam = 0 wins."""
    ratios = [(rec.times, rec.norms / rec.r0) for rec in records if rec.r0 > 0]
    if not ratios:
        return 0.0, 0.0
    lams = np.linspace(0.0, lam_max, LAMBDA_POINTS)
    best: Optional[Tuple[float, float, float]] = None
    for lam in lams:
        M = max(float(np.max(q * np.exp(lam * t))) for t, q in ratios)
        area = M * horizon if lam == 0 else M * (1.0 - math.exp(-lam * horizon)) / lam
        if best is None or area < best[0]:
            best = (area, M, float(lam))
    _, M, lam = best
    if lam == 0.0:
        return None
    return M, lam


def fit_envelope(records: Sequence[TrialRecord], horizon: float, lam_max: Optional[float] = None) -> EnvelopeFit:
    """
    Fit beta on zero-input trials, then gamma as the step envelope of what beta leaves over.

    Both pieces dominate their training data exactly.
    """
    lam_max = float(get_settings("falsify")["lambda_max"] if lam_max is None else lam_max)
    free = [rec for rec in records if rec.input_norms[-1] == 0]
    fit = _fit_exponential(free, horizon, lam_max)
    if fit is None:
        r0 = np.concatenate([np.full(len(rec.times), rec.r0) for rec in free])
        t = np.concatenate([rec.times for rec in free])
        s = np.concatenate([rec.norms for rec in free])
        envelope = EnvelopeFit("kl-table", StepEnvelope.fit(np.zeros(0), np.zeros(0)), table=KLTable.fit(r0, t, s, horizon))
    else:
        envelope = EnvelopeFit("exponential", StepEnvelope.fit(np.zeros(0), np.zeros(0)), M=fit[0], lam=fit[1])

    w_all, e_all = [], []
    for rec in records:
        beta = envelope.beta(rec.r0, rec.times)
        w_all.append(rec.input_norms)
        e_all.append(np.maximum(rec.norms - beta, 0.0))
    if w_all:
        envelope.gamma = StepEnvelope.fit(np.concatenate(w_all), np.concatenate(e_all))
    envelope.trials = len(records)
    return envelope


def admissible_sequences(
    cls: DwellTimeClass, horizon: float, count: int, rng: np.random.Generator, t0: float = 0.0
) -> List[ImpulseSequence]:
    """The extreme sequence of the class first, then random admissible ones."""
    seqs: List[ImpulseSequence] = []
    if isinstance(cls, FDTMinGap):
        seqs.append(periodic(cls.theta, horizon, t0))
        while len(seqs) < count:
            seqs.append(uniform_random(cls.theta, horizon, int(rng.integers(2**31)), t0, 2.0 * cls.theta))
    elif isinstance(cls, FDTMaxGap):
        seqs.append(periodic(cls.theta, horizon, t0))
        while len(seqs) < count:
            seqs.append(uniform_random(0.5 * cls.theta, horizon, int(rng.integers(2**31)), t0, cls.theta))
    elif isinstance(cls, (ADT, GADT)) and cls.d < 0:
        seqs.append(densest_admissible(cls, horizon, t0))
        while len(seqs) < count:
            seqs.append(densest_admissible(cls, horizon, t0, slack=float(rng.uniform(0.0, 1.0))))
    elif isinstance(cls, (ADT, GADT)):
        seqs.append(ImpulseSequence.empty(t0, horizon))
        attempts = 0
        while len(seqs) < count and attempts < 50 * count:
            attempts += 1
            candidate = uniform_random(float(rng.uniform(0.05, 1.0)), horizon, int(rng.integers(2**31)), t0)
            if member(candidate, cls).member:
                seqs.append(candidate)
    else:
        raise FalsificationError(f"unsupported dwell-time class {cls!r}")
    return seqs


@dataclass
class SweepReport:
    verdict: str
    trials: int
    diverged: int
    seed: int
    pooled: Optional[EnvelopeFit]
    per_sequence: List[Optional[EnvelopeFit]]
    sequences: List[Dict[str, Any]]
    records: List[TrialRecord] = field(repr=False, default_factory=list)
    witness: Optional[Dict[str, Any]] = None
    violations: List[Dict[str, float]] = field(default_factory=list)
    violation_count: int = 0
    mode: str = "iss"

    @property
    def diverged_fraction(self) -> float:
        return self.diverged / self.trials if self.trials else 0.0

    @property
    def passed(self) -> bool:
        return self.verdict == CONSISTENT and self.violation_count == 0

    def peak_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["trial", "sequence", "r0", "peak", "diverged"])
        for rec in self.records:
            writer.writerow([rec.index, rec.sequence_index, repr(rec.r0), repr(rec.peak), int(rec.diverged)])
        return buffer.getvalue()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "verdict": self.verdict,
            "seed": self.seed,
            "trials": self.trials,
            "diverged": self.diverged,
            "diverged_fraction": self.diverged_fraction,
            "witness": self.witness,
            "pooled": self.pooled.to_dict() if self.pooled else None,
            "per_sequence": [e.to_dict() if e else None for e in self.per_sequence],
            "sequences": self.sequences,
            "violations": self.violations,
            "violation_count": self.violation_count,
        }


def _run_trials(
    sys: SystemDef,
    cls: DwellTimeClass,
    trials: Optional[int],
    seed: Optional[int],
    horizon: Optional[float],
    t0: float,
    opts: Optional[SimOptions],
) -> Tuple[List[TrialRecord], List[ImpulseSequence], int, Dict[str, Any]]:
    cfg = get_settings("falsify")
    trials = int(cfg["trials"] if trials is None else trials)
    if trials < MIN_TRIALS:
        raise FalsificationError(f"need at least {MIN_TRIALS} trials, got {trials}")
    horizon = float(cfg["horizon"] if horizon is None else horizon)
    seed = resolve_seed(seed)
    root = np.random.SeedSequence(seed)
    seq_ss, *trial_ss = root.spawn(trials + 1)
    sequences = admissible_sequences(cls, t0 + horizon, int(cfg["sequences"]), np.random.default_rng(seq_ss), t0)
    opts = opts or SimOptions.from_settings()
    limit = float(cfg["divergence_norm"])

    records: List[TrialRecord] = []
    for i, ss in enumerate(trial_ss):
        rng = np.random.default_rng(ss)
        mode = i % 4
        if mode == 1:
            x0 = np.zeros(sys.n)
        else:
            direction = rng.standard_normal(sys.n)
            direction /= max(np.linalg.norm(direction), 1e-300)
            x0 = direction * cfg["x0_radius"] * rng.uniform(0.05, 1.0)
        if mode == 0 or sys.m == 0:
            u = InputSignal.zero(sys.m, t0)
        else:
            amplitude = cfg["input_amplitude"] * (2.0 if mode == 3 else 1.0)
            u = InputSignal.random_piecewise(rng, sys.m, t0, t0 + horizon, int(cfg["input_pieces"]), amplitude)
        k = i % len(sequences)
        try:
            traj = simulate(sys, sequences[k], u, x0, t0, t0 + horizon, opts, seed)
            times, norms = traj.norms()
            diverged_at = traj.diverged_at
        except SimulationError as e:
            logger.warning("Trial %d: simulation failed (%s); counted as diverged", i, e)
            times, norms, diverged_at = np.array([t0]), np.array([np.inf]), t0
        if diverged_at is None and np.any(norms > limit):
            diverged_at = float(times[int(np.argmax(norms > limit))])
        rel = times - t0
        records.append(
            TrialRecord(
                index=i,
                sequence_index=k,
                r0=float(np.linalg.norm(x0)),
                times=rel,
                norms=norms,
                input_norms=_causal_input_norms(u, rel, t0),
                diverged=diverged_at is not None,
                x0=x0.tolist(),
                input=u.to_dict(),
                diverged_at=diverged_at,
                seed_key=tuple(ss.spawn_key),
            )
        )
    return records, sequences, seed, {"horizon": horizon, "limit": limit, "fraction": float(cfg["divergence_fraction"])}


def _witness(records: Sequence[TrialRecord], sequences: Sequence[ImpulseSequence], seed: int) -> Optional[Dict[str, Any]]:
    for rec in records:
        if rec.diverged:
            return {
                "trial": rec.index,
                "seed": seed,
                "spawn_key": list(rec.seed_key),
                "x0": rec.x0,
                "input": rec.input,
                "sequence": sequences[rec.sequence_index].to_dict(),
                "diverged_at": rec.diverged_at,
                "peak": rec.peak,
            }
    return None


def iss_sweep(
    sys: SystemDef,
    cls: DwellTimeClass,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    t0: float = 0.0,
    candidate: Optional[Tuple[Callable, Callable]] = None,
    opts: Optional[SimOptions] = None,
) -> SweepReport:
    """
    Monte Carlo ISS estimate over a dwell-time class.

    Trial i uses sequence i mod the sequence count; trials cycle through zero
    input, zero initial state and two mixed regimes. Per-trial seeds come from
    SeedSequence.spawn, so a report is reproducible from its seed alone.

    Args:
        sys: System to simulate
        cls: Dwell-time class the sequences are drawn from
        trials: Trial count (at least 100)
        seed: Root seed (default: ISS_SEED or the settings default)
        horizon: Length of each simulation
        t0: Initial time
        candidate: Optional (beta(r, t), gamma(w)) envelope to test against
        opts: Simulator options

    Returns:
        SweepReport with verdict "not-iss-empirical" when more than 1% of the
        trials diverge, plus pooled and per-sequence envelopes
    """
    records, sequences, seed, info = _run_trials(sys, cls, trials, seed, horizon, t0, opts)
    diverged = sum(rec.diverged for rec in records)
    fraction = diverged / len(records)
    verdict = NOT_ISS if fraction > info["fraction"] else CONSISTENT
    bounded = [rec for rec in records if not rec.diverged]

    pooled = fit_envelope(bounded, info["horizon"]) if bounded else None
    per_sequence: List[Optional[EnvelopeFit]] = []
    for k in range(len(sequences)):
        subset = [rec for rec in bounded if rec.sequence_index == k]
        per_sequence.append(fit_envelope(subset, info["horizon"]) if subset else None)
    if pooled is not None and not pooled.dominates(bounded):
        logger.error("Pooled envelope does not dominate its training data")

    violations: List[Dict[str, float]] = []
    count = 0
    if candidate is not None:
        beta, gamma = candidate
        for rec in bounded:
            bound = np.asarray(beta(rec.r0, rec.times), dtype=float) + np.asarray(gamma(rec.input_norms), dtype=float)
            bad = np.flatnonzero(rec.norms > bound * (1.0 + 1e-9))
            count += len(bad)
            for j in bad[: max(0, MAX_LISTED_VIOLATIONS - len(violations))]:
                violations.append({"trial": rec.index, "t": float(rec.times[j]), "norm": float(rec.norms[j]), "bound": float(bound[j])})

    logger.info(
        "ISS sweep: %d trials, %d diverged (%.2f%%), seed %d, verdict %s",
        len(records), diverged, 100 * fraction, seed, verdict,
    )
    return SweepReport(
        verdict,
        len(records),
        diverged,
        seed,
        pooled,
        per_sequence,
        [s.to_dict() for s in sequences],
        records,
        _witness(records, sequences, seed) if diverged else None,
        violations,
        count,
    )


@dataclass
class GSFit:
    """Time-independent bound ||x(t)|| <= xi(||x0||) + gamma(||u||)."""

    xi: StepEnvelope
    gamma: StepEnvelope

    def to_dict(self) -> Dict[str, Any]:
        return {"xi": self.xi.to_dict(), "gamma": self.gamma.to_dict()}


def gs_check(
    sys: SystemDef,
    cls: DwellTimeClass,
    trials: Optional[int] = None,
    seed: Optional[int] = None,
    horizon: Optional[float] = None,
    t0: float = 0.0,
    opts: Optional[SimOptions] = None,
) -> Tuple[bool, Optional[GSFit], SweepReport]:
    """GS estimate: as iss_sweep, fitting xi on zero-input trials and gamma on the rest."""
    records, sequences, seed, info = _run_trials(sys, cls, trials, seed, horizon, t0, opts)
    diverged = sum(rec.diverged for rec in records)
    holds = diverged / len(records) <= info["fraction"]
    bounded = [rec for rec in records if not rec.diverged]

    free = [rec for rec in bounded if rec.input_norms[-1] == 0]
    xi = StepEnvelope.fit(np.array([rec.r0 for rec in free]), np.array([rec.peak for rec in free]))
    w_all = [rec.input_norms for rec in bounded]
    e_all = [np.maximum(rec.norms - xi(rec.r0), 0.0) for rec in bounded]
    gamma = StepEnvelope.fit(np.concatenate(w_all), np.concatenate(e_all)) if bounded else StepEnvelope(np.zeros(0), np.zeros(0))
    fit = GSFit(xi, gamma)

    report = SweepReport(
        CONSISTENT if holds else NOT_ISS,
        len(records),
        diverged,
        seed,
        None,
        [],
        [s.to_dict() for s in sequences],
        records,
        _witness(records, sequences, seed) if diverged else None,
        mode="gs",
    )
    logger.info("GS check: %d trials, %d diverged, holds=%s", len(records), diverged, holds)
    return holds, fit, report


# Tightness of the gADT condition


@dataclass
class GapRun:
    gap: float
    factor: float
    regime: str
    peaks: List[float]
    exceeded_at: Optional[float]
    diverged: bool

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class TightnessReport:
    c: float
    d: float
    critical_gap: float
    runs: List[GapRun]
    admissible: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "c": self.c,
            "d": self.d,
            "critical_gap": self.critical_gap,
            "runs": [r.to_dict() for r in self.runs],
            "admissible": self.admissible,
        }


def _peak_regime(peaks: np.ndarray, tol: float = 1e-6) -> str:
    if len(peaks) < 2:
        return "undetermined"
    if np.max(np.abs(peaks - peaks[0])) <= tol * peaks[0]:
        return "constant"
    if np.all(np.diff(peaks) < 0):
        return "decreasing"
    if np.all(np.diff(peaks) > 0):
        return "growing"
    return "mixed"


def gadt_tightness_demo(
    c: float, d: float, horizon: float = 60.0, gaps: Optional[Sequence[float]] = None, threshold: float = 1e3
) -> TightnessReport:
    """
    x' = -c x, x = exp(-d) x^- along periodic impulses.

    The per-period factor is exp(-d - c gap): gaps above -d/c decay, gaps
    below it grow without bound, the critical gap keeps the peaks constant.
    Default gaps are 1.2, 0.8 and 1.0 times the critical gap.
    """
    if not (d < 0 < c):
        raise FalsificationError(f"tightness demo needs d < 0 < c, got c={c}, d={d}")
    critical = -d / c
    gaps = [1.2 * critical, 0.8 * critical, critical] if gaps is None else list(gaps)
    sys = SystemDef.from_sources("tightness", ["-c*x"], ["exp(-d)*x"], states=["x"], inputs=[], params={"c": c, "d": d})

    runs: List[GapRun] = []
    admissible: Dict[str, Any] = {}
    for gap in gaps:
        seq = periodic(gap, horizon)
        traj = simulate(sys, seq, x0=[1.0])
        peaks = np.array([abs(float(j.post_state[0])) for j in traj.jumps])
        times, norms = traj.norms()
        over = np.flatnonzero(norms > threshold)
        exceeded_at = float(times[over[0]]) if len(over) else (traj.diverged_at if traj.diverged else None)
        factor = math.exp(-d - c * gap)
        runs.append(GapRun(float(gap), factor, _peak_regime(peaks), peaks[:10].tolist(), exceeded_at, traj.diverged))

        if gap > critical and not admissible:
            lam = c + d / gap
            cls = ADT(mu=-d, lam=lam, c=c, d=d)
            verdict = member(seq, cls)
            bound = np.exp(-d - lam * times)
            admissible = {
                "gap": float(gap),
                "mu": -d,
                "lambda": lam,
                "member": verdict.member,
                "worst_margin": verdict.worst_margin,
                "under_envelope": bool(np.all(norms <= bound * (1.0 + 1e-6))),
            }
    logger.info("gADT tightness: critical gap %.6g, regimes %s", critical, [r.regime for r in runs])
    return TightnessReport(float(c), float(d), critical, runs, admissible)
