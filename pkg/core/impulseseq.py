#!/usr/bin/env python3
"""
Impulse Sequences

Finite impulse-time sequences, the jump counters N(t, s) and N*(t, s),
dwell-time class membership (fixed dwell time, ADT and generalized ADT),
sequence generators, and the relations between the dwell-time conditions.

All membership verdicts hold on the working horizon [t0, horizon] only.
The tail beyond the horizon is never certified.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from core.cmpfun import ScalarFn, as_scalar_fn, majorize_by_L
from core.errors import ClassValidationError, SequenceError
from core.settings import get_settings

logger = logging.getLogger(__name__)

DEFAULT_MEMBER_TOL = 1e-9
MAX_GENERATED_JUMPS = 200000


@dataclass(frozen=True)
class ImpulseSequence:
    """
    Strictly increasing impulse times t_1 < t_2 < ... on (t0, horizon].

    Args:
        t0: Initial time
        times: Impulse times, all > t0 and at least 1e-12 apart
        horizon: End of the working horizon, >= the last time
    """

    t0: float
    times: Tuple[float, ...]
    horizon: float
    origin: str = field(default="", compare=False)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "horizon", float(self.horizon))

        arr = np.asarray(times)
        min_sep = get_settings("dwell_time")["min_separation"]
        if not np.all(np.isfinite(arr)) or not np.isfinite(self.t0) or not np.isfinite(self.horizon):
            raise SequenceError("impulse times, t0 and horizon must be finite")
        if len(times) and times[0] <= self.t0:
            raise SequenceError(f"first impulse time {times[0]:g} must be > t0 = {self.t0:g}")
        if len(times) > 1 and np.any(np.diff(arr) < min_sep):
            idx = int(np.flatnonzero(np.diff(arr) < min_sep)[0])
            raise SequenceError(f"impulse times must increase by at least {min_sep:g} (index {idx})")
        last = times[-1] if times else self.t0
        if self.horizon < last:
            raise SequenceError(f"horizon {self.horizon:g} is before the last impulse time {last:g}")

    @classmethod
    def empty(cls, t0: float = 0.0, horizon: float = 1.0) -> "ImpulseSequence":
        return cls(t0, (), horizon, origin="empty")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    def __len__(self) -> int:
        return len(self.times)

    def gaps(self) -> np.ndarray:
        """Gaps between consecutive impulse times."""
        return np.diff(self.array)

    def shifted(self, s: float) -> "ImpulseSequence":
        return ImpulseSequence(self.t0 + s, tuple(t + s for t in self.times), self.horizon + s, self.origin)

    def restricted(self, tf: float) -> "ImpulseSequence":
        """The sequence truncated to the horizon tf."""
        return ImpulseSequence(self.t0, tuple(t for t in self.times if t <= tf), tf, self.origin)

    def to_dict(self) -> Dict[str, Any]:
        return {"t0": self.t0, "times": list(self.times), "horizon": self.horizon}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ImpulseSequence":
        try:
            times = data["times"]
            t0 = data.get("t0", 0.0)
            horizon = data.get("horizon", times[-1] if times else t0)
        except (KeyError, TypeError) as e:
            raise SequenceError(f"sequence needs a 'times' array: {e}") from e
        return cls(t0, tuple(times), horizon, origin="explicit")


# Dwell-time classes


@dataclass(frozen=True)
class FDTMinGap:
    """S_theta: every gap between consecutive impulses is at least theta."""

    theta: float
    kind = "fdt_min_gap"

    def __post_init__(self):
        if not self.theta > 0:
            raise SequenceError(f"theta must be positive, got {self.theta}")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "theta": self.theta}


@dataclass(frozen=True)
class FDTMaxGap:
    """Every gap between consecutive impulses is at most theta."""

    theta: float
    kind = "fdt_max_gap"

    def __post_init__(self):
        if not self.theta > 0:
            raise SequenceError(f"theta must be positive, got {self.theta}")

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "theta": self.theta}


@dataclass(frozen=True)
class ADT:
    """Average dwell time: -d N(t, s) - (c - lam)(t - s) <= mu for all t0 <= s <= t."""

    mu: float
    lam: float
    c: float
    d: float
    kind = "adt"

    def __post_init__(self):
        if not self.mu > 0 or not self.lam > 0:
            raise SequenceError(f"ADT needs mu > 0 and lam > 0, got mu={self.mu}, lam={self.lam}")

    def as_gadt(self) -> "GADT":
        """The same condition written with h(x) = exp(mu - lam x)."""
        h = as_scalar_fn("exp(mu - lam*x)", params={"mu": self.mu, "lam": self.lam}, var="x")
        return GADT(h, self.c, self.d)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "mu": self.mu, "lam": self.lam, "c": self.c, "d": self.d}


@dataclass(frozen=True)
class GADT:
    """Generalized ADT: -d N(t, s) - c(t - s) <= ln h(t - s); h must admit an L-majorant."""

    h: ScalarFn
    c: float
    d: float
    kind = "gadt"

    def __post_init__(self):
        if majorize_by_L(self.h) is None:
            raise ClassValidationError(f"h '{self.h.label}' admits no L-majorant on the grid")

    def log_h(self, lengths: np.ndarray) -> np.ndarray:
        values = np.asarray(self.h(lengths), dtype=float)
        return np.log(np.maximum(values, np.finfo(float).tiny))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "h": self.h.to_dict(), "c": self.c, "d": self.d}


DwellTimeClass = Union[FDTMinGap, FDTMaxGap, ADT, GADT]


def dwell_class_from_dict(data: Dict[str, Any], params: Optional[Dict[str, float]] = None) -> DwellTimeClass:
    """Build a dwell-time class from its JSON form ({"kind": ..., parameters})."""
    kind = str(data.get("kind", "")).lower()
    try:
        if kind == "fdt_min_gap":
            return FDTMinGap(float(data["theta"]))
        if kind == "fdt_max_gap":
            return FDTMaxGap(float(data["theta"]))
        if kind == "adt":
            return ADT(float(data["mu"]), float(data["lam"]), float(data["c"]), float(data["d"]))
        if kind == "gadt":
            h = as_scalar_fn(data["h"], params=params, var="x")
            return GADT(h, float(data["c"]), float(data["d"]))
    except KeyError as e:
        raise SequenceError(f"dwell-time class '{kind}' is missing parameter {e}") from e
    raise SequenceError(f"unknown dwell-time class kind '{data.get('kind')}'")


# Counters


def count_jumps(seq: ImpulseSequence, s: float, t: float, closed: bool = False) -> int:
    """
    Count impulse times in (s, t], or in [s, t] when closed is True.

    Raises:
        SequenceError: the query is not within t0 <= s <= t <= horizon
    """
    if not seq.t0 <= s <= t <= seq.horizon:
        raise SequenceError(f"query ({s:g}, {t:g}) outside [{seq.t0:g}, {seq.horizon:g}] or reversed")
    arr = seq.array
    upper = int(np.searchsorted(arr, t, side="right"))
    lower = int(np.searchsorted(arr, s, side="left" if closed else "right"))
    return upper - lower


def _count_many(arr: np.ndarray, s: np.ndarray, t: np.ndarray, closed: bool) -> np.ndarray:
    return np.searchsorted(arr, t, side="right") - np.searchsorted(arr, s, side="left" if closed else "right")


# Membership


@dataclass
class MembershipResult:
    """Verdict of a membership check. worst_margin > tol means a violation at witness."""

    member: bool
    worst_margin: float
    witness: Optional[Tuple[float, float]]
    horizon: Tuple[float, float]
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "member": self.member,
            "worst_margin": self.worst_margin,
            "witness": list(self.witness) if self.witness else None,
            "certified_on": list(self.horizon),
            "note": self.note,
        }


def _pair_margin(cls: DwellTimeClass, n: np.ndarray, length: np.ndarray) -> np.ndarray:
    """Left side minus right side of the defining inequality."""
    if isinstance(cls, ADT):
        return -cls.d * n - (cls.c - cls.lam) * length - cls.mu
    return -cls.d * n - cls.c * length - cls.log_h(length)


def _cell_worst(cls: DwellTimeClass, k: int, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Maximize the margin over L in [lo, hi] for each cell with k counted jumps.

    ADT margins are affine in L so both ends suffice; gADT cells are sampled.
    Returns (max margin, maximizing L) per cell.
    """
    if isinstance(cls, ADT):
        lengths = np.stack([lo, hi], axis=1)
    else:
        samples = int(get_settings("dwell_time")["gadt_cell_samples"])
        w = np.linspace(0.0, 1.0, samples)
        lengths = lo[:, None] + (hi - lo)[:, None] * w[None, :]
    margins = _pair_margin(cls, np.full(lengths.shape, k, dtype=float), lengths)
    best = np.argmax(margins, axis=1)
    rows = np.arange(len(lo))
    return margins[rows, best], lengths[rows, best]


def _witness_pair(ext: np.ndarray, p: int, q: int, length: float, eps: float) -> Tuple[float, float]:
    """
    A pair (s, t) with t - s close to length counting jumps p..q (0-based in times).

    ext is [t0, t_1, ..., t_M, horizon]; times[i] == ext[i + 1].
    """
    if q < p:
        # no jumps: pick the gap that can hold the length
        gaps = np.diff(ext)
        i = int(np.argmax(gaps >= length - 1e-15)) if np.any(gaps >= length - 1e-15) else int(np.argmax(gaps))
        s = float(ext[i])
        return s, float(min(s + length, ext[i + 1]))
    first, last = ext[p + 1], ext[q + 1]
    prev_end, next_start = ext[p], ext[q + 2]
    s = max(prev_end, last - length)
    s = min(s, first - eps) if first - eps > prev_end else prev_end
    t = s + length
    t = max(t, last)
    if q + 2 < len(ext) - 1:
        t = min(t, next_start - eps)
    else:
        t = min(t, next_start)
    return float(s), float(t)


def _adt_like_member(seq: ImpulseSequence, cls: Union[ADT, GADT], tol: float) -> MembershipResult:
    eps = get_settings("dwell_time")["epsilon"]
    times = seq.array
    ext = np.concatenate([[seq.t0], times, [seq.horizon]])
    m = len(times)

    # k = 0: s, t inside one gap (the ends count as gaps)
    max_gap = float(np.max(np.diff(ext))) if len(ext) > 1 else 0.0
    worst, length = _cell_worst(cls, 0, np.array([0.0]), np.array([max_gap]))
    best = (float(worst[0]), 0, -1, float(length[0]))

    for k in range(1, m + 1):
        p = np.arange(0, m - k + 1)
        q = p + k - 1
        lo = times[q] - times[p]
        hi = ext[q + 2] - ext[p]
        margins, lengths = _cell_worst(cls, k, lo, hi)
        i = int(np.argmax(margins))
        if margins[i] > best[0]:
            best = (float(margins[i]), int(p[i]), int(q[i]), float(lengths[i]))

    worst_margin, p_best, q_best, length_best = best
    witness = _witness_pair(ext, p_best, q_best, length_best, eps)
    return MembershipResult(
        worst_margin <= tol,
        worst_margin,
        witness,
        (seq.t0, seq.horizon),
        f"{cls.kind} verified on [{seq.t0:g}, {seq.horizon:g}] only",
    )


def member(seq: ImpulseSequence, cls: DwellTimeClass, tol: float = DEFAULT_MEMBER_TOL) -> MembershipResult:
    """
    Check whether a finite sequence belongs to a dwell-time class on its horizon.

    ADT and gADT are checked exactly per cell: for jumps p..q counted by
    N(t, s) the length t - s ranges over [t_q - t_p, t_{q+1} - t_{p-1}],
    with t0 and the horizon as outer ends.

    Args:
        seq: Impulse sequence
        cls: Dwell-time class
        tol: Allowed margin (gap deficit for the FDT classes)

    Returns:
        MembershipResult with the maximizing (s, t) as witness
    """
    if isinstance(cls, FDTMinGap):
        gaps = seq.gaps()
        if len(gaps) == 0:
            return MembershipResult(True, -float("inf"), None, (seq.t0, seq.horizon), "fewer than two impulses")
        i = int(np.argmin(gaps))
        worst = cls.theta - float(gaps[i])
        return MembershipResult(worst <= tol, worst, (seq.times[i], seq.times[i + 1]), (seq.t0, seq.horizon))

    if isinstance(cls, FDTMaxGap):
        gaps = seq.gaps()
        if len(gaps) == 0:
            return MembershipResult(True, -float("inf"), None, (seq.t0, seq.horizon), "fewer than two impulses")
        i = int(np.argmax(gaps))
        worst = float(gaps[i]) - cls.theta
        return MembershipResult(worst <= tol, worst, (seq.times[i], seq.times[i + 1]), (seq.t0, seq.horizon))

    return _adt_like_member(seq, cls, tol)


def margin(seq: ImpulseSequence, cls: DwellTimeClass, s: float, t: float) -> float:
    """Margin of the ADT/gADT inequality at one pair, using the real counter N(t, s)."""
    if not isinstance(cls, (ADT, GADT)):
        raise SequenceError(f"pair margins are defined for ADT and gADT, not {cls.kind}")
    n = count_jumps(seq, s, t)
    return float(_pair_margin(cls, np.array([float(n)]), np.array([t - s]))[0])


# Relations between the conditions


def theta_star(c: float, d: float, lam: float) -> float:
    """Smallest fixed dwell time equivalent to ADT(mu=-d, lam): -d / (c - lam)."""
    if not d < 0:
        raise SequenceError(f"theta* needs d < 0, got d={d}")
    if not 0 < lam < c:
        raise SequenceError(f"theta* needs 0 < lam < c, got lam={lam}, c={c}")
    return -d / (c - lam)


def impulse_frequency(c: float, d: float) -> float:
    """Admissible long-run impulse frequency c / (-d) for exponential rates."""
    if not d < 0:
        raise SequenceError(f"impulse frequency needs d < 0, got d={d}")
    return c / -d


def adt_inclusion(c1: float, d1: float, c2: float, d2: float, mu2: float, lam2: float) -> Tuple[float, float]:
    """
    ADT parameters (mu1, lam1) for rates (c1, d1) containing the class ADT(mu2, lam2) for (c2, d2).

    Requires d1, d2 < 0 and c1 / (-d1) > c2 / (-d2).
    """
    if not (d1 < 0 and d2 < 0):
        raise SequenceError("ADT inclusion needs d1 < 0 and d2 < 0")
    f1, f2 = impulse_frequency(c1, d1), impulse_frequency(c2, d2)
    if not f1 > f2:
        raise SequenceError(f"ADT inclusion needs c1/(-d1) > c2/(-d2), got {f1:g} <= {f2:g}")
    mu1 = mu2 * (-d1) / (-d2)
    lam1 = (lam2 / (-d2) + (f1 - f2)) * (-d1)
    return mu1, lam1


def equivalence_check_NstarN(
    seq: ImpulseSequence, mu: float, lam: float, c: float, d: float, tol: float = 1e-6
) -> bool:
    """
    Whether ADT(mu, lam) membership computed with N and with N* agree on seq.

    Both verdicts enumerate pairs near the impulse times directly with the
    counters, so the comparison is independent of the cell-based check.
    """
    if d == 0:
        raise SequenceError("the N / N* comparison needs d != 0")
    eps = get_settings("dwell_time")["epsilon"]
    times = seq.array
    h = seq.horizon

    def verdict(s_cand: np.ndarray, t_cand: np.ndarray, closed: bool) -> bool:
        s_cand = s_cand[(s_cand >= seq.t0) & (s_cand <= h)]
        t_cand = t_cand[(t_cand >= seq.t0) & (t_cand <= h)]
        s_grid, t_grid = np.meshgrid(s_cand, t_cand, indexing="ij")
        keep = t_grid >= s_grid
        s_flat, t_flat = s_grid[keep], t_grid[keep]
        n = _count_many(times, s_flat, t_flat, closed)
        worst = np.max(-d * n - (c - lam) * (t_flat - s_flat) - mu)
        return bool(worst <= tol)

    base_s = np.concatenate([[seq.t0], times])
    t_cand = np.concatenate([times, times - eps, [h]])
    with_n = verdict(np.concatenate([base_s, times - eps]), t_cand, closed=False)
    with_nstar = verdict(np.concatenate([base_s, times + eps]), t_cand, closed=True)
    if with_n != with_nstar:
        logger.warning("N and N* verdicts differ for a sequence with %d impulses", len(times))
    return with_n == with_nstar


# Generators


def periodic(delta: float, horizon: float, t0: float = 0.0) -> ImpulseSequence:
    """Impulses at t0 + k * delta for k >= 1 up to the horizon."""
    if not delta > 0:
        raise SequenceError(f"period must be positive, got {delta}")
    if horizon < t0:
        raise SequenceError("horizon must be >= t0")
    slack = 1e-12 * max(1.0, abs(horizon))
    count = int(np.floor((horizon - t0 + slack) / delta))
    times = t0 + delta * np.arange(1, count + 1)
    times = times[times <= horizon + slack]
    end = max(horizon, float(times[-1])) if len(times) else horizon
    return ImpulseSequence(t0, tuple(times), end, origin=f"periodic:{delta:g}")


def uniform_random(
    min_gap: float,
    horizon: float,
    seed: int,
    t0: float = 0.0,
    max_gap: Optional[float] = None,
) -> ImpulseSequence:
    """Gaps drawn uniformly from [min_gap, max_gap] (default 2 * min_gap)."""
    if not min_gap > 0:
        raise SequenceError(f"min_gap must be positive, got {min_gap}")
    max_gap = 2.0 * min_gap if max_gap is None else float(max_gap)
    if max_gap < min_gap:
        raise SequenceError("max_gap must be >= min_gap")
    rng = np.random.default_rng(seed)
    times: List[float] = []
    t = t0
    while True:
        t = t + rng.uniform(min_gap, max_gap)
        if t > horizon:
            break
        times.append(t)
    return ImpulseSequence(t0, tuple(times), horizon, origin=f"uniform:{min_gap:g}-{max_gap:g}")


class _GreedyPlacer:
    """Incremental feasibility test for appending one impulse to an admissible prefix."""

    def __init__(self, cls: Union[ADT, GADT], t0: float):
        self.cls = cls
        self.t0 = t0
        self.times: List[float] = []

    def _worst(self, tau: float, closing: bool) -> float:
        times = np.asarray(self.times)
        m = len(times)
        ext = np.concatenate([[self.t0], times])
        worst = -np.inf
        if m:
            # cells whose last counted jump is the current last one, t up to tau
            p = np.arange(m)
            lo = times[m - 1] - times[p]
            hi = tau - ext[p]
            for k in np.unique(m - p):
                sel = (m - p) == k
                worst = max(worst, float(np.max(_cell_worst(self.cls, int(k), lo[sel], hi[sel])[0])))
        gap_start = times[-1] if m else self.t0
        worst = max(worst, float(_cell_worst(self.cls, 0, np.array([0.0]), np.array([tau - gap_start]))[0][0]))
        if not closing:
            # cells counting the new jump tau as the last one, t = tau
            ext_new = np.concatenate([[self.t0], times])
            all_times = np.concatenate([times, [tau]])
            p = np.arange(m + 1)
            lo = tau - all_times[p]
            hi = tau - ext_new[p]
            for k in np.unique(m + 1 - p):
                sel = (m + 1 - p) == k
                worst = max(worst, float(np.max(_cell_worst(self.cls, int(k), lo[sel], hi[sel])[0])))
        return worst

    def feasible(self, tau: float, closing: bool = False) -> bool:
        return self._worst(tau, closing) <= 0.0


def densest_admissible(
    cls: DwellTimeClass,
    horizon: float,
    t0: float = 0.0,
    slack: float = 0.0,
) -> ImpulseSequence:
    """
    Greedy densest sequence in a class: each next impulse goes at the earliest
    time that keeps the class inequality satisfied (bisection per impulse).

    Args:
        cls: Dwell-time class (FDT_min_gap, ADT or gADT with d < 0)
        horizon: End of the horizon
        t0: Initial time
        slack: Relative extension of every placed gap

    Raises:
        SequenceError: the class has no densest sequence (FDT_max_gap, d >= 0)
    """
    if isinstance(cls, FDTMinGap):
        return periodic(cls.theta * (1.0 + slack), horizon, t0)
    if isinstance(cls, FDTMaxGap):
        raise SequenceError("FDT_max_gap admits arbitrarily dense sequences; no densest one exists")
    if not cls.d < 0:
        raise SequenceError(f"densest-admissible needs d < 0 (jumps destabilizing), got d={cls.d}")

    resolution = get_settings("dwell_time")["search_resolution"]
    placer = _GreedyPlacer(cls, t0)
    last = t0
    while True:
        lo = last + resolution
        if lo > horizon:
            break
        if placer.feasible(lo):
            tau = lo
        else:
            if not placer.feasible(horizon):
                break
            bad, good = lo, horizon
            while good - bad > resolution:
                mid = 0.5 * (bad + good)
                if placer.feasible(mid):
                    good = mid
                else:
                    bad = mid
            tau = good
        if slack:
            tau = min(last + (tau - last) * (1.0 + slack), horizon)
        placer.times.append(tau)
        last = tau
        if len(placer.times) > MAX_GENERATED_JUMPS:
            raise SequenceError(f"more than {MAX_GENERATED_JUMPS} impulses before the horizon")

    if not placer.feasible(horizon, closing=True):
        logger.warning("Greedy sequence for %s violates the class on its final gap", cls.kind)
    logger.debug("densest_admissible placed %d impulses on [%g, %g]", len(placer.times), t0, horizon)
    return ImpulseSequence(t0, tuple(placer.times), horizon, origin=f"densest:{cls.kind}")


def generate(kind: str, horizon: float, seed: Optional[int] = None, t0: float = 0.0, **params) -> ImpulseSequence:
    """
    Dispatch to a generator by name.

    kind "periodic" takes delta; "uniform" takes min_gap (and max_gap);
    "densest" takes cls (and slack).
    """
    if kind == "periodic":
        return periodic(float(params["delta"]), horizon, t0)
    if kind in ("uniform", "uniform_random"):
        if seed is None:
            raise SequenceError("the uniform-random generator needs a seed")
        return uniform_random(float(params["min_gap"]), horizon, seed, t0, params.get("max_gap"))
    if kind in ("densest", "densest_admissible"):
        return densest_admissible(params["cls"], horizon, t0, float(params.get("slack", 0.0)))
    raise SequenceError(f"unknown generator '{kind}'")


def parse_sequence_spec(text: str, horizon: float, seed: Optional[int] = None, t0: float = 0.0) -> ImpulseSequence:
    """Parse the command-line form 'periodic:DELTA', 'uniform:GAP[:MAX]' or 't1,t2,...'."""
    kind, _, rest = text.partition(":")
    try:
        if kind == "periodic":
            return periodic(float(rest), horizon, t0)
        if kind == "uniform":
            parts = rest.split(":")
            return uniform_random(float(parts[0]), horizon, seed or 0, t0, float(parts[1]) if len(parts) > 1 else None)
        times = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise SequenceError(f"cannot parse sequence '{text}': {e}") from e
    return ImpulseSequence(t0, times, max(horizon, times[-1] if times else t0), origin="explicit")
