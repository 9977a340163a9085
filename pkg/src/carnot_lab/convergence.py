"""Limit detection along an epsilon schedule, plus the shared sampling helpers.

Every limit in the library is judged by :func:`classify`, so all modules
share one tolerance policy.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .geometry import Weights, dilate


class Verdict(str, enum.Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class TolerancePolicy:
    """Thresholds for deciding convergence of a sampled sequence v_n.

    Converged: the last ``cauchy_window`` increments are all below
    ``cauchy_tol * max(1, |v|)``.
    Diverged: over the last ``oscillation_window`` values either the
    peak-to-peak amplitude exceeds ``oscillation_amp * max(1, |v|)`` with at
    least one reversal of direction, or the values move monotonically by more
    than that amount with increments that do not decay.
    Anything else is Inconclusive.
    """

    cauchy_tol: float = 1e-6
    cauchy_window: int = 4
    oscillation_amp: float = 1e-2
    oscillation_window: int = 8
    growth_decay_ratio: float = 0.5


DEFAULT_POLICY = TolerancePolicy()


@dataclass(frozen=True)
class Schedule:
    """Geometric schedule eps_n = eps0 * ratio**n, n = 0..count-1."""

    eps0: float = 1.0
    ratio: float = 0.5
    count: int = 31

    def __post_init__(self):
        if not (self.eps0 > 0 and 0 < self.ratio < 1 and self.count >= 2):
            raise ValueError(f"invalid schedule {self}")

    @property
    def values(self) -> np.ndarray:
        return self.eps0 * self.ratio ** np.arange(self.count)

    def to_json(self) -> dict:
        return {"eps0": self.eps0, "ratio": self.ratio, "count": self.count}


DEFAULT_SCHEDULE = Schedule()


def as_schedule(schedule) -> np.ndarray:
    if schedule is None:
        return DEFAULT_SCHEDULE.values
    if isinstance(schedule, Schedule):
        return schedule.values
    eps = np.asarray(schedule, dtype=float)
    if eps.ndim != 1 or eps.size < 2 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ValueError("schedule must be a strictly decreasing sequence of positive numbers")
    return eps


@dataclass
class ConvergenceReport:
    """Outcome of a batch of limit computations.

    ``values`` has shape (samples, len(schedule), components).  ``limit`` holds
    the last finite value of every sequence (meaningful where the sample
    converged).  ``oscillation`` is the peak-to-peak tail amplitude per sample
    (max over components); ``rate`` is the fitted order p in |v_n - v_{n+1}| ~
    eps_n^p over converged, non-stationary sequences.
    """

    schedule: np.ndarray
    values: np.ndarray
    sample_verdicts: list
    verdict: Verdict
    limit: np.ndarray
    oscillation: np.ndarray
    cauchy: np.ndarray
    rate: float | None
    worst_sample: int
    failures: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.verdict is Verdict.CONVERGED

    @property
    def diverged(self) -> bool:
        return self.verdict is Verdict.DIVERGED

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "samples": len(self.sample_verdicts),
            "sample_verdicts": [v.value for v in self.sample_verdicts],
            "rate": self.rate,
            "worst_sample": int(self.worst_sample),
            "max_oscillation": float(np.max(self.oscillation)) if self.oscillation.size else 0.0,
            "max_cauchy": float(np.max(self.cauchy)) if self.cauchy.size else 0.0,
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
        }


def _sign_flips(d: np.ndarray) -> np.ndarray:
    s = np.sign(d)
    flips = np.zeros(d.shape[:-1], dtype=int)
    last = s[..., 0]
    for j in range(1, s.shape[-1]):
        cur = s[..., j]
        flips += (cur != 0) & (last != 0) & (cur != last)
        last = np.where(cur != 0, cur, last)
    return flips


def classify(values, schedule, policy: TolerancePolicy = DEFAULT_POLICY,
             failures: dict | None = None) -> ConvergenceReport:
    """Classify sequences ``values[s, n, c]`` (or ``[s, n]``) along ``schedule``."""
    eps = np.asarray(schedule, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = v[:, :, None]
    S, n, C = v.shape
    if n != eps.size:
        raise ValueError("values and schedule lengths differ")
    cw, ow = policy.cauchy_window, policy.oscillation_window
    if n < max(cw, ow) + 1:
        raise ValueError(f"schedule too short: need at least {max(cw, ow) + 1} points")
    failures = dict(failures or {})

    with np.errstate(all="ignore"):
        d = np.diff(v, axis=1)
        tail_v = v[:, -(cw + 1):, :]
        scale = np.maximum(1.0, np.max(np.abs(tail_v), axis=1))
        cauchy = np.max(np.abs(d[:, -cw:, :]), axis=1) / scale
        comp_conv = cauchy < policy.cauchy_tol

        win = v[:, -ow:, :]
        wd = np.diff(win, axis=1)
        wscale = np.maximum(1.0, np.median(np.abs(win), axis=1))
        amp = np.ptp(win, axis=1)
        flips = _sign_flips(np.moveaxis(wd, 1, -1))
        oscillating = (amp > policy.oscillation_amp * wscale) & (flips >= 1)
        half = wd.shape[1] // 2
        early = np.mean(np.abs(wd[:, :half, :]), axis=1)
        late = np.mean(np.abs(wd[:, half:, :]), axis=1)
        growing = ((flips == 0) & (amp > policy.oscillation_amp * wscale)
                   & (late >= policy.growth_decay_ratio * early))
        comp_div = oscillating | growing

    nan_any = np.any(np.isnan(v), axis=(1, 2))
    inf_any = np.any(np.isinf(v), axis=(1, 2))
    sample_verdicts = []
    for s in range(S):
        if inf_any[s]:
            sample_verdicts.append(Verdict.DIVERGED)
            failures.setdefault(s, "sequence overflowed")
        elif nan_any[s]:
            sample_verdicts.append(Verdict.INCONCLUSIVE)
            failures.setdefault(s, "evaluation failed at some eps")
        elif np.all(comp_conv[s]):
            sample_verdicts.append(Verdict.CONVERGED)
        elif np.any(comp_div[s]):
            sample_verdicts.append(Verdict.DIVERGED)
        else:
            sample_verdicts.append(Verdict.INCONCLUSIVE)

    if sample_verdicts and all(sv is Verdict.CONVERGED for sv in sample_verdicts):
        verdict = Verdict.CONVERGED
    elif any(sv is Verdict.DIVERGED for sv in sample_verdicts):
        verdict = Verdict.DIVERGED
    else:
        verdict = Verdict.INCONCLUSIVE

    limit = np.full((S, C), np.nan)
    for s in range(S):
        for c in range(C):
            finite = v[s, np.isfinite(v[s, :, c]), c]
            if finite.size:
                limit[s, c] = finite[-1]

    osc = np.nan_to_num(np.max(amp, axis=1), nan=np.inf) if S else np.zeros(0)
    cau = np.nan_to_num(np.max(cauchy, axis=1), nan=np.inf) if S else np.zeros(0)
    worst = int(np.argmax(cau)) if S else -1
    return ConvergenceReport(eps, v, sample_verdicts, verdict, limit, osc, cau,
                             _estimate_rate(v, eps, comp_conv), worst, failures)


def _estimate_rate(v, eps, comp_conv) -> float | None:
    """Median log-log slope of increments over converged sequences."""
    slopes = []
    logs = np.log(eps[1:])
    with np.errstate(all="ignore"):
        d = np.abs(np.diff(v, axis=1))
    for s, c in zip(*np.nonzero(comp_conv)):
        seq = d[s, :, c]
        ok = np.isfinite(seq) & (seq > 1e-14 * max(1.0, np.nanmax(np.abs(v[s, :, c]))))
        if ok.sum() >= 4:
            slopes.append(np.polyfit(logs[ok], np.log(seq[ok]), 1)[0])
    return float(np.median(slopes)) if slopes else None


# -- sampling -----------------------------------------------------------------

def make_rng(seed: int = 42) -> np.random.Generator:
    return np.random.default_rng(seed)


def halton(n: int, d: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """n scrambled Halton points in [-1, 1]^d."""
    rng = make_rng() if rng is None else rng
    return 2.0 * qmc.Halton(d=d, scramble=True, seed=rng).random(n) - 1.0


def box_samples(n: int, sigma, radius: float = 0.5, rng=None) -> np.ndarray:
    """Low-discrepancy points in Box(radius)."""
    w = Weights.coerce(sigma)
    return dilate(halton(n, w.dim, rng), radius, w)


def axis_points(sigma, radii: Sequence[float] = (0.5, 1.0)) -> np.ndarray:
    """Points +-r^sigma_k e_k on every coordinate axis for each radius r."""
    w = Weights.coerce(sigma)
    pts = []
    for r in radii:
        for k in range(w.dim):
            for sign in (1.0, -1.0):
                p = np.zeros(w.dim)
                p[k] = sign * r ** w.values[k]
                pts.append(p)
    return np.array(pts)


def default_grid(sigma, n: int = 32, radius: float = 0.5,
                 axis_radii: Sequence[float] = (0.5, 1.0), rng=None) -> np.ndarray:
    """32 low-discrepancy points in Box(1/2) followed by coordinate-axis points."""
    return np.vstack([box_samples(n, sigma, radius, rng), axis_points(sigma, axis_radii)])


def default_pairs(sigma, n: int = 64, radius: float = 0.5, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """n low-discrepancy pairs (x, y), both in Box(radius)."""
    w = Weights.coerce(sigma)
    pts = halton(n, 2 * w.dim, rng)
    return dilate(pts[:, :w.dim], radius, w), dilate(pts[:, w.dim:], radius, w)


def sphere_samples(n: int, sigma, rng=None) -> np.ndarray:
    """n low-discrepancy directions on the unit quasinorm sphere plus the 2N axis points."""
    from .geometry import normalize_to_sphere

    w = Weights.coerce(sigma)
    v = halton(n, w.dim, rng)
    v = v[np.max(np.abs(v), axis=1) > 1e-12]
    return np.vstack([normalize_to_sphere(v, w), axis_points(w, (1.0,))])


# -- parallelism --------------------------------------------------------------

def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CARNOT_LAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Ordered map; uses up to CARNOT_LAB_THREADS worker threads."""
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
