"""Distances on coordinate patches and their tangent-cone limits.

Besides the box quasimetric d_inf this holds empirical estimates of the
quasimetric constants and of the comparison with the quasinorm.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .charts import DEFAULT_INTEGRATOR, FlowIntegrator, theta1_inv, theta1_inv_batch
from .convergence import DEFAULT_POLICY, ConvergenceReport, TolerancePolicy, Verdict, as_schedule, classify
from .errors import DegenerateSample, MissingSample, UnboundedRatio
from .frames import WeightedFrame
from .geometry import Weights, dilation_factors, quasinorm


@dataclass(frozen=True)
class DistanceFn:
    """A batched distance ``evaluate(X, Y) -> (B,)`` plus a provenance label.

    Failed evaluations are returned as nan.
    """

    evaluate: Callable
    provenance: str = "callable"

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        single = x.ndim == 1 and y.ndim == 1
        X, Y = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(y))
        out = np.asarray(self.evaluate(X, Y), dtype=float)
        return float(out[0]) if single else out


def box_quasimetric(F: WeightedFrame, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> DistanceFn:
    """d_inf(x, y) = ||theta_x^{-1}(y)|| for the frame F."""

    def evaluate(X, Y):
        u, conv = theta1_inv_batch(F, X, Y, integrator)
        out = np.asarray(quasinorm(u, F.weights), dtype=float).reshape(-1)
        out[~conv] = np.nan
        return out

    return DistanceFn(evaluate, f"BoxQuasimetric({F.provenance or 'frame'})")


def d_inf(F: WeightedFrame, x, y, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> float:
    """Box quasimetric between two points; raises NewtonDivergence if they are too far apart."""
    return quasinorm(theta1_inv(F, x, y, integrator), F.weights)


def explicit_distance(e: ex.Expr | str, dim: int) -> DistanceFn:
    """Distance given by an expression in x1..xN (first point) and xN+1..x2N (second point)."""
    if isinstance(e, str):
        e = ex.parse(e, 2 * dim)
    fn = ex.compile_exprs((e,), 2 * dim)

    def evaluate(X, Y):
        return fn(np.concatenate([X, Y], axis=-1))[..., 0]

    return DistanceFn(evaluate, f"Explicit({e})")


def euclidean() -> DistanceFn:
    return DistanceFn(lambda X, Y: np.linalg.norm(Y - X, axis=-1), "Euclidean")


def quasinorm_distance(sigma) -> DistanceFn:
    """(x, y) -> ||y - x||, the model homogeneous quasimetric."""
    w = Weights.coerce(sigma)
    return DistanceFn(lambda X, Y: np.asarray(quasinorm(Y - X, w), dtype=float).reshape(-1),
                      f"Quasinorm({w.to_json()})")


def pulled_back(phi: Callable, inner: DistanceFn, label: str = "Phi") -> DistanceFn:
    """rho(u, v) = inner(phi(u), phi(v)); ``phi`` maps batches (B, N) -> (B, N)."""

    def evaluate(X, Y):
        B = X.shape[0]
        img = np.asarray(phi(np.vstack([X, Y])), dtype=float)
        return inner.evaluate(img[:B], img[B:])

    return DistanceFn(evaluate, f"PulledBack({label}, {inner.provenance})")


# -- constants ------------------------------------------------------------------

def estimate_quasimetric_constants(d: DistanceFn, x, y, z) -> tuple[float, float]:
    """Empirical lower bounds (Q, C) for the quasi-triangle and symmetry constants.

    Triples with coincident points are skipped; DegenerateSample is raised if
    nothing usable remains.
    """
    x, y, z = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, y, z))
    keep = ~(np.all(x == y, axis=1) | np.all(y == z, axis=1) | np.all(x == z, axis=1))
    if not np.any(keep):
        raise DegenerateSample("all sample triples have coincident points")
    x, y, z = x[keep], y[keep], z[keep]
    dxy, dyx = d(x, y), d(y, x)
    dyz, dxz = d(y, z), d(x, z)
    ok = np.isfinite(dxy) & np.isfinite(dyx) & np.isfinite(dyz) & np.isfinite(dxz) & (dxy > 0) & (dyx > 0)
    if not np.any(ok):
        raise DegenerateSample("distance could not be evaluated on any triple")
    Q = max(1.0, float(np.max(dxz[ok] / (dxy[ok] + dyz[ok]))))
    C = float(np.max(np.maximum(dxy[ok] / dyx[ok], dyx[ok] / dxy[ok])))
    return Q, C


def fit_distance_bounds(d: DistanceFn, sigma, samples, max_spread: float = 1e6) -> tuple[float, float]:
    """(C1, C2) = (min, max) of d(0, x) / ||x|| over the nonzero samples."""
    w = Weights.coerce(sigma)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    q = np.asarray(quasinorm(samples, w), dtype=float).reshape(-1)
    samples = samples[q > 0]
    q = q[q > 0]
    if samples.size == 0:
        raise DegenerateSample("no nonzero samples")
    ratio = d(np.zeros_like(samples), samples) / q
    if not np.all(np.isfinite(ratio)) or np.min(ratio) <= 0:
        raise UnboundedRatio("d(0, x)/||x|| is zero or not finite on some sample")
    c1, c2 = float(np.min(ratio)), float(np.max(ratio))
    if c2 / c1 > max_spread:
        raise UnboundedRatio(f"ratio spread {c2 / c1:.3g} exceeds {max_spread:g}")
    return c1, c2


# -- cone limits ----------------------------------------------------------------

@dataclass
class LimitTable:
    """Sampled limit distance d_hat(x, y) on a finite set of pairs."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    valid: np.ndarray

    def lookup(self, x, y, tol: float = 1e-9) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.empty(x.shape[0])
        for b in range(x.shape[0]):
            close = (np.all(np.abs(self.xs - x[b]) <= tol * (1 + np.abs(x[b])), axis=1)
                     & np.all(np.abs(self.ys - y[b]) <= tol * (1 + np.abs(y[b])), axis=1))
            hits = np.nonzero(close & self.valid)[0]
            if hits.size == 0:
                raise MissingSample(f"no converged limit for pair {x[b]}, {y[b]}")
            out[b] = self.values[hits[0]]
        return out

    def to_dict(self) -> dict:
        return {"pairs": [{"x": xx.tolist(), "y": yy.tolist(), "value": float(v) if ok else None}
                          for xx, yy, v, ok in zip(self.xs, self.ys, self.values, self.valid)]}


@dataclass
class ConeResult:
    report: ConvergenceReport
    table: LimitTable
    homogeneity_error: float | None
    provenance: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def verdict(self) -> Verdict:
        return self.report.verdict

    def to_dict(self) -> dict:
        out = {"distance": self.provenance, "report": self.report.to_dict(),
               "homogeneity_error": self.homogeneity_error, "limit_table": self.table.to_dict(),
               "schedule": self.report.schedule.tolist()}
        out.update(self.extra)
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pair_id", "x", "y", "eps", "value", "verdict"])
            for s, (xx, yy) in enumerate(zip(self.table.xs, self.table.ys)):
                xs = " ".join(repr(float(a)) for a in xx)
                ys = " ".join(repr(float(a)) for a in yy)
                verdict = self.report.sample_verdicts[s].value
                for e, v in zip(self.report.schedule, self.report.values[s, :, 0]):
                    w.writerow([s, xs, ys, repr(float(e)), repr(float(v)), verdict])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)


def rescaled_distances(d: DistanceFn, sigma, X, Y, eps) -> np.ndarray:
    """v[s, n] = d(delta_eps_n X_s, delta_eps_n Y_s) / eps_n, evaluated in one batch."""
    fac = dilation_factors(eps, sigma)  # (n, N)
    S, N = X.shape
    Xs = (X[:, None, :] * fac[None, :, :]).reshape(-1, N)
    Ys = (Y[:, None, :] * fac[None, :, :]).reshape(-1, N)
    with np.errstate(all="ignore"):
        vals = np.asarray(d.evaluate(Xs, Ys), dtype=float).reshape(S, len(eps))
    return vals / np.asarray(eps)[None, :]


def cone_limit(d: DistanceFn, sigma, X, Y, schedule=None, policy: TolerancePolicy = DEFAULT_POLICY,
               check_homogeneity: bool = True) -> ConeResult:
    """Limit of d(delta_eps x, delta_eps y) / eps over the schedule for every pair."""
    w = Weights.coerce(sigma)
    eps = as_schedule(schedule)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    vals = rescaled_distances(d, w, X, Y, eps)
    failures = {}
    for s in range(X.shape[0]):
        bad = np.nonzero(~np.isfinite(vals[s]))[0]
        if bad.size:
            failures[s] = f"evaluation failed at eps={eps[bad[0]]:.3g}"
    report = classify(vals, eps, policy, failures)
    valid = np.array([v is Verdict.CONVERGED for v in report.sample_verdicts])
    table = LimitTable(X, Y, report.limit[:, 0], valid)
    hom = None
    if check_homogeneity and np.any(valid):
        # d_hat(delta_t x, delta_t y) is read off at the finest eps: its sequence
        # value there is d(delta_{eps t} x, delta_{eps t} y) / eps.
        e_last = eps[-1]
        errs = []
        for t in (0.5, 0.25):
            vt = rescaled_distances(d, w, X[valid], Y[valid], np.array([e_last * t]))[:, 0] * t
            ref = t * table.values[valid]
            errs.append(np.max(np.abs(vt - ref) / np.maximum(ref, 1e-300)))
        hom = float(max(errs))
    return ConeResult(report, table, hom, d.provenance)


@dataclass
class IsometryReport:
    discrepancy: float
    per_pair: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.discrepancy < self.tolerance)

    def to_dict(self) -> dict:
        return {"discrepancy": self.discrepancy, "tolerance": self.tolerance, "passed": self.passed}


def isometry_check(d_hat: LimitTable, rho_hat: LimitTable, L: Callable, U, V,
                   tolerance: float = 1e-4) -> IsometryReport:
    """max |rho_hat(u, v) - d_hat(L u, L v)| over the given pairs."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    r = rho_hat.lookup(U, V)
    dd = d_hat.lookup(L(U), L(V))
    diff = np.abs(r - dd)
    return IsometryReport(float(np.max(diff)), diff, tolerance)


@dataclass
class ChartComparison:
    """Cones of d in first-kind coordinates and in a grouped chart, related by L."""

    partition: tuple
    rho_cone: ConeResult
    d_cone: ConeResult
    isometry: IsometryReport | None

    @property
    def passed(self) -> bool:
        return (self.rho_cone.report.converged and self.d_cone.report.converged
                and self.isometry is not None and self.isometry.passed)

    def to_dict(self) -> dict:
        return {"partition": [list(g) for g in self.partition], "passed": self.passed,
                "grouped_cone": self.rho_cone.report.to_dict(), "first_kind_cone": self.d_cone.report.to_dict(),
                "isometry": None if self.isometry is None else self.isometry.to_dict()}


def compare_charts(F: WeightedFrame, partition, U, V, schedule=None, L: Callable | None = None,
                   policy: TolerancePolicy = DEFAULT_POLICY, tolerance: float = 1e-4) -> ChartComparison:
    """Check rho_hat(u, v) = d_hat(L u, L v) for rho the box quasimetric read in grouped coordinates.

    ``L`` is the limit of the transition map from grouped to first-kind
    coordinates; when omitted it is estimated numerically.
    """
    from .charts import Chart
    from .transition import TransitionMap, map_limit

    first = Chart(F)
    grouped = Chart(F, partition)
    d = box_quasimetric(F)
    d_theta = pulled_back(lambda P: first.forward_batch(P)[0], d, "theta")
    rho = pulled_back(lambda P: grouped.forward_batch(P)[0], d, f"grouped{grouped.partition}")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if L is None:
        phi = TransitionMap(F.weights, evaluator=lambda P: first.inverse_batch(grouped.forward_batch(P)[0])[0],
                            name="transition")
        pts = np.vstack([U, V])
        lim = map_limit(phi, schedule, pts, policy)
        table = {tuple(p): l for p, l in zip(pts, lim.L)}

        def L(P):
            return np.array([table[tuple(p)] for p in np.atleast_2d(P)])
    LU, LV = L(U), L(V)
    rho_cone = cone_limit(rho, F.weights, U, V, schedule, policy, check_homogeneity=False)
    d_cone = cone_limit(d_theta, F.weights, LU, LV, schedule, policy, check_homogeneity=False)
    iso = None
    if rho_cone.report.converged and d_cone.report.converged:
        iso = isometry_check(d_cone.table, rho_cone.table, L, U, V, tolerance)
    return ChartComparison(grouped.partition, rho_cone, d_cone, iso)
