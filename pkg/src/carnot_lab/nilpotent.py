"""Homogeneous approximation of weighted frames.

Two routes to the nilpotentized frame: numeric limits of the rescaled fields
(delta_eps^{-1})_* eps^r X(delta_eps x), and the symbolic weighted Taylor part
of every coefficient.  The graded-structure and exponential-coordinate checks
validate the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .charts import DEFAULT_INTEGRATOR, FlowIntegrator, flow_batch, raise_for_status
from .convergence import (DEFAULT_POLICY, ConvergenceReport, TolerancePolicy, as_schedule, box_samples,
                          classify, default_grid, make_rng)
from .errors import InvalidFrame, LimitDivergence, NonpositiveEpsilon, NonsmoothInput, DomainError
from .frames import (VectorField, WeightedFrame, commutator_fields, expand_in_frame, structure_constants_at,
                     verify_commutator_table)
from .geometry import Weights, dilate, multiindex_factorial, multiindices_below, multiindices_of_weight


@dataclass(frozen=True)
class RescaledField:
    """x -> (delta_eps^{-1})_* eps^r X(delta_eps x); component j is eps^(r - sigma_j) a_j(delta_eps x)."""

    field: VectorField
    r: float
    eps: float
    weights: Weights

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vals = self.field(dilate(x, self.eps, self.weights))
        return vals * np.power(self.eps, float(self.r) - self.weights.values)

    def evaluate(self, x) -> np.ndarray:
        """Like calling the field, but raises DomainError on non-finite values."""
        out = self(x)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(np.atleast_2d(out)))[0]
            pt = np.atleast_2d(x)[bad[0]]
            raise DomainError(self.field.coeffs[bad[-1]], pt, "non-finite rescaled coefficient")
        return out


def rescale_field(X: VectorField, r, eps: float, sigma) -> RescaledField:
    if not eps > 0:
        raise NonpositiveEpsilon(f"dilation parameter must be positive, got {eps}")
    return RescaledField(X, float(r), float(eps), Weights.coerce(sigma))


@dataclass
class NumericNilpotentization:
    grid: np.ndarray
    limits: np.ndarray  # (fields, grid, components)
    report: ConvergenceReport

    def field_verdicts(self) -> list:
        K, G, _ = self.limits.shape
        sv = self.report.sample_verdicts
        return [classify_group(sv[k * G:(k + 1) * G]) for k in range(K)]


def classify_group(verdicts) -> str:
    vals = {v.value for v in verdicts}
    if vals == {"converged"}:
        return "converged"
    return "diverged" if "diverged" in vals else "inconclusive"


def _check_valid(F: WeightedFrame, grid) -> None:
    if F.is_smooth_at_zero():
        table = verify_commutator_table(F, grid)
        if not table.valid:
            raise InvalidFrame(f"commutator table violates the filtration at slots {table.offending}")


def nilpotentize_numeric(F: WeightedFrame, schedule=None, grid=None,
                         policy: TolerancePolicy = DEFAULT_POLICY, verify: bool = True) -> NumericNilpotentization:
    """Limits of the rescaled fields eps^(sigma_k - sigma_j) a_jk(delta_eps x) on a grid.

    Frames with symbolically smooth coefficients are checked against the
    weight filtration first (InvalidFrame); nonsmooth ones are sampled as given.
    """
    F = F.centered()
    w = F.weights
    eps = as_schedule(schedule)
    grid = default_grid(w) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    if verify:
        _check_valid(F, grid)
    G, N, n = grid.shape[0], F.dim, eps.size
    vals = np.empty((N, G, n, N))
    for k, X in enumerate(F.fields):
        for i, e in enumerate(eps):
            vals[k, :, i, :] = rescale_field(X, X.weight, e, w)(grid)
    report = classify(vals.reshape(N * G, n, N), eps, policy)
    return NumericNilpotentization(grid, report.limit.reshape(N, G, N), report)


def weighted_taylor_part(e: ex.Expr, sigma, weight, strict: bool = False, tol: float = 1e-12) -> ex.Expr:
    """sum over sigma(alpha) == weight of D^alpha e(0)/alpha! x^alpha.

    With ``strict`` a nonzero Taylor coefficient of smaller weight raises
    LimitDivergence, since the rescaled coefficient then blows up.
    """
    w = Weights.coerce(sigma)
    if not ex.is_smooth_at_zero(e):
        raise NonsmoothInput(f"'{e}' is not symbolically smooth at the origin")
    if strict:
        for alpha in multiindices_below(w, weight):
            c = ex.partial_at_zero(e, alpha)
            if abs(c) > tol:
                raise LimitDivergence(f"'{e}' has a Taylor term of weight {w.weight_of(alpha)} < {weight} "
                                      f"(multiindex {alpha}, coefficient {c:.3g})")
    if weight < 0:
        return ex.ZERO
    terms = []
    for alpha in multiindices_of_weight(w, weight):
        c = ex.partial_at_zero(e, alpha) / multiindex_factorial(alpha)
        if abs(c) > tol:
            terms.append((c, alpha))
    return ex.polynomial(terms)


def nilpotentize_symbolic(F: WeightedFrame, strict: bool = False) -> WeightedFrame:
    """Replace every coefficient a_jk by its Taylor part of weight sigma_j - sigma_k."""
    F = F.centered()
    w = F.weights
    if not F.is_smooth_at_zero():
        raise NonsmoothInput("frame coefficients are not symbolically smooth at the base point")
    fields = []
    for X in F.fields:
        coeffs = tuple(weighted_taylor_part(c, w, w.exact[j] - X.weight, strict) for j, c in enumerate(X.coeffs))
        fields.append(VectorField(coeffs, X.weight))
    label = f"nilpotentization of {F.provenance}" if F.provenance else "nilpotentization"
    return WeightedFrame(tuple(fields), w, None, F.radius, label)


@dataclass
class GradedReport:
    grid: np.ndarray
    constants: np.ndarray  # c_ijk of the approximation at the first grid point
    expected: np.ndarray  # c_ijk(p) of the original frame on graded slots
    variance: float
    off_grade: float
    mismatch: float
    tolerance: float = 1e-10
    match_tolerance: float = 1e-6

    @property
    def residual(self) -> float:
        return max(self.off_grade, self.mismatch)

    @property
    def passed(self) -> bool:
        return (self.variance < self.tolerance and self.off_grade < self.tolerance
                and self.mismatch < self.match_tolerance)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "variance": self.variance, "off_grade": self.off_grade,
                "mismatch": self.mismatch, "residual": self.residual}


def graded_slots(sigma) -> np.ndarray:
    w = Weights.coerce(sigma)
    N = w.dim
    mask = np.zeros((N, N, N), dtype=bool)
    for i in range(N):
        for j in range(N):
            for k in range(N):
                mask[i, j, k] = i != j and w.exact[k] == w.exact[i] + w.exact[j]
    return mask


def check_graded_structure(F_hat: WeightedFrame, original: WeightedFrame | None = None,
                           grid=None, rng=None) -> GradedReport:
    """Expand [X_i, X_j] of the approximation in its own basis on 50 grid points.

    Graded slots (sigma_k = sigma_i + sigma_j) must be constant and equal to
    the original frame's c_ijk at its base point; every other slot must vanish.
    """
    w = F_hat.weights
    grid = box_samples(50, w, 0.5, make_rng() if rng is None else rng) if grid is None else np.asarray(grid)
    table = verify_commutator_table(F_hat, grid, commutator_fields(F_hat))
    c = table.coefficients
    mask = graded_slots(w)
    variance = float(np.max(np.var(c, axis=0)[mask])) if mask.any() else 0.0
    off = float(np.max(np.abs(c[:, ~mask]))) if (~mask).any() else 0.0
    expected = np.zeros_like(c[0])
    mismatch = 0.0
    if original is not None:
        expected = np.where(mask, structure_constants_at(original), 0.0)
        mismatch = float(np.max(np.abs(c[:, mask] - expected[mask]))) if mask.any() else 0.0
    return GradedReport(grid, c[0], expected, variance, off, mismatch)


@dataclass
class ExpIdentityReport:
    samples: np.ndarray
    error: float
    tolerance: float = 1e-8
    worst: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "max_error": self.error, "tolerance": self.tolerance,
                "worst_u": self.worst}


def exp_identity_check(F_hat: WeightedFrame, n: int = 100, radius: float = 0.5, rng=None,
                       integrator: FlowIntegrator = DEFAULT_INTEGRATOR, tolerance: float = 1e-8) -> ExpIdentityReport:
    """max over u in Box(radius) of |exp(sum u_i X_i)(0) - u|."""
    u = box_samples(n, F_hat.weights, radius, make_rng() if rng is None else rng)
    end, status = flow_batch(F_hat, u, np.zeros(F_hat.dim), integrator)
    raise_for_status(status)
    err = np.max(np.abs(end - u), axis=1)
    return ExpIdentityReport(u, float(np.max(err)), tolerance, u[int(np.argmax(err))].tolist())


@dataclass
class CurveDivergenceReport:
    eps: np.ndarray
    distances: np.ndarray  # d_inf(gamma(1), gamma_hat(1)) per eps
    slope: float
    threshold: float = 1.05

    @property
    def ratios(self) -> np.ndarray:
        return self.distances / self.eps

    @property
    def passed(self) -> bool:
        return bool(self.slope > self.threshold)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "slope": self.slope, "threshold": self.threshold,
                "eps": self.eps.tolist(), "distances": self.distances.tolist(),
                "ratios": self.ratios.tolist()}


DEFAULT_CONTROLS = (
    {"t0": 0.0, "t1": 0.5, "b": (1.0, 0.5, 0.0)},
    {"t0": 0.5, "t1": 1.0, "b": (-0.4, 1.0, 0.3)},
)


def curve_divergence(F: WeightedFrame, controls=None, eps=None, F_hat: WeightedFrame | None = None,
                     integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> CurveDivergenceReport:
    """Drive F and its approximation with the same controls scaled by eps^sigma_i.

    The endpoint gap d_inf(gamma(1), gamma_hat(1)) should be o(eps); the
    report carries the log-log slope of gap against eps.
    """
    from .charts import curve_pair, parse_controls, scale_controls
    from .quasimetric import d_inf

    F = F.centered()
    F_hat = nilpotentize_symbolic(F) if F_hat is None else F_hat
    if controls is None:
        controls = [dict(c) for c in DEFAULT_CONTROLS] if F.dim == 3 else [
            {"t0": 0.0, "t1": 1.0, "b": [1.0] * F.dim}]
    segs = parse_controls(controls, F.dim) if not hasattr(controls[0], "b") else list(controls)
    eps = 2.0 ** -np.arange(2, 11) if eps is None else np.asarray(eps, dtype=float)
    start = np.zeros(F.dim)
    dist = np.empty(eps.size)
    for i, e in enumerate(eps):
        end, end_hat = curve_pair(F, F_hat, scale_controls(segs, e, F.weights), start, integrator)
        dist[i] = d_inf(F, end, end_hat, integrator)
    ok = dist > 0
    slope = float(np.polyfit(np.log(eps[ok]), np.log(dist[ok]), 1)[0]) if ok.sum() >= 2 else float("inf")
    return CurveDivergenceReport(eps, dist, slope)
