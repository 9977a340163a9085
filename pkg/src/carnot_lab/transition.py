"""Transition maps between coordinate systems and the conditions that decide
whether they preserve homogeneous approximations.

C1 box sandwich, C2 map limit, C3 Jacobian limit and the Taylor vanishing
test are implemented independently so the equivalence experiment can compare
them; the pushforward check predicts the limit of a pushed-forward field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .convergence import (DEFAULT_POLICY, ConvergenceReport, TolerancePolicy, Verdict, as_schedule, classify,
                          default_grid, make_rng, parallel_map, sphere_samples)
from .errors import (EvaluationFailure, InputError, NonInvertibleL, NonsmoothInput, PreconditionFailed,
                     SingularLambda)
from .frames import VectorField
from .geometry import Weights, dilation_factors, multiindices_below, quasinorm
from .newton import newton_solve
from .nilpotent import weighted_taylor_part

FILL_STEPS = (1e-60, 1e-90)


def _fill_removable(fn: Callable, X: np.ndarray, vals: np.ndarray, weights: Weights) -> np.ndarray:
    """Replace non-finite values by the limit of the mean of the values at
    x +- delta_h(1, ..., 1) as h -> 0.

    Accepted only when the two probes agree; handles removable singularities
    such as x^3 sin(1/x) at x = 0.  The symmetric mean cancels the
    first-order offset.
    """
    bad = ~np.all(np.isfinite(vals), axis=-1)
    if not np.any(bad):
        return vals
    vals = vals.copy()
    pts = X[bad]
    probes = []
    for h in FILL_STEPS:
        off = np.power(h, weights.values)
        probes.append(0.5 * (fn(pts + off) + fn(pts - off)))
    a, b = probes
    with np.errstate(invalid="ignore"):
        agree = np.all(np.isfinite(a) & np.isfinite(b)
                       & (np.abs(a - b) <= 1e-12 * np.maximum(1.0, np.abs(a))), axis=-1)
    fixed = np.where(agree[:, None], a, np.nan)
    vals[bad] = fixed
    return vals


class TransitionMap:
    """A map Phi of a neighbourhood of 0 with Phi(0) = 0.

    Either symbolic (``components`` are expressions) or opaque (``evaluator``
    maps (B, N) -> (B, N)).  An inverse may be given in either form; without
    one, inverses are computed by Newton iteration.
    """

    def __init__(self, weights, components: Sequence | None = None, evaluator: Callable | None = None,
                 inverse: Sequence | Callable | None = None, name: str = ""):
        self.weights = Weights.coerce(weights)
        N = self.weights.dim
        if (components is None) == (evaluator is None):
            raise InputError("give either symbolic components or an evaluator")
        self.components = None
        if components is not None:
            comps = tuple(ex.parse(c, N) if isinstance(c, str) else ex._coerce(c) for c in components)
            if len(comps) != N:
                raise InputError(f"{len(comps)} components for dimension {N}")
            self.components = comps
            self._raw = ex.compile_exprs(comps, N)
        else:
            self._raw = evaluator
        self.inverse_components = None
        self._inv_raw = None
        if inverse is not None:
            if callable(inverse):
                self._inv_raw = inverse
            else:
                inv = tuple(ex.parse(c, N) if isinstance(c, str) else ex._coerce(c) for c in inverse)
                if len(inv) != N:
                    raise InputError("inverse has the wrong number of components")
                self.inverse_components = inv
                self._inv_raw = ex.compile_exprs(inv, N)
        self.name = name
        self._jac = None
        origin = self(np.zeros(N))
        if not np.all(np.isfinite(origin)) or np.max(np.abs(origin)) >= 1e-12:
            raise InputError(f"the map must fix the origin, got Phi(0) = {origin.tolist()}")

    @property
    def dim(self) -> int:
        return self.weights.dim

    @property
    def symbolic(self) -> bool:
        return self.components is not None

    @property
    def has_inverse(self) -> bool:
        return self._inv_raw is not None

    def _eval(self, fn, x):
        x = np.asarray(x, dtype=float)
        X = np.atleast_2d(x)
        with np.errstate(all="ignore"):
            vals = np.asarray(fn(X), dtype=float).reshape(X.shape[0], -1)
            vals = _fill_removable(lambda P: np.asarray(fn(P), dtype=float).reshape(P.shape[0], -1),
                                   X, vals, self.weights)
        return vals.reshape(x.shape[:-1] + (vals.shape[-1],))

    def __call__(self, x) -> np.ndarray:
        return self._eval(self._raw, x)

    def jacobian(self, x) -> np.ndarray:
        """J[..., k, l] = d Phi_k / d x_l from symbolic derivatives."""
        if not self.symbolic:
            raise NonsmoothInput("the Jacobian needs a symbolic map")
        N = self.dim
        if self._jac is None:
            entries = tuple(ex.derive(c, l + 1) for c in self.components for l in range(N))
            self._jac = ex.compile_exprs(entries, N)
        vals = self._eval(self._jac, x)
        return vals.reshape(vals.shape[:-1] + (N, N))

    def inverse(self, y) -> np.ndarray:
        """Phi^{-1}(y): the supplied inverse, else Newton from the guess y."""
        y = np.asarray(y, dtype=float)
        if self._inv_raw is not None:
            return self._eval(self._inv_raw, y)
        Y = np.atleast_2d(y)
        scale = np.power(np.asarray(quasinorm(Y, self.weights), dtype=float).reshape(-1, 1), self.weights.values)
        scale = np.where(scale > 0, scale, 1.0)
        jac = self.jacobian if self.symbolic else None
        res = newton_solve(lambda P, rows: self(P), Y, Y, scale, jacobian=jac)
        out = np.where(res.converged[:, None], res.x, np.nan)
        return out.reshape(y.shape)

    def to_json(self) -> dict:
        if not self.symbolic:
            raise InputError("only symbolic maps can be serialized")
        out = {"dim": self.dim, "weights": self.weights.to_json(), "components": [str(c) for c in self.components]}
        if self.inverse_components is not None:
            out["inverse"] = [str(c) for c in self.inverse_components]
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, data) -> "TransitionMap":
        if isinstance(data, str):
            try:
                data = json.loads(data)
            except json.JSONDecodeError as exc:
                raise InputError(f"malformed map JSON: {exc}") from None
        try:
            dim = int(data["dim"])
            w = Weights(data["weights"])
            if w.dim != dim:
                raise InputError("weights and dim disagree")
            return cls(w, [str(c) for c in data["components"]], inverse=data.get("inverse"),
                       name=data.get("name", ""))
        except (KeyError, TypeError) as exc:
            raise InputError(f"map JSON is missing or has a bad field: {exc}") from None


def identity_map(sigma) -> TransitionMap:
    w = Weights.coerce(sigma)
    return TransitionMap(w, [ex.var(i + 1) for i in range(w.dim)], inverse=[ex.var(i + 1) for i in range(w.dim)],
                         name="identity")


# -- verdicts -----------------------------------------------------------------

POSITIVE = {"C1": "holds", "C2": "converged", "C3": "converged", "taylor": "pass"}


@dataclass
class ConditionVerdict:
    condition: str  # one of C1, C2, C3, taylor
    verdict: str
    witnesses: dict = field(default_factory=dict)

    @property
    def positive(self) -> bool:
        return self.verdict == POSITIVE[self.condition]

    def to_dict(self) -> dict:
        return {"condition": self.condition, "verdict": self.verdict, "witnesses": self.witnesses}


def _rescaled_map_values(phi: TransitionMap, X: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """v[g, n, k] = eps_n^{-sigma_k} Phi_k(delta_eps_n x_g)."""
    fac = dilation_factors(eps, phi.weights)  # (n, N)
    pts = X[:, None, :] * fac[None]
    return phi(pts.reshape(-1, phi.dim)).reshape(pts.shape) / fac[None]


# -- C1 -----------------------------------------------------------------------

def check_box_sandwich(phi: TransitionMap, schedule=None, samples=None, n: int = 256, rng=None,
                       growth: float = 1.5) -> ConditionVerdict:
    """Sampled estimate of Box(C1 eps) in Phi(Box(eps)) in Box(C2 eps).

    c2(eps) = max and c1(eps) = min of ||Phi(delta_eps v)|| / eps over unit
    sphere directions v.  Holds when everything is finite, c1 > 0 and the last
    third of the schedule stays within a factor ``growth`` of the middle third
    in both directions.  The inner inclusion from the minimum presumes Phi is a
    homeomorphism fixing 0.
    """
    w = phi.weights
    eps = as_schedule(schedule)
    V = sphere_samples(n, w, make_rng() if rng is None else rng) if samples is None else np.atleast_2d(samples)
    fac = dilation_factors(eps, w)
    pts = (V[:, None, :] * fac[None]).reshape(-1, w.dim)
    img = phi(pts)
    if not np.all(np.isfinite(img)):
        raise EvaluationFailure("map is not finite on some sampled sphere point")
    ratio = np.asarray(quasinorm(img, w)).reshape(V.shape[0], eps.size) / eps[None, :]
    c2 = ratio.max(axis=0)
    c1 = ratio.min(axis=0)
    third = max(1, eps.size // 3)
    mid = slice(eps.size - 2 * third, eps.size - third)
    tail = slice(eps.size - third, eps.size)
    stable_hi = c2[tail].max() <= growth * c2[mid].max()
    stable_lo = c1[tail].min() >= c1[mid].min() / growth
    holds = bool(np.all(c1 > 0) and stable_hi and stable_lo)
    wit = {"C1": float(c1[tail].min()), "C2": float(c2[tail].max()), "c1": c1.tolist(), "c2": c2.tolist(),
           "sampled": True, "directions": int(V.shape[0])}
    if not phi.has_inverse:
        wit["note"] = "assuming homeomorphism"
    return ConditionVerdict("C1", "holds" if holds else "fails", wit)


# -- C2 -----------------------------------------------------------------------

@dataclass
class MapLimitResult:
    grid: np.ndarray
    L: np.ndarray
    report: ConvergenceReport
    verdict: ConditionVerdict
    homogeneity_error: float | None

    def deviation_from(self, target: Callable) -> float:
        ok = np.array([v is Verdict.CONVERGED for v in self.report.sample_verdicts])
        if not ok.any():
            return float("inf")
        return float(np.max(np.abs(self.L[ok] - target(self.grid[ok]))))


def tail_L(phi: TransitionMap, eps_last: float) -> Callable:
    """x -> eps^{-sigma} Phi(delta_eps x) at the finest eps, the working stand-in for L."""
    f = np.power(eps_last, phi.weights.values)
    return lambda x: phi(np.asarray(x, dtype=float) * f) / f


def map_limit(phi: TransitionMap, schedule=None, grid=None, policy: TolerancePolicy = DEFAULT_POLICY) -> MapLimitResult:
    """Limit L(x) of delta_eps^{-1} Phi(delta_eps x) on a grid, homogeneity-checked."""
    w = phi.weights
    eps = as_schedule(schedule)
    grid = default_grid(w) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    vals = _rescaled_map_values(phi, grid, eps)
    report = classify(vals, eps, policy)
    hom = None
    if report.converged:
        Lt = tail_L(phi, eps[-1])
        errs = [np.max(np.abs(Lt(grid * np.power(t, w.values)) - np.power(t, w.values) * report.limit))
                for t in (0.5, 0.25)]
        hom = float(max(errs))
    wit = {"report": report.to_dict(), "homogeneity_error": hom}
    return MapLimitResult(grid, report.limit, report, ConditionVerdict("C2", report.verdict.value, wit), hom)


def _newton_invert(fn: Callable, Y: np.ndarray, weights: Weights, x0=None):
    scale = np.power(np.asarray(quasinorm(Y, weights), dtype=float).reshape(-1, 1), weights.values)
    scale = np.where(scale > 0, scale, 1.0)
    return newton_solve(lambda P, rows: fn(P), Y, Y if x0 is None else x0, scale, tol=1e-10)


@dataclass
class InverseLimitReport:
    grid: np.ndarray
    limit: np.ndarray
    report: ConvergenceReport
    discrepancy: float
    tolerance: float = 1e-5

    @property
    def passed(self) -> bool:
        return self.report.converged and self.discrepancy < self.tolerance

    def to_dict(self) -> dict:
        return {"passed": self.passed, "discrepancy": self.discrepancy, "report": self.report.to_dict()}


def inverse_map_limit(phi: TransitionMap, schedule=None, grid=None, forward: MapLimitResult | None = None,
                      policy: TolerancePolicy = DEFAULT_POLICY) -> InverseLimitReport:
    """Limit of delta_eps^{-1} Phi^{-1}(delta_eps y) compared with a Newton inverse of L."""
    w = phi.weights
    eps = as_schedule(schedule)
    grid = default_grid(w) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    forward = map_limit(phi, eps, grid, policy) if forward is None else forward
    if not forward.report.converged:
        raise PreconditionFailed("the map limit L does not exist", forward.verdict)
    fac = dilation_factors(eps, w)
    pts = (grid[:, None, :] * fac[None]).reshape(-1, w.dim)
    vals = phi.inverse(pts).reshape(grid.shape[0], eps.size, w.dim) / fac[None]
    report = classify(vals, eps, policy)
    Lt = tail_L(phi, eps[-1])
    res = _newton_invert(Lt, grid, w)
    if not np.all(res.converged):
        raise NonInvertibleL(f"Newton could not invert L at {int(np.sum(~res.converged))} grid point(s)")
    disc = float(np.max(np.abs(report.limit - res.x)))
    return InverseLimitReport(grid, report.limit, report, disc)


# -- C3 -----------------------------------------------------------------------

@dataclass
class JacobianLimitResult:
    grid: np.ndarray
    lam: np.ndarray  # (G, N, N)
    report: ConvergenceReport
    verdict: ConditionVerdict
    dl_error: float | None


def _rescaled_jacobian_values(phi: TransitionMap, X: np.ndarray, eps: np.ndarray) -> np.ndarray:
    w = phi.weights.values
    fac = dilation_factors(eps, phi.weights)
    pts = (X[:, None, :] * fac[None]).reshape(-1, phi.dim)
    J = phi.jacobian(pts).reshape(X.shape[0], eps.size, phi.dim, phi.dim)
    # eps^(sigma_l - sigma_k) on entry (k, l)
    scal = np.power(eps[:, None, None], w[None, None, :] - w[None, :, None])
    return J * scal[None]


def jacobian_limit(phi: TransitionMap, schedule=None, grid=None, policy: TolerancePolicy = DEFAULT_POLICY,
                   forward: MapLimitResult | None = None, fd_step: float = 1e-5) -> JacobianLimitResult:
    """Limit lambda(x) of D delta_eps^{-1} DPhi D delta_eps; checked against DL when both exist."""
    w = phi.weights
    N = phi.dim
    eps = as_schedule(schedule)
    grid = default_grid(w) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    vals = _rescaled_jacobian_values(phi, grid, eps)
    report = classify(vals.reshape(grid.shape[0], eps.size, N * N), eps, policy)
    lam = report.limit.reshape(-1, N, N)
    dl_err = None
    if report.converged:
        forward = map_limit(phi, eps, grid, policy) if forward is None else forward
        if forward.report.converged:
            Lt = tail_L(phi, eps[-1])
            DL = np.empty_like(lam)
            for l in range(N):
                e = np.zeros(N)
                e[l] = fd_step
                DL[:, :, l] = (Lt(grid + e) - Lt(grid - e)) / (2 * fd_step)
            dl_err = float(np.max(np.abs(DL - lam)))
    wit = {"report": report.to_dict(), "dl_error": dl_err}
    if dl_err is not None:
        wit["lambda_equals_DL"] = dl_err < 1e-4
    return JacobianLimitResult(grid, lam, report, ConditionVerdict("C3", report.verdict.value, wit), dl_err)


# -- Taylor test --------------------------------------------------------------

@dataclass
class TaylorResult:
    verdict: ConditionVerdict
    L: tuple  # expressions, or () on failure
    offending: list

    def L_map(self, sigma) -> TransitionMap:
        return TransitionMap(sigma, self.L, name="L")


def taylor_vanishing_test(phi: TransitionMap, tol: float = 1e-12) -> TaylorResult:
    """Pass iff D^alpha Phi_k(0) = 0 whenever sigma(alpha) < sigma_k; emits L on Pass."""
    if not phi.symbolic:
        raise NonsmoothInput("the Taylor test needs a symbolic map")
    w = phi.weights
    offending = []
    for k, c in enumerate(phi.components):
        if not ex.is_smooth_at_zero(c):
            raise NonsmoothInput(f"component {k + 1} '{c}' is not symbolically smooth at the origin")
        for alpha in multiindices_below(w, w.exact[k]):
            v = ex.partial_at_zero(c, alpha)
            if abs(v) >= tol:
                offending.append({"k": k + 1, "alpha": list(alpha), "value": v})
    L: tuple = ()
    if not offending:
        L = tuple(weighted_taylor_part(c, w, w.exact[k]) for k, c in enumerate(phi.components))
    wit = {"offending": offending, "L": [str(e) for e in L]}
    return TaylorResult(ConditionVerdict("taylor", "fail" if offending else "pass", wit), L, offending)


# -- equivalence experiment ----------------------------------------------------

@dataclass
class EnsembleMember:
    index: int
    planted: bool
    phi: TransitionMap
    verdicts: dict

    @property
    def agree(self) -> bool:
        return len({v.positive for v in self.verdicts.values()}) == 1

    def to_dict(self) -> dict:
        return {"index": self.index, "planted": self.planted, "agree": self.agree,
                "components": [str(c) for c in self.phi.components],
                "verdicts": {k: v.verdict for k, v in sorted(self.verdicts.items())}}


@dataclass
class EquivalenceReport:
    weights: list
    members: list

    @property
    def agreements(self) -> int:
        return sum(m.agree for m in self.members)

    @property
    def passed(self) -> bool:
        return self.agreements == len(self.members)

    def to_dict(self) -> dict:
        return {"weights": self.weights, "agreements": self.agreements, "total": len(self.members),
                "members": [m.to_dict() for m in self.members]}


def random_polynomial_map(sigma, rng: np.random.Generator, planted: bool = False,
                          density: float = 0.5) -> TransitionMap:
    """Phi_k = x_k + random monomials of degree >= 2 and weight in [sigma_k, m + 1].

    With ``planted``, one component gets an extra monomial of weight strictly
    between 0 and sigma_k with coefficient magnitude in [1/2, 1].
    """
    w = Weights.coerce(sigma)
    top = int(np.ceil(float(w.depth))) + 1
    candidates = [a for a in multiindices_below(w, top + 1) if sum(a) >= 2]
    comps = []
    for k in range(w.dim):
        terms = [(1.0, tuple(int(i == k) for i in range(w.dim)))]
        for a in candidates:
            if w.weight_of(a) >= w.exact[k] and rng.random() < density:
                terms.append((float(rng.uniform(-1.0, 1.0)), a))
        comps.append(terms)
    if planted:
        choices = [(k, a) for k in range(w.dim) for a in multiindices_below(w, w.exact[k]) if sum(a) >= 1]
        if not choices:
            raise ValueError(f"weights {w.to_json()} admit no sub-weight term")
        k, a = choices[int(rng.integers(len(choices)))]
        coeff = float(rng.uniform(0.5, 1.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        comps[k].append((coeff, a))
    return TransitionMap(w, [ex.polynomial(t) for t in comps], name="random")


def evaluate_conditions(phi: TransitionMap, schedule=None, grid=None, rng_seed: int = 42) -> dict:
    eps = as_schedule(schedule)
    fwd = map_limit(phi, eps, grid)
    return {
        "C1": check_box_sandwich(phi, eps, rng=make_rng(rng_seed)),
        "C2": fwd.verdict,
        "C3": jacobian_limit(phi, eps, fwd.grid, forward=fwd).verdict,
        "taylor": taylor_vanishing_test(phi).verdict,
    }


def equivalence_experiment(sigma, n: int = 50, seed: int = 42, schedule=None,
                           planted_fraction: float = 0.5) -> EquivalenceReport:
    """Run all four conditions on a seeded ensemble of polynomial perturbations of the identity."""
    w = Weights.coerce(sigma)
    rng = make_rng(seed)
    jobs = []
    for i in range(n):
        planted = bool(rng.random() < planted_fraction)
        jobs.append((i, planted, random_polynomial_map(w, rng, planted)))
    grid = default_grid(w, rng=make_rng(seed))

    def run(item):
        i, planted, phi = item
        return EnsembleMember(i, planted, phi, evaluate_conditions(phi, schedule, grid, seed))

    return EquivalenceReport(w.to_json(), parallel_map(run, jobs))


# -- pushforward ----------------------------------------------------------------

@dataclass
class PushforwardReport:
    grid: np.ndarray
    limit: np.ndarray
    predicted: np.ndarray
    report: ConvergenceReport
    discrepancy: float
    route: str
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.report.converged and self.discrepancy < self.tolerance

    def to_dict(self) -> dict:
        return {"passed": self.passed, "discrepancy": self.discrepancy, "route": self.route,
                "report": self.report.to_dict()}


def pushforward_limit_check(phi: TransitionMap, X: VectorField, r=None, schedule=None, grid=None,
                            policy: TolerancePolicy = DEFAULT_POLICY) -> PushforwardReport:
    """Compare the limit of (delta_eps^{-1})_* eps^r (Phi_* X)(delta_eps y) with L_* X_hat(L^{-1} y)."""
    w = phi.weights
    N = phi.dim
    r = X.weight if r is None else r
    r_exact = r if isinstance(r, Fraction) else Fraction(r).limit_denominator(1000)
    eps = as_schedule(schedule)
    grid = default_grid(w) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    zero = np.zeros((1, N))
    jac = jacobian_limit(phi, eps, np.vstack([zero, grid]), policy)
    if not jac.report.converged:
        raise PreconditionFailed("the Jacobian limit lambda does not exist", jac.verdict)
    if abs(np.linalg.det(jac.lam[0])) < 1e-10:
        raise SingularLambda("det lambda(0) vanishes")

    # numeric route: x = Phi^{-1}(delta_eps y), value eps^(r - sigma_k) (DPhi(x) X(x))_k
    fac = dilation_factors(eps, w)
    pts = (grid[:, None, :] * fac[None]).reshape(-1, N)
    pre = phi.inverse(pts)
    J = phi.jacobian(pre)
    Xv = X(pre)
    pushed = np.einsum("bkl,bl->bk", J, Xv).reshape(grid.shape[0], eps.size, N)
    vals = pushed * np.power(eps[:, None], float(r) - w.values[None, :])[None]
    report = classify(vals, eps, policy)

    # prediction from L and X_hat
    if phi.symbolic and X.is_smooth_at_zero() and all(ex.is_smooth_at_zero(c) for c in phi.components):
        taylor = taylor_vanishing_test(phi)
        Lm = taylor.L_map(w)
        X_hat = VectorField(tuple(weighted_taylor_part(c, w, w.exact[j] - r_exact)
                                  for j, c in enumerate(X.coeffs)), r)
        res = _newton_invert(Lm, grid, w)
        xh = res.x
        predicted = np.einsum("bkl,bl->bk", Lm.jacobian(xh), X_hat(xh))
        route = "symbolic"
    else:
        Lt = tail_L(phi, eps[-1])
        res = _newton_invert(Lt, grid, w)
        xh = res.x
        e = eps[-1]
        lam_t = _rescaled_jacobian_values(phi, xh, np.array([e]))[:, 0]
        f = np.power(e, w.values)
        Xh = X(xh * f) * np.power(e, float(r) - w.values)
        predicted = np.einsum("bkl,bl->bk", lam_t, Xh)
        route = "sampled"
    if not np.all(res.converged):
        raise NonInvertibleL("L could not be inverted on the grid")
    disc = float(np.max(np.abs(report.limit - predicted)))
    return PushforwardReport(grid, report.limit, predicted, report, disc, route)
