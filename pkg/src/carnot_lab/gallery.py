"""Built-in examples, each with declared ground truth.

Each entry bundles its objects with a list of truths; ``gallery_run`` checks
every truth and reports pass/fail per item.  Closed-form oracles used by the
truths (group laws, explicit commutators) live next to the entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np

from . import expr as ex
from .convergence import axis_points, box_samples, default_pairs, make_rng, parallel_map
from .errors import UnknownEntry
from .frames import WeightedFrame, frame_from_strings, verify_commutator_table
from .geometry import quasinorm
from .nilpotent import check_graded_structure, curve_divergence, exp_identity_check, nilpotentize_numeric, \
    nilpotentize_symbolic
from .quasimetric import box_quasimetric, cone_limit, explicit_distance, pulled_back
from .transition import TransitionMap, check_box_sandwich, evaluate_conditions, jacobian_limit, map_limit


# -- objects ----------------------------------------------------------------------

def heisenberg_frame() -> WeightedFrame:
    return frame_from_strings([["1", "0", "-x2/2"], ["0", "1", "x1/2"], ["0", "0", "1"]], [1, 1, 2],
                              provenance="heisenberg")


def engel_frame() -> WeightedFrame:
    return frame_from_strings([["1", "0", "0", "0"], ["0", "1", "x1", "x1^2/2"],
                               ["0", "0", "1", "x1"], ["0", "0", "0", "1"]], [1, 1, 2, 3],
                              provenance="engel")


def perturbed_heisenberg_frame() -> WeightedFrame:
    """Heisenberg plus weight-2 terms on the vertical slot; first-kind coordinates at 0 are unchanged."""
    return frame_from_strings([["1", "0", "-x2/2 + x2*(x1 + x3)"], ["0", "1", "x1/2 - x1*(x1 + x3)"],
                               ["0", "0", "1"]], [1, 1, 2], provenance="heisenberg_perturbed")


def swapped_heisenberg_frame() -> WeightedFrame:
    """Heisenberg with the two vertical coefficients exchanged; not in exponential coordinates."""
    return frame_from_strings([["1", "0", "x1/2"], ["0", "1", "-x2/2"], ["0", "0", "1"]], [1, 1, 2],
                              provenance="heisenberg_swapped")


def sqrt_abs_metric() -> str:
    """sqrt((dx)^2 + |dy|) on R^2 with weights (1, 2), as an expression in (x1, x2, x3, x4)."""
    return "sqrt((x3 - x1)^2 + abs(x4 - x2))"


def sin1_beta_map(beta: float = 0.25) -> TransitionMap:
    return TransitionMap([1, 2], ["x1", f"x2 + x1^2/2*sin(1/abs(x1)^{1 - beta!r})"], name="sin1_beta")


def heisenberg_group_coords(x, y) -> np.ndarray:
    """u with x . u = y in the Heisenberg group law, the oracle for theta_x^{-1}(y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u1 = y[..., 0] - x[..., 0]
    u2 = y[..., 1] - x[..., 1]
    u3 = y[..., 2] - x[..., 2] - (x[..., 0] * u2 - x[..., 1] * u1) / 2
    return np.stack([u1, u2, u3], axis=-1)


def integral_t_sin(x: float, dps: int = 60) -> float:
    """f(x) = int_0^x t sin(1/t) dt in closed form.

    With a = 1/|x|: f = sin(a)/(2a^2) + cos(a)/(2a) - (pi/2 - Si(a))/2, and f
    is odd.  The terms cancel to O(|x|^3), hence the working precision.
    """
    if x == 0.0:
        return 0.0
    with mpmath.workdps(dps):
        a = 1 / mpmath.mpf(abs(x))
        val = mpmath.sin(a) / (2 * a ** 2) + mpmath.cos(a) / (2 * a) - (mpmath.pi / 2 - mpmath.si(a)) / 2
        return float(val) if x > 0 else -float(val)


def sin1_c11_map() -> TransitionMap:
    def evaluator(X):
        X = np.asarray(X, dtype=float)
        f = np.array([integral_t_sin(float(v)) if np.isfinite(v) else np.nan for v in X[:, 0]])
        return np.stack([X[:, 0], X[:, 1] + f], axis=1)

    return TransitionMap([1, 2], evaluator=evaluator, name="sin1_c11")


def sin2_map() -> TransitionMap:
    return TransitionMap([1, 2], ["x1", "x2 + x1^3*sin(1/x1)"], name="sin2")


_LOG_R = "ln(sqrt(x1^2 + x2^2))"


def spiral_map() -> TransitionMap:
    """z -> z e^{i ln|z|}, which rotates each circle by its log-radius."""
    return TransitionMap([1, 1], [f"x1*cos({_LOG_R}) - x2*sin({_LOG_R})",
                                  f"x1*sin({_LOG_R}) + x2*cos({_LOG_R})"], name="spiral")


def planted_map() -> TransitionMap:
    """Identity plus a weight-1 term in a weight-2 slot."""
    return TransitionMap([1, 1, 2], ["x1", "x2", "x3 + x1 + x1*x2/2"], name="planted_subweight")


# -- entries ----------------------------------------------------------------------

@dataclass
class Truth:
    name: str
    check: Callable  # () -> (passed, detail dict)
    source: str = ""


@dataclass
class GalleryEntry:
    name: str
    description: str
    objects: dict
    truths: list = field(default_factory=list)


@dataclass
class GalleryReport:
    name: str
    results: list

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.results)

    def to_dict(self) -> dict:
        return {"entry": self.name, "passed": self.passed, "truths": self.results}


def _t_exp_identity(F, expect=True):
    def check():
        r = exp_identity_check(nilpotentize_symbolic(F))
        return r.passed == expect, {"max_error": r.error, "expected_pass": expect}
    return check


def _t_self_nilpotent(F):
    def check():
        Fh = nilpotentize_symbolic(F)
        num = nilpotentize_numeric(F)
        err = float(np.max(np.abs(F.matrix(num.grid) - Fh.matrix(num.grid))))
        num_err = float(np.max(np.abs(num.limits - np.swapaxes(F.matrix(num.grid), 0, 1))))
        ok = err < 1e-12 and num.report.converged and num_err < 1e-6
        return ok, {"symbolic_error": err, "numeric": num.report.verdict.value, "numeric_error": num_err}
    return check


def _t_graded(F, expected: dict):
    def check():
        rep = check_graded_structure(nilpotentize_symbolic(F), F)
        ok = rep.passed
        for (i, j, k), v in expected.items():
            ok = ok and abs(rep.constants[i - 1, j - 1, k - 1] - v) < 1e-10
        return ok, rep.to_dict()
    return check


def _t_table(F, expected: dict):
    """Commutators at sample points against a hand-computed table {(i, j, k): c}."""
    def check():
        grid = box_samples(20, F.weights, 0.5, make_rng())
        c = verify_commutator_table(F, grid).coefficients
        want = np.zeros(c.shape[1:])
        for (i, j, k), v in expected.items():
            want[i - 1, j - 1, k - 1] = v
            want[j - 1, i - 1, k - 1] = -v
        err = float(np.max(np.abs(c - want[None])))
        return err < 1e-12, {"max_error": err}
    return check


def _t_dinf_oracle(F):
    def check():
        X, Y = default_pairs(F.weights, 20, 0.5, make_rng())
        got = box_quasimetric(F)(X, Y)
        want = quasinorm(heisenberg_group_coords(X, Y), F.weights)
        err = float(np.max(np.abs(got - want)))
        return err < 1e-6, {"max_error": err}
    return check


def _t_sandwich(phi, lo, hi):
    def check():
        v = check_box_sandwich(phi)
        c1, c2 = v.witnesses["C1"], v.witnesses["C2"]
        return v.verdict == "holds" and lo <= c1 and c2 <= hi, {"verdict": v.verdict, "C1": c1, "C2": c2,
                                                                 "bracket": [lo, hi]}
    return check


def _t_cone(phi, expect: str, min_osc: float = 0.0):
    def check():
        rho = pulled_back(phi, explicit_distance(sqrt_abs_metric(), 2), phi.name)
        r = cone_limit(rho, [1, 2], [[1.0, 0.0]], [[2.0, 0.0]], check_homogeneity=False)
        osc = float(r.report.oscillation[0])
        return r.verdict.value == expect and osc >= min_osc, {"verdict": r.verdict.value, "oscillation": osc,
                                                              "limit": float(r.table.values[0])}
    return check


def _t_map_limit(phi, expect: str, identity: bool = False):
    def check():
        m = map_limit(phi)
        detail = {"verdict": m.verdict.verdict}
        ok = m.verdict.verdict == expect
        if identity:
            dev = m.deviation_from(lambda x: x)
            detail["deviation"] = dev
            ok = ok and dev < 1e-6
        return ok, detail
    return check


def _t_jacobian(phi, expect: str, min_osc: float = 0.0):
    def check():
        j = jacobian_limit(phi, grid=axis_points(phi.weights))
        osc = float(np.max(j.report.oscillation))
        return j.verdict.verdict == expect and osc >= min_osc, {"verdict": j.verdict.verdict, "oscillation": osc}
    return check


def _t_spiral_homogeneity(phi):
    def check():
        rho = pulled_back(phi, explicit_distance("sqrt((x3 - x1)^2 + (x4 - x2)^2)", 2), "spiral")
        X, Y = default_pairs([1, 1], 50, 0.5, make_rng())
        err = 0.0
        for t in (0.5, 0.25, 1e-3):
            err = max(err, float(np.max(np.abs(rho(t * X, t * Y) - t * rho(X, Y)))))
        return err < 1e-10, {"max_error": err}
    return check


def _t_all_conditions(phi, expect_positive: bool):
    def check():
        v = evaluate_conditions(phi)
        ok = all(c.positive == expect_positive for c in v.values())
        return ok, {k: c.verdict for k, c in sorted(v.items())}
    return check


def _t_curve(F):
    def check():
        r = curve_divergence(F)
        return r.passed, {"slope": r.slope, "ratios": r.ratios.tolist()}
    return check


def _entries() -> dict:
    H, E, P, S = heisenberg_frame(), engel_frame(), perturbed_heisenberg_frame(), swapped_heisenberg_frame()
    s1, c11, s2, sp, pl = sin1_beta_map(), sin1_c11_map(), sin2_map(), spiral_map(), planted_map()
    lo, hi = 1 / math.sqrt(2) * 0.9, math.sqrt(2) * 1.1
    out = [
        GalleryEntry("heisenberg", "Heisenberg frame in exponential coordinates, weights (1, 1, 2)", {"frame": H}, [
            Truth("exp_identity", _t_exp_identity(H)),
            Truth("self_nilpotent", _t_self_nilpotent(H)),
            Truth("c123_is_1", _t_graded(H, {(1, 2, 3): 1.0})),
            Truth("dinf_group_law", _t_dinf_oracle(H)),
        ]),
        GalleryEntry("engel", "Engel frame, weights (1, 1, 2, 3)", {"frame": E}, [
            Truth("commutator_table", _t_table(E, {(1, 2, 3): 1.0, (1, 3, 4): 1.0})),
            Truth("graded_structure", _t_graded(E, {(1, 2, 3): 1.0, (1, 3, 4): 1.0})),
        ]),
        GalleryEntry("heisenberg_perturbed", "Heisenberg with weight-2 perturbations of the vertical slot",
                     {"frame": P}, [
            Truth("graded_structure", _t_graded(P, {(1, 2, 3): 1.0})),
            Truth("exp_identity", _t_exp_identity(P)),
            Truth("curve_divergence_slope", _t_curve(P)),
        ]),
        GalleryEntry("heisenberg_swapped", "negative control: swapped vertical coefficients", {"frame": S}, [
            Truth("exp_identity_fails", _t_exp_identity(S, expect=False)),
        ]),
        GalleryEntry("sin1_beta", "map (x, y + x^2/2 sin(1/|x|^(3/4))) under sqrt(dx^2 + |dy|)",
                     {"map": s1, "metric": sqrt_abs_metric()}, [
            Truth("box_sandwich", _t_sandwich(s1, lo, hi)),
            Truth("cone_diverges", _t_cone(s1, "diverged", 0.1)),
        ]),
        GalleryEntry("sin1_c11", "map (x, y + int_0^x t sin(1/t) dt) under sqrt(dx^2 + |dy|)",
                     {"map": c11, "metric": sqrt_abs_metric()}, [
            # f(x) = x^3 cos(1/x) + O(x^4), so the rescaled increment vanishes
            Truth("cone_converges", _t_cone(c11, "converged")),
        ]),
        GalleryEntry("sin2", "map (x, y + x^3 sin(1/x)), weights (1, 2)", {"map": s2}, [
            Truth("map_limit_identity", _t_map_limit(s2, "converged", identity=True)),
            Truth("jacobian_diverges", _t_jacobian(s2, "diverged", 0.5)),
        ]),
        GalleryEntry("spiral", "z -> z exp(i ln|z|) on R^2 with weights (1, 1)", {"map": sp}, [
            Truth("metric_homogeneous", _t_spiral_homogeneity(sp)),
            Truth("map_limit_diverges", _t_map_limit(sp, "diverged")),
        ]),
        GalleryEntry("planted_subweight", "negative control: weight-1 term in a weight-2 slot", {"map": pl}, [
            Truth("all_conditions_fail", _t_all_conditions(pl, expect_positive=False)),
        ]),
    ]
    return {e.name: e for e in out}


_REGISTRY: dict | None = None


def _registry() -> dict:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = _entries()
    return _REGISTRY


def gallery_list() -> list[str]:
    return list(_registry())


def gallery_entry(name: str) -> GalleryEntry:
    try:
        return _registry()[name]
    except KeyError:
        raise UnknownEntry(f"no gallery entry named {name!r}; known: {', '.join(gallery_list())}") from None


def gallery_run(name: str) -> GalleryReport:
    entry = gallery_entry(name)

    def run(truth: Truth):
        passed, detail = truth.check()
        return {"truth": truth.name, "passed": bool(passed), "detail": detail}

    return GalleryReport(name, parallel_map(run, entry.truths))


def gallery_export(name: str) -> dict:
    """JSON-ready frame and/or map of an entry (opaque maps cannot be exported)."""
    entry = gallery_entry(name)
    out = {"entry": name, "description": entry.description}
    if "frame" in entry.objects:
        out["frame"] = entry.objects["frame"].to_json()
    if "map" in entry.objects:
        phi = entry.objects["map"]
        if phi.symbolic:
            out["map"] = phi.to_json()
        else:
            out["map_note"] = "map is evaluated numerically and has no expression form"
    if "metric" in entry.objects:
        out["metric"] = {"dim": 2, "weights": [1, 2], "distance": entry.objects["metric"]}
    return out
