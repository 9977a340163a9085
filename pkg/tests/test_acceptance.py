"""The ten acceptance criteria.  Each one is timed and reports a single line.

Run with ``pytest tests/test_acceptance.py -s`` to see the PASS/FAIL lines
(they are also printed without ``-s`` through the capture manager).
"""

import json
import math
import time

import numpy as np
import pytest

from carnot_lab.charts import exp_map
from carnot_lab.cli import main
from carnot_lab.convergence import axis_points, box_samples, default_pairs, make_rng
from carnot_lab.frames import structure_constants_at
from carnot_lab.gallery import (engel_frame, heisenberg_frame, heisenberg_group_coords, perturbed_heisenberg_frame,
                                planted_map, sqrt_abs_metric, sin1_beta_map, sin2_map, spiral_map,
                                swapped_heisenberg_frame)
from carnot_lab.geometry import quasinorm
from carnot_lab.nilpotent import check_graded_structure, curve_divergence, exp_identity_check, nilpotentize_symbolic
from carnot_lab.quasimetric import box_quasimetric, compare_charts, cone_limit, explicit_distance, pulled_back
from carnot_lab.transition import (check_box_sandwich, equivalence_experiment, evaluate_conditions, jacobian_limit,
                                   map_limit)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, elapsed, budget):
        ok = bool(ok) and elapsed < budget
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{elapsed:.1f}s / {budget:.0f}s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_01_exp_identity(report):
    t0 = time.perf_counter()
    F_hat = nilpotentize_symbolic(heisenberg_frame())
    u = box_samples(100, F_hat.weights, 0.5, make_rng())
    err = float(np.max(np.linalg.norm(exp_map(F_hat, u) - u, axis=1)))
    ok = err < 1e-8 and exp_identity_check(F_hat).passed
    report(1, ok, f"Heisenberg exp identity max error {err:.2e} (< 1e-8)", time.perf_counter() - t0, 5)


def test_criterion_02_dinf_oracle(report):
    t0 = time.perf_counter()
    H = heisenberg_frame()
    X, Y = default_pairs(H.weights, 100, 0.5, make_rng())
    got = box_quasimetric(H)(X, Y)
    want = quasinorm(heisenberg_group_coords(X, Y), H.weights)
    err = float(np.max(np.abs(got - want)))
    report(2, err < 1e-6, f"d_inf vs group law on 100 pairs, max error {err:.2e} (< 1e-6)",
           time.perf_counter() - t0, 10)


def test_criterion_03_sin1_beta(report):
    t0 = time.perf_counter()
    phi = sin1_beta_map(0.25)
    v = check_box_sandwich(phi)
    lo, hi = 0.9 / math.sqrt(2), 1.1 * math.sqrt(2)
    c1, c2 = v.witnesses["C1"], v.witnesses["C2"]
    rho = pulled_back(phi, explicit_distance(sqrt_abs_metric(), 2), "sin1_beta")
    cone = cone_limit(rho, [1, 2], [[1.0, 0.0]], [[2.0, 0.0]], check_homogeneity=False)
    osc = float(cone.report.oscillation[0])
    ok = v.verdict == "holds" and lo <= c1 and c2 <= hi and cone.verdict.value == "diverged" and osc >= 0.1
    report(3, ok, f"sandwich {v.verdict} C1={c1:.4f} C2={c2:.4f} in [{lo:.4f}, {hi:.4f}]; "
                  f"cone {cone.verdict.value}, oscillation {osc:.3f} (>= 0.1)", time.perf_counter() - t0, 30)


def test_criterion_04_sin2(report):
    t0 = time.perf_counter()
    phi = sin2_map()
    m = map_limit(phi)
    dev = m.deviation_from(lambda x: x)
    j = jacobian_limit(phi, grid=axis_points(phi.weights))
    osc = float(np.max(j.report.oscillation))
    ok = m.verdict.verdict == "converged" and dev < 1e-6 and j.verdict.verdict == "diverged" and osc >= 0.5
    report(4, ok, f"map_limit {m.verdict.verdict} (deviation {dev:.1e} < 1e-6); jacobian_limit "
                  f"{j.verdict.verdict} (oscillation {osc:.3f} >= 0.5)", time.perf_counter() - t0, 30)


def test_criterion_05_spiral(report):
    t0 = time.perf_counter()
    phi = spiral_map()
    rho = pulled_back(phi, explicit_distance("sqrt((x3 - x1)^2 + (x4 - x2)^2)", 2), "spiral")
    X, Y = default_pairs([1, 1], 50, 0.5, make_rng())
    err = 0.0
    for t in (0.5, 0.25, 0.1, 1e-3, 1e-6):
        err = max(err, float(np.max(np.abs(rho(t * X, t * Y) - t * rho(X, Y)))))
    m = map_limit(phi)
    ok = err < 1e-10 and m.verdict.verdict == "diverged"
    report(5, ok, f"homogeneity error {err:.1e} (< 1e-10) on 50 pairs; map_limit {m.verdict.verdict}",
           time.perf_counter() - t0, 10)


def test_criterion_06_equivalence(report):
    t0 = time.perf_counter()
    total = agree = 0
    parts = []
    for sigma in ([1, 2], [1, 1, 2], [1, 2, 3]):
        rep = equivalence_experiment(sigma, n=50, seed=42)
        total += len(rep.members)
        agree += rep.agreements
        parts.append(f"{sigma}: {rep.agreements}/{len(rep.members)}")
    report(6, agree == total == 150, f"four-condition agreement {agree}/{total} ({'; '.join(parts)})",
           time.perf_counter() - t0, 120)


def _L_heisenberg_second(U):
    return np.stack([U[:, 0], U[:, 1], U[:, 2] + U[:, 0] * U[:, 1] / 2], axis=1)


def _L_engel_second(U):
    u1, u2, u3, u4 = U.T
    return np.stack([u1, u2, u3 + u1 * u2 / 2, u4 + u1 * u3 / 2 + u1 ** 2 * u2 / 12], axis=1)


def _L_engel_grouped(U):
    u1, u2, u3, u4 = U.T
    return np.stack([u1, u2, u3, u4 + u1 * u3 / 2], axis=1)


def test_criterion_07_grouped_charts(report):
    t0 = time.perf_counter()
    H, E = heisenberg_frame(), engel_frame()
    cases = [
        ("Heisenberg 2nd kind", H, [[1], [2], [3]], _L_heisenberg_second),
        ("Heisenberg grouped", H, [[1, 2], [3]], lambda U: np.array(U, dtype=float)),
        ("Engel 2nd kind", E, [[1], [2], [3], [4]], _L_engel_second),
        ("Engel grouped", E, [[1, 2], [3, 4]], _L_engel_grouped),
    ]
    ok = True
    parts = []
    for label, F, part, L in cases:
        U, V = default_pairs(F.weights, 50, 0.5, make_rng())
        c = compare_charts(F, part, U, V, L=L)
        disc = c.isometry.discrepancy if c.isometry is not None else float("inf")
        ok = ok and c.passed
        parts.append(f"{label}: cones {c.rho_cone.verdict.value}/{c.d_cone.verdict.value}, discrepancy {disc:.1e}")
    report(7, ok, "; ".join(parts) + " (< 1e-4, 50 pairs)", time.perf_counter() - t0, 120)


def test_criterion_08_graded_structure(report):
    t0 = time.perf_counter()
    ok = True
    parts = []
    for label, F in (("Heisenberg", heisenberg_frame()), ("Engel", engel_frame()),
                     ("perturbed Heisenberg", perturbed_heisenberg_frame())):
        rep = check_graded_structure(nilpotentize_symbolic(F), F)
        c_p = structure_constants_at(F)
        match = float(np.max(np.abs(rep.constants[rep.expected != 0] - c_p[rep.expected != 0]), initial=0.0))
        ok = ok and rep.passed and rep.residual < 1e-6 and match < 1e-6
        parts.append(f"{label} residual {rep.residual:.1e}")
    report(8, ok, "; ".join(parts) + " (< 1e-6, constants match c_ijk(p))", time.perf_counter() - t0, 30)


def test_criterion_09_curve_divergence(report):
    t0 = time.perf_counter()
    r = curve_divergence(perturbed_heisenberg_frame(), eps=2.0 ** -np.arange(2, 11))
    report(9, r.slope > 1.05, f"log-log slope {r.slope:.3f} (> 1.05) over eps = 2^-2..2^-10",
           time.perf_counter() - t0, 60)


def test_criterion_10_negative_controls(report, tmp_path, capsys):
    t0 = time.perf_counter()
    planted = planted_map()
    verdicts = evaluate_conditions(planted)
    all_fail = not any(v.positive for v in verdicts.values())
    swapped = swapped_heisenberg_frame()
    exp_rep = exp_identity_check(nilpotentize_symbolic(swapped))

    map_path = tmp_path / "planted.json"
    map_path.write_text(json.dumps(planted.to_json()))
    frame_path = tmp_path / "swapped.json"
    frame_path.write_text(json.dumps(swapped.to_json()))
    code_map = main(["check-transition", str(map_path), "--out", str(tmp_path / "a"),
                     "--expect", "C1=holds,C2=converged,C3=converged,taylor=pass"])
    code_frame = main(["nilpotentize", str(frame_path), "--out", str(tmp_path / "b"), "--expect", "exp_identity=pass"])
    capsys.readouterr()
    ok = all_fail and not exp_rep.passed and code_map != 0 and code_frame != 0
    summary = ", ".join(f"{k}={v.verdict}" for k, v in sorted(verdicts.items()))
    report(10, ok, f"planted map {summary}; swapped frame exp error {exp_rep.error:.2e}; "
                   f"CLI exit codes {code_map}, {code_frame}", time.perf_counter() - t0, 60)
