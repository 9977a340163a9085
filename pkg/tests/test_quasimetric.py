import csv
import json
import math

import numpy as np
import pytest

from carnot_lab.convergence import Schedule, Verdict, box_samples, default_pairs, make_rng
from carnot_lab.errors import DegenerateSample, MissingSample, UnboundedRatio
from carnot_lab.gallery import heisenberg_frame, heisenberg_group_coords, sqrt_abs_metric
from carnot_lab.geometry import dilate, quasinorm
from carnot_lab.quasimetric import (DistanceFn, LimitTable, box_quasimetric, cone_limit, d_inf,
                                    estimate_quasimetric_constants, euclidean, explicit_distance,
                                    fit_distance_bounds, isometry_check, pulled_back, quasinorm_distance)

H = heisenberg_frame()
SHORT = Schedule(count=16)


def test_d_inf_examples():
    assert d_inf(H, [0.2, 0.1, 0.3], [0.2, 0.1, 0.3]) == 0.0
    assert d_inf(H, [0, 0, 0], [0.3, 0, 0.04]) == pytest.approx(0.3, abs=1e-12)
    assert d_inf(H, [1, 0, 0], [1, 1, 0]) == pytest.approx(1.0, abs=1e-12)


def test_box_quasimetric_matches_group_law():
    X, Y = default_pairs(H.weights, 40, 0.5, make_rng(3))
    got = box_quasimetric(H)(X, Y)
    want = quasinorm(heisenberg_group_coords(X, Y), H.weights)
    assert np.max(np.abs(got - want)) < 1e-10


def test_explicit_distance_and_pullback():
    d = explicit_distance(sqrt_abs_metric(), 2)
    assert d([0, 0], [3, -16]) == pytest.approx(5.0)
    shift = pulled_back(lambda P: P + 1.0, euclidean(), "shift")
    assert shift([0, 0], [3, 4]) == pytest.approx(5.0)
    assert "shift" in shift.provenance


def test_constants_euclidean():
    rng = make_rng(0)
    x, y, z = (rng.uniform(-1, 1, size=(2000, 3)) for _ in range(3))
    Q, C = estimate_quasimetric_constants(euclidean(), x, y, z)
    assert Q == pytest.approx(1.0, abs=1e-12) and C == pytest.approx(1.0, abs=1e-12)


def test_constants_sqrt_abs_metric():
    rng = make_rng(1)
    x, y, z = (rng.uniform(-1, 1, size=(10_000, 2)) for _ in range(3))
    Q, C = estimate_quasimetric_constants(explicit_distance(sqrt_abs_metric(), 2), x, y, z)
    assert 1.0 <= Q <= math.sqrt(2) + 1e-12
    assert C == 1.0


def test_constants_heisenberg_symmetric():
    rng = make_rng(2)
    x, y, z = (box_samples(30, H.weights, 0.5, rng) for _ in range(3))
    Q, C = estimate_quasimetric_constants(box_quasimetric(H), x, y, z)
    assert abs(C - 1.0) < 1e-8
    assert Q >= 1.0


def test_constants_degenerate():
    x = np.zeros((3, 2))
    with pytest.raises(DegenerateSample):
        estimate_quasimetric_constants(euclidean(), x, x, x)


def test_fit_bounds():
    samples = box_samples(500, [1, 2], 1.0, make_rng())
    c1, c2 = fit_distance_bounds(quasinorm_distance([1, 2]), [1, 2], samples)
    assert c1 == pytest.approx(1.0) and c2 == pytest.approx(1.0)
    c1, c2 = fit_distance_bounds(explicit_distance(sqrt_abs_metric(), 2), [1, 2], samples)
    assert 1 / math.sqrt(2) <= c1 <= c2 <= math.sqrt(2) + 1e-12
    h = box_samples(40, H.weights, 0.5, make_rng())
    c1, c2 = fit_distance_bounds(box_quasimetric(H), H.weights, h)
    assert c1 == pytest.approx(1.0, abs=1e-10) and c2 == pytest.approx(1.0, abs=1e-10)


def test_fit_bounds_unbounded():
    with pytest.raises(UnboundedRatio):
        fit_distance_bounds(euclidean(), [1, 2], [[0.0, 1e-14], [1.0, 0.0]])
    with pytest.raises(DegenerateSample):
        fit_distance_bounds(euclidean(), [1, 2], [[0.0, 0.0]])


def test_cone_of_homogeneous_metric_is_constant():
    d = explicit_distance(sqrt_abs_metric(), 2)
    X, Y = default_pairs([1, 2], 10, 0.5, make_rng())
    r = cone_limit(d, [1, 2], X, Y, SHORT)
    assert r.verdict is Verdict.CONVERGED
    assert np.allclose(r.report.values[:, :, 0], d(X, Y)[:, None], rtol=1e-12)
    assert r.homogeneity_error < 1e-12


def test_cone_of_heisenberg_box_quasimetric():
    X, Y = default_pairs(H.weights, 6, 0.5, make_rng())
    r = cone_limit(box_quasimetric(H), H.weights, X, Y, SHORT)
    assert r.verdict is Verdict.CONVERGED
    assert np.allclose(r.table.values, quasinorm(heisenberg_group_coords(X, Y), H.weights), atol=1e-10)


def test_cone_outputs(tmp_path):
    d = explicit_distance(sqrt_abs_metric(), 2)
    r = cone_limit(d, [1, 2], [[1.0, 0.0]], [[2.0, 0.0]], SHORT)
    r.write_csv(tmp_path / "cone.csv")
    r.write_json(tmp_path / "cone.json")
    rows = list(csv.reader(open(tmp_path / "cone.csv")))
    assert rows[0] == ["pair_id", "x", "y", "eps", "value", "verdict"]
    assert len(rows) == 1 + SHORT.count
    data = json.load(open(tmp_path / "cone.json"))
    assert data["report"]["verdict"] == "converged"


def test_isometry_identity_and_dilated_control():
    d = quasinorm_distance([1, 1, 2])
    U, V = default_pairs([1, 1, 2], 10, 0.5, make_rng())
    base = cone_limit(d, [1, 1, 2], U, V, SHORT)
    same = isometry_check(base.table, base.table, lambda P: P, U, V)
    assert same.discrepancy == 0.0 and same.passed
    big = cone_limit(d, [1, 1, 2], dilate(U, 2.0, [1, 1, 2]), dilate(V, 2.0, [1, 1, 2]), SHORT)
    off = isometry_check(big.table, base.table, lambda P: dilate(P, 2.0, [1, 1, 2]), U, V)
    assert not off.passed
    assert np.allclose(off.per_pair, d(U, V), rtol=1e-12)


def test_limit_table_missing_sample():
    t = LimitTable(np.zeros((1, 2)), np.ones((1, 2)), np.array([1.0]), np.array([True]))
    assert t.lookup([0, 0], [1, 1])[0] == 1.0
    with pytest.raises(MissingSample):
        t.lookup([0, 0], [2, 2])
    t = LimitTable(np.zeros((1, 2)), np.ones((1, 2)), np.array([1.0]), np.array([False]))
    with pytest.raises(MissingSample):
        t.lookup([0, 0], [1, 1])


def test_distance_fn_nan_on_failure():
    d = DistanceFn(lambda X, Y: np.full(X.shape[0], np.nan), "broken")
    r = cone_limit(d, [1, 2], [[1.0, 0.0]], [[2.0, 0.0]], SHORT)
    assert r.verdict is Verdict.INCONCLUSIVE and 0 in r.report.failures
