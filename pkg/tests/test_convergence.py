import numpy as np
import pytest

from carnot_lab.convergence import (Schedule, TolerancePolicy, Verdict, as_schedule, axis_points, box_samples,
                                    classify, make_rng, parallel_map, sphere_samples)
from carnot_lab.geometry import quasinorm

EPS = Schedule().values


def test_default_schedule():
    assert EPS.size == 31
    assert EPS[0] == 1.0 and EPS[-1] == 2.0 ** -30
    with pytest.raises(ValueError):
        Schedule(ratio=1.5)
    with pytest.raises(ValueError):
        as_schedule([1.0, 2.0, 0.5])


def test_classify_converging_sequence():
    r = classify((1 + EPS)[None, :], EPS)
    assert r.verdict is Verdict.CONVERGED
    assert r.limit[0, 0] == pytest.approx(1.0, abs=1e-8)
    assert r.rate == pytest.approx(1.0, abs=0.05)


def test_classify_oscillating_sequence():
    r = classify(np.sin(1 / EPS ** 0.75)[None, :], EPS)
    assert r.verdict is Verdict.DIVERGED
    assert r.oscillation[0] > 1.0


def test_classify_growing_sequence():
    r = classify((1 / EPS)[None, :], EPS)
    assert r.verdict is Verdict.DIVERGED
    r = classify(np.log(1 / EPS)[None, :], EPS)
    assert r.verdict is Verdict.DIVERGED


def test_classify_inf_and_nan():
    v = np.ones((2, EPS.size))
    v[0, 5] = np.inf
    v[1, 5] = np.nan
    r = classify(v, EPS)
    assert r.sample_verdicts == [Verdict.DIVERGED, Verdict.INCONCLUSIVE]
    assert r.verdict is Verdict.DIVERGED
    assert set(r.failures) == {0, 1}


def test_classify_slow_drift_is_inconclusive():
    # decays like 1/n: too slow for the Cauchy window, no reversal, decaying steps
    n = np.arange(EPS.size)
    r = classify((1e-3 / (n + 1))[None, :], EPS, TolerancePolicy(cauchy_tol=1e-9))
    assert r.verdict is Verdict.INCONCLUSIVE


def test_overall_verdict_needs_every_sample():
    v = np.stack([1 + EPS, 2 + 0 * EPS, 3 + EPS ** 0.01])
    r = classify(v, EPS)
    assert r.sample_verdicts[:2] == [Verdict.CONVERGED, Verdict.CONVERGED]
    assert r.verdict is not Verdict.CONVERGED


def test_samplers_are_seeded_and_in_box():
    a = box_samples(64, [1, 1, 2], 0.5, make_rng())
    b = box_samples(64, [1, 1, 2], 0.5, make_rng())
    assert np.array_equal(a, b)
    assert np.all(quasinorm(a, [1, 1, 2]) <= 0.5 + 1e-12)
    s = sphere_samples(32, [1, 2, 3], make_rng())
    assert np.allclose(quasinorm(s, [1, 2, 3]), 1.0)
    ax = axis_points([1, 2])
    assert ax.shape[1] == 2 and np.all(np.count_nonzero(ax, axis=1) == 1)


def test_parallel_map_preserves_order():
    assert parallel_map(lambda k: k * k, range(20)) == [k * k for k in range(20)]
