import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from carnot_lab.errors import UnknownEntry
from carnot_lab.gallery import (gallery_entry, gallery_export, gallery_list, gallery_run, integral_t_sin,
                                sin1_c11_map)


@pytest.mark.parametrize("name", gallery_list())
def test_entry_truths(name):
    rep = gallery_run(name)
    failed = [r for r in rep.results if not r["passed"]]
    assert rep.passed, failed
    json.dumps(rep.to_dict())


def test_expected_entries_present():
    for name in ("heisenberg", "engel", "sin1_beta", "sin1_c11", "sin2", "spiral"):
        assert name in gallery_list()
    with pytest.raises(UnknownEntry):
        gallery_entry("klein_bottle")


@pytest.mark.parametrize("x", [0.9, 0.5, 0.31, -0.2, 0.12, -0.05])
def test_integral_matches_quadrature(x):
    # t = 1/s turns the integral into int_{1/|x|}^inf sin(s)/s^3 ds, a Fourier integral
    want, err = quad(lambda s: s ** -3.0, 1 / abs(x), math.inf, weight="sin", wvar=1.0)
    want = want if x > 0 else -want
    assert integral_t_sin(x) == pytest.approx(want, abs=max(10 * err, 1e-10))


def test_integral_small_argument_behaviour():
    # f(x) = x^3 cos(1/x) + O(x^4)
    for x in (1e-3, 3e-4, 1e-5):
        assert abs(integral_t_sin(x) - x ** 3 * math.cos(1 / x)) < 4 * x ** 4
    assert integral_t_sin(0.0) == 0.0


def test_c11_map_is_opaque():
    phi = sin1_c11_map()
    assert not phi.symbolic
    out = phi(np.array([[0.5, 0.1]]))
    assert out[0, 1] == pytest.approx(0.1 + integral_t_sin(0.5))
    assert "map_note" in gallery_export("sin1_c11")


def test_export_contents():
    h = gallery_export("heisenberg")
    assert h["frame"]["weights"] == [1, 1, 2]
    s = gallery_export("sin1_beta")
    assert s["metric"]["weights"] == [1, 2] and "map" in s
