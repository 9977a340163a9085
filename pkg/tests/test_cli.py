import json

import pytest

from carnot_lab.cli import main
from carnot_lab.gallery import heisenberg_frame, planted_map, sin2_map, swapped_heisenberg_frame


def _write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def _run(argv, out):
    return main(argv + ["--out", str(out)])


def _result(out, command):
    return json.loads((out / f"{command.replace('-', '_')}.json").read_text())


def test_gallery_run_heisenberg(tmp_path):
    assert _run(["gallery", "run", "heisenberg"], tmp_path) == 0
    data = _result(tmp_path, "gallery")
    assert data["verdicts"]["gallery"] == "pass"


def test_gallery_list_and_unknown(tmp_path):
    assert _run(["gallery", "list"], tmp_path) == 0
    assert "sin2" in _result(tmp_path, "gallery")["result"]["entries"]
    assert _run(["gallery", "run", "nope"], tmp_path) == 2
    assert _run(["gallery", "run"], tmp_path) == 2


def test_check_transition_sin2_expectations(tmp_path):
    path = _write(tmp_path / "sin2.json", sin2_map().to_json())
    assert _run(["check-transition", path, "--expect", "C2=converged,C3=diverged"], tmp_path) == 0
    data = _result(tmp_path, "check-transition")
    assert data["verdicts"]["taylor"] == "not_applicable"
    assert (tmp_path / "map_limit.csv").exists() and (tmp_path / "jacobian_limit.csv").exists()
    assert _run(["check-transition", path, "--expect", "C3=converged"], tmp_path) == 1


def test_check_transition_pushforward_refused(tmp_path):
    path = _write(tmp_path / "sin2.json", sin2_map().to_json())
    assert _run(["check-transition", path, "--field", "1,0", "--expect", "pushforward=refused"], tmp_path) == 0


def test_exported_map_round_trips(tmp_path):
    assert _run(["gallery", "export", "sin2"], tmp_path) == 0
    exported = _result(tmp_path, "gallery")["result"]["map"]
    path = _write(tmp_path / "m.json", exported)
    assert _run(["check-transition", path, "--expect", "C2=converged"], tmp_path) == 0


def test_planted_map_fails_expectation(tmp_path):
    path = _write(tmp_path / "planted.json", planted_map().to_json())
    code = _run(["check-transition", path, "--expect", "C1=holds,C2=converged,C3=converged,taylor=pass"], tmp_path)
    assert code == 1
    v = _result(tmp_path, "check-transition")["verdicts"]
    assert v == {"C1": "fails", "C2": "diverged", "C3": "diverged", "taylor": "fail"}


def test_swapped_frame_fails_expectation(tmp_path):
    path = _write(tmp_path / "swapped.json", swapped_heisenberg_frame().to_json())
    assert _run(["nilpotentize", path, "--expect", "exp_identity=pass"], tmp_path) == 1
    assert _result(tmp_path, "nilpotentize")["verdicts"]["exp_identity"] == "fail"


def test_nilpotentize_writes_frame(tmp_path):
    path = _write(tmp_path / "h.json", heisenberg_frame().to_json())
    assert _run(["nilpotentize", path, "--expect", "numeric=converged,graded=pass,exp_identity=pass"],
                tmp_path) == 0
    written = json.loads((tmp_path / "nilpotentized_frame.json").read_text())
    assert written["weights"] == [1, 1, 2]


def test_dinf_command(tmp_path):
    path = _write(tmp_path / "h.json", heisenberg_frame().to_json())
    assert _run(["dinf", path, "--x", "1,0,0", "--y", "1,1,0"], tmp_path) == 0
    d = _result(tmp_path, "dinf")["result"]["distances"][0]["d_inf"]
    assert d == pytest.approx(1.0, abs=1e-12)
    assert _run(["dinf", path, "--x", "1,0"], tmp_path) == 2


def test_cone_metric_and_bad_input(tmp_path):
    metric = {"dim": 2, "weights": [1, 2], "distance": "sqrt((x3 - x1)^2 + abs(x4 - x2))",
              "map": ["x1", "x2 + x1^2/2*sin(1/abs(x1)^0.75)"]}
    path = _write(tmp_path / "metric.json", metric)
    assert _run(["cone", "--metric", path, "--pair", "1,0:2,0", "--expect", "cone=diverged"], tmp_path) == 0
    assert (tmp_path / "cone.csv").exists()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(["cone", "--metric", str(bad)], tmp_path) == 2
    assert _run(["cone", "--metric", path, "--frame", path], tmp_path) == 2


def test_cone_partition(tmp_path):
    path = _write(tmp_path / "h.json", heisenberg_frame().to_json())
    code = _run(["cone", "--frame", path, "--partition", "1;2;3", "--pair", "0.1,0.2,0.05:0.3,-0.1,0.02",
                 "--expect", "cone=converged,isometry=pass"], tmp_path)
    assert code == 0
    assert _run(["cone", "--frame", path, "--partition", "1,2;2,3"], tmp_path) == 2


def test_curve_divergence_command(tmp_path):
    path = _write(tmp_path / "h.json", heisenberg_frame().to_json())
    assert _run(["curve-divergence", path, "--eps-min-exp", "2", "--eps-max-exp", "4"], tmp_path) == 0
    assert _run(["curve-divergence", path, "--eps-min-exp", "4", "--eps-max-exp", "2"], tmp_path) == 2


def test_bad_expect_syntax(tmp_path):
    assert _run(["gallery", "list", "--expect", "nonsense"], tmp_path) == 2
    assert _run(["gallery", "list", "--expect", "missing=pass"], tmp_path) == 2


def test_outputs_are_deterministic(tmp_path):
    path = _write(tmp_path / "sin2.json", sin2_map().to_json())
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["check-transition", path], a) == 0
    assert _run(["check-transition", path], b) == 0
    for name in ("check_transition.json", "map_limit.csv", "jacobian_limit.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
