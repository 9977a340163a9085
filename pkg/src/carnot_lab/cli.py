"""Command-line entry point: ``carnot-lab <subcommand> ...``.

Exit status is 0 when every ``--expect`` matches, 1 on a verdict mismatch
and 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gallery
from .charts import parse_controls
from .convergence import DEFAULT_POLICY, Schedule, box_samples, default_grid, default_pairs, make_rng
from .expr import is_smooth_at_zero
from .errors import CarnotLabError, InputError, PreconditionFailed
from .frames import VectorField, WeightedFrame
from .geometry import Weights
from .nilpotent import (check_graded_structure, curve_divergence, exp_identity_check, nilpotentize_numeric,
                        nilpotentize_symbolic)
from .quasimetric import (box_quasimetric, compare_charts, cone_limit, estimate_quasimetric_constants,
                          explicit_distance, fit_distance_bounds, pulled_back)
from .transition import (TransitionMap, check_box_sandwich, equivalence_experiment, inverse_map_limit,
                         jacobian_limit, map_limit, pushforward_limit_check, taylor_vanishing_test)


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from None


def _parse_expect(text: str | None) -> dict:
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise InputError(f"--expect item {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        out[k.strip().lower()] = v.strip().lower()
    return out


def _check_expect(expect: dict, verdicts: dict) -> list[str]:
    verdicts = {k.lower(): str(v).lower() for k, v in verdicts.items()}
    unknown = sorted(set(expect) - set(verdicts))
    if unknown:
        raise InputError(f"--expect names unknown verdicts {unknown}; available: {sorted(verdicts)}")
    return [f"{k}: expected {v}, got {verdicts[k]}" for k, v in sorted(expect.items()) if verdicts[k] != v]


def _parse_point(text: str, dim: int) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"bad point {text!r}") from None
    if len(vals) != dim:
        raise InputError(f"point {text!r} has {len(vals)} coordinates, expected {dim}")
    return np.array(vals)


def _pairs(args, weights: Weights):
    if args.pair:
        X, Y = [], []
        for p in args.pair:
            if ":" not in p:
                raise InputError(f"--pair {p!r} must look like x1,x2:y1,y2")
            a, b = p.split(":", 1)
            X.append(_parse_point(a, weights.dim))
            Y.append(_parse_point(b, weights.dim))
        return np.array(X), np.array(Y)
    return default_pairs(weights, args.grid or 64, 0.5, make_rng(args.seed))


def _grid(args, weights: Weights):
    return default_grid(weights, args.grid or 32, rng=make_rng(args.seed))


def _schedule(args) -> Schedule:
    try:
        return Schedule(args.schedule_eps0, args.schedule_ratio, args.schedule_count)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _policy(args):
    return DEFAULT_POLICY if args.tol is None else replace(DEFAULT_POLICY, cauchy_tol=args.tol)


def _write_json(out: Path, name: str, data) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w") as fh:
        json.dump(data, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load_frame(path) -> WeightedFrame:
    return WeightedFrame.from_json(_load_json(path))


# -- subcommands ----------------------------------------------------------------

def cmd_dinf(args) -> tuple[dict, dict]:
    F = _load_frame(args.frame)
    d = box_quasimetric(F)
    if args.x is not None or args.y is not None:
        if args.x is None or args.y is None:
            raise InputError("--x and --y must be given together")
        X = _parse_point(args.x, F.dim)[None]
        Y = _parse_point(args.y, F.dim)[None]
    else:
        X, Y = _pairs(args, F.weights)
    vals = d(X, Y)
    ok = bool(np.all(np.isfinite(vals)))
    result = {"distances": [{"x": x.tolist(), "y": y.tolist(), "d_inf": float(v) if np.isfinite(v) else None}
                            for x, y, v in zip(X, Y, vals)],
              "frame": F.to_json()}
    return result, {"dinf": "ok" if ok else "failed"}


def _load_distance(args):
    if bool(args.frame) == bool(args.metric):
        raise InputError("give exactly one of --frame or --metric")
    if args.frame:
        F = _load_frame(args.frame)
        return box_quasimetric(F), F.weights
    data = _load_json(args.metric)
    try:
        dim = int(data["dim"])
        w = Weights(data["weights"])
        d = explicit_distance(str(data["distance"]), dim)
        if "map" in data:
            phi = TransitionMap(w, [str(c) for c in data["map"]])
            d = pulled_back(phi, d, "map")
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"metric JSON is missing or has a bad field: {exc}") from None
    if w.dim != dim:
        raise InputError("weights and dim disagree")
    return d, w


def _parse_partition(text: str) -> list:
    try:
        return [[int(i) for i in g.split(",")] for g in text.split(";")]
    except ValueError:
        raise InputError(f"bad partition {text!r}; use e.g. '1,2;3'") from None


def cmd_cone(args) -> tuple[dict, dict]:
    if args.partition:
        if not args.frame:
            raise InputError("--partition needs --frame")
        F = _load_frame(args.frame)
        U, V = _pairs(args, F.weights)
        cmp = compare_charts(F, _parse_partition(args.partition), U, V, _schedule(args), policy=_policy(args))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cmp.rho_cone.write_csv(out / "cone.csv")
        cmp.d_cone.write_csv(out / "cone_first_kind.csv")
        verdicts = {"cone": cmp.rho_cone.verdict.value, "first_kind_cone": cmp.d_cone.verdict.value,
                    "isometry": "pass" if cmp.passed else "fail"}
        return cmp.to_dict(), verdicts
    d, w = _load_distance(args)
    X, Y = _pairs(args, w)
    res = cone_limit(d, w, X, Y, _schedule(args), _policy(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / "cone.csv")
    summary = res.to_dict()
    summary["max_oscillation"] = float(np.max(res.report.oscillation))
    if args.constants:
        rng = make_rng(args.seed)
        x, y, z = (box_samples(args.grid or 128, w, 0.5, rng) for _ in range(3))
        Q, C = estimate_quasimetric_constants(d, x, y, z)
        c1, c2 = fit_distance_bounds(d, w, box_samples(args.grid or 128, w, 0.5, rng))
        summary["constants"] = {"Q": Q, "C": C, "C1": c1, "C2": c2}
    return summary, {"cone": res.verdict.value}


def cmd_nilpotentize(args) -> tuple[dict, dict]:
    F = _load_frame(args.frame)
    grid = _grid(args, F.weights)
    num = nilpotentize_numeric(F, _schedule(args), grid, _policy(args))
    verdicts = {"numeric": num.report.verdict.value}
    result = {"numeric": num.report.to_dict()}
    if F.is_smooth_at_zero():
        F_hat = nilpotentize_symbolic(F)
        _write_json(Path(args.out), "nilpotentized_frame.json", F_hat.to_json())
        graded = check_graded_structure(F_hat, F, rng=make_rng(args.seed))
        expid = exp_identity_check(F_hat, rng=make_rng(args.seed))
        sym = np.stack([f(num.grid) for f in F_hat.fields])
        ok = np.array([v.value == "converged" for v in num.report.sample_verdicts]).reshape(F.dim, -1)
        agreement = float(np.max(np.abs(num.limits - sym)[ok])) if ok.any() else None
        result.update(nilpotentized_frame=F_hat.to_json(), graded=graded.to_dict(), exp_identity=expid.to_dict(),
                      symbolic_numeric_agreement=agreement)
        verdicts["graded"] = "pass" if graded.passed else "fail"
        verdicts["exp_identity"] = "pass" if expid.passed else "fail"
    return result, verdicts


def cmd_check_transition(args) -> tuple[dict, dict]:
    if args.ensemble:
        try:
            w = Weights([float(v) for v in args.ensemble.split(",")])
        except ValueError as exc:
            raise InputError(f"bad --ensemble weights: {exc}") from None
        rep = equivalence_experiment(w, args.count, args.seed, _schedule(args))
        return rep.to_dict(), {"equivalence": "pass" if rep.passed else "fail"}
    if not args.map:
        raise InputError("give a map file or --ensemble")
    data = _load_json(args.map)
    phi = TransitionMap.from_json(data)
    sched = _schedule(args)
    pol = _policy(args)
    grid = _grid(args, phi.weights)
    c1 = check_box_sandwich(phi, sched, rng=make_rng(args.seed))
    fwd = map_limit(phi, sched, grid, pol)
    c3 = jacobian_limit(phi, sched, grid, pol, forward=fwd)
    verdicts = {"C1": c1.verdict, "C2": fwd.verdict.verdict, "C3": c3.verdict.verdict}
    result = {"map": phi.to_json(), "C1": c1.to_dict(), "C2": fwd.verdict.to_dict(), "C3": c3.verdict.to_dict()}
    if all(is_smooth_at_zero(c) for c in phi.components):
        t = taylor_vanishing_test(phi)
        verdicts["taylor"] = t.verdict.verdict
        result["taylor"] = t.verdict.to_dict()
    else:
        verdicts["taylor"] = "not_applicable"
        result["taylor"] = {"verdict": "not_applicable", "reason": "map is not symbolically smooth at 0"}
    if phi.has_inverse and fwd.report.converged:
        inv = inverse_map_limit(phi, sched, grid, forward=fwd, policy=pol)
        result["inverse_limit"] = inv.to_dict()
        verdicts["inverse"] = "pass" if inv.passed else "fail"
    if args.field:
        X = VectorField.parse(args.field.split(","), args.field_weight)
        if X.dim != phi.dim:
            raise InputError("--field has the wrong number of components")
        try:
            push = pushforward_limit_check(phi, X, schedule=sched, grid=grid, policy=pol)
            result["pushforward"] = push.to_dict()
            verdicts["pushforward"] = "pass" if push.passed else "fail"
        except PreconditionFailed as exc:
            result["pushforward"] = {"refused": str(exc)}
            verdicts["pushforward"] = "refused"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_traces(out / "map_limit.csv", fwd.report, grid)
    _write_traces(out / "jacobian_limit.csv", c3.report, grid)
    return result, verdicts


def _write_traces(path: Path, report, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", "x", "eps", "component", "value", "verdict"])
        for g in range(report.values.shape[0]):
            xs = " ".join(repr(float(a)) for a in grid[g])
            verdict = report.sample_verdicts[g].value
            for n, e in enumerate(report.schedule):
                for c in range(report.values.shape[2]):
                    w.writerow([g, xs, repr(float(e)), c, repr(float(report.values[g, n, c])), verdict])


def cmd_curve_divergence(args) -> tuple[dict, dict]:
    F = _load_frame(args.frame)
    controls = parse_controls(_load_json(args.controls), F.dim) if args.controls else None
    eps = None
    if args.eps_min_exp is not None or args.eps_max_exp is not None:
        lo = 2 if args.eps_min_exp is None else args.eps_min_exp
        hi = 10 if args.eps_max_exp is None else args.eps_max_exp
        if hi <= lo:
            raise InputError("need eps exponents with min < max")
        eps = 2.0 ** -np.arange(lo, hi + 1)
    rep = curve_divergence(F, controls, eps)
    return rep.to_dict(), {"curve": "pass" if rep.passed else "fail"}


def cmd_gallery(args) -> tuple[dict, dict]:
    if args.action == "list":
        names = gallery.gallery_list()
        return {"entries": {n: gallery.gallery_entry(n).description for n in names}}, {}
    if not args.name:
        raise InputError(f"gallery {args.action} needs an entry name")
    if args.action == "export":
        return gallery.gallery_export(args.name), {}
    rep = gallery.gallery_run(args.name)
    verdicts = {"gallery": "pass" if rep.passed else "fail"}
    verdicts.update({r["truth"]: "pass" if r["passed"] else "fail" for r in rep.results})
    return rep.to_dict(), verdicts


COMMANDS = {
    "dinf": cmd_dinf,
    "cone": cmd_cone,
    "nilpotentize": cmd_nilpotentize,
    "check-transition": cmd_check_transition,
    "curve-divergence": cmd_curve_divergence,
    "gallery": cmd_gallery,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schedule-eps0", type=float, default=1.0)
    common.add_argument("--schedule-ratio", type=float, default=0.5)
    common.add_argument("--schedule-count", type=int, default=31)
    common.add_argument("--grid", type=int, default=None, help="number of low-discrepancy samples")
    common.add_argument("--tol", type=float, default=None, help="Cauchy tolerance for convergence")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out", default="carnot_out", help="output directory")
    common.add_argument("--expect", default=None, help="comma-separated KEY=VERDICT checks")

    p = argparse.ArgumentParser(prog="carnot-lab", description="Homogeneous approximation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dinf", parents=[common], help="box quasimetric between points")
    s.add_argument("frame")
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--pair", action="append")

    s = sub.add_parser("cone", parents=[common], help="tangent-cone limit of a distance")
    s.add_argument("--frame")
    s.add_argument("--metric")
    s.add_argument("--pair", action="append", help="x1,x2,...:y1,y2,...")
    s.add_argument("--partition", help="compare with grouped coordinates, e.g. '1,2;3'")
    s.add_argument("--constants", action="store_true", help="also estimate Q, C, C1, C2")

    s = sub.add_parser("nilpotentize", parents=[common], help="homogeneous approximation of a frame")
    s.add_argument("frame")

    s = sub.add_parser("check-transition", parents=[common], help="conditions C1, C2, C3 and the Taylor test")
    s.add_argument("map", nargs="?")
    s.add_argument("--field", help="comma-separated coefficients of a field to push forward")
    s.add_argument("--field-weight", type=float, default=1.0)
    s.add_argument("--ensemble", help="weights for the random equivalence ensemble, e.g. 1,1,2")
    s.add_argument("--count", type=int, default=50)

    s = sub.add_parser("curve-divergence", parents=[common], help="endpoint gap of driven curves")
    s.add_argument("frame")
    s.add_argument("--controls")
    s.add_argument("--eps-min-exp", type=int, default=None)
    s.add_argument("--eps-max-exp", type=int, default=None)

    s = sub.add_parser("gallery", parents=[common], help="built-in examples")
    s.add_argument("action", choices=["list", "run", "export"])
    s.add_argument("name", nargs="?")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        expect = _parse_expect(args.expect)
        result, verdicts = COMMANDS[args.command](args)
        mismatches = _check_expect(expect, verdicts)
    except PreconditionFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CarnotLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    payload = {"command": args.command, "verdicts": verdicts, "result": result}
    name = args.command.replace("-", "_") + ".json"
    _write_json(Path(args.out), name, payload)
    print(json.dumps({"command": args.command, "verdicts": verdicts, "output": str(Path(args.out) / name)},
                     sort_keys=True))
    if mismatches:
        for m in mismatches:
            print(f"mismatch: {m}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
