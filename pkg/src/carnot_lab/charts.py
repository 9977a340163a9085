"""Flow-based coordinate systems built from a weighted frame.

exp_map integrates sum u_i X_i for unit time with fixed-step classical RK4.
First-kind coordinates use one flow of the frozen combination; grouped
coordinates compose flows of sub-families (all singletons gives the second
kind).  Inverses are computed by damped Newton on the forward map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadPartition, InputError, NewtonDivergence, StepFailure, TrajectoryEscape
from .frames import WeightedFrame
from .geometry import quasinorm
from .newton import newton_solve


@dataclass(frozen=True)
class FlowIntegrator:
    """Fixed-step RK4.  Trajectories leaving Box(escape_factor * r0) around
    the base point are reported as escapes."""

    steps: int = 256
    escape_factor: float = 4.0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    fd_step: float = 1e-6


DEFAULT_INTEGRATOR = FlowIntegrator()

OK, ESCAPED, FAILED = 0, 1, 2


def flow_batch(F: WeightedFrame, u, start, integrator: FlowIntegrator = DEFAULT_INTEGRATOR,
               duration: float = 1.0, steps: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate x' = sum_i u_i X_i(x) for ``duration``; returns (end, status).

    ``u`` and ``start`` broadcast to (B, N).  Failed items come back as nan
    with status ESCAPED or FAILED.
    """
    u = np.asarray(u, dtype=float)
    start = np.asarray(start, dtype=float)
    shape = np.broadcast_shapes(u.shape, start.shape)
    u = np.broadcast_to(u, shape).reshape(-1, F.dim)
    x = np.array(np.broadcast_to(start, shape).reshape(-1, F.dim))
    n = integrator.steps if steps is None else steps
    h = duration / n
    p = np.asarray(F.base_point)
    limit = integrator.escape_factor * F.radius
    status = np.zeros(x.shape[0], dtype=int)
    alive = np.ones(x.shape[0], dtype=bool)

    def rhs(y, uu):
        return F.combination(uu, y)

    with np.errstate(all="ignore"):
        for _ in range(n):
            if not alive.all():
                idx = np.nonzero(alive)[0]
                if idx.size == 0:
                    break
                y, uu = x[idx], u[idx]
            else:
                idx, y, uu = None, x, u
            k1 = rhs(y, uu)
            k2 = rhs(y + 0.5 * h * k1, uu)
            k3 = rhs(y + 0.5 * h * k2, uu)
            k4 = rhs(y + h * k3, uu)
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.all(np.isfinite(y_new), axis=1)
            esc = ~bad & (quasinorm(y_new - p, F.weights) > limit)
            if idx is None:
                x = y_new
                sel = np.arange(x.shape[0])
            else:
                x[idx] = y_new
                sel = idx
            status[sel[bad]] = FAILED
            status[sel[esc]] = ESCAPED
            alive[sel[bad | esc]] = False
    x[~alive] = np.nan
    return x.reshape(shape), status.reshape(shape[:-1])


def raise_for_status(status: np.ndarray):
    if np.any(status == FAILED):
        raise StepFailure("integration produced non-finite values")
    if np.any(status == ESCAPED):
        raise TrajectoryEscape("trajectory left the working box")


def exp_map(F: WeightedFrame, u, start=None, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Time-1 point of the integral curve of sum u_i X_i from ``start`` (default: base point)."""
    start = F.base_point if start is None else start
    end, status = flow_batch(F, u, start, integrator)
    raise_for_status(status)
    return end


def theta1(F: WeightedFrame, u, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """First-kind canonical coordinates at the base point."""
    return exp_map(F, u, F.base_point, integrator)


def weighted_scale(delta, weights) -> np.ndarray:
    """Per-component natural sizes s^sigma_k with s = ||delta||, shape (B, N)."""
    delta = np.atleast_2d(delta)
    s = np.asarray(quasinorm(delta, weights), dtype=float).reshape(-1)
    return np.power(s[:, None], weights.values[None, :])


def roundoff_floor(a, b, integrator: FlowIntegrator) -> np.ndarray:
    """Worst-case RK4 rounding error for trajectories between points of size |a| and |b|."""
    return 4.0 * integrator.steps * np.finfo(float).eps * (np.abs(a) + np.abs(b))


def theta1_inv_batch(F: WeightedFrame, x, y, integrator: FlowIntegrator = DEFAULT_INTEGRATOR):
    """Solve exp_map(F, u, x) = y for u with initial guess 0; returns (u, converged)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    scale = weighted_scale(y - x, F.weights)
    same = np.all(y == x, axis=1)
    u = np.zeros_like(y)
    conv = same.copy()
    idx = np.nonzero(~same)[0]
    if idx.size:
        xs = x[idx]

        def fwd(uu, rows):
            return flow_batch(F, uu, xs[rows], integrator)[0]

        res = newton_solve(fwd, y[idx], np.zeros((idx.size, F.dim)), scale[idx],
                           tol=integrator.newton_tol, max_iter=integrator.newton_max_iter,
                           rel_step=integrator.fd_step, floor=roundoff_floor(xs, y[idx], integrator))
        u[idx] = res.x
        conv[idx] = res.converged
    u[~conv] = np.nan
    return u, conv


def theta1_inv(F: WeightedFrame, x, y, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """First-kind coordinates of ``y`` centred at ``x``; raises NewtonDivergence."""
    single = np.ndim(x) == 1 and np.ndim(y) == 1
    u, conv = theta1_inv_batch(F, x, y, integrator)
    if not np.all(conv):
        raise NewtonDivergence(f"Newton failed for {int(np.sum(~conv))} point(s)")
    return u[0] if single else u


def validate_partition(partition: Sequence[Sequence[int]], dim: int) -> list[list[int]]:
    groups = [[int(i) for i in g] for g in partition]
    flat = [i for g in groups for i in g]
    if any(not g for g in groups):
        raise BadPartition("empty group in partition")
    if sorted(flat) != list(range(1, dim + 1)):
        raise BadPartition(f"partition {groups} is not a disjoint cover of 1..{dim}")
    return groups


def phi_grouped_batch(F: WeightedFrame, partition, u, integrator: FlowIntegrator = DEFAULT_INTEGRATOR,
                      start=None):
    """exp(group_L) o ... o exp(group_1)(p); returns (point, status)."""
    groups = validate_partition(partition, F.dim)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    x = np.array(np.broadcast_to(np.asarray(F.base_point if start is None else start, dtype=float), u.shape))
    status = np.zeros(u.shape[0], dtype=int)
    for g in groups:
        mask = np.zeros(F.dim)
        mask[[i - 1 for i in g]] = 1.0
        x, st = flow_batch(F, u * mask, x, integrator)
        status = np.maximum(status, st)
    return x, status


def phi_grouped(F: WeightedFrame, partition, u, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    single = np.ndim(u) == 1
    x, status = phi_grouped_batch(F, partition, u, integrator)
    raise_for_status(status)
    return x[0] if single else x


def singletons(dim: int) -> list[list[int]]:
    return [[i] for i in range(1, dim + 1)]


def theta2(F: WeightedFrame, u, integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Second-kind canonical coordinates exp(u_N X_N) o ... o exp(u_1 X_1)(p)."""
    return phi_grouped(F, singletons(F.dim), u, integrator)


@dataclass(frozen=True)
class Chart:
    """A flow-based coordinate system; ``partition=None`` means first kind."""

    frame: WeightedFrame
    partition: tuple | None = None
    integrator: FlowIntegrator = DEFAULT_INTEGRATOR

    def __post_init__(self):
        if self.partition is not None:
            groups = validate_partition(self.partition, self.frame.dim)
            object.__setattr__(self, "partition", tuple(tuple(g) for g in groups))

    @property
    def kind(self) -> str:
        if self.partition is None or len(self.partition) == 1:
            return "FirstKind"
        if all(len(g) == 1 for g in self.partition):
            return "SecondKind"
        return "Grouped"

    def forward_batch(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.partition is None:
            return flow_batch(self.frame, u, self.frame.base_point, self.integrator)
        return phi_grouped_batch(self.frame, self.partition, u, self.integrator)

    def forward(self, u) -> np.ndarray:
        single = np.ndim(u) == 1
        x, status = self.forward_batch(u)
        raise_for_status(status)
        return x[0] if single else x

    def inverse_batch(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = np.asarray(self.frame.base_point)
        scale = weighted_scale(x - p, self.frame.weights)
        at_p = np.all(x == p, axis=1)
        u = np.zeros_like(x)
        conv = at_p.copy()
        idx = np.nonzero(~at_p)[0]
        if idx.size:
            res = newton_solve(lambda uu, rows: self.forward_batch(uu)[0], x[idx],
                               np.zeros((idx.size, x.shape[1])),
                               scale[idx], tol=self.integrator.newton_tol,
                               max_iter=self.integrator.newton_max_iter, rel_step=self.integrator.fd_step,
                               floor=roundoff_floor(p, x[idx], self.integrator))
            u[idx] = res.x
            conv[idx] = res.converged
        u[~conv] = np.nan
        return u, conv

    def inverse(self, x) -> np.ndarray:
        single = np.ndim(x) == 1
        u, conv = self.inverse_batch(x)
        if not np.all(conv):
            raise NewtonDivergence(f"chart inverse failed for {int(np.sum(~conv))} point(s)")
        return u[0] if single else u


# -- controlled curves ---------------------------------------------------------

@dataclass(frozen=True)
class ControlSegment:
    t0: float
    t1: float
    b: tuple


def parse_controls(data, dim: int) -> list[ControlSegment]:
    """Piecewise-constant controls: list of {"t0", "t1", "b": [N reals]} covering [0, 1]."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed controls JSON: {exc}") from None
    try:
        segs = sorted((ControlSegment(float(d["t0"]), float(d["t1"]), tuple(float(v) for v in d["b"]))
                       for d in data), key=lambda s: s.t0)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad control segment: {exc}") from None
    if not segs or segs[0].t0 != 0.0 or segs[-1].t1 != 1.0:
        raise InputError("controls must cover [0, 1]")
    for a, b in zip(segs, segs[1:]):
        if a.t1 != b.t0:
            raise InputError(f"controls have a gap or overlap at t={a.t1}")
    for s in segs:
        if s.t1 <= s.t0 or len(s.b) != dim:
            raise InputError(f"bad control segment {s}")
    return segs


def scale_controls(controls: Sequence[ControlSegment], eps: float, weights) -> list[ControlSegment]:
    """b_i -> eps^sigma_i b_i, so that int |b_i| = O(eps^sigma_i)."""
    f = np.power(eps, weights.values)
    return [ControlSegment(s.t0, s.t1, tuple(np.asarray(s.b) * f)) for s in controls]


def drive(F: WeightedFrame, controls: Sequence[ControlSegment], start,
          integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> np.ndarray:
    """Endpoint of gamma' = sum b_i(t) X_i(gamma) over [0, 1]."""
    x = np.asarray(start, dtype=float)
    for s in controls:
        dt = s.t1 - s.t0
        steps = max(1, math.ceil(integrator.steps * dt))
        x, status = flow_batch(F, np.asarray(s.b), x, integrator, duration=dt, steps=steps)
        raise_for_status(status)
    return x


def curve_pair(F: WeightedFrame, F_hat: WeightedFrame, controls: Sequence[ControlSegment], start,
               integrator: FlowIntegrator = DEFAULT_INTEGRATOR) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints of the same controls driving the frame and its nilpotent approximation."""
    return drive(F, controls, start, integrator), drive(F_hat, controls, start, integrator)
