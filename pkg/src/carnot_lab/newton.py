"""Batched damped Newton iteration for local inverses of flow maps.

Unknowns and residuals live in weighted coordinates whose natural sizes
differ by orders of magnitude near the origin (x_k ~ eps^sigma_k), so both
the finite-difference steps and the stopping test are scaled per component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_MACHINE_EPS = np.finfo(float).eps


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: np.ndarray
    residual: np.ndarray  # scaled max-norm residual per item
    iterations: int


def fd_jacobian(func: Callable, x: np.ndarray, rows: np.ndarray, scale: np.ndarray,
                rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian J[b, i, k] = d f_i / d x_k, batched over b.

    Step for x_k is rel_step * max(|x_k|, scale_k); all 2N perturbed copies are
    evaluated in a single call ``func(points, rows)``.
    """
    B, N = x.shape
    h = rel_step * np.maximum(np.abs(x), scale)
    pert = np.repeat(x[None, :, :], 2 * N, axis=0)  # (2N, B, N)
    for k in range(N):
        pert[2 * k, :, k] += h[:, k]
        pert[2 * k + 1, :, k] -= h[:, k]
    vals = func(pert.reshape(2 * N * B, N), np.tile(rows, 2 * N)).reshape(2 * N, B, N)
    J = np.empty((B, N, N))
    for k in range(N):
        J[:, :, k] = (vals[2 * k] - vals[2 * k + 1]) / (2.0 * h[:, k, None])
    return J


def newton_solve(func: Callable, target, x0, scale, *, jacobian: Callable | None = None,
                 tol: float = 1e-12, max_iter: int = 50, rel_step: float = 1e-6,
                 max_halvings: int = 30, floor=None) -> NewtonResult:
    """Solve func(x) = target item-wise for batches x of shape (B, N).

    ``func(points, rows)`` receives the item index of every point, so that
    item-dependent maps can be solved on any subset of the batch.

    ``scale`` (B, N) gives the natural size of each component.  An item is
    converged when |r_k| <= tol * scale_k + 8 * machine_eps * |target_k| for
    all k; ``floor`` adds an absolute allowance per component, e.g. for
    roundoff accumulated inside ``func``.  Steps are damped by halving until the scaled residual decreases;
    items that cannot decrease it are reported as not converged.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), target.shape))
    scale = np.array(np.broadcast_to(np.asarray(scale, dtype=float), target.shape))
    scale = np.where(scale > 0, scale, 1e-300)
    floor = 8.0 * _MACHINE_EPS * np.abs(target) + (0.0 if floor is None else np.asarray(floor, dtype=float))

    def merit(xs, idx):
        with np.errstate(all="ignore"):
            r = func(xs, idx) - target[idx]
            m = np.max(np.maximum(np.abs(r) - floor[idx], 0.0) / scale[idx], axis=1)
        return np.where(np.isfinite(m), m, np.inf), r

    idx_all = np.arange(target.shape[0])
    m, r = merit(x, idx_all)
    done = m <= tol
    stalled = np.zeros_like(done)
    it = 0
    while it < max_iter and not np.all(done | stalled):
        it += 1
        act = np.nonzero(~(done | stalled))[0]
        xa = x[act]
        with np.errstate(all="ignore"):
            J = jacobian(xa) if jacobian is not None else fd_jacobian(func, xa, act, scale[act], rel_step)
        ok = np.all(np.isfinite(J), axis=(1, 2))
        dx = np.zeros_like(xa)
        good = np.nonzero(ok)[0]
        if good.size:
            try:
                dx[good] = np.linalg.solve(J[good], -r[act][good][..., None])[..., 0]
            except np.linalg.LinAlgError:
                for g in good:
                    try:
                        dx[g] = np.linalg.solve(J[g], -r[act][g])
                    except np.linalg.LinAlgError:
                        ok[g] = False
        stalled[act[~ok]] = True
        act, xa, dx = act[ok], xa[ok], dx[ok]
        t = np.ones(act.size)
        pending = np.arange(act.size)
        for _ in range(max_halvings + 1):
            if pending.size == 0:
                break
            trial = xa[pending] + t[pending, None] * dx[pending]
            mt, rt = merit(trial, act[pending])
            accept = (mt < m[act[pending]]) | (mt <= tol)
            acc = pending[accept]
            x[act[acc]] = trial[accept]
            m[act[acc]] = mt[accept]
            r[act[acc]] = rt[accept]
            pending = pending[~accept]
            t[pending] *= 0.5
        stalled[act[pending]] = True
        done = m <= tol
    return NewtonResult(x, done, m, it)
