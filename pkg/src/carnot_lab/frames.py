"""Vector fields with symbolic coefficients, grouped into weighted frames whose
commutator tables can be checked against the weight filtration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import expr as ex
from .errors import InputError, InvalidFrame, NonsmoothInput, SingularFrame
from .geometry import Weights


@dataclass(frozen=True)
class VectorField:
    """X = sum_j coeffs[j] * d/dx_j, carrying a formal weight."""

    coeffs: tuple
    weight: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(ex._coerce(c) for c in self.coeffs))
        w = self.weight
        object.__setattr__(self, "weight", w if isinstance(w, Fraction) else Fraction(w).limit_denominator(1000))

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    def __call__(self, x) -> np.ndarray:
        return ex.compile_exprs(self.coeffs, self.dim)(x)

    def is_smooth_at_zero(self) -> bool:
        return all(ex.is_smooth_at_zero(c) for c in self.coeffs)

    def __str__(self):
        terms = [f"({c})*d{j}" for j, c in enumerate(self.coeffs, start=1) if not ex._is_const(c, 0.0)]
        return " + ".join(terms) or "0"

    @classmethod
    def parse(cls, texts: Sequence[str], weight=1) -> "VectorField":
        dim = len(texts)
        return cls(tuple(ex.parse(t, dim) for t in texts), weight)


def commutator(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y] = XY - YX, component j = sum_i (a_i d_i b_j - b_i d_i a_j)."""
    if X.dim != Y.dim:
        raise ValueError("fields of different dimension")
    for c in X.coeffs + Y.coeffs:
        if not ex.is_smooth_at_zero(c):
            raise NonsmoothInput(f"coefficient '{c}' is not differentiable on the working box")
    n = X.dim
    out = []
    for j in range(n):
        total: ex.Expr = ex.ZERO
        for i in range(n):
            total = ex.add(total, ex.mul(X.coeffs[i], ex.derive(Y.coeffs[j], i + 1)))
            total = ex.sub(total, ex.mul(Y.coeffs[i], ex.derive(X.coeffs[j], i + 1)))
        out.append(total)
    return VectorField(tuple(out), X.weight + Y.weight)


@dataclass(frozen=True)
class WeightedFrame:
    """N vector fields subordinate to a filtration, with their weights.

    The fields evaluated at ``base_point`` must form an invertible matrix.
    ``radius`` is the working box radius r0.
    """

    fields: tuple
    weights: Weights
    base_point: tuple = None
    radius: float = 1.0
    provenance: str = ""

    def __post_init__(self):
        w = Weights.coerce(self.weights)
        object.__setattr__(self, "weights", w)
        fields = tuple(self.fields)
        if len(fields) != w.dim:
            raise InputError(f"{len(fields)} fields for {w.dim} weights")
        fields = tuple(VectorField(f.coeffs, w.exact[k]) for k, f in enumerate(fields))
        if any(f.dim != w.dim for f in fields):
            raise InputError("every field needs one coefficient per coordinate")
        object.__setattr__(self, "fields", fields)
        p = tuple(float(v) for v in (self.base_point if self.base_point is not None else (0.0,) * w.dim))
        if len(p) != w.dim:
            raise InputError("base point has the wrong dimension")
        object.__setattr__(self, "base_point", p)
        if not self.radius > 0:
            raise InputError("working radius must be positive")
        A = self.matrix(np.array(p))
        if not np.all(np.isfinite(A)) or abs(np.linalg.det(A)) < 1e-12 * max(1.0, np.max(np.abs(A))) ** w.dim:
            raise SingularFrame(f"fields do not form a basis at the base point {p}")

    @property
    def dim(self) -> int:
        return self.weights.dim

    @property
    def depth(self) -> Fraction:
        return self.weights.depth

    def coefficient_exprs(self) -> tuple:
        return tuple(c for f in self.fields for c in f.coeffs)

    def matrix(self, x) -> np.ndarray:
        """A[..., i, j] = j-th coefficient of X_i at x."""
        x = np.asarray(x, dtype=float)
        vals = ex.compile_exprs(self.coefficient_exprs(), self.dim)(x)
        return vals.reshape(x.shape[:-1] + (self.dim, self.dim))

    def combination(self, u, x) -> np.ndarray:
        """sum_i u_i X_i(x), batched."""
        A = self.matrix(x)
        return np.einsum("...i,...ij->...j", np.asarray(u, dtype=float), A)

    def is_smooth_at_zero(self) -> bool:
        return all(f.is_smooth_at_zero() for f in self.fields)

    def centered(self) -> "WeightedFrame":
        """The same frame in coordinates shifted so the base point is the origin."""
        if not any(self.base_point):
            return self
        shift = {i + 1: ex.add(ex.Var(i + 1), ex.Const(p)) for i, p in enumerate(self.base_point)}
        fields = tuple(VectorField(tuple(ex.substitute(c, shift) for c in f.coeffs), f.weight)
                       for f in self.fields)
        return WeightedFrame(fields, self.weights, None, self.radius, self.provenance)

    def replace(self, **changes) -> "WeightedFrame":
        data = dict(fields=self.fields, weights=self.weights, base_point=self.base_point,
                    radius=self.radius, provenance=self.provenance)
        data.update(changes)
        return WeightedFrame(**data)

    def to_json(self) -> dict:
        out = {
            "dim": self.dim,
            "weights": self.weights.to_json(),
            "fields": [[str(c) for c in f.coeffs] for f in self.fields],
            "base_point": list(self.base_point),
            "radius": self.radius,
        }
        if self.provenance:
            out["provenance"] = self.provenance
        return out

    @classmethod
    def from_json(cls, data) -> "WeightedFrame":
        if isinstance(data, str):
            try:
                data = json.loads(data)
            except json.JSONDecodeError as exc:
                raise InputError(f"malformed frame JSON: {exc}") from None
        try:
            dim = int(data["dim"])
            weights = Weights(data["weights"])
            fields = tuple(VectorField(tuple(ex.parse(str(t), dim) for t in row), w)
                           for row, w in zip(data["fields"], weights))
            if len(fields) != dim:
                raise InputError(f"expected {dim} fields, got {len(data['fields'])}")
            return cls(fields, weights, data.get("base_point"), float(data.get("radius", 1.0)),
                       data.get("provenance", ""))
        except (KeyError, TypeError) as exc:
            raise InputError(f"frame JSON is missing or has a bad field: {exc}") from None


def frame_from_strings(rows: Sequence[Sequence[str]], weights, **kwargs) -> WeightedFrame:
    dim = len(rows)
    fields = tuple(VectorField(tuple(ex.parse(t, dim) for t in row)) for row in rows)
    return WeightedFrame(fields, Weights.coerce(weights), **kwargs)


@dataclass
class TableReport:
    """Commutator table of a frame sampled on a grid.

    ``coefficients[g, i, j, k]`` is c_ijk at grid point g, so that
    [X_i, X_j] = sum_k c_ijk X_k there.  ``residual`` is the largest |c_ijk|
    over slots with sigma_k > sigma_i + sigma_j, which must vanish.
    """

    grid: np.ndarray
    coefficients: np.ndarray
    residual: float
    tolerance: float
    condition: float
    valid: bool
    offending: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "valid" if self.valid else "invalid"

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "residual": self.residual, "tolerance": self.tolerance,
                "condition": self.condition, "offending": self.offending}


def commutator_fields(F: WeightedFrame) -> dict:
    """Symbolic [X_i, X_j] for i < j (0-based keys)."""
    return {(i, j): commutator(F.fields[i], F.fields[j])
            for i in range(F.dim) for j in range(i + 1, F.dim)}


def expand_in_frame(F: WeightedFrame, vectors: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Coefficients c with vectors = sum_k c_k X_k(x), per grid point."""
    A = F.matrix(grid)  # (G, N, N) rows are fields
    if not np.all(np.isfinite(A)):
        raise SingularFrame("frame not evaluable on the grid")
    At = np.swapaxes(A, -1, -2)
    try:
        return np.linalg.solve(At, vectors[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise SingularFrame("frame matrix not invertible at some grid point") from None


def verify_commutator_table(F: WeightedFrame, grid, brackets: dict | None = None) -> TableReport:
    """Expand every [X_i, X_j] in the frame and check the weight filtration."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    N = F.dim
    brackets = commutator_fields(F) if brackets is None else brackets
    A = F.matrix(grid)
    with np.errstate(all="ignore"):
        conds = np.linalg.cond(A)
    if not np.all(np.isfinite(conds)) or np.max(conds) > 1e12:
        raise SingularFrame("frame matrix is singular at some grid point")
    cond = float(np.max(conds))
    coeffs = np.zeros((grid.shape[0], N, N, N))
    for (i, j), br in brackets.items():
        c = expand_in_frame(F, br(grid), grid)
        coeffs[:, i, j, :] = c
        coeffs[:, j, i, :] = -c
    sig = F.weights.exact
    residual = 0.0
    offending = []
    tol = 1e-9 * cond
    for i in range(N):
        for j in range(i + 1, N):
            for k in range(N):
                if sig[k] > sig[i] + sig[j]:
                    r = float(np.max(np.abs(coeffs[:, i, j, k])))
                    residual = max(residual, r)
                    if r > tol:
                        offending.append((i + 1, j + 1, k + 1))
    return TableReport(grid, coeffs, residual, tol, cond, not offending, offending)


def structure_constants_at(F: WeightedFrame, point=None) -> np.ndarray:
    """c_ijk at a single point (default: the base point)."""
    p = np.asarray(F.base_point if point is None else point, dtype=float)
    return verify_commutator_table(F, p[None, :]).coefficients[0]
