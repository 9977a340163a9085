"""Weights with their anisotropic dilations and box quasinorm.

Multiindices are enumerated by weight for the Taylor bookkeeping.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidWeights, NonpositiveEpsilon


class Weights:
    """Nondecreasing positive weights sigma_1 = 1 <= ... <= sigma_N = depth.

    Weights are kept as small-denominator fractions for exact bookkeeping and
    exposed as a float array for numerics.
    """

    __slots__ = ("exact", "values")

    def __init__(self, sigma: Iterable):
        exact = tuple(Fraction(s).limit_denominator(1000) if not isinstance(s, Fraction) else s
                      for s in sigma)
        if not exact:
            raise InvalidWeights("weights must be nonempty")
        if any(s <= 0 for s in exact):
            raise InvalidWeights(f"weights must be positive: {list(map(float, exact))}")
        if any(b < a for a, b in zip(exact, exact[1:])):
            raise InvalidWeights(f"weights must be sorted nondecreasing: {list(map(float, exact))}")
        if exact[0] != 1:
            raise InvalidWeights(f"the first weight must be 1, got {float(exact[0])}")
        self.exact = exact
        self.values = np.array([float(s) for s in exact])
        self.values.setflags(write=False)

    @classmethod
    def coerce(cls, sigma) -> "Weights":
        return sigma if isinstance(sigma, Weights) else cls(sigma)

    @property
    def dim(self) -> int:
        return len(self.exact)

    @property
    def depth(self) -> Fraction:
        return self.exact[-1]

    def __len__(self):
        return len(self.exact)

    def __iter__(self):
        return iter(self.exact)

    def __getitem__(self, i):
        return self.exact[i]

    def __eq__(self, other):
        return isinstance(other, Weights) and self.exact == other.exact

    def __hash__(self):
        return hash(self.exact)

    def __repr__(self):
        return f"Weights({[int(s) if s.denominator == 1 else float(s) for s in self.exact]})"

    def to_json(self) -> list:
        return [int(s) if s.denominator == 1 else float(s) for s in self.exact]

    def weight_of(self, alpha: Sequence[int]) -> Fraction:
        """sigma(alpha) = sum alpha_i sigma_i."""
        return sum((a * s for a, s in zip(alpha, self.exact)), Fraction(0))


def dilate(x, eps: float, sigma) -> np.ndarray:
    """delta_eps x = (eps^sigma_1 x_1, ..., eps^sigma_N x_N); batched over leading axes."""
    if not eps > 0:
        raise NonpositiveEpsilon(f"dilation parameter must be positive, got {eps}")
    w = Weights.coerce(sigma).values
    return np.asarray(x, dtype=float) * np.power(float(eps), w)


def dilation_factors(eps, sigma) -> np.ndarray:
    """eps^sigma_k for an array of eps values: shape (len(eps), N)."""
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0):
        raise NonpositiveEpsilon("dilation parameters must be positive")
    return np.power(eps[..., None], Weights.coerce(sigma).values)


def quasinorm(x, sigma) -> np.ndarray | float:
    """max_k |x_k|^(1/sigma_k); batched over leading axes."""
    w = Weights.coerce(sigma).values
    x = np.abs(np.asarray(x, dtype=float))
    out = np.max(np.power(x, 1.0 / w), axis=-1)
    return float(out) if out.ndim == 0 else out


def in_box(x, r: float, sigma) -> np.ndarray | bool:
    """Membership in the open Box(r) = {||x|| < r}."""
    return quasinorm(x, sigma) < r


def normalize_to_sphere(v, sigma, radius: float = 1.0) -> np.ndarray:
    """Dilate nonzero points onto the quasinorm sphere ||x|| = radius."""
    v = np.asarray(v, dtype=float)
    q = np.asarray(quasinorm(v, sigma), dtype=float)
    if np.any(q == 0):
        raise ValueError("cannot normalize the origin")
    w = Weights.coerce(sigma).values
    return v * np.power((radius / q)[..., None], w)


def multiindices_below(sigma, bound) -> list[tuple[int, ...]]:
    """All alpha with sigma(alpha) < bound, sorted by (sigma(alpha), lexicographic)."""
    w = Weights.coerce(sigma)
    bound = Fraction(bound).limit_denominator(1000) if not isinstance(bound, Fraction) else bound
    ranges = [range(0, max(0, math.ceil(bound / s)) + 1) for s in w.exact]
    found = [alpha for alpha in itertools.product(*ranges) if w.weight_of(alpha) < bound]
    return sorted(found, key=lambda a: (w.weight_of(a), a))


def multiindices_of_weight(sigma, weight) -> list[tuple[int, ...]]:
    """All alpha with sigma(alpha) == weight exactly."""
    w = Weights.coerce(sigma)
    weight = Fraction(weight).limit_denominator(1000) if not isinstance(weight, Fraction) else weight
    return [a for a in multiindices_below(w, weight + 1) if w.weight_of(a) == weight]


def multiindex_factorial(alpha: Sequence[int]) -> int:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out
