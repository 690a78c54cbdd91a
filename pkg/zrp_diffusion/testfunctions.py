"""Smooth functions on the simplex with analytic gradients and Hessians.

All evaluations are vectorised over the leading axis: ``x`` has shape (n, p),
values (n,), gradients (n, p) and Hessians (n, p, p).
"""
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np


class TestFunction:
    # keep pytest from collecting this as a test class
    __test__ = False

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Polynomial(TestFunction):
    """Sum of monomials c * prod_k x_k^alpha_k with non-negative integer exponents."""

    def __init__(self, terms: Iterable[Tuple[Sequence[int], float]]):
        self.terms: List[Tuple[np.ndarray, float]] = []
        for exponents, coefficient in terms:
            alpha = np.asarray(exponents, dtype=np.int64)
            if np.any(alpha < 0):
                raise ValueError("polynomial exponents must be non-negative")
            self.terms.append((alpha, float(coefficient)))
        if not self.terms:
            raise ValueError("a polynomial needs at least one term")

    @classmethod
    def constant(cls, p: int, c: float = 1.0) -> "Polynomial":
        return cls([(np.zeros(p, dtype=np.int64), c)])

    @classmethod
    def product_squares(cls, p: int) -> "Polynomial":
        return cls([(np.full(p, 2, dtype=np.int64), 1.0)])

    @classmethod
    def from_spec(cls, spec: Sequence[dict]) -> "Polynomial":
        """[{"exponents": [...], "coefficient": c}, ...]"""
        return cls((term["exponents"], term.get("coefficient", 1.0)) for term in spec)

    @staticmethod
    def _monomial(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        return np.prod(x ** np.maximum(alpha, 0), axis=-1)

    def value(self, x):
        x = np.atleast_2d(x)
        return sum(c * self._monomial(x, alpha) for alpha, c in self.terms)

    def gradient(self, x):
        x = np.atleast_2d(x)
        out = np.zeros_like(x, dtype=float)
        for alpha, c in self.terms:
            for j in np.flatnonzero(alpha):
                shifted = alpha.copy()
                shifted[j] -= 1
                out[:, j] += c * alpha[j] * self._monomial(x, shifted)
        return out

    def hessian(self, x):
        x = np.atleast_2d(x)
        n, p = x.shape
        out = np.zeros((n, p, p))
        for alpha, c in self.terms:
            for j in np.flatnonzero(alpha):
                for k in np.flatnonzero(alpha):
                    factor = alpha[j] * (alpha[k] - (1 if j == k else 0))
                    if factor == 0:
                        continue
                    shifted = alpha.copy()
                    shifted[j] -= 1
                    shifted[k] -= 1
                    out[:, j, k] += c * factor * self._monomial(x, shifted)
        return out


@dataclass(frozen=True)
class SupharmProfile:
    """f(x) = x^(1+b) (1 - x^gamma) and its first two derivatives."""

    b: float
    gamma: float

    def f(self, x):
        x = np.maximum(x, 0.0)
        return x ** (1 + self.b) * (1 - x ** self.gamma)

    def df(self, x):
        x = np.maximum(x, 0.0)
        b, g = self.b, self.gamma
        return (1 + b) * x ** b - (1 + b + g) * x ** (b + g)

    def d2f(self, x):
        x = np.maximum(x, 0.0)
        b, g = self.b, self.gamma
        return (1 + b) * b * x ** (b - 1) - (1 + b + g) * (b + g) * x ** (b + g - 1)


class ProductFunction(TestFunction):
    """F(x) = prod_{k in sites} f(x_k) for a scalar profile f."""

    def __init__(self, sites: Sequence[int], profile: SupharmProfile):
        self.sites = tuple(int(s) for s in sites)
        self.profile = profile

    def _factors(self, x):
        xa = np.atleast_2d(x)[:, list(self.sites)]
        return xa, self.profile.f(xa)

    @staticmethod
    def _prod_without(values: np.ndarray, drop: Sequence[int]) -> np.ndarray:
        keep = [i for i in range(values.shape[1]) if i not in drop]
        if not keep:
            return np.ones(values.shape[0])
        return np.prod(values[:, keep], axis=1)

    def value(self, x):
        _, fx = self._factors(x)
        return np.prod(fx, axis=1)

    def gradient(self, x):
        x = np.atleast_2d(x)
        xa, fx = self._factors(x)
        dfx = self.profile.df(xa)
        out = np.zeros_like(x, dtype=float)
        for idx, j in enumerate(self.sites):
            out[:, j] = dfx[:, idx] * self._prod_without(fx, [idx])
        return out

    def hessian(self, x):
        x = np.atleast_2d(x)
        n, p = x.shape
        xa, fx = self._factors(x)
        dfx = self.profile.df(xa)
        d2fx = self.profile.d2f(xa)
        out = np.zeros((n, p, p))
        for a, j in enumerate(self.sites):
            out[:, j, j] = d2fx[:, a] * self._prod_without(fx, [a])
            for c, k in enumerate(self.sites):
                if c != a:
                    out[:, j, k] = dfx[:, a] * dfx[:, c] * self._prod_without(fx, [a, c])
        return out
