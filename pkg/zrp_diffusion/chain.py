"""The underlying S-valued chain and every static quantity derived from it."""
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from .config import DEFAULT_POLICY, ChainConfig, NumericPolicy
from .errors import BadB, NegativeRate, NonzeroDiagonal, NotIrreducible, ValidationError

logger = logging.getLogger(__name__)


def _frozen(array: ArrayLike) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RateMatrix:
    """Jump rates r(i, j) of an irreducible chain on p sites."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
            raise ValidationError(f"rates must be a p x p matrix with p >= 2, got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValidationError("rates must be finite")
        if np.any(r < 0):
            raise NegativeRate("rates must be non-negative")
        if np.any(np.diag(r) != 0):
            raise NonzeroDiagonal("r(i,i) must be 0 for every site")
        n_comp, _ = connected_components(r > 0, directed=True, connection="strong")
        if n_comp != 1:
            raise NotIrreducible(f"rate graph has {n_comp} strongly connected components")
        object.__setattr__(self, "r", _frozen(r))

    @property
    def p(self) -> int:
        return self.r.shape[0]


@dataclass(frozen=True)
class ChainModel:
    """Irreducible chain with its stationary state, drift vectors and diffusion matrix.

    Row ``i`` of ``v`` is the drift vector v_i = sum_j r(i,j)(e_j - e_i), so
    ``v`` is also the generator matrix Q.  ``a`` holds a_ij = -m_i r(i,j) off
    the diagonal and a_ii = m_i lambda_i.
    """

    rates: RateMatrix
    m: np.ndarray
    lam: np.ndarray
    v: np.ndarray
    a: np.ndarray
    b: float

    @property
    def p(self) -> int:
        return self.rates.p

    @property
    def r(self) -> np.ndarray:
        return self.rates.r

    def to_config(self) -> Dict[str, Any]:
        return {"rates": self.r.tolist(), "b": self.b}

    @classmethod
    def from_config(cls, config: ChainConfig) -> "ChainModel":
        return build_chain(config.rates, config.b)


def generator_matrix(r: ArrayLike) -> np.ndarray:
    """Q(i,j) = r(i,j) off the diagonal, Q(i,i) = -lambda_i"""
    r = np.asarray(r, dtype=float)
    return r - np.diag(r.sum(axis=1))


def stationary_state(r: ArrayLike) -> np.ndarray:
    """Solve m^T Q = 0, sum(m) = 1 through the augmented (p+1)-row system"""
    q = generator_matrix(r)
    p = q.shape[0]
    system = np.vstack([q.T, np.ones((1, p))])
    rhs = np.zeros(p + 1)
    rhs[-1] = 1.0
    m, *_ = linalg.lstsq(system, rhs)
    return m / m.sum()


def build_chain(rates: Union[RateMatrix, ArrayLike], b: float = 1.0) -> ChainModel:
    if b < 1:
        raise BadB(f"b = {b} < 1 lies outside the condensing regime")
    if not isinstance(rates, RateMatrix):
        rates = RateMatrix(np.asarray(rates, dtype=float))
    r = rates.r
    m = stationary_state(r)
    if np.any(m <= 0):
        raise NotIrreducible("stationary state has a non-positive entry")
    lam = r.sum(axis=1)
    v = generator_matrix(r)
    a = -m[:, None] * r + np.diag(m * lam)
    logger.debug("built chain on %d sites, m = %s", rates.p, np.round(m, 6))
    return ChainModel(rates=rates, m=_frozen(m), lam=_frozen(lam), v=_frozen(v),
                      a=_frozen(a), b=float(b))


def adjoint(chain: ChainModel) -> ChainModel:
    """Adjoint chain r*(i,j) = m_j r(j,i) / m_i, same stationary state"""
    m = chain.m
    r_adj = (m[None, :] * chain.r.T) / m[:, None]
    np.fill_diagonal(r_adj, 0.0)
    return build_chain(r_adj, chain.b)


def generator_apply(chain: ChainModel, f: ArrayLike) -> np.ndarray:
    """(L_S f)(i) = v_i . f"""
    return chain.v @ np.asarray(f, dtype=float)


def stationary_residual(chain: ChainModel) -> float:
    return float(np.max(np.abs(chain.m @ chain.v)))


def drift_rank_check(chain: ChainModel, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
    """Any p-1 of the drift vectors are linearly independent"""
    p = chain.p
    for subset in itertools.combinations(range(p), p - 1):
        rank = np.linalg.matrix_rank(chain.v[list(subset)], tol=policy.harmonic_tol)
        if rank != p - 1:
            return False
    return True


def random_chain(p: int, seed: int, b: float = 1.0, density: float = 0.5,
                 low: float = 0.2, high: float = 3.0,
                 rng: Optional[np.random.Generator] = None) -> ChainModel:
    """Random irreducible chain: a random directed cycle plus random extra edges"""
    rng = rng if rng is not None else np.random.default_rng(seed)
    r = np.zeros((p, p))
    order = rng.permutation(p)
    for i in range(p):
        r[order[i], order[(i + 1) % p]] = rng.uniform(low, high)
    extra = (rng.random((p, p)) < density) & (r == 0)
    np.fill_diagonal(extra, False)
    r[extra] = rng.uniform(low, high, size=int(extra.sum()))
    return build_chain(r, b)
