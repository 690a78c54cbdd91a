"""Trace of the chain on a face: equilibrium potentials, trace rates, projection map."""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Tuple

import numpy as np
from scipy import linalg

from .chain import ChainModel, adjoint, build_chain
from .config import DEFAULT_POLICY, NumericPolicy
from .errors import DegenerateFace, SingularSystem, ValidationError
from .streams import replica_generator

logger = logging.getLogger(__name__)

Sites = Tuple[int, ...]


def as_sites(sites: Iterable[int], p: int) -> Sites:
    out = tuple(sorted(set(int(s) for s in sites)))
    if not out:
        raise ValidationError("empty site set")
    if out[0] < 0 or out[-1] >= p:
        raise ValidationError(f"sites {out} outside 0..{p - 1}")
    return out


def complement(sites: Sites, p: int) -> Sites:
    return tuple(i for i in range(p) if i not in sites)


def face_mask(sites: Iterable[int]) -> int:
    """Bitmask with bit i set for site i"""
    return sum(1 << int(i) for i in sites)


def mask_sites(mask: int, p: int) -> Sites:
    return tuple(i for i in range(p) if mask >> i & 1)


def _harmonic_extensions(chain: ChainModel, sites: Sites) -> np.ndarray:
    """Rows u_k, k in sites: harmonic off the face, indicator of k on it"""
    p = chain.p
    interior = complement(sites, p)
    u = np.zeros((len(sites), p))
    u[np.arange(len(sites)), list(sites)] = 1.0
    if not interior:
        return u
    q = chain.v
    q_ii = q[np.ix_(interior, interior)]
    q_ib = q[np.ix_(interior, sites)]
    try:
        x = linalg.solve(q_ii, -q_ib)
    except linalg.LinAlgError as e:
        raise SingularSystem(f"interior system for face {sites} is singular: {e}") from e
    if not np.all(np.isfinite(x)):
        raise SingularSystem(f"interior system for face {sites} produced non-finite values")
    u[:, list(interior)] = x.T
    return u


@dataclass(frozen=True)
class TraceModel:
    """Trace of the chain on the face B (0-based ``sites``)."""

    sites: Sites
    u: np.ndarray
    rB: np.ndarray
    lambdaB: np.ndarray
    gamma: np.ndarray
    vB: np.ndarray

    @property
    def p(self) -> int:
        return self.u.shape[1]

    def embedded_rates(self) -> np.ndarray:
        """r^B as a p x p matrix, zero outside the face"""
        out = np.zeros((self.p, self.p))
        out[np.ix_(self.sites, self.sites)] = self.rB
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "face": [s + 1 for s in self.sites],
            "u": self.u.tolist(),
            "rB": self.rB.tolist(),
            "lambdaB": self.lambdaB.tolist(),
            "gamma": self.gamma.tolist(),
            "vB": self.vB.tolist(),
        }


def equilibrium_potentials(chain: ChainModel, sites: Iterable[int]) -> np.ndarray:
    """u^B_k(j) for k in B (rows, in sorted site order) and j in S (columns)"""
    sites = as_sites(sites, chain.p)
    if len(sites) < 2:
        raise DegenerateFace("equilibrium potentials need a face with at least two sites")
    return _harmonic_extensions(chain, sites)


def trace_rates(chain: ChainModel, sites: Iterable[int]) -> TraceModel:
    sites = as_sites(sites, chain.p)
    if len(sites) < 2:
        raise DegenerateFace("the trace process needs a face with at least two sites")
    u = _harmonic_extensions(chain, sites)
    # lu[j, k] = (L_S u_k)(j) for j, k in B
    lu = chain.v[list(sites)] @ u.T
    lambda_b = -np.diag(lu).copy()
    r_b = lu.copy()
    np.fill_diagonal(r_b, 0.0)
    gamma = np.zeros((chain.p, chain.p))
    gamma[list(sites)] = u
    v_b = np.zeros((len(sites), chain.p))
    v_b[:, list(sites)] = lu
    return TraceModel(sites=sites, u=u, rB=r_b, lambdaB=lambda_b, gamma=gamma, vB=v_b)


def projection_matrix(chain: ChainModel, sites: Iterable[int]) -> np.ndarray:
    """Matrix of gamma_B; singleton faces send all mass to the vertex"""
    sites = as_sites(sites, chain.p)
    gamma = np.zeros((chain.p, chain.p))
    gamma[list(sites)] = _harmonic_extensions(chain, sites)
    return gamma


def project(chain: ChainModel, sites: Iterable[int], x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float) @ projection_matrix(chain, sites).T


def projection_composition_check(chain: ChainModel, inner: Iterable[int],
                                 outer: Iterable[int]) -> float:
    """max |gamma_B gamma_C - gamma_B| for B inside C"""
    inner = as_sites(inner, chain.p)
    outer = as_sites(outer, chain.p)
    if not set(inner) <= set(outer):
        raise ValidationError(f"face {inner} is not contained in {outer}")
    g_b = projection_matrix(chain, inner)
    g_c = projection_matrix(chain, outer)
    return float(np.max(np.abs(g_b @ g_c - g_b)))


def face_image(chain: ChainModel, sites: Iterable[int], source: Iterable[int],
               policy: NumericPolicy = DEFAULT_POLICY) -> Sites:
    """Face D of B with gamma_B(interior of the C face) inside the interior of the D face"""
    p = chain.p
    sites = as_sites(sites, p)
    source = as_sites(source, p)
    u = _harmonic_extensions(chain, sites)
    hit = [k for k in source if k not in sites]
    # sites of B whose potential vanishes on every off-face site of C
    silent = {
        i for idx, i in enumerate(sites)
        if all(u[idx, k] <= policy.support_tol for k in hit)
    }
    kept = (set(sites) & set(source)) | (set(sites) - silent)
    return tuple(sorted(kept))


def kernel_check(chain: ChainModel, sites: Iterable[int],
                 policy: NumericPolicy = DEFAULT_POLICY) -> Dict[str, Any]:
    """Compare ker(gamma_B) with span{v_k : k not in B} by ranks and containment"""
    p = chain.p
    sites = as_sites(sites, p)
    off = list(complement(sites, p))
    gamma = projection_matrix(chain, sites)
    rank = int(np.linalg.matrix_rank(gamma, tol=policy.harmonic_tol))
    if off:
        span_rank = int(np.linalg.matrix_rank(chain.v[off], tol=policy.harmonic_tol))
        containment = float(np.max(np.abs(chain.v[off] @ gamma.T)))
    else:
        span_rank, containment = 0, 0.0
    ok = (rank == len(sites) and span_rank == len(off)
          and containment < policy.harmonic_tol)
    return {"rank": rank, "span_rank": span_rank, "containment": containment, "ok": ok}


def trace_of_trace_check(chain: ChainModel, inner: Iterable[int], outer: Iterable[int]) -> float:
    """max |trace_B(trace_C r) - trace_B r| for B inside C, |B| >= 2"""
    inner = as_sites(inner, chain.p)
    outer = as_sites(outer, chain.p)
    if not set(inner) <= set(outer):
        raise ValidationError(f"face {inner} is not contained in {outer}")
    direct = trace_rates(chain, inner)
    outer_chain = build_chain(trace_rates(chain, outer).rB, chain.b)
    local = [outer.index(i) for i in inner]
    nested = trace_rates(outer_chain, local)
    return float(np.max(np.abs(nested.rB - direct.rB)))


def adjoint_trace_residual(chain: ChainModel, sites: Iterable[int]) -> float:
    """max |m_i r^{B,adj}(i,j) - m_j r^B(j,i)|: trace of the adjoint is the adjoint of the trace"""
    sites = as_sites(sites, chain.p)
    forward = trace_rates(chain, sites).rB
    backward = trace_rates(adjoint(chain), sites).rB
    m_b = chain.m[list(sites)]
    return float(np.max(np.abs(m_b[:, None] * backward - (m_b[:, None] * forward).T)))


def trace_stationarity_residual(chain: ChainModel, sites: Iterable[int]) -> float:
    """The restriction of m to B, renormalised, is stationary for r^B"""
    model = trace_rates(chain, sites)
    m_b = chain.m[list(model.sites)]
    m_b = m_b / m_b.sum()
    q_b = model.rB - np.diag(model.lambdaB)
    return float(np.max(np.abs(m_b @ q_b)))


@dataclass(frozen=True)
class HittingEstimate:
    sites: Sites
    frequencies: np.ndarray
    standard_errors: np.ndarray
    runs: int


def mc_hitting_oracle(chain: ChainModel, start: int, sites: Iterable[int], runs: int,
                      seed: int) -> HittingEstimate:
    """Empirical law of the first site of B hit from ``start`` (embedded jump chain)"""
    if runs < 1:
        raise ValidationError("runs must be at least 1")
    if not 0 <= int(start) < chain.p:
        raise ValidationError(f"start site {start} is outside 0..{chain.p - 1}")
    sites = as_sites(sites, chain.p)
    if start in sites:
        freq = np.array([1.0 if k == start else 0.0 for k in sites])
        return HittingEstimate(sites, freq, np.zeros(len(sites)), runs)
    rng = replica_generator(seed, 0)
    jump = np.cumsum(chain.r / chain.lam[:, None], axis=1)
    in_face = np.zeros(chain.p, dtype=bool)
    in_face[list(sites)] = True
    position = np.full(runs, start, dtype=np.int64)
    active = np.arange(runs)
    while active.size:
        u = (1.0 - rng.random(active.size)) * jump[position[active], -1]
        nxt = (jump[position[active]] < u[:, None]).sum(axis=1)
        position[active] = nxt
        active = active[~in_face[nxt]]
    counts = np.array([(position == k).sum() for k in sites], dtype=float)
    freq = counts / runs
    se = np.sqrt(freq * (1.0 - freq) / runs)
    logger.debug("hitting oracle from %d on %s: %s", start, sites, np.round(freq, 4))
    return HittingEstimate(sites, freq, se, runs)
