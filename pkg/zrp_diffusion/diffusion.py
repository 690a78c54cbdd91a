"""Absorbed diffusion on the simplex: face dynamics, Euler-Maruyama paths, absorption bound."""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .chain import ChainModel
from .config import DEFAULT_POLICY, NumericPolicy, default_threads
from .errors import BadQ, DegenerateFace, NonFiniteDrift, StepUnderflow, ValidationError
from .streams import ReplicaStreams, run_chunks
from .testfunctions import TestFunction
from .trace import Sites, as_sites, face_mask, mask_sites, trace_rates

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FaceDynamics:
    """Drift and noise of the face generator on B.

    ``v`` holds v^B_j in row j for j in B (zero rows elsewhere);
    ``covariance`` is Q_B = sum_{j,k in B} m_j r^B(j,k)(e_j - e_k)(e_j - e_k)^T and
    ``noise`` a factor with noise @ noise.T == covariance.
    """

    sites: Sites
    b: float
    m: np.ndarray
    rB: np.ndarray
    v: np.ndarray
    covariance: np.ndarray
    noise: np.ndarray

    @property
    def mask(self) -> int:
        return face_mask(self.sites)

    def drift(self, x: np.ndarray) -> np.ndarray:
        """b * sum_{j in B} (m_j / x_j) v^B_j, rows of x are points"""
        x = np.atleast_2d(x)
        xb = x[:, list(self.sites)]
        if np.any(xb <= 0):
            raise NonFiniteDrift(f"a coordinate of face {self.sites} is 0 inside the face")
        weights = np.zeros_like(x, dtype=float)
        weights[:, list(self.sites)] = self.b * self.m[list(self.sites)] / xb
        return weights @ self.v

    def quadratic_form(self, w: np.ndarray) -> np.ndarray:
        """1/2 sum_{j,k} m_j r^B(j,k) <w, e_j - e_k>^2"""
        w = np.atleast_2d(w)
        return 0.5 * np.einsum("ni,ij,nj->n", w, self.covariance, w)


def face_dynamics(chain: ChainModel, sites: Iterable[int],
                  policy: NumericPolicy = DEFAULT_POLICY) -> FaceDynamics:
    sites = as_sites(sites, chain.p)
    if len(sites) < 2:
        raise DegenerateFace("face dynamics need at least two sites")
    trace = trace_rates(chain, sites)
    p = chain.p
    idx = list(sites)
    v = np.zeros((p, p))
    v[idx] = trace.vB
    flow = chain.m[idx][:, None] * trace.rB
    sym = flow + flow.T
    block = np.diag(sym.sum(axis=1)) - sym
    covariance = np.zeros((p, p))
    covariance[np.ix_(idx, idx)] = block
    # factor the face block only so off-face coordinates get exactly no noise
    values, vectors = np.linalg.eigh(block)
    values = np.where(values > policy.algebra_tol * max(values.max(), 1.0), values, 0.0)
    noise = np.zeros((p, p))
    noise[np.ix_(idx, idx)] = vectors * np.sqrt(values)
    return FaceDynamics(sites=sites, b=chain.b, m=chain.m, rB=trace.rB, v=v,
                        covariance=covariance, noise=noise)


class FaceCache:
    """FaceDynamics for every face of size >= 2, keyed by bitmask"""

    EAGER_MAX_SITES = 10

    def __init__(self, chain: ChainModel, policy: NumericPolicy = DEFAULT_POLICY):
        self.chain = chain
        self.policy = policy
        self._faces: Dict[int, FaceDynamics] = {}
        if chain.p <= self.EAGER_MAX_SITES:
            for size in range(2, chain.p + 1):
                for sites in itertools.combinations(range(chain.p), size):
                    self._faces[face_mask(sites)] = face_dynamics(chain, sites, policy)
            logger.debug("precomputed %d faces", len(self._faces))

    def get(self, mask: int) -> FaceDynamics:
        face = self._faces.get(mask)
        if face is None:
            face = face_dynamics(self.chain, mask_sites(mask, self.chain.p), self.policy)
            self._faces[mask] = face
        return face


def face_generator_apply(face: FaceDynamics, fn: TestFunction, x: np.ndarray) -> np.ndarray:
    """(L^B F)(x) = grad F . b^B(x) + 1/2 tr(Q_B Hess F) at interior points of the face"""
    x = np.atleast_2d(x)
    first = np.sum(face.drift(x) * fn.gradient(x), axis=1)
    second = 0.5 * np.einsum("ij,nij->n", face.covariance, fn.hessian(x))
    return first + second


def support_masks(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    bits = 1 << np.arange(x.shape[1], dtype=np.int64)
    return ((x > 0) * bits).sum(axis=1)


def generator_values(cache: FaceCache, fn: TestFunction, x: np.ndarray) -> np.ndarray:
    """Generator of the face given by each point's support; 0 at vertices"""
    x = np.atleast_2d(x)
    masks = support_masks(x)
    out = np.zeros(x.shape[0])
    for mask in np.unique(masks):
        if bin(int(mask)).count("1") < 2:
            continue
        rows = masks == mask
        out[rows] = face_generator_apply(cache.get(int(mask)), fn, x[rows])
    return out


def em_step(x: np.ndarray, face: FaceDynamics, dt, gaussians: np.ndarray) -> np.ndarray:
    """One Euler-Maruyama step on the face, renormalised onto the hyperplane sum = 1"""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (x.shape[0],))
    if np.any(dt <= 0):
        raise ValidationError("dt must be positive")
    g = np.atleast_2d(gaussians)
    step = x + face.drift(x) * dt[:, None] + np.sqrt(dt)[:, None] * (g @ face.noise.T)
    return step / step.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class DiffusionControls:
    dt_base: float = 1e-4
    eps_abs: float = 1e-4
    x_ref: float = 0.05
    dt_floor: float = 1e-14

    def __post_init__(self):
        if min(self.dt_base, self.eps_abs, self.x_ref, self.dt_floor) <= 0:
            raise ValidationError("diffusion controls must be positive")

    def step_size(self, min_coordinate: np.ndarray) -> np.ndarray:
        return self.dt_base * np.minimum(1.0, (min_coordinate / self.x_ref) ** 2)


@dataclass
class AbsorptionRecord:
    """Absorption times and the faces entered; faces[0] is always S.

    ``faces[n]`` is the support after ``sigmas[n - 1]``; a start on a proper
    face is recorded as an absorption at time 0.
    """

    sigmas: List[float] = field(default_factory=list)
    faces: List[Sites] = field(default_factory=list)
    terminal: Optional[int] = None
    multi_events: int = 0

    def first_positive_sigma(self) -> Optional[float]:
        for s in self.sigmas:
            if s > 0:
                return s
        return None


@dataclass(frozen=True)
class DiffusionPath:
    sample_times: np.ndarray
    points: np.ndarray
    masks: np.ndarray
    record: AbsorptionRecord
    seed: int
    replica: int = 0


@dataclass(frozen=True)
class DiffusionEnsemble:
    sample_times: np.ndarray
    points: np.ndarray
    masks: np.ndarray
    records: List[AbsorptionRecord]
    seed: int
    horizon: float

    @property
    def replicas(self) -> int:
        return self.points.shape[0]

    def path(self, replica: int) -> DiffusionPath:
        return DiffusionPath(self.sample_times, self.points[replica], self.masks[replica],
                             self.records[replica], self.seed, replica)


def _check_start(x0: Sequence[float], p: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (p,):
        raise ValidationError(f"x0 must have {p} coordinates")
    if np.any(x0 < 0) or abs(x0.sum() - 1.0) > 1e-6:
        raise ValidationError("x0 must lie in the simplex")
    return x0 / x0.sum()


def _default_grid(horizon: float) -> np.ndarray:
    return np.linspace(0.0, horizon, 101)


def _simulate_chunk(cache: FaceCache, x0: np.ndarray, horizon: float, grid: np.ndarray,
                    controls: DiffusionControls, seed: int, replicas: np.ndarray):
    chain = cache.chain
    p = chain.p
    n_rep = replicas.size
    n_grid = grid.size
    full = (1 << p) - 1
    x = np.tile(x0, (n_rep, 1))
    t = np.zeros(n_rep)
    start_mask = int(support_masks(x0)[0])
    mask = np.full(n_rep, start_mask, dtype=np.int64)
    gi = np.zeros(n_rep, dtype=np.int64)
    done = np.zeros(n_rep, dtype=bool)
    vertex = np.zeros(n_rep, dtype=bool)
    points = np.zeros((n_rep, n_grid, p))
    masks_out = np.zeros((n_rep, n_grid), dtype=np.int64)
    records = [AbsorptionRecord(faces=[tuple(range(p))]) for _ in range(n_rep)]
    if start_mask != full:
        start_sites = mask_sites(start_mask, p)
        for rec in records:
            rec.sigmas.append(0.0)
            rec.faces.append(start_sites)
            if len(start_sites) == 1:
                rec.terminal = start_sites[0]
        if len(start_sites) == 1:
            vertex[:] = True
    streams = ReplicaStreams(seed, replicas, width=p, kind="normal")
    steps = 0

    while True:
        # record every grid time already reached
        while True:
            due = (~done) & (gi < n_grid)
            due[due] = grid[gi[due]] <= t[due] + 1e-12
            if not due.any():
                break
            rows = np.flatnonzero(due)
            points[rows, gi[rows]] = x[rows]
            masks_out[rows, gi[rows]] = mask[rows]
            gi[rows] += 1
        finished = (~done) & (vertex | (t >= horizon - 1e-12))
        for row in np.flatnonzero(finished):
            points[row, gi[row]:] = x[row]
            masks_out[row, gi[row]:] = mask[row]
            gi[row] = n_grid
        done |= finished
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        steps += 1
        for face_bits in np.unique(mask[active]):
            rows = active[mask[active] == face_bits]
            face = cache.get(int(face_bits))
            xs = x[rows]
            dt_adapt = controls.step_size(xs[:, list(face.sites)].min(axis=1))
            if np.any(dt_adapt < controls.dt_floor):
                raise StepUnderflow(f"adaptive step fell below {controls.dt_floor}")
            next_stop = np.where(gi[rows] < n_grid, grid[np.minimum(gi[rows], n_grid - 1)],
                                 horizon)
            next_stop = np.minimum(next_stop, horizon)
            gap = next_stop - t[rows]
            dt = np.minimum(dt_adapt, gap)
            t_new = np.where(dt_adapt >= gap, next_stop, t[rows] + dt)
            x_new = em_step(xs, face, dt, streams.draw(rows))
            low = (x_new <= controls.eps_abs)
            low[:, [i for i in range(p) if i not in face.sites]] = False
            for k in np.flatnonzero(low.any(axis=1)):
                row = rows[k]
                remaining = [i for i in face.sites if not low[k, i]]
                if not remaining:
                    remaining = [int(np.argmax(x_new[k]))]
                point = np.zeros(p)
                point[remaining] = np.maximum(x_new[k, remaining], 0.0)
                point /= point.sum()
                rec = records[row]
                rec.sigmas.append(float(t_new[k]))
                rec.faces.append(tuple(remaining))
                if len(face.sites) - len(remaining) > 1:
                    rec.multi_events += 1
                if len(remaining) == 1:
                    rec.terminal = remaining[0]
                    point = np.zeros(p)
                    point[remaining[0]] = 1.0
                    vertex[row] = True
                x_new[k] = point
                mask[row] = face_mask(remaining)
            x[rows] = x_new
            t[rows] = t_new
    logger.debug("diffusion chunk of %d replicas took %d steps", n_rep, steps)
    return points, masks_out, records


def simulate_diffusion_ensemble(chain: ChainModel, x0: Sequence[float], horizon: float,
                                controls: DiffusionControls, seed: int, replicas: int = 1,
                                grid: Optional[Sequence[float]] = None,
                                threads: Optional[int] = None,
                                cache: Optional[FaceCache] = None) -> DiffusionEnsemble:
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    x0 = _check_start(x0, chain.p)
    grid = _default_grid(horizon) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > horizon + 1e-12:
        raise ValidationError("sample grid must be increasing within [0, T]")
    cache = cache or FaceCache(chain)
    parts = run_chunks(
        lambda idx: _simulate_chunk(cache, x0, horizon, grid, controls, seed, idx),
        replicas, threads or default_threads())
    points = np.concatenate([part[0] for part in parts])
    masks = np.concatenate([part[1] for part in parts])
    records = [rec for part in parts for rec in part[2]]
    at_vertex = sum(rec.terminal is not None for rec in records)
    logger.info("simulated %d diffusion paths to T=%g, %d reached a vertex",
                replicas, horizon, at_vertex)
    return DiffusionEnsemble(grid, points, masks, records, seed, horizon)


def simulate_diffusion(chain: ChainModel, x0: Sequence[float], horizon: float,
                       controls: DiffusionControls, seed: int,
                       grid: Optional[Sequence[float]] = None, replica: int = 0,
                       cache: Optional[FaceCache] = None) -> DiffusionPath:
    """Single path; identical to replica ``replica`` of an ensemble with the same seed"""
    x0 = _check_start(x0, chain.p)
    grid = _default_grid(horizon) if grid is None else np.asarray(grid, dtype=float)
    cache = cache or FaceCache(chain)
    points, masks, records = _simulate_chunk(cache, x0, horizon, grid, controls, seed,
                                             np.array([replica]))
    return DiffusionPath(grid, points[0], masks[0], records[0], seed, replica)


def separation(chain: ChainModel, sites: Iterable[int]) -> float:
    """d(B) = min_{j in B} 1/2 sum_{k != j} (m_j r(j,k) + m_k r(k,j))"""
    sites = as_sites(sites, chain.p)
    flow = chain.m[:, None] * chain.r
    total = 0.5 * (flow.sum(axis=1) + flow.sum(axis=0))
    return float(total[list(sites)].min())


def absorption_bound(sites: Iterable[int], chain: ChainModel, q: float) -> float:
    """Upper bound on the mean first absorption time from a point with support B"""
    sites = as_sites(sites, chain.p)
    if len(sites) < 2:
        raise DegenerateFace("the absorption bound needs a face with at least two sites")
    if q <= chain.b:
        raise BadQ(f"q = {q} must exceed b = {chain.b}")
    n = len(sites)
    return n ** max(q - 1.0, 1.0) / ((q + 1.0) * (q - chain.b) * separation(chain, sites))


def absorption_bound_min(sites: Iterable[int], chain: ChainModel,
                         q_grid: Sequence[float]) -> Tuple[float, float]:
    """(q, bound) minimising the bound over the admissible part of q_grid"""
    admissible = [q for q in q_grid if q > chain.b]
    if not admissible:
        raise BadQ(f"no q in {list(q_grid)} exceeds b = {chain.b}")
    bounds = [absorption_bound(sites, chain, q) for q in admissible]
    best = int(np.argmin(bounds))
    return admissible[best], bounds[best]
