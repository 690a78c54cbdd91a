"""Superharmonic family F_A: closed-form generator values, region constants and grid checks."""
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import optimize

from .chain import ChainModel
from .config import DEFAULT_POLICY, NumericPolicy
from .diffusion import FaceCache, face_dynamics, generator_values, support_masks
from .errors import DegenerateFace, EmptyRegion, ValidationError
from .streams import replica_generator
from .testfunctions import ProductFunction, SupharmProfile
from .trace import Sites, as_sites, complement, face_mask, mask_sites, trace_rates

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SupharmSpec:
    """F_A(x) = prod_{k in A} x_k^(1+b) (1 - x_k^gamma)"""

    sites: Sites
    gamma: float
    b: float = 1.0

    def __post_init__(self):
        if not self.sites:
            raise ValidationError("the vanishing block A must be non-empty")
        if not 0 < self.gamma < 1:
            raise ValidationError(f"gamma = {self.gamma} must lie in (0, 1)")
        if self.b < 1:
            raise ValidationError(f"b = {self.b} must be at least 1")
        object.__setattr__(self, "sites", tuple(sorted(int(s) for s in self.sites)))

    @property
    def profile(self) -> SupharmProfile:
        return SupharmProfile(self.b, self.gamma)

    @property
    def function(self) -> ProductFunction:
        return ProductFunction(self.sites, self.profile)


@dataclass(frozen=True)
class SupharmRegion:
    """{x in the A+D face: max_A x_k <= lam, min_D x_i >= epsilon} with its constants"""

    a: Sites
    d: Sites
    epsilon: float
    lam: float
    M: float
    face_constants: Dict[Sites, float]

    @property
    def face(self) -> Sites:
        return tuple(sorted(self.a + self.d))

    @property
    def conservative(self) -> bool:
        """True when the single M exceeds the constant some face actually needs"""
        return any(m_c < self.M * (1 - 1e-12) for m_c in self.face_constants.values())


def eval_FA(spec: SupharmSpec, x: np.ndarray):
    x = np.asarray(x, dtype=float)
    values = spec.function.value(x)
    return float(values[0]) if x.ndim == 1 else values


def _rows(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def eval_generator_FA(spec: SupharmSpec, chain: ChainModel, face: Iterable[int], x: np.ndarray):
    """sum_{j in A} sum_{i in C} m_i v^C_i(j) (b d_j F / x_i - d_i d_j F) on the support face

    Rows of ``x`` on a lower face of C use the trace on C intersected with their
    support; rows whose support misses part of A give 0.
    """
    face = as_sites(face, chain.p)
    if len(face) < 2:
        raise DegenerateFace("the generator of F_A needs a face with at least two sites")
    x, single = _rows(x)
    fn = spec.function
    a = list(spec.sites)
    out = np.zeros(x.shape[0])
    masks = support_masks(x) & face_mask(face)
    for bits in np.unique(masks):
        sites = mask_sites(int(bits), chain.p)
        if len(sites) < 2 or not set(a) <= set(sites):
            continue
        rows = masks == bits
        xs = x[rows]
        trace = trace_rates(chain, sites)
        w = trace.vB[:, a]
        m_c = chain.m[list(sites)]
        grad = fn.gradient(xs)[:, a]
        hess = fn.hessian(xs)[:, list(sites)][:, :, a]
        first = spec.b * np.sum((m_c / xs[:, list(sites)]) * (grad @ w.T), axis=1)
        second = np.einsum("i,ij,nij->n", m_c, w, hess)
        out[rows] = first - second
    return float(out[0]) if single else out


def _fd_generator(value, xs, dyn, sites, flow, p, h):
    grad = np.zeros_like(xs)
    for j in range(p):
        step = np.zeros(p)
        step[j] = h
        grad[:, j] = (value(xs + step) - value(xs - step)) / (2 * h)
    total = np.sum(dyn.drift(xs) * grad, axis=1)
    centre = value(xs)
    for (ji, j), (ki, k) in itertools.permutations(enumerate(sites), 2):
        if flow[ji, ki] == 0:
            continue
        step = np.zeros(p)
        step[j], step[k] = h, -h
        second = (value(xs + step) - 2 * centre + value(xs - step)) / h ** 2
        total += 0.5 * flow[ji, ki] * second
    return total


def eval_generator_FA_fd(spec: SupharmSpec, chain: ChainModel, face: Iterable[int],
                         x: np.ndarray, h: float = 1e-3):
    """Face generator applied to F_A with central differences in place of derivatives.

    Differences at steps h and h/2 are combined by Richardson extrapolation, so the
    error is O(h^4). Points need every supported coordinate above h.
    """
    face = as_sites(face, chain.p)
    x, single = _rows(x)
    value = spec.function.value
    out = np.zeros(x.shape[0])
    masks = support_masks(x) & face_mask(face)
    for bits in np.unique(masks):
        sites = mask_sites(int(bits), chain.p)
        if len(sites) < 2:
            continue
        rows = masks == bits
        xs = x[rows]
        dyn = face_dynamics(chain, sites)
        flow = chain.m[list(sites)][:, None] * dyn.rB
        coarse = _fd_generator(value, xs, dyn, sites, flow, chain.p, h)
        fine = _fd_generator(value, xs, dyn, sites, flow, chain.p, h / 2)
        out[rows] = (4 * fine - coarse) / 3
    return float(out[0]) if single else out


def face_constant(spec: SupharmSpec, chain: ChainModel, face: Sites) -> float:
    """b(1+b)/(gamma(gamma+b+1)) max_{j in A} sum_{i in C\\A} m_i r^C(i,j) / (m_j lambda^C(j))"""
    trace = trace_rates(chain, face)
    pos = {s: idx for idx, s in enumerate(face)}
    others = [pos[i] for i in face if i not in spec.sites]
    ratios = []
    for j in spec.sites:
        inflow = sum(chain.m[face[i]] * trace.rB[i, pos[j]] for i in others)
        ratios.append(inflow / (chain.m[j] * trace.lambdaB[pos[j]]))
    g, b = spec.gamma, spec.b
    return b * (1 + b) / (g * (g + b + 1)) * max(ratios)


def _faces_between(a: Sites, d: Sites) -> List[Sites]:
    faces = []
    for size in range(1, len(d) + 1):
        for part in itertools.combinations(d, size):
            faces.append(tuple(sorted(a + part)))
    return faces


def find_lambda(spec: SupharmSpec, chain: ChainModel, d: Iterable[int], epsilon: float,
                policy: NumericPolicy = DEFAULT_POLICY) -> SupharmRegion:
    a = as_sites(spec.sites, chain.p)
    d = as_sites(d, chain.p)
    if set(a) & set(d):
        raise ValidationError(f"D = {d} must be disjoint from A = {a}")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if len(d) * epsilon >= 1:
        raise EmptyRegion(f"no point of the simplex has {len(d)} coordinates >= {epsilon}")
    constants = {face: face_constant(spec, chain, face) for face in _faces_between(a, d)}
    big_m = max(constants.values())
    g = spec.gamma

    def excess(lam: float) -> float:
        return max(big_m * lam ** (1 - g) - epsilon, (g + 1) * lam ** g - 1)

    if big_m == 0:
        lam = (1 / (1 + g)) ** (1 / g)
    elif excess(1.0) <= 0:
        lam = 1.0
    else:
        root = optimize.brentq(excess, 0.0, 1.0, xtol=policy.algebra_tol * 1e-3, rtol=1e-14)
        lam = root * (1 - 1e-12)
    if lam <= 0:
        raise EmptyRegion(f"no lambda > 0 satisfies the constraints at epsilon = {epsilon}")
    logger.debug("region for A=%s D=%s: M=%g lambda=%g", a, d, big_m, lam)
    return SupharmRegion(a=a, d=d, epsilon=float(epsilon), lam=float(lam), M=float(big_m),
                         face_constants=constants)


def simplex_lattice(parts: int, n: int) -> np.ndarray:
    """All points (k_1, .., k_parts)/n with non-negative integer k summing to n"""
    rows = []
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        edges = (-1,) + bars + (n + parts - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(parts)])
    return np.asarray(rows, dtype=float) / n


def region_grid(region: SupharmRegion, face: Sites, p: int, density: int) -> np.ndarray:
    """Deterministic grid of the region restricted to the face C = A + D'"""
    a = list(region.a)
    d_part = [i for i in face if i not in region.a]
    levels = region.lam * np.arange(1, density + 1) / density
    a_values = np.array(list(itertools.product(levels, repeat=len(a))))
    weights = simplex_lattice(len(d_part), density)
    points = []
    for a_row in a_values:
        room = 1.0 - a_row.sum() - len(d_part) * region.epsilon
        if room < 0:
            continue
        block = np.zeros((weights.shape[0], p))
        block[:, a] = a_row
        block[:, d_part] = region.epsilon + room * weights
        points.append(block)
    if not points:
        return np.zeros((0, p))
    return np.vstack(points)


def verify_supharmonic(spec: SupharmSpec, chain: ChainModel, d: Iterable[int], epsilon: float,
                       grid_density: int = 25,
                       policy: NumericPolicy = DEFAULT_POLICY) -> Dict[str, Any]:
    """Largest value of the generator of F_A over grids of every face between A and A+D"""
    region = find_lambda(spec, chain, d, epsilon, policy)
    faces = []
    worst_value, worst_point = -np.inf, None
    for face, m_c in region.face_constants.items():
        grid = region_grid(region, face, chain.p, grid_density)
        if grid.shape[0] == 0:
            faces.append({"face": [s + 1 for s in face], "M": m_c, "points": 0,
                          "max_value": None})
            continue
        values = eval_generator_FA(spec, chain, face, grid)
        k = int(np.argmax(values))
        faces.append({"face": [s + 1 for s in face], "M": m_c, "points": int(grid.shape[0]),
                      "max_value": float(values[k])})
        if values[k] > worst_value:
            worst_value, worst_point = float(values[k]), grid[k].tolist()
    ok = worst_point is not None and worst_value <= policy.supharm_tol
    logger.info("superharmonic check A=%s D=%s: max %.3g over %d faces",
                [s + 1 for s in region.a], [s + 1 for s in region.d], worst_value, len(faces))
    return {
        "a": [s + 1 for s in region.a],
        "d": [s + 1 for s in region.d],
        "b": spec.b,
        "gamma": spec.gamma,
        "epsilon": region.epsilon,
        "lambda": region.lam,
        "M": region.M,
        "conservative": region.conservative,
        "grid_density": grid_density,
        "faces": faces,
        "max_value": worst_value if worst_point is not None else None,
        "argmax": worst_point,
        "tolerance": policy.supharm_tol,
        "ok": bool(ok),
    }


def vanishing_check(spec: SupharmSpec, chain: ChainModel, samples: int = 200, seed: int = 0,
                    cache: Optional[FaceCache] = None) -> Dict[str, Any]:
    """F_A and its generator vanish on the face S minus A"""
    target = complement(spec.sites, chain.p)
    if not target:
        raise ValidationError("A covers every site, the target face is empty")
    rng = replica_generator(seed, 0)
    x = np.zeros((samples, chain.p))
    x[:, list(target)] = rng.dirichlet(np.ones(len(target)), size=samples)
    cache = cache or FaceCache(chain)
    values = spec.function.value(x)
    closed = eval_generator_FA(spec, chain, tuple(range(chain.p)), x)
    via_face = generator_values(cache, spec.function, x)
    worst = float(max(np.abs(values).max(), np.abs(closed).max(), np.abs(via_face).max()))
    return {"face": [s + 1 for s in target], "samples": samples, "max_abs": worst,
            "ok": worst == 0.0}
