"""Condensing zero-range process on N particles, simulated in diffusive time tN^2."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .chain import ChainModel
from .config import default_threads
from .errors import EmptyConfig, HorizonOverflow, ValidationError
from .streams import ReplicaStreams, run_chunks

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JumpRateFamily:
    """Departure rates g_i(n); ``table[i, n]`` holds g_i(n) for the table kind.

    Beyond the end of a table the tail rule g_i(n) = m_i (1 + b/n) applies.
    """

    kind: str
    b: float
    m: np.ndarray
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("default", "table"):
            raise ValidationError(f"unknown jump rate family {self.kind!r}")
        if self.kind == "table":
            table = np.asarray(self.table, dtype=float)
            if table.ndim != 2 or table.shape[0] != self.m.size or table.shape[1] < 2:
                raise ValidationError("rate table must have one row g_i(0..L) per site")
            if np.any(table[:, 0] != 0):
                raise ValidationError("g_i(0) must be 0")
            if np.any(table[:, 1:] <= 0) or not np.all(np.isfinite(table)):
                raise ValidationError("g_i(n) must be positive and finite for n >= 1")
            object.__setattr__(self, "table", table)

    def _tail(self, eta: np.ndarray) -> np.ndarray:
        return np.where(eta > 0, self.m * (1.0 + self.b / np.maximum(eta, 1)), 0.0)

    def rates(self, eta: ArrayLike) -> np.ndarray:
        """g_i(eta_i) for occupation rows eta of shape (..., p)"""
        eta = np.asarray(eta, dtype=np.int64)
        out = self._tail(eta)
        if self.kind == "table":
            size = self.table.shape[1]
            inside = eta < size
            looked_up = np.take_along_axis(
                np.broadcast_to(self.table, eta.shape[:-1] + self.table.shape),
                np.minimum(eta, size - 1)[..., None], axis=-1)[..., 0]
            out = np.where(inside, looked_up, out)
        return out

    def tail_residuals(self, ns: Sequence[int]) -> np.ndarray:
        """n (g_i(n)/m_i - 1) - b at each supplied n; rows are sites"""
        ns = np.asarray(ns, dtype=np.int64)
        if np.any(ns < 1):
            raise ValidationError("tail residuals need n >= 1")
        p = self.m.size
        eta = np.repeat(ns[:, None], p, axis=1)
        g = self.rates(eta).T
        return ns[None, :] * (g / self.m[:, None] - 1.0) - self.b


def default_rates(chain: ChainModel) -> JumpRateFamily:
    return JumpRateFamily(kind="default", b=chain.b, m=chain.m)


def table_rates(chain: ChainModel, table: ArrayLike) -> JumpRateFamily:
    return JumpRateFamily(kind="table", b=chain.b, m=chain.m, table=np.asarray(table))


@dataclass(frozen=True)
class ZrpState:
    eta: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta)
        if eta.ndim != 1 or np.any(eta < 0) or not np.all(eta == np.round(eta)):
            raise ValidationError("occupations must be non-negative integers")
        object.__setattr__(self, "eta", eta.astype(np.int64))

    @property
    def N(self) -> int:
        return int(self.eta.sum())


def embed(state: ZrpState) -> np.ndarray:
    if state.N == 0:
        raise EmptyConfig("cannot embed a configuration without particles")
    return state.eta / state.N


def initial_configuration(x0: Sequence[float], n: int) -> ZrpState:
    """Largest-remainder rounding of N x0 to N particles"""
    x0 = np.asarray(x0, dtype=float)
    if n < 1:
        raise EmptyConfig("N must be at least 1")
    if np.any(x0 < 0) or abs(x0.sum() - 1.0) > 1e-6:
        raise ValidationError("x0 must lie in the simplex")
    target = n * x0 / x0.sum()
    eta = np.floor(target).astype(np.int64)
    short = n - int(eta.sum())
    if short:
        # stable order so ties go to the lower site
        order = np.argsort(-(target - eta), kind="stable")
        eta[order[:short]] += 1
    return ZrpState(eta)


def event_rate(chain: ChainModel, family: JumpRateFamily, eta: ArrayLike) -> np.ndarray:
    """Total jump rate Lambda(eta) = sum_i g_i(eta_i) lambda_i"""
    return family.rates(eta) @ chain.lam


@dataclass(frozen=True)
class ZrpPath:
    sample_times: np.ndarray
    points: np.ndarray
    seed: int
    N: int
    events: int = 0
    replica: int = 0


@dataclass(frozen=True)
class ZrpEnsemble:
    sample_times: np.ndarray
    points: np.ndarray
    seed: int
    N: int
    events: np.ndarray
    horizon: float

    @property
    def replicas(self) -> int:
        return self.points.shape[0]

    def path(self, replica: int) -> ZrpPath:
        return ZrpPath(self.sample_times, self.points[replica], self.seed, self.N,
                       int(self.events[replica]), replica)


def _check_grid(grid: np.ndarray, horizon: float) -> None:
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("sample grid must be non-empty and increasing")
    if grid[0] < 0 or grid[-1] > horizon * (1 + 1e-12):
        raise ValidationError("sample grid must lie within [0, T]")


def _simulate_chunk(chain: ChainModel, family: JumpRateFamily, eta0: np.ndarray,
                    horizon: float, grid: np.ndarray, seed: int, replicas: np.ndarray,
                    max_events: int):
    p = chain.p
    n_particles = int(eta0.sum())
    speed = float(n_particles) ** 2
    n_rep = replicas.size
    n_grid = grid.size
    eta = np.tile(eta0, (n_rep, 1))
    t = np.zeros(n_rep)
    gi = np.zeros(n_rep, dtype=np.int64)
    events = np.zeros(n_rep, dtype=np.int64)
    points = np.zeros((n_rep, n_grid, p))
    active = np.arange(n_rep)
    streams = ReplicaStreams(seed, replicas, width=2)
    r_flat = chain.r.reshape(-1)

    while active.size:
        g = family.rates(eta[active])
        weights = np.cumsum((g[:, :, None] * chain.r[None]).reshape(active.size, -1), axis=1)
        total = weights[:, -1]
        draws = streams.draw(active)
        t_next = t[active] - np.log(draws[:, 0]) / (speed * total)
        # the state holds on [t, t_next)
        current = eta[active] / n_particles
        while True:
            due = gi[active] < n_grid
            due[due] = grid[gi[active][due]] < t_next[due]
            if not due.any():
                break
            rows = active[due]
            points[rows, gi[rows]] = current[due]
            gi[rows] += 1
        finished = t_next > horizon
        moving = active[~finished]
        if moving.size:
            target = draws[~finished, 1] * total[~finished]
            idx = (weights[~finished] < target[:, None]).sum(axis=1)
            idx = np.minimum(idx, r_flat.size - 1)
            src, dst = np.divmod(idx, p)
            eta[moving, src] -= 1
            eta[moving, dst] += 1
            t[moving] = t_next[~finished]
            events[moving] += 1
            if events[moving].max() > max_events:
                raise HorizonOverflow(
                    f"more than {max_events} events before T = {horizon} at N = {n_particles}")
        active = moving
    logger.debug("zrp chunk of %d replicas, %d events", n_rep, int(events.sum()))
    return points, events


def simulate_zrp_ensemble(chain: ChainModel, family: JumpRateFamily, eta0: ZrpState,
                          horizon: float, sample_grid: Sequence[float], seed: int,
                          replicas: int = 1, threads: Optional[int] = None,
                          max_events: int = 10**9) -> ZrpEnsemble:
    if eta0.N == 0:
        raise EmptyConfig("the initial configuration has no particles")
    if eta0.eta.size != chain.p:
        raise ValidationError(f"configuration has {eta0.eta.size} sites, chain has {chain.p}")
    grid = np.asarray(sample_grid, dtype=float)
    _check_grid(grid, horizon)
    parts = run_chunks(
        lambda idx: _simulate_chunk(chain, family, eta0.eta, horizon, grid, seed, idx,
                                    max_events),
        replicas, threads or default_threads())
    points = np.concatenate([part[0] for part in parts])
    events = np.concatenate([part[1] for part in parts])
    logger.info("simulated %d zrp paths with N=%d to T=%g, %d events",
                replicas, eta0.N, horizon, int(events.sum()))
    return ZrpEnsemble(grid, points, seed, eta0.N, events, horizon)


def simulate_zrp(chain: ChainModel, family: JumpRateFamily, eta0: ZrpState, horizon: float,
                 sample_grid: Sequence[float], seed: int, replica: int = 0,
                 max_events: int = 10**9) -> ZrpPath:
    """Single path; identical to replica ``replica`` of an ensemble with the same seed"""
    if eta0.N == 0:
        raise EmptyConfig("the initial configuration has no particles")
    if eta0.eta.size != chain.p:
        raise ValidationError(f"configuration has {eta0.eta.size} sites, chain has {chain.p}")
    grid = np.asarray(sample_grid, dtype=float)
    _check_grid(grid, horizon)
    points, events = _simulate_chunk(chain, family, eta0.eta, horizon, grid, seed,
                                     np.array([replica]), max_events)
    return ZrpPath(grid, points[0], seed, eta0.N, int(events[0]), replica)
