"""Statistical comparison of ZRP and diffusion ensembles, absorption and martingale checks."""
import logging
from typing import Any, Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import integrate, stats
from scipy.spatial.distance import cdist

from .chain import ChainModel
from .diffusion import (AbsorptionRecord, DiffusionControls, FaceCache, absorption_bound_min,
                        generator_values, simulate_diffusion_ensemble, support_masks)
from .errors import MismatchedCheckpoints, TooFewReplicas, ValidationError
from .testfunctions import TestFunction

logger = logging.getLogger(__name__)

CHECKPOINT_TOL = 1e-9


class Ensemble(Protocol):
    sample_times: np.ndarray
    points: np.ndarray


def wasserstein_1d(u: Sequence[float], v: Sequence[float]) -> float:
    return float(stats.wasserstein_distance(u, v))


def energy_distance(x: np.ndarray, y: np.ndarray) -> float:
    """2 E|X - Y| - E|X - X'| - E|Y - Y'| over the empirical measures"""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    cross = cdist(x, y).mean()
    within_x = cdist(x, x).mean()
    within_y = cdist(y, y).mean()
    return float(max(2 * cross - within_x - within_y, 0.0))


def bootstrap_interval(statistic: Callable[[np.ndarray, np.ndarray], float], x: np.ndarray,
                       y: np.ndarray, seed: int, n_resamples: int = 1000,
                       confidence: float = 0.95) -> Tuple[float, float, float]:
    """Point estimate and percentile interval, resampling the rows of each sample"""
    estimate = statistic(x, y)

    def on_rows(ix, iy):
        return statistic(x[ix.astype(np.int64)], y[iy.astype(np.int64)])

    result = stats.bootstrap((np.arange(len(x)), np.arange(len(y))), on_rows,
                             n_resamples=n_resamples, confidence_level=confidence,
                             vectorized=False, paired=False, method="percentile",
                             random_state=np.random.default_rng(seed))
    low = float(result.confidence_interval.low)
    high = float(result.confidence_interval.high)
    # the interval always covers the point estimate
    return estimate, min(low, estimate), max(high, estimate)


def mean_interval(values: Sequence[float], confidence: float = 0.95) -> Tuple[float, float, float]:
    """Mean with a normal-theory interval"""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if values.size < 2:
        return mean, mean, mean
    half = stats.norm.ppf(0.5 + confidence / 2) * values.std(ddof=1) / np.sqrt(values.size)
    return mean, mean - float(half), mean + float(half)


def checkpoint_index(times: np.ndarray, t: float) -> int:
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > CHECKPOINT_TOL:
        raise MismatchedCheckpoints(f"checkpoint {t} is not on the sample grid")
    return k


class DistanceEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int
    time: float
    w1: List[float]
    w1_ci: List[Tuple[float, float]]
    w1_max: float
    w1_max_ci: Tuple[float, float]
    energy: float
    energy_ci: Tuple[float, float]


class CheckpointVerdict(BaseModel):
    model_config = ConfigDict(extra="forbid")

    time: float
    decreasing: bool
    separated: bool
    largest_below_threshold: bool
    converging: bool


class ComparisonReport(BaseModel):
    """Distances between ZRP marginals at each N and the diffusion marginal."""

    model_config = ConfigDict(extra="forbid")

    checkpoints: List[float]
    ns: List[int]
    replicas: Dict[str, int]
    seed: int
    n_resamples: int
    threshold: float
    distances: List[DistanceEntry]
    verdicts: List[CheckpointVerdict]
    converging: bool
    absorption: Optional[Dict[str, Any]] = None
    dynkin: Optional[List[Dict[str, Any]]] = None

    def entry(self, n: int, time: float) -> DistanceEntry:
        for e in self.distances:
            if e.n == n and abs(e.time - time) <= CHECKPOINT_TOL:
                return e
        raise KeyError((n, time))


def _max_w1(x: np.ndarray, y: np.ndarray) -> float:
    return max(wasserstein_1d(x[:, i], y[:, i]) for i in range(x.shape[1]))


def compare_laws(zrp: Mapping[int, Ensemble], diffusion: Ensemble, checkpoints: Sequence[float],
                 seed: int = 0, n_resamples: int = 1000, min_replicas: int = 200,
                 threshold: float = 0.05) -> ComparisonReport:
    """Fixed-time marginal distances for every N, with bootstrap intervals and verdicts.

    A checkpoint is converging when the max-coordinate W1 strictly decreases
    along increasing N, the interval at the smallest N lies above the one at
    the largest N, and the largest N is below ``threshold``.
    """
    if not zrp:
        raise ValidationError("no ZRP ensembles to compare")
    if n_resamples < 1000:
        raise ValidationError("at least 1000 bootstrap resamples are required")
    checkpoints = [float(t) for t in checkpoints]
    ns = sorted(zrp)
    replicas = {"diffusion": diffusion.points.shape[0]}
    replicas.update({f"zrp_{n}": zrp[n].points.shape[0] for n in ns})
    for name, count in replicas.items():
        if count < min_replicas:
            raise TooFewReplicas(f"{name} has {count} replicas, need {min_replicas}")
    diff_idx = [checkpoint_index(diffusion.sample_times, t) for t in checkpoints]
    entries: List[DistanceEntry] = []
    for n in ns:
        ens = zrp[n]
        if ens.points.shape[2] != diffusion.points.shape[2]:
            raise ValidationError(f"ZRP ensemble at N={n} has a different number of sites")
        for t, di in zip(checkpoints, diff_idx):
            x = ens.points[:, checkpoint_index(ens.sample_times, t)]
            y = diffusion.points[:, di]
            w1, w1_ci = [], []
            for i in range(x.shape[1]):
                est, lo, hi = bootstrap_interval(
                    lambda a, b, i=i: wasserstein_1d(a[:, i], b[:, i]), x, y, seed, n_resamples)
                w1.append(est)
                w1_ci.append((lo, hi))
            mx, mx_lo, mx_hi = bootstrap_interval(_max_w1, x, y, seed, n_resamples)
            en, en_lo, en_hi = bootstrap_interval(energy_distance, x, y, seed, n_resamples)
            entries.append(DistanceEntry(n=n, time=t, w1=w1, w1_ci=w1_ci, w1_max=mx,
                                         w1_max_ci=(mx_lo, mx_hi), energy=en,
                                         energy_ci=(en_lo, en_hi)))
            logger.debug("N=%d t=%g: max W1 %.4f [%.4f, %.4f]", n, t, mx, mx_lo, mx_hi)
    verdicts = []
    for t in checkpoints:
        row = [e for e in entries if e.time == t]
        values = np.array([e.w1_max for e in row])
        decreasing = bool(np.all(np.diff(values) < 0))
        separated = len(row) > 1 and row[0].w1_max_ci[0] > row[-1].w1_max_ci[1]
        below = row[-1].w1_max < threshold
        verdicts.append(CheckpointVerdict(time=t, decreasing=decreasing, separated=separated,
                                          largest_below_threshold=below,
                                          converging=decreasing and separated and below))
    converging = all(v.converging for v in verdicts)
    logger.info("compared %d ZRP ensembles at %d checkpoints: converging=%s",
                len(ns), len(checkpoints), converging)
    return ComparisonReport(checkpoints=checkpoints, ns=ns, replicas=replicas, seed=seed,
                            n_resamples=n_resamples, threshold=threshold, distances=entries,
                            verdicts=verdicts, converging=converging)


def _starting_face(record: AbsorptionRecord) -> Tuple[int, ...]:
    """Support just before the first positive absorption time"""
    face = record.faces[0]
    for sigma, nxt in zip(record.sigmas, record.faces[1:]):
        if sigma > 0:
            break
        face = nxt
    return face


def _vertex_time(record: AbsorptionRecord) -> Optional[float]:
    if record.terminal is None:
        return None
    return record.sigmas[-1] if record.sigmas else 0.0


def absorption_stats(records: Sequence[AbsorptionRecord], chain: ChainModel,
                     q_grid: Sequence[float] = (1.5, 2.0, 3.0, 4.0),
                     horizon: Optional[float] = None) -> Dict[str, Any]:
    """Empirical first absorption time against the bound, plus vertex and multi-hit counts.

    Paths still on their starting face at the horizon are censored and left
    out of the mean, which therefore understates the true mean.
    """
    if not records:
        raise ValidationError("no absorption records")
    start_faces = {_starting_face(rec) for rec in records}
    firsts = []
    censored = 0
    for rec in records:
        if len(_starting_face(rec)) == 1:
            firsts.append(0.0)
            continue
        sigma = rec.first_positive_sigma()
        if sigma is None:
            censored += 1
        else:
            firsts.append(sigma)
    firsts = np.asarray(firsts, dtype=float)
    summary: Dict[str, Any] = {
        "paths": len(records),
        "absorbed": int(firsts.size),
        "censored": censored,
        "fraction_absorbed": firsts.size / len(records),
    }
    if firsts.size:
        se = float(firsts.std(ddof=1) / np.sqrt(firsts.size)) if firsts.size > 1 else 0.0
        summary.update({
            "mean_sigma1": float(firsts.mean()),
            "se_sigma1": se,
            "quantiles_sigma1": {str(q): float(np.quantile(firsts, q)) for q in (0.1, 0.5, 0.9)},
        })
    else:
        summary.update({"mean_sigma1": None, "se_sigma1": None, "quantiles_sigma1": None})
    bounds = []
    for face in sorted(start_faces):
        if len(face) < 2:
            continue
        q, bound = absorption_bound_min(face, chain, q_grid)
        bounds.append({"face": [s + 1 for s in face], "q": q, "bound": bound})
    summary["bounds"] = bounds
    violation = False
    if bounds and firsts.size:
        bound = max(b["bound"] for b in bounds)
        margin = bound - summary["mean_sigma1"]
        summary["margin"] = margin
        violation = summary["mean_sigma1"] > bound + 3 * summary["se_sigma1"]
    summary["violation"] = violation

    vertex_times = [t for t in (_vertex_time(rec) for rec in records) if t is not None]
    summary["fraction_at_vertex"] = len(vertex_times) / len(records)
    summary["mean_time_to_vertex"] = float(np.mean(vertex_times)) if vertex_times else None
    # per-stage bounds summed along each path: an envelope only
    envelopes = []
    for rec in records:
        skip = sum(1 for s in rec.sigmas if s == 0)
        stages = [face for face in rec.faces[skip:] if len(face) >= 2]
        envelopes.append(sum(absorption_bound_min(face, chain, q_grid)[1] for face in stages))
    summary["vertex_envelope"] = float(np.mean(envelopes))
    events = sum(sum(1 for s in rec.sigmas if s > 0) for rec in records)
    multi = sum(rec.multi_events for rec in records)
    summary["absorption_events"] = events
    summary["multi_coordinate_events"] = multi
    summary["multi_coordinate_frequency"] = multi / events if events else 0.0
    if horizon is not None:
        summary["horizon"] = horizon
    logger.info("absorption stats over %d paths: mean sigma1 %s, violation=%s",
                len(records), summary["mean_sigma1"], violation)
    return summary


def horizon_sweep(records: Sequence[AbsorptionRecord], horizons: Sequence[float]) -> List[Dict[str, float]]:
    """Fraction of paths sitting at a vertex by each horizon"""
    times = np.array([np.inf if t is None else t for t in map(_vertex_time, records)])
    return [{"horizon": float(h), "fraction_at_vertex": float(np.mean(times <= h))}
            for h in sorted(horizons)]


def dynkin_residual(ensemble: Ensemble, cache: FaceCache, fn: TestFunction, delta: float,
                    t: float, n_particles: Optional[int] = None,
                    confidence: float = 0.99) -> Dict[str, Any]:
    """Mean of F(X_{t^tau}) - F(X_0) - int_0^{t^tau} LF(X_s) ds over the paths.

    tau is the first sample time with min_i x_i < delta; the integral is the
    trapezoid rule on the sample grid. ZRP ensembles (``n_particles`` set) get
    an extra O(1/N) tolerance band.
    """
    times = np.asarray(ensemble.sample_times, dtype=float)
    last = int(np.searchsorted(times, t + CHECKPOINT_TOL, side="right")) - 1
    if last < 0:
        raise ValidationError(f"t = {t} precedes the sample grid")
    points = ensemble.points[:, :last + 1]
    n_paths, n_times, p = points.shape
    flat = points.reshape(-1, p)
    values = fn.value(flat).reshape(n_paths, n_times)
    generator = generator_values(cache, fn, flat).reshape(n_paths, n_times)
    outside = points.min(axis=2) < delta
    stop = np.where(outside.any(axis=1), outside.argmax(axis=1), n_times - 1)
    residuals = np.empty(n_paths)
    for k in range(n_paths):
        s = stop[k]
        integral = integrate.trapezoid(generator[k, :s + 1], times[:s + 1]) if s > 0 else 0.0
        residuals[k] = values[k, s] - values[k, 0] - integral
    mean, low, high = mean_interval(residuals, confidence)
    band = 0.0
    if n_particles:
        scale = 1.0 + float(np.abs(generator).max()) * (times[last] - times[0])
        band = scale / n_particles
    ok = low - band <= 0.0 <= high + band
    return {"mean": mean, "ci": [low, high], "band": band, "confidence": confidence,
            "paths": n_paths, "stopped_early": int(outside.any(axis=1).sum()), "t": float(times[last]),
            "delta": delta, "ok": bool(ok)}


def support_monotonicity_check(ensemble: Ensemble, kind: str = "diffusion") -> Dict[str, Any]:
    """Supports never grow along a diffusion path; ZRP revivals are counted instead"""
    masks = support_masks(ensemble.points.reshape(-1, ensemble.points.shape[2]))
    masks = masks.reshape(ensemble.points.shape[:2])
    grown = (masks[:, 1:] & ~masks[:, :-1]) != 0
    paths_with = int(grown.any(axis=1).sum())
    report: Dict[str, Any] = {"kind": kind, "paths": int(masks.shape[0])}
    if kind == "zrp":
        report.update({"revival_paths": paths_with, "revivals": int(grown.sum()),
                       "revival_frequency": paths_with / masks.shape[0]})
    else:
        report.update({"violations": paths_with, "ok": paths_with == 0})
    return report


def _perturbation_direction(x0: np.ndarray) -> np.ndarray:
    support = np.flatnonzero(x0 > 0)
    if support.size < 2:
        raise ValidationError("perturbing a vertex start leaves the simplex")
    low = support[np.argmin(x0[support])]
    high = support[np.argmax(x0[support])]
    if low == high:
        low, high = support[0], support[1]
    w = np.zeros_like(x0)
    w[low], w[high] = 1.0, -1.0
    return w


def feller_smoke_test(chain: ChainModel, x0: Sequence[float], perturbations: Sequence[float],
                      t: float, controls: DiffusionControls, replicas: int, seed: int,
                      threads: Optional[int] = None,
                      cache: Optional[FaceCache] = None) -> Dict[str, Any]:
    """Marginal distance at time t between the runs from x0 and x0 + h w.

    Every run shares the seed, so the h = 0 distance is exactly 0. Perturbations
    that change the support of x0 are reported but kept out of the monotone check.
    """
    x0 = np.asarray(x0, dtype=float)
    cache = cache or FaceCache(chain)
    w = _perturbation_direction(x0)
    grid = [0.0, t]
    base = simulate_diffusion_ensemble(chain, x0, t, controls, seed, replicas, grid=grid,
                                       threads=threads, cache=cache)
    rows = []
    for h in sorted({0.0, *map(float, perturbations)}, reverse=True):
        xh = x0 + h * w
        crosses = bool(np.any(xh < 0) or np.any((xh > 0) != (x0 > 0)))
        row: Dict[str, Any] = {"h": h, "crosses_face": crosses, "distance": None}
        if not crosses:
            run = simulate_diffusion_ensemble(chain, xh, t, controls, seed, replicas, grid=grid,
                                              threads=threads, cache=cache)
            row["distance"] = _max_w1(base.points[:, -1], run.points[:, -1])
        rows.append(row)
    ladder = [r["distance"] for r in rows if r["h"] > 0 and not r["crosses_face"]]
    monotone = all(a >= b for a, b in zip(ladder, ladder[1:]))
    logger.info("feller smoke test: distances %s, monotone=%s", ladder, monotone)
    return {"x0": x0.tolist(), "direction": w.tolist(), "t": t, "replicas": replicas,
            "seed": seed, "perturbations": rows, "monotone": monotone}
