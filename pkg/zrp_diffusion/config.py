import json
import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Load environment variables
load_dotenv()

THREADS_ENV = "ZRP_DIFFUSION_THREADS"
LOG_LEVEL_ENV = "ZRP_DIFFUSION_LOG_LEVEL"


def default_threads() -> int:
    value = os.getenv(THREADS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def default_log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV, "INFO").upper()


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the root handler once for a CLI run"""
    logging.basicConfig(
        level=(level or default_log_level()).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class NumericPolicy(BaseModel):
    """Every tolerance used by the algebra, solvers and verify routines."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    algebra_tol: float = Field(1e-12, gt=0)
    harmonic_tol: float = Field(1e-10, gt=0)
    support_tol: float = Field(1e-12, ge=0)
    iterative_tol: float = Field(1e-8, gt=0)
    composition_tol: float = Field(1e-10, gt=0)
    supharm_tol: float = Field(1e-10, ge=0)

    @classmethod
    def from_file(cls, path: Path) -> "NumericPolicy":
        with open(path, "r") as f:
            return cls.model_validate(json.load(f))


DEFAULT_POLICY = NumericPolicy()


class ChainConfig(BaseModel):
    """On-disk chain description: {"rates": [[...]], "b": 1.0}"""

    model_config = ConfigDict(extra="forbid")

    rates: List[List[float]]
    b: float = 1.0

    @field_validator("rates")
    @classmethod
    def _square_non_negative(cls, rates: List[List[float]]) -> List[List[float]]:
        p = len(rates)
        if p < 2:
            raise ValueError("a chain needs at least two sites")
        for i, row in enumerate(rates):
            if len(row) != p:
                raise ValueError(f"row {i + 1} has {len(row)} entries, expected {p}")
            if any(not np.isfinite(v) for v in row):
                raise ValueError(f"row {i + 1} has a non-finite rate")
            if any(v < 0 for v in row):
                raise ValueError(f"row {i + 1} has a negative rate")
            if row[i] != 0:
                raise ValueError(f"diagonal rate r({i + 1},{i + 1}) must be 0")
        return rates

    @classmethod
    def from_file(cls, path: Path) -> "ChainConfig":
        with open(path, "r") as f:
            return cls.model_validate(json.load(f))


def parse_sites(text: str) -> Tuple[int, ...]:
    """Parse a 1-based site list such as "1,2" into 0-based indices"""
    sites = [int(tok) for tok in text.split(",") if tok.strip()]
    if not sites:
        raise ValueError("empty site list")
    if any(s < 1 for s in sites):
        raise ValueError("sites are numbered from 1")
    if len(set(sites)) != len(sites):
        raise ValueError(f"repeated site in {text!r}")
    return tuple(sorted(s - 1 for s in sites))


def parse_floats(text: str) -> Tuple[float, ...]:
    values = [float(tok) for tok in text.split(",") if tok.strip()]
    if not values:
        raise ValueError("empty number list")
    return tuple(values)


def parse_grid(text: str) -> Tuple[float, ...]:
    """Parse start:step:stop (inclusive) or an explicit comma list"""
    if ":" not in text:
        return parse_floats(text)
    start, step, stop = (float(tok) for tok in text.split(":"))
    if step <= 0 or stop < start:
        raise ValueError(f"bad grid {text!r}")
    n = int(round((stop - start) / step)) + 1
    return tuple(float(v) for v in start + step * np.arange(n))


class RunConfig(BaseModel):
    """Fields shared by every subcommand."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, ge=0, lt=2**64)
    threads: int = Field(default_factory=default_threads, ge=1)
    numeric_policy: Optional[Path] = None

    def policy(self) -> NumericPolicy:
        if self.numeric_policy is None:
            return DEFAULT_POLICY
        return NumericPolicy.from_file(self.numeric_policy)


class TraceRatesConfig(RunConfig):
    chain: Path
    face: Tuple[int, ...]
    out: Optional[Path] = None

    @field_validator("face")
    @classmethod
    def _face_size(cls, face: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(face) < 2:
            raise ValueError("a trace face needs at least two sites")
        return face


def _check_grid(grid: Tuple[float, ...], horizon: float) -> None:
    values = np.asarray(grid)
    if values.size == 0:
        raise ValueError("empty sample grid")
    if np.any(np.diff(values) <= 0):
        raise ValueError("sample grid must be strictly increasing")
    if values[0] < 0 or values[-1] > horizon * (1 + 1e-12):
        raise ValueError("sample grid must lie within [0, T]")


class SimulateZrpConfig(RunConfig):
    chain: Path
    n: int = Field(ge=1)
    t: float = Field(gt=0)
    grid: Tuple[float, ...]
    replicas: int = Field(1, ge=1)
    x0: Optional[Tuple[float, ...]] = None
    max_events: int = Field(10**9, ge=1)
    rates_table: Optional[Path] = None
    out: Path

    @model_validator(mode="after")
    def _grid_in_horizon(self) -> "SimulateZrpConfig":
        _check_grid(self.grid, self.t)
        return self


class SimulateDiffusionConfig(RunConfig):
    chain: Path
    x0: Tuple[float, ...]
    t: float = Field(gt=0)
    dt: float = Field(1e-4, gt=0)
    eps_abs: float = Field(1e-4, gt=0, lt=0.5)
    x_ref: float = Field(0.05, gt=0)
    dt_floor: float = Field(1e-14, gt=0)
    grid: Optional[Tuple[float, ...]] = None
    replicas: int = Field(1, ge=1)
    out: Path
    absorptions_out: Optional[Path] = None

    @model_validator(mode="after")
    def _grid_in_horizon(self) -> "SimulateDiffusionConfig":
        if self.grid is not None:
            _check_grid(self.grid, self.t)
        return self


class VerifySuperharmonicConfig(RunConfig):
    chain: Path
    a: Tuple[int, ...]
    d: Tuple[int, ...]
    gamma: float = Field(gt=0, lt=1)
    eps: float = Field(gt=0)
    grid_density: int = Field(25, ge=2)
    out: Optional[Path] = None

    @model_validator(mode="after")
    def _disjoint(self) -> "VerifySuperharmonicConfig":
        if set(self.a) & set(self.d):
            raise ValueError("--a and --d must be disjoint")
        return self


class CompareConfig(RunConfig):
    zrp: Tuple[Path, ...]
    diff: Path
    checkpoints: Tuple[float, ...]
    out: Path
    n_resamples: int = Field(1000, ge=1000)
    min_replicas: int = Field(200, ge=2)
    threshold: float = Field(0.05, gt=0)


class AbsorptionStatsConfig(RunConfig):
    chain: Path
    absorptions: Path
    diff: Optional[Path] = None
    q_grid: Tuple[float, ...] = (1.5, 2.0, 3.0, 4.0)
    horizon: Optional[float] = Field(None, gt=0)
    out: Optional[Path] = None


class DynkinConfig(RunConfig):
    chain: Path
    paths: Path
    function: str = "product-squares"
    a: Optional[Tuple[int, ...]] = None
    gamma: float = Field(0.5, gt=0, lt=1)
    polynomial: Optional[Path] = None
    delta: float = Field(0.05, gt=0)
    t: float = Field(gt=0)
    out: Optional[Path] = None

    @field_validator("function")
    @classmethod
    def _known_function(cls, name: str) -> str:
        if name not in ("constant", "product-squares", "fa", "polynomial"):
            raise ValueError(f"unknown test function {name!r}")
        return name


class FellerConfig(RunConfig):
    chain: Path
    x0: Tuple[float, ...]
    h: Tuple[float, ...] = (0.1, 0.03, 0.01)
    t: float = Field(gt=0)
    dt: float = Field(1e-3, gt=0)
    eps_abs: float = Field(1e-4, gt=0, lt=0.5)
    replicas: int = Field(500, ge=2)
    out: Optional[Path] = None


class PlotConfig(RunConfig):
    input: Path
    kind: str = "paths"
    out: Path
    max_paths: int = Field(20, ge=1)

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, kind: str) -> str:
        if kind not in ("paths", "report"):
            raise ValueError(f"unknown plot kind {kind!r}")
        return kind
