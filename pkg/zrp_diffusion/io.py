"""CSV trajectories with `# key=value` metadata headers, and sorted-key JSON reports."""
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .diffusion import AbsorptionRecord, DiffusionEnsemble
from .errors import ValidationError
from .trace import face_mask, mask_sites
from .zrp import ZrpEnsemble

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PathLike = Union[str, Path]


def coordinate_columns(p: int) -> List[str]:
    return [f"x_{i + 1}" for i in range(p)]


def write_csv(path: PathLike, frame: pd.DataFrame, metadata: Dict[str, Any]) -> None:
    with open(path, "w", newline="") as f:
        for key in sorted(metadata):
            f.write(f"# {key}={metadata[key]}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)
    logger.debug("wrote %d rows to %s", len(frame), path)


def read_metadata(path: PathLike) -> Dict[str, str]:
    metadata = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            metadata[key.strip()] = value.strip()
    return metadata


def read_csv(path: PathLike) -> Tuple[Dict[str, str], pd.DataFrame]:
    return read_metadata(path), pd.read_csv(path, comment="#")


def _trajectory_frame(times: np.ndarray, points: np.ndarray,
                      masks: Optional[np.ndarray] = None) -> pd.DataFrame:
    n_rep, n_times, p = points.shape
    frame = pd.DataFrame(points.reshape(-1, p), columns=coordinate_columns(p))
    frame.insert(0, "time", np.tile(times, n_rep))
    frame.insert(0, "replica", np.repeat(np.arange(n_rep), n_times))
    if masks is not None:
        frame["face"] = masks.reshape(-1)
    return frame


def write_zrp(path: PathLike, ensemble: ZrpEnsemble, extra: Optional[Dict[str, Any]] = None) -> None:
    metadata = {"kind": "zrp", "seed": ensemble.seed, "n": ensemble.N,
                "p": ensemble.points.shape[2], "replicas": ensemble.replicas,
                "horizon": ensemble.horizon, "events": int(ensemble.events.sum())}
    metadata.update(extra or {})
    write_csv(path, _trajectory_frame(ensemble.sample_times, ensemble.points), metadata)


def write_diffusion(path: PathLike, ensemble: DiffusionEnsemble,
                    extra: Optional[Dict[str, Any]] = None) -> None:
    metadata = {"kind": "diffusion", "seed": ensemble.seed, "p": ensemble.points.shape[2],
                "replicas": ensemble.replicas, "horizon": ensemble.horizon}
    metadata.update(extra or {})
    write_csv(path, _trajectory_frame(ensemble.sample_times, ensemble.points, ensemble.masks),
              metadata)


def write_absorptions(path: PathLike, records: Sequence[AbsorptionRecord], seed: int,
                      p: int) -> None:
    rows = []
    for replica, rec in enumerate(records):
        for n, (sigma, face) in enumerate(zip(rec.sigmas, rec.faces[1:]), start=1):
            rows.append((replica, n, sigma, face_mask(face)))
    frame = pd.DataFrame(rows, columns=["replica", "n", "sigma_n", "face"])
    write_csv(path, frame, {"kind": "absorptions", "seed": seed, "p": p,
                            "replicas": len(records)})


@dataclass(frozen=True)
class EnsembleTable:
    """An ensemble read back from CSV: points[replica, time, site]"""

    sample_times: np.ndarray
    points: np.ndarray
    masks: Optional[np.ndarray] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.metadata.get("kind", "diffusion" if self.masks is not None else "zrp")

    @property
    def N(self) -> Optional[int]:
        return int(self.metadata["n"]) if "n" in self.metadata else None

    @property
    def seed(self) -> Optional[int]:
        return int(self.metadata["seed"]) if "seed" in self.metadata else None


def read_ensemble(path: PathLike) -> EnsembleTable:
    metadata, frame = read_csv(path)
    coords = [c for c in frame.columns if c.startswith("x_")]
    if not coords or "replica" not in frame or "time" not in frame:
        raise ValidationError(f"{path} is not a trajectory CSV")
    frame = frame.sort_values(["replica", "time"], kind="stable")
    replicas = frame["replica"].unique()
    counts = frame.groupby("replica").size()
    if counts.nunique() != 1:
        raise ValidationError(f"{path}: replicas have different sample grids")
    n_times = int(counts.iloc[0])
    times = frame["time"].to_numpy()[:n_times]
    all_times = frame["time"].to_numpy().reshape(len(replicas), n_times)
    if not np.all(all_times == times[None, :]):
        raise ValidationError(f"{path}: replicas have different sample grids")
    points = frame[coords].to_numpy(dtype=float).reshape(len(replicas), n_times, len(coords))
    masks = None
    if "face" in frame:
        masks = frame["face"].to_numpy(dtype=np.int64).reshape(len(replicas), n_times)
    return EnsembleTable(times, points, masks, metadata)


def read_absorptions(path: PathLike, p: Optional[int] = None,
                     replicas: Optional[int] = None) -> List[AbsorptionRecord]:
    metadata, frame = read_csv(path)
    p = p or int(metadata["p"])
    replicas = replicas or int(metadata.get("replicas", frame["replica"].max() + 1))
    records = [AbsorptionRecord(faces=[tuple(range(p))]) for _ in range(replicas)]
    for row in frame.sort_values(["replica", "n"]).itertuples(index=False):
        rec = records[int(row.replica)]
        sites = mask_sites(int(row.face), p)
        if row.sigma_n > 0 and len(rec.faces[-1]) - len(sites) > 1:
            rec.multi_events += 1
        rec.sigmas.append(float(row.sigma_n))
        rec.faces.append(sites)
        if len(sites) == 1:
            rec.terminal = sites[0]
    return records


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2)


def write_json(path: Optional[PathLike], obj: Any) -> None:
    """Write to ``path``, or to stdout when no path is given"""
    text = dumps(obj) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w") as f:
        f.write(text)
    logger.debug("wrote report to %s", path)


def read_json(path: PathLike) -> Any:
    with open(path, "r") as f:
        return json.load(f)
