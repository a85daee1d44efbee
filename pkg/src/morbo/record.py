"""Run records: observations, hypervolume history, lifecycle events.

A record is written as two files: ``<stem>.observations.jsonl`` with one
observation per line and ``<stem>.summary.json`` with everything else.
Floats go through ``repr`` so loading and saving again is byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pareto import hypervolume, pareto_filter


@dataclass(frozen=True)
class Observation:
    index: int
    iteration: int  # 0 for the initial design
    tr_id: int  # -1 for the initial design and the Sobol baseline
    x: tuple[float, ...]  # raw inputs
    objectives: tuple[float, ...]  # maximization convention
    constraints: tuple[float, ...]
    violation: float

    @property
    def feasible(self) -> bool:
        return self.violation == 0.0 and all(np.isfinite(self.objectives))


@dataclass
class RunRecord:
    config: dict
    method: str = "morbo"
    observations: list[Observation] = field(default_factory=list)
    # (evaluations used, global hypervolume) at every batch boundary
    hv_history: list[tuple[int, float]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    acquisition_log: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    complete: bool = True
    error: str | None = None

    @property
    def num_objectives(self) -> int:
        return len(self.config["ref_point"])

    @property
    def ref_point(self) -> np.ndarray:
        return np.asarray(self.config["ref_point"], dtype=float)

    def objectives(self) -> np.ndarray:
        return np.array([o.objectives for o in self.observations], dtype=float).reshape(-1, self.num_objectives)

    def inputs(self) -> np.ndarray:
        d = len(self.observations[0].x) if self.observations else 0
        return np.array([o.x for o in self.observations], dtype=float).reshape(-1, d)

    def feasible_indices(self) -> np.ndarray:
        return np.array([o.index for o in self.observations if o.feasible], dtype=int)

    def front_indices(self) -> np.ndarray:
        """Observation indices of the final Pareto set (feasible observations only)."""
        feas = self.feasible_indices()
        if feas.size == 0:
            return feas
        return feas[pareto_filter(self.objectives()[feas])]

    @property
    def final_hv(self) -> float:
        return self.hv_history[-1][1] if self.hv_history else 0.0

    def recompute_hv(self, upto: int) -> float:
        feas = [o.objectives for o in self.observations[:upto] if o.feasible]
        return hypervolume(np.array(feas).reshape(-1, self.num_objectives), self.ref_point)

    def deterministic_content(self) -> dict:
        """Everything except wall-clock timings; equal for reproduced runs."""
        out = self._summary(include_timings=False)
        out["observations"] = [_obs_to_dict(o) for o in self.observations]
        return out

    def _summary(self, include_timings: bool = True) -> dict:
        front = self.front_indices()
        out = {
            "method": self.method,
            "config": self.config,
            "complete": self.complete,
            "error": self.error,
            "num_observations": len(self.observations),
            "final_hv": self.final_hv,
            "hv_history": [[int(n), float(hv)] for n, hv in self.hv_history],
            "front_indices": [int(i) for i in front],
            "events": self.events,
            "acquisition_log": self.acquisition_log,
        }
        if include_timings:
            out["timings"] = self.timings
        return out


def hv_trace(record: RunRecord) -> list[tuple[int, float]]:
    """(evaluations used, hypervolume) at each batch boundary."""
    return [(int(n), float(hv)) for n, hv in record.hv_history]


def _obs_to_dict(o: Observation) -> dict:
    return asdict(o) | {"x": list(o.x), "objectives": list(o.objectives), "constraints": list(o.constraints)}


def _obs_from_dict(d: dict) -> Observation:
    return Observation(
        index=int(d["index"]),
        iteration=int(d["iteration"]),
        tr_id=int(d["tr_id"]),
        x=tuple(float(v) for v in d["x"]),
        objectives=tuple(float(v) for v in d["objectives"]),
        constraints=tuple(float(v) for v in d["constraints"]),
        violation=float(d["violation"]),
    )


def record_paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_name(stem.name + ".observations.jsonl"), stem.with_name(stem.name + ".summary.json")


def save_record(record: RunRecord, stem) -> tuple[Path, Path]:
    obs_path, summary_path = record_paths(stem)
    obs_path.parent.mkdir(parents=True, exist_ok=True)
    with open(obs_path, "w") as fh:
        for o in record.observations:
            fh.write(json.dumps(_obs_to_dict(o)) + "\n")
    with open(summary_path, "w") as fh:
        json.dump(record._summary(), fh, indent=1)
        fh.write("\n")
    return obs_path, summary_path


def load_record(path) -> RunRecord:
    """Load a record from its stem or from either of its two files."""
    p = str(path)
    for suffix in (".observations.jsonl", ".summary.json"):
        if p.endswith(suffix):
            p = p[: -len(suffix)]
    obs_path, summary_path = record_paths(p)
    if not summary_path.exists() or not obs_path.exists():
        raise FileNotFoundError(f"no run record at {p}")
    with open(summary_path) as fh:
        s = json.load(fh)
    with open(obs_path) as fh:
        observations = [_obs_from_dict(json.loads(line)) for line in fh if line.strip()]
    return RunRecord(
        config=s["config"],
        method=s["method"],
        observations=observations,
        hv_history=[(int(n), float(hv)) for n, hv in s["hv_history"]],
        events=s["events"],
        acquisition_log=s["acquisition_log"],
        timings=s.get("timings", {}),
        complete=s["complete"],
        error=s["error"],
    )


def default_output_dir() -> Path:
    return Path(os.environ.get("MORBO_OUTPUT_DIR", "morbo-runs"))
