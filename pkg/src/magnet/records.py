"""Trial/prediction record types and the line-delimited dataset format.

A dataset file is UTF-8 text: a JSON header line carrying schema_version
and generator config, then one JSON record per line. The format is
streamable and diffable; all floats round-trip exactly through repr.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .gaussian import TargetState

SCHEMA_VERSION = 1

GESTURES = ("fixed", "handheld", "controller")
GENDERS = ("female", "male", "nonbinary")


@dataclass
class UserProfile:
    gesture: str
    age: float
    gender: str

    def __post_init__(self):
        if self.gesture not in GESTURES:
            raise SchemaError(f"unknown gesture '{self.gesture}'; expected one of {GESTURES}")
        if self.gender not in GENDERS:
            raise SchemaError(f"unknown gender '{self.gender}'; expected one of {GENDERS}")


@dataclass
class EnvWindow:
    """Pre-touch environmental window: acceleration (T,3) and derived
    vibration channels (T,12), ordered velocity/angle/displacement/
    frequency by axis triple."""

    acc: np.ndarray
    vib: np.ndarray
    sample_rate: float
    duration: float = 3.0
    padded: bool = False

    def __post_init__(self):
        self.acc = np.asarray(self.acc, dtype=np.float64)
        self.vib = np.asarray(self.vib, dtype=np.float64)
        if self.acc.ndim != 2 or self.acc.shape[1] != 3:
            raise SchemaError(f"env.acc must be (T, 3), got {self.acc.shape}")
        if self.vib.ndim != 2 or self.vib.shape[1] != 12:
            raise SchemaError(f"env.vib must be (T, 12), got {self.vib.shape}")
        if self.acc.shape[0] != self.vib.shape[0]:
            raise SchemaError("env.acc and env.vib lengths differ")
        expected = self.duration * self.sample_rate
        if abs(self.acc.shape[0] - expected) > 1:
            raise SchemaError(
                f"env window has {self.acc.shape[0]} samples; expected "
                f"{expected:.0f} for {self.duration}s at {self.sample_rate}Hz"
            )
        if np.isnan(self.acc).any() or np.isnan(self.vib).any():
            raise SchemaError("env window contains NaNs")


@dataclass
class TrialRecord:
    trial_id: int
    user_id: int
    user: UserProfile
    scenario_id: str
    targets: list[TargetState]
    intended_id: int
    endpoint: np.ndarray
    env: EnvWindow | None = None
    rmsa: float | None = None

    def __post_init__(self):
        self.endpoint = np.asarray(self.endpoint, dtype=np.float64)
        if not np.all(np.isfinite(self.endpoint)):
            raise SchemaError(f"trial {self.trial_id}: endpoint is not finite")
        ids = [t.id for t in self.targets]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"trial {self.trial_id}: duplicate target ids")
        if self.intended_id not in ids:
            raise SchemaError(
                f"trial {self.trial_id}: intended id {self.intended_id} not among targets"
            )

    @property
    def intended(self) -> TargetState:
        return next(t for t in self.targets if t.id == self.intended_id)

    @property
    def dim(self) -> int:
        return self.targets[0].dim

    def to_dict(self) -> dict:
        d = {
            "trial_id": self.trial_id,
            "user": {
                "id": self.user_id,
                "gesture": self.user.gesture,
                "age": self.user.age,
                "gender": self.user.gender,
            },
            "scenario_id": self.scenario_id,
            "targets": [
                {
                    "id": t.id,
                    "center": t.center.tolist(),
                    "size": t.size,
                    "speed": t.speed,
                    "dir": t.direction.tolist(),
                    "intended": t.id == self.intended_id,
                }
                for t in self.targets
            ],
            "endpoint": self.endpoint.tolist(),
        }
        if self.env is not None:
            d["env"] = {
                "rate_hz": self.env.sample_rate,
                "acc": self.env.acc.tolist(),
                "vib": self.env.vib.tolist(),
            }
        if self.rmsa is not None:
            d["rmsa"] = self.rmsa
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        try:
            targets = [
                TargetState(
                    id=t["id"],
                    center=np.asarray(t["center"]),
                    size=t["size"],
                    speed=t["speed"],
                    direction=np.asarray(t["dir"]),
                    dim=len(t["center"]),
                )
                for t in d["targets"]
            ]
            intended = [t["id"] for t in d["targets"] if t.get("intended")]
            if len(intended) != 1:
                raise SchemaError(
                    f"trial {d.get('trial_id')}: expected exactly one intended target, "
                    f"found {len(intended)}"
                )
            env = None
            if "env" in d and d["env"] is not None:
                env = EnvWindow(
                    acc=np.asarray(d["env"]["acc"]),
                    vib=np.asarray(d["env"]["vib"]),
                    sample_rate=d["env"]["rate_hz"],
                )
            return cls(
                trial_id=d["trial_id"],
                user_id=d["user"]["id"],
                user=UserProfile(
                    gesture=d["user"]["gesture"],
                    age=d["user"]["age"],
                    gender=d["user"]["gender"],
                ),
                scenario_id=d["scenario_id"],
                targets=targets,
                intended_id=intended[0],
                endpoint=np.asarray(d["endpoint"]),
                env=env,
                rmsa=d.get("rmsa"),
            )
        except KeyError as e:
            raise SchemaError(f"trial record missing field {e}") from e


@dataclass
class Dataset:
    meta: dict
    records: list[TrialRecord]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def save(self, path):
        path = Path(path)
        header = {"schema_version": SCHEMA_VERSION, "kind": "mts-dataset", **self.meta}
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            first = f.readline()
            if not first.strip():
                raise SchemaError(f"{path}: empty dataset file")
            header = json.loads(first)
            if header.get("schema_version") != SCHEMA_VERSION:
                raise SchemaError(
                    f"{path}: unsupported schema_version {header.get('schema_version')}"
                )
            if header.get("kind") != "mts-dataset":
                raise SchemaError(f"{path}: not a dataset file (kind={header.get('kind')})")
            records = []
            for i, line in enumerate(f):
                if not line.strip():
                    continue
                try:
                    records.append(TrialRecord.from_dict(json.loads(line)))
                except json.JSONDecodeError as e:
                    raise SchemaError(f"{path}: line {i + 2}: invalid JSON: {e}") from e
        meta = {k: v for k, v in header.items() if k not in ("schema_version", "kind")}
        return cls(meta=meta, records=records)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.meta, sort_keys=True).encode())
        for r in self.records:
            h.update(json.dumps(r.to_dict(), sort_keys=True).encode())
        return h.hexdigest()[:16]


@dataclass
class PredictionRecord:
    """Ranked target prediction for one trial plus inspection payload."""

    trial_id: int
    target_ids: list[int]
    log_densities: list[float]          # fused log density per target (input order)
    ranking: list[int]                  # target ids, most likely first
    weights: list[float]                # expert fusion weights
    expert_ids: list[str]
    adapted_moments: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "target_ids": list(self.target_ids),
            "per_target_logp": [float(x) for x in self.log_densities],
            "ranking": list(self.ranking),
            "weights": [float(x) for x in self.weights],
            "expert_ids": list(self.expert_ids),
            "adapted_moments": self.adapted_moments,
            "flags": list(self.flags),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRecord":
        return cls(
            trial_id=d["trial_id"],
            target_ids=d["target_ids"],
            log_densities=d["per_target_logp"],
            ranking=d["ranking"],
            weights=d["weights"],
            expert_ids=d["expert_ids"],
            adapted_moments=d.get("adapted_moments", {}),
            flags=d.get("flags", []),
        )
