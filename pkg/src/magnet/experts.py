"""Fitting ternary-Gaussian experts from grouped endpoint data.

An expert summarises one motion context (e.g. one gesture on one scene
preset) as closed-form coefficients: per local axis, endpoint mean is
affine in target speed and width, and endpoint variance is affine in
speed^2 and width^2. Fitting is two-stage: per-(width, speed) cells get
sample moments, then the moments are regressed onto the ternary design.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FittingError, SchemaError
from .gaussian import TargetState, TernaryGaussianParams, local_frame

REGISTRY_SCHEMA_VERSION = 1

# Cells with fewer samples than this are kept but flagged; the flag is
# surfaced in expert provenance so reports can call out weak fits.
LOW_CONFIDENCE_COUNT = 30


@dataclass
class CellMoments:
    """Sample moments of local-frame endpoint offsets for one (w, v) cell."""

    width: float
    speed: float
    count: int
    mean: np.ndarray        # (dim,)
    var: np.ndarray         # (dim,) unbiased
    low_confidence: bool = False
    degenerate: bool = False


@dataclass
class ConditionMoments:
    dim: int
    cells: list[CellMoments]

    @property
    def widths(self) -> list[float]:
        return sorted({c.width for c in self.cells})

    @property
    def speeds(self) -> list[float]:
        return sorted({c.speed for c in self.cells})


def fit_condition_moments(
    samples: list[tuple[TargetState, np.ndarray]],
    min_count: int = LOW_CONFIDENCE_COUNT,
    depth_axis: np.ndarray | None = None,
) -> ConditionMoments:
    """Group (intended target, endpoint) pairs by (width, speed) and compute
    per-axis moments of the endpoint offset in each target's local frame.

    Cells with fewer than two samples cannot yield an unbiased variance and
    are dropped with a warning. Zero-variance cells are flagged degenerate.
    """
    if not samples:
        raise FittingError("no samples to fit moments from")
    dim = samples[0][0].dim
    groups: dict[tuple[float, float], list[np.ndarray]] = {}
    for target, endpoint in samples:
        if target.dim != dim:
            raise FittingError(f"mixed dimensionalities in sample set ({target.dim} vs {dim})")
        frame = local_frame(target, depth_axis=depth_axis)
        offset = frame.axes @ (np.asarray(endpoint, dtype=np.float64) - target.center)
        groups.setdefault((target.size, target.speed), []).append(offset)

    cells = []
    for (w, v), offsets in sorted(groups.items()):
        if len(offsets) < 2:
            warnings.warn(
                f"dropping condition cell (w={w}, v={v}): {len(offsets)} sample(s), need >=2"
            )
            continue
        arr = np.stack(offsets)
        mean = arr.mean(axis=0)
        var = arr.var(axis=0, ddof=1)
        cells.append(
            CellMoments(
                width=float(w),
                speed=float(v),
                count=len(offsets),
                mean=mean,
                var=var,
                low_confidence=len(offsets) < min_count,
                degenerate=bool(np.all(var == 0.0)),
            )
        )
    if not cells:
        raise FittingError("all condition cells were dropped (every cell has <2 samples)")
    return ConditionMoments(dim=dim, cells=cells)


def _check_grid(m: ConditionMoments):
    if len(m.cells) < 3:
        raise FittingError(
            f"need at least 3 condition cells to fit 3 coefficients, got {len(m.cells)}"
        )
    if len(m.widths) < 2 or len(m.speeds) < 2:
        raise FittingError(
            f"condition grid must vary both width and speed; "
            f"got widths={m.widths}, speeds={m.speeds}"
        )


def _lstsq(X: np.ndarray, y: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise FittingError(f"{what}: rank-deficient design matrix (degenerate condition grid)")
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    return coef, resid


def _nonneg_lstsq(X: np.ndarray, y: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Least squares with coefficients projected to be nonnegative: fit,
    clamp negatives to zero, refit over the remaining columns until stable."""
    active = list(range(X.shape[1]))
    coef = np.zeros(X.shape[1])
    for _ in range(X.shape[1] + 1):
        sub, _ = _lstsq(X[:, active], y, what)
        if np.all(sub >= 0):
            coef[:] = 0.0
            coef[active] = sub
            break
        active = [a for a, c in zip(active, sub) if c >= 0]
        if not active:
            coef[:] = 0.0
            break
    resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    return coef, resid


def fit_ternary_params(m: ConditionMoments) -> tuple[TernaryGaussianParams, dict]:
    """Regress cell moments onto the ternary design.

    Per axis d: mean_d ~ [1, v, w] and var_d ~ [1, v^2, w^2]. Variance
    coefficients are constrained nonnegative so their square roots are the
    sigma coefficients. Returns the params and a provenance dict with
    residuals and the condition grid.
    """
    _check_grid(m)
    v = np.array([c.speed for c in m.cells])
    w = np.array([c.width for c in m.cells])
    X_mu = np.column_stack([np.ones_like(v), v, w])
    X_var = np.column_stack([np.ones_like(v), v**2, w**2])

    mu = np.zeros((m.dim, 3))
    sigma = np.zeros((m.dim, 3))
    mu_resid, sigma_resid = [], []
    for d in range(m.dim):
        mean_d = np.array([c.mean[d] for c in m.cells])
        var_d = np.array([c.var[d] for c in m.cells])
        mu[d], r_mu = _lstsq(X_mu, mean_d, f"axis {d} mean regression")
        var_coef, r_var = _nonneg_lstsq(X_var, var_d, f"axis {d} variance regression")
        sigma[d] = np.sqrt(var_coef)
        mu_resid.append(r_mu)
        sigma_resid.append(r_var)

    provenance = {
        "cells": [
            {"w": c.width, "v": c.speed, "count": c.count, "low_confidence": c.low_confidence}
            for c in m.cells
        ],
        "rms_residual_mean": mu_resid,
        "rms_residual_var": sigma_resid,
        "low_confidence": any(c.low_confidence for c in m.cells),
    }
    return TernaryGaussianParams(mu=mu, sigma=sigma), provenance


def fit_expert(
    expert_id: str,
    samples: list[tuple[TargetState, np.ndarray]],
    depth_axis: np.ndarray | None = None,
    extra_provenance: dict | None = None,
) -> "ExpertSpec":
    moments = fit_condition_moments(samples, depth_axis=depth_axis)
    params, provenance = fit_ternary_params(moments)
    provenance["n_samples"] = len(samples)
    if extra_provenance:
        provenance.update(extra_provenance)
    return ExpertSpec(id=expert_id, dim=moments.dim, params=params, provenance=provenance)


@dataclass
class ExpertSpec:
    id: str
    dim: int
    params: TernaryGaussianParams
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dim": self.dim,
            "mu_coeffs": self.params.mu.tolist(),
            "sigma_coeffs": self.params.sigma.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertSpec":
        try:
            params = TernaryGaussianParams(
                mu=np.asarray(d["mu_coeffs"], dtype=np.float64),
                sigma=np.asarray(d["sigma_coeffs"], dtype=np.float64),
            )
            return cls(
                id=d["id"], dim=d["dim"], params=params, provenance=d.get("provenance", {})
            )
        except KeyError as e:
            raise SchemaError(f"expert spec missing field {e}") from e


class ExpertRegistry:
    """Ordered collection of fitted experts; order defines the mixture's
    expert axis everywhere downstream."""

    def __init__(self, experts: list[ExpertSpec] | None = None):
        self._experts: dict[str, ExpertSpec] = {}
        for e in experts or []:
            self.add(e)

    def add(self, expert: ExpertSpec):
        if expert.id in self._experts:
            raise SchemaError(f"duplicate expert id '{expert.id}'")
        if self._experts:
            dim = next(iter(self._experts.values())).dim
            if expert.dim != dim:
                raise SchemaError(
                    f"expert '{expert.id}' has dim {expert.dim}, registry holds dim {dim}"
                )
        self._experts[expert.id] = expert

    def __len__(self):
        return len(self._experts)

    def __iter__(self):
        return iter(self._experts.values())

    def __getitem__(self, expert_id: str) -> ExpertSpec:
        if expert_id not in self._experts:
            raise KeyError(f"no expert '{expert_id}' in registry ({self.ids()})")
        return self._experts[expert_id]

    def __contains__(self, expert_id: str) -> bool:
        return expert_id in self._experts

    def ids(self) -> list[str]:
        return list(self._experts.keys())

    @property
    def dim(self) -> int:
        if not self._experts:
            raise SchemaError("empty registry has no dimensionality")
        return next(iter(self._experts.values())).dim

    def save(self, path):
        doc = {
            "schema_version": REGISTRY_SCHEMA_VERSION,
            "kind": "expert-registry",
            "experts": [e.to_dict() for e in self],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ExpertRegistry":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON: {e}") from e
        if doc.get("schema_version") != REGISTRY_SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported schema_version {doc.get('schema_version')}")
        if doc.get("kind") != "expert-registry":
            raise SchemaError(f"{path}: not an expert registry (kind={doc.get('kind')})")
        return cls([ExpertSpec.from_dict(d) for d in doc.get("experts", [])])
