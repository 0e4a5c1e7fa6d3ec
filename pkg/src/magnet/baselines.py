"""Non-learned selection baselines: border hit test, nearest-center
ranking, and Bayesian decoding under a single ternary-Gaussian expert.

Border only answers "was the intended target hit", so it yields a miss
rate with no top-2 notion; the other two produce full rankings with the
same deterministic tie-break as the model (lowest id first).
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .experts import ExpertRegistry
from .gaussian import bayes_posterior
from .records import TrialRecord

METHODS = ("border", "distance", "expert")


def border_hit(trial: TrialRecord) -> bool:
    """True when the endpoint lands within the intended target's radius.

    Distractor positions are irrelevant; the method never ranks targets.
    """
    t = trial.intended
    return float(np.linalg.norm(trial.endpoint - t.center)) <= t.size


def distance_ranking(trial: TrialRecord) -> list[int]:
    """Target ids by ascending Euclidean distance from the endpoint."""
    order = sorted(
        trial.targets, key=lambda t: (float(np.linalg.norm(trial.endpoint - t.center)), t.id)
    )
    return [t.id for t in order]


def expert_ranking(
    trial: TrialRecord, registry: ExpertRegistry, expert_id: str,
    depth_axis: np.ndarray | None = None,
) -> list[int]:
    """Target ids by descending posterior under one pre-fitted expert."""
    params = registry[expert_id].params
    post = bayes_posterior(trial.targets, params, trial.endpoint, depth_axis=depth_axis)
    order = sorted(range(len(post)), key=lambda i: (-post[i], trial.targets[i].id))
    return [trial.targets[i].id for i in order]


def matched_expert_id(trial: TrialRecord, expert_ids: dict) -> str:
    """Ground-truth expert for the trial's gesture, per the scenario's map."""
    try:
        return expert_ids[trial.user.gesture]
    except KeyError:
        raise InputError(
            f"no expert mapped to gesture '{trial.user.gesture}'; map covers "
            f"{sorted(expert_ids)}"
        ) from None


def baseline_predict(
    method: str, trial: TrialRecord, registry: ExpertRegistry | None = None,
    expert_id: str | None = None, depth_axis: np.ndarray | None = None,
):
    """Dispatch one baseline on one trial.

    Returns a hit flag for border and a full ranking for the others.
    """
    if method == "border":
        return border_hit(trial)
    if method == "distance":
        return distance_ranking(trial)
    if method == "expert":
        if registry is None or expert_id is None:
            raise InputError("expert baseline requires a registry and an expert id")
        return expert_ranking(trial, registry, expert_id, depth_axis=depth_axis)
    raise InputError(f"unknown baseline '{method}'; expected one of {METHODS}")
