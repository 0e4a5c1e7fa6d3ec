"""Selection baselines: border hit geometry, distance ranking order, and
expert-posterior ranking against a directly computed posterior."""

import numpy as np
import pytest

from magnet.baselines import (
    METHODS,
    baseline_predict,
    border_hit,
    distance_ranking,
    expert_ranking,
    matched_expert_id,
)
from magnet.errors import InputError
from magnet.gaussian import TargetState, bayes_posterior
from magnet.records import TrialRecord, UserProfile


def _target(tid, center, size=50.0, speed=300.0, direction=(1.0, 0.0)):
    return TargetState(
        id=tid, center=np.asarray(center, dtype=float), size=size, speed=speed,
        direction=np.asarray(direction, dtype=float), dim=len(center),
    )


def _trial(endpoint, targets, intended_id=0, gesture="fixed"):
    return TrialRecord(
        trial_id=0, user_id=0,
        user=UserProfile(gesture=gesture, age=30.0, gender="female"),
        scenario_id="unit", targets=targets, intended_id=intended_id,
        endpoint=np.asarray(endpoint, dtype=float),
    )


def test_border_hit_inside_and_outside():
    targets = [_target(0, [100.0, 100.0], size=50.0), _target(1, [400.0, 400.0])]
    assert border_hit(_trial([120.0, 100.0], targets))
    assert border_hit(_trial([100.0, 150.0], targets))  # exactly on the rim
    assert not border_hit(_trial([100.0, 150.1], targets))


def test_border_ignores_distractors():
    near = [_target(0, [100.0, 100.0]), _target(1, [101.0, 100.0])]
    far = [_target(0, [100.0, 100.0]), _target(1, [2000.0, 900.0])]
    # endpoint closest to the distractor, still inside the intended radius
    assert border_hit(_trial([140.0, 100.0], near))
    assert border_hit(_trial([140.0, 100.0], far))


def test_distance_ranking_order_and_ties():
    targets = [
        _target(3, [0.0, 0.0]),
        _target(1, [10.0, 0.0]),
        _target(2, [0.0, 10.0]),  # tied with id 1; lower id wins
    ]
    assert distance_ranking(_trial([0.0, 0.0], targets, intended_id=3)) == [3, 1, 2]


def test_expert_ranking_matches_posterior(tiny_registry, tiny_dataset):
    for trial in tiny_dataset.records[:20]:
        got = expert_ranking(trial, tiny_registry, "s-f")
        post = bayes_posterior(trial.targets, tiny_registry["s-f"].params, trial.endpoint)
        want = [
            trial.targets[i].id
            for i in sorted(range(len(post)), key=lambda i: (-post[i], trial.targets[i].id))
        ]
        assert got == want


def test_expert_ranking_prefers_likely_target(tiny_registry):
    # endpoint right on target 0's center: posterior mass concentrates there
    targets = [_target(0, [500.0, 500.0]), _target(1, [900.0, 500.0])]
    trial = _trial([500.0, 502.0], targets)
    assert expert_ranking(trial, tiny_registry, "s-f")[0] == 0


def test_matched_expert_id():
    trial = _trial([0.0, 0.0], [_target(0, [0.0, 0.0]), _target(1, [5.0, 5.0])],
                   gesture="handheld")
    assert matched_expert_id(trial, {"fixed": "s-f", "handheld": "s-h"}) == "s-h"
    with pytest.raises(InputError, match="gesture"):
        matched_expert_id(trial, {"fixed": "s-f"})


def test_baseline_dispatch(tiny_registry):
    targets = [_target(0, [100.0, 100.0]), _target(1, [400.0, 400.0])]
    trial = _trial([110.0, 100.0], targets)
    assert baseline_predict("border", trial) is True
    assert baseline_predict("distance", trial) == [0, 1]
    assert baseline_predict("expert", trial, tiny_registry, "s-f") == [0, 1]
    assert set(METHODS) == {"border", "distance", "expert"}


def test_baseline_dispatch_errors(tiny_registry):
    targets = [_target(0, [0.0, 0.0]), _target(1, [5.0, 5.0])]
    trial = _trial([0.0, 0.0], targets)
    with pytest.raises(InputError, match="registry"):
        baseline_predict("expert", trial)
    with pytest.raises(InputError, match="unknown baseline"):
        baseline_predict("nearest", trial)
