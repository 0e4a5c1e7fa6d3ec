"""Record schemas and the line-delimited dataset format: validation,
exact roundtrips, and content hashing."""

import json

import numpy as np
import pytest

from magnet.errors import SchemaError
from magnet.gaussian import TargetState
from magnet.records import (
    Dataset,
    EnvWindow,
    PredictionRecord,
    TrialRecord,
    UserProfile,
)

RNG = np.random.default_rng(17)


def _window(T=150, rate=50.0, seed=0):
    rng = np.random.default_rng(seed)
    return EnvWindow(
        acc=np.round(rng.normal(size=(T, 3)), 4),
        vib=np.round(rng.normal(size=(T, 12)), 4),
        sample_rate=rate,
    )


def _trial(trial_id=0, env=None, rmsa=None, dim=2):
    targets = [
        TargetState(
            id=i,
            center=np.round(RNG.uniform(0, 500, dim), 4),
            size=65.0,
            speed=300.0,
            direction=(lambda d: d / np.linalg.norm(d))(RNG.normal(size=dim)),
            dim=dim,
        )
        for i in range(3)
    ]
    return TrialRecord(
        trial_id=trial_id,
        user_id=4,
        user=UserProfile(gesture="fixed", age=33.5, gender="female"),
        scenario_id="mts2d",
        targets=targets,
        intended_id=1,
        endpoint=np.round(targets[1].center + 3.0, 4),
        env=env,
        rmsa=rmsa,
    )


# -- profiles and windows -------------------------------------------------------


def test_user_profile_validation():
    with pytest.raises(SchemaError, match="gesture"):
        UserProfile(gesture="wand", age=30, gender="female")
    with pytest.raises(SchemaError, match="gender"):
        UserProfile(gesture="fixed", age=30, gender="x")


def test_env_window_shape_validation():
    with pytest.raises(SchemaError, match="acc"):
        EnvWindow(acc=np.zeros((10, 2)), vib=np.zeros((10, 12)), sample_rate=50.0, duration=0.2)
    with pytest.raises(SchemaError, match="vib"):
        EnvWindow(acc=np.zeros((10, 3)), vib=np.zeros((10, 5)), sample_rate=50.0, duration=0.2)
    with pytest.raises(SchemaError, match="lengths"):
        EnvWindow(acc=np.zeros((10, 3)), vib=np.zeros((9, 12)), sample_rate=50.0, duration=0.2)
    with pytest.raises(SchemaError, match="expected"):
        EnvWindow(acc=np.zeros((10, 3)), vib=np.zeros((10, 12)), sample_rate=50.0, duration=3.0)
    bad = np.zeros((150, 3))
    bad[0, 0] = np.nan
    with pytest.raises(SchemaError, match="NaN"):
        EnvWindow(acc=bad, vib=np.zeros((150, 12)), sample_rate=50.0)


def test_env_window_accepts_off_by_one_length():
    EnvWindow(acc=np.zeros((149, 3)), vib=np.zeros((149, 12)), sample_rate=50.0)


# -- trial records ------------------------------------------------------------------


def test_trial_validation():
    t = _trial()
    with pytest.raises(SchemaError, match="intended"):
        TrialRecord(
            trial_id=0, user_id=0, user=t.user, scenario_id="s",
            targets=t.targets, intended_id=99, endpoint=np.zeros(2),
        )
    dup = [t.targets[0], t.targets[0]]
    with pytest.raises(SchemaError, match="duplicate"):
        TrialRecord(
            trial_id=0, user_id=0, user=t.user, scenario_id="s",
            targets=dup, intended_id=0, endpoint=np.zeros(2),
        )
    with pytest.raises(SchemaError, match="finite"):
        TrialRecord(
            trial_id=0, user_id=0, user=t.user, scenario_id="s",
            targets=t.targets, intended_id=1, endpoint=np.array([np.inf, 0.0]),
        )


def test_trial_properties():
    t = _trial()
    assert t.intended.id == 1
    assert t.dim == 2


def test_trial_roundtrip_without_env():
    t = _trial(rmsa=0.42)
    back = TrialRecord.from_dict(t.to_dict())
    assert back.trial_id == t.trial_id
    assert back.intended_id == t.intended_id
    assert back.user == t.user
    assert back.rmsa == 0.42
    assert back.env is None
    np.testing.assert_array_equal(back.endpoint, t.endpoint)
    for a, b in zip(back.targets, t.targets):
        np.testing.assert_array_equal(a.center, b.center)
        np.testing.assert_allclose(a.direction, b.direction)
        assert (a.id, a.size, a.speed, a.dim) == (b.id, b.size, b.speed, b.dim)


def test_trial_roundtrip_with_env_exact():
    t = _trial(env=_window())
    back = TrialRecord.from_dict(json.loads(json.dumps(t.to_dict())))
    np.testing.assert_array_equal(back.env.acc, t.env.acc)
    np.testing.assert_array_equal(back.env.vib, t.env.vib)
    assert back.env.sample_rate == t.env.sample_rate


def test_trial_dict_marks_exactly_one_intended():
    d = _trial().to_dict()
    assert sum(1 for tg in d["targets"] if tg["intended"]) == 1
    tampered = json.loads(json.dumps(d))
    for tg in tampered["targets"]:
        tg["intended"] = False
    with pytest.raises(SchemaError, match="exactly one intended"):
        TrialRecord.from_dict(tampered)


def test_trial_from_dict_missing_field():
    d = _trial().to_dict()
    del d["endpoint"]
    with pytest.raises(SchemaError, match="missing field"):
        TrialRecord.from_dict(d)


# -- datasets -------------------------------------------------------------------------


def test_dataset_roundtrip_and_hash(tmp_path):
    ds = Dataset(meta={"scenario": {"name": "x"}, "seed": 3},
                 records=[_trial(i, env=_window(seed=i), rmsa=0.1 * i) for i in range(4)])
    p = tmp_path / "d.jsonl"
    ds.save(p)
    back = Dataset.load(p)
    assert back.meta == ds.meta
    assert len(back) == 4
    assert back.content_hash() == ds.content_hash()
    # identical content -> identical bytes on re-save
    p2 = tmp_path / "d2.jsonl"
    back.save(p2)
    assert p.read_bytes() == p2.read_bytes()


def test_dataset_hash_sensitive_to_content(tmp_path):
    ds1 = Dataset(meta={"seed": 1}, records=[_trial(0)])
    ds2 = Dataset(meta={"seed": 2}, records=[_trial(0)])
    assert ds1.content_hash() != ds2.content_hash()


def test_dataset_load_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text("")
    with pytest.raises(SchemaError, match="empty"):
        Dataset.load(p)
    p.write_text(json.dumps({"schema_version": 9, "kind": "mts-dataset"}) + "\n")
    with pytest.raises(SchemaError, match="schema_version"):
        Dataset.load(p)
    p.write_text(json.dumps({"schema_version": 1, "kind": "nope"}) + "\n")
    with pytest.raises(SchemaError, match="kind"):
        Dataset.load(p)
    p.write_text(
        json.dumps({"schema_version": 1, "kind": "mts-dataset"}) + "\n{broken\n"
    )
    with pytest.raises(SchemaError, match="line 2"):
        Dataset.load(p)


def test_dataset_iteration():
    ds = Dataset(meta={}, records=[_trial(0), _trial(1)])
    assert [r.trial_id for r in ds] == [0, 1]
    assert len(ds) == 2


# -- prediction records ------------------------------------------------------------------


def test_prediction_roundtrip_and_canonical_json():
    rec = PredictionRecord(
        trial_id=7,
        target_ids=[2, 0, 1],
        log_densities=[-10.5, -3.25, -8.0],
        ranking=[0, 1, 2],
        weights=[0.25, 0.5, 0.25],
        expert_ids=["a", "b", "c"],
        adapted_moments={"0": {"a": {"mu": [0.0, 1.0], "var": [1.0, 1.0]}}},
        flags=["window_padded"],
    )
    s = rec.canonical_json()
    assert "\n" not in s and ": " not in s  # compact separators
    d = json.loads(s)
    assert d["per_target_logp"] == [-10.5, -3.25, -8.0]
    back = PredictionRecord.from_dict(d)
    assert back == rec
    assert back.canonical_json() == s
