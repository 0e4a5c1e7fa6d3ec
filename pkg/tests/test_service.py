"""Prediction service: session state machine, HTTP endpoints, websocket
protocol, and byte-level agreement with in-process prediction."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from magnet.datagen import _vib_channels
from magnet.errors import InputError
from magnet.experts import ExpertRegistry
from magnet.model import MagnetModel, ModelConfig, predict
from magnet.records import EnvWindow, TrialRecord, UserProfile
from magnet.service import SessionState, create_app


@pytest.fixture(scope="module")
def served(tiny2d, tiny_registry):
    mc = ModelConfig(
        dim=2,
        bounds=tiny2d.bounds,
        sample_rate=tiny2d.sample_rate,
        seed=11,
    )
    model = MagnetModel(mc, tiny_registry)
    app = create_app(model, tiny_registry, checkpoint_hash="cafe01")
    return model, TestClient(app)


# -- session state ------------------------------------------------------------------


def _state(T=150, rate=50.0):
    return SessionState(session_id=1, window_samples=T, sample_rate=rate)


def test_session_start_validates_scenario():
    st = _state()
    with pytest.raises(InputError, match="unknown scenario"):
        st.start({"gesture": "fixed", "age": 30, "gender": "female"}, "mts9d")
    st.start({"gesture": "fixed", "age": 30, "gender": "female", "id": 4}, "mts2d")
    assert st.profile == UserProfile(gesture="fixed", age=30.0, gender="female")
    assert st.user_id == 4


def test_push_motion_validates_frames():
    st = _state()
    with pytest.raises(InputError, match=r"\(n, 3\)"):
        st.push_motion([[1.0, 2.0]])
    with pytest.raises(InputError, match="non-finite"):
        st.push_motion([[1.0, 2.0, float("nan")]])
    st.push_motion(np.zeros((200, 3)))
    assert len(st.acc_buffer) == 150  # rolling window keeps the newest 3 s


def test_window_zero_pads_when_underfull():
    st = _state(T=6, rate=2.0)  # windows span 3 s, so T must equal 3 * rate
    st.push_motion([[1.0, 1.0, 1.0]] * 2)
    env, padded = st.window()
    assert padded
    assert env.acc.shape == (6, 3)
    np.testing.assert_array_equal(env.acc[:4], 0.0)
    np.testing.assert_array_equal(env.acc[4:], 1.0)
    st.push_motion([[1.0, 1.0, 1.0]] * 6)
    _, padded = st.window()
    assert not padded


def test_touch_requires_session_then_trial():
    st = _state()
    with pytest.raises(InputError, match="before session_start"):
        st.touch_trial([0.0, 0.0])
    st.start({"gesture": "fixed", "age": 30, "gender": "female"}, "mts2d")
    with pytest.raises(InputError, match="before trial_start"):
        st.touch_trial([0.0, 0.0])


def _target_dicts(record):
    return [
        {
            "id": t.id,
            "center": t.center.tolist(),
            "size": t.size,
            "speed": t.speed,
            "dir": t.direction.tolist(),
            "intended": t.id == record.intended_id,
        }
        for t in record.targets
    ]


def test_trial_start_needs_one_intended(tiny_dataset):
    st = _state()
    st.start({"gesture": "fixed", "age": 30, "gender": "female"}, "mts2d")
    targets = _target_dicts(tiny_dataset.records[0])
    for t in targets:
        t["intended"] = False
    with pytest.raises(InputError, match="exactly one intended"):
        st.start_trial(targets)


def test_touch_consumes_trial_and_counts(tiny_dataset):
    st = _state(T=6, rate=2.0)
    st.start({"gesture": "fixed", "age": 30, "gender": "female"}, "mts2d")
    targets = _target_dicts(tiny_dataset.records[0])
    st.start_trial(targets)
    trial, _ = st.touch_trial([5.0, 5.0])
    assert trial.trial_id == 0
    assert trial.scenario_id == "mts2d"
    with pytest.raises(InputError, match="before trial_start"):
        st.touch_trial([5.0, 5.0])
    st.start_trial(targets)
    trial2, _ = st.touch_trial([5.0, 5.0])
    assert trial2.trial_id == 1


# -- app construction ----------------------------------------------------------------


def test_create_app_rejects_registry_mismatch(tiny2d, tiny_registry):
    mc = ModelConfig(dim=2, bounds=tiny2d.bounds, sample_rate=tiny2d.sample_rate)
    model = MagnetModel(mc, tiny_registry)
    partial = ExpertRegistry([tiny_registry[tiny_registry.ids()[0]]])
    with pytest.raises(InputError, match="registry experts"):
        create_app(model, partial)


# -- http endpoints -------------------------------------------------------------------


def test_health_and_experts(served, tiny_registry):
    _, client = served
    health = client.get("/health").json()
    assert health == {"status": "ok", "checkpoint": "cafe01"}
    experts = client.get("/experts").json()
    assert experts["schema_version"] == 1
    assert [e["id"] for e in experts["experts"]] == tiny_registry.ids()


def test_predict_endpoint_matches_in_process_bytes(served, tiny_dataset):
    model, client = served
    for record in tiny_dataset.records[:5]:
        payload = record.to_dict()
        resp = client.post("/predict", content=json.dumps(payload))
        assert resp.status_code == 200
        want = predict(model, TrialRecord.from_dict(payload)).canonical_json()
        assert resp.content == want.encode()


def test_predict_endpoint_handles_missing_env(served, tiny_dataset):
    model, client = served
    payload = tiny_dataset.records[0].to_dict()
    del payload["env"]
    resp = client.post("/predict", content=json.dumps(payload))
    assert resp.status_code == 200
    body = json.loads(resp.content)
    assert "env_missing" in body["flags"]
    want = predict(model, TrialRecord.from_dict(payload)).canonical_json()
    assert resp.content == want.encode()


def test_predict_endpoint_rejects_garbage(served):
    _, client = served
    resp = client.post("/predict", content=b"{not json")
    assert resp.status_code == 422
    assert resp.json()["code"] == "bad_request"
    resp = client.post("/predict", content=json.dumps({"trial_id": 1}))
    assert resp.status_code == 422


# -- websocket sessions ----------------------------------------------------------------


def test_session_flow_prediction(served, tiny_dataset, tiny2d):
    model, client = served
    record = tiny_dataset.records[0]
    rate = tiny2d.sample_rate
    T = round(model.cfg.window_duration * rate)
    rng = np.random.default_rng(5)
    frames = rng.normal(0.0, 0.4, size=(T, 3))

    with client.websocket_connect("/session") as ws:
        ws.send_text(json.dumps({
            "type": "session_start",
            "profile": {"gesture": "fixed", "age": 31.5, "gender": "female"},
            "scenario": "mts2d",
        }))
        ws.send_text(json.dumps({"type": "motion", "frames": frames.tolist()}))
        ws.send_text(json.dumps({
            "type": "trial_start", "targets": _target_dicts(record),
        }))
        ws.send_text(json.dumps({
            "type": "touch", "point": record.endpoint.tolist(), "t": 1.25,
        }))
        reply = json.loads(ws.receive_text())

    assert reply["type"] == "prediction"
    assert reply["trial_id"] == 0
    assert "window_padded" not in reply["flags"]

    env = EnvWindow(acc=frames, vib=_vib_channels(frames, rate), sample_rate=rate)
    want = predict(model, TrialRecord(
        trial_id=0,
        user_id=0,
        user=UserProfile(gesture="fixed", age=31.5, gender="female"),
        scenario_id="mts2d",
        targets=record.targets,
        intended_id=record.intended_id,
        endpoint=record.endpoint,
        env=env,
    ))
    assert reply["ranked"] == want.ranking
    assert reply["weights"] == [float(w) for w in want.weights]
    assert reply["per_target_logp"] == [float(x) for x in want.log_densities]
    assert reply["expert_ids"] == want.expert_ids


def test_session_underfull_window_flag(served, tiny_dataset, tiny2d):
    _, client = served
    record = tiny_dataset.records[0]
    with client.websocket_connect("/session") as ws:
        ws.send_text(json.dumps({
            "type": "session_start",
            "profile": {"gesture": "fixed", "age": 31.5, "gender": "female"},
            "scenario": "mts2d",
        }))
        ws.send_text(json.dumps({"type": "motion", "frames": [[0.1, 0.0, 0.2]] * 10}))
        ws.send_text(json.dumps({
            "type": "trial_start", "targets": _target_dicts(record),
        }))
        ws.send_text(json.dumps({
            "type": "touch", "point": record.endpoint.tolist(), "t": 0.2,
        }))
        reply = json.loads(ws.receive_text())
    assert reply["type"] == "prediction"
    assert "window_padded" in reply["flags"]


def test_session_error_replies_keep_session_alive(served, tiny_dataset, tiny2d):
    _, client = served
    record = tiny_dataset.records[0]
    with client.websocket_connect("/session") as ws:
        ws.send_text("{broken")
        assert json.loads(ws.receive_text())["code"] == "bad_json"
        ws.send_text(json.dumps({"type": "warp"}))
        assert json.loads(ws.receive_text())["code"] == "unknown_type"
        ws.send_text(json.dumps({"type": "touch", "point": [0.0, 0.0]}))
        err = json.loads(ws.receive_text())
        assert err["code"] == "bad_message"
        assert "session_start" in err["msg"]
        ws.send_text(json.dumps({
            "type": "session_start",
            "profile": {"gesture": "fixed", "age": 40.0, "gender": "male"},
            "scenario": "mts2d",
        }))
        ws.send_text(json.dumps({"type": "motion", "frames": [[0.0, 0.0, 0.0]] * 3}))
        ws.send_text(json.dumps({
            "type": "trial_start", "targets": _target_dicts(record),
        }))
        ws.send_text(json.dumps({"type": "touch", "point": [1.0, 1.0]}))
        assert json.loads(ws.receive_text())["type"] == "prediction"
