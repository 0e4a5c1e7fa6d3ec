"""Live prediction service: request/response prediction plus stateful
browser sessions over a websocket.

A session mirrors the capture pipeline: the client streams 3-axis
acceleration frames into a rolling window capped at the model's 3 s
span, announces the scene it is rendering, and sends the touch point;
the server derives the vibration channels, assembles a trial record,
and replies with the ranked prediction. Sessions are isolated; the
model and registry are shared read-only.

Message protocol (one JSON object per websocket text frame):
  client -> server
    {"type": "session_start", "profile": {gesture, age, gender[, id]},
     "scenario": "<preset name>"}
    {"type": "motion", "frames": [[ax, ay, az], ...]}
    {"type": "trial_start", "targets": [{id, center, size, speed, dir,
     intended}, ...]}
    {"type": "touch", "point": [x, y], "t": seconds}
  server -> client
    {"type": "prediction", "trial_id", "ranked", "weights",
     "per_target_logp", "target_ids", "expert_ids", "flags"}
    {"type": "error", "code", "msg"}

A touch with an underfull motion buffer is served anyway: the window is
zero-padded at the old end and the reply carries a "window_padded" flag.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response, WebSocket, WebSocketDisconnect

from .datagen import PRESETS, ScenarioConfig, _vib_channels
from .errors import InputError, MagnetError
from .experts import ExpertRegistry
from .gaussian import TargetState
from .model import MagnetModel, predict
from .records import EnvWindow, TrialRecord, UserProfile

ENV_HOST = "MAGNET_HOST"
ENV_PORT = "MAGNET_PORT"


def _error_payload(code: str, exc: Exception) -> dict:
    return {"type": "error", "code": code, "msg": str(exc)}


@dataclass
class SessionState:
    """Per-connection state; never shared across sessions."""

    session_id: int
    window_samples: int
    sample_rate: float
    profile: UserProfile | None = None
    user_id: int = 0
    scenario: ScenarioConfig | None = None
    acc_buffer: deque = field(default_factory=deque)
    targets: list[TargetState] | None = None
    intended_id: int | None = None
    trial_counter: int = 0

    def __post_init__(self):
        self.acc_buffer = deque(self.acc_buffer, maxlen=self.window_samples)

    def start(self, profile: dict, scenario: str):
        if scenario not in PRESETS:
            raise InputError(f"unknown scenario '{scenario}'; presets: {sorted(PRESETS)}")
        self.scenario = PRESETS[scenario]()
        self.user_id = int(profile.get("id", 0))
        self.profile = UserProfile(
            gesture=profile["gesture"], age=float(profile["age"]), gender=profile["gender"]
        )

    def push_motion(self, frames) -> None:
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise InputError(f"motion frames must be (n, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("motion frames contain non-finite values")
        self.acc_buffer.extend(arr)

    def start_trial(self, targets: list[dict]) -> None:
        if self.profile is None:
            raise InputError("trial_start before session_start")
        parsed = [
            TargetState(
                id=t["id"],
                center=np.asarray(t["center"], dtype=np.float64),
                size=t["size"],
                speed=t["speed"],
                direction=np.asarray(t["dir"], dtype=np.float64),
                dim=len(t["center"]),
            )
            for t in targets
        ]
        intended = [t["id"] for t in targets if t.get("intended")]
        if len(intended) != 1:
            raise InputError(f"trial_start needs exactly one intended target, got {len(intended)}")
        self.targets = parsed
        self.intended_id = intended[0]

    def window(self) -> tuple[EnvWindow, bool]:
        """Assemble the most recent 3 s window, zero-padded when underfull."""
        T = self.window_samples
        frames = np.array(self.acc_buffer, dtype=np.float64).reshape(-1, 3)
        padded = frames.shape[0] < T
        if padded:
            frames = np.concatenate([np.zeros((T - frames.shape[0], 3)), frames])
        acc = frames[-T:]
        vib = _vib_channels(acc, self.sample_rate)
        return EnvWindow(acc=acc, vib=vib, sample_rate=self.sample_rate), padded

    def touch_trial(self, point) -> tuple[TrialRecord, bool]:
        if self.profile is None:
            raise InputError("touch before session_start")
        if self.targets is None:
            raise InputError("touch before trial_start")
        env, padded = self.window()
        trial = TrialRecord(
            trial_id=self.trial_counter,
            user_id=self.user_id,
            user=self.profile,
            scenario_id=self.scenario.name,
            targets=self.targets,
            intended_id=self.intended_id,
            endpoint=np.asarray(point, dtype=np.float64),
            env=env,
        )
        self.trial_counter += 1
        self.targets = None
        self.intended_id = None
        return trial, padded


def create_app(
    model: MagnetModel, registry: ExpertRegistry, checkpoint_hash: str = ""
) -> FastAPI:
    if registry.ids() != model.expert_ids:
        raise InputError(
            f"registry experts {registry.ids()} != checkpoint experts {model.expert_ids}"
        )
    model.eval()
    app = FastAPI(title="moving-target intent service")
    counter = {"sessions": 0}
    T = round(model.cfg.window_duration * model.cfg.sample_rate)

    @app.get("/health")
    async def health():
        return {"status": "ok", "checkpoint": checkpoint_hash}

    @app.get("/experts")
    async def experts():
        return {
            "schema_version": 1,
            "experts": [registry[eid].to_dict() for eid in registry.ids()],
        }

    @app.post("/predict")
    async def predict_endpoint(request: Request):
        # The reply is the record's canonical serialization so that service
        # output is byte-identical to in-process prediction.
        try:
            payload = json.loads(await request.body())
            trial = TrialRecord.from_dict(payload)
            record = predict(model, trial)
        except (MagnetError, json.JSONDecodeError, TypeError, ValueError) as e:
            return Response(
                content=json.dumps(_error_payload("bad_request", e)),
                media_type="application/json",
                status_code=422,
            )
        return Response(content=record.canonical_json(), media_type="application/json")

    @app.websocket("/session")
    async def session(ws: WebSocket):
        await ws.accept()
        counter["sessions"] += 1
        state = SessionState(
            session_id=counter["sessions"],
            window_samples=T,
            sample_rate=model.cfg.sample_rate,
        )
        while True:
            try:
                raw = await ws.receive_text()
            except WebSocketDisconnect:
                return
            try:
                msg = json.loads(raw)
                kind = msg.get("type")
                if kind == "session_start":
                    state.start(msg["profile"], msg["scenario"])
                elif kind == "motion":
                    state.push_motion(msg["frames"])
                elif kind == "trial_start":
                    state.start_trial(msg["targets"])
                elif kind == "touch":
                    trial, padded = state.touch_trial(msg["point"])
                    record = predict(model, trial)
                    flags = list(record.flags) + (["window_padded"] if padded else [])
                    await ws.send_text(json.dumps({
                        "type": "prediction",
                        "trial_id": record.trial_id,
                        "ranked": record.ranking,
                        "weights": record.weights,
                        "per_target_logp": record.log_densities,
                        "target_ids": record.target_ids,
                        "expert_ids": record.expert_ids,
                        "flags": flags,
                    }))
                else:
                    await ws.send_text(json.dumps(_error_payload(
                        "unknown_type", InputError(f"unknown message type '{kind}'")
                    )))
            except json.JSONDecodeError as e:
                await ws.send_text(json.dumps(_error_payload("bad_json", e)))
            except (MagnetError, KeyError, TypeError, ValueError) as e:
                await ws.send_text(json.dumps(_error_payload("bad_message", e)))

    return app


def serve(checkpoint_path, registry_path, host="127.0.0.1", port=8000):
    """Load artifacts, build the app, and block serving it."""
    import uvicorn

    from .nn.checkpoint import file_hash

    registry = ExpertRegistry.load(registry_path)
    model = MagnetModel.load(checkpoint_path)
    app = create_app(model, registry, checkpoint_hash=file_hash(checkpoint_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")
