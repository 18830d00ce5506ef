"""HTTP/JSON session API over the session manager.

Humans play oracle: POST /api/sessions opens an episode, the model asks, the
human answers via POST /api/sessions/{id}/answers, and the final response
carries the guessed box, mask, and grasp. Boxes are always normalized floats;
images travel as PNG bytes, or base64 when the client asks for JSON.
"""

from __future__ import annotations

import base64
import json
import os
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import (
    ConfigurationError,
    EncodingError,
    UnknownSceneError,
    UnknownSessionError,
    WrongStateError,
)
from .sessions import SessionManager, make_backend
from .world import WorldConfig, scene_to_dict


@dataclass
class ServiceConfig:
    backend: str = "scripted"  # "scripted" | "model"
    checkpoint: str | None = None
    lexicon_mode: str = "strict"
    host: str = "127.0.0.1"
    port: int = 8000
    beam_width: int = 5
    max_rounds: int = 10
    persist_path: str | None = None
    ui_dist: str | None = None
    world: WorldConfig = field(default_factory=WorldConfig)

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        raw = load_config_file(path)
        world = WorldConfig(**raw.pop("world", {}))
        cfg = cls(**{**raw, "world": world})
        return cfg

    def apply_env(self) -> "ServiceConfig":
        port = os.environ.get("PORT")
        if port is not None:
            self.port = int(port)
        return self


def load_config_file(path: str | Path) -> dict:
    """Single JSON or TOML config file."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


# ---- wire models ----

class CreateSessionRequest(BaseModel):
    instruction: str
    seed: int | None = None
    scene_id: str | None = None
    max_rounds: int = Field(default=10, ge=1)
    target_id: int | None = None


class AnswerRequest(BaseModel):
    answer: str


class TurnModel(BaseModel):
    speaker: str
    text: str


class GraspModel(BaseModel):
    center: list[float]
    angle: float
    width: float
    score: float


class MaskModel(BaseModel):
    size: list[int]
    counts: list[int]

    def pixel_count(self) -> int:
        return sum(self.counts[1::2])


class ResultModel(BaseModel):
    stopped_by: str
    malformed: bool
    bbox: list[float] | None
    iou: float | None
    mask: MaskModel | None
    grasp: GraspModel | None
    mask_pixels: int | None = None


class SessionResponse(BaseModel):
    session_id: str
    scene_id: str
    state: str
    instruction: str
    max_rounds: int
    rounds: int
    turns: list[TurnModel]
    question: str | None
    result: ResultModel | None
    image_base64: str | None = None
    created_at: str
    updated_at: str
    checkpoint_id: str


class SceneResponse(BaseModel):
    scene_id: str
    grid: list[int]
    seed: int
    objects: list[dict]


class ExistRequest(BaseModel):
    scene_id: str
    phrase: str


class ExistResponse(BaseModel):
    answer: str


class HealthResponse(BaseModel):
    status: str
    backend: str
    checkpoint_id: str


def _session_response(manager: SessionManager, snap: dict, with_image: bool = False) -> SessionResponse:
    question = None
    if snap["state"] == "awaiting_answer" and snap["turns"]:
        question = snap["turns"][-1]["text"]
    result = None
    if snap["result"] is not None:
        raw = dict(snap["result"])
        if raw.get("mask"):
            raw["mask_pixels"] = sum(raw["mask"]["counts"][1::2])
        result = ResultModel(**raw)
    image_base64 = None
    if with_image:
        image_base64 = base64.b64encode(manager.scene_png(snap["scene_id"])).decode("ascii")
    return SessionResponse(
        session_id=snap["session_id"],
        scene_id=snap["scene_id"],
        state=snap["state"],
        instruction=snap["instruction"],
        max_rounds=snap["max_rounds"],
        rounds=snap["rounds"],
        turns=[TurnModel(**t) for t in snap["turns"]],
        question=question,
        result=result,
        image_base64=image_base64,
        created_at=snap["created_at"],
        updated_at=snap["updated_at"],
        checkpoint_id=snap["checkpoint_id"],
    )


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    backend, checkpoint_id = make_backend(config.backend, config.checkpoint, config.beam_width)
    manager = SessionManager(
        backend,
        world=config.world,
        lexicon_mode=config.lexicon_mode,
        checkpoint_id=checkpoint_id,
    )

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        if config.persist_path:
            manager.save(config.persist_path)

    app = FastAPI(
        title="askbox",
        description="Interactive visual grounding sessions: the model asks, a human answers, the model boxes the target.",
        version="0.1.0",
        lifespan=lifespan,
    )
    app.state.manager = manager
    app.state.config = config

    @app.exception_handler(EncodingError)
    async def lexicon_error(_req: Request, exc: EncodingError):
        return JSONResponse(status_code=422, content={"detail": "out-of-lexicon words", "words": exc.words})

    @app.exception_handler(UnknownSceneError)
    @app.exception_handler(UnknownSessionError)
    async def not_found(_req: Request, exc: Exception):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(WrongStateError)
    async def conflict(_req: Request, exc: WrongStateError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    @app.exception_handler(ConfigurationError)
    async def bad_request(_req: Request, exc: Exception):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/api/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", backend=config.backend, checkpoint_id=checkpoint_id)

    @app.post("/api/sessions", response_model=SessionResponse)
    def create_session(request: CreateSessionRequest):
        snap = manager.create_session(
            instruction=request.instruction,
            seed=request.seed,
            scene_id=request.scene_id,
            max_rounds=request.max_rounds,
            target_id=request.target_id,
        )
        return _session_response(manager, snap, with_image=True)

    @app.get("/api/sessions/{session_id}", response_model=SessionResponse)
    def get_session(session_id: str):
        return _session_response(manager, manager.get(session_id))

    @app.post("/api/sessions/{session_id}/answers", response_model=SessionResponse)
    def post_answer(session_id: str, request: AnswerRequest):
        return _session_response(manager, manager.post_answer(session_id, request.answer))

    @app.delete("/api/sessions/{session_id}", response_model=SessionResponse)
    def close_session(session_id: str):
        return _session_response(manager, manager.close(session_id))

    @app.get("/api/scenes/random", response_model=SceneResponse)
    def random_scene(seed: int | None = None):
        if seed is None:
            seed = int.from_bytes(os.urandom(4), "big")
        scene = manager.resolve_scene(f"s{seed}")
        return SceneResponse(**scene_to_dict(scene))

    @app.get("/api/scenes/{scene_id}", response_model=SceneResponse)
    def get_scene(scene_id: str):
        return SceneResponse(**scene_to_dict(manager.resolve_scene(scene_id)))

    @app.get("/api/scenes/{scene_id}/image")
    def scene_image(scene_id: str, request: Request):
        png = manager.scene_png(scene_id)
        if "application/json" in request.headers.get("accept", ""):
            return JSONResponse({"image_base64": base64.b64encode(png).decode("ascii")})
        return Response(content=png, media_type="image/png")

    @app.post("/api/exist", response_model=ExistResponse)
    def exist(request: ExistRequest):
        return ExistResponse(answer=manager.exist_check(request.scene_id, request.phrase))

    ui_dist = config.ui_dist
    if ui_dist is None:
        default_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if default_dist.is_dir():
            ui_dist = str(default_dist)
    if ui_dist and Path(ui_dist).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dist, html=True), name="ui")

    return app
