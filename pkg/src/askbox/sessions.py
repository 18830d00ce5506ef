"""Turn-taking session manager: the machine side of the human-oracle loop.

The service plays questioner, stop checker, and guesser; the human answers as
oracle. Sessions walk a fixed state machine (asking -> awaiting_answer ->
... -> guessed -> closed); a guessed session is immutable except for closure.
Per-session locks serialize writers, so concurrent sessions stay isolated.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .agents import EpisodeContext, ModelAgent, ScriptedAgent
from .codec import LEXICON, build_vocab, encode_text, normalize_text
from .errors import (
    EncodingError,
    UnknownSceneError,
    UnknownSessionError,
    WrongStateError,
)
from .grasp import bbox_to_mask, propose_and_select
from .model import image_tensor
from .scripted import DialogTurn, instruction_filter
from .selfplay import iou
from .world import Scene, WorldConfig, generate_scene, image_to_png, render

AWAITING_ANSWER = "awaiting_answer"
ASKING = "asking"
GUESSED = "guessed"
CLOSED = "closed"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class Session:
    session_id: str
    scene: Scene
    instruction: str
    max_rounds: int
    target_id: int | None
    checkpoint_id: str
    state: str = ASKING
    turns: list[DialogTurn] = field(default_factory=list)
    result: dict | None = None
    created_at: str = field(default_factory=_now)
    updated_at: str = field(default_factory=_now)

    @property
    def rounds(self) -> int:
        return len(self.turns) // 2

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "scene_id": self.scene.scene_id,
            "instruction": self.instruction,
            "state": self.state,
            "max_rounds": self.max_rounds,
            "rounds": self.rounds,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in self.turns],
            "result": self.result,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "checkpoint_id": self.checkpoint_id,
        }


class ScriptedExist:
    """Ground-truth existence check used by the scripted backend."""

    @staticmethod
    def answer(scene: Scene, phrase: str) -> str:
        constraints = instruction_filter(phrase)
        if not constraints:
            return "no"
        present = any(
            all(o.attribute(a) == v for a, v in constraints.items()) for o in scene.objects
        )
        return "yes" if present else "no"


class SessionManager:
    def __init__(
        self,
        backend,
        world: WorldConfig = WorldConfig(),
        lexicon_mode: str = "strict",
        checkpoint_id: str = "scripted",
    ):
        if lexicon_mode not in ("strict", "lenient"):
            raise ValueError("lexicon_mode must be 'strict' or 'lenient'")
        self.backend = backend
        self.world = world
        self.lexicon_mode = lexicon_mode
        self.checkpoint_id = checkpoint_id
        self.vocab = build_vocab()
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._store_lock = threading.Lock()

    # ---- scenes ----

    def resolve_scene(self, scene_id: str) -> Scene:
        if not scene_id.startswith("s"):
            raise UnknownSceneError(f"unknown scene: {scene_id!r}")
        try:
            seed = int(scene_id[1:])
        except ValueError as exc:
            raise UnknownSceneError(f"unknown scene: {scene_id!r}") from exc
        return generate_scene(seed, self.world)

    def scene_png(self, scene_id: str) -> bytes:
        scene = self.resolve_scene(scene_id)
        return image_to_png(render(scene, self.world.resolution))

    # ---- lexicon handling ----

    def _check_text(self, text: str, *, fallback: str | None = None) -> str:
        """Validate or repair free text against the closed lexicon."""
        if not text.strip():
            raise EncodingError(["<empty>"])
        if self.lexicon_mode == "strict":
            encode_text(self.vocab, text)  # raises listing the offending words
            return text
        kept = [w for w in normalize_text(text) if w in LEXICON]
        if not kept:
            if fallback is None:
                raise EncodingError(normalize_text(text))
            return fallback
        return " ".join(kept)

    # ---- session lifecycle ----

    def _ctx(self, session: Session) -> EpisodeContext:
        image = None
        if isinstance(self.backend, ModelAgent):
            image = image_tensor(render(session.scene, self.world.resolution))
        return EpisodeContext(
            scene=session.scene,
            image=image,
            instruction=session.instruction,
            turns=session.turns,
            target_id=session.target_id,
        )

    def _advance(self, session: Session) -> None:
        """Run the stop check; either ask the next question or guess."""
        ctx = self._ctx(session)
        stop = self.backend.stop_check(ctx)
        if stop == "yes" or session.rounds >= session.max_rounds:
            predicted = self.backend.guess(ctx)
            result = {
                "stopped_by": "stop_yes" if stop == "yes" else "max_rounds",
                "malformed": predicted is None,
                "bbox": None,
                "iou": None,
                "mask": None,
                "grasp": None,
            }
            if predicted is not None:
                image = render(session.scene, self.world.resolution)
                mask = bbox_to_mask(image, predicted, session.scene)
                grasp = propose_and_select(mask, session.scene) if mask.pixel_count else None
                result["bbox"] = list(predicted)
                result["mask"] = mask.to_rle()
                result["grasp"] = grasp.to_dict() if grasp else None
                if session.target_id is not None:
                    target_box = session.scene.object_by_id(session.target_id).bbox
                    result["iou"] = iou(predicted, target_box)
            session.result = result
            session.state = GUESSED
        else:
            question = self.backend.ask(ctx)
            session.turns.append(DialogTurn("questioner", question))
            session.state = AWAITING_ANSWER
        session.updated_at = _now()

    def create_session(
        self,
        instruction: str,
        seed: int | None = None,
        scene_id: str | None = None,
        max_rounds: int = 10,
        target_id: int | None = None,
    ) -> dict:
        if (seed is None) == (scene_id is None):
            raise ValueError("exactly one of seed or scene_id is required")
        if max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        scene = self.resolve_scene(scene_id if scene_id is not None else f"s{seed}")
        if target_id is not None and not (0 <= target_id < len(scene.objects)):
            raise ValueError(f"target_id {target_id} out of range")
        instruction = self._check_text(instruction)
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            scene=scene,
            instruction=instruction,
            max_rounds=max_rounds,
            target_id=target_id,
            checkpoint_id=self.checkpoint_id,
        )
        self._advance(session)
        with self._store_lock:
            self._sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()
        return session.snapshot()

    def _session_and_lock(self, session_id: str) -> tuple[Session, threading.Lock]:
        with self._store_lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise UnknownSessionError(f"unknown session: {session_id}")
            return session, self._locks[session_id]

    def get(self, session_id: str) -> dict:
        session, lock = self._session_and_lock(session_id)
        with lock:
            return session.snapshot()

    def post_answer(self, session_id: str, answer: str) -> dict:
        session, lock = self._session_and_lock(session_id)
        with lock:
            if session.state != AWAITING_ANSWER:
                raise WrongStateError(f"session is {session.state}, not awaiting an answer")
            answer = self._check_text(answer, fallback="n/a")
            session.turns.append(DialogTurn("oracle", answer))
            session.state = ASKING
            self._advance(session)
            return session.snapshot()

    def close(self, session_id: str) -> dict:
        session, lock = self._session_and_lock(session_id)
        with lock:
            if session.state != GUESSED:
                raise WrongStateError(f"only a guessed session can be closed, not {session.state}")
            session.state = CLOSED
            session.updated_at = _now()
            return session.snapshot()

    # ---- existence check ----

    def exist_check(self, scene_id: str, phrase: str) -> str:
        scene = self.resolve_scene(scene_id)
        phrase = self._check_text(phrase)
        if isinstance(self.backend, ModelAgent):
            image = image_tensor(render(scene, self.world.resolution))
            return self.backend.exist(image, phrase)
        return ScriptedExist.answer(scene, phrase)

    # ---- persistence ----

    def save(self, path: str | Path) -> None:
        with self._store_lock:
            payload = [s.snapshot() for s in self._sessions.values()]
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")

    def load(self, path: str | Path) -> int:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        count = 0
        with self._store_lock:
            for snap in payload:
                scene = self.resolve_scene(snap["scene_id"])
                session = Session(
                    session_id=snap["session_id"],
                    scene=scene,
                    instruction=snap["instruction"],
                    max_rounds=snap["max_rounds"],
                    target_id=None,
                    checkpoint_id=snap["checkpoint_id"],
                    state=snap["state"],
                    turns=[DialogTurn(t["speaker"], t["text"]) for t in snap["turns"]],
                    result=snap["result"],
                    created_at=snap["created_at"],
                    updated_at=snap["updated_at"],
                )
                self._sessions[session.session_id] = session
                self._locks[session.session_id] = threading.Lock()
                count += 1
        return count


def make_backend(kind: str, checkpoint_path: str | None = None, beam_width: int = 5):
    """Backend factory: 'scripted' needs nothing, 'model' needs a checkpoint."""
    if kind == "scripted":
        return ScriptedAgent(), "scripted"
    if kind == "model":
        if not checkpoint_path:
            raise ValueError("model backend requires a checkpoint path")
        from .checkpoint import load_checkpoint, restore_model
        from .codec import build_vocab

        vocab = build_vocab()
        ckpt = load_checkpoint(checkpoint_path)
        model = restore_model(ckpt, expected_vocab_hash=vocab.lexicon_hash())
        agent = ModelAgent(model, vocab, beam_width=beam_width)
        return agent, f"model:{Path(checkpoint_path).name}@{ckpt.step}"
    raise ValueError(f"unknown backend kind: {kind!r}")
