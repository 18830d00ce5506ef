"""Pluggable questioner/oracle/guesser/stop-check agents.

One episode may be served by one agent instance in every role (self-play) or
by different instances per role (mixed matrices). The scripted agent is exact
on the closed grammar; the model agent drives the trained seq2seq through the
task prompts; the random guesser is the analytic baseline.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import torch

from .codec import Vocab, bbox_token_text, build_prompt, decode_bbox, decode_text
from .errors import DecodeError
from .model import Seq2SeqModel
from .scripted import (
    DialogTurn,
    consistent_candidates,
    scripted_oracle,
    scripted_questioner,
)
from .world import Scene


@dataclass
class EpisodeContext:
    scene: Scene
    image: torch.Tensor | None
    instruction: str
    turns: list[DialogTurn] = field(default_factory=list)
    target_id: int | None = None  # visible to the oracle role only


class ScriptedAgent:
    """Exact symbolic agent for all four roles."""

    name = "scripted"
    backing = "scripted"

    def _candidates(self, ctx: EpisodeContext) -> frozenset[int]:
        return consistent_candidates(ctx.scene, ctx.instruction, ctx.turns).ids

    def ask(self, ctx: EpisodeContext) -> str:
        candidates = self._candidates(ctx)
        if len(candidates) < 2:
            candidates = frozenset(o.id for o in ctx.scene.objects)
        return scripted_questioner(ctx.scene, set(candidates), ctx.turns)

    def answer(self, ctx: EpisodeContext, question: str) -> str:
        return scripted_oracle(ctx.scene, ctx.target_id, question)

    def stop_check(self, ctx: EpisodeContext) -> str:
        return "yes" if len(self._candidates(ctx)) == 1 else "no"

    def guess(self, ctx: EpisodeContext):
        candidates = self._candidates(ctx)
        if candidates:
            chosen = min(candidates)
        else:
            chosen = 0  # contradictory dialog: fall back deterministically
        return ctx.scene.object_by_id(chosen).bbox


class ModelAgent:
    """All roles served by one checkpoint through task prompts."""

    backing = "model"

    def __init__(self, model: Seq2SeqModel, vocab: Vocab, beam_width: int = 5, name: str = "model"):
        self.model = model
        self.vocab = vocab
        self.beam_width = beam_width
        self.name = name

    def _generate(self, ctx: EpisodeContext, task: str, history, extra: str | None = None) -> list[int]:
        prompt = build_prompt(self.vocab, task, ctx.instruction, history, extra)
        return self.model.generate(ctx.image, prompt, beam_width=self.beam_width, max_new=48)

    def _generate_text(self, ctx, task, history, extra=None) -> str:
        return decode_text(self.vocab, self._generate(ctx, task, history, extra))

    def ask(self, ctx: EpisodeContext) -> str:
        text = self._generate_text(ctx, "ask", ctx.turns)
        return text if text else "?"

    def answer(self, ctx: EpisodeContext, question: str) -> str:
        target_box = bbox_token_text(ctx.scene.object_by_id(ctx.target_id).bbox)
        history = ctx.turns + [DialogTurn("questioner", question)]
        text = self._generate_text(ctx, "oracle_answer", history, extra=target_box)
        return text if text else "n/a"

    def stop_check(self, ctx: EpisodeContext) -> str:
        text = self._generate_text(ctx, "stop_check", ctx.turns)
        return "yes" if text.split()[:1] == ["yes"] else "no"

    def guess(self, ctx: EpisodeContext):
        ids = self._generate(ctx, "ground", ctx.turns)
        try:
            return decode_bbox(self.vocab, ids)
        except DecodeError:
            return None

    def exist(self, image: torch.Tensor, phrase: str) -> str:
        prompt = build_prompt(self.vocab, "exist", extra=phrase)
        text = decode_text(self.vocab, self.model.generate(image, prompt, beam_width=self.beam_width, max_new=4))
        return "yes" if text.split()[:1] == ["yes"] else "no"


class RandomGuesser:
    """Uniform object choice; succeeds with probability 1/N per scene."""

    name = "random"
    backing = "scripted"

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def guess(self, ctx: EpisodeContext):
        obj = self.rng.choice(ctx.scene.objects)
        return obj.bbox
