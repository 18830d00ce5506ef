"""Rule-based questioner, oracle, and belief state over symbolic scenes.

A closed question grammar (attribute polar questions, wh-questions,
half-plane location questions, and the fixed stop question) makes the
oracle exact and every episode self-labeling. These routines provide the
gold dialogs for training and the exact reference agents for evaluation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import NamedTuple

from .codec import STOP_QUESTION, normalize_text
from .world import COLORS, SHAPES, SIZES, ObjectSpec, Scene

ATTRIBUTES = ("color", "shape", "size")
ATTRIBUTE_VALUES = {"color": COLORS, "shape": SHAPES, "size": SIZES}
HALVES = ("left", "right", "top", "bottom")


@dataclass(frozen=True)
class DialogTurn:
    speaker: str  # "questioner" | "oracle"
    text: str


@dataclass
class Episode:
    scene_id: str
    instruction: str
    target_id: int
    turns: list[DialogTurn] = field(default_factory=list)
    resolved: bool = False

    @property
    def rounds(self) -> int:
        return len(self.turns) // 2


class CandidateSet(NamedTuple):
    ids: frozenset[int]
    warnings: tuple[str, ...]


def in_half(obj: ObjectSpec, half: str) -> bool:
    cx, cy = obj.center
    if half == "left":
        return cx < 0.5
    if half == "right":
        return cx > 0.5
    if half == "top":
        return cy < 0.5
    if half == "bottom":
        return cy > 0.5
    raise ValueError(f"unknown half: {half}")


def parse_question(question: str):
    """Parse a grammar question into an answer function over objects.

    Returns (kind, answer_fn) where answer_fn(obj) is the truthful answer
    were obj the target, or None when the question is outside the grammar.
    """
    words = normalize_text(question)
    if words == normalize_text(STOP_QUESTION):
        return "stop", None
    if len(words) == 4 and words[:2] == ["is", "it"] and words[3] == "?":
        value = words[2]
        for attr in ("color", "size"):
            if value in ATTRIBUTE_VALUES[attr]:
                return "polar", lambda o, a=attr, v=value: "yes" if o.attribute(a) == v else "no"
    if len(words) == 5 and words[:3] == ["is", "it", "a"] and words[4] == "?":
        value = words[3]
        if value in SHAPES:
            return "polar", lambda o, v=value: "yes" if o.shape == v else "no"
    if len(words) == 7 and words[:4] == ["is", "it", "in", "the"] and words[5:] == ["half", "?"]:
        half = words[4]
        if half in HALVES:
            return "polar", lambda o, h=half: "yes" if in_half(o, h) else "no"
    if len(words) == 5 and words[0] == "what" and words[2:] == ["is", "it", "?"]:
        attr = words[1]
        if attr in ATTRIBUTES:
            return "wh", lambda o, a=attr: o.attribute(a)
    return "unknown", None


def scripted_oracle(scene: Scene, target_id: int, question: str) -> str:
    """Truthful answer about the target; "n/a" outside the grammar."""
    kind, answer_fn = parse_question(question)
    if kind == "stop":
        # The oracle always knows the target; the stop decision itself
        # belongs to the questioner side.
        return "yes"
    if answer_fn is None:
        return "n/a"
    return answer_fn(scene.object_by_id(target_id))


def instruction_filter(instruction: str) -> dict[str, str]:
    """Attribute constraints mentioned in a referring phrase (conjunction)."""
    constraints: dict[str, str] = {}
    for word in normalize_text(instruction):
        for attr, values in ATTRIBUTE_VALUES.items():
            if word in values:
                constraints[attr] = word
    return constraints


def matches_instruction(obj: ObjectSpec, instruction: str) -> bool:
    return all(obj.attribute(a) == v for a, v in instruction_filter(instruction).items())


def make_instruction(scene: Scene, target_id: int, rng: random.Random) -> str:
    """An ambiguous referring phrase for the target.

    Picks an attribute value the target shares with at least one other
    object; falls back to the bare phrase when every attribute is unique.
    """
    target = scene.object_by_id(target_id)
    options = []
    for attr in ("color", "size", "shape"):
        value = target.attribute(attr)
        if sum(1 for o in scene.objects if o.attribute(attr) == value) >= 2:
            options.append((attr, value))
    if not options:
        return "the object"
    attr, value = rng.choice(options)
    if attr == "shape":
        return f"the {value}"
    return f"the {value} object"


def consistent_candidates(scene: Scene, instruction: str, turns: list[DialogTurn]) -> CandidateSet:
    """Objects consistent with the instruction and every parsed QA constraint.

    Unparseable turns and "n/a" answers contribute no constraint; the former
    are reported in the warnings list.
    """
    ids = {o.id for o in scene.objects if matches_instruction(o, instruction)}
    warnings: list[str] = []

    question = None
    for turn in turns:
        if turn.speaker == "questioner":
            question = turn.text
            continue
        if question is None:
            warnings.append(f"answer without question: {turn.text!r}")
            continue
        kind, answer_fn = parse_question(question)
        answer = normalize_text(turn.text)
        answer = answer[0] if answer else ""
        if kind == "stop" or answer == "n/a":
            pass
        elif kind == "polar" and answer in ("yes", "no"):
            want = answer == "yes"
            ids = {i for i in ids if (answer_fn(scene.object_by_id(i)) == "yes") == want}
        elif kind == "wh":
            attr_values = {v for vals in ATTRIBUTE_VALUES.values() for v in vals}
            if answer in attr_values:
                ids = {i for i in ids if answer_fn(scene.object_by_id(i)) == answer}
            else:
                warnings.append(f"unusable answer: {turn.text!r}")
        else:
            warnings.append(f"unparseable turn: {question!r} -> {turn.text!r}")
        question = None

    return CandidateSet(frozenset(ids), tuple(warnings))


def question_pool() -> list[str]:
    """All grammar questions in the fixed tie-break order."""
    pool = []
    for color in COLORS:
        pool.append(f"is it {color} ?")
    pool.append("what color is it ?")
    for shape in SHAPES:
        pool.append(f"is it a {shape} ?")
    pool.append("what shape is it ?")
    for size in SIZES:
        pool.append(f"is it {size} ?")
    pool.append("what size is it ?")
    for half in HALVES:
        pool.append(f"is it in the {half} half ?")
    return pool


def scripted_questioner(scene: Scene, candidates: set[int], history: list[DialogTurn]) -> str:
    """Greedy question choice minimizing the worst-case candidate cell.

    Ties resolve to the earliest question in the fixed pool order; questions
    already asked are skipped. When nothing splits the candidates, the stop
    question is returned.
    """
    asked = {t.text for t in history if t.speaker == "questioner"}
    objs = [scene.object_by_id(i) for i in sorted(candidates)]
    best_question, best_worst = None, None
    for question in question_pool():
        if question in asked:
            continue
        _, answer_fn = parse_question(question)
        cells: dict[str, int] = {}
        for obj in objs:
            key = answer_fn(obj)
            cells[key] = cells.get(key, 0) + 1
        worst = max(cells.values())
        if worst == len(objs):
            continue  # does not split
        if best_worst is None or worst < best_worst:
            best_question, best_worst = question, worst
    if best_question is None:
        return STOP_QUESTION
    return best_question


def signature(obj: ObjectSpec) -> tuple:
    """Identity under the closed grammar: attributes plus half-plane flags."""
    return (
        obj.color,
        obj.shape,
        obj.size,
        tuple(in_half(obj, h) for h in HALVES),
    )


def has_distinct_signatures(scene: Scene) -> bool:
    sigs = [signature(o) for o in scene.objects]
    return len(set(sigs)) == len(sigs)


def run_scripted_episode(
    scene: Scene,
    target_id: int,
    rng: random.Random,
    max_rounds: int = 8,
) -> Episode:
    """Roll the exact closed loop to produce a gold episode."""
    episode = Episode(
        scene_id=scene.scene_id,
        instruction=make_instruction(scene, target_id, rng),
        target_id=target_id,
    )
    for _ in range(max_rounds):
        candidates = consistent_candidates(scene, episode.instruction, episode.turns).ids
        if candidates == {target_id}:
            episode.resolved = True
            return episode
        question = scripted_questioner(scene, set(candidates), episode.turns)
        if question == STOP_QUESTION:
            return episode  # nothing can split further
        answer = scripted_oracle(scene, target_id, question)
        episode.turns.append(DialogTurn("questioner", question))
        episode.turns.append(DialogTurn("oracle", answer))
    candidates = consistent_candidates(scene, episode.instruction, episode.turns).ids
    episode.resolved = candidates == {target_id}
    return episode
