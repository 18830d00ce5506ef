"""Unified multi-task training corpus synthesized from scripted episodes.

Each scene yields samples for seven task tags: grounding, oracle answering,
question generation, the stop check, captioning, box-conditioned VQA, and
existence detection. Stop-check samples are taken at every truncation point
of every episode (truncated prefix -> "no", completed dialog -> "yes").
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path

from .codec import TASKS, bbox_token_text, prompt_text
from .errors import ConfigurationError
from .scripted import (
    ATTRIBUTES,
    DialogTurn,
    Episode,
    question_pool,
    run_scripted_episode,
    scripted_oracle,
)
from .world import (
    COLORS,
    SHAPES,
    SIZES,
    Scene,
    WorldConfig,
    generate_scene,
    image_to_png,
    render,
)

DEFAULT_WEIGHTS = {
    "ground": 3.0,
    "oracle_answer": 3.0,
    "ask": 3.0,
    "stop_check": 2.0,
    "vqa": 1.0,
    "caption": 1.0,
    "exist": 1.0,
}


@dataclass(frozen=True)
class TaskSample:
    task: str
    scene_id: str
    input_text: str
    target_text: str


def validate_weights(weights: dict[str, float]) -> None:
    unknown = set(weights) - set(TASKS)
    if unknown:
        raise ConfigurationError(f"unknown task tags in mix weights: {sorted(unknown)}")
    if any(w < 0 for w in weights.values()):
        raise ConfigurationError("mix weights must be nonnegative")
    if not any(w > 0 for w in weights.values()):
        raise ConfigurationError("at least one mix weight must be positive")


def caption_sentence(scene: Scene) -> str:
    return " ".join(f"a {o.size} {o.color} {o.shape} ." for o in scene.objects)


def _full_phrase_unique(scene: Scene, obj) -> bool:
    return not any(
        o.id != obj.id and (o.size, o.color, o.shape) == (obj.size, obj.color, obj.shape)
        for o in scene.objects
    )


def _sample_up_to(items: list, k: int, rng: random.Random) -> list:
    if len(items) <= k:
        return list(items)
    return rng.sample(items, k)


def _exist_phrases(scene: Scene, rng: random.Random) -> tuple[str, str]:
    """One phrase naming a present combination and one naming an absent one."""
    if rng.random() < 0.5:
        combos = [(c, s) for c in COLORS for s in SHAPES]
        present = {(o.color, o.shape) for o in scene.objects}
    else:
        combos = [(z, c, s) for z in SIZES for c in COLORS for s in SHAPES]
        present = {(o.size, o.color, o.shape) for o in scene.objects}
    absent = [c for c in combos if c not in present]
    positive = rng.choice(sorted(present))
    negative = rng.choice(absent)
    return " ".join(positive), " ".join(negative)


def scene_samples(
    scene: Scene,
    weights: dict[str, float],
    rng: random.Random,
    episodes: list[Episode] | None = None,
    episodes_per_scene: int = 3,
) -> tuple[list[TaskSample], list[Episode]]:
    """All derivable samples for one scene, for tags with positive weight.

    Several targets per scene each get a scripted episode; dialog-conditioned
    grounding samples come only from resolved episodes (an unresolved dialog
    does not determine the target, so its box would be a noisy label).
    """
    if episodes is None:
        n = len(scene.objects)
        targets = rng.sample(range(n), min(episodes_per_scene, n))
        episodes = [run_scripted_episode(scene, t, rng) for t in targets]
    out: list[TaskSample] = []

    def emit(task, input_text, target_text):
        if weights.get(task, 0) > 0:
            out.append(TaskSample(task, scene.scene_id, input_text, target_text))

    for episode in episodes:
        target = scene.object_by_id(episode.target_id)
        target_box = bbox_token_text(target.bbox)
        instruction, turns, rounds = episode.instruction, episode.turns, episode.rounds

        if episode.resolved:
            emit("ground", prompt_text("ground", instruction, turns), target_box)

        for j in range(rounds):
            prefix = turns[: 2 * j]
            question, answer = turns[2 * j].text, turns[2 * j + 1].text
            emit("ask", prompt_text("ask", instruction, prefix), question)
            emit(
                "oracle_answer",
                prompt_text("oracle_answer", instruction, turns[: 2 * j + 1], extra=target_box),
                answer,
            )

        for j in range(rounds + 1):
            # A prefix cut before the final round never pins down the target
            # (the loop would have stopped earlier otherwise), so only the
            # completed dialog of a resolved episode gets "yes".
            complete = episode.resolved and j == rounds
            emit(
                "stop_check",
                prompt_text("stop_check", instruction, turns[: 2 * j]),
                "yes" if complete else "no",
            )

    # plain referring-expression grounding (no dialog): unique full phrase
    # straight to a box; this is what teaches content -> location
    unique = [o for o in scene.objects if _full_phrase_unique(scene, o)]
    for obj in _sample_up_to(unique, 2, rng):
        phrase = f"the {obj.size} {obj.color} {obj.shape}"
        emit("ground", prompt_text("ground", phrase), bbox_token_text(obj.bbox))

    # standalone oracle drill: random grammar question about a random target
    pool = question_pool()
    for _ in range(2):
        obj = scene.objects[rng.randrange(len(scene.objects))]
        question = rng.choice(pool)
        emit(
            "oracle_answer",
            prompt_text(
                "oracle_answer",
                "the object",
                [DialogTurn("questioner", question)],
                extra=bbox_token_text(obj.bbox),
            ),
            scripted_oracle(scene, obj.id, question),
        )

    emit("caption", prompt_text("caption"), caption_sentence(scene))

    for _ in range(2):
        obj = scene.objects[rng.randrange(len(scene.objects))]
        attr = rng.choice(ATTRIBUTES)
        emit(
            "vqa",
            prompt_text("vqa", f"what {attr} is it ?", extra=bbox_token_text(obj.bbox)),
            obj.attribute(attr),
        )

    pos, neg = _exist_phrases(scene, rng)
    emit("exist", prompt_text("exist", extra=pos), "yes")
    emit("exist", prompt_text("exist", extra=neg), "no")

    return out, episodes


def synthesize_dataset(
    weights: dict[str, float],
    seeds: range,
    world: WorldConfig = WorldConfig(),
) -> tuple[list[TaskSample], list[Episode]]:
    """Deterministic corpus over a seed range; pure in (weights, seeds, world)."""
    validate_weights(weights)
    samples: list[TaskSample] = []
    episodes: list[Episode] = []
    for seed in seeds:
        scene = generate_scene(seed, world)
        rng = random.Random(seed * 2654435761 % (2**31))  # decorrelate from scene rng
        scene_out, scene_episodes = scene_samples(scene, weights, rng)
        samples.extend(scene_out)
        episodes.extend(scene_episodes)
    return samples, episodes


def episode_to_dict(episode: Episode) -> dict:
    return {
        "scene_id": episode.scene_id,
        "instruction": episode.instruction,
        "target_id": episode.target_id,
        "turns": [{"speaker": t.speaker, "text": t.text} for t in episode.turns],
        "resolved": episode.resolved,
    }


def episode_from_dict(data: dict) -> Episode:
    return Episode(
        scene_id=data["scene_id"],
        instruction=data["instruction"],
        target_id=data["target_id"],
        turns=[DialogTurn(t["speaker"], t["text"]) for t in data["turns"]],
        resolved=data["resolved"],
    )


def write_dataset(
    out_dir: str | Path,
    splits: dict[str, range],
    weights: dict[str, float] | None = None,
    world: WorldConfig = WorldConfig(),
) -> dict:
    """Emit samples, episodes, scene images, and the split manifest.

    Layout: manifest.json, samples-{split}.jsonl, episodes-{split}.jsonl,
    images/{scene_id}.png. Byte-identical across runs for the same inputs.
    """
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    validate_weights(weights)
    for name_a, rng_a in splits.items():
        for name_b, rng_b in splits.items():
            if name_a < name_b and set(rng_a) & set(rng_b):
                raise ConfigurationError(f"splits {name_a} and {name_b} share seeds")

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    counts: dict[str, dict[str, int]] = {}
    for split, seeds in splits.items():
        samples, episodes = synthesize_dataset(weights, seeds, world)
        with open(out / f"samples-{split}.jsonl", "w", encoding="utf-8") as f:
            for s in samples:
                record = asdict(s)
                record["image_path"] = f"images/{s.scene_id}.png"
                f.write(json.dumps(record, sort_keys=True) + "\n")
        with open(out / f"episodes-{split}.jsonl", "w", encoding="utf-8") as f:
            for e in episodes:
                f.write(json.dumps(episode_to_dict(e), sort_keys=True) + "\n")
        for seed in seeds:
            scene = generate_scene(seed, world)
            png = image_to_png(render(scene, world.resolution))
            (out / "images" / f"{scene.scene_id}.png").write_bytes(png)
        per_tag: dict[str, int] = {}
        for s in samples:
            per_tag[s.task] = per_tag.get(s.task, 0) + 1
        counts[split] = {
            "scenes": len(set(seeds)),
            "episodes": len(episodes),
            "samples": len(samples),
            **per_tag,
        }

    manifest = {
        "weights": weights,
        "world": asdict(world),
        "splits": {k: [r.start, r.stop] for k, r in splits.items()},
        "counts": counts,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


def load_manifest(data_dir: str | Path) -> dict:
    with open(Path(data_dir) / "manifest.json", encoding="utf-8") as f:
        return json.load(f)


def load_samples(data_dir: str | Path, split: str) -> list[TaskSample]:
    samples = []
    with open(Path(data_dir) / f"samples-{split}.jsonl", encoding="utf-8") as f:
        for line in f:
            r = json.loads(line)
            samples.append(TaskSample(r["task"], r["scene_id"], r["input_text"], r["target_text"]))
    return samples


def load_episodes(data_dir: str | Path, split: str) -> list[Episode]:
    episodes = []
    with open(Path(data_dir) / f"episodes-{split}.jsonl", encoding="utf-8") as f:
        for line in f:
            episodes.append(episode_from_dict(json.loads(line)))
    return episodes
