"""Self-play evaluation: the stop protocol, IoU scoring, agent matrices,
and the data-mix ablation suite.

An episode runs the stop check before each round; a "yes" (or the round cap)
hands control to the guesser, whose box is scored against the ground truth.
A prediction counts as a success when IoU exceeds 0.5.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .agents import EpisodeContext, ModelAgent, RandomGuesser, ScriptedAgent
from .codec import STOP_QUESTION, build_vocab
from .corpus import synthesize_dataset
from .errors import TrainingDiverged
from .model import ModelConfig, build_model, image_tensor
from .scripted import DialogTurn, has_distinct_signatures, make_instruction
from .training import SceneImages, TrainConfig, evaluate_tags, split_by_tag, train
from .world import Scene, WorldConfig, generate_scene, render

SUCCESS_IOU = 0.5  # strict: success requires iou strictly greater


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection over union; 0 for disjoint boxes or a zero-area union."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass
class EpisodeResult:
    scene_id: str
    instruction: str
    turns: list[DialogTurn]
    events: list[dict]  # full transcript, stop-check exchanges included
    rounds: int
    stopped_by: str  # "stop_yes" | "max_rounds"
    predicted_bbox: tuple | None
    target_bbox: tuple
    iou: float
    success: bool
    malformed: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["turns"] = [{"speaker": t.speaker, "text": t.text} for t in self.turns]
        return d


@dataclass
class EvalRow:
    oracle: str
    guesser: str
    questioner: str
    episodes: int
    successes: int
    errors: int
    success_rate: float
    mean_rounds: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(rows=[EvalRow(**r) for r in data["rows"]])

    def render(self) -> str:
        header = f"{'oracle':<10} {'guesser':<10} {'questioner':<10} {'episodes':>8} {'SR':>7} {'rounds':>7}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.oracle:<10} {r.guesser:<10} {r.questioner:<10} "
                f"{r.episodes:>8} {r.success_rate:>7.3f} {r.mean_rounds:>7.2f}"
            )
        return "\n".join(lines)


def run_episode(
    scene: Scene,
    instruction: str,
    target_id: int,
    agents: dict,
    max_rounds: int = 10,
    image=None,
) -> EpisodeResult:
    """One full episode under the stop protocol.

    agents maps the roles questioner/oracle/guesser/stop_checker to agent
    instances (one instance may serve several roles). The stop check runs
    before the first question, so an unambiguous instruction can be answered
    with a zero-round guess.
    """
    for role in ("questioner", "oracle", "guesser", "stop_checker"):
        if role not in agents:
            raise ValueError(f"missing agent for role {role!r}")
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")

    ctx = EpisodeContext(scene=scene, image=image, instruction=instruction, target_id=target_id)
    events: list[dict] = [{"kind": "instruction", "text": instruction}]
    stopped_by = "max_rounds"
    for round_no in range(max_rounds + 1):
        stop_answer = agents["stop_checker"].stop_check(ctx)
        events.append({"kind": "stop_check", "round": round_no, "question": STOP_QUESTION, "answer": stop_answer})
        if stop_answer == "yes":
            stopped_by = "stop_yes"
            break
        if round_no == max_rounds:
            break
        question = agents["questioner"].ask(ctx)
        answer = agents["oracle"].answer(ctx, question)
        ctx.turns.append(DialogTurn("questioner", question))
        ctx.turns.append(DialogTurn("oracle", answer))
        events.append({"kind": "qa", "round": round_no, "question": question, "answer": answer})

    predicted = agents["guesser"].guess(ctx)
    target_bbox = scene.object_by_id(target_id).bbox
    malformed = predicted is None
    score = 0.0 if malformed else iou(predicted, target_bbox)
    events.append({"kind": "guess", "bbox": None if malformed else list(predicted), "iou": score})
    return EpisodeResult(
        scene_id=scene.scene_id,
        instruction=instruction,
        turns=list(ctx.turns),
        events=events,
        rounds=len(ctx.turns) // 2,
        stopped_by=stopped_by,
        predicted_bbox=predicted,
        target_bbox=target_bbox,
        iou=score,
        success=score > SUCCESS_IOU,
        malformed=malformed,
    )


@dataclass(frozen=True)
class TestCase:
    scene: Scene
    instruction: str
    target_id: int


def build_test_cases(
    seeds,
    world: WorldConfig = WorldConfig(),
    identifiable_only: bool = False,
) -> list[TestCase]:
    """Deterministic (scene, instruction, target) triples for evaluation."""
    cases = []
    for seed in seeds:
        scene = generate_scene(seed, world)
        if identifiable_only and not has_distinct_signatures(scene):
            continue
        rng = random.Random(f"case:{seed}")
        target_id = rng.randrange(len(scene.objects))
        cases.append(TestCase(scene, make_instruction(scene, target_id, rng), target_id))
    return cases


def evaluate(
    cases: list[TestCase],
    agents: dict,
    max_rounds: int = 10,
    world: WorldConfig = WorldConfig(),
    log_path: str | Path | None = None,
    need_image: bool | None = None,
) -> tuple[EvalRow, list[EpisodeResult]]:
    """Run every test case; failures of an agent backend are excluded from
    the success rate and counted separately."""
    results: list[EpisodeResult] = []
    errors = 0
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    if need_image is None:
        need_image = any(getattr(a, "backing", "") == "model" for a in agents.values())
    try:
        for case in cases:
            image = None
            if need_image:
                image = image_tensor(render(case.scene, world.resolution))
            try:
                result = run_episode(case.scene, case.instruction, case.target_id, agents, max_rounds, image)
            except Exception as exc:  # noqa: BLE001 - backend failure policy
                errors += 1
                if log_file:
                    log_file.write(json.dumps({"scene_id": case.scene.scene_id, "error": str(exc)}) + "\n")
                continue
            results.append(result)
            if log_file:
                log_file.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    n = len(results)
    successes = sum(r.success for r in results)
    row = EvalRow(
        oracle=agents["oracle"].name,
        guesser=agents["guesser"].name,
        questioner=agents["questioner"].name,
        episodes=n,
        successes=successes,
        errors=errors,
        success_rate=successes / n if n else 0.0,
        mean_rounds=sum(r.rounds for r in results) / n if n else 0.0,
    )
    return row, results


def role_map(player, oracle=None, guesser=None, stop_checker=None) -> dict:
    """Self-play by default: one agent plays every role not overridden."""
    return {
        "questioner": player,
        "oracle": oracle or player,
        "guesser": guesser or player,
        "stop_checker": stop_checker or player,
    }


def mixed_matrix(
    oracles: dict[str, object],
    players: dict[str, object],
    cases: list[TestCase],
    max_rounds: int = 10,
    world: WorldConfig = WorldConfig(),
) -> EvalReport:
    """Cartesian product of oracle providers x questioner/guesser providers."""
    report = EvalReport()
    for _, oracle in sorted(oracles.items()):
        for _, player in sorted(players.items()):
            row, _ = evaluate(cases, role_map(player, oracle=oracle), max_rounds, world)
            report.rows.append(row)
    return report


def random_guess_baseline(cases: list[TestCase]) -> float:
    """Analytic success rate of a uniform object guesser: mean of 1/N."""
    return sum(1 / len(c.scene.objects) for c in cases) / len(cases)


ABLATION_VARIANTS = {
    "full": {},
    "wo_dialog": {"vqa": 0.0, "caption": 0.0},
    "wo_vg": {"ground": 0.0},
    "wo_ivg": {"ground": 0.0, "ask": 0.0, "oracle_answer": 0.0, "stop_check": 0.0},
}


@dataclass
class AblationRow:
    variant: str
    failed: bool
    selfplay_success: float
    gold_guesser_accuracy: float
    random_baseline: float
    mean_rounds: float

    def to_dict(self) -> dict:
        return asdict(self)


def ablation_suite(
    base_config: TrainConfig,
    model_config: ModelConfig,
    train_seeds: range,
    test_seeds: range,
    world: WorldConfig = WorldConfig(),
    variants: dict[str, dict] | None = None,
    max_rounds: int = 10,
    quiet: bool = True,
) -> list[AblationRow]:
    """Train each data-mix variant under identical seed and budget, then
    score self-play success and gold-dialog grounding accuracy."""
    variants = ABLATION_VARIANTS if variants is None else variants
    vocab = build_vocab()
    images = SceneImages(world)
    cases = build_test_cases(test_seeds, world)
    baseline = random_guess_baseline(cases)
    val_samples, _ = synthesize_dataset({"ground": 1.0}, test_seeds, world)
    gold_ground = split_by_tag(val_samples)

    rows = []
    for name, overrides in sorted(variants.items()):
        weights = {**base_config.weights, **overrides}
        config = TrainConfig(**{**base_config.__dict__, "weights": weights})
        samples, _ = synthesize_dataset(weights, train_seeds, world)
        datasets = split_by_tag(samples)
        model = build_model(model_config, seed=config.seed)
        try:
            train(model, datasets, config, vocab, images, quiet=quiet)
        except TrainingDiverged:
            rows.append(AblationRow(name, True, 0.0, 0.0, baseline, 0.0))
            continue
        agent = ModelAgent(model, vocab)
        row, _ = evaluate(cases, role_map(agent), max_rounds, world)
        ground_acc = evaluate_tags(
            model, vocab, gold_ground, images, max_per_tag=len(gold_ground["ground"])
        )["ground"]
        rows.append(
            AblationRow(
                variant=name,
                failed=False,
                selfplay_success=row.success_rate,
                gold_guesser_accuracy=ground_acc,
                random_baseline=baseline,
                mean_rounds=row.mean_rounds,
            )
        )
    return rows


def render_ablation(rows: list[AblationRow]) -> str:
    header = f"{'variant':<12} {'self-play':>10} {'guesser':>9} {'baseline':>9} {'rounds':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        if r.failed:
            lines.append(f"{r.variant:<12} {'FAILED':>10}")
        else:
            lines.append(
                f"{r.variant:<12} {r.selfplay_success:>10.3f} {r.gold_guesser_accuracy:>9.3f} "
                f"{r.random_baseline:>9.3f} {r.mean_rounds:>7.2f}"
            )
    return "\n".join(lines)
