"""Unified multi-task training: weighted task mixing, Eq-style token loss,
linear warmup/decay, JSONL metrics, and bit-reproducible checkpoints.

The loss sums -log P(w_l | w_<l) over the non-pad positions of each target
sequence and averages over sequences in the batch, so the learning rate does
not depend on sequence length.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, checkpoint_from_model, load_checkpoint, save_checkpoint
from .codec import Vocab, decode_bbox, decode_text, encode_prompt_text
from .corpus import DEFAULT_WEIGHTS, TaskSample, validate_weights
from .errors import ConfigurationError, TrainingDiverged
from .model import Seq2SeqModel, normalize_pixels, pad_batch
from .world import WorldConfig, generate_scene, render


@dataclass
class TrainConfig:
    peak_lr: float = 3e-4
    warmup_frac: float = 0.05
    total_steps: int = 6000
    batch_size: int = 32
    weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 50
    eval_every: int = 2000
    checkpoint_every: int = 2000
    eval_samples_per_tag: int = 128
    early_stop_loss: float | None = None

    def validate(self) -> None:
        validate_weights(self.weights)
        if not (0 <= self.warmup_frac < 1):
            raise ConfigurationError("warmup_frac must be in [0, 1)")
        if self.total_steps <= 0 or self.batch_size <= 0:
            raise ConfigurationError("total_steps and batch_size must be positive")


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to peak_lr, then linear decay to zero at total_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = int(config.warmup_frac * config.total_steps)
    if step >= config.total_steps:
        return 0.0
    if warmup > 0 and step < warmup:
        return config.peak_lr * step / warmup
    return config.peak_lr * (config.total_steps - step) / (config.total_steps - warmup)


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor, pad_id: int = 0) -> torch.Tensor:
    """Sum of -log P over non-pad target positions, averaged over sequences."""
    labels = targets[:, 1:]
    mask = labels != pad_id
    if not bool(mask.any(dim=1).all()):
        raise ValueError("a target sequence contains no non-pad positions")
    logprobs = logits.log_softmax(-1)
    picked = logprobs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    per_seq = -(picked * mask).sum(dim=1)
    return per_seq.mean()


def _rng_state_to_json(state) -> list:
    def conv(x):
        if isinstance(x, tuple):
            return [conv(v) for v in x]
        return x

    return conv(state)


def _rng_state_from_json(data):
    def conv(x):
        if isinstance(x, list):
            return tuple(conv(v) for v in x)
        return x

    return conv(data)


class BatchSampler:
    """Per-sample categorical tag draws; within a tag, shuffled epochs
    without replacement. The full draw sequence is a pure function of the
    seed, and (rng state, per-tag counts) reconstruct it for resume."""

    def __init__(
        self,
        datasets: dict[str, list[TaskSample]],
        weights: dict[str, float],
        batch_size: int,
        seed: int,
    ):
        validate_weights(weights)
        self.tags = sorted(t for t, w in weights.items() if w > 0)
        for tag in self.tags:
            if not datasets.get(tag):
                raise ConfigurationError(f"tag {tag!r} has positive weight but no samples")
        self.datasets = {t: datasets[t] for t in self.tags}
        total = sum(weights[t] for t in self.tags)
        self.probs = [weights[t] / total for t in self.tags]
        self.batch_size = batch_size
        self.seed = seed
        self.rng = random.Random(f"mixer:{seed}")
        self.counts = {t: 0 for t in self.tags}
        self._orders: dict[str, tuple[int, list[int]]] = {}

    def _epoch_order(self, tag: str, epoch: int) -> list[int]:
        cached = self._orders.get(tag)
        if cached is not None and cached[0] == epoch:
            return cached[1]
        order = list(range(len(self.datasets[tag])))
        random.Random(f"epoch:{self.seed}:{tag}:{epoch}").shuffle(order)
        self._orders[tag] = (epoch, order)
        return order

    def draw(self) -> TaskSample:
        tag = self.rng.choices(self.tags, weights=self.probs)[0]
        n = len(self.datasets[tag])
        epoch, pos = divmod(self.counts[tag], n)
        self.counts[tag] += 1
        return self.datasets[tag][self._epoch_order(tag, epoch)[pos]]

    def next_batch(self) -> list[TaskSample]:
        return [self.draw() for _ in range(self.batch_size)]

    def state(self) -> dict:
        return {"rng": _rng_state_to_json(self.rng.getstate()), "counts": dict(self.counts)}

    def restore(self, state: dict) -> None:
        self.rng.setstate(_rng_state_from_json(state["rng"]))
        self.counts = dict(state["counts"])
        self._orders.clear()


class SceneImages:
    """Rendered image tensors by scene id; scenes regenerate from their seed."""

    def __init__(self, world: WorldConfig = WorldConfig()):
        self.world = world
        self._cache: dict[str, np.ndarray] = {}

    def pixels(self, scene_id: str) -> np.ndarray:
        cached = self._cache.get(scene_id)
        if cached is None:
            seed = int(scene_id[1:])
            scene = generate_scene(seed, self.world)
            cached = render(scene, self.world.resolution).pixels
            self._cache[scene_id] = cached
        return cached

    def batch_tensor(self, scene_ids: list[str]) -> torch.Tensor:
        arrays = np.stack([normalize_pixels(self.pixels(sid)) for sid in scene_ids])
        return torch.from_numpy(arrays)


def collate(
    samples: list[TaskSample], vocab: Vocab, images: SceneImages
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    imgs = images.batch_tensor([s.scene_id for s in samples])
    inputs = pad_batch([encode_prompt_text(vocab, s.input_text) for s in samples], vocab.pad_id)
    targets = pad_batch(
        [
            [vocab.bos_id] + encode_prompt_text(vocab, s.target_text) + [vocab.eos_id]
            for s in samples
        ],
        vocab.pad_id,
    )
    return imgs, inputs, targets


class MetricsLog:
    """Append-only JSON-lines metrics: {step, task, metric, value}."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, "a", encoding="utf-8")
        else:
            self._file = None

    def log(self, step: int, task: str | None, metric: str, value: float) -> None:
        record = {"step": step, "task": task, "metric": metric, "value": float(value)}
        self.records.append(record)
        if self._file:
            self._file.write(json.dumps(record, sort_keys=True) + "\n")
            self._file.flush()

    def close(self) -> None:
        if self._file:
            self._file.close()


def _target_bbox_of(vocab: Vocab, target_text: str):
    return decode_bbox(vocab, encode_prompt_text(vocab, target_text))


def evaluate_tags(
    model: Seq2SeqModel,
    vocab: Vocab,
    datasets: dict[str, list[TaskSample]],
    images: SceneImages,
    max_per_tag: int = 128,
    batch_size: int = 64,
) -> dict[str, float]:
    """Per-task validation: IoU>0.5 rate for grounding, exact match for the
    classification-style tags, perplexity for question generation."""
    from .selfplay import iou  # local import to avoid a module cycle

    model.eval()
    results: dict[str, float] = {}
    for tag, samples in sorted(datasets.items()):
        subset = samples[:max_per_tag]
        if not subset:
            continue
        if tag == "ask":
            nll, count = 0.0, 0
            with torch.no_grad():
                for i in range(0, len(subset), batch_size):
                    chunk = subset[i : i + batch_size]
                    imgs, inputs, targets = collate(chunk, vocab, images)
                    logits = model.forward_teacher_forced(imgs, inputs, targets)
                    labels = targets[:, 1:]
                    mask = labels != vocab.pad_id
                    logprobs = logits.log_softmax(-1).gather(-1, labels.unsqueeze(-1)).squeeze(-1)
                    nll += float(-(logprobs * mask).sum())
                    count += int(mask.sum())
            results[tag] = math.exp(nll / max(count, 1))
            continue
        hits, total = 0, 0
        for i in range(0, len(subset), batch_size):
            chunk = subset[i : i + batch_size]
            imgs = images.batch_tensor([s.scene_id for s in chunk])
            prompts = [encode_prompt_text(vocab, s.input_text) for s in chunk]
            outs = model.generate_batch(imgs, prompts, max_new=48)
            for sample, out in zip(chunk, outs):
                total += 1
                if tag == "ground":
                    try:
                        predicted = decode_bbox(vocab, out)
                    except Exception:
                        continue
                    target_box = _target_bbox_of(vocab, sample.target_text)
                    if iou(predicted, target_box) > 0.5:
                        hits += 1
                else:
                    if decode_text(vocab, out) == sample.target_text:
                        hits += 1
        results[tag] = hits / max(total, 1)
    return results


def _optimizer_tensors(model: Seq2SeqModel, optimizer: torch.optim.Adam) -> dict[str, np.ndarray]:
    out = {}
    for name, param in model.named_parameters():
        state = optimizer.state.get(param)
        if not state:
            continue
        out[f"opt.{name}.exp_avg"] = state["exp_avg"].numpy()
        out[f"opt.{name}.exp_avg_sq"] = state["exp_avg_sq"].numpy()
        out[f"opt.{name}.step"] = np.asarray(float(state["step"]), dtype="<f4").reshape(1)
    return out


def _restore_optimizer(model: Seq2SeqModel, optimizer: torch.optim.Adam, ckpt: Checkpoint) -> None:
    for name, param in model.named_parameters():
        key = f"opt.{name}.exp_avg"
        if key not in ckpt.tensors:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(ckpt.tensors[f"opt.{name}.step"][0])),
            "exp_avg": torch.from_numpy(ckpt.tensors[key].copy()),
            "exp_avg_sq": torch.from_numpy(ckpt.tensors[f"opt.{name}.exp_avg_sq"].copy()),
        }


@dataclass
class TrainResult:
    checkpoint_path: str | None
    final_loss: float
    steps_run: int
    metrics: MetricsLog


def train(
    model: Seq2SeqModel,
    datasets: dict[str, list[TaskSample]],
    config: TrainConfig,
    vocab: Vocab,
    images: SceneImages,
    val_datasets: dict[str, list[TaskSample]] | None = None,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    quiet: bool = True,
) -> TrainResult:
    """Run the training loop; deterministic under a fixed seed and thread count.

    Checkpoints embed optimizer moments, sampler state, and both RNG states,
    so resuming reproduces the uninterrupted loss trajectory bit for bit.
    """
    config.validate()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    metrics = MetricsLog(out / "metrics.jsonl" if out else None)

    sampler = BatchSampler(datasets, config.weights, config.batch_size, config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.peak_lr, betas=(0.9, 0.999))
    start_step = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        state = {
            k[len("model.") :]: torch.from_numpy(v.copy())
            for k, v in ckpt.tensors.items()
            if k.startswith("model.")
        }
        model.load_state_dict(state)
        _restore_optimizer(model, optimizer, ckpt)
        sampler.restore(ckpt.extra["sampler"])
        torch.set_rng_state(torch.tensor(bytearray.fromhex(ckpt.rng_state["torch"]), dtype=torch.uint8))
        start_step = ckpt.step
    else:
        torch.manual_seed(config.seed)

    def write_checkpoint(step: int, tag: str) -> str:
        path = str(out / f"{tag}.ckpt")
        ckpt = checkpoint_from_model(
            model,
            vocab_hash=vocab.lexicon_hash(),
            step=step,
            rng_state={"torch": torch.get_rng_state().numpy().tobytes().hex()},
            extra={"sampler": sampler.state(), "train_config": {**config.__dict__}},
            extra_tensors=_optimizer_tensors(model, optimizer),
        )
        save_checkpoint(path, ckpt)
        return path

    model.train()
    last_loss = float("nan")
    step = start_step
    t0 = time.time()
    for step in range(start_step, config.total_steps):
        lr = lr_schedule(step, config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batch = sampler.next_batch()
        imgs, inputs, targets = collate(batch, vocab, images)
        logits = model.forward_teacher_forced(imgs, inputs, targets)
        loss = sequence_loss(logits, targets, vocab.pad_id)
        value = float(loss.detach())
        if not math.isfinite(value):
            if out:
                write_checkpoint(step, "diverged")
                (out / "diverged.json").write_text(
                    json.dumps({"step": step, "loss": value, "lr": lr, "batch_tasks": [s.task for s in batch]})
                )
            raise TrainingDiverged(f"non-finite loss {value} at step {step}")
        optimizer.zero_grad()
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        optimizer.step()
        last_loss = value

        if (step + 1) % config.log_every == 0 or step == start_step:
            metrics.log(step + 1, None, "train_loss", value)
            if not quiet:
                rate = (step + 1 - start_step) / max(time.time() - t0, 1e-9)
                print(f"step {step + 1}/{config.total_steps} loss {value:.4f} lr {lr:.2e} ({rate:.1f} it/s)")
        if val_datasets and (step + 1) % config.eval_every == 0:
            for tag, value_ in evaluate_tags(
                model, vocab, val_datasets, images, config.eval_samples_per_tag
            ).items():
                metric = "perplexity" if tag == "ask" else ("iou>0.5" if tag == "ground" else "exact_match")
                metrics.log(step + 1, tag, metric, value_)
            model.train()
        if out and (step + 1) % config.checkpoint_every == 0:
            write_checkpoint(step + 1, f"step-{step + 1:06d}")
        if config.early_stop_loss is not None and value < config.early_stop_loss:
            step += 1
            break
    else:
        step = config.total_steps

    path = write_checkpoint(step, "final") if out else None
    metrics.close()
    return TrainResult(checkpoint_path=path, final_loss=last_loss, steps_run=step - start_step, metrics=metrics)


def split_by_tag(samples: list[TaskSample]) -> dict[str, list[TaskSample]]:
    out: dict[str, list[TaskSample]] = {}
    for s in samples:
        out.setdefault(s.task, []).append(s)
    return out
