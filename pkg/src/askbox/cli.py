"""Command-line entry points.

Batch subcommands (gen-data, train, eval-selfplay, eval-ablations) drive the
pipeline directly; the interactive ones (play, serve) go through the HTTP
service, with `play` talking to an in-process app when no --server is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import AskboxError
from .world import WorldConfig

SHAPE_GLYPHS = {"circle": "o", "square": "#", "triangle": "^", "star": "*"}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    from .server import load_config_file

    return load_config_file(path)


def _world_from(config: dict) -> WorldConfig:
    return WorldConfig(**config.get("world", {}))


def _parse_seed_range(text: str) -> range:
    lo, _, hi = text.partition(":")
    return range(int(lo), int(hi))


def ascii_scene(scene) -> str:
    """Terminal rendering: one cell per grid slot, id/color/shape/size table."""
    rows, cols = scene.grid
    grid = [["  . " for _ in range(cols)] for _ in range(rows)]
    for o in scene.objects:
        r, c = o.cell
        color = o.color[0].upper() if o.size == "large" else o.color[0]
        grid[r][c] = f"{o.id}{color}{SHAPE_GLYPHS[o.shape]} "
    lines = ["".join(row) for row in grid]
    lines.append("")
    for o in scene.objects:
        lines.append(f"  {o.id}: {o.size} {o.color} {o.shape} at row {o.cell[0]} col {o.cell[1]}")
    return "\n".join(lines)


# ---- subcommands ----

def cmd_gen_data(args) -> int:
    from .corpus import DEFAULT_WEIGHTS, write_dataset

    config = _load_config(args.config)
    world = _world_from(config)
    weights = {**DEFAULT_WEIGHTS, **config.get("weights", {})}
    base = args.seed
    splits = {
        "train": range(base, base + args.train_scenes),
        "val": range(base + args.train_scenes, base + args.train_scenes + args.val_scenes),
        "test": range(
            base + args.train_scenes + args.val_scenes,
            base + args.train_scenes + args.val_scenes + args.test_scenes,
        ),
    }
    manifest = write_dataset(args.out, splits, weights, world)
    counts = {k: v["samples"] for k, v in manifest["counts"].items()}
    print(f"wrote {args.out}: {counts}")
    return 0


def cmd_train(args) -> int:
    import torch

    from .codec import build_vocab
    from .corpus import load_manifest, load_samples
    from .model import ModelConfig, build_model
    from .training import SceneImages, TrainConfig, split_by_tag, train

    config = _load_config(args.config)
    manifest = load_manifest(args.data)
    world = WorldConfig(**manifest["world"])
    vocab = build_vocab()

    model_cfg = ModelConfig(**{
        "image_size": world.resolution,
        "vocab_size": len(vocab),
        **config.get("model", {}),
    })
    train_kwargs = dict(config.get("train", {}))
    if args.steps is not None:
        train_kwargs["total_steps"] = args.steps
    if args.batch_size is not None:
        train_kwargs["batch_size"] = args.batch_size
    if args.lr is not None:
        train_kwargs["peak_lr"] = args.lr
    train_kwargs["seed"] = args.seed
    train_kwargs.setdefault("weights", manifest["weights"])
    train_cfg = TrainConfig(**train_kwargs)

    datasets = split_by_tag(load_samples(args.data, "train"))
    val = split_by_tag(load_samples(args.data, "val"))
    torch.manual_seed(args.seed)
    model = build_model(model_cfg, seed=args.seed)
    print(f"model: {model_cfg.param_count():,} params; training {train_cfg.total_steps} steps")
    result = train(
        model, datasets, train_cfg, vocab, SceneImages(world),
        val_datasets=val, out_dir=args.out, resume_from=args.resume, quiet=args.quiet,
    )
    print(f"final loss {result.final_loss:.4f}; checkpoint at {result.checkpoint_path}")
    return 0


def cmd_eval_selfplay(args) -> int:
    from .agents import ScriptedAgent
    from .selfplay import EvalReport, build_test_cases, evaluate, mixed_matrix, role_map

    config = _load_config(args.config)
    world = _world_from(config)
    seeds = _parse_seed_range(args.seeds) if args.seeds else range(args.seed, args.seed + 200)
    cases = build_test_cases(seeds, world, identifiable_only=args.identifiable_only)
    if not cases:
        print("no test cases in the requested seed range", file=sys.stderr)
        return 1

    scripted = ScriptedAgent()
    if args.agents == "scripted":
        row, _ = evaluate(cases, role_map(scripted), args.max_rounds, world, log_path=args.log)
        report = EvalReport(rows=[row])
    elif args.agents == "model":
        agent = _model_agent(args.checkpoint)
        row, _ = evaluate(cases, role_map(agent), args.max_rounds, world, log_path=args.log)
        report = EvalReport(rows=[row])
    else:  # mixed matrix
        agent = _model_agent(args.checkpoint)
        report = mixed_matrix(
            {"scripted": scripted, "model": agent},
            {"scripted": scripted, "model": agent},
            cases, args.max_rounds, world,
        )
    print(report.render())
    for row in report.rows:
        print(f"success rate {row.success_rate:.3f} ({row.questioner}/{row.oracle}/{row.guesser})")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _model_agent(checkpoint: str | None):
    if not checkpoint:
        raise AskboxError("--checkpoint is required for model agents")
    from .sessions import make_backend

    agent, _ = make_backend("model", checkpoint)
    return agent


def cmd_eval_ablations(args) -> int:
    from .model import ModelConfig
    from .codec import build_vocab
    from .selfplay import ablation_suite, render_ablation
    from .training import TrainConfig

    config = _load_config(args.config)
    world = _world_from(config)
    vocab = build_vocab()
    model_cfg = ModelConfig(**{
        "image_size": world.resolution,
        "vocab_size": len(vocab),
        **config.get("model", {}),
    })
    train_cfg = TrainConfig(**{
        "total_steps": args.steps,
        "seed": args.seed,
        **config.get("train", {}),
    })
    rows = ablation_suite(
        train_cfg,
        model_cfg,
        train_seeds=range(args.seed, args.seed + args.train_scenes),
        test_seeds=range(args.seed + args.train_scenes, args.seed + args.train_scenes + args.test_scenes),
        world=world,
        max_rounds=args.max_rounds,
        quiet=args.quiet,
    )
    print(render_ablation(rows))
    if args.out:
        Path(args.out).write_text(json.dumps([r.to_dict() for r in rows], indent=2, sort_keys=True))
    return 0


def cmd_play(args) -> int:
    from .world import scene_from_dict

    if args.server:
        import httpx

        client = httpx.Client(base_url=args.server, timeout=120)
    else:
        from fastapi.testclient import TestClient

        from .server import ServiceConfig, create_app

        config = ServiceConfig(backend=args.backend, checkpoint=args.checkpoint)
        if args.config:
            config = ServiceConfig.from_file(args.config)
        client = TestClient(create_app(config))

    response = client.get("/api/scenes/random", params={"seed": args.seed})
    response.raise_for_status()
    scene_data = response.json()
    scene = scene_from_dict(scene_data)
    print(f"scene {scene.scene_id} ({len(scene.objects)} objects)")
    print(ascii_scene(scene))
    print("\npick a target object (keep it to yourself) and describe it ambiguously.")

    instruction = args.instruction or input("instruction> ").strip()
    body = {"scene_id": scene.scene_id, "instruction": instruction, "max_rounds": args.max_rounds}
    if args.target is not None:
        body["target_id"] = args.target
    response = client.post("/api/sessions", json=body)
    if response.status_code == 422:
        print(f"rejected: {response.json()}", file=sys.stderr)
        return 1
    response.raise_for_status()
    snap = response.json()

    while snap["state"] == "awaiting_answer":
        print(f"\nmodel asks: {snap['question']}")
        answer = input("answer> ").strip()
        response = client.post(f"/api/sessions/{snap['session_id']}/answers", json={"answer": answer})
        if response.status_code == 422:
            print(f"not in lexicon: {response.json().get('words')} (try again)")
            continue
        response.raise_for_status()
        snap = response.json()

    result = snap["result"]
    print(f"\nstopped by {result['stopped_by']} after {snap['rounds']} rounds")
    if result["malformed"]:
        print("the guesser emitted an undecodable box")
        return 0
    x1, y1, x2, y2 = result["bbox"]
    print(f"guessed box: ({x1:.3f}, {y1:.3f}, {x2:.3f}, {y2:.3f})")
    hit = _hit_object(scene, result["bbox"])
    print(f"box lands on object: {hit if hit is not None else 'background'}")
    if result.get("iou") is not None:
        print(f"iou vs target: {result['iou']:.3f}")
    if result.get("grasp"):
        g = result["grasp"]
        print(f"grasp: center ({g['center'][0]:.3f}, {g['center'][1]:.3f}) angle {g['angle']:.2f} rad score {g['score']:.2f}")
    else:
        print("no collision-free grasp")
    return 0


def _hit_object(scene, bbox):
    from .world import object_by_point

    cx = min(max((bbox[0] + bbox[2]) / 2, 0.0), 1.0)
    cy = min(max((bbox[1] + bbox[3]) / 2, 0.0), 1.0)
    return object_by_point(scene, cx, cy)


def cmd_serve(args) -> int:
    import socket

    import uvicorn

    from .server import ServiceConfig, create_app

    if args.config:
        config = ServiceConfig.from_file(args.config)
    else:
        config = ServiceConfig(backend=args.backend, checkpoint=args.checkpoint)
    if args.port is not None:
        config.port = args.port
    if args.host:
        config.host = args.host
    if args.persist:
        config.persist_path = args.persist
    config.apply_env()

    app = create_app(config)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((config.host, config.port))
    sock.listen(128)
    actual_port = sock.getsockname()[1]
    print(f"serving on http://{config.host}:{actual_port}", flush=True)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="askbox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize the multi-task dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train-scenes", type=int, default=200)
    p.add_argument("--val-scenes", type=int, default=50)
    p.add_argument("--test-scenes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the unified model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume")
    p.add_argument("--config")
    p.add_argument("--verbose", dest="quiet", action="store_false")
    p.set_defaults(func=cmd_train, quiet=True)

    p = sub.add_parser("eval-selfplay", help="self-play or mixed-agent evaluation")
    p.add_argument("--agents", choices=["scripted", "model", "mixed"], default="scripted")
    p.add_argument("--checkpoint")
    p.add_argument("--seeds", help="seed range LO:HI for test scenes")
    p.add_argument("--seed", type=int, default=1_000_000)
    p.add_argument("--identifiable-only", action="store_true")
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--log")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval_selfplay)

    p = sub.add_parser("eval-ablations", help="train and score data-mix ablation variants")
    p.add_argument("--steps", type=int, default=1200)
    p.add_argument("--train-scenes", type=int, default=1200)
    p.add_argument("--test-scenes", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--verbose", dest="quiet", action="store_false")
    p.set_defaults(func=cmd_eval_ablations, quiet=True)

    p = sub.add_parser("play", help="terminal human-oracle loop over the HTTP API")
    p.add_argument("--server", help="base URL of a running service; in-process app when omitted")
    p.add_argument("--backend", choices=["scripted", "model"], default="scripted")
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instruction")
    p.add_argument("--target", type=int, help="optional ground-truth target id, enables IoU feedback")
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--config")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--backend", choices=["scripted", "model"], default="scripted")
    p.add_argument("--checkpoint")
    p.add_argument("--persist", help="JSON file for session persistence on shutdown")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AskboxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
