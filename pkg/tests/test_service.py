import base64
import json
import random
import threading

import pytest
from fastapi.testclient import TestClient

from askbox.server import ServiceConfig, create_app
from askbox.sessions import ScriptedExist, SessionManager, make_backend
from askbox.world import generate_scene


@pytest.fixture(scope="module")
def client():
    app = create_app(ServiceConfig(backend="scripted"))
    with TestClient(app) as c:
        yield c


def ambiguous_case(min_objects=4):
    """A seed whose scripted loop needs at least one question."""
    from askbox.scripted import make_instruction

    for seed in range(300):
        scene = generate_scene(seed)
        if len(scene.objects) < min_objects:
            continue
        rng = random.Random(seed)
        for target in scene.objects:
            instruction = make_instruction(scene, target.id, rng)
            matches = [
                o for o in scene.objects
                if all(o.attribute(a) == v for a, v in _filter(instruction).items())
            ]
            if len(matches) >= 2:
                return seed, instruction, target.id
    raise AssertionError("no ambiguous case found")


def _filter(instruction):
    from askbox.scripted import instruction_filter

    return instruction_filter(instruction)


def test_health(client):
    body = client.get("/api/health").json()
    assert body["status"] == "ok" and body["backend"] == "scripted"


def test_create_ambiguous_returns_question(client):
    seed, instruction, target = ambiguous_case()
    r = client.post("/api/sessions", json={"seed": seed, "instruction": instruction, "target_id": target})
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["state"] == "awaiting_answer"
    assert body["question"].endswith("?")
    assert body["image_base64"]
    png = base64.b64decode(body["image_base64"])
    assert png[:8] == b"\x89PNG\r\n\x1a\n"


def test_full_dialog_reaches_guess_with_grasp_and_iou(client):
    from askbox.scripted import scripted_oracle

    seed, instruction, target = ambiguous_case()
    scene = generate_scene(seed)
    r = client.post("/api/sessions", json={"seed": seed, "instruction": instruction, "target_id": target})
    body = r.json()
    rounds = 0
    while body["state"] == "awaiting_answer" and rounds < 12:
        answer = scripted_oracle(scene, target, body["question"])
        r = client.post(f"/api/sessions/{body['session_id']}/answers", json={"answer": answer})
        assert r.status_code == 200, r.text
        body = r.json()
        rounds += 1
    assert body["state"] == "guessed"
    result = body["result"]
    assert len(result["bbox"]) == 4
    assert result["iou"] == 1.0  # scripted backend is exact on truthful dialogs
    assert result["mask"]["counts"]
    assert result["mask_pixels"] > 0
    assert result["stopped_by"] in ("stop_yes", "max_rounds")


def test_get_session_is_pure(client):
    seed, instruction, target = ambiguous_case()
    r = client.post("/api/sessions", json={"seed": seed, "instruction": instruction})
    sid = r.json()["session_id"]
    first = client.get(f"/api/sessions/{sid}").json()
    second = client.get(f"/api/sessions/{sid}").json()
    assert first == second


def test_answer_to_guessed_session_conflicts(client):
    r = client.post("/api/sessions", json={"seed": 3, "instruction": "the object", "max_rounds": 1})
    body = r.json()
    sid = body["session_id"]
    while body["state"] == "awaiting_answer":
        body = client.post(f"/api/sessions/{sid}/answers", json={"answer": "n/a"}).json()
    assert body["state"] == "guessed"
    r = client.post(f"/api/sessions/{sid}/answers", json={"answer": "yes"})
    assert r.status_code == 409


def test_unknown_session_and_scene_404(client):
    assert client.get("/api/sessions/nosuch").status_code == 404
    assert client.post("/api/sessions/nosuch/answers", json={"answer": "yes"}).status_code == 404
    assert client.get("/api/scenes/bogus/image").status_code == 404
    assert client.post("/api/sessions", json={"scene_id": "xyz", "instruction": "the object"}).status_code == 404


def test_out_of_lexicon_instruction_422_lists_words(client):
    r = client.post("/api/sessions", json={"seed": 1, "instruction": "the fuchsia doohickey"})
    assert r.status_code == 422
    body = r.json()
    assert "fuchsia" in body["words"] and "doohickey" in body["words"]


def test_empty_instruction_422(client):
    r = client.post("/api/sessions", json={"seed": 1, "instruction": "   "})
    assert r.status_code == 422


def test_max_rounds_cap_flagged(client):
    r = client.post("/api/sessions", json={"seed": 3, "instruction": "the object", "max_rounds": 1})
    body = r.json()
    sid = body["session_id"]
    hops = 0
    while body["state"] == "awaiting_answer":
        body = client.post(f"/api/sessions/{sid}/answers", json={"answer": "n/a"}).json()
        hops += 1
        assert hops < 5
    if body["result"]["stopped_by"] == "max_rounds":
        assert body["rounds"] == 1


def test_scene_endpoints(client):
    scene = client.get("/api/scenes/random", params={"seed": 77}).json()
    assert scene["scene_id"] == "s77"
    again = client.get("/api/scenes/s77").json()
    assert scene == again
    png = client.get("/api/scenes/s77/image")
    assert png.status_code == 200
    assert png.headers["content-type"] == "image/png"
    as_json = client.get("/api/scenes/s77/image", headers={"accept": "application/json"})
    assert base64.b64decode(as_json.json()["image_base64"]) == png.content


def test_exist_endpoint_ground_truth(client):
    scene = generate_scene(5)
    present = f"{scene.objects[0].color} {scene.objects[0].shape}"
    combos = {(o.color, o.shape) for o in scene.objects}
    absent = next(
        f"{c} {s}"
        for c in ("red", "green", "blue", "yellow", "purple", "orange")
        for s in ("circle", "square", "triangle", "star")
        if (c, s) not in combos
    )
    assert client.post("/api/exist", json={"scene_id": "s5", "phrase": present}).json()["answer"] == "yes"
    assert client.post("/api/exist", json={"scene_id": "s5", "phrase": absent}).json()["answer"] == "no"
    assert client.post("/api/exist", json={"scene_id": "s5", "phrase": "glorp"}).status_code == 422


def test_close_lifecycle(client):
    r = client.post("/api/sessions", json={"seed": 4, "instruction": "the object", "max_rounds": 1})
    body = r.json()
    sid = body["session_id"]
    # closing before guessed is illegal
    if body["state"] == "awaiting_answer":
        assert client.delete(f"/api/sessions/{sid}").status_code == 409
        while body["state"] == "awaiting_answer":
            body = client.post(f"/api/sessions/{sid}/answers", json={"answer": "no"}).json()
    assert body["state"] == "guessed"
    closed = client.delete(f"/api/sessions/{sid}")
    assert closed.status_code == 200 and closed.json()["state"] == "closed"
    assert client.delete(f"/api/sessions/{sid}").status_code == 409


LEGAL = {
    "awaiting_answer": {"answer": {"awaiting_answer", "guessed"}, "get": {"awaiting_answer"}, "close": set()},
    "guessed": {"answer": set(), "get": {"guessed"}, "close": {"closed"}},
    "closed": {"answer": set(), "get": {"closed"}, "close": set()},
}


def test_state_machine_property_random_requests(client):
    """10k random requests; every accepted transition must be legal."""
    rng = random.Random(0)
    sessions: list[str] = []
    states: dict[str, str] = {}
    answers = ["yes", "no", "n/a", "red", "circle", "small"]
    for step in range(10_000):
        action = rng.choice(["create", "answer", "get", "close"])
        if action == "create" or not sessions:
            r = client.post(
                "/api/sessions",
                json={"seed": rng.randrange(500), "instruction": "the object", "max_rounds": rng.randint(1, 4)},
            )
            assert r.status_code == 200
            body = r.json()
            assert body["state"] in ("awaiting_answer", "guessed")
            sessions.append(body["session_id"])
            states[body["session_id"]] = body["state"]
            continue
        sid = rng.choice(sessions)
        before = states[sid]
        if action == "answer":
            r = client.post(f"/api/sessions/{sid}/answers", json={"answer": rng.choice(answers)})
            if before == "awaiting_answer":
                assert r.status_code == 200
                after = r.json()["state"]
                assert after in LEGAL[before]["answer"], f"{before} -> {after}"
                states[sid] = after
            else:
                assert r.status_code == 409
        elif action == "get":
            r = client.get(f"/api/sessions/{sid}")
            assert r.status_code == 200
            assert r.json()["state"] == before  # reads never mutate
        else:
            r = client.delete(f"/api/sessions/{sid}")
            if before == "guessed":
                assert r.status_code == 200 and r.json()["state"] == "closed"
                states[sid] = "closed"
            else:
                assert r.status_code == 409


def test_concurrent_sessions_isolated(client):
    """Interleaved requests to two sessions equal serial per-session runs."""
    from askbox.scripted import scripted_oracle

    seed_a, instr_a, target_a = ambiguous_case()
    scene_a = generate_scene(seed_a)

    def run_serial(seed, instruction, target):
        scene = generate_scene(seed)
        r = client.post("/api/sessions", json={"seed": seed, "instruction": instruction, "target_id": target})
        body = r.json()
        transcript = [body["question"]]
        while body["state"] == "awaiting_answer":
            answer = scripted_oracle(scene, target, body["question"])
            body = client.post(f"/api/sessions/{body['session_id']}/answers", json={"answer": answer}).json()
            transcript.append(body.get("question"))
        return [t["text"] for t in body["turns"]], body["result"]["bbox"]

    serial_a = run_serial(seed_a, instr_a, target_a)
    serial_b = run_serial(seed_a, instr_a, target_a)
    assert serial_a == serial_b  # deterministic backend

    # now interleave two live sessions turn by turn
    ra = client.post("/api/sessions", json={"seed": seed_a, "instruction": instr_a, "target_id": target_a}).json()
    rb = client.post("/api/sessions", json={"seed": seed_a, "instruction": instr_a, "target_id": target_a}).json()
    bodies = {"a": ra, "b": rb}
    for _ in range(20):
        progressed = False
        for key in ("a", "b"):
            body = bodies[key]
            if body["state"] == "awaiting_answer":
                answer = scripted_oracle(scene_a, target_a, body["question"])
                bodies[key] = client.post(
                    f"/api/sessions/{body['session_id']}/answers", json={"answer": answer}
                ).json()
                progressed = True
        if not progressed:
            break
    for key in ("a", "b"):
        body = bodies[key]
        assert body["state"] == "guessed"
        assert ([t["text"] for t in body["turns"]], body["result"]["bbox"]) == serial_a


def test_parallel_threads_no_cross_talk(client):
    """Hammer two sessions from two threads; transcripts stay per-session."""
    from askbox.scripted import scripted_oracle

    seed, instruction, target = ambiguous_case()
    scene = generate_scene(seed)
    outcomes = {}

    def worker(key):
        r = client.post("/api/sessions", json={"seed": seed, "instruction": instruction, "target_id": target})
        body = r.json()
        while body["state"] == "awaiting_answer":
            answer = scripted_oracle(scene, target, body["question"])
            body = client.post(f"/api/sessions/{body['session_id']}/answers", json={"answer": answer}).json()
        outcomes[key] = ([t["text"] for t in body["turns"]], body["result"]["bbox"])

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len({json.dumps(v) for v in outcomes.values()}) == 1


def test_lenient_mode_drops_oov_words():
    app = create_app(ServiceConfig(backend="scripted", lexicon_mode="lenient"))
    with TestClient(app) as c:
        seed, instruction, target = ambiguous_case()
        r = c.post("/api/sessions", json={"seed": seed, "instruction": instruction})
        body = r.json()
        if body["state"] == "awaiting_answer":
            r = c.post(f"/api/sessions/{body['session_id']}/answers", json={"answer": "hmm weird gibberish"})
            assert r.status_code == 200
            assert r.json()["turns"][-2]["text"] == "n/a"  # unusable answer becomes n/a


def test_session_persistence_roundtrip(tmp_path):
    backend, _ = make_backend("scripted")
    manager = SessionManager(backend)
    snap = manager.create_session("the object", seed=3, max_rounds=1)
    manager.save(tmp_path / "sessions.json")

    manager2 = SessionManager(backend)
    count = manager2.load(tmp_path / "sessions.json")
    assert count == 1
    assert manager2.get(snap["session_id"])["instruction"] == "the object"


def test_scripted_exist_helper():
    scene = generate_scene(5)
    obj = scene.objects[0]
    assert ScriptedExist.answer(scene, f"{obj.size} {obj.color} {obj.shape}") == "yes"
    assert ScriptedExist.answer(scene, "the object") == "no"  # no attributes named


def test_openapi_document_served(client):
    spec = client.get("/openapi.json").json()
    for path in (
        "/api/sessions",
        "/api/sessions/{session_id}",
        "/api/sessions/{session_id}/answers",
        "/api/scenes/random",
        "/api/scenes/{scene_id}/image",
        "/api/exist",
    ):
        assert path in spec["paths"], path


def test_shipped_openapi_description_in_sync(client):
    from pathlib import Path

    shipped = json.loads((Path(__file__).parents[1] / "docs" / "openapi.json").read_text())
    live = client.get("/openapi.json").json()
    assert sorted(shipped["paths"]) == sorted(live["paths"])
    for path, methods in live["paths"].items():
        assert sorted(methods) == sorted(shipped["paths"][path]), path
