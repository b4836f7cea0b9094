"""HTTP API: creation, turns, idempotency, concurrency, recovery."""

import json
import logging
import threading
import time

import pytest
from conftest import world_reply
from fastapi.testclient import TestClient

from lifesim import kernels
from lifesim.config import AppConfig, with_data_dir
from lifesim.imaging import MockImageClient
from lifesim.providers import MockProvider
from lifesim.server import create_app

CREATE_BODY = {
    "profile": {
        "name": "Archibus",
        "descriptor": "small owl wizard",
        "personality": "curious and tidy",
    },
    "environments": [{"name": "Cozy Home", "description": "A snug burrow"}],
}


def make_client(tmp_path, replies=None, world_provider=None):
    config = with_data_dir(AppConfig(), str(tmp_path / "data"))
    if world_provider is None:
        world_provider = (
            MockProvider.scripted(replies)
            if replies is not None
            else MockProvider.generator(5, "world")
        )
    app = create_app(
        config, world_provider=world_provider, image_client=MockImageClient()
    )
    return TestClient(app), world_provider


def create_session(client):
    response = client.post("/v1/sessions", json=CREATE_BODY)
    assert response.status_code == 201, response.text
    return response.json()


def test_create_session_plays_the_opening_turn(tmp_path):
    client, _ = make_client(tmp_path, replies=[world_reply(narrative="Dawn breaks.")])
    body = create_session(client)
    assert body["session_id"].startswith("sess-")
    assert body["turn_count"] == 1
    assert body["turn"]["round_index"] == 0
    assert body["turn"]["user_input"] == ""
    assert body["turn"]["narrative"] == "Dawn breaks."
    assert body["state"]["hunger"] == 70
    assert body["profile"]["name"] == "Archibus"
    assert [env["name"] for env in body["environments"]] == ["Cozy Home"]
    assert body["latency"]["total_ms"] >= 0


def test_create_session_works_with_generated_replies(tmp_path):
    # No injected script: the default deterministic mock must produce a
    # reply the parser accepts.
    client, _ = make_client(tmp_path)
    body = create_session(client)
    assert body["turn_count"] == 1
    for axis in ("hunger", "energy", "fun", "hygiene"):
        assert 0 <= body["state"][axis] <= 100


@pytest.mark.parametrize(
    "payload, field",
    [
        ({"environments": []}, "profile"),
        ({"profile": {"name": "", "descriptor": "x", "personality": "y"}}, "name"),
        ({"profile": CREATE_BODY["profile"], "environments": "nope"}, "environments"),
        (
            {
                "profile": CREATE_BODY["profile"],
                "environments": [{"name": ""}],
            },
            "environments",
        ),
        (
            # Bare strings are a plausible client mistake; they must 400,
            # not crash the decoder.
            {
                "profile": CREATE_BODY["profile"],
                "environments": ["Kitchen"],
            },
            "environments",
        ),
        (
            {
                "profile": CREATE_BODY["profile"],
                "plan_overrides": {"prompt": "sneaky"},
            },
            "plan_overrides",
        ),
    ],
)
def test_create_session_input_errors(tmp_path, payload, field):
    client, _ = make_client(tmp_path, replies=[])
    response = client.post("/v1/sessions", json=payload)
    assert response.status_code == 400
    body = response.json()
    assert body["fields"] == [field]
    assert body["error"]


def test_create_session_rejects_non_object_bodies(tmp_path):
    client, _ = make_client(tmp_path, replies=[])
    response = client.post(
        "/v1/sessions", content=b"not json", headers={"content-type": "application/json"}
    )
    assert response.status_code == 400
    assert response.json()["error"] == "body must be JSON"
    response = client.post("/v1/sessions", json=["a", "list"])
    assert response.status_code == 400
    assert response.json()["error"] == "body must be a JSON object"


def test_create_session_maps_model_failure_to_502(tmp_path):
    client, _ = make_client(tmp_path, replies=["garbage", "more garbage"])
    response = client.post("/v1/sessions", json=CREATE_BODY)
    assert response.status_code == 502
    body = response.json()
    assert body["error"]
    assert body["trace_id"]


def test_turn_flow_updates_state_and_history(tmp_path):
    client, _ = make_client(
        tmp_path,
        replies=[
            world_reply(),
            world_reply(hunger=55, narrative="Tea is brewed.", action="Brews tea."),
        ],
    )
    session_id = create_session(client)["session_id"]
    response = client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "make tea", "client_turn_token": "tok-1"},
    )
    assert response.status_code == 200
    body = response.json()
    assert body["replayed"] is False
    assert body["turn"]["round_index"] == 1
    assert body["turn"]["narrative"] == "Tea is brewed."
    assert body["state"]["hunger"] == 55
    assert set(body["latency"]) == {
        "llm_ms",
        "parse_ms",
        "image_ms",
        "overhead_ms",
        "total_ms",
    }

    view = client.get(f"/v1/sessions/{session_id}").json()
    assert view["turn_count"] == 2
    assert view["state"]["hunger"] == 55


def test_turn_input_errors(tmp_path):
    client, _ = make_client(tmp_path, replies=[world_reply()])
    session_id = create_session(client)["session_id"]
    response = client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "", "client_turn_token": "tok-1"},
    )
    assert response.status_code == 400
    assert response.json()["fields"] == ["user_input"]
    response = client.post(
        f"/v1/sessions/{session_id}/turns", json={"user_input": "hello"}
    )
    assert response.status_code == 400
    assert response.json()["fields"] == ["client_turn_token"]


def test_unknown_session_is_404(tmp_path):
    client, _ = make_client(tmp_path, replies=[])
    for url in (
        "/v1/sessions/sess-missing",
        "/v1/sessions/sess-missing/turns",
        "/v1/sessions/sess-missing/environments",
    ):
        assert client.get(url).status_code == 404
    response = client.post(
        "/v1/sessions/sess-missing/turns",
        json={"user_input": "hi", "client_turn_token": "tok-1"},
    )
    assert response.status_code == 404
    assert response.json()["error"] == "unknown session"


def test_replaying_a_token_returns_the_stored_turn(tmp_path):
    client, provider = make_client(
        tmp_path, replies=[world_reply(), world_reply(narrative="Once only.")]
    )
    session_id = create_session(client)["session_id"]
    turn_body = {"user_input": "carry on", "client_turn_token": "tok-once"}
    first = client.post(f"/v1/sessions/{session_id}/turns", json=turn_body).json()
    second_response = client.post(f"/v1/sessions/{session_id}/turns", json=turn_body)
    assert second_response.status_code == 200
    second = second_response.json()
    assert second["replayed"] is True
    assert second["turn"] == first["turn"]
    # Replays never touch the models or produce a fresh breakdown.
    assert provider.calls == 2
    assert second["latency"] == {"total_ms": first["turn"]["latency_ms"]}
    view = client.get(f"/v1/sessions/{session_id}").json()
    assert view["turn_count"] == 2


def test_concurrent_turn_posts_get_409(tmp_path):
    class SlowAfterFirst:
        """Fast opening turn, then slow replies so a second post can
        arrive while the first still holds the session lock."""

        def __init__(self, inner):
            self._inner = inner
            self.calls = 0
            self.busy = threading.Event()

        def complete(self, request):
            self.calls += 1
            if self.calls > 1:
                self.busy.set()
                time.sleep(0.5)
            return self._inner.complete(request)

    provider = SlowAfterFirst(
        MockProvider.scripted([world_reply(), world_reply(), world_reply()])
    )
    client, _ = make_client(tmp_path, world_provider=provider)
    session_id = create_session(client)["session_id"]

    results = {}

    def slow_post():
        results["first"] = client.post(
            f"/v1/sessions/{session_id}/turns",
            json={"user_input": "slow turn", "client_turn_token": "tok-a"},
        )

    worker = threading.Thread(target=slow_post)
    worker.start()
    assert provider.busy.wait(timeout=5.0)
    blocked = client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "impatient", "client_turn_token": "tok-b"},
    )
    worker.join()

    assert blocked.status_code == 409
    assert "already executing" in blocked.json()["error"]
    assert results["first"].status_code == 200
    # The rejected turn can be resubmitted once the session is idle.
    retried = client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "impatient", "client_turn_token": "tok-b"},
    )
    assert retried.status_code == 200
    assert retried.json()["turn"]["round_index"] == 2


def test_turn_model_failure_maps_to_502(tmp_path):
    client, _ = make_client(tmp_path, replies=[world_reply(), "bad", "still bad"])
    session_id = create_session(client)["session_id"]
    response = client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "carry on", "client_turn_token": "tok-1"},
    )
    assert response.status_code == 502
    assert response.json()["trace_id"]
    view = client.get(f"/v1/sessions/{session_id}").json()
    assert view["turn_count"] == 1


def test_turn_range_queries(tmp_path):
    replies = [world_reply()] + [
        world_reply(narrative=f"Round {i}.") for i in range(1, 4)
    ]
    client, _ = make_client(tmp_path, replies=replies)
    session_id = create_session(client)["session_id"]
    for i in range(1, 4):
        client.post(
            f"/v1/sessions/{session_id}/turns",
            json={"user_input": f"go {i}", "client_turn_token": f"tok-{i}"},
        )

    full = client.get(f"/v1/sessions/{session_id}/turns").json()
    assert full["turn_count"] == 4
    assert [turn["round_index"] for turn in full["turns"]] == [0, 1, 2, 3]

    window = client.get(f"/v1/sessions/{session_id}/turns?from=1&to=3").json()
    assert [turn["round_index"] for turn in window["turns"]] == [1, 2]

    tail = client.get(f"/v1/sessions/{session_id}/turns?from=2").json()
    assert [turn["round_index"] for turn in tail["turns"]] == [2, 3]

    past_end = client.get(f"/v1/sessions/{session_id}/turns?from=1&to=99").json()
    assert [turn["round_index"] for turn in past_end["turns"]] == [1, 2, 3]

    for query in ("from=-1", "from=3&to=1"):
        response = client.get(f"/v1/sessions/{session_id}/turns?{query}")
        assert response.status_code == 400
        assert response.json()["fields"] == ["from", "to"]


def test_environment_creation_shows_up_in_listing(tmp_path):
    client, _ = make_client(
        tmp_path,
        replies=[world_reply(), world_reply(environment="Misty Pier")],
    )
    session_id = create_session(client)["session_id"]
    client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "walk to the water", "client_turn_token": "tok-1"},
    )
    body = client.get(f"/v1/sessions/{session_id}/environments").json()
    names = [env["name"] for env in body["environments"]]
    assert names == ["Cozy Home", "Misty Pier"]
    # The first visit pinned a reference image for the new place.
    created = body["environments"][1]
    assert created["reference_image"]


def test_plan_overrides_are_stored_on_the_session(tmp_path):
    client, _ = make_client(tmp_path, replies=[world_reply()])
    payload = dict(CREATE_BODY)
    payload["plan_overrides"] = {"alpha_e": 0.25, "seed": 7}
    response = client.post("/v1/sessions", json=payload)
    assert response.status_code == 201
    session_id = response.json()["session_id"]
    service = client.app.state.service
    assert service.get_session(session_id).plan_overrides == {
        "alpha_e": 0.25,
        "seed": 7,
    }


def test_restart_recovers_sessions_from_disk(tmp_path):
    client, _ = make_client(
        tmp_path,
        replies=[world_reply(), world_reply(hunger=40), world_reply(energy=25)],
    )
    session_id = create_session(client)["session_id"]
    for i in range(2):
        client.post(
            f"/v1/sessions/{session_id}/turns",
            json={"user_input": f"go {i}", "client_turn_token": f"tok-{i}"},
        )
    before = client.get(f"/v1/sessions/{session_id}").json()

    # A brand new app over the same data directory must serve the same
    # session, and keep accepting turns.
    client2, _ = make_client(tmp_path, replies=[world_reply(fun=15)])
    after = client2.get(f"/v1/sessions/{session_id}").json()
    assert after["turn_count"] == before["turn_count"] == 3
    assert after["state"] == before["state"]
    assert after["environments"] == before["environments"]

    response = client2.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "keep going", "client_turn_token": "tok-2"},
    )
    assert response.status_code == 200
    assert response.json()["turn"]["round_index"] == 3


def test_restart_replays_idempotency_tokens_from_the_log(tmp_path):
    client, _ = make_client(tmp_path, replies=[world_reply(), world_reply()])
    session_id = create_session(client)["session_id"]
    body = {"user_input": "carry on", "client_turn_token": "tok-sticky"}
    first = client.post(f"/v1/sessions/{session_id}/turns", json=body).json()

    client2, provider2 = make_client(tmp_path, replies=[])
    replay = client2.post(f"/v1/sessions/{session_id}/turns", json=body)
    assert replay.status_code == 200
    assert replay.json()["replayed"] is True
    assert replay.json()["turn"] == first["turn"]
    assert provider2.calls == 0


def test_torn_log_tail_is_recovered_on_read(tmp_path):
    client, _ = make_client(tmp_path, replies=[world_reply(), world_reply()])
    session_id = create_session(client)["session_id"]
    client.post(
        f"/v1/sessions/{session_id}/turns",
        json={"user_input": "carry on", "client_turn_token": "tok-1"},
    )
    log_path = tmp_path / "data" / "sessions" / f"{session_id}.log"
    with log_path.open("ab") as fh:
        fh.write(b"\x00\x00\x40\x00only half a record")

    client2, _ = make_client(tmp_path, replies=[])
    view = client2.get(f"/v1/sessions/{session_id}")
    assert view.status_code == 200
    assert view.json()["turn_count"] == 2
    turns = client2.get(f"/v1/sessions/{session_id}/turns").json()
    assert [turn["round_index"] for turn in turns["turns"]] == [0, 1]


def test_healthz_reports_wiring(tmp_path):
    client, _ = make_client(tmp_path, replies=[])
    body = client.get("/v1/healthz").json()
    assert body["status"] == "ok"
    assert body["provider_mode"] == "mock"
    assert body["kernel_backend"] == kernels.BACKEND


def test_metrics_window_tracks_turn_latency(tmp_path):
    client, _ = make_client(
        tmp_path, replies=[world_reply(), world_reply(), world_reply()]
    )
    session_id = create_session(client)["session_id"]
    for i in range(2):
        client.post(
            f"/v1/sessions/{session_id}/turns",
            json={"user_input": f"go {i}", "client_turn_token": f"tok-{i}"},
        )
    body = client.get("/v1/metrics").json()
    assert body["window"] == 3
    assert body["turns_total"] == 3
    assert body["target_ms"] == 1000
    assert body["within_target"] is True
    assert set(body["stages"]) == {
        "llm_ms",
        "parse_ms",
        "image_ms",
        "overhead_ms",
        "total_ms",
    }
    for stage in body["stages"].values():
        assert stage["p95"] >= stage["p50"] >= 0


def test_log_lines_are_structured_json(tmp_path):
    records = []

    class Collector(logging.Handler):
        def emit(self, record):
            records.append(record.getMessage())

    logger = logging.getLogger("lifesim.server")
    collector = Collector()
    logger.addHandler(collector)
    try:
        client, _ = make_client(tmp_path, replies=[world_reply(), world_reply()])
        session_id = create_session(client)["session_id"]
        client.post(
            f"/v1/sessions/{session_id}/turns",
            json={"user_input": "carry on", "client_turn_token": "tok-1"},
        )
    finally:
        logger.removeHandler(collector)

    events = [json.loads(line) for line in records]
    kinds = [event["event"] for event in events]
    assert "session_created" in kinds
    assert "turn_completed" in kinds
    for event in events:
        assert event["trace_id"]
        assert isinstance(event["ts"], float)
    completed = next(e for e in events if e["event"] == "turn_completed")
    assert completed["session_id"] == session_id
    assert completed["round_index"] == 1
    assert completed["bind"] == "exact"
