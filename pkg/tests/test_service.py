from __future__ import annotations

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from pitchcast import analytics, codec, inference, model, synth
from pitchcast.service import ServiceBundle, create_app

from conftest import MAX_EVENTS


@pytest.fixture(scope="module")
def service_dir(tmp_path_factory, tiny_model, vocab, small_corpus, league):
    params, cfg = tiny_model
    episodes, _ = small_corpus
    root = tmp_path_factory.mktemp("service")
    model.save_checkpoint(root / "checkpoint.bin", params, cfg, vocab.manifest_hash)
    codec.write_corpus(episodes[:400], root / "corpus.ndjson")
    vocab.save(root / "corpus.vocab.json")
    meta = synth.league_metadata(league)
    (root / "corpus.meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return root


@pytest.fixture(scope="module")
def bundle(service_dir):
    return ServiceBundle.load(
        ckpt_path=service_dir / "checkpoint.bin",
        corpus_path=service_dir / "corpus.ndjson",
        meta_path=service_dir / "corpus.meta.json",
        max_events=MAX_EVENTS,
    )


@pytest.fixture(scope="module")
def client(bundle):
    return TestClient(create_app(bundle), raise_server_exceptions=False)


def _sim_request(bundle, **overrides):
    episodes = bundle.episodes
    for i, ep in enumerate(episodes):
        actors = [a.actor_id for a in ep.actions[-MAX_EVENTS:]]
        if actors:
            payload = {
                "out_player": actors[0],
                "in_player": actors[0],
                "episode_ids": [i],
                "n_samples": 5,
                "temperature": 1.0,
                "role_class": "midfielder",
                "seed": 3,
            }
            payload.update(overrides)
            return payload
    raise AssertionError("no usable episode")


def test_health(client, bundle, service_dir):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok"
    assert body["vocab_hash"] == bundle.vocab.manifest_hash
    assert body["model_hash"] == model.checkpoint_file_hash(service_dir / "checkpoint.bin")


def test_players_listing(client, vocab, league):
    body = client.get("/players").json()
    assert len(body["players"]) == len(vocab.players)
    entry = body["players"][0]
    assert entry["player_id"] == vocab.players[0]
    assert entry["role_label"] == league.players[vocab.players[0]].name


def test_player_profile_thin_wrapper(client, bundle):
    pid = next(a.actor_id for ep in bundle.episodes for a in ep.actions)
    body = client.get(f"/players/{pid}/profile").json()
    direct = analytics.action_profile(bundle.episodes, pid).to_dict()
    assert body == {"player_id": pid, "profile": direct}


def test_player_similar_thin_wrapper(client, bundle):
    pid = bundle.vocab.players[4]
    body = client.get(f"/players/{pid}/similar", params={"k": 5}).json()
    direct = analytics.similar_players(bundle.params, bundle.config, bundle.vocab, pid, k=5)
    assert body["results"] == [{"player_id": p, "cosine": c} for p, c in direct]


def test_player_embedding_matches_params(client, bundle):
    pid = bundle.vocab.players[2]
    body = client.get(f"/players/{pid}/embedding").json()
    row = bundle.params["tok_emb"][bundle.vocab.player_token(pid)]
    assert body["embedding"] == [float(v) for v in row]


def test_unknown_player_not_found(client):
    resp = client.get("/players/û/profile")
    assert resp.status_code == 404
    assert resp.json() == {"code": "not_found", "message": "unknown player 'û'"}


def test_episodes_filtered_by_player(client, bundle):
    pid = next(a.actor_id for ep in bundle.episodes for a in ep.actions)
    body = client.get("/episodes", params={"player": pid, "limit": 10}).json()
    assert body["episodes"], "player acts somewhere"
    for entry in body["episodes"]:
        ep = bundle.episodes[entry["episode_id"]]
        assert any(a.actor_id == pid for a in ep.actions[-MAX_EVENTS:])
        assert entry["match_id"] == ep.source_match_id


def test_episode_detail_and_missing(client, bundle):
    body = client.get("/episodes/0").json()
    assert body["episode_id"] == 0
    assert body["match_id"] == bundle.episodes[0].source_match_id
    resp = client.get(f"/episodes/{len(bundle.episodes)}")
    assert resp.status_code == 404


def test_embedding_map_thin_wrapper(client, bundle):
    body = client.get("/embedding-map").json()
    direct = analytics.project_embeddings(bundle.params, bundle.config, bundle.vocab)
    assert [(p["player_id"], p["u"], p["v"]) for p in body["points"]] == direct


def test_simulate_identity_equals_baseline(client, bundle):
    payload = _sim_request(bundle)
    body = client.post("/simulate", json=payload).json()
    overall = body["overall"]
    assert overall["substituted"]["aggregate_robv"] == overall["baseline"]["aggregate_robv"]
    assert overall["substituted"] == overall["baseline"]
    assert overall["reevaluation"]["baseline_mean"] == overall["reevaluation"]["substituted_mean"]


def test_simulate_same_seed_byte_identical(client, bundle):
    payload = _sim_request(bundle, n_samples=6)
    a = client.post("/simulate", json=payload)
    b = client.post("/simulate", json=payload)
    assert a.status_code == 200
    assert a.content == b.content


def test_simulate_thin_wrapper_equivalence(client, bundle):
    payload = _sim_request(bundle, n_samples=4, seed=9)
    body = client.post("/simulate", json=payload).json()
    sub = inference.Substitution(payload["out_player"], payload["in_player"])
    direct = inference.simulation_report(
        bundle.params, bundle.config, bundle.vocab, bundle.episodes,
        payload["episode_ids"], sub,
        n_samples=payload["n_samples"], max_events=bundle.max_events,
        temperature=payload["temperature"], seed=payload["seed"],
        role_class=payload["role_class"],
    )
    assert body == json.loads(json.dumps(direct))


def test_simulate_sample_limit(client, bundle):
    payload = _sim_request(bundle, n_samples=bundle.max_samples + 1)
    resp = client.post("/simulate", json=payload)
    assert resp.status_code == 400
    assert resp.json()["code"] == "bad_request"


def test_simulate_unknown_player(client, bundle):
    payload = _sim_request(bundle, in_player="nobody")
    resp = client.post("/simulate", json=payload)
    assert resp.status_code == 404
    assert resp.json()["code"] == "not_found"


def test_simulate_bad_episode_id(client, bundle):
    payload = _sim_request(bundle, episode_ids=[10**6])
    resp = client.post("/simulate", json=payload)
    assert resp.status_code == 404


def test_malformed_request_structured_error(client):
    resp = client.post("/simulate", json={"n_samples": "many"})
    assert resp.status_code == 400
    body = resp.json()
    assert set(body) == {"code", "message"}
    assert body["code"] == "bad_request"
    # process still healthy
    assert client.get("/health").status_code == 200


def test_simulate_selector_by_out_player(client, bundle):
    pid = next(a.actor_id for ep in bundle.episodes for a in ep.actions[-MAX_EVENTS:])
    payload = {
        "out_player": pid, "in_player": pid,
        "n_samples": 2, "seed": 0, "max_episodes": 2,
    }
    body = client.post("/simulate", json=payload).json()
    assert 1 <= body["n_episodes"] <= 2


def test_bundle_refuses_vocab_mismatch(service_dir, tmp_path):
    other_vocab = codec.Vocabulary(players=("A", "B", "C"))
    bad = tmp_path / "bad.vocab.json"
    other_vocab.save(bad)
    with pytest.raises(ValueError, match="hash mismatch"):
        ServiceBundle.load(
            ckpt_path=service_dir / "checkpoint.bin",
            corpus_path=service_dir / "corpus.ndjson",
            vocab_path=bad,
        )


def test_max_samples_env_override(service_dir, monkeypatch):
    monkeypatch.setenv("PITCHCAST_MAX_SAMPLES", "7")
    bundle = ServiceBundle.load(
        ckpt_path=service_dir / "checkpoint.bin",
        corpus_path=service_dir / "corpus.ndjson",
    )
    assert bundle.max_samples == 7
