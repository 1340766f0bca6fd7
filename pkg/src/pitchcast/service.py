"""HTTP JSON service exposing the trained model for interactive use.

The service performs no numerical logic of its own: every /simulate response
is produced by :func:`pitchcast.inference.simulation_report` with the request
arguments, so any response field is reproducible by calling the inference
module directly. Model and corpus are immutable after startup.

Error bodies are always ``{"code": ..., "message": ...}`` with 400 for bad
input, 404 for unknown resources, and 500 for internal failures.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import analytics, codec, inference
from .codec import Episode, UnknownPlayerError, Vocabulary
from .model import ModelConfig, ModelParams, checkpoint_file_hash, load_checkpoint

DEFAULT_MAX_SAMPLES = 100
DEFAULT_MAX_EPISODES = 8


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _bad_request(message: str) -> ApiError:
    return ApiError(400, "bad_request", message)


def _not_found(message: str) -> ApiError:
    return ApiError(404, "not_found", message)


@dataclass
class ServiceBundle:
    """Everything the service needs, loaded once and treated as read-only."""

    params: ModelParams
    config: ModelConfig
    vocab: Vocabulary
    episodes: list[Episode]
    roles: dict[str, str]
    model_hash: str
    vocab_hash: str
    max_events: int = 12
    max_samples: int = DEFAULT_MAX_SAMPLES
    _profiles: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(
        cls,
        ckpt_path: str | Path,
        corpus_path: str | Path,
        vocab_path: str | Path | None = None,
        meta_path: str | Path | None = None,
        max_events: int = 12,
        max_samples: int | None = None,
    ) -> "ServiceBundle":
        params, config, ckpt_vocab_hash = load_checkpoint(ckpt_path)
        corpus_path = Path(corpus_path)
        if vocab_path is None:
            vocab_path = corpus_path.with_suffix(".vocab.json")
        vocab = Vocabulary.load(vocab_path)
        if vocab.manifest_hash != ckpt_vocab_hash:
            raise ValueError(
                "vocabulary hash mismatch between checkpoint and corpus manifest; refusing to serve"
            )
        episodes = codec.read_corpus(corpus_path)
        roles: dict[str, str] = {}
        if meta_path:
            import json

            meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
            for pid, entry in meta.get("players", {}).items():
                roles[pid] = entry.get("archetype", entry.get("role_class", ""))
        if max_samples is None:
            max_samples = int(os.environ.get("PITCHCAST_MAX_SAMPLES", DEFAULT_MAX_SAMPLES))
        return cls(
            params=params,
            config=config,
            vocab=vocab,
            episodes=episodes,
            roles=roles,
            model_hash=checkpoint_file_hash(ckpt_path),
            vocab_hash=vocab.manifest_hash,
            max_events=max_events,
            max_samples=max_samples,
        )

    def require_player(self, player_id: str) -> None:
        if player_id not in self.vocab.players:
            raise _not_found(f"unknown player {player_id!r}")

    def profile(self, player_id: str) -> dict:
        if player_id not in self._profiles:
            try:
                self._profiles[player_id] = analytics.action_profile(self.episodes, player_id).to_dict()
            except ValueError:
                raise _not_found(f"player {player_id!r} has no actions in the corpus") from None
        return self._profiles[player_id]


class SimRequest(BaseModel):
    out_player: str
    in_player: str
    episode_ids: Optional[list[int]] = None
    player: Optional[str] = None
    n_samples: int = 30
    temperature: float = 1.0
    role_class: str = "midfielder"
    seed: int = 0
    max_episodes: int = DEFAULT_MAX_EPISODES


def create_app(bundle: ServiceBundle, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="pitchcast", docs_url="/docs")

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "bad_request", "message": str(exc.errors())})

    @app.exception_handler(Exception)
    async def internal_handler(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"code": "internal", "message": "internal error"})

    @app.get("/health")
    def health():
        return {"status": "ok", "model_hash": bundle.model_hash, "vocab_hash": bundle.vocab_hash}

    @app.get("/players")
    def players():
        return {
            "players": [
                {"player_id": pid, "role_label": bundle.roles.get(pid)}
                for pid in bundle.vocab.players
            ]
        }

    @app.get("/players/{player_id}/profile")
    def player_profile(player_id: str):
        bundle.require_player(player_id)
        return {"player_id": player_id, "profile": bundle.profile(player_id)}

    @app.get("/players/{player_id}/similar")
    def player_similar(player_id: str, k: int = 10):
        bundle.require_player(player_id)
        if k < 1:
            raise _bad_request("k must be >= 1")
        ranked = analytics.similar_players(bundle.params, bundle.config, bundle.vocab, player_id, k=k)
        return {
            "player_id": player_id,
            "results": [{"player_id": pid, "cosine": sim} for pid, sim in ranked],
        }

    @app.get("/players/{player_id}/embedding")
    def player_embedding(player_id: str):
        bundle.require_player(player_id)
        token = bundle.vocab.player_token(player_id)
        row = bundle.params["tok_emb"][token]
        return {"player_id": player_id, "embedding": [float(v) for v in row]}

    @app.get("/episodes")
    def episodes(player: Optional[str] = None, limit: int = 50):
        if limit < 1:
            raise _bad_request("limit must be >= 1")
        if player is not None:
            bundle.require_player(player)
            indices = inference.select_episodes_for_player(bundle.episodes, player, bundle.max_events)
        else:
            indices = list(range(len(bundle.episodes)))
        indices = indices[:limit]
        return {
            "episodes": [
                {
                    "episode_id": i,
                    "match_id": bundle.episodes[i].source_match_id,
                    "start_reason": bundle.episodes[i].start_reason,
                    "minute": bundle.episodes[i].context.minute,
                    "n_events": len(bundle.episodes[i].actions),
                }
                for i in indices
            ]
        }

    @app.get("/episodes/{episode_id}")
    def episode_detail(episode_id: int):
        if not (0 <= episode_id < len(bundle.episodes)):
            raise _not_found(f"episode {episode_id} does not exist")
        payload = codec.episode_to_dict(bundle.episodes[episode_id])
        payload["episode_id"] = episode_id
        return payload

    @app.get("/embedding-map")
    def embedding_map():
        coords = analytics.project_embeddings(bundle.params, bundle.config, bundle.vocab)
        return {
            "points": [
                {"player_id": pid, "u": u, "v": v, "role_label": bundle.roles.get(pid)}
                for pid, u, v in coords
            ]
        }

    @app.post("/simulate")
    def simulate(req: SimRequest):
        bundle.require_player(req.out_player)
        bundle.require_player(req.in_player)
        if req.n_samples < 1:
            raise _bad_request("n_samples must be >= 1")
        if req.n_samples > bundle.max_samples:
            raise _bad_request(
                f"n_samples {req.n_samples} exceeds the synchronous limit of {bundle.max_samples}"
            )
        if req.role_class not in inference.ROLE_CLASSES:
            raise _bad_request(f"role_class must be one of {inference.ROLE_CLASSES}")
        if req.episode_ids is not None:
            for i in req.episode_ids:
                if not (0 <= i < len(bundle.episodes)):
                    raise _not_found(f"episode {i} does not exist")
            indices = list(req.episode_ids)
        else:
            selector = req.player or req.out_player
            bundle.require_player(selector)
            indices = inference.select_episodes_for_player(
                bundle.episodes, selector, bundle.max_events
            )[: req.max_episodes]
        if not indices:
            raise _bad_request(f"no episodes found for {req.out_player!r}")
        sub = inference.Substitution(out_player=req.out_player, in_player=req.in_player)
        try:
            report = inference.simulation_report(
                bundle.params, bundle.config, bundle.vocab, bundle.episodes, indices, sub,
                n_samples=req.n_samples, max_events=bundle.max_events,
                temperature=req.temperature, seed=req.seed, role_class=req.role_class,
            )
        except UnknownPlayerError as exc:
            raise _not_found(str(exc)) from exc
        except ValueError as exc:
            raise _bad_request(str(exc)) from exc
        return report

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
