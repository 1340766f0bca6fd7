"""Player-embedding analytics and case-study-style action profiles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .codec import Episode, SlotKind, Vocabulary
from .model import ModelConfig, ModelParams

DRIBBLE_BUCKET = frozenset({"dribble", "take_on"})
PASS_BUCKET = frozenset(
    {"pass", "cross", "throw_in", "freekick_crossed", "freekick_short", "corner_crossed", "corner_short"}
)
SHOT_BUCKET = frozenset({"shot", "shot_penalty", "shot_freekick"})
DEFENSIVE_BUCKET = frozenset(
    {"tackle", "interception", "clearance", "keeper_save", "keeper_claim", "keeper_punch",
     "keeper_pick_up", "foul"}
)

PROFILE_BUCKETS = ("dribble", "pass", "shot", "defensive", "other")


def bucket_of(action_type: str) -> str:
    if action_type in DRIBBLE_BUCKET:
        return "dribble"
    if action_type in PASS_BUCKET:
        return "pass"
    if action_type in SHOT_BUCKET:
        return "shot"
    if action_type in DEFENSIVE_BUCKET:
        return "defensive"
    return "other"


@dataclass(frozen=True)
class ActionProfile:
    """Shares of the action partition plus overall success rate."""

    dribble_share: float
    pass_share: float
    shot_share: float
    defensive_share: float
    other_share: float
    success_rate: float
    n_actions: int

    def to_dict(self) -> dict:
        return {
            "dribble": self.dribble_share,
            "pass": self.pass_share,
            "shot": self.shot_share,
            "defensive": self.defensive_share,
            "other": self.other_share,
            "success_rate": self.success_rate,
            "n_actions": self.n_actions,
        }


def profile_from_actions(action_types: Sequence[str], successes: Sequence[bool]) -> ActionProfile:
    if len(action_types) == 0:
        raise ValueError("cannot profile zero actions")
    counts = {b: 0 for b in PROFILE_BUCKETS}
    for atype in action_types:
        counts[bucket_of(atype)] += 1
    n = len(action_types)
    return ActionProfile(
        dribble_share=counts["dribble"] / n,
        pass_share=counts["pass"] / n,
        shot_share=counts["shot"] / n,
        defensive_share=counts["defensive"] / n,
        other_share=counts["other"] / n,
        success_rate=sum(bool(s) for s in successes) / n,
        n_actions=n,
    )


def combine_profiles(profiles: Sequence[ActionProfile]) -> ActionProfile:
    """Pool profiles by their underlying action counts."""
    total = sum(p.n_actions for p in profiles)
    if total == 0:
        raise ValueError("cannot combine zero actions")

    def pooled(attr: str) -> float:
        return sum(getattr(p, attr) * p.n_actions for p in profiles) / total

    return ActionProfile(
        dribble_share=pooled("dribble_share"),
        pass_share=pooled("pass_share"),
        shot_share=pooled("shot_share"),
        defensive_share=pooled("defensive_share"),
        other_share=pooled("other_share"),
        success_rate=pooled("success_rate"),
        n_actions=total,
    )


def action_profile(episodes: Iterable[Episode], player_id: str) -> ActionProfile:
    """Observed profile of one player over a corpus."""
    types = []
    successes = []
    for ep in episodes:
        for action in ep.actions:
            if action.actor_id == player_id:
                types.append(action.action_type)
                successes.append(action.success)
    if not types:
        raise ValueError(f"player {player_id!r} has no actions in the corpus")
    return profile_from_actions(types, successes)


@dataclass(frozen=True)
class PlayerCard:
    player_id: str
    embedding: np.ndarray
    profile: ActionProfile
    role_label: str | None = None

    def to_dict(self) -> dict:
        return {
            "player_id": self.player_id,
            "embedding": [float(v) for v in self.embedding],
            "profile": self.profile.to_dict(),
            "role_label": self.role_label,
        }


# ---------------------------------------------------------------------------
# Embedding space
# ---------------------------------------------------------------------------


def player_embedding_matrix(params: ModelParams, vocab: Vocabulary) -> np.ndarray:
    """(n_players, D) matrix of player rows from the shared embedding."""
    offset, size = vocab.block(SlotKind.PLAYER)
    return np.array(params["tok_emb"][offset : offset + size])


def similar_players(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    player_id: str,
    k: int,
) -> list[tuple[str, float]]:
    """Top-k players by cosine similarity of embedding rows, query excluded.

    Ties break by ascending player id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    token = vocab.player_token(player_id)
    offset, _ = vocab.block(SlotKind.PLAYER)
    matrix = player_embedding_matrix(params, vocab).astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = matrix / safe[:, None]
    unit[norms == 0] = 0.0
    sims = unit @ unit[token - offset]
    ranked = sorted(
        ((vocab.players[i], float(sims[i])) for i in range(len(sims)) if i != token - offset),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]


def project_embeddings(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    player_ids: Sequence[str] | None = None,
) -> list[tuple[str, float, float]]:
    """Deterministic 2-D map of player embeddings.

    Centers the selected rows and projects onto the top-2 principal
    directions of their covariance (eigendecomposition, descending
    eigenvalues). Each direction's sign is fixed so its largest-magnitude
    component is positive. Raw embeddings stay exportable for external
    nonlinear projections.
    """
    ids = list(player_ids) if player_ids is not None else list(vocab.players)
    if len(ids) < 3:
        raise ValueError("projection requires at least 3 players")
    offset, _ = vocab.block(SlotKind.PLAYER)
    rows = np.stack(
        [params["tok_emb"][vocab.player_token(pid)].astype(np.float64) for pid in ids]
    )
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / (len(ids) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    directions = eigvecs[:, np.argsort(eigvals)[::-1][:2]]
    for j in range(directions.shape[1]):
        lead = np.argmax(np.abs(directions[:, j]))
        if directions[lead, j] < 0:
            directions[:, j] = -directions[:, j]
    coords = centered @ directions
    return [(pid, float(coords[i, 0]), float(coords[i, 1])) for i, pid in enumerate(ids)]


def build_player_card(
    params: ModelParams,
    vocab: Vocabulary,
    episodes: Iterable[Episode],
    player_id: str,
    role_label: str | None = None,
) -> PlayerCard:
    token = vocab.player_token(player_id)
    return PlayerCard(
        player_id=player_id,
        embedding=np.array(params["tok_emb"][token], dtype=np.float64),
        profile=action_profile(episodes, player_id),
        role_label=role_label,
    )
