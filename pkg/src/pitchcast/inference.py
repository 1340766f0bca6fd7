"""Grammar-constrained generation and counterfactual player substitution.

Two counterfactual modes:

* :func:`reevaluate_robv` keeps the observed token sequence fixed, swaps one
  player identity in the context block and acting slots, and reads the
  model's expected residual value at the substituted player's value slots.
* :func:`simulate_substitution` re-generates event attributes freely under
  the modified context; actor identities follow the original episode's actor
  schedule, isolating the substituted player's effect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import codec
from .analytics import ActionProfile, combine_profiles, profile_from_actions
from .codec import EVENT_SLOT_ORDER, Episode, SlotKind, Vocabulary
from .model import IncrementalDecoder, ModelConfig, ModelParams, forward, softmax

ROLE_CLASSES = ("attacker", "midfielder", "defender", "keeper")


class ContextOverflowError(ValueError):
    """Prefix plus one event would exceed the model's block size."""


@dataclass(frozen=True)
class Substitution:
    """Swap of one context player for another.

    Identity substitutions (in == out) are legal and act as exact no-ops;
    they are the natural baseline for what-if comparisons.
    """

    out_player: str
    in_player: str

    @property
    def is_identity(self) -> bool:
        return self.out_player == self.in_player


def aggregate_robv(samples: Sequence[float], role_class: str) -> float:
    """Role-aware aggregation: attackers use the top-quartile mean.

    Attackers' value distribution is dominated by rare high outcomes, so the
    mean of the ceil(N/4) largest samples is used; all other roles use the
    arithmetic mean.
    """
    if len(samples) == 0:
        raise ValueError("cannot aggregate zero samples")
    if role_class not in ROLE_CLASSES:
        raise ValueError(f"unknown role class {role_class!r}; expected one of {ROLE_CLASSES}")
    values = sorted(float(s) for s in samples)
    if role_class == "attacker":
        top = values[-math.ceil(len(values) / 4):]
        return sum(top) / len(top)
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# Constrained sampling
# ---------------------------------------------------------------------------


def _sample_block_batch(
    logits: np.ndarray,
    vocab: Vocabulary,
    kind: SlotKind,
    temperature: float,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Sample one token per row, restricted to the slot's vocabulary block.

    Out-of-block logits are treated as -inf (they are simply never
    considered). temperature == 0 means in-block argmax.
    """
    sl = vocab.block_slice(kind)
    block = logits[..., sl]
    if temperature <= 0.0:
        picks = block.argmax(axis=-1)
    else:
        z = block.astype(np.float64) / temperature
        z -= z.max(axis=-1, keepdims=True)
        cum = np.cumsum(np.exp(z), axis=-1)
        u = rng.random(block.shape[0]) * cum[:, -1]
        picks = (cum < u[:, None]).sum(axis=-1)
        picks = np.minimum(picks, block.shape[-1] - 1)
    return picks.astype(np.int64) + sl.start


def sample_next_event(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    prefix_tokens: np.ndarray,
    acting_player: str,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Generate one 8-token event after a grammatical prefix.

    The player token is forced to ``acting_player`` (identity is conditioning
    only, never predicted); the 7 attribute slots are sampled in order, each
    restricted to its own vocabulary block, appending each token before
    predicting the next.
    """
    prefix = np.asarray(prefix_tokens).reshape(-1)
    if len(prefix) + codec.EVENT_TOKENS > config.block_size:
        raise ContextOverflowError(
            f"prefix of {len(prefix)} tokens leaves no room for an event in block size {config.block_size}"
        )
    if temperature > 0 and rng is None:
        raise ValueError("sampling with temperature > 0 requires an rng")
    decoder = IncrementalDecoder(params, config, batch_size=1)
    decoder.prefill(prefix[None, :])
    return _roll_event(decoder, vocab, np.array([vocab.player_token(acting_player)]), temperature, rng)[0]


def _roll_event(
    decoder: IncrementalDecoder,
    vocab: Vocabulary,
    actor_tokens: np.ndarray,
    temperature: float,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Advance a decoder batch by one event; returns (N, 8) tokens."""
    n = decoder.n
    event = np.empty((n, codec.EVENT_TOKENS), dtype=np.int64)
    event[:, 0] = actor_tokens
    logits = decoder.step(actor_tokens)
    for s, kind in enumerate(EVENT_SLOT_ORDER[1:], start=1):
        toks = _sample_block_batch(logits, vocab, kind, temperature, rng)
        event[:, s] = toks
        if s < codec.EVENT_TOKENS - 1:
            logits = decoder.step(toks)
        else:
            decoder.step(toks)
    return event


# ---------------------------------------------------------------------------
# Fixed-sequence re-evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventValue:
    event_index: int
    baseline: float
    substituted: float


@dataclass(frozen=True)
class ReevaluationResult:
    """Expected residual value at the substituted player's action slots.

    ``baseline`` values come from the unmodified sequence, ``substituted``
    from the sequence with the identity swapped in the context block and
    acting-player tokens; all other tokens are unchanged.
    """

    per_event: tuple[EventValue, ...]
    baseline_mean: float | None
    substituted_mean: float | None

    def to_dict(self) -> dict:
        return {
            "per_event": [
                {"event_index": ev.event_index, "baseline": ev.baseline, "substituted": ev.substituted}
                for ev in self.per_event
            ],
            "baseline_mean": self.baseline_mean,
            "substituted_mean": self.substituted_mean,
        }


def _substituted_tokens(
    enc: codec.EncodedEpisode, vocab: Vocabulary, sub: Substitution
) -> tuple[np.ndarray, int, int]:
    out_tok = vocab.player_token(sub.out_player)
    in_tok = vocab.player_token(sub.in_player)
    context_players = enc.tokens[1:23]
    if out_tok not in context_players:
        raise ValueError(f"out_player {sub.out_player!r} is not in the episode context")
    modified = enc.tokens.copy()
    player_slots = enc.slot_kind == int(SlotKind.PLAYER)
    swap = player_slots & (enc.tokens == out_tok)
    modified[swap] = in_tok
    return modified, out_tok, in_tok


def reevaluate_robv(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    episode: Episode,
    sub: Substitution,
    max_events: int = codec.DEFAULT_MAX_EVENTS,
) -> ReevaluationResult:
    """Teacher-force the unchanged event sequence under a swapped identity.

    The readout at each residual-value slot is the distribution mean over
    bin centers (in-block softmax), not an argmax: residual value is a
    regression target squeezed into tokens.
    """
    enc = codec.encode_episode(episode, vocab, config.block_size, max_events)
    modified, out_tok, _ = _substituted_tokens(enc, vocab, sub)

    batch = np.stack([enc.tokens, modified])
    logits = forward(params, config, batch[:, :-1])
    sl = vocab.block_slice(SlotKind.ROBV)
    centers = codec.ROBV_BIN_CENTERS

    per_event = []
    for event_index, boundary in enumerate(enc.event_boundaries):
        if enc.tokens[boundary] != out_tok:
            continue
        predict_pos = boundary + codec.EVENT_TOKENS - 2  # logits at the success slot
        base = float(softmax(logits[0, predict_pos, sl].astype(np.float64)) @ centers)
        swapped = float(softmax(logits[1, predict_pos, sl].astype(np.float64)) @ centers)
        per_event.append(EventValue(event_index=event_index, baseline=base, substituted=swapped))

    if per_event:
        baseline_mean = sum(ev.baseline for ev in per_event) / len(per_event)
        substituted_mean = sum(ev.substituted for ev in per_event) / len(per_event)
    else:
        baseline_mean = None
        substituted_mean = None
    return ReevaluationResult(
        per_event=tuple(per_event),
        baseline_mean=baseline_mean,
        substituted_mean=substituted_mean,
    )


# ---------------------------------------------------------------------------
# Free-running simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationResult:
    """Sampled residual values and behavior of the substituted player."""

    robv_samples: tuple[float, ...]
    action_profile: ActionProfile
    n_samples: int
    aggregation_used: str
    aggregate_robv: float

    def to_dict(self) -> dict:
        return {
            "robv_samples": list(self.robv_samples),
            "action_profile": self.action_profile.to_dict(),
            "n_samples": self.n_samples,
            "aggregation_used": self.aggregation_used,
            "aggregate_robv": self.aggregate_robv,
        }


def simulate_substitution(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    episode: Episode,
    sub: Substitution,
    n_samples: int = 30,
    max_events: int = codec.DEFAULT_MAX_EVENTS,
    temperature: float = 1.0,
    seed: int = 0,
    role_class: str = "midfielder",
) -> SimulationResult:
    """Roll out the episode's events under the modified context block.

    All attribute tokens are re-generated with slot-constrained sampling;
    per-event actor identities follow the original episode's actor sequence
    (with the substitution applied), so the counterfactual isolates the
    swapped player. Each sample contributes one residual-value scalar: the
    mean of the substituted player's value slots in that rollout. The action
    profile pools the substituted player's generated events across samples.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if role_class not in ROLE_CLASSES:
        raise ValueError(f"unknown role class {role_class!r}; expected one of {ROLE_CLASSES}")
    enc = codec.encode_episode(episode, vocab, config.block_size, max_events)
    modified, _, in_tok = _substituted_tokens(enc, vocab, sub)

    schedule = [int(modified[b]) for b in enc.event_boundaries]
    target_events = [j for j, tok in enumerate(schedule) if tok == in_tok]
    if not target_events:
        raise ValueError(
            f"player {sub.out_player!r} never acts in the episode; nothing to simulate"
        )

    rng = np.random.default_rng(seed)
    decoder = IncrementalDecoder(params, config, batch_size=n_samples)
    prefix = np.repeat(modified[None, : 1 + codec.CONTEXT_TOKENS], n_samples, axis=0)
    decoder.prefill(prefix)

    type_offset, _ = vocab.block(SlotKind.ACTION_TYPE)
    success_offset, _ = vocab.block(SlotKind.SUCCESS)
    robv_offset, _ = vocab.block(SlotKind.ROBV)

    robv_by_sample = np.zeros((n_samples, len(target_events)))
    gen_types: list[str] = []
    gen_success: list[bool] = []
    target_col = 0
    for j, actor_tok in enumerate(schedule):
        event = _roll_event(decoder, vocab, np.full(n_samples, actor_tok), temperature, rng)
        if actor_tok == in_tok:
            robv_by_sample[:, target_col] = codec.ROBV_BIN_CENTERS[event[:, 7] - robv_offset]
            target_col += 1
            gen_types.extend(vocab.action_types[t - type_offset] for t in event[:, 2])
            gen_success.extend(bool(s - success_offset) for s in event[:, 6])

    samples = tuple(float(v) for v in robv_by_sample.mean(axis=1))
    aggregation_used = "top_quartile_mean" if role_class == "attacker" else "mean"
    return SimulationResult(
        robv_samples=samples,
        action_profile=profile_from_actions(gen_types, gen_success),
        n_samples=n_samples,
        aggregation_used=aggregation_used,
        aggregate_robv=aggregate_robv(samples, role_class),
    )


# ---------------------------------------------------------------------------
# Multi-episode reports
# ---------------------------------------------------------------------------


def acting_events_in_window(episode: Episode, player_id: str, max_events: int) -> int:
    """Actions by a player among the most recent ``max_events`` events."""
    return sum(1 for a in episode.actions[-max_events:] if a.actor_id == player_id)


def select_episodes_for_player(
    episodes: Sequence[Episode], player_id: str, max_events: int
) -> list[int]:
    """Indices of episodes where the player acts inside the encoding window."""
    return [
        i
        for i, ep in enumerate(episodes)
        if player_id in ep.context.on_pitch
        and acting_events_in_window(ep, player_id, max_events) > 0
    ]


def simulation_report(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    episodes: Sequence[Episode],
    episode_indices: Sequence[int],
    sub: Substitution,
    n_samples: int = 30,
    max_events: int = codec.DEFAULT_MAX_EVENTS,
    temperature: float = 1.0,
    seed: int = 0,
    role_class: str = "midfielder",
) -> dict:
    """What-if report over a set of episodes.

    Per episode: a free-running simulation of the substitution, an identity
    (baseline) simulation with the same per-episode seed, and the
    fixed-sequence re-evaluation. The overall block pools residual-value
    samples and profiles across episodes. Fully deterministic given ``seed``
    (episode i uses seed + i within the selection order).
    """
    if not episode_indices:
        raise ValueError("no episodes selected")
    identity = Substitution(sub.out_player, sub.out_player)
    per_episode = []
    sub_samples: list[float] = []
    base_samples: list[float] = []
    sub_profiles = []
    base_profiles = []
    reeval_base: list[float] = []
    reeval_sub: list[float] = []
    for order, idx in enumerate(episode_indices):
        episode = episodes[idx]
        ep_seed = seed + order
        sim = simulate_substitution(
            params, config, vocab, episode, sub,
            n_samples=n_samples, max_events=max_events,
            temperature=temperature, seed=ep_seed, role_class=role_class,
        )
        baseline = simulate_substitution(
            params, config, vocab, episode, identity,
            n_samples=n_samples, max_events=max_events,
            temperature=temperature, seed=ep_seed, role_class=role_class,
        )
        reeval = reevaluate_robv(params, config, vocab, episode, sub, max_events=max_events)
        per_episode.append(
            {
                "episode_index": idx,
                "match_id": episode.source_match_id,
                "simulation": sim.to_dict(),
                "baseline_simulation": baseline.to_dict(),
                "reevaluation": reeval.to_dict(),
            }
        )
        sub_samples.extend(sim.robv_samples)
        base_samples.extend(baseline.robv_samples)
        sub_profiles.append(sim.action_profile)
        base_profiles.append(baseline.action_profile)
        if reeval.baseline_mean is not None:
            reeval_base.append(reeval.baseline_mean)
            reeval_sub.append(reeval.substituted_mean)
    aggregation_used = "top_quartile_mean" if role_class == "attacker" else "mean"
    overall = {
        "substituted": {
            "robv_samples": sub_samples,
            "action_profile": combine_profiles(sub_profiles).to_dict(),
            "n_samples": len(sub_samples),
            "aggregation_used": aggregation_used,
            "aggregate_robv": aggregate_robv(sub_samples, role_class),
        },
        "baseline": {
            "robv_samples": base_samples,
            "action_profile": combine_profiles(base_profiles).to_dict(),
            "n_samples": len(base_samples),
            "aggregation_used": aggregation_used,
            "aggregate_robv": aggregate_robv(base_samples, role_class),
        },
        "reevaluation": {
            "baseline_mean": sum(reeval_base) / len(reeval_base) if reeval_base else None,
            "substituted_mean": sum(reeval_sub) / len(reeval_sub) if reeval_sub else None,
        },
    }
    return {
        "out_player": sub.out_player,
        "in_player": sub.in_player,
        "n_samples": n_samples,
        "temperature": temperature,
        "seed": seed,
        "role_class": role_class,
        "max_events": max_events,
        "n_episodes": len(episode_indices),
        "episodes": per_episode,
        "overall": overall,
    }
