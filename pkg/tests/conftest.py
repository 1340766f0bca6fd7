from __future__ import annotations

import numpy as np
import pytest

from pitchcast import codec, model, synth, trainer

BLOCK_SIZE = 128
MAX_EVENTS = 12


@pytest.fixture(scope="session")
def league():
    return synth.default_league()


@pytest.fixture(scope="session")
def small_corpus(league):
    """(episodes, bookkeeping) for a 3-match corpus."""
    return synth.generate_corpus(league, 3, seed=11)


@pytest.fixture(scope="session")
def vocab(league):
    return league.vocabulary()


@pytest.fixture(scope="session")
def corpus200(league):
    """(episodes, bookkeeping) for the 200-match law-of-large-numbers corpus."""
    return synth.generate_corpus(league, 200, seed=777)


@pytest.fixture(scope="session")
def encoded_small(small_corpus, vocab):
    episodes, _ = small_corpus
    return trainer.encode_corpus(episodes, vocab, BLOCK_SIZE, MAX_EVENTS)


@pytest.fixture(scope="session")
def tiny_model(vocab, encoded_small):
    """A briefly trained small model for behavioral (non-convergence) tests."""
    cfg = model.ModelConfig(
        vocab_size=vocab.size, block_size=BLOCK_SIZE, n_layers=2, n_heads=4, embed_dim=64
    )
    params = model.init_params(cfg, seed=1)
    tc = trainer.TrainConfig(batch_size=8, steps=150, learning_rate=1e-3, eval_interval=50, seed=0)
    trainer.train(params, cfg, encoded_small, tc)
    return params, cfg


@pytest.fixture(scope="session")
def memorized_model(vocab, encoded_small):
    """A model overfit on a single episode until it regenerates it greedily."""
    encoded = encoded_small.encoded[3]
    tokens = encoded.tokens[None, :]
    mask = encoded.loss_mask[None, :]
    cfg = model.ModelConfig(
        vocab_size=vocab.size, block_size=BLOCK_SIZE, n_layers=2, n_heads=2, embed_dim=48
    )
    params = model.init_params(cfg, seed=2)
    tc = trainer.TrainConfig(batch_size=1, steps=500, learning_rate=2e-3, eval_interval=100, seed=0)
    corpus = trainer.EncodedCorpus(
        tokens=tokens,
        loss_mask=mask,
        slot_kind=encoded.slot_kind[None, :],
        encoded=[encoded],
        episodes=[encoded_small.episodes[3]],
        vocab_hash=vocab.manifest_hash,
    )
    result = trainer.train(params, cfg, corpus, tc)
    return params, cfg, encoded_small.episodes[3], result.losses[-1]


def make_players(n: int, prefix: str = "Q") -> tuple[str, ...]:
    return tuple(f"{prefix}{i:02d}" for i in range(1, n + 1))


def make_context(players=None, **overrides) -> codec.ContextBlock:
    players = players if players is not None else make_players(22)
    defaults = dict(
        on_pitch=tuple(players),
        minute=0,
        home_goals=0,
        away_goals=0,
        home_reds=0,
        away_reds=0,
        home_yellows=0,
        away_yellows=0,
    )
    defaults.update(overrides)
    return codec.ContextBlock(**defaults)


def make_action(actor: str, **overrides) -> codec.Action:
    defaults = dict(
        actor_id=actor,
        team_side=codec.HOME,
        action_type="pass",
        x=52.0,
        y=34.0,
        delta_t=0.0,
        success=True,
        obv=0.0,
    )
    defaults.update(overrides)
    return codec.Action(**defaults)


def make_episode(actions, players=None, **context_overrides) -> codec.Episode:
    ctx = make_context(players, **context_overrides)
    return codec.Episode(context=ctx, actions=tuple(actions), source_match_id="fixture")
