from __future__ import annotations

import fractions
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitchcast import codec, synth
from pitchcast.codec import (
    Annotation,
    GrammarViolationError,
    MalformedInputError,
    RawEvent,
    RawMatch,
    SlotKind,
    UnknownPlayerError,
    Vocabulary,
)

from conftest import BLOCK_SIZE, MAX_EVENTS, make_action, make_context, make_episode, make_players


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


def test_discretize_x_midpitch():
    assert codec.discretize("x", 52.5) == 52
    assert codec.undiscretize("x", 52) == 52.5


def test_discretize_robv_center():
    assert codec.discretize("robv", 0.0) == 100


@pytest.mark.parametrize(
    "kind,value,expected",
    [
        ("x", -3.0, 0),
        ("x", 104.9, 104),
        ("y", 67.2, 67),
        ("delta_t", 0.4, 0),
        ("delta_t", 119.0, 60),
        ("robv", -5.0, 0),
        ("robv", 5.0, 200),
        ("robv", 0.013, 101),
        ("minute", 200.0, 130),
        ("counter", 99.0, 15),
    ],
)
def test_discretize_clipping(kind, value, expected):
    assert codec.discretize(kind, value) == expected


def test_discretize_rejects_nonfinite():
    with pytest.raises(codec.CodecError):
        codec.discretize("x", float("nan"))
    with pytest.raises(codec.CodecError):
        codec.discretize("robv", float("inf"))


def test_discretize_unknown_kind():
    with pytest.raises(codec.CodecError):
        codec.discretize("speed", 1.0)


def test_x_round_trip_within_half_meter():
    rng = random.Random(0)
    for _ in range(10_000):
        x = rng.uniform(0.0, 105.0 - 1e-9)
        back = codec.undiscretize("x", codec.discretize("x", x))
        assert abs(back - x) <= 0.5


@given(st.floats(min_value=-1.5, max_value=1.5, allow_nan=False))
def test_robv_round_trip_within_bin(value):
    back = codec.undiscretize("robv", codec.discretize("robv", value))
    clipped = min(max(value, -1.0), 1.0)
    assert abs(back - clipped) <= codec.ROBV_BIN_WIDTH / 2 + 1e-12


# ---------------------------------------------------------------------------
# Residual-value targets
# ---------------------------------------------------------------------------


def test_robv_targets_simple_suffix_sum():
    actions = [make_action("Q01", obv=v) for v in (0.1, -0.05, 0.2)]
    assert codec.compute_robv_targets(actions) == pytest.approx([0.25, 0.15, 0.2])


def test_robv_targets_zero():
    actions = [make_action("Q01", obv=0.0)] * 5
    assert codec.compute_robv_targets(actions) == [0.0] * 5


def test_robv_targets_empty():
    assert codec.compute_robv_targets([]) == []


def test_robv_targets_telescoping_exact_on_grid():
    # generator obv values live on a 1/1024 grid, where suffix sums are exact
    rng = random.Random(7)
    obvs = [rng.randrange(-300, 300) / 1024 for _ in range(50)]
    actions = [make_action("Q01", obv=v) for v in obvs]
    targets = codec.compute_robv_targets(actions)
    assert targets[-1] == obvs[-1]
    for t in range(49):
        assert targets[t] - targets[t + 1] == obvs[t]


def test_robv_targets_telescoping_exact_via_rationals():
    # arbitrary floats: telescoping holds exactly in rational arithmetic
    rng = random.Random(8)
    obvs = [rng.uniform(-0.3, 0.3) for _ in range(30)]
    targets = [0.0] * 30
    acc = fractions.Fraction(0)
    for t in range(29, -1, -1):
        acc += fractions.Fraction(obvs[t])
        targets[t] = acc
    for t in range(29):
        assert targets[t] - targets[t + 1] == fractions.Fraction(obvs[t])


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


def test_vocabulary_blocks_disjoint_and_exhaustive(vocab):
    total = 0
    for kind in SlotKind:
        offset, size = vocab.block(kind)
        assert offset == total, "blocks must be contiguous in declared order"
        total += size
    assert total == vocab.size
    for token in range(vocab.size):
        owners = [
            kind
            for kind in SlotKind
            if vocab.block(kind)[0] <= token < vocab.block(kind)[0] + vocab.block(kind)[1]
        ]
        assert len(owners) == 1
        assert vocab.kind_of(token) == owners[0]


def test_vocabulary_size(vocab):
    expected = 3 + len(vocab.players) + 2 + 22 + 105 + 68 + 61 + 2 + 201 + 131 + 16
    assert vocab.size == expected


def test_vocabulary_token_lookups(vocab):
    pid = vocab.players[5]
    assert vocab.player_id(vocab.player_token(pid)) == pid
    assert vocab.team_side(vocab.team_token("away")) == "away"
    assert vocab.action_type(vocab.action_type_token("dribble")) == "dribble"
    with pytest.raises(UnknownPlayerError):
        vocab.player_token("nobody")


def test_vocabulary_manifest_round_trip(vocab, tmp_path):
    path = tmp_path / "vocab.json"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded == vocab
    assert loaded.manifest_hash == vocab.manifest_hash


def test_vocabulary_manifest_rejects_bad_version(vocab):
    manifest = vocab.manifest()
    manifest["version"] = 99
    with pytest.raises(codec.CodecError):
        Vocabulary.from_manifest(manifest)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _simple_episode(n_actions: int, obv: float = 0.01):
    players = make_players(22)
    actions = [
        make_action(
            players[i % 11],
            x=float((i * 7) % 105) + 0.25,
            y=float((i * 5) % 68) + 0.25,
            delta_t=0.0 if i == 0 else float(i % 9),
            success=bool(i % 2),
            obv=obv,
        )
        for i in range(n_actions)
    ]
    return make_episode(actions, players)


@pytest.fixture(scope="module")
def hand_vocab():
    return Vocabulary(players=make_players(22))


def test_encode_layout_three_events(hand_vocab):
    ep = _simple_episode(3)
    enc = codec.encode_episode(ep, hand_vocab, block_size=832, max_events=100)
    used = 1 + 29 + 3 * 8 + 1
    assert used == 55
    assert enc.tokens[used - 1] == hand_vocab.EPISODE_END
    assert all(t == hand_vocab.PAD for t in enc.tokens[used:])
    assert enc.event_boundaries == (30, 38, 46)
    assert len(enc.tokens) == 832


def test_encode_truncation_keeps_most_recent(hand_vocab):
    ep = _simple_episode(120)
    enc = codec.encode_episode(ep, hand_vocab, block_size=1024, max_events=100)
    assert enc.n_events == 100
    first = enc.event_boundaries[0]
    # first kept event is original index 20
    assert enc.tokens[first] == hand_vocab.player_token(ep.actions[20].actor_id)
    x_offset, _ = hand_vocab.block(SlotKind.X)
    assert enc.tokens[first + 3] - x_offset == codec.discretize("x", ep.actions[20].x)


def test_encode_truncation_robv_targets_precomputed(hand_vocab):
    ep = _simple_episode(120, obv=1 / 1024)
    enc = codec.encode_episode(ep, hand_vocab, block_size=1024, max_events=100)
    targets = codec.compute_robv_targets(ep.actions)
    robv_offset, _ = hand_vocab.block(SlotKind.ROBV)
    first = enc.event_boundaries[0]
    assert enc.tokens[first + 7] - robv_offset == codec.discretize("robv", targets[20])


def test_encode_rejects_small_block(hand_vocab):
    ep = _simple_episode(2)
    with pytest.raises(codec.CodecError):
        codec.encode_episode(ep, hand_vocab, block_size=64, max_events=12)


def test_encode_unknown_player(vocab):
    ep = _simple_episode(2)
    with pytest.raises(UnknownPlayerError):
        codec.encode_episode(ep, vocab, block_size=BLOCK_SIZE, max_events=MAX_EVENTS)


def test_loss_mask_rules(encoded_small, vocab):
    for enc in encoded_small.encoded[:50]:
        mask = enc.loss_mask
        kinds = enc.slot_kind
        tokens = enc.tokens
        assert not mask[-1]
        for i in range(len(tokens) - 1):
            nxt = SlotKind(kinds[i + 1])
            if nxt == SlotKind.PLAYER:
                assert not mask[i], "player tokens are never predicted"
            elif nxt in codec.PREDICTED_SLOT_KINDS:
                assert mask[i]
            elif tokens[i + 1] == vocab.EPISODE_END:
                assert mask[i]
            else:
                assert not mask[i]


def test_event_slot_order(encoded_small):
    expected = [int(k) for k in codec.EVENT_SLOT_ORDER]
    for enc in encoded_small.encoded[:50]:
        for b in enc.event_boundaries:
            assert list(enc.slot_kind[b : b + 8]) == expected


def test_slot_kind_matches_token_block(encoded_small, vocab):
    for enc in encoded_small.encoded[:20]:
        for i, token in enumerate(enc.tokens):
            assert vocab.kind_of(int(token)) == SlotKind(enc.slot_kind[i])


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def test_decode_round_trip_values(small_corpus, vocab):
    episodes, _ = small_corpus
    for ep in episodes[:200]:
        enc = codec.encode_episode(ep, vocab, BLOCK_SIZE, MAX_EVENTS)
        dec = codec.decode_episode(enc, vocab)
        kept = ep.actions[-enc.n_events :]
        assert len(dec.actions) == len(kept)
        assert dec.context.on_pitch == ep.context.on_pitch
        assert dec.context.counters == ep.context.counters
        for orig, back in zip(kept, dec.actions):
            assert back.actor_id == orig.actor_id
            assert back.team_side == orig.team_side
            assert back.action_type == orig.action_type
            assert codec.discretize("x", back.x) == codec.discretize("x", orig.x)
            assert codec.discretize("y", back.y) == codec.discretize("y", orig.y)
            assert codec.discretize("delta_t", back.delta_t) == codec.discretize("delta_t", orig.delta_t)
            assert back.success == orig.success


def test_encode_decode_fixed_point(small_corpus, vocab):
    episodes, _ = small_corpus
    for ep in episodes[:300]:
        enc = codec.encode_episode(ep, vocab, BLOCK_SIZE, MAX_EVENTS)
        enc2 = codec.encode_episode(codec.decode_episode(enc, vocab), vocab, BLOCK_SIZE, MAX_EVENTS)
        assert np.array_equal(enc.tokens, enc2.tokens)
        assert np.array_equal(enc.loss_mask, enc2.loss_mask)
        assert np.array_equal(enc.slot_kind, enc2.slot_kind)


def test_decode_single_event_hand_built(vocab):
    players = [vocab.players[i] for i in range(22)]
    tokens = [vocab.BOS]
    tokens += [vocab.player_token(p) for p in players]
    tokens += [vocab.bin_token(SlotKind.MINUTE, 13)]
    tokens += [vocab.bin_token(SlotKind.COUNT, c) for c in (1, 0, 0, 0, 2, 0)]
    tokens += [
        vocab.player_token(players[3]),
        vocab.team_token("home"),
        vocab.action_type_token("shot"),
        vocab.bin_token(SlotKind.X, 99),
        vocab.bin_token(SlotKind.Y, 30),
        vocab.bin_token(SlotKind.DELTA, 4),
        vocab.success_token(True),
        vocab.bin_token(SlotKind.ROBV, codec.discretize("robv", 0.25)),
    ]
    tokens += [vocab.EPISODE_END]
    tokens += [vocab.PAD] * (BLOCK_SIZE - len(tokens))
    kinds = (
        [SlotKind.SPECIALS]
        + [SlotKind.PLAYER] * 22
        + [SlotKind.MINUTE]
        + [SlotKind.COUNT] * 6
        + list(codec.EVENT_SLOT_ORDER)
        + [SlotKind.SPECIALS] * (BLOCK_SIZE - 39)
    )
    enc = codec.EncodedEpisode(
        tokens=np.array(tokens, dtype=np.int32),
        loss_mask=np.zeros(BLOCK_SIZE, dtype=bool),
        slot_kind=np.array([int(k) for k in kinds], dtype=np.int8),
        event_boundaries=(30,),
    )
    ep = codec.decode_episode(enc, vocab)
    assert len(ep.actions) == 1
    action = ep.actions[0]
    assert action.actor_id == players[3]
    assert action.action_type == "shot"
    assert action.x == 99.5
    assert action.y == 30.5
    assert action.delta_t == 4.0
    assert action.success is True
    assert action.obv == pytest.approx(0.25, abs=codec.ROBV_BIN_WIDTH / 2)
    assert ep.context.minute == 13
    assert ep.context.home_goals == 1
    assert ep.context.home_yellows == 2


def test_decode_rejects_out_of_block_token(encoded_small, vocab):
    enc = encoded_small.encoded[0]
    bad_tokens = enc.tokens.copy()
    b = enc.event_boundaries[0]
    bad_tokens[b + 2] = vocab.bin_token(SlotKind.X, 50)  # x token in the type slot
    bad = codec.EncodedEpisode(
        tokens=bad_tokens, loss_mask=enc.loss_mask, slot_kind=enc.slot_kind,
        event_boundaries=enc.event_boundaries,
    )
    with pytest.raises(GrammarViolationError) as err:
        codec.decode_episode(bad, vocab)
    assert err.value.position == b + 2


def test_decode_all_pad_tail_no_extra_events(encoded_small, vocab):
    enc = encoded_small.encoded[1]
    dec = codec.decode_episode(enc, vocab)
    assert len(dec.actions) == enc.n_events


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


def _raw_match(n_actions: int, annotations=()):
    home = make_players(11, "H")
    away = make_players(11, "A")
    events = [
        RawEvent(
            second=float(10 * (i + 1)),
            actor_id=home[i % 11],
            team_side=codec.HOME,
            action_type="pass",
            x=50.0,
            y=30.0,
            success=True,
            obv=0.01,
        )
        for i in range(n_actions)
    ]
    return RawMatch(
        match_id="m1",
        home_players=home,
        away_players=away,
        events=tuple(events),
        annotations=tuple(annotations),
    )


def test_segment_substitution_splits_in_two():
    # substitute a player who is not about to act so the remainder stays valid
    match = _raw_match(10, [Annotation(second=65.0, kind="substitution", payload="H11:H12")])
    episodes = codec.segment_episodes(match)
    assert [len(ep.actions) for ep in episodes] == [6, 4]
    assert episodes[0].start_reason == "kickoff"
    assert episodes[1].start_reason == "personnel_change"
    assert "H12" in episodes[1].context.on_pitch
    assert "H11" not in episodes[1].context.on_pitch


def test_segment_no_annotations_single_episode():
    match = _raw_match(10)
    episodes = codec.segment_episodes(match)
    assert len(episodes) == 1
    assert len(episodes[0].actions) == 10
    assert episodes[0].actions[0].delta_t == 0.0
    assert all(a.delta_t == 10.0 for a in episodes[0].actions[1:])


def test_segment_goal_updates_counters():
    match = _raw_match(6, [Annotation(second=35.0, kind="goal", payload="home")])
    episodes = codec.segment_episodes(match)
    assert len(episodes) == 2
    assert episodes[0].context.home_goals == 0
    assert episodes[1].context.home_goals == 1
    assert episodes[1].start_reason == "goal_restart"


def test_segment_yellow_card_does_not_split():
    match = _raw_match(6, [Annotation(second=35.0, kind="yellow_card", payload="away")])
    episodes = codec.segment_episodes(match)
    assert len(episodes) == 1


def test_segment_actor_not_on_pitch_is_malformed():
    home = make_players(11, "H")
    away = make_players(11, "A")
    events = [
        RawEvent(second=10.0, actor_id=home[0], team_side="home", action_type="pass",
                 x=50.0, y=30.0, success=True, obv=0.0),
        RawEvent(second=20.0, actor_id="ghost", team_side="home", action_type="pass",
                 x=50.0, y=30.0, success=True, obv=0.0),
    ]
    match = RawMatch(match_id="m", home_players=home, away_players=away, events=tuple(events))
    with pytest.raises(MalformedInputError, match="action 1"):
        codec.segment_episodes(match)


def test_segment_episode_count_matches_generator_bookkeeping(league):
    for seed in (3, 17):
        rng = random.Random(seed)
        home = synth.select_lineup(league, "T1", rng)
        away = synth.select_lineup(league, "T2", rng)
        episodes, book = synth.generate_match(league, home, away, seed=seed)
        assert len(episodes) == book.restart_count + 1


# ---------------------------------------------------------------------------
# Corpus stats and IO
# ---------------------------------------------------------------------------


def test_corpus_stats_mean():
    eps = [_simple_episode(10), _simple_episode(30)]
    stats = codec.corpus_stats(eps)
    assert stats.mean_events_per_episode == 20.0
    assert stats.episode_count == 2


def test_corpus_stats_empty():
    stats = codec.corpus_stats([])
    assert stats == codec.CorpusStats(0, 0, 0.0, 0)


def test_corpus_stats_against_bookkeeping(small_corpus):
    episodes, book = small_corpus
    stats = codec.corpus_stats(episodes)
    assert stats.match_count == book.match_count
    assert stats.episode_count == book.episode_count
    assert stats.mean_events_per_episode == pytest.approx(book.event_count / book.episode_count)


def test_ndjson_round_trip(small_corpus, tmp_path):
    episodes, _ = small_corpus
    path = tmp_path / "corpus.ndjson"
    n = codec.write_corpus(episodes[:50], path)
    assert n == 50
    loaded = codec.read_corpus(path)
    assert loaded == episodes[:50]


def test_ndjson_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text('{"not": "an episode"}\n', encoding="utf-8")
    with pytest.raises(MalformedInputError):
        codec.read_corpus(path)


def test_episode_json_keys(small_corpus):
    episodes, _ = small_corpus
    payload = codec.episode_to_dict(episodes[0])
    assert set(payload) == {"match_id", "start_reason", "context", "actions"}
    assert set(payload["context"]) == {
        "on_pitch", "minute", "home_goals", "away_goals",
        "home_reds", "away_reds", "home_yellows", "away_yellows",
    }
    assert set(payload["actions"][0]) == {"player", "team", "type", "x", "y", "delta_t", "success", "obv"}
    json.dumps(payload)


# ---------------------------------------------------------------------------
# Domain type validation
# ---------------------------------------------------------------------------


def test_action_validation():
    with pytest.raises(MalformedInputError):
        make_action("Q01", x=105.0)
    with pytest.raises(MalformedInputError):
        make_action("Q01", y=-0.1)
    with pytest.raises(MalformedInputError):
        make_action("Q01", delta_t=-1.0)
    with pytest.raises(MalformedInputError):
        make_action("Q01", team_side="neutral")


def test_context_validation():
    with pytest.raises(MalformedInputError):
        make_context(make_players(21))
    dupes = list(make_players(21)) + ["Q01"]
    with pytest.raises(MalformedInputError):
        make_context(tuple(dupes))
    with pytest.raises(MalformedInputError):
        make_context(minute=131)
    with pytest.raises(MalformedInputError):
        make_context(home_reds=6)


def test_episode_requires_actor_on_pitch():
    with pytest.raises(MalformedInputError):
        make_episode([make_action("stranger")])


def test_episode_requires_actions():
    with pytest.raises(MalformedInputError):
        make_episode([])
