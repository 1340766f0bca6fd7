"""SPADL-style event domain model and token codec.

Converts match event streams into episodes (contiguous play with fixed
personnel) and encodes episodes as fixed-length integer token sequences
over a unified vocabulary with non-overlapping per-attribute index blocks.

Corpus files are newline-delimited JSON, one episode per line (UTF-8):

    {"match_id": "...", "start_reason": "kickoff",
     "context": {"on_pitch": [... 22 ids, home 1-11 then away 1-11 ...],
                 "minute": 0, "home_goals": 0, "away_goals": 0,
                 "home_reds": 0, "away_reds": 0,
                 "home_yellows": 0, "away_yellows": 0},
     "actions": [{"player": "...", "team": "home", "type": "pass",
                  "x": 52.5, "y": 34.0, "delta_t": 0.0,
                  "success": true, "obv": 0.0117}, ...]}
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

HOME = "home"
AWAY = "away"
TEAM_SIDES = (HOME, AWAY)

PITCH_LENGTH = 105.0
PITCH_WIDTH = 68.0

# Canonical SPADL action-type table (22 types).
SPADL_ACTION_TYPES = (
    "pass",
    "cross",
    "throw_in",
    "freekick_crossed",
    "freekick_short",
    "corner_crossed",
    "corner_short",
    "take_on",
    "foul",
    "tackle",
    "interception",
    "shot",
    "shot_penalty",
    "shot_freekick",
    "keeper_save",
    "keeper_claim",
    "keeper_punch",
    "keeper_pick_up",
    "clearance",
    "bad_touch",
    "non_action",
    "dribble",
)

START_REASONS = ("kickoff", "set_piece", "goal_restart", "period_start", "personnel_change")

# Per-attribute bin counts.
X_BINS = 105
Y_BINS = 68
DELTA_BINS = 61
SUCCESS_BINS = 2
ROBV_BINS = 201
MINUTE_BINS = 131
COUNT_BINS = 16

ROBV_BIN_WIDTH = 0.01

CONTEXT_TOKENS = 29  # 22 players + minute + 6 counters
EVENT_TOKENS = 8  # player, team, type, x, y, delta, success, robv


class CodecError(ValueError):
    """Base class for codec failures."""


class MalformedInputError(CodecError):
    """Raw match data violates an input precondition."""


class UnknownPlayerError(CodecError):
    """Player identifier missing from the vocabulary's player block."""


class GrammarViolationError(CodecError):
    """Token sequence violates the episode slot grammar."""

    def __init__(self, position: int, message: str):
        super().__init__(f"position {position}: {message}")
        self.position = position


class SlotKind(enum.IntEnum):
    """Vocabulary block a token position belongs to."""

    SPECIALS = 0
    PLAYER = 1
    TEAM = 2
    ACTION_TYPE = 3
    X = 4
    Y = 5
    DELTA = 6
    SUCCESS = 7
    ROBV = 8
    MINUTE = 9
    COUNT = 10


BLOCK_NAMES: Mapping[SlotKind, str] = {
    SlotKind.SPECIALS: "specials",
    SlotKind.PLAYER: "player_ids",
    SlotKind.TEAM: "team_side",
    SlotKind.ACTION_TYPE: "action_types",
    SlotKind.X: "x_bins",
    SlotKind.Y: "y_bins",
    SlotKind.DELTA: "delta_bins",
    SlotKind.SUCCESS: "success",
    SlotKind.ROBV: "robv_bins",
    SlotKind.MINUTE: "minute_bins",
    SlotKind.COUNT: "count_bins",
}

# Fixed 8-slot layout of one encoded event; the acting player comes first so
# every predicted attribute conditions on the actor's identity.
EVENT_SLOT_ORDER = (
    SlotKind.PLAYER,
    SlotKind.TEAM,
    SlotKind.ACTION_TYPE,
    SlotKind.X,
    SlotKind.Y,
    SlotKind.DELTA,
    SlotKind.SUCCESS,
    SlotKind.ROBV,
)

PREDICTED_SLOT_KINDS = frozenset(EVENT_SLOT_ORDER[1:])


@dataclass(frozen=True)
class Action:
    """One on-ball event in canonical pitch coordinates.

    ``obv`` is the provider-supplied (or synthetic) per-action on-ball value,
    signed from the acting player's perspective.
    """

    actor_id: str
    team_side: str
    action_type: str
    x: float
    y: float
    delta_t: float
    success: bool
    obv: float

    def __post_init__(self):
        if self.team_side not in TEAM_SIDES:
            raise MalformedInputError(f"team_side must be one of {TEAM_SIDES}, got {self.team_side!r}")
        if not (0.0 <= self.x < PITCH_LENGTH):
            raise MalformedInputError(f"x out of range [0, {PITCH_LENGTH}): {self.x}")
        if not (0.0 <= self.y < PITCH_WIDTH):
            raise MalformedInputError(f"y out of range [0, {PITCH_WIDTH}): {self.y}")
        if not (self.delta_t >= 0.0):
            raise MalformedInputError(f"delta_t must be >= 0, got {self.delta_t}")
        if not math.isfinite(self.obv):
            raise MalformedInputError(f"obv must be finite, got {self.obv}")


@dataclass(frozen=True)
class ContextBlock:
    """Match-state snapshot at episode start: personnel plus counters."""

    on_pitch: tuple[str, ...]
    minute: int
    home_goals: int
    away_goals: int
    home_reds: int
    away_reds: int
    home_yellows: int
    away_yellows: int

    def __post_init__(self):
        if len(self.on_pitch) != 22:
            raise MalformedInputError(f"on_pitch must list exactly 22 players, got {len(self.on_pitch)}")
        if len(set(self.on_pitch)) != 22:
            raise MalformedInputError("on_pitch contains duplicate player ids")
        checks = (
            ("minute", self.minute, 130),
            ("home_goals", self.home_goals, 15),
            ("away_goals", self.away_goals, 15),
            ("home_reds", self.home_reds, 5),
            ("away_reds", self.away_reds, 5),
            ("home_yellows", self.home_yellows, 11),
            ("away_yellows", self.away_yellows, 11),
        )
        for name, value, cap in checks:
            if not (0 <= value <= cap):
                raise MalformedInputError(f"{name} out of range [0, {cap}]: {value}")

    @property
    def home_players(self) -> tuple[str, ...]:
        return self.on_pitch[:11]

    @property
    def away_players(self) -> tuple[str, ...]:
        return self.on_pitch[11:]

    @property
    def counters(self) -> tuple[int, ...]:
        return (
            self.home_goals,
            self.away_goals,
            self.home_reds,
            self.away_reds,
            self.home_yellows,
            self.away_yellows,
        )


@dataclass(frozen=True)
class Episode:
    """Contiguous action sequence under fixed 22-player personnel."""

    context: ContextBlock
    actions: tuple[Action, ...]
    source_match_id: str = ""
    start_reason: str = "kickoff"

    def __post_init__(self):
        if len(self.actions) == 0:
            raise MalformedInputError("episode must contain at least one action")
        if self.start_reason not in START_REASONS:
            raise MalformedInputError(f"unknown start_reason {self.start_reason!r}")
        on_pitch = set(self.context.on_pitch)
        for i, action in enumerate(self.actions):
            if action.actor_id not in on_pitch:
                raise MalformedInputError(
                    f"action {i} references player {action.actor_id!r} not on pitch"
                )


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------

_ATTRIBUTE_KINDS = ("x", "y", "delta_t", "robv", "minute", "counter")


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def discretize(attribute_kind: str, value: float) -> int:
    """Map a continuous attribute value to its integer bin.

    x/y use 1 m floor bins, delta_t rounds to whole seconds capped at 60,
    robv uses 0.01 bins over [-1, 1], minute and counters clip to their caps.
    """
    if not math.isfinite(value):
        raise CodecError(f"cannot discretize non-finite value {value} for {attribute_kind!r}")
    if attribute_kind == "x":
        return min(max(int(math.floor(value)), 0), X_BINS - 1)
    if attribute_kind == "y":
        return min(max(int(math.floor(value)), 0), Y_BINS - 1)
    if attribute_kind == "delta_t":
        return min(max(_round_half_up(value), 0), DELTA_BINS - 1)
    if attribute_kind == "robv":
        clipped = min(max(value, -1.0), 1.0)
        return min(max(_round_half_up((clipped + 1.0) / ROBV_BIN_WIDTH), 0), ROBV_BINS - 1)
    if attribute_kind == "minute":
        return min(max(_round_half_up(value), 0), MINUTE_BINS - 1)
    if attribute_kind == "counter":
        return min(max(_round_half_up(value), 0), COUNT_BINS - 1)
    raise CodecError(f"unknown attribute kind {attribute_kind!r}; expected one of {_ATTRIBUTE_KINDS}")


def undiscretize(attribute_kind: str, bin_index: int) -> float:
    """Return the bin center for a discretized attribute."""
    if attribute_kind == "x":
        _check_bin(attribute_kind, bin_index, X_BINS)
        return bin_index + 0.5
    if attribute_kind == "y":
        _check_bin(attribute_kind, bin_index, Y_BINS)
        return bin_index + 0.5
    if attribute_kind == "delta_t":
        _check_bin(attribute_kind, bin_index, DELTA_BINS)
        return float(bin_index)
    if attribute_kind == "robv":
        _check_bin(attribute_kind, bin_index, ROBV_BINS)
        return bin_index * ROBV_BIN_WIDTH - 1.0
    if attribute_kind == "minute":
        _check_bin(attribute_kind, bin_index, MINUTE_BINS)
        return float(bin_index)
    if attribute_kind == "counter":
        _check_bin(attribute_kind, bin_index, COUNT_BINS)
        return float(bin_index)
    raise CodecError(f"unknown attribute kind {attribute_kind!r}; expected one of {_ATTRIBUTE_KINDS}")


def _check_bin(kind: str, bin_index: int, size: int) -> None:
    if not (0 <= bin_index < size):
        raise CodecError(f"{kind} bin {bin_index} out of range [0, {size})")


ROBV_BIN_CENTERS = np.array([b * ROBV_BIN_WIDTH - 1.0 for b in range(ROBV_BINS)])

_SLOT_ATTRIBUTE = {
    SlotKind.X: "x",
    SlotKind.Y: "y",
    SlotKind.DELTA: "delta_t",
    SlotKind.ROBV: "robv",
    SlotKind.MINUTE: "minute",
    SlotKind.COUNT: "counter",
}


def slot_attribute_kind(slot: SlotKind) -> str:
    """Attribute-kind name used by discretize/undiscretize for a slot."""
    return _SLOT_ATTRIBUTE[slot]


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    """Unified token index space with contiguous, disjoint attribute blocks.

    Block layout (in order): specials (PAD, BOS, EPISODE_END), player ids,
    team side, action types, x bins, y bins, delta bins, success, robv bins,
    minute bins, count bins.
    """

    players: tuple[str, ...]
    action_types: tuple[str, ...] = SPADL_ACTION_TYPES
    _offsets: dict = field(init=False, repr=False, compare=False)

    PAD = 0
    BOS = 1
    EPISODE_END = 2

    def __post_init__(self):
        if len(set(self.players)) != len(self.players):
            raise CodecError("duplicate player ids in vocabulary")
        if len(set(self.action_types)) != len(self.action_types):
            raise CodecError("duplicate action types in vocabulary")
        sizes = {
            SlotKind.SPECIALS: 3,
            SlotKind.PLAYER: len(self.players),
            SlotKind.TEAM: 2,
            SlotKind.ACTION_TYPE: len(self.action_types),
            SlotKind.X: X_BINS,
            SlotKind.Y: Y_BINS,
            SlotKind.DELTA: DELTA_BINS,
            SlotKind.SUCCESS: SUCCESS_BINS,
            SlotKind.ROBV: ROBV_BINS,
            SlotKind.MINUTE: MINUTE_BINS,
            SlotKind.COUNT: COUNT_BINS,
        }
        offsets = {}
        cursor = 0
        for kind in SlotKind:
            offsets[kind] = (cursor, sizes[kind])
            cursor += sizes[kind]
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_player_index", {p: i for i, p in enumerate(self.players)})
        object.__setattr__(self, "_type_index", {t: i for i, t in enumerate(self.action_types)})

    @property
    def size(self) -> int:
        offset, width = self._offsets[SlotKind.COUNT]
        return offset + width

    def block(self, kind: SlotKind) -> tuple[int, int]:
        """(offset, size) of a block."""
        return self._offsets[kind]

    def block_slice(self, kind: SlotKind) -> slice:
        offset, width = self._offsets[kind]
        return slice(offset, offset + width)

    def kind_of(self, token: int) -> SlotKind:
        """Block owning a token id (every id belongs to exactly one block)."""
        if not (0 <= token < self.size):
            raise CodecError(f"token {token} outside vocabulary of size {self.size}")
        for kind in SlotKind:
            offset, width = self._offsets[kind]
            if offset <= token < offset + width:
                return kind
        raise AssertionError("unreachable: blocks cover the vocabulary")

    def in_block_index(self, token: int) -> int:
        kind = self.kind_of(token)
        return token - self._offsets[kind][0]

    # -- encoding lookups ---------------------------------------------------

    def player_token(self, player_id: str) -> int:
        try:
            return self._offsets[SlotKind.PLAYER][0] + self._player_index[player_id]
        except KeyError:
            raise UnknownPlayerError(f"player {player_id!r} not in vocabulary") from None

    def team_token(self, side: str) -> int:
        if side not in TEAM_SIDES:
            raise CodecError(f"unknown team side {side!r}")
        return self._offsets[SlotKind.TEAM][0] + TEAM_SIDES.index(side)

    def action_type_token(self, action_type: str) -> int:
        try:
            return self._offsets[SlotKind.ACTION_TYPE][0] + self._type_index[action_type]
        except KeyError:
            raise CodecError(f"action type {action_type!r} not in vocabulary") from None

    def bin_token(self, kind: SlotKind, bin_index: int) -> int:
        offset, width = self._offsets[kind]
        if not (0 <= bin_index < width):
            raise CodecError(f"bin {bin_index} out of range for block {BLOCK_NAMES[kind]}")
        return offset + bin_index

    def success_token(self, success: bool) -> int:
        return self._offsets[SlotKind.SUCCESS][0] + int(bool(success))

    # -- decoding lookups ---------------------------------------------------

    def player_id(self, token: int) -> str:
        offset, width = self._offsets[SlotKind.PLAYER]
        if not (offset <= token < offset + width):
            raise CodecError(f"token {token} is not a player token")
        return self.players[token - offset]

    def team_side(self, token: int) -> str:
        offset, width = self._offsets[SlotKind.TEAM]
        if not (offset <= token < offset + width):
            raise CodecError(f"token {token} is not a team token")
        return TEAM_SIDES[token - offset]

    def action_type(self, token: int) -> str:
        offset, width = self._offsets[SlotKind.ACTION_TYPE]
        if not (offset <= token < offset + width):
            raise CodecError(f"token {token} is not an action-type token")
        return self.action_types[token - offset]

    # -- manifest -----------------------------------------------------------

    def manifest(self) -> dict:
        """Self-describing block table, written alongside every checkpoint."""
        blocks = []
        for kind in SlotKind:
            offset, width = self._offsets[kind]
            blocks.append({"name": BLOCK_NAMES[kind], "offset": offset, "size": width})
        return {
            "version": MANIFEST_VERSION,
            "blocks": blocks,
            "action_types": list(self.action_types),
            "players": list(self.players),
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), sort_keys=True, separators=(",", ":"))

    @property
    def manifest_hash(self) -> str:
        return hashlib.sha256(self.manifest_json().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_manifest(cls, manifest: Mapping) -> "Vocabulary":
        if manifest.get("version") != MANIFEST_VERSION:
            raise CodecError(f"unsupported vocabulary manifest version {manifest.get('version')!r}")
        vocab = cls(
            players=tuple(manifest["players"]),
            action_types=tuple(manifest["action_types"]),
        )
        expected = vocab.manifest()["blocks"]
        if list(manifest["blocks"]) != expected:
            raise CodecError("vocabulary manifest block table does not match this build's layout")
        return vocab

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_manifest(json.loads(Path(path).read_text(encoding="utf-8")))


def vocabulary_from_episodes(episodes: Iterable[Episode],
                             action_types: Sequence[str] = SPADL_ACTION_TYPES) -> Vocabulary:
    """Build a vocabulary from the player universe of a corpus (sorted ids)."""
    players: set[str] = set()
    for ep in episodes:
        players.update(ep.context.on_pitch)
    return Vocabulary(players=tuple(sorted(players)), action_types=tuple(action_types))


# ---------------------------------------------------------------------------
# Residual on-ball value targets
# ---------------------------------------------------------------------------


def compute_robv_targets(actions: Sequence[Action]) -> list[float]:
    """Suffix sums of per-action OBV: target[t] = sum of obv from t to the end."""
    targets = [0.0] * len(actions)
    acc = 0.0
    for t in range(len(actions) - 1, -1, -1):
        acc = actions[t].obv + acc
        targets[t] = acc
    return targets


# ---------------------------------------------------------------------------
# Episode encoding
# ---------------------------------------------------------------------------

DEFAULT_MAX_EVENTS = 100


@dataclass(frozen=True)
class EncodedEpisode:
    """Fixed-length token view of an episode.

    Layout: [BOS][29 context tokens][8 tokens per event]...[EPISODE_END][PAD...].
    ``loss_mask[i]`` is True iff predicting the token at ``i + 1`` contributes
    to the training loss (the 7 event attributes and EPISODE_END; never player
    tokens, context tokens, BOS, or PAD). ``slot_kind[i]`` names the
    vocabulary block of ``tokens[i]``. ``event_boundaries`` are the offsets of
    each encoded event's player token.
    """

    tokens: np.ndarray
    loss_mask: np.ndarray
    slot_kind: np.ndarray
    event_boundaries: tuple[int, ...]

    @property
    def n_events(self) -> int:
        return len(self.event_boundaries)


def context_tokens(context: ContextBlock, vocab: Vocabulary) -> list[int]:
    """29 tokens: 22 players (home then away), minute, 6 counters."""
    toks = [vocab.player_token(p) for p in context.on_pitch]
    toks.append(vocab.bin_token(SlotKind.MINUTE, discretize("minute", context.minute)))
    for value in context.counters:
        toks.append(vocab.bin_token(SlotKind.COUNT, discretize("counter", value)))
    return toks


def encode_episode(
    episode: Episode,
    vocab: Vocabulary,
    block_size: int,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> EncodedEpisode:
    """Tokenize an episode, keeping the most recent ``max_events`` events.

    Residual-value targets are suffix sums computed over the full episode
    before truncation, so kept events carry the full remaining-tail value.
    """
    if max_events < 1:
        raise CodecError("max_events must be >= 1")
    min_size = 1 + CONTEXT_TOKENS + EVENT_TOKENS * max_events + 2
    if block_size < min_size:
        raise CodecError(
            f"block_size {block_size} too small for max_events {max_events}; need >= {min_size}"
        )

    robv_targets = compute_robv_targets(episode.actions)
    keep = min(len(episode.actions), max_events)
    start = len(episode.actions) - keep

    tokens = [vocab.BOS]
    kinds = [SlotKind.SPECIALS] * 1
    tokens.extend(context_tokens(episode.context, vocab))
    kinds.extend([SlotKind.PLAYER] * 22 + [SlotKind.MINUTE] + [SlotKind.COUNT] * 6)

    boundaries = []
    for idx in range(start, len(episode.actions)):
        action = episode.actions[idx]
        boundaries.append(len(tokens))
        tokens.extend(
            (
                vocab.player_token(action.actor_id),
                vocab.team_token(action.team_side),
                vocab.action_type_token(action.action_type),
                vocab.bin_token(SlotKind.X, discretize("x", action.x)),
                vocab.bin_token(SlotKind.Y, discretize("y", action.y)),
                vocab.bin_token(SlotKind.DELTA, discretize("delta_t", action.delta_t)),
                vocab.success_token(action.success),
                vocab.bin_token(SlotKind.ROBV, discretize("robv", robv_targets[idx])),
            )
        )
        kinds.extend(EVENT_SLOT_ORDER)

    tokens.append(vocab.EPISODE_END)
    kinds.append(SlotKind.SPECIALS)

    used = len(tokens)
    tokens.extend([vocab.PAD] * (block_size - used))
    kinds.extend([SlotKind.SPECIALS] * (block_size - used))

    token_arr = np.asarray(tokens, dtype=np.int32)
    kind_arr = np.asarray([int(k) for k in kinds], dtype=np.int8)

    mask = np.zeros(block_size, dtype=bool)
    for i in range(block_size - 1):
        nxt_kind = SlotKind(kind_arr[i + 1])
        if nxt_kind in PREDICTED_SLOT_KINDS:
            mask[i] = True
        elif token_arr[i + 1] == vocab.EPISODE_END:
            mask[i] = True

    return EncodedEpisode(
        tokens=token_arr,
        loss_mask=mask,
        slot_kind=kind_arr,
        event_boundaries=tuple(boundaries),
    )


def decode_episode(encoded: EncodedEpisode, vocab: Vocabulary) -> Episode:
    """Invert :func:`encode_episode` up to discretization.

    Attribute values come back as bin centers; per-action OBV is recovered by
    telescoping the residual-value tokens. The source match id and start
    reason are not part of the token stream, so defaults are used.
    """
    tokens = encoded.tokens
    kinds = encoded.slot_kind
    n = len(tokens)
    if n < 1 + CONTEXT_TOKENS + EVENT_TOKENS + 1:
        raise GrammarViolationError(0, "sequence too short for context plus one event")

    def expect(pos: int, kind: SlotKind):
        token = int(tokens[pos])
        if SlotKind(kinds[pos]) != kind:
            raise GrammarViolationError(pos, f"expected slot {BLOCK_NAMES[kind]}, found {BLOCK_NAMES[SlotKind(kinds[pos])]}")
        actual = vocab.kind_of(token)
        if actual != kind:
            raise GrammarViolationError(
                pos, f"token {token} belongs to block {BLOCK_NAMES[actual]}, slot expects {BLOCK_NAMES[kind]}"
            )
        return token

    if int(tokens[0]) != vocab.BOS:
        raise GrammarViolationError(0, "sequence must start with BOS")

    on_pitch = tuple(vocab.player_id(expect(1 + i, SlotKind.PLAYER)) for i in range(22))
    minute_bin = vocab.in_block_index(expect(23, SlotKind.MINUTE))
    counters = [vocab.in_block_index(expect(24 + i, SlotKind.COUNT)) for i in range(6)]
    context = ContextBlock(
        on_pitch=on_pitch,
        minute=minute_bin,
        home_goals=counters[0],
        away_goals=counters[1],
        home_reds=counters[2],
        away_reds=counters[3],
        home_yellows=counters[4],
        away_yellows=counters[5],
    )

    pos = 1 + CONTEXT_TOKENS
    raw_events = []
    while pos < n and int(tokens[pos]) != vocab.EPISODE_END:
        if pos + EVENT_TOKENS > n:
            raise GrammarViolationError(pos, "truncated event group")
        actor = vocab.player_id(expect(pos, SlotKind.PLAYER))
        side = vocab.team_side(expect(pos + 1, SlotKind.TEAM))
        action_type = vocab.action_type(expect(pos + 2, SlotKind.ACTION_TYPE))
        x_bin = vocab.in_block_index(expect(pos + 3, SlotKind.X))
        y_bin = vocab.in_block_index(expect(pos + 4, SlotKind.Y))
        delta_bin = vocab.in_block_index(expect(pos + 5, SlotKind.DELTA))
        success = bool(vocab.in_block_index(expect(pos + 6, SlotKind.SUCCESS)))
        robv_bin = vocab.in_block_index(expect(pos + 7, SlotKind.ROBV))
        raw_events.append((actor, side, action_type, x_bin, y_bin, delta_bin, success, robv_bin))
        pos += EVENT_TOKENS

    if pos >= n:
        raise GrammarViolationError(n - 1, "missing EPISODE_END token")
    expect(pos, SlotKind.SPECIALS)
    for tail in range(pos + 1, n):
        if int(tokens[tail]) != vocab.PAD:
            raise GrammarViolationError(tail, "non-PAD token after EPISODE_END")

    if not raw_events:
        raise GrammarViolationError(pos, "episode encodes zero events")

    robv_values = [undiscretize("robv", ev[7]) for ev in raw_events]
    actions = []
    for t, (actor, side, action_type, x_bin, y_bin, delta_bin, success, _) in enumerate(raw_events):
        nxt = robv_values[t + 1] if t + 1 < len(robv_values) else 0.0
        actions.append(
            Action(
                actor_id=actor,
                team_side=side,
                action_type=action_type,
                x=undiscretize("x", x_bin),
                y=undiscretize("y", y_bin),
                delta_t=undiscretize("delta_t", delta_bin),
                success=success,
                obv=robv_values[t] - nxt,
            )
        )
    return Episode(context=context, actions=tuple(actions))


# ---------------------------------------------------------------------------
# Match segmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawEvent:
    """Provider-level event with an absolute match clock, pre-segmentation."""

    second: float
    actor_id: str
    team_side: str
    action_type: str
    x: float
    y: float
    success: bool
    obv: float


@dataclass(frozen=True)
class Annotation:
    """Match annotation at an absolute clock time.

    Kinds: ``restart`` (payload: reason), ``substitution`` (payload:
    "out:in"), ``goal`` / ``yellow_card`` / ``red_card`` (payload: team side).
    Restarts, substitutions, goals, and red cards open a new episode; yellow
    cards only update the card counters. Dismissed players stay listed in the
    22-slot context so the fixed-width context block is preserved.
    """

    second: float
    kind: str
    payload: str

    KINDS = ("restart", "substitution", "goal", "yellow_card", "red_card")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise MalformedInputError(f"unknown annotation kind {self.kind!r}")


@dataclass(frozen=True)
class RawMatch:
    """Time-ordered event stream plus the annotations needed to segment it."""

    match_id: str
    home_players: tuple[str, ...]
    away_players: tuple[str, ...]
    events: tuple[RawEvent, ...]
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        if len(self.home_players) != 11 or len(self.away_players) != 11:
            raise MalformedInputError("each side must list exactly 11 players")
        if len(set(self.home_players) | set(self.away_players)) != 22:
            raise MalformedInputError("home and away lineups must be 22 distinct players")


class _MatchState:
    def __init__(self, match: RawMatch):
        self.home = list(match.home_players)
        self.away = list(match.away_players)
        self.goals = {HOME: 0, AWAY: 0}
        self.reds = {HOME: 0, AWAY: 0}
        self.yellows = {HOME: 0, AWAY: 0}

    def context_at(self, minute: float) -> ContextBlock:
        return ContextBlock(
            on_pitch=tuple(self.home) + tuple(self.away),
            minute=discretize("minute", minute),
            home_goals=discretize("counter", self.goals[HOME]),
            away_goals=discretize("counter", self.goals[AWAY]),
            home_reds=min(self.reds[HOME], 5),
            away_reds=min(self.reds[AWAY], 5),
            home_yellows=min(self.yellows[HOME], 11),
            away_yellows=min(self.yellows[AWAY], 11),
        )

    def apply(self, ann: Annotation) -> str | None:
        """Apply an annotation; return the start reason if it opens an episode."""
        if ann.kind == "restart":
            if ann.payload not in ("set_piece", "goal_restart", "period_start"):
                raise MalformedInputError(f"unknown restart reason {ann.payload!r}")
            return ann.payload
        if ann.kind == "substitution":
            out_id, _, in_id = ann.payload.partition(":")
            if not out_id or not in_id:
                raise MalformedInputError(f"substitution payload must be 'out:in', got {ann.payload!r}")
            for side in (self.home, self.away):
                if out_id in side:
                    side[side.index(out_id)] = in_id
                    return "personnel_change"
            raise MalformedInputError(f"substitution of {out_id!r} who is not on pitch")
        if ann.kind == "goal":
            self.goals[_check_side(ann.payload)] += 1
            return "goal_restart"
        if ann.kind == "red_card":
            self.reds[_check_side(ann.payload)] += 1
            return "personnel_change"
        self.yellows[_check_side(ann.payload)] += 1
        return None


def _check_side(side: str) -> str:
    if side not in TEAM_SIDES:
        raise MalformedInputError(f"annotation payload must be a team side, got {side!r}")
    return side


def segment_episodes(match: RawMatch) -> list[Episode]:
    """Split a match into episodes at restarts and personnel changes.

    Episodes partition the input events; within each episode delta_t is
    recomputed from the clock (0 for the episode's first action). Actions by
    players not on pitch at their timestamp raise
    :class:`MalformedInputError` naming the action index.
    """
    for i in range(1, len(match.events)):
        if match.events[i].second < match.events[i - 1].second:
            raise MalformedInputError(f"events out of time order at index {i}")

    state = _MatchState(match)
    annotations = sorted(match.annotations, key=lambda a: a.second)
    episodes: list[Episode] = []

    pending: list[tuple[int, RawEvent]] = []
    segment_reason = "kickoff"
    ann_idx = 0

    def flush():
        nonlocal pending
        if not pending:
            return
        first_second = pending[0][1].second
        context = state.context_at(first_second / 60.0)
        on_pitch = set(context.on_pitch)
        actions = []
        prev_second = None
        for event_index, ev in pending:
            if ev.actor_id not in on_pitch:
                raise MalformedInputError(
                    f"action {event_index} references player {ev.actor_id!r} not on pitch"
                )
            expected_side = HOME if ev.actor_id in context.home_players else AWAY
            if ev.team_side != expected_side:
                raise MalformedInputError(
                    f"action {event_index} by {ev.actor_id!r} carries side {ev.team_side!r}, expected {expected_side!r}"
                )
            delta = 0.0 if prev_second is None else ev.second - prev_second
            prev_second = ev.second
            actions.append(
                Action(
                    actor_id=ev.actor_id,
                    team_side=ev.team_side,
                    action_type=ev.action_type,
                    x=ev.x,
                    y=ev.y,
                    delta_t=delta,
                    success=ev.success,
                    obv=ev.obv,
                )
            )
        episodes.append(
            Episode(
                context=context,
                actions=tuple(actions),
                source_match_id=match.match_id,
                start_reason=segment_reason,
            )
        )
        pending = []

    def apply_annotation(ann: Annotation):
        nonlocal segment_reason
        opens_episode = ann.kind != "yellow_card"
        if opens_episode:
            # flush with the pre-annotation state: an episode's context is a
            # snapshot at its start, not after the boundary event
            flush()
        reason = state.apply(ann)
        if reason is not None:
            segment_reason = reason

    for event_index, ev in enumerate(match.events):
        while ann_idx < len(annotations) and annotations[ann_idx].second <= ev.second:
            apply_annotation(annotations[ann_idx])
            ann_idx += 1
        pending.append((event_index, ev))
    # Trailing annotations cannot open a new episode (no actions follow) but
    # still flush pending actions and update counters.
    while ann_idx < len(annotations):
        apply_annotation(annotations[ann_idx])
        ann_idx += 1
    flush()
    return episodes


# ---------------------------------------------------------------------------
# Corpus aggregation and IO
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    match_count: int
    episode_count: int
    mean_events_per_episode: float
    player_count: int


def corpus_stats(episodes: Sequence[Episode]) -> CorpusStats:
    if not episodes:
        return CorpusStats(0, 0, 0.0, 0)
    matches = {ep.source_match_id for ep in episodes}
    players: set[str] = set()
    total_events = 0
    for ep in episodes:
        players.update(ep.context.on_pitch)
        total_events += len(ep.actions)
    return CorpusStats(
        match_count=len(matches),
        episode_count=len(episodes),
        mean_events_per_episode=total_events / len(episodes),
        player_count=len(players),
    )


def episode_to_dict(episode: Episode) -> dict:
    ctx = episode.context
    return {
        "match_id": episode.source_match_id,
        "start_reason": episode.start_reason,
        "context": {
            "on_pitch": list(ctx.on_pitch),
            "minute": ctx.minute,
            "home_goals": ctx.home_goals,
            "away_goals": ctx.away_goals,
            "home_reds": ctx.home_reds,
            "away_reds": ctx.away_reds,
            "home_yellows": ctx.home_yellows,
            "away_yellows": ctx.away_yellows,
        },
        "actions": [
            {
                "player": a.actor_id,
                "team": a.team_side,
                "type": a.action_type,
                "x": a.x,
                "y": a.y,
                "delta_t": a.delta_t,
                "success": a.success,
                "obv": a.obv,
            }
            for a in episode.actions
        ],
    }


def episode_from_dict(payload: Mapping) -> Episode:
    ctx = payload["context"]
    return Episode(
        context=ContextBlock(
            on_pitch=tuple(ctx["on_pitch"]),
            minute=int(ctx["minute"]),
            home_goals=int(ctx["home_goals"]),
            away_goals=int(ctx["away_goals"]),
            home_reds=int(ctx["home_reds"]),
            away_reds=int(ctx["away_reds"]),
            home_yellows=int(ctx["home_yellows"]),
            away_yellows=int(ctx["away_yellows"]),
        ),
        actions=tuple(
            Action(
                actor_id=a["player"],
                team_side=a["team"],
                action_type=a["type"],
                x=float(a["x"]),
                y=float(a["y"]),
                delta_t=float(a["delta_t"]),
                success=bool(a["success"]),
                obv=float(a["obv"]),
            )
            for a in payload["actions"]
        ),
        source_match_id=str(payload.get("match_id", "")),
        start_reason=payload.get("start_reason", "kickoff"),
    )


def write_corpus(episodes: Iterable[Episode], path: str | Path) -> int:
    """Write newline-delimited JSON, one episode per line. Returns the count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_dict(ep), separators=(",", ":")))
            fh.write("\n")
            count += 1
    return count


def read_corpus(path: str | Path) -> list[Episode]:
    episodes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                episodes.append(episode_from_dict(json.loads(line)))
            except (KeyError, json.JSONDecodeError) as exc:
                raise MalformedInputError(f"{path}:{line_no}: bad episode record: {exc}") from exc
    return episodes
