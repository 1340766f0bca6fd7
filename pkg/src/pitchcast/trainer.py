"""Teacher-forced training loop and the per-attribute evaluation harness.

Metrics follow the reporting convention of the artifact: accuracy for the
categorical attributes (team, action type, success) and mean absolute error
on the original scale (bin centers via undiscretize) for x, y, elapsed time,
and residual value. Predictions are argmaxed within the slot's vocabulary
block only, so per-attribute metrics are always well defined.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import codec
from .codec import EncodedEpisode, Episode, SlotKind, Vocabulary
from .model import ModelConfig, ModelParams, backward, forward, softmax

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.95
ADAM_EPS = 1e-8

METRIC_SLOTS = (
    SlotKind.TEAM,
    SlotKind.ACTION_TYPE,
    SlotKind.SUCCESS,
    SlotKind.X,
    SlotKind.Y,
    SlotKind.DELTA,
    SlotKind.ROBV,
)
_ACCURACY_SLOTS = (SlotKind.TEAM, SlotKind.ACTION_TYPE, SlotKind.SUCCESS)
_MAE_SLOTS = (SlotKind.X, SlotKind.Y, SlotKind.DELTA, SlotKind.ROBV)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    steps: int = 1000
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    eval_interval: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "weight_decay", "grad_clip_norm", "eval_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, payload) -> "TrainConfig":
        return cls(**{k: payload[k] for k in payload if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class MetricReport:
    acc_team: float
    acc_type: float
    acc_success: float
    mae_x: float
    mae_y: float
    mae_delta: float
    mae_robv: float
    n_events_evaluated: int

    def to_dict(self) -> dict:
        return {
            "acc_team": self.acc_team,
            "acc_type": self.acc_type,
            "acc_success": self.acc_success,
            "mae_x": self.mae_x,
            "mae_y": self.mae_y,
            "mae_delta": self.mae_delta,
            "mae_robv": self.mae_robv,
            "n_events_evaluated": self.n_events_evaluated,
        }

    @classmethod
    def from_dict(cls, payload) -> "MetricReport":
        return cls(**{k: payload[k] for k in cls.__dataclass_fields__})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Corpus encoding
# ---------------------------------------------------------------------------


@dataclass
class EncodedCorpus:
    """Stacked token arrays for a list of episodes, ready for batching."""

    tokens: np.ndarray  # (M, B) int32
    loss_mask: np.ndarray  # (M, B) bool
    slot_kind: np.ndarray  # (M, B) int8
    encoded: list[EncodedEpisode]
    episodes: list[Episode]
    vocab_hash: str

    def __len__(self) -> int:
        return len(self.encoded)


def encode_corpus(
    episodes: Sequence[Episode],
    vocab: Vocabulary,
    block_size: int,
    max_events: int = codec.DEFAULT_MAX_EVENTS,
) -> EncodedCorpus:
    encoded = [codec.encode_episode(ep, vocab, block_size, max_events) for ep in episodes]
    if encoded:
        tokens = np.stack([e.tokens for e in encoded])
        loss_mask = np.stack([e.loss_mask for e in encoded])
        slot_kind = np.stack([e.slot_kind for e in encoded])
    else:
        tokens = np.zeros((0, block_size), dtype=np.int32)
        loss_mask = np.zeros((0, block_size), dtype=bool)
        slot_kind = np.zeros((0, block_size), dtype=np.int8)
    return EncodedCorpus(
        tokens=tokens,
        loss_mask=loss_mask,
        slot_kind=slot_kind,
        encoded=encoded,
        episodes=list(episodes),
        vocab_hash=vocab.manifest_hash,
    )


def split_by_match(
    episodes: Sequence[Episode], holdout_fraction: float, seed: int = 0
) -> tuple[list[Episode], list[Episode]]:
    """Deterministic train/held-out split on match ids (no episode leakage)."""
    if not (0.0 <= holdout_fraction < 1.0):
        raise ValueError("holdout_fraction must be in [0, 1)")
    match_ids = sorted({ep.source_match_id for ep in episodes})
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(match_ids)))
    n_held = int(round(holdout_fraction * len(match_ids)))
    held = {match_ids[i] for i in order[:n_held]}
    train_eps = [ep for ep in episodes if ep.source_match_id not in held]
    held_eps = [ep for ep in episodes if ep.source_match_id in held]
    return train_eps, held_eps


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay and global-norm clipping.

    Weight decay applies to matrices (ndim >= 2) only, never to biases or
    layer-norm gains.
    """

    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> float:
        cfg = self.cfg
        sq = 0.0
        for g in grads.values():
            sq += float((g.astype(np.float64) ** 2).sum())
        gnorm = math.sqrt(sq)
        clip = min(1.0, cfg.grad_clip_norm / (gnorm + 1e-12))
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for name, p in params.items():
            g = grads[name] * clip
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1 - ADAM_BETA2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            if p.ndim >= 2:
                update = update + cfg.weight_decay * p
            p -= (cfg.learning_rate * update).astype(p.dtype)
        return gnorm


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float] = field(default_factory=list)
    eval_reports: list[tuple[int, MetricReport]] = field(default_factory=list)


def train(
    params: ModelParams,
    config: ModelConfig,
    corpus: EncodedCorpus,
    cfg: TrainConfig,
    heldout: EncodedCorpus | None = None,
    vocab: Vocabulary | None = None,
    on_log: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Run ``cfg.steps`` optimizer updates of the masked next-token loss.

    The recorded loss at each step is computed from the pre-update
    parameters, so ``losses[0]`` is the initialization loss. When ``heldout``
    and ``vocab`` are given, a MetricReport is produced every
    ``eval_interval`` steps.
    """
    if len(corpus) == 0:
        raise ValueError("empty training corpus")
    result = TrainResult(params=params)
    if cfg.steps == 0:
        return result
    optimizer = AdamW(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    m = len(corpus)
    for step in range(cfg.steps):
        idx = rng.integers(0, m, size=cfg.batch_size)
        x = corpus.tokens[idx, :-1]
        y = corpus.tokens[idx, 1:]
        msk = corpus.loss_mask[idx, :-1]
        loss, grads = backward(params, config, x, y, msk)
        optimizer.step(params, grads)
        result.losses.append(loss)
        if on_log is not None and (step % cfg.eval_interval == 0 or step == cfg.steps - 1):
            on_log(step, loss)
        if heldout is not None and vocab is not None and step > 0 and step % cfg.eval_interval == 0:
            result.eval_reports.append((step, evaluate(params, config, vocab, heldout)))
    return result


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _bin_centers(vocab: Vocabulary, kind: SlotKind) -> np.ndarray:
    _, size = vocab.block(kind)
    attr = codec.slot_attribute_kind(kind)
    return np.array([codec.undiscretize(attr, b) for b in range(size)])


class MetricAccumulator:
    """Streaming accumulator for Table-style per-attribute metrics."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.correct = {k: 0 for k in _ACCURACY_SLOTS}
        self.total = {k: 0 for k in METRIC_SLOTS}
        self.abs_err = {k: 0.0 for k in _MAE_SLOTS}
        self._centers = {k: _bin_centers(vocab, k) for k in _MAE_SLOTS}

    def add(self, kind: SlotKind, target_token: int, predicted_token: int) -> None:
        """Score one slot from full-vocabulary token ids."""
        offset, size = self.vocab.block(kind)
        for token in (target_token, predicted_token):
            if not (offset <= token < offset + size):
                raise codec.GrammarViolationError(
                    -1, f"token {token} outside block {codec.BLOCK_NAMES[kind]}"
                )
        self.add_batch(
            kind,
            np.array([target_token - offset]),
            np.array([predicted_token - offset]),
        )

    def add_batch(self, kind: SlotKind, target_bins: np.ndarray, predicted_bins: np.ndarray) -> None:
        """Score a vector of slots from in-block bin indices."""
        if kind not in METRIC_SLOTS:
            raise ValueError(f"slot {kind!r} is not a scored attribute")
        n = len(target_bins)
        self.total[kind] += n
        if kind in _ACCURACY_SLOTS:
            self.correct[kind] += int((target_bins == predicted_bins).sum())
        else:
            centers = self._centers[kind]
            self.abs_err[kind] += float(np.abs(centers[target_bins] - centers[predicted_bins]).sum())

    def report(self) -> MetricReport:
        def acc(kind):
            return self.correct[kind] / self.total[kind] if self.total[kind] else 0.0

        def mae(kind):
            return self.abs_err[kind] / self.total[kind] if self.total[kind] else 0.0

        return MetricReport(
            acc_team=acc(SlotKind.TEAM),
            acc_type=acc(SlotKind.ACTION_TYPE),
            acc_success=acc(SlotKind.SUCCESS),
            mae_x=mae(SlotKind.X),
            mae_y=mae(SlotKind.Y),
            mae_delta=mae(SlotKind.DELTA),
            mae_robv=mae(SlotKind.ROBV),
            n_events_evaluated=self.total[SlotKind.TEAM],
        )


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    corpus: EncodedCorpus,
    batch_size: int = 32,
) -> MetricReport:
    """Teacher-forced evaluation with grammar-restricted argmax per slot.

    Scores exactly the loss-masked positions (training-mask reuse); the
    EPISODE_END slot carries loss but no attribute, so it is excluded from
    the per-attribute metrics.
    """
    if len(corpus) == 0:
        raise ValueError("empty held-out corpus")
    acc = MetricAccumulator(vocab)
    end_token = vocab.EPISODE_END
    for lo in range(0, len(corpus), batch_size):
        tokens = corpus.tokens[lo : lo + batch_size]
        mask = corpus.loss_mask[lo : lo + batch_size, :-1]
        x = tokens[:, :-1]
        y = tokens[:, 1:]
        y_kind = corpus.slot_kind[lo : lo + batch_size, 1:]
        logits = forward(params, config, x)
        scored = np.zeros_like(mask)
        for kind in METRIC_SLOTS:
            sel = mask & (y_kind == int(kind))
            scored |= sel
            if not sel.any():
                continue
            sl = vocab.block_slice(kind)
            preds = logits[..., sl].argmax(axis=-1)
            targets = y - sl.start
            acc.add_batch(kind, targets[sel], preds[sel])
        # mask reuse: every masked position is an attribute slot or EPISODE_END
        leftover = mask & ~scored
        assert np.array_equal(leftover, mask & (y == end_token)), (
            "evaluation mask does not partition into attribute slots plus EPISODE_END"
        )
    return acc.report()


def predicted_type_distributions(
    params: ModelParams,
    config: ModelConfig,
    vocab: Vocabulary,
    corpus: EncodedCorpus,
    batch_size: int = 32,
) -> dict[str, np.ndarray]:
    """Per-player mean predicted action-type distribution, teacher-forced.

    At every action-type slot, the in-block softmax is attributed to the
    acting player of that event and averaged over all of the player's slots.
    """
    sl = vocab.block_slice(SlotKind.ACTION_TYPE)
    player_offset, _ = vocab.block(SlotKind.PLAYER)
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for lo in range(0, len(corpus), batch_size):
        tokens = corpus.tokens[lo : lo + batch_size]
        mask = corpus.loss_mask[lo : lo + batch_size, :-1]
        y_kind = corpus.slot_kind[lo : lo + batch_size, 1:]
        logits = forward(params, config, tokens[:, :-1])
        sel = mask & (y_kind == int(SlotKind.ACTION_TYPE))
        rows, cols = np.nonzero(sel)
        if len(rows) == 0:
            continue
        probs = softmax(logits[rows, cols][:, sl])
        # slot layout: player at b, team at b+1 (the predicting position), type at b+2
        actor_tokens = tokens[rows, cols - 1]
        for actor, p in zip(actor_tokens, probs):
            a = int(actor)
            if a in sums:
                sums[a] += p
                counts[a] += 1
            else:
                sums[a] = p.astype(np.float64).copy()
                counts[a] = 1
    return {
        vocab.players[a - player_offset]: sums[a] / counts[a]
        for a in sums
    }


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
