from __future__ import annotations

import math

import numpy as np
import pytest

from pitchcast import codec, model, trainer
from pitchcast.codec import SlotKind
from pitchcast.trainer import AdamW, MetricAccumulator, MetricReport, TrainConfig

from conftest import BLOCK_SIZE, MAX_EVENTS


def _small_model(vocab):
    cfg = model.ModelConfig(vocab_size=vocab.size, block_size=BLOCK_SIZE,
                            n_layers=1, n_heads=2, embed_dim=32)
    return model.init_params(cfg, seed=7), cfg


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1e-4)
    with pytest.raises(ValueError):
        TrainConfig(steps=-1)


def test_zero_steps_leaves_params_unchanged(vocab, encoded_small):
    params, cfg = _small_model(vocab)
    before = {k: v.copy() for k, v in params.items()}
    trainer.train(params, cfg, encoded_small, TrainConfig(steps=0))
    for name, tensor in params.items():
        assert np.array_equal(tensor, before[name])


def test_initial_loss_near_log_vocab(vocab, encoded_small):
    params, cfg = _small_model(vocab)
    result = trainer.train(params, cfg, encoded_small, TrainConfig(steps=1, batch_size=8))
    assert result.losses[0] == pytest.approx(math.log(vocab.size), rel=0.05)


def test_loss_decreases_on_synthetic_corpus(vocab, encoded_small):
    params, cfg = _small_model(vocab)
    result = trainer.train(params, cfg, encoded_small,
                           TrainConfig(steps=80, batch_size=8, learning_rate=1e-3))
    head = sum(result.losses[:5]) / 5
    tail = sum(result.losses[-5:]) / 5
    assert tail < head


def test_training_curve_deterministic(vocab, encoded_small):
    tc = TrainConfig(steps=25, batch_size=4, learning_rate=1e-3, seed=3)
    runs = []
    for _ in range(2):
        params, cfg = _small_model(vocab)
        runs.append(trainer.train(params, cfg, encoded_small, tc).losses)
    assert runs[0] == runs[1]


def test_memorized_single_episode_loss(memorized_model):
    _, _, _, final_loss = memorized_model
    assert final_loss < 0.05


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def test_weight_decay_applies_to_matrices_only(vocab):
    params, cfg = _small_model(vocab)
    tc = TrainConfig(steps=1, learning_rate=0.1, weight_decay=0.5)
    opt = AdamW(params, tc)
    zero_grads = {k: np.zeros_like(v) for k, v in params.items()}
    before = {k: v.copy() for k, v in params.items()}
    opt.step(params, zero_grads)
    for name, tensor in params.items():
        if tensor.ndim >= 2:
            assert np.allclose(tensor, before[name] * (1 - 0.1 * 0.5), atol=1e-7), name
        else:
            assert np.array_equal(tensor, before[name]), name


def test_global_norm_reported(vocab):
    params, cfg = _small_model(vocab)
    opt = AdamW(params, TrainConfig(steps=1))
    grads = {k: np.ones_like(v) for k, v in params.items()}
    expected = math.sqrt(sum(v.size for v in params.tensors.values()))
    assert opt.step(params, grads) == pytest.approx(expected)


# ---------------------------------------------------------------------------
# Metric accumulation (oracle-driven, model-free)
# ---------------------------------------------------------------------------


def test_oracle_predictions_are_perfect(vocab):
    acc = MetricAccumulator(vocab)
    rng = np.random.default_rng(0)
    for _ in range(200):
        for kind in trainer.METRIC_SLOTS:
            offset, size = vocab.block(kind)
            token = offset + int(rng.integers(size))
            acc.add(kind, token, token)
    report = acc.report()
    assert report.acc_team == 1.0
    assert report.acc_type == 1.0
    assert report.acc_success == 1.0
    assert report.mae_x == 0.0
    assert report.mae_y == 0.0
    assert report.mae_delta == 0.0
    assert report.mae_robv == 0.0
    assert report.n_events_evaluated == 200


def test_uniform_random_x_predictions_mae_near_35(vocab):
    rng = np.random.default_rng(42)
    acc = MetricAccumulator(vocab)
    targets = rng.integers(0, codec.X_BINS, size=10_000)
    preds = rng.integers(0, codec.X_BINS, size=10_000)
    acc.add_batch(SlotKind.X, targets, preds)
    assert acc.report().mae_x == pytest.approx(35.0, abs=2.0)


def test_hand_built_four_event_fixture(vocab):
    acc = MetricAccumulator(vocab)
    team_off, _ = vocab.block(SlotKind.TEAM)
    type_off, _ = vocab.block(SlotKind.ACTION_TYPE)
    succ_off, _ = vocab.block(SlotKind.SUCCESS)
    # team: 3 of 4 correct
    for target, pred in [(0, 0), (0, 1), (1, 1), (1, 1)]:
        acc.add(SlotKind.TEAM, team_off + target, team_off + pred)
    # type: 2 of 4 correct
    for target, pred in [(0, 0), (1, 2), (3, 3), (4, 5)]:
        acc.add(SlotKind.ACTION_TYPE, type_off + target, type_off + pred)
    # success: 4 of 4 correct
    for target, pred in [(0, 0), (1, 1), (0, 0), (1, 1)]:
        acc.add(SlotKind.SUCCESS, succ_off + target, succ_off + pred)
    x_off, _ = vocab.block(SlotKind.X)
    for target, pred in [(10, 10), (20, 25), (30, 30), (40, 50)]:
        acc.add(SlotKind.X, x_off + target, x_off + pred)
    y_off, _ = vocab.block(SlotKind.Y)
    for target, pred in [(5, 5), (5, 6), (5, 4), (5, 5)]:
        acc.add(SlotKind.Y, y_off + target, y_off + pred)
    d_off, _ = vocab.block(SlotKind.DELTA)
    for target, pred in [(2, 2), (3, 2), (4, 6), (5, 5)]:
        acc.add(SlotKind.DELTA, d_off + target, d_off + pred)
    r_off, _ = vocab.block(SlotKind.ROBV)
    for target, pred in [(100, 100), (110, 100), (90, 100), (100, 120)]:
        acc.add(SlotKind.ROBV, r_off + target, r_off + pred)

    report = acc.report()
    assert report.acc_team == 0.75
    assert report.acc_type == 0.5
    assert report.acc_success == 1.0
    assert report.mae_x == 3.75
    assert report.mae_y == 0.5
    assert report.mae_delta == 0.75
    assert report.mae_robv == pytest.approx(0.1, rel=1e-12)
    assert report.n_events_evaluated == 4


def test_accumulator_rejects_out_of_block_tokens(vocab):
    acc = MetricAccumulator(vocab)
    x_off, _ = vocab.block(SlotKind.X)
    with pytest.raises(codec.GrammarViolationError):
        acc.add(SlotKind.X, x_off + 3, vocab.BOS)


def test_metric_report_json_field_names(tmp_path):
    report = MetricReport(
        acc_team=0.5, acc_type=0.25, acc_success=1.0,
        mae_x=1.0, mae_y=2.0, mae_delta=3.0, mae_robv=0.1, n_events_evaluated=8,
    )
    path = tmp_path / "report.json"
    report.save(path)
    import json

    payload = json.loads(path.read_text())
    assert set(payload) == {
        "acc_team", "acc_type", "acc_success",
        "mae_x", "mae_y", "mae_delta", "mae_robv", "n_events_evaluated",
    }
    assert MetricReport.from_dict(payload) == report


# ---------------------------------------------------------------------------
# Model-backed evaluation
# ---------------------------------------------------------------------------


def test_evaluate_bounds_and_determinism(tiny_model, vocab, encoded_small):
    params, cfg = tiny_model
    report_a = trainer.evaluate(params, cfg, vocab, encoded_small)
    report_b = trainer.evaluate(params, cfg, vocab, encoded_small)
    assert report_a == report_b
    for attr in ("acc_team", "acc_type", "acc_success"):
        assert 0.0 <= getattr(report_a, attr) <= 1.0
    for attr in ("mae_x", "mae_y", "mae_delta", "mae_robv"):
        assert getattr(report_a, attr) >= 0.0
    assert report_a.n_events_evaluated == sum(e.n_events for e in encoded_small.encoded)


def test_evaluate_rejects_empty(tiny_model, vocab):
    params, cfg = tiny_model
    empty = trainer.encode_corpus([], vocab, BLOCK_SIZE, MAX_EVENTS)
    with pytest.raises(ValueError):
        trainer.evaluate(params, cfg, vocab, empty)


def test_checkpoint_round_trip_reproduces_report(tiny_model, vocab, encoded_small, tmp_path):
    params, cfg = tiny_model
    report_a = trainer.evaluate(params, cfg, vocab, encoded_small)
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(path, params, cfg, vocab.manifest_hash)
    loaded, cfg2, vhash = model.load_checkpoint(path)
    assert vhash == vocab.manifest_hash
    report_b = trainer.evaluate(loaded, cfg2, vocab, encoded_small)
    assert report_a == report_b


def test_predicted_type_distributions_structure(tiny_model, vocab, encoded_small):
    params, cfg = tiny_model
    dists = trainer.predicted_type_distributions(params, cfg, vocab, encoded_small)
    assert dists, "at least one player must have a type slot"
    for pid, dist in dists.items():
        assert pid in vocab.players
        assert dist.shape == (len(vocab.action_types),)
        assert dist.sum() == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def test_split_by_match_disjoint(small_corpus):
    episodes, _ = small_corpus
    train_eps, held_eps = trainer.split_by_match(episodes, holdout_fraction=1 / 3, seed=1)
    train_ids = {ep.source_match_id for ep in train_eps}
    held_ids = {ep.source_match_id for ep in held_eps}
    assert train_ids.isdisjoint(held_ids)
    assert len(held_ids) == 1
    assert len(train_eps) + len(held_eps) == len(episodes)


def test_split_by_match_deterministic(small_corpus):
    episodes, _ = small_corpus
    a = trainer.split_by_match(episodes, 1 / 3, seed=9)
    b = trainer.split_by_match(episodes, 1 / 3, seed=9)
    assert a == b
