"""Command-line interface.

Subcommands cover the full workflow: generate a synthetic corpus, train,
evaluate, run counterfactual substitution reports, export embedding
analytics, and serve the HTTP API. Report-producing commands write a figure
next to the delimited/JSON output unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analytics, codec, figures, inference, synth, trainer
from .model import (
    ModelConfig,
    checkpoint_file_hash,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

DEFAULT_ENCODE = {"block_size": 128, "max_events": 12}


def _load_vocab(args, corpus_path: Path | None = None) -> codec.Vocabulary:
    if getattr(args, "vocab", None):
        return codec.Vocabulary.load(args.vocab)
    if corpus_path is not None:
        sibling = corpus_path.with_suffix(".vocab.json")
        if sibling.exists():
            return codec.Vocabulary.load(sibling)
    raise SystemExit("no vocabulary manifest: pass --vocab or keep <corpus>.vocab.json next to the corpus")


def _check_vocab_hash(expected: str, vocab: codec.Vocabulary, what: str) -> None:
    if expected != vocab.manifest_hash:
        raise SystemExit(
            f"vocabulary hash mismatch: checkpoint expects {expected[:12]}..., "
            f"{what} provides {vocab.manifest_hash[:12]}...; refusing to continue"
        )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth_generate(args) -> int:
    league = synth.default_league(seed=args.league_seed)
    episodes, book = synth.generate_corpus(league, args.matches, seed=args.seed)
    out = Path(args.out)
    codec.write_corpus(episodes, out)
    vocab = league.vocabulary()
    vocab.save(out.with_suffix(".vocab.json"))
    meta = synth.league_metadata(league, book)
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    stats = codec.corpus_stats(episodes)
    print(
        f"wrote {stats.episode_count} episodes from {stats.match_count} matches "
        f"({stats.mean_events_per_episode:.1f} events/episode, {stats.player_count} players) to {out}"
    )
    print(f"vocabulary manifest: {out.with_suffix('.vocab.json')} (hash {vocab.manifest_hash[:12]}...)")
    print(f"league ground truth: {out.with_suffix('.meta.json')}")
    return 0


# ---------------------------------------------------------------------------
# train / evaluate
# ---------------------------------------------------------------------------


def _read_train_config(path: str | None) -> dict:
    payload = {}
    if path:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    payload.setdefault("model", {})
    payload.setdefault("train", {})
    payload.setdefault("encode", {})
    for key, value in DEFAULT_ENCODE.items():
        payload["encode"].setdefault(key, value)
    return payload


def cmd_train(args) -> int:
    corpus_path = Path(args.corpus)
    episodes = codec.read_corpus(corpus_path)
    vocab = _load_vocab(args, corpus_path)
    conf = _read_train_config(args.config)
    encode = conf["encode"]

    train_eps, held_eps = trainer.split_by_match(episodes, args.holdout_fraction, seed=args.split_seed)
    corpus = trainer.encode_corpus(train_eps, vocab, encode["block_size"], encode["max_events"])
    heldout = (
        trainer.encode_corpus(held_eps, vocab, encode["block_size"], encode["max_events"])
        if held_eps
        else None
    )

    model_conf = dict(conf["model"])
    model_conf.setdefault("block_size", encode["block_size"])
    config = ModelConfig(vocab_size=vocab.size, **model_conf)
    if args.init_ckpt:
        params, config, ckpt_hash = load_checkpoint(args.init_ckpt)
        _check_vocab_hash(ckpt_hash, vocab, "the corpus")
    else:
        params = init_params(config, seed=conf["train"].get("seed", 0))
    tc = trainer.TrainConfig.from_dict({**conf["train"], "steps": args.steps or conf["train"].get("steps", 1000)})

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def log(step, loss):
        print(f"step {step}: loss {loss:.4f}", flush=True)

    result = trainer.train(params, config, corpus, tc, heldout=heldout, vocab=vocab, on_log=log)

    ckpt_path = out_dir / "checkpoint.bin"
    save_checkpoint(ckpt_path, params, config, vocab.manifest_hash)
    vocab.save(out_dir / "vocab.json")
    (out_dir / "train_config.json").write_text(
        json.dumps({"model": config.to_dict(), "train": tc.to_dict(), "encode": encode}, indent=2) + "\n",
        encoding="utf-8",
    )
    with open(out_dir / "losses.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(result.losses):
            writer.writerow([step, repr(loss)])
    if not args.no_figures and result.losses:
        figures.save_loss_curve(out_dir / "loss_curve.png", result.losses)
    if heldout is not None:
        report = trainer.evaluate(params, config, vocab, heldout)
        report.save(out_dir / "report.json")
        print("held-out:", json.dumps(report.to_dict()))
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_evaluate(args) -> int:
    params, config, ckpt_hash = load_checkpoint(args.ckpt)
    corpus_path = Path(args.corpus)
    vocab = _load_vocab(args, corpus_path)
    _check_vocab_hash(ckpt_hash, vocab, "the corpus")
    episodes = codec.read_corpus(corpus_path)
    encoded = trainer.encode_corpus(episodes, vocab, config.block_size, args.max_events)
    report = trainer.evaluate(params, config, vocab, encoded)
    report_path = Path(args.report)
    report.save(report_path)
    with open(report_path.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in report.to_dict().items():
            writer.writerow([key, value])
    if not args.no_figures:
        figures.save_metric_bars(report_path.with_suffix(".png"), report)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _run_pair_report(params, config, vocab, episodes, out_player, in_player, args):
    sub = inference.Substitution(out_player=out_player, in_player=in_player)
    indices = inference.select_episodes_for_player(episodes, out_player, args.max_events)
    if args.limit_episodes:
        indices = indices[: args.limit_episodes]
    return inference.simulation_report(
        params, config, vocab, episodes, indices, sub,
        n_samples=args.n, max_events=args.max_events,
        temperature=args.temperature, seed=args.seed, role_class=args.role_class,
    )


def cmd_simulate(args) -> int:
    params, config, ckpt_hash = load_checkpoint(args.ckpt)
    episodes_path = Path(args.episodes)
    vocab = _load_vocab(args, episodes_path)
    _check_vocab_hash(ckpt_hash, vocab, "the episode corpus")
    episodes = codec.read_corpus(episodes_path)
    report_path = Path(args.report)

    if args.pairs:
        rows = []
        with open(args.pairs, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "out_player":
                    continue
                rows.append((row[0].strip(), row[1].strip()))
        reports = []
        for out_player, in_player in rows:
            rep = _run_pair_report(params, config, vocab, episodes, out_player, in_player, args)
            reports.append(rep)
            print(
                f"{in_player} in {out_player}'s context: "
                f"aggregate {rep['overall']['substituted']['aggregate_robv']:.4f} "
                f"(baseline {rep['overall']['baseline']['aggregate_robv']:.4f})"
            )
        payload = {"mode": "pairs", "pairs": reports}
        report_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        with open(report_path.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["out_player", "in_player", "aggregate_robv", "baseline_aggregate_robv", "n_episodes"])
            for rep in reports:
                writer.writerow([
                    rep["out_player"], rep["in_player"],
                    repr(rep["overall"]["substituted"]["aggregate_robv"]),
                    repr(rep["overall"]["baseline"]["aggregate_robv"]),
                    rep["n_episodes"],
                ])
        if not args.no_figures and reports:
            samples = {
                f"{r['in_player']}@{r['out_player']}": r["overall"]["substituted"]["robv_samples"]
                for r in reports
            }
            figures.save_robv_histogram(report_path.with_suffix(".png"), samples)
        return 0

    if not args.out_player or not args.in_player:
        raise SystemExit("--out-player and --in-player are required (or use --pairs)")
    rep = _run_pair_report(params, config, vocab, episodes, args.out_player, args.in_player, args)
    report_path.write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    with open(report_path.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_index", "match_id", "aggregate_robv", "baseline_aggregate_robv",
                         "reeval_substituted_mean", "reeval_baseline_mean"])
        for entry in rep["episodes"]:
            writer.writerow([
                entry["episode_index"], entry["match_id"],
                repr(entry["simulation"]["aggregate_robv"]),
                repr(entry["baseline_simulation"]["aggregate_robv"]),
                repr(entry["reevaluation"]["substituted_mean"]),
                repr(entry["reevaluation"]["baseline_mean"]),
            ])
    if not args.no_figures:
        figures.save_robv_histogram(
            report_path.with_suffix(".png"),
            {
                args.in_player: rep["overall"]["substituted"]["robv_samples"],
                f"{args.out_player} (baseline)": rep["overall"]["baseline"]["robv_samples"],
            },
        )
    overall = rep["overall"]
    print(
        f"{args.in_player} in {args.out_player}'s contexts over {rep['n_episodes']} episodes: "
        f"aggregate {overall['substituted']['aggregate_robv']:.4f} "
        f"vs baseline {overall['baseline']['aggregate_robv']:.4f}"
    )
    print(f"report: {report_path}")
    return 0


# ---------------------------------------------------------------------------
# embed
# ---------------------------------------------------------------------------


def _load_roles(meta_path: str | None) -> dict[str, str]:
    if not meta_path:
        return {}
    meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    return {pid: entry.get("archetype", entry.get("role_class", "")) for pid, entry in meta.get("players", {}).items()}


def cmd_embed_export(args) -> int:
    params, config, _ = load_checkpoint(args.ckpt)
    vocab = _load_vocab(args)
    matrix = analytics.player_embedding_matrix(params, vocab)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["player_id"] + [f"d{i}" for i in range(matrix.shape[1])])
        for pid, row in zip(vocab.players, matrix):
            writer.writerow([pid] + [repr(float(v)) for v in row])
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} embeddings to {args.out}")
    return 0


def cmd_embed_similar(args) -> int:
    params, config, _ = load_checkpoint(args.ckpt)
    vocab = _load_vocab(args)
    ranked = analytics.similar_players(params, config, vocab, args.player, k=args.k)
    for pid, sim in ranked:
        print(f"{pid}\t{sim:.4f}")
    return 0


def cmd_embed_project(args) -> int:
    params, config, _ = load_checkpoint(args.ckpt)
    vocab = _load_vocab(args)
    coords = analytics.project_embeddings(params, config, vocab)
    roles = _load_roles(args.meta)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["player_id", "u", "v", "role_label"])
        for pid, u, v in coords:
            writer.writerow([pid, repr(u), repr(v), roles.get(pid, "")])
    if not args.no_figures:
        figures.save_embedding_map(Path(args.out).with_suffix(".png"), coords, roles or None)
    print(f"wrote projection of {len(coords)} players to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceBundle, create_app

    bundle = ServiceBundle.load(
        ckpt_path=args.ckpt,
        corpus_path=args.corpus,
        vocab_path=args.vocab,
        meta_path=args.meta,
        max_events=args.max_events,
    )
    app = create_app(bundle, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pitchcast",
        description="Player-conditioned next-event prediction and counterfactual substitution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="synthetic league utilities")
    synth_sub = p_synth.add_subparsers(dest="synth_command", required=True)
    p_gen = synth_sub.add_parser("generate", help="generate a synthetic corpus")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--matches", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--league-seed", type=int, default=7)
    p_gen.set_defaults(func=cmd_synth_generate)

    p_train = sub.add_parser("train", help="train a model on a corpus")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--config", help="JSON: {model: {...}, train: {...}, encode: {...}}")
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--vocab")
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--holdout-fraction", type=float, default=0.1)
    p_train.add_argument("--split-seed", type=int, default=0)
    p_train.add_argument("--init-ckpt")
    p_train.add_argument("--no-figures", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="teacher-forced metric report")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--vocab")
    p_eval.add_argument("--max-events", type=int, default=DEFAULT_ENCODE["max_events"])
    p_eval.add_argument("--no-figures", action="store_true")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="counterfactual substitution report")
    p_sim.add_argument("--ckpt", required=True)
    p_sim.add_argument("--episodes", required=True)
    p_sim.add_argument("--out-player")
    p_sim.add_argument("--in-player")
    p_sim.add_argument("--pairs", help="CSV of out_player,in_player rows (batch mode)")
    p_sim.add_argument("--n", type=int, default=30)
    p_sim.add_argument("--temperature", type=float, default=1.0)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--role-class", default="midfielder", choices=inference.ROLE_CLASSES)
    p_sim.add_argument("--max-events", type=int, default=DEFAULT_ENCODE["max_events"])
    p_sim.add_argument("--limit-episodes", type=int, default=0)
    p_sim.add_argument("--report", required=True)
    p_sim.add_argument("--vocab")
    p_sim.add_argument("--no-figures", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_embed = sub.add_parser("embed", help="player embedding analytics")
    embed_sub = p_embed.add_subparsers(dest="embed_command", required=True)
    p_export = embed_sub.add_parser("export", help="dump raw embedding rows")
    p_export.add_argument("--ckpt", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--vocab")
    p_export.set_defaults(func=cmd_embed_export)
    p_similar = embed_sub.add_parser("similar", help="cosine-similarity retrieval")
    p_similar.add_argument("--ckpt", required=True)
    p_similar.add_argument("--player", required=True)
    p_similar.add_argument("--k", type=int, default=10)
    p_similar.add_argument("--vocab")
    p_similar.set_defaults(func=cmd_embed_similar)
    p_project = embed_sub.add_parser("project", help="deterministic 2-D embedding map")
    p_project.add_argument("--ckpt", required=True)
    p_project.add_argument("--out", required=True)
    p_project.add_argument("--vocab")
    p_project.add_argument("--meta", help="league metadata JSON for role labels")
    p_project.add_argument("--no-figures", action="store_true")
    p_project.set_defaults(func=cmd_embed_project)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--ckpt", required=True)
    p_serve.add_argument("--corpus", required=True)
    p_serve.add_argument("--vocab")
    p_serve.add_argument("--meta")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument("--max-events", type=int, default=DEFAULT_ENCODE["max_events"])
    p_serve.add_argument("--static", help="directory of built console assets to serve at /")
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve" and args.port is None:
        import os

        args.port = int(os.environ.get("PITCHCAST_PORT", "8008"))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
