"""Command-line entry point.

Subcommands: prepare-data, train, generate, evaluate, attention-maps, plus
synth-corpus for the hermetic synthetic dataset. Every run writes a
run_config.json snapshot into its output directory so results are
reproducible from disk. Exit codes: 0 on success, nonzero on any
validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import VoxProfileError

ABLATIONS = {
    "no-speaker-loss": {"speaker_loss_enabled": False},
    "no-augment": {"augmentations_enabled": False},
    "no-lm-finetune": {"stage_b_epochs": 0},
    "mlp-mapper": {"mapper_variant": "mlp"},
    "transformer-mapper": {"mapper_variant": "transformer"},
}


def _snapshot(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: str(v) if isinstance(v, Path) else v for k, v in vars(args).items() if k != "func"}
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _load_embedding(args, model):
    from .audio import load_and_resample
    from .encoder import load_external_embeddings

    if args.audio:
        wav = load_and_resample(args.audio)
        return model.embed_utterance(wav)
    table = load_external_embeddings(args.embedding_file)
    if args.utterance not in table:
        raise VoxProfileError(f"utterance '{args.utterance}' not in {args.embedding_file}")
    return table[args.utterance]


def cmd_synth_corpus(args) -> int:
    from .synth import generate_corpus

    out = Path(args.out)
    _snapshot(out, args)
    metadata, probe = generate_corpus(
        out, n_speakers=args.speakers, utterances_per_speaker=args.utterances,
        probe_utterances_per_speaker=args.probe_utterances, seed=args.seed,
    )
    print(f"metadata: {metadata}")
    print(f"probe metadata: {probe}")
    return 0


def cmd_prepare_data(args) -> int:
    from .corpus import (
        build_manifest, corpus_stats, default_templates, read_metadata,
        split_manifest, stats_report, write_manifest,
    )

    out = Path(args.out)
    _snapshot(out, args)
    records = read_metadata(args.metadata)
    rng = np.random.default_rng(args.seed)
    triplets = build_manifest(records, default_templates(), rng)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    splits = split_manifest(triplets, ratios, rng)
    stats = {}
    for name, rows in splits.items():
        write_manifest(out / f"{name}.jsonl", rows)
        if rows:
            stats[name] = corpus_stats(rows)
    report = stats_report(stats)
    (out / "stats.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return 0


def cmd_train(args) -> int:
    from .training import TrainingConfig, train

    out = Path(args.out)
    _snapshot(out, args)
    config = TrainingConfig.from_file(args.config) if args.config else TrainingConfig()
    overrides = {}
    for name in args.ablation or []:
        overrides.update(ABLATIONS[name])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.augment_policy:
        import yaml

        overrides["augment_policy"] = yaml.safe_load(
            Path(args.augment_policy).read_text(encoding="utf-8")
        )
    if overrides:
        from dataclasses import asdict

        merged = asdict(config)
        merged.update(overrides)
        config = TrainingConfig.from_dict(merged)
    model = train(config, args.manifest, out)
    final = json.loads(Path(out / "metrics.jsonl").read_text(encoding="utf-8").splitlines()[-1])
    print(f"checkpoint: {out / 'checkpoint'}")
    print(f"final loss: L={final['L']:.4f} L1={final['L1']:.4f} after {model.step} steps")
    return 0


def cmd_generate(args) -> int:
    from .training import TrainedModel

    out = Path(args.out)
    _snapshot(out, args)
    model = TrainedModel.load(args.checkpoint)
    embedding = _load_embedding(args, model)
    text = model.describe(
        embedding, args.prompt, max_len=args.max_len, strategy=args.strategy
    )
    print(text)
    with open(out / "generations.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "source": args.audio or args.utterance,
            "prompt": args.prompt,
            "text": text,
        }, sort_keys=True) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    from .corpus import read_manifest
    from .encoder import load_external_embeddings
    from .evaluation import default_schemas, evaluate_outputs, load_schemas, render_confusion_chart
    from .training import TrainedModel

    out = Path(args.out)
    _snapshot(out, args)
    model = TrainedModel.load(args.checkpoint)
    triplets = read_manifest(args.manifest)
    externals = load_external_embeddings(args.embedding_file) if args.embedding_file else None
    emb_cache = {}
    for t in triplets:
        if t.utterance_id not in emb_cache:
            if externals is not None:
                if t.utterance_id not in externals:
                    raise VoxProfileError(f"no embedding for '{t.utterance_id}'")
                emb_cache[t.utterance_id] = externals[t.utterance_id]
            else:
                from .audio import load_and_resample

                emb_cache[t.utterance_id] = model.embed_utterance(load_and_resample(t.audio_path))
    generated = model.describe_batch(
        [emb_cache[t.utterance_id] for t in triplets],
        [t.prompt for t in triplets],
        max_len=args.max_len,
    )
    schemas = load_schemas(args.schemas) if args.schemas else default_schemas()
    report = evaluate_outputs(generated, triplets, schemas)
    (out / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    render_confusion_chart(report, out / "confusions.png")
    with open(out / "generations.jsonl", "w", encoding="utf-8") as fh:
        for t, g in zip(triplets, generated):
            fh.write(json.dumps(
                {"utterance_id": t.utterance_id, "prompt": t.prompt, "text": g}, sort_keys=True
            ) + "\n")
    for name, acc in sorted(report.accuracy.items()):
        print(f"{name}: {acc:.1f}% over {report.evaluated[name]}")
    print(f"mean semantic score: {report.mean_semantic_score:.4f}")
    return 0


def cmd_attention_maps(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .mapper import attention_maps
    from .training import TrainedModel

    out = Path(args.out)
    _snapshot(out, args)
    model = TrainedModel.load(args.checkpoint)
    embedding = _load_embedding(args, model)
    maps = attention_maps(embedding, model.mapper, per_head=args.per_head)
    np.savez(out / "attention_maps.npz", **{f"layer{i}": m for i, m in enumerate(maps)})
    for i, m in enumerate(maps):
        fig, ax = plt.subplots(figsize=(4, 4))
        image = m if m.ndim == 2 else m.mean(axis=0)
        im = ax.imshow(image, cmap="viridis", aspect="auto")
        ax.set_title(f"layer {i}")
        ax.set_xlabel("key position")
        ax.set_ylabel("query position")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(out / f"attention_layer{i}.png")
        plt.close(fig)
    print(f"wrote {len(maps)} attention maps to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxprofile",
        description="Speaker profiling with prefix-conditioned caption generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate the synthetic speaker corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--utterances", type=int, default=4)
    p.add_argument("--probe-utterances", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("prepare-data", help="build speaker-disjoint manifests + stats")
    p.add_argument("--metadata", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run the two-stage training schedule")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="YAML file of TrainingConfig fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ablation", action="append", choices=sorted(ABLATIONS), default=None)
    p.add_argument("--augment-policy", default=None, help="YAML/JSON augmentation policy")
    p.set_defaults(func=cmd_train)

    def add_source_args(p):
        p.add_argument("--audio", default=None, help="wav file to embed")
        p.add_argument("--embedding-file", default=None, help="external embedding TSV")
        p.add_argument("--utterance", default=None, help="utterance id inside --embedding-file")

    p = sub.add_parser("generate", help="describe a speaker from audio or embedding")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--strategy", default="greedy", choices=["greedy", "top-k", "beam"])
    add_source_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated descriptions on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schemas", default=None, help="JSON attribute schema file")
    p.add_argument("--embedding-file", default=None)
    p.add_argument("--max-len", type=int, default=48)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attention-maps", help="export mapper attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-head", action="store_true")
    add_source_args(p)
    p.set_defaults(func=cmd_attention_maps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "audio", "x") is None and getattr(args, "embedding_file", "x") is None:
        parser.error(f"{args.command}: provide --audio or --embedding-file with --utterance")
    try:
        return args.func(args)
    except VoxProfileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
