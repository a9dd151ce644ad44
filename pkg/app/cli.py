"""Command line: one subcommand per pipeline step.

Usage:
    python -m app synth --out data/synth
    python -m app train-recognizer --manifest data/synth/manifest.jsonl --out runs/recognizer.ckpt
    python -m app label --model runs/recognizer.ckpt --manifest data/synth/manifest.jsonl \\
        --images data/synth --out runs/labeled.jsonl
    python -m app sample --manifest runs/labeled.jsonl --out runs/sampled.jsonl
    python -m app train-fqnet --manifest runs/sampled.jsonl --images data/synth --out runs/fqnet.ckpt
    python -m app score --scorer fqnet --model runs/fqnet.ckpt --manifest ... --out runs/scores.jsonl
    python -m app pairs --manifest ... --templates runs/templates.jsonl --pairs runs/pairs.jsonl
    python -m app select --manifest ... --scores runs/scores.jsonl --out runs/selected.jsonl
    python -m app evaluate --model runs/recognizer.ckpt --manifest ... --scores runs/scores.jsonl \\
        --out runs/report.json
    python -m app inspect --model runs/fqnet.ckpt
    python -m app degrade --image in.png --kind gaussian_blur --severity 0.5 --out out.png

Settings come from config.yaml/env, then --config (JSON, same section keys),
then flags. Exit 0 on success, 1 on bad input files or values, 2 on usage
errors. Every artifact gets a <file>.meta.json sidecar (or embedded
metadata for checkpoints and reports) with the tool version, effective
config and input hashes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

from . import __version__
from .config import Settings, get_config, load_json_config, override
from .evaluation import (SCORER_KINDS, Scorer, build_templates, evaluate_selection, make_pairs,
                         read_pairs, read_templates, score_table, select_templates,
                         template_identities, write_pairs, write_rows, write_templates)
from .helpers import file_sha256, read_image, write_image, write_sidecar
from .labeling import label_dataset
from .manifest import read_manifest, write_manifest
from .model import (build_recognizer, build_tinyfqnet, footprint, load_checkpoint, save_checkpoint,
                    trace_shapes)
from .sampling import (KINDS, DegradationSpec, bin_scores, degrade, filter_identities, random_sample,
                       smooth_sample, summarize_histogram, synthesize_dataset)
from .training import train_quality, train_recognizer

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Effective configuration of one subcommand run, echoed into its artifacts."""
    command: str
    seed: int
    jobs: int
    log_level: int
    sections: Dict[str, Any] = {}
    flags: Dict[str, Any] = {}


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k != "handler" and v is not None}


def _run_config(args, settings: Settings, file_cfg: dict, **sections: BaseModel) -> RunConfig:
    return RunConfig(
        command=args.command,
        seed=args.seed if args.seed is not None else file_cfg.get("seed", settings.seed),
        jobs=args.jobs or file_cfg.get("jobs", settings.jobs),
        log_level=settings.log_level,
        sections={name: section.model_dump(mode="json") for name, section in sections.items()},
        flags=_flags(args),
    )


def _images_root(args) -> Path:
    return Path(args.images) if args.images else Path(args.manifest).parent


def _read_scores(path) -> Dict[str, float]:
    scores = {}
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                scores[str(row["image_id"])] = float(row["score"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{number}: not a score row ({e})") from e
    return scores


# ---- subcommands ---- #

def cmd_synth(args, settings, file_cfg) -> int:
    synth = override(settings.synth, file_cfg.get("synth"), load_json_config(args.grid), {
        "num_identities": args.identities, "images_per_identity": args.per_identity})
    degradation = override(settings.degradation, file_cfg.get("degradation"))
    run = _run_config(args, settings, file_cfg, synth=synth, degradation=degradation)
    out = Path(args.out)
    records = synthesize_dataset(out, synth.num_identities, synth.images_per_identity, synth.kinds,
                                 synth.severities, run.seed, degradation, synth.template_size, run.jobs)
    manifest = write_manifest(records, out / "manifest.jsonl")
    write_sidecar(manifest, __version__, run.model_dump(), {})
    print(f"{len(records)} images of {synth.num_identities} identities written to {out}")
    return 0


def cmd_train_recognizer(args, settings, file_cfg) -> int:
    training = override(settings.recognizer_training, file_cfg.get("recognizer_training"),
                        {"epochs": args.epochs, "batch_size": args.batch_size, "seed": args.seed})
    model = override(settings.model, file_cfg.get("model"), {"embedding_dim": args.embedding_dim})
    run = _run_config(args, settings, file_cfg, recognizer_training=training, model=model)
    records = read_manifest(args.manifest)
    class_ids = sorted({r.identity for r in records})
    if len(class_ids) < 2:
        raise ValueError(f"{args.manifest}: recognizer training needs at least 2 identities")
    network = build_recognizer(model.embedding_dim, len(class_ids), class_ids, model.input_size,
                               model.final_relu, run.seed, model.bn_eps, model.bn_momentum,
                               model.normalization)
    network, report = train_recognizer(records, network, training, _images_root(args), run.jobs)
    network.metadata = {"version": __version__, "config": run.model_dump(),
                        "inputs": {"manifest": file_sha256(args.manifest)}, "metrics": report.metrics}
    out = save_checkpoint(network, args.out)
    report.write(out.with_name(out.name + ".report.json"))
    print(f"recognizer: {len(class_ids)} classes, train accuracy "
          f"{report.metrics['train_accuracy']:.4f}, checkpoint {out}")
    return 0


def cmd_label(args, settings, file_cfg) -> int:
    sampler = override(settings.sampler, file_cfg.get("sampler"), {"num_bins": args.bins})
    training = override(settings.recognizer_training, file_cfg.get("recognizer_training"))
    run = _run_config(args, settings, file_cfg, sampler=sampler, recognizer_training=training)
    records = read_manifest(args.manifest)
    labeled = label_dataset(args.model, records, _images_root(args), args.batch_size or 64, run.jobs,
                            training.on_unreadable)
    out = write_manifest(labeled, args.out)
    summary = summarize_histogram(bin_scores(labeled, sampler.num_bins)) if labeled else {}
    write_sidecar(out, __version__, run.model_dump(),
                  {"manifest": args.manifest, "model": args.model}, {"histogram": summary})
    print(f"{len(labeled)} of {len(records)} records labeled"
          + (f"; flatness ratio {summary['flatness_ratio']:.2f}" if summary else ""))
    return 0


def cmd_sample(args, settings, file_cfg) -> int:
    sampler = override(settings.sampler, file_cfg.get("sampler"), {
        "target_budget": args.budget, "num_bins": args.bins, "low_fraction": args.low_frac,
        "high_fraction": args.high_frac, "min_images_per_identity": args.min_per_id,
        "seed": args.seed})
    run = _run_config(args, settings, file_cfg, sampler=sampler)
    records = filter_identities(read_manifest(args.manifest), sampler.min_images_per_identity)
    if not records:
        raise ValueError(f"{args.manifest}: no identity has {sampler.min_images_per_identity} images")
    before = summarize_histogram(bin_scores(records, sampler.num_bins))
    if args.strategy == "random":
        sampled = random_sample(records, sampler.target_budget or len(records), sampler.seed)
    else:
        sampled = smooth_sample(records, sampler)
    after = summarize_histogram(bin_scores(sampled, sampler.num_bins))
    out = write_manifest(sampled, args.out)
    write_sidecar(out, __version__, run.model_dump(), {"manifest": args.manifest},
                  {"strategy": args.strategy, "histogram_before": before, "histogram_after": after})
    print(f"{args.strategy} sampling: {len(records)} -> {len(sampled)} records, flatness ratio "
          f"{before['flatness_ratio']:.2f} -> {after['flatness_ratio']:.2f}")
    return 0


def cmd_train_fqnet(args, settings, file_cfg) -> int:
    base = settings.full_training if args.full_schedule else settings.quality_training
    section = "full_training" if args.full_schedule else "quality_training"
    training = override(base, file_cfg.get(section), {
        "epochs": args.epochs, "batch_size": args.batch_size, "loss_mode": args.loss_mode,
        "seed": args.seed})
    model = override(settings.model, file_cfg.get("model"))
    run = _run_config(args, settings, file_cfg, quality_training=training, model=model)
    records = read_manifest(args.manifest)
    network = build_tinyfqnet(model.input_size, model.final_relu, run.seed, model.bn_eps,
                              model.bn_momentum, model.normalization)
    network, report = train_quality(records, network, training, _images_root(args), run.jobs)
    network.metadata = {"version": __version__, "config": run.model_dump(),
                        "inputs": {"manifest": file_sha256(args.manifest)},
                        "loss_mode": training.loss_mode, "metrics": report.metrics}
    out = save_checkpoint(network, args.out)
    report.write(out.with_name(out.name + ".report.json"))
    print(f"tinyFQnet ({training.loss_mode} loss): final loss {report.metrics['final_loss']:.5f}, "
          f"checkpoint {out}")
    return 0


def cmd_score(args, settings, file_cfg) -> int:
    scoring = override(settings.scoring, file_cfg.get("scoring"))
    run = _run_config(args, settings, file_cfg, scoring=scoring)
    scorer = Scorer(kind=args.scorer, seed=run.seed, checkpoint=args.model, scoring=scoring)
    records = read_manifest(args.manifest)
    scores = scorer.score_records(records, _images_root(args), run.jobs)
    rows = [dict(row, scorer=args.scorer) for row in score_table(scores)]
    out = write_rows(rows, args.out)
    inputs = {"manifest": args.manifest, "model": args.model}
    write_sidecar(out, __version__, run.model_dump(), inputs, {"scorer": args.scorer})
    for row in rows[:args.show]:
        print(f"  {row['image_id']}  {row['display']:6.1f}")
    print(f"{args.scorer}: {len(rows)} images scored (0-100 display; files keep [0, 1])")
    return 0


def cmd_pairs(args, settings, file_cfg) -> int:
    evaluation = override(settings.evaluation, file_cfg.get("evaluation"))
    run = _run_config(args, settings, file_cfg, evaluation=evaluation)
    records = read_manifest(args.manifest)
    templates = build_templates(records)
    pairs = make_pairs(templates, template_identities(records), evaluation.negatives_per_positive, run.seed)
    for path in (write_templates(templates, args.templates), write_pairs(pairs, args.pairs)):
        write_sidecar(path, __version__, run.model_dump(), {"manifest": args.manifest})
    print(f"{len(templates)} templates, {len(pairs)} pairs")
    return 0


def _templates(args, records):
    return read_templates(args.templates) if args.templates else build_templates(records)


def cmd_select(args, settings, file_cfg) -> int:
    run = _run_config(args, settings, file_cfg)
    records = read_manifest(args.manifest)
    scores = _read_scores(args.scores)
    selected = select_templates(_templates(args, records), scores)
    rows = [{"template_id": t, "image_id": i, "score": scores[i]} for t, i in selected.items()]
    out = write_rows(rows, args.out)
    write_sidecar(out, __version__, run.model_dump(),
                  {"manifest": args.manifest, "scores": args.scores, "templates": args.templates})
    print(f"{len(rows)} templates, one image selected each")
    return 0


def cmd_evaluate(args, settings, file_cfg) -> int:
    evaluation = override(settings.evaluation, file_cfg.get("evaluation"))
    scoring = override(settings.scoring, file_cfg.get("scoring"))
    run = _run_config(args, settings, file_cfg, evaluation=evaluation, scoring=scoring)
    records = read_manifest(args.manifest)
    templates = _templates(args, records)
    if args.pairs:
        pairs = read_pairs(args.pairs)
    else:
        pairs = make_pairs(templates, template_identities(records),
                           evaluation.negatives_per_positive, run.seed)
    if args.scores:
        scores, kind = _read_scores(args.scores), "file"
    else:
        scorer = Scorer(kind=args.scorer or "random", seed=run.seed, checkpoint=args.quality_model,
                        scoring=scoring)
        scores, kind = scorer.score_records(records, _images_root(args), run.jobs), scorer.kind
    recognizer = load_checkpoint(args.model)
    result = evaluate_selection(recognizer, records, templates, pairs, scores, evaluation,
                                _images_root(args), run.jobs, run.seed)
    inputs = {"model": args.model, "manifest": args.manifest, "pairs": args.pairs,
              "templates": args.templates, "scores": args.scores, "quality_model": args.quality_model}
    report = {
        "version": __version__,
        "scorer": kind,
        "config": run.model_dump(),
        "inputs": {k: file_sha256(v) for k, v in sorted(inputs.items()) if v},
        **result.model_dump(mode="json"),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n")
    for key, value in result.verification.tpr_at.items():
        print(f"  TPR@FPR={key}: {value:.4f}")
    print(f"AUC {result.verification.auc:.4f}; report {out}")
    return 0


def cmd_inspect(args, settings, file_cfg) -> int:
    if args.model:
        network = load_checkpoint(args.model)
    elif args.arch == "recognizer":
        network = build_recognizer(settings.model.embedding_dim, args.classes, input_size=args.input_size)
    else:
        network = build_tinyfqnet(args.input_size)
    size = args.input_size if not args.model else network.spec.input_size
    shape = (1, network.spec.in_channels, size, size)
    print(f"{network.kind} network, input {'x'.join(map(str, shape))}")
    for name, out_shape in trace_shapes(network, shape):
        print(f"  {name:<12} {'x'.join(map(str, out_shape[1:]))}")
    summary = footprint(network, shape)
    print(f"params {summary.params} (+{summary.buffers} buffers), MACs {summary.macs}, "
          f"flops {summary.flops}, elementwise {summary.elementwise}")
    print(f"memory: params {summary.param_bytes} B, buffers {summary.buffer_bytes} B, "
          f"activations {summary.activation_bytes} B per image")
    return 0


def cmd_degrade(args, settings, file_cfg) -> int:
    degradation = override(settings.degradation, file_cfg.get("degradation"))
    seed = args.seed if args.seed is not None else settings.seed
    spec = DegradationSpec.from_config(args.kind, args.severity, degradation, seed)
    write_image(args.out, degrade(read_image(args.image), spec))
    print(f"{args.kind} at severity {args.severity} written to {args.out}")
    return 0


# ---- parser ---- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyfq", description="Recognition-oriented face image quality.")
    parser.add_argument("--version", action="version", version=f"tinyfq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for every random choice (default: config)")
    common.add_argument("--jobs", type=int, help="worker threads (default: config)")
    common.add_argument("--config", help="JSON file with config sections to override")

    def add(name, handler, help, *needs):
        p = sub.add_parser(name, help=help, parents=[common])
        p.set_defaults(handler=handler)
        if "manifest" in needs:
            p.add_argument("--manifest", required=True, help="input manifest (JSON Lines)")
            p.add_argument("--images", help="images root (default: the manifest's directory)")
        if "out" in needs:
            p.add_argument("--out", required=True, help="output path")
        return p

    p = add("synth", cmd_synth, "write a synthetic dataset and its manifest", "out")
    p.add_argument("--identities", type=int)
    p.add_argument("--per-identity", type=int)
    p.add_argument("--grid", help="JSON degradation grid: {kinds: [...], severities: [...]}")

    p = add("train-recognizer", cmd_train_recognizer, "train the reference recognizer", "manifest", "out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--embedding-dim", type=int)

    p = add("label", cmd_label, "score a manifest against recognizer class centers", "manifest", "out")
    p.add_argument("--model", required=True, help="recognizer checkpoint")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--bins", type=int)

    p = add("sample", cmd_sample, "filter identities and rebalance scores", "manifest", "out")
    p.add_argument("--strategy", choices=("smooth", "random"), default="smooth")
    p.add_argument("--budget", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--low-frac", type=float)
    p.add_argument("--high-frac", type=float)
    p.add_argument("--min-per-id", type=int)

    p = add("train-fqnet", cmd_train_fqnet, "train tinyFQnet on a labeled manifest", "manifest", "out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--loss-mode", choices=("squared", "absolute"))
    p.add_argument("--full-schedule", action="store_true",
                   help="17 epochs, batch 1024, decay every 5 epochs")

    p = add("score", cmd_score, "score every image with one scorer", "manifest", "out")
    p.add_argument("--scorer", choices=SCORER_KINDS, required=True)
    p.add_argument("--model", help="quality checkpoint (fqnet scorer)")
    p.add_argument("--show", type=int, default=0, help="print the first N display scores")

    p = add("pairs", cmd_pairs, "write templates and verification pairs", "manifest")
    p.add_argument("--templates", required=True, help="output templates file")
    p.add_argument("--pairs", required=True, help="output pairs file")

    p = add("select", cmd_select, "pick the best image per template", "manifest", "out")
    p.add_argument("--scores", required=True)
    p.add_argument("--templates")

    p = add("evaluate", cmd_evaluate, "verification report for a selection", "manifest", "out")
    p.add_argument("--model", required=True, help="recognizer checkpoint used for features")
    p.add_argument("--templates")
    p.add_argument("--pairs")
    p.add_argument("--scores", help="scores file; otherwise --scorer runs inline")
    p.add_argument("--scorer", choices=SCORER_KINDS)
    p.add_argument("--quality-model", help="quality checkpoint for --scorer fqnet")

    p = add("inspect", cmd_inspect, "shape trace, parameter and operation counts")
    p.add_argument("--model", help="checkpoint (default: a freshly built network)")
    p.add_argument("--arch", choices=("tinyfqnet", "recognizer"), default="tinyfqnet")
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--classes", type=int, default=32)

    p = add("degrade", cmd_degrade, "apply one degradation to an image", "out")
    p.add_argument("--image", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--severity", type=float, required=True)
    return parser


def main(argv: Optional[List[str]] = None, settings: Optional[Settings] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = settings or get_config()
    try:
        file_cfg = load_json_config(args.config)
        return args.handler(args, settings, file_cfg)
    except (ValueError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1
