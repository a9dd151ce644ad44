#!venv/bin/python
"""Run the whole quality loop on a synthetic dataset and report how it did.

Steps: synthesize identities with graded degradations, train the reference
recognizer, label every image by its cosine to its class center, hold out
a fifth of the images, rebalance the rest, train tinyFQnet, then compare
quality-based template selection against seeded random selection.

Usage:
    python scripts/pipeline.py --out runs/desk
    python scripts/pipeline.py --out runs/small --identities 8 --per-identity 20 --epochs 5

report.json holds the recognizer's train accuracy, the mean per-identity
Spearman correlation between degradation severity and label, the held-out
Pearson correlation between prediction and label, and tpr@1e-2 for the
quality scorer against the mean of the random runs. Identical seeds give
identical artifacts; only elapsed times differ between runs.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import pearsonr, spearmanr

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app import __version__, _configure_logging
from app.config import Settings, get_config, override
from app.evaluation import (Scorer, build_templates, evaluate_selection, fpr_key, make_pairs,
                            template_identities)
from app.helpers import derive_seed
from app.labeling import label_dataset
from app.manifest import identity_counts, to_frame, write_manifest
from app.model import build_recognizer, build_tinyfqnet, save_checkpoint
from app.sampling import bin_scores, filter_identities, smooth_sample, summarize_histogram, synthesize_dataset
from app.training import load_images, predict, train_quality, train_recognizer

logger = logging.getLogger("pipeline")

HOLDOUT_FRACTION = 0.2
TARGET_FPR = 1e-2


def split_holdout(records, fraction: float, seed: int):
    """Seeded image-level split; returns (train, held_out) in manifest order."""
    rng = np.random.default_rng(derive_seed(seed, "holdout"))
    held = set(rng.permutation(len(records))[:int(round(fraction * len(records)))].tolist())
    train = [r for i, r in enumerate(records) if i not in held]
    return train, [r for i, r in enumerate(records) if i in held]


def severity_spearman(records) -> Optional[float]:
    """Mean over identities of Spearman(severity, label); constant identities are skipped."""
    frame = to_frame(records)
    values = []
    for _, group in frame.groupby("identity", sort=True):
        if group["severity"].nunique() > 1 and group["score"].nunique() > 1:
            values.append(float(spearmanr(group["severity"], group["score"])[0]))
    return float(np.mean(values)) if values else None


def finite_or_none(value: float) -> Optional[float]:
    """NaN or inf (a constant input to a correlation) becomes null in report.json."""
    return float(value) if np.isfinite(value) else None


def run_pipeline(out: Path, settings: Optional[Settings] = None, seed: Optional[int] = None,
                 identities: Optional[int] = None, per_identity: Optional[int] = None,
                 epochs: Optional[int] = None) -> dict:
    settings = settings or get_config()
    seed = settings.seed if seed is None else seed
    out = Path(out)
    images = out / "images"
    model = settings.model
    synth = override(settings.synth, {"num_identities": identities, "images_per_identity": per_identity})
    recognizer_cfg = override(settings.recognizer_training, {"epochs": epochs, "seed": seed})
    quality_cfg = override(settings.quality_training, {"epochs": epochs, "seed": seed})

    records = synthesize_dataset(images, synth.num_identities, synth.images_per_identity, synth.kinds,
                                 synth.severities, seed, settings.degradation, synth.template_size,
                                 settings.jobs)
    write_manifest(records, out / "manifest.jsonl")

    class_ids = sorted({r.identity for r in records})
    recognizer = build_recognizer(model.embedding_dim, len(class_ids), class_ids, model.input_size,
                                  model.final_relu, seed, model.bn_eps, model.bn_momentum,
                                  model.normalization)
    recognizer, recognizer_report = train_recognizer(records, recognizer, recognizer_cfg, images,
                                                     settings.jobs)
    save_checkpoint(recognizer, out / "recognizer.ckpt")

    labeled = label_dataset(recognizer, records, images, jobs=settings.jobs)
    write_manifest(labeled, out / "labeled.jsonl")
    spearman = severity_spearman(labeled)

    train, held_out = split_holdout(labeled, HOLDOUT_FRACTION, seed)
    # Synthetic identities are small; keep every identity the split leaves.
    smallest = int(identity_counts(train).min())
    sampler = override(settings.sampler, {
        "min_images_per_identity": min(settings.sampler.min_images_per_identity, smallest),
        "seed": seed})
    sampled = smooth_sample(filter_identities(train, sampler.min_images_per_identity), sampler)
    write_manifest(sampled, out / "sampled.jsonl")

    fqnet = build_tinyfqnet(model.input_size, model.final_relu, seed, model.bn_eps, model.bn_momentum,
                            model.normalization)
    fqnet, quality_report = train_quality(sampled, fqnet, quality_cfg, images, settings.jobs)
    save_checkpoint(fqnet, out / "fqnet.ckpt")

    inputs, kept = load_images(held_out, fqnet, images, settings.jobs)
    predicted = predict(fqnet, inputs).astype(np.float64)
    pearson = finite_or_none(pearsonr(predicted, [r.score for r in kept])[0])

    templates = build_templates(records)
    pairs = make_pairs(templates, template_identities(records),
                       settings.evaluation.negatives_per_positive, seed)
    key = fpr_key(TARGET_FPR)
    fqnet_scores = Scorer(kind="fqnet", seed=seed).score_records(records, images, settings.jobs, fqnet)
    quality = evaluate_selection(recognizer, records, templates, pairs, fqnet_scores,
                                 settings.evaluation, images, settings.jobs, seed)
    random_tpr = []
    for run in range(settings.evaluation.random_runs):
        scores = Scorer(kind="random", seed=derive_seed(seed, f"random-{run}")).score_records(records)
        result = evaluate_selection(recognizer, records, templates, pairs, scores,
                                    settings.evaluation, images, settings.jobs, seed)
        random_tpr.append(result.verification.tpr_at[key])

    report = {
        "version": __version__,
        "seed": seed,
        "images": len(records),
        "identities": len(class_ids),
        "recognizer_train_accuracy": recognizer_report.metrics["train_accuracy"],
        "label_histogram": summarize_histogram(bin_scores(labeled, sampler.num_bins)),
        "sampled_histogram": summarize_histogram(bin_scores(sampled, sampler.num_bins)),
        "severity_spearman": spearman,
        "holdout_images": len(kept),
        "holdout_pearson": pearson,
        "fqnet_train_mse": quality_report.metrics["train_mse"],
        "pairs": len(pairs),
        "tpr_at_fpr": key,
        "fqnet_tpr": quality.verification.tpr_at[key],
        "random_tpr": random_tpr,
        "random_tpr_mean": float(np.mean(random_tpr)),
        "fqnet_auc": quality.verification.auc,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n")
    logger.info(f"Report written to {out / 'report.json'}")
    return report


def _show(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="run directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--identities", type=int)
    parser.add_argument("--per-identity", type=int)
    parser.add_argument("--epochs", type=int, help="epochs for both networks")
    args = parser.parse_args(argv)

    _configure_logging(get_config())
    try:
        report = run_pipeline(Path(args.out), seed=args.seed, identities=args.identities,
                              per_identity=args.per_identity, epochs=args.epochs)
    except (ValueError, OSError) as e:
        print(f"pipeline: {e}", file=sys.stderr)
        return 1
    print(f"recognizer train accuracy {report['recognizer_train_accuracy']:.3f}")
    print(f"severity vs label Spearman  {_show(report['severity_spearman'])}")
    print(f"held-out Pearson            {_show(report['holdout_pearson'])}")
    print(f"tpr@{report['tpr_at_fpr']}: fqnet {report['fqnet_tpr']:.4f}, "
          f"random {report['random_tpr_mean']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
