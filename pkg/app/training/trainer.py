"""SGD training loops for the quality network and the reference recognizer.

fit_* work on in-memory arrays; train_* load the manifest's images first.
One seeded permutation per epoch, last partial batch kept, one tape per
batch. Everything except elapsed_seconds is reproducible from the seed.
"""
from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from ..config import TrainConfig
from ..helpers import load_batch
from ..manifest import ManifestRecord
from ..model import Network
from ..tensor import SGD, Tape, Tensor
from .losses import classification_loss, quality_loss
from .schedule import lr_schedule

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class EpochStats(BaseModel):
    epoch: int
    lr: float
    loss: float


class TrainReport(BaseModel):
    kind: str
    loss_mode: Optional[str] = None
    samples: int
    epochs: List[EpochStats] = []
    metrics: Dict[str, float] = {}
    skipped: List[str] = []
    config: dict = {}
    elapsed_seconds: float = 0.0

    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    def write(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2) + "\n")
        return path


BatchLoss = Callable[[Network, np.ndarray, Tape], Tensor]


def _fit(network: Network, inputs: np.ndarray, batch_loss: BatchLoss,
         config: TrainConfig) -> List[EpochStats]:
    n = len(inputs)
    if n == 0:
        raise ValueError("training set is empty")
    params = network.parameters()
    optimizer = SGD(params, momentum=config.momentum, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            index = order[start:start + config.batch_size]
            tape = Tape()
            loss = batch_loss(network, index, tape)
            tape.backward(loss, params)
            optimizer.step(lr)
            total += loss.item() * len(index)
        stats = EpochStats(epoch=epoch, lr=lr, loss=total / n)
        history.append(stats)
        logger.info(f"{network.kind} epoch {epoch + 1}/{config.epochs} lr={lr:.1e} loss={stats.loss:.5f}")
    return history


def predict(network: Network, inputs: np.ndarray, batch_size: int = 256):
    """Inference-mode forward in batches. Quality: scores (N,). Recognizer: (logits, features)."""
    outputs, logits, features = [], [], []
    for start in range(0, len(inputs), batch_size):
        result = network.forward(Tensor(inputs[start:start + batch_size]), training=False)
        if network.kind == "quality":
            outputs.append(result.numpy())
        else:
            logits.append(result[0].numpy())
            features.append(result[1].numpy())
    if network.kind == "quality":
        return np.concatenate(outputs) if outputs else np.zeros(0, dtype=np.float32)
    if not logits:
        return (np.zeros((0, network.spec.num_classes), dtype=np.float32),
                np.zeros((0, network.spec.embedding_dim), dtype=np.float32))
    return np.concatenate(logits), np.concatenate(features)


def fit_quality(network: Network, inputs: np.ndarray, labels: Sequence[float],
                config: TrainConfig) -> TrainReport:
    if network.kind != "quality":
        raise ValueError(f"fit_quality needs a quality network, got {network.kind}")
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (len(inputs),):
        raise ValueError(f"{len(inputs)} images but {labels.size} labels")
    started = time.perf_counter()

    def batch_loss(net, index, tape):
        scores = net.forward(Tensor(inputs[index]), tape, training=True)
        return quality_loss(scores, labels[index], config.loss_mode, tape=tape)

    history = _fit(network, inputs, batch_loss, config)
    predictions = predict(network, inputs, config.batch_size)
    residual = predictions.astype(np.float64) - labels
    metrics = {
        "final_loss": history[-1].loss,
        "train_mse": float(np.mean(residual ** 2)),
        "train_mae": float(np.mean(np.abs(residual))),
    }
    return TrainReport(kind="quality", loss_mode=config.loss_mode, samples=len(inputs),
                       epochs=history, metrics=metrics, config=config.model_dump(),
                       elapsed_seconds=time.perf_counter() - started)


def fit_recognizer(network: Network, inputs: np.ndarray, labels: Sequence[int],
                   config: TrainConfig) -> TrainReport:
    if network.kind != "recognizer":
        raise ValueError(f"fit_recognizer needs a recognizer, got {network.kind}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(inputs),):
        raise ValueError(f"{len(inputs)} images but {labels.size} labels")
    started = time.perf_counter()

    def batch_loss(net, index, tape):
        logits, _ = net.forward(Tensor(inputs[index]), tape, training=True)
        return classification_loss(logits, labels[index], tape=tape)

    history = _fit(network, inputs, batch_loss, config)
    logits, _ = predict(network, inputs, config.batch_size)
    metrics = {
        "final_loss": history[-1].loss,
        "train_accuracy": float(np.mean(np.argmax(logits, axis=1) == labels)),
    }
    return TrainReport(kind="recognizer", samples=len(inputs), epochs=history, metrics=metrics,
                       config=config.model_dump(), elapsed_seconds=time.perf_counter() - started)


def load_images(records: Sequence[ManifestRecord], network: Network,
                images_root: Optional[PathLike] = None, jobs: int = 1,
                on_unreadable: str = "skip") -> Tuple[np.ndarray, List[ManifestRecord]]:
    """Preprocessed images for records, plus the records that decoded."""
    norm = network.normalization
    inputs, kept = load_batch([r.resolve(images_root) for r in records], norm.mean, norm.std,
                              network.spec.input_size, jobs, on_unreadable)
    return inputs, [records[i] for i in kept]


def _skipped(records, kept) -> List[str]:
    kept_ids = {r.image_id for r in kept}
    return [r.image_id for r in records if r.image_id not in kept_ids]


def train_quality(records: Sequence[ManifestRecord], network: Network, config: TrainConfig,
                  images_root: Optional[PathLike] = None, jobs: int = 1) -> Tuple[Network, TrainReport]:
    """Regress the quality network onto each record's score."""
    unscored = [r.image_id for r in records if r.score is None]
    if unscored:
        raise ValueError(f"record {unscored[0]} has no quality score ({len(unscored)} unscored)")
    inputs, kept = load_images(records, network, images_root, jobs, config.on_unreadable)
    report = fit_quality(network, inputs, [r.score for r in kept], config)
    report.skipped = _skipped(records, kept)
    return network, report


def class_index(records: Sequence[ManifestRecord], class_ids: Sequence[str]) -> np.ndarray:
    """Integer labels for records; every class must own at least one record."""
    positions = {c: i for i, c in enumerate(class_ids)}
    unknown = sorted({r.identity for r in records} - set(positions))
    if unknown:
        raise ValueError(f"identity {unknown[0]!r} is not a recognizer class")
    empty = sorted(set(positions) - {r.identity for r in records})
    if empty:
        raise ValueError(f"class {empty[0]!r} has zero images")
    return np.array([positions[r.identity] for r in records], dtype=np.int64)


def train_recognizer(records: Sequence[ManifestRecord], network: Network, config: TrainConfig,
                     images_root: Optional[PathLike] = None, jobs: int = 1) -> Tuple[Network, TrainReport]:
    """Softmax cross-entropy over identities; the classifier rows become class centers."""
    if len({r.identity for r in records}) < 2:
        raise ValueError("recognizer training needs at least 2 identities")
    class_index(records, network.class_ids)
    inputs, kept = load_images(records, network, images_root, jobs, config.on_unreadable)
    report = fit_recognizer(network, inputs, class_index(kept, network.class_ids), config)
    report.skipped = _skipped(records, kept)
    return network, report
