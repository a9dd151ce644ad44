"""Recognition-oriented quality labels.

An image's quality is the cosine between its recognizer embedding and its
identity's class center, the matching row of the bias-free classifier
weight. Scores stored in manifests are the cosine mapped onto [0, 1].

The recognizer used here (the "FR model") is a different network from the
quality network that is later trained on these labels.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .manifest import ManifestRecord
from .model import Network, load_checkpoint
from .training import load_images, predict

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ClassCenters(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    class_ids: List[str]
    matrix: np.ndarray

    def row(self, identity: str) -> np.ndarray:
        try:
            return self.matrix[self.class_ids.index(identity)]
        except ValueError:
            raise ValueError(f"unknown identity {identity!r}: not one of the recognizer's "
                             f"{len(self.class_ids)} classes") from None


class EmbeddingSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    image_ids: List[str]
    matrix: np.ndarray

    def __len__(self) -> int:
        return len(self.image_ids)


class QualityLabel(BaseModel):
    image_id: str
    identity: str
    raw_cosine: float
    score: float


def quality_score(f, u) -> float:
    """cos(f, u) = f.u / (|f| |u|)."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if f.shape != u.shape:
        raise ValueError(f"quality_score needs equal dimensions, got {f.size} and {u.size}")
    nf, nu = np.linalg.norm(f), np.linalg.norm(u)
    if nf == 0 or nu == 0:
        raise ValueError("quality_score is undefined for a zero-norm vector")
    return float(np.clip(f @ u / (nf * nu), -1.0, 1.0))


def unit_map(cosine: float) -> float:
    """(cos + 1) / 2, the monotone map from [-1, 1] onto [0, 1]."""
    if not -1.0 <= cosine <= 1.0:
        raise ValueError(f"cosine {cosine} outside [-1, 1]")
    return (cosine + 1.0) / 2.0


def extract_centers(recognizer: Union[Network, PathLike]) -> ClassCenters:
    """Classifier weight rows, unnormalized, in class-id order."""
    network = recognizer if isinstance(recognizer, Network) else load_checkpoint(recognizer)
    if network.classifier is None:
        raise ValueError(f"a {network.kind} network has no classifier to take class centers from")
    matrix = network.classifier.weight.numpy().copy()
    zero = np.flatnonzero(np.linalg.norm(matrix, axis=1) == 0)
    if zero.size:
        raise ValueError(f"class center {network.class_ids[zero[0]]!r} has zero norm")
    return ClassCenters(class_ids=network.class_ids, matrix=matrix)


def extract_features(recognizer: Network, records: Sequence[ManifestRecord],
                     images_root: Optional[PathLike] = None, batch_size: int = 64, jobs: int = 1,
                     on_unreadable: str = "skip") -> EmbeddingSet:
    """Embedding rows in manifest order, decoded and run one batch at a time."""
    if recognizer.embedding is None:
        raise ValueError(f"a {recognizer.kind} network produces no embedding")
    ids, rows = [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        inputs, kept = load_images(chunk, recognizer, images_root, jobs, on_unreadable)
        if not kept:
            continue
        _, features = predict(recognizer, inputs, batch_size)
        ids.extend(r.image_id for r in kept)
        rows.append(features)
    dim = recognizer.spec.embedding_dim
    matrix = np.concatenate(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("recognizer produced non-finite embeddings")
    return EmbeddingSet(image_ids=ids, matrix=matrix)


def label_embeddings(records: Sequence[ManifestRecord], embeddings: EmbeddingSet,
                     centers: ClassCenters) -> Tuple[List[ManifestRecord], List[QualityLabel]]:
    """Attach raw_cosine and score to every record that has an embedding, keeping order."""
    unknown = sorted({r.identity for r in records} - set(centers.class_ids))
    if unknown:
        raise ValueError(f"unknown identity {unknown[0]!r}: not one of the recognizer's classes")
    rows = {image_id: i for i, image_id in enumerate(embeddings.image_ids)}
    labeled, labels = [], []
    for record in records:
        if record.image_id not in rows:
            continue
        cosine = quality_score(embeddings.matrix[rows[record.image_id]], centers.row(record.identity))
        score = unit_map(cosine)
        labeled.append(record.model_copy(update={"raw_cosine": cosine, "score": score}))
        labels.append(QualityLabel(image_id=record.image_id, identity=record.identity,
                                   raw_cosine=cosine, score=score))
    return labeled, labels


def label_dataset(recognizer: Union[Network, PathLike], records: Sequence[ManifestRecord],
                  images_root: Optional[PathLike] = None, batch_size: int = 64, jobs: int = 1,
                  on_unreadable: str = "skip") -> List[ManifestRecord]:
    """Extract centers and features, then score every record."""
    network = recognizer if isinstance(recognizer, Network) else load_checkpoint(recognizer)
    centers = extract_centers(network)
    unknown = sorted({r.identity for r in records} - set(centers.class_ids))
    if unknown:
        raise ValueError(f"unknown identity {unknown[0]!r}: not one of the recognizer's classes")
    embeddings = extract_features(network, records, images_root, batch_size, jobs, on_unreadable)
    labeled, labels = label_embeddings(records, embeddings, centers)
    if labels:
        scores = np.array([label.score for label in labels])
        logger.info(f"Labeled {len(labels)} images: score mean {scores.mean():.3f}, "
                    f"min {scores.min():.3f}, max {scores.max():.3f}")
    return labeled
