"""Per-image quality scorers.

fqnet   the trained quality network
blur    sharpness from the variance of the 3x3 Laplacian, v / (v + c)
jpeg    bits per pixel after re-encoding at quality 90, over raw RGB bpp
combination  weighted mean of blur and jpeg
random  hash of (seed, image_id); the baseline selection strategy

Scores are comparable only within one scorer.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Union

import cv2
import numpy as np
from pydantic import BaseModel

from ..config import ScoringConfig
from ..helpers import read_image, unit_hash
from ..manifest import ManifestRecord
from ..model import Network, load_checkpoint
from ..training import load_images, predict

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ScorerKind = Literal["fqnet", "random", "blur", "jpeg", "combination"]
SCORER_KINDS = ("fqnet", "random", "blur", "jpeg", "combination")


def _gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 3:
        return cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    return image


def laplacian_variance(image: np.ndarray) -> float:
    lap = cv2.Laplacian(_gray(image).astype(np.float64), cv2.CV_64F, ksize=1)
    return float(lap.var())


def score_blur(image: np.ndarray, constant: float = 100.0) -> float:
    """Higher is sharper; a constant image scores 0."""
    v = laplacian_variance(image)
    return v / (v + constant)


def score_jpeg(image: Union[np.ndarray, PathLike], quality: int = 90,
               reference_bpp: float = 24.0) -> float:
    """Re-encoded bits per pixel relative to reference_bpp, clamped to [0, 1].

    Images that already went through heavy JPEG compression have lost the
    detail that costs bits, so they score lower.
    """
    if not isinstance(image, np.ndarray):
        image = read_image(image)
    ok, encoded = cv2.imencode(".jpg", image, [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise ValueError(f"JPEG encoding failed for an image of shape {image.shape}")
    bpp = 8.0 * encoded.size / (image.shape[0] * image.shape[1])
    return float(min(1.0, bpp / reference_bpp))


def score_combination(scores: Sequence[float], weights: Sequence[float]) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if scores.shape != weights.shape:
        raise ValueError(f"{scores.size} scores but {weights.size} weights")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights must be non-negative and sum to 1, got {weights.tolist()}")
    return float(scores @ weights)


def score_random(image_id: str, seed: int = 0) -> float:
    """Uniform in [0, 1), fixed per (seed, image_id) whatever the processing order."""
    return unit_hash(seed, image_id)


def rescale(scores: Union[Mapping[str, float], Sequence[float]]):
    """Min-max map onto 0-100 for display; a constant set maps to 100."""
    if isinstance(scores, Mapping):
        keys = list(scores)
        values = rescale([scores[k] for k in keys])
        return dict(zip(keys, values))
    values = np.asarray(scores, dtype=np.float64)
    if values.size == 0:
        return []
    low, high = values.min(), values.max()
    if high == low:
        return [100.0] * values.size
    return (100.0 * (values - low) / (high - low)).tolist()


class Scorer(BaseModel):
    kind: ScorerKind
    seed: int = 0
    checkpoint: Optional[str] = None
    scoring: ScoringConfig = ScoringConfig()

    def _image_score(self, image: np.ndarray) -> float:
        cfg = self.scoring
        if self.kind == "blur":
            return score_blur(image, cfg.blur_constant)
        if self.kind == "jpeg":
            return score_jpeg(image, cfg.jpeg_quality, cfg.reference_bpp)
        parts = {
            "blur": lambda: score_blur(image, cfg.blur_constant),
            "jpeg": lambda: score_jpeg(image, cfg.jpeg_quality, cfg.reference_bpp),
        }
        unknown = sorted(set(cfg.combination_weights) - set(parts))
        if unknown:
            raise ValueError(f"combination weight for unknown factor {unknown[0]!r}")
        names = sorted(cfg.combination_weights)
        return score_combination([parts[n]() for n in names],
                                 [cfg.combination_weights[n] for n in names])

    def score_records(self, records: Sequence[ManifestRecord], images_root: Optional[PathLike] = None,
                      jobs: int = 1, network: Optional[Network] = None,
                      on_unreadable: str = "skip") -> Dict[str, float]:
        """image_id -> score for every record that could be scored, in manifest order."""
        if self.kind == "random":
            return {r.image_id: score_random(r.image_id, self.seed) for r in records}
        if self.kind == "fqnet":
            return self._score_fqnet(records, images_root, jobs, network, on_unreadable)

        def one(record):
            try:
                return self._image_score(read_image(record.resolve(images_root)))
            except ValueError as e:
                if on_unreadable == "abort":
                    raise
                logger.warning(f"Skipping {e}")
                return None

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            values = list(pool.map(one, records))
        return {r.image_id: v for r, v in zip(records, values) if v is not None}

    def _score_fqnet(self, records, images_root, jobs, network, on_unreadable) -> Dict[str, float]:
        if network is None:
            if self.checkpoint is None:
                raise ValueError("the fqnet scorer needs a quality checkpoint")
            network = load_checkpoint(self.checkpoint)
        if network.kind != "quality":
            raise ValueError(f"the fqnet scorer needs a quality network, got {network.kind}")
        scores: Dict[str, float] = {}
        batch = 256
        for start in range(0, len(records), batch):
            chunk = records[start:start + batch]
            inputs, kept = load_images(chunk, network, images_root, jobs, on_unreadable)
            if kept:
                for record, value in zip(kept, predict(network, inputs, batch)):
                    scores[record.image_id] = float(value)
        return scores


def score_table(scores: Mapping[str, float]) -> List[dict]:
    """Rows for a scores file: raw [0, 1] score plus the 0-100 display value."""
    display = rescale(scores)
    return [{"image_id": k, "score": scores[k], "display": display[k]} for k in scores]
