"""Synthetic identities for desk-scale runs.

Each identity is a seeded layout of colored shapes over a striped
background. Its images are jittered copies (small shift, brightness gain)
passed through one degradation. Within an identity, images cycle through
the severity grid fastest, so a template (template_size consecutive
images) spans several severities of one degradation kind.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from ..config import DegradationConfig
from ..helpers import derive_seed, write_image
from ..manifest import ManifestRecord
from .degrade import KINDS, DegradationSpec, degrade

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IMAGE_SIZE = 64
_SHAPES = 6
_MAX_SHIFT = 2


def identity_pattern(identity: str, seed: int = 0, size: int = IMAGE_SIZE) -> np.ndarray:
    """The clean BGR uint8 base image of one identity."""
    rng = np.random.default_rng(derive_seed(seed, identity))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    fx, fy = rng.uniform(-3, 3, size=2)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xx + fy * yy) / size + rng.uniform(0, 2 * np.pi))
    base = rng.uniform(40, 215, size=3)
    canvas = np.clip(base * (0.6 + 0.4 * stripes[..., None]), 0, 255).astype(np.uint8)

    for _ in range(_SHAPES):
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        center = tuple(int(c) for c in rng.integers(8, size - 8, size=2))
        if rng.random() < 0.5:
            axes = tuple(int(a) for a in rng.integers(3, size // 4, size=2))
            angle = float(rng.uniform(0, 180))
            cv2.ellipse(canvas, center, axes, angle, 0, 360, color, -1, cv2.LINE_AA)
        else:
            half = rng.integers(3, size // 5, size=2)
            corner1 = (int(center[0] - half[0]), int(center[1] - half[1]))
            corner2 = (int(center[0] + half[0]), int(center[1] + half[1]))
            cv2.rectangle(canvas, corner1, corner2, color, -1, cv2.LINE_AA)
    return canvas


def jitter(image: np.ndarray, seed: int) -> np.ndarray:
    """Small seeded shift and brightness gain; the per-image nuisance variation."""
    rng = np.random.default_rng(seed)
    dx, dy = (int(v) for v in rng.integers(-_MAX_SHIFT, _MAX_SHIFT + 1, size=2))
    gain = rng.uniform(0.9, 1.1)
    height, width = image.shape[:2]
    shift = np.float32([[1, 0, dx], [0, 1, dy]])
    moved = cv2.warpAffine(image, shift, (width, height), borderMode=cv2.BORDER_REFLECT_101)
    return np.clip(moved.astype(np.float64) * gain, 0, 255).astype(np.uint8)


def image_plan(index: int, kinds: Sequence[str], severities: Sequence[float]) -> Tuple[str, float]:
    """Degradation kind and severity for the index-th image of an identity."""
    severity = severities[index % len(severities)]
    kind = kinds[(index // len(severities)) % len(kinds)]
    return kind, severity


def render_image(identity: str, index: int, kind: str, severity: float, seed: int,
                 degradation: DegradationConfig) -> np.ndarray:
    image_id = f"{identity}_{index:03d}"
    item_seed = derive_seed(seed, image_id)
    clean = jitter(identity_pattern(identity, seed), item_seed)
    spec = DegradationSpec.from_config(kind, severity, degradation, seed=item_seed % (1 << 32))
    return degrade(clean, spec)


def synthesize_dataset(out_dir: PathLike, num_identities: int, images_per_identity: int,
                       kinds: Sequence[str] = KINDS,
                       severities: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                       seed: int = 0, degradation: Optional[DegradationConfig] = None,
                       template_size: int = 5, jobs: int = 1) -> List[ManifestRecord]:
    """Write PNGs under out_dir/<identity>/ and return their manifest records (paths relative to out_dir)."""
    if num_identities < 2 or images_per_identity < 2:
        raise ValueError(f"synthesis needs at least 2 identities and 2 images each, got "
                         f"{num_identities} x {images_per_identity}")
    unknown = [k for k in kinds if k not in KINDS]
    if unknown:
        raise ValueError(f"unknown degradation kind {unknown[0]!r}; expected one of {KINDS}")
    if not severities:
        raise ValueError("severity grid is empty")
    degradation = degradation or DegradationConfig()
    out_dir = Path(out_dir)

    records = []
    for i in range(num_identities):
        identity = f"id{i:03d}"
        for j in range(images_per_identity):
            kind, severity = image_plan(j, kinds, severities)
            image_id = f"{identity}_{j:03d}"
            records.append(ManifestRecord(
                image_id=image_id,
                path=f"{identity}/{image_id}.png",
                identity=identity,
                template_id=f"{identity}_t{j // template_size:02d}",
                degradation=kind,
                severity=severity,
            ))

    def write(record: ManifestRecord) -> None:
        index = int(record.image_id.rsplit("_", 1)[1])
        image = render_image(record.identity, index, record.degradation, record.severity,
                             seed, degradation)
        write_image(out_dir / record.path, image)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        list(pool.map(write, records))
    logger.info(f"Synthesized {len(records)} images of {num_identities} identities under {out_dir}")
    return records
