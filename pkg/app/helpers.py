"""Shared helpers: hashing, seeds, image I/O and preprocessing, artifact metadata."""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_HASH_CHUNK = 1 << 20


def canonical_json(obj) -> bytes:
    """Sorted keys, no whitespace; equal objects always give equal bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("utf-8")


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_HASH_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(seed: int, key: str) -> int:
    """64-bit seed for one item, independent of processing order."""
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def unit_hash(seed: int, key: str) -> float:
    """Uniform value in [0, 1) from (seed, key)."""
    return (derive_seed(seed, key) >> 11) / float(1 << 53)


# ---- images ---- #

def read_image(path: PathLike) -> np.ndarray:
    """Decode to an HxWx3 uint8 BGR array; ValueError when the file can't be decoded."""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise ValueError(f"{path}: unreadable image")
    return image


def write_image(path: PathLike, image: np.ndarray, jpeg_quality: Optional[int] = None) -> Path:
    """PNG by default; .jpg/.jpeg paths are written at jpeg_quality (default 95)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params: List[int] = []
    if path.suffix.lower() in (".jpg", ".jpeg"):
        params = [cv2.IMWRITE_JPEG_QUALITY, int(jpeg_quality or 95)]
    if not cv2.imwrite(str(path), image, params):
        raise OSError(f"{path}: could not write image")
    return path


def preprocess(image: np.ndarray, mean: Sequence[float], std: Sequence[float],
               size: int = 64) -> np.ndarray:
    """BGR uint8 -> RGB, bilinear resize to size x size, [0, 1], then (x - mean) / std, CHW float32."""
    rgb = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    if rgb.shape[:2] != (size, size):
        rgb = cv2.resize(rgb, (size, size), interpolation=cv2.INTER_LINEAR)
    x = rgb.astype(np.float32) / 255.0
    x = (x - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def load_batch(paths: Sequence[PathLike], mean: Sequence[float], std: Sequence[float],
               size: int = 64, jobs: int = 1,
               on_unreadable: str = "skip") -> Tuple[np.ndarray, List[int]]:
    """Decode and preprocess paths on up to `jobs` threads.

    Returns the N x 3 x size x size batch and the indices (into paths) that
    made it in. Unreadable files are logged and skipped, or raise when
    on_unreadable is "abort".
    """
    def load(path):
        try:
            return preprocess(read_image(path), mean, std, size)
        except ValueError as e:
            if on_unreadable == "abort":
                raise
            logger.warning(f"Skipping {e}")
            return None

    if jobs > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            arrays = list(pool.map(load, paths))
    else:
        arrays = [load(p) for p in paths]
    kept = [i for i, a in enumerate(arrays) if a is not None]
    if not kept:
        return np.zeros((0, 3, size, size), dtype=np.float32), []
    return np.stack([arrays[i] for i in kept]), kept


# ---- artifact metadata ---- #

def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_sidecar(path: PathLike, version: str, config: Mapping, inputs: Mapping[str, PathLike],
                  extra: Optional[Mapping] = None) -> Path:
    """Write <path>.meta.json: tool version, effective config and sha256 of every input file."""
    meta = {
        "version": version,
        "config": dict(config),
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)}
                   for name, p in sorted(inputs.items()) if p is not None},
    }
    if extra:
        meta.update(extra)
    target = sidecar_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(canonical_json(meta) + b"\n")
    return target
