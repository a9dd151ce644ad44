"""Controlled image degradations.

Every kind maps severity in [0, 1] linearly onto one distortion parameter,
reaching the configured extreme at severity 1. Severity 0 returns an
unchanged copy.
"""

from typing import get_args

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..config import DegradationConfig, DegradationKind

KINDS = get_args(DegradationKind)


class DegradationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: DegradationKind
    severity: float = Field(ge=0.0, le=1.0)
    seed: int = 0
    max_sigma: float = Field(default=3.0, gt=0)
    min_jpeg_quality: int = Field(default=5, ge=1, le=100)
    max_noise_std: float = Field(default=40.0, gt=0)
    max_patch_fraction: float = Field(default=0.5, gt=0, le=1)
    min_scale: float = Field(default=0.125, gt=0, lt=1)
    fill: int = Field(default=0, ge=0, le=255)

    @classmethod
    def from_config(cls, kind: str, severity: float, config: DegradationConfig,
                    seed: int = 0) -> "DegradationSpec":
        return cls(kind=kind, severity=severity, seed=seed, **config.model_dump())

    @property
    def sigma(self) -> float:
        return self.severity * self.max_sigma

    @property
    def jpeg_quality(self) -> int:
        return int(round(100 - self.severity * (100 - self.min_jpeg_quality)))

    @property
    def noise_std(self) -> float:
        return self.severity * self.max_noise_std

    @property
    def patch_fraction(self) -> float:
        return self.severity * self.max_patch_fraction

    @property
    def scale(self) -> float:
        return 1.0 - self.severity * (1.0 - self.min_scale)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    ok, encoded = cv2.imencode(".jpg", image, [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise ValueError(f"JPEG encoding failed at quality {quality}")
    return cv2.imdecode(encoded, cv2.IMREAD_UNCHANGED)


def _blur(image, spec):
    return cv2.GaussianBlur(image, (0, 0), sigmaX=spec.sigma, sigmaY=spec.sigma,
                            borderType=cv2.BORDER_REFLECT_101)


def _jpeg(image, spec):
    return jpeg_roundtrip(image, spec.jpeg_quality)


def _noise(image, spec):
    rng = np.random.default_rng(spec.seed)
    noisy = image.astype(np.float64) + rng.normal(0.0, spec.noise_std, size=image.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def _occlusion(image, spec):
    """A full-width band of round(patch_fraction * H) rows at a seeded offset."""
    height = image.shape[0]
    rows = int(round(spec.patch_fraction * height))
    out = image.copy()
    if rows:
        top = int(np.random.default_rng(spec.seed).integers(0, height - rows + 1))
        out[top:top + rows] = spec.fill
    return out


def _downscale(image, spec):
    height, width = image.shape[:2]
    small = (max(1, int(round(width * spec.scale))), max(1, int(round(height * spec.scale))))
    reduced = cv2.resize(image, small, interpolation=cv2.INTER_AREA)
    return cv2.resize(reduced, (width, height), interpolation=cv2.INTER_LINEAR)


_APPLY = {
    "gaussian_blur": _blur,
    "jpeg_recompress": _jpeg,
    "gaussian_noise": _noise,
    "occlusion": _occlusion,
    "downscale": _downscale,
}


def degrade(image: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply spec to a uint8 image; deterministic for a given (image, spec)."""
    if spec.kind not in _APPLY:
        raise ValueError(f"unknown degradation kind {spec.kind!r}; expected one of {KINDS}")
    if spec.severity == 0:
        return image.copy()
    return _APPLY[spec.kind](image, spec)
