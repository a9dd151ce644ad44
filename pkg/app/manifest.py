"""Manifests: one JSON object per line describing an image.

Paths are stored relative to an images root (the --images directory); the
same manifest can then move with its images.
"""

import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Separates an image id from its duplicate counter in oversampled manifests.
DUPLICATE_SEP = "#"


class ManifestRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_id: str = Field(min_length=1)
    path: str
    identity: str
    template_id: Optional[str] = None
    raw_cosine: Optional[float] = Field(default=None, ge=-1.0, le=1.0)
    score: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    # Synthetic data: applied degradation and its severity.
    degradation: Optional[str] = None
    severity: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    @property
    def source_id(self) -> str:
        """The original image id of an oversampled duplicate (id#k -> id)."""
        return self.image_id.split(DUPLICATE_SEP, 1)[0]

    def resolve(self, images_root: Optional[PathLike] = None) -> Path:
        path = Path(self.path)
        if images_root is None or path.is_absolute():
            return path
        return Path(images_root) / path


def check_unique(records: Sequence[ManifestRecord], source: str = "manifest") -> None:
    seen = set()
    for record in records:
        if record.image_id in seen:
            raise ValueError(f"{source}: duplicate image_id {record.image_id!r}")
        seen.add(record.image_id)


def read_manifest(path: PathLike) -> List[ManifestRecord]:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(ManifestRecord.model_validate_json(line))
            except ValidationError as e:
                raise ValueError(f"{path}:{number}: invalid manifest record: {e}") from e
    check_unique(records, str(path))
    logger.debug(f"Read {len(records)} records from {path}")
    return records


def write_manifest(records: Iterable[ManifestRecord], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = list(records)
    check_unique(records, str(path))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(record.model_dump_json(exclude_none=True) + "\n")
    logger.info(f"Wrote {len(records)} records to {path}")
    return path


def to_frame(records: Sequence[ManifestRecord]) -> pd.DataFrame:
    columns = list(ManifestRecord.model_fields)
    return pd.DataFrame([r.model_dump() for r in records], columns=columns)


def identity_counts(records: Sequence[ManifestRecord]) -> pd.Series:
    return to_frame(records)["identity"].value_counts(sort=False)
