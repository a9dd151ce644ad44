"""Templates, verification pairs and best-image selection."""

import json
import logging
from itertools import combinations
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..manifest import ManifestRecord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class TemplateGroup(BaseModel):
    model_config = ConfigDict(frozen=True)

    template_id: str
    image_ids: List[str] = Field(min_length=1)

    @field_validator("image_ids")
    @classmethod
    def check_unique(cls, value):
        if len(set(value)) != len(value):
            raise ValueError(f"template members must be unique, got {value}")
        return value


class PairLabel(BaseModel):
    model_config = ConfigDict(frozen=True)

    template_a: str
    template_b: str
    same: bool

    @model_validator(mode="after")
    def check_distinct(self):
        if self.template_a == self.template_b:
            raise ValueError(f"a pair needs two different templates, got {self.template_a} twice")
        return self


def build_templates(records: Sequence[ManifestRecord]) -> List[TemplateGroup]:
    """Group records by template_id (a record without one is its own template); members sorted."""
    groups: Dict[str, List[str]] = {}
    for record in records:
        groups.setdefault(record.template_id or record.image_id, []).append(record.image_id)
    return [TemplateGroup(template_id=t, image_ids=sorted(ids)) for t, ids in sorted(groups.items())]


def template_identities(records: Sequence[ManifestRecord]) -> Dict[str, str]:
    identities: Dict[str, str] = {}
    for record in records:
        template = record.template_id or record.image_id
        known = identities.setdefault(template, record.identity)
        if known != record.identity:
            raise ValueError(f"template {template} mixes identities {known!r} and {record.identity!r}")
    return identities


def make_pairs(templates: Sequence[TemplateGroup], identities: Mapping[str, str],
               negatives_per_positive: int = 4, seed: int = 0) -> List[PairLabel]:
    """Every same-identity template pair plus a seeded sample of different-identity pairs."""
    ids = sorted(t.template_id for t in templates)
    missing = [t for t in ids if t not in identities]
    if missing:
        raise ValueError(f"template {missing[0]} has no identity")
    positives, negatives = [], []
    for a, b in combinations(ids, 2):
        (positives if identities[a] == identities[b] else negatives).append((a, b))
    wanted = min(len(negatives), negatives_per_positive * max(1, len(positives)))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(negatives), size=wanted, replace=False)) if wanted else []
    pairs = [PairLabel(template_a=a, template_b=b, same=True) for a, b in positives]
    pairs += [PairLabel(template_a=negatives[i][0], template_b=negatives[i][1], same=False) for i in chosen]
    logger.info(f"{len(positives)} genuine and {len(chosen)} impostor pairs over {len(ids)} templates")
    return pairs


def select_best(group: TemplateGroup, scores: Mapping[str, float]) -> str:
    """Highest-scoring member; ties go to the lexicographically smallest image_id."""
    missing = [i for i in group.image_ids if i not in scores]
    if missing:
        raise ValueError(f"template {group.template_id}: no score for image {missing[0]}")
    return min(group.image_ids, key=lambda image_id: (-scores[image_id], image_id))


def select_templates(templates: Sequence[TemplateGroup], scores: Mapping[str, float]) -> Dict[str, str]:
    return {t.template_id: select_best(t, scores) for t in templates}


# ---- files ---- #

def _read_jsonl(path: PathLike, model):
    path = Path(path)
    items = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if line.strip():
                try:
                    items.append(model.model_validate_json(line))
                except ValidationError as e:
                    raise ValueError(f"{path}:{number}: {e}") from e
    return items


def _write_jsonl(items, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for item in items:
            f.write((item.model_dump_json() if isinstance(item, BaseModel) else
                     json.dumps(item, sort_keys=True)) + "\n")
    return path


def read_templates(path: PathLike) -> List[TemplateGroup]:
    return _read_jsonl(path, TemplateGroup)


def write_templates(templates: Sequence[TemplateGroup], path: PathLike) -> Path:
    return _write_jsonl(templates, path)


def read_pairs(path: PathLike) -> List[PairLabel]:
    return _read_jsonl(path, PairLabel)


def write_pairs(pairs: Sequence[PairLabel], path: PathLike) -> Path:
    return _write_jsonl(pairs, path)


def write_rows(rows: Sequence[dict], path: PathLike) -> Path:
    return _write_jsonl(rows, path)
