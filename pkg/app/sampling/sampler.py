"""Identity filtering and score-balancing samplers.

smooth_sample flattens the score histogram: every nonempty bin is pulled
toward a common per-bin target m = round(budget / nonempty bins). Bins in
the lowest low_fraction and highest high_fraction of the score range may
be oversampled (with replacement, capped at max_oversample_factor times
their size); the middle bins are only ever downsampled. Duplicates get
ids of the form <image_id>#<k>.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..config import SamplerConfig
from ..manifest import DUPLICATE_SEP, ManifestRecord, identity_counts, to_frame

logger = logging.getLogger(__name__)


class Histogram(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    edges: np.ndarray
    counts: np.ndarray

    @property
    def num_bins(self) -> int:
        return len(self.counts)

    @property
    def nonempty(self) -> np.ndarray:
        return self.counts[self.counts > 0]


def filter_identities(records: Sequence[ManifestRecord], threshold: int) -> List[ManifestRecord]:
    """Keep records whose identity has at least threshold images, in input order."""
    if threshold < 1:
        raise ValueError(f"identity threshold must be >= 1, got {threshold}")
    if not records:
        return []
    counts = identity_counts(records)
    keep = set(counts[counts >= threshold].index)
    kept = [r for r in records if r.identity in keep]
    dropped = len(counts) - len(keep)
    if not kept:
        logger.warning(f"No identity has {threshold} or more images; the filtered manifest is empty")
    elif dropped:
        logger.info(f"Dropped {dropped} of {len(counts)} identities with fewer than {threshold} images")
    return kept


def bin_edges(num_bins: int) -> np.ndarray:
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    return np.arange(num_bins + 1, dtype=np.float64) / num_bins


def bin_index(scores, num_bins: int) -> np.ndarray:
    """Bin i holds [i/B, (i+1)/B); the last bin also holds 1.0."""
    scores = np.asarray(scores, dtype=np.float64)
    index = np.searchsorted(bin_edges(num_bins), scores, side="right") - 1
    return np.clip(index, 0, num_bins - 1)


def _scores(records: Sequence[ManifestRecord]) -> np.ndarray:
    for record in records:
        if record.score is None:
            raise ValueError(f"record {record.image_id} has no quality score")
    return np.array([r.score for r in records], dtype=np.float64)


def bin_scores(records: Sequence[ManifestRecord], num_bins: int = 100) -> Histogram:
    index = bin_index(_scores(records), num_bins)
    counts = np.bincount(index, minlength=num_bins).astype(np.int64)
    return Histogram(edges=bin_edges(num_bins), counts=counts)


def flatness_ratio(histogram: Histogram) -> float:
    """max / min over nonempty bins; 1.0 is perfectly flat."""
    nonempty = histogram.nonempty
    if nonempty.size == 0:
        raise ValueError("flatness_ratio needs at least one nonempty bin")
    return float(nonempty.max() / nonempty.min())


def summarize_histogram(histogram: Histogram) -> Dict[str, object]:
    nonempty = histogram.nonempty
    return {
        "num_bins": histogram.num_bins,
        "total": int(histogram.counts.sum()),
        "nonempty_bins": int(nonempty.size),
        "min_count": int(nonempty.min()) if nonempty.size else 0,
        "max_count": int(nonempty.max()) if nonempty.size else 0,
        "flatness_ratio": flatness_ratio(histogram) if nonempty.size else None,
        "counts": [int(c) for c in histogram.counts],
    }


def _duplicate(record: ManifestRecord, k: int) -> ManifestRecord:
    return record.model_copy(update={"image_id": f"{record.image_id}{DUPLICATE_SEP}{k}"})


def _assemble(records: Sequence[ManifestRecord], chosen: np.ndarray,
              extra: np.ndarray) -> List[ManifestRecord]:
    """Chosen originals in input order, each followed by its duplicates."""
    copies: Dict[int, int] = {}
    for position in extra:
        copies[int(position)] = copies.get(int(position), 0) + 1
    originals = {int(p) for p in chosen}
    out = []
    for position in sorted(originals | set(copies)):
        if position in originals:
            out.append(records[position])
        for k in range(1, copies.get(position, 0) + 1):
            out.append(_duplicate(records[position], k))
    return out


def region_bounds(config: SamplerConfig) -> tuple:
    """Bins [0, low) are the low region, [high, num_bins) the high region."""
    low = int(round(config.low_fraction * config.num_bins))
    high = config.num_bins - int(round(config.high_fraction * config.num_bins))
    return low, high


def smooth_sample(records: Sequence[ManifestRecord], config: SamplerConfig) -> List[ManifestRecord]:
    """Balance the score histogram toward a flat one (see module docstring)."""
    if not records:
        return []
    frame = to_frame(records)
    frame["bin"] = bin_index(_scores(records), config.num_bins)
    groups = frame.groupby("bin").indices
    budget = config.target_budget or len(records)
    if budget < len(groups):
        raise ValueError(f"target_budget {budget} is smaller than the {len(groups)} nonempty bins")
    per_bin = int(np.floor(budget / len(groups) + 0.5))
    low, high = region_bounds(config)
    middle = 100.0 * (1.0 - config.low_fraction - config.high_fraction)
    logger.info(f"Sampling {len(groups)} nonempty bins toward {per_bin} images each; "
                f"oversampling bins below {low} and from {high}, middle covers {middle:.0f}% of scores")

    rng = np.random.default_rng(config.seed)
    chosen, extra = [], []
    for bin_id in sorted(groups):
        members = np.asarray(groups[bin_id])
        count = len(members)
        if bin_id < low or bin_id >= high:
            target = min(per_bin, int(np.floor(count * config.max_oversample_factor)))
        else:
            target = min(per_bin, count)
        if target <= count:
            chosen.append(rng.choice(members, size=target, replace=False))
        else:
            chosen.append(members)
            extra.append(rng.choice(members, size=target - count, replace=True))
    chosen = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    extra = np.concatenate(extra) if extra else np.zeros(0, dtype=np.int64)
    sampled = _assemble(records, chosen, extra)
    logger.info(f"Smooth sampling: {len(records)} -> {len(sampled)} records "
                f"({len(extra)} duplicates)")
    return sampled


def random_sample(records: Sequence[ManifestRecord], budget: Optional[int] = None,
                  seed: int = 0) -> List[ManifestRecord]:
    """Budget-matched uniform sample; with replacement only for the part beyond len(records)."""
    n = len(records)
    budget = n if budget is None else budget
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    if budget <= n:
        return _assemble(records, rng.choice(n, size=budget, replace=False), np.zeros(0, dtype=np.int64))
    return _assemble(records, np.arange(n), rng.choice(n, size=budget - n, replace=True))
