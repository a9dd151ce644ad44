"""Selection-then-verification protocol.

Each template is represented by the recognizer embedding of its single
best-scoring image; template pairs are compared by cosine similarity.
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from ..config import EvaluationConfig
from ..labeling import extract_features
from ..manifest import ManifestRecord
from ..model import Network
from .selection import PairLabel, TemplateGroup, select_templates
from .verification import KFoldResult, VerificationReport, kfold_accuracy, roc, verify_pairs

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class SelectionReport(BaseModel):
    verification: VerificationReport
    kfold: Optional[KFoldResult] = None
    selected: Dict[str, str]


def template_features(recognizer: Network, records: Sequence[ManifestRecord],
                      selected: Mapping[str, str], images_root: Optional[PathLike] = None,
                      jobs: int = 1) -> Dict[str, np.ndarray]:
    """template_id -> embedding of its selected image."""
    by_id = {r.image_id: r for r in records}
    missing = [image_id for image_id in selected.values() if image_id not in by_id]
    if missing:
        raise ValueError(f"selected image {missing[0]} is not in the manifest")
    wanted = sorted(set(selected.values()))
    embeddings = extract_features(recognizer, [by_id[i] for i in wanted], images_root,
                                  jobs=jobs, on_unreadable="abort")
    rows = dict(zip(embeddings.image_ids, embeddings.matrix))
    return {template: rows[image_id] for template, image_id in selected.items()}


def evaluate_selection(recognizer: Network, records: Sequence[ManifestRecord],
                       templates: Sequence[TemplateGroup], pairs: Sequence[PairLabel],
                       scores: Mapping[str, float], config: Optional[EvaluationConfig] = None,
                       images_root: Optional[PathLike] = None, jobs: int = 1,
                       seed: int = 0) -> SelectionReport:
    config = config or EvaluationConfig()
    selected = select_templates(templates, scores)
    features = template_features(recognizer, records, selected, images_root, jobs)
    similarities = verify_pairs(features, pairs)
    labels = np.array([p.same for p in pairs], dtype=bool)
    report = roc(similarities, labels, config.fpr_targets)
    smaller = min(int(labels.sum()), int((~labels).sum()))
    if len(labels) >= config.folds and smaller >= 2:
        kfold = kfold_accuracy(similarities, labels, config.folds, seed)
    else:
        # a class with one member leaves some training split without it
        logger.warning(f"Skipping {config.folds}-fold accuracy: {len(labels)} pairs, "
                       f"smaller class has {smaller}")
        kfold = None
    logger.info(f"Verification over {len(pairs)} pairs: AUC {report.auc:.4f}, "
                + ", ".join(f"TPR@{k}={v:.4f}" for k, v in report.tpr_at.items()))
    return SelectionReport(verification=report, kfold=kfold, selected=selected)
