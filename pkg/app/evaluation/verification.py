"""Verification metrics over template pairs.

TPR at a target FPR uses the step convention: the largest TPR among
operating points whose FPR does not exceed the target, no interpolation.
The FPR = 0 point (threshold above every similarity) is always included.
"""

from typing import Dict, List, Mapping, Sequence

import numpy as np
from pydantic import BaseModel
from sklearn.metrics import auc, roc_curve

from ..labeling import quality_score
from .selection import PairLabel

DEFAULT_FPR_TARGETS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
TPR_CONVENTION = "step: max TPR over operating points with FPR <= target"


class VerificationReport(BaseModel):
    fpr: List[float]
    tpr: List[float]
    thresholds: List[float]
    tpr_at: Dict[str, float]
    auc: float
    positives: int
    negatives: int
    convention: str = TPR_CONVENTION


class KFoldResult(BaseModel):
    mean: float
    std: float
    folds: List[float]
    thresholds: List[float]


def fpr_key(target: float) -> str:
    """1e-3 -> "1e-3"."""
    mantissa, exponent = f"{target:e}".split("e")
    return f"{float(mantissa):g}e{int(exponent)}"


def verify_pairs(features: Mapping[str, np.ndarray], pairs: Sequence[PairLabel]) -> np.ndarray:
    """Cosine similarity per pair, in pair order."""
    similarities = np.empty(len(pairs), dtype=np.float64)
    for i, pair in enumerate(pairs):
        for template in (pair.template_a, pair.template_b):
            if template not in features:
                raise ValueError(f"no feature for template {template}")
        similarities[i] = quality_score(features[pair.template_a], features[pair.template_b])
    return similarities


def _labels(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if labels.all() or not labels.any():
        raise ValueError("ROC needs at least one genuine and one impostor pair")
    return labels


def tpr_at_fpr(fpr: np.ndarray, tpr: np.ndarray, target: float) -> float:
    eligible = fpr <= target
    return float(tpr[eligible].max()) if eligible.any() else 0.0


def roc(similarities, labels, fpr_targets: Sequence[float] = DEFAULT_FPR_TARGETS) -> VerificationReport:
    similarities = np.asarray(similarities, dtype=np.float64).reshape(-1)
    labels = _labels(labels)
    if similarities.shape != labels.shape:
        raise ValueError(f"{similarities.size} similarities but {labels.size} labels")
    fpr, tpr, thresholds = roc_curve(labels, similarities, drop_intermediate=False)
    # the "reject everything" point comes back as inf
    thresholds[~np.isfinite(thresholds)] = similarities.max() + 1.0
    return VerificationReport(
        fpr=fpr.tolist(),
        tpr=tpr.tolist(),
        thresholds=thresholds.tolist(),
        tpr_at={fpr_key(t): tpr_at_fpr(fpr, tpr, t) for t in fpr_targets},
        auc=float(auc(fpr, tpr)),
        positives=int(labels.sum()),
        negatives=int((~labels).sum()),
    )


def _best_threshold(similarities: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy-maximizing threshold (same iff sim >= threshold); ties go to the lowest.

    max + 1 stands for rejecting every pair.
    """
    unique = np.unique(similarities)
    candidates = np.append(unique, unique[-1] + 1.0)
    pos = np.sort(similarities[labels])
    neg = np.sort(similarities[~labels])
    true_accepts = len(pos) - np.searchsorted(pos, candidates, side="left")
    true_rejects = np.searchsorted(neg, candidates, side="left")
    accuracy = (true_accepts + true_rejects) / len(labels)
    return float(candidates[int(np.argmax(accuracy))])


def stratified_folds(labels: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Fold number per pair.

    Each class is shuffled and dealt round-robin over the folds, the second
    class picking up where the first stopped, so fold sizes differ by at most
    one and a class with m members lands in min(m, k) different folds.
    """
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    dealt = 0
    for value in (True, False):
        members = rng.permutation(np.flatnonzero(labels == value))
        folds[members] = (dealt + np.arange(len(members))) % k
        dealt += len(members)
    return folds


def kfold_accuracy(similarities, labels, k: int = 10, seed: int = 0) -> KFoldResult:
    """Threshold picked on k-1 folds, accuracy measured on the held-out one."""
    similarities = np.asarray(similarities, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if similarities.shape != labels.shape:
        raise ValueError(f"{similarities.size} similarities but {labels.size} labels")
    if len(labels) < k:
        raise ValueError(f"{k}-fold accuracy needs at least {k} pairs, got {len(labels)}")
    if k < 2:
        raise ValueError(f"k-fold accuracy needs k >= 2, got {k}")
    assignment = stratified_folds(labels, k, seed)
    accuracies, thresholds = [], []
    for number in range(k):
        test = assignment == number
        train = ~test
        if labels[train].all() or not labels[train].any():
            raise ValueError(f"training folds for fold {number + 1} hold a single class")
        threshold = _best_threshold(similarities[train], labels[train])
        predicted = similarities[test] >= threshold
        accuracies.append(float(np.mean(predicted == labels[test])))
        thresholds.append(threshold)
    return KFoldResult(mean=float(np.mean(accuracies)), std=float(np.std(accuracies)),
                       folds=accuracies, thresholds=thresholds)
