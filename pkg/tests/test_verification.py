"""Template selection, pair construction and verification metrics."""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.config import EvaluationConfig
from app.evaluation import (PairLabel, TemplateGroup, build_templates, evaluate_selection, fpr_key,
                            kfold_accuracy, make_pairs, read_pairs, roc, select_best, select_templates,
                            template_identities, tpr_at_fpr, verify_pairs, write_pairs)
from app.evaluation.verification import stratified_folds
from app.model import build_recognizer
from tests.conftest import make_record, strict_json


class TestRoc:

    POSITIVE = [0.9, 0.8, 0.4]
    NEGATIVE = [0.7, 0.3, 0.2, 0.1]

    def report(self, targets=(0.1, 0.25)):
        similarities = self.POSITIVE + self.NEGATIVE
        labels = [True] * 3 + [False] * 4
        return roc(similarities, labels, targets)

    def test_tpr_at_fpr_uses_the_step_convention(self):
        assert self.report().tpr_at == pytest.approx({"1e-1": 2 / 3, "2.5e-1": 1.0})

    def test_auc_and_counts(self):
        report = self.report()
        assert report.auc == pytest.approx(11 / 12)
        assert (report.positives, report.negatives) == (3, 4)

    def test_curve_starts_at_origin(self):
        report = self.report()
        assert (report.fpr[0], report.tpr[0]) == (0.0, 0.0)

    def test_target_below_every_operating_point(self):
        similarities = [0.5, 0.9]
        assert roc(similarities, [True, False], [1e-3]).tpr_at["1e-3"] == 0.0

    def test_needs_both_classes(self):
        with pytest.raises(ValueError, match="at least one genuine and one impostor"):
            roc([0.5, 0.6], [True, True])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="3 similarities but 2 labels"):
            roc([0.1, 0.2, 0.3], [True, False])

    def test_thresholds_are_finite_json(self):
        report = roc([0.9, 0.6, 0.7, 0.3], [True, True, False, False])
        assert report.thresholds[0] == pytest.approx(1.9)
        text = json.dumps(report.model_dump(mode="json"), allow_nan=False)
        assert strict_json(text)["thresholds"][1] == 0.9

    def test_tpr_never_decreases_along_fpr(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 120))
            labels = rng.uniform(size=n) < 0.5
            labels[:2] = [True, False]
            report = roc(np.round(rng.normal(size=n), 1), labels)
            assert np.all(np.diff(report.fpr) >= 0)
            assert np.all(np.diff(report.tpr) >= 0)

    @pytest.mark.parametrize("target,key", [(1e-3, "1e-3"), (1e-5, "1e-5"), (0.25, "2.5e-1")])
    def test_fpr_key(self, target, key):
        assert fpr_key(target) == key


class TestKFold:

    def test_separable_pairs(self):
        similarities = [0.9] * 10 + [0.1] * 10
        labels = [True] * 10 + [False] * 10
        result = kfold_accuracy(similarities, labels, k=5)
        assert result.mean == 1.0
        assert result.std == 0.0
        assert len(result.folds) == 5
        assert all(t == 0.9 for t in result.thresholds)

    def test_deterministic(self, rng):
        similarities = rng.uniform(size=40)
        labels = rng.uniform(size=40) < 0.5
        assert kfold_accuracy(similarities, labels, k=4, seed=2) == kfold_accuracy(similarities, labels, k=4, seed=2)

    def test_too_few_pairs(self):
        with pytest.raises(ValueError, match="needs at least 10 pairs"):
            kfold_accuracy([0.1, 0.9], [False, True], k=10)

    def test_minority_class_smaller_than_k(self):
        result = kfold_accuracy([0.9, 0.8] + [0.1] * 18, [True, True] + [False] * 18, k=10)
        assert len(result.folds) == 10
        # Only the fold holding the 0.8 genuine pair misses it: its threshold comes from 0.9.
        assert sorted(result.folds) == [0.5] + [1.0] * 9
        assert result.mean == pytest.approx(0.95)

    def test_single_member_class_leaves_a_training_split_without_it(self):
        with pytest.raises(ValueError, match="hold a single class"):
            kfold_accuracy([0.9] + [0.1] * 19, [True] + [False] * 19, k=10)

    def test_k_below_two(self):
        with pytest.raises(ValueError, match="k >= 2"):
            kfold_accuracy([0.9, 0.1], [True, False], k=1)

    def test_constant_scorer_scores_the_class_prior(self):
        """Every fold holds 2 genuine and 6 impostor pairs; rejecting everything wins."""
        labels = [True] * 10 + [False] * 30
        result = kfold_accuracy([0.5] * 40, labels, k=5, seed=3)
        assert result.folds == [0.75] * 5
        assert all(t > 0.5 for t in result.thresholds)

    def test_folds_are_stratified_and_balanced(self, rng):
        labels = rng.uniform(size=53) < 0.3
        folds = stratified_folds(labels, 7, seed=4)
        sizes = np.bincount(folds, minlength=7)
        genuine = np.bincount(folds[labels], minlength=7)
        assert sizes.max() - sizes.min() <= 1
        assert genuine.max() - genuine.min() <= 1
        np.testing.assert_array_equal(folds, stratified_folds(labels, 7, seed=4))


class TestSelection:

    def test_highest_score_wins(self):
        group = TemplateGroup(template_id="t", image_ids=["a", "b", "c"])
        assert select_best(group, {"a": 0.2, "b": 0.7, "c": 0.5}) == "b"

    def test_ties_go_to_smallest_id(self):
        group = TemplateGroup(template_id="t", image_ids=["c", "b", "a"])
        assert select_best(group, {"a": 0.5, "b": 0.7, "c": 0.7}) == "b"

    def test_missing_score(self):
        group = TemplateGroup(template_id="t", image_ids=["a", "b"])
        with pytest.raises(ValueError, match="no score for image b"):
            select_best(group, {"a": 0.5})

    def test_select_templates(self):
        groups = [TemplateGroup(template_id="t1", image_ids=["a", "b"]),
                  TemplateGroup(template_id="t2", image_ids=["c"])]
        assert select_templates(groups, {"a": 0.1, "b": 0.2, "c": 0.0}) == {"t1": "b", "t2": "c"}

    @pytest.mark.parametrize("transform", [np.exp, lambda s: 3 * s - 7, lambda s: s ** 3, np.arctan])
    def test_invariant_under_monotone_transforms(self, rng, transform):
        for _ in range(20):
            ids = [f"img{i}" for i in range(int(rng.integers(1, 12)))]
            group = TemplateGroup(template_id="t", image_ids=ids)
            raw = np.round(rng.normal(size=len(ids)), 1)
            scores = dict(zip(ids, raw.tolist()))
            transformed = dict(zip(ids, transform(raw).tolist()))
            assert select_best(group, transformed) == select_best(group, scores)

    def test_template_members_unique(self):
        with pytest.raises(ValidationError):
            TemplateGroup(template_id="t", image_ids=["a", "a"])


class TestTemplatesAndPairs:

    @pytest.fixture
    def records(self):
        return [make_record(f"{who}{i}", who, template_id=f"{who}_t{i // 2}")
                for who in ("x", "y", "z") for i in range(4)]

    def test_build_templates(self, records):
        templates = build_templates(records)
        assert [t.template_id for t in templates] == ["x_t0", "x_t1", "y_t0", "y_t1", "z_t0", "z_t1"]
        assert templates[0].image_ids == ["x0", "x1"]

    def test_record_without_template_is_its_own(self):
        templates = build_templates([make_record("solo")])
        assert templates == [TemplateGroup(template_id="solo", image_ids=["solo"])]

    def test_mixed_identities_rejected(self):
        records = [make_record("1", "a", template_id="t"), make_record("2", "b", template_id="t")]
        with pytest.raises(ValueError, match="mixes identities"):
            template_identities(records)

    def test_pairs(self, records):
        pairs = make_pairs(build_templates(records), template_identities(records), negatives_per_positive=2)
        genuine = [p for p in pairs if p.same]
        impostor = [p for p in pairs if not p.same]
        assert [(p.template_a, p.template_b) for p in genuine] == [
            ("x_t0", "x_t1"), ("y_t0", "y_t1"), ("z_t0", "z_t1")]
        assert len(impostor) == 6
        assert all(p.template_a.split("_")[0] != p.template_b.split("_")[0] for p in impostor)

    def test_negatives_capped_by_available(self, records):
        pairs = make_pairs(build_templates(records), template_identities(records), negatives_per_positive=100)
        assert sum(not p.same for p in pairs) == 12

    def test_pairs_deterministic(self, records):
        args = build_templates(records), template_identities(records)
        assert make_pairs(*args, seed=5) == make_pairs(*args, seed=5)

    def test_pair_needs_two_templates(self):
        with pytest.raises(ValidationError, match="two different templates"):
            PairLabel(template_a="t", template_b="t", same=True)

    def test_pairs_file(self, tmp_path, records):
        pairs = make_pairs(build_templates(records), template_identities(records))
        assert read_pairs(write_pairs(pairs, tmp_path / "pairs.jsonl")) == pairs

    def test_verify_pairs_missing_template(self):
        with pytest.raises(ValueError, match="no feature for template b"):
            verify_pairs({"a": np.ones(3)}, [PairLabel(template_a="a", template_b="b", same=False)])

    def test_verify_pairs_cosine(self):
        features = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 2.0]), "c": np.array([3.0, 0.0])}
        pairs = [PairLabel(template_a="a", template_b="b", same=False),
                 PairLabel(template_a="a", template_b="c", same=True)]
        np.testing.assert_allclose(verify_pairs(features, pairs), [0.0, 1.0])


class TestEvaluateSelection:
    """Selection then verification on synthetic images with an untrained recognizer."""

    def test_report(self, tiny_dataset):
        root, records = tiny_dataset
        templates = build_templates(records)
        pairs = make_pairs(templates, template_identities(records))
        class_ids = sorted({r.identity for r in records})
        recognizer = build_recognizer(embedding_dim=8, num_classes=len(class_ids), class_ids=class_ids)
        scores = {r.image_id: 1.0 - r.severity for r in records}
        report = evaluate_selection(recognizer, records, templates, pairs, scores,
                                    EvaluationConfig(fpr_targets=[0.1], folds=2), images_root=root)
        assert len(report.selected) == len(templates) == 6
        # Severity 0 is always a template member, and the lowest id among ties.
        assert report.selected["id000_t00"] == "id000_000"
        assert set(report.verification.tpr_at) == {"1e-1"}
        assert 0.0 <= report.verification.auc <= 1.0
        assert report.kfold is not None and len(report.kfold.folds) == 2

    def test_kfold_with_fewer_genuine_pairs_than_folds(self, tiny_dataset):
        """3 genuine and 12 impostor pairs still give a 10-fold estimate."""
        root, records = tiny_dataset
        templates = build_templates(records)
        pairs = make_pairs(templates, template_identities(records))
        class_ids = sorted({r.identity for r in records})
        recognizer = build_recognizer(embedding_dim=8, num_classes=len(class_ids), class_ids=class_ids)
        scores = {r.image_id: 0.5 for r in records}
        report = evaluate_selection(recognizer, records, templates, pairs, scores, images_root=root)
        assert sum(p.same for p in pairs) == 3 and len(pairs) == 15
        assert report.kfold is not None and len(report.kfold.folds) == 10
        assert set(report.verification.tpr_at) == {"1e-1", "1e-2", "1e-3", "1e-4", "1e-5"}

    def test_kfold_skipped_with_fewer_pairs_than_folds(self, tiny_dataset, caplog):
        root, records = tiny_dataset
        templates = build_templates(records)
        pairs = make_pairs(templates, template_identities(records))
        class_ids = sorted({r.identity for r in records})
        recognizer = build_recognizer(embedding_dim=8, num_classes=len(class_ids), class_ids=class_ids)
        scores = {r.image_id: 0.5 for r in records}
        report = evaluate_selection(recognizer, records, templates, pairs, scores,
                                    EvaluationConfig(folds=20), images_root=root)
        assert report.kfold is None
        assert "Skipping 20-fold accuracy" in caplog.text


def brute_force_tpr_at(positives, negatives, target):
    best = 0.0
    for threshold in np.append(np.unique(np.concatenate([positives, negatives])), np.inf):
        fpr = np.count_nonzero(negatives >= threshold) / len(negatives)
        if fpr <= target:
            best = max(best, np.count_nonzero(positives >= threshold) / len(positives))
    return best


class TestRocAgainstBruteForce:
    """Every threshold enumerated directly."""

    def test_hand_example_at_zero_fpr(self):
        report = roc([0.9, 0.6, 0.7, 0.3], [True, True, False, False], [0.5])
        assert tpr_at_fpr(np.array(report.fpr), np.array(report.tpr), 0.0) == 0.5
        assert report.tpr_at["5e-1"] == 1.0

    def test_random_instances(self, rng):
        targets = (0.0, 0.01, 0.1, 0.3)
        for _ in range(100):
            n = int(rng.integers(4, 200))
            similarities = np.round(rng.uniform(-1, 1, size=n), 2)
            labels = rng.uniform(size=n) < 0.4
            labels[:2] = [True, False]
            report = roc(similarities, labels, targets)
            for target in targets:
                expected = brute_force_tpr_at(similarities[labels], similarities[~labels], target)
                assert tpr_at_fpr(np.array(report.fpr), np.array(report.tpr), target) == expected

    def test_negated_similarities_flip_auc(self, rng):
        similarities = rng.normal(size=300)
        labels = rng.uniform(size=300) < 0.5
        assert roc(-similarities, labels).auc == pytest.approx(1.0 - roc(similarities, labels).auc)

    def test_random_labels_give_chance_accuracy(self, rng):
        similarities = rng.normal(size=4000)
        labels = rng.uniform(size=4000) < 0.5
        assert 0.45 <= kfold_accuracy(similarities, labels, k=10, seed=1).mean <= 0.55
