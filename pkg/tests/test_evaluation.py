"""Manifests, the three detection metrics against brute-force oracles, the
perturbation suites, and the per-source averaging protocol."""

import numpy as np
import pytest
from PIL import Image

from spai.errors import InvalidDatasetError, InvalidInputError, UndefinedMetricError
from spai.evaluation import (
    ManifestRecord,
    auc,
    average_precision,
    balanced_accuracy,
    evaluate_detector,
    load_manifest,
    perturb,
    write_manifest,
)

from conftest import random_uint8_image
from oracles import (
    auc_pairwise,
    average_precision_sweep,
    balanced_accuracy_confusion,
)


def random_fixture(rng, n_max=30, tie_prone=False):
    n = int(rng.integers(4, n_max))
    labels = np.zeros(n, dtype=int)
    labels[: max(1, n // 3)] = 1
    rng.shuffle(labels)
    if labels.sum() == 0:
        labels[0] = 1
    if labels.sum() == n:
        labels[-1] = 0
    if tie_prone:
        scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=n)
    else:
        scores = rng.uniform(0, 1, size=n)
    return scores.tolist(), labels.tolist()


class TestManifests:
    def test_csv_round_trip(self, tmp_path):
        img = tmp_path / "a.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(img)
        records = [ManifestRecord(str(img), "real", "cam")]
        write_manifest(records, tmp_path / "m.csv")
        assert load_manifest(tmp_path / "m.csv") == records

    def test_jsonl_round_trip(self, tmp_path):
        img = tmp_path / "a.png"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(img)
        records = [ManifestRecord(str(img), "generated", "gan")]
        write_manifest(records, tmp_path / "m.jsonl")
        assert load_manifest(tmp_path / "m.jsonl") == records

    def test_missing_referenced_file(self, tmp_path):
        write_manifest([ManifestRecord("gone.png", "real", "cam")], tmp_path / "m.csv")
        with pytest.raises(InvalidDatasetError):
            load_manifest(tmp_path / "m.csv")
        load_manifest(tmp_path / "m.csv", check_paths=False)  # opt-out works

    def test_bad_label(self, tmp_path):
        (tmp_path / "m.csv").write_text("path,label,source\nx.png,synthetic,gan\n")
        with pytest.raises(InvalidDatasetError):
            load_manifest(tmp_path / "m.csv", check_paths=False)

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "m.csv").write_text("path,label,source\n")
        with pytest.raises(InvalidDatasetError):
            load_manifest(tmp_path / "m.csv")


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_constant_scores_give_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_matches_pairwise_oracle_exactly(self, rng):
        for i in range(50):
            scores, labels = random_fixture(rng, tie_prone=(i % 2 == 0))
            assert auc(scores, labels) == auc_pairwise(scores, labels)

    def test_invariant_under_monotone_transform(self, rng):
        for _ in range(10):
            scores, labels = random_fixture(rng)
            cubed = [s**3 for s in scores]
            assert auc(scores, labels) == pytest.approx(auc(cubed, labels), abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.9], [1, 1])


class TestBalancedAccuracy:
    def test_perfect_classifier(self):
        assert balanced_accuracy([0.1, 0.9, 0.2, 0.8], [0, 1, 0, 1]) == 1.0

    def test_all_predicted_real(self):
        assert balanced_accuracy([0.4, 0.4, 0.4], [0, 1, 1]) == 0.5

    def test_matches_confusion_matrix_count(self, rng):
        for _ in range(50):
            scores, labels = random_fixture(rng, n_max=20)
            assert balanced_accuracy(scores, labels) == pytest.approx(
                balanced_accuracy_confusion(scores, labels), abs=1e-12
            )

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            balanced_accuracy([0.1, 0.9], [0, 0])


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision([0.1, 0.2, 0.9, 0.8], [0, 0, 1, 1]) == 1.0

    def test_single_positive_ranked_last(self):
        assert average_precision([0.9, 0.8, 0.7, 0.1], [0, 0, 0, 1]) == pytest.approx(0.25)

    def test_matches_threshold_sweep(self, rng):
        for i in range(50):
            scores, labels = random_fixture(rng, tie_prone=(i % 2 == 0))
            assert average_precision(scores, labels) == pytest.approx(
                average_precision_sweep(scores, labels), abs=1e-12
            )

    def test_no_positive_undefined(self):
        with pytest.raises(UndefinedMetricError):
            average_precision([0.2, 0.4], [0, 0])


class TestPerturb:
    def test_jpeg_is_lossy_and_smaller(self, rng, tmp_path):
        import io

        img = random_uint8_image(rng, 64, 64)
        png = io.BytesIO()
        Image.fromarray(img).save(png, format="PNG")
        out = perturb(img, "jpeg", 85)
        assert out.shape == img.shape
        assert not np.array_equal(out, img)
        jpg = io.BytesIO()
        Image.fromarray(img).save(jpg, format="JPEG", quality=85)
        assert len(jpg.getvalue()) < len(png.getvalue())

    def test_webp_runs(self, rng):
        out = perturb(random_uint8_image(rng, 32, 32), "webp", 70)
        assert out.shape == (32, 32, 3)

    def test_blur_of_constant_is_identity(self):
        img = np.full((16, 16, 3), 120, dtype=np.uint8)
        np.testing.assert_array_equal(perturb(img, "blur", 3), img)

    def test_blur_is_deterministic(self, rng):
        img = random_uint8_image(rng, 32, 32)
        np.testing.assert_array_equal(perturb(img, "blur", 5), perturb(img, "blur", 5))

    def test_resize_dimensions_exact(self, rng):
        img = random_uint8_image(rng, 225, 113)
        out = perturb(img, "resize", 50)
        assert out.shape[:2] == (225 // 2, 113 // 2)

    def test_noise_is_seeded(self, rng):
        img = random_uint8_image(rng, 16, 16)
        a = perturb(img, "noise", 3, rng=np.random.default_rng(1))
        b = perturb(img, "noise", 3, rng=np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, img)

    def test_unknown_kind_raises(self, rng):
        with pytest.raises(InvalidInputError):
            perturb(random_uint8_image(rng, 8, 8), "sharpen", 1)

    def test_severity_grid_enforced(self, rng):
        img = random_uint8_image(rng, 8, 8)
        with pytest.raises(InvalidInputError):
            perturb(img, "jpeg", 42)
        perturb(img, "jpeg", 42, strict=False)  # allowed with the flag


def _write_images(tmp_path, rng, spec):
    """spec: list of (source, label, count) -> manifest records."""
    records = []
    for source, label, count in spec:
        for i in range(count):
            path = tmp_path / f"{source}_{i}.png"
            Image.fromarray(random_uint8_image(rng, 16, 16)).save(path)
            records.append(ManifestRecord(str(path), label, source))
    return records


class TestEvaluateDetector:
    def test_single_cell_grand_average(self, tmp_path, rng):
        records = _write_images(tmp_path, rng, [("gan", "generated", 3), ("cam", "real", 3)])
        # scorers below identify images by pixel content
        lookup = {}
        for r in records:
            score = 0.9 if r.label == "generated" else 0.1
            lookup[np.asarray(Image.open(r.path)).tobytes()] = score
        report = evaluate_detector(records, lambda image: lookup[image.tobytes()])
        assert report.cells[("gan", "cam")]["auc"] == 1.0
        assert report.overall["auc"] == report.cells[("gan", "cam")]["auc"]

    def test_engineered_cells_match_hand_averages(self, tmp_path, rng):
        records = _write_images(
            tmp_path, rng,
            [("g1", "generated", 2), ("g2", "generated", 2),
             ("r1", "real", 2), ("r2", "real", 2)],
        )
        # g1 separates perfectly from both, g2 only from r1
        fixed = {"g1": 0.9, "g2": 0.6, "r1": 0.1, "r2": 0.6}
        lookup = {}
        for r in records:
            lookup[np.asarray(Image.open(r.path)).tobytes()] = fixed[r.source]
        report = evaluate_detector(records, lambda image: lookup[image.tobytes()])
        assert report.cells[("g1", "r1")]["auc"] == 1.0
        assert report.cells[("g1", "r2")]["auc"] == 1.0
        assert report.cells[("g2", "r1")]["auc"] == 1.0
        assert report.cells[("g2", "r2")]["auc"] == 0.5  # all tied at 0.6
        assert report.per_generator["g1"]["auc"] == 1.0
        assert report.per_generator["g2"]["auc"] == 0.75
        assert report.overall["auc"] == pytest.approx(0.875)

    def test_failed_cell_reported_null_and_excluded(self, tmp_path, rng):
        records = _write_images(
            tmp_path, rng,
            [("g1", "generated", 2), ("r1", "real", 2), ("r2", "real", 2)],
        )
        lookup = {}
        for r in records:
            value = np.nan if r.source == "r2" else (0.9 if r.label == "generated" else 0.1)
            lookup[np.asarray(Image.open(r.path)).tobytes()] = value
        with pytest.warns(UserWarning, match="excluded"):
            report = evaluate_detector(records, lambda image: lookup[image.tobytes()])
        assert report.cells[("g1", "r2")] is None
        assert report.has_errors
        assert report.per_generator["g1"]["auc"] == 1.0  # from the healthy cell

    def test_requires_both_sides(self, tmp_path, rng):
        records = _write_images(tmp_path, rng, [("g1", "generated", 2)])
        with pytest.raises(InvalidDatasetError):
            evaluate_detector(records, lambda image: 0.5)

    def test_deterministic_under_seed(self, tmp_path, rng):
        records = _write_images(tmp_path, rng, [("gan", "generated", 3), ("cam", "real", 3)])
        scorer = lambda image: float(image.astype(np.float64).mean() / 255.0)
        reports = [
            evaluate_detector(records, scorer, perturbation=("noise", 3), seed=11)
            for _ in range(2)
        ]
        assert reports[0].cells == reports[1].cells
        assert reports[0].overall == reports[1].overall

    def test_report_serialization(self, tmp_path, rng):
        records = _write_images(tmp_path, rng, [("gan", "generated", 2), ("cam", "real", 2)])
        lookup = {}
        for r in records:
            lookup[np.asarray(Image.open(r.path)).tobytes()] = 0.9 if r.label == "generated" else 0.1
        report = evaluate_detector(records, lambda image: lookup[image.tobytes()])
        text = report.render_table()
        assert "gan" in text and "grand average" in text
        import json

        payload = json.loads(report.to_json())
        assert payload["overall"]["auc"] == 1.0
        assert payload["cells"]["gan|cam"]["average_precision"] == 1.0
