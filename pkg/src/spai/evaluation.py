"""Dataset manifests, detection metrics, the per-source averaging protocol,
and the perturbation suites used for robustness runs.

Metric conventions: the positive class is "generated" (label 1). AUC is the
Mann-Whitney probability that a random generated score exceeds a random real
score with ties counted half; balanced accuracy averages the two class
recalls at a fixed threshold; average precision is the step-wise sum
``sum (R_k - R_{k-1}) * P_k`` over descending score thresholds.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InvalidDatasetError, InvalidInputError, UndefinedMetricError

LABELS = {"real": 0, "generated": 1}

PERTURBATION_GRID = {
    "jpeg": (85, 70, 50),
    "webp": (85, 70, 50),
    "blur": (3, 5, 7),
    "noise": (1, 3, 5),
    "resize": (85, 70, 50),
}


@dataclass
class ManifestRecord:
    path: str
    label: str
    source: str


def load_manifest(path, check_paths: bool = True) -> list[ManifestRecord]:
    """Read a CSV (header: path,label,source) or JSONL manifest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    if path.suffix.lower() == ".jsonl":
        for line in path.read_text().splitlines():
            if line.strip():
                row = json.loads(line)
                records.append(ManifestRecord(row["path"], row["label"], row["source"]))
    else:
        import csv

        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(ManifestRecord(row["path"], row["label"], row["source"]))
    if not records:
        raise InvalidDatasetError(f"manifest {path} is empty")
    for rec in records:
        if rec.label not in LABELS:
            raise InvalidDatasetError(f"unknown label {rec.label!r} in {path}")
        if check_paths and not Path(rec.path).exists():
            raise InvalidDatasetError(f"missing file referenced by manifest: {rec.path}")
    return records


def write_manifest(records: list[ManifestRecord], path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".jsonl":
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps({"path": rec.path, "label": rec.label, "source": rec.source}) + "\n")
    else:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label", "source"])
            for rec in records:
                writer.writerow([rec.path, rec.label, rec.source])


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InvalidInputError("scores and labels must have the same length")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores contain non-finite values")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    return pos, neg


def auc(scores, labels) -> float:
    """Area under the ROC curve via tie-averaged ranks."""
    pos, neg = _split_classes(scores, labels)
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC needs both classes")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined), dtype=np.float64)
    sorted_scores = combined[order]
    i = 0
    while i < len(combined):
        j = i
        while j + 1 < len(combined) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[: len(pos)].sum()
    u_stat = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return float(u_stat / (len(pos) * len(neg)))


def balanced_accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Mean of true-positive and true-negative rates at a fixed threshold
    (scores strictly above the threshold count as generated)."""
    pos, neg = _split_classes(scores, labels)
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("balanced accuracy needs both classes")
    tpr = float(np.mean(pos > threshold))
    tnr = float(np.mean(neg <= threshold))
    return 0.5 * (tpr + tnr)


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores contain non-finite values")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    tp = fp = 0
    prev_recall = 0.0
    total = 0.0
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int((sorted_labels[i : j + 1] == 1).sum())
        fp += (j - i + 1) - int((sorted_labels[i : j + 1] == 1).sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        total += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return float(total)


def _gaussian_kernel(ksize: int) -> np.ndarray:
    # Kernel-size-to-sigma convention used when only k is specified.
    sigma = 0.3 * ((ksize - 1) / 2.0 - 1.0) + 0.8
    x = np.arange(ksize, dtype=np.float64) - (ksize - 1) / 2.0
    kernel = np.exp(-(x**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def perturb(
    image: np.ndarray,
    kind: str,
    severity: float,
    rng: np.random.Generator | None = None,
    strict: bool = True,
) -> np.ndarray:
    """Apply one of the robustness perturbations to a uint8 image.

    Kinds and their severity grids: jpeg/webp quality {85, 70, 50}, blur
    kernel size {3, 5, 7}, noise std {1, 3, 5} (0-255 scale), resize percent
    {85, 70, 50}. ``strict=False`` lifts the grid restriction. Noise draws
    from ``rng`` (seeded default); everything else is deterministic.
    """
    if kind not in PERTURBATION_GRID:
        raise InvalidInputError(
            f"unknown perturbation kind {kind!r}; expected one of {sorted(PERTURBATION_GRID)}"
        )
    if strict and severity not in PERTURBATION_GRID[kind]:
        raise InvalidInputError(
            f"severity {severity} not in the {kind} grid {PERTURBATION_GRID[kind]} "
            "(pass strict=False for arbitrary values)"
        )
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise InvalidInputError("perturb expects a uint8 image")

    if kind in ("jpeg", "webp"):
        buf = io.BytesIO()
        Image.fromarray(image).save(buf, format=kind.upper(), quality=int(severity))
        return np.asarray(Image.open(buf).convert("RGB" if image.ndim == 3 else "L"))
    if kind == "blur":
        kernel = _gaussian_kernel(int(severity))
        out = image.astype(np.float64)
        out = ndimage.convolve1d(out, kernel, axis=0, mode="reflect")
        out = ndimage.convolve1d(out, kernel, axis=1, mode="reflect")
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    if kind == "noise":
        rng = rng or np.random.default_rng(0)
        noisy = image.astype(np.float64) + rng.normal(0.0, float(severity), size=image.shape)
        return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    # resize
    factor = float(severity) / 100.0
    h, w = image.shape[:2]
    new_h, new_w = int(h * factor), int(w * factor)
    if new_h < 1 or new_w < 1:
        raise InvalidInputError(f"resize factor {severity}% collapses the image")
    pil = Image.fromarray(image).resize((new_w, new_h), Image.Resampling.BILINEAR)
    return np.asarray(pil)


@dataclass
class MetricsReport:
    """Per-(generator, real source) metric cells plus the averaging
    pyramid: per-generator means over real sources, then the grand mean."""

    cells: dict = field(default_factory=dict)  # (generator, real_source) -> dict | None
    per_generator: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def has_errors(self) -> bool:
        return any(v is None for v in self.cells.values())

    def to_json(self) -> str:
        return json.dumps(
            {
                "cells": {f"{g}|{r}": v for (g, r), v in self.cells.items()},
                "per_generator": self.per_generator,
                "overall": self.overall,
                "metadata": self.metadata,
            },
            indent=2,
        )

    def render_table(self, metric: str = "auc") -> str:
        generators = sorted({g for g, _ in self.cells})
        sources = sorted({r for _, r in self.cells})
        width = max([len(g) for g in generators] + [9]) + 2
        header = "generator".ljust(width) + "".join(s.rjust(12) for s in sources) + "avg".rjust(12)
        lines = [header, "-" * len(header)]
        for g in generators:
            row = g.ljust(width)
            for r in sources:
                cell = self.cells.get((g, r))
                row += ("n/a" if cell is None else f"{cell[metric]:.3f}").rjust(12)
            avg = self.per_generator.get(g, {}).get(metric)
            row += ("n/a" if avg is None else f"{avg:.3f}").rjust(12)
            lines.append(row)
        grand = self.overall.get(metric)
        lines.append("")
        lines.append(f"grand average {metric}: " + ("n/a" if grand is None else f"{grand:.4f}"))
        return "\n".join(lines)


def _cell_metrics(scores, labels) -> dict:
    return {
        "auc": auc(scores, labels),
        "balanced_accuracy": balanced_accuracy(scores, labels),
        "average_precision": average_precision(scores, labels),
    }


def evaluate_detector(
    records: list[ManifestRecord],
    scorer,
    perturbation: tuple[str, float] | None = None,
    seed: int = 0,
) -> MetricsReport:
    """Score every manifest image once and aggregate metrics per
    (generator, real source) cell.

    ``scorer`` maps a uint8 (H, W, C) array to a score in [0, 1]. Each
    generated source is paired with each real source, metrics are averaged
    over real sources per generator, then over generators. A cell whose
    metrics fail is reported as null and excluded from averages with a
    warning.
    """
    generated = {}
    real = {}
    for rec in records:
        (generated if LABELS[rec.label] == 1 else real).setdefault(rec.source, []).append(rec)
    if not generated or not real:
        raise InvalidDatasetError("need at least one generated and one real source")

    rng = np.random.default_rng(seed)
    scores: dict[str, float] = {}
    for rec in records:
        if rec.path in scores:
            continue
        image = np.asarray(Image.open(rec.path).convert("RGB"))
        if perturbation is not None:
            image = perturb(image, perturbation[0], perturbation[1], rng=rng)
        scores[rec.path] = float(scorer(image))

    report = MetricsReport(
        metadata={
            "perturbation": list(perturbation) if perturbation else None,
            "generators": sorted(generated),
            "real_sources": sorted(real),
            "images": len(scores),
        }
    )
    metric_names = ("auc", "balanced_accuracy", "average_precision")
    for g, g_recs in sorted(generated.items()):
        cell_values = []
        for r, r_recs in sorted(real.items()):
            cell_scores = [scores[rec.path] for rec in g_recs] + [scores[rec.path] for rec in r_recs]
            cell_labels = [1] * len(g_recs) + [0] * len(r_recs)
            try:
                cell = _cell_metrics(cell_scores, cell_labels)
            except (UndefinedMetricError, InvalidInputError) as exc:
                warnings.warn(f"cell ({g}, {r}) failed: {exc}; excluded from averages")
                cell = None
            report.cells[(g, r)] = cell
            if cell is not None:
                cell_values.append(cell)
        if cell_values:
            report.per_generator[g] = {
                m: float(np.mean([c[m] for c in cell_values])) for m in metric_names
            }
        else:
            report.per_generator[g] = {m: None for m in metric_names}
    valid = [v for v in report.per_generator.values() if v["auc"] is not None]
    report.overall = {
        m: (float(np.mean([v[m] for v in valid])) if valid else None) for m in metric_names
    }
    return report
