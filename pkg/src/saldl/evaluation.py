"""Metrics (MAE, cumulative score, per-stage MAE) and the anchor
cosine-similarity analysis over embeddings."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import LabelSupport
from .errors import (
    DegenerateEmbeddingError,
    EmptyInputError,
    InvalidLabelError,
    InvalidParameterError,
    ShapeError,
)
from .staging import StagePartition

SIMILARITY_AGGREGATIONS = ("pairwise", "mean_embedding")


def _check_pair(preds, labels):
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ShapeError(f"preds {preds.shape} and labels {labels.shape} disagree")
    if preds.size == 0:
        raise EmptyInputError("no samples to score")
    return preds, labels


def mae(preds, labels) -> float:
    """Mean absolute error in years."""
    preds, labels = _check_pair(preds, labels)
    return float(np.mean(np.abs(preds - labels)))


def cumulative_score(preds, labels, threshold: float) -> float:
    """Percentage of samples with absolute error at most ``threshold``
    (inclusive comparison)."""
    if threshold < 0:
        raise InvalidParameterError(f"threshold must be >= 0, got {threshold}")
    preds, labels = _check_pair(preds, labels)
    return float(100.0 * np.mean(np.abs(preds - labels) <= threshold))


def per_stage_mae(preds, labels, partition: StagePartition) -> list[float | None]:
    """MAE restricted to each stage's labels; ``None`` marks empty stages."""
    preds, labels = _check_pair(preds, labels)
    stage_idx = np.array([partition.stage_of(int(v)) for v in labels])
    out: list[float | None] = []
    for s in range(partition.k):
        mask = stage_idx == s
        out.append(float(np.mean(np.abs(preds[mask] - labels[mask])))
                   if mask.any() else None)
    return out


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    cs: dict[float, float]
    n: int
    per_stage_mae: list[float | None]

    def to_dict(self) -> dict:
        return {"mae": self.mae, "n": self.n,
                "cs": {repr(float(t)): v for t, v in sorted(self.cs.items())},
                "per_stage_mae": self.per_stage_mae}

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerow(["mae", repr(float(self.mae))])
            writer.writerow(["n", self.n])
            for t in sorted(self.cs):
                writer.writerow([f"cs_{t:g}", repr(float(self.cs[t]))])
            for s, v in enumerate(self.per_stage_mae):
                writer.writerow([f"mae_stage_{s}",
                                 "" if v is None else repr(float(v))])


def compute_metrics(preds, labels, partition: StagePartition,
                    cs_thresholds=(5.0,)) -> MetricsReport:
    preds, labels = _check_pair(preds, labels)
    return MetricsReport(
        mae=mae(preds, labels),
        cs={float(t): cumulative_score(preds, labels, float(t)) for t in cs_thresholds},
        n=int(preds.size),
        per_stage_mae=per_stage_mae(preds, labels, partition),
    )


@dataclass(frozen=True)
class SimilarityCurve:
    """Mean cosine similarity between one anchor label's embeddings and every
    other label's embeddings; labels with no samples carry ``None``."""

    anchor: int
    values: tuple[float | None, ...]
    counts: tuple[int, ...]
    support: LabelSupport

    def value_at(self, label: int) -> float | None:
        return self.values[self.support.index_of(label)]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label", "mean_cos", "count"])
            for label, value, count in zip(self.support.labels(), self.values,
                                           self.counts):
                if count > 0:
                    writer.writerow([int(label), repr(float(value)), count])


def anchor_similarity_curve(embeddings, labels, anchor: int,
                            support: LabelSupport | None = None,
                            aggregation: str = "pairwise") -> SimilarityCurve:
    """Per-label mean cosine similarity against the anchor label's embeddings.

    ``pairwise`` averages the cosine over all cross pairs (anchor-vs-anchor
    drops self pairs when the anchor has several samples); ``mean_embedding``
    compares mean normalized embeddings instead.
    """
    if aggregation not in SIMILARITY_AGGREGATIONS:
        raise InvalidParameterError(
            f"aggregation must be one of {SIMILARITY_AGGREGATIONS}")
    support = support or LabelSupport()
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64)
    if emb.ndim != 2 or emb.shape[0] != lab.shape[0]:
        raise ShapeError(f"embeddings {emb.shape} and labels {lab.shape} disagree")
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("zero-norm embedding has no direction")
    unit = emb / norms[:, None]

    anchor_idx = support.index_of(anchor)
    anchor_mask = lab == anchor
    if not anchor_mask.any():
        raise InvalidLabelError(f"anchor label {anchor} has no samples")
    a = unit[anchor_mask]

    values: list[float | None] = []
    counts: list[int] = []
    for label in support.labels():
        mask = lab == label
        m = int(mask.sum())
        counts.append(m)
        if m == 0:
            values.append(None)
            continue
        b = unit[mask]
        if aggregation == "mean_embedding":
            ma, mb = a.mean(axis=0), b.mean(axis=0)
            na, nb = np.linalg.norm(ma), np.linalg.norm(mb)
            if na == 0.0 or nb == 0.0:
                raise DegenerateEmbeddingError(
                    f"mean embedding for label {int(label)} has zero norm")
            values.append(float(np.clip(np.dot(ma, mb) / (na * nb), -1.0, 1.0)))
            continue
        gram = a @ b.T
        if int(label) - support.min_label == anchor_idx and m > 1:
            val = (gram.sum() - np.trace(gram)) / (m * (m - 1))
        else:
            val = gram.mean()
        values.append(float(np.clip(val, -1.0, 1.0)))

    return SimilarityCurve(anchor=int(anchor), values=tuple(values),
                           counts=tuple(counts), support=support)
