"""Contiguous stage partitions of the label support.

Stages come either from exact 1-D k-means on a label multiset (dynamic
programming over sorted distinct values, so the result is the global
optimum and fully deterministic) or from fixed ten-year intervals.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import LabelSupport
from .errors import EmptyInputError, InvalidLabelError, InvalidParameterError

PROVENANCES = ("kmeans", "decade", "manual")


@dataclass(frozen=True)
class StagePartition:
    """Contiguous, exhaustive grouping of the support into stages.

    ``boundaries`` holds the start label of each stage; stage s covers
    [boundaries[s], boundaries[s+1] - 1], the last stage running to the
    support maximum.
    """

    boundaries: tuple[int, ...]
    support: LabelSupport
    provenance: str

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 1:
            raise InvalidParameterError("partition needs at least one stage")
        if b[0] != self.support.min_label:
            raise InvalidParameterError(
                f"first stage must start at {self.support.min_label}, got {b[0]}"
            )
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise InvalidParameterError(f"boundaries must increase strictly: {b}")
        if b[-1] > self.support.max_label:
            raise InvalidParameterError(
                f"stage start {b[-1]} beyond support max {self.support.max_label}"
            )
        if self.provenance not in PROVENANCES:
            raise InvalidParameterError(f"unknown provenance {self.provenance!r}")

    @property
    def k(self) -> int:
        return len(self.boundaries)

    def stage_of(self, label: int) -> int:
        """Index of the unique stage containing ``label``."""
        if not self.support.contains(label):
            raise InvalidLabelError(
                f"label {label} outside support "
                f"[{self.support.min_label}, {self.support.max_label}]"
            )
        return bisect_right(self.boundaries, label) - 1

    def stage_ranges(self) -> list[tuple[int, int]]:
        """Inclusive (start, end) label range per stage."""
        ends = list(self.boundaries[1:]) + [self.support.max_label + 1]
        return [(start, end - 1) for start, end in zip(self.boundaries, ends)]

    def to_dict(self) -> dict:
        return {"boundaries": list(self.boundaries), "k": self.k,
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict, support: LabelSupport) -> "StagePartition":
        return cls(boundaries=tuple(int(b) for b in d["boundaries"]),
                   support=support, provenance=str(d["provenance"]))


def save_partition(partition: StagePartition, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(partition.to_dict(), fh, indent=2)
        fh.write("\n")


def load_partition(path, support: LabelSupport) -> StagePartition:
    with open(path, encoding="utf-8") as fh:
        return StagePartition.from_dict(json.load(fh), support)


def kmeans_1d(labels: Iterable[int], k: int, support: LabelSupport) -> StagePartition:
    """Globally optimal k-means clustering of a 1-D label multiset.

    Optimal 1-D clusters are contiguous in sorted order, so a dynamic
    program over the distinct sorted values minimizes the within-cluster
    sum of squared deviations exactly. Support labels absent from the data
    are attached to the nearest cluster interval, ties going to the lower
    stage, which makes the partition total over the support.
    """
    labels = [int(x) for x in labels]
    if not labels:
        raise EmptyInputError("cannot cluster an empty label multiset")
    for x in labels:
        if not support.contains(x):
            raise InvalidLabelError(
                f"label {x} outside support "
                f"[{support.min_label}, {support.max_label}]"
            )
    counts = Counter(labels)
    values = sorted(counts)
    m = len(values)
    if k < 1 or k > m:
        raise InvalidParameterError(
            f"k must lie in [1, {m}] for {m} distinct labels, got {k}"
        )

    v = np.array(values, dtype=np.float64)
    c = np.array([counts[x] for x in values], dtype=np.float64)
    cw = np.concatenate(([0.0], np.cumsum(c)))
    cv = np.concatenate(([0.0], np.cumsum(c * v)))
    cv2 = np.concatenate(([0.0], np.cumsum(c * v * v)))

    def cost(i: int, j: int) -> float:
        # weighted SSE of values[i..j] inclusive
        n = cw[j + 1] - cw[i]
        s = cv[j + 1] - cv[i]
        s2 = cv2[j + 1] - cv2[i]
        return s2 - s * s / n

    inf = float("inf")
    dp = np.full((k + 1, m), inf)
    back = np.zeros((k + 1, m), dtype=np.int64)
    for j in range(m):
        dp[1, j] = cost(0, j)
    for kk in range(2, k + 1):
        for j in range(kk - 1, m):
            best, best_i = inf, kk - 1
            for i in range(kk - 1, j + 1):
                val = dp[kk - 1, i - 1] + cost(i, j)
                if val < best:  # strict: earliest split wins ties
                    best, best_i = val, i
            dp[kk, j] = best
            back[kk, j] = best_i

    # recover cluster start indices into the distinct-value array
    starts = []
    j = m - 1
    for kk in range(k, 0, -1):
        i = int(back[kk, j]) if kk > 1 else 0
        starts.append(i)
        j = i - 1
    starts.reverse()

    boundaries = [support.min_label]
    for t in range(1, k):
        upper_end = values[starts[t] - 1]   # largest value of cluster t-1
        lower_start = values[starts[t]]     # smallest value of cluster t
        # gap labels closer to the lower cluster stay there; ties go low
        boundaries.append((upper_end + lower_start) // 2 + 1)
    return StagePartition(boundaries=tuple(boundaries), support=support,
                          provenance="kmeans")


def decade_partition(support: LabelSupport) -> StagePartition:
    """Ten-label stages from the support minimum; a short tail merges into
    the final full stage."""
    n_full = support.size // 10
    if n_full == 0:
        starts = [support.min_label]
    else:
        starts = [support.min_label + 10 * i for i in range(n_full)]
    return StagePartition(boundaries=tuple(starts), support=support,
                          provenance="decade")


def stage_of(partition: StagePartition, label: int) -> int:
    return partition.stage_of(label)
