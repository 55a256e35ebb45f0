"""Threshold-free separability metrics between two score populations.

Convention throughout: positives are the samples that *should* be flagged
(out-of-distribution or misclassified), the score is the normalized
entropy, and higher scores indicate positives. Ties earn half credit in
AUROC, are processed as blocks in AUPR, and the FPR95 threshold is
inclusive (>=).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _checked(scores, name: str) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValidationError(f"{name} population is empty")
    if not np.isfinite(scores).all():
        raise ValidationError(f"{name} population contains non-finite scores")
    return scores


def auroc(positive_scores, negative_scores) -> float:
    """Mann-Whitney statistic: P(pos > neg) + 0.5 P(pos == neg).

    Computed from average ranks; exactly equal to the O(n^2) pairwise
    count for any input.
    """
    pos = _checked(positive_scores, "positive")
    neg = _checked(negative_scores, "negative")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(len(combined))
    sorted_scores = combined[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[: len(pos)].sum()
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def aupr(positive_scores, negative_scores) -> float:
    """Average precision with positives as the high-score class.

    Scores are swept descending; tied scores enter as one block whose
    recall increment is weighted by the precision at the block's end.
    """
    pos = _checked(positive_scores, "positive")
    neg = _checked(negative_scores, "negative")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    is_pos = is_pos[order]

    ap = 0.0
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[j + 1] == scores[i]:
            j += 1
        block_tp = int(is_pos[i : j + 1].sum())
        tp += block_tp
        fp += (j - i + 1) - block_tp
        if block_tp:
            ap += block_tp * (tp / (tp + fp))
        i = j + 1
    return float(ap / len(pos))


def fpr_at_95_tpr(positive_scores, negative_scores, tpr: float = 0.95) -> float:
    """False-positive rate at the largest threshold keeping TPR >= `tpr`.

    The threshold is the k-th largest positive score with k the smallest
    count satisfying k/n_pos >= tpr; the return value is the fraction of
    negative scores >= that threshold.
    """
    pos = _checked(positive_scores, "positive")
    neg = _checked(negative_scores, "negative")
    if not 0.0 < tpr <= 1.0:
        raise ValidationError(f"tpr must be in (0, 1], got {tpr}")
    k = math.ceil(tpr * len(pos))
    while k > 1 and (k - 1) / len(pos) >= tpr:
        k -= 1
    while k / len(pos) < tpr:
        k += 1
    threshold = np.sort(pos)[::-1][k - 1]
    return float(np.mean(neg >= threshold))


def wasserstein1(a, b) -> float:
    """Empirical 1-Wasserstein distance between two samples on the line.

    Exact piecewise integral of the quantile difference, evaluated in CDF
    form: sum over the merged support of |F_a - F_b| times the gap to the
    next value.
    """
    a = np.sort(_checked(a, "first"))
    b = np.sort(_checked(b, "second"))
    values = np.sort(np.concatenate([a, b]), kind="stable")
    deltas = np.diff(values)
    if not len(deltas):
        return 0.0
    cdf_a = np.searchsorted(a, values[:-1], side="right") / len(a)
    cdf_b = np.searchsorted(b, values[:-1], side="right") / len(b)
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


@dataclass
class EntropyHistogramSet:
    """Entropy scores for one in-distribution set and named OOD sets."""

    in_dist: np.ndarray
    out_dists: dict[str, np.ndarray]

    def __post_init__(self):
        self.in_dist = np.asarray(self.in_dist, dtype=np.float64)
        self.out_dists = {k: np.asarray(v, dtype=np.float64) for k, v in self.out_dists.items()}
        for name, arr in [("in_dist", self.in_dist), *self.out_dists.items()]:
            if arr.size and (arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9):
                raise ValidationError(f"{name} entropies must lie in [0, 1]")


@dataclass
class SeparationSummary:
    """td: total in-vs-out transport (larger = better separated);
    od: out-vs-out transport relative to a reference OOD set (smaller =
    OOD sets look more alike)."""

    td: float
    od: float


def td_od(hists: EntropyHistogramSet, reference_out: str) -> SeparationSummary:
    """Summed Wasserstein distances: in-dist to every OOD set (td), and the
    reference OOD set to every other OOD set (od)."""
    if reference_out not in hists.out_dists:
        raise ValidationError(
            f"unknown reference {reference_out!r}; have {sorted(hists.out_dists)}"
        )
    td = sum(wasserstein1(hists.in_dist, out) for out in hists.out_dists.values())
    ref = hists.out_dists[reference_out]
    od = sum(
        wasserstein1(ref, out)
        for name, out in hists.out_dists.items()
        if name != reference_out
    )
    return SeparationSummary(float(td), float(od))


# --------------------------------------------------------------------------
# Report emission


def metric_row(d_in: str, d_out: str, pos, neg) -> dict:
    return {
        "d_in": d_in,
        "d_out": d_out,
        "auroc": auroc(pos, neg),
        "aupr": aupr(pos, neg),
        "fpr95": fpr_at_95_tpr(pos, neg),
        "n_in": int(np.size(neg)),
        "n_out": int(np.size(pos)),
    }


_REPORT_COLUMNS = ["d_in", "d_out", "auroc", "aupr", "fpr95", "n_in", "n_out"]


def _fmt(value) -> str:
    return f"{value:.17g}" if isinstance(value, float) else str(value)


def write_report_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in _REPORT_COLUMNS])


def write_report_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def histogram_rows(hists: EntropyHistogramSet, bins: int = 20) -> list[tuple]:
    """(bin_left, bin_right, count, dataset) rows over [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    named = [("in_dist", hists.in_dist), *sorted(hists.out_dists.items())]
    for name, scores in named:
        counts, _ = np.histogram(np.clip(scores, 0.0, 1.0), bins=edges)
        for k in range(bins):
            rows.append((edges[k], edges[k + 1], int(counts[k]), name))
    return rows


def write_histograms_csv(path, hists: EntropyHistogramSet, bins: int = 20) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count", "dataset"])
        for left, right, count, name in histogram_rows(hists, bins):
            writer.writerow([f"{left:.17g}", f"{right:.17g}", count, name])
