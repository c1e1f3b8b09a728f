"""Scoring: confusion matrices, support-weighted precision/recall/F1, and
report emission.

Error responses (missing or invalid predictions) are excluded from the
tallies but counted, and the counts surface in every report.
"""

import json
from dataclasses import dataclass

import numpy as np

from .labels import category_of

RESULT_FIELDS = ("sample_id", "truth", "predicted", "status", "reasoning")

REPORT_CSV_HEADER = (
    "category,model,weighted_precision,weighted_recall,weighted_f1,"
    "evaluated_count,excluded_count,config_hash"
)


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple
    counts: np.ndarray  # rows = truth, cols = prediction
    excluded_count: int

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (len(self.labels), len(self.labels)):
            raise ValueError("counts must be square over labels")
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


@dataclass(frozen=True)
class Metrics:
    labels: tuple
    precision: tuple
    recall: tuple
    f1: tuple
    support: tuple
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    zero_division_labels: tuple  # classes never predicted: precision pinned to 0


def confusion(predictions, truths, labels) -> ConfusionMatrix:
    """Tally aligned (prediction, truth) pairs. Predictions of None or
    outside the label set count as excluded error responses."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must align")
    labels = tuple(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    excluded = 0
    for pred, truth in zip(predictions, truths):
        if truth not in index:
            raise ValueError(f"truth label {truth!r} not in label set")
        if pred is None or pred not in index:
            excluded += 1
            continue
        counts[index[truth], index[pred]] += 1
    return ConfusionMatrix(labels=labels, counts=counts, excluded_count=excluded)


def weighted_metrics(cm: ConfusionMatrix) -> Metrics:
    counts = np.asarray(cm.counts, dtype=np.float64)
    if counts.sum() == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(counts)
    colsum = counts.sum(axis=0)
    rowsum = counts.sum(axis=1)
    precision = np.where(colsum > 0, diag / np.maximum(colsum, 1.0), 0.0)
    recall = np.where(rowsum > 0, diag / np.maximum(rowsum, 1.0), 0.0)
    pr = precision + recall
    f1 = np.where(pr > 0, 2.0 * precision * recall / np.maximum(pr, 1e-300), 0.0)
    support = rowsum
    total = support.sum()
    zero_div = tuple(
        lab for lab, cs in zip(cm.labels, colsum) if cs == 0
    )
    # sum the support-weighted numerators before the single divide so a
    # perfect diagonal yields exactly 1.0
    return Metrics(
        labels=cm.labels,
        precision=tuple(float(v) for v in precision),
        recall=tuple(float(v) for v in recall),
        f1=tuple(float(v) for v in f1),
        support=tuple(int(v) for v in support),
        weighted_precision=float(np.sum(support * precision) / total),
        weighted_recall=float(np.sum(support * recall) / total),
        weighted_f1=float(np.sum(support * f1) / total),
        zero_division_labels=zero_div,
    )


# ---------------------------------------------------------------- results io


def write_results(path, rows) -> None:
    """results.jsonl: one {sample_id, truth, predicted, status, reasoning}
    object per line, canonical key order."""
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            rec = {k: row.get(k) for k in RESULT_FIELDS}
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_results(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def score_results(rows, labels) -> tuple:
    """(ConfusionMatrix, Metrics) for one label set from results.jsonl rows."""
    preds = [r.get("predicted") for r in rows]
    truths = [r.get("truth") for r in rows]
    cm = confusion(preds, truths, labels)
    return cm, weighted_metrics(cm)


# ---------------------------------------------------------------- reports


def _fmt(v: float) -> str:
    return f"{v:.4f}"


def report(entries, csv_path, txt_path, config_hash: str = "", seeds=None) -> None:
    """Emit report.csv and report.txt grouped by category.

    entries: list of dicts {category, model, metrics: Metrics,
    excluded_count: int}. Output bytes depend only on the inputs.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("nothing to report")
    categories = []
    for e in entries:
        if e["category"] not in categories:
            categories.append(e["category"])

    csv_lines = [REPORT_CSV_HEADER]
    for cat in categories:
        for e in [x for x in entries if x["category"] == cat]:
            m = e["metrics"]
            evaluated = sum(m.support)
            csv_lines.append(
                f"{cat},{e['model']},{_fmt(m.weighted_precision)},"
                f"{_fmt(m.weighted_recall)},{_fmt(m.weighted_f1)},"
                f"{evaluated},{e['excluded_count']},{config_hash}"
            )
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(csv_lines) + "\n")

    txt = []
    txt.append("Gesture recognition report")
    txt.append("==========================")
    txt.append(f"config_hash: {config_hash}")
    if seeds is not None:
        txt.append(f"seeds: {', '.join(str(s) for s in seeds)}")
    txt.append("averaging: per-class metrics weighted by true-class support")
    txt.append("")
    for cat in categories:
        txt.append(f"[{cat}]")
        txt.append(f"  {'model':<12}{'precision':>11}{'recall':>9}{'F1':>9}"
                   f"{'evaluated':>11}{'excluded':>10}")
        for e in [x for x in entries if x["category"] == cat]:
            m = e["metrics"]
            txt.append(
                f"  {e['model']:<12}{_fmt(m.weighted_precision):>11}"
                f"{_fmt(m.weighted_recall):>9}{_fmt(m.weighted_f1):>9}"
                f"{sum(m.support):>11}{e['excluded_count']:>10}"
            )
            if m.zero_division_labels:
                flagged = ", ".join(m.zero_division_labels)
                txt.append(
                    f"    note: precision forced to 0 for never-predicted: {flagged}"
                )
        txt.append("")
    with open(txt_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(txt) + "\n")


def group_results_by_category(rows) -> dict:
    grouped = {}
    for row in rows:
        cat = category_of(row["truth"])
        grouped.setdefault(cat, []).append(row)
    return grouped
