"""Holdout construction, accuracy / MCC and the per-sector report."""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from .errors import ValidationError

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def holdout_split(dataset, n_test=5):
    """Per company, the `n_test` most recent examples go to test.

    Companies with at most `n_test` examples go entirely to test. Items need
    `company_id` and `call_date` attributes; input order breaks date ties.
    """
    by_company = defaultdict(list)
    for pos, ex in enumerate(dataset):
        by_company[ex.company_id].append((ex.call_date, pos, ex))
    train, test = [], []
    for company in sorted(by_company):
        items = [ex for _, _, ex in sorted(by_company[company], key=lambda x: (x[0], x[1]))]
        if len(items) <= n_test:
            log.warning("company %s has %d examples; all go to test", company, len(items))
            test.extend(items)
        else:
            train.extend(items[:-n_test])
            test.extend(items[-n_test:])
    return train, test


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, predictions, labels):
        tp = tn = fp = fn = 0
        for p, y in zip(predictions, labels):
            if p and y:
                tp += 1
            elif p:
                fp += 1
            elif y:
                fn += 1
            else:
                tn += 1
        return cls(tp, tn, fp, fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ValidationError("accuracy of an empty confusion table")
    return (c.tp + c.tn) / c.total


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal in the denominator is 0."""
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    # integer product keeps the result independent of factor order
    denom = math.sqrt(math.prod(factors))
    return max(-1.0, min(1.0, (c.tp * c.tn - c.fp * c.fn) / denom))


@dataclass(frozen=True)
class SectorRow:
    sector: int
    counts: ConfusionCounts
    accuracy: float
    mcc: float


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    accuracy: float
    mcc: float
    sectors: tuple = field(default_factory=tuple)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "mcc": self.mcc,
            "counts": asdict(self.counts),
            "sectors": [
                {"sector": r.sector, "accuracy": r.accuracy, "mcc": r.mcc, "counts": asdict(r.counts)}
                for r in self.sectors
            ],
        }


def evaluate(predictions, examples) -> EvalReport:
    if len(predictions) != len(examples):
        raise ValidationError(f"{len(predictions)} predictions for {len(examples)} examples")
    if not examples:
        raise ValidationError("cannot evaluate an empty test set")
    per_sector = defaultdict(ConfusionCounts)
    for p, ex in zip(predictions, examples):
        per_sector[ex.sector] += ConfusionCounts.from_predictions([p], [ex.label])
    overall = sum(per_sector.values(), ConfusionCounts())
    rows = tuple(SectorRow(s, c, accuracy(c), mcc(c)) for s, c in sorted(per_sector.items()))
    return EvalReport(overall, accuracy(overall), mcc(overall), rows)


SECTOR_NAMES = (
    "energy",
    "materials",
    "industrials",
    "consumer discretionary",
    "consumer staples",
    "health care",
    "financials",
    "information technology",
    "communication services",
    "utilities",
    "real estate",
)


def format_report(report: EvalReport, title="") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'sector':<26}{'n':>6}{'acc':>9}{'mcc':>9}")
    for r in report.sectors:
        lines.append(f"{SECTOR_NAMES[r.sector]:<26}{r.counts.total:>6}{r.accuracy:>9.4f}{r.mcc:>9.4f}")
    lines.append(f"{'overall':<26}{report.counts.total:>6}{report.accuracy:>9.4f}{report.mcc:>9.4f}")
    return "\n".join(lines)


def metrics_document(report: EvalReport, *, config_hash, dataset_hash, extra=None, created_at=None) -> dict:
    doc = {
        "format_version": REPORT_VERSION,
        "config_hash": config_hash,
        "dataset_hash": dataset_hash,
        "overall": {k: v for k, v in report.to_dict().items() if k != "sectors"},
        "sectors": report.to_dict()["sectors"],
    }
    if extra:
        doc.update(extra)
    if created_at is not None:
        doc["created_at"] = created_at
    return doc


def write_metrics(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
