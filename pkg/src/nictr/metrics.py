"""AUC / logloss and per-bucket reports."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auc(scores, labels) -> float:
    """Area under the ROC curve via midranks (ties count one half)."""
    s, y = _check(scores, labels)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def logloss(scores, labels) -> float:
    s, y = _check(scores, labels)
    if ((s <= 0) | (s >= 1)).any():
        raise ValueError("scores must lie in (0, 1)")
    return float(-np.mean(np.where(y == 1, np.log(s), np.log1p(-s))))


@dataclass
class EvalReport:
    auc: float | None
    logloss: float | None
    count: int
    positives: int
    buckets: dict[str, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, labels) -> "EvalReport":
        s, y = _check(scores, labels)
        pos = int(y.sum())
        a = auc(s, y) if 0 < pos < len(y) else None
        ll = logloss(np.clip(s, 1e-12, 1 - 1e-12), y) if len(y) else None
        return cls(a, ll, len(y), pos)

    def rows(self, name: str = "all") -> list[list[str]]:
        def fmt(x):
            return "nan" if x is None else f"{x:.6f}"

        out = [[name, fmt(self.auc), fmt(self.logloss), str(self.count), str(self.positives)]]
        for key, rep in self.buckets.items():
            out.extend(rep.rows(f"bucket:{key}"))
        return out


REPORT_HEADER = ["name", "auc", "logloss", "count", "positives"]


def format_table(rows: Sequence[Sequence[str]], header: Sequence[str] = REPORT_HEADER) -> str:
    return "\n".join("\t".join(r) for r in [list(header), *rows]) + "\n"


def parse_table(text: str) -> list[dict[str, str]]:
    lines = [ln.split("\t") for ln in text.strip().splitlines()]
    head = lines[0]
    return [dict(zip(head, ln)) for ln in lines[1:]]


def bucket_label(lo: int, hi: int | None) -> str:
    if hi is None:
        return f">{lo - 1}" if lo > 0 else ">=0"
    return str(lo) if lo == hi else f"{lo}-{hi}"


def cold_start_report(scores, labels, history, boundaries: Sequence[int] = (0, 1, 6, 21)) -> EvalReport:
    """Global report plus one AUC per user-history bucket.

    ``boundaries`` are increasing lower edges: ``(0, 1, 6, 21)`` gives the
    buckets 0, 1-5, 6-20 and >20. Buckets without both classes report no AUC.
    """
    b = list(boundaries)
    if any(x >= y for x, y in zip(b, b[1:])):
        raise ValueError("bucket boundaries must be strictly increasing")
    s, y = _check(scores, labels)
    h = np.asarray(history).reshape(-1)
    report = EvalReport.from_scores(s, y)
    for i, lo in enumerate(b):
        hi = b[i + 1] - 1 if i + 1 < len(b) else None
        sel = (h >= lo) if hi is None else ((h >= lo) & (h <= hi))
        if sel.any():
            report.buckets[bucket_label(lo, hi)] = EvalReport.from_scores(s[sel], y[sel])
        else:
            report.buckets[bucket_label(lo, hi)] = EvalReport(None, None, 0, 0)
    return report
