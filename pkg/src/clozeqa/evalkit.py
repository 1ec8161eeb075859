"""Accuracy, paired-model comparison statistics, report emission.

Dual-model comparisons use the four-cell partition (both / only A /
only B / neither), union accuracy as the selection ceiling, and a
two-sided McNemar test: exact binomial up to 25 discordant pairs,
chi-square with continuity correction beyond.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

AGGREGATION_LABELS = ("max/max", "max/sum", "sum/max", "sum/sum")


class EvalError(ValueError):
    """Raised for empty or misaligned evaluation inputs."""


def _as_bitmap(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=bool)
    if arr.ndim != 1:
        raise EvalError("bitmap must be one-dimensional")
    return arr


def accuracy(bitmap) -> float:
    arr = _as_bitmap(bitmap)
    if arr.size == 0:
        raise EvalError("empty bitmap")
    return int(arr.sum()) / arr.size


def union_accuracy(bitmap_a, bitmap_b) -> float:
    a, b = _as_bitmap(bitmap_a), _as_bitmap(bitmap_b)
    if a.shape != b.shape:
        raise EvalError(f"bitmap lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise EvalError("empty bitmap")
    return int((a | b).sum()) / a.size


@dataclass(frozen=True)
class ContingencyTable:
    both: int
    only_a: int
    only_b: int
    neither: int

    @property
    def total(self) -> int:
        return self.both + self.only_a + self.only_b + self.neither

    @property
    def discordant(self) -> int:
        return self.only_a + self.only_b

    @classmethod
    def from_counts(cls, total: int, correct_a: int, correct_b: int, both: int) -> "ContingencyTable":
        only_a = correct_a - both
        only_b = correct_b - both
        neither = total - both - only_a - only_b
        table = cls(both, only_a, only_b, neither)
        if min(only_a, only_b, neither) < 0:
            raise EvalError(f"inconsistent counts: {table}")
        return table


def contingency(bitmap_a, bitmap_b) -> ContingencyTable:
    a, b = _as_bitmap(bitmap_a), _as_bitmap(bitmap_b)
    if a.shape != b.shape:
        raise EvalError(f"bitmap lengths differ: {a.size} vs {b.size}")
    return ContingencyTable(
        both=int((a & b).sum()),
        only_a=int((a & ~b).sum()),
        only_b=int((~a & b).sum()),
        neither=int((~a & ~b).sum()),
    )


EXACT_MCNEMAR_LIMIT = 25


@dataclass(frozen=True)
class McNemarResult:
    p_value: float
    reject: bool
    method: str  # "exact-binomial" | "chi-square-cc"
    alpha: float
    statistic: float | None = None  # chi-square statistic when applicable


def mcnemar(table: ContingencyTable, alpha: float = 0.025) -> McNemarResult:
    """Two-sided McNemar test on the discordant cells.

    Up to EXACT_MCNEMAR_LIMIT discordant pairs the exact doubled binomial
    tail is used (capped at 1); beyond that, the continuity-corrected
    chi-square approximation with one degree of freedom.
    """
    b, c = table.only_a, table.only_b
    n = b + c
    if n == 0:
        return McNemarResult(p_value=1.0, reject=False, method="exact-binomial", alpha=alpha)
    if n <= EXACT_MCNEMAR_LIMIT:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1))
        p = min(1.0, 2.0 * tail / (2**n))
        return McNemarResult(p_value=p, reject=p < alpha, method="exact-binomial", alpha=alpha)
    stat = (abs(b - c) - 1.0) ** 2 / n
    p = math.erfc(math.sqrt(stat / 2.0))  # chi-square(1) survival
    return McNemarResult(p_value=p, reject=p < alpha, method="chi-square-cc", alpha=alpha, statistic=stat)


@dataclass
class EvalRecord:
    """Correctness bitmaps for one model, or an aligned pair of models."""

    bitmap_a: np.ndarray
    bitmap_b: np.ndarray | None = None
    name_a: str = "ModelA"
    name_b: str = "ModelB"
    label: str = ""

    def __post_init__(self):
        self.bitmap_a = _as_bitmap(self.bitmap_a)
        if self.bitmap_a.size == 0:
            raise EvalError("empty bitmap")
        if self.bitmap_b is not None:
            self.bitmap_b = _as_bitmap(self.bitmap_b)
            if self.bitmap_b.shape != self.bitmap_a.shape:
                raise EvalError("paired bitmaps must have equal length")

    @property
    def total(self) -> int:
        return self.bitmap_a.size

    @property
    def accuracy_a(self) -> float:
        return accuracy(self.bitmap_a)

    @property
    def accuracy_b(self) -> float:
        if self.bitmap_b is None:
            raise EvalError("single-model record has no second bitmap")
        return accuracy(self.bitmap_b)

    @property
    def is_pair(self) -> bool:
        return self.bitmap_b is not None

    def table(self) -> ContingencyTable:
        if self.bitmap_b is None:
            raise EvalError("single-model record has no contingency table")
        return contingency(self.bitmap_a, self.bitmap_b)

    def union(self) -> float:
        if self.bitmap_b is None:
            raise EvalError("single-model record has no union accuracy")
        return union_accuracy(self.bitmap_a, self.bitmap_b)

    @classmethod
    def from_counts(
        cls,
        total: int,
        correct_a: int,
        correct_b: int,
        both: int,
        name_a: str = "ModelA",
        name_b: str = "ModelB",
        label: str = "",
    ) -> "EvalRecord":
        """Synthesize bitmaps realizing the four-cell counts exactly."""
        t = ContingencyTable.from_counts(total, correct_a, correct_b, both)
        a = [True] * t.both + [True] * t.only_a + [False] * t.only_b + [False] * t.neither
        b = [True] * t.both + [False] * t.only_a + [True] * t.only_b + [False] * t.neither
        return cls(np.array(a), np.array(b), name_a=name_a, name_b=name_b, label=label)


def bitmap_from_predictions(preds: Sequence[dict]) -> np.ndarray:
    if not preds:
        raise EvalError("no predictions")
    return np.array([p["predicted"] == p["gold"] for p in preds], dtype=bool)


def paired_bitmaps(preds_a: Sequence[dict], preds_b: Sequence[dict]) -> tuple[np.ndarray, np.ndarray]:
    """Align two {id, predicted, gold} lists by id."""
    ids_a = {p["id"] for p in preds_a}
    by_id_b = {p["id"]: p for p in preds_b}
    if len(by_id_b) != len(preds_b) or len(ids_a) != len(preds_a):
        raise EvalError("duplicate ids in predictions")
    if ids_a != set(by_id_b):
        raise EvalError("prediction files cover different ids")
    ordered_b = [by_id_b[p["id"]] for p in preds_a]
    for x, y in zip(preds_a, ordered_b):
        if x["gold"] != y["gold"]:
            raise EvalError(f"gold answers disagree for id {x['id']!r}")
    return bitmap_from_predictions(preds_a), bitmap_from_predictions(ordered_b)


def write_predictions(path, preds: Sequence[dict], meta: dict | None = None) -> None:
    doc = {"format": "clozeqa-predictions", "version": 1, "meta": dict(meta or {}),
           "predictions": list(preds)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_predictions(path) -> list[dict]:
    doc = json.loads(open(path, encoding="utf-8").read())
    if doc.get("format") != "clozeqa-predictions":
        raise EvalError(f"{path}: not a predictions file")
    return list(doc["predictions"])


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _pair_rows(record: EvalRecord) -> list[tuple[str, int, str]]:
    t = record.table()
    union_count = t.total - t.neither
    return [
        ("All", t.total, "100.00"),
        (record.name_a, t.both + t.only_a, _pct(record.accuracy_a)),
        (record.name_b, t.both + t.only_b, _pct(record.accuracy_b)),
        ("Both", t.both, _pct(t.both / t.total)),
        ("Neither", t.neither, _pct(t.neither / t.total)),
        ("Union", union_count, _pct(record.union())),
    ]


def _record_dict(record: EvalRecord, alpha: float) -> dict:
    if record.is_pair:
        t = record.table()
        test = mcnemar(t, alpha)
        return {
            "label": record.label,
            "names": [record.name_a, record.name_b],
            "counts": {
                "total": t.total,
                record.name_a: t.both + t.only_a,
                record.name_b: t.both + t.only_b,
                "both": t.both,
                "only_a": t.only_a,
                "only_b": t.only_b,
                "neither": t.neither,
            },
            "accuracy_a": record.accuracy_a,
            "accuracy_b": record.accuracy_b,
            "union_accuracy": record.union(),
            "mcnemar": {
                "p_value": test.p_value,
                "method": test.method,
                "reject": test.reject,
                "alpha": test.alpha,
                "statistic": test.statistic,
            },
        }
    return {
        "label": record.label,
        "names": [record.name_a],
        "counts": {"total": record.total, record.name_a: int(record.bitmap_a.sum())},
        "accuracy_a": record.accuracy_a,
    }


def _aggregation_comparison(records: Sequence[EvalRecord]) -> list[str] | None:
    labels = [r.label for r in records]
    if sorted(labels) != sorted(AGGREGATION_LABELS):
        return None
    by_label = {r.label: r for r in records}
    lines = ["", "## Aggregation comparison (token/occurrence)", ""]
    lines.append("| Combination | Accuracy |")
    lines.append("|---|---|")
    for label in AGGREGATION_LABELS:
        lines.append(f"| {label} | {_pct(by_label[label].accuracy_a)} |")
    best = max(records, key=lambda r: r.accuracy_a)
    if best.label != "sum/sum":
        lines.append("")
        lines.append(
            f"Note: sum/sum ({_pct(by_label['sum/sum'].accuracy_a)}) is not the best "
            f"combination here; {best.label} reached {_pct(best.accuracy_a)}."
        )
    return lines


def emit_report(records: Sequence[EvalRecord], format: str = "markdown", alpha: float = 0.025) -> str:
    """Render evaluation records; deterministic bytes for fixed input.

    With exactly the four token/occurrence aggregation runs, a comparison
    table is appended.
    """
    records = list(records)
    if not records:
        raise EvalError("no records to report")
    if format == "json":
        return json.dumps(
            {"records": [_record_dict(r, alpha) for r in records]}, sort_keys=True, indent=1
        ) + "\n"
    if format == "csv":
        lines = ["record,set,count,percent"]
        for i, r in enumerate(records):
            tag = r.label or str(i)
            if r.is_pair:
                for name, count, pct in _pair_rows(r):
                    lines.append(f"{tag},{name},{count},{pct}")
            else:
                lines.append(f"{tag},{r.name_a},{int(r.bitmap_a.sum())},{_pct(r.accuracy_a)}")
        return "\n".join(lines) + "\n"
    if format != "markdown":
        raise EvalError(f"unknown report format {format!r}")

    lines: list[str] = []
    for r in records:
        if r.is_pair:
            title = r.label or f"{r.name_a} vs {r.name_b}"
            lines.append(f"## Comparison: {title}")
            lines.append("")
            lines.append("| Set | Count | Percent |")
            lines.append("|---|---|---|")
            for name, count, pct in _pair_rows(r):
                lines.append(f"| {name} | {count} | {pct} |")
            t = r.table()
            test = mcnemar(t, alpha)
            stat = "" if test.statistic is None else f" statistic={test.statistic:.4f}"
            lines.append("")
            lines.append(
                f"McNemar ({test.method}{stat}): p={test.p_value:.6g}, "
                f"reject at alpha={test.alpha:g}: {'yes' if test.reject else 'no'}"
            )
        else:
            title = r.label or r.name_a
            lines.append(f"## Accuracy: {title}")
            lines.append("")
            lines.append(f"{r.name_a}: {int(r.bitmap_a.sum())}/{r.total} = {_pct(r.accuracy_a)}%")
        lines.append("")
    extra = _aggregation_comparison(records)
    if extra:
        lines.extend(extra)
        lines.append("")
    return "\n".join(lines)
