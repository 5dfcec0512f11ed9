"""Test-set scans for ambiguous items and confident misclassifications."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError

AMBIGUOUS_BAND = (0.40, 0.60)
MISCLASSIFY_BAR = 0.85


@dataclass
class ScanReport:
    """``ambiguous`` maps ``"i-j"`` (i < j) to item indices; ``misclassified``
    maps the predicted class to indices of confident wrong predictions."""

    n_items: int
    ambiguous: dict[str, list[int]] = field(default_factory=dict)
    misclassified: dict[str, list[int]] = field(default_factory=dict)

    @property
    def ambiguous_counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.ambiguous.items()}

    @property
    def misclassified_counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.misclassified.items()}

    def to_json(self) -> str:
        return json.dumps({
            "n_items": self.n_items,
            "ambiguous": {"counts": self.ambiguous_counts, "items": self.ambiguous},
            "misclassified": {"counts": self.misclassified_counts, "items": self.misclassified},
        }, indent=2, sort_keys=True)


def ambiguous_pair(conf: np.ndarray, band: tuple[float, float] = AMBIGUOUS_BAND) -> tuple[int, int] | None:
    """The class pair an item is ambiguous between, or None.

    Both top confidences must lie in ``band`` (inclusive) and every other
    confidence must be strictly below the band's lower edge.
    """
    order = np.argsort(-conf, kind="stable")
    i, j = int(order[0]), int(order[1])
    lo, hi = band
    if not (lo <= conf[i] <= hi and lo <= conf[j] <= hi):
        return None
    if len(conf) > 2 and conf[order[2]] >= lo:
        return None
    return (i, j) if i < j else (j, i)


def scan_confidences(conf: np.ndarray, labels: np.ndarray, band: tuple[float, float] = AMBIGUOUS_BAND,
                     bar: float = MISCLASSIFY_BAR) -> ScanReport:
    conf = np.atleast_2d(np.asarray(conf, dtype=np.float64))
    labels = np.asarray(labels)
    if len(conf) == 0:
        raise ContractError("cannot scan an empty test set")
    if len(conf) != len(labels):
        raise ContractError("confidences and labels differ in length")
    report = ScanReport(len(conf))
    for idx, (c, y) in enumerate(zip(conf, labels)):
        pair = ambiguous_pair(c, band)
        if pair is not None:
            report.ambiguous.setdefault(f"{pair[0]}-{pair[1]}", []).append(idx)
        pred = int(np.argmax(c))
        if pred != int(y) and c[pred] >= bar:
            report.misclassified.setdefault(str(pred), []).append(idx)
    report.ambiguous = dict(sorted(report.ambiguous.items()))
    report.misclassified = dict(sorted(report.misclassified.items(), key=lambda kv: int(kv[0])))
    return report
