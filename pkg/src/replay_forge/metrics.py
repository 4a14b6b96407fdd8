"""Continual-learning metrics over a lower-triangular DSC result matrix.

``rows[t][i]`` is the mean DSC on task ``i`` after training session ``t``
(``i <= t``). Sums are carried out in decimal on the shortest repr of each
value, so hand-written fixtures such as ``[[0.8], [0.6, 0.7]]`` give
``bwt == -0.2`` rather than ``-0.20000000000000007``.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

import numpy as np

from .errors import EmptyList, IncompleteRow, LengthMismatch, SingleTask
from .volume import as_mask, dice

RESULTS_VERSION = "1.0"


@dataclass
class ResultMatrix:
    rows: list[list[float | None]]
    tasks: list[str] | None = None

    @property
    def T(self) -> int:
        return len(self.rows)

    def row(self, t: int) -> list[float]:
        r = self.rows[t]
        if len(r) < t + 1 or any(v is None for v in r[: t + 1]):
            raise IncompleteRow(f"row {t} needs {t + 1} values, has {r!r}")
        return [float(v) for v in r[: t + 1]]

    def to_json(self) -> dict:
        tasks = self.tasks or [f"task{i}" for i in range(self.T)]
        return {"version": RESULTS_VERSION, "tasks": tasks, "rows": self.rows}

    @classmethod
    def from_json(cls, doc: dict) -> "ResultMatrix":
        return cls(rows=[list(r) for r in doc["rows"]], tasks=doc.get("tasks"))


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def _mean(values: Sequence[float]) -> Decimal:
    return sum((_dec(v) for v in values), Decimal(0)) / len(values)


def avg(R: ResultMatrix) -> float:
    """Mean DSC over all tasks after the final session."""
    if R.T < 1:
        raise IncompleteRow("result matrix is empty")
    return float(_mean(R.row(R.T - 1)))


def bwt(R: ResultMatrix) -> float:
    """Mean of (final DSC - DSC right after learning) over all but the last task."""
    if R.T < 2:
        raise SingleTask("backward transfer needs at least two tasks")
    last = R.row(R.T - 1)
    deltas = sum((_dec(last[i]) - _dec(R.row(i)[i]) for i in range(R.T - 1)), Decimal(0))
    return float(deltas / (R.T - 1))


def ilm(R: ResultMatrix) -> float:
    """Mean over sessions of the mean DSC on every task seen so far."""
    if R.T < 1:
        raise IncompleteRow("result matrix is empty")
    per_session = [_mean(R.row(t)) for t in range(R.T)]
    return float(sum(per_session, Decimal(0)) / R.T)


def metrics_report(R: ResultMatrix) -> dict:
    return {
        "version": RESULTS_VERSION,
        "avg": avg(R),
        "ilm": ilm(R),
        "bwt": bwt(R) if R.T >= 2 else None,
        "per_task_final": R.row(R.T - 1),
    }


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    p = np.asarray(pred)
    if p.dtype == bool:
        return p
    if np.issubdtype(p.dtype, np.integer) and np.isin(p, (0, 1)).all():
        return as_mask(p)
    return p >= threshold


def episode_dsc(pred_masks: Sequence, gt_masks: Sequence, threshold: float = 0.5) -> float:
    """Unweighted mean per-sample Dice; float predictions are thresholded first."""
    if len(pred_masks) != len(gt_masks):
        raise LengthMismatch(f"{len(pred_masks)} predictions vs {len(gt_masks)} ground truths")
    if not pred_masks:
        raise EmptyList("no samples to evaluate")
    scores = [dice(binarize(p, threshold), g) for p, g in zip(pred_masks, gt_masks)]
    return float(np.mean(scores))
