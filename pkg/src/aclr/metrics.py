"""Classification metrics over {rumor, non-rumor}."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .data import NON_RUMOR, RUMOR
from .graph import EventGraph
from .model import ModelParams, predict


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass(frozen=True)
class Metrics:
    tp: int  # rumor predicted as rumor
    fp: int  # non-rumor predicted as rumor
    fn: int  # rumor predicted as non-rumor
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def f1_rumor(self) -> float:
        return _f1(self.tp, self.fp, self.fn)

    @property
    def f1_nonrumor(self) -> float:
        # the non-rumor class sees the confusion matrix mirrored
        return _f1(self.tn, self.fn, self.fp)

    @property
    def macro_f1(self) -> float:
        return (self.f1_rumor + self.f1_nonrumor) / 2

    def as_row(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "f1_rumor": self.f1_rumor,
            "f1_nonrumor": self.f1_nonrumor,
            **asdict(self),
        }


def confusion(labels: Sequence[int], predictions: Sequence[int]) -> Metrics:
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape:
        raise ValueError("labels and predictions differ in length")
    return Metrics(
        tp=int(((y == RUMOR) & (p == RUMOR)).sum()),
        fp=int(((y == NON_RUMOR) & (p == RUMOR)).sum()),
        fn=int(((y == RUMOR) & (p == NON_RUMOR)).sum()),
        tn=int(((y == NON_RUMOR) & (p == NON_RUMOR)).sum()),
    )


def evaluate(params: ModelParams, graphs: Sequence[EventGraph]) -> Metrics:
    """Eval-mode predictions (argmax of logits) scored against event labels."""
    if not graphs:
        raise ValueError("evaluate needs at least one event")
    _, logits = predict(graphs, params)
    return confusion([g.label for g in graphs], logits.argmax(axis=1))
