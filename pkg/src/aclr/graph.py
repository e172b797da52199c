"""Top-down / bottom-up propagation graphs and their symmetric normalization.

Convention: ``A[i, j] = 1`` means node ``i`` aggregates the features of node
``j``. In the top-down graph a reply aggregates from the post it answers, so
information flows along the diffusion direction; the bottom-up graph is the
transpose. Both carry self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, Event, embed_event, parent_index

TOP_DOWN = "top_down"
BOTTOM_UP = "bottom_up"


class DegenerateGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Adjacency:
    n: int
    direction: str
    A: np.ndarray
    A_hat: np.ndarray


def normalize_adjacency(A: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with ``D`` the diagonal of row sums."""
    A = np.asarray(A, dtype=np.float64)
    deg = A.sum(axis=1)
    if (deg <= 0).any():
        raise DegenerateGraphError(f"rows with zero degree: {np.flatnonzero(deg <= 0).tolist()}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return A * inv_sqrt[:, None] * inv_sqrt[None, :]


def tree_adjacency(parents: Sequence[int], direction: str = TOP_DOWN) -> np.ndarray:
    n = len(parents)
    A = np.eye(n)
    for child, parent in enumerate(parents):
        if parent >= 0:
            A[child, parent] = 1.0
    if direction == TOP_DOWN:
        return A
    if direction == BOTTOM_UP:
        return A.T.copy()
    raise ValueError(f"unknown direction {direction!r}")


def build_adjacency(event: Event, direction: str = TOP_DOWN) -> Adjacency:
    A = tree_adjacency(parent_index(event), direction)
    return Adjacency(len(event), direction, A, normalize_adjacency(A))


@dataclass(frozen=True)
class EventGraph:
    """Everything the encoder needs for one event."""

    event_id: str
    label: int
    X: np.ndarray
    td: np.ndarray
    bu: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


def prepare_event(event: Event, provider) -> EventGraph:
    return EventGraph(
        event.id,
        event.label,
        embed_event(event, provider),
        build_adjacency(event, TOP_DOWN).A_hat,
        build_adjacency(event, BOTTOM_UP).A_hat,
    )


@dataclass
class Corpus:
    """A dataset paired with its embedding provider; prepared graphs are cached."""

    dataset: Dataset
    provider: object
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.provider.dim

    def __post_init__(self):
        self._index = self.dataset.by_id()

    def graph(self, event_id: str) -> EventGraph:
        g = self._cache.get(event_id)
        if g is None:
            g = prepare_event(self._index[event_id], self.provider)
            self._cache[event_id] = g
        return g

    def graphs(self, ids: Sequence[str] | None = None) -> list[EventGraph]:
        if ids is None:
            ids = [ev.id for ev in self.dataset.events]
        return [self.graph(i) for i in ids]

    def subset(self, ids: Sequence[str]) -> "Corpus":
        # graphs depend only on (event, provider), so the cache is shared
        return Corpus(self.dataset.subset(ids), self.provider, self._cache)


def block_diagonal(mats: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    i = 0
    for m in mats:
        k = m.shape[0]
        out[i:i + k, i:i + k] = m
        i += k
    return out


def mean_pool_matrix(sizes: Sequence[int]) -> np.ndarray:
    """Row ``b`` averages the nodes belonging to event ``b`` of a stacked batch."""
    P = np.zeros((len(sizes), int(sum(sizes))))
    i = 0
    for b, k in enumerate(sizes):
        P[b, i:i + k] = 1.0 / k
        i += k
    return P
