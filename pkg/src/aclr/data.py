"""Events, dataset files, post embeddings, fold plans and early-detection truncation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

RUMOR = 1
NON_RUMOR = 0


class DatasetError(ValueError):
    """Raised when an event file or event structure is invalid."""


class EmbeddingError(ValueError):
    """Raised when post embeddings cannot be produced."""


class StratificationError(ValueError):
    pass


@dataclass(frozen=True)
class Post:
    id: str
    parent_id: str | None
    delay_seconds: float = 0.0
    text: str | None = None


@dataclass(frozen=True)
class Event:
    id: str
    label: int
    posts: tuple[Post, ...]

    @property
    def root(self) -> Post:
        return self.posts[0]

    def __len__(self) -> int:
        return len(self.posts)

    def post_ids(self) -> list[str]:
        return [p.id for p in self.posts]


@dataclass(frozen=True)
class Dataset:
    events: tuple[Event, ...]
    role: str = "target"
    name: str = ""

    def __post_init__(self):
        seen = set()
        for ev in self.events:
            if ev.id in seen:
                raise DatasetError(f"duplicate event id {ev.id!r} in dataset {self.name!r}")
            seen.add(ev.id)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def labels(self) -> list[int]:
        return [ev.label for ev in self.events]

    def by_id(self) -> dict[str, Event]:
        return {ev.id: ev for ev in self.events}

    def subset(self, ids: Iterable[str], name: str | None = None) -> "Dataset":
        index = self.by_id()
        return Dataset(tuple(index[i] for i in ids), self.role, name or self.name)


def _order_key(post: Post, root_id: str):
    return (post.id != root_id, post.delay_seconds, post.id)


def make_event(event_id: str, label: int, posts: Sequence[Post]) -> Event:
    """Validate a post list and return it as an Event in chronological order.

    The root goes first; the rest are ordered by (delay_seconds, id).
    """
    if label not in (RUMOR, NON_RUMOR):
        raise DatasetError(f"event {event_id!r}: label must be 0 or 1, got {label!r}")
    if not posts:
        raise DatasetError(f"event {event_id!r}: no posts")
    ids = [p.id for p in posts]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DatasetError(f"event {event_id!r}: duplicate post ids {dup}")
    roots = [p for p in posts if p.parent_id is None]
    if len(roots) != 1:
        raise DatasetError(f"event {event_id!r}: expected exactly one root post, found {len(roots)}")
    root = roots[0]
    if root.delay_seconds != 0:
        raise DatasetError(f"event {event_id!r}: root post {root.id!r} must have delay 0")
    parents = {p.id: p.parent_id for p in posts}
    for p in posts:
        if not np.isfinite(p.delay_seconds) or p.delay_seconds < 0:
            raise DatasetError(f"event {event_id!r}: post {p.id!r} has invalid delay {p.delay_seconds!r}")
        if p.parent_id is not None and p.parent_id not in parents:
            raise DatasetError(f"event {event_id!r}: post {p.id!r} has dangling parent {p.parent_id!r}")
    # every chain must end at the root; anything else is a cycle
    reaches_root = {root.id}
    for p in posts:
        chain = []
        cur = p.id
        while cur not in reaches_root:
            if cur in chain:
                cycle = chain[chain.index(cur):] + [cur]
                raise DatasetError(f"event {event_id!r}: parent cycle {' -> '.join(cycle)}")
            chain.append(cur)
            cur = parents[cur]
        reaches_root.update(chain)
    ordered = tuple(sorted(posts, key=lambda p: _order_key(p, root.id)))
    return Event(event_id, int(label), ordered)


def parent_index(event: Event) -> list[int]:
    """Index of each post's parent in ``event.posts`` (-1 for the root)."""
    pos = {p.id: i for i, p in enumerate(event.posts)}
    return [-1 if p.parent_id is None else pos[p.parent_id] for p in event.posts]


def event_to_json(event: Event) -> dict:
    posts = []
    for p in event.posts:
        rec = {"id": p.id, "parent": p.parent_id, "t": p.delay_seconds}
        if p.text is not None:
            rec["text"] = p.text
        posts.append(rec)
    return {"id": event.id, "label": event.label, "posts": posts}


def event_from_json(obj: Mapping) -> Event:
    try:
        posts = [
            Post(str(rec["id"]), None if rec.get("parent") is None else str(rec["parent"]),
                 float(rec.get("t", 0.0)), rec.get("text"))
            for rec in obj["posts"]
        ]
        label = int(obj["label"])
        event_id = str(obj["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"malformed event object: missing or invalid field {exc}") from exc
    return make_event(event_id, label, posts)


def load_dataset(path: str | Path, role: str = "target", name: str | None = None) -> Dataset:
    """Read a JSON Lines event file. The whole file is validated or nothing is returned."""
    path = Path(path)
    events = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                ev = event_from_json(obj)
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if ev.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate event id {ev.id!r} (first on line {seen[ev.id]})")
            seen[ev.id] = lineno
            events.append(ev)
    return Dataset(tuple(events), role, name if name is not None else path.stem)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ev in dataset.events:
            fh.write(json.dumps(event_to_json(ev), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class EmbeddingTable:
    """Precomputed post vectors keyed by post id."""

    dim: int
    vectors: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise EmbeddingError("embedding dim must be positive")
        for key, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise EmbeddingError(f"vector for {key!r} has shape {vec.shape}, expected ({self.dim},)")
            if not np.isfinite(vec).all():
                raise EmbeddingError(f"vector for {key!r} has non-finite entries")

    def embed(self, event: Event) -> np.ndarray:
        missing = [p.id for p in event.posts if p.id not in self.vectors]
        if missing:
            raise EmbeddingError(f"event {event.id!r}: no embedding for posts {missing}")
        return np.stack([self.vectors[p.id] for p in event.posts])

    def merged(self, other: "EmbeddingTable") -> "EmbeddingTable":
        if other.dim != self.dim:
            raise EmbeddingError(f"cannot merge tables of dim {self.dim} and {other.dim}")
        return EmbeddingTable(self.dim, {**self.vectors, **other.vectors})


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if dim is None:
                if "dim" not in obj:
                    raise EmbeddingError(f"{path}:1: first line must be a {{\"dim\": d}} header")
                dim = int(obj["dim"])
                continue
            vec = np.asarray(obj["vec"], dtype=np.float64)
            if vec.shape != (dim,):
                raise EmbeddingError(f"{path}:{lineno}: vector length {vec.size} != dim {dim}")
            vectors[str(obj["id"])] = vec
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")
    return EmbeddingTable(dim, vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": table.dim}) + "\n")
        for key, vec in table.vectors.items():
            fh.write(json.dumps({"id": key, "vec": [float(x) for x in vec]}) + "\n")


def _hash64(token: str, salt: bytes) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=salt).digest()
    return int.from_bytes(digest, "little")


class HashingEmbedder:
    """Signed feature hashing of whitespace tokens, L2-normalized.

    A deterministic, language-agnostic stand-in for a sentence encoder.
    """

    _BUCKET_SALT = b"aclr-bkt"
    _SIGN_SALT = b"aclr-sgn"

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise EmbeddingError("embedding dim must be positive")
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in text.split():
            bucket = _hash64(tok, self._BUCKET_SALT) % self.dim
            sign = 1.0 if _hash64(tok, self._SIGN_SALT) & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed(self, event: Event) -> np.ndarray:
        missing = [p.id for p in event.posts if p.text is None]
        if missing:
            raise EmbeddingError(f"event {event.id!r}: posts without text {missing}")
        return np.stack([self.embed_text(p.text) for p in event.posts])


def embed_event(event: Event, provider) -> np.ndarray:
    """Node feature matrix (n x d) with rows in event post order."""
    return provider.embed(event)


def truncate_event(event: Event, post_count: int | None = None,
                   elapsed_seconds: float | None = None) -> Event:
    """Keep only what was visible at an early-detection checkpoint.

    Exactly one of ``post_count`` (first c posts, root included) or
    ``elapsed_seconds`` (posts with delay <= t) must be given. Posts whose
    ancestors fall outside the window are dropped, never re-attached.
    """
    if (post_count is None) == (elapsed_seconds is None):
        raise ValueError("give exactly one of post_count or elapsed_seconds")
    if post_count is not None:
        if post_count < 1:
            raise ValueError("post_count must be >= 1")
        window = event.posts[:post_count]
    else:
        if elapsed_seconds < 0:
            raise ValueError("elapsed_seconds must be >= 0")
        window = [event.root] + [p for p in event.posts[1:] if p.delay_seconds <= elapsed_seconds]
    visible = {p.id for p in window}
    parents = {p.id: p.parent_id for p in event.posts}

    def chain_visible(post_id: str) -> bool:
        cur: str | None = post_id
        while cur is not None:
            if cur not in visible:
                return False
            cur = parents[cur]
        return True

    kept = tuple(p for p in event.posts if chain_visible(p.id))
    if len(kept) == len(event.posts):
        return event
    return Event(event.id, event.label, kept)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: Mapping[str, int]

    def fold(self, i: int) -> list[str]:
        return [eid for eid, f in self.assignments.items() if f == i]

    def rest(self, i: int) -> list[str]:
        return [eid for eid, f in self.assignments.items() if f != i]


def split_folds(dataset: Dataset, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified, seeded partition of events into ``k`` folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    for ev in dataset.events:
        by_class.setdefault(ev.label, []).append(ev.id)
    assignments: dict[str, int] = {}
    offset = 0
    for label in sorted(by_class):
        ids = by_class[label]
        if len(ids) < k:
            raise StratificationError(f"class {label} has {len(ids)} events, fewer than k={k}")
        order = rng.permutation(len(ids))
        for rank, j in enumerate(order):
            assignments[ids[j]] = (offset + rank) % k
        offset = (offset + len(ids)) % k
    # preserve dataset order in the mapping
    return FoldPlan(k, {ev.id: assignments[ev.id] for ev in dataset.events})


def stratified_split(dataset: Dataset, fraction: float, seed: int,
                     min_per_class: int = 1) -> tuple[list[str], list[str]]:
    """Seeded stratified split into (selected, rest) with ~``fraction`` of each class selected."""
    rng = np.random.default_rng(seed)
    chosen: set[str] = set()
    by_class: dict[int, list[str]] = {}
    for ev in dataset.events:
        by_class.setdefault(ev.label, []).append(ev.id)
    for label in sorted(by_class):
        ids = by_class[label]
        n = max(min_per_class, int(round(fraction * len(ids))))
        n = min(n, len(ids))
        for j in rng.permutation(len(ids))[:n]:
            chosen.add(ids[j])
    selected = [ev.id for ev in dataset.events if ev.id in chosen]
    rest = [ev.id for ev in dataset.events if ev.id not in chosen]
    return selected, rest
