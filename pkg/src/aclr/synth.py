"""Synthetic source/target rumor benchmarks with a controllable domain shift.

Trees come from a depth-capped Galton-Watson process. Post vectors are
``class mean + event offset + node noise``; target vectors are then rotated
by ``theta`` in the plane of the class axis and translated by ``delta``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, EmbeddingTable, Post, make_event, save_dataset, save_embeddings


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_source: int = 800
    n_target: int = 100
    dim: int = 32
    mean_posts: float = 10.0
    max_depth: int = 6
    max_posts: int = 200
    fanout: str = "poisson"
    class_sep: float = 1.0
    event_noise: float = 0.5
    noise: float = 1.0
    theta_deg: float = 30.0
    shift_norm: float = 1.0
    mu_rumor: tuple[float, ...] | None = None
    mu_nonrumor: tuple[float, ...] | None = None
    shift: tuple[float, ...] | None = None
    delay_scale: float = 1800.0
    vocab: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_source < 2 or self.n_target < 2:
            raise SynthConfigError("need at least two events per dataset")
        if self.dim < 3:
            raise SynthConfigError("dim must be at least 3 (class axis, rotation plane, shift)")
        if self.mean_posts < 1:
            raise SynthConfigError(f"mean_posts must be >= 1, got {self.mean_posts}")
        if self.mean_posts > self.max_posts:
            raise SynthConfigError("mean_posts exceeds max_posts")
        if self.max_depth < 0 or (self.max_depth == 0 and self.mean_posts > 1):
            raise SynthConfigError("max_depth too small for the requested mean tree size")
        if self.fanout not in ("poisson", "geometric"):
            raise SynthConfigError(f"fanout must be 'poisson' or 'geometric', got {self.fanout!r}")
        if not self.noise > 0:
            raise SynthConfigError("noise stddev must be positive")
        if self.event_noise < 0 or self.delay_scale <= 0:
            raise SynthConfigError("event_noise must be >= 0 and delay_scale > 0")
        for name in ("mu_rumor", "mu_nonrumor", "shift"):
            v = getattr(self, name)
            if v is not None and len(v) != self.dim:
                raise SynthConfigError(f"{name} has length {len(v)}, expected {self.dim}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Domain:
    dataset: Dataset
    table: EmbeddingTable


@dataclass
class Benchmark:
    source: Domain
    target: Domain
    config: SynthConfig
    geometry: dict = field(default_factory=dict)


def offspring_mean(mean_posts: float, max_depth: int) -> float:
    """Offspring mean ``m`` with ``1 + m + ... + m**max_depth == mean_posts``."""
    if mean_posts <= 1 or max_depth == 0:
        return 0.0
    lo, hi = 0.0, float(mean_posts)
    for _ in range(200):
        mid = (lo + hi) / 2
        if sum(mid**k for k in range(max_depth + 1)) < mean_posts:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def sample_tree(rng: np.random.Generator, cfg: SynthConfig, m: float | None = None) -> list[int]:
    """Parent indices of a random tree in breadth-first order (root = -1)."""
    if m is None:
        m = offspring_mean(cfg.mean_posts, cfg.max_depth)
    parents = [-1]
    depth = [0]
    frontier = [0]
    while frontier and len(parents) < cfg.max_posts:
        nxt = []
        for node in frontier:
            if depth[node] >= cfg.max_depth:
                continue
            if cfg.fanout == "poisson":
                k = rng.poisson(m)
            else:
                k = rng.geometric(1.0 / (1.0 + m)) - 1
            for _ in range(k):
                if len(parents) >= cfg.max_posts:
                    break
                parents.append(node)
                depth.append(depth[node] + 1)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return parents


def _geometry(cfg: SynthConfig, rng: np.random.Generator) -> dict:
    q, _ = np.linalg.qr(rng.standard_normal((cfg.dim, 3)))
    axis, plane, side = q[:, 0], q[:, 1], q[:, 2]
    base = rng.standard_normal(cfg.dim) / np.sqrt(cfg.dim)
    mu_r = np.asarray(cfg.mu_rumor) if cfg.mu_rumor is not None else base + cfg.class_sep / 2 * axis
    mu_n = np.asarray(cfg.mu_nonrumor) if cfg.mu_nonrumor is not None else base - cfg.class_sep / 2 * axis
    diff = mu_r - mu_n
    if np.linalg.norm(diff) > 0 and (cfg.mu_rumor is not None or cfg.mu_nonrumor is not None):
        axis = diff / np.linalg.norm(diff)
        plane = plane - (plane @ axis) * axis
        plane /= np.linalg.norm(plane)
        side = side - (side @ axis) * axis - (side @ plane) * plane
        side /= np.linalg.norm(side)
    if cfg.shift is not None:
        delta = np.asarray(cfg.shift, dtype=np.float64)
    else:
        # half along the class axis (biases a source-trained decision rule),
        # half along a direction that identifies the domain
        delta = cfg.shift_norm * (axis + side) / np.sqrt(2.0)
    t = np.deg2rad(cfg.theta_deg)
    # rotation by theta in span(axis, plane), identity elsewhere
    R = np.eye(cfg.dim) + (np.cos(t) - 1) * (np.outer(axis, axis) + np.outer(plane, plane)) \
        + np.sin(t) * (np.outer(plane, axis) - np.outer(axis, plane))
    return {"mu": {1: mu_r, 0: mu_n}, "R": R, "delta": delta, "axis": axis}


def _make_domain(cfg: SynthConfig, geom: dict, rng: np.random.Generator, n: int,
                 prefix: str, shifted: bool) -> Domain:
    labels = np.array([i % 2 for i in range(n)])
    labels = labels[rng.permutation(n)]
    m = offspring_mean(cfg.mean_posts, cfg.max_depth)
    events = []
    vectors: dict[str, np.ndarray] = {}
    half = cfg.vocab // 2
    for i, y in enumerate(labels):
        eid = f"{prefix}{i:04d}"
        parents = sample_tree(rng, cfg, m)
        k = len(parents)
        delays = np.zeros(k)
        for j in range(1, k):
            delays[j] = round(delays[parents[j]] + rng.exponential(cfg.delay_scale), 3)
        ids = [f"{eid}-{j:03d}" for j in range(k)]
        center = geom["mu"][int(y)] + cfg.event_noise * rng.standard_normal(cfg.dim)
        X = center + cfg.noise * rng.standard_normal((k, cfg.dim))
        if shifted:
            X = X @ geom["R"].T + geom["delta"]
        posts = []
        for j in range(k):
            # placeholder tokens, mildly class-dependent
            lo = 0 if y == 1 else half
            toks = [f"w{(lo + rng.integers(half)) if rng.random() < 0.6 else rng.integers(cfg.vocab)}"
                    for _ in range(5)]
            posts.append(Post(ids[j], None if parents[j] < 0 else ids[parents[j]],
                              float(delays[j]), " ".join(toks)))
            vectors[ids[j]] = X[j]
        events.append(make_event(eid, int(y), posts))
    role = "target" if shifted else "source"
    return Domain(Dataset(tuple(events), role, f"synthetic-{role}"), EmbeddingTable(cfg.dim, vectors))


def generate_benchmark(cfg: SynthConfig) -> Benchmark:
    """Deterministic (given ``cfg.seed``) paired source/target benchmark."""
    ss = np.random.SeedSequence(cfg.seed)
    g_rng, s_rng, t_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    geom = _geometry(cfg, g_rng)
    source = _make_domain(cfg, geom, s_rng, cfg.n_source, "s", shifted=False)
    target = _make_domain(cfg, geom, t_rng, cfg.n_target, "t", shifted=True)
    return Benchmark(source, target, cfg, geom)


def write_benchmark(bench: Benchmark, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "source": out / "source.jsonl",
        "source_emb": out / "source_emb.jsonl",
        "target": out / "target.jsonl",
        "target_emb": out / "target_emb.jsonl",
    }
    save_dataset(bench.source.dataset, paths["source"])
    save_embeddings(bench.source.table, paths["source_emb"])
    save_dataset(bench.target.dataset, paths["target"])
    save_embeddings(bench.target.table, paths["target_emb"])
    return paths
