"""Evaluation protocols: inverted k-fold CV, early-detection curves, feature export, sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, split_folds, stratified_split, truncate_event
from .graph import Corpus
from .metrics import Metrics, evaluate
from .model import ModelParams, predict
from .trainer import ACLR, CLR, TrainConfig, train

METRIC_COLUMNS = ["accuracy", "macro_f1", "f1_rumor", "f1_nonrumor"]
COUNT_COLUMNS = ["tp", "fp", "fn", "tn"]
DEFAULT_POST_CHECKPOINTS = (1, 5, 10, 20, 50, 100, None)  # None = all posts


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return math.fsum(arr) / len(arr), float(arr.std())


# --------------------------------------------------------------------- CV


@dataclass
class FoldResult:
    fold: int
    train_ids: list[str]
    test_ids: list[str]
    metrics: Metrics
    best_epoch: int | None


@dataclass
class CVResult:
    folds: list[FoldResult]

    def summary(self) -> dict[str, tuple[float, float]]:
        return {c: _mean_std([getattr(f.metrics, c) for f in self.folds]) for c in METRIC_COLUMNS}

    def to_csv(self, path: str | Path) -> None:
        rows = []
        for f in self.folds:
            m = f.metrics
            rows.append([f.fold, len(f.train_ids), len(f.test_ids),
                         *(getattr(m, c) for c in METRIC_COLUMNS),
                         *(getattr(m, c) for c in COUNT_COLUMNS), f.best_epoch])
        s = self.summary()
        rows.append(["mean", "", "", *(s[c][0] for c in METRIC_COLUMNS), "", "", "", "", ""])
        rows.append(["std", "", "", *(s[c][1] for c in METRIC_COLUMNS), "", "", "", "", ""])
        _write_csv(path, ["fold", "n_train", "n_test", *METRIC_COLUMNS, *COUNT_COLUMNS, "best_epoch"], rows)


def cross_validate(source: Corpus | None, target: Corpus, cfg: TrainConfig, k: int = 5,
                   folds: Sequence[int] | None = None, fold_seed: int | None = None) -> CVResult:
    """Inverted k-fold CV: train on one target fold (plus source), test on the other k-1.

    Each fold trains with seed ``cfg.seed + fold`` so folds are independent of
    the order in which they run.
    """
    plan = split_folds(target.dataset, k, cfg.seed if fold_seed is None else fold_seed)
    results = []
    for i in (range(k) if folds is None else folds):
        train_ids, test_ids = plan.fold(i), plan.rest(i)
        run = train(source, target.subset(train_ids), replace(cfg, seed=cfg.seed + i))
        metrics = evaluate(run.params, target.subset(test_ids).graphs())
        results.append(FoldResult(i, train_ids, test_ids, metrics, run.history.best_epoch))
    return CVResult(results)


# --------------------------------------------------------- early detection


@dataclass
class CurvePoint:
    checkpoint: float
    metrics: Metrics
    mean_posts: float


@dataclass
class EarlyCurve:
    mode: str  # "posts" or "seconds"
    points: list[CurvePoint]

    def to_csv(self, path: str | Path) -> None:
        rows = [[p.checkpoint, p.metrics.accuracy, p.metrics.macro_f1, p.metrics.f1_rumor,
                 p.metrics.f1_nonrumor, p.mean_posts] for p in self.points]
        _write_csv(path, ["checkpoint", "acc", "macro_f1", "f1_rumor", "f1_nonrumor", "mean_posts"], rows)


def truncate_dataset(dataset: Dataset, checkpoint: float, mode: str = "posts") -> Dataset:
    if mode == "posts":
        events = [truncate_event(ev, post_count=int(checkpoint)) for ev in dataset.events]
    elif mode == "seconds":
        events = [truncate_event(ev, elapsed_seconds=float(checkpoint)) for ev in dataset.events]
    else:
        raise ValueError(f"checkpoint mode must be 'posts' or 'seconds', got {mode!r}")
    return Dataset(tuple(events), dataset.role, dataset.name)


def resolve_checkpoints(dataset: Dataset, checkpoints: Sequence[float | None], mode: str) -> list[float]:
    """Replace ``None`` ("everything") by the saturating value and check ordering.

    Explicit checkpoints at or past saturation that precede ``None`` are
    dropped, since they would repeat the full-data evaluation.
    """
    if mode == "posts":
        full = max(len(ev) for ev in dataset.events)
    else:
        full = max(p.delay_seconds for ev in dataset.events for p in ev.posts)
    resolved: list[float] = []
    for c in checkpoints:
        if c is None:
            resolved = [r for r in resolved if r < full]
            c = full
        resolved.append(c)
    if any(b <= a for a, b in zip(resolved, resolved[1:])):
        raise ValueError(f"checkpoints must be strictly increasing, got {resolved}")
    return resolved


def early_detection_curve(params: ModelParams, dataset: Dataset, provider,
                          checkpoints: Sequence[float | None] = DEFAULT_POST_CHECKPOINTS,
                          mode: str = "posts") -> EarlyCurve:
    """Metrics when only posts visible at each checkpoint are kept."""
    points = []
    for c in resolve_checkpoints(dataset, checkpoints, mode):
        cut = truncate_dataset(dataset, c, mode)
        # fresh corpus: truncated events reuse the original ids
        graphs = Corpus(cut, provider).graphs()
        metrics = evaluate(params, graphs)
        points.append(CurvePoint(c, metrics, float(np.mean([g.n for g in graphs]))))
    return EarlyCurve(mode, points)


# ------------------------------------------------------------- features


@dataclass
class PCAResult:
    components: np.ndarray  # (2, d), orthonormal rows
    variances: np.ndarray   # (2,)
    coords: np.ndarray      # (n, 2)


def _power_iteration(C: np.ndarray, against: Sequence[np.ndarray], rng: np.random.Generator,
                     tol: float, max_iter: int) -> np.ndarray:
    d = C.shape[0]

    def orthogonalize(v):
        for u in against:
            v = v - (u @ v) * u
        return v

    v = orthogonalize(rng.standard_normal(d))
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = orthogonalize(C @ v)
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            return v  # null space: any unit vector orthogonal to `against` will do
        w /= norm
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    return v


def pca_2d(O: np.ndarray, tol: float = 1e-9, max_iter: int = 100_000) -> PCAResult:
    """Top-2 principal components by power iteration with deflation."""
    O = np.asarray(O, dtype=np.float64)
    n, d = O.shape
    if d < 2:
        raise ValueError("PCA to 2-D needs at least two feature columns")
    Xc = O - O.mean(axis=0)
    C = Xc.T @ Xc / max(n - 1, 1)
    rng = np.random.default_rng(0)
    comps, lams = [], []
    for _ in range(2):
        v = _power_iteration(C, comps, rng, tol, max_iter)
        lam = float(v @ C @ v)
        comps.append(v)
        lams.append(lam)
        C = C - lam * np.outer(v, v)
    # canonical sign: largest-magnitude entry positive
    comps = [v if v[np.argmax(np.abs(v))] >= 0 else -v for v in comps]
    W = np.vstack(comps)
    return PCAResult(W, np.array(lams), Xc @ W.T)


@dataclass
class FeatureTable:
    event_ids: list[str]
    labels: list[int]
    vectors: np.ndarray
    pca: PCAResult | None

    def to_csv(self, path: str | Path) -> None:
        d = self.vectors.shape[1]
        header = ["event_id", "label", *(f"o{j}" for j in range(d)), "pca_x", "pca_y"]
        rows = []
        for i, (eid, y) in enumerate(zip(self.event_ids, self.labels)):
            pc = self.pca.coords[i] if self.pca is not None else (None, None)
            rows.append([eid, y, *self.vectors[i], *pc])
        _write_csv(path, header, rows)


def export_features(params: ModelParams, graphs) -> FeatureTable:
    """Event-level vectors plus a 2-D PCA projection (skipped below three events)."""
    O, _ = predict(graphs, params)
    pca = pca_2d(O) if len(graphs) >= 3 else None
    return FeatureTable([g.event_id for g in graphs], [g.label for g in graphs], O, pca)


# ---------------------------------------------------------------- sweeps

SWEEP_PARAMS = ("epsilon", "alpha", "target_fraction")


@dataclass
class SweepRun:
    value: float
    seed: int
    n_train: int
    n_test: int
    metrics: Metrics


@dataclass
class SweepResult:
    param: str
    runs: list[SweepRun]

    def values(self) -> list[float]:
        seen: list[float] = []
        for r in self.runs:
            if r.value not in seen:
                seen.append(r.value)
        return seen

    def summary_rows(self) -> list[list]:
        rows = []
        for v in self.values():
            ms = [r.metrics for r in self.runs if r.value == v]
            row = [v, len(ms)]
            for c in METRIC_COLUMNS:
                mean, std = _mean_std([getattr(m, c) for m in ms])
                row += [mean, std]
            rows.append(row)
        return rows

    def to_csv(self, summary_path: str | Path, runs_path: str | Path | None = None) -> None:
        header = [self.param, "n_seeds"]
        for c in METRIC_COLUMNS:
            header += [f"{c}_mean", f"{c}_std"]
        _write_csv(summary_path, header, self.summary_rows())
        if runs_path is not None:
            _write_csv(runs_path, [self.param, "seed", "n_train", "n_test", *METRIC_COLUMNS, *COUNT_COLUMNS],
                       [[r.value, r.seed, r.n_train, r.n_test,
                         *(getattr(r.metrics, c) for c in METRIC_COLUMNS),
                         *(getattr(r.metrics, c) for c in COUNT_COLUMNS)] for r in self.runs])


def sweep(source: Corpus | None, target: Corpus, cfg: TrainConfig, param: str,
          values: Sequence[float], seeds: Sequence[int], train_fraction: float = 0.2) -> SweepResult:
    """Train/test once per (value, seed) on a stratified random target split.

    ``train_fraction`` of the target is used for training (one inverted-CV
    fold at k=5); for the ``target_fraction`` sweep the swept value replaces it.
    An epsilon of 0 means no adversarial augmentation.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose from {SWEEP_PARAMS}")
    runs = []
    for v in values:
        frac = train_fraction
        run_cfg = cfg
        if param == "epsilon":
            run_cfg = replace(cfg, regime=CLR) if v == 0 else replace(cfg, regime=ACLR, epsilon=float(v))
        elif param == "alpha":
            run_cfg = replace(cfg, alpha=float(v))
        else:
            if not 0 < v < 1:
                raise ValueError(f"target fraction must lie in (0, 1), got {v}")
            frac = float(v)
        for seed in seeds:
            train_ids, test_ids = stratified_split(target.dataset, frac, seed)
            run = train(source, target.subset(train_ids), replace(run_cfg, seed=seed))
            metrics = evaluate(run.params, target.subset(test_ids).graphs())
            runs.append(SweepRun(float(v), seed, len(train_ids), len(test_ids), metrics))
    return SweepResult(param, runs)
