"""Paired source/target training with joint classification and contrastive losses."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .adversarial import adversarial_ce
from .data import Dataset, stratified_split
from .graph import Corpus
from .losses import ce_batch, has_positives, joint_loss, scl_source, scl_target
from .metrics import confusion
from .model import ModelDims, ModelParams, forward_batch, init_params, predict
from .tensor import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    add,
    concat_rows,
    cross_entropy,
    scale,
    take_rows,
)

logger = logging.getLogger(__name__)

ACLR = "ACLR"
CLR = "CLR"
CE_ONLY = "CE-only"
TARGET_ONLY = "target-only"
SOURCE_ONLY = "source-only"
SOURCE_THEN_FINETUNE = "source-then-finetune"
REGIMES = (ACLR, CLR, CE_ONLY, TARGET_ONLY, SOURCE_ONLY, SOURCE_THEN_FINETUNE)
CONTRASTIVE_REGIMES = (ACLR, CLR)
NEEDS_SOURCE = (ACLR, CLR, CE_ONLY, SOURCE_ONLY, SOURCE_THEN_FINETUNE)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    dropout: float = 0.2
    tau: float = 0.1
    alpha: float = 0.5
    epsilon: float = 1.5
    layers: int = 2
    hidden_dim: int = 512
    out_dim: int = 128
    batch_source: int = 32
    batch_target: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    regime: str = ACLR
    pairing: str = "nested"
    weight_decay: float = 0.0
    val_fraction: float = 0.1
    adv_in_scl: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise TrainingError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.pairing not in ("nested", "zip"):
            raise TrainingError(f"pairing must be 'nested' or 'zip', got {self.pairing!r}")
        if not (self.lr > 0 and self.tau > 0 and self.epsilon > 0):
            raise TrainingError("lr, tau and epsilon must be positive")
        if not 0 <= self.dropout < 1:
            raise TrainingError("dropout must be in [0, 1)")
        if not 0 <= self.alpha <= 1:
            raise TrainingError("alpha must be in [0, 1]")
        if min(self.batch_source, self.batch_target) < 2:
            raise TrainingError("batch sizes must be at least 2")
        if self.max_epochs < 1 or self.patience < 1:
            raise TrainingError("max_epochs and patience must be at least 1")
        if not 0 <= self.val_fraction < 1:
            raise TrainingError("val_fraction must be in [0, 1)")

    @property
    def contrastive(self) -> bool:
        return self.regime in CONTRASTIVE_REGIMES

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.contrastive else 0.0

    @property
    def adversarial(self) -> bool:
        return self.regime == ACLR

    def dims(self, d_in: int) -> ModelDims:
        return ModelDims(d_in, self.hidden_dim, self.out_dim, self.layers)


@dataclass
class StepRecord:
    epoch: int
    step: int
    phase: str
    loss_s: float | None
    loss_t: float | None
    loss: float
    ce_s: float | None = None
    ce_t: float | None = None
    scl_s: float | None = None
    scl_t: float | None = None
    val_macro_f1: float | None = None


HISTORY_COLUMNS = ["epoch", "step", "L_s", "L_t", "L", "val_macro_f1",
                   "phase", "ce_s", "ce_t", "scl_s", "scl_t"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    val_f1: dict[int, float] = field(default_factory=dict)
    val_loss: dict[int, float] = field(default_factory=dict)
    best_epoch: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def epoch_mean_loss(self, epoch: int) -> float:
        vals = [s.loss for s in self.steps if s.epoch == epoch]
        return float(np.mean(vals))

    def rows(self) -> list[list[str]]:
        last_step = {}
        for s in self.steps:
            last_step[s.epoch] = s.step
        out = []
        for s in self.steps:
            val = self.val_f1.get(s.epoch) if last_step[s.epoch] == s.step else None
            out.append([_fmt(v) for v in (s.epoch, s.step, s.loss_s, s.loss_t, s.loss, val,
                                          s.phase, s.ce_s, s.ce_t, s.scl_s, s.scl_t)])
        return out

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            w.writerows(self.rows())


@dataclass
class TrainResult:
    params: ModelParams
    history: TrainHistory


def make_batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> list[list[str]]:
    """Shuffled, class-interleaved mini-batches of event ids.

    The shuffle is keyed by ``(seed, epoch)``. A short final batch survives
    only if it has at least two events of both classes; otherwise it is merged
    into the previous batch.
    """
    if batch_size < 2:
        raise TrainingError("batch_size must be at least 2")
    if len(dataset) < 2:
        raise TrainingError("need at least two events to form a batch")
    rng = np.random.default_rng([seed, epoch])
    by_class: dict[int, list[str]] = {}
    for ev in dataset.events:
        by_class.setdefault(ev.label, []).append(ev.id)
    keyed = []
    for label in sorted(by_class):
        ids = by_class[label]
        offset = rng.random()
        for rank, j in enumerate(rng.permutation(len(ids))):
            keyed.append(((rank + offset) / len(ids), label, ids[j]))
    order = [eid for _, _, eid in sorted(keyed)]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < batch_size:
        labels = dataset.by_id()
        tail = batches[-1]
        if len(tail) < 2 or len({labels[e].label for e in tail}) < 2:
            batches[-2].extend(batches.pop())
    return batches


def _nonzero_rows(o: Tensor) -> list[int]:
    return [i for i, row in enumerate(o.data) if np.linalg.norm(row) > 0]


def _contrastive_source(o: Tensor, labels: list[int], tau: float) -> Tensor | None:
    keep = _nonzero_rows(o)
    y = [labels[i] for i in keep]
    if not has_positives(y, y, exclude_self=True):
        return None
    if len(keep) < len(labels):
        o = take_rows(o, keep)
    return scl_source(o, y, tau)


def _contrastive_target(o_t: Tensor, y_t: list[int], o_s: Tensor, y_s: list[int],
                        tau: float) -> Tensor | None:
    kt, ks = _nonzero_rows(o_t), _nonzero_rows(o_s)
    yt = [y_t[i] for i in kt]
    ys = [y_s[i] for i in ks]
    if not kt or not ks or not has_positives(yt, ys, exclude_self=False):
        return None
    if len(kt) < len(y_t):
        o_t = take_rows(o_t, kt)
    if len(ks) < len(y_s):
        o_s = take_rows(o_s, ks)
    return scl_target(o_t, yt, o_s, ys, tau)


class _Trainer:
    def __init__(self, cfg: TrainConfig, params: ModelParams, rng: np.random.Generator):
        self.cfg = cfg
        self.params = params
        self.rng = rng
        self.opt = AdamState.zeros_like(params.arrays())
        self.history = TrainHistory()
        self.step_count = 0

    def step(self, epoch: int, phase: str, src: Corpus | None, src_ids: Sequence[str] | None,
             tgt: Corpus | None, tgt_ids: Sequence[str] | None, contrastive: bool,
             adversarial: bool) -> StepRecord:
        cfg = self.cfg
        alpha = cfg.alpha if contrastive else 0.0
        p = self.params
        rec = StepRecord(epoch, self.step_count, phase, None, None, 0.0)
        with Tape() as tape:
            L_s = L_t = None
            o_s = y_s = None
            if src_ids:
                y_s = [src.graph(i).label for i in src_ids]
                rs = forward_batch(src.graphs(src_ids), p, "train", cfg.dropout, self.rng)
                o_s = rs.o
                ce_s = ce_batch(rs.logits, y_s)
                rec.ce_s = ce_s.item()
                L_s = ce_s
                if alpha > 0:
                    scl = _contrastive_source(o_s, y_s, cfg.tau)
                    if scl is None:
                        logger.warning("epoch %d: source batch has no positive pairs; CE only", epoch)
                    else:
                        rec.scl_s = scl.item()
                        L_s = joint_loss(ce_s, scl, alpha)
                rec.loss_s = L_s.item()
            if tgt_ids:
                y_t = [tgt.graph(i).label for i in tgt_ids]
                rt = forward_batch(tgt.graphs(tgt_ids), p, "train", cfg.dropout, self.rng)
                o_adv = None
                if adversarial:
                    ce_t, o_adv = adversarial_ce(rt.o, y_t, p, cfg.epsilon)
                else:
                    ce_t = ce_batch(rt.logits, y_t)
                rec.ce_t = ce_t.item()
                L_t = ce_t
                if alpha > 0 and o_s is not None:
                    anchors, y_anchor = rt.o, y_t
                    if cfg.adv_in_scl and o_adv is not None:
                        anchors, y_anchor = concat_rows(rt.o, o_adv), y_t + y_t
                    scl = _contrastive_target(anchors, y_anchor, o_s, y_s, cfg.tau)
                    if scl is None:
                        logger.warning("epoch %d: target batch has no same-label source; CE only", epoch)
                    else:
                        rec.scl_t = scl.item()
                        L_t = joint_loss(ce_t, scl, alpha)
                rec.loss_t = L_t.item()
            if L_s is not None and L_t is not None:
                L = scale(add(L_s, L_t), 0.5)
            else:
                L = L_s if L_s is not None else L_t
            rec.loss = L.item()
            grads = tape.backward(L)
        new, self.opt = adam_step(p.arrays(), [grads[t] for t in p.tensors()], self.opt,
                                  lr=cfg.lr, weight_decay=cfg.weight_decay)
        self.params = p.with_arrays(new)
        self.history.steps.append(rec)
        self.step_count += 1
        return rec


def _validation_score(params: ModelParams, val: Corpus) -> tuple[float, float]:
    graphs = val.graphs()
    _, logits = predict(graphs, params)
    labels = [g.label for g in graphs]
    metrics = confusion(labels, logits.argmax(axis=1))
    loss = cross_entropy(Tensor(logits), labels).item()
    return metrics.macro_f1, loss


def holdout_validation(target: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus | None]:
    """Split a stratified validation slice off the target training data.

    No validation set is made when a class has fewer than two events or the
    fraction is zero; training then runs for the full epoch budget.
    """
    labels = target.dataset.labels()
    if fraction <= 0 or min(labels.count(0), labels.count(1)) < 2:
        return target, None
    val_ids, train_ids = stratified_split(target.dataset, fraction, seed)
    return target.subset(train_ids), target.subset(val_ids)


def _run_phase(tr: _Trainer, phase: str, epoch0: int, source: Corpus | None,
               target: Corpus | None, val: Corpus | None, contrastive: bool,
               adversarial: bool) -> int:
    """Train until early stopping; leaves the best parameters on ``tr``. Returns next epoch."""
    cfg = tr.cfg
    best = (-np.inf, -np.inf)
    best_params = tr.params
    best_epoch = None
    waited = 0
    epoch = epoch0
    for epoch in range(epoch0, epoch0 + cfg.max_epochs):
        sb = make_batches(source.dataset, cfg.batch_source, cfg.seed, 2 * epoch) if source else [None]
        tb = make_batches(target.dataset, cfg.batch_target, cfg.seed, 2 * epoch + 1) if target else [None]
        if source and target and cfg.pairing == "zip":
            n = max(len(sb), len(tb))
            pairs = [(tb[i % len(tb)], sb[i % len(sb)]) for i in range(n)]
        else:
            pairs = [(t, s) for t in tb for s in sb]
        for t_ids, s_ids in pairs:
            tr.step(epoch, phase, source, s_ids, target, t_ids, contrastive, adversarial)
        if val is None:
            best_params, best_epoch = tr.params, epoch
            continue
        f1, loss = _validation_score(tr.params, val)
        tr.history.val_f1[epoch] = f1
        tr.history.val_loss[epoch] = loss
        if (f1, -loss) > best:
            best, best_params, best_epoch, waited = (f1, -loss), tr.params, epoch, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    tr.params = best_params
    tr.history.best_epoch = best_epoch
    return epoch + 1


def train(source: Corpus | None, target: Corpus, cfg: TrainConfig,
          init: ModelParams | None = None) -> TrainResult:
    """Train a BiGCN under ``cfg.regime`` and return the best-validation parameters.

    ``target`` is the labelled target training data; a stratified
    ``cfg.val_fraction`` of it is held out for early stopping.
    """
    if cfg.regime in NEEDS_SOURCE and source is None:
        raise TrainingError(f"regime {cfg.regime} needs source data")
    if source is not None and source.dim != target.dim:
        raise TrainingError(f"embedding dims differ: source {source.dim}, target {target.dim}")
    params = init if init is not None else init_params(cfg.dims(target.dim), cfg.seed)
    if params.dims.d_in != target.dim:
        raise TrainingError(f"model expects d_in={params.dims.d_in}, data has {target.dim}")
    rng = np.random.default_rng([cfg.seed, 1])
    tr = _Trainer(cfg, params, rng)
    train_t, val = holdout_validation(target, cfg.val_fraction, cfg.seed)
    regime = cfg.regime
    if regime in (ACLR, CLR, CE_ONLY):
        _run_phase(tr, "joint", 0, source, train_t, val, cfg.contrastive, cfg.adversarial)
    elif regime == TARGET_ONLY:
        _run_phase(tr, "target", 0, None, train_t, val, False, False)
    elif regime == SOURCE_ONLY:
        _run_phase(tr, "source", 0, source, None, val, False, False)
    else:
        nxt = _run_phase(tr, "source", 0, source, None, val, False, False)
        tr.opt = AdamState.zeros_like(tr.params.arrays())
        _run_phase(tr, "finetune", nxt, None, train_t, val, False, False)
    return TrainResult(tr.params, tr.history)
