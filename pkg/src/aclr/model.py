"""Bidirectional GCN encoder over propagation trees plus a linear classifier head."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import EventGraph, block_diagonal, mean_pool_matrix
from .tensor import (
    DimensionError,
    Tensor,
    add,
    concat_cols,
    matmul,
    mean_rows,
    mul_const,
    relu,
)

CHECKPOINT_FORMAT = "aclr-bigcn"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    d_in: int = 768
    d_hidden: int = 512
    d_out: int = 128
    layers: int = 2
    classes: int = 2

    def __post_init__(self):
        if min(self.d_in, self.d_hidden, self.d_out, self.layers, self.classes) < 1:
            raise ValueError(f"model dims must be positive: {self}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = [self.d_in] + [self.d_hidden] * (self.layers - 1) + [self.d_out]
        return list(zip(widths[:-1], widths[1:]))


SYNTHETIC_DIMS = ModelDims(d_in=32, d_hidden=16, d_out=8)


@dataclass
class ModelParams:
    dims: ModelDims
    W_td: list[Tensor]
    W_bu: list[Tensor]
    W_c: Tensor
    b_c: Tensor

    def tensors(self) -> list[Tensor]:
        """Parameters in a fixed order (the optimizer relies on it)."""
        return [*self.W_td, *self.W_bu, self.W_c, self.b_c]

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]

    def with_arrays(self, arrays: Sequence[np.ndarray], requires_grad: bool = True) -> "ModelParams":
        ts = [Tensor(a, requires_grad=requires_grad) for a in arrays]
        L = self.dims.layers
        return ModelParams(self.dims, ts[:L], ts[L:2 * L], ts[2 * L], ts[2 * L + 1])

    def copy(self) -> "ModelParams":
        return self.with_arrays(self.arrays())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    W_td = [Tensor(_glorot(rng, i, o), requires_grad=True) for i, o in dims.layer_shapes()]
    W_bu = [Tensor(_glorot(rng, i, o), requires_grad=True) for i, o in dims.layer_shapes()]
    W_c = Tensor(_glorot(rng, 2 * dims.d_out, dims.classes), requires_grad=True)
    b_c = Tensor(np.zeros((1, dims.classes)), requires_grad=True)
    return ModelParams(dims, W_td, W_bu, W_c, b_c)


@dataclass
class EventRepr:
    """Event-level vectors ``o`` (one row per event) and their class logits."""

    o: Tensor
    logits: Tensor


def classify(o: Tensor, params: ModelParams) -> Tensor:
    return add(matmul(o, params.W_c), params.b_c)


def _gcn(X: Tensor, A_hat: Tensor, weights: Sequence[Tensor], train: bool,
         dropout: float, rng: np.random.Generator | None) -> Tensor:
    H = X
    for layer, W in enumerate(weights):
        if H.shape[1] != W.shape[0]:
            raise DimensionError(f"layer {layer}: features of width {H.shape[1]} "
                                 f"but weight expects {W.shape[0]}")
        H = relu(matmul(A_hat, matmul(H, W)))
        if layer == 0 and train and dropout > 0:
            keep = 1.0 - dropout
            mask = (rng.random(H.shape) < keep) / keep
            H = mul_const(H, mask)
    return H


def _check_mode(mode: str, dropout: float, rng) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and dropout > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    if not 0 <= dropout < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    return train


def forward(X: np.ndarray | Tensor, adj_td: np.ndarray, adj_bu: np.ndarray, params: ModelParams,
            mode: str = "eval", dropout: float = 0.2,
            rng: np.random.Generator | None = None) -> EventRepr:
    """Encode a single event. ``adj_*`` are the normalized adjacencies."""
    train = _check_mode(mode, dropout, rng)
    X = X if isinstance(X, Tensor) else Tensor(X)
    if X.shape[0] != np.shape(adj_td)[0] or X.shape[0] != np.shape(adj_bu)[0]:
        raise DimensionError(f"{X.shape[0]} feature rows but adjacency of size {np.shape(adj_td)[0]}")
    h_td = _gcn(X, Tensor(adj_td), params.W_td, train, dropout, rng)
    h_bu = _gcn(X, Tensor(adj_bu), params.W_bu, train, dropout, rng)
    o = mean_rows(concat_cols(h_td, h_bu))
    return EventRepr(o, classify(o, params))


def forward_batch(graphs: Sequence[EventGraph], params: ModelParams, mode: str = "eval",
                  dropout: float = 0.2, rng: np.random.Generator | None = None) -> EventRepr:
    """Encode several events at once by stacking them into one block-diagonal graph.

    Equivalent to calling :func:`forward` per event and stacking the rows,
    apart from dropout masks being drawn jointly.
    """
    train = _check_mode(mode, dropout, rng)
    if not graphs:
        raise ValueError("empty batch")
    X = Tensor(np.vstack([g.X for g in graphs]))
    td = Tensor(block_diagonal([g.td for g in graphs]))
    bu = Tensor(block_diagonal([g.bu for g in graphs]))
    pool = Tensor(mean_pool_matrix([g.n for g in graphs]))
    h_td = _gcn(X, td, params.W_td, train, dropout, rng)
    h_bu = _gcn(X, bu, params.W_bu, train, dropout, rng)
    o = matmul(pool, concat_cols(h_td, h_bu))
    return EventRepr(o, classify(o, params))


def predict(graphs: Sequence[EventGraph], params: ModelParams, chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode event vectors and logits for many events, in input order."""
    os_, logits = [], []
    for i in range(0, len(graphs), chunk):
        rep = forward_batch(graphs[i:i + chunk], params, "eval")
        os_.append(rep.o.data)
        logits.append(rep.logits.data)
    return np.vstack(os_), np.vstack(logits)


def save_checkpoint(params: ModelParams, path: str | Path, extra: dict | None = None) -> None:
    d = params.dims
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": {"d_in": d.d_in, "d_hidden": d.d_hidden, "d_out": d.d_out,
                 "layers": d.layers, "classes": d.classes},
        "W_td": [t.data.tolist() for t in params.W_td],
        "W_bu": [t.data.tolist() for t in params.W_bu],
        "W_c": params.W_c.data.tolist(),
        "b_c": params.b_c.data.tolist(),
    }
    if extra:
        payload["meta"] = extra
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    dims = ModelDims(**payload["dims"])
    arrays = [*payload["W_td"], *payload["W_bu"], payload["W_c"], payload["b_c"]]
    params = init_params(dims).with_arrays([np.asarray(a, dtype=np.float64) for a in arrays])
    for t, (i, o) in zip(params.W_td + params.W_bu, dims.layer_shapes() * 2):
        if t.shape != (i, o):
            raise ValueError(f"{path}: weight shape {t.shape} does not match dims {dims}")
    return params
