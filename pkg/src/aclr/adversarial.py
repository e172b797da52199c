"""Fast Gradient Value perturbation of target event vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelParams, classify
from .tensor import Tape, TapeError, Tensor, active_tape, add, add_const, cross_entropy, scale

GRAD_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class Perturbation:
    noise: np.ndarray
    epsilon: float
    grad_norm: float


def fgv_perturb(o: np.ndarray, grad: np.ndarray, epsilon: float) -> tuple[np.ndarray, Perturbation]:
    """Shift ``o`` by ``epsilon`` along the L2-normalized gradient.

    A gradient with norm below 1e-12 yields no shift.
    """
    o = np.asarray(o, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if o.shape != grad.shape:
        raise ValueError(f"o has shape {o.shape} but grad has {grad.shape}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    norm = float(np.linalg.norm(grad))
    if norm < GRAD_NORM_FLOOR:
        noise = np.zeros_like(o)
    else:
        noise = epsilon * grad / norm
    return o + noise, Perturbation(noise, float(epsilon), norm)


def ce_gradient_wrt_repr(o: np.ndarray, labels: Sequence[int], params: ModelParams) -> np.ndarray:
    """Per-row gradient of the classifier cross-entropy w.r.t. event vectors.

    Runs on a private tape with the classifier weights frozen, so the
    caller's tape and parameter gradients are untouched.
    """
    frozen = ModelParams(params.dims, params.W_td, params.W_bu,
                         params.W_c.detach(), params.b_c.detach())
    leaf = Tensor(o, requires_grad=True)
    with Tape() as tape:
        loss = cross_entropy(classify(leaf, frozen), labels)
    return tape.backward(loss)[leaf]


def perturb_rows(o: np.ndarray, grads: np.ndarray, epsilon: float) -> np.ndarray:
    """Apply :func:`fgv_perturb` independently to every row; returns the noise matrix."""
    noise = np.zeros_like(o)
    for i in range(o.shape[0]):
        _, pert = fgv_perturb(o[i], grads[i], epsilon)
        noise[i] = pert.noise
    return noise


def adversarial_ce(o: Tensor, labels: Sequence[int], params: ModelParams,
                   epsilon: float = 1.5) -> tuple[Tensor, Tensor]:
    """Clean/adversarial averaged cross-entropy for a batch of target vectors.

    Returns ``(loss, o_adv)`` where ``loss = (CE(o) + CE(o_adv)) / 2``. The
    noise is a constant: gradients reach the parameters through ``o`` and the
    classifier, never through the perturbation direction.
    """
    tape = active_tape()
    if tape is None or not tape.owns(o):
        raise TapeError("adversarial_ce needs a representation recorded on the active tape")
    ce_clean = cross_entropy(classify(o, params), labels)
    g = ce_gradient_wrt_repr(o.data, labels, params)
    o_adv = add_const(o, perturb_rows(o.data, g, epsilon))
    ce_adv = cross_entropy(classify(o_adv, params), labels)
    return scale(add(ce_clean, ce_adv), 0.5), o_adv
