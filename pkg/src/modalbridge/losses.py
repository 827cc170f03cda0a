"""The four scalar training objectives and their activation gradients.

Conventions shared by all gradient-returning functions here: the first
returned value is the scalar loss, the following values are gradients
with respect to the inputs in argument order. Gradients are exact
analytic derivatives of the returned scalar; every one of them is held
to a central finite-difference check in the test suite.
"""

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import mmd as mmd_mod
from .mmd import KernelSpec
from .tensor import as_matrix, log_softmax_rows, softmax_rows


@dataclass(frozen=True)
class LossWeights:
    """Multipliers combining the four objectives into one total.

    The pairwise cross-modal term sums (rather than averages) over
    pairs, so its raw magnitude is roughly three orders larger than the
    other terms; the small default weight compensates.
    """

    w_single: float = 1.0
    w_source: float = 1.0
    w_cross: float = 0.001
    w_corr: float = 1.0

    def __post_init__(self):
        vals = (self.w_single, self.w_source, self.w_cross, self.w_corr)
        if any(not np.isfinite(v) or v < 0.0 for v in vals):
            raise ValueError("loss weights must be finite and >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    """Raw (unweighted) per-term values plus the weighted total."""

    single: float
    source: float
    cross: float
    correlation: float
    total: float


def combine(weights: LossWeights, single: float, source: float,
            cross: float, correlation: float) -> LossBreakdown:
    total = (weights.w_single * single + weights.w_source * source
             + weights.w_cross * cross + weights.w_corr * correlation)
    return LossBreakdown(single, source, cross, correlation, total)


def _check_labels(labels, n_classes: int, batch: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != batch:
        raise ValueError(f"labels must be 1-D of length {batch}")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return y


def softmax_supervision_loss(logits: np.ndarray, labels):
    """Mean negative log-likelihood of the true classes.

    Returns (loss, d loss / d logits) with the gradient
    (softmax - one_hot) / batch.
    """
    z = as_matrix(logits, "logits")
    batch, c = z.shape
    if batch < 1:
        raise ValueError("need at least one row of logits")
    y = _check_labels(labels, c, batch)
    logp = log_softmax_rows(z)
    loss = -float(np.mean(logp[np.arange(batch), y]))
    grad = softmax_rows(z)
    grad[np.arange(batch), y] -= 1.0
    grad /= batch
    return loss, grad


def cross_pair_loss(img_act: np.ndarray, txt_act: np.ndarray):
    """Summed squared Euclidean distance between paired rows.

    Row p of each input must come from the same target pair. The sum is
    deliberately not averaged over pairs; the default cross weight is
    tuned against that magnitude. Returns (loss, d/d img, d/d txt).
    """
    a = as_matrix(img_act, "img_act")
    b = as_matrix(txt_act, "txt_act")
    if a.shape != b.shape:
        raise ValueError(f"cross_pair_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    loss = float(np.sum(diff * diff))
    return loss, 2.0 * diff, -2.0 * diff


def correlation_loss(img_logits: np.ndarray, txt_logits: np.ndarray, labels):
    """Joint supervision of both modalities against the shared labels.

    Exactly the sum of the two per-modality supervision losses, so with
    identical inputs it equals twice the supervision loss. Returns
    (loss, d/d img_logits, d/d txt_logits).
    """
    img_loss, img_grad = softmax_supervision_loss(img_logits, labels)
    txt_loss, txt_grad = softmax_supervision_loss(txt_logits, labels)
    return img_loss + txt_loss, img_grad, txt_grad


KernelArg = Union[KernelSpec, Sequence[KernelSpec]]


def single_modal_loss(src_acts: Sequence[np.ndarray],
                      tgt_acts: Sequence[np.ndarray],
                      kernel: KernelArg) -> float:
    """Sum of biased squared-MMD values over corresponding layers.

    ``kernel`` is either one KernelSpec applied at every layer or a
    per-layer sequence of the same length as the activation lists.
    """
    if len(src_acts) != len(tgt_acts):
        raise ValueError("activation lists must have equal length")
    if isinstance(kernel, KernelSpec):
        kernels = [kernel] * len(src_acts)
    else:
        kernels = list(kernel)
        if len(kernels) != len(src_acts):
            raise ValueError("need one KernelSpec per layer")
    return sum(
        mmd_mod.mmd2_biased(s, t, k)
        for s, t, k in zip(src_acts, tgt_acts, kernels)
    )
