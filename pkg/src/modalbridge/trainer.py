"""Minibatch SGD loop joining the four objectives.

Each iteration samples one source batch and one paired target batch,
runs the three pathway forwards, assembles the weighted loss
(distribution-matching + source supervision + pairwise cross-modal +
shared-head supervision), backpropagates, and takes a plain SGD step.

Determinism: ``SeedSequence(seed)`` spawns two child streams, one for
parameter init and one for batch sampling; within a batch the pair
indices are drawn before the source indices; gradient accumulation
order is fixed inside ``network.backward``. Given (seed, config, data)
the final parameters are bit-reproducible on one thread count.

The kernel bandwidths for the distribution term come from the median
heuristic on the current batch's stacked activations (one spec per
layer). With ``bandwidth_refresh`` off they are computed once, on the
first batch, and reused for the rest of the run.
"""

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Dataset, PairedDataset
from .errors import DivergenceError, FeatureFormatError
from .losses import (LossBreakdown, LossWeights, combine, correlation_loss,
                     cross_pair_loss, single_modal_loss,
                     softmax_supervision_loss)
from .mmd import KernelSpec, median_heuristic, mmd2_gradient
from .network import (Ablation, ActivationGrads, NetworkConfig, Params,
                      TraceSet, backward, forward_source, forward_target,
                      init, sgd_step)


@dataclass(frozen=True)
class TrainConfig:
    """Loop hyperparameters. ``ablation=None`` defers to the network
    config; a value here overrides it (handy for config files). With
    ``lr_step > 0`` the rate is multiplied by ``lr_gamma`` every
    ``lr_step`` iterations (off by default)."""

    lr: float = 0.01
    iterations: int = 500
    batch_src: int = 32
    batch_tgt: int = 32
    weights: LossWeights = LossWeights()
    seed: int = 0
    ablation: Optional[Ablation] = None
    bandwidth_refresh: bool = True
    lr_step: int = 0
    lr_gamma: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ValueError("lr must be positive and finite")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_src < 1 or self.batch_tgt < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.lr_step < 0:
            raise ValueError("lr_step must be >= 0")
        if not (np.isfinite(self.lr_gamma) and self.lr_gamma > 0):
            raise ValueError("lr_gamma must be positive and finite")


@dataclass
class Batch:
    """One sampled step: source rows with labels, plus aligned target
    pair rows (img row p pairs with txt row p, sharing pair_y[p])."""

    src_x: np.ndarray
    src_y: np.ndarray
    img_x: np.ndarray
    txt_x: np.ndarray
    pair_y: np.ndarray


@dataclass
class TrainLog:
    """Per-iteration loss history (losses measured before each update),
    wall time in seconds, and the final parameters."""

    history: list
    wall_time: float
    params: Params


def _chunks(n, batch, rng):
    """Endless epoch-style index chunks: shuffle, slice, reshuffle.
    A short remainder at the epoch end is dropped."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            yield order[start:start + batch]


def sample_batches(src: Dataset, tgt: PairedDataset, cfg: TrainConfig,
                   rng: np.random.Generator):
    """Generator of Batch objects.

    Sampling is without replacement within an epoch (both pools are
    permutations, consumed in slices). Pair indexing keeps image and
    text rows aligned. Pair indices are drawn before source indices in
    every batch so the stream is reproducible from the rng seed.
    """
    if src.n < 1 or tgt.n < 1:
        raise ValueError("cannot sample from an empty dataset")
    if cfg.batch_src > src.n:
        raise ValueError(f"batch_src={cfg.batch_src} exceeds {src.n} source rows")
    if cfg.batch_tgt > tgt.n:
        raise ValueError(f"batch_tgt={cfg.batch_tgt} exceeds {tgt.n} pairs")
    pair_chunks = _chunks(tgt.n, cfg.batch_tgt, rng)
    src_chunks = _chunks(src.n, cfg.batch_src, rng)
    while True:
        p = next(pair_chunks)
        s = next(src_chunks)
        yield Batch(src_x=src.features[s], src_y=src.labels[s],
                    img_x=tgt.img.features[p], txt_x=tgt.txt.features[p],
                    pair_y=tgt.img.labels[p])


# Canonical order in which loss terms are checked for divergence and
# written to the history CSV.
LOSS_FIELDS = ("single", "source", "cross", "correlation", "total")


def _all_finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def joint_loss_and_grads(params: Params, config: NetworkConfig,
                         weights: LossWeights, batch: Batch,
                         kernels=None, with_grads: bool = True):
    """Forward all active pathways on one batch and assemble the
    weighted joint objective.

    Returns (LossBreakdown, parameter gradients or None, kernel specs
    used for the distribution term or None). Pass ``kernels`` (one
    KernelSpec per matched layer, h6 then h7) to pin bandwidths —
    required for finite-difference checks, where the median heuristic
    must not move with the parameters. Inactive terms report 0 and
    contribute no gradient.

    Divergence is reported, not raised: a term whose input activations
    have overflowed to NaN/Inf comes back as NaN in the breakdown (and
    no gradients are returned), leaving the caller to diagnose the
    offending term. The trainer turns that into a DivergenceError.
    """
    abl = config.ablation
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        src_trace = (forward_source(batch.src_x, params, config)
                     if abl.has_source_pathway else None)
        img_trace = forward_target(batch.img_x, "image", params, config)
        txt_trace = forward_target(batch.txt_x, "text", params, config)

        used_kernels = None
        single = 0.0
        if abl.has_single_modal:
            layer_pairs = ((src_trace.h6, img_trace.h6),
                           (src_trace.h7, img_trace.h7))
            if kernels is not None:
                used_kernels = tuple(kernels)
                if len(used_kernels) != len(layer_pairs):
                    raise ValueError("need one KernelSpec per matched layer")
            elif _all_finite(*(a for pair in layer_pairs for a in pair)):
                bandwidths = [median_heuristic(np.vstack(pair))
                              for pair in layer_pairs]
                if _all_finite(np.asarray(bandwidths)):
                    used_kernels = tuple(KernelSpec(bw) for bw in bandwidths)
            if used_kernels is not None and _all_finite(
                    *(a for pair in layer_pairs for a in pair)):
                single = single_modal_loss(
                    [src_trace.h6, src_trace.h7],
                    [img_trace.h6, img_trace.h7], used_kernels)
            else:
                single = float("nan")
                used_kernels = None

        source = 0.0
        src_sup_grad = None
        if abl.has_source_supervision:
            if _all_finite(src_trace.logits):
                source, src_sup_grad = softmax_supervision_loss(
                    src_trace.logits, batch.src_y)
            else:
                source = float("nan")

        if _all_finite(img_trace.h6, img_trace.h7, txt_trace.h6,
                       txt_trace.h7):
            c6, gi6, gt6 = cross_pair_loss(img_trace.h6, txt_trace.h6)
            c7, gi7, gt7 = cross_pair_loss(img_trace.h7, txt_trace.h7)
            cross = c6 + c7
        else:
            cross = float("nan")

        if _all_finite(img_trace.logits, txt_trace.logits):
            correlation, gci, gct = correlation_loss(
                img_trace.logits, txt_trace.logits, batch.pair_y)
        else:
            correlation = float("nan")

        breakdown = combine(weights, single, source, cross, correlation)
        healthy = all(np.isfinite(getattr(breakdown, f)) for f in LOSS_FIELDS)
        if not with_grads or not healthy:
            return breakdown, None, used_kernels

        d_img_h6 = weights.w_cross * gi6
        d_img_h7 = weights.w_cross * gi7
        d_txt_h6 = weights.w_cross * gt6
        d_txt_h7 = weights.w_cross * gt7
        d_src_h6 = d_src_h7 = None
        if abl.has_single_modal:
            ga6, gb6 = mmd2_gradient(src_trace.h6, img_trace.h6,
                                     used_kernels[0])
            ga7, gb7 = mmd2_gradient(src_trace.h7, img_trace.h7,
                                     used_kernels[1])
            d_src_h6 = weights.w_single * ga6
            d_src_h7 = weights.w_single * ga7
            d_img_h6 = d_img_h6 + weights.w_single * gb6
            d_img_h7 = d_img_h7 + weights.w_single * gb7

        act_grads = ActivationGrads(
            d_src_logits=(weights.w_source * src_sup_grad
                          if src_sup_grad is not None else None),
            d_src_h6=d_src_h6,
            d_src_h7=d_src_h7,
            d_img_logits=weights.w_corr * gci,
            d_img_h6=d_img_h6,
            d_img_h7=d_img_h7,
            d_txt_logits=weights.w_corr * gct,
            d_txt_h6=d_txt_h6,
            d_txt_h7=d_txt_h7,
        )
        grads = backward(TraceSet(src_trace, img_trace, txt_trace),
                         act_grads, params, config)
    return breakdown, grads, used_kernels


def _check_finite(breakdown: LossBreakdown, iteration: int) -> None:
    for name in LOSS_FIELDS:
        if not np.isfinite(getattr(breakdown, name)):
            raise DivergenceError(name, iteration)


def resolve_network_config(net_cfg: NetworkConfig,
                           train_cfg: TrainConfig) -> NetworkConfig:
    """Apply the train config's ablation override, if any."""
    if train_cfg.ablation is None or train_cfg.ablation is net_cfg.ablation:
        return net_cfg
    return replace(net_cfg, ablation=train_cfg.ablation)


def _check_dims(src: Dataset, tgt: PairedDataset, config: NetworkConfig):
    checks = (
        (src.d, config.d_img_src, "source feature width"),
        (tgt.img.d, config.d_img_tgt, "target image feature width"),
        (tgt.txt.d, config.d_txt, "target text feature width"),
        (src.class_count, config.c_src, "source class count"),
        (tgt.img.class_count, config.c_tgt, "target class count"),
    )
    for got, want, what in checks:
        if got != want:
            raise ValueError(f"{what} mismatch: dataset has {got}, "
                             f"network expects {want}")


def train(src: Dataset, tgt: PairedDataset, net_cfg: NetworkConfig,
          train_cfg: TrainConfig, snapshot_every: int = 0,
          snapshot_fn=None):
    """Run the full loop; returns (Params, TrainLog).

    Losses are recorded at the current parameters, before each update,
    so history[0] is the loss at initialization. A non-finite term
    aborts with a diagnostic naming the term and 1-based iteration.
    ``snapshot_fn(iteration, params)`` fires every ``snapshot_every``
    iterations when both are given.
    """
    config = resolve_network_config(net_cfg, train_cfg)
    _check_dims(src, tgt, config)
    if config.ablation.has_single_modal and (train_cfg.batch_src < 2
                                             or train_cfg.batch_tgt < 2):
        raise ValueError("batch sizes must be >= 2 while the distribution "
                         "term is active (bandwidth heuristic needs pairs)")

    init_seed, sample_seed = np.random.SeedSequence(train_cfg.seed).spawn(2)
    params = init(config, np.random.Generator(np.random.PCG64(init_seed)))
    stream = sample_batches(src, tgt, train_cfg,
                            np.random.Generator(np.random.PCG64(sample_seed)))

    history = []
    kernels = None
    started = time.perf_counter()
    for t in range(1, train_cfg.iterations + 1):
        batch = next(stream)
        reuse = None if train_cfg.bandwidth_refresh else kernels
        breakdown, grads, used = joint_loss_and_grads(
            params, config, train_cfg.weights, batch, kernels=reuse)
        if kernels is None:
            kernels = used
        _check_finite(breakdown, t)
        lr = train_cfg.lr
        if train_cfg.lr_step > 0:
            lr = train_cfg.lr * train_cfg.lr_gamma ** ((t - 1) // train_cfg.lr_step)
        sgd_step(params, grads, lr)
        history.append(breakdown)
        if snapshot_every > 0 and snapshot_fn is not None \
                and t % snapshot_every == 0:
            snapshot_fn(t, params)
    wall = time.perf_counter() - started
    return params, TrainLog(history=history, wall_time=wall, params=params)


def evaluate_full_losses(src: Dataset, tgt: PairedDataset, params: Params,
                         net_cfg: NetworkConfig,
                         weights: LossWeights = LossWeights(),
                         kernels=None) -> LossBreakdown:
    """Single deterministic pass over the entire datasets; no update.

    Bandwidths come from the median heuristic on the full activation
    stacks unless ``kernels`` pins them. Inactive terms report 0.
    """
    _check_dims(src, tgt, net_cfg)
    batch = Batch(src_x=src.features, src_y=src.labels,
                  img_x=tgt.img.features, txt_x=tgt.txt.features,
                  pair_y=tgt.img.labels)
    breakdown, _, _ = joint_loss_and_grads(params, net_cfg, weights, batch,
                                           kernels=kernels, with_grads=False)
    return breakdown


HISTORY_HEADER = "iter,single,source,cross,correlation,total"


def write_history_csv(path, history) -> None:
    """Loss history CSV with 1-based iteration numbers."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(HISTORY_HEADER + "\n")
        for i, row in enumerate(history, start=1):
            vals = ",".join(repr(float(getattr(row, name)))
                            for name in LOSS_FIELDS)
            f.write(f"{i},{vals}\n")


# Keys accepted in a training config file, mirroring TrainConfig: the
# four loss weights flatten to w_single/w_source/w_cross/w_corr and
# ablation takes the enum value strings.
_TRAIN_KEYS = {
    "lr": float, "iterations": int, "batch_src": int, "batch_tgt": int,
    "seed": int, "bandwidth_refresh": bool, "lr_step": int,
    "lr_gamma": float, "w_single": float, "w_source": float,
    "w_cross": float, "w_corr": float, "ablation": str,
}


def train_config_from_file(path) -> TrainConfig:
    """Build a TrainConfig from a ``key = value`` file; unknown keys,
    bad values, and invalid settings all raise FeatureFormatError."""
    from .data import read_kv_file, _coerce

    raw = read_kv_file(path)
    unknown = sorted(set(raw) - set(_TRAIN_KEYS))
    if unknown:
        raise FeatureFormatError(f"{path}: unknown keys {unknown}")
    vals = {k: _coerce(path, k, v, _TRAIN_KEYS[k]) for k, v in raw.items()}

    weight_fields = {}
    for key, fld in (("w_single", "w_single"), ("w_source", "w_source"),
                     ("w_cross", "w_cross"), ("w_corr", "w_corr")):
        if key in vals:
            weight_fields[fld] = vals.pop(key)
    ablation = None
    if "ablation" in vals:
        text = vals.pop("ablation")
        try:
            ablation = Ablation(text)
        except ValueError:
            choices = ", ".join(a.value for a in Ablation)
            raise FeatureFormatError(
                f"{path}: ablation must be one of {choices}; got {text!r}"
            ) from None
    try:
        weights = LossWeights(**weight_fields)
        return TrainConfig(weights=weights, ablation=ablation, **vals)
    except ValueError as e:
        raise FeatureFormatError(f"{path}: {e}") from None
