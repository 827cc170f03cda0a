"""Central finite-difference verification of every analytic gradient.

The harness perturbs each parameter entry by ±h, re-evaluates the
joint objective, and compares the resulting slope against the analytic
backward pass — per loss term (by isolating each term's weight) and
per parameter block. Kernel bandwidths are pinned to the unperturbed
activations before differencing: the bandwidth heuristic depends on
the parameters, and letting it move would differentiate a different
function than the one the analytic gradient covers.

Intended for toy dimensions only; a guard rejects networks above
5000 parameters since the sweep is O(params) objective evaluations.
"""

from dataclasses import dataclass

import numpy as np

from .losses import LossWeights
from .network import NetworkConfig, init, map_params, n_params, named_arrays
from .tensor import make_rng
from .trainer import Batch, joint_loss_and_grads

DEFAULT_TOLERANCE = 1e-5
MAX_CHECK_PARAMS = 5000

# One sweep per isolated loss term plus the jointly weighted objective.
TERM_WEIGHTS = (
    ("single", LossWeights(1.0, 0.0, 0.0, 0.0)),
    ("source", LossWeights(0.0, 1.0, 0.0, 0.0)),
    ("cross", LossWeights(0.0, 0.0, 1.0, 0.0)),
    ("correlation", LossWeights(0.0, 0.0, 0.0, 1.0)),
    ("composite", LossWeights()),
)

TOY_CONFIG = NetworkConfig(d_img_src=4, d_img_tgt=4, d_txt=3,
                           c_src=3, c_tgt=3, h=5)


def rel_error(a: float, b: float) -> float:
    """|a-b| / max(1, |a|, |b|): absolute near zero, relative at scale."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


def numeric_gradient(f, params, h: float = 1e-5):
    """Central-difference gradient of a scalar ``f(params)`` over every
    tensor entry; returns a Params-shaped object."""
    grads = map_params(params, np.zeros_like)
    for (_, p), (_, g) in zip(named_arrays(params), named_arrays(grads)):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.shape[0]):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = f(params)
            flat_p[i] = orig - h
            down = f(params)
            flat_p[i] = orig
            flat_g[i] = (up - down) / (2.0 * h)
    return grads


@dataclass
class BlockCheck:
    """Worst per-entry discrepancy of one loss term on one block."""

    term: str
    block: str
    max_rel_err: float


@dataclass
class GradCheckReport:
    rows: list
    tol: float

    @property
    def worst(self) -> BlockCheck:
        return max(self.rows, key=lambda r: r.max_rel_err)

    @property
    def passed(self) -> bool:
        return self.worst.max_rel_err < self.tol

    def format_table(self) -> str:
        lines = [f"{'term':<12} {'block':<14} {'max_rel_err':>12}",
                 "-" * 40]
        for row in self.rows:
            lines.append(f"{row.term:<12} {row.block:<14} "
                         f"{row.max_rel_err:>12.3e}")
        w = self.worst
        lines.append("-" * 40)
        lines.append(f"worst: {w.term}/{w.block} = {w.max_rel_err:.3e} "
                     f"(tolerance {self.tol:g})")
        return "\n".join(lines)


def _random_batch(config: NetworkConfig, rng, n_src: int = 3,
                  n_pairs: int = 3) -> Batch:
    return Batch(
        src_x=rng.standard_normal((n_src, config.d_img_src)),
        src_y=rng.integers(0, config.c_src, size=n_src),
        img_x=rng.standard_normal((n_pairs, config.d_img_tgt)),
        txt_x=rng.standard_normal((n_pairs, config.d_txt)),
        pair_y=rng.integers(0, config.c_tgt, size=n_pairs),
    )


def check_instance(seed: int, config: NetworkConfig = TOY_CONFIG,
                   h: float = 1e-5, corrupt: bool = False):
    """All five sweeps on one random instance; returns BlockCheck rows.

    ``corrupt`` offsets one analytic gradient block (negative control:
    the report must then fail).
    """
    rng = make_rng(seed)
    params = init(config, rng)
    # Nudge parameters off the init manifold (shared image pathways,
    # zero biases) so the check exercises a generic point.
    params = map_params(
        params, lambda a: a + 0.05 * rng.standard_normal(a.shape))
    batch = _random_batch(config, rng)

    # Pin bandwidths once, from the unperturbed activations.
    _, _, kernels = joint_loss_and_grads(params, config, LossWeights(),
                                         batch, with_grads=False)

    rows = []
    for term, weights in TERM_WEIGHTS:
        _, analytic, _ = joint_loss_and_grads(params, config, weights, batch,
                                              kernels=kernels)
        if corrupt and term == "composite":
            analytic.tgt_head.w += 1e-3

        def objective(p):
            b, _, _ = joint_loss_and_grads(p, config, weights, batch,
                                           kernels=kernels, with_grads=False)
            return b.total

        numeric = numeric_gradient(objective, params, h=h)
        for (name, a), (_, n) in zip(named_arrays(analytic),
                                     named_arrays(numeric)):
            if a.size == 0:
                err = 0.0
            else:
                diff = np.abs(a - n)
                denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
                err = float(np.max(diff / denom))
            rows.append(BlockCheck(term=term, block=name, max_rel_err=err))
    return rows


def run_suite(base_seed: int = 0, instances: int = 5,
              config: NetworkConfig = TOY_CONFIG, h: float = 1e-5,
              tol: float = DEFAULT_TOLERANCE,
              corrupt: bool = False) -> GradCheckReport:
    """Sweep ``instances`` random instances; each term/block row keeps
    its worst error across instances. Instance seeds derive from
    ``base_seed`` via SeedSequence spawning."""
    if n_params(init(config, make_rng(0))) > MAX_CHECK_PARAMS:
        raise ValueError(
            f"gradient checking is restricted to networks with at most "
            f"{MAX_CHECK_PARAMS} parameters")
    if instances < 1:
        raise ValueError("instances must be >= 1")
    children = np.random.SeedSequence(base_seed).spawn(instances)
    merged = {}
    for child in children:
        seed = int(child.generate_state(1)[0])
        for row in check_instance(seed, config=config, h=h, corrupt=corrupt):
            key = (row.term, row.block)
            if key not in merged or row.max_rel_err > merged[key].max_rel_err:
                merged[key] = row
    return GradCheckReport(rows=list(merged.values()), tol=tol)
