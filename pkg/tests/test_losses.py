"""Tests for the four training objectives and their gradients."""

import math

import numpy as np
import pytest

from modalbridge.losses import (LossBreakdown, LossWeights, combine,
                                correlation_loss, cross_pair_loss,
                                single_modal_loss, softmax_supervision_loss)
from modalbridge.mmd import KernelSpec, median_heuristic, mmd2_biased
from modalbridge.tensor import make_rng


def _fd_check(f, x, analytic, h=1e-5, tol=1e-7):
    """Max relative error of `analytic` vs central differences of f."""
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        fd = (up - down) / (2.0 * h)
        an = analytic.reshape(-1)[i]
        worst = max(worst, abs(an - fd) / max(1.0, abs(an), abs(fd)))
    assert worst < tol, f"worst relative error {worst}"


# ---------------------------------------------------------------------------
# weights and breakdown
# ---------------------------------------------------------------------------

def test_default_weights():
    w = LossWeights()
    assert (w.w_single, w.w_source, w.w_cross, w.w_corr) == (1.0, 1.0, 0.001, 1.0)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(w_cross=-0.1)
    with pytest.raises(ValueError):
        LossWeights(w_single=float("inf"))


def test_combine_total_is_weighted_sum():
    w = LossWeights(0.5, 2.0, 0.001, 1.5)
    b = combine(w, 1.1, 2.2, 333.0, 0.7)
    expect = 0.5 * 1.1 + 2.0 * 2.2 + 0.001 * 333.0 + 1.5 * 0.7
    assert b.total == expect
    assert isinstance(b, LossBreakdown)
    assert (b.single, b.source, b.cross, b.correlation) == (1.1, 2.2, 333.0, 0.7)


def test_combine_linear_in_cross_weight():
    """Scaling w_cross rescales exactly that term of the left-to-right
    weighted sum."""
    terms = (0.9, 1.7, 412.0, 2.3)
    for alpha in (0.5, 2.0, 4.0):
        w = LossWeights(w_cross=alpha * 0.001)
        got = combine(w, *terms)
        expect = (1.0 * terms[0] + 1.0 * terms[1]
                  + (alpha * 0.001) * terms[2] + 1.0 * terms[3])
        assert got.total == expect


# ---------------------------------------------------------------------------
# softmax supervision
# ---------------------------------------------------------------------------

def test_softmax_uniform_logits_gives_log_c():
    logits = np.zeros((4, 10))
    loss, _ = softmax_supervision_loss(logits, [0, 3, 7, 9])
    assert abs(loss - math.log(10.0)) < 1e-12


def test_softmax_saturated_logit_drives_loss_to_zero():
    logits = np.zeros((1, 5))
    logits[0, 2] = 50.0
    loss, _ = softmax_supervision_loss(logits, [2])
    assert loss < 1e-20


def test_softmax_loss_gradient_matches_fd():
    rng = make_rng(0)
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad = softmax_supervision_loss(logits, labels)
    _fd_check(lambda: softmax_supervision_loss(logits, labels)[0],
              logits, grad)


def test_softmax_gradient_rows_sum_to_zero():
    rng = make_rng(1)
    logits = rng.standard_normal((5, 4))
    _, grad = softmax_supervision_loss(logits, [0, 1, 2, 3, 0])
    np.testing.assert_allclose(grad.sum(axis=1), np.zeros(5), atol=1e-15)


def test_softmax_rejects_bad_labels():
    with pytest.raises(ValueError, match="label"):
        softmax_supervision_loss(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ValueError, match="label"):
        softmax_supervision_loss(np.zeros((2, 3)), [-1, 0])
    with pytest.raises(ValueError):
        softmax_supervision_loss(np.zeros((2, 3)), [0])


# ---------------------------------------------------------------------------
# pairwise cross-modal distance
# ---------------------------------------------------------------------------

def test_cross_pair_identical_inputs_zero():
    rng = make_rng(2)
    a = rng.standard_normal((4, 6))
    loss, gi, gt = cross_pair_loss(a, a.copy())
    assert loss == 0.0
    np.testing.assert_array_equal(gi, np.zeros_like(a))
    np.testing.assert_array_equal(gt, np.zeros_like(a))


def test_cross_pair_hand_value():
    # single pair at (0,0) vs (3,4): squared distance 25
    loss, _, _ = cross_pair_loss([[0.0, 0.0]], [[3.0, 4.0]])
    assert loss == 25.0


def test_cross_pair_sums_over_pairs():
    """The loss sums (never averages) over the batch."""
    img = np.array([[0.0], [0.0]])
    txt = np.array([[1.0], [2.0]])
    loss, _, _ = cross_pair_loss(img, txt)
    assert loss == 5.0


def test_cross_pair_degree_two_homogeneity():
    rng = make_rng(3)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    base, _, _ = cross_pair_loss(a, b)
    doubled, _, _ = cross_pair_loss(2.0 * a, 2.0 * b)
    assert doubled == 4.0 * base


def test_cross_pair_gradients_match_fd():
    rng = make_rng(4)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 2))
    _, gi, gt = cross_pair_loss(a, b)
    _fd_check(lambda: cross_pair_loss(a, b)[0], a, gi)
    _fd_check(lambda: cross_pair_loss(a, b)[0], b, gt)


def test_cross_pair_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        cross_pair_loss(np.zeros((2, 3)), np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# correlation (joint supervision)
# ---------------------------------------------------------------------------

def test_correlation_uniform_logits():
    img = np.zeros((3, 20))
    txt = np.zeros((3, 20))
    loss, _, _ = correlation_loss(img, txt, [0, 5, 19])
    assert abs(loss - 2.0 * math.log(20.0)) < 1e-12


def test_correlation_identity_with_equal_inputs():
    """With identical logits the value is exactly twice the
    single-modality supervision loss (the same float added to itself)."""
    rng = make_rng(5)
    x = rng.standard_normal((4, 6))
    y = np.array([1, 0, 5, 3])
    sup, _ = softmax_supervision_loss(x, y)
    corr, _, _ = correlation_loss(x, x.copy(), y)
    assert corr == 2.0 * sup


def test_correlation_gradients_match_fd():
    rng = make_rng(6)
    img = rng.standard_normal((3, 4))
    txt = rng.standard_normal((3, 4))
    y = np.array([0, 3, 1])
    _, gi, gt = correlation_loss(img, txt, y)
    _fd_check(lambda: correlation_loss(img, txt, y)[0], img, gi)
    _fd_check(lambda: correlation_loss(img, txt, y)[0], txt, gt)


def test_correlation_rejects_bad_labels():
    with pytest.raises(ValueError, match="label"):
        correlation_loss(np.zeros((2, 3)), np.zeros((2, 3)), [0, 3])


# ---------------------------------------------------------------------------
# layer-summed distribution distance
# ---------------------------------------------------------------------------

def test_single_modal_identical_lists_zero():
    rng = make_rng(7)
    acts = [rng.standard_normal((4, 3)), rng.standard_normal((4, 5))]
    spec = KernelSpec(1.0)
    assert single_modal_loss(acts, [a.copy() for a in acts], spec) <= 1e-12


def test_single_modal_one_layer_reduces_to_mmd():
    rng = make_rng(8)
    a = rng.standard_normal((5, 3))
    b = rng.standard_normal((6, 3))
    spec = KernelSpec(median_heuristic(np.vstack((a, b))))
    assert single_modal_loss([a], [b], spec) == mmd2_biased(a, b, spec)


def test_single_modal_sums_layers():
    rng = make_rng(9)
    a1, a2 = rng.standard_normal((4, 2)), rng.standard_normal((4, 3))
    b1, b2 = rng.standard_normal((5, 2)), rng.standard_normal((5, 3))
    spec = KernelSpec(2.0)
    total = single_modal_loss([a1, a2], [b1, b2], spec)
    separate = mmd2_biased(a1, b1, spec) + mmd2_biased(a2, b2, spec)
    assert abs(total - separate) < 1e-12


def test_single_modal_per_layer_kernels():
    rng = make_rng(10)
    a1, a2 = rng.standard_normal((4, 2)), rng.standard_normal((4, 3))
    b1, b2 = rng.standard_normal((5, 2)), rng.standard_normal((5, 3))
    specs = (KernelSpec(0.5), KernelSpec(3.0))
    total = single_modal_loss([a1, a2], [b1, b2], specs)
    separate = mmd2_biased(a1, b1, specs[0]) + mmd2_biased(a2, b2, specs[1])
    assert abs(total - separate) < 1e-12


def test_single_modal_validates_lists():
    spec = KernelSpec(1.0)
    with pytest.raises(ValueError, match="equal length"):
        single_modal_loss([np.zeros((2, 2))], [], spec)
    with pytest.raises(ValueError, match="per layer"):
        single_modal_loss([np.zeros((2, 2))], [np.zeros((2, 2))],
                          (KernelSpec(1.0), KernelSpec(2.0)))


def test_all_loss_values_nonnegative():
    rng = make_rng(11)
    for _ in range(10):
        logits = rng.standard_normal((3, 4)) * 3
        y = rng.integers(0, 4, 3)
        assert softmax_supervision_loss(logits, y)[0] >= 0.0
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((3, 5))
        assert cross_pair_loss(a, b)[0] >= 0.0
        assert correlation_loss(logits, logits, y)[0] >= 0.0
        assert single_modal_loss([a], [b], KernelSpec(1.0)) >= 0.0
