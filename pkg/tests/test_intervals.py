import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mltpn import tensor as T
from mltpn.gradcheck import analytic_grads, numeric_grad, relative_error
from mltpn.intervals import (Interval, LossWeights, classification_loss, confidence_loss, giou, giou_loss,
                             giou_loss_terms, iou, iou_matrix, joint_loss, cross_entropy_terms)
from mltpn.tensor import Tensor

finite = st.floats(-100, 100, allow_nan=False)
length = st.floats(0.01, 50)


@st.composite
def intervals(draw):
    s = draw(finite)
    return Interval(s, s + draw(length))


def test_interval_rejects_empty():
    with pytest.raises(ValueError):
        Interval(3.0, 3.0)


@pytest.mark.parametrize("p, g, expected_iou, expected_giou", [
    ((0, 10), (0, 10), 1.0, 1.0),
    ((0, 10), (5, 15), 1 / 3, 1 / 3),
    ((0, 2), (8, 10), 0.0, -0.6),
])
def test_hand_values(p, g, expected_iou, expected_giou):
    p, g = Interval(*p), Interval(*g)
    assert abs(iou(p, g) - expected_iou) <= 1e-12
    assert abs(giou(p, g) - expected_giou) <= 1e-12
    assert abs(giou_loss(p, g) - (1 - expected_giou)) <= 1e-12


@given(intervals(), intervals())
def test_giou_bounds_and_symmetry(p, g):
    assert giou(p, g) <= iou(p, g) + 1e-12
    assert -1 < giou(p, g) <= 1
    assert iou(p, g) == pytest.approx(iou(g, p), abs=1e-12)
    assert 0 <= giou_loss(p, g) < 2


@given(intervals(), intervals(), st.floats(0.1, 10), st.floats(-100, 100))
def test_giou_translation_scale_invariance(p, g, s, d):
    moved = giou(Interval(s * p.start + d, s * p.end + d), Interval(s * g.start + d, s * g.end + d))
    assert moved == pytest.approx(giou(p, g), abs=1e-9)


def test_giou_decreases_with_separation():
    g = Interval(0, 4)
    values = [giou(Interval(4 + gap, 7 + gap), g) for gap in (0.5, 1, 5, 50, 5000)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] > -1 and values[-1] < -0.99


def test_giou_equals_iou_when_union_contiguous():
    assert giou(Interval(0, 5), Interval(3, 9)) == iou(Interval(0, 5), Interval(3, 9))
    assert giou(Interval(0, 5), Interval(5, 9)) == 0.0


def test_iou_matrix_matches_scalar():
    a = np.array([[0, 10], [5, 15], [20, 30]], dtype=float)
    b = np.array([[0, 10], [8, 12]], dtype=float)
    m = iou_matrix(a, b)
    for i in range(3):
        for j in range(2):
            assert m[i, j] == pytest.approx(iou(Interval(*a[i]), Interval(*b[j])), abs=1e-15)


@pytest.mark.parametrize("p, g", [((0.0, 10.0), (5.0, 15.0)), ((0.0, 2.0), (8.0, 10.0)),
                                  ((1.0, 9.0), (2.0, 5.0)), ((-3.0, 4.0), (1.0, 12.0))])
def test_giou_loss_gradient(p, g):
    ends = [Tensor([v], requires_grad=True) for v in (*p, *g)]

    def loss():
        return T.sum(giou_loss_terms(*ends))

    grads = analytic_grads(loss, ends)
    for grad, t in zip(grads, ends):
        assert relative_error(grad, numeric_grad(loss, t)) <= 1e-4
    assert loss().item() == pytest.approx(giou_loss(Interval(*p), Interval(*g)), abs=1e-12)


def test_degenerate_prediction_is_widened():
    out = giou_loss_terms(Tensor([5.0]), Tensor([4.0]), [0.0], [10.0])
    assert math.isfinite(out.item())


def test_classification_loss_examples():
    assert classification_loss(Tensor(np.zeros((21, 1))), [4]).item() == pytest.approx(math.log(21), abs=1e-12)
    assert math.log(21) == pytest.approx(3.0445, abs=1e-4)
    prev = math.inf
    for m in (0.0, 1.0, 5.0, 20.0, 50.0):
        logits = np.zeros((4, 1))
        logits[2, 0] = m
        cur = classification_loss(Tensor(logits), [2]).item()
        assert 0 <= cur < prev
        prev = cur
    assert prev < 1e-20
    row = np.array([[0.3], [-1.2], [2.0]])
    assert classification_loss(Tensor(np.hstack([row, row])), [1, 1]).item() == pytest.approx(
        classification_loss(Tensor(row), [1]).item(), abs=1e-15)


def test_classification_loss_label_range():
    with pytest.raises(ValueError):
        classification_loss(Tensor(np.zeros((3, 2))), [0, 3])


def test_classification_loss_permutation_invariant():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((4, 9))
    labels = rng.integers(0, 4, 9)
    perm = rng.permutation(9)
    a = classification_loss(Tensor(logits), labels).item()
    b = classification_loss(Tensor(logits[:, perm]), labels[perm]).item()
    assert a == pytest.approx(b, abs=1e-14)
    assert a >= 0


def test_confidence_loss_examples():
    assert confidence_loss(Tensor([0.5]), [0.5]).item() == 0.0
    assert confidence_loss(Tensor([0.3]), [0.5]).item() == pytest.approx(0.02, abs=1e-15)
    assert confidence_loss(Tensor([0.0]), [1.0]).item() == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        confidence_loss(Tensor([0.1, 0.2]), [0.5])


def test_joint_loss_examples():
    w = LossWeights(1, 10, 0.3)
    total = joint_loss(Tensor([6.0]), Tensor([0.04]), Tensor([1.2]), w, 2, 2, 2)
    assert total.item() == pytest.approx(3.38, abs=1e-12)
    assert joint_loss(Tensor([0.0]), Tensor([0.0]), Tensor([0.0]), w, 1, 1, 1).item() == 0.0
    cls = cross_entropy_terms(Tensor([[0.2, 0.5], [1.0, -1.0]]), [1, 0])
    only_cls = joint_loss(cls, Tensor([9.0, 9.0]), Tensor([9.0]), LossWeights(1, 0, 0), 2, 2, 1)
    assert only_cls.item() == pytest.approx(cls.data.mean(), abs=1e-15)


def test_joint_loss_rejects_zero_count_with_weight():
    with pytest.raises(ValueError):
        joint_loss(Tensor([1.0]), Tensor([1.0]), None, LossWeights(), 1, 1, 0)
    assert joint_loss(Tensor([1.0]), Tensor([1.0]), None, LossWeights(1, 1, 0), 1, 1, 0).item() == 2.0


def test_loss_weights_nonnegative():
    with pytest.raises(ValueError):
        LossWeights(1, -1, 0)
