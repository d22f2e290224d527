"""Hungarian solver, matching cost, and the set loss."""

from itertools import permutations

import numpy as np
import pytest

from nerdd import evaluation, matching
from nerdd.fusion.types import DetectionSet


def brute_force_min(c):
    """Exhaustive minimum assignment cost plus the lexicographically smallest
    optimal pair list. Independent oracle."""
    n, m = c.shape
    best_cost = None
    best_pairs = None
    if n <= m:
        for perm in permutations(range(m), n):
            pairs = tuple((i, perm[i]) for i in range(n))
            cost = sum(c[i, j] for i, j in pairs)
            if best_cost is None or cost < best_cost - 1e-12 or (
                    abs(cost - best_cost) <= 1e-12 and pairs < best_pairs):
                best_cost, best_pairs = cost, pairs
    else:
        for perm in permutations(range(n), m):
            pairs = tuple(sorted((perm[j], j) for j in range(m)))
            cost = sum(c[i, j] for i, j in pairs)
            if best_cost is None or cost < best_cost - 1e-12 or (
                    abs(cost - best_cost) <= 1e-12 and pairs < best_pairs):
                best_cost, best_pairs = cost, pairs
    return best_cost, best_pairs


def random_detection_set(rng, n_queries):
    logits = rng.normal(size=(n_queries, 2))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    boxes = np.column_stack([
        rng.uniform(0.2, 0.8, n_queries),
        rng.uniform(0.2, 0.8, n_queries),
        rng.uniform(0.05, 0.3, n_queries),
        rng.uniform(0.05, 0.3, n_queries),
    ])
    return DetectionSet(probs, boxes)


def random_gt(rng, m):
    return np.column_stack([
        rng.uniform(0.25, 0.75, m),
        rng.uniform(0.25, 0.75, m),
        rng.uniform(0.05, 0.3, m),
        rng.uniform(0.05, 0.3, m),
    ])


# ---------------------------------------------------------------- hungarian

def test_identity_favoring_matrix():
    c = np.ones((4, 4)) - np.eye(4)
    a = matching.hungarian(c)
    assert a.pairs == ((0, 0), (1, 1), (2, 2), (3, 3))
    assert a.total_cost == 0.0


def test_two_by_two_brute_force():
    a = matching.hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert a.pairs == ((0, 0), (1, 1))
    assert a.total_cost == 2.0


def test_random_matrices_match_brute_force(rng):
    for _ in range(150):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        c = np.round(rng.normal(size=(n, m)) * 10, 1)  # coarse values force ties
        got = matching.hungarian(c)
        want_cost, want_pairs = brute_force_min(c)
        assert got.total_cost == pytest.approx(want_cost, abs=1e-9)
        assert got.pairs == want_pairs  # lexicographic tie-break agreement


def test_row_column_constant_shift_invariance(rng):
    c = rng.normal(size=(5, 5))
    base = matching.hungarian(c)
    shifted = c.copy()
    shifted[2, :] += 7.5
    shifted[:, 3] -= 2.25
    moved = matching.hungarian(shifted)
    assert moved.pairs == base.pairs
    assert moved.total_cost == pytest.approx(base.total_cost + 7.5 - 2.25)


def test_rectangular_pads_and_drops():
    c = np.array([[5.0, 1.0, 3.0]])
    a = matching.hungarian(c)
    assert a.pairs == ((0, 1),)
    assert a.total_cost == 1.0
    tall = matching.hungarian(c.T)
    assert tall.pairs == ((1, 0),)


def test_nan_and_inf_rejected():
    with pytest.raises(matching.MatchingError):
        matching.hungarian(np.array([[np.nan]]))
    with pytest.raises(matching.MatchingError):
        matching.hungarian(np.array([[np.inf, 1.0]]))


def test_empty_matrix():
    assert matching.hungarian(np.zeros((0, 3))).pairs == ()
    assert matching.hungarian(np.zeros((3, 0))).pairs == ()


def test_negative_costs_supported(rng):
    c = rng.normal(size=(6, 6)) - 5.0
    got = matching.hungarian(c)
    want_cost, _ = brute_force_min(c)
    assert got.total_cost == pytest.approx(want_cost)


# --------------------------------------------------------------- match_cost

def test_match_cost_perfect_prediction():
    probs = np.array([[1.0, 0.0]])
    boxes = np.array([[0.5, 0.5, 0.2, 0.2]])
    det = DetectionSet(probs, boxes)
    cost = matching.match_cost(det, boxes.copy())
    assert cost[0, 0] == pytest.approx(-1.0)


def test_match_cost_bad_prediction_is_positive():
    det = DetectionSet(np.array([[0.0, 1.0]]), np.array([[0.1, 0.1, 0.1, 0.1]]))
    cost = matching.match_cost(det, np.array([[0.9, 0.9, 0.1, 0.1]]))
    assert cost[0, 0] > 0


def test_match_cost_empty_gt():
    det = DetectionSet(np.full((3, 2), 0.5), np.full((3, 4), 0.5))
    assert matching.match_cost(det, np.zeros((0, 4))).shape == (3, 0)


def test_match_cost_rejects_unnormalized_gt():
    det = DetectionSet(np.full((1, 2), 0.5), np.full((1, 4), 0.5))
    with pytest.raises(matching.MatchingError):
        matching.match_cost(det, np.array([[2.0, 0.5, 0.1, 0.1]]))


def test_giou_cxcywh_agrees_with_evaluation_geometry(rng):
    for _ in range(100):
        b = random_gt(rng, 1)[0]
        g = random_gt(rng, 1)[0]
        xywh = lambda v: (v[0] - v[2] / 2, v[1] - v[3] / 2, v[2], v[3])
        assert matching.giou_cxcywh(b, g) == pytest.approx(
            evaluation.giou(xywh(b), xywh(g)), abs=1e-12)


def test_giou_grad_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(50):
        b = random_gt(rng, 1)[0]
        g = random_gt(rng, 1)[0]
        _, grad = matching.giou_grad_cxcywh(b, g)
        for k in range(4):
            bp, bm = b.copy(), b.copy()
            bp[k] += h
            bm[k] -= h
            num = (matching.giou_cxcywh(bp, g) - matching.giou_cxcywh(bm, g)) / (2 * h)
            assert grad[k] == pytest.approx(num, abs=1e-5)


# ----------------------------------------------------------------- set_loss

def test_perfect_prediction_loss_near_zero_and_beats_swap():
    eps = 1e-9
    probs = np.array([[1 - eps, eps], [1 - eps, eps]])
    gt = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.7, 0.2, 0.2]])
    det = DetectionSet(probs, gt.copy())
    good = matching.set_loss(det, gt, matching.Assignment(((0, 0), (1, 1)), 0.0))
    swapped = matching.set_loss(det, gt, matching.Assignment(((0, 1), (1, 0)), 0.0))
    assert good.loss < 1e-6
    assert good.loss < swapped.loss


def test_empty_scene_limit():
    eps = 1e-12
    det = DetectionSet(np.array([[eps, 1 - eps]] * 3), np.full((3, 4), 0.5))
    res = matching.set_loss(det, np.zeros((0, 4)), matching.Assignment((), 0.0))
    assert res.loss < 1e-9
    assert (res.d_boxes == 0).all()


def test_set_loss_gradients_match_finite_differences(rng):
    h = 1e-6
    det = random_detection_set(rng, 4)
    gt = random_gt(rng, 2)
    assignment = matching.hungarian(matching.match_cost(det, gt))
    res = matching.set_loss(det, gt, assignment)

    def loss_at(probs, boxes):
        return matching.set_loss(DetectionSet(probs, boxes), gt, assignment).loss

    worst = 0.0
    for arr, grad in ((det.probs, res.d_probs), (det.boxes, res.d_boxes)):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = loss_at(det.probs, det.boxes)
            arr[idx] = orig - h
            fm = loss_at(det.probs, det.boxes)
            arr[idx] = orig
            num = (fp - fm) / (2 * h)
            denom = max(1.0, abs(grad[idx]), abs(num))
            worst = max(worst, abs(grad[idx] - num) / denom)
    assert worst < 1e-4


def test_hungarian_on_loss_matrix_minimizes_set_loss(rng):
    for _ in range(30):
        nq = int(rng.integers(1, 5))
        m = int(rng.integers(0, nq + 1))
        det = random_detection_set(rng, nq)
        gt = random_gt(rng, m)
        mat, const = matching.loss_cost_matrix(det, gt)
        best = matching.hungarian(mat)
        best_loss = matching.set_loss(det, gt, best).loss
        assert best_loss == pytest.approx(const + best.total_cost, abs=1e-9)
        # no other assignment does better
        if m:
            for perm in permutations(range(nq), m):
                pairs = tuple(sorted((perm[j], j) for j in range(m)))
                other = matching.set_loss(det, gt, matching.Assignment(pairs, 0.0))
                assert best_loss <= other.loss + 1e-9


def test_loss_permutation_covariance(rng):
    det = random_detection_set(rng, 4)
    gt = random_gt(rng, 2)
    assignment = matching.hungarian(matching.match_cost(det, gt))
    base = matching.set_loss(det, gt, assignment).loss
    perm = np.array([2, 0, 3, 1])
    det_p = DetectionSet(det.probs[perm], det.boxes[perm])
    inv = np.argsort(perm)
    pairs_p = tuple(sorted((int(inv[i]), j) for i, j in assignment.pairs))
    loss_p = matching.set_loss(det_p, gt, matching.Assignment(pairs_p, 0.0)).loss
    assert loss_p == pytest.approx(base, abs=1e-12)


def test_set_loss_validates_assignment():
    det = DetectionSet(np.full((2, 2), 0.5), np.full((2, 4), 0.5))
    gt = np.array([[0.5, 0.5, 0.2, 0.2]])
    with pytest.raises(matching.MatchingError):
        matching.set_loss(det, gt, matching.Assignment(((0, 0), (1, 0)), 0.0))
    with pytest.raises(matching.MatchingError):
        matching.set_loss(det, gt, matching.Assignment((), 0.0))
    with pytest.raises(matching.MatchingError):
        matching.set_loss(det, gt, matching.Assignment(((5, 0),), 0.0))
