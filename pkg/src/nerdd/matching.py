"""Bipartite matching between predicted queries and ground-truth boxes,
and the set loss trained through that matching.

The solver is an O(n^3) augmenting-path (Jonker-Volgenant style) Hungarian
implementation with dual potentials. Rectangular matrices are padded square
with a sentinel; pad pairs are dropped from the result. Ties between
equal-cost assignments are broken toward the lexicographically smallest
pair list by re-matching inside the tight (zero-reduced-cost) edge graph.

Cost recipe and loss weights follow the standard detection-transformer
settings: class weight 1, L1 weight 5, GIoU weight 2, no-object
down-weight 0.1. Boxes here are normalized (cx, cy, w, h).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .fusion.types import CLASS_DRONE, CLASS_NO_OBJECT, DetectionSet


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    """Injective (prediction, ground-truth) index pairs plus their total cost."""

    pairs: tuple
    total_cost: float

    def __post_init__(self):
        rows = [r for r, _ in self.pairs]
        cols = [c for _, c in self.pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise MatchingError("assignment pairs must be injective in both coordinates")

    def as_dict(self) -> dict:
        return dict(self.pairs)


def _solve_square(a: np.ndarray):
    """Augmenting-path assignment on a square matrix; returns columns per row
    and the final dual potentials (u, v)."""
    n = a.shape[0]
    u = np.zeros(n)
    v = np.zeros(n + 1)
    p = np.full(n + 1, -1, dtype=np.int64)  # p[j] = row matched to column j
    for i in range(n):
        p[n] = i
        j0 = n
        minv = np.full(n + 1, np.inf)
        way = np.full(n + 1, n, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = a[i0, :] - u[i0] - v[:n]
            unused = ~used[:n]
            improve = unused & (cur < minv[:n])
            idx = np.nonzero(improve)[0]
            minv[idx] = cur[idx]
            way[idx] = j0
            cand = np.nonzero(unused)[0]
            j1 = int(cand[np.argmin(minv[cand])])
            delta = minv[j1]
            used_cols = np.nonzero(used)[0]
            u[p[used_cols]] += delta
            v[used_cols] -= delta
            minv[np.nonzero(~used)[0]] -= delta
            j0 = j1
            if p[j0] == -1:
                break
        while j0 != n:
            j1 = int(way[j0])
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(n):
        col_of_row[p[j]] = j
    return col_of_row, u, v[:n]


def _kuhn_feasible(adj: List[np.ndarray], rows: Sequence[int], banned_cols: set) -> Optional[dict]:
    """Perfect matching of `rows` into non-banned columns, or None."""
    match_col: dict = {}

    def try_row(r, visited) -> bool:
        for j in adj[r]:
            j = int(j)
            if j in banned_cols or j in visited:
                continue
            visited.add(j)
            if j not in match_col or try_row(match_col[j], visited):
                match_col[j] = r
                return True
        return False

    for r in rows:
        if not try_row(r, set()):
            return None
    return match_col


def _lexicographic_refine(tight: np.ndarray, col_of_row: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching inside the tight graph.

    A no-op whenever each row has a single tight edge (unique optimum).
    """
    n = tight.shape[0]
    if int(tight.sum()) == n:
        return col_of_row
    adj = [np.nonzero(tight[r])[0] for r in range(n)]
    fixed_cols: set = set()
    result = np.empty(n, dtype=np.int64)
    for i in range(n):
        chosen = None
        for j in adj[i]:
            j = int(j)
            if j in fixed_cols:
                continue
            rest = _kuhn_feasible(adj, range(i + 1, n), fixed_cols | {j})
            if rest is not None:
                chosen = j
                break
        if chosen is None:
            # The tight graph always extends (it contains the solver's own
            # matching); fall back defensively if float noise broke it.
            chosen = int(col_of_row[i])
        result[i] = chosen
        fixed_cols.add(chosen)
    return result


def hungarian(cost) -> Assignment:
    """Minimum-cost assignment of a (possibly rectangular) cost matrix.

    Returns min(rows, cols) pairs sorted by row, with the total cost summed
    over those pairs. NaN or infinite entries are rejected.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise MatchingError("cost matrix must be 2-D")
    rows, cols = c.shape
    if rows == 0 or cols == 0:
        return Assignment((), 0.0)
    if np.isnan(c).any():
        raise MatchingError("cost matrix contains NaN")
    if not np.isfinite(c).all():
        raise MatchingError("cost matrix must be finite")
    n = max(rows, cols)
    sentinel = float(np.abs(c).max()) + 1.0
    padded = np.full((n, n), sentinel)
    padded[:rows, :cols] = c
    col_of_row, u, v = _solve_square(padded)
    rc = padded - u[:, None] - v[None, :]
    eps = 1e-9 * max(1.0, float(np.abs(padded).max()))
    tight = np.abs(rc) <= eps
    tight[np.arange(n), col_of_row] = True
    refined = _lexicographic_refine(tight, col_of_row)
    pairs = tuple(
        (int(i), int(refined[i]))
        for i in range(rows)
        if refined[i] < cols
    )
    total = float(sum(c[i, j] for i, j in pairs))
    return Assignment(pairs, total)


@dataclass(frozen=True)
class SetLossWeights:
    cls_weight: float = 1.0
    l1_weight: float = 5.0
    giou_weight: float = 2.0
    no_object_weight: float = 0.1


def _cxcywh_to_corners(b):
    cx, cy, w, h = b
    return cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0


def giou_cxcywh(b, g) -> float:
    """GIoU of two (cx, cy, w, h) boxes."""
    x0, y0, x1, y1 = _cxcywh_to_corners(b)
    gx0, gy0, gx1, gy1 = _cxcywh_to_corners(g)
    iw = min(x1, gx1) - max(x0, gx0)
    ih = min(y1, gy1) - max(y0, gy0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (x1 - x0) * (y1 - y0) + (gx1 - gx0) * (gy1 - gy0) - inter
    cw = max(x1, gx1) - min(x0, gx0)
    ch = max(y1, gy1) - min(y0, gy0)
    enclosing = cw * ch
    return inter / union - (enclosing - union) / enclosing


def giou_grad_cxcywh(b, g) -> Tuple[float, np.ndarray]:
    """GIoU and its gradient w.r.t. the first box's (cx, cy, w, h).

    Piecewise-smooth; at min/max ties the subgradient attributing nothing to
    the tied side is chosen (measure-zero set).
    """
    x0, y0, x1, y1 = _cxcywh_to_corners(b)
    gx0, gy0, gx1, gy1 = _cxcywh_to_corners(g)
    iw = min(x1, gx1) - max(x0, gx0)
    ih = min(y1, gy1) - max(y0, gy0)
    overlap = iw > 0.0 and ih > 0.0
    inter = iw * ih if overlap else 0.0
    area = (x1 - x0) * (y1 - y0)
    garea = (gx1 - gx0) * (gy1 - gy0)
    union = area + garea - inter
    cw = max(x1, gx1) - min(x0, gx0)
    ch = max(y1, gy1) - min(y0, gy0)
    enclosing = cw * ch
    value = inter / union - (enclosing - union) / enclosing

    dg_dI = (area + garea) / union**2 - 1.0 / enclosing
    dg_dA = -inter / union**2 + 1.0 / enclosing
    dg_dC = -union / enclosing**2

    dI = np.zeros(4)  # partials w.r.t. corners (x0, y0, x1, y1)
    if overlap:
        if x0 > gx0:
            dI[0] = -ih
        if y0 > gy0:
            dI[1] = -iw
        if x1 < gx1:
            dI[2] = ih
        if y1 < gy1:
            dI[3] = iw
    dA = np.array([-(y1 - y0), -(x1 - x0), (y1 - y0), (x1 - x0)])
    dC = np.zeros(4)
    if x0 < gx0:
        dC[0] = -ch
    if y0 < gy0:
        dC[1] = -cw
    if x1 > gx1:
        dC[2] = ch
    if y1 > gy1:
        dC[3] = cw
    d_corner = dg_dI * dI + dg_dA * dA + dg_dC * dC
    # corners -> (cx, cy, w, h)
    grad = np.array([
        d_corner[0] + d_corner[2],
        d_corner[1] + d_corner[3],
        (d_corner[2] - d_corner[0]) / 2.0,
        (d_corner[3] - d_corner[1]) / 2.0,
    ])
    return value, grad


def _validate_gt(gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if gt.size and (gt.min() < 0.0 or gt.max() > 1.0):
        raise MatchingError("ground-truth boxes must be normalized to [0, 1]")
    if gt.size and (gt[:, 2:] <= 0).any():
        raise MatchingError("ground-truth boxes must have positive size")
    return gt


def match_cost(pred: DetectionSet, gt, weights: SetLossWeights = SetLossWeights()) -> np.ndarray:
    """N_q x M matching cost: -w_cls*p(drone) + w_l1*L1 + w_giou*(1-GIoU)."""
    gt = _validate_gt(gt)
    nq, m = pred.n_queries, gt.shape[0]
    cost = np.empty((nq, m))
    p_drone = pred.probs[:, CLASS_DRONE]
    for i in range(nq):
        for j in range(m):
            l1 = float(np.abs(pred.boxes[i] - gt[j]).sum())
            g = giou_cxcywh(pred.boxes[i], gt[j])
            cost[i, j] = (-weights.cls_weight * p_drone[i]
                          + weights.l1_weight * l1
                          + weights.giou_weight * (1.0 - g))
    return cost


@dataclass(frozen=True)
class SetLossResult:
    loss: float
    d_probs: np.ndarray
    d_boxes: np.ndarray


def set_loss(
    pred: DetectionSet,
    gt,
    assignment: Assignment,
    weights: SetLossWeights = SetLossWeights(),
) -> SetLossResult:
    """Set prediction loss under a fixed assignment, with gradients into the
    head outputs (probabilities and boxes).

    Matched queries pay cross-entropy for the drone class plus weighted L1
    and GIoU box terms; unmatched queries pay down-weighted cross-entropy
    for no-object. The sum is normalized by the query count. Gradients treat
    the assignment as constant.
    """
    gt = _validate_gt(gt)
    nq, m = pred.n_queries, gt.shape[0]
    pairs = assignment.pairs
    if len(pairs) != min(nq, m):
        raise MatchingError(f"assignment must pair min(N_q={nq}, M={m}) boxes")
    for i, j in pairs:
        if not (0 <= i < nq and 0 <= j < m):
            raise MatchingError(f"assignment pair ({i}, {j}) out of range")
    d_probs = np.zeros_like(pred.probs)
    d_boxes = np.zeros_like(pred.boxes)
    matched = dict(pairs)
    loss = 0.0
    for i in range(nq):
        if i in matched:
            j = matched[i]
            p = pred.probs[i, CLASS_DRONE]
            loss += -np.log(p)
            d_probs[i, CLASS_DRONE] = -1.0 / (p * nq)
            diff = pred.boxes[i] - gt[j]
            loss += weights.l1_weight * float(np.abs(diff).sum())
            g, g_grad = giou_grad_cxcywh(pred.boxes[i], gt[j])
            loss += weights.giou_weight * (1.0 - g)
            d_boxes[i] = (weights.l1_weight * np.sign(diff)
                          - weights.giou_weight * g_grad) / nq
        else:
            p = pred.probs[i, CLASS_NO_OBJECT]
            loss += weights.no_object_weight * -np.log(p)
            d_probs[i, CLASS_NO_OBJECT] = -weights.no_object_weight / (p * nq)
    return SetLossResult(loss / nq, d_probs, d_boxes)


def loss_cost_matrix(pred: DetectionSet, gt,
                     weights: SetLossWeights = SetLossWeights()):
    """Additive decomposition of set_loss over assignment pairs.

    Returns (matrix, constant) with set_loss(pred, gt, A).loss equal to
    constant + sum(matrix[i, j] for (i, j) in A.pairs); minimizing this
    matrix with `hungarian` therefore minimizes the set loss itself (the
    matching cost of match_cost is the standard surrogate and can differ).
    """
    gt = _validate_gt(gt)
    nq, m = pred.n_queries, gt.shape[0]
    no_obj = -np.log(pred.probs[:, CLASS_NO_OBJECT])
    constant = weights.no_object_weight * float(no_obj.sum()) / nq
    matrix = np.empty((nq, m))
    for i in range(nq):
        for j in range(m):
            l1 = float(np.abs(pred.boxes[i] - gt[j]).sum())
            g = giou_cxcywh(pred.boxes[i], gt[j])
            matched_term = (-np.log(pred.probs[i, CLASS_DRONE])
                            + weights.l1_weight * l1
                            + weights.giou_weight * (1.0 - g))
            matrix[i, j] = (matched_term - weights.no_object_weight * no_obj[i]) / nq
    return matrix, constant
