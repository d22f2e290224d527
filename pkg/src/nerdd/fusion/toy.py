"""Desk-scale training harness: overfit a synthetic registered pair set.

The toy set is ten 64x64 event/RGB image pairs with one or two drone-like
targets each: a bright patch in the RGB frame and matching ON/OFF count
activity in the event frame at the same (registered) location, over light
background noise. Real-data training is out of scope; this harness proves
the fusion stages and the set loss train end to end and is what the
acceptance criteria run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .. import matching
from ..evaluation import Detection, EvalReport, coco_map
from .config import FusionConfig
from .model import backward_detect, forward_detect_with_cache, touched_prefixes
from .params import ParamStore, init_params


@dataclass(frozen=True)
class ToySample:
    ev_img: np.ndarray     # (H, W, 2) float
    rgb_img: np.ndarray    # (H, W, 3) float
    gt_norm: np.ndarray    # (M, 4) normalized cx cy w h
    gt_xywh: np.ndarray    # (M, 4) pixel x y w h


def make_toy_dataset(n_samples: int = 10, size: int = 64, seed: int = 7) -> List[ToySample]:
    """Fixed synthetic registered pairs with 1-2 well-separated targets each."""
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n_samples):
        n_boxes = 1 + (k % 2)
        rgb = rng.uniform(0.0, 0.08, size=(size, size, 3))
        evi = np.zeros((size, size, 2))
        evi += (rng.random((size, size, 2)) < 0.01) * rng.uniform(0.2, 0.5, (size, size, 2))
        boxes = []
        lo = max(4, size * 7 // 32)
        hi = max(lo + 2, size * 11 // 32 + 1)
        for b in range(n_boxes):
            w = int(rng.integers(lo, hi))
            h = int(rng.integers(lo, hi))
            # two targets live in opposite halves so they never merge
            x_lo, x_hi = (2, size // 2 - w - 2) if (n_boxes == 2 and b == 0) \
                else (size // 2 + 2, size - w - 2) if n_boxes == 2 \
                else (2, size - w - 2)
            x = int(rng.integers(x_lo, max(x_lo + 1, x_hi)))
            y = int(rng.integers(2, size - h - 2))
            color = rng.uniform(0.6, 1.0, size=3)
            rgb[y:y + h, x:x + w] = color
            # event counts: leading half mostly ON, trailing half mostly OFF
            half = max(1, w // 2)
            evi[y:y + h, x:x + half, 0] = rng.uniform(0.7, 1.0, (h, half))
            evi[y:y + h, x + half:x + w, 1] = rng.uniform(0.7, 1.0, (h, w - half))
            boxes.append((x, y, w, h))
        gt_xywh = np.array(boxes, dtype=np.float64)
        gt_norm = np.column_stack([
            (gt_xywh[:, 0] + gt_xywh[:, 2] / 2) / size,
            (gt_xywh[:, 1] + gt_xywh[:, 3] / 2) / size,
            gt_xywh[:, 2] / size,
            gt_xywh[:, 3] / size,
        ])
        samples.append(ToySample(evi, rgb, gt_norm, gt_xywh))
    return samples


class Adam:
    """Standard Adam over a ParamStore, restricted to the touched parameters."""

    def __init__(self, store: ParamStore, names, lr: float = 1e-2,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.names = list(names)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(store.values[n]) for n in self.names}
        self.v = {n: np.zeros_like(store.values[n]) for n in self.names}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for n in self.names:
            g = self.store.grads[n]
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            mhat = self.m[n] / b1c
            vhat = self.v[n] / b2c
            self.store.values[n] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    losses: List[float]
    ap50: float
    report: Optional[EvalReport]
    store: ParamStore
    detections: list = field(default_factory=list)


def evaluate_on_samples(samples, cfg: FusionConfig, store: ParamStore):
    """Run the detector over the toy set and score it COCO-style."""
    dets = []
    gts = {}
    size = samples[0].rgb_img.shape[0]
    for idx, s in enumerate(samples):
        gts[idx] = [tuple(b) for b in s.gt_xywh]
        det, _ = forward_detect_with_cache(s.ev_img, s.rgb_img, cfg, store)
        for q in range(det.n_queries):
            cx, cy, w, h = det.boxes[q] * size
            if w <= 0 or h <= 0:
                continue
            dets.append(Detection(idx, float(det.probs[q, 0]),
                                  (cx - w / 2, cy - h / 2, w, h)))
    report = coco_map(dets, gts)
    return report, dets


def train_toy(
    cfg: FusionConfig,
    steps: int = 500,
    lr: float = 1e-2,
    seed: int = 0,
    samples: Optional[List[ToySample]] = None,
    log_every: int = 0,
) -> TrainResult:
    """Full-batch Adam on the toy set; seed-deterministic.

    Each step runs forward_detect on every sample, matches predictions to
    ground truth with the Hungarian solver on the standard matching cost,
    applies the set loss, and backpropagates through the whole network.
    The learning rate decays 10x at 70% of the schedule.
    """
    if samples is None:
        samples = make_toy_dataset(seed=7)
    store = init_params(cfg, seed)
    names = [
        n for n in store.names()
        if any(n == p or n.startswith(p + ".") for p in touched_prefixes(cfg))
    ]
    opt = Adam(store, names, lr=lr)
    losses = []
    decay_at = int(steps * 0.7)
    for step in range(steps):
        if step == decay_at:
            opt.lr = lr * 0.1
        store.zero_grads()
        total = 0.0
        for s in samples:
            det, cache = forward_detect_with_cache(s.ev_img, s.rgb_img, cfg, store)
            cost = matching.match_cost(det, s.gt_norm)
            assignment = matching.hungarian(cost)
            res = matching.set_loss(det, s.gt_norm, assignment)
            total += res.loss
            backward_detect(res.d_probs / len(samples), res.d_boxes / len(samples),
                            cache, store)
        losses.append(total / len(samples))
        opt.step()
        if log_every and (step % log_every == 0 or step == steps - 1):
            print(f"step {step:4d}  loss {losses[-1]:.4f}")
    report, dets = evaluate_on_samples(samples, cfg, store)
    return TrainResult(losses, report.ap50, report, store, dets)
