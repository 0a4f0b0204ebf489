"""Training losses, frame augmentation, and the toy fine-tuning loop.

All losses operate in inverse-depth space on taped tensors, so gradients
flow through the closed-form scale/shift fits. Ground truth and validity
masks are plain numpy constants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .align import DegenerateAlignment, DepthSequence, eval_first_frame
from .model import DepthModel
from .tensor import Tape, Tensor

__all__ = [
    "LossWeights", "AugmentConfig", "TrainConfig",
    "loss_ssi_scene", "loss_tgm", "loss_sascon", "loss_total",
    "frame_augment", "train_step", "Trainer", "ablation_suite",
    "ABLATION_ROWS",
]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


@dataclass
class AugmentConfig:
    max_fraction: float = 0.4
    max_rect_fraction: float = 0.02  # area cap per rectangle, of the frame
    enabled: bool = True


@dataclass
class TrainConfig:
    # the reference fine-tuning rate of 1e-6 assumes pre-trained weights;
    # from random toy initialization the loop needs a larger default
    learning_rate: float = 1e-3
    steps: int = 200
    batch_sequences: int = 1
    cosine_schedule: bool = True
    strides: tuple = (1, 2, 3, 4)
    seed: int = 0


def _as_tensor_seq(pred) -> Tensor:
    """Accept [N, H, W] tensor or stack of frames."""
    if isinstance(pred, Tensor):
        return pred
    return T.constant(np.asarray(pred))


def _fit_scale_shift(pred: Tensor, gt: np.ndarray, mask: np.ndarray):
    """Differentiable least-squares (s, t) of pred against gt over mask."""
    m = mask.astype(np.float32)
    n = float(m.sum())
    if n < 2:
        raise DegenerateAlignment("need >= 2 valid pixels for the fit")
    gm = gt * m
    pm = T.mul(pred, m)
    sp = T.sum_(pm)
    sg = float(gm.sum())
    spp = T.sum_(T.mul(pm, pred))
    spg = T.sum_(T.mul(pm, gt))
    det = T.sub(T.mul(spp, n), T.mul(sp, sp))
    if abs(det.item()) / (n * n) < 1e-12:
        raise DegenerateAlignment("prediction variance too small to fit")
    s = T.div(T.sub(T.mul(spg, n), T.mul(sp, sg)), det)
    t = T.div(T.sub(T.mul(spp, sg), T.mul(sp, spg)), det)
    return s, t


def _aligned(pred: Tensor, s, t) -> Tensor:
    return T.add(T.mul(pred, T.reshape(s, (1,) * len(pred.shape))),
                 T.reshape(t, (1,) * len(pred.shape)))


def _masked_mae(diff: Tensor, mask: np.ndarray) -> Tensor:
    m = mask.astype(np.float32)
    n = max(float(m.sum()), 1.0)
    return T.mul(T.sum_(T.mul(T.abs_(diff), m)), 1.0 / n)


def loss_ssi_scene(pred, gt, masks) -> Tensor:
    """Scale-and-shift-invariant loss with ONE fit pooled over the whole
    sequence; mean absolute error of the aligned prediction."""
    p = _as_tensor_seq(pred)
    gt = np.asarray(gt, dtype=np.float32)
    m = np.asarray(masks, dtype=bool)
    s, t = _fit_scale_shift(p, gt, m)
    return _masked_mae(T.sub(_aligned(p, s, t), gt), m)


def scene_align(pred, gt, masks) -> Tensor:
    """The pooled-fit aligned prediction (shared by SSI and TGM)."""
    p = _as_tensor_seq(pred)
    gt = np.asarray(gt, dtype=np.float32)
    m = np.asarray(masks, dtype=bool)
    s, t = _fit_scale_shift(p, gt, m)
    return _aligned(p, s, t)


def temporal_gradient_error(aligned_pred, gt, masks) -> Tensor:
    """Mean |(d_t - d_{t-1}) - (g_t - g_{t-1})| over jointly valid pixels
    of consecutive frames. Input is already aligned."""
    p = _as_tensor_seq(aligned_pred)
    gt = np.asarray(gt, dtype=np.float32)
    m = np.asarray(masks, dtype=bool)
    if p.shape[0] < 2:
        raise ValueError("temporal gradients need >= 2 frames")
    dp = T.sub(p[slice(1, None)], p[slice(0, -1)])
    dg = gt[1:] - gt[:-1]
    joint = m[1:] & m[:-1]
    return _masked_mae(T.sub(dp, dg), joint)


def loss_tgm(pred, gt, masks, align: bool = True) -> Tensor:
    """Temporal gradient matching after scene-level alignment."""
    if align:
        aligned = scene_align(pred, gt, masks)
    else:
        aligned = _as_tensor_seq(pred)
    return temporal_gradient_error(aligned, gt, masks)


def loss_sascon(pred, gt, masks) -> Tensor:
    """Scale-and-shift consistency: per frame, L1 between the frame aligned
    with frame 0's fit and the frame aligned with its own fit; mean over
    pixels and frames."""
    p = _as_tensor_seq(pred)
    gt = np.asarray(gt, dtype=np.float32)
    m = np.asarray(masks, dtype=bool)
    n_frames = p.shape[0]
    s0, t0 = _fit_scale_shift(p[0], gt[0], m[0])
    terms = []
    for i in range(n_frames):
        frame = p[i]
        si, ti = _fit_scale_shift(frame, gt[i], m[i])
        first = _aligned(frame, s0, t0)
        indi = _aligned(frame, si, ti)
        terms.append(_masked_mae(T.sub(first, indi), m[i]))
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return T.mul(total, 1.0 / n_frames)


def loss_total(pred, gt, masks, weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted sum of the three losses; gamma=0 reproduces the two-term
    reference combination exactly (the consistency term is skipped)."""
    total = T.mul(loss_ssi_scene(pred, gt, masks), weights.alpha)
    if weights.beta != 0:
        total = T.add(total, T.mul(loss_tgm(pred, gt, masks), weights.beta))
    if weights.gamma != 0:
        total = T.add(total, T.mul(loss_sascon(pred, gt, masks),
                                   weights.gamma))
    return total


def frame_augment(rgb_seq: np.ndarray, cfg: AugmentConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Zero random rectangles per frame; per-frame target coverage is
    uniform in [0, max_fraction] and the realized union never exceeds it
    beyond the cap. Depth targets are untouched by construction."""
    out = np.array(rgb_seq, copy=True)
    if not cfg.enabled or cfg.max_fraction <= 0:
        return out
    n, h, w = out.shape[:3]
    total = h * w
    budget_px = int(cfg.max_fraction * total)
    max_area = max(1, int(cfg.max_rect_fraction * total))
    for f in range(n):
        target = rng.uniform(0.0, cfg.max_fraction)
        mask = np.zeros((h, w), dtype=bool)
        while mask.sum() < target * total:
            rh = rng.integers(1, max(2, int(np.sqrt(max_area)) + 1))
            rw = rng.integers(1, max(2, max_area // rh + 1))
            y = rng.integers(0, h - rh + 1)
            x = rng.integers(0, w - rw + 1)
            new = mask.copy()
            new[y:y + rh, x:x + rw] = True
            if new.sum() > budget_px:
                break
            mask = new
        out[f][mask] = 0.0
    return out


def _cosine_lr(base: float, step: int, total_steps: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * step / max(1, total_steps)))


def train_step(model: DepthModel, batch, weights: LossWeights,
               cfg: TrainConfig, step: int = 0) -> dict:
    """One gradient-descent step on the head; the encoder stays frozen.

    batch: list of (features [N, S, C_enc], gt inverse-depth [N, H, W],
    masks [N, H, W]). Returns the per-term loss record for the log.
    """
    lr = (_cosine_lr(cfg.learning_rate, step, cfg.steps)
          if cfg.cosine_schedule else cfg.learning_rate)
    record = {"step": step, "lr": lr}
    with Tape() as tape:
        totals, ssis, tgms, sascons = [], [], [], []
        for feats, gt, masks in batch:
            pred = model.head_forward_batch(feats)
            ssi = loss_ssi_scene(pred, gt, masks)
            tgm = loss_tgm(pred, gt, masks)
            ssis.append(ssi.item())
            tgms.append(tgm.item())
            seq_total = T.add(T.mul(ssi, weights.alpha),
                              T.mul(tgm, weights.beta))
            if weights.gamma != 0:
                sas = loss_sascon(pred, gt, masks)
                sascons.append(sas.item())
                seq_total = T.add(seq_total, T.mul(sas, weights.gamma))
            totals.append(seq_total)
        loss = totals[0]
        for extra in totals[1:]:
            loss = T.add(loss, extra)
        loss = T.mul(loss, 1.0 / len(totals))
        if not np.isfinite(loss.data).all():
            raise T.NonFiniteError(
                f"non-finite loss at step {step}: "
                f"ssi={ssis} tgm={tgms} sascon={sascons}")
        tape.backward(loss)
    if lr != 0:
        for _, p in model.head_parameters():
            if p.grad is not None:
                p.data = (p.data - lr * p.grad).astype(p.data.dtype)
    for _, p in model.head_parameters():
        p.grad = None
    record.update(loss=loss.item(),
                  ssi=float(np.mean(ssis)),
                  tgm=float(np.mean(tgms)),
                  sascon=float(np.mean(sascons)) if sascons else 0.0)
    return record


class Trainer:
    """Drives train_step over a fixed corpus with stride sampling and
    frame augmentation, logging CSV rows `step,loss,ssi,tgm,sascon,lr`."""

    def __init__(self, model: DepthModel, sequences, weights: LossWeights,
                 train_cfg: TrainConfig, augment: AugmentConfig | None = None):
        self.model = model
        self.sequences = sequences  # list of (rgb [N,H,W,3], gt_inv, masks)
        self.weights = weights
        self.cfg = train_cfg
        self.augment = augment or AugmentConfig(enabled=False)
        self.rng = np.random.default_rng(train_cfg.seed)
        self.log: list[dict] = []
        self.step_counter = 0

    def _sample_batch(self):
        batch = []
        for _ in range(self.cfg.batch_sequences):
            rgb, gt, masks = self.sequences[
                self.rng.integers(0, len(self.sequences))]
            # temporal losses need at least two frames after subsampling
            usable = [s for s in self.cfg.strides
                      if len(rgb[::s]) >= 2] or [1]
            stride = int(self.rng.choice(usable))
            rgb_s, gt_s, m_s = rgb[::stride], gt[::stride], masks[::stride]
            if self.augment.enabled:
                rgb_s = frame_augment(rgb_s, self.augment, self.rng)
            feats = self.model.encoder.encode_sequence(rgb_s)
            batch.append((feats, gt_s, m_s))
        return batch

    def run(self, steps: int | None = None):
        steps = self.cfg.steps if steps is None else steps
        for _ in range(steps):
            rec = train_step(self.model, self._sample_batch(), self.weights,
                             self.cfg, step=self.step_counter)
            self.log.append(rec)
            self.step_counter += 1
        return self.log

    def write_log(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "ssi", "tgm", "sascon", "lr"])
            for r in self.log:
                w.writerow([r["step"], f"{r['loss']:.6f}", f"{r['ssi']:.6f}",
                            f"{r['tgm']:.6f}", f"{r['sascon']:.6f}",
                            f"{r['lr']:.8f}"])


ABLATION_ROWS = [
    ("none", None, False),
    ("two_term", LossWeights(1, 1, 0), False),
    ("two_term_aug", LossWeights(1, 1, 0), True),
    ("two_term_consistency", LossWeights(1, 1, 1), False),
    ("full_aug", LossWeights(1, 1, 1), True),
]


def ablation_suite(model_factory, train_sequences, eval_pairs,
                   train_cfg: TrainConfig, csv_path=None):
    """Train one model per loss configuration row (identical seeds and
    budget) and evaluate with first-frame alignment.

    eval_pairs: list of (rgb_seq, gt DepthSequence). Returns rows of
    {config, absrel, delta1}.
    """
    rows = []
    for name, weights, augment in ABLATION_ROWS:
        model = model_factory()
        if weights is not None:
            trainer = Trainer(model, train_sequences, weights, train_cfg,
                              AugmentConfig(enabled=augment))
            trainer.run()
        reports = []
        for rgb_seq, gt in eval_pairs:
            pred_frames = list(model.forward_batch(rgb_seq))
            pred = DepthSequence(pred_frames,
                                 [np.ones(f.shape, dtype=bool)
                                  for f in pred_frames], kind="pred")
            reports.append(eval_first_frame(pred, gt))
        rows.append({
            "config": name,
            "absrel": float(np.mean([r.absrel for r in reports])),
            "delta1": float(np.mean([r.delta1 for r in reports])),
        })
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["config", "absrel", "delta1"])
            w.writeheader()
            w.writerows(rows)
    return rows
