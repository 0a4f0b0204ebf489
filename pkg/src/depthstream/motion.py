"""Temporal attention with two equivalent modes.

Training runs batched attention under a banded lower-triangular mask of
width c; streaming runs cached cross-attention against a sliding window of
at most c past latents. Both paths share one windowed-attention kernel, so
their outputs agree frame for frame. Latents enter the cache after layer
norm but before positional encoding; keys and values are recomputed every
step because ages are window-relative (age 0 = current frame).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cache import CacheBank
from .tensor import Tensor

__all__ = [
    "MotionModuleParams",
    "WindowedMask",
    "reorder_temporal",
    "reorder_spatial",
    "positional_encode",
    "attend_streaming",
    "attend_batch_masked",
    "motion_module_forward_batch",
    "motion_module_forward_stream",
]


def sinusoidal_table(rows: int, channels: int) -> np.ndarray:
    """Standard sinusoidal position table, rows indexed by age."""
    pos = np.arange(rows, dtype=np.float64)[:, None]
    i = np.arange(channels, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / channels)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


@dataclass
class MotionModuleParams:
    """Projections, pre-attention norm, and the c-row position table."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln_gain: Tensor
    ln_bias: Tensor
    pe_table: Tensor  # [c, C], row index = age within the window
    context: int

    @classmethod
    def init(cls, channels: int, context: int, rng: np.random.Generator,
             trainable: bool = True):
        c = channels

        def proj(scale):
            return Tensor(rng.normal(0, scale / np.sqrt(c), (c, c)),
                          requires_grad=trainable)

        return cls(
            wq=proj(1.0), bq=T.zeros((c,), requires_grad=trainable),
            wk=proj(1.0), bk=T.zeros((c,), requires_grad=trainable),
            wv=proj(1.0), bv=T.zeros((c,), requires_grad=trainable),
            wo=proj(0.5), bo=T.zeros((c,), requires_grad=trainable),
            ln_gain=Tensor(np.ones(c), requires_grad=trainable),
            ln_bias=T.zeros((c,), requires_grad=trainable),
            pe_table=Tensor(sinusoidal_table(context, c),
                            requires_grad=trainable),
            context=context,
        )

    def named_tensors(self):
        return [("wq", self.wq), ("bq", self.bq), ("wk", self.wk),
                ("bk", self.bk), ("wv", self.wv), ("bv", self.bv),
                ("wo", self.wo), ("bo", self.bo),
                ("ln_gain", self.ln_gain), ("ln_bias", self.ln_bias),
                ("pe_table", self.pe_table)]


@dataclass(frozen=True)
class WindowedMask:
    """Banded lower-triangular admissibility: key k visible to query q iff
    0 <= q - k < band."""

    band: int
    frames: int

    def admissible(self, q: int, k: int) -> bool:
        return 0 <= q - k < self.band

    def matrix(self) -> np.ndarray:
        q = np.arange(self.frames)[:, None]
        k = np.arange(self.frames)[None, :]
        return (q - k >= 0) & (q - k < self.band)


def reorder_temporal(x: Tensor) -> Tensor:
    """Frame-major [N, S, C] -> token-major [S, N, C]."""
    return T.transpose(x, (1, 0, 2))


def reorder_spatial(x: Tensor) -> Tensor:
    """Token-major [S, N, C] -> frame-major [N, S, C] (inverse reorder)."""
    return T.transpose(x, (1, 0, 2))


def positional_encode(latent, age: int, params: MotionModuleParams):
    """Add the position-table row for a window-relative age to every token."""
    if age >= params.context or age < 0:
        raise ValueError(f"age {age} outside [0, {params.context - 1}]")
    return T.add(latent, params.pe_table[age])


def _attend_window(query, window, params: MotionModuleParams):
    """Shared windowed-attention kernel.

    query: [S, C] latent of the current frame (post layer-norm, no PE).
    window: list of [S, C] latents oldest -> newest, newest == current
    frame. Keys/values are positionally encoded with age (w-1)-position
    and projected fresh. Returns the projected attention output [S, C]
    (the residual is added by the caller).
    """
    w = len(window)
    channels = query.shape[-1]
    q = T.linear(query, params.wq, params.bq)  # [S, C]
    stacked = T.stack(window, axis=0)          # [w, S, C] oldest->newest
    ages = np.arange(w - 1, -1, -1)            # age per position
    pe = params.pe_table[ages]                 # [w, C]
    kv_in = T.add(stacked, T.reshape(pe, (w, 1, channels)))
    k = T.linear(kv_in, params.wk, params.bk)  # [w, S, C]
    v = T.linear(kv_in, params.wv, params.bv)
    # per spatial token: scores over the w window frames
    q_b = T.reshape(q, (q.shape[0], 1, channels))        # [S, 1, C]
    k_b = T.transpose(k, (1, 2, 0))                      # [S, C, w]
    scores = T.mul(T.bmm(q_b, k_b), 1.0 / np.sqrt(channels))  # [S, 1, w]
    attn = T.softmax_rows(scores)
    v_b = T.transpose(v, (1, 0, 2))                      # [S, w, C]
    ctx = T.reshape(T.bmm(attn, v_b), (q.shape[0], channels))
    return T.linear(ctx, params.wo, params.bo)


def attend_streaming(current, window, params: MotionModuleParams):
    """Cached cross-attention for one frame against its window.

    The window must already include the current frame as its newest entry
    (cache updated before attending). With w == 1 this is single-frame
    self-attention.
    """
    w = len(window)
    if w < 1:
        raise ValueError("empty attention window")
    if w > params.context:
        raise ValueError(f"window {w} exceeds context {params.context}")
    window_t = [x if isinstance(x, Tensor) else T.constant(x) for x in window]
    return _attend_window(current, window_t, params)


def attend_batch_masked(seq: Tensor, mask: WindowedMask,
                        params: MotionModuleParams) -> Tensor:
    """Banded masked attention over an [N, S, C] sequence.

    Computed as N windowed attentions so the key PE age q-k matches the
    streaming path definitionally.
    """
    n = seq.shape[0]
    band = min(mask.band, params.context)
    outs = []
    for q in range(n):
        lo = max(0, q - band + 1)
        window = [seq[k] for k in range(lo, q + 1)]
        outs.append(_attend_window(seq[q], window, params))
    return T.stack(outs, axis=0)


def motion_module_forward_batch(x: Tensor, mask: WindowedMask,
                                params: MotionModuleParams) -> Tensor:
    """Pre-norm temporal attention with residual, batch mode. [N, S, C]."""
    h = T.layer_norm(x, params.ln_gain, params.ln_bias)
    # the windowed kernel attends across frames independently per spatial
    # token, i.e. it operates on the temporally reordered view
    y = attend_batch_masked(h, mask, params)
    return T.add(x, y)


def motion_module_forward_stream(x: Tensor, frame_index: int,
                                 bank: CacheBank,
                                 params: MotionModuleParams) -> Tensor:
    """Streaming counterpart for one [S, C] frame.

    Pushes the current pre-PE latent into the cache before attending, then
    cross-attends against the routed window.
    """
    h = T.layer_norm(x, params.ln_gain, params.ln_bias)
    bank.push_evict(frame_index, h.data)
    window = bank.window(frame_index)
    # the newest window entry is the stored copy of h; use h itself as the
    # query so gradients (when taped) flow through the current frame
    y = attend_streaming(h, window, params)
    return T.add(x, y)
