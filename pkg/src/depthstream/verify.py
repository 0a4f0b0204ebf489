"""Self-check suite: streaming equivalence, gradient checks, and the
alignment oracle. Used by the `check` subcommand and by the test suite."""

from __future__ import annotations

import numpy as np

from .align import AffineAlign, least_squares_align
from .losses import loss_sascon, loss_ssi_scene, loss_tgm
from .model import DepthModel, ModelConfig
from .tensor import Tensor, gradcheck

__all__ = ["streaming_equivalence_check", "brute_force_align",
           "alignment_oracle_check", "loss_gradient_check", "run_all"]


def streaming_equivalence_check(c: int, n_frames: int, seed: int,
                                band_override: int | None = None,
                                tol: float = 1e-5) -> dict:
    """Full-model batch output vs frame-by-frame streaming output.

    band_override widens/narrows the training mask band away from the
    cache capacity, which must break the equivalence (mutation check).
    """
    cfg = ModelConfig(height=16, width=16, patch_size=4, encoder_channels=8,
                      head_channels=8, num_motion_modules=2,
                      context=max(c, band_override or 0), seed=seed)
    model = DepthModel(cfg)
    rng = np.random.default_rng(seed + 100)
    rgb = rng.random((n_frames, cfg.height, cfg.width, 3)).astype(np.float32)
    feats = model.encoder.encode_sequence(rgb)
    band = band_override if band_override is not None else c
    batch_out = model.head_forward_batch(feats, context=band).data
    session = model.new_session(context=c)
    stream_out = np.stack([session.head_forward_stream(f) for f in feats])
    diff = float(np.max(np.abs(batch_out - stream_out)))
    return {"c": c, "n": n_frames, "max_abs_diff": diff, "passed": diff < tol}


def brute_force_align(pred, gt, iters: int = 200) -> AffineAlign:
    """Independent minimizer of sum((s*p + t - g)^2): coarse grid search
    refined by coordinate descent. Never uses the normal equations."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)

    def cost(s, t):
        r = s * p + t - g
        return float(r @ r)

    best = (0.0, 0.0)
    best_cost = cost(*best)
    for s in np.linspace(-10, 10, 81):
        for t in np.linspace(-10, 10, 81):
            c = cost(s, t)
            if c < best_cost:
                best, best_cost = (s, t), c
    s, t = best
    step = 0.5
    for _ in range(iters):
        improved = False
        for ds, dt in ((step, 0), (-step, 0), (0, step), (0, -step)):
            c = cost(s + ds, t + dt)
            if c < best_cost:
                s, t, best_cost = s + ds, t + dt, c
                improved = True
        if not improved:
            step *= 0.5
            if step < 1e-12:
                break
    return AffineAlign(s, t)


def alignment_oracle_check(trials: int = 100, seed: int = 0,
                           tol: float = 1e-6) -> dict:
    """Closed-form fit must match the brute-force minimizer's residual."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        p = rng.normal(0, 1, 50)
        g = rng.normal(0, 2, 50) + rng.uniform(-3, 3)
        closed = least_squares_align(p, g)
        brute = brute_force_align(p, g)

        def residual(a):
            r = a.scale * p + a.shift - g
            return float(r @ r)

        worst = max(worst, abs(residual(closed) - residual(brute)))
        if residual(closed) > residual(brute) + tol:
            return {"worst_gap": worst, "passed": False}
    return {"worst_gap": worst, "passed": worst < tol}


def loss_gradient_check(seed: int = 0, tol: float = 1e-4) -> dict:
    """Gradcheck every loss on a small seeded two-frame instance."""
    rng = np.random.default_rng(seed)
    n, h, w = 2, 3, 4
    gt = rng.uniform(0.5, 2.0, (n, h, w)).astype(np.float32)
    masks = np.ones((n, h, w), dtype=bool)
    pred0 = (gt * rng.uniform(0.8, 1.2) + rng.normal(0, 0.2, gt.shape))
    param = Tensor(pred0.astype(np.float32), requires_grad=True)
    reports = {
        "ssi": gradcheck(lambda: loss_ssi_scene(param, gt, masks), [param],
                         tol=tol),
        "tgm": gradcheck(lambda: loss_tgm(param, gt, masks), [param],
                         tol=tol),
        "sascon": gradcheck(lambda: loss_sascon(param, gt, masks), [param],
                            tol=tol),
    }
    return {"reports": {k: v["max_rel_err"] for k, v in reports.items()},
            "passed": all(v["passed"] for v in reports.values())}


def run_all(seed: int = 0, verbose_print=print) -> bool:
    """Release-gate check; returns True iff every sub-check passes."""
    ok = True
    for c, n in ((2, 7), (4, 9), (8, 8), (4, 1)):
        res = streaming_equivalence_check(c, n, seed)
        verbose_print(f"equivalence c={c} n={n}: "
                      f"max_abs_diff={res['max_abs_diff']:.2e} "
                      f"{'PASS' if res['passed'] else 'FAIL'}")
        ok &= res["passed"]
    res = alignment_oracle_check(trials=20, seed=seed)
    verbose_print(f"alignment oracle: worst_gap={res['worst_gap']:.2e} "
                  f"{'PASS' if res['passed'] else 'FAIL'}")
    ok &= res["passed"]
    res = loss_gradient_check(seed=seed)
    errs = ", ".join(f"{k}={v:.2e}" for k, v in res["reports"].items())
    verbose_print(f"loss gradcheck: {errs} "
                  f"{'PASS' if res['passed'] else 'FAIL'}")
    ok &= res["passed"]
    return bool(ok)
