"""Adam with a warmup + cosine schedule, and the grid-fitting loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .gaussians import DecodeConfig, PixelGaussianGrid, decode_pixel_gaussians, decode_vjp
from .geometry import Camera
from .objective import LossWeights, total_loss
from .renderer import GaussianGrads, RenderConfig, RenderContext


class OptimError(RuntimeError):
    """Non-finite gradients or a diverging fit."""


@dataclass(frozen=True)
class OptimConfig:
    lr0: float = 4e-4
    total_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_min: float = 0.0
    warmup_steps: int = 100

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.lr_min <= self.lr0:
            raise ValueError("lr_min must lie in [0, lr0]")
        if not 0 <= self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError("beta1 must lie in [0, 1) and beta2 in (0, 1)")
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need total_steps >= 1 and 0 <= warmup_steps <= total_steps")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


def lr_at(cfg: OptimConfig, step: int) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr0 * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    tau = 1.0 if span == 0 else (step - cfg.warmup_steps) / span
    return cfg.lr_min + (cfg.lr0 - cfg.lr_min) * 0.5 * (1.0 + math.cos(math.pi * tau))


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimState":
        return cls(np.zeros_like(params, dtype=np.float64), np.zeros_like(params, dtype=np.float64))


def _locate(arr: np.ndarray) -> str:
    idx = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
    if arr.ndim == 4:
        return f"view {idx[0]}, pixel ({idx[1]}, {idx[2]}), channel {idx[3]}"
    return f"index {idx}"


def adam_step(params: np.ndarray, grads: np.ndarray, state: OptimState, cfg: OptimConfig,
              lr: float | None = None) -> np.ndarray:
    """One bias-corrected Adam update; returns new parameters, mutates ``state``.

    ``lr`` defaults to the schedule value at the state's current step.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise OptimError(f"non-finite gradient at {_locate(grads)}")
    if lr is None:
        lr = lr_at(cfg, min(state.step, cfg.total_steps))
    state.step += 1
    t = state.step
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads * grads
    m_hat = state.m / (1 - cfg.beta1**t)
    v_hat = state.v / (1 - cfg.beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass(frozen=True)
class SupervisionView:
    camera: Camera
    image: np.ndarray
    mask: np.ndarray


@dataclass
class FitResult:
    grid: PixelGaussianGrid
    log: list = field(default_factory=list)
    initial_total: float = 0.0
    final_total: float = 0.0


def grid_loss_and_grad(grid: PixelGaussianGrid, views, decode_cfg: DecodeConfig, render_cfg: RenderConfig,
                       weights: LossWeights, workers: int = 1):
    """Loss over ``views`` and its gradient with respect to the raw grid."""
    gset, cache = decode_pixel_gaussians(grid, decode_cfg, return_cache=True)
    ctxs = [RenderContext(gset, sv.camera, render_cfg) for sv in views]

    def fwd(ctx):
        return ctx.forward()

    if workers > 1 and len(ctxs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            renders = list(ex.map(fwd, ctxs))
    else:
        renders = [fwd(c) for c in ctxs]
    breakdown, pix_grads = total_loss(renders, [sv.image for sv in views], [sv.mask for sv in views], weights)

    def bwd(args):
        ctx, (g_rgb, g_a) = args
        return ctx.backward(g_rgb, g_a)

    if workers > 1 and len(ctxs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(bwd, zip(ctxs, pix_grads)))
    else:
        parts = [bwd(a) for a in zip(ctxs, pix_grads)]
    acc = GaussianGrads.zeros(len(gset))
    for p in parts:  # fixed order keeps the sum deterministic
        acc += p
    return breakdown, decode_vjp(grid, cache, acc, decode_cfg), renders


def _check_consistency(grid: PixelGaussianGrid, views):
    for i, gc in enumerate(grid.cameras):
        if not any(gc.same_pose(sv.camera, atol=1e-9) for sv in views):
            raise ValueError(f"grid view {i} has no supervision view with the same pose")


def fit(grid: PixelGaussianGrid, views, *, decode_cfg: DecodeConfig | None = None,
        render_cfg: RenderConfig | None = None, optim_cfg: OptimConfig | None = None,
        weights: LossWeights | None = None, seed: int = 0, views_per_step: int | None = None,
        log_path=None, checkpoint_every: int = 0, checkpoint_dir=None, workers: int = 1,
        divergence_factor: float = 10.0, divergence_patience: int = 50) -> FitResult:
    """Optimize the raw grid so its decoded Gaussians reproduce ``views``.

    Each step decodes, renders the supervised views (all of them, or a
    seeded subset of ``views_per_step``), evaluates the objective and
    applies one Adam update.  The result is deterministic in ``seed``.
    """
    decode_cfg = decode_cfg or DecodeConfig()
    render_cfg = render_cfg or RenderConfig()
    optim_cfg = optim_cfg or OptimConfig()
    weights = weights or LossWeights()
    views = list(views)
    if not views:
        raise ValueError("fit needs at least one supervision view")
    _check_consistency(grid, views)
    n_sub = len(views) if views_per_step is None else int(views_per_step)
    if not 1 <= n_sub <= len(views):
        raise ValueError(f"views_per_step must lie in [1, {len(views)}]")
    rng = np.random.default_rng(seed)
    grid = grid.copy()
    state = OptimState.zeros_like(grid.raw)
    log = []
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")
    initial = None
    bad_run = 0
    try:
        for step in range(optim_cfg.total_steps):
            t0 = time.perf_counter()
            if n_sub < len(views):
                pick = np.sort(rng.choice(len(views), n_sub, replace=False))
                batch = [views[i] for i in pick]
            else:
                batch = views
            bd, g_raw, _ = grid_loss_and_grad(grid, batch, decode_cfg, render_cfg, weights, workers)
            lr = lr_at(optim_cfg, step)
            grid.raw = adam_step(grid.raw, g_raw, state, optim_cfg, lr)
            rec = {"step": step, "lr": lr, "mse": bd.mse, "perceptual": bd.perceptual,
                   "silhouette": bd.silhouette, "total": bd.total,
                   "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
            log.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
            if initial is None:
                initial = bd.total
            bad_run = bad_run + 1 if bd.total > divergence_factor * initial else 0
            if bad_run >= divergence_patience:
                raise OptimError(f"fit diverged at step {step}: total {bd.total:.6g} > "
                                 f"{divergence_factor}x initial {initial:.6g} for {bad_run} steps")
            if checkpoint_every and checkpoint_dir is not None and (step + 1) % checkpoint_every == 0:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                grid.save(Path(checkpoint_dir) / f"grid_{step + 1:06d}.bin")
    finally:
        if log_file is not None:
            log_file.close()
    final, _, _ = grid_loss_and_grad(grid, views, decode_cfg, render_cfg, weights, workers)
    return FitResult(grid, log, float(initial), final.total)


def config_to_json(cfg: OptimConfig) -> dict:
    return asdict(cfg)
