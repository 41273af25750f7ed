"""Shared fixtures: tiny float64 scenes and a central-difference gradient checker."""

from __future__ import annotations

import numpy as np

from refdvgo import loss as L
from refdvgo.grid import Aabb, tv_array
from refdvgo.model import SceneModel, ShadingConfig
from refdvgo.render import RenderConfig, Rays, render_rays
from refdvgo.trainer import loss_and_grads


def tiny_scene(mode="fine", dims=(4, 4, 4), seed=0, bottleneck=2, depth=1, width=6, shading=None):
    rng = np.random.default_rng(seed)
    model = SceneModel.create(Aabb.cube(1.0), dims, mode, alpha_init=0.05, bottleneck_dim=bottleneck,
                              mlp_depth=depth, mlp_width=width, shading=shading or ShadingConfig(),
                              seed=seed, dtype=np.float64)
    for name, g in model.grids.items():
        scale = 1.0 if name in ("density", "normal") else 0.5
        g.data[...] = rng.normal(0.0, scale, g.data.shape)
    if model.mlp is not None:
        for p in model.mlp.parameters():
            p[...] = rng.normal(0.0, 0.5, p.shape)
    return model


def random_rays(n, seed=0, radius=3.0, spread=0.4):
    """Rays from a sphere of ``radius`` aimed near the origin."""
    rng = np.random.default_rng(seed)
    o = rng.normal(size=(n, 3))
    o *= radius / np.linalg.norm(o, axis=1, keepdims=True)
    target = rng.uniform(-spread, spread, (n, 3))
    d = target - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return Rays(o, d, np.zeros(n), np.full(n, np.inf))


ALL_TERMS = L.LossWeights(w_ph=1.0, w_pp=0.1, w_bg=0.05, w_p=0.3, w_o=0.2, w_tv=0.01)
EXACT = RenderConfig(background="white", weight_threshold=0.0)


def surrogate_loss(model, rays, gt, weights, frozen, frozen_derived=None, normal_both_sided=False,
                   orientation_on_derived=False) -> float:
    """Total loss assembled directly from its definitions.

    ``frozen`` are compositing weights held constant in the per-point, normal and
    orientation terms; ``frozen_derived`` are derived normals held constant as the
    normal-penalty target unless ``normal_both_sided``.
    """
    res = render_rays(model, rays, cfg=EXACT)
    n = len(rays)
    ri = res.samples.ray_index
    total = weights.w_ph * np.mean((res.rgb - gt) ** 2)
    total += weights.w_pp * np.sum(frozen[:, None] * (res.colors - gt[ri]) ** 2) / n
    t = np.clip(res.t_final, 1e-6, 1 - 1e-6)
    total += weights.w_bg * np.mean(-(t * np.log(t) + (1 - t) * np.log(1 - t)))
    total += weights.w_tv * sum(tv_array(g.data.copy()) for g in model.grids.values())
    if model.mode == "fine":
        derived = res.derived_normals if normal_both_sided else frozen_derived
        both = res.pred_valid & res.derived_valid
        diff = np.sum((derived - res.pred_normals) ** 2, axis=1)
        total += weights.w_p * np.sum(np.where(both, frozen * diff, 0.0)) / n
        pairs = [(res.pred_normals, res.pred_valid)]
        if orientation_on_derived:
            pairs.append((res.derived_normals, res.derived_valid))
        for normals, valid in pairs:
            dot = np.sum(normals * res.view_dirs, axis=1)
            total += weights.w_o * np.sum(np.where(valid, frozen * np.maximum(dot, 0.0) ** 2, 0.0)) / n
    return float(total)


def check_all_gradients(model, rays, gt, weights=ALL_TERMS, h=1e-6, **kw) -> dict[str, float]:
    """``max|analytic - numeric| / max|numeric|`` per parameter block; needs ``weight_threshold = 0``."""
    base = render_rays(model, rays, cfg=EXACT)
    frozen = base.weights.copy()
    derived = None if base.derived_normals is None else base.derived_normals.copy()
    _, mlp_grads, _ = loss_and_grads(model, rays, gt, weights, EXACT, **kw)
    blocks = {f"grid.{k}": (g.data, g.grad.copy()) for k, g in model.grids.items()}
    if model.mlp is not None:
        for i, (p, g) in enumerate(zip(model.mlp.parameters(), mlp_grads)):
            blocks[f"mlp.{i}"] = (p, np.array(g))
    errors = {}
    for name, (param, analytic) in blocks.items():
        flat = param.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            v = flat[i]
            flat[i] = v + h
            up = surrogate_loss(model, rays, gt, weights, frozen, derived, **kw)
            flat[i] = v - h
            down = surrogate_loss(model, rays, gt, weights, frozen, derived, **kw)
            flat[i] = v
            numeric[i] = (up - down) / (2 * h)
        scale = max(np.abs(numeric).max(), 1e-8)
        errors[name] = float(np.abs(analytic.reshape(-1) - numeric).max() / scale)
    return errors
