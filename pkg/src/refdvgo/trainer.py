"""Coarse-to-fine training: view-independent coarse stage, bbox refinement, occupancy
masking, then the full reflection-aware fine stage with progressive grid scaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import loss as L
from .grid import Aabb, total_variation, trilerp_coeffs, gather
from .metrics import MetricReport, psnr
from .model import OccupancyMask, SceneModel, ShadingConfig
from .optim import Adam, ParamGroup
from .render import RenderConfig, Rays, render_backward, render_image, render_rays, sample_points

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig", "OccupancyMask", "train_coarse", "train_fine", "refine_bbox",
    "build_occupancy_mask", "pgs_schedule", "loss_and_grads", "evaluate_loss", "evaluate",
]


@dataclass
class TrainConfig:
    coarse_iters: int = 5000
    fine_iters: int = 20000
    coarse_dims: tuple[int, int, int] = (64, 64, 64)
    fine_dims_final: tuple[int, int, int] = (128, 128, 128)
    pgs_count: int = 10
    pgs_steps: list | None = None  # explicit [(iteration, dims), ...]; overrides pgs_count
    batch_rays: int = 4096
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    coarse_weights: L.LossWeights | None = None  # coarse-stage override; None reuses ``weights``
    mlp_depth: int = 8
    mlp_width: int = 256
    bottleneck_dim: int = 128
    sh_levels: tuple[int, ...] = (1, 2, 4)
    disable_ide: bool = False
    disable_ref_dir: bool = False
    disable_pgs: bool = False
    lr_grid: float = 0.1
    lr_mlp: float = 1e-3
    lr_decay: float = 0.1
    alpha_init: float = 1e-6
    fine_alpha_init: float | None = None  # None reuses ``alpha_init``
    step_ratio: float = 0.5
    weight_threshold: float = 1e-4
    bbox_alpha_threshold: float = 1e-3
    mask_alpha_threshold: float = 1e-3
    normal_both_sided: bool = False
    orientation_on_derived: bool = False
    srgb: bool = False
    background: str = "white"
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        self.coarse_dims = tuple(int(d) for d in self.coarse_dims)
        self.fine_dims_final = tuple(int(d) for d in self.fine_dims_final)
        self.sh_levels = tuple(int(v) for v in self.sh_levels)
        if self.coarse_iters < 0 or self.fine_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be positive")
        if self.pgs_steps is not None:
            self.pgs_steps = [(int(i), tuple(int(d) for d in dims)) for i, dims in self.pgs_steps]
            validate_pgs(self.pgs_steps, self.fine_dims_final)

    def shading(self) -> ShadingConfig:
        return ShadingConfig(sh_levels=self.sh_levels, disable_ide=self.disable_ide,
                             disable_ref_dir=self.disable_ref_dir, srgb=self.srgb)

    def stage_weights(self, stage: str) -> L.LossWeights:
        if stage == "coarse" and self.coarse_weights is not None:
            return self.coarse_weights
        return self.weights

    def render_config(self) -> RenderConfig:
        return RenderConfig(background=self.background, weight_threshold=self.weight_threshold)

    def schedule(self) -> list[tuple[int, tuple[int, int, int]]]:
        if self.disable_pgs:
            return [(0, self.fine_dims_final)]
        if self.pgs_steps is not None:
            return list(self.pgs_steps)
        return pgs_schedule(self.fine_dims_final, self.pgs_count, self.fine_iters)


def pgs_schedule(final_dims, n_steps: int, fine_iters: int):
    """``n_steps`` resolution levels, each doubling the voxel count, ending at ``final_dims``;
    level changes are spread evenly over the first half of fine training."""
    final = np.asarray(final_dims, dtype=np.float64)
    n_steps = max(1, int(n_steps))
    events = []
    for k in range(n_steps):
        dims = np.maximum(np.round(final * 2.0 ** ((k - (n_steps - 1)) / 3.0)), 2).astype(int)
        it = 0 if k == 0 else int(round(k * (fine_iters / 2) / (n_steps - 1)))
        events.append((it, tuple(int(d) for d in dims)))
    events[-1] = (events[-1][0], tuple(int(d) for d in final_dims))
    validate_pgs(events, final_dims)
    return events


def validate_pgs(events, final_dims) -> None:
    if not events:
        raise ValueError("PGS schedule is empty")
    if events[0][0] != 0:
        raise ValueError("the first PGS event sets the initial resolution and must be at iteration 0")
    for (i0, d0), (i1, d1) in zip(events[:-1], events[1:]):
        if i1 < i0 or any(b < a for a, b in zip(d0, d1)):
            raise ValueError("PGS events must be ordered with non-decreasing dims")
    if tuple(events[-1][1]) != tuple(final_dims):
        raise ValueError(f"last PGS event {events[-1][1]} must equal fine_dims_final {tuple(final_dims)}")


def loss_and_grads(model: SceneModel, rays: Rays, gt: np.ndarray, weights: L.LossWeights,
                   render_cfg: RenderConfig, *, normal_both_sided: bool = False,
                   orientation_on_derived: bool = False, tv: bool = True):
    """Forward + backward for one batch.  Grid gradients land in ``grid.grad``; returns
    ``(breakdown, mlp_grads, render_result)``."""
    model.zero_grad()
    res = render_rays(model, rays, cfg=render_cfg)
    n = len(rays)
    w = weights
    terms = {"photometric": L.photometric(res.rgb, gt)}
    grad_rgb = w.w_ph * L.photometric_grad(res.rgb, gt)
    ri = res.active_ray_index
    aw = res.active_weights
    terms["per_point"] = L.per_point_rgb(aw, res.colors, ri, gt, n)
    grad_colors = w.w_pp * L.per_point_rgb_grad(aw, res.colors, ri, gt, n) if w.w_pp else None
    terms["background"] = L.background_entropy(res.t_final)
    grad_tf = w.w_bg * L.background_entropy_grad(res.t_final) if w.w_bg else None
    grad_pred = grad_derived = None
    if model.mode == "fine":
        both = res.pred_valid & res.derived_valid
        terms["normal"] = L.normal_penalty(aw, res.derived_normals, res.pred_normals, both, n)
        terms["orientation"] = L.orientation_penalty(aw, res.pred_normals, res.view_dirs, res.pred_valid, n)
        gp = w.w_p * L.normal_penalty_grad(aw, res.derived_normals, res.pred_normals, both, n)
        grad_pred = gp + w.w_o * L.orientation_penalty_grad(aw, res.pred_normals, res.view_dirs, res.pred_valid, n)
        if normal_both_sided:
            grad_derived = -gp
        if orientation_on_derived:
            terms["orientation"] += L.orientation_penalty(aw, res.derived_normals, res.view_dirs, res.derived_valid, n)
            og = w.w_o * L.orientation_penalty_grad(aw, res.derived_normals, res.view_dirs, res.derived_valid, n)
            grad_derived = og if grad_derived is None else grad_derived + og
    mlp_grads = render_backward(model, res, grad_rgb, grad_colors, grad_tf, grad_pred, grad_derived)
    tv_terms = []
    if tv:
        for g in model.grids.values():
            tv_terms.append(total_variation(g, weight=w.w_tv, accumulate=w.w_tv > 0))
    breakdown = L.total_loss(terms, weights, tv_terms)
    return breakdown, mlp_grads, res


def evaluate_loss(model: SceneModel, rays: Rays, gt: np.ndarray, weights: L.LossWeights,
                  render_cfg: RenderConfig, *, orientation_on_derived: bool = False) -> L.LossBreakdown:
    """Forward-only total loss on a batch (no gradient buffers are touched)."""
    res = render_rays(model, rays, cfg=render_cfg, keep_cache=False)
    n = len(rays)
    ri, aw = res.active_ray_index, res.active_weights
    terms = {
        "photometric": L.photometric(res.rgb, gt),
        "per_point": L.per_point_rgb(aw, res.colors, ri, gt, n),
        "background": L.background_entropy(res.t_final),
    }
    if model.mode == "fine":
        both = res.pred_valid & res.derived_valid
        terms["normal"] = L.normal_penalty(aw, res.derived_normals, res.pred_normals, both, n)
        terms["orientation"] = L.orientation_penalty(aw, res.pred_normals, res.view_dirs, res.pred_valid, n)
        if orientation_on_derived:
            terms["orientation"] += L.orientation_penalty(aw, res.derived_normals, res.view_dirs,
                                                          res.derived_valid, n)
    tv_terms = [total_variation(g, weight=weights.w_tv, accumulate=False) for g in model.grids.values()]
    return L.total_loss(terms, weights, tv_terms)


@dataclass
class StageHistory:
    rows: list = field(default_factory=list)  # (iteration, breakdown, batch psnr)
    pgs_continuity: list = field(default_factory=list)  # (iteration, mean abs pixel change)
    final_batch_psnr: float = float("nan")
    optimizer: Adam | None = None


def _make_optimizer(model: SceneModel, cfg: TrainConfig) -> Adam:
    opt = Adam()
    for name, g in model.grids.items():
        opt.add(ParamGroup(name, [g.data], cfg.lr_grid))
    if model.mlp is not None:
        opt.add(ParamGroup("mlp", model.mlp.parameters(), cfg.lr_mlp))
    return opt


def _filter_rays(model: SceneModel, rays: Rays, targets, chunk: int = 8192):
    """Drop rays that can never produce a sample (miss the box or only cross empty cells)."""
    t0, t1 = model.bbox.intersect(rays.origins, rays.directions)
    keep = np.minimum(t1, rays.far) > np.maximum(t0, rays.near)
    if model.mask is not None:
        step = 0.5 * float(np.min(model.mask.bbox.extent / np.array(model.mask.dims)))
        idx = np.nonzero(keep)[0]
        hit = np.zeros(len(rays), bool)
        for s in range(0, len(idx), chunk):
            sub = idx[s : s + chunk]
            samples = sample_points(rays[sub], model.bbox, step, model.mask)
            hit[sub[np.unique(samples.ray_index)]] = True
        keep &= hit
    return rays[keep], targets[keep]


def _run_stage(model: SceneModel, rays: Rays, targets: np.ndarray, cfg: TrainConfig, iters: int,
               stage: str, rng: np.random.Generator, schedule=None, loss_log=None,
               probe: Rays | None = None, on_step=None) -> StageHistory:
    hist = StageHistory()
    if iters == 0:
        return hist
    render_cfg = cfg.render_config()
    weights = cfg.stage_weights(stage)
    opt = _make_optimizer(model, cfg)
    hist.optimizer = opt
    events = {it: dims for it, dims in (schedule or [])[1:]}
    n = len(rays)
    if n == 0:
        raise ValueError("no training ray intersects the scene box")
    for it in range(iters):
        if it in events and tuple(events[it]) != model.dims:
            before = _probe_render(model, probe, events[it])
            model.upsample(events[it])
            for name, g in model.grids.items():
                opt.groups[name].reset([g.data])
            if before is not None:
                after = _probe_render(model, probe, events[it])
                hist.pgs_continuity.append((it, float(np.mean(np.abs(after - before)))))
            log.info("%s: PGS event at %d -> dims %s", stage, it, model.dims)
        idx = rng.integers(0, n, size=min(cfg.batch_rays, n))
        batch = rays[idx]
        gt = targets[idx]
        breakdown, mlp_grads, res = loss_and_grads(
            model, batch, gt, weights, render_cfg,
            normal_both_sided=cfg.normal_both_sided, orientation_on_derived=cfg.orientation_on_derived)
        scale = cfg.lr_decay ** (it / iters)
        grads = {name: [g.grad] for name, g in model.grids.items()}
        if mlp_grads is not None:
            grads["mlp"] = mlp_grads
        opt.step(grads, lr_scale=scale)
        if (it + 1) % cfg.log_every == 0 or it == iters - 1:
            p = psnr(np.clip(res.rgb, 0, 1), gt)
            hist.rows.append((it + 1, breakdown, p))
            if loss_log is not None:
                loss_log.write(stage, it + 1, breakdown, p)
            log.info("%s %d/%d loss=%.5f psnr=%.2f", stage, it + 1, iters, breakdown.total, p)
            hist.final_batch_psnr = p
        if on_step is not None:
            on_step(stage, it, model, breakdown)
    return hist


def _probe_render(model: SceneModel, probe: Rays | None, new_dims):
    if probe is None:
        return None
    # fixed marching step (the finer post-event one) so only the grid resampling differs
    step = model.step_ratio * float(np.mean(model.bbox.extent / (np.array(new_dims) - 1)))
    return render_rays(model, probe, step=step, keep_cache=False).rgb


def train_coarse(dataset, cfg: TrainConfig, loss_log=None, dtype=np.float32,
                 on_step=None) -> tuple[SceneModel, StageHistory]:
    train_frames = dataset.frames("train")
    if not train_frames:
        raise ValueError("training split is empty")
    model = SceneModel.create(dataset.bbox, cfg.coarse_dims, "coarse", alpha_init=cfg.alpha_init,
                              step_ratio=cfg.step_ratio, seed=cfg.seed, dtype=dtype)
    rays, targets = dataset.rays("train")
    rays, targets = _filter_rays(model, rays, targets)
    rng = np.random.default_rng(cfg.seed)
    hist = _run_stage(model, rays, targets, cfg, cfg.coarse_iters, "coarse", rng, loss_log=loss_log,
                      on_step=on_step)
    return model, hist


def refine_bbox(coarse: SceneModel, threshold: float) -> Aabb:
    """Tight box around nodes whose activated density reaches ``threshold``, padded by one voxel."""
    dens = coarse.activated_density()
    hot = np.argwhere(dens >= threshold)
    if hot.size == 0:
        return Aabb(coarse.bbox.min.copy(), coarse.bbox.max.copy())
    vox = coarse.grids["density"].voxel_size
    lo = coarse.bbox.min + (hot.min(axis=0) - 1) * vox
    hi = coarse.bbox.min + (hot.max(axis=0) + 1) * vox
    lo = np.maximum(lo, coarse.bbox.min)
    hi = np.minimum(hi, coarse.bbox.max)
    return Aabb(lo, hi)


def density_threshold_for_alpha(alpha: float, interval: float) -> float:
    return float(-np.log1p(-alpha) / interval)


def coarse_alpha(coarse: SceneModel, points: np.ndarray) -> np.ndarray:
    """Alpha of the coarse model at the reference marching interval."""
    g = coarse.grids["density"]
    raw = gather(g, trilerp_coeffs(g.dims, g.bbox, points, g.dtype))[:, 0].astype(np.float64)
    return -np.expm1(-np.logaddexp(0.0, raw + coarse.act_shift) * coarse.step_ratio)


def _breakpoints(lo: float, hi: float, n_cells: int, nodes: np.ndarray):
    """Fine cell faces on one axis merged with the coarse node planes strictly inside."""
    faces = np.linspace(lo, hi, n_cells + 1)
    inner = nodes[(nodes > lo) & (nodes < hi)]
    pts = np.unique(np.concatenate([faces, inner]))
    return pts, np.searchsorted(pts, faces)


def build_occupancy_mask(coarse: SceneModel, bbox: Aabb, alpha_threshold: float, dims=None) -> OccupancyMask:
    """Cells whose max coarse alpha reaches the threshold, dilated by one.

    Raw density is trilinear between coarse nodes and alpha is monotone in it, so the
    max over a cell sits on the lattice of its faces and the coarse planes crossing it.
    """
    dims = np.array(coarse.dims if dims is None else dims)
    g = coarse.grids["density"]
    axes, faces = [], []
    for a in range(3):
        nodes = np.linspace(g.bbox.min[a], g.bbox.max[a], g.dims[a])
        pts, idx = _breakpoints(bbox.min[a], bbox.max[a], int(dims[a]), nodes)
        axes.append(pts)
        faces.append(idx)
    cell_max = np.empty(tuple(len(x) for x in axes))
    yz = np.stack(np.meshgrid(axes[1], axes[2], indexing="ij"), axis=-1).reshape(-1, 2)
    for i, x in enumerate(axes[0]):
        pts = np.column_stack([np.full(len(yz), x), yz])
        cell_max[i] = coarse_alpha(coarse, pts).reshape(cell_max.shape[1:])
    for a in range(3):
        # cells share their boundary face: max over [start, next start) then fold in the face itself
        idx = faces[a]
        head = np.maximum.reduceat(cell_max, idx[:-1], axis=a)
        cell_max = np.maximum(head, np.take(cell_max, idx[1:], axis=a))
    occupied = cell_max >= alpha_threshold
    occupied = ndimage.binary_dilation(occupied, structure=np.ones((3, 3, 3), bool))
    return OccupancyMask(occupied, bbox)


def init_fine(bbox: Aabb, cfg: TrainConfig, dtype=np.float32) -> SceneModel:
    schedule = cfg.schedule()
    final = np.array(cfg.fine_dims_final)
    density_unit = float(np.mean(bbox.extent / (final - 1)))
    return SceneModel.create(bbox, schedule[0][1], "fine", density_unit=density_unit,
                             alpha_init=cfg.alpha_init if cfg.fine_alpha_init is None else cfg.fine_alpha_init,
                             bottleneck_dim=cfg.bottleneck_dim, mlp_depth=cfg.mlp_depth, mlp_width=cfg.mlp_width,
                             shading=cfg.shading(), step_ratio=cfg.step_ratio, seed=cfg.seed + 1, dtype=dtype)


def train_fine(dataset, coarse: SceneModel | None, cfg: TrainConfig, loss_log=None, probe: Rays | None = None,
               dtype=np.float32, on_step=None) -> tuple[SceneModel, StageHistory]:
    if coarse is not None and cfg.coarse_iters > 0:
        bbox = refine_bbox(coarse, density_threshold_for_alpha(cfg.bbox_alpha_threshold, coarse.step_ratio))
        mask = build_occupancy_mask(coarse, bbox, cfg.mask_alpha_threshold)
        if not mask.occupied.any():
            log.warning("coarse stage left no occupied cell; training the fine stage without a mask")
            mask = None
    else:
        bbox, mask = dataset.bbox, None
    model = init_fine(bbox, cfg, dtype)
    model.mask = mask
    rays, targets = dataset.rays("train")
    rays, targets = _filter_rays(model, rays, targets)
    rng = np.random.default_rng(cfg.seed + 7919)
    hist = _run_stage(model, rays, targets, cfg, cfg.fine_iters, "fine", rng, schedule=cfg.schedule(),
                      loss_log=loss_log, probe=probe, on_step=on_step)
    return model, hist


def train(dataset, cfg: TrainConfig, loss_log=None, dtype=np.float32, on_step=None):
    """Both stages; ``on_step(stage, it, model, breakdown)`` runs after every update."""
    coarse, coarse_hist = train_coarse(dataset, cfg, loss_log, dtype, on_step=on_step)
    fine, fine_hist = train_fine(dataset, coarse, cfg, loss_log, dtype=dtype, on_step=on_step)
    return coarse, fine, (coarse_hist, fine_hist)


def evaluate(model: SceneModel, dataset, split: str = "test", cfg: RenderConfig | None = None):
    """Render every view of ``split``; returns ``(MetricReport, predictions)``."""
    cfg = RenderConfig(background=dataset.background) if cfg is None else cfg
    report = MetricReport()
    preds = []
    for frame, gt in zip(dataset.frames(split), dataset.targets(split)):
        img, _ = render_image(model, frame.camera(), cfg, near=dataset.near, far=dataset.far)
        img = np.clip(img, 0.0, 1.0)
        report.add(img, gt)
        preds.append(img)
    return report, preds
