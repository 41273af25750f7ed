"""Ray generation, sampling, alpha compositing and reflection-conditioned shading.

All per-sample arrays are flat and grouped by ray: ``ray_index`` is non-decreasing
and ``t`` increases within a ray.  Compositing runs in float64 regardless of the
grid dtype.

Camera convention (NeRF-synthetic / OpenGL): the camera looks down its local -z
axis with +y up and +x to the right.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoding
from ._kernels import composite_backward_kernel, composite_kernel, sample_kernel
from .grid import Aabb, TrilerpCoeffs, gather, scatter, spatial_gradient_backward, spatial_gradient_coeffs, trilerp_coeffs
from .mlp import MlpCache, sigmoid
from .model import OccupancyMask, SceneModel, ShadingConfig

BACKGROUNDS = {"white": 1.0, "black": 0.0}
NORMAL_EPS = 1e-6
MAX_OPTICAL_DEPTH = 60.0


@dataclass
class Camera:
    width: int
    height: int
    focal: float
    c2w: np.ndarray

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.c2w.shape == (3, 4):
            self.c2w = np.vstack([self.c2w, [0, 0, 0, 1]])
        if self.c2w.shape != (4, 4):
            raise ValueError(f"camera pose must be 4x4, got {self.c2w.shape}")
        rot = self.c2w[:3, :3]
        if abs(np.linalg.det(rot)) < 1e-8 or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-4):
            raise ValueError("camera pose rotation is not orthonormal (non-invertible pose)")
        if self.focal <= 0 or self.width < 1 or self.height < 1:
            raise ValueError("invalid pinhole intrinsics")


@dataclass
class Rays:
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __len__(self):
        return self.origins.shape[0]

    def __getitem__(self, key) -> "Rays":
        return Rays(self.origins[key], self.directions[key], self.near[key], self.far[key])

    @classmethod
    def single(cls, origin, direction, near=0.0, far=np.inf) -> "Rays":
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        return cls(np.asarray(origin, dtype=np.float64)[None], d[None], np.array([near], float), np.array([far], float))


def generate_rays(camera: Camera, pixels: np.ndarray | None = None, near: float = 0.0,
                  far: float = np.inf) -> Rays:
    """One world-space ray per pixel centre; ``pixels`` is (M, 2) of (column, row)."""
    if pixels is None:
        rows, cols = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
        pixels = np.stack([cols.ravel(), rows.ravel()], axis=-1)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    x = (pixels[:, 0] + 0.5 - 0.5 * camera.width) / camera.focal
    y = -(pixels[:, 1] + 0.5 - 0.5 * camera.height) / camera.focal
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    d = d_cam @ camera.c2w[:3, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(camera.c2w[:3, 3], d.shape).copy()
    n = d.shape[0]
    return Rays(o, d, np.full(n, near), np.full(n, far))


@dataclass
class SampleBatch:
    ray_index: np.ndarray  # (S,)
    t: np.ndarray  # (S,)
    delta: np.ndarray  # (S,) world units
    points: np.ndarray  # (S, 3)
    n_rays: int

    def __len__(self):
        return self.t.shape[0]

    def subset(self, keep) -> "SampleBatch":
        return SampleBatch(self.ray_index[keep], self.t[keep], self.delta[keep], self.points[keep], self.n_rays)


def sample_points(rays: Rays, bbox: Aabb, step: float, mask: OccupancyMask | None = None) -> SampleBatch:
    """Uniform samples at interval starts inside the box; the last interval keeps the residual."""
    if step <= 0:
        raise ValueError("step must be positive")
    t_in, t_out = bbox.intersect(rays.origins, rays.directions)
    t0 = np.maximum(t_in, rays.near)
    t1 = np.minimum(t_out, rays.far)
    hit = t1 > t0
    length = np.where(hit, t1 - t0, 0.0)
    counts = np.where(hit, np.ceil(length / step - 1e-9), 0).astype(np.int64)
    counts = np.maximum(counts, hit.astype(np.int64))
    total = int(counts.sum())
    ray_index = np.empty(total, dtype=np.int64)
    t = np.empty(total)
    delta = np.empty(total)
    points = np.empty((total, 3))
    if mask is not None:
        occ, mmin = mask.occupied, mask.bbox.min.astype(np.float64)
        mscale = np.array(mask.dims, dtype=np.float64) / mask.bbox.extent
    else:
        occ, mmin, mscale = np.zeros((1, 1, 1), bool), np.zeros(3), np.ones(3)
    n = sample_kernel(np.ascontiguousarray(rays.origins, dtype=np.float64),
                      np.ascontiguousarray(rays.directions, dtype=np.float64), t0.astype(np.float64),
                      t1.astype(np.float64), counts, float(step), np.ascontiguousarray(occ), mmin, mscale,
                      mask is not None, ray_index, t, delta, points)
    return SampleBatch(ray_index[:n], t[:n], delta[:n], points[:n], len(rays))


def softplus(x):
    return np.logaddexp(0.0, x)


def density_to_alpha(sigma_raw, delta, shift: float = 0.0):
    """``1 - exp(-softplus(sigma_raw + shift) * delta)``."""
    return -np.expm1(-softplus(np.asarray(sigma_raw, dtype=np.float64) + shift) * delta)


def density_alpha_grad(sigma_raw, delta, shift: float = 0.0):
    """d(alpha)/d(sigma_raw)."""
    z = np.asarray(sigma_raw, dtype=np.float64) + shift
    x = softplus(z) * delta
    return np.exp(-x) * sigmoid(z) * delta


@dataclass
class Composite:
    rgb: np.ndarray  # (R, 3)
    acc: np.ndarray  # (R,)
    depth: np.ndarray  # (R,)
    weights: np.ndarray  # (S,)
    trans: np.ndarray  # (S,) transmittance before each sample
    trans_after: np.ndarray  # (S,) transmittance after each sample
    t_final: np.ndarray  # (R,)
    background: np.ndarray  # (3,)


def _segment_offsets(ray_index, n_rays):
    """Start offsets (n_rays + 1) of each ray's contiguous run of samples."""
    ray_index = np.asarray(ray_index)
    if ray_index.size > 1 and np.any(ray_index[1:] < ray_index[:-1]):
        raise ValueError("samples must be grouped by ray (non-decreasing ray_index)")
    counts = np.bincount(ray_index, minlength=n_rays)
    return np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)


def composite_optical_depth(x, colors, ray_index, n_rays, background, t=None) -> Composite:
    """Composite with per-sample optical depth ``x = -log(1 - alpha)`` (>= 0)."""
    x = np.ascontiguousarray(np.minimum(np.asarray(x, dtype=np.float64), MAX_OPTICAL_DEPTH))
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,)).copy()
    colors = np.ascontiguousarray(np.asarray(colors, dtype=np.float64).reshape(-1, 3))
    offsets = _segment_offsets(ray_index, n_rays)
    s = x.size
    trans, trans_after, weights = np.empty(s), np.empty(s), np.empty(s)
    t_final, acc, depth = np.empty(n_rays), np.empty(n_rays), np.empty(n_rays)
    rgb = np.empty((n_rays, 3))
    tt = np.zeros(s) if t is None else np.ascontiguousarray(t, dtype=np.float64)
    composite_kernel(x, colors, offsets, bg, tt, t is not None, trans, trans_after, weights, t_final, acc, rgb, depth)
    return Composite(rgb, acc, depth, weights, trans, trans_after, t_final, bg)


def composite(alpha, colors, ray_index, n_rays, background=0.0, t=None) -> Composite:
    alpha = np.clip(np.asarray(alpha, dtype=np.float64), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        x = -np.log1p(-alpha)
    return composite_optical_depth(x, colors, ray_index, n_rays, background, t)


def composite_backward(comp: Composite, colors, ray_index, grad_rgb, grad_t_final=None, grad_weights=None):
    """Gradients w.r.t. per-sample optical depth and colors.

    ``grad_weights`` adds direct dL/dw_i terms; ``grad_t_final`` adds dL/dT_final.
    """
    n_rays = comp.rgb.shape[0]
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64)
    gr = grad_rgb[ray_index]
    g = np.sum(colors * gr, axis=-1)
    if grad_weights is not None:
        g = g + grad_weights
    gt = grad_rgb @ comp.background
    if grad_t_final is not None:
        gt = gt + grad_t_final
    grad_x = np.empty_like(g)
    composite_backward_kernel(np.ascontiguousarray(g), comp.weights, comp.trans_after, comp.t_final,
                              np.ascontiguousarray(gt, dtype=np.float64), _segment_offsets(ray_index, n_rays), grad_x)
    grad_colors = comp.weights[:, None] * gr
    return grad_x, grad_colors


def composite_backward_alpha(comp: Composite, alpha, colors, ray_index, grad_rgb, grad_t_final=None):
    grad_x, grad_colors = composite_backward(comp, colors, ray_index, grad_rgb, grad_t_final)
    one_minus = np.maximum(1.0 - np.asarray(alpha, dtype=np.float64), 1e-300)
    return grad_x / one_minus, grad_colors


def _normalize_rows(v, eps=NORMAL_EPS):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    valid = norm[:, 0] > eps
    return v / np.where(norm > eps, norm, 1.0), norm, valid


def derive_normals(density_grid, points, shift: float = 0.0, coeffs: TrilerpCoeffs | None = None):
    """Unit normals ``-grad(density) / |grad(density)|``; returns ``(normals, valid)``."""
    if coeffs is None:
        coeffs = trilerp_coeffs(density_grid.dims, density_grid.bbox, points, density_grid.dtype)
    g_raw = spatial_gradient_coeffs(density_grid, coeffs)[:, :, 0]
    sig_raw = gather(density_grid, coeffs)[:, 0]
    g_act = sigmoid(sig_raw + shift)[:, None] * g_raw
    valid = np.linalg.norm(g_act, axis=-1) > NORMAL_EPS
    n, _, _ = _normalize_rows(g_raw, eps=0.0)
    n = -n
    n[~valid] = 0
    return n, valid


def _derived_normals_backward(density_grid, coeffs, normals, valid, grad_n):
    g_raw = spatial_gradient_coeffs(density_grid, coeffs)[:, :, 0]
    norm = np.linalg.norm(g_raw, axis=-1, keepdims=True)
    norm = np.where(norm > 0, norm, 1.0)
    # n = -g/|g|  ->  dL/dg = -(I - n n^T) dL/dn / |g|
    proj = grad_n - np.sum(grad_n * normals, axis=-1, keepdims=True) * normals
    up = np.where(valid[:, None], -proj / norm, 0.0)
    spatial_gradient_backward(density_grid, coeffs, up[:, :, None].astype(density_grid.dtype))


def linear_to_srgb(x):
    x = np.maximum(x, 0.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(np.maximum(x, 1e-12), 1 / 2.4) - 0.055)


def linear_to_srgb_grad(x):
    return np.where(x <= 0.0031308, np.where(x >= 0, 12.92, 0.0),
                    1.055 / 2.4 * np.power(np.maximum(x, 1e-12), 1 / 2.4 - 1))


@dataclass
class ShadeCache:
    cd: np.ndarray
    s: np.ndarray
    cs: np.ndarray | None
    lin: np.ndarray
    spec: np.ndarray  # (M,) bool: sample got a specular term
    nhat: np.ndarray
    nnorm: np.ndarray
    use_pred: np.ndarray
    omega_o: np.ndarray
    direction: np.ndarray
    rough: np.ndarray | None
    drough: np.ndarray | None
    enc_parts: tuple | None
    mlp_cache: MlpCache | None
    b_dim: int


def shade(feats: dict, view_dirs: np.ndarray, mlp, cfg: ShadingConfig, mode: str = "fine",
          derived=None):
    """Per-sample colour from interpolated grid outputs; returns ``(colour, cache)``.

    ``feats`` holds raw (pre-activation) values keyed by grid name.  ``derived`` is an
    optional ``(normals, valid)`` pair used when a predicted normal is degenerate.
    """
    cd = sigmoid(feats["diffuse"])
    m = cd.shape[0]
    if mode == "coarse":
        c = cd
        cache = ShadeCache(cd, None, None, cd, np.zeros(m, bool), None, None, None, None, None,
                           None, None, None, None, 0)
        return c, cache
    s = sigmoid(feats["tint"] + cfg.tint_bias)
    nhat, nnorm, pred_valid = _normalize_rows(feats["normal"])
    use_pred = pred_valid.copy()
    if derived is not None:
        dn, dvalid = derived
        fallback = ~pred_valid & dvalid
        nhat = np.where(fallback[:, None], dn, nhat)
        spec = pred_valid | fallback
    else:
        spec = pred_valid
    nhat = np.where(spec[:, None], nhat, np.array([0.0, 0.0, 1.0], dtype=nhat.dtype))
    omega_o = -view_dirs.astype(cd.dtype)
    if cfg.disable_ref_dir:
        direction = omega_o
    else:
        direction = encoding.reflect(omega_o, nhat).astype(cd.dtype)
    levels = cfg.sh_levels
    rough = drough = None
    if cfg.disable_ide:
        basis, jac = encoding.sh_basis_jacobian(direction, levels)
        enc = basis
        enc_parts = (jac,)
    else:
        rough, drough = encoding.roughness_from_raw(feats["roughness"][:, 0], cfg.roughness_bias)
        enc, basis, jac, att, ell = encoding.ide_from_roughness(direction, rough, levels)
        enc_parts = (basis, jac, att, ell)
    dot = np.sum(omega_o * nhat, axis=-1, keepdims=True)
    x = np.concatenate([feats["bottleneck"], enc.astype(cd.dtype), dot], axis=-1)
    mlp_cache = MlpCache()
    cs = mlp.forward(x, mlp_cache)
    lin = cd + np.where(spec[:, None], s * cs, 0.0)
    tone = linear_to_srgb(lin) if cfg.srgb else lin
    c = np.clip(tone, 0.0, 1.0)
    cache = ShadeCache(cd, s, cs, lin, spec, nhat, nnorm, use_pred, omega_o, direction, rough, drough,
                       enc_parts, mlp_cache, feats["bottleneck"].shape[1])
    return c, cache


def shade_backward(cache: ShadeCache, grad_c, mlp, cfg: ShadingConfig, mode: str = "fine",
                   grad_nhat_extra=None):
    """Returns ``(feature_grads, mlp_param_grads)``; feature grads keyed like ``feats``."""
    lin = cache.lin
    tone = linear_to_srgb(lin) if (cfg.srgb and mode == "fine") else lin
    g = grad_c * ((tone > 0) & (tone < 1))
    if cfg.srgb and mode == "fine":
        g = g * linear_to_srgb_grad(lin)
    cd = cache.cd
    grads = {"diffuse": g * cd * (1 - cd)}
    if mode == "coarse":
        return grads, None
    spec = cache.spec[:, None]
    s, cs = cache.s, cache.cs
    grads["tint"] = np.where(spec, g * cs * s * (1 - s), 0.0)
    grad_cs = np.where(spec, g * s, 0.0)
    param_grads, grad_x = mlp.backward(cache.mlp_cache, grad_cs)
    b = cache.b_dim
    grads["bottleneck"] = grad_x[:, :b]
    grad_enc = grad_x[:, b:-1]
    grad_dot = grad_x[:, -1:]
    if cfg.disable_ide:
        (jac,) = cache.enc_parts
        grad_dir = np.einsum("nd,ndk->nk", grad_enc, jac)
        grads["roughness"] = np.zeros((lin.shape[0], 1), dtype=lin.dtype)
    else:
        grad_dir, grad_rough = encoding.ide_from_roughness_backward(grad_enc, *cache.enc_parts)
        grads["roughness"] = (grad_rough * cache.drough)[:, None]
    grad_nhat = grad_dot * cache.omega_o
    if not cfg.disable_ref_dir:
        _, grad_n_ref = encoding.reflect_backward(cache.omega_o, cache.nhat, grad_dir)
        grad_nhat = grad_nhat + grad_n_ref
    if grad_nhat_extra is not None:
        grad_nhat = grad_nhat + grad_nhat_extra
    nhat = cache.nhat
    proj = grad_nhat - np.sum(grad_nhat * nhat, axis=-1, keepdims=True) * nhat
    grad_normal = np.where((cache.use_pred & cache.spec)[:, None], proj / np.maximum(cache.nnorm, NORMAL_EPS), 0.0)
    grads["normal"] = grad_normal
    return grads, param_grads


@dataclass
class RenderConfig:
    background: str | float = "white"
    weight_threshold: float = 1e-4
    derived_normals: bool = True

    @property
    def background_value(self) -> float:
        if isinstance(self.background, str):
            return BACKGROUNDS[self.background]
        return float(self.background)


@dataclass
class RenderResult:
    rgb: np.ndarray
    acc: np.ndarray
    depth: np.ndarray
    t_final: np.ndarray
    samples: SampleBatch
    weights: np.ndarray  # (S,) compositing weights for every sample
    active: np.ndarray  # (M,) indices of shaded samples
    colors: np.ndarray  # (M, 3)
    pred_normals: np.ndarray | None = None  # (M, 3)
    pred_valid: np.ndarray | None = None
    derived_normals: np.ndarray | None = None
    derived_valid: np.ndarray | None = None
    view_dirs: np.ndarray | None = None  # (M, 3)
    components: dict | None = None
    cache: dict = field(default_factory=dict)

    @property
    def active_ray_index(self) -> np.ndarray:
        return self.samples.ray_index[self.active]

    @property
    def active_weights(self) -> np.ndarray:
        return self.weights[self.active]


def _gather_feats(scene: SceneModel, coeffs: TrilerpCoeffs, names) -> dict:
    return {name: gather(scene.grids[name], coeffs) for name in names}


def render_rays(scene: SceneModel, rays: Rays, mode: str | None = None, cfg: RenderConfig | None = None,
                step: float | None = None, keep_cache: bool = True, components: bool = False) -> RenderResult:
    """Sample, interpolate, activate, shade and composite a ray batch."""
    mode = scene.mode if mode is None else mode
    cfg = RenderConfig() if cfg is None else cfg
    if mode == "fine" and scene.mlp is None:
        raise ValueError("fine-mode rendering needs a directional MLP")
    step = scene.step_size() if step is None else step
    samples = sample_points(rays, scene.bbox, step, scene.mask)
    dgrid = scene.grids["density"]
    coeffs = trilerp_coeffs(dgrid.dims, dgrid.bbox, samples.points, dgrid.dtype)
    sigma_raw = gather(dgrid, coeffs)[:, 0].astype(np.float64)
    interval = samples.delta / scene.density_unit
    x = softplus(sigma_raw + scene.act_shift) * interval
    zeros = np.zeros((len(samples), 3))
    first = composite_optical_depth(x, zeros, samples.ray_index, len(rays), cfg.background_value, samples.t)
    if cfg.weight_threshold > 0:
        active = np.nonzero(first.weights > cfg.weight_threshold)[0]
    else:
        active = np.arange(len(samples))
    ac = coeffs.subset(active)
    names = ("diffuse",) if mode == "coarse" else ("diffuse", "tint", "bottleneck", "roughness", "normal")
    feats = _gather_feats(scene, ac, names)
    ray_of = samples.ray_index[active]
    view_dirs = rays.directions[ray_of]
    derived = None
    if mode == "fine" and cfg.derived_normals:
        derived = derive_normals(dgrid, None, scene.act_shift, coeffs=ac)
    colors, shade_cache = shade(feats, view_dirs, scene.mlp, scene.shading, mode, derived)
    all_colors = np.zeros((len(samples), 3))
    all_colors[active] = colors
    comp = composite_optical_depth(x, all_colors, samples.ray_index, len(rays), cfg.background_value, samples.t)
    result = RenderResult(comp.rgb, comp.acc, comp.depth, comp.t_final, samples, comp.weights, active, colors,
                          view_dirs=view_dirs)
    if mode == "fine":
        result.pred_normals = shade_cache.nhat
        result.pred_valid = shade_cache.use_pred
        if derived is not None:
            result.derived_normals, result.derived_valid = derived
    if components and mode == "fine":
        result.components = _composite_components(comp, active, shade_cache, samples.ray_index, len(rays))
    if keep_cache:
        result.cache = dict(mode=mode, cfg=cfg, coeffs=coeffs, active_coeffs=ac, sigma_raw=sigma_raw,
                            interval=interval, comp=comp, all_colors=all_colors, shade=shade_cache)
    return result


def _composite_components(comp: Composite, active, sc: ShadeCache, ray_index, n_rays) -> dict:
    w = comp.weights[active]
    ri = ray_index[active]
    bg = comp.background
    spec = sc.spec[:, None]
    maps = {
        "diffuse": sc.cd,
        "specular": np.where(spec, sc.cs, 0.0),
        "tint": np.where(spec, sc.s, 0.0),
        "roughness": np.repeat((sc.rough if sc.rough is not None else np.zeros(len(w)))[:, None], 3, axis=1),
        "normals": np.where(spec, sc.nhat * 0.5 + 0.5, 0.0),
    }
    out = {}
    for key, vals in maps.items():
        img = np.stack([np.bincount(ri, weights=w * vals[:, c], minlength=n_rays) for c in range(3)], -1)
        out[key] = img + comp.t_final[:, None] * bg
    return out


def render_backward(scene: SceneModel, result: RenderResult, grad_rgb, grad_colors=None,
                    grad_t_final=None, grad_pred_normals=None, grad_derived_normals=None):
    """Backpropagate loss gradients into the grids' ``grad`` buffers; returns MLP parameter grads.

    ``grad_colors`` and the normal gradients are per active sample, (M, 3).
    """
    c = result.cache
    if not c:
        raise ValueError("render result was produced without a backward cache")
    mode = c["mode"]
    samples = result.samples
    comp = c["comp"]
    grad_x, grad_all_colors = composite_backward(comp, c["all_colors"], samples.ray_index, grad_rgb, grad_t_final)
    # d(x)/d(sigma_raw) = sigmoid(sigma_raw + shift) * interval
    grad_sigma = grad_x * sigmoid(c["sigma_raw"] + scene.act_shift) * c["interval"]
    dgrid = scene.grids["density"]
    scatter(dgrid, c["coeffs"], grad_sigma[:, None].astype(dgrid.dtype))
    grad_c = grad_all_colors[result.active]
    if grad_colors is not None:
        grad_c = grad_c + grad_colors
    feat_grads, mlp_grads = shade_backward(c["shade"], grad_c, scene.mlp, scene.shading, mode,
                                           grad_nhat_extra=grad_pred_normals)
    ac = c["active_coeffs"]
    for name, g in feat_grads.items():
        grid = scene.grids[name]
        scatter(grid, ac, np.asarray(g).reshape(len(result.active), grid.channels).astype(grid.dtype))
    if grad_derived_normals is not None and result.derived_normals is not None:
        _derived_normals_backward(dgrid, ac, result.derived_normals, result.derived_valid, grad_derived_normals)
    return mlp_grads


def render_ray(scene: SceneModel, ray: Rays, mode: str | None = None, cfg: RenderConfig | None = None) -> RenderResult:
    return render_rays(scene, ray, mode, cfg)


def render_image(scene: SceneModel, camera: Camera, cfg: RenderConfig | None = None, chunk: int = 16384,
                 near: float = 0.0, far: float = np.inf, step: float | None = None, components: bool = False):
    """Render a full image; returns ``(rgb (H, W, 3), extras)`` with extras holding depth/acc/components."""
    rays = generate_rays(camera, near=near, far=far)
    rgb = np.empty((len(rays), 3))
    acc = np.empty(len(rays))
    depth = np.empty(len(rays))
    comps: dict[str, list] = {}
    for s in range(0, len(rays), chunk):
        res = render_rays(scene, rays[s : s + chunk], cfg=cfg, step=step, keep_cache=False, components=components)
        rgb[s : s + chunk] = res.rgb
        acc[s : s + chunk] = res.acc
        depth[s : s + chunk] = res.depth
        if res.components:
            for k, v in res.components.items():
                comps.setdefault(k, []).append(v)
    h, w = camera.height, camera.width
    extras = {"acc": acc.reshape(h, w), "depth": depth.reshape(h, w)}
    for k, v in comps.items():
        extras[k] = np.concatenate(v).reshape(h, w, 3)
    return rgb.reshape(h, w, 3), extras
