"""NeRF-synthetic scene IO and analytic procedural scenes.

Directory layout (public NeRF-synthetic convention)::

    transforms_{train,val,test}.json   {"camera_angle_x": float,
                                        "frames": [{"file_path": "./train/r_0",
                                                    "transform_matrix": 4x4}, ...]}
    train/r_0.png ...                  8-bit RGBA

Procedural exports additionally carry ``scene_meta.json`` with the scene box and
background so a reload reproduces the training setup.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import Aabb
from .render import BACKGROUNDS, Camera, Rays, generate_rays

SPLITS = ("train", "val", "test")
SCENE_KINDS = ("lambertian_cube", "mirror_sphere")


class DatasetError(ValueError):
    pass


@dataclass
class Frame:
    image: np.ndarray  # (H, W, 4) straight-alpha RGBA in [0, 1]
    c2w: np.ndarray  # (4, 4)
    focal: float

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        rot = self.c2w[:3, :3]
        if self.c2w.shape != (4, 4) or not np.allclose(rot.T @ rot, np.eye(3), atol=1e-4):
            raise DatasetError("frame pose must be 4x4 with an orthonormal rotation block")
        if self.image.ndim != 3 or self.image.shape[2] != 4:
            raise DatasetError(f"frame image must be HxWx4, got {self.image.shape}")
        if self.image.min() < 0 or self.image.max() > 1:
            raise DatasetError("frame image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def camera(self) -> Camera:
        return Camera(self.width, self.height, self.focal, self.c2w)

    def rgb(self, background: float) -> np.ndarray:
        a = self.image[..., 3:4]
        return self.image[..., :3] * a + background * (1.0 - a)


@dataclass
class SceneDataset:
    splits: dict[str, list[Frame]]
    background: str = "white"
    bbox: Aabb = field(default_factory=lambda: Aabb.cube(1.5))
    near: float = 0.0
    far: float = 1e10

    def __post_init__(self):
        if self.background not in BACKGROUNDS:
            raise DatasetError(f"background must be one of {sorted(BACKGROUNDS)}")
        for name, frames in self.splits.items():
            if not frames:
                continue
            h, w, f = frames[0].height, frames[0].width, frames[0].focal
            for fr in frames:
                if (fr.height, fr.width) != (h, w) or abs(fr.focal - f) > 1e-6 * f:
                    raise DatasetError(f"split {name!r} mixes resolutions or focal lengths")

    @property
    def background_value(self) -> float:
        return BACKGROUNDS[self.background]

    def frames(self, split: str) -> list[Frame]:
        if split not in self.splits:
            raise DatasetError(f"unknown split {split!r}; available: {sorted(self.splits)}")
        return self.splits[split]

    def targets(self, split: str) -> list[np.ndarray]:
        return [fr.rgb(self.background_value) for fr in self.frames(split)]

    def rays(self, split: str) -> tuple[Rays, np.ndarray]:
        """All rays of a split with their RGB targets, frame-major, row-major pixels."""
        frames = self.frames(split)
        if not frames:
            raise DatasetError(f"split {split!r} is empty")
        rays = [generate_rays(fr.camera(), near=self.near, far=self.far) for fr in frames]
        rgb = np.concatenate([fr.rgb(self.background_value).reshape(-1, 3) for fr in frames])
        return Rays(
            np.concatenate([r.origins for r in rays]),
            np.concatenate([r.directions for r in rays]),
            np.concatenate([r.near for r in rays]),
            np.concatenate([r.far for r in rays]),
        ), rgb


def focal_from_angle(width: int, camera_angle_x: float) -> float:
    return 0.5 * width / np.tan(0.5 * camera_angle_x)


def angle_from_focal(width: int, focal: float) -> float:
    return float(2.0 * np.arctan(0.5 * width / focal))


def load_nerf_synthetic(path, background: str = "white", splits=SPLITS, downscale: int = 1) -> SceneDataset:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"scene directory not found: {root}")
    out = {}
    for split in splits:
        tf = root / f"transforms_{split}.json"
        if not tf.exists():
            raise DatasetError(f"missing {tf.name} in {root}")
        try:
            meta = json.loads(tf.read_text())
            angle = float(meta["camera_angle_x"])
            entries = meta["frames"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"malformed {tf.name}: {exc}") from exc
        frames = []
        for i, entry in enumerate(entries):
            try:
                rel = entry["file_path"]
                pose = np.array(entry["transform_matrix"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"malformed frame {i} in {tf.name}: {exc}") from exc
            img_path = root / rel
            if img_path.suffix == "":
                img_path = img_path.with_suffix(".png")
            if not img_path.exists():
                raise DatasetError(f"missing image {img_path}")
            with Image.open(img_path) as im:
                im = im.convert("RGBA")
                if downscale > 1:
                    im = im.reduce(downscale)
                image = np.asarray(im, dtype=np.float64) / 255.0
            frames.append(Frame(image, pose, focal_from_angle(image.shape[1], angle)))
        if frames and any(f.image.shape != frames[0].image.shape for f in frames):
            raise DatasetError(f"resolution mismatch inside split {split!r}")
        out[split] = frames
    kwargs = {}
    meta_path = root / "scene_meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        kwargs["bbox"] = Aabb.from_array(meta["bbox"])
        kwargs["near"] = float(meta.get("near", 0.0))
        kwargs["far"] = float(meta.get("far", 1e10))
    return SceneDataset(out, background=background, **kwargs)


def write_nerf_synthetic(dataset: SceneDataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for split, frames in dataset.splits.items():
        (root / split).mkdir(exist_ok=True)
        entries = []
        for i, fr in enumerate(frames):
            rel = f"./{split}/r_{i}"
            pixels = np.round(np.clip(fr.image, 0, 1) * 255).astype(np.uint8)
            Image.fromarray(pixels, mode="RGBA").save(root / f"{rel}.png")
            entries.append({"file_path": rel, "transform_matrix": fr.c2w.tolist()})
        angle = angle_from_focal(frames[0].width, frames[0].focal) if frames else 0.0
        payload = {"camera_angle_x": angle, "frames": entries}
        (root / f"transforms_{split}.json").write_text(json.dumps(payload, indent=2))
    meta = {"bbox": dataset.bbox.to_array().tolist(), "background": dataset.background,
            "near": dataset.near, "far": dataset.far}
    (root / "scene_meta.json").write_text(json.dumps(meta, indent=2))


# --- procedural scenes -------------------------------------------------------

CUBE_HALF = 0.5
CUBE_ALBEDO = np.array([0.85, 0.45, 0.2])
SPHERE_RADIUS = 0.7
SPHERE_ALBEDO = np.array([0.75, 0.35, 0.3])
LIGHT_DIR = np.array([0.0, 0.6, 0.8])
AMBIENT = 0.35
CAMERA_RADIUS = 3.2
CAMERA_ANGLE_X = 0.7
SCENE_HALF = 1.0


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if abs(forward @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    z = -forward
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, y, z, position
    return c2w


def environment(dirs: np.ndarray) -> np.ndarray:
    """Smooth, low-frequency colour as a function of direction."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    r = 0.55 + 0.35 * z + 0.1 * (x * x - y * y)
    g = 0.45 + 0.3 * x + 0.15 * y * z
    b = 0.5 + 0.35 * y - 0.1 * x * z
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def _lambert(albedo, normals, light=LIGHT_DIR):
    light = light / np.linalg.norm(light)
    return albedo * (AMBIENT + (1 - AMBIENT) * np.maximum(normals @ light, 0.0))[..., None]


def _trace_cube(o, d):
    box = Aabb.cube(CUBE_HALF)
    t0, t1 = box.intersect(o, d)
    hit = (t1 >= t0) & (t1 > 0)
    t = np.where(t0 > 0, t0, t1)
    p = o + t[:, None] * d
    axis = np.argmax(np.abs(p) / CUBE_HALF, axis=-1)
    n = np.zeros_like(p)
    n[np.arange(len(p)), axis] = np.sign(p[np.arange(len(p)), axis])
    return hit, _lambert(CUBE_ALBEDO, n)


def _trace_sphere(o, d, reflectivity):
    b = np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - SPHERE_RADIUS**2
    disc = b * b - c
    hit = disc >= 0
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    p = o + t[:, None] * d
    n = p / SPHERE_RADIUS
    diffuse = _lambert(SPHERE_ALBEDO, n)
    wo = -d
    refl = 2 * np.sum(wo * n, axis=-1, keepdims=True) * n - wo
    if reflectivity == 0:
        return hit & (t > 0), diffuse
    color = (1 - reflectivity) * diffuse + reflectivity * environment(refl)
    return hit & (t > 0), color


def render_analytic(kind: str, camera: Camera, reflectivity: float = 0.0, supersample: int = 4) -> np.ndarray:
    """Exact straight-alpha RGBA render with ``supersample**2`` stratified rays per pixel."""
    if kind not in SCENE_KINDS:
        raise DatasetError(f"unknown procedural scene kind {kind!r}; expected one of {SCENE_KINDS}")
    h, w, s = camera.height, camera.width, supersample
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sub = (np.arange(s) + 0.5) / s - 0.5
    color_sum = np.zeros((h * w, 3))
    hits = np.zeros(h * w)
    for dy in sub:
        for dx in sub:
            pix = np.stack([cols.ravel() + dx, rows.ravel() + dy], axis=-1)
            rays = generate_rays(camera, pix)
            if kind == "lambertian_cube":
                hit, col = _trace_cube(rays.origins, rays.directions)
            else:
                hit, col = _trace_sphere(rays.origins, rays.directions, reflectivity)
            color_sum += np.where(hit[:, None], col, 0.0)
            hits += hit
    alpha = hits / (s * s)
    rgb = color_sum / np.maximum(hits, 1)[:, None]
    return np.clip(np.concatenate([rgb, alpha[:, None]], axis=-1).reshape(h, w, 4), 0.0, 1.0)


def random_cameras(n: int, rng: np.random.Generator, radius: float = CAMERA_RADIUS) -> list[np.ndarray]:
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return [look_at(p * radius) for p in v]


def generate_procedural_scene(kind: str, reflectivity: float = 0.0, n_views: int = 24,
                              resolution: int = 64, seed: int = 0, n_test: int | None = None,
                              background: str = "white", supersample: int = 4) -> SceneDataset:
    if kind not in SCENE_KINDS:
        raise DatasetError(f"unknown procedural scene kind {kind!r}; expected one of {SCENE_KINDS}")
    if n_views < 2 or resolution < 32:
        raise DatasetError("procedural scenes need n_views >= 2 and resolution >= 32")
    if not 0 <= reflectivity <= 1:
        raise DatasetError("reflectivity must lie in [0, 1]")
    n_test = max(1, n_views // 3) if n_test is None else n_test
    rng = np.random.default_rng(seed)
    focal = focal_from_angle(resolution, CAMERA_ANGLE_X)

    def frames(poses):
        return [Frame(render_analytic(kind, Camera(resolution, resolution, focal, p), reflectivity, supersample),
                      p, focal) for p in poses]

    train = frames(random_cameras(n_views, rng))
    test = frames(random_cameras(n_test, rng))
    near = CAMERA_RADIUS - SCENE_HALF * np.sqrt(3.0)
    far = CAMERA_RADIUS + SCENE_HALF * np.sqrt(3.0)
    return SceneDataset({"train": train, "val": test, "test": test}, background=background,
                        bbox=Aabb.cube(SCENE_HALF), near=near, far=far)
