"""Scene state: the six property grids, the directional MLP and the occupancy mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import DirectionalEncodingConfig
from .grid import Aabb, VoxelGrid, upsample
from .mlp import DirectionalMlp

COARSE_GRIDS = ("density", "diffuse")
FINE_GRIDS = ("density", "diffuse", "tint", "bottleneck", "roughness", "normal")


def grid_channels(name: str, bottleneck_dim: int) -> int:
    return {"density": 1, "diffuse": 3, "tint": 3, "bottleneck": bottleneck_dim,
            "roughness": 1, "normal": 3}[name]


def solve_act_shift(alpha_init: float, interval: float) -> float:
    """Shift ``b`` such that ``1 - exp(-softplus(0 + b) * interval) == alpha_init``."""
    if not 0 < alpha_init < 1:
        raise ValueError("alpha_init must lie in (0, 1)")
    target = -np.log1p(-alpha_init) / interval
    return float(np.log(np.expm1(target)))


@dataclass
class ShadingConfig:
    sh_levels: tuple[int, ...] = (1, 2, 4)
    disable_ide: bool = False
    disable_ref_dir: bool = False
    roughness_bias: float = -1.0
    tint_bias: float = -1.0
    srgb: bool = False

    @property
    def encoding(self) -> DirectionalEncodingConfig:
        return DirectionalEncodingConfig(self.sh_levels)

    def feature_dim(self, bottleneck_dim: int) -> int:
        return bottleneck_dim + self.encoding.output_dim + 1


@dataclass
class OccupancyMask:
    """Boolean cells over a box; a point is occupied iff the cell containing it is."""

    occupied: np.ndarray  # (nx, ny, nz) bool
    bbox: Aabb

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.occupied.shape)

    def cell_index(self, points: np.ndarray):
        n = np.array(self.occupied.shape)
        u = (np.asarray(points) - self.bbox.min) / self.bbox.extent * n
        inside = np.all((u >= 0) & (u <= n), axis=-1)
        idx = np.clip(np.floor(u).astype(np.int64), 0, n - 1)
        return idx, inside

    def query(self, points: np.ndarray) -> np.ndarray:
        idx, inside = self.cell_index(points)
        return inside & self.occupied[idx[..., 0], idx[..., 1], idx[..., 2]]

    def fraction(self) -> float:
        return float(self.occupied.mean())


@dataclass
class SceneModel:
    bbox: Aabb
    grids: dict[str, VoxelGrid]
    act_shift: float
    density_unit: float
    mode: str = "fine"
    mlp: DirectionalMlp | None = None
    shading: ShadingConfig = field(default_factory=ShadingConfig)
    mask: OccupancyMask | None = None
    step_ratio: float = 0.5

    @classmethod
    def create(cls, bbox: Aabb, dims, mode: str, *, density_unit: float | None = None,
               alpha_init: float = 1e-6, bottleneck_dim: int = 8, mlp_depth: int = 8,
               mlp_width: int = 256, shading: ShadingConfig | None = None,
               step_ratio: float = 0.5, seed: int = 0, dtype=np.float32) -> "SceneModel":
        if mode not in ("coarse", "fine"):
            raise ValueError(f"unknown mode {mode!r}")
        shading = ShadingConfig() if shading is None else shading
        rng = np.random.default_rng(seed)
        names = COARSE_GRIDS if mode == "coarse" else FINE_GRIDS
        grids = {}
        for name in names:
            g = VoxelGrid.zeros(dims, grid_channels(name, bottleneck_dim), bbox, dtype=dtype)
            if name == "normal":
                # predicted normals need a non-degenerate start; direction is arbitrary
                g.data[...] = rng.standard_normal(g.data.shape).astype(dtype) * 0.1
            elif name == "bottleneck":
                g.data[...] = rng.standard_normal(g.data.shape).astype(dtype) * 0.1
            grids[name] = g
        if density_unit is None:
            density_unit = float(np.mean(grids["density"].voxel_size))
        mlp = None
        if mode == "fine":
            mlp = DirectionalMlp.create(shading.feature_dim(bottleneck_dim), mlp_depth, mlp_width,
                                        rng=rng, dtype=dtype)
        act_shift = solve_act_shift(alpha_init, step_ratio)
        return cls(bbox, grids, act_shift, float(density_unit), mode, mlp, shading, None, step_ratio)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.grids["density"].dims

    @property
    def dtype(self):
        return self.grids["density"].dtype

    @property
    def bottleneck_dim(self) -> int:
        g = self.grids.get("bottleneck")
        return 0 if g is None else g.channels

    def voxel_edge(self) -> float:
        return float(np.mean(self.grids["density"].voxel_size))

    def step_size(self) -> float:
        """Default marching step in world units: a fraction of the current voxel edge."""
        return self.step_ratio * self.voxel_edge()

    def zero_grad(self) -> None:
        for g in self.grids.values():
            g.zero_grad()

    def upsample(self, new_dims) -> None:
        for name, g in self.grids.items():
            self.grids[name] = upsample(g, new_dims)

    def activated_density(self, raw: np.ndarray | None = None) -> np.ndarray:
        raw = self.grids["density"].data[..., 0] if raw is None else raw
        return np.logaddexp(0.0, raw + self.act_shift)
