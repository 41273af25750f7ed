"""Dense voxel grids with trilinear interpolation and its analytic derivatives.

Grid values are stored node-major / channel-minor as ``data[ix, iy, iz, c]``
over an axis-aligned box; node ``(0, 0, 0)`` sits on ``bbox.min`` and node
``(Nx-1, Ny-1, Nz-1)`` on ``bbox.max``.  Queries outside the box read as zero.

Gradient accumulation into ``VoxelGrid.grad`` is serialized per grid: every
scatter runs under the grid's lock, so concurrent backward calls on disjoint
ray batches are safe.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ._kernels import gather_kernel, scatter_kernel, trilerp_coeffs_kernel, tv_kernel

# corner order: bit 2 -> x, bit 1 -> y, bit 0 -> z
_CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)])


@dataclass
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64).reshape(3)
        self.max = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.min)) and np.all(np.isfinite(self.max))):
            raise ValueError("bounding box corners must be finite")
        if np.any(self.max <= self.min):
            raise ValueError(f"degenerate bounding box: min={self.min}, max={self.max}")

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        return np.all((points >= self.min) & (points <= self.max), axis=-1)

    def intersect(self, origins: np.ndarray, directions: np.ndarray):
        """Slab test; returns per-ray ``(t_enter, t_exit)`` (``t_enter > t_exit`` on a miss)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / directions
            t0 = (self.min - origins) * inv
            t1 = (self.max - origins) * inv
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        # axis-parallel rays: inside the slab -> unbounded, outside -> miss
        par = directions == 0
        if np.any(par):
            inside = (origins >= self.min) & (origins <= self.max)
            lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
        return lo.max(axis=-1), hi.min(axis=-1)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.min, self.max])

    @classmethod
    def from_array(cls, values) -> "Aabb":
        values = np.asarray(values, dtype=np.float64)
        return cls(values[:3], values[3:])

    @classmethod
    def cube(cls, half: float) -> "Aabb":
        return cls(np.full(3, -half), np.full(3, half))


class VoxelGrid:
    """A dense ``C``-channel 3D array over a world-space box, plus a same-shape gradient buffer."""

    def __init__(self, data: np.ndarray, bbox: Aabb):
        data = np.ascontiguousarray(data)
        if data.ndim != 4:
            raise ValueError(f"grid data must be (Nx, Ny, Nz, C), got shape {data.shape}")
        if min(data.shape[:3]) < 2 or data.shape[3] < 1:
            raise ValueError(f"grid needs >= 2 nodes per axis and >= 1 channel, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("grid data contains non-finite values")
        self.data = data
        self.bbox = bbox
        self.grad = np.zeros_like(data)
        self._lock = threading.Lock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @classmethod
    def zeros(cls, dims, channels: int, bbox: Aabb, dtype=np.float32) -> "VoxelGrid":
        return cls(np.zeros((*tuple(int(d) for d in dims), int(channels)), dtype=dtype), bbox)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape[:3])

    @property
    def channels(self) -> int:
        return int(self.data.shape[3])

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def voxel_size(self) -> np.ndarray:
        return self.bbox.extent / (np.array(self.dims) - 1)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def replace_data(self, data: np.ndarray) -> None:
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)

    def accumulate(self, flat_grad: np.ndarray) -> None:
        with self._lock:
            self.grad.reshape(-1, self.channels)[...] += flat_grad

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.data.copy(), Aabb(self.bbox.min.copy(), self.bbox.max.copy()))

    def __repr__(self):
        return f"VoxelGrid(dims={self.dims}, channels={self.channels}, dtype={self.dtype})"


@dataclass
class TrilerpCoeffs:
    """Corner indices and weights for a batch of query points; reusable across grids
    that share dims and bbox."""

    index: np.ndarray  # (N, 8) flat node indices
    weight: np.ndarray  # (N, 8) trilinear weights, zero for outside points
    frac: np.ndarray  # (N, 3) in-cell fractional coordinates
    inside: np.ndarray  # (N,) bool
    inv_voxel: np.ndarray  # (3,) d(frac)/d(world)
    dims: tuple

    @property
    def n(self) -> int:
        return self.index.shape[0]

    def subset(self, keep) -> "TrilerpCoeffs":
        return TrilerpCoeffs(
            self.index[keep], self.weight[keep], self.frac[keep], self.inside[keep],
            self.inv_voxel, self.dims,
        )

    def derivative_weights(self) -> np.ndarray:
        """d(weight)/d(world position), shape (N, 8, 3); zero for outside points."""
        f = self.frac
        one = 1.0 - f
        dw = np.empty(self.weight.shape + (3,), dtype=self.weight.dtype)
        for c, (bx, by, bz) in enumerate(_CORNERS):
            wx = f[:, 0] if bx else one[:, 0]
            wy = f[:, 1] if by else one[:, 1]
            wz = f[:, 2] if bz else one[:, 2]
            sx = 1.0 if bx else -1.0
            sy = 1.0 if by else -1.0
            sz = 1.0 if bz else -1.0
            dw[:, c, 0] = sx * wy * wz * self.inv_voxel[0]
            dw[:, c, 1] = wx * sy * wz * self.inv_voxel[1]
            dw[:, c, 2] = wx * wy * sz * self.inv_voxel[2]
        dw[~self.inside] = 0
        return dw


def trilerp_coeffs(dims, bbox: Aabb, points: np.ndarray, dtype=np.float64) -> TrilerpCoeffs:
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    if not np.all(np.isfinite(points)):
        raise ValueError("non-finite query point (corrupted ray state)")
    dims_arr = np.asarray(dims, dtype=np.int64)
    scale = (dims_arr - 1) / bbox.extent
    n = points.shape[0]
    index = np.empty((n, 8), dtype=np.int64)
    weight = np.empty((n, 8), dtype=dtype)
    frac = np.empty((n, 3), dtype=dtype)
    inside = np.empty(n, dtype=np.bool_)
    trilerp_coeffs_kernel(points, bbox.min.astype(np.float64), scale, dims_arr, index, weight, frac, inside)
    return TrilerpCoeffs(index, weight, frac, inside, scale, tuple(int(d) for d in dims))


def coeffs_for(grid: VoxelGrid, points: np.ndarray) -> TrilerpCoeffs:
    return trilerp_coeffs(grid.dims, grid.bbox, points, dtype=grid.dtype)


def gather(grid: VoxelGrid, coeffs: TrilerpCoeffs) -> np.ndarray:
    out = np.empty((coeffs.n, grid.channels), dtype=grid.dtype)
    gather_kernel(grid.data.reshape(-1, grid.channels), coeffs.index, coeffs.weight.astype(grid.dtype, copy=False), out)
    return out


def scatter(grid: VoxelGrid, coeffs: TrilerpCoeffs, upstream: np.ndarray) -> None:
    """Accumulate ``upstream[n, c] * weight[n, k]`` into the 8 corners of every point."""
    upstream = np.asarray(upstream).reshape(coeffs.n, grid.channels)
    _scatter_weighted(grid, coeffs.index, coeffs.weight, upstream)


def _scatter_weighted(grid: VoxelGrid, index: np.ndarray, weight: np.ndarray, upstream: np.ndarray):
    dt = grid.grad.dtype
    upstream = np.ascontiguousarray(upstream, dtype=dt)
    with grid._lock:
        scatter_kernel(grid.grad.reshape(-1, grid.channels), index, weight.astype(dt, copy=False), upstream)


def trilerp_forward(grid: VoxelGrid, points: np.ndarray) -> np.ndarray:
    """Interpolated values at world-space ``points`` (shape (..., 3)) -> (..., C)."""
    points = np.asarray(points)
    lead = points.shape[:-1]
    coeffs = coeffs_for(grid, points)
    return gather(grid, coeffs).reshape(*lead, grid.channels)


def trilerp_backward(grid: VoxelGrid, points: np.ndarray, upstream: np.ndarray) -> None:
    coeffs = coeffs_for(grid, points)
    scatter(grid, coeffs, np.asarray(upstream).reshape(-1, grid.channels))


def spatial_gradient_coeffs(grid: VoxelGrid, coeffs: TrilerpCoeffs) -> np.ndarray:
    flat = grid.data.reshape(-1, grid.channels)
    dw = coeffs.derivative_weights()
    return np.einsum("nkd,nkc->ndc", dw, flat[coeffs.index])


def spatial_gradient(grid: VoxelGrid, points: np.ndarray) -> np.ndarray:
    """d(interpolated value)/d(world position): (..., 3) -> (..., 3, C)."""
    points = np.asarray(points)
    lead = points.shape[:-1]
    coeffs = coeffs_for(grid, points)
    return spatial_gradient_coeffs(grid, coeffs).reshape(*lead, 3, grid.channels)


def spatial_gradient_backward(grid: VoxelGrid, coeffs: TrilerpCoeffs, upstream: np.ndarray) -> None:
    """Adjoint of ``spatial_gradient`` w.r.t. node values; ``upstream`` is (N, 3, C)."""
    dw = coeffs.derivative_weights()
    grad_flat = grid.grad.reshape(-1, grid.channels)
    ones = np.ones((coeffs.n, 1), dtype=grid.grad.dtype)
    with grid._lock:
        for c in range(grid.channels):
            vals = np.einsum("nkd,nd->nk", dw, upstream[:, :, c]).astype(grid.grad.dtype)
            scatter_kernel(grad_flat[:, c : c + 1], coeffs.index, vals, ones)


def _resample_axis(values: np.ndarray, axis: int, new_n: int) -> np.ndarray:
    old_n = values.shape[axis]
    if new_n == old_n:
        return values
    u = np.linspace(0.0, old_n - 1, new_n)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, old_n - 2)
    f = (u - i0).astype(values.dtype)
    shape = [1] * values.ndim
    shape[axis] = new_n
    f = f.reshape(shape)
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i0 + 1, axis=axis)
    return a * (1 - f) + b * f


def upsample(grid: VoxelGrid, new_dims) -> VoxelGrid:
    """Resample onto a finer node lattice over the same box (separable trilinear)."""
    new_dims = tuple(int(d) for d in new_dims)
    if any(n < o for n, o in zip(new_dims, grid.dims)):
        raise ValueError(f"upsample cannot shrink a grid: {grid.dims} -> {new_dims}")
    data = grid.data
    for axis in range(3):
        data = _resample_axis(data, axis, new_dims[axis])
    return VoxelGrid(np.ascontiguousarray(data, dtype=grid.dtype), grid.bbox)


def total_variation(grid: VoxelGrid, weight: float = 1.0, accumulate: bool = True) -> float:
    """Mean squared difference over 6-neighbour node pairs, summed over channels.

    When ``accumulate`` is set, ``weight`` times the exact gradient is added to ``grid.grad``.
    """
    return tv_array(grid.data, weight=weight, grad_out=grid.grad if accumulate else None)


def tv_array(data: np.ndarray, weight: float = 1.0, grad_out: np.ndarray | None = None) -> float:
    """Unweighted TV of ``data``; ``weight`` only scales what is accumulated into ``grad_out``."""
    nx, ny, nz = data.shape[:3]
    n_pairs = (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)
    if n_pairs == 0:
        return 0.0
    scale = 2.0 * weight / n_pairs
    grad = data if grad_out is None else grad_out
    total = tv_kernel(np.ascontiguousarray(data), grad.dtype.type(scale), grad, grad_out is not None)
    return float(total / n_pairs)
