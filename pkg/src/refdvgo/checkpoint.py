"""Binary checkpoints.

Little-endian container::

    magic      4 bytes   b"RDVG"
    version    u32
    meta_len   u32       then meta_len bytes of UTF-8 JSON
    n_grids    u32
    grid       x n_grids:
        name_len u16, name (UTF-8)
        dims     u32 x 3, channels u32
        bbox     f64 x 6 (min xyz, max xyz)
        dtype    u8 (0 = f32, 1 = f64)
        data     dims x channels values, C order (x slowest, channel fastest)
    n_arrays   u32
    array      x n_arrays:
        name_len u16, name
        dtype    u8 (0 = f32, 1 = f64, 2 = u8, 3 = i64)
        ndim     u8, shape u32 x ndim
        data     C order

Named arrays hold the MLP parameters (``mlp.w<i>``, ``mlp.b<i>``), optimizer moments
(``opt.<group>.m<k>``, ``opt.<group>.v<k>``) and the occupancy mask (``mask``).
The JSON meta carries scalars: mode, activation shift, density unit, step ratio,
shading options, optimizer step counters, the mask box and the run config with its hash.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .grid import Aabb, VoxelGrid
from .mlp import DirectionalMlp
from .model import OccupancyMask, SceneModel, ShadingConfig
from .optim import Adam, ParamGroup

MAGIC = b"RDVG"
VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64, 2: np.uint8, 3: np.int64}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_name(f, name: str) -> None:
    raw = name.encode()
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_exact(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def _read_name(f) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode()


def _write_array(f, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
    _write_name(f, name)
    f.write(struct.pack("<BB", code, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read_array(f):
    name = _read_name(f)
    code, ndim = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _DTYPES:
        raise CheckpointError(f"unknown dtype code {code} for array {name!r}")
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    dt = np.dtype(_DTYPES[code]).newbyteorder("<")
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(f, count * dt.itemsize), dtype=dt).reshape(shape)
    return name, data.astype(dt.newbyteorder("="))


def save_checkpoint(path, model: SceneModel, optimizer: Adam | None = None, config_text: str = "",
                    extra: dict | None = None) -> None:
    meta = {
        "mode": model.mode,
        "act_shift": model.act_shift,
        "density_unit": model.density_unit,
        "step_ratio": model.step_ratio,
        "shading": {
            "sh_levels": list(model.shading.sh_levels),
            "disable_ide": model.shading.disable_ide,
            "disable_ref_dir": model.shading.disable_ref_dir,
            "roughness_bias": model.shading.roughness_bias,
            "tint_bias": model.shading.tint_bias,
            "srgb": model.shading.srgb,
        },
        "n_mlp_layers": 0 if model.mlp is None else len(model.mlp.weights),
        "optimizer": {},
        "mask_bbox": None if model.mask is None else model.mask.bbox.to_array().tolist(),
        "config": config_text,
        "config_hash": config_hash(config_text),
        "extra": extra or {},
    }
    arrays = []
    if model.mlp is not None:
        for i, (w, b) in enumerate(zip(model.mlp.weights, model.mlp.biases)):
            arrays += [(f"mlp.w{i}", w), (f"mlp.b{i}", b)]
    if optimizer is not None:
        for name, g in optimizer.groups.items():
            meta["optimizer"][name] = {"t": g.t, "lr": g.lr, "n": len(g.m)}
            for k, (m, v) in enumerate(zip(g.m, g.v)):
                arrays += [(f"opt.{name}.m{k}", m), (f"opt.{name}.v{k}", v)]
    if model.mask is not None:
        arrays.append(("mask", model.mask.occupied))
    with open(path, "wb") as f:
        f.write(MAGIC)
        raw = json.dumps(meta, sort_keys=True).encode()
        f.write(struct.pack("<II", VERSION, len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", len(model.grids)))
        for name, g in model.grids.items():
            _write_name(f, name)
            f.write(struct.pack("<4I", *g.dims, g.channels))
            f.write(struct.pack("<6d", *g.bbox.to_array()))
            code = _CODES.get(g.dtype)
            if code not in (0, 1):
                raise CheckpointError(f"grid {name!r} must be float32 or float64")
            f.write(struct.pack("<B", code))
            f.write(np.ascontiguousarray(g.data, dtype=g.dtype.newbyteorder("<")).tobytes())
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            _write_array(f, name, arr)


def read_version(path) -> int:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
    return version


def load_checkpoint(path):
    """Returns ``(model, optimizer_or_None, meta)``."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version} is not supported (expected {VERSION})")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4))
        meta = json.loads(_read_exact(f, meta_len).decode())
        (n_grids,) = struct.unpack("<I", _read_exact(f, 4))
        grids = {}
        for _ in range(n_grids):
            name = _read_name(f)
            nx, ny, nz, c = struct.unpack("<4I", _read_exact(f, 16))
            bbox = Aabb.from_array(struct.unpack("<6d", _read_exact(f, 48)))
            (code,) = struct.unpack("<B", _read_exact(f, 1))
            dt = np.dtype(_DTYPES[code]).newbyteorder("<")
            count = nx * ny * nz * c
            data = np.frombuffer(_read_exact(f, count * dt.itemsize), dtype=dt).reshape(nx, ny, nz, c)
            grids[name] = VoxelGrid(data.astype(dt.newbyteorder("=")), bbox)
        (n_arrays,) = struct.unpack("<I", _read_exact(f, 4))
        arrays = dict(_read_array(f) for _ in range(n_arrays))
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    mlp = None
    if meta["n_mlp_layers"]:
        n = meta["n_mlp_layers"]
        mlp = DirectionalMlp([arrays[f"mlp.w{i}"].copy() for i in range(n)],
                             [arrays[f"mlp.b{i}"].copy() for i in range(n)])
    mask = None
    if "mask" in arrays:
        mask = OccupancyMask(arrays["mask"].astype(bool), Aabb.from_array(meta["mask_bbox"]))
    sh = meta["shading"]
    shading = ShadingConfig(tuple(sh["sh_levels"]), sh["disable_ide"], sh["disable_ref_dir"],
                            sh["roughness_bias"], sh["tint_bias"], sh["srgb"])
    bbox = grids["density"].bbox
    model = SceneModel(bbox, grids, meta["act_shift"], meta["density_unit"], meta["mode"], mlp, shading, mask,
                       meta["step_ratio"])
    optimizer = None
    if meta["optimizer"]:
        optimizer = Adam()
        for name, info in meta["optimizer"].items():
            params = model.mlp.parameters() if name == "mlp" else [model.grids[name].data]
            group = ParamGroup(name, params, info["lr"])
            group.m = [arrays[f"opt.{name}.m{k}"].copy() for k in range(info["n"])]
            group.v = [arrays[f"opt.{name}.v{k}"].copy() for k in range(info["n"])]
            group.t = info["t"]
            optimizer.add(group)
    return model, optimizer, meta
