"""Run configuration files: flat ``key = value`` INI text with one section per area.

Sections are ``[data]``, ``[train]``, ``[model]``, ``[loss]``, ``[coarse_loss]``
(optional coarse-stage weight overrides) and ``[run]``.  Unknown sections or keys
are rejected with the offending line number.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace

from .loss import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    kind: str = "lambertian_cube"  # lambertian_cube | mirror_sphere | nerf_synthetic
    path: str = ""
    reflectivity: float = 0.0
    n_views: int = 24
    n_test: int = 8
    resolution: int = 64
    seed: int = 0
    background: str = "white"
    downscale: int = 1
    supersample: int = 4


@dataclass
class OutputConfig:
    out: str = "runs/default"
    checkpoint_every: int = 0  # 0: only the final checkpoints
    render_test: bool = True
    dump_float: bool = False
    threads: int = 1
    eval_split: str = "test"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: OutputConfig = field(default_factory=OutputConfig)

    def to_ini(self) -> str:
        return dump(self)

    @classmethod
    def from_ini(cls, text: str, source: str = "<config>") -> "RunConfig":
        return parse(text, source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return parse(f.read(), str(path))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_ini())


_TRAIN_KEYS = ("coarse_iters", "fine_iters", "coarse_dims", "fine_dims_final", "pgs_count", "pgs_steps",
               "batch_rays", "lr_grid", "lr_mlp", "lr_decay", "alpha_init", "fine_alpha_init", "step_ratio", "weight_threshold",
               "bbox_alpha_threshold", "mask_alpha_threshold", "seed", "log_every")
_MODEL_KEYS = ("mlp_depth", "mlp_width", "bottleneck_dim", "sh_levels", "disable_ide", "disable_ref_dir",
               "disable_pgs", "srgb")
_LOSS_FLAGS = ("normal_both_sided", "orientation_on_derived")
_WEIGHT_KEYS = tuple(f.name for f in fields(LossWeights))

_KINDS = {
    "coarse_iters": "int", "fine_iters": "int", "coarse_dims": "dims", "fine_dims_final": "dims",
    "pgs_count": "int", "pgs_steps": "pgs", "batch_rays": "int", "lr_grid": "float", "lr_mlp": "float",
    "lr_decay": "float", "alpha_init": "float", "fine_alpha_init": "optfloat", "step_ratio": "float", "weight_threshold": "float",
    "bbox_alpha_threshold": "float", "mask_alpha_threshold": "float", "seed": "int", "log_every": "int",
    "mlp_depth": "int", "mlp_width": "int", "bottleneck_dim": "int", "sh_levels": "ints",
    "disable_ide": "bool", "disable_ref_dir": "bool", "disable_pgs": "bool", "srgb": "bool",
    "normal_both_sided": "bool", "orientation_on_derived": "bool",
    **{k: "float" for k in _WEIGHT_KEYS},
}
_DATA_KINDS = {"kind": "str", "path": "str", "reflectivity": "float", "n_views": "int", "n_test": "int",
               "resolution": "int", "seed": "int", "background": "str", "downscale": "int", "supersample": "int"}
_RUN_KINDS = {"out": "str", "checkpoint_every": "int", "render_test": "bool", "dump_float": "bool",
              "threads": "int", "eval_split": "str"}

SECTIONS = {
    "data": tuple(_DATA_KINDS),
    "train": _TRAIN_KEYS,
    "model": _MODEL_KEYS,
    "loss": _WEIGHT_KEYS + _LOSS_FLAGS,
    "coarse_loss": _WEIGHT_KEYS,
    "run": tuple(_RUN_KINDS),
}


def _fmt(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("dims", "ints"):
        return ", ".join(str(int(v)) for v in value)
    if kind == "pgs":
        if value is None:
            return "auto"
        return "; ".join(f"{it}: {'x'.join(str(d) for d in dims)}" for it, dims in value)
    if kind == "float":
        return repr(float(value))
    if kind == "optfloat":
        return "none" if value is None else repr(float(value))
    return str(value)


def _parse_value(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "optfloat":
        return None if text.lower() in ("", "none") else float(text)
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if kind == "ints":
        return tuple(int(v) for v in re.split(r"[,\s]+", text) if v)
    if kind == "dims":
        vals = tuple(int(v) for v in re.split(r"[,x\s]+", text) if v)
        if len(vals) == 1:
            vals = vals * 3
        if len(vals) != 3:
            raise ValueError(f"expected 1 or 3 grid dimensions, got {text!r}")
        return vals
    if kind == "pgs":
        if text.lower() in ("", "auto", "none"):
            return None
        events = []
        for part in text.split(";"):
            it, dims = part.split(":")
            events.append((int(it), _parse_value("dims", dims)))
        return events
    return text


def _line_of(text: str, section: str, key: str | None = None) -> int:
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return 0


def parse(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}:{_line_of(text, section)}: unknown section [{section}]")
        for key in cp[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(f"{source}:{_line_of(text, section, key)}: unknown key {key!r} in [{section}]")

    def read(section, key, kind):
        try:
            return _parse_value(kind, cp[section][key])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{source}:{_line_of(text, section, key)}: bad value for {key!r}: {e}") from None

    data = DataConfig(**{k: read("data", k, t) for k, t in _DATA_KINDS.items() if cp.has_option("data", k)})
    run = OutputConfig(**{k: read("run", k, t) for k, t in _RUN_KINDS.items() if cp.has_option("run", k)})
    train_kw = {}
    for section, keys in (("train", _TRAIN_KEYS), ("model", _MODEL_KEYS), ("loss", _LOSS_FLAGS)):
        for k in keys:
            if cp.has_option(section, k):
                train_kw[k] = read(section, k, _KINDS[k])
    try:
        weights = LossWeights(**{k: read("loss", k, "float") for k in _WEIGHT_KEYS if cp.has_option("loss", k)})
        coarse = None
        if cp.has_section("coarse_loss"):
            coarse = LossWeights(**{k: read("coarse_loss", k, "float") for k in _WEIGHT_KEYS
                                    if cp.has_option("coarse_loss", k)})
        train = TrainConfig(weights=weights, coarse_weights=coarse, background=data.background, **train_kw)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    return RunConfig(data=data, train=train, run=run)


def dump(cfg: RunConfig) -> str:
    lines = ["[data]"]
    lines += [f"{k} = {_fmt(t, getattr(cfg.data, k))}" for k, t in _DATA_KINDS.items()]
    for section, keys in (("train", _TRAIN_KEYS), ("model", _MODEL_KEYS)):
        lines += ["", f"[{section}]"]
        lines += [f"{k} = {_fmt(_KINDS[k], getattr(cfg.train, k))}" for k in keys]
    lines += ["", "[loss]"]
    lines += [f"{k} = {_fmt('float', getattr(cfg.train.weights, k))}" for k in _WEIGHT_KEYS]
    lines += [f"{k} = {_fmt('bool', getattr(cfg.train, k))}" for k in _LOSS_FLAGS]
    if cfg.train.coarse_weights is not None:
        lines += ["", "[coarse_loss]"]
        lines += [f"{k} = {_fmt('float', getattr(cfg.train.coarse_weights, k))}" for k in _WEIGHT_KEYS]
    lines += ["", "[run]"]
    lines += [f"{k} = {_fmt(t, getattr(cfg.run, k))}" for k, t in _RUN_KINDS.items()]
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **train_changes) -> RunConfig:
    """Copy with TrainConfig fields replaced (used by CLI ablation flags)."""
    return replace(cfg, train=replace(cfg.train, **train_changes))
