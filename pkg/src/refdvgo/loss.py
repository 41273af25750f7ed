"""Training losses and regularizers with their gradients.

Per-sample terms take flat sample arrays plus ``ray_index`` and average over
``n_rays``.  Compositing weights are constants in the per-point and normal terms;
derived normals are a fixed target in the predicted-normal penalty.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

ENTROPY_EPS = 1e-6


@dataclass
class LossWeights:
    w_ph: float = 1.0
    w_pp: float = 0.01
    w_bg: float = 0.001
    w_p: float = 3e-4
    w_o: float = 0.01
    w_tv: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")
        if self.w_ph <= 0:
            raise ValueError("w_ph must be positive")


TERMS = ("photometric", "per_point", "background", "normal", "orientation", "tv")
_WEIGHT_OF = dict(zip(TERMS, ("w_ph", "w_pp", "w_bg", "w_p", "w_o", "w_tv")))


@dataclass
class LossBreakdown:
    photometric: float = 0.0
    per_point: float = 0.0
    background: float = 0.0
    normal: float = 0.0
    orientation: float = 0.0
    tv: float = 0.0
    total: float = 0.0

    def as_row(self, iteration: int) -> list:
        return [iteration] + [getattr(self, t) for t in TERMS] + [self.total]

    @staticmethod
    def header() -> list[str]:
        return ["iteration", *TERMS, "total"]


def photometric(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.square(pred - gt, dtype=np.float64)))


def photometric_grad(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(pred, dtype=np.float64) - gt) / np.size(pred)


def per_point_rgb(weights, colors, ray_index, gt, n_rays: int) -> float:
    diff = np.asarray(colors, dtype=np.float64) - np.asarray(gt)[ray_index]
    return float(np.sum(weights * np.sum(diff * diff, axis=-1)) / n_rays)


def per_point_rgb_grad(weights, colors, ray_index, gt, n_rays: int) -> np.ndarray:
    diff = np.asarray(colors, dtype=np.float64) - np.asarray(gt)[ray_index]
    return 2.0 * np.asarray(weights)[:, None] * diff / n_rays


def _clamped(t_final):
    return np.clip(np.asarray(t_final, dtype=np.float64), ENTROPY_EPS, 1.0 - ENTROPY_EPS)


def background_entropy(t_final) -> float:
    t = _clamped(t_final)
    return float(np.mean(-(t * np.log(t) + (1 - t) * np.log(1 - t))))


def background_entropy_grad(t_final) -> np.ndarray:
    raw = np.asarray(t_final, dtype=np.float64)
    t = _clamped(raw)
    g = (np.log(1 - t) - np.log(t)) / t.size
    return np.where((raw > ENTROPY_EPS) & (raw < 1 - ENTROPY_EPS), g, 0.0)


def normal_penalty(weights, derived, predicted, valid, n_rays: int) -> float:
    d = np.asarray(derived, dtype=np.float64) - predicted
    per = np.where(valid, np.sum(d * d, axis=-1), 0.0)
    return float(np.sum(weights * per) / n_rays)


def normal_penalty_grad(weights, derived, predicted, valid, n_rays: int):
    """Gradient w.r.t. the predicted normals (derived normals are the target)."""
    d = np.asarray(predicted, dtype=np.float64) - derived
    return np.where(valid[:, None], 2.0 * np.asarray(weights)[:, None] * d / n_rays, 0.0)


def orientation_penalty(weights, normals, view_dirs, valid, n_rays: int) -> float:
    dot = np.sum(np.asarray(normals, dtype=np.float64) * view_dirs, axis=-1)
    per = np.where(valid, np.maximum(dot, 0.0) ** 2, 0.0)
    return float(np.sum(weights * per) / n_rays)


def orientation_penalty_grad(weights, normals, view_dirs, valid, n_rays: int):
    dot = np.sum(np.asarray(normals, dtype=np.float64) * view_dirs, axis=-1)
    g = np.where(valid, 2.0 * np.maximum(dot, 0.0) * np.asarray(weights), 0.0) / n_rays
    return g[:, None] * view_dirs


def total_loss(terms: dict[str, float], weights: LossWeights, tv_terms=()) -> LossBreakdown:
    """Weighted sum of the per-term values; ``tv_terms`` are per-grid TV values summed under ``w_tv``."""
    values = dict(terms)
    if tv_terms is not None and len(tv_terms):
        values["tv"] = values.get("tv", 0.0) + float(np.sum(tv_terms))
    out = LossBreakdown()
    total = 0.0
    for name in TERMS:
        v = float(values.get(name, 0.0))
        if not np.isfinite(v):
            raise FloatingPointError(f"loss term {name!r} is not finite ({v})")
        setattr(out, name, v)
        total += getattr(weights, _WEIGHT_OF[name]) * v
    out.total = total
    return out


class LossLog:
    """CSV writer for per-interval loss breakdowns."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["stage", *LossBreakdown.header(), "psnr"])

    def write(self, stage: str, iteration: int, breakdown: LossBreakdown, psnr: float) -> None:
        self._writer.writerow([stage, *breakdown.as_row(iteration), psnr])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def breakdown_dict(b: LossBreakdown) -> dict:
    return asdict(b)
