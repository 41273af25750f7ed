"""Adam with per-group learning rates, exponential decay and resettable moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import adam_kernel


@dataclass
class ParamGroup:
    name: str
    params: list[np.ndarray]
    lr: float
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate for {self.name!r} must be positive")
        if not self.m:
            self.reset()

    def reset(self, params: list[np.ndarray] | None = None) -> None:
        """Zero the moments (and swap in new parameter arrays, e.g. after a grid resize)."""
        if params is not None:
            self.params = params
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0


def adam_step(group: ParamGroup, grads, t: int | None = None, beta1: float = 0.9,
              beta2: float = 0.99, eps: float = 1e-8, lr: float | None = None) -> None:
    """One bias-corrected Adam update, in place.  ``t`` defaults to the group's own counter + 1."""
    if t is None:
        t = group.t + 1
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    lr = group.lr if lr is None else lr
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter group {group.name!r}")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    step = lr / bc1
    for p, g, m, v in zip(group.params, grads, group.m, group.v):
        if not p.flags.c_contiguous:
            raise ValueError(f"parameters in group {group.name!r} must be C-contiguous for in-place updates")
        g = np.ascontiguousarray(g, dtype=p.dtype)
        adam_kernel(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1), step, beta1, beta2, bc2, eps)
    group.t = t


def lr_schedule(base_lr: float, step: int, total_steps: int, decay_factor: float) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * decay_factor ** (step / total_steps)


@dataclass
class Adam:
    groups: dict[str, ParamGroup] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8

    def add(self, group: ParamGroup) -> None:
        self.groups[group.name] = group

    def step(self, grads: dict[str, list[np.ndarray]], lr_scale: float = 1.0) -> None:
        for name, g in grads.items():
            group = self.groups[name]
            adam_step(group, g, beta1=self.beta1, beta2=self.beta2, eps=self.eps, lr=group.lr * lr_scale)
