"""Reflection directions, real spherical harmonics and the integrated directional encoding.

Real SH are evaluated as polynomials in the unit direction ``(x, y, z)``::

    Y_lm = N_lm * T_m(x, y) * Q_l^|m|(z)

with ``T_m = Re((x + iy)^m)`` for ``m > 0``, ``Im((x + iy)^|m|)`` for ``m < 0`` and
``1`` for ``m = 0``; ``Q_l^m`` is the m-th derivative of the Legendre polynomial
``P_l``.  No Condon-Shortley phase.  Features are laid out degree by degree
(ascending), and within a degree ``m = -l .. l``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial, pi, sqrt

import numpy as np
from numpy.polynomial import legendre, polynomial

from ._kernels import sh_kernel

ROUGHNESS_MIN = 1e-3
ROUGHNESS_MAX = 1e3


@dataclass(frozen=True)
class DirectionalEncodingConfig:
    sh_levels: tuple[int, ...] = (1, 2, 4)

    def __post_init__(self):
        levels = tuple(int(v) for v in self.sh_levels)
        if not levels or any(v < 1 for v in levels) or list(levels) != sorted(set(levels)):
            raise ValueError(f"sh_levels must be ascending distinct degrees >= 1, got {self.sh_levels}")
        object.__setattr__(self, "sh_levels", levels)

    @property
    def output_dim(self) -> int:
        return basis_size(self.sh_levels)


def basis_size(levels) -> int:
    return sum(2 * l + 1 for l in levels)


def _normalize(v: np.ndarray, what: str):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError(f"zero-length {what} (degenerate shading point)")
    return v / norm, norm


def reflect(omega_o: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Mirror the outgoing direction about the normal: ``2 (w.n) n - w``."""
    w, _ = _normalize(np.asarray(omega_o), "outgoing direction")
    nn, _ = _normalize(np.asarray(n), "normal")
    r = 2.0 * np.sum(w * nn, axis=-1, keepdims=True) * nn - w
    r, _ = _normalize(r, "reflection")
    return r


def reflect_backward(omega_o: np.ndarray, n: np.ndarray, grad_r: np.ndarray):
    """Gradients of ``reflect`` w.r.t. its (unnormalized) inputs."""
    w, wn = _normalize(np.asarray(omega_o), "outgoing direction")
    nn, nnorm = _normalize(np.asarray(n), "normal")
    dot = np.sum(w * nn, axis=-1, keepdims=True)
    r = 2.0 * dot * nn - w
    rhat, rnorm = _normalize(r, "reflection")
    g = (grad_r - np.sum(grad_r * rhat, axis=-1, keepdims=True) * rhat) / rnorm
    gn_dot = np.sum(g * nn, axis=-1, keepdims=True)
    grad_nhat = 2.0 * gn_dot * w + 2.0 * dot * g
    grad_what = 2.0 * gn_dot * nn - g
    grad_n = (grad_nhat - np.sum(grad_nhat * nn, axis=-1, keepdims=True) * nn) / nnorm
    grad_w = (grad_what - np.sum(grad_what * w, axis=-1, keepdims=True) * w) / wn
    return grad_w, grad_n


@lru_cache(maxsize=None)
def _sh_terms(levels: tuple[int, ...]):
    terms = []
    for l in levels:
        for m in range(-l, l + 1):
            am = abs(m)
            norm = sqrt((2 * l + 1) / (4 * pi) * factorial(l - am) / factorial(l + am))
            if m != 0:
                norm *= sqrt(2.0)
            q = legendre.leg2poly(legendre.Legendre.basis(l).deriv(am).coef) if am <= l else np.zeros(1)
            dq = polynomial.polyder(q) if len(q) > 1 else np.zeros(1)
            terms.append((l, m, norm, q, dq))
    return terms


def sh_basis(d: np.ndarray, levels=(1, 2, 4)) -> np.ndarray:
    """Real SH of the (unit) directions ``d``: (..., 3) -> (..., basis_size(levels))."""
    values, _ = _sh_eval(d, tuple(levels), jacobian=False)
    return values


def sh_basis_jacobian(d: np.ndarray, levels=(1, 2, 4)):
    """Values and ambient-space Jacobian (..., D, 3) of the SH polynomials at ``d``."""
    return _sh_eval(d, tuple(levels), jacobian=True)


@lru_cache(maxsize=None)
def _sh_tables(levels: tuple[int, ...]):
    terms = _sh_terms(levels)
    width = max(levels) + 1
    ms = np.array([t[1] for t in terms], dtype=np.int64)
    norms = np.array([t[2] for t in terms])
    qc = np.zeros((len(terms), width))
    dqc = np.zeros((len(terms), width))
    for j, (_, _, _, q, dq) in enumerate(terms):
        qc[j, : len(q)] = q
        dqc[j, : len(dq)] = dq
    return ms, norms, qc, dqc


def _sh_eval(d, levels, jacobian):
    d = np.asarray(d)
    lead = d.shape[:-1]
    flat = np.ascontiguousarray(d.reshape(-1, 3), dtype=np.float64)
    ms, norms, qc, dqc = _sh_tables(levels)
    n = flat.shape[0]
    out = np.empty((n, ms.size))
    jac = np.empty((n, ms.size, 3)) if jacobian else np.empty((0, 0, 3))
    sh_kernel(flat, ms, norms, qc, dqc, jacobian, out, jac)
    dtype = d.dtype if d.dtype in (np.float32, np.float64) else np.float64
    out = out.astype(dtype, copy=False).reshape(*lead, ms.size)
    if not jacobian:
        return out, None
    return out, jac.astype(dtype, copy=False).reshape(*lead, ms.size, 3)


def attenuation(level: int, kappa) -> np.ndarray:
    """Degree-wise IDE attenuation ``exp(-l(l+1) / (2 kappa))``; zero at ``kappa = 0`` for l >= 1."""
    kappa = np.asarray(kappa, dtype=float)
    if level == 0:
        return np.ones_like(kappa)
    with np.errstate(divide="ignore"):
        return np.where(kappa > 0, np.exp(-level * (level + 1) / (2.0 * np.where(kappa > 0, kappa, 1.0))), 0.0)


def _level_index(levels):
    return np.concatenate([np.full(2 * l + 1, l) for l in levels])


def ide(omega_r: np.ndarray, kappa, levels=(1, 2, 4)) -> np.ndarray:
    """Integrated directional encoding: SH of ``omega_r`` with roughness attenuation per degree."""
    kappa = np.asarray(kappa, dtype=float)
    basis = sh_basis(omega_r, levels)
    return basis * _ide_attenuation(kappa, levels).astype(basis.dtype)


def _ide_attenuation(kappa, levels):
    if np.any(np.isnan(kappa)) or np.any(kappa < 0):
        raise ValueError("concentration kappa must be >= 0")
    ell = _level_index(levels)
    k = kappa[..., None]
    safe = np.where(k > 0, k, 1.0)
    return np.where(k > 0, np.exp(-(ell * (ell + 1) / 2.0) / safe), 0.0)


def ide_backward(omega_r: np.ndarray, kappa, grad_out: np.ndarray, levels=(1, 2, 4)):
    """Gradients of ``ide`` w.r.t. ``omega_r`` (ambient polynomial gradient) and ``kappa``."""
    kappa = np.asarray(kappa, dtype=float)
    ell = _level_index(levels)
    basis, jac = sh_basis_jacobian(omega_r, levels)
    att = _ide_attenuation(kappa, levels)
    grad_dir = np.einsum("...d,...dk->...k", grad_out * att, jac)
    k = kappa[..., None]
    safe = np.where(k > 0, k, 1.0)
    datt = np.where(k > 0, att * (ell * (ell + 1) / 2.0) / safe**2, 0.0)
    grad_kappa = np.sum(grad_out * basis * datt, axis=-1)
    return grad_dir, grad_kappa


def ide_from_roughness(omega_r: np.ndarray, rough: np.ndarray, levels=(1, 2, 4)):
    """IDE with ``kappa = 1 / rough``, plus the intermediates ``ide_from_roughness_backward`` needs."""
    ell = _level_index(levels)
    basis, jac = sh_basis_jacobian(omega_r, levels)
    att = np.exp(-(ell * (ell + 1) / 2.0) * rough[..., None]).astype(basis.dtype)
    return basis * att, basis, jac, att, ell


def ide_from_roughness_backward(grad_feat, basis, jac, att, ell):
    """Returns gradients w.r.t. the direction (ambient) and the roughness."""
    grad_basis = grad_feat * att
    grad_dir = np.einsum("nd,ndk->nk", grad_basis, jac)
    grad_rough = np.sum(grad_feat * basis * att * (-(ell * (ell + 1) / 2.0)), axis=-1)
    return grad_dir, grad_rough


def roughness_from_raw(raw: np.ndarray, bias: float = -1.0):
    """``clip(softplus(raw + bias))`` and its derivative (zero where clipped)."""
    x = raw + bias
    rough = np.logaddexp(0.0, x)
    d = 1.0 / (1.0 + np.exp(-x))
    clipped = (rough < ROUGHNESS_MIN) | (rough > ROUGHNESS_MAX)
    rough = np.clip(rough, ROUGHNESS_MIN, ROUGHNESS_MAX)
    d = np.where(clipped, 0.0, d)
    return rough.astype(raw.dtype), d.astype(raw.dtype)
