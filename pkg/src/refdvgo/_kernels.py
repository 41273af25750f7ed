"""Compiled inner loops for the hot path (grid gather/scatter, TV, Adam, ray marching, compositing).

All kernels are single-threaded and visit elements in a fixed order, so results are
bit-reproducible across runs.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def trilerp_coeffs_kernel(points, bmin, scale, dims, index, weight, frac, inside):
    nx, ny, nz = dims[0], dims[1], dims[2]
    sx, sy = ny * nz, nz
    for n in range(points.shape[0]):
        u0 = (points[n, 0] - bmin[0]) * scale[0]
        u1 = (points[n, 1] - bmin[1]) * scale[1]
        u2 = (points[n, 2] - bmin[2]) * scale[2]
        ok = (u0 >= 0) and (u0 <= nx - 1) and (u1 >= 0) and (u1 <= ny - 1) and (u2 >= 0) and (u2 <= nz - 1)
        i = min(max(int(np.floor(u0)), 0), nx - 2)
        j = min(max(int(np.floor(u1)), 0), ny - 2)
        k = min(max(int(np.floor(u2)), 0), nz - 2)
        fx = min(max(u0 - i, 0.0), 1.0)
        fy = min(max(u1 - j, 0.0), 1.0)
        fz = min(max(u2 - k, 0.0), 1.0)
        frac[n, 0] = fx
        frac[n, 1] = fy
        frac[n, 2] = fz
        inside[n] = ok
        base = i * sx + j * sy + k
        for c in range(8):
            bx = (c >> 2) & 1
            by = (c >> 1) & 1
            bz = c & 1
            index[n, c] = base + bx * sx + by * sy + bz
            if ok:
                wx = fx if bx else 1.0 - fx
                wy = fy if by else 1.0 - fy
                wz = fz if bz else 1.0 - fz
                weight[n, c] = wx * wy * wz
            else:
                weight[n, c] = 0.0


@njit(cache=True)
def gather_kernel(flat, index, weight, out):
    n_ch = flat.shape[1]
    for n in range(index.shape[0]):
        for ch in range(n_ch):
            out[n, ch] = 0.0
        for c in range(8):
            w = weight[n, c]
            if w != 0.0:
                row = index[n, c]
                for ch in range(n_ch):
                    out[n, ch] += w * flat[row, ch]


@njit(cache=True)
def scatter_kernel(grad_flat, index, weight, upstream):
    n_ch = grad_flat.shape[1]
    for n in range(index.shape[0]):
        for c in range(8):
            w = weight[n, c]
            if w != 0.0:
                row = index[n, c]
                for ch in range(n_ch):
                    grad_flat[row, ch] += w * upstream[n, ch]


@njit(cache=True)
def tv_kernel(data, scale, grad, with_grad):
    nx, ny, nz, nc = data.shape
    total = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for ch in range(nc):
                    v = data[i, j, k, ch]
                    if i + 1 < nx:
                        d = data[i + 1, j, k, ch] - v
                        total += np.float64(d) * d
                        if with_grad:
                            grad[i + 1, j, k, ch] += scale * d
                            grad[i, j, k, ch] -= scale * d
                    if j + 1 < ny:
                        d = data[i, j + 1, k, ch] - v
                        total += np.float64(d) * d
                        if with_grad:
                            grad[i, j + 1, k, ch] += scale * d
                            grad[i, j, k, ch] -= scale * d
                    if k + 1 < nz:
                        d = data[i, j, k + 1, ch] - v
                        total += np.float64(d) * d
                        if with_grad:
                            grad[i, j, k + 1, ch] += scale * d
                            grad[i, j, k, ch] -= scale * d
    return total


@njit(cache=True)
def adam_kernel(p, g, m, v, step, beta1, beta2, bc2, eps):
    for i in range(p.shape[0]):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (np.sqrt(vi / bc2) + eps)


@njit(cache=True)
def sample_kernel(origins, dirs, t0, t1, counts, step, occupied, mmin, mscale, use_mask,
                  out_ray, out_t, out_delta, out_pts):
    mx, my, mz = occupied.shape
    n = 0
    for r in range(origins.shape[0]):
        cnt = counts[r]
        for k in range(cnt):
            t = t0[r] + k * step
            px = origins[r, 0] + t * dirs[r, 0]
            py = origins[r, 1] + t * dirs[r, 1]
            pz = origins[r, 2] + t * dirs[r, 2]
            if use_mask:
                ux = (px - mmin[0]) * mscale[0]
                uy = (py - mmin[1]) * mscale[1]
                uz = (pz - mmin[2]) * mscale[2]
                # tolerance absorbs rounding of box entry/exit points
                if ux < -1e-9 or ux > mx + 1e-9 or uy < -1e-9 or uy > my + 1e-9 or uz < -1e-9 or uz > mz + 1e-9:
                    continue
                ix = max(min(int(np.floor(ux)), mx - 1), 0)
                iy = max(min(int(np.floor(uy)), my - 1), 0)
                iz = max(min(int(np.floor(uz)), mz - 1), 0)
                if not occupied[ix, iy, iz]:
                    continue
            out_ray[n] = r
            out_t[n] = t
            out_delta[n] = t1[r] - t if k == cnt - 1 else step
            out_pts[n, 0] = px
            out_pts[n, 1] = py
            out_pts[n, 2] = pz
            n += 1
    return n


@njit(cache=True)
def composite_kernel(x, colors, offsets, bg, t, has_t, trans, trans_after, weights, t_final, acc, rgb, depth):
    for r in range(offsets.shape[0] - 1):
        cum = 0.0
        a = 0.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        dsum = 0.0
        for i in range(offsets[r], offsets[r + 1]):
            trans[i] = np.exp(-cum)
            w = trans[i] * -np.expm1(-x[i])
            cum += x[i]
            trans_after[i] = np.exp(-cum)
            weights[i] = w
            a += w
            c0 += w * colors[i, 0]
            c1 += w * colors[i, 1]
            c2 += w * colors[i, 2]
            if has_t:
                dsum += w * t[i]
        tf = np.exp(-cum)
        t_final[r] = tf
        acc[r] = a
        rgb[r, 0] = c0 + tf * bg[0]
        rgb[r, 1] = c1 + tf * bg[1]
        rgb[r, 2] = c2 + tf * bg[2]
        depth[r] = dsum / max(a, 1e-10) if has_t else 0.0


@njit(cache=True)
def composite_backward_kernel(g, weights, trans_after, t_final, gt, offsets, grad_x):
    for r in range(offsets.shape[0] - 1):
        suffix = 0.0
        tail = gt[r] * t_final[r]
        for i in range(offsets[r + 1] - 1, offsets[r] - 1, -1):
            grad_x[i] = g[i] * trans_after[i] - suffix - tail
            suffix += g[i] * weights[i]


@njit(cache=True)
def sh_kernel(d, ms, norms, qc, dqc, with_jac, out, jac):
    """Real SH ``norm * T_m(x, y) * Q(z)`` per term; polynomial coefficients ascending."""
    n_terms = ms.shape[0]
    max_m = 0
    for j in range(n_terms):
        max_m = max(max_m, abs(ms[j]))
    re = np.empty(max_m + 1)
    im = np.empty(max_m + 1)
    n_q = qc.shape[1]
    for i in range(d.shape[0]):
        x, y, z = d[i, 0], d[i, 1], d[i, 2]
        re[0], im[0] = 1.0, 0.0
        for k in range(1, max_m + 1):
            re[k] = re[k - 1] * x - im[k - 1] * y
            im[k] = re[k - 1] * y + im[k - 1] * x
        for j in range(n_terms):
            q = 0.0
            dq = 0.0
            for c in range(n_q - 1, -1, -1):
                q = q * z + qc[j, c]
                dq = dq * z + dqc[j, c]
            m = ms[j]
            am = abs(m)
            if m > 0:
                t = re[am]
                tx, ty = am * re[am - 1], -am * im[am - 1]
            elif m < 0:
                t = im[am]
                tx, ty = am * im[am - 1], am * re[am - 1]
            else:
                t, tx, ty = 1.0, 0.0, 0.0
            nm = norms[j]
            out[i, j] = nm * t * q
            if with_jac:
                jac[i, j, 0] = nm * tx * q
                jac[i, j, 1] = nm * ty * q
                jac[i, j, 2] = nm * t * dq
