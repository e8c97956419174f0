"""Compiled rasterizer kernels (numba, float64).

Pipeline: ``preprocess`` projects every Gaussian, ``bin_tiles`` builds depth-sorted
per-tile lists, ``raster_forward`` composites each pixel front to back and
``raster_backward`` writes one gradient slot per (tile, Gaussian) pair. Slots are
summed per Gaussian in pair order by ``reduce_pairs`` so results never depend on
the thread count.

Per-pair gradient slot layout: d_u, d_v, d_conic_xx, d_conic_xy, d_conic_yy,
d_opacity, d_r, d_g, d_b.
"""

from __future__ import annotations

import math
import os

import numba as nb
import numpy as np

# some environments ship a TBB too old for numba
if "NUMBA_THREADING_LAYER" not in os.environ:
    nb.config.THREADING_LAYER = "omp"

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
N_SLOT = 9


@nb.njit(cache=True, inline="always")
def _rotmat(qw, qx, qy, qz, r):
    r[0, 0] = 1 - 2 * (qy * qy + qz * qz)
    r[0, 1] = 2 * (qx * qy - qw * qz)
    r[0, 2] = 2 * (qx * qz + qw * qy)
    r[1, 0] = 2 * (qx * qy + qw * qz)
    r[1, 1] = 1 - 2 * (qx * qx + qz * qz)
    r[1, 2] = 2 * (qy * qz - qw * qx)
    r[2, 0] = 2 * (qx * qz - qw * qy)
    r[2, 1] = 2 * (qy * qz + qw * qx)
    r[2, 2] = 1 - 2 * (qx * qx + qy * qy)


@nb.njit(cache=True, parallel=True)
def preprocess(means, scales, quats, opacity, sh, view_rot, view_t, campos,
               fx, fy, cx, cy, width, height, blur, near, alpha_min,
               uv, depth, cov2d, conic, color, unclamped, box, visible):
    n = means.shape[0]
    for i in nb.prange(n):
        visible[i] = False
        px = view_rot[0, 0] * means[i, 0] + view_rot[0, 1] * means[i, 1] + view_rot[0, 2] * means[i, 2] + view_t[0]
        py = view_rot[1, 0] * means[i, 0] + view_rot[1, 1] * means[i, 1] + view_rot[1, 2] * means[i, 2] + view_t[1]
        pz = view_rot[2, 0] * means[i, 0] + view_rot[2, 1] * means[i, 1] + view_rot[2, 2] * means[i, 2] + view_t[2]
        depth[i] = pz
        if pz <= near:
            continue
        op = opacity[i]
        if alpha_min > 0.0 and op < alpha_min:
            continue

        qn = math.sqrt(quats[i, 0] ** 2 + quats[i, 1] ** 2 + quats[i, 2] ** 2 + quats[i, 3] ** 2)
        r = np.empty((3, 3))
        _rotmat(quats[i, 0] / qn, quats[i, 1] / qn, quats[i, 2] / qn, quats[i, 3] / qn, r)
        # M = R diag(s); Sigma = M M^T
        m = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                m[a, b] = r[a, b] * scales[i, b]
        sig = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                sig[a, b] = m[a, 0] * m[b, 0] + m[a, 1] * m[b, 1] + m[a, 2] * m[b, 2]

        inv_z = 1.0 / pz
        j00 = fx * inv_z
        j02 = -fx * px * inv_z * inv_z
        j11 = fy * inv_z
        j12 = -fy * py * inv_z * inv_z
        # T = J W (2x3)
        t = np.empty((2, 3))
        for b in range(3):
            t[0, b] = j00 * view_rot[0, b] + j02 * view_rot[2, b]
            t[1, b] = j11 * view_rot[1, b] + j12 * view_rot[2, b]
        ts = np.zeros((2, 3))
        for a in range(2):
            for b in range(3):
                ts[a, b] = t[a, 0] * sig[0, b] + t[a, 1] * sig[1, b] + t[a, 2] * sig[2, b]
        c00 = ts[0, 0] * t[0, 0] + ts[0, 1] * t[0, 1] + ts[0, 2] * t[0, 2] + blur
        c01 = ts[0, 0] * t[1, 0] + ts[0, 1] * t[1, 1] + ts[0, 2] * t[1, 2]
        c11 = ts[1, 0] * t[1, 0] + ts[1, 1] * t[1, 1] + ts[1, 2] * t[1, 2] + blur
        det = c00 * c11 - c01 * c01
        if det <= 0.0:
            continue
        cov2d[i, 0] = c00
        cov2d[i, 1] = c01
        cov2d[i, 2] = c11
        conic[i, 0] = c11 / det
        conic[i, 1] = -c01 / det
        conic[i, 2] = c00 / det

        u = fx * px * inv_z + cx
        v = fy * py * inv_z + cy
        uv[i, 0] = u
        uv[i, 1] = v

        if alpha_min > 0.0:
            d2 = 2.0 * math.log(op / alpha_min)
            rx = math.sqrt(d2 * c00)
            ry = math.sqrt(d2 * c11)
            x0 = max(0, int(math.floor(u - rx)))
            x1 = min(width - 1, int(math.ceil(u + rx)))
            y0 = max(0, int(math.floor(v - ry)))
            y1 = min(height - 1, int(math.ceil(v + ry)))
            if x0 > x1 or y0 > y1:
                continue
        else:
            x0, x1, y0, y1 = 0, width - 1, 0, height - 1
        box[i, 0] = x0
        box[i, 1] = x1
        box[i, 2] = y0
        box[i, 3] = y1

        dxw = means[i, 0] - campos[0]
        dyw = means[i, 1] - campos[1]
        dzw = means[i, 2] - campos[2]
        dn = math.sqrt(dxw * dxw + dyw * dyw + dzw * dzw)
        dxw /= dn
        dyw /= dn
        dzw /= dn
        for ch in range(3):
            raw = (0.5 + SH_C0 * sh[i, 0, ch]
                   + SH_C1 * (-sh[i, 1, ch] * dyw + sh[i, 2, ch] * dzw - sh[i, 3, ch] * dxw))
            if raw < 0.0:
                color[i, ch] = 0.0
                unclamped[i, ch] = False
            elif raw > 1.0:
                color[i, ch] = 1.0
                unclamped[i, ch] = False
            else:
                color[i, ch] = raw
                unclamped[i, ch] = True
        visible[i] = True


@nb.njit(cache=True)
def bin_tiles(order, box, tile, tiles_x, tiles_y):
    n_tiles = tiles_x * tiles_y
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        for ty in range(box[i, 2] // tile, box[i, 3] // tile + 1):
            for tx in range(box[i, 0] // tile, box[i, 1] // tile + 1):
                counts[ty * tiles_x + tx + 1] += 1
    for t in range(n_tiles):
        counts[t + 1] += counts[t]
    fill = counts[:-1].copy()
    pairs = np.empty(counts[n_tiles], dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        for ty in range(box[i, 2] // tile, box[i, 3] // tile + 1):
            for tx in range(box[i, 0] // tile, box[i, 1] // tile + 1):
                t = ty * tiles_x + tx
                pairs[fill[t]] = i
                fill[t] += 1
    return counts, pairs


@nb.njit(cache=True, inline="always")
def _alpha(i, px, py, uv, conic, opacity, alpha_cap):
    dx = px - uv[i, 0]
    dy = py - uv[i, 1]
    q = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
    g = math.exp(-0.5 * q)
    a = opacity[i] * g
    capped = a > alpha_cap
    if capped:
        a = alpha_cap
    return a, g, dx, dy, capped


@nb.njit(cache=True, parallel=True)
def raster_forward(tile_start, pairs, uv, conic, opacity, color, depth,
                   width, height, tile, tiles_x, alpha_cap, alpha_min,
                   out_rgb, out_trans, out_depth):
    n_tiles = tile_start.shape[0] - 1
    for t in nb.prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        s = tile_start[t]
        e = tile_start[t + 1]
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                trans = 1.0
                r = 0.0
                g = 0.0
                b = 0.0
                d = 0.0
                for k in range(s, e):
                    i = pairs[k]
                    a, _, _, _, _ = _alpha(i, px, py, uv, conic, opacity, alpha_cap)
                    if a < alpha_min:
                        continue
                    w = a * trans
                    r += w * color[i, 0]
                    g += w * color[i, 1]
                    b += w * color[i, 2]
                    d += w * depth[i]
                    trans *= 1.0 - a
                out_rgb[py, px, 0] = r
                out_rgb[py, px, 1] = g
                out_rgb[py, px, 2] = b
                out_trans[py, px] = trans
                out_depth[py, px] = d


@nb.njit(cache=True, parallel=True)
def raster_backward(tile_start, pairs, uv, conic, opacity, color,
                    width, height, tile, tiles_x, alpha_cap, alpha_min,
                    grad_rgb, pair_grad):
    n_tiles = tile_start.shape[0] - 1
    for t in nb.prange(n_tiles):
        ty = t // tiles_x
        tx = t - ty * tiles_x
        s = tile_start[t]
        e = tile_start[t + 1]
        if e == s:
            continue
        alphas = np.empty(e - s)
        trans_before = np.empty(e - s)
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                g0 = grad_rgb[py, px, 0]
                g1 = grad_rgb[py, px, 1]
                g2 = grad_rgb[py, px, 2]
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                trans = 1.0
                for k in range(s, e):
                    a, _, _, _, _ = _alpha(pairs[k], px, py, uv, conic, opacity, alpha_cap)
                    alphas[k - s] = a
                    trans_before[k - s] = trans
                    if a >= alpha_min:
                        trans *= 1.0 - a
                # colour composited behind the current Gaussian
                br = 0.0
                bg = 0.0
                bb = 0.0
                for k in range(e - 1, s - 1, -1):
                    a = alphas[k - s]
                    if a < alpha_min:
                        continue
                    i = pairs[k]
                    tb = trans_before[k - s]
                    w = a * tb
                    pair_grad[k, 6] += g0 * w
                    pair_grad[k, 7] += g1 * w
                    pair_grad[k, 8] += g2 * w
                    c0 = color[i, 0]
                    c1 = color[i, 1]
                    c2 = color[i, 2]
                    d_alpha = tb * (g0 * (c0 - br) + g1 * (c1 - bg) + g2 * (c2 - bb))
                    br = a * c0 + (1.0 - a) * br
                    bg = a * c1 + (1.0 - a) * bg
                    bb = a * c2 + (1.0 - a) * bb
                    _, gauss, dx, dy, capped = _alpha(i, px, py, uv, conic, opacity, alpha_cap)
                    if capped:
                        continue
                    pair_grad[k, 5] += d_alpha * gauss
                    d_q = -0.5 * d_alpha * opacity[i] * gauss
                    pair_grad[k, 0] += -2.0 * d_q * (conic[i, 0] * dx + conic[i, 1] * dy)
                    pair_grad[k, 1] += -2.0 * d_q * (conic[i, 1] * dx + conic[i, 2] * dy)
                    pair_grad[k, 2] += d_q * dx * dx
                    pair_grad[k, 3] += 2.0 * d_q * dx * dy
                    pair_grad[k, 4] += d_q * dy * dy


@nb.njit(cache=True)
def reduce_pairs(pairs, pair_grad, out):
    for k in range(pairs.shape[0]):
        i = pairs[k]
        for c in range(N_SLOT):
            out[i, c] += pair_grad[k, c]


@nb.njit(cache=True, parallel=True)
def gaussian_backward(means, scales, quats, opacity, sh, view_rot, view_t, campos,
                      fx, fy, blur, visible, conic, unclamped, g2d,
                      d_means, d_scales, d_quats, d_opacity, d_sh):
    n = means.shape[0]
    for i in nb.prange(n):
        if not visible[i]:
            continue
        d_opacity[i] = g2d[i, 5]

        # colour -> SH coefficients and view direction
        vx = means[i, 0] - campos[0]
        vy = means[i, 1] - campos[1]
        vz = means[i, 2] - campos[2]
        vn = math.sqrt(vx * vx + vy * vy + vz * vz)
        dx = vx / vn
        dy = vy / vn
        dz = vz / vn
        gdx = 0.0
        gdy = 0.0
        gdz = 0.0
        for ch in range(3):
            if not unclamped[i, ch]:
                continue
            gc = g2d[i, 6 + ch]
            d_sh[i, 0, ch] = SH_C0 * gc
            d_sh[i, 1, ch] = -SH_C1 * dy * gc
            d_sh[i, 2, ch] = SH_C1 * dz * gc
            d_sh[i, 3, ch] = -SH_C1 * dx * gc
            gdx += -SH_C1 * sh[i, 3, ch] * gc
            gdy += -SH_C1 * sh[i, 1, ch] * gc
            gdz += SH_C1 * sh[i, 2, ch] * gc
        proj = dx * gdx + dy * gdy + dz * gdz
        gmx = (gdx - dx * proj) / vn
        gmy = (gdy - dy * proj) / vn
        gmz = (gdz - dz * proj) / vn

        # conic -> 2D covariance: dL/dC = -A G A with G the symmetric conic gradient
        a00 = conic[i, 0]
        a01 = conic[i, 1]
        a11 = conic[i, 2]
        gq00 = g2d[i, 2]
        gq01 = 0.5 * g2d[i, 3]
        gq11 = g2d[i, 4]
        # AG
        ag00 = a00 * gq00 + a01 * gq01
        ag01 = a00 * gq01 + a01 * gq11
        ag10 = a01 * gq00 + a11 * gq01
        ag11 = a01 * gq01 + a11 * gq11
        gc00 = -(ag00 * a00 + ag01 * a01)
        gc01 = -(ag00 * a01 + ag01 * a11)
        gc11 = -(ag10 * a01 + ag11 * a11)
        gcov = np.empty((2, 2))
        gcov[0, 0] = gc00
        gcov[0, 1] = gc01
        gcov[1, 0] = gc01
        gcov[1, 1] = gc11

        px = view_rot[0, 0] * means[i, 0] + view_rot[0, 1] * means[i, 1] + view_rot[0, 2] * means[i, 2] + view_t[0]
        py = view_rot[1, 0] * means[i, 0] + view_rot[1, 1] * means[i, 1] + view_rot[1, 2] * means[i, 2] + view_t[1]
        pz = view_rot[2, 0] * means[i, 0] + view_rot[2, 1] * means[i, 1] + view_rot[2, 2] * means[i, 2] + view_t[2]
        inv_z = 1.0 / pz
        j00 = fx * inv_z
        j02 = -fx * px * inv_z * inv_z
        j11 = fy * inv_z
        j12 = -fy * py * inv_z * inv_z
        t = np.empty((2, 3))
        for b in range(3):
            t[0, b] = j00 * view_rot[0, b] + j02 * view_rot[2, b]
            t[1, b] = j11 * view_rot[1, b] + j12 * view_rot[2, b]

        qn = math.sqrt(quats[i, 0] ** 2 + quats[i, 1] ** 2 + quats[i, 2] ** 2 + quats[i, 3] ** 2)
        qw = quats[i, 0] / qn
        qx = quats[i, 1] / qn
        qy = quats[i, 2] / qn
        qz = quats[i, 3] / qn
        r = np.empty((3, 3))
        _rotmat(qw, qx, qy, qz, r)
        m = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                m[a, b] = r[a, b] * scales[i, b]
        sig = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                sig[a, b] = m[a, 0] * m[b, 0] + m[a, 1] * m[b, 1] + m[a, 2] * m[b, 2]

        # Sigma' = T Sigma T^T: dSigma = T^T G T, dT = 2 G T Sigma
        gt = np.empty((2, 3))
        for a in range(2):
            for b in range(3):
                gt[a, b] = gcov[a, 0] * t[0, b] + gcov[a, 1] * t[1, b]
        dsig = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                dsig[a, b] = t[0, a] * gt[0, b] + t[1, a] * gt[1, b]
        d_t = np.empty((2, 3))
        for a in range(2):
            for b in range(3):
                d_t[a, b] = 2.0 * (gt[a, 0] * sig[0, b] + gt[a, 1] * sig[1, b] + gt[a, 2] * sig[2, b])
        # T = J W -> dJ = dT W^T (only the non-zero Jacobian entries matter)
        dj00 = d_t[0, 0] * view_rot[0, 0] + d_t[0, 1] * view_rot[0, 1] + d_t[0, 2] * view_rot[0, 2]
        dj02 = d_t[0, 0] * view_rot[2, 0] + d_t[0, 1] * view_rot[2, 1] + d_t[0, 2] * view_rot[2, 2]
        dj11 = d_t[1, 0] * view_rot[1, 0] + d_t[1, 1] * view_rot[1, 1] + d_t[1, 2] * view_rot[1, 2]
        dj12 = d_t[1, 0] * view_rot[2, 0] + d_t[1, 1] * view_rot[2, 1] + d_t[1, 2] * view_rot[2, 2]

        iz2 = inv_z * inv_z
        gpx = -fx * iz2 * dj02
        gpy = -fy * iz2 * dj12
        gpz = (-fx * iz2 * dj00 + 2.0 * fx * px * iz2 * inv_z * dj02
               - fy * iz2 * dj11 + 2.0 * fy * py * iz2 * inv_z * dj12)
        gu = g2d[i, 0]
        gv = g2d[i, 1]
        gpx += gu * fx * inv_z
        gpy += gv * fy * inv_z
        gpz += -gu * fx * px * iz2 - gv * fy * py * iz2

        for a in range(3):
            d_means[i, a] = view_rot[0, a] * gpx + view_rot[1, a] * gpy + view_rot[2, a] * gpz
        d_means[i, 0] += gmx
        d_means[i, 1] += gmy
        d_means[i, 2] += gmz

        # Sigma = M M^T: dM = 2 dSigma M
        dm = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                dm[a, b] = 2.0 * (dsig[a, 0] * m[0, b] + dsig[a, 1] * m[1, b] + dsig[a, 2] * m[2, b])
        for b in range(3):
            d_scales[i, b] = dm[0, b] * r[0, b] + dm[1, b] * r[1, b] + dm[2, b] * r[2, b]
        dr = np.empty((3, 3))
        for a in range(3):
            for b in range(3):
                dr[a, b] = dm[a, b] * scales[i, b]
        gw = 2.0 * (-qz * dr[0, 1] + qy * dr[0, 2] + qz * dr[1, 0] - qx * dr[1, 2] - qy * dr[2, 0] + qx * dr[2, 1])
        gx = 2.0 * (qy * dr[0, 1] + qz * dr[0, 2] + qy * dr[1, 0] - 2 * qx * dr[1, 1] - qw * dr[1, 2]
                    + qz * dr[2, 0] + qw * dr[2, 1] - 2 * qx * dr[2, 2])
        gy = 2.0 * (-2 * qy * dr[0, 0] + qx * dr[0, 1] + qw * dr[0, 2] + qx * dr[1, 0] + qz * dr[1, 2]
                    - qw * dr[2, 0] + qz * dr[2, 1] - 2 * qy * dr[2, 2])
        gz = 2.0 * (-2 * qz * dr[0, 0] - qw * dr[0, 1] + qx * dr[0, 2] + qw * dr[1, 0] - 2 * qz * dr[1, 1]
                    + qy * dr[1, 2] + qx * dr[2, 0] + qy * dr[2, 1])
        # through q / |q|: tangent-space projection
        dot = qw * gw + qx * gx + qy * gy + qz * gz
        d_quats[i, 0] = (gw - qw * dot) / qn
        d_quats[i, 1] = (gx - qx * dot) / qn
        d_quats[i, 2] = (gy - qy * dot) / qn
        d_quats[i, 3] = (gz - qz * dot) / qn
