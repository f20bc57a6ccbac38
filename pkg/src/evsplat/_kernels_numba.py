"""Numba-compiled splatting kernels.

Hot inner loops of the forward/backward renderer and the event generator.
Kept serial so gradient accumulation order is fixed and runs reproduce
bit-for-bit. The pure-numpy twin lives in _kernels_numpy; both lanes share
the contract documented there.
"""

import math

import numpy as np
from numba import njit

BACKEND_NAME = "numba"


@njit(cache=True)
def _quat_to_matrix_raw(q, R):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    w = q[0] / n
    x = q[1] / n
    y = q[2] / n
    z = q[3] / n
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True)
def project(means, log_scales, rotations, opacity_logits, Rcw, tcw,
            fx, fy, cx, cy, width, height, near, cov_floor, exact):
    """Project every Gaussian; returns per-Gaussian screen-space quantities.

    valid==0 marks culled primitives (behind the near plane, or in
    production mode with a 3-sigma ellipse falling 1.3x outside the image).
    """
    n = means.shape[0]
    valid = np.zeros(n, dtype=np.uint8)
    mean2d = np.zeros((n, 2))
    conic = np.zeros((n, 3))
    cov2d = np.zeros((n, 3))
    zs = np.zeros(n)
    opac = np.zeros(n)
    radius = np.zeros(n)
    xcs = np.zeros((n, 3))
    covc = np.zeros((n, 6))
    R = np.zeros((3, 3))
    M = np.zeros((3, 3))
    S = np.zeros((3, 3))
    for i in range(n):
        xc0 = Rcw[0, 0] * means[i, 0] + Rcw[0, 1] * means[i, 1] + Rcw[0, 2] * means[i, 2] + tcw[0]
        xc1 = Rcw[1, 0] * means[i, 0] + Rcw[1, 1] * means[i, 1] + Rcw[1, 2] * means[i, 2] + tcw[1]
        xc2 = Rcw[2, 0] * means[i, 0] + Rcw[2, 1] * means[i, 1] + Rcw[2, 2] * means[i, 2] + tcw[2]
        if xc2 <= near:
            continue
        _quat_to_matrix_raw(rotations[i], R)
        s0 = math.exp(2.0 * log_scales[i, 0])
        s1 = math.exp(2.0 * log_scales[i, 1])
        s2 = math.exp(2.0 * log_scales[i, 2])
        # world covariance R diag(s^2) R^T
        for a in range(3):
            for b in range(3):
                M[a, b] = R[a, 0] * s0 * R[b, 0] + R[a, 1] * s1 * R[b, 1] + R[a, 2] * s2 * R[b, 2]
        # camera covariance Rcw M Rcw^T
        for a in range(3):
            for b in range(3):
                S[a, b] = 0.0
                for c in range(3):
                    acc = 0.0
                    for d in range(3):
                        acc += M[c, d] * Rcw[b, d]
                    S[a, b] += Rcw[a, c] * acc
        iz = 1.0 / xc2
        iz2 = iz * iz
        j00 = fx * iz
        j02 = -fx * xc0 * iz2
        j11 = fy * iz
        j12 = -fy * xc1 * iz2
        # 2D covariance J S J^T + floor
        v00 = j00 * (S[0, 0] * j00 + S[0, 2] * j02) + j02 * (S[2, 0] * j00 + S[2, 2] * j02) + cov_floor
        v01 = j00 * (S[0, 1] * j11 + S[0, 2] * j12) + j02 * (S[2, 1] * j11 + S[2, 2] * j12)
        v11 = j11 * (S[1, 1] * j11 + S[1, 2] * j12) + j12 * (S[2, 1] * j11 + S[2, 2] * j12) + cov_floor
        det = v00 * v11 - v01 * v01
        mx = fx * xc0 * iz + cx
        my = fy * xc1 * iz + cy
        mid = 0.5 * (v00 + v11)
        lam = mid + math.sqrt(max(mid * mid - det, 0.0))
        r = 3.0 * math.sqrt(lam)
        if not exact:
            if (mx < -0.3 * width - r or mx > 1.3 * width + r
                    or my < -0.3 * height - r or my > 1.3 * height + r):
                continue
        valid[i] = 1
        mean2d[i, 0] = mx
        mean2d[i, 1] = my
        conic[i, 0] = v11 / det
        conic[i, 1] = -v01 / det
        conic[i, 2] = v00 / det
        cov2d[i, 0] = v00
        cov2d[i, 1] = v01
        cov2d[i, 2] = v11
        zs[i] = xc2
        opac[i] = 1.0 / (1.0 + math.exp(-opacity_logits[i]))
        radius[i] = r
        xcs[i, 0] = xc0
        xcs[i, 1] = xc1
        xcs[i, 2] = xc2
        covc[i, 0] = S[0, 0]
        covc[i, 1] = S[0, 1]
        covc[i, 2] = S[0, 2]
        covc[i, 3] = S[1, 1]
        covc[i, 4] = S[1, 2]
        covc[i, 5] = S[2, 2]
    return valid, mean2d, conic, cov2d, zs, opac, radius, xcs, covc


@njit(cache=True)
def _pixel_bounds(mx, my, r, width, height, exact):
    if exact:
        return 0, width - 1, 0, height - 1
    u0 = int(math.ceil(mx - r))
    u1 = int(math.floor(mx + r))
    v0 = int(math.ceil(my - r))
    v1 = int(math.floor(my + r))
    if u0 < 0:
        u0 = 0
    if v0 < 0:
        v0 = 0
    if u1 > width - 1:
        u1 = width - 1
    if v1 > height - 1:
        v1 = height - 1
    return u0, u1, v0, v1


@njit(cache=True, fastmath=True)
def build_pairs(order, mean2d, conic, radius, opac, width, height,
                sigma_max, alpha_clamp, exact):
    """Per-pixel contributor lists in depth order (CSR layout) with alphas.

    Both passes walk closed-form scanline intervals of the sigma_max ellipse
    (0.5 d^T W d <= sigma_max solved for dx given dy), so the Mahalanobis
    distance and alpha are evaluated exactly once per in-ellipse pair. The
    intervals are widened by a hair against sqrt rounding; a boundary pixel
    failing the exact sigma test keeps alpha 0, a no-op downstream. In exact
    mode every Gaussian covers every pixel.
    """
    npix = width * height
    row_diff = np.zeros(npix + 1, dtype=np.int64)
    for oi in range(order.shape[0]):
        g = order[oi]
        mx = mean2d[g, 0]
        my = mean2d[g, 1]
        r = radius[g]
        v0 = 0 if exact else max(0, int(math.ceil(my - r)))
        v1 = height - 1 if exact else min(height - 1, int(math.floor(my + r)))
        w00 = conic[g, 0]
        w01 = conic[g, 1]
        det = w00 * conic[g, 2] - w01 * w01
        lim = 2.0 * sigma_max * w00
        for v in range(v0, v1 + 1):
            if exact:
                u0 = 0
                u1 = width - 1
            else:
                dy = v - my
                disc = lim - dy * dy * det
                if disc <= 0.0:
                    continue
                half = math.sqrt(disc) / w00 + 1e-9
                mid = mx - w01 * dy / w00
                u0 = max(0, int(math.ceil(mid - half)))
                u1 = min(width - 1, int(math.floor(mid + half)))
                if u0 > u1:
                    continue
            row_diff[v * width + u0] += 1
            row_diff[v * width + u1 + 1] -= 1
    offsets = np.zeros(npix + 1, dtype=np.int64)
    acc = 0
    run = 0
    for p in range(npix):
        run += row_diff[p]
        offsets[p] = acc
        acc += run
    offsets[npix] = acc
    idx = np.zeros(acc, dtype=np.int32)
    alphas = np.zeros(acc)
    cursor = offsets[:npix].copy()
    for oi in range(order.shape[0]):
        g = order[oi]
        mx = mean2d[g, 0]
        my = mean2d[g, 1]
        r = radius[g]
        v0 = 0 if exact else max(0, int(math.ceil(my - r)))
        v1 = height - 1 if exact else min(height - 1, int(math.floor(my + r)))
        w00 = conic[g, 0]
        w01 = conic[g, 1]
        w11 = conic[g, 2]
        det = w00 * w11 - w01 * w01
        lim = 2.0 * sigma_max * w00
        o = opac[g]
        for v in range(v0, v1 + 1):
            dy = v - my
            if exact:
                u0 = 0
                u1 = width - 1
            else:
                disc = lim - dy * dy * det
                if disc <= 0.0:
                    continue
                half = math.sqrt(disc) / w00 + 1e-9
                mid = mx - w01 * dy / w00
                u0 = max(0, int(math.ceil(mid - half)))
                u1 = min(width - 1, int(math.floor(mid + half)))
                if u0 > u1:
                    continue
            base = v * width
            for u in range(u0, u1 + 1):
                dx = u - mx
                sig = 0.5 * (w00 * dx * dx + 2.0 * w01 * dx * dy + w11 * dy * dy)
                p = base + u
                if sig <= sigma_max:
                    a = o * math.exp(-sig)
                    if a > alpha_clamp:
                        a = alpha_clamp
                    alphas[cursor[p]] = a
                idx[cursor[p]] = g
                cursor[p] += 1
    return offsets, idx, alphas


@njit(cache=True, fastmath=True)
def blend(offsets, idx, alphas, colors, zs, bg, width, height, t_min):
    """Front-to-back alpha compositing of the per-pixel lists."""
    ch = colors.shape[1]
    bright = np.zeros((height, width, ch))
    depth = np.zeros((height, width))
    amap = np.zeros((height, width))
    for p in range(width * height):
        v = p // width
        u = p % width
        T = 1.0
        d = 0.0
        for k in range(offsets[p], offsets[p + 1]):
            if T < t_min:
                break
            a = alphas[k]
            if a == 0.0:
                continue
            g = idx[k]
            w = a * T
            for c in range(ch):
                bright[v, u, c] += colors[g, c] * w
            d += zs[g] * w
            T *= 1.0 - a
        for c in range(ch):
            bright[v, u, c] += T * bg[c]
        depth[v, u] = d
        amap[v, u] = 1.0 - T
    return bright, depth, amap


@njit(cache=True, fastmath=True)
def blend_backward(offsets, idx, alphas, colors, zs, bg, width, height, t_min,
                   g_bright, g_depth, g_alpha, bright, depth, amap,
                   mean2d, conic, opac, alpha_clamp):
    """Replay compositing front-to-back, producing screen-space gradients."""
    n = colors.shape[0]
    ch = colors.shape[1]
    g_m2d = np.zeros((n, 2))
    g_con = np.zeros((n, 3))
    g_o = np.zeros(n)
    g_z = np.zeros(n)
    g_col = np.zeros((n, ch))
    for p in range(width * height):
        v = p // width
        u = p % width
        U = g_depth[v, u] * depth[v, u] + g_alpha[v, u] * amap[v, u]
        for c in range(ch):
            U += g_bright[v, u, c] * bright[v, u, c]
        T = 1.0
        P = 0.0
        for k in range(offsets[p], offsets[p + 1]):
            if T < t_min:
                break
            a = alphas[k]
            if a == 0.0:
                continue
            g = idx[k]
            w = a * T
            direct = g_depth[v, u] * zs[g] + g_alpha[v, u]
            for c in range(ch):
                direct += g_bright[v, u, c] * colors[g, c]
                g_col[g, c] += g_bright[v, u, c] * w
            g_z[g] += g_depth[v, u] * w
            P += direct * w
            dLda = direct * T - (U - P) / (1.0 - a)
            if a < alpha_clamp:
                g_o[g] += dLda * (a / opac[g])
                dLds = -a * dLda
                dx = u - mean2d[g, 0]
                dy = v - mean2d[g, 1]
                wx = conic[g, 0] * dx + conic[g, 1] * dy
                wy = conic[g, 1] * dx + conic[g, 2] * dy
                g_m2d[g, 0] -= dLds * wx
                g_m2d[g, 1] -= dLds * wy
                g_con[g, 0] += dLds * 0.5 * dx * dx
                g_con[g, 1] += dLds * dx * dy
                g_con[g, 2] += dLds * 0.5 * dy * dy
            T *= 1.0 - a
    return g_m2d, g_con, g_o, g_z, g_col


@njit(cache=True)
def chain_backward(valid, g_m2d, g_con, g_o, g_z, xcs, covc, conic,
                   rotations, log_scales, opacity_logits,
                   fx, fy, Rcw, scene_grads):
    """Chain screen-space gradients to world parameters and the camera pose.

    The pose gradient is w.r.t. a right-multiplicative twist on the
    camera-to-world pose, ordered (rot, trans).
    """
    n = g_m2d.shape[0]
    g_means = np.zeros((n, 3))
    g_ls = np.zeros((n, 3))
    g_q = np.zeros((n, 4))
    g_ol = np.zeros(n)
    g_pose = np.zeros(6)
    R = np.zeros((3, 3))
    Gc = np.zeros((3, 3))
    Sc = np.zeros((3, 3))
    Gw = np.zeros((3, 3))
    tmp = np.zeros((3, 3))
    dR = np.zeros((3, 3))
    for i in range(n):
        if valid[i] == 0:
            continue
        # inverse of the conic gives nothing new; gradients w.r.t. the 2D
        # covariance come from g_con via dW = -W dSigma' W
        w00 = conic[i, 0]
        w01 = conic[i, 1]
        w11 = conic[i, 2]
        gw00 = g_con[i, 0]
        gw01 = 0.5 * g_con[i, 1]
        gw11 = g_con[i, 2]
        # gS = -W Gw_full W  (2x2 symmetric)
        a00 = w00 * gw00 + w01 * gw01
        a01 = w00 * gw01 + w01 * gw11
        a10 = w01 * gw00 + w11 * gw01
        a11 = w01 * gw01 + w11 * gw11
        gs00 = -(a00 * w00 + a01 * w01)
        gs01 = -(a00 * w01 + a01 * w11)
        gs11 = -(a10 * w01 + a11 * w11)
        x = xcs[i, 0]
        y = xcs[i, 1]
        z = xcs[i, 2]
        iz = 1.0 / z
        iz2 = iz * iz
        j00 = fx * iz
        j02 = -fx * x * iz2
        j11 = fy * iz
        j12 = -fy * y * iz2
        # camera covariance (full) from packed upper triangle
        Sc[0, 0] = covc[i, 0]
        Sc[0, 1] = covc[i, 1]
        Sc[0, 2] = covc[i, 2]
        Sc[1, 0] = covc[i, 1]
        Sc[1, 1] = covc[i, 3]
        Sc[1, 2] = covc[i, 4]
        Sc[2, 0] = covc[i, 2]
        Sc[2, 1] = covc[i, 4]
        Sc[2, 2] = covc[i, 5]
        # g_SigmaCam = J^T gS J with J rows (j00, 0, j02), (0, j11, j12)
        Gc[0, 0] = j00 * gs00 * j00
        Gc[0, 1] = j00 * gs01 * j11
        Gc[0, 2] = j00 * (gs00 * j02 + gs01 * j12)
        Gc[1, 1] = j11 * gs11 * j11
        Gc[1, 2] = j11 * (gs01 * j02 + gs11 * j12)
        Gc[2, 2] = (j02 * gs00 * j02 + 2.0 * j02 * gs01 * j12 + j12 * gs11 * j12)
        Gc[1, 0] = Gc[0, 1]
        Gc[2, 0] = Gc[0, 2]
        Gc[2, 1] = Gc[1, 2]
        # g_xc from the projected mean
        gx = j00 * g_m2d[i, 0]
        gy = j11 * g_m2d[i, 1]
        gz3 = j02 * g_m2d[i, 0] + j12 * g_m2d[i, 1] + g_z[i]
        # g_xc from the Jacobian's own dependence on xc:
        # B = SigmaCam J^T (3x2); dJk B contracted with gS, times 2
        b00 = Sc[0, 0] * j00 + Sc[0, 2] * j02
        b01 = Sc[0, 1] * j11 + Sc[0, 2] * j12
        b10 = Sc[1, 0] * j00 + Sc[1, 2] * j02
        b11 = Sc[1, 1] * j11 + Sc[1, 2] * j12
        b20 = Sc[2, 0] * j00 + Sc[2, 2] * j02
        b21 = Sc[2, 1] * j11 + Sc[2, 2] * j12
        dj = -fx * iz2
        gx += 2.0 * (gs00 * dj * b20 + gs01 * dj * b21)
        dj = -fy * iz2
        gy += 2.0 * (gs01 * dj * b20 + gs11 * dj * b21)
        d00 = -fx * iz2
        d02 = 2.0 * fx * x * iz2 * iz
        d11 = -fy * iz2
        d12 = 2.0 * fy * y * iz2 * iz
        gz3 += 2.0 * (gs00 * (d00 * b00 + d02 * b20)
                      + gs01 * (d00 * b01 + d02 * b21)
                      + gs01 * (d11 * b10 + d12 * b20)
                      + gs11 * (d11 * b11 + d12 * b21))
        # pose gradient: right-perturbation of the camera-to-world pose
        g_pose[0] += gy * z - gz3 * y
        g_pose[1] += gz3 * x - gx * z
        g_pose[2] += gx * y - gy * x
        g_pose[3] -= gx
        g_pose[4] -= gy
        g_pose[5] -= gz3
        # rotation part from the camera-frame covariance: K = Gc Sc - Sc Gc
        for a in range(3):
            for b in range(3):
                s = 0.0
                for c in range(3):
                    s += Gc[a, c] * Sc[c, b] - Sc[a, c] * Gc[c, b]
                tmp[a, b] = s
        g_pose[0] += tmp[1, 2] - tmp[2, 1]
        g_pose[1] += tmp[2, 0] - tmp[0, 2]
        g_pose[2] += tmp[0, 1] - tmp[1, 0]
        if not scene_grads:
            continue
        # opacity logit
        o = 1.0 / (1.0 + math.exp(-opacity_logits[i]))
        g_ol[i] = g_o[i] * o * (1.0 - o)
        # world mean: g_mu = Rcw^T g_xc
        g_means[i, 0] = Rcw[0, 0] * gx + Rcw[1, 0] * gy + Rcw[2, 0] * gz3
        g_means[i, 1] = Rcw[0, 1] * gx + Rcw[1, 1] * gy + Rcw[2, 1] * gz3
        g_means[i, 2] = Rcw[0, 2] * gx + Rcw[1, 2] * gy + Rcw[2, 2] * gz3
        # world covariance gradient Gw = Rcw^T Gc Rcw
        for a in range(3):
            for b in range(3):
                s = 0.0
                for c in range(3):
                    acc = 0.0
                    for d in range(3):
                        acc += Gc[c, d] * Rcw[d, b]
                    s += Rcw[c, a] * acc
                Gw[a, b] = s
        qn = math.sqrt(rotations[i, 0] ** 2 + rotations[i, 1] ** 2
                       + rotations[i, 2] ** 2 + rotations[i, 3] ** 2)
        qw = rotations[i, 0] / qn
        qx = rotations[i, 1] / qn
        qy = rotations[i, 2] / qn
        qz = rotations[i, 3] / qn
        R[0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
        R[0, 1] = 2.0 * (qx * qy - qw * qz)
        R[0, 2] = 2.0 * (qx * qz + qw * qy)
        R[1, 0] = 2.0 * (qx * qy + qw * qz)
        R[1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
        R[1, 2] = 2.0 * (qy * qz - qw * qx)
        R[2, 0] = 2.0 * (qx * qz - qw * qy)
        R[2, 1] = 2.0 * (qy * qz + qw * qx)
        R[2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)
        s0 = math.exp(2.0 * log_scales[i, 0])
        s1 = math.exp(2.0 * log_scales[i, 1])
        s2 = math.exp(2.0 * log_scales[i, 2])
        # log-scale gradient: 2 s_k^2 (R^T Gw R)_kk
        for k in range(3):
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    acc += R[a, k] * Gw[a, b] * R[b, k]
            sk2 = s0 if k == 0 else (s1 if k == 1 else s2)
            g_ls[i, k] = 2.0 * sk2 * acc
        # quaternion gradient: 2 <Gw, dR_j diag(s^2) R^T> projected to unit sphere
        for j in range(4):
            if j == 0:
                dR[0, 0] = 0.0
                dR[0, 1] = -2.0 * qz
                dR[0, 2] = 2.0 * qy
                dR[1, 0] = 2.0 * qz
                dR[1, 1] = 0.0
                dR[1, 2] = -2.0 * qx
                dR[2, 0] = -2.0 * qy
                dR[2, 1] = 2.0 * qx
                dR[2, 2] = 0.0
            elif j == 1:
                dR[0, 0] = 0.0
                dR[0, 1] = 2.0 * qy
                dR[0, 2] = 2.0 * qz
                dR[1, 0] = 2.0 * qy
                dR[1, 1] = -4.0 * qx
                dR[1, 2] = -2.0 * qw
                dR[2, 0] = 2.0 * qz
                dR[2, 1] = 2.0 * qw
                dR[2, 2] = -4.0 * qx
            elif j == 2:
                dR[0, 0] = -4.0 * qy
                dR[0, 1] = 2.0 * qx
                dR[0, 2] = 2.0 * qw
                dR[1, 0] = 2.0 * qx
                dR[1, 1] = 0.0
                dR[1, 2] = 2.0 * qz
                dR[2, 0] = -2.0 * qw
                dR[2, 1] = 2.0 * qz
                dR[2, 2] = -4.0 * qy
            else:
                dR[0, 0] = -4.0 * qz
                dR[0, 1] = -2.0 * qw
                dR[0, 2] = 2.0 * qx
                dR[1, 0] = 2.0 * qw
                dR[1, 1] = -4.0 * qz
                dR[1, 2] = 2.0 * qy
                dR[2, 0] = 2.0 * qx
                dR[2, 1] = 2.0 * qy
                dR[2, 2] = 0.0
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    # (dR diag(s2) R^T)_ab
                    m = (dR[a, 0] * s0 * R[b, 0] + dR[a, 1] * s1 * R[b, 1]
                         + dR[a, 2] * s2 * R[b, 2])
                    acc += Gw[a, b] * m
            g_q[i, j] = 2.0 * acc
        # chain through quaternion normalization
        dot = (g_q[i, 0] * qw + g_q[i, 1] * qx + g_q[i, 2] * qy + g_q[i, 3] * qz)
        g_q[i, 0] = (g_q[i, 0] - dot * qw) / qn
        g_q[i, 1] = (g_q[i, 1] - dot * qx) / qn
        g_q[i, 2] = (g_q[i, 2] - dot * qy) / qn
        g_q[i, 3] = (g_q[i, 3] - dot * qz) / qn
    return g_means, g_ls, g_q, g_ol, g_pose


def forward(proj, order, colors, bg, width, height, t_min, sigma_max, alpha_clamp, exact):
    """Composite the projected scene; cache carries the per-pixel pair lists."""
    valid, mean2d, conic, cov2d, zs, opac, radius, xcs, covc = proj
    offsets, idx, alphas = build_pairs(order, mean2d, conic, radius, opac,
                                       width, height, sigma_max, alpha_clamp, exact)
    bright, depth, amap = blend(offsets, idx, alphas, colors, zs, bg, width, height, t_min)
    return bright, depth, amap, (offsets, idx, alphas)


def backward(proj, order, cache, colors, bg, width, height, t_min, sigma_max,
             alpha_clamp, exact, g_bright, g_depth, g_alpha, scene_grads,
             fx, fy, Rcw, forward_maps, rotations, log_scales, opacity_logits):
    valid, mean2d, conic, cov2d, zs, opac, radius, xcs, covc = proj
    if cache is None:
        cache = build_pairs(order, mean2d, conic, radius, opac,
                            width, height, sigma_max, alpha_clamp, exact)
    offsets, idx, alphas = cache
    bright, depth, amap = forward_maps
    g_m2d, g_con, g_o, g_z, g_col = blend_backward(
        offsets, idx, alphas, colors, zs, bg, width, height, t_min,
        g_bright, g_depth, g_alpha, bright, depth, amap,
        mean2d, conic, opac, alpha_clamp)
    g_means, g_ls, g_q, g_ol, g_pose = chain_backward(
        valid, g_m2d, g_con, g_o, g_z, xcs, covc, conic,
        rotations, log_scales, opacity_logits, fx, fy, Rcw, scene_grads)
    return g_means, g_ls, g_q, g_ol, g_col, g_pose


def events_from_frames(times, frames, contrast, refractory):
    """Two-pass wrapper around the jit kernel: count, allocate, fill."""
    empty = np.zeros(0)
    n = generate_events_px(times, frames, contrast, refractory,
                           empty, empty.astype(np.int64), empty.astype(np.int64),
                           empty.astype(np.int64))
    ts = np.zeros(n)
    us = np.zeros(n, dtype=np.int64)
    vs = np.zeros(n, dtype=np.int64)
    ps = np.zeros(n, dtype=np.int64)
    generate_events_px(times, frames, contrast, refractory, ts, us, vs, ps)
    return ts, us, vs, ps


@njit(cache=True)
def generate_events_px(times, frames, contrast, refractory, ts, us, vs, ps):
    """Threshold-crossing event generation from linearly interpolated frames.

    Each pixel tracks a reference log intensity; every departure of >= one
    contrast step emits an event at the interpolated crossing time and moves
    the reference by +-contrast. When the output arrays are empty this only
    counts; otherwise it fills them. Returns the event count.

    The crossing count uses a 1e-9 step tolerance so ramps of exactly k*C
    yield exactly k events despite float rounding.
    """
    nf, h, w = frames.shape
    counting = ts.shape[0] == 0
    k = 0
    for v in range(h):
        for u in range(w):
            ref = frames[0, v, u]
            last_t = -1e300
            for f in range(nf - 1):
                lo = frames[f, v, u]
                hi = frames[f + 1, v, u]
                t0 = times[f]
                t1 = times[f + 1]
                diff = hi - ref
                if diff >= 0.0:
                    nev = int(math.floor(diff / contrast + 1e-9))
                    pol = 1
                    step = contrast
                else:
                    nev = int(math.floor(-diff / contrast + 1e-9))
                    pol = -1
                    step = -contrast
                for _ in range(nev):
                    tj = t0 + (t1 - t0) * (ref + step - lo) / (hi - lo)
                    ref += step
                    if tj - last_t >= refractory:
                        if not counting:
                            ts[k] = tj
                            us[k] = u
                            vs[k] = v
                            ps[k] = pol
                        k += 1
                        last_t = tj
    return k
