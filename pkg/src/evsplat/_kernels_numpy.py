"""Pure-numpy twin of the numba render kernels.

Same contract as _kernels_numba: `project` produces per-Gaussian screen
quantities, `forward` composites front-to-back, `backward` replays the blend
and chains gradients to world parameters plus a camera-pose twist. Selected
via the EVSPLAT_BACKEND environment flag; slower but dependency-free, and the
reference the benchmark compares against.
"""

import numpy as np

BACKEND_NAME = "numpy"


def events_from_frames(times, frames, contrast, refractory):
    """Threshold-crossing events from linearly interpolated log frames.

    Same semantics as the numba lane, including the 1e-9 crossing-count
    tolerance; plain python loops, so only suitable for small sequences.
    """
    nf, h, w = frames.shape
    ts, us, vs, ps = [], [], [], []
    for v in range(h):
        for u in range(w):
            ref = frames[0, v, u]
            last_t = -1e300
            for f in range(nf - 1):
                lo = frames[f, v, u]
                hi = frames[f + 1, v, u]
                t0, t1 = times[f], times[f + 1]
                diff = hi - ref
                if diff >= 0.0:
                    nev = int(np.floor(diff / contrast + 1e-9))
                    pol, step = 1, contrast
                else:
                    nev = int(np.floor(-diff / contrast + 1e-9))
                    pol, step = -1, -contrast
                for _ in range(nev):
                    tj = t0 + (t1 - t0) * (ref + step - lo) / (hi - lo)
                    ref += step
                    if tj - last_t >= refractory:
                        ts.append(tj)
                        us.append(u)
                        vs.append(v)
                        ps.append(pol)
                        last_t = tj
    return (np.array(ts, dtype=np.float64), np.array(us, dtype=np.int64),
            np.array(vs, dtype=np.int64), np.array(ps, dtype=np.int64))


def _rot_matrices(quats):
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def project(means, log_scales, rotations, opacity_logits, Rcw, tcw,
            fx, fy, cx, cy, width, height, near, cov_floor, exact):
    n = len(means)
    xcs = means @ Rcw.T + tcw
    z = xcs[:, 2]
    valid = z > near

    R = _rot_matrices(rotations)
    s2 = np.exp(2.0 * log_scales)
    covw = np.einsum("nik,nk,njk->nij", R, s2, R)
    covcam = Rcw @ covw @ Rcw.T

    with np.errstate(divide="ignore", invalid="ignore"):
        iz = np.where(valid, 1.0 / z, 0.0)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx * iz
    J[:, 0, 2] = -fx * xcs[:, 0] * iz * iz
    J[:, 1, 1] = fy * iz
    J[:, 1, 2] = -fy * xcs[:, 1] * iz * iz
    cov2 = np.einsum("nab,nbc,ndc->nad", J, covcam, J)
    v00 = cov2[:, 0, 0] + cov_floor
    v01 = cov2[:, 0, 1]
    v11 = cov2[:, 1, 1] + cov_floor
    det = v00 * v11 - v01 * v01
    mean2d = np.stack([fx * xcs[:, 0] * iz + cx, fy * xcs[:, 1] * iz + cy], axis=1)
    mid = 0.5 * (v00 + v11)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam, 0.0))
    if not exact:
        inside = ((mean2d[:, 0] >= -0.3 * width - radius) & (mean2d[:, 0] <= 1.3 * width + radius)
                  & (mean2d[:, 1] >= -0.3 * height - radius) & (mean2d[:, 1] <= 1.3 * height + radius))
        valid = valid & inside

    conic = np.zeros((n, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        conic[:, 0] = np.where(valid, v11 / det, 0.0)
        conic[:, 1] = np.where(valid, -v01 / det, 0.0)
        conic[:, 2] = np.where(valid, v00 / det, 0.0)
    cov2d = np.stack([v00, v01, v11], axis=1)
    opac = 1.0 / (1.0 + np.exp(-opacity_logits))
    packed = np.stack([covcam[:, 0, 0], covcam[:, 0, 1], covcam[:, 0, 2],
                       covcam[:, 1, 1], covcam[:, 1, 2], covcam[:, 2, 2]], axis=1)
    zero = ~valid
    for arr in (mean2d, cov2d, radius):
        arr[zero] = 0.0
    return (valid.astype(np.uint8), mean2d, conic, cov2d, np.where(valid, z, 0.0),
            np.where(valid, opac, 0.0), radius, np.where(valid[:, None], xcs, 0.0), packed)


def _patch(g, mean2d, conic, radius, opac, width, height, sigma_max, alpha_clamp, exact):
    """Bounding box, alpha array, and in-footprint mask for one Gaussian."""
    mx, my = mean2d[g]
    if exact:
        u0, u1, v0, v1 = 0, width - 1, 0, height - 1
    else:
        r = radius[g]
        u0 = max(0, int(np.ceil(mx - r)))
        u1 = min(width - 1, int(np.floor(mx + r)))
        v0 = max(0, int(np.ceil(my - r)))
        v1 = min(height - 1, int(np.floor(my + r)))
        if u0 > u1 or v0 > v1:
            return None
    dx = np.arange(u0, u1 + 1) - mx
    dy = (np.arange(v0, v1 + 1) - my)[:, None]
    w00, w01, w11 = conic[g]
    sig = 0.5 * (w00 * dx * dx + 2.0 * w01 * dx * dy + w11 * dy * dy)
    inlist = sig <= sigma_max
    alpha = np.where(inlist, np.minimum(opac[g] * np.exp(-sig), alpha_clamp), 0.0)
    sl = (slice(v0, v1 + 1), slice(u0, u1 + 1))
    return sl, alpha, inlist, dx, dy


def forward(proj, order, colors, bg, width, height, t_min, sigma_max, alpha_clamp, exact):
    valid, mean2d, conic, cov2d, zs, opac, radius, xcs, covc = proj
    ch = colors.shape[1]
    bright = np.zeros((height, width, ch))
    depth = np.zeros((height, width))
    T = np.ones((height, width))
    for g in order:
        p = _patch(g, mean2d, conic, radius, opac, width, height, sigma_max, alpha_clamp, exact)
        if p is None:
            continue
        sl, alpha, _, _, _ = p
        act = T[sl] >= t_min
        w = np.where(act, alpha * T[sl], 0.0)
        bright[sl] += colors[g] * w[..., None]
        depth[sl] += zs[g] * w
        T[sl] = np.where(act, T[sl] * (1.0 - alpha), T[sl])
    bright += T[..., None] * bg
    return bright, depth, 1.0 - T, None


def backward(proj, order, cache, colors, bg, width, height, t_min, sigma_max,
             alpha_clamp, exact, g_bright, g_depth, g_alpha, scene_grads,
             fx, fy, Rcw, forward_maps, rotations, log_scales, opacity_logits):
    valid, mean2d, conic, cov2d, zs, opac, radius, xcs, covc = proj
    bright, depth, amap = forward_maps
    n, ch = colors.shape
    g_m2d = np.zeros((n, 2))
    g_con = np.zeros((n, 3))
    g_o = np.zeros(n)
    g_z = np.zeros(n)
    g_col = np.zeros((n, ch))

    U = (g_bright * bright).sum(-1) + g_depth * depth + g_alpha * amap
    T = np.ones((height, width))
    P = np.zeros((height, width))
    for g in order:
        p = _patch(g, mean2d, conic, radius, opac, width, height, sigma_max, alpha_clamp, exact)
        if p is None:
            continue
        sl, alpha, inlist, dx, dy = p
        act = (T[sl] >= t_min) & inlist
        w = np.where(act, alpha * T[sl], 0.0)
        direct = (g_bright[sl] * colors[g]).sum(-1) + g_depth[sl] * zs[g] + g_alpha[sl]
        g_col[g] = (g_bright[sl] * w[..., None]).sum((0, 1))
        g_z[g] = (g_depth[sl] * w).sum()
        P[sl] += direct * w
        with np.errstate(divide="ignore", invalid="ignore"):
            dLda = np.where(act, direct * T[sl] - (U[sl] - P[sl]) / (1.0 - alpha), 0.0)
        open_a = act & (alpha < alpha_clamp)
        g_o[g] = np.where(open_a, dLda * alpha, 0.0).sum() / opac[g] if opac[g] > 0 else 0.0
        dLds = np.where(open_a, -alpha * dLda, 0.0)
        w00, w01, w11 = conic[g]
        wx = w00 * dx + w01 * dy
        wy = w01 * dx + w11 * dy
        g_m2d[g, 0] = -(dLds * wx).sum()
        g_m2d[g, 1] = -(dLds * wy).sum()
        g_con[g, 0] = (dLds * 0.5 * dx * dx).sum()
        g_con[g, 1] = (dLds * dx * dy).sum()
        g_con[g, 2] = (dLds * 0.5 * dy * dy).sum()
        T[sl] = np.where(T[sl] >= t_min, T[sl] * (1.0 - alpha), T[sl])

    return _chain(valid.astype(bool), g_m2d, g_con, g_o, g_z, g_col, xcs, covc, conic,
                  rotations, log_scales, opacity_logits, fx, fy, Rcw, scene_grads)


def _chain(valid, g_m2d, g_con, g_o, g_z, g_col, xcs, covc, conic,
           rotations, log_scales, opacity_logits, fx, fy, Rcw, scene_grads):
    """Vectorized screen-to-world gradient chain; see the numba twin for math."""
    n = len(g_m2d)
    g_means = np.zeros((n, 3))
    g_ls = np.zeros((n, 3))
    g_q = np.zeros((n, 4))
    g_ol = np.zeros(n)
    g_pose = np.zeros(6)
    idx = np.flatnonzero(valid)
    if len(idx) == 0:
        return g_means, g_ls, g_q, g_ol, g_col, g_pose

    W = np.zeros((len(idx), 2, 2))
    W[:, 0, 0] = conic[idx, 0]
    W[:, 0, 1] = W[:, 1, 0] = conic[idx, 1]
    W[:, 1, 1] = conic[idx, 2]
    Gfull = np.zeros_like(W)
    Gfull[:, 0, 0] = g_con[idx, 0]
    Gfull[:, 0, 1] = Gfull[:, 1, 0] = 0.5 * g_con[idx, 1]
    Gfull[:, 1, 1] = g_con[idx, 2]
    gS = -W @ Gfull @ W

    x, y, z = xcs[idx, 0], xcs[idx, 1], xcs[idx, 2]
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = fx * iz
    J[:, 0, 2] = -fx * x * iz2
    J[:, 1, 1] = fy * iz
    J[:, 1, 2] = -fy * y * iz2

    Sc = np.zeros((len(idx), 3, 3))
    Sc[:, 0, 0] = covc[idx, 0]
    Sc[:, 0, 1] = Sc[:, 1, 0] = covc[idx, 1]
    Sc[:, 0, 2] = Sc[:, 2, 0] = covc[idx, 2]
    Sc[:, 1, 1] = covc[idx, 3]
    Sc[:, 1, 2] = Sc[:, 2, 1] = covc[idx, 4]
    Sc[:, 2, 2] = covc[idx, 5]

    Gc = np.einsum("nab,nac,ncd->nbd", J, gS, J)
    g_xc = np.einsum("nab,na->nb", J, g_m2d[idx])
    g_xc[:, 2] += g_z[idx]
    # Jacobian's own dependence on the camera-frame mean
    B = Sc @ J.transpose(0, 2, 1)  # (n, 3, 2)
    dJ = np.zeros((len(idx), 3, 2, 3))
    dJ[:, 0, 0, 2] = -fx * iz2
    dJ[:, 1, 1, 2] = -fy * iz2
    dJ[:, 2, 0, 0] = -fx * iz2
    dJ[:, 2, 0, 2] = 2.0 * fx * x * iz2 * iz
    dJ[:, 2, 1, 1] = -fy * iz2
    dJ[:, 2, 1, 2] = 2.0 * fy * y * iz2 * iz
    djb = np.einsum("nkac,ncb->nkab", dJ, B)
    g_xc += 2.0 * np.einsum("nab,nkab->nk", gS, djb)

    g_pose[0:3] += np.cross(g_xc, xcs[idx]).sum(0)
    g_pose[3:6] -= g_xc.sum(0)
    K = Gc @ Sc - Sc @ Gc
    g_pose[0] += (K[:, 1, 2] - K[:, 2, 1]).sum()
    g_pose[1] += (K[:, 2, 0] - K[:, 0, 2]).sum()
    g_pose[2] += (K[:, 0, 1] - K[:, 1, 0]).sum()

    if not scene_grads:
        return g_means, g_ls, g_q, g_ol, g_col, g_pose

    o = 1.0 / (1.0 + np.exp(-opacity_logits[idx]))
    g_ol[idx] = g_o[idx] * o * (1.0 - o)
    g_means[idx] = g_xc @ Rcw
    Gw = np.einsum("ca,ncd,db->nab", Rcw, Gc, Rcw)

    q = rotations[idx]
    qn = np.linalg.norm(q, axis=1)
    qh = q / qn[:, None]
    R = _rot_matrices(q)
    s2 = np.exp(2.0 * log_scales[idx])
    g_ls[idx] = 2.0 * s2 * np.einsum("nak,nab,nbk->nk", R, Gw, R)

    w, xq, yq, zq = qh[:, 0], qh[:, 1], qh[:, 2], qh[:, 3]
    zero = np.zeros_like(w)
    dR = np.zeros((len(idx), 4, 3, 3))
    dR[:, 0] = 2.0 * np.stack([
        np.stack([zero, -zq, yq], -1),
        np.stack([zq, zero, -xq], -1),
        np.stack([-yq, xq, zero], -1)], -2)
    dR[:, 1] = 2.0 * np.stack([
        np.stack([zero, yq, zq], -1),
        np.stack([yq, -2 * xq, -w], -1),
        np.stack([zq, w, -2 * xq], -1)], -2)
    dR[:, 2] = 2.0 * np.stack([
        np.stack([-2 * yq, xq, w], -1),
        np.stack([xq, zero, zq], -1),
        np.stack([-w, zq, -2 * yq], -1)], -2)
    dR[:, 3] = 2.0 * np.stack([
        np.stack([-2 * zq, -w, xq], -1),
        np.stack([w, -2 * zq, yq], -1),
        np.stack([xq, yq, zero], -1)], -2)
    M = np.einsum("njak,nk,nbk->njab", dR, s2, R)
    gq_hat = 2.0 * np.einsum("nab,njab->nj", Gw, M)
    dot = (gq_hat * qh).sum(1, keepdims=True)
    g_q[idx] = (gq_hat - dot * qh) / qn[:, None]
    return g_means, g_ls, g_q, g_ol, g_col, g_pose
