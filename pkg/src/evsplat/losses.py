"""Supervision losses on brightness-change maps: L2 event term, structural
dissimilarity (1 - SSIM), and their convex combination.

Each loss returns (value, gradient w.r.t. the synthesized map). SSIM runs on
maps affinely rescaled into [0, 1] by a fixed per-pixel dynamic range so the
stabilizer constants keep their usual meaning on signed change maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, TooSmall


@dataclass(frozen=True)
class LossConfig:
    ssim_weight: float = 0.05       # lambda: (1-l)*event + l*ssim
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_c1: float = 0.01 ** 2      # stabilizers for unit dynamic range
    ssim_c2: float = 0.03 ** 2
    ssim_range: float = 2.0         # half-range of the change maps (20 * C default)

    def __post_init__(self):
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ValueError(f"ssim weight must be in [0, 1], got {self.ssim_weight}")


def _values(m):
    return m.values if hasattr(m, "values") else np.asarray(m, dtype=np.float64)


def event_loss(measured, synthesized):
    """Root-mean-square difference; gradient is the normalized residual."""
    e = _values(measured)
    s = _values(synthesized)
    if e.shape != s.shape:
        raise DimMismatch(f"map shapes differ: {e.shape} vs {s.shape}")
    r = s - e
    n = r.size
    value = float(np.sqrt((r * r).sum() / n))
    if value == 0.0:
        return 0.0, np.zeros_like(r)
    return value, r / (n * value)


def gaussian_window(size, sigma):
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _corr_valid(img, k):
    """Separable 'valid'-mode correlation with a 1D kernel along both axes."""
    from numpy.lib.stride_tricks import sliding_window_view
    tmp = sliding_window_view(img, len(k), axis=1) @ k
    return sliding_window_view(tmp, len(k), axis=0) @ k


def _scatter_full(g, k, shape):
    """Adjoint of _corr_valid: scatter valid-grid values back to full size."""
    from numpy.lib.stride_tricks import sliding_window_view
    m = len(k)
    pad = np.zeros((g.shape[0] + 2 * (m - 1), g.shape[1] + 2 * (m - 1)))
    pad[m - 1:m - 1 + g.shape[0], m - 1:m - 1 + g.shape[1]] = g
    kr = k[::-1]
    tmp = sliding_window_view(pad, m, axis=1) @ kr
    out = sliding_window_view(tmp, m, axis=0) @ kr
    assert out.shape == shape
    return out


def _ssim_stats(x, y, cfg: LossConfig):
    k = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    mu_x = _corr_valid(x, k)
    mu_y = _corr_valid(y, k)
    e_xx = _corr_valid(x * x, k)
    e_yy = _corr_valid(y * y, k)
    e_xy = _corr_valid(x * y, k)
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + cfg.ssim_c1
    a2 = 2.0 * cov + cfg.ssim_c2
    b1 = mu_x * mu_x + mu_y * mu_y + cfg.ssim_c1
    b2 = var_x + var_y + cfg.ssim_c2
    return k, mu_x, mu_y, a1, a2, b1, b2


def ssim_mean(x, y, cfg: LossConfig):
    """Mean SSIM over all fully interior windows (Gaussian-weighted stats)."""
    if x.shape != y.shape:
        raise DimMismatch(f"map shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < cfg.ssim_window:
        raise TooSmall(f"maps {x.shape} smaller than the {cfg.ssim_window}px SSIM window")
    _, _, _, a1, a2, b1, b2 = _ssim_stats(x, y, cfg)
    return float((a1 * a2 / (b1 * b2)).mean())


def ssim_loss(measured, synthesized, cfg: LossConfig = LossConfig()):
    """Structural dissimilarity 1 - SSIM with analytic gradient.

    Both maps are shifted and scaled to [0, 1] using the fixed +-ssim_range
    bound before SSIM; the gradient chains back through that rescaling.
    """
    e = _values(measured)
    s = _values(synthesized)
    if e.shape != s.shape:
        raise DimMismatch(f"map shapes differ: {e.shape} vs {s.shape}")
    if min(e.shape[:2]) < cfg.ssim_window:
        raise TooSmall(f"maps {e.shape} smaller than the {cfg.ssim_window}px SSIM window")
    if e.ndim == 3:
        # channel mean of per-channel dissimilarities
        losses, grads = zip(*(ssim_loss(e[..., c], s[..., c], cfg)
                              for c in range(e.shape[2])))
        return float(np.mean(losses)), np.stack(grads, axis=-1) / e.shape[2]
    r = 2.0 * cfg.ssim_range
    x = e / r + 0.5
    y = s / r + 0.5
    k, mu_x, mu_y, a1, a2, b1, b2 = _ssim_stats(x, y, cfg)
    S = a1 * a2 / (b1 * b2)
    n_win = S.size
    # partials of mean S w.r.t. the window statistics
    s_a1 = a2 / (b1 * b2)
    s_a2 = a1 / (b1 * b2)
    s_b1 = -S / b1
    s_b2 = -S / b2
    g_mu_y = 2.0 * mu_x * s_a1 + 2.0 * mu_y * s_b1 - 2.0 * mu_x * s_a2 - 2.0 * mu_y * s_b2
    g_eyy = s_b2
    g_exy = 2.0 * s_a2
    dy = (_scatter_full(g_mu_y, k, y.shape)
          + 2.0 * y * _scatter_full(g_eyy, k, y.shape)
          + x * _scatter_full(g_exy, k, y.shape)) / n_win
    # loss = 1 - mean(S); chain through the affine normalization
    return 1.0 - float(S.mean()), -dy / r


def total_loss(measured, synthesized, cfg: LossConfig = LossConfig()):
    """(1 - lambda) * event + lambda * ssim; exact at both endpoints."""
    lam = cfg.ssim_weight
    if lam == 0.0:
        return event_loss(measured, synthesized)
    if lam == 1.0:
        return ssim_loss(measured, synthesized, cfg)
    le, ge = event_loss(measured, synthesized)
    ls, gs = ssim_loss(measured, synthesized, cfg)
    return (1.0 - lam) * le + lam * ls, (1.0 - lam) * ge + lam * gs
