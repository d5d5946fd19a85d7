"""CPU splatting rasterizer with an exact reverse-mode pass.

The forward pass projects every Gaussian with the local-affine (Jacobian)
approximation, expands each splat into the pixel pairs inside its 3-sigma
box, and composites front to back per pixel. Pairs are kept as flat arrays
sorted pixel-major; the per-pixel transmittance chains are computed with
run-restarted cumulative products so each pixel is accumulated exactly as a
sequential loop would.

Only SH coefficients and opacity logits receive gradients.
"""

from dataclasses import dataclass

import numpy as np

from .scene import sigmoid
from .sh import DC_OFFSET, sh_basis

COV2D_BLUR = 0.3
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.9999
T_EPS = 1e-4
SIGMA_EXTENT = 3.0

CHANNELS = ("color", "label")


class RasterizerError(ValueError):
    """Structural problem with rasterizer inputs (sizes, caches, channels)."""


@dataclass
class Splats:
    means2d: np.ndarray   # (N, 2) pixel coordinates (u, v)
    cov2d: np.ndarray     # (N, 2, 2) regularized screen covariance
    conics: np.ndarray    # (N, 3) inverse covariance (a, b, c)
    depths: np.ndarray    # (N,)
    radii: np.ndarray     # (N,) integer pixel radius
    culled: np.ndarray    # (N,) bool


@dataclass
class _Cache:
    key: tuple
    visible: np.ndarray      # scene indices of non-culled Gaussians, depth order
    pixels: np.ndarray       # (P,) flat pixel ids that received contributions
    first: np.ndarray        # (P,) start of each pixel's run in the pair arrays
    counts: np.ndarray       # (P,) contributors per pixel
    row: np.ndarray          # (M,) pixel run index of each pair
    gidx: np.ndarray         # (M,) index into ``visible``
    alpha: np.ndarray        # (M,)
    gauss: np.ndarray        # (M,) exp(power)
    saturated: np.ndarray    # (M,) alpha clamped at ALPHA_MAX
    t_before: np.ndarray     # (M,)
    t_final: np.ndarray      # (P,)
    colors_raw: np.ndarray   # (V, 3) SH value before clamping
    basis: np.ndarray        # (V, K_sh)
    opacity: np.ndarray      # (V,) sigmoid(logit)
    background: np.ndarray


@dataclass
class RenderOutput:
    image: np.ndarray   # (H, W, 3)
    alpha: np.ndarray   # (H, W)
    cache: _Cache

    @property
    def weights_sum(self):
        """Per-pixel sum of contributor weights."""
        c = self.cache
        h, w = self.alpha.shape
        out = np.zeros(h * w)
        if len(c.pixels):
            out[c.pixels] = np.add.reduceat(c.alpha * c.t_before, c.first)
        return out.reshape(h, w)

    @property
    def transmittance(self):
        h, w = self.alpha.shape
        out = np.ones(h * w)
        out[self.cache.pixels] = self.cache.t_final
        return out.reshape(h, w)


def _segment_accumulate(values, first, counts, ufunc, identity):
    """Inclusive ``ufunc.accumulate`` restarted at every run.

    Runs are grouped by length into power-of-two buckets and scanned as dense
    tables, so every run is accumulated sequentially from its own start.
    """
    out = np.empty_like(values)
    if len(counts) == 0:
        return out
    top = int(counts.max())
    if top * len(counts) <= 4 * len(values):
        # padding is cheap enough for one table
        cols = np.arange(top)
        valid = cols < counts[:, None]
        idx = np.where(valid, first[:, None] + cols, 0)
        tab = np.where(valid, values[idx], identity)
        out[idx[valid]] = ufunc.accumulate(tab, axis=1)[valid]
        return out
    lo, hi = 0, 1
    while lo < top:
        sel = np.flatnonzero((counts > lo) & (counts <= hi))
        if sel.size:
            cols = np.arange(hi)
            valid = cols < counts[sel, None]
            idx = np.where(valid, first[sel, None] + cols, 0)
            tab = np.where(valid, values[idx], identity)
            out[idx[valid]] = ufunc.accumulate(tab, axis=1)[valid]
        lo, hi = hi, hi * 2
    return out


@dataclass
class GradBuffer:
    d_color_sh: np.ndarray
    d_label_sh: np.ndarray
    d_opacity: np.ndarray

    @classmethod
    def zeros_like(cls, scene):
        return cls(np.zeros_like(scene.color_sh), np.zeros_like(scene.label_sh),
                   np.zeros_like(scene.opacities))

    def __add__(self, other):
        return GradBuffer(self.d_color_sh + other.d_color_sh,
                          self.d_label_sh + other.d_label_sh,
                          self.d_opacity + other.d_opacity)

    def scaled(self, k):
        return GradBuffer(k * self.d_color_sh, k * self.d_label_sh, k * self.d_opacity)


def project(scene, camera):
    """Screen-space splats for every Gaussian in ``scene``."""
    n = len(scene)
    R, t = camera.rotation, camera.translation
    p_cam = scene.positions @ R.T + t
    z = p_cam[:, 2]
    culled = (z < camera.near) | (z > camera.far)
    zs = np.where(culled, 1.0, z)
    x, y = p_cam[:, 0], p_cam[:, 1]

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = camera.fx / zs
    J[:, 0, 2] = -camera.fx * x / zs ** 2
    J[:, 1, 1] = camera.fy / zs
    J[:, 1, 2] = -camera.fy * y / zs ** 2
    JW = J @ R
    cov2d = JW @ scene.covariances() @ np.swapaxes(JW, 1, 2)
    cov2d[:, 0, 0] += COV2D_BLUR
    cov2d[:, 1, 1] += COV2D_BLUR

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(0.1, mid * mid - det))
    radii = np.ceil(SIGMA_EXTENT * np.sqrt(lam)).astype(np.int64)

    means2d = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], axis=1)
    u, v = means2d[:, 0], means2d[:, 1]
    offscreen = (u + radii < 0) | (u - radii > camera.width - 1) | (v + radii < 0) | (v - radii > camera.height - 1)
    culled = culled | offscreen | (radii <= 0) | ~(det > 0)
    radii = np.where(culled, 0, radii)
    return Splats(means2d, cov2d, conics, z, radii, culled)


def _sh_table(scene, channel):
    if channel == "color":
        return scene.color_sh
    if channel == "label":
        return scene.label_sh
    raise RasterizerError(f"unknown channel {channel!r}; expected one of {CHANNELS}")


def _cache_key(scene, camera, channel, background):
    return (len(scene), camera.width, camera.height, channel,
            tuple(np.asarray(background, dtype=np.float64).tolist()))


_BOX_BUCKETS = (4, 6, 8, 12, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512, 768, 1024, 1536, 2048, 4096)


def _splat_pairs(splats, visible, opacity, W, H):
    """(depth rank, flat pixel, power, unclamped alpha) for every contributing pair.

    Splats are grouped by bounding-box size so that each group is evaluated
    as one dense ``(n, B, B)`` block.
    """
    V = len(visible)
    mu = splats.means2d[visible]
    r = splats.radii[visible]
    con = splats.conics[visible]
    x0 = np.clip(np.floor(mu[:, 0] - r), 0, W - 1).astype(np.int64)
    x1 = np.clip(np.ceil(mu[:, 0] + r), 0, W - 1).astype(np.int64)
    y0 = np.clip(np.floor(mu[:, 1] - r), 0, H - 1).astype(np.int64)
    y1 = np.clip(np.ceil(mu[:, 1] + r), 0, H - 1).astype(np.int64)
    side = np.maximum(x1 - x0, y1 - y0) + 1
    bucket = np.searchsorted(_BOX_BUCKETS, side)
    out = ([], [], [], [])
    for b in np.unique(bucket):
        g = np.flatnonzero(bucket == b)
        B = _BOX_BUCKETS[b] if b < len(_BOX_BUCKETS) else int(side[g].max())
        ar = np.arange(B)
        xs = x0[g, None] + ar                      # (n, B)
        ys = y0[g, None] + ar
        dx = (mu[g, 0, None] - xs)[:, None, :]     # (n, 1, B)
        dy = (mu[g, 1, None] - ys)[:, :, None]     # (n, B, 1)
        a, bb, c = con[g, 0, None, None], con[g, 1, None, None], con[g, 2, None, None]
        power = -0.5 * (a * dx * dx + c * dy * dy) - bb * dx * dy
        inside = (xs <= x1[g, None])[:, None, :] & (ys <= y1[g, None])[:, :, None]
        raw = opacity[g, None, None] * np.exp(np.minimum(power, 0.0))
        keep = inside & (power <= 0.0) & (raw >= ALPHA_MIN)
        n_i, yi, xi = np.nonzero(keep)
        out[0].append(g[n_i])
        out[1].append(ys[n_i, yi] * W + xs[n_i, xi])
        out[2].append(power[keep])
        out[3].append(raw[keep])
    if not out[0]:
        z = np.zeros(0)
        return z.astype(np.int64), z.astype(np.int64), z, z
    return tuple(np.concatenate(v) for v in out)


def render(scene, camera, channel="color", background=(1.0, 1.0, 1.0)):
    """Alpha-composite ``channel`` of ``scene`` as seen from ``camera``."""
    H, W = int(camera.height), int(camera.width)
    if H <= 0 or W <= 0:
        raise RasterizerError("zero-size image")
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    sh = _sh_table(scene, channel)

    splats = project(scene, camera)
    visible = np.flatnonzero(~splats.culled)
    # stable depth order; ties keep storage order
    visible = visible[np.lexsort((visible, splats.depths[visible]))]
    V = len(visible)

    if V:
        dirs = scene.positions[visible] - camera.center
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        degree = int(round(np.sqrt(sh.shape[1]))) - 1
        basis = sh_basis(degree, dirs)
        colors_raw = np.einsum("nk,nkc->nc", basis, sh[visible]) + DC_OFFSET
        opacity = sigmoid(scene.opacities[visible])
    else:
        basis = np.zeros((0, sh.shape[1]))
        colors_raw = np.zeros((0, 3))
        opacity = np.zeros(0)

    rank, pix, power, raw_alpha = _splat_pairs(splats, visible, opacity, W, H)

    # pixel-major, front-to-back within each pixel
    order = np.argsort(pix * max(V, 1) + rank, kind="stable")
    rank, pix, power, raw_alpha = rank[order], pix[order], power[order], raw_alpha[order]
    alpha = np.minimum(ALPHA_MAX, raw_alpha)

    if len(pix):
        first = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
    else:
        first = np.zeros(0, dtype=np.int64)
    pixels = pix[first]
    per_pixel = np.diff(np.r_[first, len(pix)])
    t_after = _segment_accumulate(1.0 - alpha, first, per_pixel, np.multiply, 1.0)
    # exclusive product: T before pair k is T after pair k-1 of the same run
    t_before = np.ones_like(t_after)
    t_before[1:] = t_after[:-1]
    t_before[first] = 1.0
    # a pixel stops once its transmittance has dropped below T_EPS; the pair
    # that crosses the threshold still contributes. T only decreases along a
    # run, so the surviving pairs are a prefix of each run.
    alive = t_before >= T_EPS
    row = np.repeat(np.arange(len(pixels)), per_pixel)
    n_alive = np.bincount(row[alive], minlength=len(pixels))
    rank, power, raw_alpha, alpha = rank[alive], power[alive], raw_alpha[alive], alpha[alive]
    t_after, t_before, row = t_after[alive], t_before[alive], row[alive]
    first = np.cumsum(n_alive) - n_alive
    t_final = t_after[first + n_alive - 1]

    colors = np.clip(colors_raw, 0.0, 1.0)
    weights = alpha * t_before
    image = np.broadcast_to(bg, (H * W, 3)).copy()
    alpha_img = np.zeros(H * W)
    if len(pixels):
        fg = np.add.reduceat(weights[:, None] * colors[rank], first, axis=0)
        image[pixels] = fg + t_final[:, None] * bg
        alpha_img[pixels] = 1.0 - t_final

    cache = _Cache(
        key=_cache_key(scene, camera, channel, bg),
        visible=visible, pixels=pixels, first=first, counts=n_alive, row=row, gidx=rank,
        alpha=alpha, gauss=np.exp(np.minimum(power, 0.0)), saturated=raw_alpha > ALPHA_MAX,
        t_before=t_before, t_final=t_final,
        colors_raw=colors_raw, basis=basis, opacity=opacity, background=bg,
    )
    return RenderOutput(image.reshape(H, W, 3), alpha_img.reshape(H, W), cache)


def render_backward(scene, camera, channel, loss_grad, forward=None, background=(1.0, 1.0, 1.0)):
    """Gradients of ``sum(loss_grad * image)`` w.r.t. the channel's SH and opacity logits.

    ``forward`` is the :class:`RenderOutput` of the same inputs; it is
    recomputed when omitted.
    """
    if forward is None:
        forward = render(scene, camera, channel, background)
    c = forward.cache
    bg = c.background
    H, W = forward.alpha.shape
    if c.key != _cache_key(scene, camera, channel, bg):
        raise RasterizerError("forward cache does not match these backward inputs")
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (H, W, 3):
        raise RasterizerError(f"loss_grad shape {loss_grad.shape} != {(H, W, 3)}")

    grads = GradBuffer.zeros_like(scene)
    V = len(c.visible)
    if V == 0 or len(c.pixels) == 0:
        return grads

    G = loss_grad.reshape(-1, 3)[c.pixels]            # (P, 3)
    Gp = G[c.row]                                      # (M, 3)
    colors = np.clip(c.colors_raw, 0.0, 1.0)
    dot = np.einsum("mc,mc->m", colors[c.gidx], Gp)
    weights = c.alpha * c.t_before
    contrib = dot * weights
    # contributions strictly behind each pair, plus the background seen through the run
    total = np.add.reduceat(contrib, c.first)
    incl = _segment_accumulate(contrib, c.first, c.counts, np.add, 0.0)
    after = total[c.row] - incl + c.t_final[c.row] * (G @ bg)[c.row]
    d_alpha = c.t_before * dot - after / (1.0 - c.alpha)
    d_alpha[c.saturated] = 0.0

    wG = weights[:, None] * Gp
    d_col = np.stack([np.bincount(c.gidx, weights=wG[:, ch], minlength=V) for ch in range(3)], axis=1)
    d_col *= (c.colors_raw > 0.0) & (c.colors_raw < 1.0)
    d_sh = c.basis[:, :, None] * d_col[:, None, :]

    d_opa = np.bincount(c.gidx, weights=d_alpha * c.gauss, minlength=V)
    d_opa *= c.opacity * (1.0 - c.opacity)

    if channel == "color":
        grads.d_color_sh[c.visible] = d_sh
    else:
        grads.d_label_sh[c.visible] = d_sh
    grads.d_opacity[c.visible] = d_opa
    return grads


def masked_l1_image(pred, target, mask2d):
    """Masked mean absolute error and its gradient w.r.t. ``pred``.

    The loss is normalized by the mask mass (at least 1) and by the channel
    count, so a fully masked image gives the plain per-pixel, per-channel mean.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask2d = np.asarray(mask2d, dtype=np.float64)
    if pred.shape != target.shape or pred.shape[:2] != mask2d.shape:
        raise RasterizerError(f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask2d.shape}")
    channels = pred.shape[2] if pred.ndim == 3 else 1
    norm = max(float(mask2d.sum()), 1.0) * channels
    diff = pred - target
    m = mask2d[..., None] if pred.ndim == 3 else mask2d
    loss = float((m * np.abs(diff)).sum() / norm)
    grad = m * np.sign(diff) / norm
    return loss, grad
