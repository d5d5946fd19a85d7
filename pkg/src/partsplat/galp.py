"""Geometry-aware label prediction on a Gaussian scene.

Each Gaussian carries a view-dependent label field stored as SH coefficients.
The labels are fitted to per-view pseudo segmentation maps through the
rasterizer, and refined with an L1 neighbor-consistency loss around anchors
drawn from both ends of the label-softness ranking (softness = label
entropy times cross-view label variance).
"""

from dataclasses import dataclass, field

import numpy as np

from .optim import Adam, sh_learning_rates
from .rasterizer import masked_l1_image, render, render_backward
from .scene import sigmoid
from .sh import fibonacci_sphere, sh_eval_raw

ENTROPY_EPS = 1e-10
DEFAULT_DIRECTIONS = 64


class ParameterError(ValueError):
    pass


@dataclass
class SegMap2D:
    image: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"segmentation image must be HxWx3, got {self.image.shape}")
        if self.confidence is None:
            self.confidence = np.ones(self.image.shape[:2])
        else:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
            if self.confidence.shape != self.image.shape[:2]:
                raise ValueError("confidence must match the image size")

    @property
    def shape(self):
        return self.image.shape[:2]


@dataclass
class SoftnessReport:
    variance: np.ndarray
    mean_label: np.ndarray
    probs: np.ndarray
    entropy: np.ndarray
    softness: np.ndarray


@dataclass
class Mask3D:
    assignment: np.ndarray
    selected: np.ndarray
    target: int = 0

    def to_json(self):
        return {
            "target": int(self.target),
            "assignment": self.assignment.astype(int).tolist(),
            "selected": np.flatnonzero(self.selected).astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, data):
        assignment = np.asarray(data["assignment"], dtype=np.int64)
        selected = np.zeros(len(assignment), dtype=bool)
        selected[np.asarray(data["selected"], dtype=np.int64)] = True
        return cls(assignment, selected, int(data["target"]))


def normalize_pseudo_map(scores, palette, temperature=0.2):
    """Temperature softmax over per-pixel label scores, blended into palette colors.

    ``scores`` has shape ``(H, W, L)`` with ``L == len(palette)``.
    """
    if not temperature > 0:
        raise ParameterError("temperature must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] != len(palette):
        raise ParameterError(f"score depth {scores.shape[-1]} != palette size {len(palette)}")
    z = scores / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return SegMap2D(p @ palette.colors)


def label_variance(scene, directions=None):
    """Cross-direction variance and mean of each Gaussian's (unclamped) label.

    Returns ``(variance, mean_label)``; variance is the squared deviation
    averaged over directions and color channels.
    """
    if directions is None:
        directions = fibonacci_sphere(DEFAULT_DIRECTIONS)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(directions) < 2:
        raise ParameterError("label variance needs at least two directions")
    # (D, N, 3)
    values = sh_eval_raw(scene.label_sh[None], directions[:, None, :])
    mean = values.mean(axis=0)
    variance = ((values - mean) ** 2).mean(axis=(0, 2))
    return variance, mean


def cosine_to_palette(mean_label, palette):
    """Cosine similarity of each mean label to each palette color; zero-norm rows give zeros."""
    mean_label = np.atleast_2d(np.asarray(mean_label, dtype=np.float64))
    colors = palette.colors
    ln = np.linalg.norm(colors, axis=1)
    rn = np.linalg.norm(mean_label, axis=1)
    denom = rn[:, None] * ln[None, :]
    dots = mean_label @ colors.T
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return cos, rn > 0


def softness(variance, mean_label, palette):
    """Label probabilities, entropy and softness ``S = H * v``."""
    if len(palette) < 2:
        raise ParameterError("palette needs at least two labels")
    variance = np.asarray(variance, dtype=np.float64)
    cos, nonzero = cosine_to_palette(mean_label, palette)
    e = np.exp(cos - cos.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    probs[~nonzero] = 1.0 / len(palette)
    entropy = -(probs * np.log(probs + ENTROPY_EPS)).sum(axis=1)
    return SoftnessReport(variance, np.atleast_2d(mean_label), probs, entropy, entropy * variance)


def compute_softness(scene, palette, directions=None):
    v, rbar = label_variance(scene, directions)
    return softness(v, rbar, palette)


def sample_anchors(scores, K):
    """Indices of the ``K//2`` highest and ``K//2`` lowest softness scores.

    Ties go to the lower index; the low half skips indices already taken by
    the high half. Returned sorted.
    """
    s = np.asarray(scores, dtype=np.float64)
    n = len(s)
    if K > n:
        raise ParameterError(f"cannot draw {K} anchors from {n} Gaussians")
    half = K // 2
    idx = np.arange(n)
    descending = np.lexsort((idx, -s))
    ascending = np.lexsort((idx, s))
    top = descending[:half]
    taken = np.zeros(n, dtype=bool)
    taken[top] = True
    bottom = ascending[~taken[ascending]][:half]
    return np.sort(np.concatenate([top, bottom]))


def knn_table(positions, k, chunk=256):
    """``k`` nearest neighbors of every point, excluding itself; ties by index.

    Exact brute force over row chunks; returns an ``(N, k)`` integer array.
    """
    p = np.asarray(positions, dtype=np.float64)
    n = len(p)
    if k >= n:
        raise ParameterError(f"k={k} must be smaller than the point count {n}")
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        rows = np.arange(s, min(n, s + chunk))
        d2 = ((p[rows, None, :] - p[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(len(rows)), rows] = np.inf
        out[rows] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def knn(positions, query, k):
    """``k`` nearest neighbors of point ``query`` by Euclidean distance."""
    p = np.asarray(positions, dtype=np.float64)
    n = len(p)
    if k >= n:
        raise ParameterError(f"k={k} must be smaller than the point count {n}")
    d = ((p - p[query]) ** 2).sum(axis=1)
    idx = np.arange(n)
    pool = idx[idx != query]
    order = np.lexsort((pool, d[pool]))
    return pool[order[:k]]


def galp_loss(scene, anchors, k, neighbors=None):
    """Neighbor-consistency L1 over full label SH vectors around ``anchors``.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``scene.label_sh``.
    ``neighbors`` may be a precomputed :func:`knn_table` with at least ``k``
    columns.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    grad = np.zeros_like(scene.label_sh)
    if len(anchors) == 0:
        return 0.0, grad
    if neighbors is None:
        nb = np.stack([knn(scene.positions, a, k) for a in anchors])
    else:
        nb = np.asarray(neighbors)[anchors, :k]
    n = len(scene)
    flat = scene.label_sh.reshape(n, -1)
    diff = flat[anchors][:, None, :] - flat[nb]        # (A, k, C)
    loss = float(np.abs(diff).sum() / k)
    s = np.sign(diff) / k
    C = flat.shape[1]
    g = grad.reshape(n, -1)
    np.add.at(g, anchors, s.sum(axis=1))
    cols = (nb.reshape(-1, 1) * C + np.arange(C)).ravel()
    g -= np.bincount(cols, weights=s.ravel(), minlength=n * C).reshape(n, C)
    return loss, grad


@dataclass
class GalpConfig:
    steps: int = 1000
    k_anchors: int = 1024
    k_neighbors: int = 8
    w_render: float = 1.0
    w_galp: float = 0.5
    lr: float = 0.025
    lr_rest_divisor: float = 20.0
    resample_interval: int = 100
    galp_warmup: int = 300          # render-only steps before the first anchor draw
    anchor_mode: str = "softness"   # or "random"
    n_directions: int = DEFAULT_DIRECTIONS
    seed: int = 0


@dataclass
class GalpResult:
    label_sh: np.ndarray
    history: list = field(default_factory=list)   # (step, SoftnessReport)
    log: list = field(default_factory=list)       # dict per step


def _check_views(views):
    if not views:
        raise ParameterError("at least one view is required")
    for cam, seg in views:
        if seg.shape != (cam.height, cam.width):
            raise ParameterError(f"pseudo map {seg.shape} does not match camera {(cam.height, cam.width)}")


def optimize_labels(scene, views, palette, config=None, callback=None):
    """Fit ``scene.label_sh`` to pseudo maps with the anchor consistency term.

    ``views`` is a sequence of ``(Camera, SegMap2D)``. The scene is not
    modified; the fitted coefficients are returned in the result.
    """
    config = config or GalpConfig()
    _check_views(views)
    if scene.gt_part is not None and len(scene.gt_part) and scene.gt_part.max() >= len(palette):
        raise ParameterError("scene part labels exceed the palette size")
    if config.anchor_mode not in ("softness", "random"):
        raise ParameterError(f"unknown anchor mode {config.anchor_mode!r}")

    work = scene.copy()
    result = GalpResult(work.label_sh)
    if config.steps <= 0:
        return result
    # separate streams so the anchor mode never changes the view sequence
    rng = np.random.default_rng(config.seed)
    anchor_rng = np.random.default_rng([config.seed, 1])
    n = len(work)
    directions = fibonacci_sphere(config.n_directions)
    use_galp = config.w_galp > 0 and n > config.k_neighbors
    neighbors = knn_table(work.positions, config.k_neighbors) if use_galp else None
    n_anchors = min(config.k_anchors, n)
    lr = sh_learning_rates(work.label_sh.shape[1], config.lr, config.lr_rest_divisor)
    opt = Adam(lr)
    bg = palette.background_color
    anchors = np.zeros(0, dtype=np.int64)
    coeff_count = work.label_sh[0].size

    for step in range(config.steps):
        galp_on = use_galp and step >= config.galp_warmup
        if galp_on and (step - config.galp_warmup) % config.resample_interval == 0:
            report = compute_softness(work, palette, directions)
            result.history.append((step, report))
            if config.anchor_mode == "softness":
                anchors = sample_anchors(report.softness, n_anchors)
            else:
                anchors = np.sort(anchor_rng.choice(n, size=2 * (n_anchors // 2), replace=False))
        cam, seg = views[rng.integers(len(views))]
        out = render(work, cam, "label", bg)
        l_render, g_img = masked_l1_image(out.image, seg.image, seg.confidence)
        grad = render_backward(work, cam, "label", config.w_render * g_img, forward=out).d_label_sh
        l_galp = 0.0
        if galp_on:
            # mean per anchor and per coefficient keeps the term on the scale of
            # the per-pixel render loss
            l_galp, g_galp = galp_loss(work, anchors, config.k_neighbors, neighbors)
            scale = 1.0 / (len(anchors) * coeff_count)
            l_galp *= scale
            grad = grad + (config.w_galp * scale) * g_galp
        opt.step("label_sh", work.label_sh, grad)
        entry = {"step": step, "l_render": l_render, "l_galp": l_galp,
                 "total": config.w_render * l_render + config.w_galp * l_galp}
        result.log.append(entry)
        if callback is not None:
            callback(step, work, entry)
    return result


def extract_mask3d(scene, palette, target, opacity_threshold=0.1, directions=None):
    """Hard per-Gaussian labels by cosine argmax and the selection for ``target``.

    ``target`` is a palette index or label name.
    """
    if isinstance(target, str):
        target = palette.index(target)
    if not 0 <= target < len(palette):
        raise ParameterError(f"target {target} not in palette")
    if len(scene) == 0:
        return Mask3D(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool), target)
    _, rbar = label_variance(scene, directions)
    cos, _ = cosine_to_palette(rbar, palette)
    assignment = np.argmax(cos, axis=1)
    selected = (assignment == target) & (sigmoid(scene.opacities) >= opacity_threshold)
    return Mask3D(assignment, selected, target)


def render_mask2d(scene, mask3d, camera, threshold=0.5):
    """Binary image mask from the accumulated opacity of the selected Gaussians alone."""
    sub = scene.subset(np.asarray(mask3d.selected, dtype=bool))
    alpha = render(sub, camera, "label").alpha
    return (alpha >= threshold).astype(np.float64)
