"""Masked editing of Gaussian colors under a two-term objective.

The objective combines a score-distillation term, supplied by a pluggable
:class:`GradientProvider`, with an L1 pull toward per-view anchor images
(typically SLaMP outputs). Both terms act only inside the rendered target
mask, and gradients on Gaussians outside the 3D target mask are discarded,
so the rest of the scene is left bit-for-bit untouched.

Provider convention: ``score_grad`` returns the direction in which the
rendered image should move (the SDS update direction). The loss gradient fed
to the rasterizer is its negation.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .galp import Mask3D, ParameterError, render_mask2d
from .optim import SGD, Adam, sh_learning_rates
from .rasterizer import GradBuffer, RasterizerError, masked_l1_image, render, render_backward
from .sh import rgb_to_dc

NEUTRAL_GRAY = (0.5, 0.5, 0.5)
LOG_COLUMNS = ("step", "view", "l_sds", "l_anchor", "total")


@dataclass(frozen=True)
class EditCondition:
    """Opaque conditioning handed to providers: an edit prompt and the view index."""
    prompt: str = ""
    view: int = 0


class GradientProvider:
    def score_grad(self, rendered, condition, step):
        raise NotImplementedError


class ZeroProvider(GradientProvider):
    def score_grad(self, rendered, condition, step):
        return np.zeros_like(rendered)


class MatchTargetProvider(GradientProvider):
    """Points every rendered pixel at a per-view target image: ``target - rendered``."""

    def __init__(self, targets):
        self.targets = targets if isinstance(targets, dict) else dict(enumerate(targets))

    def score_grad(self, rendered, condition, step):
        view = condition.view if isinstance(condition, EditCondition) else 0
        target = np.asarray(self.targets[view], dtype=np.float64)
        if target.shape != rendered.shape:
            raise RasterizerError(f"target {target.shape} does not match render {rendered.shape}")
        return target - rendered


class RandomDirectionProvider(GradientProvider):
    """Unit-scale Gaussian noise images, reproducible from ``(seed, step)``."""

    def __init__(self, seed=0, scale=1.0):
        self.seed = seed
        self.scale = scale

    def score_grad(self, rendered, condition, step):
        rng = np.random.default_rng([self.seed, int(step)])
        return self.scale * rng.standard_normal(rendered.shape)


@dataclass
class EditConfig:
    lambda1: float = 0.1
    lambda2: float = 1.0
    steps: int = 300
    neutral: tuple = NEUTRAL_GRAY
    optimizer: str = "adam"       # or "sgd"
    lr: float = 0.0125            # color DC; higher orders use lr / lr_rest_divisor
    lr_rest_divisor: float = 20.0
    opacity_lr: float = 0.05
    update_opacity: bool = False
    mask_threshold: float = 0.5
    background: tuple = (1.0, 1.0, 1.0)
    prompt: str = ""
    orbit: dict = field(default_factory=dict)   # camera_rig keyword arguments for CLI runs
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ParameterError("need non-negative weights with lambda1 + lambda2 > 0")
        if self.steps < 0:
            raise ParameterError("steps must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


def _selection(scene, mask3d):
    sel = np.asarray(mask3d.selected if isinstance(mask3d, Mask3D) else mask3d, dtype=bool)
    if sel.shape != (len(scene),):
        raise ParameterError(f"mask covers {sel.shape} Gaussians, scene has {len(scene)}")
    return sel


def prior_removal(scene, mask3d, neutral=NEUTRAL_GRAY):
    """Copy of ``scene`` whose selected Gaussians show the constant ``neutral`` color."""
    sel = _selection(scene, mask3d)
    out = scene.copy()
    if sel.any():
        out.color_sh[sel] = 0.0
        out.color_sh[sel, 0, :] = rgb_to_dc(np.asarray(neutral, dtype=np.float64))
    return out


def freeze_complement(grad, mask3d):
    """Zero every gradient row belonging to a Gaussian outside the selection."""
    sel = np.asarray(mask3d.selected if isinstance(mask3d, Mask3D) else mask3d, dtype=bool)
    keep = sel.astype(grad.d_color_sh.dtype)
    return GradBuffer(grad.d_color_sh * keep[:, None, None],
                      grad.d_label_sh * keep[:, None, None],
                      grad.d_opacity * keep)


def make_optimizer(config, n_coeffs):
    if config.optimizer == "sgd":
        return SGD(config.lr), config.lr
    return Adam(config.lr), sh_learning_rates(n_coeffs, config.lr, config.lr_rest_divisor)


@dataclass
class StepLog:
    step: int
    view: int
    l_sds: float
    l_anchor: float
    total: float

    def as_row(self):
        return [self.step, self.view, self.l_sds, self.l_anchor, self.total]


def edit_gradients(scene, camera, provider, anchor, mask2d, mask3d, config, condition=None, step=0):
    """Frozen parameter gradients for one view and the two loss values."""
    out = render(scene, camera, "color", config.background)
    anchor = np.asarray(anchor, dtype=np.float64)
    mask2d = np.asarray(mask2d, dtype=np.float64)
    if anchor.shape != out.image.shape or mask2d.shape != out.image.shape[:2]:
        raise RasterizerError(f"anchor {anchor.shape} / mask {mask2d.shape} do not match render {out.image.shape}")
    l_anchor, g_anchor = masked_l1_image(out.image, anchor, mask2d)
    norm = max(float(mask2d.sum()), 1.0) * out.image.shape[2]
    upstream = config.lambda2 * g_anchor
    l_sds = 0.0
    if config.lambda1 > 0:
        score = np.asarray(provider.score_grad(out.image, condition, step), dtype=np.float64)
        if score.shape != out.image.shape:
            raise RasterizerError(f"provider returned {score.shape}, expected {out.image.shape}")
        m = mask2d[..., None]
        l_sds = float((m * np.abs(score)).sum() / norm)
        upstream = upstream - config.lambda1 * m * score / norm
    grads = render_backward(scene, camera, "color", upstream, forward=out, background=config.background)
    grads = freeze_complement(grads, mask3d)
    return grads, l_sds, l_anchor


def regularized_sds_step(scene, camera, provider, anchor, mask2d, mask3d, config,
                         optimizer=None, lr=None, condition=None, step=0):
    """One in-place update of the selected Gaussians' color SH (and opacity if enabled).

    Returns ``(scene, l_sds, l_anchor)``. Pass a persistent ``optimizer`` (see
    :func:`make_optimizer`) to keep adaptive moments across steps.
    """
    if optimizer is None:
        optimizer, lr = make_optimizer(config, scene.color_sh.shape[1])
    sel = _selection(scene, mask3d)
    grads, l_sds, l_anchor = edit_gradients(scene, camera, provider, anchor, mask2d, sel,
                                            config, condition, step)
    # updates are applied to selected rows only, so frozen rows are never written
    rows = np.flatnonzero(sel)
    if rows.size:
        color = scene.color_sh[rows]
        optimizer.step("color_sh", color, grads.d_color_sh[rows], lr)
        scene.color_sh[rows] = color
        if config.update_opacity:
            opac = scene.opacities[rows]
            optimizer.step("opacity", opac, grads.d_opacity[rows], config.opacity_lr)
            scene.opacities[rows] = opac
    return scene, l_sds, l_anchor


@dataclass
class EditResult:
    scene: object
    log: list
    masks2d: list


def edit_pipeline(scene, target, views, anchors, provider, config=None):
    """Prior removal followed by ``config.steps`` regularized steps cycling through ``views``.

    ``target`` is a :class:`Mask3D` (or boolean selection); ``anchors`` holds
    one image per view, as a list or a dict keyed by view index.
    """
    config = config or EditConfig()
    if not views:
        raise ParameterError("at least one view is required")
    missing = [i for i in range(len(views)) if (i not in anchors if isinstance(anchors, dict)
                                                else i >= len(anchors))]
    if missing:
        raise ParameterError(f"missing anchor image for views {missing}")
    sel = _selection(scene, target)
    work = prior_removal(scene, sel, config.neutral)
    mask3d = Mask3D(np.zeros(len(scene), dtype=np.int64), sel, -1)
    masks2d = [render_mask2d(work, mask3d, cam, config.mask_threshold) for cam in views]
    optimizer, lr = make_optimizer(config, work.color_sh.shape[1])
    log = []
    for step in range(config.steps):
        v = step % len(views)
        cond = EditCondition(config.prompt, v)
        _, l_sds, l_anchor = regularized_sds_step(work, views[v], provider, anchors[v], masks2d[v], sel,
                                                  config, optimizer, lr, cond, step)
        log.append(StepLog(step, v, l_sds, l_anchor, config.lambda1 * l_sds + config.lambda2 * l_anchor))
    return EditResult(work, log, masks2d)


def write_loss_log(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for entry in log:
            w.writerow(entry.as_row())
