"""Segmentation and image-quality metrics."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PSNR_CAP = 99.0


class DegenerateInputError(ValueError):
    """Input too small or otherwise unsuitable for the metric."""


@dataclass
class IoUReport:
    per_label: list      # IoU per label, None where the label is absent from both
    miou: float

    def to_json(self):
        return {"per_label": self.per_label, "miou": self.miou}


def _iou(pred, gt, n_labels):
    per = []
    for j in range(n_labels):
        p, g = pred == j, gt == j
        union = np.count_nonzero(p | g)
        per.append(None if union == 0 else np.count_nonzero(p & g) / union)
    defined = [v for v in per if v is not None]
    return IoUReport(per, float(np.mean(defined)) if defined else float("nan"))


def miou_3d(pred, gt, n_labels):
    """Per-label IoU of hard per-Gaussian assignments; absent labels are skipped."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    return _iou(pred, gt, n_labels)


def miou_2d(pred, gt, palette):
    """mIoU of two label-color maps after snapping pixels to the palette."""
    from .synth import snap_to_palette

    a = getattr(pred, "image", pred)
    b = getattr(gt, "image", gt)
    if np.shape(a) != np.shape(b):
        raise ValueError(f"size mismatch: {np.shape(a)} vs {np.shape(b)}")
    return _iou(snap_to_palette(a, palette).ravel(), snap_to_palette(b, palette).ravel(), len(palette))


def _gaussian_window():
    r = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    w = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    return w / w.sum()


def _filter_valid(x, w):
    h = len(w) // 2
    y = correlate1d(x, w, axis=0, mode="constant")
    y = correlate1d(y, w, axis=1, mode="constant")
    return y[h:-h, h:-h]


def ssim(a, b, data_range=1.0):
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise DegenerateInputError(f"images smaller than the {SSIM_WINDOW}px SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = _gaussian_window()
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def psnr(a, b):
    """PSNR in dB for images in [0, 1]; identical images report ``PSNR_CAP``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"size mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))
