"""Real spherical harmonics used for view-dependent color and label fields.

Coefficient blocks are arrays of shape ``(..., (D+1)**2, 3)``. Basis ordering
and signs follow the usual Gaussian-splatting tables (index ``l*l + l + m``
with ``m`` running from ``-l`` to ``l``, Condon-Shortley phase included).
"""

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
SH_C4 = (
    2.5033429417967046,
    -1.7701307697799304,
    0.9461746957575601,
    -0.6690465435572892,
    0.10578554691520431,
    -0.6690465435572892,
    0.47308734787878004,
    -1.7701307697799304,
    0.6258357354491761,
)

MAX_DEGREE = 4

# added to the evaluated sum so that all-zero coefficients mean mid gray
DC_OFFSET = 0.5


class SHShapeError(ValueError):
    """Raised when a coefficient block does not match a supported degree."""


def num_coeffs(degree):
    return (degree + 1) ** 2


def degree_from_num_coeffs(n):
    degree = int(round(np.sqrt(n))) - 1
    if degree < 0 or num_coeffs(degree) != n or degree > MAX_DEGREE:
        raise SHShapeError(f"{n} coefficients per channel is not a supported SH block")
    return degree


def sh_basis(degree, dirs):
    """Evaluate the real SH basis at unit directions.

    Parameters
    ----------
    degree : int
        Maximum SH degree, 0 to 4.
    dirs : array_like, shape (..., 3)
        Unit vectors.

    Returns
    -------
    ndarray, shape (..., (degree+1)**2)
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise SHShapeError(f"SH degree {degree} outside [0, {MAX_DEGREE}]")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (num_coeffs(degree),))
    out[..., 0] = SH_C0
    if degree < 1:
        return out
    out[..., 1] = -SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = -SH_C1 * x
    if degree < 2:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[..., 4] = SH_C2[0] * xy
    out[..., 5] = SH_C2[1] * yz
    out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = SH_C2[3] * xz
    out[..., 8] = SH_C2[4] * (xx - yy)
    if degree < 3:
        return out
    out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = SH_C3[1] * xy * z
    out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    out[..., 14] = SH_C3[5] * z * (xx - yy)
    out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    if degree < 4:
        return out
    out[..., 16] = SH_C4[0] * xy * (xx - yy)
    out[..., 17] = SH_C4[1] * yz * (3.0 * xx - yy)
    out[..., 18] = SH_C4[2] * xy * (7.0 * zz - 1.0)
    out[..., 19] = SH_C4[3] * yz * (7.0 * zz - 3.0)
    out[..., 20] = SH_C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
    out[..., 21] = SH_C4[5] * xz * (7.0 * zz - 3.0)
    out[..., 22] = SH_C4[6] * (xx - yy) * (7.0 * zz - 1.0)
    out[..., 23] = SH_C4[7] * xz * (xx - 3.0 * yy)
    out[..., 24] = SH_C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out


def _check_block(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim < 2 or coeffs.shape[-1] != 3:
        raise SHShapeError(f"expected (..., K, 3) coefficient block, got shape {coeffs.shape}")
    return coeffs, degree_from_num_coeffs(coeffs.shape[-2])


def sh_eval_raw(coeffs, dirs):
    """SH sum plus the DC offset, without clamping.

    ``coeffs`` has shape ``(..., K, 3)`` and ``dirs`` shape ``(..., 3)``;
    leading dimensions broadcast.
    """
    coeffs, degree = _check_block(coeffs)
    basis = sh_basis(degree, dirs)
    return np.einsum("...k,...kc->...c", basis, coeffs) + DC_OFFSET


def sh_eval(coeffs, direction):
    """Evaluate an SH block in ``direction`` and clamp the RGB result to [0, 1]."""
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("direction must have unit norm")
    return np.clip(sh_eval_raw(coeffs, direction), 0.0, 1.0)


def rgb_to_dc(rgb):
    """Coefficient that makes a degree-0 block evaluate to ``rgb``."""
    return (np.asarray(rgb, dtype=np.float64) - DC_OFFSET) / SH_C0


def constant_block(rgb, degree, n=None):
    """SH block that evaluates to ``rgb`` in every direction.

    With ``n`` given, ``rgb`` may be a single color or ``(n, 3)`` colors and the
    result has shape ``(n, K, 3)``.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if n is None:
        block = np.zeros((num_coeffs(degree), 3))
        block[0] = rgb_to_dc(rgb)
        return block
    block = np.zeros((n, num_coeffs(degree), 3))
    block[:, 0] = rgb_to_dc(np.broadcast_to(rgb, (n, 3)))
    return block


def fibonacci_sphere(n):
    """``n`` near-uniform unit directions on a golden-angle spiral."""
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
