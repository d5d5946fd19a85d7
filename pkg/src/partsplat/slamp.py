"""Scheduled latent mixing over a rectified-flow sampler.

Time runs from 0 (clean) to 1 (noise). :func:`invert` integrates the
controlled forward ODE from a clean latent toward a noise target;
:func:`scheduled_edit` integrates back to 0 under a conditioned velocity
model while repeatedly blending the region outside the edit mask toward the
original latent, with a sharp increase of the blend weight for the last
``t_s`` steps.
"""

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .metrics import DegenerateInputError, ssim

UNCONDITIONAL = None


class SingularTimeError(ValueError):
    """A target velocity was requested at a time where it divides by zero."""


class ParameterError(ValueError):
    pass


@dataclass
class LatentField:
    grid: np.ndarray   # (H, W, C)
    t: float = 0.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim == 2:
            self.grid = self.grid[..., None]
        if self.grid.ndim != 3 or self.grid.shape[2] < 1:
            raise ValueError(f"latent grid must be HxWxC, got {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("latent grid has non-finite entries")

    @property
    def shape(self):
        return self.grid.shape


def _grid(z):
    return z.grid if isinstance(z, LatentField) else np.asarray(z, dtype=np.float64)


class VelocityModel(Protocol):
    def evaluate(self, z, t, condition):
        """Velocity with the same shape as ``z`` (an ``(H, W, C)`` array)."""


class ZeroVelocity:
    def evaluate(self, z, t, condition):
        return np.zeros_like(z)


class ConstantVelocity:
    def __init__(self, velocity):
        self.velocity = np.asarray(velocity, dtype=np.float64)

    def evaluate(self, z, t, condition):
        return np.broadcast_to(self.velocity, z.shape).copy()


class LinearFlow:
    """Straight-path rectified flow between two fixed fields: ``dz/dt = noise - clean``."""

    def __init__(self, clean, noise):
        self.clean = _grid(clean)
        self.noise = _grid(noise)

    def evaluate(self, z, t, condition):
        return self.noise - self.clean


class TargetFlow:
    """Flow whose sampling trajectory ends at ``target``: ``v = (z - target) / t``.

    Defined for ``t > 0`` only. Useful as a stand-in for an edit-conditioned
    model in demos.
    """

    def __init__(self, target):
        self.target = _grid(target)

    def evaluate(self, z, t, condition):
        if t <= 0:
            raise SingularTimeError("TargetFlow is singular at t = 0")
        return (z - self.target) / t


class PartialTargetFlow:
    """Flow toward ``target`` whose clean estimate keeps a smoothed share of the current latent.

    The clean prediction is ``keep * blur(z) + (1 - keep) * target`` with a
    spatial Gaussian blur of width ``sigma`` pixels. Information therefore
    flows between neighbouring pixels and from earlier steps to the end, as
    with a real denoiser, and the blend schedule visibly matters.
    ``keep = 0`` reduces to :class:`TargetFlow`.
    """

    def __init__(self, target, keep=0.5, sigma=2.0):
        self.target = _grid(target)
        self.keep = float(keep)
        self.sigma = float(sigma)

    def evaluate(self, z, t, condition):
        if t <= 0:
            raise SingularTimeError("PartialTargetFlow is singular at t = 0")
        smooth = ndimage.gaussian_filter(z, sigma=(self.sigma, self.sigma, 0.0), mode="nearest")
        clean = self.keep * smooth + (1.0 - self.keep) * self.target
        return (z - clean) / t


@dataclass
class BlendSchedule:
    alpha_base: float = 0.1
    alpha_last: float = 1.0
    t_s: int = 7
    timesteps: tuple = None

    def __post_init__(self):
        if self.timesteps is None:
            self.timesteps = default_timesteps()
        self.timesteps = tuple(float(t) for t in self.timesteps)
        ts = np.asarray(self.timesteps)
        if not 0.0 <= self.alpha_base <= self.alpha_last <= 1.0:
            raise ParameterError("need 0 <= alpha_base <= alpha_last <= 1")
        if len(ts) == 0 or np.any(np.diff(ts) >= 0) or ts[-1] < 0 or ts[0] > 1:
            raise ParameterError("timesteps must be strictly decreasing within [0, 1]")
        if not 0 <= self.t_s <= len(ts):
            raise ParameterError(f"t_s={self.t_s} outside [0, {len(ts)}]")

    def blend_weight(self, i):
        """Blend coefficient for 1-based step ``i``: the last ``t_s`` steps use ``alpha_last``."""
        return self.alpha_last if i > len(self.timesteps) - self.t_s else self.alpha_base


def default_timesteps(n=28):
    """``n`` uniform sampling times from 1 down to ``1/n``; the sampler ends at 0."""
    return tuple(np.linspace(1.0, 0.0, n + 1)[:-1])


def default_eta(n=28, decay_fraction=0.25):
    """Controller strength decaying linearly from 1 to 0 over the first steps, then 0."""
    k = max(1, int(np.ceil(decay_fraction * n)))
    eta = np.zeros(n)
    eta[:k] = np.linspace(1.0, 0.0, k) if k > 1 else 1.0
    return eta


def blend_step(z_t, z_orig, F_t, mask2d):
    """Pull ``z_t`` toward ``z_orig`` by ``F_t`` outside the mask; the mask region is untouched."""
    a, b = _grid(z_t), _grid(z_orig)
    m = np.asarray(mask2d, dtype=np.float64)
    if a.shape != b.shape or m.shape[:2] != a.shape[:2]:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, mask {m.shape}")
    if not 0.0 <= F_t <= 1.0:
        raise ParameterError("blend coefficient must lie in [0, 1]")
    if m.ndim == 2:
        m = m[..., None]
    inv = F_t * (1.0 - m)
    out = a * (1.0 - inv) + b * inv
    return LatentField(out, z_t.t if isinstance(z_t, LatentField) else 0.0)


def invert(z0, model, noise_target, gamma=0.5, timesteps=None):
    """Controlled forward ODE from the clean latent toward ``noise_target``.

    Each Euler step blends the model velocity (unconditional) with the
    straight-line velocity toward the noise target; ``gamma = 1`` follows the
    straight line exactly.
    """
    if timesteps is None:
        timesteps = np.linspace(0.0, 1.0, len(default_timesteps()) + 1)
    ts = np.asarray(timesteps, dtype=np.float64)
    if len(ts) < 2 or np.any(np.diff(ts) <= 0) or ts[0] < 0 or ts[-1] > 1:
        raise ParameterError("inversion timesteps must be strictly increasing within [0, 1]")
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0, 1]")
    z = _grid(z0).copy()
    n = _grid(noise_target)
    if n.shape != z.shape:
        raise ValueError("noise target shape does not match the latent")
    for t_curr, t_next in zip(ts[:-1], ts[1:]):
        if t_curr >= 1.0:
            raise SingularTimeError("target velocity is singular at t = 1")
        v_target = (n - z) / (1.0 - t_curr)
        v_pred = model.evaluate(z, float(t_curr), UNCONDITIONAL) if gamma < 1.0 else 0.0
        z = z + (t_next - t_curr) * (gamma * v_target + (1.0 - gamma) * v_pred)
    return LatentField(z, float(ts[-1]))


def edit_velocity(z, z_orig, t, eta, model, condition):
    """Model velocity steered toward the original latent by ``eta``."""
    v_pred = model.evaluate(z, t, condition)
    if eta == 0:
        return v_pred
    if t <= 0:
        raise SingularTimeError("editing target velocity is singular at t = 0")
    v_target = (z - z_orig) / t
    return v_pred + eta * (v_target - v_pred)


def scheduled_edit(z_inverted, z_orig, model, condition, eta_values, schedule, mask2d,
                   blend=True, trajectory=None):
    """Sample from ``z_inverted`` down to t = 0 with masked latent mixing.

    Sampling times are ``schedule.timesteps``; each step integrates to the next
    entry, the last one to 0. A trailing timestep of exactly 0 is a terminal
    point: no velocity is evaluated there, only the blend. ``blend=False``
    disables mixing (plain sampler). If ``trajectory`` is a list, the latent
    after every step is appended to it.
    """
    ts = schedule.timesteps
    eta_values = np.asarray(eta_values, dtype=np.float64)
    if len(eta_values) != len(ts):
        raise ParameterError(f"{len(eta_values)} eta values for {len(ts)} timesteps")
    z = _grid(z_inverted).copy()
    zo = _grid(z_orig)
    mask2d = np.asarray(mask2d, dtype=np.float64)
    if not np.all((mask2d == 0) | (mask2d == 1)):
        raise ParameterError("edit mask must be binary")
    for i, t in enumerate(ts, start=1):
        t_next = ts[i] if i < len(ts) else 0.0
        if t_next != t:
            v = edit_velocity(z, zo, t, eta_values[i - 1], model, condition)
            z = z + (t_next - t) * v
        if blend:
            z = blend_step(z, zo, schedule.blend_weight(i), mask2d).grid
        if trajectory is not None:
            trajectory.append(LatentField(z.copy(), t_next))
    return LatentField(z, 0.0)


def select_ts(ts_values, ssim_values, tol=0.01):
    """Largest candidate whose SSIM is within ``tol`` of the best SSIM (NaNs ignored)."""
    s = np.asarray(ssim_values, dtype=np.float64)
    ok = np.isfinite(s)
    if not ok.any():
        return None
    best = s[ok].max()
    qualifying = [t for t, v in zip(ts_values, s) if np.isfinite(v) and v >= best - tol]
    return max(qualifying)


@dataclass
class SweepResult:
    ts_values: list
    ssim: list
    selected: int | None
    degenerate: bool = False


def identity_decode(z):
    return _grid(z)


def ts_sweep(outputs, original, decode=identity_decode, tol=0.01):
    """SSIM of each decoded output against ``original`` and the selected ``t_s``.

    ``outputs`` maps candidate ``t_s`` values to edited latents. Images too
    small for SSIM produce NaN entries and ``degenerate=True``.
    """
    if len(outputs) < 2:
        raise ParameterError("a t_s sweep needs at least two candidates")
    ts_values = sorted(outputs)
    original = _grid(original)
    values = []
    degenerate = False
    for t_s in ts_values:
        try:
            values.append(ssim(decode(outputs[t_s]), original))
        except DegenerateInputError:
            values.append(float("nan"))
            degenerate = True
    return SweepResult(ts_values, values, select_ts(ts_values, values, tol), degenerate)


def run_sweep(z_inverted, z_orig, model, condition, eta_values, schedule, mask2d, candidates):
    """Edited latents for each candidate ``t_s`` (all other schedule fields shared)."""
    out = {}
    for t_s in candidates:
        sched = BlendSchedule(schedule.alpha_base, schedule.alpha_last, int(t_s), schedule.timesteps)
        out[int(t_s)] = scheduled_edit(z_inverted, z_orig, model, condition, eta_values, sched, mask2d)
    return out
