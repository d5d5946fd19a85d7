"""Synthetic part-labelled scenes, camera rigs and corrupted pseudo maps."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .galp import SegMap2D
from .rasterizer import render
from .scene import Camera, GaussianScene, LabelPalette, logit
from .sh import constant_block, num_coeffs, rgb_to_dc

PRIMITIVES = ("sphere", "ellipsoid", "box-shell")

# Label colors handed out to parts in order. Assignment is by cosine
# similarity, so the background color is kept orthogonal to the first parts
# and to their mixtures.
PART_COLORS = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (1.0, 1.0, 0.0),
    (1.0, 0.0, 0.6),
    (0.0, 1.0, 0.6),
    (0.6, 0.3, 0.0),
)
BACKGROUND_COLOR = (0.0, 0.0, 1.0)

@dataclass
class PartSpec:
    name: str
    primitive: str = "sphere"
    center: tuple = (0.0, 0.0, 0.0)
    extent: tuple = (0.5, 0.5, 0.5)   # radius (sphere: first entry), semi-axes, or box half-sizes
    count: int = 500
    color: tuple = (0.7, 0.7, 0.7)
    fill: str = "volume"              # or "surface"; box-shell is always a surface


@dataclass
class SceneSpec:
    parts: list
    global_scale: float = 1.0
    size_factor: float = 0.7
    opacity: float = 0.8
    color_degree: int = 3
    label_degree: int = 3
    carve: bool = False   # drop Gaussians lying inside another part's primitive
    seed: int = 0

    def __post_init__(self):
        self.parts = [p if isinstance(p, PartSpec) else PartSpec(**p) for p in self.parts]
        if len(self.parts) < 2:
            raise ValueError("a scene spec needs at least two parts")
        for p in self.parts:
            if p.count <= 0:
                raise ValueError(f"part {p.name!r} has non-positive Gaussian count")
            if p.primitive not in PRIMITIVES:
                raise ValueError(f"unknown primitive {p.primitive!r}")


@dataclass
class CorruptionSpec:
    label_flip_rate: float = 0.0
    boundary_jitter: int = 0
    view_dropout_rate: float = 0.0
    merge_pairs: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        for name in ("label_flip_rate", "view_dropout_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.boundary_jitter < 0:
            raise ValueError("boundary_jitter must be non-negative")


def default_palette(spec):
    """Background first, then one label per part in spec order (matches ``gt_part``)."""
    if len(spec.parts) > len(PART_COLORS):
        raise ValueError(f"at most {len(PART_COLORS)} parts have default label colors")
    labels = [("background", BACKGROUND_COLOR)]
    labels += [(p.name, PART_COLORS[i]) for i, p in enumerate(spec.parts)]
    return LabelPalette(labels, background=0)


def _unit_ball(rng, n):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * rng.random(n)[:, None] ** (1.0 / 3.0)


def _unit_sphere(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _box_surface(rng, n, half):
    half = np.asarray(half, dtype=np.float64)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]] * 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    axis = face % 3
    pts[np.arange(n), axis] = np.where(face < 3, 1.0, -1.0)
    return pts * half, 8.0 * areas.sum() / 2.0


def _sample_part(rng, part):
    ext = np.broadcast_to(np.asarray(part.extent, dtype=np.float64), (3,)).copy()
    if part.primitive == "sphere":
        ext[:] = ext[0]
    if part.primitive == "box-shell":
        local, area = _box_surface(rng, part.count, ext)
        spacing = np.sqrt(area / part.count)
    elif part.fill == "surface":
        local = _unit_sphere(rng, part.count) * ext
        # Knud Thomsen approximation of the ellipsoid area
        a, b, c = ext ** 1.6075
        area = 4 * np.pi * ((a * b + a * c + b * c) / 3) ** (1 / 1.6075)
        spacing = np.sqrt(area / part.count)
    else:
        local = _unit_ball(rng, part.count) * ext
        spacing = (4.0 / 3.0 * np.pi * np.prod(ext) / part.count) ** (1.0 / 3.0)
    return local + np.asarray(part.center, dtype=np.float64), spacing


def _inside(part, points):
    ext = np.broadcast_to(np.asarray(part.extent, dtype=np.float64), (3,)).copy()
    if part.primitive == "sphere":
        ext[:] = ext[0]
    local = (points - np.asarray(part.center, dtype=np.float64)) / ext
    if part.primitive == "box-shell":
        return np.all(np.abs(local) < 1.0, axis=1)
    return (local ** 2).sum(axis=1) < 1.0


def make_scene(spec):
    """Sample Gaussians on/in each part primitive; labels start uniform gray.

    With ``spec.carve`` the samples of each part that fall inside another
    part are removed, leaving only the outer surface of overlapping parts.
    """
    rng = np.random.default_rng(spec.seed)
    pos, scl, col, gt = [], [], [], []
    for i, part in enumerate(spec.parts):
        p, spacing = _sample_part(rng, part)
        sigma = spacing * spec.size_factor * rng.uniform(0.9, 1.1, size=(part.count, 3))
        if spec.carve:
            keep = ~np.any([_inside(o, p) for j, o in enumerate(spec.parts) if j != i], axis=0)
            p, sigma = p[keep], sigma[keep]
        pos.append(p)
        scl.append(np.log(sigma * spec.global_scale))
        col.append(np.broadcast_to(np.asarray(part.color, dtype=np.float64), (len(p), 3)))
        gt.append(np.full(len(p), i + 1, dtype=np.int64))
    positions = np.concatenate(pos) * spec.global_scale
    n = len(positions)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    color_sh = np.zeros((n, num_coeffs(spec.color_degree), 3))
    color_sh[:, 0] = rgb_to_dc(np.concatenate(col))
    return GaussianScene(
        positions=positions,
        scales=np.concatenate(scl),
        rotations=q,
        opacities=np.full(n, float(logit(spec.opacity))),
        color_sh=color_sh,
        label_sh=np.zeros((n, num_coeffs(spec.label_degree), 3)),
        gt_part=np.concatenate(gt),
    )


def camera_rig(n_ring=16, n_top=4, radius=3.0, elevation_deg=20.0, top_elevation_deg=75.0,
               width=64, height=64, fov_deg=50.0, target=(0.0, 0.0, 0.0)):
    """Ring of cameras at one elevation plus a few near-top-down ones, all looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for n, elev in ((n_ring, elevation_deg), (n_top, top_elevation_deg)):
        for k in range(n):
            az = 2 * np.pi * k / n
            e = np.radians(elev)
            eye = target + radius * np.array([np.cos(e) * np.cos(az), np.cos(e) * np.sin(az), np.sin(e)])
            cams.append(Camera.look_at(eye, target, width=width, height=height, fov_deg=fov_deg))
    return cams


def snap_to_palette(image, palette):
    """Index of the nearest palette color per pixel (ties to the lower index)."""
    image = np.asarray(image, dtype=np.float64)
    d = ((image[..., None, :] - palette.colors) ** 2).sum(axis=-1)
    return np.argmin(d, axis=-1)


def gt_views(scene, cameras, palette):
    """Ground-truth label maps rendered with every Gaussian painted its part color."""
    if scene.gt_part is None:
        raise ValueError("scene has no ground-truth part labels")
    painted = scene.copy()
    painted.label_sh = constant_block(palette.colors[scene.gt_part], scene.label_degree, len(scene))
    maps = []
    for cam in cameras:
        img = render(painted, cam, "label", palette.background_color).image
        maps.append(SegMap2D(palette.colors[snap_to_palette(img, palette)]))
    return maps


def _disk(radius):
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def _label_index(palette, key):
    return palette.index(key) if isinstance(key, str) else int(key)


def corrupt_maps(maps, spec, palette):
    """Apply merges, boundary jitter, label flips and per-part view dropout.

    Dropped pixels are repainted background with zero confidence. All
    randomness comes from ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    L = len(palette)
    bg = palette.background
    parts = [j for j in range(L) if j != bg]
    merges = [(_label_index(palette, a), _label_index(palette, b)) for a, b in spec.merge_pairs]
    out = []
    for seg in maps:
        idx = snap_to_palette(seg.image, palette)
        conf = seg.confidence.copy()
        for a, b in merges:
            idx[idx == b] = a
        if spec.boundary_jitter > 0:
            for j in rng.permutation(parts):
                radius = int(rng.integers(0, spec.boundary_jitter + 1))
                m = idx == j
                if radius and m.any():
                    # the boundary moves into neighbouring parts only; silhouettes stay put
                    grow = ndimage.binary_dilation(m, structure=_disk(radius)) & (idx != bg)
                    idx[grow] = j
        if spec.label_flip_rate > 0:
            flip = rng.random(idx.shape) < spec.label_flip_rate
            shift = rng.integers(1, L, size=idx.shape)
            idx = np.where(flip, (idx + shift) % L, idx)
        if spec.view_dropout_rate > 0:
            for j in parts:
                if rng.random() < spec.view_dropout_rate:
                    m = idx == j
                    idx[m] = bg
                    conf[m] = 0.0
        out.append(SegMap2D(palette.colors[idx], conf))
    return out
