"""Gaussian scene, camera and label palette types."""

from dataclasses import dataclass, field, replace

import numpy as np

from .sh import degree_from_num_coeffs, num_coeffs, SHShapeError


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quaternion_to_matrix(q):
    """Rotation matrices from ``(w, x, y, z)`` quaternions (normalized first)."""
    q = normalize_quaternions(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class GaussianScene:
    """Per-Gaussian parameter arrays.

    ``scales`` are log standard deviations and ``opacities`` are pre-sigmoid
    logits. SH blocks have shape ``(N, (D+1)**2, 3)``. ``extras`` carries any
    additional per-Gaussian PLY properties through load/save untouched.
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    color_sh: np.ndarray
    label_sh: np.ndarray
    gt_part: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls, color_degree=3, label_degree=3):
        return cls(
            positions=np.zeros((0, 3)),
            scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacities=np.zeros(0),
            color_sh=np.zeros((0, num_coeffs(color_degree), 3)),
            label_sh=np.zeros((0, num_coeffs(label_degree), 3)),
        )

    @property
    def color_degree(self):
        return degree_from_num_coeffs(self.color_sh.shape[1])

    @property
    def label_degree(self):
        return degree_from_num_coeffs(self.label_sh.shape[1])

    def activated_scales(self):
        return np.exp(self.scales)

    def activated_opacities(self):
        return sigmoid(self.opacities)

    def covariances(self):
        """World-space covariances ``R diag(s^2) R^T``, shape (N, 3, 3)."""
        R = quaternion_to_matrix(self.rotations)
        s = self.activated_scales()
        M = R * s[:, None, :]
        return M @ np.swapaxes(M, 1, 2)

    def copy(self):
        return replace(
            self,
            positions=self.positions.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            color_sh=self.color_sh.copy(),
            label_sh=self.label_sh.copy(),
            gt_part=None if self.gt_part is None else self.gt_part.copy(),
            extras={k: v.copy() for k, v in self.extras.items()},
        )

    def subset(self, index):
        """Scene restricted to ``index`` (boolean mask or integer indices)."""
        return GaussianScene(
            positions=self.positions[index],
            scales=self.scales[index],
            rotations=self.rotations[index],
            opacities=self.opacities[index],
            color_sh=self.color_sh[index],
            label_sh=self.label_sh[index],
            gt_part=None if self.gt_part is None else self.gt_part[index],
            extras={k: v[index] for k, v in self.extras.items()},
        )


def validate_scene(scene):
    """Return a list of invariant violations; empty means the scene is valid.

    Each entry is a dict with ``invariant``, a human-readable ``message`` and,
    for per-Gaussian problems, the offending ``index``.
    """
    report = []
    arrays = {
        "positions": (scene.positions, (3,)),
        "scales": (scene.scales, (3,)),
        "rotations": (scene.rotations, (4,)),
        "opacities": (scene.opacities, ()),
        "color_sh": (scene.color_sh, None),
        "label_sh": (scene.label_sh, None),
    }
    if scene.gt_part is not None:
        arrays["gt_part"] = (scene.gt_part, ())
    for name, value in scene.extras.items():
        arrays[f"extras.{name}"] = (value, ())

    lengths = {name: len(np.asarray(a)) for name, (a, _) in arrays.items()}
    n = lengths["positions"]
    for name, length in lengths.items():
        if length != n:
            report.append({
                "invariant": "equal_length",
                "message": f"{name} has length {length}, positions has {n}",
            })
    structural_ok = True
    for name, (a, tail) in arrays.items():
        a = np.asarray(a)
        if tail is not None and a.shape[1:] != tail:
            structural_ok = False
            report.append({
                "invariant": "shape",
                "message": f"{name} has per-item shape {a.shape[1:]}, expected {tail}",
            })
    for name in ("color_sh", "label_sh"):
        a = np.asarray(arrays[name][0])
        try:
            if a.ndim != 3 or a.shape[2] != 3:
                raise SHShapeError(f"shape {a.shape}")
            degree_from_num_coeffs(a.shape[1])
        except SHShapeError as exc:
            structural_ok = False
            report.append({"invariant": "sh_block_size", "message": f"{name}: {exc}"})
    if report or not structural_ok:
        return report

    qn = np.linalg.norm(scene.rotations, axis=1)
    for i in np.flatnonzero(np.abs(qn - 1.0) > 1e-6):
        report.append({
            "invariant": "unit_quaternion",
            "index": int(i),
            "message": f"rotation {i} has norm {qn[i]:.6g}",
        })
    # logits must be finite so that the sigmoid stays strictly inside (0, 1)
    for i in np.flatnonzero(~np.isfinite(scene.opacities)):
        report.append({
            "invariant": "opacity_range",
            "index": int(i),
            "message": f"opacity logit {i} is not finite",
        })
    for name in ("positions", "scales", "color_sh", "label_sh"):
        a = getattr(scene, name)
        bad = ~np.isfinite(a).reshape(len(a), -1).all(axis=1) if len(a) else np.zeros(0, dtype=bool)
        for i in np.flatnonzero(bad):
            report.append({"invariant": "finite", "index": int(i), "message": f"{name}[{i}] not finite"})
    return report


class DegenerateDirectionError(ValueError):
    pass


@dataclass
class Camera:
    """Pinhole camera; ``world_to_camera`` maps world points into an
    x-right, y-down, z-forward camera frame."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {self.world_to_camera.shape}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not self.near < self.far:
            raise ValueError("near must be smaller than far")
        R = self.rotation
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation part of world_to_camera is not orthonormal")

    @property
    def rotation(self):
        return self.world_to_camera[:3, :3]

    @property
    def translation(self):
        return self.world_to_camera[:3, 3]

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), width=64, height=64,
                fov_deg=50.0, near=0.01, far=100.0):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = -R @ eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(width, height, f, f, width / 2.0, height / 2.0, T, near, far)


def view_direction(camera, position):
    """Unit vector from the camera center to ``position`` (vectorized over rows)."""
    d = np.asarray(position, dtype=np.float64) - camera.center
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise DegenerateDirectionError("position coincides with the camera center")
    return d / norm


@dataclass(frozen=True)
class LabelPalette:
    """Ordered part labels with RGB anchor colors; one entry is the background."""

    names: tuple
    colors: np.ndarray
    background: int = 0

    def __init__(self, labels, background=None):
        labels = list(labels)
        names = tuple(str(name) for name, _ in labels)
        colors = np.array([np.asarray(c, dtype=np.float64) for _, c in labels]).reshape(-1, 3)
        if len(names) < 2:
            raise ValueError("a palette needs at least two labels")
        if len(set(names)) != len(names):
            raise ValueError("palette label names must be unique")
        if np.any(colors < 0) or np.any(colors > 1):
            raise ValueError("palette colors must lie in [0, 1]")
        d = np.linalg.norm(colors[:, None] - colors[None], axis=-1)
        d[np.diag_indices(len(names))] = np.inf
        if d.min() < 0.3:
            raise ValueError(f"palette colors must be at least 0.3 apart (min distance {d.min():.3f})")
        if background is None:
            background = names.index("background") if "background" in names else 0
        elif isinstance(background, str):
            background = names.index(background)
        if not 0 <= background < len(names):
            raise ValueError("background index out of range")
        colors.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "background", int(background))

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return (
            isinstance(other, LabelPalette)
            and self.names == other.names
            and self.background == other.background
            and np.array_equal(self.colors, other.colors)
        )

    def __hash__(self):
        return hash((self.names, self.background, self.colors.tobytes()))

    def index(self, name):
        return self.names.index(name)

    @property
    def background_color(self):
        return self.colors[self.background]

    def to_json(self):
        return [
            {"name": n, "rgb": [float(v) for v in c], **({"background": True} if i == self.background else {})}
            for i, (n, c) in enumerate(zip(self.names, self.colors))
        ]

    @classmethod
    def from_json(cls, entries):
        labels = [(e["name"], e["rgb"]) for e in entries]
        flagged = [i for i, e in enumerate(entries) if e.get("background")]
        if len(flagged) > 1:
            raise ValueError("exactly one palette label may be the background")
        return cls(labels, background=flagged[0] if flagged else None)
