"""Run configuration shared by the command-line subcommands.

A run is described by one TOML file with the sections ``paths``, ``palette``,
``synth``, ``corruption``, ``rig``, ``galp``, ``slamp``, ``edit`` and
``render``. Every section is optional; missing keys take the defaults below.
Relative paths resolve against the directory holding the TOML file.
"""

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import io
from .editor import EditConfig
from .galp import GalpConfig
from .slamp import BlendSchedule, default_timesteps
from .synth import CorruptionSpec, SceneSpec

SEED_ENV = "PARTSPLAT_SEED"


class ConfigError(ValueError):
    """Invalid or missing configuration (command-line exit code 2)."""


@dataclass
class PathsConfig:
    output_dir: str = "out"
    scene: str = ""          # defaults to <output_dir>/scene.ply
    cameras: str = ""        # defaults to <output_dir>/cameras.json
    maps_dir: str = ""       # defaults to <output_dir>/maps


@dataclass
class RigConfig:
    n_ring: int = 16
    n_top: int = 4
    radius: float = 3.0
    elevation_deg: float = 20.0
    top_elevation_deg: float = 75.0
    fov_deg: float = 50.0


@dataclass
class SlampConfig:
    n_steps: int = 28
    gamma: float = 0.5
    alpha_base: float = 0.1
    alpha_last: float = 1.0
    t_s: int = 7
    eta_decay_fraction: float = 0.25
    candidates: list = field(default_factory=lambda: [0, 2, 4, 7, 10, 14, 21, 28])
    height: int = 32
    width: int = 32
    channels: int = 4
    tol: float = 0.01
    seed: int = 0

    def schedule(self):
        return BlendSchedule(self.alpha_base, self.alpha_last, self.t_s, default_timesteps(self.n_steps))


@dataclass
class EditSection:
    target: str = "part_a"
    provider: str = "match-target"     # zero | match-target | random
    recolor: tuple = (0.9, 0.2, 0.8)   # color painted into the target region of each anchor
    lambda1: float = 0.1
    lambda2: float = 1.0
    neutral: tuple = (0.5, 0.5, 0.5)
    steps: int = 200
    optimizer: str = "adam"
    lr: float = 0.0125
    n_views: int = 8

    def to_edit_config(self, background, seed):
        return EditConfig(lambda1=self.lambda1, lambda2=self.lambda2, steps=self.steps,
                          neutral=tuple(self.neutral), optimizer=self.optimizer, lr=self.lr,
                          background=tuple(background), seed=seed)


@dataclass
class RenderConfig:
    width: int = 64
    height: int = 64
    background: tuple = (1.0, 1.0, 1.0)


def _default_parts():
    return [
        {"name": "part_a", "primitive": "sphere", "center": [-0.45, 0.0, 0.0], "extent": [0.5, 0.5, 0.5],
         "count": 600, "color": [0.8, 0.3, 0.2]},
        {"name": "part_b", "primitive": "sphere", "center": [0.45, 0.0, 0.0], "extent": [0.5, 0.5, 0.5],
         "count": 600, "color": [0.2, 0.4, 0.8]},
    ]


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    palette: list = field(default_factory=list)   # [{name, rgb}]; empty -> derived from the parts
    synth: dict = field(default_factory=lambda: {"parts": _default_parts(), "seed": 0})
    corruption: dict = field(default_factory=dict)
    rig: RigConfig = field(default_factory=RigConfig)
    galp: GalpConfig = field(default_factory=GalpConfig)
    slamp: SlampConfig = field(default_factory=SlampConfig)
    edit: EditSection = field(default_factory=EditSection)
    render: RenderConfig = field(default_factory=RenderConfig)
    base_dir: str = field(default=".", compare=False)

    # -------------------------------------------------- derived objects
    def scene_spec(self):
        return SceneSpec(**self.synth)

    def corruption_spec(self):
        return CorruptionSpec(**self.corruption)

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_dir(self):
        return self.resolve(self.paths.output_dir)

    def path(self, name, default):
        value = getattr(self.paths, name)
        return self.resolve(value) if value else self.output_dir / default


_SECTIONS = {"paths": PathsConfig, "rig": RigConfig, "galp": GalpConfig,
             "slamp": SlampConfig, "edit": EditSection, "render": RenderConfig}
_TUPLE_FIELDS = {("edit", "recolor"), ("edit", "neutral"), ("render", "background")}


def _build(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    data = {k: tuple(v) if (name, k) in _TUPLE_FIELDS else v for k, v in data.items()}
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}]: {e}") from None


def from_dict(data, base_dir="."):
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    kwargs = {name: _build(name, cls, data[name]) for name, cls in _SECTIONS.items() if name in data}
    for name in ("palette", "synth", "corruption"):
        if name in data:
            kwargs[name] = data[name]
    cfg = RunConfig(**kwargs, base_dir=str(base_dir))
    validate(cfg)
    return cfg


def to_dict(cfg):
    out = {}
    for f in dataclasses.fields(cfg):
        if f.name == "base_dir":
            continue
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            value = {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(value).items()}
        out[f.name] = value
    return out


def validate(cfg):
    """Numeric range checks that the section constructors do not already perform."""
    try:
        cfg.scene_spec()
        cfg.corruption_spec()
        cfg.slamp.schedule()
        cfg.edit.to_edit_config(cfg.render.background, 0)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if cfg.galp.steps < 0 or cfg.galp.k_anchors < 0 or cfg.galp.k_neighbors < 1:
        raise ConfigError("[galp] steps/k_anchors must be >= 0 and k_neighbors >= 1")
    if cfg.render.width < 1 or cfg.render.height < 1:
        raise ConfigError("[render] width and height must be positive")
    if not 0.0 <= cfg.slamp.gamma <= 1.0:
        raise ConfigError("[slamp] gamma must lie in [0, 1]")
    if cfg.edit.provider not in ("zero", "match-target", "random"):
        raise ConfigError(f"[edit] unknown provider {cfg.edit.provider!r}")


def apply_env(cfg, environ=None):
    """Override every seed with ``PARTSPLAT_SEED`` when it is set."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None:
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from None
    cfg.galp.seed = seed
    cfg.slamp.seed = seed
    cfg.synth = {**cfg.synth, "seed": seed}
    cfg.corruption = {**cfg.corruption, "seed": seed}
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = io.load_toml(path)
    except Exception as e:   # tomllib raises its own decode error type
        raise ConfigError(f"cannot parse {path}: {e}") from None
    return from_dict(data, base_dir=path.parent)


def dumps_config(cfg):
    return io.dump_toml(to_dict(cfg))


def loads_config(text, base_dir="."):
    try:
        data = io.loads_toml(text)
    except Exception as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    return from_dict(data, base_dir)
