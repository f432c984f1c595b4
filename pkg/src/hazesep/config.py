"""JSON run configuration: one section per pipeline stage, method defaults throughout.

Keys missing from the file take their default; unknown sections or keys
raise :class:`ConfigError` so typos cannot silently fall back.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .patchwork import PatchLayout
from .phantom import HazeSpec, PhantomSpec
from .sde import VESchedule


@dataclass(frozen=True)
class ScheduleSection:
    sigma: float = 25.0
    steps: int = 200
    tau: float = 0.8


@dataclass(frozen=True)
class CompandSection:
    mu: float | None = 255.0  # null turns companding off


@dataclass(frozen=True)
class DehazeSection:
    lambda_: float = 0.5
    kappa: float = 0.5
    gamma: float = 1.0
    normalize: bool = True
    independent_init: bool = False
    frozen_path: bool = False
    iterate_clip: float | None = 1.0


@dataclass(frozen=True)
class PatchSection:
    rows: int = 128
    cols: int = 64
    overlap: float = 0.10


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-4
    augment: bool = True
    t_min: float = 0.005
    kind: str = "conv"
    widths: tuple = (16, 16, 16)
    kernel: int = 3
    activation: str = "silu"
    conditioning: str = "scale"


@dataclass(frozen=True)
class PhantomSection:
    rows: int = 256
    cols: int = 128
    center_frequency: float = 0.25
    pulse_std: float = 2.0
    psf_width: float = 1.5
    wall_gain: float = 2.0
    density: float = 0.5


@dataclass(frozen=True)
class HazeSection:
    lateral_length: float = 6.0
    axial_length: float = 6.0
    decay: float | None = None


@dataclass(frozen=True)
class SynthSection:
    n_frames: int = 10
    levels: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class PathsSection:
    dataset: str = "dataset"
    checkpoints: str = "checkpoints"
    outputs: str = "outputs"


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    compand: CompandSection = field(default_factory=CompandSection)
    dehaze: DehazeSection = field(default_factory=DehazeSection)
    patch: PatchSection = field(default_factory=PatchSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    phantom: PhantomSection = field(default_factory=PhantomSection)
    haze: HazeSection = field(default_factory=HazeSection)
    synth: SynthSection = field(default_factory=SynthSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0

    # -- conversions to the engine's own types --

    def ve_schedule(self) -> VESchedule:
        s = self.schedule
        return VESchedule(sigma=s.sigma, steps=s.steps, tau=s.tau)

    def patch_layout(self) -> PatchLayout:
        return PatchLayout(self.patch.rows, self.patch.cols, overlap_fraction=self.patch.overlap)

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(**dataclasses.asdict(self.phantom))

    def haze_spec(self, level: float = 1.0) -> HazeSpec:
        return HazeSpec(**dataclasses.asdict(self.haze), level=level)

    def dehaze_config(self, seed: int | None = None):
        from .dehaze import DehazeConfig

        d = self.dehaze
        return DehazeConfig(
            lambda_=d.lambda_, kappa=d.kappa, gamma=d.gamma, mu=self.compand.mu,
            schedule=self.ve_schedule(), patch=self.patch_layout(),
            seed=self.seed if seed is None else seed, normalize=d.normalize,
            independent_init=d.independent_init, frozen_path=d.frozen_path, iterate_clip=d.iterate_clip,
        )

    def score_net(self, seed: int | None = None):
        from .score import ScoreNet

        t = self.training
        return ScoreNet(
            kind=t.kind, patch_shape=(self.patch.rows, self.patch.cols), widths=tuple(t.widths),
            kernel=t.kernel, activation=t.activation, sigma=self.schedule.sigma, epochs=t.epochs,
            batch_size=t.batch_size, learning_rate=t.learning_rate, t_min=t.t_min,
            augment=t.augment, conditioning=t.conditioning, seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                out[f.name] = {_json_key(k.name): _plain(getattr(value, k.name)) for k in dataclasses.fields(value)}
            else:
                out[f.name] = value
        return out


def _json_key(name: str) -> str:
    return name.rstrip("_")


def _plain(value):
    return list(value) if isinstance(value, tuple) else value


# keys that accept JSON null
_NULLABLE = {"compand.mu", "haze.decay", "dehaze.iterate_clip"}


def _coerce(section: str, f: dataclasses.Field, value):
    default = f.default
    where = f"{section}.{_json_key(f.name)}"
    if value is None and where in _NULLABLE:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return tuple(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    return value


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for name, value in data.items():
        if name not in sections:
            raise ConfigError(f"unknown config section {name!r}; expected one of {sorted(sections)}")
        if name == "seed":
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError(f"seed must be a non-negative integer, got {value!r}")
            kwargs["seed"] = value
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        cls = sections[name].default_factory
        fields = {_json_key(f.name): f for f in dataclasses.fields(cls)}
        unknown = sorted(set(value) - set(fields))
        if unknown:
            raise ConfigError(f"unknown key(s) in {name!r}: {unknown}; expected {sorted(fields)}")
        kwargs[name] = cls(**{fields[k].name: _coerce(name, fields[k], v) for k, v in value.items()})
    cfg = RunConfig(**kwargs)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: RunConfig) -> None:
    try:
        cfg.ve_schedule()
        cfg.patch_layout()
        cfg.phantom_spec()
        cfg.dehaze_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t = cfg.training
    if t.epochs < 0 or t.batch_size < 1 or t.learning_rate <= 0:
        raise ConfigError("training needs epochs >= 0, batch_size >= 1 and learning_rate > 0")
    if cfg.compand.mu is not None and cfg.compand.mu <= 0:
        raise ConfigError("compand.mu must be > 0")
    if any(level < 0 for level in cfg.synth.levels):
        raise ConfigError("synth.levels must be >= 0")


def load(path) -> RunConfig:
    """Read a JSON config; a missing path argument means all defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def describe_defaults() -> str:
    """One ``section.key = default`` line per config key (for ``--help``)."""
    lines = []
    for section, body in RunConfig().to_dict().items():
        if isinstance(body, dict):
            lines.extend(f"{section}.{key} = {json.dumps(value)}" for key, value in body.items())
        else:
            lines.append(f"{section} = {json.dumps(body)}")
    return "\n".join(lines)
