"""Run configuration: dataclasses, YAML round-tripping, content hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ParameterError
from .guidance import CorpusConfig, PriorTrainConfig


@dataclass(frozen=True)
class MeshConfig:
    grid_resolution: int = 33      # lattice vertices per axis -> 32^3 cubes
    density_level: float = 5.0
    iterations: int = 400
    mse_weight: float = 1000.0
    sds_weight: float = 1.0
    render_resolution: int = 128
    refine_strength: float = 0.3
    refine_scale: float = 3.0
    lr: float = 0.01
    color_lr: float = 0.01
    turntable_views: int = 6

    def __post_init__(self):
        if self.grid_resolution < 4 or self.render_resolution < 8:
            raise ParameterError("mesh resolutions out of range")
        if self.mse_weight < 0 or self.sds_weight < 0:
            raise ParameterError("mesh loss weights must be >= 0")
        if self.density_level <= 0:
            raise ParameterError("density level must be positive")
        if not (0 <= self.refine_strength <= 1):
            raise ParameterError("refine strength must be in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    prompt: str = "red upper, blue lower"
    p: float = 0.1
    lambda_sds: float = 1.0
    lambda_depth: float = 1.0
    lambda_adv: float = 1.0
    cfg_scale: float = 100.0
    iterations: int = 5000
    resolution: tuple[int, int] = (64, 32)   # (H, W), native 2:1 aspect
    samples_per_ray: int = 32
    latent_dim: int = 64
    hidden_dim: int = 32
    region_prob: float = 0.5                 # chance a step supervises the full body
    t_low_frac: float = 0.02
    t_high_frac: float = 0.98
    lr_generator: float = 1e-4
    lr_discriminator: float = 2e-4
    r1_gamma: float = 1.0
    real_batch: int = 8
    freeze_discriminator: bool = False
    checkpoint_every: int = 1000
    feature_seed: int = 11
    mesh: MeshConfig = field(default_factory=MeshConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    prior: PriorTrainConfig = field(default_factory=PriorTrainConfig)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ParameterError("iterations must be > 0")
        h, w = self.resolution
        if h <= 0 or w <= 0:
            raise ParameterError("resolution must be positive")
        object.__setattr__(self, "resolution", (int(h), int(w)))
        if not (0.0 <= self.p <= 1.0):
            raise ParameterError(f"p must be in [0, 1], got {self.p}")
        for name in ("lambda_sds", "lambda_depth", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")
        if not (0.0 <= self.region_prob <= 1.0):
            raise ParameterError("region_prob must be in [0, 1]")
        if not (0.0 <= self.t_low_frac < self.t_high_frac <= 1.0):
            raise ParameterError("timestep fractions must satisfy 0 <= low < high <= 1")


def config_to_dict(obj) -> dict:
    """Recursive dataclass -> plain dict with JSON/YAML-safe values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [config_to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: config_to_dict(v) for k, v in obj.items()}
    if hasattr(obj, "value") and not isinstance(obj, (int, float, str, bool)):
        return obj.value
    return obj


def _build(cls, data: dict):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ParameterError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for name, f in fields.items():
        if name not in data:
            continue
        v = data[name]
        if name == "mesh":
            v = _build(MeshConfig, v or {})
        elif name == "corpus":
            v = _build(CorpusConfig, v or {})
        elif name == "prior":
            v = _build(PriorTrainConfig, v or {})
        elif name == "resolution":
            v = tuple(int(x) for x in v)
        kwargs[name] = v
    return cls(**kwargs)


def emit_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=True)


def parse_config(text: str) -> RunConfig:
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ParameterError("config must be a mapping")
    return _build(RunConfig, data)


def load_config(path: str | Path) -> RunConfig:
    """Load a YAML config, or recover the config block from a run manifest JSON."""
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if isinstance(data, dict) and "config" in data:
            data = data["config"]
        return _build(RunConfig, data)
    return parse_config(text)


def save_config(config: RunConfig, path: str | Path):
    Path(path).write_text(emit_config(config))


def config_hash(config, extra: dict | None = None) -> str:
    payload = {"config": config_to_dict(config)}
    if extra:
        payload["extra"] = extra
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
