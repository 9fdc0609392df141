"""Run configuration: nested dataclasses loaded from YAML, unknown keys rejected."""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .baselines import LrtvConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SequenceConfig:
    l_full: int = 1000
    l_short: int = 200
    tr: float = 10.0
    te: float = 1.908
    ti: float = 18.0
    inversion: bool = True
    flip_file: str = ""
    max_order: int = 101


@dataclass
class DictionaryConfig:
    t1_range: tuple = (0.01, 6.0)
    t2_range: tuple = (0.004, 4.0)
    n_t1: int = 40
    n_t2: int = 40
    filter_t2_gt_t1: bool = True
    s: int = 5


@dataclass
class PhantomConfig:
    size: int = 64
    n_train: int = 24
    jitter: float = 0.1


@dataclass
class AcquisitionConfig:
    kind: str = "vd"
    accel: float = 40.0  # per-frame k-space undersampling
    coils: int = 4
    noise_rel: float = 0.05  # noise std relative to the RMS of the sampled k-space


@dataclass
class SampleConfig:
    steps: int = 50
    patch: int = 32
    stride: int = 8
    samples: int = 10


@dataclass
class LrtvSection:
    tv_weight: float = -1.0  # < 0 -> tune on a training phantom
    tune_grid: tuple = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)
    max_iters: int = 100
    inner_iters: int = 20
    tol: float = 1e-6

    def lrtv_config(self, weight=None):
        return LrtvConfig(tv_weight=self.tv_weight if weight is None else weight, max_iters=self.max_iters,
                          inner_iters=self.inner_iters, tol=self.tol)


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    lrtv: LrtvSection = field(default_factory=LrtvSection)


def _build(cls, data, path):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        sub = getattr(defaults, name)
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{path}.{name}" if path else name)
        elif isinstance(sub, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def from_dict(data):
    return _build(RunConfig, data or {}, "")


def load_config(path):
    with open(path) as f:
        return from_dict(yaml.safe_load(f))


def to_dict(cfg):
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(a) for a in v]
        return v
    return conv(cfg)


def dump_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=True)
