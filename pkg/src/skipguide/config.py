"""Run configuration: nested JSON mapped onto dataclasses, validated up front.

Unknown keys and type mismatches are errors that name the full key path
(``training.lr``, ``sweep.grid[2].perturb.mode``). Every section is checked
against the preconditions of the code that will consume it before any
compute starts.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .guidance import GuidanceSpec
from .net import Arch, PerturbationConfig
from .sampler import RestartConfig
from .schedule import NoiseSchedule, linear_schedule
from .toydata import ClipConfig
from .training import TrainConfig

__all__ = ["ConfigError", "ScheduleConfig", "DataConfig", "ModelConfig", "SamplingConfig",
           "OracleConfig", "SweepConfig", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    variance_kind: str = "beta_tilde"

    def build(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end, self.variance_kind)


@dataclass(frozen=True)
class DataConfig:
    n_clips: int = 256
    frames: int = 8
    height: int = 8
    width: int = 8
    n_classes: int = 4
    speed_min: float = 0.5
    speed_max: float = 1.5
    radius_min: float = 0.8
    radius_max: float = 1.3

    def clip_config(self) -> ClipConfig:
        d = dataclasses.asdict(self)
        d.pop("n_clips")
        return ClipConfig(**d)


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    dim: int = 16
    heads: int = 1
    attention_mode: str = "factorized"
    mlp_hidden: int = 32


@dataclass(frozen=True)
class OracleConfig:
    """Gaussian mixture whose means are dataset clips (video-shaped oracle runs)."""
    n_components: int = 8
    variance: float = 0.01
    weak_inflate: float = 2.0


@dataclass(frozen=True)
class SamplingConfig:
    """``denoiser`` is ``net`` (needs ``checkpoint``) or ``oracle``."""
    denoiser: str = "net"
    checkpoint: str | None = None
    n_samples: int = 4
    class_id: int | None = 0
    trace_stride: int | None = None
    t_list: list = field(default_factory=list)


@dataclass(frozen=True)
class SweepConfig:
    grid: list = field(default_factory=list)
    n_chains: int = 16
    n_reference: int = 64


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    guidance: GuidanceSpec = field(default_factory=GuidanceSpec)
    restart: RestartConfig | None = None
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def arch(self) -> Arch:
        m, d = self.model, self.data
        return Arch(layers=m.layers, dim=m.dim, heads=m.heads, attention_mode=m.attention_mode,
                    frames=d.frames, height=d.height, width=d.width, channels=1,
                    n_classes=d.n_classes, mlp_hidden=m.mlp_hidden)

    def to_dict(self) -> dict:
        return _to_plain(self)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


# -- parsing ---------------------------------------------------------------

_PERTURB_FIELDS = ("perturb", "perturb_spatial", "perturb_temporal")


def _check_scalar(key: str, value, default):
    """Type-check a leaf against the kind of its default value."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, raw, key: str, convert=None):
    if not isinstance(raw, dict):
        raise ConfigError(key, f"expected an object, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for k, v in raw.items():
        sub = f"{key}.{k}" if key else k
        if k not in names:
            raise ConfigError(sub, "unknown key")
        if convert and k in convert:
            kwargs[k] = convert[k](v, sub)
        elif v is None:
            kwargs[k] = None
        else:
            kwargs[k] = _check_scalar(sub, v, getattr(defaults, k))
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(key, str(e)) from None


def _perturb(raw, key):
    def layers(v, k):
        if not isinstance(v, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in v):
            raise ConfigError(k, "expected a list of layer indices")
        return tuple(v)
    return _build(PerturbationConfig, raw, key, {"layers": layers, "axis": lambda v, k: v,
                                                  "blur_sigma": lambda v, k: None if v is None else float(v)})


def _guidance(raw, key):
    conv = {name: _perturb for name in _PERTURB_FIELDS}
    return _build(GuidanceSpec, raw, key, conv)


def _restart(raw, key):
    if raw is None:
        return None
    if not isinstance(raw, dict) or not {"t_min", "t_max"} <= raw.keys():
        raise ConfigError(key, "needs t_min and t_max")
    defaults = {"t_min": 0, "t_max": 1}
    for k in ("t_min", "t_max"):
        _check_scalar(f"{key}.{k}", raw[k], defaults[k])
    rest = {k: v for k, v in raw.items() if k not in defaults}
    for k in rest:
        if k not in ("K", "restart_noise"):
            raise ConfigError(f"{key}.{k}", "unknown key")
    base = RestartConfig(raw["t_min"], raw["t_max"])
    kw = {k: _check_scalar(f"{key}.{k}", v, getattr(base, k)) for k, v in rest.items()}
    return RestartConfig(raw["t_min"], raw["t_max"], **kw)


def _sampling(raw, key):
    def opt_int(v, k):
        if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
            raise ConfigError(k, f"expected int or null, got {v!r}")
        return v

    def t_list(v, k):
        if not isinstance(v, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in v):
            raise ConfigError(k, "expected a list of integer steps")
        return list(v)

    def opt_str(v, k):
        if v is not None and not isinstance(v, str):
            raise ConfigError(k, f"expected string or null, got {v!r}")
        return v
    return _build(SamplingConfig, raw, key, {"class_id": opt_int, "trace_stride": opt_int,
                                             "t_list": t_list, "checkpoint": opt_str})


def _sweep(raw, key):
    def grid(v, k):
        if not isinstance(v, list):
            raise ConfigError(k, "expected a list of guidance objects")
        return [_guidance(g, f"{k}[{i}]") for i, g in enumerate(v)]
    return _build(SweepConfig, raw, key, {"grid": grid})


_SECTIONS = {
    "schedule": lambda v, k: _build(ScheduleConfig, v, k),
    "data": lambda v, k: _build(DataConfig, v, k),
    "model": lambda v, k: _build(ModelConfig, v, k),
    "training": lambda v, k: _build(TrainConfig, v, k),
    "guidance": _guidance,
    "restart": _restart,
    "sampling": _sampling,
    "oracle": lambda v, k: _build(OracleConfig, v, k),
    "sweep": _sweep,
}


def _validate(cfg: RunConfig) -> None:
    def wrap(key, fn):
        try:
            fn()
        except ConfigError:
            raise
        except (ValueError, TypeError) as e:
            raise ConfigError(key, str(e)) from None

    if cfg.seed < 0 or cfg.seed >= 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    sched = None

    def mk_sched():
        nonlocal sched
        sched = cfg.schedule.build()
    wrap("schedule", mk_sched)
    wrap("data", cfg.data.clip_config)
    if cfg.data.n_clips < 1:
        raise ConfigError("data.n_clips", "must be >= 1")
    arch = None

    def mk_arch():
        nonlocal arch
        arch = cfg.arch()
    wrap("model", mk_arch)
    for name in _PERTURB_FIELDS:
        wrap(f"guidance.{name}", lambda: getattr(cfg.guidance, name).validate(arch))
    for i, g in enumerate(cfg.sweep.grid):
        for name in _PERTURB_FIELDS:
            wrap(f"sweep.grid[{i}].{name}", lambda: getattr(g, name).validate(arch))
    if cfg.restart is not None:
        wrap("restart", lambda: cfg.restart.validate(sched.T))
    s = cfg.sampling
    if s.denoiser not in ("net", "oracle"):
        raise ConfigError("sampling.denoiser", f"must be 'net' or 'oracle', got {s.denoiser!r}")
    if s.n_samples < 1:
        raise ConfigError("sampling.n_samples", "must be >= 1")
    if s.class_id is not None and not 0 <= s.class_id < cfg.data.n_classes:
        raise ConfigError("sampling.class_id", f"must lie in [0, {cfg.data.n_classes})")
    if s.trace_stride is not None and s.trace_stride < 0:
        raise ConfigError("sampling.trace_stride", "must be >= 0")
    for i, t in enumerate(s.t_list):
        if not 0 <= t < sched.T:
            raise ConfigError(f"sampling.t_list[{i}]", f"step {t} outside [0, {sched.T})")
    o = cfg.oracle
    if o.n_components < 1:
        raise ConfigError("oracle.n_components", "must be >= 1")
    if o.variance <= 0:
        raise ConfigError("oracle.variance", "must be > 0")
    if o.weak_inflate <= 1:
        raise ConfigError("oracle.weak_inflate", "must be > 1")
    if cfg.sweep.n_chains < 2:
        raise ConfigError("sweep.n_chains", "must be >= 2")
    if cfg.sweep.n_reference < 2:
        raise ConfigError("sweep.n_reference", "must be >= 2")


def parse_config(raw: dict, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Build and validate a RunConfig; ``seed``/``out_dir`` override the file."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kwargs = {}
    for k, v in raw.items():
        if k == "seed":
            kwargs[k] = _check_scalar(k, v, 0)
        elif k == "out_dir":
            kwargs[k] = _check_scalar(k, v, "")
        elif k in _SECTIONS:
            kwargs[k] = _SECTIONS[k](v, k)
        else:
            raise ConfigError(k, "unknown key")
    if seed is not None:
        kwargs["seed"] = seed
    if out_dir is not None:
        kwargs["out_dir"] = out_dir
    cfg = RunConfig(**kwargs)
    _validate(cfg)
    return cfg


def load_config(path, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path}: invalid JSON ({e})") from None
    return parse_config(raw, seed, out_dir)
