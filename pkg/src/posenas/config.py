"""Pipeline configuration: strict JSON parsing with documented defaults.

Every section maps onto a dataclass. Unknown keys and ill-typed values are
rejected with the offending dotted key in the message. Relative paths are
resolved against the config file's directory.
"""
import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError

SPLIT_PROTOCOLS = ("h36m_subject", "msr_half", "sbu_5fold", "random_holdout")


@dataclass
class SynthSection:
    num_classes: int = 3
    samples_per_class: int = 20
    frames: int = 32
    joints: int = 17
    frame_rate: float = 30.0
    amplitude: float = 80.0
    amplitude_jitter: float = 0.1
    noise_std: float = 5.0
    translation_std: float = 100.0
    yaw_jitter: float = 0.0
    subjects: list = field(default_factory=lambda: [1, 5, 6, 7, 8, 9, 11])
    class_margin: float = 20.0
    family_seed: int = 0
    # lifting corpus, generated with the same class families
    lift_classes: int = 5
    lift_samples_per_class: int = 20
    lift_frames: int = 50
    lift_yaw_jitter: float = 0.5
    detector_noise: float = 2.0


@dataclass
class DataSection:
    schema: str = "h36m17"
    schema_registry: Optional[str] = None
    synthetic: Optional[SynthSection] = None
    lift_gt2d: Optional[str] = None
    lift_det2d: Optional[str] = None
    lift_gt3d: Optional[str] = None
    lift_protocol: str = "h36m_subject"
    actions_2d: Optional[str] = None
    actions_3d: Optional[str] = None
    protocol: str = "random_holdout"
    fold: Optional[int] = None
    test_fraction: float = 0.25


@dataclass
class LifterSection:
    hidden_width: int = 1024
    num_blocks: int = 2
    dropout: float = 0.25
    epochs: int = 300
    batch_size: int = 128
    lr: float = 0.001
    lr_decay: float = 0.5
    lr_decay_every: int = 50
    huber_delta: float = 1.0
    objective: str = "joint"


@dataclass
class EncoderSection:
    output_height: int = 32
    output_width: int = 32
    colormap: str = "linear_rgb"
    enhance: bool = True
    motion_scale: float = 0.05
    source: str = "lifted"


@dataclass
class SearchSection:
    nodes_per_cell: int = 5
    stem_channels: int = 16
    cells_per_stage: int = 2
    epochs: int = 200
    batch_size: int = 32
    lr_max: float = 0.05
    lr_min: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 0.0
    controller_hidden: int = 64
    controller_lr: float = 0.00035
    temperature: float = 1.0
    baseline_decay: float = 0.95
    samples_per_epoch: int = 10
    val_batch_size: int = 64
    n_candidates: int = 10
    val_fraction: float = 0.2


@dataclass
class AugmentSection:
    crop_padding: int = 4
    hflip_prob: float = 0.5


@dataclass
class RecognizerSection:
    cells_per_stage: int = 2
    epochs: int = 30
    batch_size: int = 16
    lr_max: float = 0.05
    lr_min: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: AugmentSection = field(default_factory=AugmentSection)


@dataclass
class SeedSection:
    data: int = 0
    split: int = 0
    lifter: int = 0
    search: int = 0
    recognizer: int = 0


@dataclass
class PipelineConfig:
    data: DataSection
    output_dir: str = "runs/default"
    lifter: LifterSection = field(default_factory=LifterSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    search: SearchSection = field(default_factory=SearchSection)
    recognizer: RecognizerSection = field(default_factory=RecognizerSection)
    seeds: SeedSection = field(default_factory=SeedSection)


_PATH_KEYS = ("schema_registry", "lift_gt2d", "lift_det2d", "lift_gt3d", "actions_2d", "actions_3d")


def _check_scalar(value, typ, where):
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if value is None:
            return None
        return _check_scalar(value, args[0], where)
    if dataclasses.is_dataclass(typ):
        return _build(typ, value, where)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if typ is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    if typ is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {value!r}")
        return dict(value)
    return value


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown config key {'.'.join(filter(None, [where, key]))!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        dotted = ".".join(filter(None, [where, f.name]))
        if f.name in raw:
            kwargs[f.name] = _check_scalar(raw[f.name], hints[f.name], dotted)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"missing required config key {dotted!r}")
    return cls(**kwargs)


def _validate(cfg, base_dir, check_paths):
    d = cfg.data
    for key in _PATH_KEYS:
        val = getattr(d, key)
        if val is not None:
            full = val if os.path.isabs(val) else os.path.normpath(os.path.join(base_dir, val))
            setattr(d, key, full)
            if check_paths and not os.path.exists(full):
                raise ConfigError(f"data.{key}: file {full!r} does not exist")
    if not os.path.isabs(cfg.output_dir):
        cfg.output_dir = os.path.normpath(os.path.join(base_dir, cfg.output_dir))
    for key, val in (("data.protocol", d.protocol), ("data.lift_protocol", d.lift_protocol)):
        if val not in SPLIT_PROTOCOLS:
            raise ConfigError(f"{key}: unknown protocol {val!r}")
    if d.synthetic is None and not (d.actions_2d or d.actions_3d):
        raise ConfigError("data: give either data.synthetic or data.actions_2d/actions_3d")
    if cfg.lifter.objective not in ("joint", "separate"):
        raise ConfigError(f"lifter.objective: expected 'joint' or 'separate', got {cfg.lifter.objective!r}")
    if cfg.encoder.source not in ("lifted", "ground_truth"):
        raise ConfigError(f"encoder.source: expected 'lifted' or 'ground_truth', got {cfg.encoder.source!r}")
    if cfg.encoder.colormap not in ("jet", "linear_rgb"):
        raise ConfigError(f"encoder.colormap: unknown colormap {cfg.encoder.colormap!r}")
    return cfg


def parse_config_dict(raw, base_dir=".", check_paths=True):
    cfg = _build(PipelineConfig, raw, "")
    return _validate(cfg, base_dir, check_paths)


def parse_config(path, check_paths=True):
    """Load and validate a JSON pipeline config; defaults are filled in."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config_dict(raw, os.path.dirname(os.path.abspath(path)), check_paths)


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def dump_config(cfg, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
