"""Run configuration: one nested key-value file drives every command.

Unknown keys are rejected with their dotted path, flag overrides
(``--set section.key=value``) beat file values, and every command writes
the fully resolved configuration next to its outputs so a run can be
reproduced from the echo alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSection:
    n_artists: int = 100
    albums_per_artist: int = 2
    tracks_per_album: int = 10
    n_frames: int = 80
    n_bins: int = 16
    latent_dim: int = 32
    sigma_artist: float = 2.0
    sigma_album: float = 1.0
    sigma_track: float = 0.5
    sigma_frame: float = 0.25


@dataclass(frozen=True)
class CatalogSection:
    metadata: str = ""  # defaults to <out>/catalog/metadata.csv at run time
    segment_len: int = 16


@dataclass(frozen=True)
class MelSection:
    sample_rate: int = 22050
    n_bins: int = 128
    window: int = 1024
    hop: int = 512
    fmin: float = 0.0
    fmax: float = 0.0  # 0 means sample_rate / 2
    gain: float = 10.0


@dataclass(frozen=True)
class SplitSection:
    n_artists: int = 100
    n_albums: int = 200


@dataclass(frozen=True)
class EncoderSection:
    base_filters: tuple[int, ...] = (4, 8, 16, 32)
    kernel: tuple[int, int] = (3, 3)
    filter_multiplier: float = 2.0
    embedding_dim: int = 256


@dataclass(frozen=True)
class LossSection:
    margin_artist: float = 0.4
    margin_album: float = 0.25
    margin_track: float = 0.1
    weight_artist: float = 1.0
    weight_album: float = 1.0
    weight_track: float = 1.0
    reduce_negatives: str = "sum"


@dataclass(frozen=True)
class TrainSection:
    concepts: tuple[str, ...] = ("artist", "album", "track")
    n_negatives: int = 4
    batch_size: int = 8
    steps: int = 2500
    eval_every: int = 250
    learning_rate: float = 0.01
    momentum: float = 0.9
    nesterov: bool = True
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-4
    val_tuples: int = 64
    distinct_negatives: bool = True
    torch_threads: int = 1


@dataclass(frozen=True)
class EvalSection:
    n_negatives: int = 4
    trials: int = 2000
    hop: int = 0  # 0 means segment_len (non-overlapping song windows)
    genre_classes: int = 5
    probe_train: str = ""
    probe_test: str = ""
    probe_val_fraction: float = 0.25
    probe_c_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
    probe_max_iter: int = 2000


@dataclass(frozen=True)
class AblateSection:
    axis: str = "negatives"
    values: tuple[int, ...] = (1, 2, 4, 8, 16)
    artist_counts: tuple[int, ...] = (20, 50, 100)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    steps: int = 800
    eval_every: int = 200
    trials: int = 800


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = ""
    synth: SynthSection = field(default_factory=SynthSection)
    catalog: CatalogSection = field(default_factory=CatalogSection)
    mel: MelSection = field(default_factory=MelSection)
    split: SplitSection = field(default_factory=SplitSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablate: AblateSection = field(default_factory=AblateSection)


def _coerce(value, default, path: str):
    if isinstance(default, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path} expects a boolean, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, int):
        return float(value)
    if type(value) is not type(default) and default is not None:
        raise ConfigError(
            f"config key {path} expects {type(default).__name__}, got {type(value).__name__}"
        )
    return value


def _from_dict(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {path!r}")
        current = getattr(defaults, key)
        if is_dataclass(current):
            kwargs[key] = _from_dict(type(current), value or {}, prefix=f"{path}.")
        else:
            kwargs[key] = _coerce(value, current, path)
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> RunConfig:
    return _from_dict(RunConfig, data or {})


def load_config(path: str | Path) -> RunConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if data is None:
        data = {}
    return config_from_dict(data)


def to_plain(obj):
    """Dataclasses/tuples to YAML-friendly dicts/lists."""
    if is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_plain(v) for v in obj]
    return obj


def apply_overrides(config: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides (values parsed as YAML)."""
    data = to_plain(config)
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} must look like section.key=value")
        dotted, raw = assignment.split("=", 1)
        keys = dotted.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        node = data
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[keys[-1]] = value
    return config_from_dict(data)


def write_echo(config: RunConfig, directory: str | Path) -> Path:
    path = Path(directory) / "config.resolved.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.safe_dump(to_plain(config), sort_keys=True, default_flow_style=False),
        encoding="utf-8",
    )
    return path


# --- bridges into the library types ----------------------------------------

def build_hierarchy_params(cfg: RunConfig):
    from .synth import HierarchyParams

    s = cfg.synth
    return HierarchyParams(
        n_artists=s.n_artists,
        albums_per_artist=s.albums_per_artist,
        tracks_per_album=s.tracks_per_album,
        n_frames=s.n_frames,
        n_bins=s.n_bins,
        latent_dim=s.latent_dim,
        sigma_artist=s.sigma_artist,
        sigma_album=s.sigma_album,
        sigma_track=s.sigma_track,
        sigma_frame=s.sigma_frame,
        seed=cfg.seed,
    )


def build_margins(cfg: RunConfig):
    from .losses import MarginConfig

    return MarginConfig(
        margin_artist=cfg.loss.margin_artist,
        margin_album=cfg.loss.margin_album,
        margin_track=cfg.loss.margin_track,
    )


def build_mel_params(cfg: RunConfig):
    from .features import MelParams

    m = cfg.mel
    return MelParams(
        sample_rate=m.sample_rate,
        n_bins=m.n_bins,
        window=m.window,
        hop=m.hop,
        fmin=m.fmin,
        fmax=m.fmax or None,
        gain=m.gain,
    )


def build_encoder_config(cfg: RunConfig, input_bins: int, seed: int | None = None):
    from .model import default_encoder_config
    from .seeding import derive_seed

    return default_encoder_config(
        input_frames=cfg.catalog.segment_len,
        input_bins=input_bins,
        base_filters=cfg.encoder.base_filters,
        kernel=cfg.encoder.kernel,
        embedding_dim=cfg.encoder.embedding_dim,
        filter_multiplier=cfg.encoder.filter_multiplier,
        seed=derive_seed(cfg.seed if seed is None else seed, "encoder"),
    )


def build_train_config(cfg: RunConfig, seed: int | None = None, **overrides):
    from .trainer import OptimizerConfig, TrainConfig

    t = cfg.train
    kwargs = dict(
        concepts=tuple(t.concepts),
        segment_len=cfg.catalog.segment_len,
        n_negatives=t.n_negatives,
        batch_size=t.batch_size,
        steps=t.steps,
        eval_every=t.eval_every,
        seed=cfg.seed if seed is None else seed,
        margins=build_margins(cfg),
        weights={
            "artist": cfg.loss.weight_artist,
            "album": cfg.loss.weight_album,
            "track": cfg.loss.weight_track,
        },
        optimizer=OptimizerConfig(
            learning_rate=t.learning_rate,
            momentum=t.momentum,
            nesterov=t.nesterov,
            plateau_patience=t.plateau_patience,
            plateau_factor=t.plateau_factor,
            min_lr=t.min_lr,
        ),
        val_tuples=t.val_tuples,
        distinct_negatives=t.distinct_negatives,
        reduce_negatives=cfg.loss.reduce_negatives,
        torch_threads=t.torch_threads,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)
