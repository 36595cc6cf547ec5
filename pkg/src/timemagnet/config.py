"""Run configuration: named presets plus validated JSON overrides."""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

MODALITIES = ("act", "acw", "dc", "pm")
TS_MODALITIES = ("act", "acw")
IMAGE_MODALITIES = ("dc", "pm")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 42

    # model
    modalities: list = field(default_factory=lambda: list(MODALITIES))
    fusion: str = "magnet"
    n_classes: int = 7
    accel_channels: int = 3
    ts_dim: int = 32
    ts_layers: int = 2
    ts_heads: int = 2
    ts_head_dim: int = 16
    ts_ff_dim: int = 64
    ts_dropout: float = 0.1
    ts_ln_eps: float = 1e-6
    ts_buckets: int = 32
    ts_max_distance: int = 128
    ts_max_seq: int = 50
    ts_rel_bias: bool = True
    ts_sinusoidal: bool = True
    use_lora: bool = True
    lora_rank: int = 4
    lora_alpha: float = 8.0
    share_ts_encoder: bool = False
    dart_channels: list = field(default_factory=lambda: [8, 16])
    dart_reduction: int = 4
    dart_emb: int = 32
    dart_hidden: int = 16
    dart_layers: list = field(default_factory=lambda: [1, 1, 1])
    dart_dropout: float = 0.1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    fusion_dim: int = 32
    fusion_blocks: int = 3
    gat_heads: int = 2
    moe_experts: int = 4
    moe_top_k: int = 2
    rmsnorm_eps: float = 1e-6
    classifier_dropout: float = 0.1

    # data
    dc_grid: list = field(default_factory=lambda: [12, 16])
    pm_grid: list = field(default_factory=lambda: [32, 16])
    accel_rate: float = 100.0
    image_rate: float = 16.0
    window_s: float = 0.5
    stride_s: float = 0.25
    aug_sigma: float = 0.01
    split_counts: list = field(default_factory=lambda: [21, 3, 6])
    synth_participants: int = 30
    synth_windows_per_client: int = 70
    data_root: Optional[str] = None

    # optimisation
    lr: float = 1e-3
    weight_decay: float = 1e-4
    clip_norm: float = 1.0
    grad_accum: int = 1
    batch_size: int = 8
    epochs: int = 10
    lr_factor: float = 0.5
    lr_patience: int = 3
    lr_min: float = 1e-6
    use_plateau: bool = True
    early_stop_patience: int = 6
    centralized_monitor: str = "accuracy"
    reset_optimizer_every: int = 0
    lambda_moe: float = 0.01

    # federated
    rounds: int = 10
    local_epochs: int = 5
    sample_ratio: float = 0.43
    fed_patience: int = 10
    fed_monitor: str = "loss"
    weighted_aggregation: bool = False
    client_lr_multipliers: dict = field(default_factory=dict)
    threads: int = 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "RunConfig":
        return resolve(self.preset, {**_diff_from_preset(self), **kw})

    # derived sizes
    @property
    def accel_frames(self) -> int:
        return int(round(self.window_s * self.accel_rate))

    @property
    def image_frames(self) -> int:
        return int(round(self.window_s * self.image_rate))


PAPER_OVERRIDES = dict(
    ts_dim=512, ts_layers=8, ts_heads=8, ts_head_dim=64, ts_ff_dim=2048, ts_max_seq=500,
    lora_rank=16, lora_alpha=32.0,
    dart_channels=[64, 128, 256, 512], dart_reduction=16, dart_emb=512, dart_hidden=256,
    dart_layers=[3, 2, 1],
    fusion_dim=512, gat_heads=8,
    image_rate=15.0, window_s=5.0, stride_s=1.0,
    lr=1e-4, grad_accum=6, fed_patience=6,
)

PRESETS = {"desk": {}, "paper": PAPER_OVERRIDES}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _default(name):
    f = _FIELDS[name]
    return f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default


def _check_type(key, value):
    expected = _default(key)
    if key == "data_root":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key}: expected string or null, got {type(value).__name__}")
        return value
    if isinstance(expected, bool):
        ok = isinstance(value, bool)
    elif isinstance(expected, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(expected, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, type(expected))
    if not ok:
        raise ConfigError(f"{key}: expected {type(expected).__name__}, got {type(value).__name__} ({value!r})")
    return value


def _validate(cfg: RunConfig) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg} (got {getattr(cfg, key)!r})")

    need(cfg.preset in PRESETS, "preset", f"must be one of {sorted(PRESETS)}")
    need(cfg.lambda_moe >= 0, "lambda_moe", "must be >= 0")
    need(0 < cfg.sample_ratio <= 1, "sample_ratio", "must satisfy 0 < rho <= 1")
    need(len(cfg.modalities) > 0, "modalities", "must be non-empty")
    for m in cfg.modalities:
        need(m in MODALITIES, "modalities", f"unknown modality {m!r}; choose from {MODALITIES}")
    need(len(set(cfg.modalities)) == len(cfg.modalities), "modalities", "contains duplicates")
    need(cfg.fusion in ("magnet", "concat", "attention"), "fusion", "must be magnet, concat or attention")
    need(cfg.ts_heads * cfg.ts_head_dim == cfg.ts_dim, "ts_head_dim", "ts_heads * ts_head_dim must equal ts_dim")
    need(cfg.ts_dim % 2 == 0, "ts_dim", "must be even for sinusoidal encoding")
    need(cfg.dart_emb == 2 * cfg.dart_hidden, "dart_emb", "must equal 2 * dart_hidden for the residual sum")
    need(len(cfg.dart_channels) >= 2, "dart_channels", "needs at least two conv blocks (pool follows block 2)")
    need(cfg.dart_channels[-1] % cfg.dart_reduction == 0, "dart_reduction", "must divide the last channel count")
    need(len(cfg.dart_layers) == 3 and min(cfg.dart_layers) >= 1, "dart_layers", "needs three positive counts")
    need(cfg.fusion_dim % cfg.gat_heads == 0, "gat_heads", "must divide fusion_dim")
    need(cfg.fusion_dim >= 4, "fusion_dim", "must be >= 4")
    need(1 <= cfg.moe_top_k <= cfg.moe_experts, "moe_top_k", "must satisfy 1 <= k <= moe_experts")
    need(cfg.lora_rank >= 1, "lora_rank", "must be >= 1")
    need(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    need(cfg.grad_accum >= 1, "grad_accum", "must be >= 1")
    need(cfg.clip_norm > 0, "clip_norm", "must be > 0")
    need(cfg.lr >= 0, "lr", "must be >= 0")
    need(cfg.accel_frames <= cfg.ts_max_seq, "ts_max_seq", "must be >= accelerometer frames per window")
    need(len(cfg.split_counts) == 3 and min(cfg.split_counts) >= 1, "split_counts", "needs three positive counts")
    need(cfg.centralized_monitor in ("accuracy", "loss"), "centralized_monitor", "must be accuracy or loss")
    need(cfg.fed_monitor in ("accuracy", "loss"), "fed_monitor", "must be accuracy or loss")
    for k in ("ts_dropout", "dart_dropout", "classifier_dropout"):
        need(0 <= getattr(cfg, k) < 1, k, "must be in [0, 1)")
    for k in ("accel_rate", "image_rate", "window_s", "stride_s"):
        need(getattr(cfg, k) > 0, k, "must be > 0")
    for k, rate in (("accel_rate", cfg.accel_rate), ("image_rate", cfg.image_rate)):
        for span in ("window_s", "stride_s"):
            n = getattr(cfg, span) * rate
            need(abs(n - round(n)) < 1e-9, span, f"{span} * {k} must be a whole number of samples")


def resolve(preset: str = "desk", overrides: Optional[dict] = None) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values = {"preset": preset, **PRESETS[preset]}
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            hint = difflib.get_close_matches(key, list(_FIELDS), n=1, cutoff=0.5)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"{key}: unknown configuration key{extra}")
        values[key] = _check_type(key, value)
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def _diff_from_preset(cfg: RunConfig) -> dict:
    base = RunConfig(preset=cfg.preset, **PRESETS[cfg.preset]).to_dict()
    return {k: v for k, v in cfg.to_dict().items() if base.get(k) != v and k != "preset"}


def load_config(path=None, preset: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge preset defaults, an optional JSON file and explicit overrides (in that order).

    A ``preset`` key in the file selects the preset unless ``preset`` is given.
    """
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"--config: file {p} does not exist")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"--config: {p} is not valid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError("--config: top-level JSON value must be an object")
    doc = dict(doc)
    file_preset = doc.pop("preset", None)
    merged = {**doc, **(overrides or {})}
    return resolve(preset or file_preset or "desk", merged)


def echo_config(cfg: RunConfig, run_dir) -> Path:
    path = Path(run_dir) / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.to_json() + "\n")
    return path
