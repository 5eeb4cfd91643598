"""Model and training configuration, stored as flat ``key=value`` text."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

GEOMETRY_MODES = ("off", "concat", "add")
POSITION_MODES = ("sinusoidal", "lstm")
GLU_PLACEMENTS = ("none", "enc", "enc_dec")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (desk-scale defaults).

    ``dec_self_attn`` of ``None`` means: masked self-attention only when the
    decoder uses sinusoidal positions, since the position-LSTM already
    carries the sequence history.
    """

    d: int = 32
    d_m: int = 64
    d_h: int = 128
    d_w: int = 64
    h: int = 4
    L_enc: int = 2
    L_dec: int = 2
    d_ff: int = 128
    V: int = 32
    T_max: int = 16
    mode_geometry: str = "concat"
    mode_position: str = "lstm"
    glu_placement: str = "enc"
    dec_self_attn: Optional[bool] = None
    dropout_attn: float = 0.0
    dropout_lstm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("d", "d_m", "d_h", "d_w", "h", "L_enc", "L_dec", "d_ff", "V"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_m % self.h:
            raise ConfigError(f"h={self.h} must divide d_m={self.d_m}")
        if self.T_max < 2:
            raise ConfigError(f"T_max must be >= 2, got {self.T_max}")
        if self.mode_geometry not in GEOMETRY_MODES:
            raise ConfigError(f"mode_geometry must be one of {GEOMETRY_MODES}")
        if self.mode_position not in POSITION_MODES:
            raise ConfigError(f"mode_position must be one of {POSITION_MODES}")
        if self.glu_placement not in GLU_PLACEMENTS:
            raise ConfigError(f"glu_placement must be one of {GLU_PLACEMENTS}")

    @property
    def d_head(self) -> int:
        return self.d_m // self.h

    @property
    def use_dec_self_attn(self) -> bool:
        if self.dec_self_attn is None:
            return self.mode_position == "sinusoidal"
        return self.dec_self_attn

    @property
    def glu_enc(self) -> bool:
        return self.glu_placement in ("enc", "enc_dec")

    @property
    def glu_dec(self) -> bool:
        return self.glu_placement == "enc_dec"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    lr_decay: float = 0.8
    decay_every: int = 3
    batch_size: int = 16
    epochs: int = 10
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1:
            raise ConfigError("batch_size, epochs and decay_every must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch number."""
        return self.lr * self.lr_decay ** ((epoch - 1) // self.decay_every)


def _parse_value(kind, raw: str):
    raw = raw.strip()
    if kind in ("Optional[bool]", Optional[bool]):
        if raw in ("", "auto", "None"):
            return None
        return _parse_bool(raw)
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def parse_kv(text: str) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_overrides(cfg, values: dict, *, strict: bool = True):
    """Return ``cfg`` with matching string-valued entries of ``values`` applied."""
    known = {f.name: f.type for f in fields(cfg)}
    updates = {}
    for key, raw in values.items():
        if key not in known:
            if strict:
                raise ConfigError(f"unknown config key {key!r}")
            continue
        try:
            updates[key] = _parse_value(known[key], raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return replace(cfg, **updates)


def format_kv(cfg) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            value = "auto"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def split_config(values: dict) -> tuple:
    """Split a mixed key=value mapping into (ModelConfig, TrainConfig) overrides."""
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model = {k: v for k, v in values.items() if k in model_keys}
    train = {k: v for k, v in values.items() if k in train_keys and k not in model_keys}
    # a shared 'seed' drives both initialisation and shuffling
    if "seed" in values:
        train["seed"] = values["seed"]
    return model, train


ABLATION_VARIANTS = {
    "Base": dict(mode_geometry="off", mode_position="sinusoidal", glu_placement="none"),
    "Base+GSR": dict(mode_geometry="concat", mode_position="sinusoidal", glu_placement="enc"),
    "Base+position-LSTM": dict(mode_geometry="off", mode_position="lstm", glu_placement="none"),
    "Full: GAT": dict(mode_geometry="concat", mode_position="lstm", glu_placement="enc"),
}

STRATEGY_VARIANTS = {
    "Geometry Q&K add.": dict(mode_geometry="add", mode_position="lstm", glu_placement="enc"),
    "Geometry Q&K concat.": dict(mode_geometry="concat", mode_position="lstm", glu_placement="enc"),
    "without GLU": dict(mode_geometry="concat", mode_position="lstm", glu_placement="none"),
    "GLU(enc.)": dict(mode_geometry="concat", mode_position="lstm", glu_placement="enc"),
    "GLU(enc. and dec.)": dict(mode_geometry="concat", mode_position="lstm", glu_placement="enc_dec"),
}


def variant(base: ModelConfig, name: str) -> ModelConfig:
    spec = ABLATION_VARIANTS.get(name) or STRATEGY_VARIANTS.get(name)
    if spec is None:
        raise ConfigError(f"unknown variant {name!r}")
    return replace(base, **spec)


__all__ = [
    "ModelConfig", "TrainConfig", "ConfigError", "parse_kv", "format_kv",
    "apply_overrides", "split_config", "variant", "ABLATION_VARIANTS", "STRATEGY_VARIANTS",
]
