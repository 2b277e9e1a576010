"""Run configuration: defaults, key=value file parsing, schema validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # geometry / capacity
    image_h: int = 64
    image_w: int = 64
    channels: int = 32
    phrase_dim: int = 32
    heads: int = 2
    sample_points: int = 4
    encoder_layers: int = 2
    rounds: int = 3
    top_k: int = 50
    ffn_ratio: int = 2
    dropout: float = 0.1
    ffn_residual: bool = False
    refine_sharing: str = "refine"  # "refine" = own layer shared across rounds, "encoder" = reuse last encoder layer
    pos_temperature: float = 10000.0
    # loss / training
    lambda_bce: float = 1.0
    lambda_dice: float = 1.0
    dice_eps: float = 1e-6
    learning_rate: float = 1e-4
    epochs: int = 20
    batch_size: int = 1
    threshold: float = 0.5
    seed: int = 0
    # scene generation
    scenes: int = 200
    noise_sigma: float = 0.05
    min_objects: int = 2
    max_objects: int = 4
    plural_prob: float = 0.3
    stripe_prob: float = 0.3

    def validate(self) -> "RunConfig":
        if self.image_h <= 0 or self.image_h % 32 or self.image_w <= 0 or self.image_w % 32:
            raise ConfigError("image_h and image_w must be positive multiples of 32")
        if self.channels % 4:
            raise ConfigError("channels must be divisible by 4 (positional encoding)")
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError("channels must be divisible by heads")
        if self.phrase_dim < 1:
            raise ConfigError("phrase_dim must be positive")
        if self.sample_points < 1:
            raise ConfigError("sample_points must be positive")
        if self.encoder_layers < 0 or self.rounds < 0:
            raise ConfigError("encoder_layers and rounds must be non-negative")
        benchmark_cells = (self.image_h // 8) * (self.image_w // 8)
        if not 1 <= self.top_k <= benchmark_cells:
            raise ConfigError(f"top_k must be in [1, {benchmark_cells}] for this image size")
        if self.ffn_ratio < 1:
            raise ConfigError("ffn_ratio must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.refine_sharing not in ("refine", "encoder"):
            raise ConfigError("refine_sharing must be 'refine' or 'encoder'")
        if self.refine_sharing == "encoder" and self.encoder_layers == 0:
            raise ConfigError("refine_sharing='encoder' needs encoder_layers >= 1")
        if self.pos_temperature <= 0:
            raise ConfigError("pos_temperature must be positive")
        if self.lambda_bce < 0 or self.lambda_dice < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.dice_eps <= 0:
            raise ConfigError("dice_eps must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must be in (0, 1)")
        if self.scenes < 1:
            raise ConfigError("scenes must be >= 1")
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if not 0.0 <= self.plural_prob <= 1.0 or not 0.0 <= self.stripe_prob <= 1.0:
            raise ConfigError("probabilities must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def show(self) -> str:
        lines = []
        for key in sorted(self.to_dict()):
            lines.append(f"{key} = {_format_value(getattr(self, key))}")
        return "\n".join(lines)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _parse_value(key: str, raw: str):
    ftype = _FIELD_TYPES.get(key)
    if ftype is None:
        raise ConfigError(f"unknown config key: {key}")
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    values = cfg.to_dict()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        values[key] = _parse_value(key, raw)
    return RunConfig(**values).validate()


def load_config(path, overrides: dict | None = None) -> RunConfig:
    cfg = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else RunConfig()
    if overrides:
        values = cfg.to_dict()
        for key, val in overrides.items():
            if key not in values:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = val
        cfg = RunConfig(**values)
    return cfg.validate()


def config_from_dict(d: dict) -> RunConfig:
    values = RunConfig().to_dict()
    for key, val in d.items():
        if key not in values:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = val
    return RunConfig(**values).validate()
