"""Run configuration: flat `key = value` files with typed fields.

Unknown keys and malformed values raise ConfigError. Defaults mirror the
reference operating point (224px images, 16px patches, dim 768, 6 backbone
layers, window 7, 16 heads, hidden 256, lr 1e-4, batch 16 for classification
and 8 for report training, 50 epochs). The desk-scale files under configs/
override geometry for fast runs.
"""

from dataclasses import dataclass, fields

from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "classify"           # classify | report
    image_size: int = 224
    patch_size: int = 16
    channels: int = 1
    embed_dim: int = 768
    views: int = 4
    backbone_layers: int = 6
    backbone_heads: int = 16
    window: int = 7
    window_heads: int = 16
    cross_heads: int = 16
    cross_rates: tuple = (8, 4, 2)
    classes: int = 4
    label_mode: str = "single"       # single | multi
    hidden: int = 256
    max_sentences: int = 10
    max_words: int = 20
    fusion: str = "full"             # full | cfp-only | ffa-only
    lr: float = 1e-4
    batch_size: int = 0              # 0 -> task default (16 classify, 8 report)
    epochs: int = 50
    seed: int = 42
    plateau_patience: int = 5
    lambda_class: float = 1.0
    lambda_stop: float = 1.0
    lambda_word: float = 1.0
    train_samples: int = 512
    test_samples: int = 128
    data_seed: int = -1              # -1 -> derived from seed
    data_dir: str = ""               # empty -> generate in memory
    out_dir: str = "runs/latest"

    def __post_init__(self):
        if self.task not in ("classify", "report"):
            raise ConfigError(f"task must be classify|report, got {self.task!r}")
        if self.label_mode not in ("single", "multi"):
            raise ConfigError(f"label_mode must be single|multi, got {self.label_mode!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if self.train_samples < 1 or self.test_samples < 1:
            raise ConfigError("need at least one train and test sample")

    @property
    def resolved_batch(self):
        if self.batch_size:
            return self.batch_size
        return 16 if self.task == "classify" else 8

    @property
    def resolved_data_seed(self):
        return self.data_seed if self.data_seed >= 0 else self.seed + 1000

    def model_config(self, vocab_size=0):
        # ModelConfig performs the geometry validation; surface its errors
        # as config errors so the CLI maps them to one exit code.
        try:
            return ModelConfig(
                image_size=self.image_size, patch_size=self.patch_size,
                channels=self.channels, embed_dim=self.embed_dim,
                views=self.views, backbone_layers=self.backbone_layers,
                backbone_heads=self.backbone_heads, window=self.window,
                window_heads=self.window_heads, cross_heads=self.cross_heads,
                cross_rates=tuple(self.cross_rates), classes=self.classes,
                hidden=self.hidden, max_sentences=self.max_sentences,
                max_words=self.max_words, fusion=self.fusion,
                with_decoder=self.task == "report", vocab_size=vocab_size)
        except ValueError as e:
            raise ConfigError(str(e)) from e


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, raw):
    f = _FIELDS[name]
    raw = raw.strip()
    try:
        if f.type in (int, "int"):
            return int(raw)
        if f.type in (float, "float"):
            return float(raw)
        if f.type in (tuple, "tuple"):
            return tuple(int(p) for p in raw.split(",") if p.strip())
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {name!r}: {raw!r}") from e


def parse_config(text):
    """Parse `key = value` lines; '#' starts a comment, blanks ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load_config(path):
    with open(path) as f:
        return parse_config(f.read())


def dump_config(cfg):
    """Resolved config as parseable text (stable field order)."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
