"""Pipeline configuration: a TOML file with one table per stage.

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli

from .errors import ConfigError


@dataclass
class PathsConfig:
    interactions: str = "users.dat"
    interactions_format: str = "adjacency"
    documents: str = "raw-data.csv"
    item_tags: str = "item-tag.dat"
    tags: str = "tags.dat"
    out: str = "out"


@dataclass
class CorpusConfig:
    vocab_size: int = 20000
    s_max: int = 10
    w_max: int = 50
    n_tags: int = 300


@dataclass
class SplitSection:
    p: int = 10
    seed: int = 0


@dataclass
class EncoderSection:
    embed_dim: int = 100
    hidden: int = 50
    attn_dim: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0


@dataclass
class MFSection:
    loss: str = "warp"
    features: str = "identity"
    metadata: str = "bias"
    d: int = 200
    l2: float = 1e-5
    epochs: int = 100
    learning_rate: float = 0.05
    max_warp_trials: int = 100
    seed: int = 0


@dataclass
class EvalSection:
    ks: list[int] = field(default_factory=lambda: [50, 100, 150, 200])
    baseline: str = ""


_SECTIONS = {
    "paths": PathsConfig,
    "corpus": CorpusConfig,
    "split": SplitSection,
    "encoder": EncoderSection,
    "mf": MFSection,
    "eval": EvalSection,
}


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    split: SplitSection = field(default_factory=SplitSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    mf: MFSection = field(default_factory=MFSection)
    eval: EvalSection = field(default_factory=EvalSection)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.corpus.vocab_size >= 1, "corpus.vocab_size must be >= 1"),
            (self.corpus.s_max >= 1 and self.corpus.w_max >= 1, "corpus.s_max and corpus.w_max must be >= 1"),
            (self.corpus.n_tags >= 1, "corpus.n_tags must be >= 1"),
            (self.split.p >= 1, "split.p must be >= 1"),
            (self.encoder.embed_dim >= 1 and self.encoder.hidden >= 1 and self.encoder.attn_dim >= 1,
             "encoder dimensions must be >= 1"),
            (self.encoder.learning_rate > 0, "encoder.learning_rate must be > 0"),
            (self.encoder.batch_size >= 1, "encoder.batch_size must be >= 1"),
            (self.encoder.epochs >= 0, "encoder.epochs must be >= 0"),
            (self.mf.loss in ("bpr", "warp"), "mf.loss must be 'bpr' or 'warp'"),
            (self.mf.features in ("identity", "tags", "tfidf", "han"),
             "mf.features must be one of identity, tags, tfidf, han"),
            (self.mf.metadata in ("bias", "bias+factors"), "mf.metadata must be 'bias' or 'bias+factors'"),
            (self.mf.d >= 1, "mf.d must be >= 1"),
            (self.mf.l2 >= 0, "mf.l2 must be >= 0"),
            (self.mf.epochs >= 0, "mf.epochs must be >= 0"),
            (self.mf.learning_rate > 0, "mf.learning_rate must be > 0"),
            (self.mf.max_warp_trials >= 1, "mf.max_warp_trials must be >= 1"),
            (len(self.eval.ks) > 0 and all(k >= 1 for k in self.eval.ks), "eval.ks must be positive integers"),
            (self.paths.interactions_format in ("adjacency", "pairs"),
             "paths.interactions_format must be 'adjacency' or 'pairs'"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.paths.out)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def to_toml(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                lines.append(f"{key} = {_toml_value(value)}")
            lines.append("")
        return "\n".join(lines)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialise {value!r}")


def config_from_dict(data: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a table")
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
        try:
            sections[name] = cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    extra = set(data) - set(_SECTIONS)
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    return PipelineConfig(**sections, base_dir=base_dir)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, path.parent)
