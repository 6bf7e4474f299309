"""INI run configuration: one file, eight sections, unknown keys rejected."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .adaptor import AdaptorConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .frontend import FrontendConfig
from .inference import DecodeConfig
from .lm import LMConfig
from .lora import DEFAULT_RANK, L_LORA, S_LORA
from .model import ModelConfig
from .trainer import OptimizerConfig, TrainConfig

LORA_MODES = ("none", "s", "l", "dual")


@dataclass
class LoraSection:
    mode: str = "dual"
    s_rank: int = DEFAULT_RANK[S_LORA]
    l_rank: int = DEFAULT_RANK[L_LORA]
    s_alpha: float = 0.0  # 0 means alpha = rank
    l_alpha: float = 0.0
    targets: str = "*.attn.wq,*.attn.wv"

    def __post_init__(self):
        if self.mode not in LORA_MODES:
            raise ConfigError(f"lora mode must be one of {LORA_MODES}, got {self.mode!r}")

    @property
    def target_list(self):
        return tuple(t.strip() for t in self.targets.split(",") if t.strip())


@dataclass
class DataSection:
    language_weights: str = ""  # e.g. "fr-en:1,de-en:2"

    def weights(self):
        out = {}
        for item in filter(None, (s.strip() for s in self.language_weights.split(","))):
            pair, _, w = item.partition(":")
            try:
                out[pair.strip()] = float(w)
            except ValueError:
                raise ConfigError(f"bad language weight {item!r}") from None
        return out


@dataclass
class DecodeSection:
    beam_size: int = 5
    max_new_tokens: int = 32
    length_norm_alpha: float = 0.0
    include_transcript: bool = False


# section -> dataclasses whose fields it may set; [train] feeds two configs
SECTIONS = {
    "frontend": (FrontendConfig,),
    "encoder": (EncoderConfig,),
    "adaptor": (AdaptorConfig,),
    "lm": (LMConfig,),
    "lora": (LoraSection,),
    "train": (TrainConfig, OptimizerConfig),
    "data": (DataSection,),
    "decode": (DecodeSection,),
}


def _convert(kind, raw, where):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


def _build(dc_type, values: dict, section: str):
    kw = {}
    for f in fields(dc_type):
        if f.name in values:
            kind = type(f.default) if f.default is not None else str
            kw[f.name] = _convert(kind, values[f.name], f"[{section}] {f.name}")
    return dc_type(**kw)


@dataclass
class RunConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adaptor: AdaptorConfig = field(default_factory=AdaptorConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    lora: LoraSection = field(default_factory=LoraSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataSection = field(default_factory=DataSection)
    decode: DecodeSection = field(default_factory=DecodeSection)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.frontend, self.encoder, self.adaptor, self.lm)

    def decode_config(self) -> DecodeConfig:
        d = self.decode
        return DecodeConfig(d.beam_size, d.max_new_tokens, d.length_norm_alpha)

    def sections(self):
        """``(section, [dataclass instances])`` in file order."""
        return [
            ("frontend", [self.frontend]),
            ("encoder", [self.encoder]),
            ("adaptor", [self.adaptor]),
            ("lm", [self.lm]),
            ("lora", [self.lora]),
            ("train", [self.train, self.optim]),
            ("data", [self.data]),
            ("decode", [self.decode]),
        ]


def parse_config(text: str, source="<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(source))
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    parsed = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        allowed = {f.name for dc in SECTIONS[section] for f in fields(dc)}
        values = dict(cp.items(section))
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [{section}]: {', '.join(unknown)}")
        parsed[section] = values
    built = {}
    for section, types in SECTIONS.items():
        values = parsed.get(section, {})
        for dc in types:
            built[dc] = _build(dc, values, section)
    return RunConfig(
        frontend=built[FrontendConfig], encoder=built[EncoderConfig], adaptor=built[AdaptorConfig],
        lm=built[LMConfig], lora=built[LoraSection], train=built[TrainConfig], optim=built[OptimizerConfig],
        data=built[DataSection], decode=built[DecodeSection],
    )


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, source=path)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for section, objs in cfg.sections():
        lines.append(f"[{section}]")
        for obj in objs:
            for f in fields(obj):
                lines.append(f"{f.name} = {getattr(obj, f.name)}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: RunConfig, out_dir):
    path = Path(out_dir) / "run_config.resolved"
    path.write_text(format_config(cfg), encoding="utf-8")
    return path
