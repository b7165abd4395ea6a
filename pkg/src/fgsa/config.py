"""Run configuration: an INI-style file with [backbone], [adapter], [train],
[data] and [out] sections. Missing keys take the toy defaults."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .adapter import AdapterConfig
from .backbone import BackboneConfig
from .data import SynthConfig

# reference values from the full-scale setup; the toy run uses TrainConfig defaults
FULL_SCALE_LR = 6e-5
FULL_SCALE_WEIGHT_DECAY = 0.05
FULL_SCALE_BATCH = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.05
    epochs: int = 13
    batch: int = 2
    seed: int = 0
    max_steps: int = 0  # 0 = no cap

    def __post_init__(self):
        if self.lr <= 0 or self.batch < 1 or self.epochs < 1 or self.max_steps < 0:
            raise ValueError(f"invalid training settings {self}")


@dataclass(frozen=True)
class DataConfig:
    root: str = ""  # directory with train/ and test/ splits; empty = synthetic
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/default"

    def with_values(self, section: str, **kw) -> "RunConfig":
        return replace(self, **{section: replace(getattr(self, section), **kw)})


_SYNTH_KEYS = {"size": "size", "n_train": "n_train", "n_test": "n_test", "seed": "seed",
               "contrast": "contrast_delta", "contrast_delta": "contrast_delta", "shape": "shape",
               "texture_std": "texture_std"}


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(float(v) for v in raw.split(","))
    return raw.strip()


def _section(cp: configparser.ConfigParser, name: str, cls, base=None):
    obj = base if base is not None else cls()
    if not cp.has_section(name):
        return obj
    known = {f.name: getattr(obj, f.name) for f in fields(cls)}
    kw = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        kw[key] = _coerce(raw, known[key])
    return replace(obj, **kw)


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    base_dir = base_dir or Path.cwd()
    try:
        bb = _section(cp, "backbone", BackboneConfig)
        ad = _section(cp, "adapter", AdapterConfig)
        tr = _section(cp, "train", TrainConfig)
        synth = SynthConfig(size=bb.image_size)
        root = ""
        if cp.has_section("data"):
            kw = {}
            for key, raw in cp.items("data"):
                if key == "root":
                    root = raw.strip()
                elif key in _SYNTH_KEYS:
                    attr = _SYNTH_KEYS[key]
                    kw[attr] = _coerce(raw, getattr(synth, attr))
                else:
                    raise ConfigError(f"unknown key [data] {key}")
            synth = replace(synth, **kw)
        out_dir = cp.get("out", "dir", fallback="runs/default")
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    if root:
        rp = Path(root)
        if not rp.is_absolute():
            rp = base_dir / rp
        if not rp.is_dir():
            raise ConfigError(f"data root does not exist: {rp}")
        root = str(rp)
    elif synth.size != bb.image_size:
        raise ConfigError(f"synthetic size {synth.size} != backbone image_size {bb.image_size}")
    op = Path(out_dir)
    if not op.is_absolute():
        op = base_dir / op
    return RunConfig(bb, ad, tr, DataConfig(root, synth), str(op))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)


def dump_config(cfg: RunConfig) -> str:
    """Render ``cfg`` back to the INI text format."""
    def fmt(v):
        return ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)

    lines = []
    for name, obj in (("backbone", cfg.backbone), ("adapter", cfg.adapter), ("train", cfg.train)):
        lines.append(f"[{name}]")
        lines += [f"{f.name} = {fmt(getattr(obj, f.name))}" for f in fields(obj)]
        lines.append("")
    lines.append("[data]")
    if cfg.data.root:
        lines.append(f"root = {cfg.data.root}")
    s = cfg.data.synth
    lines += [f"size = {s.size}", f"n_train = {s.n_train}", f"n_test = {s.n_test}",
              f"seed = {s.seed}", f"contrast = {s.contrast_delta}", f"shape = {s.shape}",
              f"texture_std = {s.texture_std}", "", "[out]", f"dir = {cfg.out_dir}", ""]
    return "\n".join(lines)


def as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
