"""Run configuration and seed derivation.

A run is described by an INI-style file (sections of ``key = value``)::

    [run]
    seed = 0              ; master seed, every RNG derives from it
    ecc = false           ; column parity in the last payload group
    output_dir = out      ; the only place commands write to

    [paths]
    images =              ; IDX image file (.gz or raw)
    labels =              ; IDX label file
    dictionary =          ; code dictionary, "code<TAB>token" per line
    text =                ; UTF-8 message for channel-test
    generator =           ; generator checkpoint (channel-test)
    discriminator =       ; discriminator checkpoint (channel-test)
    checkpoints =         ; default: <output_dir>/checkpoints

    [training]            ; TrainingConfig fields, same defaults
    steps = 1000
    batch_size = 64
    lr = 0.0002
    beta1 = 0.5
    beta2 = 0.999
    noise_dim = 100
    g_steps = 2
    probe_every = 10
    gen_width = 64
    disc_width = 16
    checkpoint_every = 0
    limit = 0             ; use only the first N training images, 0 = all

    [channel]             ; ChannelConfig fields, same defaults
    trials = 100
    shuffle = true
    duplicate_prob = 0.0
    corruption_rate = 0.0
    corrupt_tiles = 0
    noise_low = 16
    noise_high = 26
    oracle = false        ; flat-level stand-in instead of the trained nets

Relative paths are resolved against the directory of the config file.
Sub-seeds for training and the channel come from :func:`derive_seed`.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

PATH_KEYS = ("images", "labels", "dictionary", "text", "generator", "discriminator", "checkpoints")


class ConfigError(ValueError):
    pass


def derive_seed(master: int, name: str) -> int:
    """Named sub-seed: first 8 bytes (big-endian) of sha256("<master>:<name>")."""
    digest = hashlib.sha256(f"{int(master)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class RunConfig:
    seed: int = 0
    ecc: bool = False
    output_dir: Path = Path("out")
    images: Optional[Path] = None
    labels: Optional[Path] = None
    dictionary: Optional[Path] = None
    text: Optional[Path] = None
    generator: Optional[Path] = None
    discriminator: Optional[Path] = None
    checkpoints: Optional[Path] = None
    training: "object" = None
    limit: int = 0
    channel: "object" = None
    trials: int = 100
    oracle: bool = False
    source: Optional[Path] = field(default=None, repr=False)

    def __post_init__(self):
        from .acgan.train import TrainingConfig
        from .channel import ChannelConfig

        if self.training is None:
            self.training = TrainingConfig(seed=self.seed)
        if self.channel is None:
            self.channel = ChannelConfig(seed=derive_seed(self.seed, "channel"))
        if self.checkpoints is None:
            self.checkpoints = Path(self.output_dir) / "checkpoints"
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.limit < 0:
            raise ConfigError("limit must be non-negative")

    def require(self, *names: str) -> None:
        """Fail unless every named path is set and exists."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"[paths] {name} is not set")
            if not Path(value).exists():
                raise ConfigError(f"[paths] {name} = {value} does not exist")

    def as_dict(self) -> dict:
        out = {"seed": self.seed, "ecc": self.ecc, "output_dir": str(self.output_dir),
               "limit": self.limit, "trials": self.trials, "oracle": self.oracle}
        for k in PATH_KEYS:
            v = getattr(self, k)
            out[k] = None if v is None else str(v)
        out["training"] = dataclasses.asdict(self.training)
        out["channel"] = dataclasses.asdict(self.channel)
        return out


def _field_types(cls) -> dict:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _convert(section, key: str, kind: str):
    if kind in ("int", int):
        return section.getint(key)
    if kind in ("float", float):
        return section.getfloat(key)
    if kind in ("bool", bool):
        return section.getboolean(key)
    return section.get(key)


def _section_values(parser, name: str, cls, extra=(), skip=()) -> dict:
    if not parser.has_section(name):
        return {}
    known = _field_types(cls)
    section = parser[name]
    values = {}
    for key in section:
        if key in skip:
            continue
        if key in extra:
            continue
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        try:
            values[key] = _convert(section, key, known[key])
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return values


def load_config(path) -> RunConfig:
    """Parse a run config file; unknown sections or keys are errors."""
    from .acgan.train import TrainingConfig
    from .channel import ChannelConfig

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in parser.sections():
        if name not in ("run", "paths", "training", "channel"):
            raise ConfigError(f"unknown section [{name}]")
    base = path.parent

    run = parser["run"] if parser.has_section("run") else {}
    for key in run:
        if key not in ("seed", "ecc", "output_dir"):
            raise ConfigError(f"unknown key [run] {key}")
    try:
        seed = parser.getint("run", "seed", fallback=0)
        ecc = parser.getboolean("run", "ecc", fallback=False)
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from None
    output_dir = base / parser.get("run", "output_dir", fallback="out")

    paths = {}
    if parser.has_section("paths"):
        for key, value in parser["paths"].items():
            if key not in PATH_KEYS:
                raise ConfigError(f"unknown key [paths] {key}")
            if value.strip():
                paths[key] = base / value.strip()

    tr = _section_values(parser, "training", TrainingConfig, extra=("limit",), skip=("seed",))
    if parser.has_option("training", "seed"):
        raise ConfigError("[training] seed: set the master seed in [run]")
    ch = _section_values(parser, "channel", ChannelConfig, extra=("trials", "oracle"), skip=())
    if "seed" in ch:
        raise ConfigError("[channel] seed: set the master seed in [run]")
    try:
        limit = parser.getint("training", "limit", fallback=0)
        trials = parser.getint("channel", "trials", fallback=100)
        oracle = parser.getboolean("channel", "oracle", fallback=False)
        training = TrainingConfig(seed=seed, **tr)
        channel = ChannelConfig(seed=derive_seed(seed, "channel"), **ch)
        return RunConfig(seed=seed, ecc=ecc, output_dir=output_dir, training=training,
                         channel=channel, limit=limit, trials=trials, oracle=oracle,
                         source=path, **paths)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
