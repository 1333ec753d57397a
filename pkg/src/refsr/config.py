"""Run configuration (plain-text key=value) and training-pair manifests.

A manifest is one UTF-8 line per pair: hr_path<TAB>ref_path<TAB>level?,
where the optional level is one of the five similarity labels. Relative
paths resolve against the manifest's own directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

LEVEL_TAGS = ("XH", "H", "M", "L", "XL")

FEATURE_SOURCES = ("fallback", "external")

# config-file key -> dataclass field
_KEY_ALIASES = {"lambda": "lambda_"}


@dataclass
class RunConfig:
    # loss weights
    alpha: float = 1e-4
    beta: float = 1e-6
    lambda_: float = 1e-4
    # optimizer / schedule
    lr: float = 1e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 50
    pretrain_epochs: int = 5
    total_epochs: int = 25
    batch_size: int = 4
    critic_steps: int = 1
    # adversarial regularization
    gp_enabled: bool = True
    gp_weight: float = 10.0
    clip_limit: float = 0.01
    # matching / swapping
    patch_size: int = 3
    stride: int = 1
    epsilon: float = 1e-12
    weight_mode: str = "multiply_sim"
    # feature source
    feature_source: str = "fallback"
    fallback_seed: int = 0
    feature_dir: str = ""
    match_layer: str = "relu3_1"
    # generator architecture
    features: int = 64
    content_blocks: int = 4
    transfer_blocks: int = 4
    # run plumbing
    seed: int = 0
    workers: int = 1
    cache_dir: str = "mt_cache"

    def __post_init__(self):
        if self.lr <= 0 or self.lr_decay <= 0 or self.lr_decay_every <= 0:
            raise ValueError("learning rate and decay schedule must be positive")
        if self.pretrain_epochs < 0 or self.total_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1 or self.critic_steps < 1:
            raise ValueError("batch_size and critic_steps must be >= 1")
        if self.feature_source not in FEATURE_SOURCES:
            raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}")
        if self.feature_source == "external" and not self.feature_dir:
            raise ValueError("external feature source needs feature_dir")
        if self.gp_weight < 0 or self.clip_limit <= 0:
            raise ValueError("gp_weight must be >= 0 and clip_limit > 0")

    def fingerprint(self) -> str:
        """Identity of everything that shapes a cached texture map."""
        src = (
            f"fallback:{self.fallback_seed}"
            if self.feature_source == "fallback"
            else f"external:{self.match_layer}"
        )
        return (
            f"k={self.patch_size};s={self.stride};eps={self.epsilon!r};"
            f"mode={self.weight_mode};src={src}"
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            key = "lambda" if f.name == "lambda_" else f.name
            val = getattr(self, f.name)
            if isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key}={val}")
        return "\n".join(lines) + "\n"


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"bad boolean {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw.strip()


def parse_config(text: str) -> RunConfig:
    defaults = RunConfig()
    by_name = {f.name: getattr(defaults, f.name) for f in fields(RunConfig)}
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        name = _KEY_ALIASES.get(key, key)
        if name not in by_name:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        overrides[name] = _coerce(raw, by_name[name])
    return replace(defaults, **overrides)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_text())


@dataclass(frozen=True)
class PairRecord:
    hr_path: str
    ref_path: str
    level: str = ""


@dataclass(frozen=True)
class PairManifest:
    pairs: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("manifest must contain at least one pair")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def parse_manifest(text: str, base_dir: str = ".") -> PairManifest:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) not in (2, 3):
            raise ValueError(
                f"manifest line {lineno}: expected hr<TAB>ref<TAB>level?, got {line!r}"
            )
        level = parts[2].strip() if len(parts) == 3 else ""
        if level and level not in LEVEL_TAGS:
            raise ValueError(
                f"manifest line {lineno}: level {level!r} not in {LEVEL_TAGS}"
            )
        hr = os.path.normpath(os.path.join(base_dir, parts[0].strip()))
        ref = os.path.normpath(os.path.join(base_dir, parts[1].strip()))
        for p in (hr, ref):
            if not os.path.exists(p):
                raise FileNotFoundError(f"manifest line {lineno}: missing file {p}")
        pairs.append(PairRecord(hr, ref, level))
    return PairManifest(tuple(pairs))


def load_manifest(path) -> PairManifest:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_manifest(text, base_dir=os.path.dirname(os.path.abspath(path)))
