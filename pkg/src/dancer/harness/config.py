"""Attack configuration, config-file parsing and seed derivation.

Config files are either JSON objects or a flat ``key = value`` text format
(a subset of TOML)::

    # comment
    lambda_adversarial = 0.5
    epochs = 4
    curriculum = "low_confidence"
    dims = [32, 64]

Comments occupy whole lines. Values are parsed as JSON literals (numbers,
``true``/``false``, quoted strings, lists); anything else is taken as a
bare string. Section headers
``[name]`` are ignored so TOML files with a single table also load.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError

SWEEP_LAMBDAS = (0.5, 0.8, 0.9, 0.95)

SEED_PURPOSES = ("split", "init", "judge", "sampling", "probe")


def derive_seed(master_seed: int, purpose: str, *path: int) -> int:
    """Deterministic 63-bit child seed for ``purpose`` (and optional indices).

    The child is ``SeedSequence(master, spawn_key=(purpose_index, *path))``,
    i.e. the same stream ``SeedSequence.spawn`` would hand out.
    """
    if purpose not in SEED_PURPOSES:
        raise ConfigError(f"unknown seed purpose {purpose!r}")
    key = (SEED_PURPOSES.index(purpose),) + tuple(int(p) for p in path)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class AttackConfig:
    target: str | None = None
    judge: str | None = None
    attack_set: str | None = None
    eval_set: str | None = None
    vocab: str | None = None
    lambda_adversarial: float = 0.5
    lambda_similar: float | None = None  # None: 1 - lambda_adversarial
    epochs: int = 4
    batch_size: int = 10
    lr: float = 2e-4
    seed: int = 0
    curriculum: str = "full"
    fraction: float = 0.10
    collapse_threshold: float = 0.2
    collapse_window: int = 5
    halt_on_collapse: bool = True
    collapse_patience: int | None = None  # batches after the flag; None: collapse_window
    oracle_temperature: float = 1.0
    probe_size: int = 20
    sample_dumps: int = 1
    max_len: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def lambdas(self) -> tuple[float, float]:
        lam_sim = 1.0 - self.lambda_adversarial if self.lambda_similar is None else self.lambda_similar
        return self.lambda_adversarial, lam_sim

    def validate(self) -> None:
        lam_adv, lam_sim = self.lambdas
        if lam_adv < 0 or lam_sim < 0:
            raise ConfigError("reward weights must be non-negative")
        if self.curriculum not in ("full", "low_confidence"):
            raise ConfigError(f"curriculum must be 'full' or 'low_confidence', got {self.curriculum!r}")
        if not 0 < self.fraction <= 1:
            raise ConfigError("curriculum fraction must lie in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.lr > 0 or not self.oracle_temperature > 0:
            raise ConfigError("lr and oracle_temperature must be positive")
        if not 0 < self.collapse_threshold <= 1 or self.collapse_window < 1:
            raise ConfigError("collapse_threshold must lie in (0, 1] and collapse_window >= 1")

    def check_paths(self) -> None:
        for name in ("target", "judge", "attack_set"):
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config field {name!r} is required")
            if not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")
        for name in ("eval_set", "vocab"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name} path does not exist: {value}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)


def parse_config_text(text: str) -> dict:
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return data
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or (line.startswith("[") and line.endswith("]")):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        try:
            data[key] = json.loads(value)
        except json.JSONDecodeError:
            data[key] = value
    return data


def load_config_file(path) -> dict:
    try:
        return parse_config_text(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
