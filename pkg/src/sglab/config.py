"""Training configuration and the strict ``key=value`` config-file parser."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

log = logging.getLogger(__name__)

VARIANTS = ("sigan", "giegan", "diegan")
PATH_KEYS = ("data_root", "out_dir")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "sigan"
    lr_size: int = 8
    batch_size: int = 16
    iterations: int = 500
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    lr_c: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    margin: float = 0.5
    gamma: float = 0.25
    beta: float = 0.5
    lambda_r: float = 1.0
    lambda_c: float = 1.0
    genuine_fraction: float = 0.5
    saturating: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    res_before: int = 2
    res_between: int = 1
    tail_channels: int = 32

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems[0][1])

    def problems(self) -> list[tuple[str, str]]:
        """(key, message) for every violated invariant."""
        out = []
        if self.variant not in VARIANTS:
            out.append(("variant", f"variant must be one of {', '.join(VARIANTS)}"))
        if self.lr_size < 4:
            out.append(("lr_size", "lr_size must be >= 4"))
        if self.batch_size < 2:
            out.append(("batch_size", "batch_size must be >= 2"))
        if self.iterations < 0:
            out.append(("iterations", "iterations must be >= 0"))
        for key in ("lr_d", "lr_g", "lr_c", "lambda_r", "lambda_c"):
            if getattr(self, key) < 0:
                out.append((key, f"{key} must be >= 0"))
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            out.append(("adam_beta1", "Adam betas must lie in [0, 1)"))
        if self.adam_eps <= 0:
            out.append(("adam_eps", "adam_eps must be > 0"))
        if self.margin <= 0:
            out.append(("margin", "margin must be > 0"))
        if self.gamma < 0 or self.beta < 0:
            out.append(("gamma", "gamma and beta must be >= 0"))
        if self.gamma + self.beta >= 1:
            out.append(("beta", "gamma+beta must be < 1"))
        if not 0 <= self.genuine_fraction <= 1:
            out.append(("genuine_fraction", "genuine_fraction must lie in [0, 1]"))
        if self.checkpoint_every < 0:
            out.append(("checkpoint_every", "checkpoint_every must be >= 0"))
        if self.res_before < 1 or self.res_between < 0 or self.tail_channels < 1:
            out.append(("res_before", "architecture sizes must be positive"))
        return out

    @property
    def hr_size(self) -> int:
        return 4 * self.lr_size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class RunPaths:
    data_root: str | None = None
    out_dir: str = "runs/latest"


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, kind: type):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _field_types() -> dict[str, type]:
    types = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: types[f.type] for f in dataclasses.fields(TrainConfig)}


def parse_config_text(text: str) -> tuple[TrainConfig, RunPaths]:
    """Parse ``key=value`` lines (``#`` comments, blank lines allowed).

    Unknown keys, duplicates, bad values and violated invariants raise
    :class:`ConfigError` naming the key and line. Defaults applied for
    absent keys are logged.
    """
    types = _field_types()
    values: dict = {}
    paths: dict = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value (line {lineno})")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in lines:
            raise ConfigError(f"duplicate key '{key}' (line {lineno})")
        lines[key] = lineno
        if key in PATH_KEYS:
            paths[key] = value
        elif key in types:
            try:
                values[key] = _coerce(key, value, types[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}' (line {lineno}): {exc}") from None
        else:
            raise ConfigError(f"unknown key '{key}' (line {lineno})")

    defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    probe = SimpleNamespace(**{**defaults, **values})
    problems = TrainConfig.problems(probe)
    if problems:
        key, msg = problems[0]
        where = f"line {lines[key]}" if key in lines else "default"
        raise ConfigError(f"{msg} (key '{key}', {where})")
    for f in dataclasses.fields(TrainConfig):
        if f.name not in values:
            log.info("config default: %s=%s", f.name, f.default)
    return TrainConfig(**values), RunPaths(**paths)


def parse_config(path) -> TrainConfig:
    return parse_run_config(path)[0]


def parse_run_config(path) -> tuple[TrainConfig, RunPaths]:
    return parse_config_text(Path(path).read_text())


def format_config(config: TrainConfig, paths: RunPaths | None = None) -> str:
    lines = [f"{k}={v}" for k, v in config.to_dict().items()]
    if paths is not None:
        lines += [f"{k}={v}" for k, v in dataclasses.asdict(paths).items() if v is not None]
    return "\n".join(lines) + "\n"
