"""Flat key = value pipeline configuration; command-line flags override file values."""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .errors import ConfigError

# keys that never change results and so stay out of the hash
_UNHASHED = {"jobs", "out"}


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    matches: str | None = None
    shots: str | None = None
    segments: str | None = None
    xg_model: str | None = None
    hazards: str | None = None
    out: str = "run"
    pitch_length: float = 105.0
    pitch_width: float = 68.0
    goal_width: float = 7.32
    horizon: float = 93.0
    step: float = 0.1
    min_league_matches: int = 300
    xg_folds: int = 10
    lam: float = 0.042
    zeta: float = 0.002
    grid: str = "lambda=log:1:10000:5,zeta=0:0.004:3"
    folds: int = 10
    repeats: int = 3
    burn_in_days: int = 365
    seed: int = 0
    window_years: float = 2.0
    min_minutes: float = 900.0
    jobs: int = 1

    def hash(self) -> str:
        payload = {k: v for k, v in dataclasses.asdict(self).items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


_ALIASES = {"lambda": "lam", "xg": "xg_model"}
_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw):
    if raw is None:
        return None
    field = _FIELDS[key]
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return str(raw)


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def build_config(path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    values: dict = {}
    if path:
        values.update(read_config_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, raw in values.items():
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, raw)
    cfg = PipelineConfig(**kwargs)
    parse_grid(cfg.grid)
    return cfg


def _axis(spec: str) -> list[float]:
    """'a:b:n' linear, 'log:a:b:n' logarithmic, or '|'-separated values."""
    try:
        if spec.startswith("log:"):
            a, b, n = spec[4:].split(":")
            return [float(v) for v in np.logspace(np.log10(float(a)), np.log10(float(b)), int(n))]
        if ":" in spec:
            a, b, n = spec.split(":")
            return [float(v) for v in np.linspace(float(a), float(b), int(n))]
        return [float(v) for v in spec.split("|")]
    except ValueError:
        raise ConfigError(f"bad grid axis {spec!r}") from None


def parse_grid(spec: str) -> list[tuple[float, float]]:
    """``lambda=0.01:0.1:5,zeta=0:0.004:5`` to the 25 (lambda, zeta) pairs."""
    axes = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ConfigError(f"bad grid part {part!r}")
        key, value = (s.strip() for s in part.split("=", 1))
        if key not in {"lambda", "zeta"}:
            raise ConfigError(f"unknown grid axis {key!r}")
        axes[key] = _axis(value)
    lams = axes.get("lambda")
    zetas = axes.get("zeta", [0.0])
    if not lams or not zetas:
        raise ConfigError("grid needs at least one lambda")
    if any(v < 0 for v in lams + zetas):
        raise ConfigError("grid values must be non-negative")
    return [(lam, zeta) for lam in lams for zeta in zetas]
