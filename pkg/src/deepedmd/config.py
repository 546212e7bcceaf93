"""Run configuration: presets, flat ``key = value`` files and command-line overrides.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
The effective configuration is written back in the same format, so it can
re-drive an identical run.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import dynamics
from .errors import ConfigError
from .training import HyperParams

PRESETS = ("desk-scale", "paper-scale")

# latent dimension per system; lorenz63 follows the results table
LATENT_DIM = {"pendulum": 2, "duffing": 3, "vanderpol": 8, "lorenz63": 3}

_FULL = {
    "counts": (10_000, 3_000, 2_000),
    "epochs": {"pendulum": 1000, "duffing": 1000, "vanderpol": 1000, "lorenz63": 1000},
    "lr": {"pendulum": 1e-3, "duffing": 1e-4, "vanderpol": 1e-4, "lorenz63": 1e-4},
    "batch_size": {"pendulum": 512, "duffing": 256, "vanderpol": 256, "lorenz63": 256},
}
_DESK = {
    "counts": (500, 150, 100),
    # small batches buy optimizer steps; lorenz63 and vanderpol keep the slower full-scale rate
    "epochs": {"pendulum": 200, "duffing": 150, "vanderpol": 150, "lorenz63": 150},
    "lr": {"pendulum": 1e-3, "duffing": 1e-3, "vanderpol": 1e-4, "lorenz63": 1e-4},
    "batch_size": {"pendulum": 8, "duffing": 16, "vanderpol": 16, "lorenz63": 16},
}


@dataclass
class RunConfig:
    system: str = "pendulum"
    preset: str = "desk-scale"
    seed: int = 0
    out: str = "runs/default"
    dataset: str = ""
    checkpoint: str = ""
    n_train: int = 500
    n_val: int = 150
    n_test: int = 100
    threads: int = 0
    baseline: str = ""
    t_pred: float = 0.0
    use_best: bool = False
    band: float = 0.01
    n_export: int = 10
    traj: int = -1
    # hyperparameters
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1e-9
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 200
    n_latent: int = 2
    width: int = 128
    hidden: int = 3
    ridge: float = 1e-10
    rel_threshold: float = 1e-10

    @property
    def counts(self):
        return (self.n_train, self.n_val, self.n_test)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def dataset_dir(self) -> Path:
        return Path(self.dataset) if self.dataset else self.out_dir / "data"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else self.out_dir / "checkpoint.bin"

    @property
    def system_spec(self) -> dynamics.SystemSpec:
        return dynamics.get_system(self.system)

    @property
    def prediction_time(self) -> float:
        return self.t_pred if self.t_pred > 0 else self.system_spec.t_pred

    def hyper(self) -> HyperParams:
        names = {f.name for f in dataclasses.fields(HyperParams)}
        return HyperParams(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def dumps(self) -> str:
        lines = ["# effective configuration"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def preset_values(preset: str, system: str) -> dict:
    """Every setting a preset pins for ``system``."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {list(PRESETS)}")
    if system not in dynamics.SYSTEMS:
        raise ConfigError(f"unknown system {system!r}; choose from {sorted(dynamics.SYSTEMS)}")
    p = _FULL if preset == "paper-scale" else _DESK
    n_train, n_val, n_test = p["counts"]
    return {
        "preset": preset, "system": system,
        "n_train": n_train, "n_val": n_val, "n_test": n_test,
        "alpha1": 1.0, "alpha2": 1.0, "alpha3": 1.0, "alpha4": 1e-9,
        "lr": p["lr"][system], "batch_size": p["batch_size"][system], "epochs": p["epochs"][system],
        "n_latent": LATENT_DIM[system], "width": 128, "hidden": 3,
        "ridge": 1e-10, "rel_threshold": 1e-10,
    }


def _convert(key: str, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    typ = type(_FIELDS[key].default)
    if not isinstance(raw, str):
        return typ(raw)
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            try:
                return int(raw)
            except ValueError:
                f = float(raw)
                if not f.is_integer():
                    raise
                return int(f)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_pairs(lines, source="<config>") -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _convert(key, value)
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_pairs(path.read_text().splitlines(), str(path))


def resolve(file_values: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Preset defaults, then config-file values, then overrides (last wins)."""
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    merged = {**file_values, **overrides}
    preset = merged.get("preset", RunConfig.preset)
    system = merged.get("system", RunConfig.system)
    values = preset_values(preset, system)
    values.update(file_values)
    values.update(overrides)
    values = {k: _convert(k, v) for k, v in values.items()}
    cfg = RunConfig(**values)
    cfg.hyper()  # validates hyperparameters
    if cfg.threads < 0:
        raise ConfigError("threads must be >= 0")
    if cfg.baseline not in ("", "dmd"):
        raise ConfigError(f"unknown baseline {cfg.baseline!r}")
    return cfg
