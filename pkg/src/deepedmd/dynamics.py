"""Benchmark vector fields, RK4 integration and dataset sampling.

Initial conditions are drawn with numpy's PCG64 generator. Each trajectory
gets its own stream seeded from ``SeedSequence(seed, spawn_key=(index,))`` so
a trajectory depends only on ``(seed, index)`` and never on how many were
generated before it or by which worker.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DivergenceError, InvalidArgument, NumericOverflowError, SamplingError

BLOWUP = 1e6
SPLITS = ("train", "val", "test")
_MAGIC = b"DEDMDSET"
_FORMAT_VERSION = 1


def pendulum_energy(states):
    """Hamiltonian ``0.5*x2**2 - cos(x1)`` evaluated along the last axis."""
    states = np.asarray(states)
    return 0.5 * states[..., 1] ** 2 - np.cos(states[..., 0])


def _inside_separatrix(x):
    return pendulum_energy(x) < 0.99


@dataclass(frozen=True)
class SystemSpec:
    name: str
    state_dim: int
    dt: float
    t_final: float
    t_pred: float
    box: tuple = ()
    params: dict = field(default_factory=dict)
    admissible: Optional[Callable] = None
    std_scale: bool = False
    rhs: Optional[Callable] = None  # custom field, used for test stubs

    def __post_init__(self):
        if not self.dt > 0 or not self.t_final > 0 or self.t_pred < self.t_final:
            raise InvalidArgument(
                f"need dt > 0, t_final > 0, t_pred >= t_final; got "
                f"{self.dt}, {self.t_final}, {self.t_pred}"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def n_samples(self) -> int:
        return self.n_steps + 1

    @property
    def n_pred_steps(self) -> int:
        return int(round(self.t_pred / self.dt))


SYSTEMS = {
    "pendulum": SystemSpec(
        "pendulum", 2, dt=0.05, t_final=20.0, t_pred=40.0,
        box=((-3.1, 3.1), (-2.0, 2.0)), admissible=_inside_separatrix,
    ),
    "duffing": SystemSpec(
        "duffing", 2, dt=0.05, t_final=20.0, t_pred=40.0,
        box=((-1.0, 1.0), (-1.0, 1.0)),
    ),
    "vanderpol": SystemSpec(
        "vanderpol", 2, dt=0.02, t_final=15.0, t_pred=30.0,
        box=((-2.0, 2.0), (-2.0, 2.0)), params={"mu": 1.5}, std_scale=True,
    ),
    "lorenz63": SystemSpec(
        "lorenz63", 3, dt=0.01, t_final=3.0, t_pred=6.0,
        box=((-15.0, 15.0), (-20.0, 20.0), (0.0, 40.0)),
        params={"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    ),
}


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise InvalidArgument(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


def eval_rhs(system: SystemSpec, state):
    """Vector field of ``system`` at ``state``; state coordinates run along the last axis."""
    y = np.asarray(state, dtype=np.float64)
    if y.ndim == 0 or y.shape[-1] != system.state_dim:
        raise InvalidArgument(
            f"{system.name} expects state length {system.state_dim}, got shape {y.shape}"
        )
    if system.rhs is not None:
        return np.asarray(system.rhs(y), dtype=np.float64)

    name, p = system.name, system.params
    out = np.empty_like(y)
    if name == "pendulum":
        out[..., 0] = y[..., 1]
        out[..., 1] = -np.sin(y[..., 0])
    elif name == "duffing":
        out[..., 0] = y[..., 1]
        out[..., 1] = y[..., 0] - y[..., 0] ** 3
    elif name == "vanderpol":
        out[..., 0] = y[..., 1]
        out[..., 1] = p["mu"] * (1.0 - y[..., 0] ** 2) * y[..., 1] - y[..., 0]
    elif name == "lorenz63":
        x1, x2, x3 = y[..., 0], y[..., 1], y[..., 2]
        out[..., 0] = p["sigma"] * (x2 - x1)
        out[..., 1] = x1 * (p["rho"] - x3) - x2
        out[..., 2] = x1 * x2 - p["beta"] * x3
    else:
        raise InvalidArgument(f"no vector field for system {name!r}")
    return out


def rk4_step(system: SystemSpec, state, dt: float):
    """One classical fourth-order Runge-Kutta step (weights 1, 2, 2, 1 over 6)."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    y = np.asarray(state, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = eval_rhs(system, y)
        _check_stage(k1, 1)
        k2 = eval_rhs(system, y + 0.5 * dt * k1)
        _check_stage(k2, 2)
        k3 = eval_rhs(system, y + 0.5 * dt * k2)
        _check_stage(k3, 3)
        k4 = eval_rhs(system, y + dt * k3)
        _check_stage(k4, 4)
        return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_stage(k, stage):
    if not np.all(np.isfinite(k)):
        raise NumericOverflowError(stage)


def _steps_for(horizon: float, dt: float) -> int:
    if horizon < 0:
        raise InvalidArgument(f"horizon must be non-negative, got {horizon}")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise InvalidArgument(f"horizon {horizon} is not a multiple of dt={dt}")
    return n


def integrate(system: SystemSpec, x0, n_steps: int, dt: Optional[float] = None):
    """Integrate a batch of initial conditions ``(..., N_s)`` for ``n_steps`` steps.

    Returns an array of shape ``(..., n_steps + 1, N_s)``.
    """
    dt = system.dt if dt is None else dt
    y = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("initial condition must be finite")
    out = np.empty(y.shape[:-1] + (n_steps + 1, y.shape[-1]))
    out[..., 0, :] = y
    for j in range(1, n_steps + 1):
        y = rk4_step(system, y, dt)
        if np.any(np.abs(y) > BLOWUP):
            raise DivergenceError(j)
        out[..., j, :] = y
    return out


@dataclass
class Trajectory:
    states: np.ndarray  # (N_T + 1, N_s)
    dt: float
    system: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise InvalidArgument(f"states must be (samples, N_s), got {self.states.shape}")
        if not np.all(np.isfinite(self.states)):
            raise InvalidArgument("trajectory contains non-finite entries")

    @property
    def times(self):
        return self.dt * np.arange(len(self.states))

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.states) - 1)

    def __len__(self):
        return len(self.states)


def simulate(system: SystemSpec, x0, horizon: Optional[float] = None) -> Trajectory:
    if horizon is None:
        horizon = system.t_final
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != system.state_dim:
        raise InvalidArgument(f"x0 has length {x0.shape[0]}, expected {system.state_dim}")
    states = integrate(system, x0, _steps_for(horizon, system.dt))
    return Trajectory(states, system.dt, system.name)


@dataclass
class Dataset:
    """Train/validation/test trajectories stored as ``(count, N_T + 1, N_s)`` arrays.

    Stored states are already divided by ``scale``; ``scale`` is all ones
    unless the system asks for standard-deviation scaling.
    """

    system: str
    dt: float
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    scale: np.ndarray
    seed: int

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise InvalidArgument(f"unknown split {name!r}")
        return getattr(self, name)

    def trajectories(self, name: str) -> list[Trajectory]:
        return [Trajectory(s, self.dt, self.system) for s in self.split(name)]

    def unscale(self, states):
        return np.asarray(states) * self.scale

    def rescale(self, states):
        return np.asarray(states) / self.scale


def sample_initial_condition(system: SystemSpec, seed: int, index: int, max_attempts: int = 10_000):
    """Uniform draw from the system's box, rejection-sampled against its admissibility predicate."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))
    lo = np.array([b[0] for b in system.box], dtype=np.float64)
    hi = np.array([b[1] for b in system.box], dtype=np.float64)
    for _ in range(max_attempts):
        x = rng.uniform(lo, hi)
        if system.admissible is None or system.admissible(x):
            return x
    raise SamplingError(
        f"{system.name}: no admissible initial condition for index {index} "
        f"after {max_attempts} attempts"
    )


def sample_dataset(system: SystemSpec, counts, seed: int) -> Dataset:
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) <= 0:
        raise InvalidArgument(f"counts must be three positive integers, got {counts}")
    if not system.box:
        raise InvalidArgument(f"system {system.name!r} has no sampling box")
    total = sum(counts)
    x0 = np.stack([sample_initial_condition(system, seed, i) for i in range(total)])
    states = integrate(system, x0, system.n_steps)

    n_train, n_val, _ = counts
    parts = np.split(states, [n_train, n_train + n_val])
    scale = np.ones(system.state_dim)
    if system.std_scale:
        scale = parts[0].reshape(-1, system.state_dim).std(axis=0)
        parts = [p / scale for p in parts]
    return Dataset(system.name, system.dt, *parts, scale=scale, seed=int(seed))


def ground_truth(system: SystemSpec, x0_scaled, scale, horizon: float) -> np.ndarray:
    """Re-simulate from a (possibly scaled) initial condition and return scaled states."""
    scale = np.asarray(scale, dtype=np.float64)
    x0 = np.asarray(x0_scaled, dtype=np.float64) * scale
    states = integrate(system, x0, _steps_for(horizon, system.dt))
    return states / scale


# -- file format ------------------------------------------------------------
#
# <split>.bin:  8-byte magic "DEDMDSET", little-endian uint32 header length,
#               UTF-8 JSON header, then count * n_samples * state_dim
#               little-endian float64 values (row-major, trajectory-major).
# <split>.json: the same header, pretty-printed.


def _header(ds: Dataset, split: str) -> dict:
    arr = ds.split(split)
    return {
        "format": _FORMAT_VERSION,
        "system": ds.system,
        "split": split,
        "state_dim": int(arr.shape[2]),
        "dt": float(ds.dt),
        "count": int(arr.shape[0]),
        "n_samples": int(arr.shape[1]),
        "scale": [float(s) for s in ds.scale],
        "seed": int(ds.seed),
        "dtype": "<f8",
    }


def write_dataset(ds: Dataset, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for split in SPLITS:
        header = _header(ds, split)
        blob = json.dumps(header, sort_keys=True).encode()
        path = directory / f"{split}.bin"
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(len(blob).to_bytes(4, "little"))
            fh.write(blob)
            fh.write(np.ascontiguousarray(ds.split(split), dtype="<f8").tobytes())
        (directory / f"{split}.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
        written += [path, directory / f"{split}.json"]
    return written


def read_split(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != _MAGIC:
        raise InvalidArgument(f"{path} is not a dataset file")
    n = int.from_bytes(raw[8:12], "little")
    header = json.loads(raw[12:12 + n])
    shape = (header["count"], header["n_samples"], header["state_dim"])
    data = np.frombuffer(raw, dtype="<f8", offset=12 + n)
    if data.size != math.prod(shape):
        raise InvalidArgument(f"{path}: payload has {data.size} values, header implies {shape}")
    return header, data.reshape(shape).astype(np.float64)


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    arrays, header = {}, None
    for split in SPLITS:
        path = directory / f"{split}.bin"
        if not path.exists():
            raise FileNotFoundError(path)
        header, arrays[split] = read_split(path)
    return Dataset(
        header["system"], header["dt"], arrays["train"], arrays["val"], arrays["test"],
        scale=np.array(header["scale"]), seed=header["seed"],
    )
