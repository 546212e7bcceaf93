"""Autoencoder training against the four-term EDMD loss, checkpoints and evaluation."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import dynamics, edmd, linalg
from .errors import InvalidArgument, TrainingDiverged
from .network import AdamState, NetworkParams, TapeParams, adam_step, decode, encode, init_network, mlp_node

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e8
COMPONENTS = ("recon", "dmd", "pred", "reg")


@dataclass
class HyperParams:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1e-9
    lr: float = 1e-3
    batch_size: int = 512
    epochs: int = 1000
    n_latent: int = 2
    width: int = 128
    hidden: int = 3
    ridge: float = 1e-10
    rel_threshold: float = linalg.DEFAULT_REL_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be non-negative")
        if self.lr <= 0 or self.ridge <= 0:
            raise InvalidArgument("lr and ridge must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.n_latent < 1 or self.width < 1 or self.hidden < 0:
            raise InvalidArgument(f"invalid network/training sizes in {self}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


# -- loss ----------------------------------------------------------------------


def dldmd_loss(tp: TapeParams, batch, h: HyperParams):
    """Four-term loss on a batch of equal-length trajectories ``(B, N_T + 1, N_s)``.

    Returns ``(total, components)`` as tape nodes; ``components`` maps
    recon/dmd/pred/reg to their unweighted values (reg already includes alpha4).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1] < 2:
        raise InvalidArgument(f"batch must be (B, samples >= 2, N_s), got {batch.shape}")
    y = np.ascontiguousarray(np.swapaxes(batch, 1, 2))  # (B, N_s, M)
    n_steps = y.shape[2] - 1

    n_batch, n_state, n_samples = y.shape
    # networks see all points of the batch as columns of one 2-D matrix
    cols = ad.constant(np.transpose(y, (1, 0, 2)).reshape(n_state, -1))
    psi_cols = mlp_node(tp.encoder, cols)
    recon = ad.mse(mlp_node(tp.decoder, psi_cols), cols)
    psi = ad.permute(ad.reshape(psi_cols, (-1, n_batch, n_samples)), (1, 0, 2))

    minus, plus = psi[:, :, :-1], psi[:, :, 1:]
    K = ad.diff_koopman(minus, plus, h.ridge)
    dmd = ad.mean(ad.frobenius(plus - K @ minus))

    z = psi[:, :, 0:1]
    rollout = []
    for _ in range(n_steps):
        z = K @ z
        rollout.append(z)
    z_cols = ad.reshape(ad.permute(ad.concatenate(rollout, axis=-1), (1, 0, 2)), (psi.shape[1], -1))
    target = np.transpose(y[:, :, 1:], (1, 0, 2)).reshape(n_state, -1)
    pred = ad.mse(mlp_node(tp.decoder, z_cols), target)

    reg = h.alpha4 * ad.sum(ad.stack([ad.sum(ad.square(w)) for w in tp.weights()]))
    total = h.alpha1 * recon + h.alpha2 * dmd + h.alpha3 * pred + reg
    return total, {"recon": recon, "dmd": dmd, "pred": pred, "reg": reg}


def loss_values(params: NetworkParams, batch, h: HyperParams) -> dict:
    total, comps = dldmd_loss(TapeParams.from_params(params), batch, h)
    out = {k: float(v.value) for k, v in comps.items()}
    out["total"] = float(total.value)
    return out


def loss_and_grads(params: NetworkParams, batch, h: HyperParams):
    tp = TapeParams.from_params(params)
    total, comps = dldmd_loss(tp, batch, h)
    values = {k: float(v.value) for k, v in comps.items()}
    values["total"] = float(total.value)
    _check_finite(values)
    return values, ad.gradients(total, tp.nodes)


def _check_finite(values, epoch=None):
    for name in ("total",) + COMPONENTS:
        v = values[name]
        if not math.isfinite(v):
            bad = next((c for c in COMPONENTS if not math.isfinite(values[c])), name)
            raise TrainingDiverged(bad, values[bad], epoch)
    if values["total"] > DIVERGENCE_LIMIT:
        worst = max(COMPONENTS, key=lambda c: values[c])
        raise TrainingDiverged(worst, values[worst], epoch)


# -- checkpoints -----------------------------------------------------------------

HISTORY_KEYS = (
    "train_total", "train_recon", "train_dmd", "train_pred", "train_reg",
    "val_total", "val_recon", "val_dmd", "val_pred", "val_reg", "wall_seconds",
)
_CKPT_MAGIC = b"DEDMDCKP"


@dataclass
class Checkpoint:
    params: NetworkParams
    hyper: HyperParams
    system: str
    dt: float
    scale: np.ndarray
    epoch: int = 0
    history: dict = field(default_factory=lambda: {k: [] for k in HISTORY_KEYS})
    failed: bool = False
    failure: str = ""
    best_params: Optional[NetworkParams] = None
    best_epoch: int = 0

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def header(self) -> dict:
        return {
            "format": 1,
            "system": self.system,
            "dt": self.dt,
            "scale": [float(s) for s in np.atleast_1d(self.scale)],
            "epoch": self.epoch,
            "seed": self.hyper.seed,
            "hyper": self.hyper.to_dict(),
            "encoder_shapes": [[list(w.shape), list(b.shape)] for w, b in self.params.encoder],
            "decoder_shapes": [[list(w.shape), list(b.shape)] for w, b in self.params.decoder],
            "n_params": self.n_params,
            "history": self.history,
            "failed": self.failed,
            "failure": self.failure,
            "best_epoch": self.best_epoch,
            "has_best": self.best_params is not None,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write ``magic | uint32 header length | JSON header | <f8 params [| <f8 best params]``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(ckpt.header(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(ckpt.params.to_vector().astype("<f8").tobytes())
        if ckpt.best_params is not None:
            fh.write(ckpt.best_params.to_vector().astype("<f8").tobytes())
    return path


def _skeleton(shapes):
    return [(np.zeros(ws), np.zeros(bs)) for ws, bs in shapes]


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC:
        raise InvalidArgument(f"{path} is not a checkpoint file")
    n = int.from_bytes(raw[8:12], "little")
    head = json.loads(raw[12:12 + n])
    payload = np.frombuffer(raw, dtype="<f8", offset=12 + n).astype(np.float64)
    skeleton = NetworkParams(_skeleton(head["encoder_shapes"]), _skeleton(head["decoder_shapes"]))
    size = skeleton.n_params
    expected = size * (2 if head["has_best"] else 1)
    if payload.size != expected:
        raise InvalidArgument(f"{path}: payload has {payload.size} values, expected {expected}")
    best = skeleton.from_vector(payload[size:]) if head["has_best"] else None
    return Checkpoint(
        params=skeleton.from_vector(payload[:size]),
        hyper=HyperParams.from_dict(head["hyper"]),
        system=head["system"],
        dt=head["dt"],
        scale=np.array(head["scale"]),
        epoch=head["epoch"],
        history={k: list(v) for k, v in head["history"].items()},
        failed=head["failed"],
        failure=head["failure"],
        best_params=best,
        best_epoch=head["best_epoch"],
    )


# -- training loop -----------------------------------------------------------------


def split_loss(params: NetworkParams, states, h: HyperParams) -> dict:
    """Loss components averaged over a whole split, evaluated in batches."""
    n = len(states)
    acc = dict.fromkeys(("total",) + COMPONENTS, 0.0)
    for start in range(0, n, h.batch_size):
        chunk = states[start:start + h.batch_size]
        vals = loss_values(params, chunk, h)
        for k in acc:
            acc[k] += vals[k] * len(chunk)
    return {k: v / n for k, v in acc.items()}


def train(dataset: dynamics.Dataset, h: HyperParams, log_path=None, params=None,
          progress=None) -> Checkpoint:
    """Run Adam over shuffled full batches for ``h.epochs`` epochs.

    The training split is reshuffled each epoch from a PCG64 stream seeded with
    ``h.seed``; a partial final batch is dropped. Divergence stops training and
    returns the last good parameters with ``failed`` set.
    """
    train_states = np.asarray(dataset.train)
    if len(train_states) == 0:
        raise InvalidArgument("training split is empty")
    if h.batch_size > len(train_states):
        raise InvalidArgument(
            f"batch size {h.batch_size} exceeds training split ({len(train_states)})"
        )
    n_state = train_states.shape[2]
    if params is None:
        params = init_network(n_state, h.n_latent, h.width, h.hidden, seed=h.seed)
    ckpt = Checkpoint(params=params, hyper=h, system=dataset.system, dt=dataset.dt,
                      scale=np.asarray(dataset.scale, dtype=np.float64))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(h.seed, spawn_key=(1,))))
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    n_batches = len(train_states) // h.batch_size
    best_val = math.inf
    log_fh = open(log_path, "a") if log_path else None
    start = time.perf_counter()
    try:
        for epoch in range(1, h.epochs + 1):
            order = rng.permutation(len(train_states))
            sums = dict.fromkeys(("total",) + COMPONENTS, 0.0)
            try:
                for b in range(n_batches):
                    idx = order[b * h.batch_size:(b + 1) * h.batch_size]
                    values, grads = loss_and_grads(ckpt.params, train_states[idx], h)
                    new_arrays, new_state = adam_step(arrays, grads, state, h.lr)
                    arrays, state = new_arrays, new_state
                    ckpt.params = ckpt.params.with_arrays(arrays)
                    for k in sums:
                        sums[k] += values[k]
                val = split_loss(ckpt.params, dataset.val, h)
                _check_finite(val, epoch)
            except TrainingDiverged as exc:
                exc.epoch = epoch
                ckpt.failed = True
                ckpt.failure = str(TrainingDiverged(exc.component, exc.value, epoch))
                log.warning("training diverged: %s", ckpt.failure)
                break

            record = {f"train_{k}": v / n_batches for k, v in sums.items()}
            record.update({f"val_{k}": v for k, v in val.items()})
            record["wall_seconds"] = time.perf_counter() - start
            for k in HISTORY_KEYS:
                ckpt.history[k].append(record[k])
            ckpt.epoch = epoch
            if val["total"] < best_val:
                best_val = val["total"]
                ckpt.best_params = ckpt.params.copy()
                ckpt.best_epoch = epoch
            if log_fh:
                log_fh.write(json.dumps({
                    "epoch": epoch,
                    "train_total": record["train_total"],
                    "train_recon": record["train_recon"],
                    "train_dmd": record["train_dmd"],
                    "train_pred": record["train_pred"],
                    "reg": record["train_reg"],
                    "val_total": record["val_total"],
                    "wall_seconds": record["wall_seconds"],
                }) + "\n")
                log_fh.flush()
            if progress:
                progress(epoch, record)
    finally:
        if log_fh:
            log_fh.close()
    return ckpt


# -- evaluation ---------------------------------------------------------------------


@dataclass
class Reconstruction:
    states: np.ndarray  # predicted (steps + 1, N_s)
    latent: np.ndarray  # encoded observed window (N_o, M)
    latent_pred: np.ndarray  # (N_o, steps + 1)
    result: edmd.EdmdResult


def reconstruct(params: NetworkParams, states, dt: float, steps: int,
                rel_threshold=linalg.DEFAULT_REL_THRESHOLD) -> Reconstruction:
    """Encode the observed window, fit SVD-based EDMD, roll out ``steps`` steps and decode."""
    states = np.asarray(states, dtype=np.float64)
    latent = encode(params, states.T)
    result = edmd.edmd(latent, dt, rel_threshold)
    latent_pred = edmd.predict_latent(result, steps, warn=False)
    return Reconstruction(decode(params, latent_pred).T, latent, latent_pred, result)


def trajectory_mse(pred, truth) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))


def extended_truth(system: dynamics.SystemSpec, states, scale, steps: int):
    """Observed window followed by a fresh simulation out to ``steps`` steps."""
    states = np.asarray(states)
    if steps + 1 <= len(states):
        return states[:steps + 1]
    return dynamics.ground_truth(system, states[0], scale, steps * system.dt)


@dataclass
class EvalReport:
    rows: list
    results: list
    predictions: list
    truths: list
    mean_mse: float
    log10_mse: float
    mean_mse_extended: float
    residual_mean: float
    residual_max: float
    n_latent: int
    n_params: int

    def summary(self, label="dldmd") -> dict:
        return {
            "model": label,
            "mean_mse": self.mean_mse,
            "log10_mse": self.log10_mse,
            "mean_mse_extended": self.mean_mse_extended,
            "log10_mse_extended": _log10(self.mean_mse_extended),
            "residual_mean": self.residual_mean,
            "residual_max": self.residual_max,
            "N_o": self.n_latent,
            "param_count": self.n_params,
        }


def _log10(x):
    return math.log10(x) if x > 0 else -math.inf


def evaluate(ckpt: Checkpoint, test_states, system: Optional[dynamics.SystemSpec] = None,
             t_pred: Optional[float] = None, use_best=False, model="dldmd") -> EvalReport:
    """Per-trajectory EDMD reconstruction over the observed window and extension to ``t_pred``.

    ``model="dmd"`` replaces the autoencoder with the identity for a plain DMD baseline.
    """
    test_states = np.asarray(test_states, dtype=np.float64)
    if test_states.ndim != 3:
        raise InvalidArgument(f"test split must be (count, samples, N_s), got {test_states.shape}")
    if system is None:
        system = dynamics.get_system(ckpt.system)
    n_obs = test_states.shape[1] - 1
    t_pred = system.t_pred if t_pred is None else t_pred
    n_ext = max(n_obs, int(round(t_pred / ckpt.dt)))
    params = ckpt.best_params if (use_best and ckpt.best_params is not None) else ckpt.params

    rows, results, preds, truths = [], [], [], []
    for i, states in enumerate(test_states):
        if model == "dmd":
            result = edmd.edmd(states.T, ckpt.dt, ckpt.hyper.rel_threshold)
            pred = edmd.predict_latent(result, n_ext, warn=False).T
        else:
            rec = reconstruct(params, states, ckpt.dt, n_ext, ckpt.hyper.rel_threshold)
            result, pred = rec.result, rec.states
        truth = extended_truth(system, states, ckpt.scale, n_ext)
        mse = trajectory_mse(pred[:n_obs + 1], states)
        mse_ext = trajectory_mse(pred, truth)
        mod = np.abs(result.t)
        rows.append({
            "traj_id": i,
            "mse": mse,
            "mse_extended": mse_ext,
            "n_eigs": int(result.t.size),
            "max_abs_eig_minus_one": float(mod.max() - 1.0),
            "residual": result.residual,
        })
        results.append(result)
        preds.append(pred)
        truths.append(truth)

    mses = np.array([r["mse"] for r in rows])
    ext = np.array([r["mse_extended"] for r in rows])
    res = np.array([r["residual"] for r in rows])
    mean = float(mses.mean())
    return EvalReport(
        rows, results, preds, truths, mean, _log10(mean), float(ext.mean()),
        float(res.mean()), float(res.max()),
        n_latent=test_states.shape[2] if model == "dmd" else params.n_latent,
        n_params=0 if model == "dmd" else params.n_params,
    )
