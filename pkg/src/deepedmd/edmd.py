"""Extended dynamic mode decomposition on a single trajectory of observables.

Observables are column matrices: row ``l`` holds observable ``l`` and column
``j`` the sample at time ``j * dt``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .dynamics import Trajectory
from .errors import IllConditionedError, InvalidArgument, RankError

MAX_EIGENBASIS_CONDITION = 1e12
IMAG_RESIDUE_TOL = 1e-6


class ComplexResidueWarning(RuntimeWarning):
    """Latent prediction kept a non-negligible imaginary part."""


class RankDeficiencyWarning(RuntimeWarning):
    pass


@dataclass
class SnapshotPair:
    minus: np.ndarray
    plus: np.ndarray


@dataclass
class EdmdResult:
    K: np.ndarray
    V: np.ndarray
    t: np.ndarray  # discrete-time eigenvalues
    lam: np.ndarray  # continuous-time eigenvalues, log(t) / dt
    k: np.ndarray  # first observable column in the eigenbasis
    residual: float
    dt: float
    condition: float = 1.0
    rank: int = 0

    @property
    def n_obs(self) -> int:
        return self.K.shape[0]


def build_snapshots(observables) -> SnapshotPair:
    psi = np.asarray(observables, dtype=np.float64)
    if psi.ndim == 1:
        psi = psi[None, :]
    if psi.ndim != 2 or psi.shape[1] < 2:
        raise InvalidArgument(f"need at least two snapshot columns, got shape {psi.shape}")
    return SnapshotPair(psi[:, :-1], psi[:, 1:])


def fit_koopman(snapshots: SnapshotPair, rel_threshold=linalg.DEFAULT_REL_THRESHOLD):
    """Least-squares Koopman matrix via the truncated SVD of the lagged snapshots.

    Returns ``(K, residual)`` where ``residual = ||plus (I - W W^H)||_F``.
    """
    u, s, w = linalg.svd(snapshots.minus)
    r = linalg.retained_rank(s, rel_threshold)
    if r == 0:
        raise RankError("snapshot matrix has rank zero")
    u, s, w = u[:, :r], s[:r], w[:, :r]
    plus = snapshots.plus
    k = ((plus @ w) / s) @ u.conj().T
    residual = float(np.linalg.norm(plus - (plus @ w) @ w.conj().T))
    return np.real_if_close(k), residual


def decompose(K, dt: float, psi1, max_condition=MAX_EIGENBASIS_CONDITION) -> EdmdResult:
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    K = np.atleast_2d(np.asarray(K, dtype=np.float64))
    v, t = linalg.eig(K)
    cond = linalg.condition_number(v)
    if not cond <= max_condition:
        raise IllConditionedError(cond)
    with np.errstate(divide="ignore"):
        lam = np.log(t) / dt
    psi1 = np.asarray(psi1, dtype=np.float64).reshape(-1)
    coeffs, *_ = np.linalg.lstsq(v, psi1.astype(np.complex128), rcond=None)
    return EdmdResult(K=K, V=v, t=t, lam=lam, k=coeffs, residual=0.0, dt=dt, condition=cond,
                      rank=K.shape[0])


def edmd(observables, dt: float, rel_threshold=linalg.DEFAULT_REL_THRESHOLD) -> EdmdResult:
    """Full pipeline: snapshots, Koopman fit, spectral decomposition."""
    snaps = build_snapshots(observables)
    K, residual = fit_koopman(snaps, rel_threshold)
    result = decompose(K, dt, snaps.minus[:, 0])
    result.residual = residual
    result.rank = linalg.retained_rank(np.linalg.svd(snaps.minus, compute_uv=False), rel_threshold)
    return result


def predict_latent(result: EdmdResult, steps: int, warn=True) -> np.ndarray:
    """Column ``j`` is the real part of ``V diag(t**j) k`` for ``j = 0..steps``."""
    if steps < 0:
        raise InvalidArgument(f"steps must be non-negative, got {steps}")
    powers = result.t[None, :] ** np.arange(steps + 1)[:, None]
    z = result.V @ (powers * result.k).T
    real, imag = z.real, z.imag
    if warn and np.linalg.norm(imag) > IMAG_RESIDUE_TOL * max(np.linalg.norm(real), 1e-300):
        warnings.warn(
            f"latent prediction imaginary residue {np.linalg.norm(imag):.3e} "
            f"vs real norm {np.linalg.norm(real):.3e}",
            ComplexResidueWarning,
            stacklevel=2,
        )
    return np.ascontiguousarray(real)


def fit_modes(trajectory: Trajectory, result: EdmdResult, observables) -> np.ndarray:
    """Koopman modes ``H`` minimising ``sum_j ||y_j - H V^-1 psi(y_j)||``."""
    psi = np.atleast_2d(np.asarray(observables, dtype=np.float64))
    y = trajectory.states.T
    if psi.shape[1] != y.shape[1]:
        raise InvalidArgument(
            f"observables have {psi.shape[1]} samples, trajectory has {y.shape[1]}"
        )
    phi = np.linalg.solve(result.V, psi.astype(np.complex128))
    ht, _, rank, _ = np.linalg.lstsq(phi.T, y.T.astype(np.complex128), rcond=None)
    if rank < phi.shape[0]:
        warnings.warn(
            f"mode fit is rank deficient ({rank} < {phi.shape[0]}); minimum-norm solution used",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return ht.T


def standard_dmd(trajectory: Trajectory, steps: int,
                 rel_threshold=linalg.DEFAULT_REL_THRESHOLD) -> Trajectory:
    """DMD with the state coordinates as observables, predicted ``steps`` steps from ``y_1``."""
    result = edmd(trajectory.states.T, trajectory.dt, rel_threshold)
    pred = predict_latent(result, steps, warn=False)
    return Trajectory(pred.T, trajectory.dt, trajectory.system)
