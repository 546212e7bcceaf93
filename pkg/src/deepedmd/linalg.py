"""Dense matrix kernels used by EDMD: SVD, pseudo-inverse, eigendecomposition, propagation.

Thin contracts over LAPACK (via ``numpy.linalg``) with the conventions the
rest of the package relies on: singular values descending, relative
truncation for the pseudo-inverse, and deterministic eigenvalue ordering.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgument, NumericError

DEFAULT_REL_THRESHOLD = 1e-10


def _as_matrix(a, name="A"):
    a = np.asarray(a)
    if a.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return a


def svd(a):
    """Thin SVD ``a = U @ diag(s) @ W.conj().T``; returns ``(U, s, W)``."""
    a = _as_matrix(a)
    try:
        u, s, wh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    return u, s, wh.conj().T


def retained_rank(s, rel_threshold=DEFAULT_REL_THRESHOLD):
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s >= rel_threshold * s[0]))


def pinv_truncated(a, rel_threshold=DEFAULT_REL_THRESHOLD):
    """Moore-Penrose pseudo-inverse dropping singular values below ``rel_threshold * s_max``."""
    if not 0 <= rel_threshold < 1:
        raise InvalidArgument(f"rel_threshold must lie in [0, 1), got {rel_threshold}")
    a = _as_matrix(a)
    u, s, w = svd(a)
    r = retained_rank(s, rel_threshold)
    if r == 0:
        return np.zeros(a.shape[::-1], dtype=a.dtype)
    return (w[:, :r] / s[:r]) @ u[:, :r].conj().T


_FLUSH = np.finfo(np.float64).eps * 1e-20


def eig(a, pair_tol=1e-10):
    """Eigen-decomposition of a real square matrix.

    Eigenvalues come back sorted by (real part, |imag|) with the positive
    imaginary member of each conjugate pair first; the second member and its
    eigenvector are set to the exact conjugate of the first.
    """
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise InvalidArgument(f"eig needs a square matrix, got {a.shape}")
    # LAPACK's balancing misbehaves when entries span hundreds of orders of
    # magnitude; flushing those far below rounding level changes nothing else
    peak = float(np.max(np.abs(a))) if a.size else 0.0
    a = np.where(np.abs(a) < _FLUSH * peak, 0.0, a)
    try:
        t, v = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver did not converge: {exc}") from exc
    t = t.astype(np.complex128)
    v = v.astype(np.complex128)
    _repair_vectors(a, v, t)

    scale = max(1.0, float(np.max(np.abs(t)))) if t.size else 1.0
    rounded_re = np.round(t.real / (pair_tol * scale)) * pair_tol * scale
    order = np.lexsort((-t.imag, np.abs(t.imag), rounded_re))
    t, v = t[order], v[:, order]

    if np.isrealobj(a):
        i = 0
        while i < len(t) - 1:
            a_, b_ = t[i], t[i + 1]
            if abs(a_.imag) > pair_tol * scale and abs(a_ - b_.conjugate()) <= 1e3 * pair_tol * scale:
                t[i + 1] = a_.conjugate()
                v[:, i + 1] = v[:, i].conjugate()
                i += 2
            else:
                if abs(a_.imag) <= pair_tol * scale:
                    t[i] = a_.real
                i += 1
        if len(t) and abs(t[-1].imag) <= pair_tol * scale:
            t[-1] = t[-1].real
    return v, t


def _repair_vectors(a, v, t):
    """Recompute, in place, eigenvectors whose residual is far above rounding level.

    Balancing can still wreck individual vectors of nearly defective matrices;
    the smallest right singular vector of ``a - t I`` is the best available
    replacement and is only adopted when it actually lowers the residual.
    """
    if a.size == 0:
        return
    tol = 1e3 * np.finfo(np.float64).eps * max(float(np.linalg.norm(a)), 1.0)
    eye = np.eye(a.shape[0])
    for i in range(len(t)):
        r = np.linalg.norm(a @ v[:, i] - t[i] * v[:, i])
        if r <= tol:
            continue
        _, _, wh = np.linalg.svd(a - t[i] * eye)
        cand = wh[-1].conj()
        if np.linalg.norm(a @ cand - t[i] * cand) < r:
            v[:, i] = cand


def condition_number(v):
    s = np.linalg.svd(v, compute_uv=False)
    if s.size == 0:
        return 1.0
    return float(np.inf) if s[-1] == 0 else float(s[0] / s[-1])


def matpow_apply(v, t, k, j: int):
    """``V @ diag(t**j) @ k`` without forming the matrix power."""
    if j < 0:
        raise InvalidArgument(f"power must be non-negative, got {j}")
    v = np.atleast_2d(np.asarray(v))
    t = np.atleast_1d(np.asarray(t))
    k = np.atleast_1d(np.asarray(k))
    if v.shape[1] != t.shape[0] or t.shape[0] != k.shape[0]:
        raise InvalidArgument(f"shape mismatch: V {v.shape}, t {t.shape}, k {k.shape}")
    return v @ (t.astype(np.complex128) ** j * k)
