"""Post-hoc diagnostics: Fourier spectra, unit-circle eigenvalue reports, long-horizon prediction.

The CSV emitters here are the package's figures; plotting is left to other tools.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dynamics
from .dynamics import Trajectory
from .errors import InvalidArgument
from .network import encode
from .training import Checkpoint, extended_truth, reconstruct, trajectory_mse

DEFAULT_BAND = 0.01


@dataclass
class SpectrumReport:
    frequencies: np.ndarray  # (n_freq,), cycles per time unit
    amplitudes: np.ndarray  # (n_coords, n_freq), each row peak-normalised
    concentration: np.ndarray  # (n_coords,)
    degenerate: np.ndarray  # (n_coords,) bool

    @property
    def n_coords(self) -> int:
        return self.amplitudes.shape[0]


def one_sided_power(series, dt):
    """Frequencies and one-sided power of the mean-removed series.

    Weights are chosen so that ``power.sum() == sum(x**2) / len(x)`` (Parseval).
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    spec = np.fft.rfft(x - x.mean())
    power = np.abs(spec) ** 2 / n**2
    power[1:] *= 2.0
    if n % 2 == 0:
        power[-1] /= 2.0
    return np.fft.rfftfreq(n, dt), spec, power


def _concentration(power):
    total = power.sum()
    if total <= 0:
        return 1.0
    k = int(np.argmax(power))
    return float(power[max(k - 1, 0):k + 2].sum() / total)


def fft_spectrum(series, dt: float) -> SpectrumReport:
    """Peak-normalised magnitude spectrum and concentration of one coordinate.

    Concentration is the energy fraction in the dominant bin and its two
    neighbours. A constant series yields a zero spectrum flagged degenerate,
    with concentration 1.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size < 8:
        raise InvalidArgument(f"need at least 8 samples, got {x.size}")
    freqs, spec, power = one_sided_power(x, dt)
    mag = np.abs(spec)
    peak = mag.max()
    scale = max(np.abs(x).max(), 1e-300)
    degenerate = bool(peak <= 1e-12 * scale * x.size)
    amps = np.zeros_like(mag) if degenerate else mag / peak
    conc = 1.0 if degenerate else _concentration(power)
    return SpectrumReport(freqs, amps[None, :], np.array([conc]), np.array([degenerate]))


def spectrum_report(coords, dt: float) -> SpectrumReport:
    """Spectra for every row of ``coords`` ``(n_coords, n_samples)``."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    parts = [fft_spectrum(row, dt) for row in coords]
    return SpectrumReport(
        parts[0].frequencies,
        np.vstack([p.amplitudes for p in parts]),
        np.concatenate([p.concentration for p in parts]),
        np.concatenate([p.degenerate for p in parts]),
    )


def spectral_comparison(ckpt: Checkpoint, traj: Trajectory, use_best=False):
    """Phase-space and latent-space spectra of one trajectory."""
    params = ckpt.best_params if (use_best and ckpt.best_params is not None) else ckpt.params
    latent = encode(params, traj.states.T)
    return spectrum_report(traj.states.T, traj.dt), spectrum_report(latent, traj.dt)


@dataclass
class EigReport:
    rows: list  # dicts: traj_id, re, im, modulus, distance, class
    band: float

    def counts(self) -> dict:
        out = {"inside": 0, "on": 0, "outside": 0}
        for r in self.rows:
            out[r["class"]] += 1
        return out

    def for_trajectory(self, traj_id):
        return [r for r in self.rows if r["traj_id"] == traj_id]


def classify(t, band=DEFAULT_BAND) -> str:
    d = abs(t) - 1.0
    if abs(d) <= band:
        return "on"
    return "inside" if d < 0 else "outside"


def eig_report(results, band: float = DEFAULT_BAND, traj_ids=None) -> EigReport:
    """Classify each discrete-time eigenvalue against the unit circle with tolerance ``band``."""
    if not band > 0:
        raise InvalidArgument(f"band must be positive, got {band}")
    traj_ids = range(len(results)) if traj_ids is None else traj_ids
    rows = []
    for tid, res in zip(traj_ids, results):
        eigs = res.t if hasattr(res, "t") else np.asarray(res)
        for t in np.atleast_1d(eigs):
            t = complex(t)
            rows.append({
                "traj_id": tid,
                "re": t.real,
                "im": t.imag,
                "modulus": abs(t),
                "distance": abs(t) - 1.0,
                "class": classify(t, band),
            })
    return EigReport(rows, band)


def predict_beyond(ckpt: Checkpoint, traj: Trajectory, t_pred: float,
                   system: Optional[dynamics.SystemSpec] = None, use_best=False):
    """Extend a trajectory to ``t_pred`` using only the spectrum fitted on its observed window.

    Returns ``(predicted Trajectory, MSE against a fresh simulation)``.
    """
    if t_pred < traj.horizon - 1e-12:
        raise InvalidArgument(f"t_pred={t_pred} is shorter than the observed horizon {traj.horizon}")
    system = dynamics.get_system(ckpt.system) if system is None else system
    params = ckpt.best_params if (use_best and ckpt.best_params is not None) else ckpt.params
    steps = int(round(t_pred / traj.dt))
    rec = reconstruct(params, traj.states, traj.dt, steps, ckpt.hyper.rel_threshold)
    truth = extended_truth(system, traj.states, ckpt.scale, steps)
    return Trajectory(rec.states, traj.dt, traj.system), trajectory_mse(rec.states, truth)


# -- trajectory diagnostics ------------------------------------------------------------


def lobe_switches(states, coord=0, threshold=1.0) -> int:
    """Count sign flips of one coordinate, ignoring excursions within ``threshold`` of zero."""
    x = np.asarray(states)[:, coord]
    side, switches = 0, 0
    for v in x:
        s = 1 if v > threshold else (-1 if v < -threshold else 0)
        if s and side and s != side:
            switches += 1
        if s:
            side = s
    return switches


def bounding_box(states):
    pts = np.asarray(states).reshape(-1, np.asarray(states).shape[-1])
    return pts.min(axis=0), pts.max(axis=0)


def within_box(states, lo, hi, factor=1.2) -> bool:
    """True when every point lies in the box ``[lo, hi]`` scaled by ``factor`` about its centre."""
    lo, hi = np.asarray(lo), np.asarray(hi)
    centre, half = (lo + hi) / 2, factor * (hi - lo) / 2
    return bool(np.all(np.abs(np.asarray(states) - centre) <= half))


def near_separatrix(states, count: int, scale=None):
    """Indices of the ``count`` pendulum trajectories with the highest energy."""
    states = np.asarray(states)
    x0 = states[:, 0, :] * (1.0 if scale is None else np.asarray(scale))
    return np.argsort(dynamics.pendulum_energy(x0))[::-1][:count]


# -- CSV emitters ---------------------------------------------------------------------


def write_spectra_csv(path, report: SpectrumReport, names=None) -> Path:
    """Columns: ``frequency`` then one amplitude column per coordinate."""
    names = names or [f"c{i + 1}" for i in range(report.n_coords)]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency"] + list(names))
        for j, f in enumerate(report.frequencies):
            w.writerow([repr(float(f))] + [repr(float(a)) for a in report.amplitudes[:, j]])
    return path


def write_concentration_csv(path, reports: dict) -> Path:
    """Columns: ``space, coordinate, concentration, degenerate``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["space", "coordinate", "concentration", "degenerate"])
        for space, rep in reports.items():
            for i in range(rep.n_coords):
                w.writerow([space, i + 1, repr(float(rep.concentration[i])), int(rep.degenerate[i])])
    return path


EIG_COLUMNS = ["traj_id", "re", "im", "modulus", "class"]


def write_eigenvalues_csv(path, report: EigReport) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EIG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(report.rows)
    return path


def write_trajectory_csv(path, dt, items) -> Path:
    """Columns: ``traj_id, t, truth_x1.., pred_x1..``.

    ``items`` yields ``(traj_id, truth, pred)``; rows stop at the shorter series.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for k, (tid, truth, pred) in enumerate(items):
            truth, pred = np.asarray(truth), np.asarray(pred)
            dim = truth.shape[1]
            if k == 0:
                w.writerow(["traj_id", "t"] + [f"truth_x{i + 1}" for i in range(dim)]
                           + [f"pred_x{i + 1}" for i in range(dim)])
            for j in range(min(len(truth), len(pred))):
                w.writerow([tid, repr(j * dt)] + [repr(float(v)) for v in truth[j]]
                           + [repr(float(v)) for v in pred[j]])
    return path
