import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepedmd import analysis, network, training
from deepedmd.dynamics import SystemSpec, Trajectory, integrate
from deepedmd.errors import InvalidArgument

DT = 0.05
T = np.arange(400) * DT


def test_single_tone_peak_and_concentration():
    rep = analysis.fft_spectrum(np.sin(2 * np.pi * T), DT)
    k = int(np.argmax(rep.amplitudes[0]))
    assert rep.frequencies[k] == pytest.approx(1.0)
    assert rep.amplitudes[0, k] == 1.0
    assert rep.concentration[0] > 0.99


def test_two_equal_tones_split_energy():
    rep = analysis.fft_spectrum(np.sin(2 * np.pi * T) + np.sin(2 * np.pi * 3 * T), DT)
    assert rep.concentration[0] == pytest.approx(0.5, abs=0.05)


def test_constant_series_is_degenerate():
    rep = analysis.fft_spectrum(np.full(64, 3.0), DT)
    assert rep.degenerate[0]
    assert rep.concentration[0] == 1.0
    np.testing.assert_array_equal(rep.amplitudes, 0.0)


def test_too_short_series():
    with pytest.raises(InvalidArgument):
        analysis.fft_spectrum(np.ones(5), DT)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 300), st.integers(0, 10_000))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    _, _, power = analysis.one_sided_power(x, DT)
    xc = x - x.mean()
    assert power.sum() == pytest.approx(np.sum(xc ** 2) / n, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_concentration_scale_invariant(seed, c):
    x = np.random.default_rng(seed).normal(size=128)
    a = analysis.fft_spectrum(x, DT).concentration[0]
    b = analysis.fft_spectrum(c * x, DT).concentration[0]
    assert a == pytest.approx(b, rel=1e-9)


def test_spectrum_report_rows():
    rep = analysis.spectrum_report(np.vstack([np.sin(2 * np.pi * T), np.cos(2 * np.pi * 2 * T)]), DT)
    assert rep.n_coords == 2 and rep.amplitudes.shape == (2, 201)


def test_classify_unit_circle():
    rep = analysis.eig_report([np.array([1j, -1j, 0.9, 1.2])], band=0.01)
    assert [r["class"] for r in rep.rows] == ["on", "on", "inside", "outside"]
    assert rep.counts() == {"inside": 1, "on": 2, "outside": 1}


def test_eig_report_rejects_bad_band():
    with pytest.raises(InvalidArgument):
        analysis.eig_report([np.ones(2)], band=0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=2.0), min_size=1, max_size=8), st.randoms())
def test_counts_permutation_invariant(eigs, rnd):
    shuffled = list(eigs)
    rnd.shuffle(shuffled)
    a = analysis.eig_report([np.array(eigs)]).counts()
    b = analysis.eig_report([np.array(shuffled)]).counts()
    assert a == b and sum(a.values()) == len(eigs)


ROT = np.array([[0.0, -1.0], [1.0, 0.0]])
LINEAR = SystemSpec("linear", 2, dt=DT, t_final=5.0, t_pred=10.0, rhs=lambda y: y @ ROT.T)


def stub_checkpoint():
    p = network.identity_network(2, width=4, hidden=1)
    h = training.HyperParams(n_latent=2, width=4, hidden=1)
    return training.Checkpoint(p, h, "linear", DT, np.ones(2))


def linear_traj():
    return Trajectory(integrate(LINEAR, np.array([0.7, -0.2]), LINEAR.n_steps), DT, "linear")


def test_predict_beyond_identity_stub():
    pred, mse = analysis.predict_beyond(stub_checkpoint(), linear_traj(), 10.0, system=LINEAR)
    assert len(pred) == 201
    assert mse < 1e-10


def test_predict_beyond_at_horizon_reproduces_window():
    traj = linear_traj()
    pred, mse = analysis.predict_beyond(stub_checkpoint(), traj, traj.horizon, system=LINEAR)
    assert len(pred) == len(traj)
    np.testing.assert_allclose(pred.states, traj.states, atol=1e-7)


def test_predict_beyond_rejects_short_horizon():
    with pytest.raises(InvalidArgument):
        analysis.predict_beyond(stub_checkpoint(), linear_traj(), 1.0, system=LINEAR)


def test_spectral_comparison_identity_stub():
    phase, latent = analysis.spectral_comparison(stub_checkpoint(), linear_traj())
    np.testing.assert_allclose(phase.concentration, latent.concentration)


def test_lobe_switches():
    x = np.array([[2.0], [0.5], [-3.0], [-0.2], [-4.0], [5.0]])
    assert analysis.lobe_switches(x) == 2
    assert analysis.lobe_switches(np.zeros((5, 1))) == 0


def test_bounding_box_and_within():
    lo, hi = analysis.bounding_box(np.array([[[0.0, -1.0], [2.0, 1.0]]]))
    np.testing.assert_array_equal(lo, [0.0, -1.0])
    np.testing.assert_array_equal(hi, [2.0, 1.0])
    assert analysis.within_box(np.array([[2.15, 0.0]]), lo, hi)
    assert not analysis.within_box(np.array([[2.25, 0.0]]), lo, hi)


def test_near_separatrix_orders_by_energy():
    states = np.array([[[0.1, 0.0]], [[2.0, 0.0]], [[1.0, 0.0]]])
    assert list(analysis.near_separatrix(states, 2)) == [1, 2]


def read_header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def test_csv_headers(tmp_path):
    rep = analysis.spectrum_report(np.vstack([np.sin(T), np.cos(T)]), DT)
    assert read_header(analysis.write_spectra_csv(tmp_path / "s.csv", rep, ["x1", "x2"])) == ["frequency", "x1", "x2"]
    assert read_header(analysis.write_concentration_csv(tmp_path / "c.csv", {"phase": rep})) == [
        "space", "coordinate", "concentration", "degenerate"]
    eig = analysis.eig_report([np.array([1j, -1j])])
    assert read_header(analysis.write_eigenvalues_csv(tmp_path / "e.csv", eig)) == [
        "traj_id", "re", "im", "modulus", "class"]
    path = analysis.write_trajectory_csv(tmp_path / "t.csv", DT, [(3, np.zeros((4, 2)), np.ones((6, 2)))])
    assert read_header(path) == ["traj_id", "t", "truth_x1", "truth_x2", "pred_x1", "pred_x2"]
    with open(path) as fh:
        assert len(fh.readlines()) == 5


def test_predict_beyond_matches_evaluate_on_window():
    p = network.init_network(2, 3, width=8, hidden=2, seed=2)
    ckpt = training.Checkpoint(p, training.HyperParams(n_latent=3, width=8, hidden=2), "linear", DT, np.ones(2))
    traj = linear_traj()
    pred, mse = analysis.predict_beyond(ckpt, traj, traj.horizon, system=LINEAR)
    rep = training.evaluate(ckpt, traj.states[None], system=LINEAR, t_pred=traj.horizon)
    np.testing.assert_array_equal(pred.states, rep.predictions[0])
    assert mse == rep.rows[0]["mse"]
