import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepedmd import dynamics
from deepedmd.dynamics import SYSTEMS, SystemSpec, eval_rhs, rk4_step, simulate
from deepedmd.errors import DivergenceError, InvalidArgument, NumericOverflowError, SamplingError


def stub(rhs, dim=1, dt=0.1, t_final=1.0):
    return SystemSpec("stub", dim, dt=dt, t_final=t_final, t_pred=t_final, rhs=rhs)


DECAY = stub(lambda y: -y)


@pytest.mark.parametrize(
    "name, state, expected",
    [
        ("pendulum", (0.0, 0.0), (0.0, 0.0)),
        ("duffing", (1.0, 0.0), (0.0, 0.0)),
        ("lorenz63", (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        ("vanderpol", (2.0, 0.0), (0.0, -2.0)),
    ],
)
def test_eval_rhs_fixed_values(name, state, expected):
    np.testing.assert_allclose(eval_rhs(SYSTEMS[name], np.array(state)), expected, atol=0)


def test_eval_rhs_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        eval_rhs(SYSTEMS["lorenz63"], np.zeros(2))


def test_eval_rhs_batches_along_leading_axes():
    x = np.random.default_rng(0).normal(size=(5, 3))
    batched = eval_rhs(SYSTEMS["lorenz63"], x)
    for row, out in zip(x, batched):
        np.testing.assert_array_equal(eval_rhs(SYSTEMS["lorenz63"], row), out)


def test_system_defaults():
    assert (SYSTEMS["pendulum"].dt, SYSTEMS["pendulum"].t_final, SYSTEMS["pendulum"].t_pred) == (0.05, 20, 40)
    assert (SYSTEMS["duffing"].dt, SYSTEMS["duffing"].t_final, SYSTEMS["duffing"].t_pred) == (0.05, 20, 40)
    vdp = SYSTEMS["vanderpol"]
    assert (vdp.dt, vdp.t_final, vdp.t_pred, vdp.params["mu"]) == (0.02, 15, 30, 1.5)
    lor = SYSTEMS["lorenz63"]
    assert (lor.dt, lor.t_final, lor.t_pred) == (0.01, 3, 6)
    assert lor.params == {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0}
    assert SYSTEMS["pendulum"].n_samples == 401
    assert SYSTEMS["lorenz63"].n_samples == 301


def test_system_spec_invariants():
    with pytest.raises(InvalidArgument):
        SystemSpec("bad", 1, dt=0.1, t_final=2.0, t_pred=1.0)
    with pytest.raises(InvalidArgument):
        SystemSpec("bad", 1, dt=0.0, t_final=2.0, t_pred=2.0)


def test_rk4_zero_field():
    zero = stub(lambda y: np.zeros_like(y), dim=2)
    np.testing.assert_array_equal(rk4_step(zero, np.array([3.1, -2.0]), 0.05), [3.1, -2.0])


def test_rk4_decay_hand_stages():
    # k1=-1, k2=-0.95, k3=-0.9525, k4=-0.90475
    y = rk4_step(DECAY, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(0.9048375, abs=1e-12)
    assert abs(y[0] - math.exp(-0.1)) < 1e-7


def test_rk4_order():
    def err(h):
        return abs(rk4_step(DECAY, np.array([1.0]), h)[0] - math.exp(-h))

    ratio = err(0.1) / err(0.05)
    assert 28 <= ratio <= 36


def test_rk4_overflow_names_stage():
    blow = stub(lambda y: np.where(np.abs(y) > 1.0, np.inf, y))
    with pytest.raises(NumericOverflowError) as info:
        rk4_step(blow, np.array([0.9]), 1.0)
    assert info.value.stage == 2


def test_simulate_zero_horizon():
    traj = simulate(SYSTEMS["pendulum"], [0.3, 0.1], horizon=0.0)
    assert traj.states.shape == (1, 2)
    np.testing.assert_array_equal(traj.states[0], [0.3, 0.1])


def test_simulate_decay_matches_exponential():
    traj = simulate(DECAY, [1.0], horizon=1.0)
    assert len(traj) == 11
    np.testing.assert_allclose(traj.states[:, 0], np.exp(-traj.times), atol=1e-6)


def test_simulate_pendulum_energy():
    traj = simulate(SYSTEMS["pendulum"], [0.1, 0.0], horizon=20.0)
    e = dynamics.pendulum_energy(traj.states)
    assert abs(e[-1] - e[0]) < 1e-6


def test_pendulum_energy_drift_relative():
    traj = simulate(SYSTEMS["pendulum"], [2.5, 0.3], horizon=20.0)
    e = dynamics.pendulum_energy(traj.states)
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-5


def test_simulate_rejects_misaligned_horizon():
    with pytest.raises(InvalidArgument):
        simulate(DECAY, [1.0], horizon=0.33)


def test_simulate_divergence_reports_step():
    grow = stub(lambda y: 50.0 * y)
    with pytest.raises(DivergenceError) as info:
        simulate(grow, [1.0], horizon=1.0)
    assert info.value.step > 0


def test_sample_dataset_counts_and_determinism():
    spec = SYSTEMS["duffing"]
    a = dynamics.sample_dataset(spec, (6, 3, 2), seed=11)
    b = dynamics.sample_dataset(spec, (6, 3, 2), seed=11)
    assert a.train.shape == (6, 401, 2) and a.val.shape == (3, 401, 2) and a.test.shape == (2, 401, 2)
    for split in dynamics.SPLITS:
        assert a.split(split).tobytes() == b.split(split).tobytes()
    c = dynamics.sample_dataset(spec, (6, 3, 2), seed=12)
    assert not np.array_equal(a.train, c.train)
    np.testing.assert_array_equal(a.scale, [1.0, 1.0])
    assert np.all(np.abs(a.train[:, 0]) <= 1.0)


def test_trajectory_depends_only_on_seed_and_index():
    spec = SYSTEMS["duffing"]
    a = dynamics.sample_dataset(spec, (2, 1, 1), seed=5)
    b = dynamics.sample_dataset(spec, (5, 1, 1), seed=5)
    np.testing.assert_array_equal(a.train, b.train[:2])


def test_full_scale_counts_total():
    # full-scale split sizes; integration is skipped, only the sampling contract is checked
    spec = SYSTEMS["pendulum"]
    counts = (10_000, 3_000, 2_000)
    x0 = [dynamics.sample_initial_condition(spec, 0, i) for i in range(sum(counts))]
    assert len(x0) == 15_000


def test_pendulum_filter_and_closed_orbits():
    ds = dynamics.sample_dataset(SYSTEMS["pendulum"], (40, 10, 10), seed=3)
    for split in dynamics.SPLITS:
        states = ds.split(split)
        assert np.max(dynamics.pendulum_energy(states[:, 0])) < 0.99
        # energy stays below the separatrix value 1 along every orbit
        assert np.max(dynamics.pendulum_energy(states)) < 1.0


def test_vanderpol_scaling_from_training_split():
    spec = SYSTEMS["vanderpol"]
    ds = dynamics.sample_dataset(spec, (8, 3, 2), seed=1)
    np.testing.assert_allclose(ds.train.reshape(-1, 2).std(axis=0), [1.0, 1.0], rtol=1e-12)
    raw = dynamics.integrate(spec, ds.test[:, 0] * ds.scale, spec.n_steps)
    np.testing.assert_allclose(ds.unscale(ds.test), raw, rtol=1e-9, atol=1e-12)


def test_rejection_sampling_failure():
    never = SystemSpec("never", 1, dt=0.1, t_final=1.0, t_pred=1.0, box=((0.0, 1.0),),
                       admissible=lambda x: False)
    with pytest.raises(SamplingError):
        dynamics.sample_initial_condition(never, 0, 0, max_attempts=50)


def test_dataset_file_roundtrip(tmp_path):
    ds = dynamics.sample_dataset(SYSTEMS["vanderpol"], (4, 2, 2), seed=9)
    dynamics.write_dataset(ds, tmp_path / "a")
    dynamics.write_dataset(ds, tmp_path / "b")
    back = dynamics.read_dataset(tmp_path / "a")
    for split in dynamics.SPLITS:
        assert back.split(split).tobytes() == ds.split(split).tobytes()
        assert (tmp_path / "a" / f"{split}.bin").read_bytes() == (tmp_path / "b" / f"{split}.bin").read_bytes()
    np.testing.assert_array_equal(back.scale, ds.scale)
    assert back.seed == 9 and back.system == "vanderpol" and back.dt == 0.02
    import json

    meta = json.loads((tmp_path / "a" / "test.json").read_text())
    assert meta["count"] == 2 and meta["state_dim"] == 2 and meta["n_samples"] == 751


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-2.0, 2.0))
def test_pendulum_short_orbits_conserve_energy(x1, x2):
    traj = simulate(SYSTEMS["pendulum"], [x1, x2], horizon=2.0)
    e = dynamics.pendulum_energy(traj.states)
    assert np.max(np.abs(e - e[0])) < 1e-5
