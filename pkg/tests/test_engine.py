import numpy as np
import pytest
from numpy.testing import assert_allclose

import trapcheck.engine as engine
from trapcheck import (
    BlowUpError,
    CaptureSpec,
    InsufficientRecordsError,
    LinearModel,
    Model,
    Schedule,
    SequenceSpec,
    VrrwConfig,
    VrrwWalkModel,
    combine_increment,
    control_models,
    empirical_increment_decomposition,
    monte_carlo,
    run,
    step,
)


def harmonic(horizon):
    return Schedule.from_config({"kind": "harmonic", "horizon": horizon})


class UnitNoiseModel(Model):
    """G = x, eps = 1, r = 0 (deterministic, for arithmetic examples)."""

    id = "unit_noise"
    dim = 1
    n_raw = 1

    def field(self, x):
        return x

    def noise(self, x, n, raw):
        return np.ones_like(x)


class SilentModel(Model):
    """G = f with f(x*) = 0, eps = 0, r = 0."""

    id = "silent"
    dim = 1
    n_raw = 0

    def field(self, x):
        return -x

    def noise(self, x, n, raw):
        return np.zeros_like(x)


class TestStep:
    def test_frozen_schedule_is_identity(self):
        s = Schedule(
            gamma=SequenceSpec("const", value=0.0),
            c=SequenceSpec("const", value=0.0),
            horizon=10,
        )
        rec, x1 = step(np.array([0.7]), 0, UnitNoiseModel(), s, np.random.default_rng(0))
        assert np.array_equal(x1, [0.7])

    def test_hand_arithmetic(self):
        s = Schedule(
            gamma=SequenceSpec("const", value=0.1),
            c=SequenceSpec("const", value=0.1),
            horizon=10,
        )
        rec, x1 = step(np.array([0.5]), 0, UnitNoiseModel(), s, np.random.default_rng(0))
        assert x1[0] == pytest.approx(0.65, abs=1e-16)
        assert rec.g[0] == 0.5 and rec.eps[0] == 1.0 and rec.rem[0] == 0.0

    def test_beyond_horizon(self):
        s = harmonic(5)
        with pytest.raises(Exception):
            step(np.zeros(1), 5, UnitNoiseModel(), s, np.random.default_rng(0))


class TestRun:
    def test_equilibrium_stays_fixed(self):
        traj = run(SilentModel(), harmonic(200), np.zeros(1), 200, seed=1)
        assert np.all(traj.states == 0.0)

    def test_same_seed_bitwise(self):
        m = LinearModel([[1.0]])
        s = harmonic(500)
        t1 = run(m, s, np.zeros(1), 500, seed=42)
        t2 = run(m, s, np.zeros(1), 500, seed=42)
        assert np.array_equal(t1.states, t2.states)
        assert np.array_equal(t1.eps, t2.eps)

    def test_reconstruction_residual_is_zero(self):
        m = LinearModel(np.diag([1.0, -1.0]), id="lin2")
        traj = run(m, harmonic(300), np.array([0.1, 0.2]), 300, seed=9)
        assert traj.reconstruction_residual() == 0.0

    def test_default_thinning(self):
        m = LinearModel([[1.0]])
        traj = run(m, harmonic(128), np.zeros(1), 128, seed=0)
        assert traj.thinning == 1
        assert len(traj.part_indices) == 128

    def test_record_and_thinned_access(self):
        m = LinearModel([[1.0]])
        traj = run(m, harmonic(64), np.zeros(1), 64, seed=0, thinning=8)
        rec = traj.record(8)
        assert rec.n == 8
        with pytest.raises(InsufficientRecordsError):
            traj.record(9)

    def test_blowup_raises_with_prefix(self):
        m = LinearModel([[5.0]], noise_kind="none", id="explode")
        s = harmonic(1000)
        with pytest.raises(BlowUpError) as ei:
            run(m, s, np.ones(1), 1000, seed=0, blowup_bound=1e6)
        err = ei.value
        assert err.step > 0
        assert err.prefix.shape[1] == 1
        assert np.all(np.abs(err.prefix[:-1]) <= 1e6)
        assert np.abs(err.prefix[-1]) > 1e6

    def test_csv_round_trip(self, tmp_path):
        m = LinearModel(np.diag([1.0, -1.0]), id="lin2")
        traj = run(m, harmonic(50), np.array([0.1, 0.2]), 50, seed=3)
        p = tmp_path / "t.csv"
        traj.to_csv(p)
        header = p.read_text().splitlines()[0]
        assert header == "n,x_0,x_1,g_0,g_1,eps_0,eps_1,rem_0,rem_1"
        table = np.loadtxt(p, delimiter=",", skiprows=1)
        ns = table[:, 0].astype(int)
        assert np.array_equal(table[:, 1:3], traj.states[ns])
        assert np.array_equal(table[:, 3:5], traj.g)


class TestMonteCarlo:
    def test_single_run_matches_run(self):
        m = LinearModel([[1.0]])
        s = harmonic(400)
        summary = monte_carlo(m, s, np.zeros(1), 400, 1, master_seed=77)
        traj = run(m, s, np.zeros(1), 400, seed=77)
        assert np.array_equal(summary.terminal_states[0], traj.states[-1])

    def test_worker_counts_identical(self):
        m = LinearModel(np.diag([1.0, -1.0]), id="lin2")
        s = harmonic(600)
        cap = CaptureSpec(
            state_indices=(1, 10, 100, 600), increment_indices=tuple(range(50, 66))
        )
        outs = [
            monte_carlo(m, s, np.array([0.0, 0.3]), 600, 24, master_seed=5,
                        workers=w, captures=cap)
            for w in (1, 4, 16)
        ]
        for other in outs[1:]:
            assert np.array_equal(outs[0].terminal_states, other.terminal_states)
            assert np.array_equal(outs[0].sup_tail_distance, other.sup_tail_distance)
            assert np.array_equal(outs[0].captured_states, other.captured_states)
            assert np.array_equal(outs[0].captured_eps, other.captured_eps)
            assert np.array_equal(outs[0].captured_g, other.captured_g)

    def test_sequential_equals_batch(self):
        m = LinearModel([[1.0]])
        s = harmonic(300)
        summary = monte_carlo(m, s, np.zeros(1), 300, 3, master_seed=11)
        for i in range(3):
            traj = run(m, s, np.zeros(1), 300, seed=engine._seed_for_run(11, i))
            assert np.array_equal(summary.terminal_states[i], traj.states[-1])

    def test_block_size_invariance(self, monkeypatch):
        m = LinearModel([[1.0]])
        s = harmonic(2500)  # crosses the default block boundary
        ref = monte_carlo(m, s, np.zeros(1), 2500, 4, master_seed=2)
        monkeypatch.setattr(engine, "_RAW_BLOCK", 64)
        alt = monte_carlo(m, s, np.zeros(1), 2500, 4, master_seed=2)
        assert np.array_equal(ref.terminal_states, alt.terminal_states)

    def test_degenerate_control_traps(self):
        m = control_models()["degenerate_noise"]
        s = harmonic(500)
        summary = monte_carlo(m, s, np.zeros(1), 500, 16, master_seed=0)
        assert summary.near_trap_fraction(1e-12) == 1.0
        assert summary.near_trap_fraction(1.0) == 1.0

    def test_blowups_flagged_and_excluded(self):
        m = LinearModel([[5.0]], noise_kind="none", id="explode")
        s = harmonic(1000)
        summary = monte_carlo(
            m, s, np.ones(1), 1000, 4, master_seed=0, blowup_bound=1e6
        )
        assert summary.blowup_count == 4
        assert not np.any(summary.ok)
        assert summary.near_trap_fraction(10.0) == 0.0

    def test_martingale_sanity(self):
        m = LinearModel([[1.0]])
        s = harmonic(256)
        cap = CaptureSpec(increment_indices=(100,))
        summary = monte_carlo(m, s, np.zeros(1), 256, 400, master_seed=123, captures=cap)
        mean_eps = summary.captured_eps.mean(axis=0)  # (n_captures, d)
        assert np.linalg.norm(mean_eps[0]) <= 4.0 / np.sqrt(400)

    def test_near_trap_at_uncaptured_time_raises(self):
        m = LinearModel([[1.0]])
        summary = monte_carlo(m, harmonic(100), np.zeros(1), 100, 4, master_seed=0)
        with pytest.raises(InsufficientRecordsError):
            summary.near_trap_fraction(0.1, t=50)

    def test_simplex_preserved_by_walk(self):
        cfg = VrrwConfig.complete(3, 2.0)
        m = VrrwWalkModel(cfg)
        s = m.natural_schedule(2000)
        traj = run(m, s, m.initial_state(), 2000, seed=4)
        sums = traj.states.sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12
        assert traj.states.min() >= -1e-12


class TestDecomposition:
    def test_silent_model_parts_vanish(self):
        traj = run(SilentModel(), harmonic(100), np.array([0.5]), 100, seed=0)
        dec = empirical_increment_decomposition(traj)
        assert np.all(dec.martingale == 0.0)
        assert np.all(dec.remainder == 0.0)

    def test_hand_arithmetic_parts(self):
        s = Schedule(
            gamma=SequenceSpec("const", value=0.1),
            c=SequenceSpec("const", value=0.1),
            horizon=1,
        )
        traj = run(UnitNoiseModel(), s, np.array([0.5]), 1, seed=0)
        dec = empirical_increment_decomposition(traj)
        assert dec.drift[0, 0] == pytest.approx(0.05, abs=1e-17)
        assert dec.martingale[0, 0] == pytest.approx(0.1, abs=1e-17)
        assert dec.remainder[0, 0] == 0.0

    def test_reconstruction_identity_exact(self):
        m = LinearModel(np.diag([1.0, -1.0]), id="lin2")
        traj = run(m, harmonic(500), np.array([0.2, -0.1]), 500, seed=8)
        dec = empirical_increment_decomposition(traj)
        assert np.array_equal(traj.states[:-1] + dec.combined, traj.states[1:])

    def test_cumulative_martingale(self):
        m = LinearModel([[1.0]])
        traj = run(m, harmonic(50), np.zeros(1), 50, seed=1)
        dec = empirical_increment_decomposition(traj)
        assert dec.martingale_cumsum.shape == (51, 1)
        assert np.all(dec.martingale_cumsum[0] == 0.0)
        assert_allclose(dec.martingale_cumsum[-1], dec.martingale.sum(axis=0), rtol=1e-12)

    def test_thinned_trajectory_rejected(self):
        m = LinearModel([[1.0]])
        traj = run(m, harmonic(64), np.zeros(1), 64, seed=0, thinning=8)
        with pytest.raises(InsufficientRecordsError):
            empirical_increment_decomposition(traj)


def test_combine_increment_is_the_canonical_expression():
    g, eps, rem = np.array([2.0]), np.array([3.0]), np.array([5.0])
    assert combine_increment(0.5, g, 0.25, eps, rem) == pytest.approx(3.0)
