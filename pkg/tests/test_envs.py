"""Particle dynamics, function suites, and the distance-to-graph energy."""
import numpy as np
import pytest

from ebreg.envs import (
    DEMO_STREAM,
    EVAL_STREAM,
    FUNCTION_KINDS,
    ParticleEnv,
    argmin_grid,
    distance_to_graph,
    distance_to_graph_many,
    make_function_task,
)


class TestParticleReset:
    def test_fixed_seed_identical(self):
        env = ParticleEnv(3)
        a = env.reset(seed=5)
        b = env.reset(seed=5)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.g0, b.g0)
        assert np.array_equal(a.g1, b.g1)
        assert np.all(a.qdot == 0.0) and not a.reached_g0 and a.t == 0

    def test_uniform_law(self):
        env = ParticleEnv(2)
        qs, g0s, g1s = [], [], []
        for seed in range(10_000):
            state = env.reset(seed)
            qs.append(state.q)
            g0s.append(state.g0)
            g1s.append(state.g1)
        for block in (qs, g0s, g1s):
            means = np.mean(block, axis=0)
            assert np.all((means > 0.49) & (means < 0.51))

    def test_observation_dim_is_4n(self):
        for n in (1, 2, 16):
            env = ParticleEnv(n)
            state = env.reset(0)
            assert env.observe(state).shape == (4 * n,)
            assert env.obs_dim == 4 * n

    def test_demo_and_eval_streams_disjoint(self):
        env = ParticleEnv(2)
        a = env.reset(seed=3, stream=DEMO_STREAM)
        b = env.reset(seed=3, stream=EVAL_STREAM)
        assert not np.allclose(a.q, b.q)


class TestParticleStep:
    def test_equilibrium_action(self):
        env = ParticleEnv(2)
        state = env.reset(0)
        nxt = env.step(state, state.q.copy())
        assert np.allclose(nxt.q, state.q)
        assert np.allclose(nxt.qdot, 0.0)
        assert nxt.t == 1

    def test_one_step_from_rest(self):
        env = ParticleEnv(1)
        state = env.reset(1)
        target = state.q + 0.3
        nxt = env.step(state, target)
        # Semi-implicit: qdot = k_p * (target - q) * dt, q += qdot * dt.
        expected_qdot = env.k_p * 0.3 * env.dt
        assert nxt.qdot[0] == pytest.approx(expected_qdot, rel=1e-12)
        assert nxt.q[0] == pytest.approx(state.q[0] + expected_qdot * env.dt, rel=1e-12)

    def test_converges_to_constant_target(self):
        env = ParticleEnv(3)
        state = env.reset(2)
        target = np.array([0.25, 0.5, 0.75])
        dists = []
        for _ in range(200):
            state = env.step(state, target)
            dists.append(np.linalg.norm(state.q - target))
        assert dists[-1] < 1e-3
        # Underdamped: the oscillation envelope decays (peak over
        # successive windows shrinks).
        peaks = [max(dists[k : k + 30]) for k in range(0, 180, 30)]
        assert all(b < a for a, b in zip(peaks, peaks[1:]))

    def test_matches_closed_form_linear_system(self):
        # Oracle: iterate the exact 2x2 discrete linear map per dimension.
        env = ParticleEnv(1)
        state = env.reset(3)
        target = np.array([0.9])
        q, qdot = state.q[0], 0.0
        for _ in range(50):
            state = env.step(state, target)
            qdot = qdot + (env.k_p * (target[0] - q) - env.k_d * qdot) * env.dt
            q = q + qdot * env.dt
            assert state.q[0] == pytest.approx(q, abs=1e-10)
            assert state.qdot[0] == pytest.approx(qdot, abs=1e-10)

    def test_rejects_bad_action(self):
        env = ParticleEnv(2)
        state = env.reset(0)
        with pytest.raises(ValueError):
            env.step(state, np.array([np.inf, 0.0]))
        with pytest.raises(ValueError):
            env.step(state, np.zeros(3))


class TestOracle:
    def test_phase_switching(self):
        env = ParticleEnv(2)
        state = env.reset(4)
        assert np.array_equal(env.oracle_action(state), state.g0)
        state.reached_g0 = True
        assert np.array_equal(env.oracle_action(state), state.g1)

    def test_reached_flag_monotone_and_single_switch(self):
        env = ParticleEnv(2)
        traj = env.rollout_oracle(seed=0)
        assert traj.success
        switches = 0
        for a, b in zip(traj.actions[:-1], traj.actions[1:]):
            if not np.array_equal(a, b):
                switches += 1
        assert switches == 1

    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
    def test_oracle_success_sweep(self, n):
        # Gains/horizon must make the scripted policy near-perfect.
        env = ParticleEnv(n)
        successes = sum(env.rollout_oracle(seed).success for seed in range(200))
        assert successes >= 198

    def test_zero_action_fails_when_far(self):
        env = ParticleEnv(2)
        state = env.reset(6)
        if np.linalg.norm(state.q - state.g0) > env.radius:
            traj = env.rollout(lambda s, obs: s.q.copy(), seed=6)
            assert not traj.success

    def test_reaching_g1_without_g0_is_failure(self):
        env = ParticleEnv(1)
        state = env.reset(7)
        # Drive straight to g1, never entering g0's radius (if distinct).
        if np.linalg.norm(state.g0 - state.g1) > 2 * env.radius:
            for _ in range(env.horizon):
                state = env.step(state, state.g1)
            assert np.linalg.norm(state.q - state.g1) <= env.radius
            assert not env.is_success(state)


class TestFunctionTasks:
    def test_step_values(self):
        task = make_function_task("step")
        ds = task.sample_dataset(200, seed=0)
        below = ds.y[ds.x[:, 0] < 0.5]
        above = ds.y[ds.x[:, 0] >= 0.5]
        assert np.all(below == 0.0) and np.all(above == 1.0)

    def test_fixed_seed_identical_dataset(self):
        for kind in FUNCTION_KINDS:
            a = make_function_task(kind, 50, seed=3).sample_dataset(50, seed=9)
            b = make_function_task(kind, 50, seed=3).sample_dataset(50, seed=9)
            assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)

    def test_split_circle_two_branches(self):
        task = make_function_task("split_circle")
        branches = task.branches(0.7)
        assert len(branches) == 2
        values = sorted(b[0] for b in branches)
        assert values[0] < 0.5 < values[1]
        assert len(task.branches(0.3)) == 1

    def test_multivalued_kinds_emit_multiple_pairs(self):
        for kind in ("split_circle", "hysteresis", "disjoint_ranges"):
            task = make_function_task(kind)
            ds = task.sample_dataset(100, seed=1)
            assert ds.n_samples > 100  # at least some x emit several targets
            x_unique, counts = np.unique(ds.x[:, 0], return_counts=True)
            assert counts.max() >= 2

    def test_branch_distance_inside_band_is_zero(self):
        task = make_function_task("disjoint_ranges")
        d = task.branch_distance([0.5, 0.5, 0.5], [0.2, 0.45, 0.7])
        assert d[0] == 0.0 and d[2] == 0.0
        assert d[1] == pytest.approx(0.15)  # between the bands

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_function_task("sine")


class TestDistanceToGraph:
    def test_stored_point_zero_distance(self):
        graph = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert distance_to_graph(graph, [1.0, 1.0]) == 0.0

    def test_one_lipschitz_random_pairs(self):
        rng = np.random.default_rng(0)
        task = make_function_task("step")
        graph = task.graph_points(400)
        for _ in range(10_000):
            p = rng.uniform(-1, 2, 2)
            q = rng.uniform(-1, 2, 2)
            dp = distance_to_graph(graph, p)
            dq = distance_to_graph(graph, q)
            assert abs(dp - dq) <= np.linalg.norm(p - q) + 1e-12

    def test_step_query_matches_brute_force(self):
        task = make_function_task("step")
        graph = task.graph_points(500)
        spacing = 1.0 / 499  # x resolution of the sampled graph
        eps = 5e-3
        point = np.array([0.5 - eps, 0.5])
        brute = np.min(np.linalg.norm(graph - point, axis=1))
        assert distance_to_graph(graph, point) == pytest.approx(brute, abs=1e-15)
        # Just left of the jump: the lower branch is essentially at hand
        # and the upper branch is one jump-gap away in x.
        d0 = np.min(np.linalg.norm(graph - [0.5 - eps, 0.0], axis=1))
        d1 = np.min(np.linalg.norm(graph - [0.5 - eps, 1.0], axis=1))
        assert d0 <= spacing
        assert d1 <= eps + 2 * spacing

    def test_many_matches_loop(self):
        rng = np.random.default_rng(1)
        graph = rng.uniform(0, 1, (300, 2))
        points = rng.uniform(-0.5, 1.5, (100, 2))
        fast = distance_to_graph_many(graph, points)
        slow = np.array([distance_to_graph(graph, p) for p in points])
        assert np.allclose(fast, slow, atol=1e-12)

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            distance_to_graph(np.zeros((0, 2)), [0.0, 0.0])


class TestArgminGrid:
    def test_step_recovers_branch(self):
        task = make_function_task("step")
        graph = task.graph_points(500)
        grid = np.linspace(-0.2, 1.2, 141)
        energy = lambda x, y: distance_to_graph(graph, [x, y])
        out = argmin_grid(energy, 0.25, grid, tol=1e-6)
        assert np.all(np.abs(out) < 1e-9)

    def test_discontinuity_x_contains_both_branches(self):
        task = make_function_task("step")
        graph = task.graph_points(2001)  # includes x = 0.5 exactly
        grid = np.linspace(-0.2, 1.2, 141)
        energy = lambda x, y: distance_to_graph(graph, [x, y])
        out = argmin_grid(energy, 0.5, grid, tol=1e-6)
        assert np.any(np.abs(out - 0.0) < 1e-9) and np.any(np.abs(out - 1.0) < 1e-9)

    def test_constant_energy_returns_whole_grid(self):
        grid = np.linspace(0, 1, 11)
        out = argmin_grid(lambda x, y: 1.0, 0.0, grid)
        assert np.array_equal(out, grid)

    @pytest.mark.parametrize("kind", FUNCTION_KINDS)
    def test_theorem_recovery_all_kinds(self, kind):
        # argmin over the distance-to-graph energy must land within two
        # grid spacings of the true branch set for random inputs.
        task = make_function_task(kind, 200, seed=2)
        graph = task.graph_points(1000)
        pad = 0.2
        grid = np.linspace(graph[:, 1].min() - pad, graph[:, 1].max() + pad, 401)
        spacing = grid[1] - grid[0]
        rng = np.random.default_rng(3)
        energy = lambda x, y: distance_to_graph(graph, [x, y])
        for _ in range(25):
            x = float(rng.uniform(0, 1))
            out = argmin_grid(energy, x, grid, tol=1e-9)
            dist = task.branch_distance(np.full(len(out), x), out)
            assert np.all(dist <= 2 * spacing)
