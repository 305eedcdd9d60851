import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stable_es.imogic import PolicyParams, sample_policies
from stable_es.optimizer import critical_damping, init_informative, init_uninformative
from stable_es.sim2d import (
    EnvConfig,
    Rect,
    SimState,
    SimulationDiverged,
    initial_state,
    is_success,
    make_task,
    read_trace,
    reward,
    rollout,
    step,
    trace_header,
    write_trace,
)

I2 = np.eye(2)
FREE = EnvConfig(name="free", goal=(0.0, 0.0), init_pos=(0.1, 0.1), obstacles=())


def rest(s=(0.0, 0.0)):
    return SimState(np.array(s, dtype=float), np.zeros(2))


def contact_policies(n, seed=0):
    cfg = make_task("Task2")
    phis = [init_uninformative(2, 8), init_informative(2, 8, cfg.mass, cfg.horizon, cfg.init_offset)]
    out = []
    for j, phi in enumerate(phis):
        out += sample_policies(phi, np.random.default_rng([seed, j]), n)
    return cfg, out


class TestStep:
    def test_rest_is_fixed_point(self):
        s = step(rest((0.1, 0.2)), [0.0, 0.0], FREE)
        np.testing.assert_array_equal(s.s, [0.1, 0.2])
        np.testing.assert_array_equal(s.sdot, [0.0, 0.0])
        assert s.t == pytest.approx(0.01)

    def test_constant_push(self):
        s = step(rest(), [2.0, 0.0], FREE)
        np.testing.assert_allclose(s.sdot, [0.01, 0.0], rtol=1e-12)
        # semi-implicit Euler: x = dt^2 a (1 + 2 + ... + n)
        dt, n = FREE.dt, FREE.physics_substeps
        assert s.s[0] == pytest.approx(dt**2 * 1.0 * n * (n + 1) / 2, rel=1e-12)

    def test_force_is_clamped(self):
        s = step(rest(), [1e4, -1e4], FREE)
        np.testing.assert_allclose(s.sdot, [2.5, -2.5], rtol=1e-12)

    def test_kinetic_energy_accounting(self):
        # per substep m (v1 - v0) = u dt, so dKE = u . (v0 + v1) / 2 dt exactly
        cfg = EnvConfig(goal=(0.0, 0.0), init_pos=(0.0, 0.0), obstacles=(), physics_substeps=1)
        st_ = rest()
        u = np.array([3.0, -1.0])
        for _ in range(20):
            nxt = step(st_, u, cfg)
            dke = 0.5 * cfg.mass * (nxt.sdot @ nxt.sdot - st_.sdot @ st_.sdot)
            assert dke == pytest.approx(u @ (st_.sdot + nxt.sdot) / 2 * cfg.dt, rel=1e-9)
            st_ = nxt

    def test_wall_penetration_settles(self):
        cfg = EnvConfig(goal=(0.0, 0.0), init_pos=(0.0, 0.0), obstacles=(Rect(0.03, -1, 0.5, 1),))
        s = rest()
        u = np.array([50.0, 0.0])
        for _ in range(100):
            s = step(s, u, cfg)
        pen = s.s[0] + cfg.block_half_width - 0.03
        assert 0 < pen < 1e-3
        assert pen == pytest.approx(50.0 / cfg.contact_stiffness, rel=1e-3)
        assert s.in_contact and s.contact_force[0] < 0

    def test_friction_stops_sliding_without_reversal(self):
        cfg = EnvConfig(goal=(0.0, 0.0), init_pos=(0.0, 0.0), obstacles=(Rect(-1, -1, 1, -0.025),))
        s = SimState(np.zeros(2), np.array([0.2, 0.0]))
        xs = []
        for _ in range(300):
            s = step(s, [0.0, -20.0], cfg)
            xs.append(s.sdot[0])
        assert min(xs) >= 0.0
        assert xs[-1] == 0.0

    def test_nonfinite_input_raises(self):
        with pytest.raises(SimulationDiverged):
            step(rest(), [np.nan, 0.0], FREE)


class TestReward:
    @pytest.mark.parametrize(
        "s,u,expected", [((0, 0), (0, 0), 0.0), ((0.3, 0.4), (0, 0), -0.5), ((0, 0), (10, 0), -1e-4)]
    )
    def test_examples(self, s, u, expected):
        assert reward(s, u, FREE) == pytest.approx(expected, abs=1e-15)


class TestTasks:
    def test_task_values(self):
        t1, t2, t3 = (make_task(n) for n in ("Task1", "Task2", "Task3"))
        assert (t1.clearance, t1.horizon) == (5e-4, 1.0)
        assert (t2.clearance, t2.horizon) == (2e-3, 2.0)
        assert (t3.clearance, t3.horizon) == (t2.clearance, t2.horizon)
        assert t3.init_pos != t2.init_pos and len(t3.obstacles) > len(t2.obstacles)
        assert t1.init_offset[0] == 0.0 and t1.init_offset[1] > 0

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_task("Task4")

    def test_overrides_and_round_trip(self):
        cfg = make_task("Task2", friction_coeff=0.0)
        assert cfg.friction_coeff == 0.0
        assert EnvConfig.from_dict(cfg.to_dict()) == cfg

    def test_initial_state_is_free_of_overlap(self):
        for name in ("Task1", "Task2", "Task3"):
            cfg = make_task(name)
            nxt = step(initial_state(cfg), [0.0, 0.0], cfg)
            np.testing.assert_array_equal(nxt.sdot, [0.0, 0.0])


class TestRollout:
    def test_lengths_and_return(self):
        cfg = make_task("Task1")
        p = init_informative(2, 1, 2.0, 1.0, cfg.init_offset).mean_policy()
        ro = rollout(p, cfg)
        n = cfg.n_steps
        assert len(ro.rewards) == len(ro.actions) == n
        assert len(ro.t) == len(ro.lyapunov) == n + 1
        assert ro.total_return == pytest.approx(np.sum(ro.rewards), rel=1e-15)
        assert ro.s.shape[1] == 2 and not ro.diverged

    def test_deterministic(self):
        cfg, ps = contact_policies(3)
        for p in ps:
            a, b = rollout(p, cfg), rollout(p, cfg)
            for f in ("s", "sdot", "actions", "rewards", "lyapunov", "eig_S", "weights"):
                assert np.array_equal(getattr(a, f), getattr(b, f))
            assert a.total_return == b.total_return

    def test_free_space_settling(self):
        k = 200.0
        p = PolicyParams(k * I2, critical_damping(2.0, k) * I2)
        ro = rollout(p, FREE)
        assert np.linalg.norm(ro.s[-1]) < 1e-3
        assert np.all(np.diff(ro.lyapunov) <= 1e-12)

    def test_blocked_goal_is_bounded(self):
        # goal buried inside the surface: the block rests on top and cannot reach it
        cfg = make_task("Task2", goal=(0.2, -0.025), init_pos=(0.2, 0.025))
        p = PolicyParams(50 * I2, critical_damping(2.0, 50) * I2)
        ro = rollout(p, cfg)
        assert not ro.diverged
        assert ro.lyapunov.max() <= ro.lyapunov[0] + 1e-9
        assert abs(ro.s[-1, 1] - cfg.slot_depth) < 1e-3  # stays on the surface
        assert not ro.success

    def test_contact_passivity(self):
        cfg, ps = contact_policies(25, seed=1)
        touched = 0
        for p in ps:
            ro = rollout(p, cfg)
            if not ro.in_contact.any():
                continue
            touched += 1
            assert ro.contact_work <= 1e-6
            assert ro.lyapunov.max() <= ro.lyapunov[0] + 1e-6
        assert touched >= 20

    def test_penetration_bound_for_task_scale_forces(self):
        cfg = make_task("Task2")
        phi = init_informative(2, 8, cfg.mass, cfg.horizon, cfg.init_offset)
        for p in sample_policies(phi, np.random.default_rng(4), 20):
            assert rollout(p, cfg).max_penetration < 0.1 * cfg.clearance

    def test_success_predicate(self):
        cfg = make_task("Task2")
        assert is_success([0.0, 0.0], cfg)
        assert is_success([cfg.clearance, 0.2 * cfg.slot_depth], cfg)
        assert not is_success([0.0, 0.3 * cfg.slot_depth], cfg)
        assert not is_success([1.1 * cfg.clearance, 0.0], cfg)

    def test_divergence_guard(self):
        # a sharp, stiff component whose attractor lies beyond the guard
        cfg = EnvConfig(goal=(0.0, 0.0), init_pos=(1.9, 0.0), obstacles=(), horizon=1.0)
        p = PolicyParams(1e-6 * I2, 1e-6 * I2, [400 * I2], [1e-3 * I2], [[3.0, 0.0]], [1e-4])
        ro = rollout(p, cfg)
        assert ro.diverged and not ro.success
        assert ro.total_return == -cfg.n_steps * cfg.workspace_limit


class TestTrace:
    def test_round_trip(self, tmp_path):
        cfg = make_task("Task2")
        p = init_informative(2, 3, 2.0, 2.0, cfg.init_offset).mean_policy()
        ro = rollout(p, cfg)
        path = tmp_path / "trace.csv"
        write_trace(ro, path)
        data = read_trace(path)
        assert list(data) == trace_header(3)
        n = len(ro.rewards)
        np.testing.assert_array_equal(data["s_x"], ro.s[:n, 0])
        np.testing.assert_array_equal(data["V"], ro.lyapunov[:n])
        np.testing.assert_array_equal(data["w_3"], ro.weights[:n, 2])
        np.testing.assert_array_equal(data["eigS_1"], ro.eig_S[:n, 0])
        assert np.all(data["eigS_1"] <= data["eigS_2"])


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-0.2, 0.2), st.floats(0.0, 0.2), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0),
    st.floats(-100, 100), st.floats(-100, 100),
)
def test_step_stays_finite_and_bounded(x, y, vx, vy, ux, uy):
    cfg = make_task("Task2")
    s = SimState(np.array([x, y + cfg.slot_depth]), np.array([vx, vy]))
    for _ in range(20):
        s = step(s, [ux, uy], cfg)
    assert np.all(np.isfinite(s.s)) and np.all(np.isfinite(s.sdot))
    assert math.hypot(*s.s) < cfg.workspace_limit
