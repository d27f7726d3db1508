import unittest

import numpy as np
from numpy.testing import assert_array_equal

from core.dynamics import (
    CONTROL_RANGES,
    DelayLine,
    alice_field,
    bob_field,
    coupled_derivative,
    delay_pair,
    eve_derivative,
    integrate,
    integrate_eve,
    integrate_eve_batch,
    random_full_config,
    random_initial_node,
    rk4_self_check,
)
from harness.presets import get_preset
from models import (
    ConfigurationError,
    CoupledState,
    CouplingParams,
    DivergenceError,
    IntegratorConfig,
    LengthMismatchError,
    NodeState,
)
from utils.rng import trial_rng


class VectorFieldTestCase(unittest.TestCase):
    """
    测试向量场与导数
    """

    def setUp(self):
        self.config = get_preset('sync-reference').require_config()
        self.p = self.config.control

    def test_fields_agree_without_coupling(self):
        """耦合为0时发送端和接收端的方程相同"""
        args = (0.1, -0.2, 0.3, 0.05, 0.4, self.p.a, self.p.b, self.p.mu, 0.0)
        self.assertEqual(alice_field(*args), bob_field(*args))

    def test_coupling_terms(self):
        """耦合项只出现在Alice的x方程和Bob的z方程中"""
        base = (0.1, -0.2, 0.3, 0.05)
        free = alice_field(*base, 0.1, self.p.a, self.p.b, self.p.mu, 0.5)
        driven = alice_field(*base, 0.3, self.p.a, self.p.b, self.p.mu, 0.5)
        self.assertAlmostEqual(driven[0] - free[0], 0.5 * 0.2, places=15)
        self.assertEqual(driven[1:], free[1:])

        free = bob_field(*base, 0.3, self.p.a, self.p.b, self.p.mu, 0.5)
        driven = bob_field(*base, 0.5, self.p.a, self.p.b, self.p.mu, 0.5)
        self.assertAlmostEqual(driven[2] - free[2], 0.5 * 0.2, places=15)
        self.assertEqual((driven[0], driven[1], driven[3]), (free[0], free[1], free[3]))

    def test_origin_is_equilibrium(self):
        zero = CoupledState.from_sequence([0.0] * 8)
        derivative = coupled_derivative(zero, self.p, self.config.coupling, 0.0, 0.0)
        self.assertEqual(derivative.as_tuple(), (0.0,) * 8)

    def test_eve_derivative_relabels_alice(self):
        """Eve使用Alice的状态和eps_x时，导数等于耦合系统的前四个分量"""
        state = CoupledState.from_sequence([0.1, -0.2, 0.3, 0.05, -0.15, 0.25, -0.35, 0.2])
        coupled = coupled_derivative(state, self.p, self.config.coupling, 0.4, 0.3)
        alice = NodeState.from_sequence(state.as_tuple()[:4])
        eve = eve_derivative(alice, 0.4, self.p, self.config.coupling.eps_x)
        self.assertEqual(eve.as_tuple(), coupled.as_tuple()[:4])

    def test_derivative_guard(self):
        """输入超过发散界时抛出DivergenceError"""
        state = CoupledState.from_sequence([0.1] * 8)
        with self.assertRaises(DivergenceError):
            coupled_derivative(state, self.p, self.config.coupling, 10.0, 0.0,
                               divergence_bound=1.0)


class DelayLineTestCase(unittest.TestCase):
    """
    测试传输延迟线
    """

    def test_milliseconds_to_steps(self):
        self.assertEqual(DelayLine.from_milliseconds(10, 0.01).delay_steps, 1)
        self.assertEqual(DelayLine.from_milliseconds(10, 0.001).delay_steps, 10)
        self.assertEqual(DelayLine.from_milliseconds(0, 0.01).delay_steps, 0)

    def test_primed_line_holds_initial_value(self):
        line = DelayLine(2).primed(7.0)
        self.assertEqual(len(line), 2)
        self.assertEqual([line.push(v) for v in (1.0, 2.0, 3.0, 4.0)], [7.0, 7.0, 1.0, 2.0])
        self.assertEqual(len(line), 2)

    def test_zero_delay_passes_through(self):
        line = DelayLine(0).primed(7.0)
        self.assertEqual(line.push(1.5), 1.5)

    def test_invalid_delay(self):
        with self.assertRaises(ConfigurationError):
            DelayLine(-1)
        with self.assertRaises(ConfigurationError):
            DelayLine(1.5)
        with self.assertRaises(ConfigurationError):
            DelayLine.from_milliseconds(-5, 0.01)

    def test_delay_pair_is_symmetric(self):
        to_alice, to_bob = delay_pair(30, 0.01, seconds_per_time_unit=1.0)
        self.assertEqual(to_alice.delay_steps, 3)
        self.assertEqual(to_bob.delay_steps, 3)
        self.assertIsNot(to_alice, to_bob)

    def test_ten_milliseconds_is_one_time_unit(self):
        """默认换算下10 ms是1个时间单位，步长0.01时为100步"""
        to_alice, _ = delay_pair(10, 0.01)
        self.assertEqual(to_alice.delay_steps, 100)
        self.assertEqual(delay_pair(10, 0.05)[0].delay_steps, 20)
        self.assertEqual(DelayLine.from_milliseconds(10, 0.01, 0.1).delay_steps, 10)


class IntegrateTestCase(unittest.TestCase):
    """
    测试耦合系统的RK4积分
    """

    def setUp(self):
        self.config = get_preset('sync-reference').require_config()
        self.cfg = IntegratorConfig(step_h=0.01, n_steps=300)

    def _integrate(self, **kwargs):
        return integrate(self.config.initial_state(), self.config.control,
                         self.config.coupling, self.cfg, **kwargs)

    def test_rk4_fourth_order(self):
        """步长减半，误差约缩小16倍"""
        self.assertTrue(14.0 < rk4_self_check() < 18.0)

    def test_orbit_shape_and_initial_sample(self):
        orbit = self._integrate()
        self.assertEqual(orbit.length, 301)
        self.assertEqual(orbit.state_at(0), self.config.initial_state().as_tuple())
        self.assertFalse(orbit.diverged)

    def test_deterministic(self):
        first = self._integrate()
        second = self._integrate()
        for name in first.names():
            assert_array_equal(first[name], second[name])

    def test_zero_delay_line_matches_live_coupling(self):
        live = self._integrate()
        delayed = self._integrate(delay=delay_pair(0, 0.01))
        assert_array_equal(live['z_A'], delayed['z_A'])
        assert_array_equal(live['x_B'], delayed['x_B'])

    def test_delay_changes_orbit(self):
        live = self._integrate()
        delayed = self._integrate(delay=delay_pair(10, 0.01))
        self.assertEqual(live['z_A'][0], delayed['z_A'][0])
        self.assertFalse(np.array_equal(live['z_A'], delayed['z_A']))

    def test_channel_selection(self):
        orbit = self._integrate(channels=('z_A', 'x_B'))
        self.assertEqual(orbit.names(), ('z_A', 'x_B'))
        with self.assertRaises(ConfigurationError):
            self._integrate(channels=('q_A',))

    def test_stage_record(self):
        """子步记录的第一列就是每一步开始时的x_B和z_A"""
        orbit = self._integrate(record_stages=True)
        self.assertEqual(orbit.stage_inputs['x_B'].shape, (300, 4))
        assert_array_equal(orbit.stage_inputs['x_B'][:, 0], orbit['x_B'][:-1])
        assert_array_equal(orbit.stage_inputs['z_A'][:, 0], orbit['z_A'][:-1])

    def test_identical_nodes_stay_identical(self):
        """双方初始条件相同时耦合项恒为0，两端逐位相同"""
        config = self.config.replace(bob=self.config.alice)
        orbit = integrate(config.initial_state(), config.control, config.coupling, self.cfg)
        assert_array_equal(orbit['x_A'], orbit['x_B'])
        assert_array_equal(orbit['w_A'], orbit['w_B'])

    def test_divergence_guard(self):
        cfg = IntegratorConfig(step_h=0.01, n_steps=10, divergence_bound=0.1)
        with self.assertRaises(DivergenceError) as caught:
            integrate(self.config.initial_state(), self.config.control, self.config.coupling, cfg)
        self.assertEqual(caught.exception.step, 0)


class EveReplayTestCase(unittest.TestCase):
    """
    测试用记录的x_B重放Eve的方程
    """

    def setUp(self):
        self.config = get_preset('sync-reference').require_config()
        self.cfg = IntegratorConfig(step_h=0.01, n_steps=400)
        self.orbit = integrate(self.config.initial_state(), self.config.control,
                               self.config.coupling, self.cfg, record_stages=True)
        self.stages = self.orbit.stage_inputs['x_B']

    def test_replay_at_truth_is_bit_exact(self):
        eve = integrate_eve(self.config.alice, self.stages, self.config.control,
                            self.config.coupling.eps_x, self.cfg)
        assert_array_equal(eve['x_E'], self.orbit['x_A'])
        assert_array_equal(eve['z_E'], self.orbit['z_A'])
        assert_array_equal(eve['w_E'], self.orbit['w_A'])

    def test_batch_matches_scalar_replay(self):
        initials = np.array([self.config.alice.as_tuple(), (0.1, 0.2, 0.3125, -0.1)])
        eps = np.array([self.config.coupling.eps_x, 0.5])
        batch = integrate_eve_batch(initials, self.stages, self.config.control, eps, self.cfg)
        self.assertEqual(batch.shape, (401, 2))
        for j in range(2):
            single = integrate_eve(NodeState.from_sequence(initials[j]), self.stages,
                                   self.config.control, eps[j], self.cfg)
            assert_array_equal(batch[:, j], single['z_E'])

    def test_step_samples_are_accepted(self):
        """只有步点样本时子步内零阶保持，结果与子步记录不同但长度一致"""
        eve = integrate_eve(self.config.alice, self.orbit['x_B'], self.config.control,
                            self.config.coupling.eps_x, self.cfg)
        self.assertEqual(eve.length, 401)

    def test_short_record_rejected(self):
        with self.assertRaises(LengthMismatchError):
            integrate_eve(self.config.alice, self.stages[:10], self.config.control,
                          self.config.coupling.eps_x, self.cfg)
        with self.assertRaises(LengthMismatchError):
            integrate_eve(self.config.alice, np.zeros((400, 3)), self.config.control,
                          self.config.coupling.eps_x, self.cfg)


class RandomConfigTestCase(unittest.TestCase):
    """
    测试随机配置抽样
    """

    def test_same_stream_same_config(self):
        first = random_full_config(trial_rng(42, 3))
        second = random_full_config(trial_rng(42, 3))
        self.assertEqual(first, second)
        self.assertNotEqual(first, random_full_config(trial_rng(42, 4)))

    def test_ranges(self):
        rng = trial_rng(7)
        for _ in range(50):
            config = random_full_config(rng)
            for name, (lo, hi) in CONTROL_RANGES.items():
                self.assertTrue(lo <= getattr(config.control, name) <= hi)
            self.assertTrue(0.1 <= config.coupling.eps_x <= 1.1)
            self.assertTrue(config.alice.max_abs() <= 0.5)
            self.assertTrue(config.bob.max_abs() <= 0.5)

    def test_random_initial_node(self):
        node = random_initial_node(trial_rng(11))
        self.assertEqual(node, random_initial_node(trial_rng(11)))
        self.assertTrue(all(-0.5 <= v <= 0.5 for v in node.as_tuple()))

    def test_fixed_control(self):
        control = get_preset('weak-key').control
        config = random_full_config(trial_rng(1), control=control)
        self.assertEqual(config.control, control)

    def test_coupling_range_enforced(self):
        with self.assertRaises(ValueError):
            CouplingParams(eps_x=1.5, eps_z=0.5)
        self.assertEqual(CouplingParams.uncoupled().eps_x, 0.0)


if __name__ == '__main__':
    unittest.main()
