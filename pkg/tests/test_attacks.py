import unittest

import numpy as np
from numpy.testing import assert_allclose

from core.attacks import (
    DEFAULT_BOUNDS,
    FLAG_BOUNDARY,
    FLAG_CENTRAL_DIFFERENCE,
    FLAG_NOT_UNIMODAL,
    NMSEObjective,
    bisearch_w,
    bisearch_w_context,
    build_attack_context,
    coarse_grid_search,
    complete_recovery,
    context_from_transcript,
    error_distribution,
    error_histogram,
    fragility_trial,
    gradient_descent_attack,
    grid_lattice,
    key_space_cardinality,
    nmse,
    nmse_profile,
    pattern_search_refine,
    pipeline_attack,
    random_start,
    sync_fragility_study,
    ternary_search,
    weak_key_attack,
)
from core.cipher import run_protocol
from harness.presets import get_preset
from models import (
    AllSamplesGuarded,
    AttackMethod,
    ConfigurationError,
    EstimationReport,
    EveConfig,
    KeySpaceStage,
    LengthMismatchError,
    NMSEConfig,
    ProtocolLimits,
)
from utils.rng import trial_rng


def _bowl(target):
    target = np.asarray(target, dtype=float)

    def f(theta):
        diff = np.asarray(theta, dtype=float) - target
        return float(np.dot(diff, diff))

    return f


class NMSETestCase(unittest.TestCase):
    """
    测试NMSE目标函数
    """

    def test_identical_series(self):
        z = np.linspace(0.5, 1.5, 101)
        self.assertEqual(nmse(z, z, NMSEConfig(horizon_T=1.0), 0.01), 0.0)

    def test_relative_error(self):
        z = np.linspace(0.5, 1.5, 101)
        self.assertAlmostEqual(nmse(z, 0.9 * z, NMSEConfig(horizon_T=1.0), 0.01), 0.01)

    def test_guarded_samples_are_skipped(self):
        z_A = np.array([1.0, 0.0, 1.0])
        z_E = np.array([1.0, 5.0, 1.0])
        self.assertEqual(nmse(z_A, z_E, NMSEConfig(horizon_T=0.02), 0.01), 0.0)
        with self.assertRaises(AllSamplesGuarded):
            nmse(np.zeros(3), np.ones(3), NMSEConfig(horizon_T=0.02), 0.01)

    def test_joint_scaling_keeps_value(self):
        t = np.linspace(0.0, 1.0, 101)
        z_A = np.sin(2 * np.pi * 3 * t) + 0.05
        z_E = 0.97 * z_A + 1e-3 * np.cos(7 * t)
        cfg = NMSEConfig(horizon_T=1.0, guard_eps=1e-2)
        base = nmse(z_A, z_E, cfg, 0.01)
        for factor in (1e-6, 1e-3, -2.5, 1e4):
            assert_allclose(nmse(factor * z_A, factor * z_E, cfg, 0.01), base, rtol=1e-9)

    def test_guard_follows_reference_scale(self):
        z_A = 1e-6 * np.array([1.0, 0.5, 1.0])
        z_E = 1e-6 * np.array([1.0, 0.4, 1.0])
        self.assertAlmostEqual(nmse(z_A, z_E, NMSEConfig(horizon_T=0.02), 0.01), 0.04 / 3)

    def test_length_checks(self):
        with self.assertRaises(LengthMismatchError):
            nmse(np.ones(5), np.ones(6), NMSEConfig(horizon_T=0.02), 0.01)
        with self.assertRaises(LengthMismatchError):
            nmse(np.ones(5), np.ones(5), NMSEConfig(horizon_T=1.0), 0.01)


class AttackContextTestCase(unittest.TestCase):
    """
    测试攻击上下文与重放目标函数
    """

    def setUp(self):
        self.config = get_preset('sync-reference').require_config()
        self.context = build_attack_context(self.config, NMSEConfig(horizon_T=1.0))
        self.truth = self.context.truth

    def test_context_shape(self):
        self.assertEqual(self.context.n_steps, 100)
        self.assertEqual(len(self.context.observed_z_A), 101)
        self.assertEqual(self.context.recorded_x_B.shape, (100, 4))
        self.assertEqual(self.context.z_E0, self.config.alice.z)

    def test_objective_vanishes_at_truth(self):
        objective = NMSEObjective(self.context)
        self.assertEqual(objective(self.truth.free_vector()), 0.0)
        values = objective.batch([self.truth.free_vector(), (0.5, 0.0, 0.0, 0.0)])
        self.assertEqual(values[0], 0.0)
        self.assertGreater(values[1], 0.0)
        self.assertEqual(objective.evaluations, 3)

    def test_profile_has_zero_at_truth(self):
        w = self.truth.w_E0
        profile = nmse_profile('w_E0', [w - 0.1, w, w + 0.1], self.context)
        self.assertEqual(profile[1], (w, 0.0))
        self.assertGreater(profile[0][1], 0.0)
        with self.assertRaises(ConfigurationError):
            nmse_profile('w_E0', [0.2, 0.1], self.context)
        with self.assertRaises(ConfigurationError):
            nmse_profile('z_E0', [0.1, 0.2], self.context)

    def test_bisearch_only_moves_w(self):
        start = random_start(self.context, trial_rng(3, 0))
        report = bisearch_w_context(self.context, start, iters=20)
        self.assertEqual(report.method, AttackMethod.BISEARCH)
        self.assertEqual(report.estimates.eps_Ex, start.eps_Ex)
        self.assertEqual(report.estimates.x_E0, start.x_E0)
        self.assertEqual(report.estimates.z_E0, self.config.alice.z)
        self.assertTrue(-0.5 <= report.estimates.w_E0 <= 0.5)
        self.assertEqual(set(report.abs_errors), {'eps_Ex', 'x_E0', 'y_E0', 'w_E0'})

    def test_bisearch_from_raw_signals(self):
        w = self.truth.w_E0
        report = bisearch_w(self.context.observed_z_A, self.context.recorded_x_B,
                            self.context.control, self.truth, bracket=(w - 0.02, w + 0.02),
                            iters=60, nmse_cfg=self.context.nmse_cfg, truth=self.truth)
        self.assertEqual(report.method, AttackMethod.BISEARCH)
        self.assertAlmostEqual(report.estimates.w_E0, self.truth.w_E0, places=5)
        with self.assertRaises(ConfigurationError):
            bisearch_w(self.context.observed_z_A, self.context.recorded_x_B,
                       self.context.control, self.truth, bracket=(-0.6, 0.5))

    def test_pipeline_attack(self):
        report = pipeline_attack(self.context, trial_rng(9), M=4, N=4, iters=20,
                                 max_evals=200)
        self.assertEqual(report.method, AttackMethod.PIPELINE)
        self.assertEqual(report.estimates.z_E0, self.config.alice.z)
        self.assertGreater(report.evaluations, 16)
        self.assertTrue(report.final_nmse >= 0.0)

    def test_pipeline_never_worse_than_its_grid(self):
        """模式搜索从网格最优点出发且只接受改进，NMSE不会高于网格结果"""
        for seed in (9, 10, 11):
            grid = coarse_grid_search(4, 4, DEFAULT_BOUNDS[:3], NMSEObjective(self.context),
                                      random_start(self.context, trial_rng(seed)),
                                      self.truth)
            report = pipeline_attack(self.context, trial_rng(seed), M=4, N=4, iters=20,
                                     max_evals=200, use_bisearch=False)
            self.assertLessEqual(report.final_nmse, grid.final_nmse)

    def test_weak_key_attack(self):
        report = weak_key_attack(self.context, trial_rng(9), M=3, N=3, iters=20, max_iters=5)
        self.assertEqual(report.method, AttackMethod.GRADIENT_DESCENT)
        self.assertIn(FLAG_CENTRAL_DIFFERENCE, report.flags)
        self.assertEqual(report.truth, self.truth)

    def test_random_start_within_bounds(self):
        rng = trial_rng(5)
        for _ in range(20):
            start = random_start(self.context, rng)
            for value, (lo, hi) in zip(start.free_vector(), DEFAULT_BOUNDS):
                self.assertTrue(lo <= value <= hi)

    def test_short_transcript_rejected(self):
        config = self.config.replace(bob=self.config.alice)
        session = run_protocol(config.alice_party(), config.bob_party(),
                               limits=ProtocolLimits(exchange_steps=50, free_run_steps=10,
                                                     check_hyperchaos=False))
        with self.assertRaises(LengthMismatchError):
            context_from_transcript(session.transcript, config.control,
                                    NMSEConfig(horizon_T=1.0))


class TernarySearchTestCase(unittest.TestCase):
    """
    测试三分搜索
    """

    def test_unimodal_minimum(self):
        result = ternary_search(lambda x: (x - 0.3) ** 2, -0.5, 0.5, iters=60)
        self.assertAlmostEqual(result.x, 0.3, places=9)
        self.assertEqual(result.flags, ())
        self.assertEqual(result.evaluations, 2 + 2 * 60 + 1)

    def test_boundary_flag(self):
        result = ternary_search(lambda x: x, -0.5, 0.5, iters=30)
        self.assertIn(FLAG_BOUNDARY, result.flags)
        self.assertAlmostEqual(result.x, -0.5, places=5)

    def test_not_unimodal_flag(self):
        """两个端点都低于两个内点时记违例，达到上限后返回目前最优点"""
        result = ternary_search(lambda x: -x * x, -1.0, 1.0, iters=30, max_violations=1)
        self.assertIn(FLAG_NOT_UNIMODAL, result.flags)
        self.assertEqual(result.value, -1.0)
        self.assertEqual(result.evaluations, 4)

    def test_batch_evaluation(self):
        calls = []

        def batch(xs):
            calls.append(len(xs))
            return [(x - 0.1) ** 2 for x in xs]

        result = ternary_search(lambda x: (x - 0.1) ** 2, -0.5, 0.5, iters=10, batch=batch)
        self.assertEqual(calls, [2] * 11)
        self.assertAlmostEqual(result.x, 0.1, places=1)

    def test_empty_bracket(self):
        with self.assertRaises(ConfigurationError):
            ternary_search(lambda x: x, 0.5, 0.5)


class SearchTestCase(unittest.TestCase):
    """
    测试网格搜索、模式搜索与梯度下降（用解析目标函数）
    """

    def setUp(self):
        self.base = EveConfig(x_E0=0.0, y_E0=0.0, z_E0=0.25, w_E0=0.2, eps_Ex=0.5)

    def test_lattice_uses_lower_bounds(self):
        lattice = grid_lattice(2, 2, DEFAULT_BOUNDS[:3])
        self.assertEqual(lattice.shape, (8, 3))
        assert_allclose(lattice[0], (0.1, -0.5, -0.5))
        assert_allclose(lattice[-1], (0.6, 0.0, 0.0))
        self.assertEqual(len(grid_lattice(20, 20)), 8000)

    def test_grid_finds_lattice_point(self):
        objective = _bowl((0.6, -0.5, 0.0, 0.2))
        report = coarse_grid_search(2, 2, DEFAULT_BOUNDS[:3], objective, self.base)
        self.assertEqual(report.method, AttackMethod.GRID)
        self.assertEqual(report.evaluations, 8)
        assert_allclose(report.estimates.free_vector(), (0.6, -0.5, 0.0, 0.2))
        self.assertEqual(report.estimates.z_E0, 0.25)
        self.assertIsNone(report.abs_errors)

    def test_grid_rejects_small_lattice(self):
        with self.assertRaises(ConfigurationError):
            coarse_grid_search(1, 2, DEFAULT_BOUNDS[:3], _bowl((0, 0, 0, 0)), self.base)

    def test_pattern_search_converges(self):
        target = (0.55, 0.1, -0.2, 0.3)
        report = pattern_search_refine(self.base, _bowl(target), mesh0=0.05)
        assert_allclose(report.estimates.free_vector(), target, atol=1e-8)
        self.assertTrue(all(b <= a for a, b in zip(report.trace, report.trace[1:])))
        self.assertLessEqual(report.evaluations, 4000)

    def test_pattern_search_budget(self):
        report = pattern_search_refine(self.base, _bowl((0.55, 0.1, -0.2, 0.3)), mesh0=0.05,
                                       max_evals=10)
        self.assertIn('budget-exhausted', report.flags)
        self.assertLessEqual(report.evaluations, 10)

    def test_pattern_search_arguments(self):
        with self.assertRaises(ConfigurationError):
            pattern_search_refine(self.base, _bowl((0, 0, 0, 0)), mesh0=0.0)
        with self.assertRaises(ConfigurationError):
            pattern_search_refine(self.base, _bowl((0, 0, 0, 0)), mesh0=0.1, contraction=1.0)

    def test_gradient_descent_quadratic(self):
        target = (0.45, -0.1, 0.2, -0.3)
        report = gradient_descent_attack(_bowl(target), self.base)
        self.assertEqual(report.method, AttackMethod.GRADIENT_DESCENT)
        self.assertIn(FLAG_CENTRAL_DIFFERENCE, report.flags)
        assert_allclose(report.estimates.free_vector(), target, atol=1e-8)


class KeySpaceTestCase(unittest.TestCase):
    """
    测试密钥空间核算
    """

    def test_cardinalities(self):
        expected = {
            KeySpaceStage.NAIVE: 110,
            KeySpaceStage.AFTER_PUBLIC_ICS: 88,
            KeySpaceStage.ONE_SIDE_ONLY: 44,
            KeySpaceStage.AFTER_W_ESTIMATE: 35,
        }
        for stage, power in expected.items():
            account = key_space_cardinality(stage, digits=11)
            self.assertEqual(account.cardinality, 10 ** power)
            self.assertEqual(account.power_of_ten, power)

    def test_stage_by_name(self):
        self.assertEqual(key_space_cardinality('OneSideOnly', digits=2).cardinality, 10 ** 8)
        with self.assertRaises(ConfigurationError):
            key_space_cardinality('Naive', digits=0)


class StatisticsTestCase(unittest.TestCase):
    """
    测试完全恢复判定与误差统计
    """

    def setUp(self):
        self.truth = EveConfig(x_E0=0.1, y_E0=-0.2, z_E0=0.3, w_E0=0.4, eps_Ex=0.7)

    def _report(self, estimates):
        return EstimationReport(estimates=estimates, truth=self.truth, final_nmse=0.0,
                                evaluations=1, method=AttackMethod.PIPELINE)

    def test_complete_recovery(self):
        self.assertTrue(complete_recovery(self._report(self.truth)))
        close = self.truth.model_copy(update={'w_E0': 0.4 + 1e-15})
        self.assertTrue(complete_recovery(self._report(close)))
        off = self.truth.model_copy(update={'w_E0': 0.4 + 1e-6})
        self.assertFalse(complete_recovery(self._report(off)))

    def test_abs_errors(self):
        off = self.truth.model_copy(update={'x_E0': 0.15})
        self.assertAlmostEqual(self._report(off).abs_errors['x_E0'], 0.05)

    def test_histogram(self):
        edges, counts = error_histogram([1e-3, 1e-10, 0.0, 5.0])
        self.assertEqual(len(edges), 17)
        self.assertEqual(int(counts.sum()), 4)
        self.assertEqual(int(counts[0]), 1)

    def test_distribution(self):
        shares = error_distribution([1e-2, 1.2e-3, 0.9e-3, 5e-7])
        self.assertEqual(shares[1e-2], 0.25)
        self.assertEqual(shares[1e-3], 0.5)
        self.assertEqual(shares[1e-5], 0.0)
        self.assertEqual(error_distribution([])[1e-4], 0.0)


class FragilityTestCase(unittest.TestCase):
    """
    测试接收端初始条件重抽样
    """

    def setUp(self):
        config = get_preset('sync-reference').require_config()
        self.identical = config.replace(bob=config.alice)

    def test_identical_receiver_synchronizes(self):
        verdict = fragility_trial(self.identical, 0, 0, redraw_receiver=False, hold=100,
                                  n_steps=200)
        self.assertTrue(verdict.synchronized)
        self.assertEqual(verdict.detect_step, 0)

    def test_study_is_reproducible(self):
        first = sync_fragility_study(self.identical, 2, seed=8, hold=1000, n_steps=200)
        second = sync_fragility_study(self.identical, 2, seed=8, hold=1000, n_steps=200)
        self.assertEqual(first.n_trials, 2)
        self.assertEqual(first.failures, sum(1 for v in first.verdicts if not v.synchronized))
        self.assertEqual([v.synchronized for v in first.verdicts],
                         [v.synchronized for v in second.verdicts])


if __name__ == '__main__':
    unittest.main()
