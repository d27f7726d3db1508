import unittest

import numpy as np
from numpy.testing import assert_array_equal

from core.analysis import is_hyperchaotic
from core.cipher import (
    MinimaTrace,
    extract_keystream,
    free_run,
    orbit_throughput,
    random_hyperchaotic_config,
    run_protocol,
    screen_config,
    throughput_study,
    throughput_summary,
    vernam,
)
from harness.presets import get_preset
from models import (
    ConfigurationError,
    CoupledState,
    ExhaustedAttempts,
    FailureReason,
    IntegratorConfig,
    Keystream,
    KeystreamExhausted,
    PartyConfig,
    ProtocolError,
    ProtocolLimits,
    ProtocolStage,
)


class KeystreamTestCase(unittest.TestCase):
    """
    测试由局部极小值提取密钥流
    """

    def setUp(self):
        # 极小值依次为 -1, 0.5, 0.0, -0.2, 0.3
        self.series = np.array([0.0, -1.0, 1.0, 0.5, 2.0, 0.0, 1.0, -0.2, 0.5, 0.3, 0.4])

    def test_bits_from_minima_signs(self):
        ks = extract_keystream(self.series, decimation=1)
        assert_array_equal(ks.bits, [0, 1, 0, 0, 1])
        assert_array_equal(ks.minima_indices, [1, 3, 5, 7, 9])
        self.assertEqual(ks.as_text(), '01001')

    def test_decimation_keeps_first_of_each_group(self):
        ks = extract_keystream(self.series, decimation=2)
        assert_array_equal(ks.bits, [0, 0, 1])
        self.assertEqual(len(extract_keystream(self.series, decimation=10)), 1)
        with self.assertRaises(ValueError):
            extract_keystream(self.series, decimation=0)

    def test_positive_scaling_invariance(self):
        original = extract_keystream(self.series, decimation=1)
        scaled = extract_keystream(self.series * 37.5, decimation=1)
        self.assertTrue(original.matches(scaled))

    def test_no_minima(self):
        self.assertEqual(len(extract_keystream(np.arange(50.0))), 0)

    def test_chunked_minima_match_whole_series(self):
        series = np.random.default_rng(23).standard_normal(997)
        whole = extract_keystream(series, decimation=3)
        for size in (1, 2, 5, 100):
            trace = MinimaTrace()
            for start in range(0, len(series), size):
                trace.feed(series[start:start + size])
            chunked = trace.keystream(3, 'z_A')
            self.assertTrue(chunked.matches(whole))
            assert_array_equal(chunked.minima_indices, whole.minima_indices)
            self.assertEqual(trace.bits_available(3), len(whole))


class FreeRunTestCase(unittest.TestCase):
    """
    测试停止交换后的分块自由运行
    """

    def setUp(self):
        config = get_preset('sync-reference').require_config()
        self.control = config.control
        self.start = CoupledState(A=config.alice, B=config.alice)

    def test_chunks_match_single_run(self):
        whole, steps = free_run(self.start, self.control,
                                IntegratorConfig(step_h=0.01, n_steps=5000))
        self.assertEqual(steps, 5000)
        needed = whole['z_A'].bits_available(1)
        chunked, steps = free_run(self.start, self.control,
                                  IntegratorConfig(step_h=0.01, n_steps=1000),
                                  required_bits=needed, decimation=1, max_steps=5000)
        self.assertLessEqual(steps, 5000)
        self.assertEqual(steps % 1000, 0)
        for name in ('z_A', 'z_B'):
            ks = chunked[name].keystream(1, name)
            self.assertGreaterEqual(len(ks), needed)
            reference = whole[name].keystream(1, name)
            assert_array_equal(ks.minima_indices[:needed], reference.minima_indices[:needed])
            assert_array_equal(ks.bits[:needed], reference.bits[:needed])

    def test_step_budget_raises(self):
        with self.assertRaises(KeystreamExhausted) as caught:
            free_run(self.start, self.control, IntegratorConfig(step_h=0.01, n_steps=200),
                     required_bits=10_000, decimation=1, max_steps=600)
        self.assertEqual(caught.exception.needed, 10_000)
        self.assertLess(caught.exception.available, 10_000)


class VernamTestCase(unittest.TestCase):
    """
    测试Vernam异或
    """

    def setUp(self):
        bits = np.random.default_rng(11).integers(0, 2, size=8 * 64)
        self.ks = Keystream(bits=bits.astype(np.uint8), source_channel='z_A',
                            decimation=1, minima_indices=np.arange(len(bits)))

    def test_roundtrip(self):
        plaintext = bytes(range(64))
        ciphertext = vernam(plaintext, self.ks)
        self.assertEqual(len(ciphertext), 64)
        self.assertNotEqual(ciphertext, plaintext)
        self.assertEqual(vernam(ciphertext, self.ks), plaintext)

    def test_msb_first(self):
        bits = np.array([1, 0, 0, 0, 0, 0, 0, 1], dtype=np.uint8)
        ks = Keystream(bits=bits, source_channel='z_A', decimation=1,
                       minima_indices=np.arange(8))
        self.assertEqual(vernam(b'\x00', ks), b'\x81')

    def test_empty_plaintext(self):
        self.assertEqual(vernam(b'', self.ks), b'')

    def test_exhausted(self):
        with self.assertRaises(KeystreamExhausted) as caught:
            vernam(bytes(65), self.ks)
        self.assertEqual(caught.exception.needed, 520)
        self.assertEqual(caught.exception.available, 512)


class ProtocolTestCase(unittest.TestCase):
    """
    测试五阶段协议的状态机
    """

    def setUp(self):
        self.config = get_preset('sync-reference').require_config()
        self.limits = ProtocolLimits(exchange_steps=300, free_run_steps=20_000,
                                     check_hyperchaos=False)

    def test_identical_receiver_reaches_ciphering(self):
        """双方初始条件相同时误差恰好为0，第0步即判定同步"""
        config = self.config.replace(bob=self.config.alice)
        session = run_protocol(config.alice_party(), config.bob_party(), limits=self.limits)
        self.assertEqual(session.stage, ProtocolStage.CIPHERING)
        self.assertEqual(session.sync_verdict.detect_step, 0)
        self.assertTrue(session.alice_keystream.matches(session.bob_keystream))
        self.assertEqual(session.alice_keystream.source_channel, 'z_A')
        self.assertEqual(session.bob_keystream.source_channel, 'z_B')
        self.assertIs(session.keystream, session.alice_keystream)

    def test_transcript_stops_at_detection(self):
        config = self.config.replace(bob=self.config.alice)
        session = run_protocol(config.alice_party(), config.bob_party(), limits=self.limits)
        transcript = session.transcript
        self.assertEqual(transcript.last_step, session.sync_verdict.detect_step)
        self.assertEqual(len(transcript.x_B), len(transcript.z_A))
        self.assertEqual(len(transcript.x_B_stages), transcript.last_step)

    def test_free_run_sized_from_plaintext(self):
        """自由运行一直进行到密钥流够加密整段明文"""
        config = self.config.replace(bob=self.config.alice)
        limits = ProtocolLimits(step_h=0.05, exchange_steps=300, free_run_steps=50_000,
                                decimation=1, check_hyperchaos=False,
                                max_free_run_steps=2_000_000)
        plaintext = np.random.default_rng(31).bytes(200)
        session = run_protocol(config.alice_party(), config.bob_party(), limits=limits,
                               plaintext_len=len(plaintext))
        self.assertEqual(session.stage, ProtocolStage.CIPHERING)
        self.assertGreaterEqual(len(session.alice_keystream), 8 * len(plaintext))
        self.assertEqual(session.free_run_steps % 50_000, 0)
        ciphertext = vernam(plaintext, session.alice_keystream)
        self.assertEqual(vernam(ciphertext, session.bob_keystream), plaintext)

    def test_free_run_budget_exhausted(self):
        config = self.config.replace(bob=self.config.alice)
        limits = ProtocolLimits(exchange_steps=300, free_run_steps=1000,
                                check_hyperchaos=False, max_free_run_steps=2000)
        with self.assertRaises(KeystreamExhausted):
            run_protocol(config.alice_party(), config.bob_party(), limits=limits,
                         plaintext_len=1024)

    def test_free_run_budget_must_cover_one_chunk(self):
        with self.assertRaises(ValueError):
            ProtocolLimits(free_run_steps=5000, max_free_run_steps=1000)

    def test_spectrum_checked_on_single_node(self):
        """第4阶段在四维节点上计算指数谱，并按准入规则决定是否进入加密"""
        config = self.config.replace(bob=self.config.alice)
        limits = ProtocolLimits(exchange_steps=300, free_run_steps=2000,
                                lyapunov_steps=3000, admission='chaotic')
        session = run_protocol(config.alice_party(), config.bob_party(), limits=limits)
        self.assertEqual(session.spectrum.dimension, 4)
        self.assertEqual(session.hyperchaotic, is_hyperchaotic(session.spectrum))
        if session.spectrum.largest > limits.hyperchaos_tol:
            self.assertEqual(session.stage, ProtocolStage.CIPHERING)
        else:
            self.assertEqual(session.failure, FailureReason.NOT_CHAOTIC)

    def test_exact_rule_rejects_short_exchange(self):
        """不同初始条件在300步内不可能误差恰好为0"""
        session = run_protocol(self.config.alice_party(), self.config.bob_party(),
                               limits=self.limits)
        self.assertEqual(session.stage, ProtocolStage.FAILED)
        self.assertEqual(session.failure, FailureReason.NO_SYNC)
        self.assertIsNone(session.transcript)
        self.assertIsNone(session.keystream)

    def test_divergence_fails_session(self):
        limits = self.limits.model_copy(update={'divergence_bound': 0.01})
        session = run_protocol(self.config.alice_party(), self.config.bob_party(),
                               limits=limits)
        self.assertEqual(session.failure, FailureReason.DIVERGED)

    def test_preconditions(self):
        alice, bob = self.config.alice_party(), self.config.bob_party()
        with self.assertRaises(ProtocolError):
            run_protocol(bob, alice, limits=self.limits)
        other = PartyConfig(role='bob', control=get_preset('weak-key').control,
                            initial=bob.initial, coupling=bob.coupling)
        with self.assertRaises(ProtocolError):
            run_protocol(alice, other, limits=self.limits)


class ThroughputTestCase(unittest.TestCase):
    """
    测试吞吐量研究
    """

    def test_orbit_throughput_reproducible(self):
        first = orbit_throughput(9, 2, 2000, screen_steps=2000, max_attempts=2)
        self.assertEqual(first, orbit_throughput(9, 2, 2000, screen_steps=2000, max_attempts=2))
        if first is not None:
            self.assertTrue(0.0 <= first <= 0.5)

    def test_unscreened_orbits_are_discarded(self):
        """筛选步数小于同步保持步数时没有配置能通过，轨道被丢弃"""
        self.assertIsNone(orbit_throughput(9, 2, 2000, screen_steps=500, max_attempts=1))

    def test_summary(self):
        summary = throughput_summary([0.001, 0.002, 0.003], discarded=1)
        self.assertEqual(summary.count, 3)
        self.assertEqual(summary.discarded, 1)
        self.assertAlmostEqual(summary.mean, 0.002)
        self.assertEqual(summary.minimum, 0.001)
        self.assertEqual(summary.maximum, 0.003)

    def test_study_counts_orbits(self):
        summary = throughput_study(3, 1500, seed=4, screen_steps=500, max_attempts=1)
        self.assertEqual(summary.count + summary.discarded, 3)
        self.assertEqual(summary.discarded, 3)


class ScreeningTestCase(unittest.TestCase):
    """
    测试配置筛选
    """

    def test_reference_config_passes_chaotic_rule(self):
        config = get_preset('sync-reference').require_config().replace(n_steps=200_000)
        spectrum = screen_config(config, admission='chaotic')
        self.assertIsNotNone(spectrum)
        self.assertEqual(spectrum.dimension, 4)
        self.assertGreater(spectrum.largest, 5e-3)
        self.assertLess(abs(sum(spectrum.exponents)), 1e-5)

    def test_short_screen_never_synchronizes(self):
        config = get_preset('sync-reference').require_config().replace(n_steps=500)
        self.assertIsNone(screen_config(config, hold=1000, admission='chaotic'))

    def test_screening_exhausts_attempts(self):
        """保持步数大于积分步数时不可能判定同步"""
        with self.assertRaises(ExhaustedAttempts) as caught:
            random_hyperchaotic_config(3, max_attempts=2, screen_steps=200, hold=1000)
        self.assertEqual(caught.exception.attempts, 2)
        with self.assertRaises(ConfigurationError):
            random_hyperchaotic_config(3, max_attempts=0)


if __name__ == '__main__':
    unittest.main()
