"""
密码系统本体：局部极小值符号编码、抽取、Vernam异或、五阶段协议与配置筛选
"""
import logging
import math
from functools import partial

import numpy as np

from models import (
    CHANNEL_NAMES,
    ConfigurationError,
    CoupledState,
    CouplingParams,
    DivergenceError,
    ExhaustedAttempts,
    FailureReason,
    IntegratorConfig,
    Keystream,
    KeystreamExhausted,
    NonConvergedError,
    PartyConfig,
    ProtocolError,
    ProtocolLimits,
    ProtocolSession,
    ProtocolStage,
    ThroughputSummary,
    Transcript,
)
from utils.rng import as_generator, trial_rng

from .analysis import (
    EXACT_SYNC_THRESHOLD,
    admits,
    detect_local_minima,
    detect_synchronization,
    is_hyperchaotic,
    node_lyapunov_spectrum,
    throughput,
)
from .dynamics import integrate, random_full_config

logger = logging.getLogger(__name__)


class MinimaTrace:
    """
    分块累计序列的严格局部极小值

    每块开头拼上前一块末尾的两个样本，块边界上的极小值既不漏检也不重复，
    结果与对整条序列一次性检测相同。
    """

    def __init__(self):
        self.indices = []
        self.values = []
        self._tail = np.empty(0)
        self._consumed = 0

    def feed(self, samples):
        series = np.concatenate((self._tail, np.asarray(samples, dtype=float)))
        found = detect_local_minima(series)
        offset = self._consumed - len(self._tail)
        self.indices.extend((found + offset).tolist())
        self.values.extend(series[found].tolist())
        self._tail = series[-2:]
        self._consumed += len(samples)

    def bits_available(self, decimation):
        return math.ceil(len(self.indices) / decimation)

    def keystream(self, decimation, source_channel):
        """极小值 > 0 记为1，否则记为0；从第一个比特起每decimation个保留一个"""
        bits = (np.asarray(self.values, dtype=float) > 0.0).astype(np.uint8)
        minima = np.asarray(self.indices, dtype=np.int64)
        return Keystream(bits=bits[::decimation], source_channel=source_channel,
                         decimation=int(decimation), minima_indices=minima[::decimation])


def extract_keystream(series, decimation=10, source_channel='z_A'):
    """
    从轨道的局部极小值提取密钥流

    极小值 > 0 记为1，否则记为0（恰好为0也记为0）；然后从第一个比特起每decimation个保留一个。

    参数:
        series: 实数序列
        decimation: 抽取间隔
        source_channel: 序列所属通道名，写入元数据

    返回:
        Keystream: 比特数为 ceil(极小值个数 / decimation)
    """
    if decimation < 1:
        raise ValueError("抽取间隔必须 >= 1")
    trace = MinimaTrace()
    trace.feed(series)
    return trace.keystream(decimation, source_channel)


def vernam(data, ks: Keystream):
    """
    用密钥流对字节串做异或（每个字节高位在前）

    参数:
        data: bytes
        ks: 密钥流

    返回:
        bytes: 同长度的密文/明文

    异常:
        KeystreamExhausted: 密钥流比特少于 8*len(data)
    """
    payload = np.frombuffer(bytes(data), dtype=np.uint8)
    needed = 8 * len(payload)
    if len(ks.bits) < needed:
        raise KeystreamExhausted(needed, len(ks.bits))
    key = np.packbits(np.asarray(ks.bits[:needed], dtype=np.uint8))
    return (payload ^ key).tobytes()


def _transcript(orbit, detect_step):
    return Transcript(step_h=orbit.step_h,
                      z_A=orbit['z_A'][:detect_step + 1].copy(),
                      x_B=orbit['x_B'][:detect_step + 1].copy(),
                      x_B_stages=orbit.stage_inputs['x_B'][:detect_step].copy(),
                      z_A_stages=orbit.stage_inputs['z_A'][:detect_step].copy())


def free_running_node_spectrum(p, start: CoupledState, cfg, renorm_interval=10, band=0.05):
    """
    停止交换后自由运行系统的指数谱

    同步后两端是同一个四维节点的两份拷贝，谱只在Alice的节点上计算；
    未收敛时使用末次估计。
    """
    try:
        return node_lyapunov_spectrum(p, start.A, cfg, renorm_interval=renorm_interval,
                                      band=band)
    except NonConvergedError as error:
        logger.warning("Lyapunov谱未收敛（波动 %.3e），使用末次估计", error.spread)
        return error.spectrum


def free_run(start: CoupledState, p, cfg, required_bits=0, decimation=10,
             max_steps=None):
    """
    两端不耦合地分块运行，直到双方的密钥流都有required_bits比特

    每块cfg.n_steps步，分块积分与一次积分逐位相同。至少运行一块。

    参数:
        start: 检测到同步时的状态
        p: 控制参数
        cfg: 每块的IntegratorConfig
        required_bits: 需要的密钥流比特数
        decimation: 抽取间隔
        max_steps: 总步数上限，None表示只运行一块

    返回:
        tuple: ({'z_A': MinimaTrace, 'z_B': MinimaTrace}, 总步数)

    异常:
        KeystreamExhausted: 达到max_steps时比特仍然不够
        DivergenceError: 自由运行发散
    """
    max_steps = cfg.n_steps if max_steps is None else max_steps
    traces = {'z_A': MinimaTrace(), 'z_B': MinimaTrace()}
    state, done = start, 0
    while True:
        steps = min(cfg.n_steps, max_steps - done)
        chunk = integrate(state, p, CouplingParams.uncoupled(), cfg.with_steps(steps),
                          channels=CHANNEL_NAMES)
        # 后续块的第0个样本是上一块的最后一个样本
        skip = 1 if done else 0
        for name, trace in traces.items():
            trace.feed(chunk[name][skip:])
        done += steps
        state = CoupledState.from_sequence(chunk.state_at(-1))
        available = min(trace.bits_available(decimation) for trace in traces.values())
        if available >= required_bits:
            return traces, done
        if done >= max_steps:
            raise KeystreamExhausted(required_bits, available)
        logger.debug("自由运行%s步后密钥流 %s/%s 比特，继续", done, available, required_bits)


def run_protocol(alice: PartyConfig, bob: PartyConfig, channel=None, limits=None,
                 plaintext_len=0):
    """
    执行五阶段协议

    第1阶段双方必须使用相同的 (a, b, mu)。第2阶段交换 z_A 与 x_B 直到判定同步，
    公开记录只保留检测步之前（含）的样本。第3阶段停止传输。第4阶段按准入规则检查
    自由运行节点的指数谱，然后双方各自不耦合地运行，直到密钥流够加密plaintext_len字节。
    两端密钥流逐位一致时才进入加密阶段。

    参数:
        alice: Alice的配置
        bob: Bob的配置
        channel: (x_B->Alice, z_A->Bob) 延迟线对，None表示无延迟
        limits: ProtocolLimits
        plaintext_len: 需要加密的字节数，决定自由运行的长度

    返回:
        ProtocolSession: 失败时stage为Failed并带有原因

    异常:
        KeystreamExhausted: 自由运行达到max_free_run_steps时密钥流仍然不够
    """
    limits = limits or ProtocolLimits()
    if alice.role != 'alice' or bob.role != 'bob':
        raise ProtocolError("参与方角色必须分别是alice和bob")
    if alice.control != bob.control:
        raise ProtocolError("双方必须使用相同的控制参数 (a, b, mu)")

    session = ProtocolSession(alice_cfg=alice, bob_cfg=bob)
    p = alice.control
    coupling = CouplingParams(eps_x=alice.coupling, eps_z=bob.coupling)
    threshold = limits.sync_threshold or EXACT_SYNC_THRESHOLD

    session.stage = ProtocolStage.EXCHANGING
    exchange_cfg = IntegratorConfig(step_h=limits.step_h, n_steps=limits.exchange_steps,
                                    divergence_bound=limits.divergence_bound)
    try:
        orbit = integrate(CoupledState(A=alice.initial, B=bob.initial), p, coupling,
                          exchange_cfg, delay=channel, record_stages=True)
    except DivergenceError as error:
        return session.fail(FailureReason.DIVERGED, str(error))

    verdict = detect_synchronization(orbit['x_A'], orbit['x_B'], orbit['z_A'], orbit['z_B'],
                                     threshold=threshold, hold=limits.sync_hold)
    session.sync_verdict = verdict
    if not verdict.synchronized:
        logger.info("交换%s步后未同步，末段误差 %.3e", limits.exchange_steps,
                    verdict.terminal_error)
        return session.fail(FailureReason.NO_SYNC,
                            f"末段误差 {verdict.terminal_error:.3e}")

    session.stage = ProtocolStage.SYNCHRONIZED
    session.transcript = _transcript(orbit, verdict.detect_step)
    start = CoupledState.from_sequence(orbit.state_at(verdict.detect_step))
    logger.info("第%s步检测到同步，停止传输", verdict.detect_step)

    session.stage = ProtocolStage.FREE_RUNNING
    if limits.check_hyperchaos:
        try:
            spectrum = free_running_node_spectrum(p, start,
                                                  exchange_cfg.with_steps(limits.lyapunov_steps),
                                                  renorm_interval=limits.renorm_interval,
                                                  band=limits.lyapunov_band)
        except DivergenceError as error:
            return session.fail(FailureReason.DIVERGED, str(error))
        session.spectrum = spectrum
        session.hyperchaotic = is_hyperchaotic(spectrum, limits.hyperchaos_tol)
        if not admits(spectrum, limits.admission, limits.hyperchaos_tol):
            reason = (FailureReason.NOT_HYPERCHAOTIC if limits.admission == 'hyperchaotic'
                      else FailureReason.NOT_CHAOTIC)
            return session.fail(reason, f"指数谱 {spectrum.exponents}")

    try:
        traces, steps = free_run(start, p, exchange_cfg.with_steps(limits.free_run_steps),
                                 required_bits=8 * plaintext_len,
                                 decimation=limits.decimation,
                                 max_steps=limits.max_free_run_steps)
    except DivergenceError as error:
        return session.fail(FailureReason.DIVERGED, str(error))
    session.free_run_steps = steps

    session.alice_keystream = traces['z_A'].keystream(limits.decimation, 'z_A')
    session.bob_keystream = traces['z_B'].keystream(limits.decimation, 'z_B')
    if not session.alice_keystream.matches(session.bob_keystream):
        return session.fail(FailureReason.KEYSTREAM_MISMATCH,
                            f"Alice {len(session.alice_keystream)} 比特，"
                            f"Bob {len(session.bob_keystream)} 比特")
    session.stage = ProtocolStage.CIPHERING
    return session


def screen_config(config, threshold=1e-6, hold=1000, admission='hyperchaotic', tol=5e-3):
    """
    检查一个配置能否通过协议的第2到第4阶段：交换后同步，自由运行的节点谱通过准入规则

    同步检测与指数谱都使用config.n_steps步。

    返回:
        LyapunovSpectrum或None: 通过时返回节点谱，同步失败、发散或被规则拒绝时为None
    """
    cfg = config.integrator()
    try:
        orbit = integrate(config.initial_state(), config.control, config.coupling, cfg)
    except DivergenceError:
        return None
    verdict = detect_synchronization(orbit['x_A'], orbit['x_B'], orbit['z_A'], orbit['z_B'],
                                     threshold=threshold, hold=hold)
    if not verdict.synchronized:
        return None
    start = CoupledState.from_sequence(orbit.state_at(verdict.detect_step))
    try:
        spectrum = free_running_node_spectrum(config.control, start, cfg)
    except DivergenceError:
        return None
    return spectrum if admits(spectrum, admission, tol) else None


def random_hyperchaotic_config(seed_or_rng, max_attempts=100, control=None, step_h=0.01,
                               screen_steps=100_000, threshold=1e-6, hold=1000, tol=5e-3,
                               admission='hyperchaotic', seed=0):
    """
    拒绝采样：直到配置既能同步、停止交换后的自由运行节点又通过准入规则

    参数:
        seed_or_rng: 种子或Generator
        max_attempts: 最大尝试次数
        control: 固定的控制参数（None时随机抽取）
        screen_steps: 同步检测与Lyapunov谱的积分步数
        admission: 'hyperchaotic' 或 'chaotic'，见 core.analysis.admits

    返回:
        tuple: (FullConfig, 尝试次数)

    异常:
        ExhaustedAttempts: 尝试次数用完
    """
    if max_attempts < 1:
        raise ConfigurationError("max_attempts必须 >= 1")
    rng = as_generator(seed_or_rng)
    for attempt in range(1, max_attempts + 1):
        config = random_full_config(rng, control=control, step_h=step_h,
                                    n_steps=screen_steps, seed=seed)
        spectrum = screen_config(config, threshold=threshold, hold=hold,
                                 admission=admission, tol=tol)
        if spectrum is not None:
            logger.info("第%s次尝试得到合格配置，最大指数 %.4f", attempt, spectrum.largest)
            return config, attempt
    raise ExhaustedAttempts(max_attempts)


def orbit_throughput(seed, index, orbit_len, step_h=0.01, channel='z_A',
                     divergence_bound=1e6, screen_steps=100_000, max_attempts=50,
                     admission='hyperchaotic'):
    """
    第index条筛选后随机轨道的吞吐量；发散或筛选失败时返回None

    模块级函数，可以直接交给进程池。
    """
    rng = trial_rng(seed, index)
    try:
        config, _ = random_hyperchaotic_config(rng, max_attempts=max_attempts, step_h=step_h,
                                               screen_steps=screen_steps,
                                               admission=admission)
    except ExhaustedAttempts:
        logger.debug("第%s条轨道筛选失败，丢弃", index)
        return None
    cfg = config.integrator(n_steps=orbit_len, divergence_bound=divergence_bound)
    try:
        orbit = integrate(config.initial_state(), config.control, config.coupling, cfg,
                          channels=(channel,))
    except DivergenceError:
        logger.debug("第%s条轨道发散，丢弃", index)
        return None
    return throughput(orbit[channel])


def throughput_summary(values, discarded=0):
    """
    吞吐量列表的汇总统计，None表示被丢弃的轨道并计入discarded
    """
    kept = [v for v in values if v is not None]
    discarded += len(values) - len(kept)
    if not kept:
        return ThroughputSummary(count=0, discarded=discarded, mean=math.nan,
                                 minimum=math.nan, maximum=math.nan)
    arr = np.asarray(kept, dtype=float)
    return ThroughputSummary(count=len(kept), discarded=discarded, mean=float(arr.mean()),
                             minimum=float(arr.min()), maximum=float(arr.max()))


def throughput_study(n_orbits, orbit_len, seed, step_h=0.01, channel='z_A', map_fn=map,
                     screen_steps=100_000, max_attempts=50, admission='hyperchaotic'):
    """
    筛选后随机配置轨道的吞吐量研究

    参数:
        n_orbits: 轨道数
        orbit_len: 每条轨道的积分步数
        seed: 随机种子（结果只依赖于它）
        step_h: 步长
        channel: 统计的通道
        map_fn: 可替换为进程池的map，保持输入顺序即可
        screen_steps, max_attempts, admission: 传给 random_hyperchaotic_config

    返回:
        ThroughputSummary
    """
    if n_orbits < 1:
        raise ValueError("轨道数必须 >= 1")
    logger.info("吞吐量研究: %s条轨道，每条%s步", n_orbits, orbit_len)
    task = partial(orbit_throughput, orbit_len=orbit_len, step_h=step_h, channel=channel,
                   screen_steps=screen_steps, max_attempts=max_attempts,
                   admission=admission)
    values = list(map_fn(task, [seed] * n_orbits, range(n_orbits)))
    summary = throughput_summary(values)
    logger.info("吞吐量均值 %.4e（丢弃%s条轨道）", summary.mean, summary.discarded)
    return summary
