"""
发送端/接收端/窃听端的向量场与定步长RK4积分

所有函数都是输入的纯函数（随机数生成器显式传入），可以在多进程中按轨道并行。
"""
import logging
import math
from collections import deque

import numpy as np

from models import (
    CHANNEL_NAMES,
    EVE_CHANNEL_NAMES,
    ConfigurationError,
    ControlParams,
    CoupledState,
    CouplingParams,
    DivergenceError,
    FullConfig,
    LengthMismatchError,
    NodeState,
    Orbit,
)

logger = logging.getLogger(__name__)

# 随机研究中控制参数的采样范围，覆盖所有已公开的配置取值
CONTROL_RANGES = {
    'a': (-1.1, -0.4),
    'b': (0.1, 1.2),
    'mu': (0.5, 1.3),
}

# 一个模型时间单位对应的秒数：10 ms的传输延迟等于1个时间单位
SECONDS_PER_TIME_UNIT = 0.01


# ---------------------------------------------------------------------------
# 向量场
#
# 下面的函数只用算术运算，既接受Python浮点数也接受numpy数组；
# 实时积分、窃听重放和批量重放共用同一套表达式，保证逐位一致。
# ---------------------------------------------------------------------------

def alice_field(x, y, z, w, x_in, a, b, mu, eps):
    r = a * (x * x + z * z)
    return (y + eps * (x_in - x),
            mu * x + x * (r + b * z * z),
            w,
            mu * z + z * (r + b * x * x))


def bob_field(x, y, z, w, z_in, a, b, mu, eps):
    r = a * (x * x + z * z)
    return (y,
            mu * x + x * (r + b * z * z),
            w + eps * (z_in - z),
            mu * z + z * (r + b * x * x))


def _advance(s, k, f):
    return (s[0] + f * k[0], s[1] + f * k[1], s[2] + f * k[2], s[3] + f * k[3])


def _combine(s, k1, k2, k3, k4, h6):
    return (s[0] + h6 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            s[1] + h6 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            s[2] + h6 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            s[3] + h6 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]))


def _node_step(s, inputs, h, field, a, b, mu, eps):
    """单方的一步RK4，inputs是四个子步上接收到的对端信号"""
    hh = 0.5 * h
    k1 = field(s[0], s[1], s[2], s[3], inputs[0], a, b, mu, eps)
    s2 = _advance(s, k1, hh)
    k2 = field(s2[0], s2[1], s2[2], s2[3], inputs[1], a, b, mu, eps)
    s3 = _advance(s, k2, hh)
    k3 = field(s3[0], s3[1], s3[2], s3[3], inputs[2], a, b, mu, eps)
    s4 = _advance(s, k3, h)
    k4 = field(s4[0], s4[1], s4[2], s4[3], inputs[3], a, b, mu, eps)
    return _combine(s, k1, k2, k3, k4, h / 6.0)


def _coupled_step_live(sa, sb, h, a, b, mu, eps_x, eps_z):
    """
    八维系统联合的一步RK4，每个子步都使用对端当前子步的状态

    返回:
        tuple: (新的A状态, 新的B状态, A收到的x_B四个子步值, B收到的z_A四个子步值)
    """
    hh = 0.5 * h
    ka1 = alice_field(sa[0], sa[1], sa[2], sa[3], sb[0], a, b, mu, eps_x)
    kb1 = bob_field(sb[0], sb[1], sb[2], sb[3], sa[2], a, b, mu, eps_z)
    sa2 = _advance(sa, ka1, hh)
    sb2 = _advance(sb, kb1, hh)
    ka2 = alice_field(sa2[0], sa2[1], sa2[2], sa2[3], sb2[0], a, b, mu, eps_x)
    kb2 = bob_field(sb2[0], sb2[1], sb2[2], sb2[3], sa2[2], a, b, mu, eps_z)
    sa3 = _advance(sa, ka2, hh)
    sb3 = _advance(sb, kb2, hh)
    ka3 = alice_field(sa3[0], sa3[1], sa3[2], sa3[3], sb3[0], a, b, mu, eps_x)
    kb3 = bob_field(sb3[0], sb3[1], sb3[2], sb3[3], sa3[2], a, b, mu, eps_z)
    sa4 = _advance(sa, ka3, h)
    sb4 = _advance(sb, kb3, h)
    ka4 = alice_field(sa4[0], sa4[1], sa4[2], sa4[3], sb4[0], a, b, mu, eps_x)
    kb4 = bob_field(sb4[0], sb4[1], sb4[2], sb4[3], sa4[2], a, b, mu, eps_z)
    h6 = h / 6.0
    return (_combine(sa, ka1, ka2, ka3, ka4, h6),
            _combine(sb, kb1, kb2, kb3, kb4, h6),
            (sb[0], sb2[0], sb3[0], sb4[0]),
            (sa[2], sa2[2], sa3[2], sa4[2]))


def _within_bound(values, bound):
    # NaN不满足 <=，一并视为越界
    for v in values:
        if not abs(v) <= bound:
            return False
    return True


def _guard(values, bound):
    if not _within_bound(values, bound):
        raise DivergenceError(step=0, message=f"输入分量超出发散界 {bound:g}")


# ---------------------------------------------------------------------------
# 导数
# ---------------------------------------------------------------------------

def coupled_derivative(s: CoupledState, p: ControlParams, c: CouplingParams,
                       x_B_in, z_A_in, divergence_bound=1e6):
    """
    耦合系统的八个时间导数

    参数:
        s: 耦合状态
        p: 控制参数
        c: 耦合强度
        x_B_in: A在耦合项中使用的（可能带延迟的）x_B
        z_A_in: B在耦合项中使用的（可能带延迟的）z_A
        divergence_bound: 发散保护界

    返回:
        CoupledState: 各分量是对应变量的导数
    """
    values = s.as_tuple() + (x_B_in, z_A_in)
    _guard(values, divergence_bound)
    da = alice_field(*s.A.as_tuple(), x_B_in, p.a, p.b, p.mu, c.eps_x)
    db = bob_field(*s.B.as_tuple(), z_A_in, p.a, p.b, p.mu, c.eps_z)
    return CoupledState(A=NodeState.from_sequence(da), B=NodeState.from_sequence(db))


def eve_derivative(e: NodeState, x_B_in, p: ControlParams, eps_Ex, divergence_bound=1e6):
    """
    Eve复制Alice方程时的四个导数（与Alice的方程只差下标）
    """
    _guard(e.as_tuple() + (x_B_in, eps_Ex), divergence_bound)
    return NodeState.from_sequence(alice_field(*e.as_tuple(), x_B_in, p.a, p.b, p.mu, eps_Ex))


# ---------------------------------------------------------------------------
# 传输延迟
# ---------------------------------------------------------------------------

class DelayLine:
    """
    以积分步为单位的传输延迟线

    delay_steps为0时直接透传；否则缓冲区长度恒等于delay_steps，
    未满时用发送方自己的初始值填充（保持首值）。
    """

    def __init__(self, delay_steps=0):
        if int(delay_steps) != delay_steps or delay_steps < 0:
            raise ConfigurationError(f"延迟步数必须是非负整数，收到 {delay_steps!r}")
        self.delay_steps = int(delay_steps)
        self._buffer = deque()

    @classmethod
    def from_milliseconds(cls, delay_ms, step_h, seconds_per_time_unit=SECONDS_PER_TIME_UNIT):
        """
        把毫秒延迟换算成积分步数：round(delay_ms/1000 / (step_h * seconds_per_time_unit))
        """
        if delay_ms < 0:
            raise ConfigurationError("延迟不能为负")
        return cls(int(round(delay_ms / 1000.0 / (step_h * seconds_per_time_unit))))

    def primed(self, initial):
        """返回一条用initial填满缓冲区的新延迟线"""
        line = DelayLine(self.delay_steps)
        line._buffer.extend([initial] * self.delay_steps)
        return line

    def push(self, sample):
        """送入当前样本，取出delay_steps步之前的样本"""
        if self.delay_steps == 0:
            return sample
        self._buffer.append(sample)
        return self._buffer.popleft()

    def __len__(self):
        return len(self._buffer)

    def __repr__(self):
        return f'<DelayLine delay_steps={self.delay_steps}>'


def delay_pair(delay_ms, step_h, seconds_per_time_unit=SECONDS_PER_TIME_UNIT):
    """
    两个方向使用相同延迟的一对延迟线

    返回:
        tuple: (把x_B送到Alice的延迟线, 把z_A送到Bob的延迟线)
    """
    line = DelayLine.from_milliseconds(delay_ms, step_h, seconds_per_time_unit)
    return (line, DelayLine(line.delay_steps))


# ---------------------------------------------------------------------------
# 积分
# ---------------------------------------------------------------------------

def _select(data, names, step_h, stage_inputs=None, diverged=False):
    channels = {name: data[:, CHANNEL_NAMES.index(name)].copy() for name in names}
    return Orbit(step_h=step_h, channels=channels, stage_inputs=stage_inputs or {},
                 diverged=diverged)


def integrate(init: CoupledState, p: ControlParams, c: CouplingParams, cfg, delay=None,
              channels=CHANNEL_NAMES, record_stages=False):
    """
    定步长RK4积分耦合系统

    两条延迟线都为0（或未给出）时八维系统联合积分，耦合项在每个子步使用对端的子步状态；
    任一方向存在延迟时，双方各自积分，接收信号在一步的四个子步内保持不变（零阶保持）。

    参数:
        init: 初始耦合状态
        p: 控制参数
        c: 耦合强度
        cfg: IntegratorConfig
        delay: (x_B->Alice, z_A->Bob) 延迟线对，可为None
        channels: 需要输出的通道
        record_stages: 是否记录每一步四个子步上交换的信号

    返回:
        Orbit: 长度为 n_steps+1 的轨道

    异常:
        DivergenceError: 发散保护触发，异常的orbit属性是截止到上一步的部分轨道
    """
    names = tuple(channels)
    unknown = [n for n in names if n not in CHANNEL_NAMES]
    if unknown:
        raise ConfigurationError(f"未知通道: {unknown}")

    h, n, bound = cfg.step_h, cfg.n_steps, cfg.divergence_bound
    a, b, mu = p.a, p.b, p.mu
    eps_x, eps_z = c.eps_x, c.eps_z
    sa, sb = init.A.as_tuple(), init.B.as_tuple()
    if not _within_bound(sa + sb, bound):
        raise DivergenceError(step=0, orbit=None)

    data = np.empty((n + 1, 8))
    data[0] = sa + sb
    xb_stages = np.empty((n, 4)) if record_stages else None
    za_stages = np.empty((n, 4)) if record_stages else None

    live = delay is None or all(line.delay_steps == 0 for line in delay)
    if not live:
        to_alice = delay[0].primed(sb[0])
        to_bob = delay[1].primed(sa[2])

    for step in range(1, n + 1):
        if live:
            sa, sb, xb_in, za_in = _coupled_step_live(sa, sb, h, a, b, mu, eps_x, eps_z)
        else:
            xb_held = to_alice.push(sb[0])
            za_held = to_bob.push(sa[2])
            xb_in = (xb_held,) * 4
            za_in = (za_held,) * 4
            sa = _node_step(sa, xb_in, h, alice_field, a, b, mu, eps_x)
            sb = _node_step(sb, za_in, h, bob_field, a, b, mu, eps_z)
        if not _within_bound(sa + sb, bound):
            stages = {}
            if record_stages:
                stages = {'x_B': xb_stages[:step - 1], 'z_A': za_stages[:step - 1]}
            partial = _select(data[:step], names, h, stages, diverged=True)
            logger.debug("耦合积分在第%s步发散", step)
            raise DivergenceError(step=step, orbit=partial)
        data[step] = sa + sb
        if record_stages:
            xb_stages[step - 1] = xb_in
            za_stages[step - 1] = za_in

    stages = {'x_B': xb_stages, 'z_A': za_stages} if record_stages else {}
    return _select(data, names, h, stages)


def _eve_stage_inputs(recorded_x_B, n_steps):
    rec = np.asarray(recorded_x_B, dtype=float)
    if rec.ndim == 1:
        if len(rec) < n_steps:
            raise LengthMismatchError(f"x_B记录长度{len(rec)}小于积分步数{n_steps}")
        return np.repeat(rec[:n_steps, None], 4, axis=1)
    if rec.ndim == 2 and rec.shape[1] == 4:
        if rec.shape[0] < n_steps:
            raise LengthMismatchError(f"x_B子步记录只有{rec.shape[0]}步，需要{n_steps}步")
        return rec[:n_steps]
    raise LengthMismatchError(f"无法识别的x_B记录形状 {rec.shape}")


def integrate_eve(init_e: NodeState, recorded_x_B, p: ControlParams, eps_Ex, cfg):
    """
    用记录的x_B驱动Eve的方程

    recorded_x_B 可以是步点样本（一维，子步内零阶保持），
    也可以是每一步四个子步的记录（(n_steps, 4)），此时与Alice的计算逐位一致。

    返回:
        Orbit: 通道 x_E, y_E, z_E, w_E
    """
    h, n, bound = cfg.step_h, cfg.n_steps, cfg.divergence_bound
    stage_list = _eve_stage_inputs(recorded_x_B, n).tolist()
    a, b, mu = p.a, p.b, p.mu
    eps = float(eps_Ex)
    s = init_e.as_tuple()
    if not _within_bound(s, bound):
        raise DivergenceError(step=0)
    data = np.empty((n + 1, 4))
    data[0] = s
    for step, inputs in enumerate(stage_list, start=1):
        s = _node_step(s, inputs, h, alice_field, a, b, mu, eps)
        if not _within_bound(s, bound):
            partial = Orbit(step_h=h, channels={k: data[:step, i].copy()
                                                for i, k in enumerate(EVE_CHANNEL_NAMES)},
                            diverged=True)
            raise DivergenceError(step=step, orbit=partial)
        data[step] = s
    return Orbit(step_h=h, channels={k: data[:, i].copy() for i, k in enumerate(EVE_CHANNEL_NAMES)})


def integrate_eve_batch(initials, recorded_x_B, p: ControlParams, eps_Ex, cfg):
    """
    同时重放K组候选参数（网格搜索、有限差分梯度使用）

    参数:
        initials: (K, 4) 初始条件
        recorded_x_B: 同 integrate_eve
        p: 控制参数
        eps_Ex: 长度为K的耦合强度
        cfg: IntegratorConfig

    返回:
        numpy.ndarray: (n_steps+1, K) 的 z_E；发散的列整列为NaN
    """
    h, n, bound = cfg.step_h, cfg.n_steps, cfg.divergence_bound
    stage_list = _eve_stage_inputs(recorded_x_B, n).tolist()
    initials = np.atleast_2d(np.asarray(initials, dtype=float))
    eps = np.broadcast_to(np.asarray(eps_Ex, dtype=float), (initials.shape[0],))
    a, b, mu = p.a, p.b, p.mu
    s = tuple(initials[:, i].copy() for i in range(4))
    alive = np.ones(initials.shape[0], dtype=bool)
    out = np.empty((n + 1, initials.shape[0]))
    out[0] = s[2]
    with np.errstate(all='ignore'):
        for step, inputs in enumerate(stage_list, start=1):
            s = _node_step(s, inputs, h, alice_field, a, b, mu, eps)
            peak = np.maximum(np.maximum(np.abs(s[0]), np.abs(s[1])),
                              np.maximum(np.abs(s[2]), np.abs(s[3])))
            bad = ~(peak <= bound)
            if bad.any():
                alive &= ~bad
                s = tuple(np.where(bad, 0.0, v) for v in s)
            out[step] = s[2]
    out[:, ~alive] = np.nan
    return out


def rk4_integrate(field, y0, step_h, n_steps):
    """
    通用向量场的定步长RK4（积分器自检和线性系统测试使用）

    参数:
        field: f(y) -> dy/dt，y为numpy数组
        y0: 初始值
        step_h: 步长
        n_steps: 步数

    返回:
        numpy.ndarray: 末端状态
    """
    y = np.array(y0, dtype=float)
    hh, h6 = 0.5 * step_h, step_h / 6.0
    for _ in range(n_steps):
        k1 = field(y)
        k2 = field(y + hh * k1)
        k3 = field(y + hh * k2)
        k4 = field(y + step_h * k3)
        y = y + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def rk4_self_check(step_h=0.1):
    """
    在 x' = -x 上检查四阶收敛：步长减半误差约缩小16倍

    返回:
        float: 误差比 e(h) / e(h/2)
    """
    exact = math.exp(-1.0)
    coarse = abs(rk4_integrate(lambda y: -y, [1.0], step_h, int(round(1.0 / step_h)))[0] - exact)
    fine = abs(rk4_integrate(lambda y: -y, [1.0], step_h / 2, int(round(2.0 / step_h)))[0] - exact)
    return coarse / fine


# ---------------------------------------------------------------------------
# 随机配置
# ---------------------------------------------------------------------------

def random_initial_node(rng):
    """
    第1阶段：在 [-0.5, 0.5] 上独立均匀地抽取 x, y, z, w

    参数:
        rng: numpy.random.Generator

    返回:
        NodeState
    """
    return NodeState.from_sequence(rng.uniform(-0.5, 0.5, size=4))


def sample_control_params(rng):
    a = rng.uniform(*CONTROL_RANGES['a'])
    b = rng.uniform(*CONTROL_RANGES['b'])
    mu = rng.uniform(*CONTROL_RANGES['mu'])
    return ControlParams(a=a, b=b, mu=mu)


def sample_coupling(rng):
    eps_x, eps_z = rng.uniform(0.1, 1.1, size=2)
    return CouplingParams(eps_x=float(eps_x), eps_z=float(eps_z))


def random_full_config(rng, control=None, step_h=0.01, n_steps=100_000, seed=0):
    """
    随机完整配置：控制参数（未给出时按CONTROL_RANGES抽样）、耦合强度和双方初始条件
    """
    control = control if control is not None else sample_control_params(rng)
    coupling = sample_coupling(rng)
    alice = random_initial_node(rng)
    bob = random_initial_node(rng)
    return FullConfig(control=control, coupling=coupling, alice=alice, bob=bob,
                      step_h=step_h, n_steps=n_steps, seed=seed)


def integrate_config(config: FullConfig, n_steps=None, channels=CHANNEL_NAMES,
                     record_stages=False, divergence_bound=1e6,
                     seconds_per_time_unit=SECONDS_PER_TIME_UNIT):
    """按完整配置（含delay_ms）积分的便捷入口"""
    cfg = config.integrator(n_steps=n_steps, divergence_bound=divergence_bound)
    delay = delay_pair(config.delay_ms, config.step_h, seconds_per_time_unit)
    return integrate(config.initial_state(), config.control, config.coupling, cfg,
                     delay=delay, channels=channels, record_stages=record_stages)
