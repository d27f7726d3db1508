"""
轨道诊断：Lyapunov指数谱、局部极小值与吞吐量、Morlet小波尺度图、混沌坍缩与同步检测
"""
import logging
import math

import numpy as np
from scipy import fft as sfft
from scipy.signal import argrelmin

from models import (
    ConfigurationError,
    ControlParams,
    CoupledState,
    CouplingParams,
    DivergenceError,
    LengthMismatchError,
    LyapunovSpectrum,
    NodeState,
    NonConvergedError,
    Scalogram,
    SyncVerdict,
)

from .dynamics import alice_field, bob_field

logger = logging.getLogger(__name__)

# 最小的正双精度数；误差 < 它当且仅当误差恰好为0
EXACT_SYNC_THRESHOLD = math.ulp(0.0)


# ---------------------------------------------------------------------------
# Lyapunov指数
# ---------------------------------------------------------------------------

def benettin(field, jacobian, y0, step_h, n_steps, renorm_interval=10,
             transient_fraction=0.1, band=0.05, divergence_bound=1e6,
             check_convergence=True):
    """
    Benettin切空间法计算任意自治系统的Lyapunov指数谱

    状态和切向量一起用RK4推进，每renorm_interval步做一次QR（Gram-Schmidt）重新正交化。
    前transient_fraction的步数只推进不累计。

    参数:
        field: f(y) -> dy/dt
        jacobian: J(y) -> (n, n) 雅可比矩阵
        y0: 初始状态
        step_h: 步长
        n_steps: 总步数
        renorm_interval: 重正交化间隔（步）
        transient_fraction: 丢弃的暂态比例
        band: 末段10%滑动平均允许的最大波动
        divergence_bound: 发散保护界
        check_convergence: 是否做收敛检查

    返回:
        LyapunovSpectrum: 降序排列的指数谱

    异常:
        DivergenceError: 状态越过发散界
        NonConvergedError: 末段滑动平均波动超过band
    """
    if renorm_interval < 1:
        raise ConfigurationError("重正交化间隔必须 >= 1")
    y = np.array(y0, dtype=float)
    dim = len(y)
    Q = np.eye(dim)
    transient = (int(n_steps * transient_fraction) // renorm_interval) * renorm_interval
    if transient >= n_steps:
        raise ConfigurationError("暂态丢弃后没有剩余步数")

    h, hh, h6 = step_h, 0.5 * step_h, step_h / 6.0
    log_sum = np.zeros(dim)
    history = []
    for step in range(1, n_steps + 1):
        k1 = field(y)
        K1 = jacobian(y) @ Q
        y2 = y + hh * k1
        k2 = field(y2)
        K2 = jacobian(y2) @ (Q + hh * K1)
        y3 = y + hh * k2
        k3 = field(y3)
        K3 = jacobian(y3) @ (Q + hh * K2)
        y4 = y + h * k3
        k4 = field(y4)
        K4 = jacobian(y4) @ (Q + h * K3)
        y = y + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Q = Q + h6 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        if not np.all(np.abs(y) <= divergence_bound):
            raise DivergenceError(step=step)
        if step % renorm_interval == 0 or step == n_steps:
            Q, R = np.linalg.qr(Q)
            if step > transient:
                log_sum += np.log(np.abs(np.diag(R)))
                history.append(log_sum / ((step - transient) * h))

    spectrum = LyapunovSpectrum(exponents=tuple(sorted(history[-1].tolist(), reverse=True)),
                                n_renorm_steps=len(history), transient_discard=transient)
    if check_convergence and len(history) >= 2:
        tail = np.array(history[-max(2, len(history) // 10):])
        spread = float(np.max(tail.max(axis=0) - tail.min(axis=0)))
        if spread > band:
            raise NonConvergedError(spectrum, spread)
    logger.debug("Lyapunov谱 %s（%s次重正交化）", spectrum.exponents, spectrum.n_renorm_steps)
    return spectrum


def _fill_node_block(J, o, x, z, a, b, mu):
    cross = 2.0 * (a + b) * x * z
    J[o, o + 1] = 1.0
    J[o + 1, o] = mu + a * (3.0 * x * x + z * z) + b * z * z
    J[o + 1, o + 2] = cross
    J[o + 2, o + 3] = 1.0
    J[o + 3, o] = cross
    J[o + 3, o + 2] = mu + a * (x * x + 3.0 * z * z) + b * x * x


def coupled_system(p: ControlParams, c: CouplingParams):
    """
    八维耦合系统（无延迟）的向量场和解析雅可比矩阵

    返回:
        tuple: (field, jacobian)
    """
    a, b, mu, ex, ez = p.a, p.b, p.mu, c.eps_x, c.eps_z

    def field(v):
        xa, ya, za, wa, xb, yb, zb, wb = v.tolist()
        return np.array(alice_field(xa, ya, za, wa, xb, a, b, mu, ex)
                        + bob_field(xb, yb, zb, wb, za, a, b, mu, ez))

    def jacobian(v):
        J = np.zeros((8, 8))
        _fill_node_block(J, 0, v[0], v[2], a, b, mu)
        _fill_node_block(J, 4, v[4], v[6], a, b, mu)
        J[0, 0] = -ex
        J[0, 4] = ex
        J[6, 6] = -ez
        J[6, 2] = ez
        return J

    return field, jacobian


def node_system(p: ControlParams):
    """单个不耦合节点（四维）的向量场和雅可比矩阵"""
    a, b, mu = p.a, p.b, p.mu

    def field(v):
        x, y, z, w = v.tolist()
        return np.array(alice_field(x, y, z, w, x, a, b, mu, 0.0))

    def jacobian(v):
        J = np.zeros((4, 4))
        _fill_node_block(J, 0, v[0], v[2], a, b, mu)
        return J

    return field, jacobian


def lyapunov_spectrum(p: ControlParams, c: CouplingParams, init: CoupledState, cfg,
                      renorm_interval=10, transient_fraction=0.1, band=0.05,
                      check_convergence=True):
    """
    耦合系统的8个Lyapunov指数（Benettin法，解析雅可比）

    建议 n_steps*step_h 覆盖至少1000个特征时间，函数本身不强制。
    """
    field, jacobian = coupled_system(p, c)
    return benettin(field, jacobian, init.as_tuple(), cfg.step_h, cfg.n_steps,
                    renorm_interval=renorm_interval, transient_fraction=transient_fraction,
                    band=band, divergence_bound=cfg.divergence_bound,
                    check_convergence=check_convergence)


def node_lyapunov_spectrum(p: ControlParams, init: NodeState, cfg, renorm_interval=10,
                           transient_fraction=0.1, band=0.05, check_convergence=True):
    """单个节点的4个Lyapunov指数"""
    field, jacobian = node_system(p)
    return benettin(field, jacobian, init.as_tuple(), cfg.step_h, cfg.n_steps,
                    renorm_interval=renorm_interval, transient_fraction=transient_fraction,
                    band=band, divergence_bound=cfg.divergence_bound,
                    check_convergence=check_convergence)


def is_hyperchaotic(s: LyapunovSpectrum, tol=5e-3):
    """恰好两个指数大于 +tol 时为超混沌"""
    return sum(1 for e in s.exponents if e > tol) == 2


def is_chaotic(s: LyapunovSpectrum, tol=5e-3):
    """最大指数大于 +tol 时为混沌"""
    return s.largest > tol


# 第4阶段与配置筛选可选的准入规则
ADMISSION_RULES = {
    'hyperchaotic': is_hyperchaotic,
    'chaotic': is_chaotic,
}


def admits(s: LyapunovSpectrum, rule='hyperchaotic', tol=5e-3):
    """
    按准入规则判定单个节点的指数谱

    节点的 (y', w') 是势函数 mu*r^2/2 + a*r^4/4 + b*x^2*z^2/2 的梯度，节点是保守系统，
    谱的形状是 (λ, 0, 0, -λ)、指数之和为0。'hyperchaotic' 规则要求的第二个正指数
    只能来自零指数对的有限时间残差，规则本身保持原样，是否通过如实报告。

    异常:
        ConfigurationError: 未知规则
    """
    try:
        check = ADMISSION_RULES[rule]
    except KeyError:
        raise ConfigurationError(f"未知的准入规则: {rule!r}") from None
    return check(s, tol)


# ---------------------------------------------------------------------------
# 局部极小值与吞吐量
# ---------------------------------------------------------------------------

def detect_local_minima(series):
    """
    严格局部极小值的下标（两侧都必须严格大于它，平底不算）

    参数:
        series: 实数序列

    返回:
        numpy.ndarray: 升序下标，全部位于 [1, n-2]
    """
    s = np.asarray(series, dtype=float)
    if len(s) < 3:
        return np.empty(0, dtype=np.int64)
    # clip模式下端点与自身比较，永远不是严格极小
    return argrelmin(s, order=1, mode='clip')[0].astype(np.int64)


def throughput(series):
    """
    吞吐量 = 局部极小值个数 / 样本数（比例）
    """
    n = len(series)
    if n == 0:
        raise LengthMismatchError("吞吐量需要非空序列")
    return len(detect_local_minima(series)) / n


# ---------------------------------------------------------------------------
# Morlet小波
# ---------------------------------------------------------------------------

def scale_to_frequency(scale, omega0=6.0):
    """尺度 -> 对应的傅里叶频率（1/时间单位）"""
    return (omega0 + math.sqrt(2.0 + omega0 * omega0)) / (4.0 * math.pi * scale)


def frequency_to_scale(frequency, omega0=6.0):
    """频率 -> 纯音在尺度图上振幅最大的尺度"""
    return (omega0 + math.sqrt(2.0 + omega0 * omega0)) / (4.0 * math.pi * frequency)


def default_scales(step_h, n_samples, voices=4, smallest=None, largest=None):
    """
    按每倍频程voices个尺度的几何网格

    默认从2个步长到记录长度的1/8。
    """
    smallest = 2.0 * step_h if smallest is None else smallest
    largest = n_samples * step_h / 8.0 if largest is None else largest
    if largest <= smallest:
        raise ConfigurationError("最大尺度必须大于最小尺度")
    count = int(math.floor(voices * math.log2(largest / smallest))) + 1
    return smallest * 2.0 ** (np.arange(count) / voices)


def morlet_cwt(series, scales, step_h, omega0=6.0, decimate=16):
    """
    解析Morlet小波的连续小波变换（频域实现）

    每个尺度按L2归一化：psi_hat(s*w) = pi^(-1/4) * H(w) * exp(-(s*w - omega0)^2 / 2)，
    乘以 sqrt(2*pi*s/step_h)。信号两端先做镜像延拓，再补零到FFT的快速长度。

    参数:
        series: 实数序列（长度 >= 64）
        scales: 正的升序尺度（时间单位）
        step_h: 采样步长
        omega0: 中心角频率
        decimate: 时间网格抽取倍数

    返回:
        Scalogram: magnitude[i, j] 是尺度 scales[i] 在样本 times[j] 处的模
    """
    x = np.asarray(series, dtype=float)
    scales = np.asarray(scales, dtype=float)
    n = len(x)
    if n < 64:
        raise LengthMismatchError(f"小波变换至少需要64个样本，收到{n}个")
    if len(scales) == 0 or np.any(scales <= 0) or np.any(np.diff(scales) <= 0):
        raise ConfigurationError("尺度必须为正且严格升序")
    if decimate < 1:
        raise ConfigurationError("抽取倍数必须 >= 1")

    pad = min(n - 1, int(math.ceil(3.0 * math.sqrt(2.0) * scales[-1] / step_h)))
    padded = np.pad(x, (pad, pad), mode='reflect')
    size = sfft.next_fast_len(len(padded))
    spectrum = sfft.fft(padded, n=size)
    omega = 2.0 * np.pi * sfft.fftfreq(size, d=step_h)
    positive = omega > 0

    times = np.arange(0, n, decimate)
    columns = pad + times
    magnitude = np.empty((len(scales), len(times)))
    norm = math.pi ** -0.25
    for i, s in enumerate(scales):
        daughter = np.zeros(size)
        daughter[positive] = norm * np.exp(-0.5 * (s * omega[positive] - omega0) ** 2)
        daughter *= math.sqrt(2.0 * math.pi * s / step_h)
        coeffs = sfft.ifft(spectrum * daughter)
        magnitude[i] = np.abs(coeffs[columns])
    return Scalogram(scales=scales, times=times, magnitude=magnitude,
                     step_h=step_h, omega0=omega0)


def concentration(energy, top=3):
    """尺度能量中最大的top个所占比例；总能量为0时记为1"""
    total = float(np.sum(energy))
    if total <= 0.0:
        return 1.0
    return float(np.sum(np.sort(energy)[-top:]) / total)


def detect_collapse(series, window, step_h=0.01, scales=None, threshold=0.9, persist=5,
                    omega0=6.0, decimate=16, voices=4):
    """
    检测混沌向极限环的坍缩

    把序列切成不重叠的窗口，统计每个窗口内各尺度的能量，
    前3个尺度的能量占比连续persist个窗口都超过threshold时判定坍缩
    （窗口数少于persist时要求全部窗口）。

    返回:
        int或None: 第一个满足条件的窗口的起始步
    """
    x = np.asarray(series, dtype=float)
    if window < 1:
        raise ConfigurationError("窗口长度必须 >= 1")
    if scales is None:
        scales = default_scales(step_h, min(len(x), 8 * window), voices=voices)
    scalogram = morlet_cwt(x, scales, step_h, omega0=omega0, decimate=decimate)
    power = scalogram.magnitude ** 2

    n_windows = max(1, len(x) // window)
    stats = []
    for k in range(n_windows):
        in_window = (scalogram.times >= k * window) & (scalogram.times < (k + 1) * window)
        stats.append(concentration(power[:, in_window].sum(axis=1)))

    needed = min(persist, n_windows)
    run = 0
    for k, value in enumerate(stats):
        run = run + 1 if value > threshold else 0
        if run >= needed:
            start = (k - needed + 1) * window
            logger.info("在第%s步检测到坍缩（集中度 %.3f）", start, value)
            return start
    return None


# ---------------------------------------------------------------------------
# 同步检测
# ---------------------------------------------------------------------------

def sync_error(x_A, x_B, z_A, z_B):
    """逐步同步误差 max(|x_A-x_B|, |z_A-z_B|)"""
    arrays = [np.asarray(v, dtype=float) for v in (x_A, x_B, z_A, z_B)]
    if len({len(v) for v in arrays}) != 1:
        raise LengthMismatchError("同步检测的四个序列长度必须一致")
    return np.maximum(np.abs(arrays[0] - arrays[1]), np.abs(arrays[2] - arrays[3]))


def detect_synchronization(x_A, x_B, z_A, z_B, threshold=1e-6, hold=1000):
    """
    同步判定：误差连续hold步小于threshold

    序列短于hold时要求全部样本满足。terminal_error是末尾1%样本上的最大误差。

    返回:
        SyncVerdict: detect_step是满足条件的连续区间的起点
    """
    if threshold <= 0 or hold < 1:
        raise ConfigurationError("阈值必须为正，保持步数必须 >= 1")
    err = sync_error(x_A, x_B, z_A, z_B)
    n = len(err)
    if n == 0:
        raise LengthMismatchError("同步检测需要非空序列")
    terminal = float(np.max(err[-max(1, math.ceil(n / 100)):]))

    span = min(hold, n)
    counts = np.concatenate(([0], np.cumsum(err < threshold)))
    full = np.flatnonzero(counts[span:] - counts[:-span] == span)
    if len(full) == 0:
        return SyncVerdict(synchronized=False, detect_step=None, terminal_error=terminal,
                           threshold=threshold, hold=hold)
    return SyncVerdict(synchronized=True, detect_step=int(full[0]), terminal_error=terminal,
                       threshold=threshold, hold=hold)
