from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .params import EveConfig, FREE_PARAMETERS, FullConfig, PartyConfig

# 耦合系统可以输出的全部通道
CHANNEL_NAMES = ('x_A', 'y_A', 'z_A', 'w_A', 'x_B', 'y_B', 'z_B', 'w_B')
EVE_CHANNEL_NAMES = ('x_E', 'y_E', 'z_E', 'w_E')


@dataclass(frozen=True)
class Orbit:
    """
    定步长时间序列

    字段说明：
    - step_h: 步长（时间单位）
    - channels: 通道名 -> 一维数组，第0个样本是初始值
    - stage_inputs: 通道名 -> (n_steps, 4) 数组，记录每一步RK4四个子步上接收到的信号
    - diverged: 轨道是否因发散保护而提前截断
    """
    step_h: float
    channels: Mapping[str, np.ndarray]
    stage_inputs: Mapping[str, np.ndarray] = field(default_factory=dict)
    diverged: bool = False

    def __post_init__(self):
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"所有通道长度必须一致，实际为 {sorted(lengths)}")

    @property
    def length(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0

    def __getitem__(self, name):
        return self.channels[name]

    def names(self):
        return tuple(self.channels)

    def state_at(self, index):
        """取出第index个样本处的八维状态，要求包含全部通道"""
        return tuple(float(self.channels[name][index]) for name in CHANNEL_NAMES)


@dataclass(frozen=True)
class LyapunovSpectrum:
    """
    Lyapunov指数谱（降序，单位 1/时间）
    """
    exponents: Tuple[float, ...]
    n_renorm_steps: int
    transient_discard: int

    def __post_init__(self):
        if list(self.exponents) != sorted(self.exponents, reverse=True):
            raise ValueError("Lyapunov指数必须按降序排列")

    @property
    def dimension(self):
        return len(self.exponents)

    @property
    def largest(self):
        return self.exponents[0]


@dataclass(frozen=True)
class Scalogram:
    """
    Morlet小波尺度图，magnitude 形状为 (len(scales), len(times))
    """
    scales: np.ndarray
    times: np.ndarray
    magnitude: np.ndarray
    step_h: float
    omega0: float = 6.0

    def __post_init__(self):
        if self.magnitude.shape != (len(self.scales), len(self.times)):
            raise ValueError("尺度图网格尺寸与坐标轴不一致")


@dataclass(frozen=True)
class SyncVerdict:
    """
    同步检测结论；synchronized为真时detect_step必定存在
    """
    synchronized: bool
    detect_step: Optional[int]
    terminal_error: float
    threshold: float
    hold: int

    def __post_init__(self):
        if self.synchronized and self.detect_step is None:
            raise ValueError("判定同步时必须给出检测步")


@dataclass(frozen=True)
class Keystream:
    """
    由局部极小值符号编码得到的比特序列
    """
    bits: np.ndarray
    source_channel: str
    decimation: int
    minima_indices: np.ndarray

    def __post_init__(self):
        if self.decimation < 1:
            raise ValueError("抽取间隔必须 >= 1")

    def __len__(self):
        return int(len(self.bits))

    def matches(self, other):
        return len(self) == len(other) and bool(np.array_equal(self.bits, other.bits))

    def as_text(self):
        return ''.join('1' if b else '0' for b in self.bits)


class ProtocolStage(str, Enum):
    SETUP = 'Setup'
    EXCHANGING = 'Exchanging'
    SYNCHRONIZED = 'Synchronized'
    FREE_RUNNING = 'FreeRunning'
    CIPHERING = 'Ciphering'
    FAILED = 'Failed'


class FailureReason(str, Enum):
    NO_SYNC = 'no-sync'
    DIVERGED = 'diverged'
    NOT_HYPERCHAOTIC = 'not-hyperchaotic'
    NOT_CHAOTIC = 'not-chaotic'
    KEYSTREAM_MISMATCH = 'keystream-mismatch'


@dataclass(frozen=True)
class Transcript:
    """
    第2阶段公开交换的样本（窃听者能记录到的全部内容）

    z_A / x_B 为步点样本；x_B_stages / z_A_stages 为各步RK4子步上的接收值。
    """
    step_h: float
    z_A: np.ndarray
    x_B: np.ndarray
    x_B_stages: np.ndarray
    z_A_stages: np.ndarray

    @property
    def last_step(self):
        return len(self.z_A) - 1


@dataclass
class ProtocolSession:
    """
    五阶段协议的会话记录
    """
    alice_cfg: PartyConfig
    bob_cfg: PartyConfig
    stage: ProtocolStage = ProtocolStage.SETUP
    transcript: Optional[Transcript] = None
    sync_verdict: Optional[SyncVerdict] = None
    free_run_steps: int = 0
    failure: Optional[FailureReason] = None
    detail: str = ''
    spectrum: Optional[LyapunovSpectrum] = None
    hyperchaotic: Optional[bool] = None
    alice_keystream: Optional[Keystream] = None
    bob_keystream: Optional[Keystream] = None

    def fail(self, reason, detail=''):
        self.stage = ProtocolStage.FAILED
        self.failure = reason
        self.detail = detail
        return self

    @property
    def keystream(self):
        """进入加密阶段后双方共享的密钥流"""
        return self.alice_keystream if self.stage is ProtocolStage.CIPHERING else None


class AttackMethod(str, Enum):
    BISEARCH = 'BiSearch'
    GRID = 'Grid'
    PATTERN_SEARCH = 'PatternSearch'
    GRADIENT_DESCENT = 'GradientDescent'
    PIPELINE = 'Pipeline'


@dataclass(frozen=True)
class EstimationReport:
    """
    攻击结果报告

    字段说明：
    - estimates: Eve的估计
    - truth: 真实值（研究场景下已知）
    - abs_errors: 每个自由参数的绝对误差，仅在truth存在时给出
    - final_nmse: 估计点上的目标函数值
    - evaluations: 目标函数调用次数
    - flags: 非致命状况，例如 'not-unimodal'、'boundary'、'budget-exhausted'
    - trace: 每轮迭代后的最优目标值
    """
    estimates: EveConfig
    truth: Optional[EveConfig]
    final_nmse: float
    evaluations: int
    method: AttackMethod
    flags: Tuple[str, ...] = ()
    trace: Tuple[float, ...] = ()
    abs_errors: Optional[Dict[str, float]] = None

    def __post_init__(self):
        if self.evaluations < 1:
            raise ValueError("目标函数至少要调用一次")
        if self.truth is not None and self.abs_errors is None:
            est, tru = self.estimates.free_vector(), self.truth.free_vector()
            errors = {name: abs(e - t) for name, e, t in zip(FREE_PARAMETERS, est, tru)}
            object.__setattr__(self, 'abs_errors', errors)
        if self.truth is None and self.abs_errors is not None:
            raise ValueError("没有真实值时不能给出绝对误差")

    def flagged(self, flag):
        return flag in self.flags


class KeySpaceStage(str, Enum):
    NAIVE = 'Naive'
    AFTER_PUBLIC_ICS = 'AfterPublicICs'
    ONE_SIDE_ONLY = 'OneSideOnly'
    AFTER_W_ESTIMATE = 'AfterWEstimate'


@dataclass(frozen=True)
class KeySpaceAccount:
    """
    密钥空间基数（精确大整数）
    """
    digits_per_value: int
    stage: KeySpaceStage
    cardinality: int

    @property
    def power_of_ten(self):
        """基数恰为10的幂时返回指数，否则返回None"""
        text = str(self.cardinality)
        if text[0] == '1' and set(text[1:]) <= {'0'}:
            return len(text) - 1
        return None


@dataclass(frozen=True)
class ThroughputSummary:
    """
    吞吐量研究的汇总统计（比例，不是百分数）
    """
    count: int
    discarded: int
    mean: float
    minimum: float
    maximum: float


@dataclass(frozen=True)
class FragilityResult:
    """
    接收端初始条件重抽样后的同步失败率
    """
    failure_rate: float
    n_trials: int
    failures: int
    verdicts: Tuple[SyncVerdict, ...]
    base: Optional[FullConfig] = None
