import math
from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# 耦合强度的名义取值范围
COUPLING_RANGE = (0.1, 1.1)
# 初始条件的取值范围
INITIAL_RANGE = (-0.5, 0.5)


def _require_finite(value, name):
    if not math.isfinite(value):
        raise ValueError(f"{name}必须是有限实数，收到 {value!r}")
    return value


class _FrozenModel(BaseModel):
    """不可变的参数对象基类，可以在线程和进程之间安全共享"""
    model_config = ConfigDict(frozen=True)


class ControlParams(_FrozenModel):
    """
    双方共享的控制参数 (a, b, mu)
    """
    a: float
    b: float
    mu: float

    @field_validator('a', 'b', 'mu')
    def validate_finite(cls, v, info):
        """控制参数不允许NaN或无穷"""
        return _require_finite(v, info.field_name)


class CouplingParams(_FrozenModel):
    """
    耦合强度 (eps_x, eps_z)

    构造时强制名义范围 [0.1, 1.1]；攻击扫描需要越界探测时使用 permissive()。
    """
    eps_x: float = Field(..., ge=COUPLING_RANGE[0], le=COUPLING_RANGE[1])
    eps_z: float = Field(..., ge=COUPLING_RANGE[0], le=COUPLING_RANGE[1])

    @classmethod
    def permissive(cls, eps_x, eps_z):
        """
        宽松构造：只检查有限性，不检查名义范围

        参数:
            eps_x: Alice一侧的耦合强度
            eps_z: Bob一侧的耦合强度

        返回:
            CouplingParams: 未经范围校验的实例
        """
        return cls.model_construct(eps_x=_require_finite(float(eps_x), 'eps_x'),
                                   eps_z=_require_finite(float(eps_z), 'eps_z'))

    @classmethod
    def uncoupled(cls):
        """两端完全断开（第4阶段自由运行）"""
        return cls.permissive(0.0, 0.0)


class NodeState(_FrozenModel):
    """
    单方的四维状态 (x, y, z, w)
    """
    x: float
    y: float
    z: float
    w: float

    @field_validator('x', 'y', 'z', 'w')
    def validate_finite(cls, v, info):
        return _require_finite(v, info.field_name)

    @classmethod
    def from_sequence(cls, values):
        x, y, z, w = (float(v) for v in values)
        return cls(x=x, y=y, z=z, w=w)

    def as_tuple(self):
        return (self.x, self.y, self.z, self.w)

    def max_abs(self):
        return max(abs(v) for v in self.as_tuple())


class CoupledState(_FrozenModel):
    """
    耦合系统状态：发送方A与接收方B
    """
    A: NodeState
    B: NodeState

    @classmethod
    def from_sequence(cls, values):
        values = list(values)
        return cls(A=NodeState.from_sequence(values[:4]), B=NodeState.from_sequence(values[4:8]))

    def as_tuple(self):
        return self.A.as_tuple() + self.B.as_tuple()


class IntegrationMethod(str, Enum):
    RK4 = 'RK4'


class IntegratorConfig(_FrozenModel):
    """
    定步长积分配置
    """
    step_h: float = Field(0.01, gt=0)
    n_steps: int = Field(..., ge=1)
    method_tag: IntegrationMethod = IntegrationMethod.RK4
    divergence_bound: float = Field(1e6, gt=0)

    @property
    def duration(self):
        return self.step_h * self.n_steps

    def with_steps(self, n_steps):
        return self.model_copy(update={'n_steps': int(n_steps)})


class EveConfig(_FrozenModel):
    """
    Eve对Alice初始条件和耦合强度的估计

    z_E0 固定为明文传输的 z_A0，攻击过程从不改变它。
    自由参数向量的顺序为 (eps_Ex, x_E0, y_E0, w_E0)。
    """
    x_E0: float
    y_E0: float
    z_E0: float
    w_E0: float
    eps_Ex: float

    @field_validator('x_E0', 'y_E0', 'z_E0', 'w_E0', 'eps_Ex')
    def validate_finite(cls, v, info):
        return _require_finite(v, info.field_name)

    def free_vector(self):
        return (self.eps_Ex, self.x_E0, self.y_E0, self.w_E0)

    def with_free(self, vector):
        eps, x, y, w = (float(v) for v in vector)
        return self.model_copy(update={'eps_Ex': eps, 'x_E0': x, 'y_E0': y, 'w_E0': w})

    def initial_state(self):
        return NodeState(x=self.x_E0, y=self.y_E0, z=self.z_E0, w=self.w_E0)


# 自由参数名，顺序与 EveConfig.free_vector() 一致
FREE_PARAMETERS = ('eps_Ex', 'x_E0', 'y_E0', 'w_E0')


class NMSEConfig(_FrozenModel):
    """
    NMSE目标函数的窗口配置
    """
    horizon_T: float = Field(10.0, gt=0)
    skip_initial: int = Field(0, ge=0)
    guard_eps: float = Field(1e-4, gt=0)


class PartyConfig(_FrozenModel):
    """
    协议中一方的完整配置

    role为'alice'时coupling是eps_x，为'bob'时是eps_z。
    """
    role: Literal['alice', 'bob']
    control: ControlParams
    initial: NodeState
    coupling: float = Field(..., ge=COUPLING_RANGE[0], le=COUPLING_RANGE[1])


class FullConfig(_FrozenModel):
    """
    一次实验的完整配置（可与 key = value 文本互相转换）
    """
    control: ControlParams
    coupling: CouplingParams
    alice: NodeState
    bob: NodeState
    step_h: float = Field(0.01, gt=0)
    n_steps: int = Field(100_000, ge=1)
    delay_ms: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    def initial_state(self):
        return CoupledState(A=self.alice, B=self.bob)

    def integrator(self, n_steps=None, divergence_bound=1e6):
        return IntegratorConfig(step_h=self.step_h,
                                n_steps=self.n_steps if n_steps is None else n_steps,
                                divergence_bound=divergence_bound)

    def alice_party(self):
        return PartyConfig(role='alice', control=self.control, initial=self.alice,
                           coupling=self.coupling.eps_x)

    def bob_party(self):
        return PartyConfig(role='bob', control=self.control, initial=self.bob,
                           coupling=self.coupling.eps_z)

    def truth(self):
        """Alice的真实秘密参数，作为Eve估计的参照"""
        return EveConfig(x_E0=self.alice.x, y_E0=self.alice.y, z_E0=self.alice.z,
                         w_E0=self.alice.w, eps_Ex=self.coupling.eps_x)

    def replace(self, **updates):
        return self.model_copy(update=updates)


# 第4阶段与配置筛选的准入规则，定义见 core.analysis.admits
AdmissionRule = Literal['hyperchaotic', 'chaotic']


class ProtocolLimits(_FrozenModel):
    """
    协议各阶段的步数预算与判定参数

    sync_threshold 为 None 时使用精确同步阈值（误差必须恰好为0）。
    自由运行按 free_run_steps 分块进行，直到密钥流够用，总步数不超过 max_free_run_steps。
    """
    step_h: float = Field(0.01, gt=0)
    exchange_steps: int = Field(200_000, ge=1)
    free_run_steps: int = Field(200_000, ge=1)
    max_free_run_steps: int = Field(100_000_000, ge=1)
    sync_threshold: Optional[float] = Field(None, gt=0)
    sync_hold: int = Field(1000, ge=1)
    decimation: int = Field(10, ge=1)
    check_hyperchaos: bool = True
    admission: AdmissionRule = 'hyperchaotic'
    lyapunov_steps: int = Field(100_000, ge=1)
    renorm_interval: int = Field(10, ge=1)
    hyperchaos_tol: float = Field(5e-3, gt=0)
    lyapunov_band: float = Field(0.05, gt=0)
    divergence_bound: float = Field(1e6, gt=0)

    @model_validator(mode='after')
    def free_run_budget(self):
        if self.max_free_run_steps < self.free_run_steps:
            raise ValueError("max_free_run_steps不能小于free_run_steps")
        return self
