"""
已公开的参数配置

只给出控制参数的预设（hyperchaotic-b11、weak-key）在研究中按试验随机抽取初始条件和耦合强度；
其余预设带有完整配置。
"""
from dataclasses import dataclass
from typing import Optional

from models import ConfigurationError, ControlParams, CouplingParams, FullConfig, NodeState


@dataclass(frozen=True)
class ConfigPreset:
    """
    字段说明：
    - name: 预设名
    - control: 控制参数
    - notes: 来源与取舍说明
    - config: 完整配置（只给出控制参数的预设为None）
    """
    name: str
    control: ControlParams
    notes: str
    config: Optional[FullConfig] = None

    def require_config(self):
        if self.config is None:
            raise ConfigurationError(f"预设 {self.name} 只包含控制参数，没有完整配置")
        return self.config


def _node(x, y, z, w):
    return NodeState(x=x, y=y, z=z, w=w)


_COLLAPSE_CONTROL = ControlParams(a=-0.924402423687748, b=0.438971098170411,
                                  mu=0.711718876046661)
_COLLAPSE_ALICE = _node(0.162590738289674, -0.442583550778422, 0.141686475255563,
                        -0.194570102178438)

_REFERENCE_CONTROL = ControlParams(a=-0.815215556019668, b=0.724394324457102,
                                   mu=0.697158139176817)
_REFERENCE_COUPLING = CouplingParams(eps_x=0.797694334249407, eps_z=0.840527637336788)
_REFERENCE_ALICE = _node(-0.45779369216014, -0.170731117605469, 0.312585918469052,
                         -0.0302306179511633)

_PROFILE_CONTROL = ControlParams(a=-0.905791937075619, b=0.126986816293506,
                                 mu=0.814723686393179)


PRESETS = {
    'hyperchaotic-b11': ConfigPreset(
        name='hyperchaotic-b11',
        control=ControlParams(a=-1.0, b=1.1, mu=0.88),
        notes="超混沌控制参数 a=-1, b=1.1, mu=0.88；初始条件与耦合按试验随机抽取"),
    'weak-key': ConfigPreset(
        name='weak-key',
        control=ControlParams(a=-1.0, b=0.9, mu=1.25),
        notes="弱密钥控制参数 a=-1, b=0.9, mu=1.25（mu>0 的默认取值），梯度攻击研究使用"),
    'collapse-demo': ConfigPreset(
        name='collapse-demo',
        control=_COLLAPSE_CONTROL,
        notes="有限精度坍缩示例，10^6步；原始取值未给出耦合强度，沿用sync-reference的耦合",
        config=FullConfig(control=_COLLAPSE_CONTROL, coupling=_REFERENCE_COUPLING,
                          alice=_COLLAPSE_ALICE,
                          bob=_node(0.0601842136547941, 0.148286931043714,
                                    -0.307154096319608, 0.313998502860319),
                          n_steps=1_000_000)),
    'receiver-mismatch': ConfigPreset(
        name='receiver-mismatch',
        control=_COLLAPSE_CONTROL,
        notes="与collapse-demo相同的发送端，只更换接收端初始条件，不能同步；"
              "原始x_B0与y_B0无法还原，取0使接收端停在不变平面x=y=0上，"
              "发送端在该平面上横向不稳定",
        config=FullConfig(control=_COLLAPSE_CONTROL, coupling=_REFERENCE_COUPLING,
                          alice=_COLLAPSE_ALICE,
                          bob=_node(0.0, 0.0, 0.143698049421405, 0.360098876854161))),
    'sync-reference': ConfigPreset(
        name='sync-reference',
        control=_REFERENCE_CONTROL,
        notes="同步参考配置，协议与延迟实验使用",
        config=FullConfig(control=_REFERENCE_CONTROL, coupling=_REFERENCE_COUPLING,
                          alice=_REFERENCE_ALICE,
                          bob=_node(-0.164151025323075, -0.324330970324339,
                                    -0.291053326006865, 0.405153559004464))),
    'sync-reference-bob-a': ConfigPreset(
        name='sync-reference-bob-a',
        control=_REFERENCE_CONTROL,
        notes="w估计剖面的第一个接收端",
        config=FullConfig(control=_REFERENCE_CONTROL, coupling=_REFERENCE_COUPLING,
                          alice=_REFERENCE_ALICE,
                          bob=_node(0.289073514938958, 0.352263890343846,
                                    0.00563661757175615, 0.135661388861377))),
    'sync-reference-bob-b': ConfigPreset(
        name='sync-reference-bob-b',
        control=_REFERENCE_CONTROL,
        notes="w估计剖面的第二个接收端",
        config=FullConfig(control=_REFERENCE_CONTROL, coupling=_REFERENCE_COUPLING,
                          alice=_REFERENCE_ALICE,
                          bob=_node(0.238640291995402, 0.0859870358264758,
                                    -0.253265474014025, 0.166416217319468))),
    'coupling-profile': ConfigPreset(
        name='coupling-profile',
        control=_PROFILE_CONTROL,
        notes="eps_Ex剖面配置；原始取值中 z_B0 与 x_B0 相同，照原样保留",
        config=FullConfig(control=_PROFILE_CONTROL,
                          coupling=CouplingParams(eps_x=0.913375856139019,
                                                  eps_z=0.63235924622541),
                          alice=_node(-0.40245959500059, -0.221501781132952,
                                      0.0468815192049838, 0.457506835434298),
                          bob=_node(0.00595705166514238, -0.244904884540731,
                                    0.00595705166514238, 0.199076722656686))),
}


def get_preset(name):
    """
    按名字取预设

    异常:
        ConfigurationError: 未知预设
    """
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"未知预设 {name!r}，可选: {', '.join(sorted(PRESETS))}")


def list_presets():
    return [PRESETS[name] for name in sorted(PRESETS)]
