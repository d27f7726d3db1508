from .errors import (
    AllSamplesGuarded,
    ConfigParseError,
    ConfigurationError,
    DivergenceError,
    ExhaustedAttempts,
    KeystreamExhausted,
    LengthMismatchError,
    NonConvergedError,
    ProtocolError,
    WorkbenchError,
)
from .params import (
    COUPLING_RANGE,
    FREE_PARAMETERS,
    INITIAL_RANGE,
    AdmissionRule,
    ControlParams,
    CoupledState,
    CouplingParams,
    EveConfig,
    FullConfig,
    IntegrationMethod,
    IntegratorConfig,
    NMSEConfig,
    NodeState,
    PartyConfig,
    ProtocolLimits,
)
from .results import (
    CHANNEL_NAMES,
    EVE_CHANNEL_NAMES,
    AttackMethod,
    EstimationReport,
    FailureReason,
    FragilityResult,
    Keystream,
    KeySpaceAccount,
    KeySpaceStage,
    LyapunovSpectrum,
    Orbit,
    ProtocolSession,
    ProtocolStage,
    Scalogram,
    SyncVerdict,
    ThroughputSummary,
    Transcript,
)

__all__ = [
    'AllSamplesGuarded', 'ConfigParseError', 'ConfigurationError', 'DivergenceError',
    'ExhaustedAttempts', 'KeystreamExhausted', 'LengthMismatchError', 'NonConvergedError',
    'ProtocolError', 'WorkbenchError',
    'COUPLING_RANGE', 'FREE_PARAMETERS', 'INITIAL_RANGE', 'AdmissionRule', 'ControlParams',
    'CoupledState', 'CouplingParams', 'EveConfig', 'FullConfig', 'IntegrationMethod',
    'IntegratorConfig', 'NMSEConfig', 'NodeState', 'PartyConfig', 'ProtocolLimits',
    'CHANNEL_NAMES', 'EVE_CHANNEL_NAMES', 'AttackMethod', 'EstimationReport', 'FailureReason',
    'FragilityResult', 'Keystream', 'KeySpaceAccount', 'KeySpaceStage', 'LyapunovSpectrum',
    'Orbit', 'ProtocolSession', 'ProtocolStage', 'Scalogram', 'SyncVerdict',
    'ThroughputSummary', 'Transcript',
]
