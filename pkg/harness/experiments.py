"""
可复现的批量实验

每个试验的随机数流只由 (seed, 试验编号) 决定；试验可以在进程池中并行，
结果按试验编号顺序收集并写出，因此输出与调度无关。
"""
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.analysis import detect_collapse, lyapunov_spectrum
from core.attacks import (
    bisearch_w_context,
    build_attack_context,
    complete_recovery,
    error_distribution,
    error_histogram,
    fragility_trial,
    pipeline_attack,
    random_start,
    weak_key_attack,
)
from config import get_numeric_defaults
from core.cipher import (
    orbit_throughput,
    random_hyperchaotic_config,
    run_protocol,
    throughput_summary,
    vernam,
)
from core.dynamics import delay_pair, integrate, random_full_config
from models import (
    FREE_PARAMETERS,
    AdmissionRule,
    ConfigurationError,
    CoupledState,
    KeystreamExhausted,
    NMSEConfig,
    ProtocolLimits,
    ProtocolStage,
    WorkbenchError,
)
from utils.rng import GENERATOR_NAME, trial_rng

from .config_io import emit_csv, format_float
from .presets import get_preset

logger = logging.getLogger(__name__)


class ExperimentKind(str, Enum):
    THROUGHPUT = 'throughput'
    SYNC_FRAGILITY = 'sync-fragility'
    BISEARCH = 'bisearch'
    PIPELINE = 'pipeline'
    WEAK_KEY_GRADIENT = 'weak-key-gradient'
    COLLAPSE = 'collapse'
    PROTOCOL = 'protocol'


# ---------------------------------------------------------------------------
# 各类实验的可覆盖参数（未知键在解析时即被拒绝）
# ---------------------------------------------------------------------------

class _Options(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class ThroughputOptions(_Options):
    orbit_len: int = Field(100_000, ge=3)
    step_h: float = Field(0.01, gt=0)
    channel: str = 'z_A'
    screen_steps: int = Field(100_000, ge=100)
    max_attempts: int = Field(50, ge=1)
    admission: AdmissionRule = 'chaotic'


class FragilityOptions(_Options):
    preset: str = 'sync-reference'
    n_steps: int = Field(100_000, ge=1)
    threshold: float = Field(1e-6, gt=0)
    hold: int = Field(1000, ge=1)
    redraw_receiver: bool = True


class _ScreenedOptions(_Options):
    """preset为None时每个试验重新抽取经过同步与准入规则筛选的配置"""
    preset: Optional[str] = None
    step_h: float = Field(0.01, gt=0)
    screen_steps: int = Field(100_000, ge=100)
    max_attempts: int = Field(50, ge=1)
    admission: AdmissionRule = 'chaotic'
    horizon_T: float = Field(10.0, gt=0)
    guard_eps: float = Field(1e-4, gt=0)
    iters: int = Field(60, ge=1)


class BisearchOptions(_ScreenedOptions):
    success_tol: float = Field(1e-8, gt=0)


class PipelineOptions(_ScreenedOptions):
    M: int = Field(20, ge=2)
    N: int = Field(20, ge=2)
    tol: float = Field(1e-11, gt=0)
    max_evals: int = Field(4000, ge=1)
    use_bisearch: bool = True


class GradientOptions(_Options):
    preset: str = 'weak-key'
    step_h: float = Field(0.01, gt=0)
    horizon_T: float = Field(10.0, gt=0)
    guard_eps: float = Field(1e-4, gt=0)
    M: int = Field(10, ge=2)
    N: int = Field(10, ge=2)
    iters: int = Field(60, ge=1)
    max_iters: int = Field(300, ge=1)
    digits: int = Field(11, ge=1)


class CollapseOptions(_Options):
    preset: Optional[str] = 'collapse-demo'
    n_steps: int = Field(1_000_000, ge=64)
    window: int = Field(20_000, ge=2)
    threshold: float = Field(0.9, gt=0, le=1)
    persist: int = Field(5, ge=1)
    decimate: int = Field(16, ge=1)
    voices: int = Field(4, ge=1)
    tail_lyapunov_steps: int = Field(100_000, ge=0)
    periodic_tol: float = Field(1e-2, gt=0)


class ProtocolOptions(_Options):
    preset: Optional[str] = 'sync-reference'
    delay_ms: float = Field(0.0, ge=0)
    seconds_per_time_unit: float = Field(
        default_factory=lambda: get_numeric_defaults().seconds_per_time_unit, gt=0)
    exchange_steps: int = Field(200_000, ge=1)
    free_run_steps: int = Field(200_000, ge=1)
    decimation: int = Field(10, ge=1)
    check_hyperchaos: bool = True
    admission: AdmissionRule = 'hyperchaotic'
    lyapunov_steps: int = Field(100_000, ge=1)
    plaintext_bytes: int = Field(16, ge=0)
    max_free_run_steps: int = Field(100_000_000, ge=1)


OPTIONS_BY_KIND = {
    ExperimentKind.THROUGHPUT: ThroughputOptions,
    ExperimentKind.SYNC_FRAGILITY: FragilityOptions,
    ExperimentKind.BISEARCH: BisearchOptions,
    ExperimentKind.PIPELINE: PipelineOptions,
    ExperimentKind.WEAK_KEY_GRADIENT: GradientOptions,
    ExperimentKind.COLLAPSE: CollapseOptions,
    ExperimentKind.PROTOCOL: ProtocolOptions,
}


class ExperimentSpec(BaseModel):
    """
    一次批量实验的描述

    字段说明：
    - kind: 实验类型
    - trials: 试验次数
    - seed: 64位种子
    - overrides: 覆盖该类型默认参数的键值对
    - output_dir: 输出目录
    - jobs: 并行进程数（不影响结果）
    """
    model_config = ConfigDict(extra='forbid')

    kind: ExperimentKind
    trials: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    overrides: Dict[str, Any] = Field(default_factory=dict)
    output_dir: str = 'results'
    jobs: int = Field(1, ge=1)

    @model_validator(mode='after')
    def validate_overrides(self):
        """按实验类型校验覆盖参数，未知键直接报错"""
        OPTIONS_BY_KIND[self.kind](**self.overrides)
        return self

    def options(self):
        return OPTIONS_BY_KIND[self.kind](**self.overrides)


def parse_experiment_spec(data):
    """dict -> ExperimentSpec；pydantic校验错误统一转成ConfigurationError"""
    try:
        return ExperimentSpec(**data)
    except ValidationError as error:
        raise ConfigurationError(f"实验描述不合法: {error}") from error


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: List[Dict[str, Any]]
    summary: Dict[str, Any]
    paths: Dict[str, str]


def _trial_config(options, rng):
    if options.preset:
        return get_preset(options.preset).require_config().replace(step_h=options.step_h), 0
    return random_hyperchaotic_config(rng, max_attempts=options.max_attempts,
                                      step_h=options.step_h,
                                      screen_steps=options.screen_steps,
                                      admission=options.admission)


def _flags_text(flags):
    return ';'.join(flags)


# ---------------------------------------------------------------------------
# 单次试验
# ---------------------------------------------------------------------------

def _throughput_trial(options, seed, trial):
    value = orbit_throughput(seed, trial, options.orbit_len, options.step_h, options.channel,
                             screen_steps=options.screen_steps,
                             max_attempts=options.max_attempts,
                             admission=options.admission)
    return {'discarded': value is None, 'throughput': value}


def _fragility_trial(options, seed, trial):
    base = get_preset(options.preset).require_config()
    verdict = fragility_trial(base, trial, seed, options.redraw_receiver, options.threshold,
                              options.hold, options.n_steps)
    return {'synchronized': verdict.synchronized, 'detect_step': verdict.detect_step,
            'terminal_error': verdict.terminal_error}


def _attack_row(report, attempts):
    row = {'attempts': attempts}
    for name, estimate, truth in zip(FREE_PARAMETERS, report.estimates.free_vector(),
                                     report.truth.free_vector()):
        row[f'{name}_true'] = truth
        row[f'{name}_est'] = estimate
        row[f'{name}_error'] = report.abs_errors[name]
    row.update({'final_nmse': report.final_nmse, 'evaluations': report.evaluations,
                'flags': _flags_text(report.flags)})
    return row


def _bisearch_trial(options, seed, trial):
    rng = trial_rng(seed, trial)
    config, attempts = _trial_config(options, rng)
    context = build_attack_context(config, NMSEConfig(horizon_T=options.horizon_T,
                                                      guard_eps=options.guard_eps))
    report = bisearch_w_context(context, random_start(context, rng), iters=options.iters)
    error = report.abs_errors['w_E0']
    return {'attempts': attempts, 'w_true': config.alice.w, 'w_est': report.estimates.w_E0,
            'w_error': error, 'success': error <= options.success_tol,
            'final_nmse': report.final_nmse, 'evaluations': report.evaluations,
            'flags': _flags_text(report.flags)}


def _pipeline_trial(options, seed, trial):
    rng = trial_rng(seed, trial)
    config, attempts = _trial_config(options, rng)
    context = build_attack_context(config, NMSEConfig(horizon_T=options.horizon_T,
                                                      guard_eps=options.guard_eps))
    report = pipeline_attack(context, rng, M=options.M, N=options.N, iters=options.iters,
                             tol=options.tol, max_evals=options.max_evals,
                             use_bisearch=options.use_bisearch)
    return _attack_row(report, attempts)


def _gradient_trial(options, seed, trial):
    rng = trial_rng(seed, trial)
    control = get_preset(options.preset).control
    config = random_full_config(rng, control=control, step_h=options.step_h)
    context = build_attack_context(config, NMSEConfig(horizon_T=options.horizon_T,
                                                      guard_eps=options.guard_eps))
    report = weak_key_attack(context, rng, M=options.M, N=options.N, iters=options.iters,
                             max_iters=options.max_iters)
    row = _attack_row(report, 0)
    row['complete_recovery'] = complete_recovery(report, options.digits)
    return row


def _collapse_trial(options, seed, trial):
    rng = trial_rng(seed, trial)
    if options.preset:
        config = get_preset(options.preset).require_config()
    else:
        config = random_full_config(rng)
    cfg = config.integrator(n_steps=options.n_steps)
    orbit = integrate(config.initial_state(), config.control, config.coupling, cfg)
    transition = detect_collapse(orbit['z_A'], options.window, step_h=config.step_h,
                                 threshold=options.threshold, persist=options.persist,
                                 decimate=options.decimate, voices=options.voices)
    row = {'transition_step': transition, 'collapsed': transition is not None,
           'tail_largest_exponent': None}
    if transition is not None and options.tail_lyapunov_steps:
        start = CoupledState.from_sequence(orbit.state_at(transition))
        spectrum = lyapunov_spectrum(config.control, config.coupling, start,
                                     cfg.with_steps(options.tail_lyapunov_steps),
                                     check_convergence=False)
        row['tail_largest_exponent'] = spectrum.largest
    return row


def _protocol_trial(options, seed, trial):
    rng = trial_rng(seed, trial)
    if options.preset:
        config = get_preset(options.preset).require_config()
    else:
        config = random_full_config(rng)
    limits = ProtocolLimits(step_h=config.step_h, exchange_steps=options.exchange_steps,
                            free_run_steps=options.free_run_steps,
                            decimation=options.decimation,
                            check_hyperchaos=options.check_hyperchaos,
                            lyapunov_steps=options.lyapunov_steps,
                            admission=options.admission,
                            max_free_run_steps=max(options.max_free_run_steps,
                                                   options.free_run_steps))
    channel = delay_pair(options.delay_ms, config.step_h, options.seconds_per_time_unit)
    try:
        session = run_protocol(config.alice_party(), config.bob_party(), channel=channel,
                               limits=limits, plaintext_len=options.plaintext_bytes)
    except KeystreamExhausted as error:
        return {'stage': ProtocolStage.FREE_RUNNING.value,
                'failure': f'keystream-exhausted:{error.needed}>{error.available}',
                'detect_step': None, 'keystream_bits': error.available, 'hyperchaotic': None,
                'free_run_steps': limits.max_free_run_steps, 'roundtrip': None}
    row = {'stage': session.stage.value,
           'failure': session.failure.value if session.failure else '',
           'detect_step': session.sync_verdict.detect_step if session.sync_verdict else None,
           'keystream_bits': len(session.keystream) if session.keystream else 0,
           'hyperchaotic': session.hyperchaotic, 'free_run_steps': session.free_run_steps,
           'roundtrip': None}
    if session.stage is ProtocolStage.CIPHERING:
        plaintext = rng.bytes(options.plaintext_bytes)
        try:
            ciphertext = vernam(plaintext, session.alice_keystream)
            row['roundtrip'] = vernam(ciphertext, session.bob_keystream) == plaintext
        except KeystreamExhausted as error:
            row['failure'] = f'keystream-exhausted:{error.needed}>{error.available}'
    return row


TRIAL_FUNCTIONS = {
    ExperimentKind.THROUGHPUT: _throughput_trial,
    ExperimentKind.SYNC_FRAGILITY: _fragility_trial,
    ExperimentKind.BISEARCH: _bisearch_trial,
    ExperimentKind.PIPELINE: _pipeline_trial,
    ExperimentKind.WEAK_KEY_GRADIENT: _gradient_trial,
    ExperimentKind.COLLAPSE: _collapse_trial,
    ExperimentKind.PROTOCOL: _protocol_trial,
}


def run_trial(kind, options, seed, trial):
    """
    执行单个试验；可预期的失败记录在行里而不是抛出

    返回:
        dict: 以 trial 开头、以 error 和 wall_time 结尾的一行结果
    """
    started = time.perf_counter()
    row = {'trial': trial}
    try:
        row.update(TRIAL_FUNCTIONS[ExperimentKind(kind)](options, seed, trial))
        row['error'] = ''
    except WorkbenchError as error:
        logger.warning("试验%s失败: %s", trial, error)
        row['error'] = f'{type(error).__name__}: {error}'
    row['wall_time'] = time.perf_counter() - started
    return row


# ---------------------------------------------------------------------------
# 汇总
# ---------------------------------------------------------------------------

def _column(rows, key):
    return [row[key] for row in rows if row.get(key) is not None and not row.get('error')]


def _stats(prefix, values):
    if not values:
        return {f'{prefix}_mean': None, f'{prefix}_median': None}
    arr = np.asarray(values, dtype=float)
    return {f'{prefix}_mean': float(arr.mean()), f'{prefix}_median': float(np.median(arr))}


def summarize(kind, rows, periodic_tol=1e-2):
    """
    汇总试验结果（不含耗时，保证同一描述重复运行时逐字节一致）

    坍缩实验中最大指数不超过periodic_tol的尾段计为非混沌（周期或不动点）。
    """
    kind = ExperimentKind(kind)
    failed = sum(1 for row in rows if row.get('error'))
    summary = {'kind': kind.value, 'trials': len(rows), 'failed_trials': failed}
    if kind is ExperimentKind.THROUGHPUT:
        values = [row['throughput'] for row in rows if not row.get('error')]
        stats = throughput_summary(values, discarded=failed)
        summary.update({'count': stats.count, 'discarded': stats.discarded,
                        'mean': stats.mean, 'min': stats.minimum, 'max': stats.maximum})
    elif kind is ExperimentKind.SYNC_FRAGILITY:
        failures = sum(1 for row in rows if not row.get('synchronized'))
        summary.update({'failures': failures, 'failure_rate': failures / len(rows)})
    elif kind is ExperimentKind.BISEARCH:
        successes = sum(1 for row in rows if row.get('success'))
        summary['success_rate'] = successes / len(rows)
        summary.update(_stats('w_error', _column(rows, 'w_error')))
    elif kind in (ExperimentKind.PIPELINE, ExperimentKind.WEAK_KEY_GRADIENT):
        for name in FREE_PARAMETERS:
            errors = _column(rows, f'{name}_error')
            summary.update(_stats(f'{name}_error', errors))
            for level, share in error_distribution(errors).items():
                summary[f'{name}_share_{level:.0e}'] = share
        if kind is ExperimentKind.WEAK_KEY_GRADIENT:
            recovered = sum(1 for row in rows if row.get('complete_recovery'))
            summary['complete_recovery_rate'] = recovered / len(rows)
    elif kind is ExperimentKind.COLLAPSE:
        steps = _column(rows, 'transition_step')
        summary.update({'collapsed': len(steps), 'collapse_rate': len(steps) / len(rows)})
        summary.update(_stats('transition_step', steps))
        tails = _column(rows, 'tail_largest_exponent')
        summary.update(_stats('tail_largest_exponent', tails))
        summary['tails_non_chaotic'] = sum(1 for value in tails if value <= periodic_tol)
    elif kind is ExperimentKind.PROTOCOL:
        ciphering = sum(1 for row in rows if row.get('stage') == ProtocolStage.CIPHERING.value)
        summary.update({'ciphering': ciphering, 'ciphering_rate': ciphering / len(rows)})
        reasons = [row.get('failure') for row in rows if row.get('failure')]
        for reason in sorted(set(reasons)):
            summary[f'failure_{reason}'] = reasons.count(reason)
    return summary


def _union_header(rows):
    header = []
    for row in rows:
        for key in row:
            if key not in header:
                header.append(key)
    return header


def _histogram_rows(rows):
    out = []
    for name in FREE_PARAMETERS:
        edges, counts = error_histogram(_column(rows, f'{name}_error'))
        total = max(1, int(counts.sum()))
        for lo, hi, count in zip(edges[:-1], edges[1:], counts):
            out.append({'parameter': name, 'log10_lo': int(lo), 'log10_hi': int(hi),
                        'count': int(count), 'fraction': count / total})
    return out


def run_experiment(spec: ExperimentSpec):
    """
    执行实验并写出 trials.csv、summary.csv 和 metadata.txt

    梯度与流水线实验另外写出 histograms.csv。

    返回:
        ExperimentResult
    """
    options = spec.options()
    metadata = {'kind': spec.kind.value, 'trials': spec.trials, 'seed': spec.seed,
                'rng': GENERATOR_NAME}
    metadata.update(options.model_dump())
    logger.info("开始实验 %s: %s次试验，种子%s，%s个进程", spec.kind.value, spec.trials,
                spec.seed, spec.jobs)

    args = ([spec.kind.value] * spec.trials, [options] * spec.trials,
            [spec.seed] * spec.trials, range(spec.trials))
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as executor:
            rows = list(executor.map(run_trial, *args))
    else:
        rows = list(map(run_trial, *args))

    summary = summarize(spec.kind, rows,
                        periodic_tol=getattr(options, 'periodic_tol', 1e-2))
    os.makedirs(spec.output_dir, exist_ok=True)
    paths = {
        'trials': os.path.join(spec.output_dir, 'trials.csv'),
        'summary': os.path.join(spec.output_dir, 'summary.csv'),
        'metadata': os.path.join(spec.output_dir, 'metadata.txt'),
    }
    emit_csv(rows, paths['trials'], header=_union_header(rows), metadata=metadata)
    emit_csv([{'key': k, 'value': v} for k, v in summary.items()], paths['summary'],
             metadata=metadata)
    if spec.kind in (ExperimentKind.PIPELINE, ExperimentKind.WEAK_KEY_GRADIENT):
        paths['histograms'] = os.path.join(spec.output_dir, 'histograms.csv')
        emit_csv(_histogram_rows(rows), paths['histograms'], metadata=metadata)
    with open(paths['metadata'], 'w', encoding='utf-8') as handle:
        for key, value in metadata.items():
            text = format_float(value) if isinstance(value, float) else value
            handle.write(f'{key} = {text}\n')
    logger.info("实验 %s 完成: %s", spec.kind.value, summary)
    return ExperimentResult(spec=spec, rows=rows, summary=summary, paths=paths)
