"""
命令行入口

退出码：0 成功，1 用法或配置错误，2 实验层面的失败（发散、未同步、密钥流不足等）。
所有数值按17位有效数字输出。
"""
import hashlib
import json
import logging
import os
import sys

import click
import numpy as np

from config import get_numeric_defaults
from core.analysis import (
    default_scales,
    detect_collapse,
    is_hyperchaotic,
    lyapunov_spectrum,
    morlet_cwt,
    node_lyapunov_spectrum,
)
from core.attacks import (
    DEFAULT_BOUNDS,
    NMSEObjective,
    bisearch_w_context,
    build_attack_context,
    coarse_grid_search,
    complete_recovery,
    gradient_descent_attack,
    pattern_search_refine,
    pipeline_attack,
    random_start,
)
from core.cipher import extract_keystream, run_protocol, vernam
from core.dynamics import delay_pair, integrate_config
from harness.config_io import (
    config_items,
    emit_config,
    emit_csv,
    emit_scalogram_csv,
    format_float,
    read_config_file,
    write_keystream,
)
from harness.experiments import ExperimentKind, parse_experiment_spec, run_experiment
from harness.presets import get_preset, list_presets
from models import (
    CHANNEL_NAMES,
    FREE_PARAMETERS,
    NMSEConfig,
    NonConvergedError,
    ProtocolLimits,
    ProtocolStage,
    WorkbenchError,
)
from utils.error_handlers import EXIT_FAILURE, EXIT_OK, exit_code_for
from utils.rng import GENERATOR_NAME, trial_rng

logger = logging.getLogger('chaosbench')


class RunContext:
    """
    全局选项与生效的数值默认值
    """

    def __init__(self, seed, jobs, out, step_h, n_steps):
        self.defaults = get_numeric_defaults()
        self.seed = seed
        self.jobs = jobs or self.defaults.jobs
        self.out = out or self.defaults.output_dir
        self.step_h = step_h
        self.n_steps = n_steps

    def load_config(self, path=None, preset=None):
        """从文件或预设读入配置，再应用 --step-h / --n-steps 覆盖"""
        if bool(path) == bool(preset):
            raise click.UsageError("必须且只能给出 --config 或 --preset 之一")
        config = read_config_file(path) if path else get_preset(preset).require_config()
        updates = {}
        if self.step_h is not None:
            updates['step_h'] = self.step_h
        if self.n_steps is not None:
            updates['n_steps'] = self.n_steps
        return config.replace(**updates) if updates else config

    def output_path(self, name):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def metadata(self, config=None, **extra):
        meta = {'rng': GENERATOR_NAME, 'run_seed': self.seed}
        if config is not None:
            meta.update(dict(config_items(config)))
            meta['config_sha256'] = config_hash(config)
        meta.update(extra)
        return meta


def config_hash(config):
    return hashlib.sha256(emit_config(config).encode('utf-8')).hexdigest()


def _echo_values(pairs):
    for key, value in pairs:
        text = format_float(value) if isinstance(value, float) else value
        click.echo(f'{key} = {text}')


config_option = click.option('--config', 'config_path',
                             type=click.Path(exists=True, dir_okay=False),
                             help='key = value 配置文件')
preset_option = click.option('--preset', help='使用内置预设的完整配置')


@click.group()
@click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=0, show_default=True,
              help='64位种子')
@click.option('--jobs', type=click.IntRange(min=1), default=None, help='并行进程数')
@click.option('--out', 'out', type=click.Path(file_okay=False), default=None, help='输出目录')
@click.option('--step-h', type=click.FloatRange(min=0, min_open=True), default=None,
              help='覆盖积分步长')
@click.option('--n-steps', type=click.IntRange(min=1), default=None, help='覆盖积分步数')
@click.option('--log-level', default=None, help='日志级别（默认取 CHAOSBENCH_LOG_LEVEL）')
@click.pass_context
def cli(ctx, seed, jobs, out, step_h, n_steps, log_level):
    """混沌同步流密码实验平台"""
    level = (log_level or get_numeric_defaults().log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    ctx.obj = RunContext(seed, jobs, out, step_h, n_steps)


# ---------------------------------------------------------------------------
# 动力学与分析
# ---------------------------------------------------------------------------

@cli.command()
@config_option
@preset_option
@click.option('--channels', default=','.join(CHANNEL_NAMES), show_default=True,
              help='逗号分隔的输出通道')
@click.option('--delay-ms', type=click.FloatRange(min=0), default=None, help='覆盖信道延迟')
@click.option('--every', type=click.IntRange(min=1), default=1, show_default=True,
              help='每隔几步输出一行')
@click.pass_obj
def simulate(run, config_path, preset, channels, delay_ms, every):
    """积分耦合系统并写出 orbit.csv"""
    config = run.load_config(config_path, preset)
    if delay_ms is not None:
        config = config.replace(delay_ms=delay_ms)
    names = tuple(c.strip() for c in channels.split(',') if c.strip())
    orbit = integrate_config(config, channels=names,
                             divergence_bound=run.defaults.divergence_bound,
                             seconds_per_time_unit=run.defaults.seconds_per_time_unit)
    steps = np.arange(0, orbit.length, every)
    rows = [[int(k), k * config.step_h] + [orbit[name][k] for name in names] for k in steps]
    path = run.output_path('orbit.csv')
    emit_csv(rows, path, header=['step', 't'] + list(names), metadata=run.metadata(config))
    click.echo(path)


@cli.command()
@config_option
@preset_option
@click.option('--free', is_flag=True, help='停止交换后的自由运行谱（Alice的四维节点）')
@click.option('--renorm-interval', type=click.IntRange(min=1), default=None)
@click.pass_obj
def lyapunov(run, config_path, preset, free, renorm_interval):
    """Benettin/QR方法计算Lyapunov指数谱"""
    config = run.load_config(config_path, preset)
    defaults = run.defaults
    cfg = config.integrator(divergence_bound=defaults.divergence_bound)
    interval = renorm_interval or defaults.renorm_interval
    try:
        if free:
            spectrum = node_lyapunov_spectrum(config.control, config.alice, cfg,
                                              renorm_interval=interval,
                                              transient_fraction=defaults.transient_fraction,
                                              band=defaults.lyapunov_band)
        else:
            spectrum = lyapunov_spectrum(config.control, config.coupling, config.initial_state(),
                                         cfg, renorm_interval=interval,
                                         transient_fraction=defaults.transient_fraction,
                                         band=defaults.lyapunov_band)
        converged = True
    except NonConvergedError as error:
        logger.warning("%s", error)
        spectrum, converged = error.spectrum, False

    rows = [[i + 1, value] for i, value in enumerate(spectrum.exponents)]
    emit_csv(rows, run.output_path('lyapunov.csv'), header=['index', 'exponent'],
             metadata=run.metadata(config, free_running=free, converged=converged,
                                   renorm_interval=interval))
    _echo_values([(f'lambda_{i}', v) for i, v in rows])
    _echo_values([('hyperchaotic', str(is_hyperchaotic(spectrum, defaults.hyperchaos_tol))),
                  ('converged', str(converged))])


@cli.command()
@config_option
@preset_option
@click.option('--channel', type=click.Choice(CHANNEL_NAMES), default='z_A', show_default=True)
@click.option('--window', type=click.IntRange(min=2), default=None, help='集中度判定窗口（步）')
@click.pass_obj
def cwt(run, config_path, preset, channel, window):
    """Morlet连续小波变换：写出尺度图并报告能量塌缩的起始步"""
    config = run.load_config(config_path, preset)
    defaults = run.defaults
    orbit = integrate_config(config, channels=(channel,),
                             divergence_bound=defaults.divergence_bound,
                             seconds_per_time_unit=defaults.seconds_per_time_unit)
    series = orbit[channel]
    scales = default_scales(config.step_h, len(series), voices=defaults.cwt_voices)
    scalogram = morlet_cwt(series, scales, config.step_h, omega0=defaults.cwt_omega0,
                           decimate=defaults.cwt_decimate)
    emit_scalogram_csv(scalogram, run.output_path('scalogram.csv'),
                       metadata=run.metadata(config, channel=channel))
    window = window or min(defaults.collapse_window, max(2, len(series) // 10))
    transition = detect_collapse(series, window, step_h=config.step_h, scales=scales,
                                 threshold=defaults.collapse_threshold,
                                 persist=defaults.collapse_persist,
                                 omega0=defaults.cwt_omega0, decimate=defaults.cwt_decimate)
    click.echo(f'transition_step = {transition if transition is not None else "none"}')


# ---------------------------------------------------------------------------
# 密钥流与协议
# ---------------------------------------------------------------------------

def _config_keystream(run, config, decimation, channel):
    orbit = integrate_config(config, channels=(channel,),
                             divergence_bound=run.defaults.divergence_bound,
                             seconds_per_time_unit=run.defaults.seconds_per_time_unit)
    return extract_keystream(orbit[channel], decimation, channel)


@cli.command()
@config_option
@preset_option
@click.option('--decimation', type=click.IntRange(min=1), default=None)
@click.option('--channel', type=click.Choice(CHANNEL_NAMES), default='z_A', show_default=True)
@click.pass_obj
def keystream(run, config_path, preset, decimation, channel):
    """从配置轨道的局部极小值提取密钥流并写出 keystream.txt"""
    config = run.load_config(config_path, preset)
    decimation = decimation or run.defaults.decimation
    ks = _config_keystream(run, config, decimation, channel)
    path = run.output_path('keystream.txt')
    write_keystream(ks, path, metadata={'config_sha256': config_hash(config),
                                        'n_steps': config.n_steps})
    click.echo(f'{path} ({len(ks)} bits)')


@cli.command()
@config_option
@preset_option
@click.option('--in', 'in_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True)
@click.option('--decimation', type=click.IntRange(min=1), default=None)
@click.pass_obj
def encrypt(run, config_path, preset, in_path, out_path, decimation):
    """用配置生成的密钥流对文件做Vernam异或（加密与解密相同）"""
    config = run.load_config(config_path, preset)
    ks = _config_keystream(run, config, decimation or run.defaults.decimation, 'z_A')
    with open(in_path, 'rb') as handle:
        data = handle.read()
    result = vernam(data, ks)
    with open(out_path, 'wb') as handle:
        handle.write(result)
    click.echo(f'{out_path} ({len(result)} bytes)')


@cli.command()
@click.option('--alice', 'alice_path', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Alice的配置（使用控制参数、eps_x 与 A 侧初始条件）')
@click.option('--bob', 'bob_path', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Bob的配置（使用控制参数、eps_z 与 B 侧初始条件）')
@click.option('--delay-ms', type=click.FloatRange(min=0), default=0.0, show_default=True)
@click.option('--exchange-steps', type=click.IntRange(min=1), default=None)
@click.option('--free-run-steps', type=click.IntRange(min=1), default=None)
@click.option('--sync-threshold', type=click.FloatRange(min=0, min_open=True), default=None,
              help='缺省时要求误差恰好为0')
@click.option('--skip-hyperchaos-check', is_flag=True)
@click.option('--admission', type=click.Choice(['hyperchaotic', 'chaotic']),
              default='hyperchaotic', show_default=True, help='第4阶段的准入规则')
@click.option('--plaintext-bytes', type=click.IntRange(min=0), default=0, show_default=True,
              help='自由运行直到密钥流够加密这么多字节')
@click.option('--max-free-run-steps', type=click.IntRange(min=1), default=None)
@click.pass_obj
def protocol(run, alice_path, bob_path, delay_ms, exchange_steps, free_run_steps,
             sync_threshold, skip_hyperchaos_check, admission, plaintext_bytes,
             max_free_run_steps):
    """执行五阶段同步协议，写出公开记录与双方密钥流"""
    alice_config = read_config_file(alice_path)
    bob_config = read_config_file(bob_path)
    defaults = run.defaults
    step_h = run.step_h or alice_config.step_h
    free_run_steps = free_run_steps or defaults.free_run_steps
    limits = ProtocolLimits(step_h=step_h,
                            exchange_steps=exchange_steps or defaults.exchange_steps,
                            free_run_steps=free_run_steps,
                            sync_threshold=sync_threshold, sync_hold=defaults.sync_hold,
                            decimation=defaults.decimation,
                            check_hyperchaos=not skip_hyperchaos_check,
                            lyapunov_steps=defaults.lyapunov_steps,
                            renorm_interval=defaults.renorm_interval,
                            hyperchaos_tol=defaults.hyperchaos_tol,
                            lyapunov_band=defaults.lyapunov_band,
                            divergence_bound=defaults.divergence_bound,
                            admission=admission,
                            max_free_run_steps=max(max_free_run_steps or 100_000_000,
                                                   free_run_steps))
    session = run_protocol(alice_config.alice_party(), bob_config.bob_party(),
                           channel=delay_pair(delay_ms, step_h, defaults.seconds_per_time_unit),
                           limits=limits, plaintext_len=plaintext_bytes)
    meta = run.metadata(alice_sha256=config_hash(alice_config),
                        bob_sha256=config_hash(bob_config), delay_ms=delay_ms,
                        **limits.model_dump())
    if session.transcript is not None:
        t = session.transcript
        rows = [[k, t.z_A[k], t.x_B[k]] for k in range(len(t.z_A))]
        emit_csv(rows, run.output_path('transcript.csv'), header=['step', 'z_A', 'x_B'],
                 metadata=meta)
    if session.alice_keystream is not None:
        write_keystream(session.alice_keystream, run.output_path('alice_keystream.txt'), meta)
        write_keystream(session.bob_keystream, run.output_path('bob_keystream.txt'), meta)

    _echo_values([('stage', session.stage.value)])
    if session.hyperchaotic is not None:
        _echo_values([('hyperchaotic', str(session.hyperchaotic))])
    if session.sync_verdict is not None:
        _echo_values([('detect_step', str(session.sync_verdict.detect_step))])
    if session.stage is not ProtocolStage.CIPHERING:
        _echo_values([('failure', session.failure.value), ('detail', session.detail)])
        click.get_current_context().exit(EXIT_FAILURE)
    _echo_values([('keystream_bits', str(len(session.keystream))),
                  ('free_run_steps', str(session.free_run_steps))])


# ---------------------------------------------------------------------------
# 攻击
# ---------------------------------------------------------------------------

@cli.group()
def attack():
    """对截获的 z_A、x_B 做参数估计攻击"""


def attack_options(f):
    f = click.option('--trials', type=click.IntRange(min=1), default=1, show_default=True)(f)
    f = preset_option(f)
    f = config_option(f)
    return f


def grid_options(f):
    f = click.option('--N', 'grid_n', type=click.IntRange(min=2), default=None)(f)
    f = click.option('--M', 'grid_m', type=click.IntRange(min=2), default=None)(f)
    return f


def refine_options(f):
    f = click.option('--tol', type=click.FloatRange(min=0, min_open=True), default=None)(f)
    f = click.option('--mesh0', type=click.FloatRange(min=0, min_open=True), default=None)(f)
    return f


def _attack_rows(run, config, trials, estimate):
    """每个试验用 (seed, 试验编号) 子流抽取Eve的随机起点"""
    defaults = run.defaults
    context = build_attack_context(config, NMSEConfig(horizon_T=defaults.horizon_T,
                                                      guard_eps=defaults.guard_eps),
                                   divergence_bound=defaults.divergence_bound)
    rows = []
    for trial in range(trials):
        report = estimate(context, trial_rng(run.seed, trial))
        row = {'trial': trial, 'seed': run.seed, 'method': report.method.value}
        for name, est, truth in zip(FREE_PARAMETERS, report.estimates.free_vector(),
                                    report.truth.free_vector()):
            row[f'{name}_true'] = truth
            row[f'{name}_est'] = est
            row[f'{name}_error'] = report.abs_errors[name]
        row.update({'final_nmse': report.final_nmse, 'evaluations': report.evaluations,
                    'complete_recovery': complete_recovery(report, defaults.digits),
                    'flags': ';'.join(report.flags)})
        rows.append(row)
        logger.info("攻击试验%s: NMSE=%.3e，%s次评估", trial, report.final_nmse,
                    report.evaluations)
    return rows


def _run_attack(run, name, config, trials, estimate):
    rows = _attack_rows(run, config, trials, estimate)
    path = run.output_path(f'attack_{name}.csv')
    emit_csv(rows, path, metadata=run.metadata(config, attack=name, trials=trials,
                                               horizon_T=run.defaults.horizon_T,
                                               guard_eps=run.defaults.guard_eps))
    click.echo(path)


@attack.command('bisearch')
@attack_options
@click.pass_obj
def attack_bisearch(run, config_path, preset, trials):
    """三分搜索估计 w_A0，其余未知量取随机值"""
    config = run.load_config(config_path, preset)
    iters = run.defaults.bisearch_iters

    def estimate(context, rng):
        return bisearch_w_context(context, random_start(context, rng), iters=iters)

    _run_attack(run, 'bisearch', config, trials, estimate)


@attack.command('grid')
@attack_options
@grid_options
@click.pass_obj
def attack_grid(run, config_path, preset, trials, grid_m, grid_n):
    """下界格点上的粗网格搜索 (eps, x, y)，w取随机值"""
    config = run.load_config(config_path, preset)
    M, N = grid_m or run.defaults.grid_M, grid_n or run.defaults.grid_N

    def estimate(context, rng):
        return coarse_grid_search(M, N, DEFAULT_BOUNDS[:3], NMSEObjective(context),
                                  random_start(context, rng), context.truth)

    _run_attack(run, 'grid', config, trials, estimate)


@attack.command('pattern')
@attack_options
@refine_options
@click.pass_obj
def attack_pattern(run, config_path, preset, trials, mesh0, tol):
    """从随机起点直接做四参数模式搜索"""
    config = run.load_config(config_path, preset)
    defaults = run.defaults
    mesh0 = mesh0 or (DEFAULT_BOUNDS[0][1] - DEFAULT_BOUNDS[0][0]) / defaults.grid_M

    def estimate(context, rng):
        return pattern_search_refine(random_start(context, rng), NMSEObjective(context), mesh0,
                                     max_evals=defaults.pattern_max_evals,
                                     tol=tol or defaults.pattern_tol, truth=context.truth)

    _run_attack(run, 'pattern', config, trials, estimate)


@attack.command('gradient')
@attack_options
@click.pass_obj
def attack_gradient(run, config_path, preset, trials):
    """中心差分梯度下降（从随机起点）"""
    config = run.load_config(config_path, preset)
    defaults = run.defaults

    def estimate(context, rng):
        return gradient_descent_attack(NMSEObjective(context), random_start(context, rng),
                                       max_iters=defaults.gradient_max_iters,
                                       truth=context.truth)

    _run_attack(run, 'gradient', config, trials, estimate)


@attack.command('pipeline')
@attack_options
@grid_options
@refine_options
@click.option('--no-bisearch', is_flag=True, help='w保留随机值（对照组）')
@click.pass_obj
def attack_pipeline(run, config_path, preset, trials, grid_m, grid_n, mesh0, tol, no_bisearch):
    """三分搜索 -> 粗网格 -> 模式搜索"""
    config = run.load_config(config_path, preset)
    defaults = run.defaults

    def estimate(context, rng):
        return pipeline_attack(context, rng, M=grid_m or defaults.grid_M,
                               N=grid_n or defaults.grid_N, iters=defaults.bisearch_iters,
                               mesh0=mesh0, tol=tol or defaults.pattern_tol,
                               max_evals=defaults.pattern_max_evals,
                               use_bisearch=not no_bisearch)

    _run_attack(run, 'pipeline', config, trials, estimate)


# ---------------------------------------------------------------------------
# 批量实验与预设
# ---------------------------------------------------------------------------

def _parse_override(text):
    if '=' not in text:
        raise click.BadParameter(f"{text!r} 不是 key=value 形式", param_hint='--set')
    key, value = (part.strip() for part in text.split('=', 1))
    try:
        return key, json.loads(value)
    except ValueError:
        return key, value


@cli.command()
@click.argument('kind', type=click.Choice([k.value for k in ExperimentKind]))
@click.option('--trials', type=click.IntRange(min=1), default=1, show_default=True)
@click.option('--set', 'overrides', multiple=True, help='覆盖实验参数，例如 --set orbit_len=2000')
@click.option('--spec', 'spec_path', type=click.Path(exists=True, dir_okay=False),
              help='JSON格式的实验描述，命令行选项优先')
@click.pass_obj
def study(run, kind, trials, overrides, spec_path):
    """执行可复现的批量实验，写出 trials.csv、summary.csv 与 metadata.txt"""
    data = {}
    if spec_path:
        with open(spec_path, 'r', encoding='utf-8') as handle:
            data = json.load(handle)
    data.update({'kind': kind, 'trials': trials, 'seed': run.seed, 'jobs': run.jobs,
                 'output_dir': os.path.join(run.out, kind)})
    data.setdefault('overrides', {}).update(dict(_parse_override(o) for o in overrides))
    result = run_experiment(parse_experiment_spec(data))
    for key, path in result.paths.items():
        click.echo(f'{key}: {path}')
    _echo_values(result.summary.items())


@cli.group()
def presets():
    """已公开的参数预设"""


@presets.command('list')
def presets_list():
    for preset in list_presets():
        kind = 'config' if preset.config is not None else 'control'
        click.echo(f'{preset.name}\t{kind}\t{preset.notes}')


@presets.command('show')
@click.argument('name')
def presets_show(name):
    """输出预设的 key = value 配置（只有控制参数时输出 a, b, mu）"""
    preset = get_preset(name)
    if preset.config is not None:
        click.echo(emit_config(preset.config, header=f'{preset.name}: {preset.notes}'), nl=False)
    else:
        click.echo(f'# {preset.name}: {preset.notes}')
        _echo_values(preset.control.model_dump().items())


def main(argv=None):
    """
    命令行入口，返回退出码
    """
    try:
        result = cli.main(args=argv, prog_name='chaosbench', standalone_mode=False)
    except click.exceptions.Exit as exit_:
        return exit_.exit_code
    except click.Abort:
        click.echo('已中止', err=True)
        return EXIT_FAILURE
    except click.ClickException as error:
        error.show()
        return exit_code_for(error)
    except WorkbenchError as error:
        logger.error("%s: %s", type(error).__name__, error)
        return exit_code_for(error)
    except SystemExit as exit_:
        return exit_.code if isinstance(exit_.code, int) else EXIT_FAILURE
    except Exception:
        logger.error("未预期的错误", exc_info=True)
        return EXIT_FAILURE
    # 非standalone模式下 ctx.exit(code) 以返回值的形式给出退出码
    return result if isinstance(result, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
