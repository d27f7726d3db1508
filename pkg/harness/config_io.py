"""
配置文本（key = value）与CSV输出

所有浮点数按17位有效数字输出，文本与配置之间可以无损往返。
"""
import csv
import logging
import os

from pydantic import ValidationError

from models import (
    ConfigParseError,
    ConfigurationError,
    ControlParams,
    CouplingParams,
    FullConfig,
    NodeState,
)

logger = logging.getLogger(__name__)

NODE_KEYS = ('x', 'y', 'z', 'w')
REQUIRED_KEYS = (('a', 'b', 'mu', 'eps_x', 'eps_z')
                 + tuple(f'{v}_A0' for v in NODE_KEYS)
                 + tuple(f'{v}_B0' for v in NODE_KEYS))
OPTIONAL_KEYS = ('step_h', 'n_steps', 'delay_ms', 'seed')
INTEGER_KEYS = ('n_steps', 'seed')


def format_float(value):
    """17位有效数字"""
    return format(float(value), '.17g')


def _parse_value(key, text, line, column):
    try:
        return int(text) if key in INTEGER_KEYS else float(text)
    except ValueError:
        kind = '整数' if key in INTEGER_KEYS else '实数'
        raise ConfigParseError(f"{key} 的取值 {text!r} 不是合法{kind}", line, column)


def parse_config(text):
    """
    解析 key = value 格式的配置文本

    支持空行与 # 注释（整行或行尾）。必需键为 a, b, mu, eps_x, eps_z 和双方的8个初始条件，
    可选键为 step_h, n_steps, delay_ms, seed。

    参数:
        text: 配置文本

    返回:
        FullConfig

    异常:
        ConfigParseError: 带行列号的语法错误、未知键、重复键或缺失键
        ConfigurationError: 取值不满足参数约束
    """
    values = {}
    lines = text.splitlines()
    for number, raw in enumerate(lines, start=1):
        content = raw.split('#', 1)[0]
        if not content.strip():
            continue
        if '=' not in content:
            column = len(content) - len(content.lstrip()) + 1
            raise ConfigParseError("缺少 '='", number, column)
        key_part, value_part = content.split('=', 1)
        key = key_part.strip()
        key_column = len(key_part) - len(key_part.lstrip()) + 1
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise ConfigParseError(f"未知键 {key!r}", number, key_column)
        if key in values:
            raise ConfigParseError(f"重复的键 {key!r}", number, key_column)
        value_text = value_part.strip()
        value_column = len(key_part) + 2 + len(value_part) - len(value_part.lstrip())
        if not value_text:
            raise ConfigParseError(f"{key} 缺少取值", number, value_column)
        values[key] = _parse_value(key, value_text, number, value_column)

    if not values:
        raise ConfigParseError("配置为空", max(1, len(lines)), 1)
    missing = [key for key in REQUIRED_KEYS if key not in values]
    if missing:
        raise ConfigParseError(f"缺少必需的键: {', '.join(missing)}", len(lines) + 1, 1)

    try:
        optional = {key: values[key] for key in OPTIONAL_KEYS if key in values}
        return FullConfig(
            control=ControlParams(a=values['a'], b=values['b'], mu=values['mu']),
            coupling=CouplingParams(eps_x=values['eps_x'], eps_z=values['eps_z']),
            alice=NodeState(**{v: values[f'{v}_A0'] for v in NODE_KEYS}),
            bob=NodeState(**{v: values[f'{v}_B0'] for v in NODE_KEYS}),
            **optional)
    except ValidationError as error:
        raise ConfigurationError(f"配置取值不合法: {error}") from error


def config_items(config: FullConfig):
    """配置的 (键, 文本值) 列表，顺序固定"""
    items = [('a', config.control.a), ('b', config.control.b), ('mu', config.control.mu),
             ('eps_x', config.coupling.eps_x), ('eps_z', config.coupling.eps_z)]
    items += [(f'{v}_A0', getattr(config.alice, v)) for v in NODE_KEYS]
    items += [(f'{v}_B0', getattr(config.bob, v)) for v in NODE_KEYS]
    items = [(key, format_float(value)) for key, value in items]
    items += [('step_h', format_float(config.step_h)), ('n_steps', str(config.n_steps)),
              ('delay_ms', format_float(config.delay_ms)), ('seed', str(config.seed))]
    return items


def emit_config(config: FullConfig, header=None):
    """配置 -> 文本（parse_config的逆运算）"""
    lines = [f'# {line}' for line in (header or '').splitlines()]
    lines += [f'{key} = {value}' for key, value in config_items(config)]
    return '\n'.join(lines) + '\n'


def read_config_file(path):
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_config(handle.read())


def _format_cell(value):
    if isinstance(value, bool) or value is None:
        return '' if value is None else str(value).lower()
    if isinstance(value, float):
        return format_float(value)
    if hasattr(value, 'dtype') and value.dtype.kind == 'f':
        return format_float(value)
    return str(value)


def metadata_lines(metadata):
    return [f'# {key}: {_format_cell(value)}' for key, value in (metadata or {}).items()]


def emit_csv(rows, path, header=None, metadata=None):
    """
    写CSV：先写 # 开头的元数据行，再写表头和数据行

    参数:
        rows: 字典列表（header缺省时取第一行的键）或序列列表
        path: 输出路径，目录不存在时自动创建
        header: 列名
        metadata: 写在文件开头的键值对
    """
    rows = list(rows)
    if header is None and rows and isinstance(rows[0], dict):
        header = list(rows[0].keys())
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        for line in metadata_lines(metadata):
            handle.write(line + '\n')
        writer = csv.writer(handle, lineterminator='\n')
        if header:
            writer.writerow(header)
        for row in rows:
            cells = [row.get(name) for name in header] if isinstance(row, dict) else row
            writer.writerow([_format_cell(cell) for cell in cells])
    logger.debug("写出 %s（%s行）", path, len(rows))


def emit_scalogram_csv(scalogram, path, metadata=None):
    """
    尺度图网格CSV：第一行是时间（步）坐标，之后每行以尺度开头
    """
    rows = [[format_float(s)] + [_format_cell(v) for v in row]
            for s, row in zip(scalogram.scales, scalogram.magnitude)]
    header = ['scale\\step'] + [str(int(t)) for t in scalogram.times]
    meta = {'step_h': scalogram.step_h, 'omega0': scalogram.omega0}
    meta.update(metadata or {})
    emit_csv(rows, path, header=header, metadata=meta)


def write_keystream(keystream, path, metadata=None):
    """
    密钥流文件：# 元数据行之后是一行 '0'/'1' 字符
    """
    meta = {'source_channel': keystream.source_channel, 'decimation': keystream.decimation,
            'bits': len(keystream)}
    meta.update(metadata or {})
    with open(path, 'w', encoding='utf-8') as handle:
        for line in metadata_lines(meta):
            handle.write(line + '\n')
        handle.write(keystream.as_text() + '\n')
