from flask import Blueprint, jsonify

from harness.config_io import config_items
from harness.presets import get_preset, list_presets
from models import ConfigurationError

# 创建蓝图实例
presets_bp = Blueprint('presets', __name__, url_prefix='/api/presets')


def _preset_summary(preset):
    return {
        "name": preset.name,
        "control": preset.control.model_dump(),
        "complete": preset.config is not None,
        "notes": preset.notes,
    }


@presets_bp.route('', methods=['GET'])
def get_presets():
    """
    列出所有已公开的参数预设

    响应格式：
    - 成功: {"presets": [{"name": ..., "control": {...}, "complete": bool, "notes": ...}]}

    示例请求：
    GET /api/presets
    """
    return jsonify({"presets": [_preset_summary(p) for p in list_presets()]}), 200


@presets_bp.route('/<string:name>', methods=['GET'])
def get_preset_detail(name):
    """
    获取单个预设，带完整配置时同时返回 key = value 形式的配置项

    HTTP状态码：
    - 200: 成功
    - 404: 预设不存在
    """
    try:
        preset = get_preset(name)
    except ConfigurationError as e:
        return jsonify({"error": str(e)}), 404

    body = _preset_summary(preset)
    if preset.config is not None:
        # 数值以17位有效数字的文本给出，保证可无损回读
        body["config"] = dict(config_items(preset.config))
    return jsonify(body), 200
