import logging
import math
import os

from flask import Blueprint, current_app, jsonify, request

from core.attacks import key_space_cardinality
from harness.experiments import parse_experiment_spec, run_experiment
from models import KeySpaceStage, WorkbenchError
from utils.error_handlers import handle_workbench_error
from utils.validators import (
    ExperimentRequestValidator,
    KeySpaceQueryValidator,
    trials_within_limit,
    validate_query_params,
    validate_request_data,
)

logger = logging.getLogger(__name__)

# 创建蓝图实例
experiments_bp = Blueprint('experiments', __name__, url_prefix='/api')


@experiments_bp.route('/keyspace', methods=['GET'])
@validate_query_params(KeySpaceQueryValidator)
def get_key_space():
    """
    各阶段的密钥空间基数

    基数是精确大整数，以十进制字符串返回。

    示例请求：
    GET /api/keyspace?digits=11

    示例响应：
    {
        "digits": 11,
        "stages": [{"stage": "Naive", "cardinality": "1000...0", "power_of_ten": 110}, ...]
    }
    """
    params = request.validated_params
    stages = []
    for stage in KeySpaceStage:
        account = key_space_cardinality(stage, digits=params['digits'],
                                        residual_digits=params['residual_digits'])
        stages.append({
            "stage": stage.value,
            "cardinality": str(account.cardinality),
            "power_of_ten": account.power_of_ten,
        })
    return jsonify({"digits": params['digits'], "stages": stages}), 200


@experiments_bp.route('/experiments', methods=['POST'])
@validate_request_data(ExperimentRequestValidator)
def post_experiment():
    """
    同步执行一次小规模实验，返回逐试验结果与汇总

    请求体：
    {"kind": "throughput", "trials": 2, "seed": 7, "overrides": {"orbit_len": 2000}}

    HTTP状态码：
    - 200: 成功
    - 400: 请求不合法或试验次数超过 MAX_API_TRIALS
    - 422: 数值计算失败
    """
    data = request.validated_data
    if not trials_within_limit(data['trials']):
        return jsonify({
            "error": "试验次数超过上限",
            "details": f"trials <= {current_app.config['MAX_API_TRIALS']}",
        }), 400

    output_dir = os.path.join(current_app.config['OUTPUT_DIR'], 'api',
                              f"{data['kind']}-seed{data['seed']}-trials{data['trials']}")
    try:
        spec = parse_experiment_spec(dict(data, output_dir=output_dir, jobs=1))
        result = run_experiment(spec)
    except WorkbenchError as e:
        logger.warning("实验请求失败: %s", e)
        return handle_workbench_error(e)
    except Exception as e:
        # 捕获其他未预期的错误
        logger.error("实验执行出现未预期的错误", exc_info=True)
        return jsonify({"error": f"服务器内部错误: {str(e)}"}), 500

    return jsonify({
        "kind": spec.kind.value,
        "trials": spec.trials,
        "seed": spec.seed,
        "rows": [_jsonable(row) for row in result.rows],
        "summary": _jsonable(result.summary),
        "paths": result.paths,
    }), 200


def _jsonable(row):
    """numpy标量转为Python内置类型，非有限浮点数转为None"""
    out = {}
    for key, value in row.items():
        if hasattr(value, 'item'):
            value = value.item()
        if isinstance(value, float) and not math.isfinite(value):
            value = None
        out[key] = value
    return out
