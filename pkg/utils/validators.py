from functools import wraps

from flask import current_app, jsonify, request
from pydantic import BaseModel, Field, ValidationError


class KeySpaceQueryValidator(BaseModel):
    """
    密钥空间查询参数验证器
    """
    digits: int = Field(default=11, ge=1, le=64, description="每个值编码的十进制位数")
    residual_digits: int = Field(default=2, ge=0, le=64, description="w估计后剩余的不确定位数")


class ExperimentRequestValidator(BaseModel):
    """
    实验请求体验证器

    字段与ExperimentSpec一致，trials的上限由配置项MAX_API_TRIALS在路由中检查
    """
    kind: str
    trials: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    overrides: dict = Field(default_factory=dict)


def _validated(validator_class, read_payload, attribute, failure_message):
    """
    生成校验装饰器：read_payload 取出原始数据，校验结果以 attribute 挂在 request 上

    read_payload 返回None表示数据形状不对，直接以400拒绝。
    """
    def decorator(view):
        @wraps(view)
        def wrapper(*args, **kwargs):
            payload = read_payload()
            if payload is None:
                return jsonify({"error": "请求体必须是有效的JSON对象"}), 400
            try:
                model = validator_class(**payload)
            except ValidationError as e:
                return jsonify({"error": failure_message, "details": str(e)}), 400
            setattr(request, attribute, model.model_dump())
            return view(*args, **kwargs)

        return wrapper

    return decorator


def _json_object():
    data = request.get_json(silent=True)
    return data if isinstance(data, dict) else None


def validate_query_params(validator_class=KeySpaceQueryValidator):
    """
    校验查询字符串，结果放在 request.validated_params

    参数:
        validator_class: Pydantic模型类，查询参数都是字符串，类型转换由它完成

    返回:
        路由装饰器
    """
    return _validated(validator_class, lambda: request.args.to_dict(),
                      'validated_params', "参数验证失败")


def validate_request_data(validator_class):
    """校验JSON请求体（必须是对象），结果放在 request.validated_data"""
    return _validated(validator_class, _json_object, 'validated_data', "请求数据验证失败")


def trials_within_limit(trials):
    """HTTP接口同步执行实验，试验次数受MAX_API_TRIALS限制"""
    return trials <= current_app.config['MAX_API_TRIALS']
