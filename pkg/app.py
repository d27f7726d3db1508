import logging
import os

from dotenv import load_dotenv
from flask import Flask, jsonify
from flask_cors import CORS

from config import get_config
from core.dynamics import rk4_self_check
from models import WorkbenchError
from routes import experiments_bp, presets_bp
from utils.error_handlers import handle_workbench_error

load_dotenv()

logger = logging.getLogger(__name__)

# 步长减半后误差应缩小约16倍
RK4_RATIO_RANGE = (14.0, 18.0)

SERVICE_ENDPOINTS = {
    "presets": "/api/presets",
    "preset_detail": "/api/presets/<name>",
    "key_space": "/api/keyspace?digits=11",
    "experiments": "/api/experiments (POST)",
    "health": "/health",
}


def configure_logging(level):
    """按配置的日志级别初始化根日志器"""
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def _register_error_handlers(app):
    """未被路由自行处理的错误统一转为JSON响应"""

    @app.errorhandler(WorkbenchError)
    def workbench_error(error):
        return handle_workbench_error(error)

    @app.errorhandler(400)
    def bad_request(error):
        return jsonify({"error": "请求不合法"}), 400

    @app.errorhandler(404)
    def not_found(error):
        return jsonify({"error": "接口不存在", "endpoints": SERVICE_ENDPOINTS}), 404

    @app.errorhandler(500)
    def internal_error(error):
        logger.error("未处理的服务器错误: %s", error)
        body = {"error": "服务器内部错误"}
        if app.config['DEBUG']:
            body["details"] = str(error)
        return jsonify(body), 500


def _register_service_routes(app):
    """服务说明与积分器自检"""

    @app.route('/')
    def index():
        return jsonify({
            "name": app.config['APP_NAME'],
            "version": app.config['APP_VERSION'],
            "description": "混沌同步流密码实验平台：同步协议、密钥流、参数估计攻击与批量实验",
            "endpoints": SERVICE_ENDPOINTS,
        })

    @app.route('/health')
    def health():
        """
        在 x' = -x 上验证积分器的四阶收敛

        误差比落在 RK4_RATIO_RANGE 之外时返回503。
        """
        ratio = rk4_self_check()
        healthy = RK4_RATIO_RANGE[0] <= ratio <= RK4_RATIO_RANGE[1]
        if not healthy:
            logger.warning("RK4自检失败，误差比 %.3f", ratio)
        payload = {
            "status": "healthy" if healthy else "degraded",
            "app_name": app.config['APP_NAME'],
            "rk4_error_ratio": ratio,
        }
        return jsonify(payload), 200 if healthy else 503


def create_app(config_name=None):
    """
    构建实验平台的Flask应用

    参数:
        config_name: 'development'、'testing' 或 'production'，缺省时读取 CHAOSBENCH_ENV

    返回:
        Flask: 注册了预设、实验蓝图和错误处理器的应用
    """
    settings = get_config(config_name)
    app = Flask(__name__)
    app.config.from_object(settings)
    configure_logging(app.config['LOG_LEVEL'])
    CORS(app, origins=settings.CORS_ORIGINS)

    for blueprint in (presets_bp, experiments_bp):
        app.register_blueprint(blueprint)
    _register_error_handlers(app)
    _register_service_routes(app)
    return app


if __name__ == '__main__':
    env = os.environ.get('CHAOSBENCH_ENV', 'development')
    service = create_app(env)
    host = os.environ.get('HOST', '0.0.0.0')
    port = int(os.environ.get('PORT', 5000))
    logger.info("启动 %s v%s（环境: %s）于 http://%s:%s", service.config['APP_NAME'],
                service.config['APP_VERSION'], env, host, port)
    service.run(host=host, port=port, debug=service.config['DEBUG'])
