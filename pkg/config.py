import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Config:
    """
    HTTP服务与命令行共用的设置；数值默认值见 NumericDefaults
    """
    APP_NAME = os.environ.get('APP_NAME', 'Chaos Sync Bench')
    APP_VERSION = os.environ.get('APP_VERSION', '1.0.0')

    # 实验输出目录
    OUTPUT_DIR = os.environ.get('CHAOSBENCH_OUTPUT_DIR', 'results')

    # HTTP接口同步执行实验时允许的最大试验次数
    MAX_API_TRIALS = int(os.environ.get('CHAOSBENCH_MAX_API_TRIALS', '20'))

    CORS_ORIGINS = os.environ.get('CORS_ORIGINS', '*').split(',')

    DEBUG = False
    TESTING = False
    LOG_LEVEL = os.environ.get('CHAOSBENCH_LOG_LEVEL', 'INFO')


class DevelopmentConfig(Config):
    """本地调试：开启DEBUG并输出DEBUG级别日志"""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class TestingConfig(Config):
    """单元测试：输出写入临时目录，试验次数上限更小"""
    TESTING = True
    OUTPUT_DIR = os.environ.get('CHAOSBENCH_TEST_OUTPUT_DIR', '/tmp/chaosbench-tests')
    MAX_API_TRIALS = 3


class ProductionConfig(Config):
    """部署环境：沿用基类的关闭调试设置"""
    LOG_LEVEL = os.environ.get('CHAOSBENCH_LOG_LEVEL', 'WARNING')


config_by_name = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}


def get_config(env=None):
    """
    按名称选取设置类，未知名称回落到开发环境

    参数:
        env: 缺省时读取 CHAOSBENCH_ENV

    返回:
        Config子类
    """
    if env is None:
        env = os.environ.get('CHAOSBENCH_ENV', 'default')
    return config_by_name.get(env, config_by_name['default'])


class NumericDefaults(BaseSettings):
    """
    数值计算默认值

    所有字段都可以通过 CHAOSBENCH_<字段名> 环境变量覆盖，
    实验输出会把生效值写入元数据。
    """
    model_config = SettingsConfigDict(env_prefix='CHAOSBENCH_', extra='ignore')

    # 积分器
    step_h: float = 0.01
    n_steps: int = 100_000
    divergence_bound: float = 1e6
    seconds_per_time_unit: float = 0.01

    # 同步检测
    sync_threshold: float = 1e-6
    sync_hold: int = 1000
    exchange_steps: int = 200_000
    free_run_steps: int = 200_000

    # Lyapunov谱
    renorm_interval: int = 10
    transient_fraction: float = 0.1
    lyapunov_band: float = 0.05
    lyapunov_steps: int = 100_000
    hyperchaos_tol: float = 5e-3

    # 小波分析
    cwt_omega0: float = 6.0
    cwt_decimate: int = 16
    cwt_voices: int = 4
    collapse_threshold: float = 0.9
    collapse_persist: int = 5
    collapse_window: int = 20_000

    # 密钥流
    decimation: int = 10

    # 攻击
    guard_eps: float = 1e-4
    horizon_T: float = 10.0
    digits: int = 11
    grid_M: int = 20
    grid_N: int = 20
    pattern_tol: float = 1e-11
    pattern_max_evals: int = 4000
    bisearch_iters: int = 60
    gradient_max_iters: int = 300

    # 运行
    jobs: int = 1
    output_dir: str = 'results'
    log_level: str = 'INFO'


@lru_cache(maxsize=1)
def get_numeric_defaults():
    """
    获取（缓存的）数值默认值实例

    返回:
        NumericDefaults: 从环境变量解析得到的默认值
    """
    return NumericDefaults()
