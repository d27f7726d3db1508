import numpy as np

# 记录到实验元数据中的生成器名称
GENERATOR_NAME = 'numpy.random.Philox (counter-based, 64-bit key) + SeedSequence spawn_key=(trial,)'


def trial_rng(seed, trial=None):
    """
    为某个试验创建独立的随机数流

    每个试验的子流只由 (seed, trial) 决定，与执行顺序和并行度无关。

    参数:
        seed: 64位非负整数种子
        trial: 试验编号；为None时返回主流

    返回:
        numpy.random.Generator: Philox计数器生成器
    """
    spawn_key = () if trial is None else (int(trial),)
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(sequence))


def as_generator(seed_or_rng):
    """接受种子或现成的Generator，统一返回Generator（None视为种子0）"""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return trial_rng(0 if seed_or_rng is None else seed_or_rng)
