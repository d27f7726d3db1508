"""
Eve的攻击工具：NMSE逆问题、w的三分搜索、粗网格+模式搜索、有限差分梯度下降、密钥空间核算

攻击者已知 (a, b, mu)、明文传输的 z_A0 以及交换阶段记录的 x_B，
需要估计Alice的秘密量 (eps_x, x_A0, y_A0, w_A0)。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from models import (
    FREE_PARAMETERS,
    AllSamplesGuarded,
    AttackMethod,
    ConfigurationError,
    ControlParams,
    DivergenceError,
    EstimationReport,
    EveConfig,
    FragilityResult,
    FullConfig,
    IntegratorConfig,
    KeySpaceAccount,
    KeySpaceStage,
    LengthMismatchError,
    NMSEConfig,
    SyncVerdict,
)
from utils.rng import as_generator, trial_rng

from .analysis import detect_synchronization
from .dynamics import integrate, integrate_eve, integrate_eve_batch, random_initial_node

logger = logging.getLogger(__name__)

# 自由参数 (eps_Ex, x_E0, y_E0, w_E0) 的搜索边界
DEFAULT_BOUNDS = ((0.1, 1.1), (-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5))

# 批量重放一次最多并行的候选数
BATCH_CHUNK = 512

# 标志
FLAG_NOT_UNIMODAL = 'not-unimodal'
FLAG_BOUNDARY = 'boundary'
FLAG_BUDGET = 'budget-exhausted'
FLAG_DIVERGED = 'diverged'
FLAG_STALLED = 'step-underflow'
FLAG_CENTRAL_DIFFERENCE = 'central-difference-descent'


# ---------------------------------------------------------------------------
# NMSE
# ---------------------------------------------------------------------------

def nmse_terms(z_A, z_E, cfg: NMSEConfig = None, step_h=0.01):
    """
    NMSE及其统计量

    窗口是第skip_initial到第round(T/h)个样本，|z_A| < guard_eps·rms(z_A) 的样本不计入；
    阈值随参考序列一起缩放，z_A与z_E同乘一个非零常数时NMSE不变。

    返回:
        tuple: (nmse, 参与计算的样本数, 被排除的样本数)
    """
    cfg = cfg or NMSEConfig()
    z_A = np.asarray(z_A, dtype=float)
    z_E = np.asarray(z_E, dtype=float)
    if z_A.shape != z_E.shape:
        raise LengthMismatchError(f"z_A与z_E长度不一致: {len(z_A)} != {len(z_E)}")
    last = int(round(cfg.horizon_T / step_h))
    if len(z_A) < last + 1:
        raise LengthMismatchError(f"序列只有{len(z_A)}个样本，窗口需要{last + 1}个")
    window_A = z_A[cfg.skip_initial:last + 1]
    window_E = z_E[cfg.skip_initial:last + 1]
    scale = float(np.sqrt(np.mean(window_A * window_A))) if len(window_A) else 0.0
    keep = np.abs(window_A) >= cfg.guard_eps * scale
    used = int(np.count_nonzero(keep)) if scale > 0 else 0
    guarded = len(window_A) - used
    if used == 0:
        raise AllSamplesGuarded(f"窗口内{guarded}个样本全部被保护阈值排除")
    ratio = (window_A[keep] - window_E[keep]) / window_A[keep]
    return float(np.mean(ratio * ratio)), used, guarded


def nmse(z_A, z_E, cfg: NMSEConfig = None, step_h=0.01):
    """
    归一化均方误差 (1/T)∫((z_A - z_E)/z_A)^2 dt 的离散近似
    """
    value, used, guarded = nmse_terms(z_A, z_E, cfg, step_h)
    logger.debug("NMSE=%.3e（使用%s个样本，排除%s个）", value, used, guarded)
    return value


# ---------------------------------------------------------------------------
# 攻击上下文与目标函数
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackContext:
    """
    Eve掌握的全部信息

    字段说明：
    - control: 公开的控制参数
    - observed_z_A: 截获的 z_A，长度至少 n_steps+1
    - recorded_x_B: 截获的 x_B（步点样本或 (n_steps, 4) 子步记录）
    - z_E0: 固定为 observed_z_A[0]
    - truth: 研究场景下的真实值
    """
    control: ControlParams
    observed_z_A: np.ndarray
    recorded_x_B: np.ndarray
    step_h: float = 0.01
    nmse_cfg: NMSEConfig = field(default_factory=NMSEConfig)
    truth: Optional[EveConfig] = None
    divergence_bound: float = 1e6

    @property
    def n_steps(self):
        return int(round(self.nmse_cfg.horizon_T / self.step_h))

    @property
    def z_E0(self):
        return float(self.observed_z_A[0])

    @property
    def integrator(self):
        return IntegratorConfig(step_h=self.step_h, n_steps=self.n_steps,
                                divergence_bound=self.divergence_bound)

    def eve_config(self, eps_Ex, x_E0, y_E0, w_E0):
        return EveConfig(x_E0=x_E0, y_E0=y_E0, z_E0=self.z_E0, w_E0=w_E0, eps_Ex=eps_Ex)


def build_attack_context(config: FullConfig, nmse_cfg: NMSEConfig = None,
                         divergence_bound=1e6):
    """
    研究场景：按完整配置运行交换阶段，截获Eve能看到的信号
    """
    nmse_cfg = nmse_cfg or NMSEConfig()
    n_steps = int(round(nmse_cfg.horizon_T / config.step_h))
    cfg = config.integrator(n_steps=n_steps, divergence_bound=divergence_bound)
    orbit = integrate(config.initial_state(), config.control, config.coupling, cfg,
                      channels=('z_A', 'x_B'), record_stages=True)
    return AttackContext(control=config.control, observed_z_A=orbit['z_A'],
                         recorded_x_B=orbit.stage_inputs['x_B'], step_h=config.step_h,
                         nmse_cfg=nmse_cfg, truth=config.truth(),
                         divergence_bound=divergence_bound)


def context_from_transcript(transcript, control: ControlParams, nmse_cfg: NMSEConfig = None,
                            truth=None):
    """用协议会话的公开记录构造攻击上下文（记录必须覆盖horizon_T）"""
    nmse_cfg = nmse_cfg or NMSEConfig()
    context = AttackContext(control=control, observed_z_A=transcript.z_A,
                            recorded_x_B=transcript.x_B_stages, step_h=transcript.step_h,
                            nmse_cfg=nmse_cfg, truth=truth)
    if transcript.last_step < context.n_steps:
        raise LengthMismatchError(
            f"公开记录只有{transcript.last_step}步，NMSE窗口需要{context.n_steps}步")
    return context


class NMSEObjective:
    """
    自由参数向量 (eps_Ex, x_E0, y_E0, w_E0) -> NMSE

    发散或NaN记为+inf；evaluations累计所有调用（含批量）。
    """

    def __init__(self, context: AttackContext):
        self.context = context
        self.evaluations = 0

    def __call__(self, theta):
        self.evaluations += 1
        eps, x, y, w = (float(v) for v in theta)
        ctx = self.context
        try:
            orbit = integrate_eve(ctx.eve_config(eps, x, y, w).initial_state(),
                                  ctx.recorded_x_B, ctx.control, eps, ctx.integrator)
        except DivergenceError:
            return math.inf
        value = nmse(ctx.observed_z_A[:ctx.n_steps + 1], orbit['z_E'], ctx.nmse_cfg,
                     ctx.step_h)
        return value if math.isfinite(value) else math.inf

    def batch(self, thetas):
        """同时评估多组参数，返回与输入同序的数组"""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        self.evaluations += len(thetas)
        ctx = self.context
        z_A = ctx.observed_z_A[:ctx.n_steps + 1]
        out = np.empty(len(thetas))
        for start in range(0, len(thetas), BATCH_CHUNK):
            chunk = thetas[start:start + BATCH_CHUNK]
            initials = np.column_stack([chunk[:, 1], chunk[:, 2],
                                        np.full(len(chunk), ctx.z_E0), chunk[:, 3]])
            z_E = integrate_eve_batch(initials, ctx.recorded_x_B, ctx.control, chunk[:, 0],
                                      ctx.integrator)
            for j in range(len(chunk)):
                if np.isnan(z_E[0, j]):
                    out[start + j] = math.inf
                    continue
                value = nmse(z_A, z_E[:, j], ctx.nmse_cfg, ctx.step_h)
                out[start + j] = value if math.isfinite(value) else math.inf
        return out


def _evaluate_many(objective, thetas):
    """优先使用目标函数的批量接口；NaN一律记为+inf"""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if hasattr(objective, 'batch'):
        values = np.asarray(objective.batch(thetas), dtype=float)
    else:
        values = np.array([objective(t) for t in thetas], dtype=float)
    values[np.isnan(values)] = math.inf
    return values


def _clip(theta, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(theta, lo, hi)


# ---------------------------------------------------------------------------
# 三分搜索 / w的估计
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TernaryResult:
    x: float
    value: float
    evaluations: int
    flags: Tuple[str, ...] = ()
    bracket: Tuple[float, float] = (0.0, 0.0)


def ternary_search(f, lo, hi, iters=60, batch=None, max_violations=3):
    """
    单峰函数在 [lo, hi] 上的三分搜索

    每次迭代把区间缩为原来的2/3，保留端点的函数值。两个端点都低于两个内点时记一次违例，
    累计max_violations次后标记not-unimodal并返回目前最优点；
    结束时区间仍贴着初始边界则标记boundary。

    参数:
        f: 标量函数
        lo, hi: 初始区间
        iters: 迭代次数
        batch: 可选的批量函数 g([x1, x2]) -> [f(x1), f(x2)]

    返回:
        TernaryResult: 正常情况下 x 为最终区间中点
    """
    if not hi > lo:
        raise ConfigurationError("三分搜索要求 hi > lo")

    def pair(u, v):
        if batch is not None:
            fu, fv = batch([u, v])
            return float(fu), float(fv)
        return float(f(u)), float(f(v))

    lo0, hi0 = lo, hi
    f_lo, f_hi = pair(lo, hi)
    evaluations = 2
    best_x, best_f = (lo, f_lo) if f_lo <= f_hi else (hi, f_hi)
    violations = 0
    flags = []

    for _ in range(iters):
        third = (hi - lo) / 3.0
        m1, m2 = lo + third, hi - third
        f1, f2 = pair(m1, m2)
        evaluations += 2
        for xv, fv in ((m1, f1), (m2, f2)):
            if fv < best_f:
                best_x, best_f = xv, fv
        if f_lo < min(f1, f2) and f_hi < min(f1, f2):
            violations += 1
            if violations >= max_violations:
                flags.append(FLAG_NOT_UNIMODAL)
                logger.warning("目标函数在 [%.6g, %.6g] 上不是单峰的", lo, hi)
                return TernaryResult(x=best_x, value=best_f, evaluations=evaluations,
                                     flags=tuple(flags), bracket=(lo, hi))
        if f1 < f2:
            hi, f_hi = m2, f2
        else:
            lo, f_lo = m1, f1

    if lo == lo0 or hi == hi0:
        flags.append(FLAG_BOUNDARY)
        logger.warning("三分搜索停在初始区间边界 [%.6g, %.6g]", lo0, hi0)
    mid = 0.5 * (lo + hi)
    value = float(f(mid))
    evaluations += 1
    return TernaryResult(x=mid, value=value, evaluations=evaluations, flags=tuple(flags),
                         bracket=(lo, hi))


def _bisearch(objective, fixed: EveConfig, bracket, iters, truth):
    eps, x, y = fixed.eps_Ex, fixed.x_E0, fixed.y_E0

    def along_w(w):
        return objective((eps, x, y, w))

    def along_w_batch(ws):
        return _evaluate_many(objective, [(eps, x, y, w) for w in ws])

    result = ternary_search(along_w, bracket[0], bracket[1], iters, batch=along_w_batch)
    return EstimationReport(estimates=fixed.model_copy(update={'w_E0': result.x}),
                            truth=truth, final_nmse=result.value,
                            evaluations=result.evaluations, method=AttackMethod.BISEARCH,
                            flags=result.flags)


def bisearch_w(observed_z_A, recorded_x_B, p: ControlParams, fixed: EveConfig,
               bracket=(-0.5, 0.5), iters=60, nmse_cfg: NMSEConfig = None, step_h=0.01,
               truth=None):
    """
    固定 (x_E0, y_E0, eps_Ex) 后用三分搜索估计 w_E0

    参数:
        observed_z_A: 截获的 z_A
        recorded_x_B: 截获的 x_B
        p: 控制参数
        fixed: 提供 x_E0, y_E0, eps_Ex 和固定的 z_E0
        bracket: w 的搜索区间，必须在 [-0.5, 0.5] 内
        iters: 迭代次数

    返回:
        EstimationReport: method为BiSearch
    """
    if not -0.5 <= bracket[0] < bracket[1] <= 0.5:
        raise ConfigurationError(f"w的搜索区间 {bracket} 必须在 [-0.5, 0.5] 内")
    context = AttackContext(control=p, observed_z_A=np.asarray(observed_z_A, dtype=float),
                            recorded_x_B=np.asarray(recorded_x_B, dtype=float), step_h=step_h,
                            nmse_cfg=nmse_cfg or NMSEConfig(), truth=truth)
    return _bisearch(NMSEObjective(context), fixed, bracket, iters, truth)


def bisearch_w_context(context: AttackContext, fixed: EveConfig, bracket=(-0.5, 0.5),
                       iters=60):
    """同 bisearch_w，直接使用已有的攻击上下文"""
    return _bisearch(NMSEObjective(context), fixed, bracket, iters, context.truth)


def nmse_profile(parameter_name, grid, context: AttackContext, base: EveConfig = None):
    """
    沿一个自由参数计算NMSE剖面，其余参数固定为base（默认取真实值）

    返回:
        list: (取值, NMSE) 对；发散的点NMSE为None
    """
    if parameter_name not in FREE_PARAMETERS:
        raise ConfigurationError(f"未知参数 {parameter_name}，可选 {FREE_PARAMETERS}")
    base = base or context.truth
    if base is None:
        raise ConfigurationError("没有真实值时必须给出base")
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ConfigurationError("剖面网格必须升序")
    axis = FREE_PARAMETERS.index(parameter_name)
    thetas = np.tile(np.array(base.free_vector()), (len(grid), 1))
    thetas[:, axis] = grid
    values = NMSEObjective(context).batch(thetas)
    return [(float(v), None if math.isinf(f) else float(f)) for v, f in zip(grid, values)]


# ---------------------------------------------------------------------------
# 粗网格 + 模式搜索
# ---------------------------------------------------------------------------

def grid_lattice(M, N, bounds=DEFAULT_BOUNDS[:3]):
    """
    (eps, x, y) 的下界格点：每个区间等分后取各小区间的下界，按eps、x、y字典序排列
    """
    (e_lo, e_hi), (x_lo, x_hi), (y_lo, y_hi) = bounds
    eps = e_lo + np.arange(M) * (e_hi - e_lo) / M
    xs = x_lo + np.arange(N) * (x_hi - x_lo) / N
    ys = y_lo + np.arange(N) * (y_hi - y_lo) / N
    E, X, Y = np.meshgrid(eps, xs, ys, indexing='ij')
    return np.column_stack([E.ravel(), X.ravel(), Y.ravel()])


def coarse_grid_search(M, N, bounds, objective, base: EveConfig, truth=None):
    """
    在 M*N^2 个下界格点上评估目标函数，w_E0 取自base（通常是三分搜索的估计）

    并列时取格点序号最小者；发散的格点记为+inf。

    返回:
        EstimationReport: method为Grid
    """
    if M < 2 or N < 2:
        raise ConfigurationError("M与N都必须 >= 2")
    bounds = bounds or DEFAULT_BOUNDS[:3]
    lattice = grid_lattice(M, N, bounds)
    thetas = np.column_stack([lattice, np.full(len(lattice), base.w_E0)])
    values = _evaluate_many(objective, thetas)
    diverged = int(np.count_nonzero(np.isinf(values)))
    flags = ()
    if diverged:
        logger.warning("%s个格点发散或无效", diverged)
        if diverged == len(values):
            flags = (FLAG_DIVERGED,)
    best = int(np.argmin(values))
    logger.info("网格搜索 M=%s N=%s: 最优格点 %s, NMSE=%.3e", M, N, best, values[best])
    return EstimationReport(estimates=base.with_free(thetas[best]), truth=truth,
                            final_nmse=float(values[best]), evaluations=len(values),
                            method=AttackMethod.GRID, flags=flags)


def pattern_search_refine(initial: EveConfig, objective, mesh0, contraction=0.5,
                          expansion=1.0, max_evals=4000, tol=1e-11, bounds=DEFAULT_BOUNDS,
                          truth=None):
    """
    坐标方向（罗盘）模式搜索

    每轮沿四个自由参数各取 ±mesh 的探测点（截断到边界），
    按探测顺序取第一个改进点并按expansion放大网格，没有改进则按contraction收缩。
    网格小于tol、目标值降到0或评估次数用完时停止。

    返回:
        EstimationReport: method为PatternSearch，trace为每轮后的最优值（单调不增）
    """
    if not 0.0 < contraction < 1.0 <= expansion:
        raise ConfigurationError("要求 0 < contraction < 1 <= expansion")
    if mesh0 <= 0:
        raise ConfigurationError("初始网格必须为正")

    x = _clip(np.array(initial.free_vector(), dtype=float), bounds)
    fx = float(_evaluate_many(objective, [x])[0])
    evaluations = 1
    trace = [fx]
    mesh = float(mesh0)
    flags = []
    dim = len(x)

    while mesh >= tol:
        if evaluations >= max_evals:
            flags.append(FLAG_BUDGET)
            logger.warning("模式搜索用完%s次评估，网格 %.3e", max_evals, mesh)
            break
        polls = []
        for i in range(dim):
            for sign in (1.0, -1.0):
                candidate = x.copy()
                candidate[i] += sign * mesh
                candidate = _clip(candidate, bounds)
                if not np.array_equal(candidate, x):
                    polls.append(candidate)
        polls = polls[:max_evals - evaluations]
        improved = None
        if polls:
            values = _evaluate_many(objective, polls)
            evaluations += len(polls)
            better = np.flatnonzero(values < fx)
            if len(better):
                improved = int(better[0])
                x, fx = polls[improved], float(values[improved])
        mesh = mesh * expansion if improved is not None else mesh * contraction
        trace.append(fx)
        logger.debug("模式搜索: f=%.3e mesh=%.3e", fx, mesh)
        if fx <= 0.0:
            break

    return EstimationReport(estimates=initial.with_free(x), truth=truth, final_nmse=fx,
                            evaluations=evaluations, method=AttackMethod.PATTERN_SEARCH,
                            flags=tuple(flags), trace=tuple(trace))


# ---------------------------------------------------------------------------
# 梯度下降
# ---------------------------------------------------------------------------

def finite_difference_gradient(objective, theta, rel_h=1e-6):
    """
    中心差分梯度，第i个分量的步长为 rel_h * max(|theta_i|, 0.1)

    返回:
        tuple: (梯度, 使用的评估次数)
    """
    theta = np.asarray(theta, dtype=float)
    steps = rel_h * np.maximum(np.abs(theta), 0.1)
    points = []
    for i in range(len(theta)):
        for sign in (1.0, -1.0):
            point = theta.copy()
            point[i] += sign * steps[i]
            points.append(point)
    values = _evaluate_many(objective, points)
    gradient = (values[0::2] - values[1::2]) / (2.0 * steps)
    return gradient, len(points)


def gradient_descent_attack(objective, start: EveConfig, step0=1.0, max_iters=300,
                            gtol=1e-10, rel_h=1e-6, min_step=1e-20, bounds=DEFAULT_BOUNDS,
                            truth=None):
    """
    中心差分梯度 + 回溯步长减半的下降法

    成功的一步之后步长加倍（不超过step0）。梯度范数小于gtol、目标值为0、
    步长小于min_step或迭代次数用完时停止。

    返回:
        EstimationReport: method为GradientDescent
    """
    theta = _clip(np.array(start.free_vector(), dtype=float), bounds)
    f = float(_evaluate_many(objective, [theta])[0])
    evaluations = 1
    trace = [f]
    flags = [FLAG_CENTRAL_DIFFERENCE]
    t = step0

    for iteration in range(max_iters):
        if f <= 0.0:
            break
        gradient, used = finite_difference_gradient(objective, theta, rel_h)
        evaluations += used
        if not np.all(np.isfinite(gradient)):
            flags.append(FLAG_DIVERGED)
            logger.warning("第%s次迭代梯度无效", iteration)
            break
        if float(np.linalg.norm(gradient)) < gtol:
            break
        accepted = False
        while t >= min_step:
            candidate = _clip(theta - t * gradient, bounds)
            value = float(_evaluate_many(objective, [candidate])[0])
            evaluations += 1
            if value < f:
                theta, f = candidate, value
                t = min(2.0 * t, step0)
                accepted = True
                break
            t *= 0.5
        trace.append(f)
        if not accepted:
            flags.append(FLAG_STALLED)
            break
    else:
        flags.append(FLAG_BUDGET)
        logger.warning("梯度下降达到%s次迭代上限", max_iters)

    return EstimationReport(estimates=start.with_free(theta), truth=truth, final_nmse=f,
                            evaluations=evaluations, method=AttackMethod.GRADIENT_DESCENT,
                            flags=tuple(flags), trace=tuple(trace))


# ---------------------------------------------------------------------------
# 组合攻击
# ---------------------------------------------------------------------------

def random_start(context: AttackContext, rng):
    eps = rng.uniform(*DEFAULT_BOUNDS[0])
    x, y, w = rng.uniform(-0.5, 0.5, size=3)
    return context.eve_config(float(eps), float(x), float(y), float(w))


def pipeline_attack(context: AttackContext, rng=None, M=20, N=20, iters=60, mesh0=None,
                    tol=1e-11, max_evals=4000, use_bisearch=True):
    """
    三分搜索 w -> 粗网格 (eps, x, y) -> 模式搜索四个参数

    use_bisearch为假时w保留随机值（用于对照）。

    返回:
        EstimationReport: method为Pipeline，evaluations为三步之和
    """
    rng = as_generator(rng)
    objective = NMSEObjective(context)
    start = random_start(context, rng)
    flags = []
    if use_bisearch:
        bisection = _bisearch(objective, start, (-0.5, 0.5), iters, context.truth)
        start = bisection.estimates
        flags.extend(bisection.flags)
    grid = coarse_grid_search(M, N, DEFAULT_BOUNDS[:3], objective, start, context.truth)
    flags.extend(grid.flags)
    if mesh0 is None:
        mesh0 = min((DEFAULT_BOUNDS[0][1] - DEFAULT_BOUNDS[0][0]) / M,
                    (DEFAULT_BOUNDS[1][1] - DEFAULT_BOUNDS[1][0]) / N)
    refined = pattern_search_refine(grid.estimates, objective, mesh0, tol=tol,
                                    max_evals=max_evals, truth=context.truth)
    flags.extend(refined.flags)
    return EstimationReport(estimates=refined.estimates, truth=context.truth,
                            final_nmse=refined.final_nmse, evaluations=objective.evaluations,
                            method=AttackMethod.PIPELINE, flags=tuple(dict.fromkeys(flags)),
                            trace=refined.trace)


def weak_key_attack(context: AttackContext, rng=None, M=10, N=10, iters=60, max_iters=300,
                    gtol=1e-10):
    """
    弱密钥场景：三分搜索 + 粗网格给出起点，再用梯度下降估计全部四个参数
    """
    rng = as_generator(rng)
    objective = NMSEObjective(context)
    start = random_start(context, rng)
    bisection = _bisearch(objective, start, (-0.5, 0.5), iters, context.truth)
    grid = coarse_grid_search(M, N, DEFAULT_BOUNDS[:3], objective, bisection.estimates,
                              context.truth)
    descent = gradient_descent_attack(objective, grid.estimates, max_iters=max_iters,
                                      gtol=gtol, truth=context.truth)
    flags = tuple(dict.fromkeys(bisection.flags + grid.flags + descent.flags))
    return EstimationReport(estimates=descent.estimates, truth=context.truth,
                            final_nmse=descent.final_nmse, evaluations=objective.evaluations,
                            method=AttackMethod.GRADIENT_DESCENT, flags=flags,
                            trace=descent.trace)


def complete_recovery(report: EstimationReport, digits=11):
    """四个自由参数按digits位有效数字编码后与真实值完全相同"""
    if report.truth is None:
        raise ConfigurationError("没有真实值无法判断是否完全恢复")
    fmt = f'.{digits - 1}e'
    return all(format(e, fmt) == format(t, fmt)
               for e, t in zip(report.estimates.free_vector(), report.truth.free_vector()))


# ---------------------------------------------------------------------------
# 密钥空间与统计
# ---------------------------------------------------------------------------

def key_space_cardinality(stage, digits=11, residual_digits=2):
    """
    各阶段密钥空间的精确基数（Python大整数）

    Naive = (10^d)^10，AfterPublicICs = (10^d)^8，OneSideOnly = (10^d)^4，
    AfterWEstimate = (10^d)^3 * 10^residual_digits
    """
    stage = KeySpaceStage(stage)
    if digits < 1:
        raise ConfigurationError("每个值的位数必须 >= 1")
    per_value = 10 ** digits
    cardinality = {
        KeySpaceStage.NAIVE: per_value ** 10,
        KeySpaceStage.AFTER_PUBLIC_ICS: per_value ** 8,
        KeySpaceStage.ONE_SIDE_ONLY: per_value ** 4,
        KeySpaceStage.AFTER_W_ESTIMATE: per_value ** 3 * 10 ** residual_digits,
    }[stage]
    return KeySpaceAccount(digits_per_value=digits, stage=stage, cardinality=cardinality)


def fragility_trial(base: FullConfig, index, seed, redraw_receiver=True, threshold=1e-6,
                    hold=1000, n_steps=None):
    """
    单次接收端重抽样试验（模块级函数，可交给进程池）

    发散视为未同步。
    """
    config = base
    if redraw_receiver:
        config = base.replace(bob=random_initial_node(trial_rng(seed, index)))
    cfg = config.integrator(n_steps=n_steps)
    try:
        orbit = integrate(config.initial_state(), config.control, config.coupling, cfg,
                          channels=('x_A', 'x_B', 'z_A', 'z_B'))
    except DivergenceError:
        return SyncVerdict(synchronized=False, detect_step=None, terminal_error=math.inf,
                           threshold=threshold, hold=hold)
    return detect_synchronization(orbit['x_A'], orbit['x_B'], orbit['z_A'], orbit['z_B'],
                                  threshold=threshold, hold=hold)


def sync_fragility_study(base: FullConfig, n_trials, seed, redraw_receiver=True,
                         threshold=1e-6, hold=1000, n_steps=None, map_fn=map):
    """
    保持其余参数不变，重抽样Bob的初始条件，统计同步失败比例

    返回:
        FragilityResult
    """
    if n_trials < 1:
        raise ConfigurationError("试验次数必须 >= 1")
    verdicts = tuple(map_fn(fragility_trial, [base] * n_trials, range(n_trials),
                            [seed] * n_trials, [redraw_receiver] * n_trials,
                            [threshold] * n_trials, [hold] * n_trials, [n_steps] * n_trials))
    failures = sum(1 for v in verdicts if not v.synchronized)
    logger.info("同步脆弱性: %s/%s次失败", failures, n_trials)
    return FragilityResult(failure_rate=failures / n_trials, n_trials=n_trials,
                           failures=failures, verdicts=verdicts, base=base)


def error_histogram(errors, edges=None):
    """
    绝对误差的log10直方图

    默认按整数数量级分箱 [-16, 0]；超出范围的误差（含0）并入两端的箱。

    返回:
        tuple: (edges, counts)
    """
    edges = np.arange(-16, 1) if edges is None else np.asarray(edges, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    with np.errstate(divide='ignore'):
        logs = np.log10(errors)
    logs = np.clip(logs, edges[0], edges[-1])
    counts, _ = np.histogram(logs, bins=edges)
    return edges, counts


def error_distribution(errors, levels=(1e-2, 1e-3, 1e-4, 1e-5)):
    """
    误差数量级分布：每个level对应 round(log10(误差)) 等于 log10(level) 的样本比例
    """
    errors = np.abs(np.asarray(errors, dtype=float))
    if len(errors) == 0:
        return {level: 0.0 for level in levels}
    with np.errstate(divide='ignore'):
        orders = np.round(np.log10(errors))
    return {level: float(np.mean(orders == round(math.log10(level)))) for level in levels}
