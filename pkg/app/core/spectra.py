"""
谱统计 - 展开、最近邻间距分布、Δ3 刚度与上翘检测、强度函数
"""
import functools
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from joblib import Memory
from scipy import stats

from app.core.ensemble import Realization, unfolded_goe_levels
from app.core.errors import (
    DegenerateInputError,
    InsufficientDataError,
    OrderingError,
    ParameterError,
    ShapeError,
)
from app.core.fitting import fit_shape, gaussian_shape, lorentzian_shape
from app.core.scaffold import DensityModel, HFSpectrum
from app.tools.parallel import ordered_map, pairwise_sum
from config import config

logger = logging.getLogger(__name__)

MIN_SPACINGS = 200
UPBEND_THRESHOLD = 3.0
STRENGTH_BINS = 61
STRENGTH_RANGE = 4.0
STRENGTH_EDGE = 3.0

_memory = Memory(location=config.CACHE_DIR or None, verbose=0)


# ---------------------------------------------------------------------------
# 展开与间距分布
# ---------------------------------------------------------------------------

def unfold(levels, density: DensityModel) -> np.ndarray:
    """
    用平滑累计能级数展开：E → ∫ρ

    Raises:
        OrderingError: 输入未排序
    """
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) < 0):
        raise OrderingError("展开前能级必须升序")
    return density.staircase(levels)


def wigner_cdf(s):
    """Wigner 猜想 p(s) = (π/2) s exp(−πs²/4) 的累积分布"""
    s = np.asarray(s, dtype=float)
    return 1.0 - np.exp(-0.25 * np.pi * s ** 2)


def gue_surmise_cdf(s):
    """GUE 猜想 p(s) = (32/π²) s² exp(−4s²/π) 的累积分布"""
    s = np.asarray(s, dtype=float)
    a = 4.0 / np.pi
    return stats.gamma.cdf(a * s ** 2, 1.5)


def _sequences(unfolded) -> list[np.ndarray]:
    if isinstance(unfolded, np.ndarray) and unfolded.ndim == 1:
        return [unfolded]
    return [np.asarray(seq, dtype=float) for seq in unfolded]


def _normalized_spacings(unfolded) -> np.ndarray:
    chunks = []
    for seq in _sequences(unfolded):
        gaps = np.diff(np.asarray(seq, dtype=float))
        if gaps.size == 0:
            continue
        if np.any(gaps < 0):
            raise OrderingError("能级序列必须升序")
        mean = gaps.mean()
        if not mean > 0:
            raise DegenerateInputError("能级间距全为零")
        chunks.append(gaps / mean)
    return np.concatenate(chunks) if chunks else np.empty(0)


@dataclass
class NNSReport:
    """最近邻间距分布与 KS 距离（间距已归一到单位均值）"""

    edges: np.ndarray
    counts: np.ndarray
    ks_wigner: float
    ks_poisson: float
    ks_gue: float
    spacings: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "ks_wigner": self.ks_wigner,
            "ks_poisson": self.ks_poisson,
            "ks_gue": self.ks_gue,
            "spacings": self.spacings,
        }


def nns_ks(unfolded, bins: int = 40, s_max: float = 4.0) -> NNSReport:
    """
    最近邻间距直方图，以及对 Wigner 猜想与 Poisson 分布的 KS 距离

    Args:
        unfolded: 一条展开后的能级序列，或多条序列的列表（分别归一后合并）

    Raises:
        InsufficientDataError: 间距少于 200 个
    """
    s = _normalized_spacings(unfolded)
    if s.size < MIN_SPACINGS:
        raise InsufficientDataError(f"只有 {s.size} 个间距，至少需要 {MIN_SPACINGS}")
    counts, edges = np.histogram(s, bins=bins, range=(0.0, s_max))
    return NNSReport(
        edges=edges,
        counts=counts,
        ks_wigner=float(stats.kstest(s, wigner_cdf).statistic),
        ks_poisson=float(stats.kstest(s, stats.expon.cdf).statistic),
        ks_gue=float(stats.kstest(s, gue_surmise_cdf).statistic),
        spacings=int(s.size),
    )


# ---------------------------------------------------------------------------
# Δ3 刚度
# ---------------------------------------------------------------------------

def poisson_delta3(L):
    return np.asarray(L, dtype=float) / 15.0


def goe_delta3(L):
    """GOE 的大 L 渐近形式"""
    L = np.asarray(L, dtype=float)
    return (np.log(2.0 * np.pi * L) + np.euler_gamma - 1.25 - np.pi ** 2 / 8.0) / np.pi ** 2


def gue_delta3(L):
    """GUE 的大 L 渐近形式"""
    L = np.asarray(L, dtype=float)
    return (np.log(2.0 * np.pi * L) + np.euler_gamma - 1.25) / (2.0 * np.pi ** 2)


ANALYTIC_DELTA3 = {
    "poisson_analytic": poisson_delta3,
    "goe_analytic": goe_delta3,
    "gue_analytic": gue_delta3,
}


def _window_delta3(y: np.ndarray, L: float) -> float:
    """
    一个窗口内的最小二乘偏差

    y 为窗口内能级相对窗口起点的位置；阶梯函数 N(ε) 在 [y_j, y_{j+1}) 上取 j。
    Δ3 = [∫N² − (∫N)²/L − 12(∫(ε−L/2)N)²/L³] / L
    """
    edges = np.concatenate(([0.0], y, [L]))
    j = np.arange(edges.size - 1, dtype=float)
    widths = np.diff(edges)
    i0 = np.dot(j, widths)
    i2 = np.dot(j ** 2, widths)
    i1 = 0.5 * np.dot(j, edges[1:] ** 2 - edges[:-1] ** 2)
    i1c = i1 - 0.5 * L * i0
    value = (i2 - i0 ** 2 / L - 12.0 * i1c ** 2 / L ** 3) / L
    return max(float(value), 0.0)


def _window_values(sequences: list[np.ndarray], L: float) -> np.ndarray:
    values = []
    for x in sequences:
        starts = np.arange(x[0], x[-1] - L + 1e-12, 0.5 * L)
        lo = np.searchsorted(x, starts, side="left")
        hi = np.searchsorted(x, starts + L, side="left")
        for start, a, b in zip(starts, lo, hi):
            values.append(_window_delta3(x[a:b] - start, L))
    return np.asarray(values)


def _block_jackknife(values: np.ndarray, blocks: int = 20) -> float:
    """按连续块做 jackknife（相邻窗口有一半重叠）"""
    count = values.size
    if count < 2:
        return float("nan")
    groups = np.array_split(values, min(blocks, count))
    sums = np.array([g.sum() for g in groups])
    sizes = np.array([g.size for g in groups])
    loo = (sums.sum() - sums) / (count - sizes)
    g = len(groups)
    return float(np.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2)))


@dataclass
class Delta3Curve:
    """Δ3(L) 曲线及其估计标准误"""

    L: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    label: str = "measured"
    seed: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "seed": self.seed,
            "L": self.L.tolist(),
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
        }


@dataclass
class RigidityResult:
    """Δ3 曲线、参考曲线与上翘位置"""

    curve: Delta3Curve
    reference: Delta3Curve | None
    upbend_L: float | None
    threshold: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "curve": self.curve.to_dict(),
            "reference": None if self.reference is None else self.reference.to_dict(),
            "upbend_L": self.upbend_L,
            "threshold": self.threshold,
        }


def delta3_curve(unfolded, L_values: Sequence[float], label: str = "measured") -> Delta3Curve:
    """
    滑动窗口 Δ3(L)，窗口步长 L/2，标准误由块 jackknife 给出

    输入先平移到 0 并缩放到单位平均间距，因此对整体平移与缩放不变。

    Raises:
        ParameterError: max L 超过能级数的 1/4
    """
    sequences = []
    for seq in _sequences(unfolded):
        seq = np.asarray(seq, dtype=float)
        if seq.size < 2:
            raise InsufficientDataError("每条序列至少需要两个能级")
        if np.any(np.diff(seq) < 0):
            raise OrderingError("能级序列必须升序")
        spacing = (seq[-1] - seq[0]) / (seq.size - 1)
        sequences.append((seq - seq[0]) / spacing)
    L_values = np.asarray(L_values, dtype=float)
    if L_values.size == 0 or np.any(L_values <= 0):
        raise ParameterError("L 必须为正")
    shortest = min(seq.size for seq in sequences)
    if L_values.max() > shortest / 4.0:
        raise ParameterError(f"max L = {L_values.max()} 超过能级数 {shortest} 的 1/4")
    values = np.empty(L_values.size)
    errors = np.empty(L_values.size)
    for i, L in enumerate(L_values):
        windows = _window_values(sequences, float(L))
        values[i] = windows.mean()
        errors[i] = _block_jackknife(windows)
    return Delta3Curve(L=L_values, values=values, stderr=errors, label=label)


def _sample_reference(kind: str, L_values: tuple[float, ...], seed: int,
                      sequences: int, length: int) -> Delta3Curve:
    rng = np.random.default_rng(seed)
    if kind == "poisson":
        runs = [np.cumsum(rng.exponential(size=length)) for _ in range(sequences)]
    else:
        symmetry = "unitary" if kind == "gue" else "orthogonal"
        runs = [unfolded_goe_levels(length, symmetry, rng) for _ in range(sequences)]
    curve = delta3_curve(runs, L_values, label=f"{kind}_sampled")
    curve.seed = seed
    return curve


_cached_reference = functools.lru_cache(maxsize=32)(_memory.cache(_sample_reference))


def reference_curve(kind: str, L_values: Sequence[float], seed: int | None = None,
                    sequences: int = 16) -> Delta3Curve:
    """
    参考 Δ3 曲线

    kind 为 goe / gue / poisson 时按记录的种子抽样（进程内与磁盘缓存）；
    goe_analytic / gue_analytic / poisson_analytic 为解析形式，标准误为 0。
    """
    L_values = tuple(float(v) for v in L_values)
    if kind in ANALYTIC_DELTA3:
        values = ANALYTIC_DELTA3[kind](np.asarray(L_values))
        return Delta3Curve(L=np.asarray(L_values), values=values,
                           stderr=np.zeros(len(L_values)), label=kind)
    if kind not in ("goe", "gue", "poisson"):
        raise ParameterError(f"未知的参考曲线: {kind}")
    seed = config.REFERENCE_SEED if seed is None else int(seed)
    length = max(1000, int(np.ceil(4 * max(L_values))) + 1)
    return _cached_reference(kind, L_values, seed, sequences, length)


def detect_upbend(curve: Delta3Curve, reference: Delta3Curve,
                  threshold: float = UPBEND_THRESHOLD) -> float | None:
    """曲线超出参考值 threshold 个合并标准差的最小 L"""
    if not np.allclose(curve.L, reference.L):
        raise ShapeError("曲线与参考曲线的 L 网格不一致")
    sigma = np.sqrt(np.nan_to_num(curve.stderr) ** 2 + np.nan_to_num(reference.stderr) ** 2)
    excess = curve.values - reference.values
    above = np.flatnonzero(excess > threshold * sigma)
    return float(curve.L[above[0]]) if above.size else None


def delta3(unfolded, L_values: Sequence[float], reference: str | Delta3Curve | None = "goe",
           threshold: float = UPBEND_THRESHOLD) -> RigidityResult:
    """
    Δ3 刚度曲线与上翘检测

    Args:
        unfolded: 展开能级，或多条序列
        L_values: 区间长度（以平均间距为单位）
        reference: 参考曲线名称或曲线本身；None 表示不做上翘检测
        threshold: 上翘判据的标准差倍数
    """
    curve = delta3_curve(unfolded, L_values)
    if reference is None:
        return RigidityResult(curve=curve, reference=None, upbend_L=None, threshold=threshold)
    if isinstance(reference, str):
        reference = reference_curve(reference, curve.L)
    return RigidityResult(curve=curve, reference=reference,
                          upbend_L=detect_upbend(curve, reference, threshold),
                          threshold=threshold)


@dataclass
class SpectralReport:
    """谱统计汇总"""

    nns: NNSReport
    rigidity: RigidityResult

    @property
    def upbend_L(self) -> float | None:
        return self.rigidity.upbend_L

    def to_dict(self) -> dict[str, Any]:
        return {"nns": self.nns.to_dict(), "delta3": self.rigidity.to_dict(),
                "upbend_L": self.upbend_L}


# ---------------------------------------------------------------------------
# 强度函数
# ---------------------------------------------------------------------------

@dataclass
class StrengthHistogram:
    """单次实现的分箱累加量，可按固定顺序归约"""

    sums: np.ndarray
    counts: np.ndarray
    rho_sum: float
    rows: int
    total_weight: float


def _included_rows(spectrum: HFSpectrum, delta: float, edge: float) -> np.ndarray:
    levels = spectrum.levels
    mask = (levels >= spectrum.emin + edge * delta) & (levels <= spectrum.emax - edge * delta)
    if not np.any(mask):
        logger.warning("距能谱两端 %.1fΔ 以内之外没有能级，改用全部能级", edge)
        mask = np.ones(levels.size, dtype=bool)
    return np.flatnonzero(mask)


def strength_histogram(real: Realization, spectrum: HFSpectrum, delta: float,
                       bins: int = STRENGTH_BINS, edge: float = STRENGTH_EDGE) -> StrengthHistogram:
    """按偏移 ℰ_m − Ē_α 对 |O_mα|² 分箱"""
    if real.n != spectrum.n:
        raise ShapeError(f"实现维度 {real.n} 与能谱 {spectrum.n} 不符")
    rows = _included_rows(spectrum, delta, edge)
    offsets = np.subtract.outer(spectrum.levels[rows], real.reference_eigenvalues)
    weights = np.abs(real.transform[rows, :]) ** 2
    span = STRENGTH_RANGE * delta
    sums, _ = np.histogram(offsets, bins=bins, range=(-span, span), weights=weights)
    counts, _ = np.histogram(offsets, bins=bins, range=(-span, span))
    rho_sum = float(np.sum(spectrum.density.density(spectrum.levels[rows])))
    return StrengthHistogram(sums=sums, counts=counts, rho_sum=rho_sum, rows=int(rows.size),
                             total_weight=float(weights.sum()))


@dataclass
class StrengthFit:
    """经验强度函数及其高斯 / 洛伦兹拟合"""

    centers: np.ndarray
    mean_weight: np.ndarray
    counts: np.ndarray
    delta: float
    rho: float
    gaussian_width: float
    gaussian_amplitude: float
    gaussian_residual: float
    lorentzian_width: float
    lorentzian_amplitude: float
    lorentzian_residual: float
    sum_rule: float
    sum_rule_defect: float
    realizations: int = 1
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def preferred_shape(self) -> str:
        if self.gaussian_residual <= self.lorentzian_residual:
            return "gaussian"
        return "lorentzian"

    def curves(self) -> tuple[np.ndarray, np.ndarray]:
        """在分箱中心处的两条拟合曲线"""
        g = gaussian_shape(self.centers, self.gaussian_amplitude, self.gaussian_width) \
            if self.gaussian_width > 0 else np.where(self.mean_weight > 0, self.mean_weight, 0.0)
        lz = lorentzian_shape(self.centers, self.lorentzian_amplitude, self.lorentzian_width) \
            if self.lorentzian_width > 0 else np.where(self.mean_weight > 0, self.mean_weight, 0.0)
        return g, lz

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": self.delta,
            "rho": self.rho,
            "gaussian_width": self.gaussian_width,
            "gaussian_residual": self.gaussian_residual,
            "lorentzian_width": self.lorentzian_width,
            "lorentzian_residual": self.lorentzian_residual,
            "preferred_shape": self.preferred_shape,
            "sum_rule": self.sum_rule,
            "sum_rule_defect": self.sum_rule_defect,
            "realizations": self.realizations,
        }


def _offset_scale(real: Realization, spectrum: HFSpectrum) -> float:
    """|O|² 加权的偏移均方根，作为未给出 Δ 时的分箱尺度"""
    offsets = np.subtract.outer(spectrum.levels, real.reference_eigenvalues)
    weights = np.abs(real.transform) ** 2
    total = weights.sum()
    if total == 0:
        raise DegenerateInputError("变换矩阵全为零")
    scale = float(np.sqrt(np.sum(weights * offsets ** 2) / total))
    return scale if scale > 0 else spectrum.mean_spacing


def strength_function(
    realizations: Sequence[Realization],
    spectrum: HFSpectrum,
    delta: float | None = None,
    bins: int = STRENGTH_BINS,
    workers: int = 1,
) -> StrengthFit:
    """
    经验强度函数（局部态密度）及其线形拟合

    对所有实现、所有 (m, α) 取 |O_mα|² 按偏移分箱平均；离能谱两端 3Δ 以内的行不参与。
    微观路线用 E_α 代替 Ē_α。

    Args:
        realizations: 同维度的一组实现
        spectrum: HF 骨架
        delta: 分箱尺度 Δ（范围 ±4Δ）；默认由数据的加权均方根偏移估计
        bins: 分箱数
        workers: 并行线程数

    Raises:
        InsufficientDataError: 没有实现
        DegenerateInputError: 变换矩阵全为零
    """
    realizations = list(realizations)
    if not realizations:
        raise InsufficientDataError("至少需要一次实现")
    if any(r.n != realizations[0].n for r in realizations):
        raise ShapeError("所有实现必须同维度")
    if delta is None:
        delta = _offset_scale(realizations[0], spectrum)
    if not delta > 0:
        raise ParameterError(f"Δ 必须为正: {delta}")

    histograms = ordered_map(lambda r: strength_histogram(r, spectrum, delta, bins), realizations,
                             workers)
    return reduce_strength(histograms, delta, bins)


def reduce_strength(histograms: Sequence[StrengthHistogram], delta: float,
                    bins: int = STRENGTH_BINS) -> StrengthFit:
    """按输入顺序合并各次实现的分箱结果并拟合"""
    if not histograms:
        raise InsufficientDataError("至少需要一次实现")
    if sum(h.total_weight for h in histograms) == 0:
        raise DegenerateInputError("变换矩阵全为零")
    sums = pairwise_sum([h.sums for h in histograms])
    counts = pairwise_sum([h.counts for h in histograms])
    rho = sum(h.rho_sum for h in histograms) / sum(h.rows for h in histograms)
    mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    span = STRENGTH_RANGE * delta
    bin_edges = np.linspace(-span, span, bins + 1)
    centers = 0.5 * (bin_edges[1:] + bin_edges[:-1])
    width = bin_edges[1] - bin_edges[0]
    sum_rule = float(np.sum(mean) * rho * width)

    fit_args = dict(centers=centers, mean_weight=mean, counts=counts, delta=float(delta),
                    rho=float(rho), sum_rule=sum_rule, sum_rule_defect=abs(sum_rule - 1.0),
                    realizations=len(histograms))
    occupied = np.flatnonzero(mean > 0)
    if occupied.size <= 1:
        amplitude = float(mean.max())
        return StrengthFit(gaussian_width=0.0, gaussian_amplitude=amplitude, gaussian_residual=0.0,
                           lorentzian_width=0.0, lorentzian_amplitude=amplitude,
                           lorentzian_residual=0.0, **fit_args)

    sample = counts > 0
    peak = float(mean.max())
    bounds = ([0.0, 1e-6 * delta], [np.inf, 100.0 * delta])
    gauss = fit_shape(gaussian_shape, centers[sample], mean[sample], [peak, delta], bounds)
    lorentz = fit_shape(lorentzian_shape, centers[sample], mean[sample], [peak, delta], bounds)
    return StrengthFit(
        gaussian_width=float(abs(gauss.params[1])),
        gaussian_amplitude=float(gauss.params[0]),
        gaussian_residual=gauss.residual,
        lorentzian_width=float(abs(lorentz.params[1])),
        lorentzian_amplitude=float(lorentz.params[0]),
        lorentzian_residual=lorentz.residual,
        **fit_args,
    )
