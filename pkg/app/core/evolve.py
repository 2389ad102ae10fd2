"""
时间演化 - Tr(A ρ(t)) 的精确演化、蒙特卡洛系综平均、双时关联函数、解析预言与热化判定

约定 ħ = 1。
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Literal, Sequence

import numpy as np

from app.core.ensemble import EnsembleSpec, EnvelopeF, Realization, realize
from app.core.errors import (
    InsufficientDataError,
    ParameterError,
    RangeError,
    ShapeError,
)
from app.core.fitting import RelaxationFit, fit_relaxation
from app.core.scaffold import (
    HFSpectrum,
    Observable,
    StatOperator,
    WindowPartition,
    partition_windows,
    window_bounds,
    window_trace,
)
from app.tools.parallel import ordered_map, ordered_mean_std, realization_rng

logger = logging.getLogger(__name__)

REALITY_TOL = 1e-10
MIN_CORRELATION_REALIZATIONS = 10

Provenance = Literal["single", "monte_carlo", "analytic"]
VerdictLabel = Literal["thermalizes", "does_not_thermalize", "inconclusive"]


@dataclass(frozen=True)
class TimeGrid:
    """
    时间网格

    unit = "absolute" 时 times 为绝对时间；unit = "inverse_delta" 时以 1/Δ 为单位，须给出 delta。
    """

    times: np.ndarray
    unit: Literal["absolute", "inverse_delta"] = "absolute"
    delta: float | None = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ParameterError("时间网格不能为空")
        if times[0] < 0 or np.any(np.diff(times) <= 0):
            raise ParameterError("时间网格必须非负且严格递增")
        if self.unit not in ("absolute", "inverse_delta"):
            raise ParameterError(f"未知的时间单位: {self.unit}")
        if self.unit == "inverse_delta" and not (self.delta and self.delta > 0):
            raise ParameterError("以 1/Δ 为单位时必须给出正的 delta")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, t_max: float, points: int, delta: float,
                unit: Literal["absolute", "inverse_delta"] = "inverse_delta") -> "TimeGrid":
        """[0, t_max] 上的等间距网格"""
        if points < 2:
            raise ParameterError(f"时间点数至少为 2: {points}")
        return cls(times=np.linspace(0.0, t_max, points), unit=unit, delta=delta)

    @property
    def absolute(self) -> np.ndarray:
        if self.unit == "absolute":
            return self.times
        return self.times / self.delta

    @property
    def in_inverse_delta(self) -> np.ndarray | None:
        """以 1/Δ 为单位的时间；未知 Δ 时为 None"""
        if self.unit == "inverse_delta":
            return self.times
        if self.delta:
            return self.times * self.delta
        return None

    @property
    def size(self) -> int:
        return int(self.times.size)

    def to_dict(self) -> dict[str, Any]:
        return {"unit": self.unit, "delta": self.delta, "times": self.times.tolist()}


@dataclass
class Trajectory:
    """Tr(A ρ(t)) 在网格上的取值"""

    grid: TimeGrid
    mean: np.ndarray
    stderr: np.ndarray
    provenance: Provenance
    realizations: int = 1
    imag_residual: float = 0.0
    extras: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.mean.shape != (self.grid.size,) or self.stderr.shape != (self.grid.size,):
            raise ShapeError("轨迹长度与时间网格不符")
        if not np.all(np.isfinite(self.mean)):
            raise ParameterError("轨迹含有非有限值")

    def to_dict(self) -> dict[str, Any]:
        scalars = {k: v for k, v in self.extras.items() if np.ndim(v) == 0}
        return {
            "provenance": self.provenance,
            "realizations": self.realizations,
            "imag_residual": self.imag_residual,
            **scalars,
        }


def _check_dims(n: int, *operators):
    for op in operators:
        if op.n != n:
            raise ShapeError(f"算符维度 {op.n} 与哈密顿量维度 {n} 不符")


def _phase_trace(weights: np.ndarray, energies: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Σ_αβ M_αβ exp(−i(E_α − E_β)t)，返回复数数组"""
    phases = np.exp(1j * np.outer(energies, times))
    return np.sum(np.conj(phases) * (weights @ phases), axis=0)


def evolve_expectation(real: Realization, A: Observable, pi: StatOperator,
                       grid: TimeGrid) -> Trajectory:
    """
    单次实现的 Tr(A U(t) Π U†(t))

    A、Π 先一次性转到本征基：Ã = O†AO，Π̃ = O†ΠO，然后每个时刻只需乘相位因子。

    Raises:
        ShapeError: 维度不匹配
    """
    _check_dims(real.n, A, pi)
    o = real.transform
    a_eig = o.conj().T @ A.matrix @ o
    pi_eig = o.conj().T @ pi.matrix @ o
    weights = pi_eig * a_eig.T
    values = _phase_trace(weights, real.eigenvalues, grid.absolute)
    residual = float(np.max(np.abs(values.imag)))
    if residual > REALITY_TOL:
        logger.warning("Tr(Aρ(t)) 的虚部残差 %.3g 超过 %.0e", residual, REALITY_TOL)
    return Trajectory(grid=grid, mean=values.real.copy(), stderr=np.zeros(grid.size),
                      provenance="single", imag_residual=residual)


@dataclass
class SampleSet:
    """R 次实现的轨迹矩阵（R × T）"""

    grid: TimeGrid
    values: np.ndarray
    imag_residual: float

    @property
    def realizations(self) -> int:
        return int(self.values.shape[0])


def sample_trajectories(
    spectrum: HFSpectrum,
    spec: EnsembleSpec,
    A: Observable,
    pi: StatOperator,
    grid: TimeGrid,
    realizations: int,
    master_seed: int,
    workers: int = 1,
) -> SampleSet:
    """第 r 次实现使用 (master_seed, r) 派生的独立随机流，结果按 r 排序"""
    if realizations < 1:
        raise ParameterError(f"实现次数必须 ≥ 1: {realizations}")
    _check_dims(spectrum.n, A, pi)

    def task(index: int) -> Trajectory:
        real = realize(spectrum, spec, realization_rng(master_seed, index))
        return evolve_expectation(real, A, pi, grid)

    trajectories = ordered_map(task, list(range(realizations)), workers)
    return SampleSet(
        grid=grid,
        values=np.vstack([t.mean for t in trajectories]),
        imag_residual=max(t.imag_residual for t in trajectories),
    )


def summarize_samples(samples: SampleSet) -> Trajectory:
    """逐点均值与标准误"""
    mean, stderr, count = ordered_mean_std(list(samples.values))
    return Trajectory(
        grid=samples.grid,
        mean=mean,
        stderr=stderr,
        provenance="single" if count == 1 else "monte_carlo",
        realizations=count,
        imag_residual=samples.imag_residual,
    )


def ensemble_mean(
    spectrum: HFSpectrum,
    spec: EnsembleSpec,
    A: Observable,
    pi: StatOperator,
    grid: TimeGrid,
    realizations: int,
    master_seed: int,
    workers: int = 1,
) -> Trajectory:
    """
    ⟨Tr(A ρ(t))⟩ 的蒙特卡洛估计

    对固定 master_seed 的结果与线程数无关。

    Raises:
        ParameterError: realizations < 1
    """
    samples = sample_trajectories(spectrum, spec, A, pi, grid, realizations, master_seed, workers)
    return summarize_samples(samples)


# ---------------------------------------------------------------------------
# 解析预言
# ---------------------------------------------------------------------------

def averaged_propagator(spectrum: HFSpectrum, envelope: EnvelopeF, grid: TimeGrid) -> np.ndarray:
    """
    ⟨U(t)⟩_mm 的衰减因子（去掉 HF 相位 exp(−iℰ_m t) 后对所有 m 相同）

    高斯: exp(−t²Δ²/2)；洛伦兹: exp(−Δt/2)
    """
    return envelope.propagator(grid.absolute)


def asymptote_kernel(spectrum: HFSpectrum, envelope: EnvelopeF, symmetry: str = "orthogonal",
                     normalize: bool = True) -> np.ndarray:
    """
    渐近项的核 K_mn = K(ℰ_m − ℰ_n) / sqrt(ρ(ℰ_m) ρ(ℰ_n))，K 为包络与自身的卷积

    normalize 时第 n 列除以 Σ_m K_mn（正交类再加上 K_nn），
    这样 A = I 的渐近值严格等于 Tr Π，与 HF 能级个数的局部涨落无关。
    """
    levels = spectrum.levels
    rho = spectrum.density.density(levels)
    kernel = envelope.pair_profile(np.subtract.outer(levels, levels)) / np.sqrt(np.outer(rho, rho))
    if normalize:
        total = kernel.sum(axis=0)
        if symmetry == "orthogonal":
            total = total + np.diag(kernel)
        kernel = kernel / total[None, :]
    return kernel


def asymptote_exact(spectrum: HFSpectrum, A: Observable, pi: StatOperator, envelope: EnvelopeF,
                    symmetry: str = "orthogonal", normalize: bool = True) -> float:
    """
    渐近项 Σ_mn K_mn (A_mm Π_nn + A_mn Π_mn)

    幺正类没有 A_mn Π_mn 项。核见 asymptote_kernel。
    """
    kernel = asymptote_kernel(spectrum, envelope, symmetry, normalize)
    a_diag = np.diag(A.matrix).real
    value = float(a_diag @ kernel @ pi.populations)
    if symmetry == "orthogonal":
        value += float(np.sum(kernel * A.matrix * pi.matrix).real)
    return value


def asymptote_window(partition: WindowPartition, A: Observable) -> float:
    """粗粒化形式 Σ_k p_k Tr_k(A) / (√2 π ρ_k Δ)"""
    total = 0.0
    for k, members in enumerate(partition.members):
        if partition.p[k] == 0.0 or members.size == 0:
            continue
        total += partition.p[k] * window_trace(A, members) / (
            np.sqrt(2.0) * np.pi * partition.rho[k] * partition.delta
        )
    return float(total)


def analytic_prediction(
    spectrum: HFSpectrum,
    A: Observable,
    pi: StatOperator,
    envelope: EnvelopeF,
    grid: TimeGrid,
    symmetry: str = "orthogonal",
) -> Trajectory:
    """
    ⟨Tr(A ρ(t))⟩ 的解析预言

    第一项为 HF 演化的 Tr(A e^{−iH_HF t} Π e^{iH_HF t}) 乘以 ⟨U⟩ 衰减因子的平方 g(t)；
    渐近项用归一化的双重求和，并扣除 t = 0 时与第一项重叠的部分：
    mean = 第一项 + 渐近项 · (1 − g(t))，于是 t = 0 时严格等于 Tr(AΠ)，A = I 时恒为 Tr Π。
    extras 另给出未归一化的渐近项与粗粒化能窗形式。
    """
    _check_dims(spectrum.n, A, pi)
    times = grid.absolute
    hf_trace = _phase_trace(pi.matrix * A.matrix.T, spectrum.levels, times).real
    envelope_sq = envelope.propagator(times) ** 2
    first = hf_trace * envelope_sq
    exact = asymptote_exact(spectrum, A, pi, envelope, symmetry)
    raw = asymptote_exact(spectrum, A, pi, envelope, symmetry, normalize=False)
    window = asymptote_window(partition_windows(spectrum, pi, envelope.delta), A)
    return Trajectory(
        grid=grid,
        mean=first + exact * (1.0 - envelope_sq),
        stderr=np.zeros(grid.size),
        provenance="analytic",
        realizations=0,
        extras={
            "first_term": first,
            "asymptote_exact": exact,
            "asymptote_unnormalized": raw,
            "asymptote_window": window,
        },
    )


def equilibrium_value(spectrum: HFSpectrum, A: Observable, window: int, delta: float) -> float:
    """
    微正则平衡值 Tr_k0(A) / N_k0

    Raises:
        RangeError: 能窗为空或超出能谱
    """
    _check_dims(spectrum.n, A)
    lo, hi = window_bounds(spectrum, delta, window)
    members = spectrum.window_indices(lo, hi)
    if members.size == 0:
        raise RangeError(f"能窗 {window} 内没有能级")
    return window_trace(A, members) / members.size


def mixture_value(partition: WindowPartition, A: Observable) -> float:
    """按 p_k 加权的各能窗平衡值 Σ_k p_k Tr_k(A)/N_k"""
    total = 0.0
    for k, members in enumerate(partition.members):
        if partition.p[k] > 0 and members.size:
            total += partition.p[k] * window_trace(A, members) / members.size
    return float(total)


# ---------------------------------------------------------------------------
# 关联函数
# ---------------------------------------------------------------------------

@dataclass
class CorrelationEstimate:
    """双时协方差及解析的比较量（c5、c8 与全部跨能窗配对之和）"""

    grid: TimeGrid
    covariance: np.ndarray
    stderr: np.ndarray
    c5: np.ndarray
    c8: float
    realizations: int
    plateau_covariance: float | None = None
    plateau_stderr: float | None = None
    cross_window: float | None = None

    def diagonal(self) -> np.ndarray:
        return np.diag(self.covariance)

    def to_dict(self) -> dict[str, Any]:
        return {
            "realizations": self.realizations,
            "c8_pred": self.c8,
            "cross_window_pred": self.cross_window,
            "c5_pred_at_zero": float(self.c5[0, 0]),
            "plateau_covariance": self.plateau_covariance,
            "plateau_stderr": self.plateau_stderr,
            "max_variance": float(np.max(self.diagonal())),
        }


def c5_magnitude(spectrum: HFSpectrum, A: Observable, pi: StatOperator, delta: float,
                 grid: TimeGrid) -> np.ndarray:
    """
    Σ_k 1/(2πρ_kΔ) Σ_{m,n∈k} [ΠA]_mn([AΠ]_nm + [AΠ]_mn) · exp(−(t1²+t2²)Δ²/2)
    """
    partition = partition_windows(spectrum, pi, delta)
    pa = pi.matrix @ A.matrix
    ap = A.matrix @ pi.matrix
    total = 0.0
    for k, members in enumerate(partition.members):
        if members.size == 0:
            continue
        block = np.ix_(members, members)
        total += np.sum(pa[block] * (ap[block].T + ap[block])).real / (
            2.0 * np.pi * partition.rho[k] * delta
        )
    t = grid.absolute
    decay = np.exp(-0.5 * delta ** 2 * (t[:, None] ** 2 + t[None, :] ** 2))
    return float(total) * decay


def c8_magnitude(spectrum: HFSpectrum, A: Observable, pi: StatOperator, delta: float) -> float:
    """
    Σ_{k1,k2} |Σ_{n∈k1, m∈k2} A_mn Π_mn|² / ((2π)² ρ_k1 ρ_k2 Δ²)

    A、Π 为复厄米矩阵时块和是复数，取模方。
    """
    partition = partition_windows(spectrum, pi, delta)
    membership = np.zeros((partition.size, spectrum.n))
    for k, members in enumerate(partition.members):
        membership[k, members] = 1.0
    blocks = membership @ (A.matrix * pi.matrix) @ membership.T
    scale = 2.0 * np.pi * delta * np.sqrt(np.outer(partition.rho, partition.rho))
    return float(np.sum(np.abs(blocks / scale) ** 2))


def _window_pair_kernel(spectrum: HFSpectrum, partition: WindowPartition,
                        envelope: EnvelopeF) -> np.ndarray:
    """κ_k = 能窗 k 内所有 (m, m') 的 K(ℰ_m − ℰ_m') 平均值 / ρ_k"""
    kappa = np.zeros(partition.size)
    for k, members in enumerate(partition.members):
        if members.size:
            levels = spectrum.levels[members]
            kappa[k] = envelope.pair_profile(np.subtract.outer(levels, levels)).mean() / partition.rho[k]
    return kappa


def cross_window_magnitude(spectrum: HFSpectrum, A: Observable, pi: StatOperator,
                           envelope: EnvelopeF, symmetry: str = "orthogonal") -> float:
    """
    平台区等时方差中跨能窗（k1 ≠ k2）的部分

    两列本征向量 α、β 各自交叉缩并的配对之和，核在能窗内取常数 κ_k：

        正交类: Σ_{k1≠k2} κ_k1 κ_k2 [ S(|A|²)₁₂ S(|Π|²)₂₁ + Σ (A₁₂A₂₁)∘(Π₁₂Π₂₁)
                                      + Σ (A₁₂Π₁₂ᵀ)∘(A₂₁ᵀΠ₂₁) + S(A∘Π)₁₂ S(A∘Π)₂₁ ]
        幺正类: 只有第一项

    X₁₂ 为 m∈k1、n∈k2 的子块，S 为子块元素之和；最后一项即 c8 的块和乘积。
    适用于本征值刚性的谱（t 远小于 Heisenberg 时间）；A、Π 都对角时为 0。
    """
    partition = partition_windows(spectrum, pi, envelope.delta)
    kappa = _window_pair_kernel(spectrum, partition, envelope)
    a = A.matrix
    p = pi.matrix
    total = 0.0
    for k1, first in enumerate(partition.members):
        for k2, second in enumerate(partition.members):
            if k1 == k2 or first.size == 0 or second.size == 0:
                continue
            a12 = a[np.ix_(first, second)]
            p21 = p[np.ix_(second, first)]
            if not (np.any(a12) and np.any(p21)):
                continue
            a21 = a[np.ix_(second, first)]
            p12 = p[np.ix_(first, second)]
            value = np.sum(np.abs(a12) ** 2) * np.sum(np.abs(p21) ** 2)
            if symmetry == "orthogonal":
                value = (
                    value
                    + np.sum((a12 @ a21) * (p12 @ p21))
                    + np.sum((a12 @ p12.T) * (a21.T @ p21))
                    + np.sum(a12 * p12) * np.sum(a21 * p21)
                )
            total += kappa[k1] * kappa[k2] * float(np.real(value))
    return total


def plateau_mask(grid: TimeGrid, start: float) -> np.ndarray:
    """t ≥ start/Δ 的时间点"""
    scaled = grid.in_inverse_delta
    if scaled is None:
        raise ParameterError("时间网格缺少 Δ，无法确定平台区")
    return scaled >= start - 1e-12


def covariance_from_samples(samples: SampleSet, c5: np.ndarray, c8: float,
                            plateau_start: float | None = None,
                            cross_window: float | None = None) -> CorrelationEstimate:
    """
    无偏双时协方差估计，逐元素标准误取乘积的样本标准差 / √R

    plateau_covariance 为平台区 (t ≥ plateau_start/Δ) 上等时方差的平均。
    """
    values = samples.values
    count = values.shape[0]
    if count < MIN_CORRELATION_REALIZATIONS:
        raise InsufficientDataError(
            f"关联函数至少需要 {MIN_CORRELATION_REALIZATIONS} 次实现，实际 {count}"
        )
    centered = values - values.mean(axis=0)
    covariance = centered.T @ centered / (count - 1)
    products = centered[:, :, None] * centered[:, None, :]
    stderr = products.std(axis=0, ddof=1) / np.sqrt(count)
    estimate = CorrelationEstimate(grid=samples.grid, covariance=covariance, stderr=stderr,
                                   c5=c5, c8=c8, realizations=count, cross_window=cross_window)
    if plateau_start is not None:
        mask = plateau_mask(samples.grid, plateau_start)
        if np.any(mask):
            estimate.plateau_covariance = float(np.diag(covariance)[mask].mean())
            estimate.plateau_stderr = float(np.sqrt(np.mean(np.diag(stderr)[mask] ** 2)))
    return estimate


def correlation_fn(
    spectrum: HFSpectrum,
    spec: EnsembleSpec,
    A: Observable,
    pi: StatOperator,
    grid: TimeGrid,
    realizations: int,
    master_seed: int,
    delta: float,
    workers: int = 1,
    plateau_start: float | None = 4.0,
) -> CorrelationEstimate:
    """
    ⟨Tr(Aρ(t1)) Tr(Aρ(t2))⟩ − ⟨Tr(Aρ(t1))⟩⟨Tr(Aρ(t2))⟩ 的蒙特卡洛估计，附带解析的 c5 / c8 / 跨能窗量级

    Raises:
        InsufficientDataError: realizations < 10
    """
    if realizations < MIN_CORRELATION_REALIZATIONS:
        raise InsufficientDataError(
            f"关联函数至少需要 {MIN_CORRELATION_REALIZATIONS} 次实现，实际 {realizations}"
        )
    envelope = spec.envelope if spec.route == "synthetic" else EnvelopeF(delta=delta)
    samples = sample_trajectories(spectrum, spec, A, pi, grid, realizations, master_seed, workers)
    return covariance_from_samples(
        samples,
        c5_magnitude(spectrum, A, pi, delta, grid),
        c8_magnitude(spectrum, A, pi, delta),
        plateau_start,
        cross_window_magnitude(spectrum, A, pi, envelope, spec.symmetry),
    )


@dataclass
class PlateauStatistics:
    """每次实现在平台区的时间平均值的系综统计"""

    mean: float
    spread: float
    stderr: float
    realizations: int


def plateau_statistics(samples: SampleSet, start: float = 4.0) -> PlateauStatistics:
    mask = plateau_mask(samples.grid, start)
    if not np.any(mask):
        raise ParameterError("时间网格没有覆盖平台区")
    per_realization = samples.values[:, mask].mean(axis=1)
    count = per_realization.size
    spread = float(per_realization.std(ddof=1)) if count > 1 else 0.0
    return PlateauStatistics(mean=float(per_realization.mean()), spread=spread,
                             stderr=spread / np.sqrt(count), realizations=count)


# ---------------------------------------------------------------------------
# 传播子探针
# ---------------------------------------------------------------------------

def survival_probe(real: Realization, state: int, grid: TimeGrid) -> np.ndarray:
    """HF 态 |m⟩ 的存活概率 |⟨m|U(t)|m⟩|²"""
    if not 0 <= state < real.n:
        raise RangeError(f"态 {state} 超出 0..{real.n - 1}")
    weights = np.abs(real.transform[state, :]) ** 2
    amplitude = np.exp(-1j * np.outer(grid.absolute, real.eigenvalues)) @ weights
    return np.abs(amplitude) ** 2


def central_rows(n: int, fraction: float = 0.2) -> np.ndarray:
    count = max(1, int(n * fraction))
    start = (n - count) // 2
    return np.arange(start, start + count)


def propagator_diagonal(real: Realization, spectrum: HFSpectrum, grid: TimeGrid,
                        rows: np.ndarray) -> np.ndarray:
    """去掉 HF 相位后的 U(t)_mm，在给定行上取平均（复数）"""
    times = grid.absolute
    weights = np.abs(real.transform[rows, :]) ** 2
    diag = weights @ np.exp(-1j * np.outer(real.eigenvalues, times))
    diag *= np.exp(1j * np.outer(spectrum.levels[rows], times))
    return diag.mean(axis=0)


def sampled_propagator_diagonal(
    spectrum: HFSpectrum,
    spec: EnsembleSpec,
    grid: TimeGrid,
    realizations: int,
    master_seed: int,
    workers: int = 1,
) -> Trajectory:
    """⟨U(t)_mm⟩ 衰减因子的蒙特卡洛估计（谱中心 20% 的行）"""
    rows = central_rows(spectrum.n)

    def task(index: int) -> np.ndarray:
        real = realize(spectrum, spec, realization_rng(master_seed, index))
        return propagator_diagonal(real, spectrum, grid, rows)

    values = ordered_map(task, list(range(realizations)), workers)
    mean, stderr, count = ordered_mean_std([v.real for v in values])
    imag = float(np.max(np.abs(np.mean([v.imag for v in values], axis=0))))
    return Trajectory(grid=grid, mean=mean, stderr=stderr,
                      provenance="single" if count == 1 else "monte_carlo",
                      realizations=count, extras={"mean_imag": imag})


@dataclass
class PairCumulant:
    """⟨U_mn(t1) U_mn(t2)⟩ − ⟨U_mn(t1)⟩⟨U_mn(t2)⟩（m ≠ n，去掉 HF 相位后对态对平均）"""

    real: float
    imag: float
    stderr_real: float
    stderr_imag: float
    pairs: int
    realizations: int

    def consistent_with_zero(self, sigmas: float = 3.0) -> bool:
        return (abs(self.real) <= sigmas * self.stderr_real
                and abs(self.imag) <= sigmas * self.stderr_imag)

    def to_dict(self) -> dict[str, Any]:
        return {
            "real": self.real,
            "imag": self.imag,
            "stderr_real": self.stderr_real,
            "stderr_imag": self.stderr_imag,
            "pairs": self.pairs,
            "realizations": self.realizations,
        }


def state_pairs(n: int, rows: int = 200, max_offset: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """谱中心附近的态对 (m, m + d)，d = 1..max_offset"""
    usable = n - max_offset
    if usable < 1:
        raise InsufficientDataError(f"维度 {n} 太小，无法构造态对")
    count = min(rows, usable)
    start = (usable - count) // 2
    first = np.arange(start, start + count)
    m = np.repeat(first, max_offset)
    d = np.tile(np.arange(1, max_offset + 1), first.size)
    return m, m + d


def pair_products(real: Realization, spectrum: HFSpectrum, t1: float, t2: float,
                  pairs: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m, n = pairs
    u1 = real.propagator(t1)[m, n]
    u2 = real.propagator(t2)[m, n]
    phase = np.exp(0.5j * (spectrum.levels[m] + spectrum.levels[n]) * (t1 + t2))
    return u1 * u2 * phase, u1, u2


def pair_cumulant(
    spectrum: HFSpectrum,
    spec: EnsembleSpec,
    t1: float,
    t2: float,
    realizations: int,
    master_seed: int,
    workers: int = 1,
) -> PairCumulant:
    """
    不带复共轭的传播子对关联的累积量估计

    正交类中它是 O(1/N_Δ) 的正量；幺正类中应与 0 一致。
    """
    if realizations < 2:
        raise InsufficientDataError("至少需要两次实现")
    pairs = state_pairs(spectrum.n)

    def task(index: int):
        real = realize(spectrum, spec, realization_rng(master_seed, index))
        return pair_products(real, spectrum, t1, t2, pairs)

    results = ordered_map(task, list(range(realizations)), workers)
    products = np.array([r[0].mean() for r in results])
    u1 = np.mean([r[1] for r in results], axis=0)
    u2 = np.mean([r[2] for r in results], axis=0)
    m, n = pairs
    phase = np.exp(0.5j * (spectrum.levels[m] + spectrum.levels[n]) * (t1 + t2))
    value = products.mean() - np.mean(u1 * u2 * phase)
    count = products.size
    return PairCumulant(
        real=float(value.real),
        imag=float(value.imag),
        stderr_real=float(products.real.std(ddof=1) / np.sqrt(count)),
        stderr_imag=float(products.imag.std(ddof=1) / np.sqrt(count)),
        pairs=int(m.size),
        realizations=count,
    )


# ---------------------------------------------------------------------------
# 热化判定
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    """
    判定阈值

    plateau_start: 平台区起点（1/Δ 为单位）
    tol_rel: 平台与平衡值的相对容差
    stderr_factor: 标准误倍数
    fluct_factor: 平台区时间涨落允许的标准误倍数
    min_extent: 网格至少覆盖的时间（1/Δ 为单位）
    comparison_start: 蒙特卡洛与解析比较的起点（1/Δ 为单位）
    """

    plateau_start: float = 4.0
    tol_rel: float = 0.05
    stderr_factor: float = 3.0
    fluct_factor: float = 3.0
    min_extent: float = 5.0
    comparison_start: float = 0.5


@dataclass
class Verdict:
    """热化判定结果"""

    plateau: float
    plateau_stderr: float
    equilibrium: float
    relative_deviation: float
    fluctuation_level: float
    fluctuation_limit: float
    verdict: VerdictLabel
    relaxation: RelaxationFit
    analytic_plateau: float
    analytic_agreement: float
    ensemble_spread: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "plateau": self.plateau,
            "plateau_stderr": self.plateau_stderr,
            "equilibrium": self.equilibrium,
            "relative_deviation": self.relative_deviation,
            "fluctuation_level": self.fluctuation_level,
            "fluctuation_limit": self.fluctuation_limit,
            "verdict": self.verdict,
            "relaxation": self.relaxation.to_dict(),
            "analytic_plateau": self.analytic_plateau,
            "analytic_agreement": self.analytic_agreement,
            "ensemble_spread": self.ensemble_spread,
        }


def agreement_fraction(mc: Trajectory, analytic: Trajectory, start: float,
                       sigmas: float = 3.0) -> float:
    """t ≥ start/Δ 上蒙特卡洛与解析值相差不超过 sigmas 个合并标准误的时间点比例"""
    mask = plateau_mask(mc.grid, start)
    if not np.any(mask):
        return float("nan")
    combined = np.sqrt(mc.stderr[mask] ** 2 + analytic.stderr[mask] ** 2)
    diff = np.abs(mc.mean[mask] - analytic.mean[mask])
    return float(np.mean(diff <= sigmas * combined + 1e-12))


def thermalization_verdict(
    mc: Trajectory,
    analytic: Trajectory,
    eq: float,
    corr: CorrelationEstimate | None,
    thresholds: Thresholds = Thresholds(),
    relaxation: Trajectory | None = None,
) -> Verdict:
    """
    判定 ⟨Tr(Aρ(t))⟩ 是否趋于平衡值

    平台 = t ≥ plateau_start/Δ 上蒙特卡洛均值的平均；
    平台内的时间涨落超过 fluct_factor·标准误时判为 inconclusive，
    否则 |平台 − eq| ≤ max(stderr_factor·标准误, tol_rel·|eq|) 时判为 thermalizes。
    弛豫包络拟合默认使用 mc，也可以传入单独的探针轨迹。

    Raises:
        ParameterError: 两条轨迹网格不同，或网格未覆盖 min_extent/Δ
    """
    if mc.grid.size != analytic.grid.size or not np.allclose(mc.grid.absolute,
                                                             analytic.grid.absolute):
        raise ParameterError("蒙特卡洛与解析轨迹必须共用时间网格")
    scaled = mc.grid.in_inverse_delta
    if scaled is None:
        raise ParameterError("时间网格缺少 Δ")
    if scaled[-1] < thresholds.min_extent - 1e-12:
        raise ParameterError(
            f"时间网格只到 {scaled[-1]:.3g}/Δ，至少需要 {thresholds.min_extent}/Δ"
        )
    mask = plateau_mask(mc.grid, thresholds.plateau_start)
    plateau = float(mc.mean[mask].mean())
    plateau_stderr = float(np.sqrt(np.mean(mc.stderr[mask] ** 2)))
    fluctuation = float(mc.mean[mask].std())
    fluct_limit = max(thresholds.fluct_factor * plateau_stderr, 1e-9)
    deviation = abs(plateau - eq)
    tolerance = max(thresholds.stderr_factor * plateau_stderr, thresholds.tol_rel * abs(eq))

    if fluctuation > fluct_limit:
        label: VerdictLabel = "inconclusive"
    elif deviation <= tolerance:
        label = "thermalizes"
    else:
        label = "does_not_thermalize"

    source = relaxation if relaxation is not None else mc
    fit = fit_relaxation(source.grid.absolute, source.mean, guess_tau=1.0 / mc.grid.delta)
    spread = None
    if corr is not None and corr.plateau_covariance is not None:
        spread = float(np.sqrt(max(corr.plateau_covariance, 0.0)))
    return Verdict(
        plateau=plateau,
        plateau_stderr=plateau_stderr,
        equilibrium=float(eq),
        relative_deviation=deviation / abs(eq) if eq != 0 else float("inf") if deviation else 0.0,
        fluctuation_level=fluctuation,
        fluctuation_limit=fluct_limit,
        verdict=label,
        relaxation=fit,
        analytic_plateau=float(analytic.mean[mask].mean()),
        analytic_agreement=agreement_fraction(mc, analytic, thresholds.comparison_start,
                                              thresholds.stderr_factor),
        ensemble_spread=spread,
    )


def verdict_inputs_from_partition(partition: WindowPartition, A: Observable) -> dict[str, Any]:
    """报告里用到的能窗量：占据的能窗、p_k 加权平衡值"""
    occupied = partition.occupied(1e-12)
    return {
        "occupied_windows": occupied.tolist(),
        "mixture_value": mixture_value(partition, A),
    }


def trajectory_rows(mc: Trajectory, analytic: Trajectory, eq: float) -> list[Sequence[float]]:
    """trajectory.csv 的数据行"""
    scaled = mc.grid.in_inverse_delta
    first = analytic.extras["first_term"]
    exact = analytic.extras["asymptote_exact"]
    window = analytic.extras["asymptote_window"]
    rows = []
    for i, t in enumerate(mc.grid.absolute):
        rows.append((
            t,
            None if scaled is None else scaled[i],
            mc.mean[i],
            mc.stderr[i],
            first[i],
            exact,
            window,
            eq,
        ))
    return rows


def correlation_rows(corr: CorrelationEstimate) -> list[Sequence[float]]:
    """correlation.csv 的数据行（t1 ≤ t2）"""
    times = corr.grid.absolute
    rows = []
    for i, t1 in enumerate(times):
        for j in range(i, times.size):
            rows.append((t1, times[j], corr.covariance[i, j], corr.stderr[i, j],
                         corr.c5[i, j], corr.c8,
                         float("nan") if corr.cross_window is None else corr.cross_window))
    return rows


def energy_spread(real: Realization, pi: StatOperator) -> tuple[float, float]:
    """单次实现中 Tr(HΠ) 与 Tr(H²Π) − Tr(HΠ)²"""
    _check_dims(real.n, pi)
    o = real.transform
    weights = np.einsum("ma,mn,na->a", o.conj(), pi.matrix, o).real
    mean = float(np.dot(weights, real.eigenvalues))
    variance = float(np.dot(weights, (real.eigenvalues - mean) ** 2))
    return mean, variance
