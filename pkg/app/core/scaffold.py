"""
Hartree-Fock 骨架 - 能级、能级密度、可观测量 A、统计算符 Π、能窗划分与能量矩
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Literal

import numpy as np
from scipy import linalg

from app.core.errors import (
    EmptySpectrumError,
    OrderingError,
    ParameterError,
    RangeError,
    ShapeError,
)
from app.tools.artifacts import encode_array

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
TIE_EPSILON = 1e-12

DensityKind = Literal["constant", "exponential"]
ObservableKind = Literal[
    "identity", "diagonal_profile", "window_projector", "banded_random", "window_coherence"
]
StatOperatorKind = Literal[
    "pure_hf",
    "window_uniform",
    "boltzmann_diagonal",
    "random_psd_window",
    "cross_window_pure",
    "window_mixture",
]

OBSERVABLE_KINDS: tuple[str, ...] = (
    "identity", "diagonal_profile", "window_projector", "banded_random", "window_coherence",
)
STAT_OPERATOR_KINDS: tuple[str, ...] = (
    "pure_hf",
    "window_uniform",
    "boltzmann_diagonal",
    "random_psd_window",
    "cross_window_pure",
    "window_mixture",
)


@dataclass(frozen=True)
class DensityModel:
    """
    平滑能级密度 ρ(E)

    constant:    ρ(E) = rho0
    exponential: ρ(E) = rho0 · exp(E / T)

    origin 是累计能级数（staircase）为零的能量点，也是生成谱的下边界。
    """

    kind: DensityKind = "constant"
    rho0: float = 1.0
    T: float | None = None
    origin: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ParameterError(f"未知的密度类型: {self.kind}")
        if not self.rho0 > 0:
            raise ParameterError(f"rho0 必须为正: {self.rho0}")
        if self.kind == "exponential":
            if self.T is None or not self.T > 0:
                raise ParameterError(f"指数密度需要正的 T: {self.T}")

    def density(self, energy):
        """ρ(E)"""
        energy = np.asarray(energy, dtype=float)
        if self.kind == "constant":
            return np.full_like(energy, self.rho0)
        return self.rho0 * np.exp(energy / self.T)

    def staircase(self, energy):
        """∫_origin^E ρ，即平滑的累计能级数"""
        energy = np.asarray(energy, dtype=float)
        if self.kind == "constant":
            return self.rho0 * (energy - self.origin)
        return self.rho0 * self.T * (np.exp(energy / self.T) - np.exp(self.origin / self.T))

    def inverse_staircase(self, count):
        """staircase 的反函数：第 count 个能级的平滑位置"""
        count = np.asarray(count, dtype=float)
        if self.kind == "constant":
            return self.origin + count / self.rho0
        return self.T * np.log(np.exp(self.origin / self.T) + count / (self.rho0 * self.T))

    def mean_density(self, lo: float, hi: float) -> float:
        """[lo, hi) 内的平均密度"""
        if hi <= lo:
            raise ParameterError(f"区间为空: [{lo}, {hi})")
        return float((self.staircase(hi) - self.staircase(lo)) / (hi - lo))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "rho0": self.rho0, "T": self.T, "origin": self.origin}


@dataclass(frozen=True)
class HFSpectrum:
    """
    可积骨架：严格递增的能级 ℰ_m 与密度模型

    levels 只读，可以在多个线程间共享。
    """

    levels: np.ndarray
    density: DensityModel
    emin: float
    emax: float

    def __post_init__(self):
        levels = np.array(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size == 0:
            raise EmptySpectrumError("能级列表为空")
        if np.any(np.diff(levels) <= 0):
            raise OrderingError("能级必须严格递增")
        if levels[0] < self.emin or levels[-1] > self.emax:
            raise RangeError(f"能级超出 [{self.emin}, {self.emax}]")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_levels(
        cls,
        levels,
        density: DensityModel,
        emin: float | None = None,
        emax: float | None = None,
    ) -> "HFSpectrum":
        """
        由用户给定的能级构造骨架

        Args:
            levels: 非降序能级
            density: 平滑密度模型
            emin, emax: 建模能量范围，默认取首末能级

        Raises:
            OrderingError: 能级未排序
        """
        levels = np.array(levels, dtype=float)
        if levels.ndim != 1 or levels.size == 0:
            raise EmptySpectrumError("能级列表为空")
        gaps = np.diff(levels)
        if np.any(gaps < 0):
            raise OrderingError("输入能级未按升序排列")
        ties = int(np.count_nonzero(gaps == 0))
        if ties:
            spacing = (levels[-1] - levels[0]) / max(levels.size - 1, 1)
            eps = TIE_EPSILON * (spacing if spacing > 0 else 1.0)
            for i in range(1, levels.size):
                if levels[i] <= levels[i - 1]:
                    levels[i] = levels[i - 1] + eps
            logger.warning("检测到 %d 个简并能级，已按 %.3g 微扰拆分", ties, eps)
        lo = float(levels[0]) if emin is None else float(emin)
        hi = float(levels[-1]) if emax is None else float(emax)
        return cls(levels=levels, density=density, emin=lo, emax=hi)

    @property
    def n(self) -> int:
        return int(self.levels.size)

    @property
    def mean_spacing(self) -> float:
        if self.n < 2:
            return 1.0 / float(self.density.density(self.levels[0]))
        return float((self.levels[-1] - self.levels[0]) / (self.n - 1))

    @property
    def center(self) -> float:
        return 0.5 * (self.emin + self.emax)

    def hamiltonian(self) -> np.ndarray:
        """H_HF 在 HF 基中的对角矩阵"""
        return np.diag(self.levels)

    def window_indices(self, lo: float, hi: float) -> np.ndarray:
        """能量落在 [lo, hi) 内的能级下标"""
        start = int(np.searchsorted(self.levels, lo, side="left"))
        stop = int(np.searchsorted(self.levels, hi, side="left"))
        return np.arange(start, stop)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "emin": self.emin,
            "emax": self.emax,
            "density": self.density.to_dict(),
            "levels": encode_array(self.levels),
        }


def build_hf_spectrum(density: DensityModel, count: int, seed: int) -> HFSpectrum:
    """
    生成 Poisson 分布的 HF 能级

    在展开（unfolded）坐标中取独立指数间距，再通过 inverse_staircase 映射到目标密度，
    因此局部平均间距为 1/ρ(E)。

    Args:
        density: 密度模型
        count: 能级数
        seed: 随机种子

    Returns:
        HFSpectrum
    """
    if count == 0:
        raise EmptySpectrumError("count = 0，无法生成能谱")
    if count < 0:
        raise ParameterError(f"count 必须为正整数: {count}")
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(size=count + 1)
    unfolded = np.cumsum(gaps)
    unfolded *= (count + 1) / unfolded[-1]
    levels = density.inverse_staircase(unfolded[:count])
    emax = float(density.inverse_staircase(count + 1))
    return HFSpectrum(levels=levels, density=density, emin=float(density.origin), emax=emax)


# ---------------------------------------------------------------------------
# 能窗
# ---------------------------------------------------------------------------

def window_count(spectrum: HFSpectrum, delta: float) -> int:
    return max(1, int(np.ceil((spectrum.emax - spectrum.emin) / delta - 1e-12)))


def window_bounds(spectrum: HFSpectrum, delta: float, k: int) -> tuple[float, float]:
    """第 k 个能窗 [emin + kΔ, emin + (k+1)Δ)"""
    if not delta > 0:
        raise ParameterError(f"Δ 必须为正: {delta}")
    if k < 0 or k >= window_count(spectrum, delta):
        raise RangeError(f"能窗 {k} 超出能谱范围")
    lo = spectrum.emin + k * delta
    return lo, lo + delta


def select_indices(spectrum: HFSpectrum, params: dict[str, Any]) -> np.ndarray:
    """
    按参数选出一组 HF 态

    支持三种写法：
      indices=(first, last)   闭区间下标
      energy=(lo, hi)         能量区间 [lo, hi)
      window=k, delta=Δ       第 k 个能窗
    """
    n = spectrum.n
    if "indices" in params:
        first, last = (int(v) for v in params["indices"])
        if first < 0 or last >= n or first > last:
            raise RangeError(f"下标区间 {first}..{last} 超出 0..{n - 1}")
        return np.arange(first, last + 1)
    if "energy" in params:
        lo, hi = (float(v) for v in params["energy"])
        if hi <= lo or hi <= spectrum.emin or lo >= spectrum.emax:
            raise RangeError(f"能量区间 [{lo}, {hi}) 不在能谱范围内")
        idx = spectrum.window_indices(lo, hi)
    elif "window" in params:
        if "delta" not in params:
            raise ParameterError("window 选择需要同时给出 delta")
        lo, hi = window_bounds(spectrum, float(params["delta"]), int(params["window"]))
        idx = spectrum.window_indices(lo, hi)
    else:
        raise ParameterError("需要 indices、energy 或 window 之一")
    if idx.size == 0:
        raise RangeError("所选能窗内没有能级")
    return idx


# ---------------------------------------------------------------------------
# 可观测量
# ---------------------------------------------------------------------------

def _check_hermitian(matrix: np.ndarray, what: str):
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"{what} 必须是方阵，实际形状 {matrix.shape}")
    if matrix.size and np.max(np.abs(matrix - matrix.conj().T)) > HERMITIAN_TOL:
        raise ParameterError(f"{what} 不是厄米矩阵")


@dataclass(frozen=True)
class Observable:
    """HF 基中的可观测量 A"""

    matrix: np.ndarray
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _check_hermitian(self.matrix, "可观测量")
        self.matrix.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return _is_diagonal(self.matrix)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": _plain_params(self.params), "n": self.n}


DiagonalProfile = Callable[[np.ndarray], np.ndarray]


def named_profile(name: str, spectrum: HFSpectrum, center: float | None = None,
                  width: float | None = None) -> DiagonalProfile:
    """内置的平滑对角轮廓 a(ℰ)"""
    c = spectrum.center if center is None else float(center)
    w = 0.5 * (spectrum.emax - spectrum.emin) if width is None else float(width)
    if not w > 0:
        raise ParameterError(f"轮廓宽度必须为正: {w}")
    if name == "energy":
        return lambda e: np.asarray(e, dtype=float)
    if name == "ramp":
        return lambda e: (np.asarray(e, dtype=float) - c) / w
    if name == "tanh":
        return lambda e: np.tanh((np.asarray(e, dtype=float) - c) / w)
    raise ParameterError(f"未知的轮廓: {name}")


def _uniform_vector(n: int, idx: np.ndarray) -> np.ndarray:
    vec = np.zeros(n)
    vec[idx] = 1.0 / np.sqrt(idx.size)
    return vec


def build_observable(
    kind: ObservableKind,
    params: dict[str, Any] | None,
    spectrum: HFSpectrum,
    seed: int | None = None,
) -> Observable:
    """
    构造 HF 基中的可观测量

    Args:
        kind: identity / diagonal_profile / window_projector / banded_random / window_coherence
        params: 与 kind 对应的参数
        spectrum: HF 骨架
        seed: banded_random 使用的随机种子

    Returns:
        Observable
    """
    params = dict(params or {})
    n = spectrum.n
    if kind == "identity":
        matrix = np.eye(n)
    elif kind == "diagonal_profile":
        profile = params.get("profile", "energy")
        if isinstance(profile, str):
            profile = named_profile(profile, spectrum, params.get("center"), params.get("width"))
        values = np.asarray(profile(spectrum.levels), dtype=float)
        if values.shape != (n,) or not np.all(np.isfinite(values)):
            raise ParameterError("对角轮廓必须对每个能级返回一个有限实数")
        matrix = np.diag(values)
    elif kind == "window_projector":
        idx = select_indices(spectrum, params)
        matrix = np.zeros((n, n))
        matrix[idx, idx] = 1.0
    elif kind == "banded_random":
        band = int(params.get("band", 1))
        scale = float(params.get("scale", 1.0))
        if band < 0:
            raise ParameterError(f"band 不能为负: {band}")
        rng = np.random.default_rng(seed)
        raw = rng.normal(0.0, scale, size=(n, n))
        if params.get("symmetry", "orthogonal") == "unitary":
            raw = raw + 1j * rng.normal(0.0, scale, size=(n, n))
        offsets = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        raw = np.where(offsets <= band, raw, 0.0)
        matrix = 0.5 * (raw + raw.conj().T)
    elif kind == "window_coherence":
        first = select_indices(spectrum, params["first"])
        second = select_indices(spectrum, params["second"])
        if np.intersect1d(first, second).size:
            raise ParameterError("window_coherence 的两个能窗不能重叠")
        phi1 = _uniform_vector(n, first)
        phi2 = _uniform_vector(n, second)
        matrix = np.outer(phi1, phi2) + np.outer(phi2, phi1)
    else:
        raise ParameterError(f"未知的可观测量类型: {kind}")
    return Observable(matrix=matrix, kind=kind, params=params)


# ---------------------------------------------------------------------------
# 统计算符
# ---------------------------------------------------------------------------

def _is_diagonal(matrix: np.ndarray) -> bool:
    return not np.any(matrix - np.diag(np.diag(matrix)))


@dataclass(frozen=True)
class StatOperator:
    """统计算符 Π：厄米、半正定、迹为 1"""

    matrix: np.ndarray
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _check_hermitian(self.matrix, "统计算符")
        trace = np.trace(self.matrix).real
        if abs(trace - 1.0) > TRACE_TOL:
            raise ParameterError(f"统计算符的迹为 {trace!r}，应为 1")
        if _is_diagonal(self.matrix):
            eigenvalues = np.diag(self.matrix).real
        else:
            eigenvalues = linalg.eigvalsh(self.matrix)
        if eigenvalues.min() < -TRACE_TOL or eigenvalues.max() > 1.0 + TRACE_TOL:
            raise ParameterError("统计算符的本征值必须位于 [0, 1]")
        self.matrix.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def populations(self) -> np.ndarray:
        """Π_nn"""
        return np.diag(self.matrix).real.copy()

    @property
    def is_diagonal(self) -> bool:
        return _is_diagonal(self.matrix)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": _plain_params(self.params), "n": self.n}


def _weights(params: dict[str, Any], count: int) -> np.ndarray:
    weights = np.asarray(params.get("weights", [1.0] * count), dtype=float)
    if weights.shape != (count,):
        raise ParameterError(f"需要 {count} 个权重，实际 {weights.size}")
    if np.any(weights < 0):
        raise ParameterError("权重不能为负（统计算符必须半正定）")
    if not weights.sum() > 0:
        raise ParameterError("权重之和必须为正")
    return weights / weights.sum()


def build_stat_operator(
    kind: StatOperatorKind,
    params: dict[str, Any] | None,
    spectrum: HFSpectrum,
    seed: int | None = None,
) -> StatOperator:
    """
    构造统计算符 Π

    Args:
        kind: pure_hf / window_uniform / boltzmann_diagonal / random_psd_window /
              cross_window_pure / window_mixture
        params: 与 kind 对应的参数；窗口的写法见 select_indices
        spectrum: HF 骨架
        seed: random_psd_window 使用的随机种子

    Returns:
        StatOperator
    """
    params = dict(params or {})
    n = spectrum.n
    matrix = np.zeros((n, n))
    if kind == "pure_hf":
        if "m0" in params:
            m0 = int(params["m0"])
        elif "energy" in params:
            m0 = int(np.argmin(np.abs(spectrum.levels - float(params["energy"]))))
        else:
            m0 = n // 2
        if not 0 <= m0 < n:
            raise RangeError(f"m0 = {m0} 超出 0..{n - 1}")
        matrix[m0, m0] = 1.0
        params["m0"] = m0
    elif kind == "window_uniform":
        idx = select_indices(spectrum, params)
        matrix[idx, idx] = 1.0 / idx.size
    elif kind == "boltzmann_diagonal":
        beta = float(params.get("beta", 0.0))
        has_window = any(key in params for key in ("indices", "energy", "window"))
        idx = select_indices(spectrum, params) if has_window else np.arange(n)
        energies = spectrum.levels[idx]
        weights = np.exp(-beta * (energies - energies.min()))
        matrix[idx, idx] = weights / weights.sum()
    elif kind == "random_psd_window":
        idx = select_indices(spectrum, params)
        rank = int(params.get("rank", idx.size))
        if rank < 1:
            raise ParameterError(f"rank 必须为正: {rank}")
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(idx.size, rank))
        if params.get("symmetry", "orthogonal") == "unitary":
            x = x + 1j * rng.normal(size=(idx.size, rank))
            matrix = matrix.astype(complex)
        block = x @ x.conj().T
        block = 0.5 * (block + block.conj().T)
        matrix[np.ix_(idx, idx)] = block / np.trace(block).real
    elif kind == "cross_window_pure":
        selections = params.get("windows")
        if not selections or len(selections) != 2:
            raise ParameterError("cross_window_pure 需要两个能窗")
        groups = [select_indices(spectrum, sel) for sel in selections]
        if np.intersect1d(groups[0], groups[1]).size:
            raise ParameterError("cross_window_pure 的两个能窗不能重叠")
        weights = _weights(params, 2)
        phi = sum(np.sqrt(w) * _uniform_vector(n, g) for w, g in zip(weights, groups))
        matrix = np.outer(phi, phi)
    elif kind == "window_mixture":
        selections = params.get("windows")
        if not selections:
            raise ParameterError("window_mixture 至少需要一个能窗")
        groups = [select_indices(spectrum, sel) for sel in selections]
        weights = _weights(params, len(groups))
        diagonal = np.zeros(n)
        for w, g in zip(weights, groups):
            diagonal[g] += w / g.size
        matrix = np.diag(diagonal)
    else:
        raise ParameterError(f"未知的统计算符类型: {kind}")
    return StatOperator(matrix=matrix, kind=kind, params=params)


# ---------------------------------------------------------------------------
# 能窗划分与能量矩
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowPartition:
    """
    以 emin 为起点、宽度 Δ 的能窗划分

    counts[k] = N_k，rho[k] 为模型平均密度 ρ_k，p[k] = Σ_{n∈k} Π_nn。
    """

    delta: float
    edges: np.ndarray
    counts: np.ndarray
    rho: np.ndarray
    p: np.ndarray
    members: tuple[np.ndarray, ...]

    @property
    def size(self) -> int:
        return int(self.counts.size)

    def window_of_level(self, m: int) -> int:
        for k, idx in enumerate(self.members):
            if idx.size and idx[0] <= m <= idx[-1]:
                return k
        raise RangeError(f"能级 {m} 不属于任何能窗")

    def occupied(self, tol: float = 0.0) -> np.ndarray:
        """p_k > tol 的能窗编号"""
        return np.flatnonzero(self.p > tol)

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": self.delta,
            "edges": self.edges.tolist(),
            "counts": self.counts.tolist(),
            "rho": self.rho.tolist(),
            "p": self.p.tolist(),
        }


def partition_windows(spectrum: HFSpectrum, pi: StatOperator, delta: float) -> WindowPartition:
    """
    把能量轴划分为宽度 Δ 的能窗并计算 p_k

    Raises:
        ParameterError: Δ ≤ 0
        ShapeError: Π 维度与能谱不符
    """
    if not delta > 0:
        raise ParameterError(f"Δ 必须为正: {delta}")
    if pi.n != spectrum.n:
        raise ShapeError(f"Π 维度 {pi.n} 与能谱 {spectrum.n} 不符")
    count = window_count(spectrum, delta)
    edges = spectrum.emin + delta * np.arange(count + 1)
    labels = np.clip(((spectrum.levels - spectrum.emin) // delta).astype(int), 0, count - 1)
    members = tuple(np.flatnonzero(labels == k) for k in range(count))
    counts = np.array([idx.size for idx in members])
    rho = np.array([spectrum.density.mean_density(edges[k], edges[k + 1]) for k in range(count)])
    populations = pi.populations
    p = np.array([populations[idx].sum() for idx in members])
    p = np.clip(p, 0.0, 1.0)
    return WindowPartition(delta=float(delta), edges=edges, counts=counts, rho=rho, p=p,
                           members=members)


@dataclass(frozen=True)
class MomentsReport:
    """能量均值与能量展宽"""

    E: float
    hf_variance: float
    delta_sq: float
    deltaE_sq: float

    def to_dict(self) -> dict[str, float]:
        return {
            "E": self.E,
            "hf_variance": self.hf_variance,
            "delta_sq": self.delta_sq,
            "deltaE_sq": self.deltaE_sq,
        }


def energy_moments(spectrum: HFSpectrum, pi: StatOperator, delta: float) -> MomentsReport:
    """
    E = Σ ℰ_m Π_mm，δE² = [Tr(H²_HF Π) − Tr(H_HF Π)²] + Δ²
    """
    if delta < 0:
        raise ParameterError(f"Δ 不能为负: {delta}")
    if pi.n != spectrum.n:
        raise ShapeError(f"Π 维度 {pi.n} 与能谱 {spectrum.n} 不符")
    populations = pi.populations
    mean = float(np.dot(spectrum.levels, populations))
    variance = float(np.dot((spectrum.levels - mean) ** 2, populations))
    delta_sq = float(delta) ** 2
    return MomentsReport(E=mean, hf_variance=variance, delta_sq=delta_sq,
                         deltaE_sq=variance + delta_sq)


def window_trace(observable: Observable, members: np.ndarray) -> float:
    """Tr_k(A) = Σ_{n∈k} A_nn"""
    return float(np.diag(observable.matrix)[members].real.sum())


def _plain_params(params: dict[str, Any]) -> dict[str, Any]:
    """把参数整理成可以写入 JSON 的形式（回调函数只记录名称）"""
    plain = {}
    for key, value in params.items():
        if callable(value):
            plain[key] = getattr(value, "__name__", "callable")
        elif isinstance(value, np.ndarray):
            plain[key] = value.tolist()
        elif isinstance(value, tuple):
            plain[key] = list(value)
        else:
            plain[key] = value
    return plain
