"""
哈密顿量系综 - 微观路线（H = H_HF + V 后对角化）与合成路线（直接抽样本征值和本征向量）

两条路线都支持正交（GOE 类）与幺正（GUE 类）对称性。
"""
import logging
import threading
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from scipy import linalg

from app.core.errors import (
    InsufficientDataError,
    NumericError,
    ParameterError,
    ShapeError,
)
from app.core.scaffold import HFSpectrum
from app.tools.artifacts import encode_array

logger = logging.getLogger(__name__)

Symmetry = Literal["orthogonal", "unitary"]
EnvelopeKind = Literal["gaussian", "lorentzian"]
EigenvalueMode = Literal["global", "stitched"]
SeedLike = int | np.random.SeedSequence | np.random.Generator | None

SYMMETRIES: tuple[str, ...] = ("orthogonal", "unitary")
MIN_LEVELS_PER_WINDOW = 3
GOLDEN_RULE_ROWS = 100
GOLDEN_RULE_MIN_ROWS = 10

# 包络校准：固定种子，结果只取决于 (骨架, 包络, 对称类)
CALIBRATION_SEED = 20240611
CALIBRATION_ROUNDS = 8
CALIBRATION_TOLERANCE = 0.05
CALIBRATION_MIN_ROWS = 10
CALIBRATION_TARGET_ROWS = 1000
CALIBRATION_MAX_SAMPLES = 16


def _check_symmetry(symmetry: str):
    if symmetry not in SYMMETRIES:
        raise ParameterError(f"未知的对称类: {symmetry}")


@dataclass(frozen=True)
class ResidualSpec:
    """
    剩余相互作用 V 的带状稀疏结构

    Args:
        band_halfwidth: 带半宽 b（下标单位）
        fill_probability: 带内每个矩阵元非零的概率 f
        rms_strength: 非零矩阵元的均方根 v
        symmetry: orthogonal（实对称）或 unitary（复厄米）
        diagonal_fluctuations: 是否在对角线上也加随机涨落
    """

    band_halfwidth: int
    fill_probability: float = 1.0
    rms_strength: float = 0.1
    symmetry: Symmetry = "orthogonal"
    diagonal_fluctuations: bool = False

    def __post_init__(self):
        if self.band_halfwidth < 1:
            raise ParameterError(f"带半宽必须 ≥ 1: {self.band_halfwidth}")
        if not 0 < self.fill_probability <= 1:
            raise ParameterError(f"填充概率必须位于 (0, 1]: {self.fill_probability}")
        if self.rms_strength < 0:
            raise ParameterError(f"rms 强度不能为负: {self.rms_strength}")
        _check_symmetry(self.symmetry)


@dataclass(frozen=True)
class EnvelopeF:
    """
    本征向量二阶矩的包络 F，宽度 Δ

    gaussian:   标准差为 Δ 的高斯
    lorentzian: 半高全宽为 Δ 的洛伦兹
    """

    kind: EnvelopeKind = "gaussian"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "lorentzian"):
            raise ParameterError(f"未知的包络类型: {self.kind}")
        if not self.delta > 0:
            raise ParameterError(f"Δ 必须为正: {self.delta}")

    def profile(self, x):
        """能量偏移 x 处的归一化线形（对能量积分为 1）"""
        x = np.asarray(x, dtype=float)
        d = self.delta
        if self.kind == "gaussian":
            return np.exp(-0.5 * (x / d) ** 2) / (np.sqrt(2.0 * np.pi) * d)
        return d / (2.0 * np.pi * (x ** 2 + 0.25 * d ** 2))

    def pair_profile(self, x):
        """两个线形的卷积（宽度加倍），用于渐近项"""
        x = np.asarray(x, dtype=float)
        d = self.delta
        if self.kind == "gaussian":
            return np.exp(-0.25 * (x / d) ** 2) / (2.0 * np.sqrt(np.pi) * d)
        return d / (np.pi * (x ** 2 + d ** 2))

    def propagator(self, times):
        """平均传播子 ⟨U(t)⟩_mm 的衰减因子"""
        t = np.asarray(times, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-0.5 * (self.delta * t) ** 2)
        return np.exp(-0.5 * self.delta * t)

    def matrix(self, levels: np.ndarray, positions: np.ndarray, density) -> np.ndarray:
        """F_mα = profile(ℰ_m − Ē_α) / sqrt(ρ(ℰ_m) ρ(Ē_α))"""
        offsets = np.subtract.outer(levels, positions)
        weight = np.sqrt(np.outer(density.density(levels), density.density(positions)))
        return self.profile(offsets) / weight

    def sum_rule(self, levels: np.ndarray, positions: np.ndarray, density) -> np.ndarray:
        """Σ_α F_mα，远离谱边缘时应接近 1"""
        return self.matrix(levels, positions, density).sum(axis=1)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "delta": self.delta}


@dataclass(frozen=True)
class Realization:
    """
    一次对角化的结果

    transform[m, α] = O_mα（幺正类为 𝒰_mα），列是本征向量在 HF 基中的分量。
    mean_eigenvalues 只在合成路线中给出。
    """

    eigenvalues: np.ndarray
    transform: np.ndarray
    origin: Literal["microscopic", "synthetic"]
    symmetry: Symmetry
    mean_eigenvalues: np.ndarray | None = None

    def __post_init__(self):
        n = self.eigenvalues.size
        if self.transform.shape != (n, n):
            raise ShapeError(f"变换矩阵形状 {self.transform.shape} 与 {n} 个本征值不符")
        if np.any(np.diff(self.eigenvalues) < 0):
            raise ParameterError("本征值必须升序")

    @property
    def n(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def reference_eigenvalues(self) -> np.ndarray:
        """强度函数偏移使用的 Ē_α；微观路线退化为 E_α"""
        return self.eigenvalues if self.mean_eigenvalues is None else self.mean_eigenvalues

    def orthogonality_residual(self) -> float:
        """‖O†O − I‖_max"""
        gram = self.transform.conj().T @ self.transform
        return float(np.max(np.abs(gram - np.eye(self.n))))

    def propagator(self, t: float) -> np.ndarray:
        """HF 基中的 U(t)_mn = Σ_α O_mα exp(−iE_α t) O*_nα"""
        phases = np.exp(-1j * self.eigenvalues * t)
        return (self.transform * phases) @ self.transform.conj().T

    def to_payload(self, include_transform: bool = False) -> dict[str, Any]:
        payload = {
            "origin": self.origin,
            "symmetry": self.symmetry,
            "eigenvalues": encode_array(self.eigenvalues),
        }
        if self.mean_eigenvalues is not None:
            payload["mean_eigenvalues"] = encode_array(self.mean_eigenvalues)
        if include_transform:
            payload["transform_real"] = encode_array(self.transform.real)
            if np.iscomplexobj(self.transform):
                payload["transform_imag"] = encode_array(self.transform.imag)
        return payload


# ---------------------------------------------------------------------------
# 微观路线
# ---------------------------------------------------------------------------

def sample_residual(spectrum: HFSpectrum, spec: ResidualSpec, seed: SeedLike) -> np.ndarray:
    """
    抽样带状稀疏的剩余相互作用 V

    带内每个位置以概率 f 非零；正交类取实高斯，幺正类实部虚部独立（|V_mn|² 的均值为 v²），
    对角线保持为实数。
    """
    rng = np.random.default_rng(seed)
    n = spectrum.n
    band = spec.band_halfwidth
    if band >= n:
        logger.info("带半宽 %d ≥ N = %d，按满矩阵处理", band, n)
    band = min(band, n - 1)
    unitary = spec.symmetry == "unitary"
    v = np.zeros((n, n), dtype=complex if unitary else float)
    rows = np.arange(n)
    for offset in range(1, band + 1):
        count = n - offset
        filled = rng.random(count) < spec.fill_probability
        if unitary:
            values = spec.rms_strength * (rng.normal(size=count) + 1j * rng.normal(size=count))
            values /= np.sqrt(2.0)
        else:
            values = rng.normal(0.0, spec.rms_strength, size=count)
        values = np.where(filled, values, 0.0)
        v[rows[:count], rows[:count] + offset] = values
        v[rows[:count] + offset, rows[:count]] = np.conj(values)
    if spec.diagonal_fluctuations:
        filled = rng.random(n) < spec.fill_probability
        v[rows, rows] = np.where(filled, rng.normal(0.0, spec.rms_strength, size=n), 0.0)
    return v


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    """每列最大分量取为正实数"""
    pivot = np.argmax(np.abs(vectors), axis=0)
    entries = vectors[pivot, np.arange(vectors.shape[1])]
    phases = entries / np.abs(entries)
    return vectors * np.conj(phases)


def diagonalize(spectrum: HFSpectrum, v: np.ndarray) -> "Realization":
    """
    对角化 H = H_HF + V

    Raises:
        ShapeError: V 的维度与能谱不符
        NumericError: 本征求解失败，附带矩阵诊断信息
    """
    n = spectrum.n
    if v.shape != (n, n):
        raise ShapeError(f"V 的形状 {v.shape} 与能谱维度 {n} 不符")
    h = v.copy()
    h[np.diag_indices(n)] += spectrum.levels
    diagnostics = {
        "n": n,
        "finite": bool(np.all(np.isfinite(h))),
        "frobenius_norm": float(np.linalg.norm(h)) if np.all(np.isfinite(h)) else float("nan"),
    }
    if not diagnostics["finite"]:
        raise NumericError("哈密顿量含有非有限元素", diagnostics)
    try:
        eigenvalues, vectors = linalg.eigh(h)
    except (linalg.LinAlgError, ValueError) as e:
        try:
            diagnostics["condition_estimate"] = float(np.linalg.cond(h))
        except np.linalg.LinAlgError:
            diagnostics["condition_estimate"] = float("inf")
        raise NumericError(f"本征求解未收敛: {e}", diagnostics) from e
    symmetry = "unitary" if np.iscomplexobj(v) else "orthogonal"
    return Realization(
        eigenvalues=eigenvalues,
        transform=_fix_phases(vectors),
        origin="microscopic",
        symmetry=symmetry,
    )


def golden_rule_width(spectrum: HFSpectrum, v: np.ndarray, rows: int = GOLDEN_RULE_ROWS) -> float:
    """
    黄金规则宽度 Δ ≈ 2π ⟨V²_mn⟩ ρ(E)

    ⟨V²_mn⟩ 取谱中心 rows 行内所有非对角位置（包括零元素）的均方值，
    ρ 取中心行能级处的模型密度。
    """
    n = spectrum.n
    if v.shape != (n, n):
        raise ShapeError(f"V 的形状 {v.shape} 与能谱维度 {n} 不符")
    rows = min(rows, n)
    if rows < GOLDEN_RULE_MIN_ROWS:
        raise InsufficientDataError(f"平均窗口只有 {rows} 行，至少需要 {GOLDEN_RULE_MIN_ROWS} 行")
    start = (n - rows) // 2
    block = np.abs(v[start:start + rows, :]) ** 2
    diagonal = np.abs(np.diag(v)[start:start + rows]) ** 2
    mean_square = (block.sum() - diagonal.sum()) / (rows * (n - 1))
    rho = float(spectrum.density.density(spectrum.levels[start + rows // 2]))
    return float(2.0 * np.pi * mean_square * rho)


# ---------------------------------------------------------------------------
# 合成路线
# ---------------------------------------------------------------------------

def semicircle_cdf(x):
    """半圆律在 [−1, 1] 上的累积分布"""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    return (x * np.sqrt(1.0 - x ** 2) + np.arcsin(x)) / np.pi + 0.5


def gaussian_ensemble_eigenvalues(size: int, symmetry: Symmetry, rng: np.random.Generator) -> np.ndarray:
    """
    一个 GOE/GUE 矩阵的本征值，缩放到半圆 [−1, 1]

    H = (A + A†)/√2，非对角元方差为 1，谱半径 2√size。
    """
    a = rng.normal(size=(size, size))
    if symmetry == "unitary":
        a = (a + 1j * rng.normal(size=(size, size))) / np.sqrt(2.0)
    h = (a + a.conj().T) / np.sqrt(2.0)
    return linalg.eigvalsh(h) / (2.0 * np.sqrt(size))


def unfolded_goe_levels(count: int, symmetry: Symmetry, rng: np.random.Generator,
                        margin: float = 0.1) -> np.ndarray:
    """
    抽一个足够大的 GOE/GUE 谱，去掉边缘 margin 后用半圆律展开，返回 count 个单位平均间距的能级
    """
    inner = semicircle_cdf(1.0 - margin) - semicircle_cdf(-1.0 + margin)
    size = int(np.ceil(count / inner * 1.03)) + 25
    for _ in range(5):
        values = gaussian_ensemble_eigenvalues(size, symmetry, rng)
        kept = values[np.abs(values) <= 1.0 - margin]
        if kept.size >= count:
            unfolded = size * (semicircle_cdf(kept) - semicircle_cdf(-1.0 + margin))
            return unfolded[:count]
        size = int(size * 1.1) + 10
    raise NumericError("GOE 抽样得到的能级数不足", {"requested": count, "size": size})


def stitched_goe_levels(count: int, block: float, symmetry: Symmetry,
                        rng: np.random.Generator) -> np.ndarray:
    """
    逐窗拼接：每个长度为 block 的展开窗口独立地放入 Poisson(block) 个 GOE 能级

    窗口内是随机矩阵关联，窗口之间互不关联。
    """
    if block < 1:
        raise ParameterError(f"拼接窗口太短: {block}")
    levels: list[np.ndarray] = []
    total = 0
    k = 0
    while total < count:
        size = int(rng.poisson(block))
        if size == 1:
            levels.append(np.array([k * block + block * rng.random()]))
        elif size > 1:
            values = gaussian_ensemble_eigenvalues(size, symmetry, rng)
            levels.append(k * block + block * semicircle_cdf(values))
        total += size
        k += 1
    return np.sort(np.concatenate(levels))[:count]


def polar_sample(variance: np.ndarray, symmetry: Symmetry, rng: np.random.Generator) -> np.ndarray:
    """按方差矩阵独立抽样高斯矩阵元，再用极分解取最近的正交/幺正矩阵"""
    n = variance.shape[0]
    raw = rng.normal(size=variance.shape)
    if symmetry == "unitary":
        raw = (raw + 1j * rng.normal(size=variance.shape)) / np.sqrt(2.0)
    raw *= np.sqrt(variance)
    try:
        u, _, vh = linalg.svd(raw, full_matrices=False)
    except linalg.LinAlgError as e:
        raise NumericError(f"极分解失败: {e}", {"n": n}) from e
    return u @ vh


@dataclass(frozen=True)
class EnvelopeCalibration:
    """
    极分解前原始方差的修正因子

    极分解会把每一列和相邻列混合，使 |O_mα|² 的线形比原始方差更宽。
    原始方差取 F_mα · gain(|ℰ_m − Ē_α| / Δ)，gain 在 offsets 上分段线性插值
    （对数尺度），超出范围时取端点值。
    """

    offsets: np.ndarray
    log_gain: np.ndarray
    rounds: int = 0
    deviation: float = float("nan")
    averaged: int = 0

    @classmethod
    def identity(cls) -> "EnvelopeCalibration":
        return cls(offsets=np.zeros(1), log_gain=np.zeros(1))

    def gain(self, scaled_offsets) -> np.ndarray:
        u = np.abs(np.asarray(scaled_offsets, dtype=float))
        return np.exp(np.interp(u, self.offsets, self.log_gain))

    def variance(self, envelope: EnvelopeF, levels: np.ndarray, positions: np.ndarray,
                 density) -> np.ndarray:
        """校准后的原始方差矩阵"""
        scaled = np.subtract.outer(levels, positions) / envelope.delta
        return envelope.matrix(levels, positions, density) * self.gain(scaled)

    def to_dict(self) -> dict[str, Any]:
        return {
            "offsets": self.offsets.tolist(),
            "gain": np.exp(self.log_gain).tolist(),
            "rounds": self.rounds,
            "deviation": None if np.isnan(self.deviation) else self.deviation,
            "averaged": self.averaged,
        }


@dataclass(frozen=True)
class BinnedMoments:
    """
    内部行上 |O_mα|² · sqrt(ρ_m ρ_α) 按 |ℰ_m − Ē_α| / Δ 分箱的和，以及同一批矩阵元上的 F 线形之和

    ratio = target / measured；两者逐箱一致时 O 的二阶矩等于 F。
    """

    centers: np.ndarray
    rows: np.ndarray
    bins: np.ndarray
    inside: np.ndarray
    weight: np.ndarray
    target: np.ndarray

    def measure(self, transform: np.ndarray) -> np.ndarray:
        power = np.abs(transform[self.rows]) ** 2
        return np.bincount(self.bins, weights=power[self.inside] * self.weight,
                           minlength=self.centers.size)

    def ratio(self, measured: np.ndarray) -> np.ndarray:
        ratio = np.ones(self.centers.size)
        ok = (self.target > 0) & (measured > 0)
        ratio[ok] = self.target[ok] / measured[ok]
        return ratio


def _calibration_range(envelope: EnvelopeF) -> tuple[float, float]:
    """(分箱范围, 箱宽)，单位为 Δ"""
    if envelope.kind == "gaussian":
        return 3.0, 0.25
    return 6.0, 0.5


def binned_moments(spectrum: HFSpectrum, envelope: EnvelopeF,
                   positions: np.ndarray) -> BinnedMoments | None:
    """
    为二阶矩比较准备分箱；离谱边缘不足一个分箱范围的行不参与

    内部行少于 CALIBRATION_MIN_ROWS 时返回 None。
    """
    reach, width = _calibration_range(envelope)
    d = envelope.delta
    levels = spectrum.levels
    rows = np.flatnonzero((levels - reach * d >= spectrum.emin)
                          & (levels + reach * d <= spectrum.emax))
    if rows.size < CALIBRATION_MIN_ROWS:
        return None
    nbins = int(round(reach / width))
    offsets = np.subtract.outer(levels[rows], positions)
    scaled = np.abs(offsets) / d
    inside = scaled < reach
    bins = np.minimum((scaled[inside] / width).astype(int), nbins - 1)
    density = spectrum.density
    weight = np.sqrt(np.outer(density.density(levels[rows]), density.density(positions)))
    target = np.bincount(bins, weights=envelope.profile(offsets[inside]), minlength=nbins)
    return BinnedMoments(
        centers=(np.arange(nbins) + 0.5) * width,
        rows=rows,
        bins=bins,
        inside=inside,
        weight=weight[inside],
        target=target,
    )


def _fit_calibration(spectrum: HFSpectrum, envelope: EnvelopeF,
                     symmetry: Symmetry) -> EnvelopeCalibration:
    density = spectrum.density
    positions = density.inverse_staircase(np.arange(spectrum.n) + 0.5)
    moments = binned_moments(spectrum, envelope, positions)
    if moments is None:
        logger.warning("内部行不足 %d，跳过包络校准", CALIBRATION_MIN_ROWS)
        return EnvelopeCalibration.identity()

    rng = np.random.default_rng(CALIBRATION_SEED)
    samples = int(np.clip(np.ceil(CALIBRATION_TARGET_ROWS / moments.rows.size),
                          1, CALIBRATION_MAX_SAMPLES))
    log_gain = np.zeros(moments.centers.size)
    converged: list[np.ndarray] = []
    deviation = float("nan")
    for _ in range(CALIBRATION_ROUNDS):
        current = EnvelopeCalibration(offsets=moments.centers, log_gain=log_gain)
        variance = current.variance(envelope, spectrum.levels, positions, density)
        measured = sum(moments.measure(polar_sample(variance, symmetry, rng))
                       for _ in range(samples)) / samples
        ratio = moments.ratio(measured)
        deviation = float(np.max(np.abs(ratio - 1.0)))
        log_gain = log_gain + np.clip(np.log(ratio), -np.log(2.0), np.log(2.0))
        if deviation < CALIBRATION_TOLERANCE:
            converged.append(log_gain)

    # 收敛后各轮的修正只剩抽样噪声，去掉第一轮后取平均
    if converged:
        log_gain = np.mean(converged[1:] or converged, axis=0)
    calibration = EnvelopeCalibration(offsets=moments.centers, log_gain=log_gain,
                                      rounds=CALIBRATION_ROUNDS, deviation=deviation,
                                      averaged=len(converged))
    if not converged:
        logger.warning("包络校准 %d 轮后仍偏离 %.3f", CALIBRATION_ROUNDS, deviation)
    else:
        logger.info("包络校准完成，最后一轮偏离 %.3f，平均了 %d 轮", deviation, len(converged))
    return calibration


_CALIBRATIONS: dict[tuple, EnvelopeCalibration] = {}
_CALIBRATION_LOCK = threading.Lock()


def calibrate_envelope(spectrum: HFSpectrum, envelope: EnvelopeF,
                       symmetry: Symmetry) -> EnvelopeCalibration:
    """
    迭代修正原始方差，使极分解后的分箱二阶矩与 F 一致

    每轮按当前原始方差抽样、极分解、测量分箱二阶矩，把 log(F/测量) 加到 log_gain 上
    （每轮每箱最多改变 2 倍），共 CALIBRATION_ROUNDS 轮；偏离已小于 CALIBRATION_TOLERANCE 的各轮
    修正结果（第一轮除外）取平均作为最终的 log_gain。
    使用固定种子并按 (骨架, 包络, 对称类) 缓存，与实现的种子和线程调度无关。
    """
    _check_symmetry(symmetry)
    key = (spectrum.levels.tobytes(), spectrum.emin, spectrum.emax, spectrum.density,
           envelope, symmetry)
    with _CALIBRATION_LOCK:
        calibration = _CALIBRATIONS.get(key)
        if calibration is None:
            calibration = _fit_calibration(spectrum, envelope, symmetry)
            _CALIBRATIONS[key] = calibration
    return calibration


def sample_synthetic(
    spectrum: HFSpectrum,
    envelope: EnvelopeF,
    symmetry: Symmetry,
    seed: SeedLike,
    eigenvalue_mode: EigenvalueMode = "global",
    calibrate: bool = True,
) -> Realization:
    """
    合成路线：直接抽样本征值与本征向量

    本征值在展开坐标中具有 Wigner-Dyson 局部涨落，再映射到骨架的平均密度上；
    Ē_α 取平滑位置 inverse_staircase(α + ½)。变换矩阵元先按原始方差独立抽样，
    再用极分解取最近的正交/幺正矩阵。calibrate 为真时原始方差经过 calibrate_envelope 修正，
    使极分解后的二阶矩与 F_mα 一致；否则直接取 F_mα。

    Raises:
        ParameterError: 每个 Δ 窗口内的能级数少于 3
    """
    _check_symmetry(symmetry)
    rng = np.random.default_rng(seed)
    n = spectrum.n
    density = spectrum.density
    n_delta = envelope.delta * float(np.min(density.density(spectrum.levels)))
    if n_delta < MIN_LEVELS_PER_WINDOW:
        raise ParameterError(
            f"每个 Δ 窗口内只有 {n_delta:.2f} 个能级，至少需要 {MIN_LEVELS_PER_WINDOW}"
        )

    if eigenvalue_mode == "global":
        unfolded = unfolded_goe_levels(n, symmetry, rng)
    elif eigenvalue_mode == "stitched":
        unfolded = stitched_goe_levels(n, n_delta, symmetry, rng)
    else:
        raise ParameterError(f"未知的本征值模式: {eigenvalue_mode}")
    eigenvalues = np.sort(density.inverse_staircase(np.maximum(unfolded, 0.0)))
    mean_eigenvalues = density.inverse_staircase(np.arange(n) + 0.5)

    if calibrate:
        calibration = calibrate_envelope(spectrum, envelope, symmetry)
    else:
        calibration = EnvelopeCalibration.identity()
    variance = calibration.variance(envelope, spectrum.levels, mean_eigenvalues, density)
    return Realization(
        eigenvalues=eigenvalues,
        transform=polar_sample(variance, symmetry, rng),
        origin="synthetic",
        symmetry=symmetry,
        mean_eigenvalues=mean_eigenvalues,
    )


# ---------------------------------------------------------------------------
# 统一入口
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """
    一个系综的完整描述

    route = microscopic 时需要 residual；route = synthetic 时需要 envelope。
    """

    route: Literal["microscopic", "synthetic"]
    symmetry: Symmetry = "orthogonal"
    residual: ResidualSpec | None = None
    envelope: EnvelopeF | None = None
    eigenvalue_mode: EigenvalueMode = "global"
    calibrate: bool = True

    def __post_init__(self):
        _check_symmetry(self.symmetry)
        if self.route == "microscopic":
            if self.residual is None:
                raise ParameterError("微观路线需要 residual")
            if self.residual.symmetry != self.symmetry:
                raise ParameterError("residual 的对称类与系综不一致")
        elif self.route == "synthetic":
            if self.envelope is None:
                raise ParameterError("合成路线需要 envelope")
        else:
            raise ParameterError(f"未知的系综路线: {self.route}")


def realize(spectrum: HFSpectrum, spec: EnsembleSpec, seed: SeedLike) -> Realization:
    """按 EnsembleSpec 抽取一次实现"""
    rng = np.random.default_rng(seed)
    if spec.route == "microscopic":
        return diagonalize(spectrum, sample_residual(spectrum, spec.residual, rng))
    return sample_synthetic(spectrum, spec.envelope, spec.symmetry, rng, spec.eigenvalue_mode,
                            spec.calibrate)
