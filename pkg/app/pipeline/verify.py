"""
验收套件 - 用预设和小规模构造复现随机矩阵模型的定性与定量结论

fast 套件几分钟内完成；full 套件覆盖全部验收项。
"""
import filecmp
import logging
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg

from app.core.ensemble import (
    EnsembleSpec,
    EnvelopeF,
    ResidualSpec,
    diagonalize,
    golden_rule_width,
    realize,
    sample_residual,
)
from app.core.errors import ParameterError
from app.core.evolve import (
    TimeGrid,
    averaged_propagator,
    energy_spread,
    evolve_expectation,
    pair_cumulant,
    sampled_propagator_diagonal,
)
from app.core.scaffold import (
    DensityModel,
    build_hf_spectrum,
    build_observable,
    build_stat_operator,
    energy_moments,
)
from app.core.spectra import delta3, poisson_delta3, unfold
from app.pipeline.presets import get_preset
from app.pipeline.run_config import validate_config
from app.pipeline.runner import RunReport, run, write_artifacts
from app.tools.parallel import ordered_map, ordered_mean_std, realization_rng

logger = logging.getLogger(__name__)

SUITES = ("fast", "full")


@dataclass
class CheckResult:
    """一项检查：实测值、期望值与是否通过"""

    name: str
    measured: str
    expected: str
    passed: bool


def _fmt(value: float) -> str:
    return "nan" if value is None or not np.isfinite(value) else f"{value:.4g}"


def _preset_report(name: str, workers: int) -> RunReport:
    data = get_preset(name)
    return run(validate_config(data), workers=workers, write=False)


# ---------------------------------------------------------------------------
# fast
# ---------------------------------------------------------------------------

def check_exactness(workers: int) -> list[CheckResult]:
    """N = 8 的精确演化对照矩阵指数"""
    spectrum = build_hf_spectrum(DensityModel(rho0=1.0), 8, seed=11)
    v = sample_residual(spectrum, ResidualSpec(band_halfwidth=7, rms_strength=0.5), seed=12)
    real = diagonalize(spectrum, v)
    A = build_observable("banded_random", {"band": 2}, spectrum, seed=13)
    pi = build_stat_operator("random_psd_window", {"indices": (0, 7)}, spectrum, seed=14)
    grid = TimeGrid(times=np.array([0.0, 0.3, 1.0, 2.5, 7.0]))
    h = spectrum.hamiltonian() + v
    oracle = []
    for t in grid.absolute:
        u = linalg.expm(-1j * h * t)
        oracle.append(np.trace(A.matrix @ u @ pi.matrix @ u.conj().T).real)
    error = float(np.max(np.abs(evolve_expectation(real, A, pi, grid).mean - oracle)))
    identity = build_observable("identity", None, spectrum)
    unit_error = float(np.max(np.abs(evolve_expectation(real, identity, pi, grid).mean - 1.0)))
    return [
        CheckResult("精确演化 vs expm", _fmt(error), "≤ 1e-9", error <= 1e-9),
        CheckResult("A = I 时恒为 1", _fmt(unit_error), "≤ 1e-10", unit_error <= 1e-10),
    ]


def check_moments(workers: int) -> list[CheckResult]:
    """纯 HF 态的能量展宽 = Δ²，且任意 Π 的 δE ≥ Δ"""
    density = DensityModel(rho0=40.0)
    spectrum = build_hf_spectrum(density, 400, seed=21)
    spec = EnsembleSpec(route="synthetic", envelope=EnvelopeF(delta=1.0))
    pi = build_stat_operator("pure_hf", {}, spectrum)

    def task(index: int) -> np.ndarray:
        real = realize(spectrum, spec, realization_rng(21, index))
        return np.array([energy_spread(real, pi)[1]])

    variance, _, _ = ordered_mean_std(ordered_map(task, list(range(20)), workers))
    ratio = float(variance[0])
    kinds = [
        ("pure_hf", {}),
        ("window_uniform", {"window": 4, "delta": 1.0}),
        ("boltzmann_diagonal", {"beta": 0.5}),
        ("random_psd_window", {"window": 5, "delta": 1.0, "rank": 3}),
        ("cross_window_pure", {"windows": [{"window": 3, "delta": 1.0},
                                           {"window": 6, "delta": 1.0}]}),
    ]
    bound_ok = all(
        energy_moments(spectrum, build_stat_operator(k, p, spectrum, seed=22), 1.0).deltaE_sq >= 1.0
        for k, p in kinds
    )
    return [
        CheckResult("纯态能量方差 / Δ²", _fmt(ratio), "1 ± 10%", abs(ratio - 1.0) <= 0.1),
        CheckResult("δE ≥ Δ（5 种 Π）", str(bound_ok), "True", bound_ok),
    ]


def check_golden_rule(workers: int) -> list[CheckResult]:
    """黄金规则宽度、v² 标度与 α 标度不变性"""
    base = build_hf_spectrum(DensityModel(rho0=20.0), 1000, seed=31)
    residual = ResidualSpec(band_halfwidth=999, fill_probability=0.1, rms_strength=0.282)
    width = golden_rule_width(base, sample_residual(base, residual, seed=32))
    doubled = ResidualSpec(band_halfwidth=999, fill_probability=0.1, rms_strength=0.564)
    ratio = golden_rule_width(base, sample_residual(base, doubled, seed=32)) / width
    dense = build_hf_spectrum(DensityModel(rho0=40.0), 2000, seed=33)
    thinned = ResidualSpec(band_halfwidth=1999, fill_probability=0.05, rms_strength=0.282)
    alpha = golden_rule_width(dense, sample_residual(dense, thinned, seed=34)) / width
    return [
        CheckResult("黄金规则 Δ", _fmt(width), "1 ± 10%", abs(width - 1.0) <= 0.1),
        CheckResult("v 加倍后 Δ 之比", _fmt(ratio), "4", abs(ratio - 4.0) <= 1e-9),
        CheckResult("α = 2 标度后 Δ 之比", _fmt(alpha), "1 ± 25%", abs(alpha - 1.0) <= 0.25),
    ]


def check_poisson_rigidity(workers: int) -> list[CheckResult]:
    spectrum = build_hf_spectrum(DensityModel(rho0=1.0), 4000, seed=41)
    L = [5.0, 10.0, 20.0, 30.0]
    result = delta3(unfold(spectrum.levels, spectrum.density), L, reference=None)
    worst = float(np.max(np.abs(result.curve.values / poisson_delta3(np.array(L)) - 1.0)))
    return [CheckResult("Poisson Δ3 vs L/15", _fmt(worst), "相对偏差 ≤ 15%", worst <= 0.15)]


def check_bgs(workers: int) -> list[CheckResult]:
    report = _preset_report("bgs_emergence", workers)
    nns = report.nns
    scaffold = report.scaffold_nns
    if nns is None or scaffold is None:
        return [CheckResult("间距统计", "间距不足", "≥ 5000 个间距", False)]
    return [
        CheckResult("本征谱 KS(Wigner)", _fmt(nns.ks_wigner), f"< 0.05（{nns.spacings} 个间距）",
                    nns.ks_wigner < 0.05 and nns.spacings >= 5000),
        CheckResult("HF 谱 KS(Poisson)", _fmt(scaffold.ks_poisson), "< 0.03",
                    scaffold.ks_poisson < 0.03),
    ]


def check_pair_cumulant(workers: int) -> list[CheckResult]:
    """幺正类中不带复共轭的 ⟨UU⟩ 累积量与 0 一致"""
    spectrum = build_hf_spectrum(DensityModel(rho0=30.0), 300, seed=51)
    spec = EnsembleSpec(route="synthetic", symmetry="unitary", envelope=EnvelopeF(delta=1.0))
    cumulant = pair_cumulant(spectrum, spec, 0.5, 1.0, realizations=40, master_seed=52,
                             workers=workers)
    sigma = max(cumulant.stderr_real, cumulant.stderr_imag)
    return [CheckResult("GUE ⟨UU⟩ 累积量", f"{_fmt(cumulant.real)}{cumulant.imag:+.3g}i",
                        f"|·| ≤ 3σ（σ ≈ {_fmt(sigma)}）", cumulant.consistent_with_zero(3.0))]


def check_determinism(workers: int) -> list[CheckResult]:
    """同一种子在 1 个与 4 个线程下输出逐字节相同"""
    data = get_preset("smoke")
    names = ("trajectory.csv", "correlation.csv", "spectra.csv", "strength.csv")
    with tempfile.TemporaryDirectory() as tmp:
        dirs = []
        for count in (1, 4):
            target = Path(tmp) / f"w{count}"
            report = run(validate_config(data), workers=count, write=False)
            report.execution = {}
            write_artifacts(report, target)
            dirs.append(target)
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names + ("report.json",),
                                                   shallow=False)
    identical = not mismatch and not errors
    return [CheckResult("线程数 1 vs 4 的输出", f"{len(match)}/{len(names) + 1} 相同",
                        "全部相同", identical)]


# ---------------------------------------------------------------------------
# full
# ---------------------------------------------------------------------------

def check_goe_rigidity(workers: int) -> list[CheckResult]:
    density = DensityModel(rho0=20.0)
    spectrum = build_hf_spectrum(density, 1200, seed=61)
    spec = EnsembleSpec(route="synthetic", envelope=EnvelopeF(delta=1.0))

    def task(index: int) -> np.ndarray:
        real = realize(spectrum, spec, realization_rng(61, index))
        return unfold(real.eigenvalues, density)[300:900]

    sequences = ordered_map(task, list(range(6)), workers)
    L = [5.0, 10.0, 20.0, 30.0]
    result = delta3(sequences, L, reference="goe")
    worst = float(np.max(np.abs(result.curve.values / result.reference.values - 1.0)))
    return [
        CheckResult("合成 GOE Δ3 vs 参考", _fmt(worst), "相对偏差 ≤ 15%", worst <= 0.15),
        CheckResult("合成 GOE 无上翘", str(result.upbend_L), "None", result.upbend_L is None),
    ]


def check_stitched(workers: int) -> list[CheckResult]:
    report = _preset_report("stitched_rigidity", workers)
    upbend = None if report.rigidity is None else report.rigidity.upbend_L
    n_delta = report.derived["n_delta"]
    ok = upbend is not None and n_delta / 2 <= upbend <= 2 * n_delta
    return [CheckResult("拼接谱上翘位置 L", str(upbend), f"[{n_delta / 2:.3g}, {2 * n_delta:.3g}]", ok)]


def check_strength(workers: int) -> list[CheckResult]:
    gauss = _preset_report("strength_gaussian", workers).strength
    full = _preset_report("full_coupling", workers)
    lorentz = full.strength
    golden = full.derived["delta"]
    return [
        CheckResult("高斯包络拟合宽度", _fmt(gauss.gaussian_width), "1 ± 10%",
                    abs(gauss.gaussian_width - 1.0) <= 0.1),
        CheckResult("高斯包络：高斯残差 < 洛伦兹残差",
                    f"{_fmt(gauss.gaussian_residual)} / {_fmt(gauss.lorentzian_residual)}", "<",
                    gauss.gaussian_residual < gauss.lorentzian_residual),
        CheckResult("满带 V：洛伦兹残差 < 高斯残差",
                    f"{_fmt(lorentz.lorentzian_residual)} / {_fmt(lorentz.gaussian_residual)}", "<",
                    lorentz.lorentzian_residual < lorentz.gaussian_residual),
        CheckResult("满带 V：洛伦兹宽度 / 黄金规则 Δ", _fmt(lorentz.lorentzian_width / golden),
                    "1 ± 50%", abs(lorentz.lorentzian_width / golden - 1.0) <= 0.5),
    ]


def check_propagator(workers: int) -> list[CheckResult]:
    """R = 200 的 ⟨U(t)_mm⟩ 与 exp(−t²Δ²/2) 在 t ∈ [0, 3/Δ] 上逐点比较"""
    spectrum = build_hf_spectrum(DensityModel(rho0=50.0), 500, seed=71)
    envelope = EnvelopeF(delta=1.0)
    spec = EnsembleSpec(route="synthetic", envelope=envelope)
    grid = TimeGrid.uniform(3.0, 13, delta=1.0)
    sampled = sampled_propagator_diagonal(spectrum, spec, grid, 200, master_seed=72, workers=workers)
    z = np.abs(sampled.mean - averaged_propagator(spectrum, envelope, grid))
    z = np.divide(z, sampled.stderr, out=np.where(z > 1e-9, np.inf, 0.0), where=sampled.stderr > 0)
    worst = float(np.max(z))
    return [CheckResult("平均传播子 |MC − 解析| / 标准误", _fmt(worst), "≤ 3", worst <= 3.0)]


def _relaxation_checks(label: str, report: RunReport) -> list[CheckResult]:
    verdict = report.verdict
    tau = verdict.relaxation.timescale * report.derived["delta"]
    return [
        CheckResult(f"{label}：蒙特卡洛 vs 解析（3σ 内的比例）", _fmt(verdict.analytic_agreement),
                    "≥ 0.9", verdict.analytic_agreement >= 0.9),
        CheckResult(f"{label}：弛豫时间 × Δ", _fmt(tau), "1 ± 20%", abs(tau - 1.0) <= 0.2),
    ]


def _thermalizing_checks(label: str, report: RunReport) -> list[CheckResult]:
    verdict = report.verdict
    tolerance = max(3.0 * verdict.plateau_stderr, 0.05 * abs(verdict.equilibrium))
    return _relaxation_checks(label, report) + [
        CheckResult(f"{label}：平台 vs 平衡值", f"{_fmt(verdict.plateau)} / {_fmt(verdict.equilibrium)}",
                    f"±{_fmt(tolerance)}", abs(verdict.plateau - verdict.equilibrium) <= tolerance),
        CheckResult(f"{label}：判定", verdict.verdict, "thermalizes",
                    verdict.verdict == "thermalizes"),
    ]


def check_thermalizing(workers: int) -> list[CheckResult]:
    return _thermalizing_checks("GOE 单能窗", _preset_report("thermalizing", workers))


def check_gue_thermalizing(workers: int) -> list[CheckResult]:
    return _thermalizing_checks("GUE 单能窗", _preset_report("gue_thermalizing", workers))


def check_nonthermalizing(workers: int) -> list[CheckResult]:
    report = _preset_report("nonthermalizing", workers)
    verdict = report.verdict
    mixture = report.derived["mixture_value"]
    tolerance = max(3.0 * verdict.plateau_stderr,
                    report.config["thresholds"]["tol_rel"] * abs(mixture))
    return [
        CheckResult("双能窗：判定", verdict.verdict, "does_not_thermalize",
                    verdict.verdict == "does_not_thermalize"),
        CheckResult("双能窗：平台 vs p_k 加权混合", f"{_fmt(verdict.plateau)} / {_fmt(mixture)}",
                    f"±{_fmt(tolerance)}", abs(verdict.plateau - mixture) <= tolerance),
    ]


def check_lorentzian(workers: int) -> list[CheckResult]:
    report = _preset_report("lorentzian_relaxation", workers)
    fit = report.verdict.relaxation
    return [CheckResult("洛伦兹包络的弛豫形状", fit.shape, "exponential", fit.shape == "exponential")]


def check_fluctuation_scaling(workers: int) -> list[CheckResult]:
    spreads = [_preset_report(f"diagonal_fluctuations_{n}", workers).plateau.spread
               for n in (25, 50, 100)]
    ratios = [spreads[0] / spreads[1], spreads[1] / spreads[2]]
    return [
        CheckResult(f"平台涨落比 N_Δ = {a}→{b}", _fmt(r), "2 ± 30%", abs(r - 2.0) <= 0.6)
        for (a, b), r in zip(((25, 50), (50, 100)), ratios)
    ]


def check_cross_window(workers: int) -> list[CheckResult]:
    corr = _preset_report("cross_window_correlation", workers).correlation
    ratio = corr.plateau_covariance / corr.cross_window if corr.cross_window else float("nan")
    c8_ratio = corr.plateau_covariance / corr.c8 if corr.c8 else float("nan")
    return [
        CheckResult("平台等时方差 / 跨能窗配对预言", _fmt(ratio), "[1/3, 3]",
                    bool(np.isfinite(ratio) and 1.0 / 3.0 <= ratio <= 3.0)),
        CheckResult("平台等时方差 / c8", _fmt(c8_ratio), "> 0（仅供参考）",
                    bool(np.isfinite(c8_ratio) and c8_ratio > 0.0)),
    ]


FAST_CHECKS: tuple[Callable[[int], list[CheckResult]], ...] = (
    check_exactness,
    check_moments,
    check_golden_rule,
    check_poisson_rigidity,
    check_bgs,
    check_pair_cumulant,
    check_determinism,
)
FULL_CHECKS = FAST_CHECKS + (
    check_goe_rigidity,
    check_stitched,
    check_strength,
    check_propagator,
    check_thermalizing,
    check_nonthermalizing,
    check_lorentzian,
    check_gue_thermalizing,
    check_fluctuation_scaling,
    check_cross_window,
)


def run_suite(suite: str, workers: int = 1) -> list[CheckResult]:
    """
    运行验收套件

    Raises:
        ParameterError: 未知的套件名
    """
    if suite not in SUITES:
        raise ParameterError(f"未知的验收套件: {suite}（可选: {', '.join(SUITES)}）")
    checks = FAST_CHECKS if suite == "fast" else FULL_CHECKS
    results: list[CheckResult] = []
    for check in checks:
        logger.info("运行检查 %s", check.__name__)
        for result in check(workers):
            logger.info("%s: %s（期望 %s）%s", result.name, result.measured, result.expected,
                        "通过" if result.passed else "未通过")
            results.append(result)
    return results


def format_results(results: list[CheckResult]) -> str:
    """✅/❌ 结果表"""
    lines = [f"{'':2} {'检查项':<36} {'实测':<24} 期望", "-" * 80]
    for r in results:
        mark = "✅" if r.passed else "❌"
        lines.append(f"{mark} {r.name:<36} {r.measured:<24} {r.expected}")
    passed = sum(r.passed for r in results)
    lines.append("-" * 80)
    lines.append(f"通过 {passed}/{len(results)}")
    return "\n".join(lines)
