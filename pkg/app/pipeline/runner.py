"""
实验运行器 - 骨架 → 系综 → 谱统计 → 时间演化 → 热化判定 → 输出文件
"""
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from app import __version__
from app.core.ensemble import (
    EnsembleSpec,
    EnvelopeF,
    calibrate_envelope,
    golden_rule_width,
    realize,
    sample_residual,
)
from app.core.errors import InsufficientDataError, ParameterError
from app.core.evolve import (
    MIN_CORRELATION_REALIZATIONS,
    CorrelationEstimate,
    PlateauStatistics,
    SampleSet,
    TimeGrid,
    Trajectory,
    Verdict,
    analytic_prediction,
    c5_magnitude,
    c8_magnitude,
    correlation_rows,
    covariance_from_samples,
    cross_window_magnitude,
    energy_spread,
    equilibrium_value,
    evolve_expectation,
    plateau_statistics,
    summarize_samples,
    survival_probe,
    thermalization_verdict,
    trajectory_rows,
    verdict_inputs_from_partition,
)
from app.core.scaffold import (
    HFSpectrum,
    MomentsReport,
    Observable,
    StatOperator,
    WindowPartition,
    build_hf_spectrum,
    build_observable,
    build_stat_operator,
    energy_moments,
    partition_windows,
)
from app.core.spectra import (
    NNSReport,
    RigidityResult,
    StrengthFit,
    StrengthHistogram,
    delta3,
    nns_ks,
    reduce_strength,
    strength_histogram,
    unfold,
)
from app.pipeline.run_config import RunConfig
from app.tools.artifacts import write_csv, write_json
from app.tools.parallel import (
    OBSERVABLE_STREAM,
    PROBE_STREAM,
    SCAFFOLD_STREAM,
    STAT_OPERATOR_STREAM,
    ordered_map,
    ordered_mean_std,
    realization_rng,
    resolve_workers,
    stream_seed,
)
from config import config as env_config

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = (
    "t", "t_in_units_of_inv_delta", "mc_mean", "mc_stderr", "analytic_first_term",
    "analytic_asymptote_exact", "analytic_asymptote_window", "equilibrium",
)
CORRELATION_HEADER = ("t1", "t2", "cov", "stderr", "c5_pred", "c8_pred", "cross_window_pred")
SPECTRA_HEADER = ("statistic", "L_or_s_or_offset", "value", "stderr")
STRENGTH_HEADER = (
    "offset", "offset_in_units_of_delta", "mean_weight", "fit_gaussian", "fit_lorentzian",
)

# 与执行环境有关、不进入确定性部分的配置字段
_EXECUTION_FIELDS = ("threads", "out")
# 可以写成 {"window": k} 的选择参数所在的键
_SELECTION_KEYS = ("windows", "first", "second")


def with_delta(params: dict[str, Any], delta: float) -> dict[str, Any]:
    """给所有 {"window": k} 形式的能窗选择补上 delta（已给出的不覆盖）"""
    resolved = dict(params)
    if "window" in resolved and "delta" not in resolved:
        resolved["delta"] = delta
    for key in _SELECTION_KEYS:
        value = resolved.get(key)
        if isinstance(value, dict):
            resolved[key] = with_delta(value, delta)
        elif isinstance(value, list):
            resolved[key] = [with_delta(v, delta) if isinstance(v, dict) else v for v in value]
    return resolved


@dataclass
class RealizationResult:
    """单次实现交给归约阶段的全部数据"""

    trajectory: Trajectory
    unfolded: np.ndarray
    histogram: StrengthHistogram
    survival: np.ndarray
    energy: tuple[float, float]


@dataclass
class RunReport:
    """一次运行的全部结果；除 execution 外都由 (配置, 种子) 唯一确定"""

    config: dict[str, Any]
    derived: dict[str, Any]
    moments: MomentsReport
    partition: WindowPartition
    mc: Trajectory
    analytic: Trajectory
    verdict: Verdict
    plateau: PlateauStatistics
    strength: StrengthFit
    survival: Trajectory
    nns: NNSReport | None
    rigidity: RigidityResult | None
    scaffold_nns: NNSReport | None
    correlation: CorrelationEstimate | None
    energy_check: dict[str, float]
    provenance: dict[str, Any]
    execution: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": __version__,
            "config": self.config,
            "derived": self.derived,
            "moments": self.moments.to_dict(),
            "partition": self.partition.to_dict(),
            "trajectory": {"monte_carlo": self.mc.to_dict(), "analytic": self.analytic.to_dict()},
            "verdict": self.verdict.to_dict(),
            "plateau": {
                "mean": self.plateau.mean,
                "spread": self.plateau.spread,
                "stderr": self.plateau.stderr,
                "realizations": self.plateau.realizations,
            },
            "strength": self.strength.to_dict(),
            "survival": {
                "state": self.derived["probe_state"],
                "final_mean": float(self.survival.mean[-1]),
                "realizations": self.survival.realizations,
            },
            "spectra": {
                "nns": None if self.nns is None else self.nns.to_dict(),
                "delta3": None if self.rigidity is None else self.rigidity.to_dict(),
                "upbend_L": None if self.rigidity is None else self.rigidity.upbend_L,
                "scaffold_nns": None if self.scaffold_nns is None else self.scaffold_nns.to_dict(),
            },
            "correlation": None if self.correlation is None else self.correlation.to_dict(),
            "energy_check": self.energy_check,
            "provenance": self.provenance,
            "execution": self.execution,
        }


class ExperimentRunner:
    """按 RunConfig 执行一次完整实验"""

    def __init__(self, run_config: RunConfig, workers: int = 1):
        """
        Args:
            run_config: 已校验的运行配置
            workers: 并行线程数
        """
        self.config = run_config
        self.workers = workers
        self.timings: dict[str, float] = {}
        self._spectrum: HFSpectrum | None = None
        self._delta: tuple[float, str] | None = None

    # ------------------------------------------------------------------
    # 准备阶段
    # ------------------------------------------------------------------

    def _stage(self, name: str, start: float):
        elapsed = time.perf_counter() - start
        self.timings[name] = elapsed
        logger.info("阶段 %s 完成，用时 %.2fs", name, elapsed)

    def _get_spectrum(self) -> HFSpectrum:
        """HF 骨架（只生成一次，所有实现共用）"""
        if self._spectrum is None:
            cfg = self.config
            self._spectrum = build_hf_spectrum(cfg.density.to_model(), cfg.n,
                                               stream_seed(cfg.seed, SCAFFOLD_STREAM))
        return self._spectrum

    def _get_delta(self) -> tuple[float, str]:
        """
        扩展宽度 Δ 及其来源

        合成路线取包络宽度；微观路线取配置给出的 delta，
        否则用一次探针实现的黄金规则估计。
        """
        if self._delta is None:
            cfg = self.config
            if cfg.route == "synthetic":
                self._delta = (cfg.envelope.delta, "envelope")
            elif cfg.delta is not None:
                self._delta = (cfg.delta, "given")
            else:
                spec = cfg.ensemble_spec()
                v = sample_residual(self._get_spectrum(), spec.residual,
                                    realization_rng(cfg.seed, PROBE_STREAM))
                width = golden_rule_width(self._get_spectrum(), v)
                if not width > 0:
                    raise ParameterError("黄金规则宽度为 0，请给出 delta 或非零的 rms_strength")
                self._delta = (width, "golden_rule")
            logger.info("Δ = %.6g（来源: %s）", *self._delta)
        return self._delta

    def analytic_envelope(self) -> EnvelopeF:
        """解析预言使用的包络；微观路线满带时取洛伦兹形，否则取高斯形"""
        cfg = self.config
        delta, _ = self._get_delta()
        if cfg.route == "synthetic":
            return EnvelopeF(kind=cfg.envelope.kind, delta=delta)
        kind = cfg.analytic_envelope
        if kind is None:
            kind = "lorentzian" if cfg.residual.band_halfwidth >= cfg.n - 1 else "gaussian"
        return EnvelopeF(kind=kind, delta=delta)

    def build_operators(self) -> tuple[Observable, StatOperator]:
        cfg = self.config
        spectrum = self._get_spectrum()
        delta, _ = self._get_delta()
        A = build_observable(cfg.observable.kind, with_delta(cfg.observable.params, delta),
                             spectrum, seed=stream_seed(cfg.seed, OBSERVABLE_STREAM))
        pi = build_stat_operator(cfg.pi.kind, with_delta(cfg.pi.params, delta),
                                 spectrum, seed=stream_seed(cfg.seed, STAT_OPERATOR_STREAM))
        return A, pi

    def time_grid(self) -> TimeGrid:
        delta, _ = self._get_delta()
        g = self.config.grid
        return TimeGrid.uniform(g.t_max, g.points, delta, unit=g.unit)

    # ------------------------------------------------------------------
    # 蒙特卡洛
    # ------------------------------------------------------------------

    def _central_unfolded(self, eigenvalues: np.ndarray) -> np.ndarray:
        unfolded = unfold(eigenvalues, self._get_spectrum().density)
        n = unfolded.size
        keep = max(2, int(n * self.config.spectra.central_fraction))
        start = (n - keep) // 2
        return unfolded[start:start + keep]

    def _realization_task(self, spec: EnsembleSpec, A: Observable, pi: StatOperator,
                          grid: TimeGrid, probe_state: int):
        spectrum = self._get_spectrum()
        delta, _ = self._get_delta()
        bins = self.config.spectra.strength_bins
        seed = self.config.seed

        def task(index: int) -> RealizationResult:
            real = realize(spectrum, spec, realization_rng(seed, index))
            return RealizationResult(
                trajectory=evolve_expectation(real, A, pi, grid),
                unfolded=self._central_unfolded(real.eigenvalues),
                histogram=strength_histogram(real, spectrum, delta, bins),
                survival=survival_probe(real, probe_state, grid),
                energy=energy_spread(real, pi),
            )

        return task

    def _spectral_statistics(self, sequences: list[np.ndarray]
                             ) -> tuple[NNSReport | None, RigidityResult | None]:
        settings = self.config.spectra
        try:
            nns = nns_ks(sequences)
        except InsufficientDataError as e:
            logger.warning("跳过最近邻间距统计: %s", e)
            nns = None
        shortest = min(seq.size for seq in sequences)
        L_values = [L for L in settings.L_values if L <= shortest / 4.0]
        if len(L_values) < len(settings.L_values):
            logger.warning("L > %.1f 的点超出序列长度的 1/4，已去掉", shortest / 4.0)
        rigidity = None
        if L_values:
            reference = None if settings.reference == "none" else settings.reference
            rigidity = delta3(sequences, L_values, reference=reference,
                              threshold=self.config.thresholds.upbend_threshold)
        return nns, rigidity

    def _scaffold_nns(self) -> NNSReport | None:
        spectrum = self._get_spectrum()
        try:
            return nns_ks(unfold(spectrum.levels, spectrum.density))
        except InsufficientDataError as e:
            logger.info("骨架能级太少，跳过其间距统计: %s", e)
            return None

    def run(self) -> RunReport:
        """执行全部阶段并返回 RunReport（不写文件）"""
        cfg = self.config
        started = datetime.now(timezone.utc)
        total_start = time.perf_counter()

        start = time.perf_counter()
        spectrum = self._get_spectrum()
        delta, delta_source = self._get_delta()
        spec = cfg.ensemble_spec()
        A, pi = self.build_operators()
        partition = partition_windows(spectrum, pi, delta)
        moments = energy_moments(spectrum, pi, delta)
        eq_window = cfg.eq_window if cfg.eq_window is not None else int(np.argmax(partition.p))
        eq = equilibrium_value(spectrum, A, eq_window, delta)
        grid = self.time_grid()
        probe_state = cfg.probe_state if cfg.probe_state is not None else spectrum.n // 2
        envelope = self.analytic_envelope()
        calibration = None
        if spec.route == "synthetic" and spec.calibrate:
            calibration = calibrate_envelope(spectrum, spec.envelope, spec.symmetry)
        self._stage("setup", start)

        start = time.perf_counter()
        task = self._realization_task(spec, A, pi, grid, probe_state)
        results = ordered_map(task, list(range(cfg.realizations)), self.workers)
        self._stage("monte_carlo", start)

        start = time.perf_counter()
        samples = SampleSet(
            grid=grid,
            values=np.vstack([r.trajectory.mean for r in results]),
            imag_residual=max(r.trajectory.imag_residual for r in results),
        )
        mc = summarize_samples(samples)
        correlation = None
        if cfg.realizations >= MIN_CORRELATION_REALIZATIONS:
            correlation = covariance_from_samples(
                samples,
                c5_magnitude(spectrum, A, pi, delta, grid),
                c8_magnitude(spectrum, A, pi, delta),
                cfg.thresholds.plateau_start,
                cross_window_magnitude(spectrum, A, pi, envelope, cfg.symmetry),
            )
        else:
            logger.info("实现次数 %d < %d，跳过关联函数", cfg.realizations,
                        MIN_CORRELATION_REALIZATIONS)
        plateau = plateau_statistics(samples, cfg.thresholds.plateau_start)
        strength = reduce_strength([r.histogram for r in results], delta,
                                   cfg.spectra.strength_bins)
        survival_mean, survival_err, count = ordered_mean_std([r.survival for r in results])
        survival = Trajectory(grid=grid, mean=survival_mean, stderr=survival_err,
                              provenance="single" if count == 1 else "monte_carlo",
                              realizations=count)
        self._stage("reduction", start)

        start = time.perf_counter()
        nns, rigidity = self._spectral_statistics([r.unfolded for r in results])
        scaffold_nns = self._scaffold_nns()
        self._stage("spectra", start)

        start = time.perf_counter()
        analytic = analytic_prediction(spectrum, A, pi, envelope, grid, cfg.symmetry)
        verdict = thermalization_verdict(mc, analytic, eq, correlation,
                                         cfg.thresholds.to_thresholds(), relaxation=survival)
        self._stage("verdict", start)

        energy_mean, _, _ = ordered_mean_std([np.array([r.energy[0]]) for r in results])
        energy_var, energy_var_err, _ = ordered_mean_std([np.array([r.energy[1]]) for r in results])

        resolved = cfg.model_dump(mode="json")
        for name in _EXECUTION_FIELDS:
            resolved.pop(name, None)
        derived = {
            "delta": delta,
            "delta_source": delta_source,
            "n_delta": float(delta * np.min(spectrum.density.density(spectrum.levels))),
            "eq_window": eq_window,
            "equilibrium": eq,
            "probe_state": probe_state,
            "analytic_envelope": envelope.to_dict(),
            "envelope_calibration": None if calibration is None else calibration.to_dict(),
            "grid": grid.to_dict(),
            **verdict_inputs_from_partition(partition, A),
        }
        self.timings["total"] = time.perf_counter() - total_start
        return RunReport(
            config=resolved,
            derived=derived,
            moments=moments,
            partition=partition,
            mc=mc,
            analytic=analytic,
            verdict=verdict,
            plateau=plateau,
            strength=strength,
            survival=survival,
            nns=nns,
            rigidity=rigidity,
            scaffold_nns=scaffold_nns,
            correlation=correlation,
            energy_check={
                "mean": float(energy_mean[0]),
                "predicted_mean": moments.E,
                "variance": float(energy_var[0]),
                "variance_stderr": float(energy_var_err[0]),
                "predicted_variance": moments.deltaE_sq,
            },
            provenance={
                "master_seed": cfg.seed,
                "realization_streams": f"SeedSequence({cfg.seed}, spawn_key=(r,)), r = 0..{cfg.realizations - 1}",
                "scaffold_stream": SCAFFOLD_STREAM,
                "observable_stream": OBSERVABLE_STREAM,
                "stat_operator_stream": STAT_OPERATOR_STREAM,
                "probe_stream": PROBE_STREAM,
                "reference_seed": env_config.REFERENCE_SEED,
            },
            execution={
                "started_at": started.isoformat(),
                "workers": self.workers,
                "threads": cfg.threads,
                "out": cfg.out,
                "timings": dict(self.timings),
            },
        )


# ---------------------------------------------------------------------------
# 输出文件
# ---------------------------------------------------------------------------

def spectra_rows(report: RunReport) -> list[tuple]:
    """spectra.csv 的数据行"""
    rows: list[tuple] = []
    for name, nns in (("nns_density", report.nns), ("scaffold_nns_density", report.scaffold_nns)):
        if nns is None:
            continue
        widths = np.diff(nns.edges)
        centers = 0.5 * (nns.edges[1:] + nns.edges[:-1])
        density = nns.counts / (nns.spacings * widths)
        rows.extend((name, s, value, None) for s, value in zip(centers, density))
        rows.append((f"{name}_ks_wigner", None, nns.ks_wigner, None))
        rows.append((f"{name}_ks_poisson", None, nns.ks_poisson, None))
    if report.rigidity is not None:
        curve = report.rigidity.curve
        rows.extend(("delta3", L, v, e) for L, v, e in zip(curve.L, curve.values, curve.stderr))
        ref = report.rigidity.reference
        if ref is not None:
            rows.extend((f"delta3_{ref.label}", L, v, e)
                        for L, v, e in zip(ref.L, ref.values, ref.stderr))
    strength = report.strength
    rows.extend(("strength", x, w, None) for x, w in zip(strength.centers, strength.mean_weight))
    return rows


def strength_rows(strength: StrengthFit) -> list[tuple]:
    """strength.csv 的数据行"""
    gaussian, lorentzian = strength.curves()
    return [
        (x, x / strength.delta, w, g, lz)
        for x, w, g, lz in zip(strength.centers, strength.mean_weight, gaussian, lorentzian)
    ]


def write_artifacts(report: RunReport, out_dir: str | Path) -> dict[str, Path]:
    """写出 report.json 与四个 CSV，每个文件都先写临时文件再改名"""
    out = Path(out_dir)
    paths = {
        "trajectory": write_csv(out / "trajectory.csv", TRAJECTORY_HEADER,
                                trajectory_rows(report.mc, report.analytic,
                                                report.derived["equilibrium"])),
        "correlation": write_csv(out / "correlation.csv", CORRELATION_HEADER,
                                 [] if report.correlation is None
                                 else correlation_rows(report.correlation)),
        "spectra": write_csv(out / "spectra.csv", SPECTRA_HEADER, spectra_rows(report)),
        "strength": write_csv(out / "strength.csv", STRENGTH_HEADER,
                              strength_rows(report.strength)),
    }
    paths["report"] = write_json(out / "report.json", report.to_dict())
    return paths


def run(run_config: RunConfig, out_dir: str | Path | None = None,
        workers: int | None = None, write: bool = True) -> RunReport:
    """
    执行一次实验并写出结果文件

    Args:
        run_config: 已校验的运行配置
        out_dir: 输出目录；默认依次取配置中的 out 与环境变量 CHAOTHERM_OUT
        workers: 线程数；默认依次取配置中的 threads 与环境变量 CHAOTHERM_THREADS
        write: 是否写出文件
    """
    threads = workers if workers is not None else run_config.threads
    runner = ExperimentRunner(run_config, resolve_workers(threads, env_config.THREADS))
    report = runner.run()
    if write:
        target = out_dir or run_config.out or env_config.OUT_DIR
        report.execution["out"] = str(target)
        write_artifacts(report, target)
        logger.info("结果已写入 %s", target)
    return report
