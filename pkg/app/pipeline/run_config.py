"""
运行配置 - pydantic 模型，JSON 文件与命令行参数都先转换成 RunConfig 再执行
"""
import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.ensemble import EnsembleSpec, EnvelopeF, ResidualSpec
from app.core.errors import ConfigError
from app.core.evolve import Thresholds
from app.core.scaffold import DensityModel


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DensitySpec(_Strict):
    """能级密度"""

    kind: Literal["constant", "exponential"] = "constant"
    rho0: float = Field(1.0, gt=0)
    T: Optional[float] = Field(None, gt=0)
    origin: float = 0.0

    def to_model(self) -> DensityModel:
        return DensityModel(kind=self.kind, rho0=self.rho0, T=self.T, origin=self.origin)


class ResidualSettings(_Strict):
    """微观路线的剩余相互作用"""

    band_halfwidth: int = Field(50, ge=1)
    fill_probability: float = Field(1.0, gt=0, le=1)
    rms_strength: float = Field(0.1, ge=0)
    diagonal_fluctuations: bool = False


class EnvelopeSettings(_Strict):
    """合成路线的包络"""

    kind: Literal["gaussian", "lorentzian"] = "gaussian"
    delta: float = Field(1.0, gt=0)
    eigenvalue_mode: Literal["global", "stitched"] = "global"
    calibrate: bool = True


class ObservableSpec(_Strict):
    """可观测量 A"""

    kind: Literal[
        "identity", "diagonal_profile", "window_projector", "banded_random", "window_coherence"
    ] = "diagonal_profile"
    params: dict[str, Any] = Field(default_factory=lambda: {"profile": "energy"})


class StatOperatorSpec(_Strict):
    """统计算符 Π"""

    kind: Literal[
        "pure_hf",
        "window_uniform",
        "boltzmann_diagonal",
        "random_psd_window",
        "cross_window_pure",
        "window_mixture",
    ] = "window_uniform"
    params: dict[str, Any] = Field(default_factory=lambda: {"window": 4})


class TimeGridSpec(_Strict):
    """时间网格；unit = inverse_delta 时 t_max 以 1/Δ 为单位"""

    t_max: float = Field(6.0, gt=0)
    points: int = Field(61, ge=2)
    unit: Literal["absolute", "inverse_delta"] = "inverse_delta"


class ThresholdSettings(_Strict):
    """判定阈值"""

    plateau_start: float = Field(4.0, gt=0)
    tol_rel: float = Field(0.05, ge=0)
    stderr_factor: float = Field(3.0, gt=0)
    fluct_factor: float = Field(3.0, gt=0)
    min_extent: float = Field(5.0, gt=0)
    comparison_start: float = Field(0.5, ge=0)
    upbend_threshold: float = Field(3.0, gt=0)

    def to_thresholds(self) -> Thresholds:
        return Thresholds(
            plateau_start=self.plateau_start,
            tol_rel=self.tol_rel,
            stderr_factor=self.stderr_factor,
            fluct_factor=self.fluct_factor,
            min_extent=self.min_extent,
            comparison_start=self.comparison_start,
        )


class SpectraSettings(_Strict):
    """谱统计"""

    L_values: list[float] = Field(default_factory=lambda: [2.0, 5.0, 10.0, 15.0, 20.0, 30.0])
    reference: Literal["goe", "gue", "poisson", "goe_analytic", "gue_analytic",
                       "poisson_analytic", "none"] = "goe"
    central_fraction: float = Field(0.5, gt=0, le=1)
    strength_bins: int = Field(61, ge=3)


class RunConfig(_Strict):
    """
    一次实验的完整配置

    除 n、realizations、seed 外所有字段都有默认值。
    """

    n: int = Field(..., ge=2)
    realizations: int = Field(..., ge=1)
    seed: int = Field(..., ge=0)
    symmetry: Literal["orthogonal", "unitary"] = "orthogonal"
    density: DensitySpec = Field(default_factory=DensitySpec)
    route: Literal["synthetic", "microscopic"] = "synthetic"
    envelope: Optional[EnvelopeSettings] = Field(default_factory=EnvelopeSettings)
    residual: Optional[ResidualSettings] = None
    delta: Optional[float] = Field(None, gt=0)
    analytic_envelope: Optional[Literal["gaussian", "lorentzian"]] = None
    pi: StatOperatorSpec = Field(default_factory=StatOperatorSpec)
    observable: ObservableSpec = Field(default_factory=ObservableSpec)
    grid: TimeGridSpec = Field(default_factory=TimeGridSpec)
    eq_window: Optional[int] = Field(None, ge=0)
    probe_state: Optional[int] = Field(None, ge=0)
    threads: Optional[int] = Field(None, ge=1)
    out: Optional[str] = None
    thresholds: ThresholdSettings = Field(default_factory=ThresholdSettings)
    spectra: SpectraSettings = Field(default_factory=SpectraSettings)
    assert_verdict: Optional[Literal["thermalizes", "does_not_thermalize", "inconclusive"]] = None
    preset: Optional[str] = None

    @model_validator(mode="after")
    def _check_route(self) -> "RunConfig":
        if self.route == "microscopic" and self.residual is None:
            raise ValueError("route = microscopic 需要 residual")
        if self.route == "synthetic" and self.envelope is None:
            raise ValueError("route = synthetic 需要 envelope")
        if self.density.kind == "exponential" and self.density.T is None:
            raise ValueError("指数密度需要 T")
        return self

    def ensemble_spec(self) -> EnsembleSpec:
        if self.route == "microscopic":
            residual = ResidualSpec(symmetry=self.symmetry, **self.residual.model_dump())
            return EnsembleSpec(route="microscopic", symmetry=self.symmetry, residual=residual)
        return EnsembleSpec(
            route="synthetic",
            symmetry=self.symmetry,
            envelope=EnvelopeF(kind=self.envelope.kind, delta=self.envelope.delta),
            eigenvalue_mode=self.envelope.eigenvalue_mode,
            calibrate=self.envelope.calibrate,
        )


def load_config(path: str | Path) -> dict[str, Any]:
    """读取 JSON 配置文件，返回未校验的字典"""
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}") from e


def merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """递归合并：overrides 中非 None 的值覆盖 base"""
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_config(data: dict[str, Any]) -> RunConfig:
    """
    校验配置字典

    Raises:
        ConfigError: 校验失败
    """
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"配置校验失败:\n{e}") from e


def config_schema() -> dict[str, Any]:
    """RunConfig 的 JSON Schema"""
    return RunConfig.model_json_schema()
