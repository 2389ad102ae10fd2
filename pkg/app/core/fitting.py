"""
曲线拟合 - 高斯 / 洛伦兹线形，以及弛豫包络
"""
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import curve_fit

logger = logging.getLogger(__name__)


def gaussian_shape(x, amplitude, width):
    return amplitude * np.exp(-0.5 * (x / width) ** 2)


def lorentzian_shape(x, amplitude, width):
    """width 为半高全宽"""
    return amplitude / (1.0 + (2.0 * x / width) ** 2)


def gaussian_decay(t, baseline, amplitude, tau):
    return baseline + amplitude * np.exp(-((t / tau) ** 2))


def exponential_decay(t, baseline, amplitude, tau):
    return baseline + amplitude * np.exp(-t / tau)


@dataclass
class ShapeFit:
    """一次最小二乘拟合的结果；residual 为相对残差平方和 Σ(y−f)²/Σy²"""

    params: np.ndarray
    residual: float
    converged: bool = True

    def evaluate(self, model: Callable, x) -> np.ndarray:
        return model(np.asarray(x, dtype=float), *self.params)


def relative_residual(y: np.ndarray, fitted: np.ndarray) -> float:
    norm = float(np.sum(y ** 2))
    if norm == 0.0:
        return 0.0
    return float(np.sum((y - fitted) ** 2) / norm)


def fit_shape(model: Callable, x, y, p0, bounds=(-np.inf, np.inf)) -> ShapeFit:
    """
    curve_fit 封装，失败时返回初值与 NaN 残差而不是抛出异常

    Args:
        model: 模型函数 f(x, *params)
        x, y: 数据
        p0: 初值
        bounds: 参数边界
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    try:
        params, _ = curve_fit(model, x, y, p0=p0, bounds=bounds, maxfev=20000)
    except (RuntimeError, ValueError) as e:
        logger.warning("拟合 %s 失败: %s", getattr(model, "__name__", "model"), e)
        return ShapeFit(params=np.asarray(p0, dtype=float), residual=float("nan"), converged=False)
    return ShapeFit(params=params, residual=relative_residual(y, model(x, *params)))


@dataclass
class RelaxationFit:
    """弛豫包络拟合：高斯与指数两种形状，残差较小者胜出"""

    shape: str
    timescale: float
    residuals: dict[str, float] = field(default_factory=dict)
    timescales: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "timescale": self.timescale,
            "residuals": dict(self.residuals),
            "timescales": dict(self.timescales),
        }


RELAXATION_MODELS: dict[str, Callable] = {
    "gaussian": gaussian_decay,
    "exponential": exponential_decay,
}


def fit_relaxation(times, values, guess_tau: float, noise_floor: float = 1e-9) -> RelaxationFit:
    """
    拟合 y(t) = y∞ + a·g(t/τ)

    数据几乎不随时间变化时不做拟合，返回 shape = "none"。
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if np.ptp(y) <= noise_floor:
        return RelaxationFit(shape="none", timescale=float("nan"))
    baseline = float(np.mean(y[-max(3, y.size // 5):]))
    p0 = [baseline, float(y[0] - baseline), guess_tau]
    bounds = ([-np.inf, -np.inf, 1e-6 * guess_tau], [np.inf, np.inf, 1e3 * guess_tau])
    residuals: dict[str, float] = {}
    timescales: dict[str, float] = {}
    for name, model in RELAXATION_MODELS.items():
        fit = fit_shape(model, t, y - baseline, [0.0, p0[1], p0[2]], bounds)
        residuals[name] = fit.residual
        timescales[name] = float(fit.params[2])
    finite = {k: v for k, v in residuals.items() if np.isfinite(v)}
    if not finite:
        return RelaxationFit(shape="none", timescale=float("nan"), residuals=residuals,
                             timescales=timescales)
    best = min(finite, key=finite.get)
    return RelaxationFit(shape=best, timescale=timescales[best], residuals=residuals,
                         timescales=timescales)
