"""
预设实验 - 每个预设对应一个验收场景，一条命令即可复现
"""
import copy
from typing import Any

from app.core.errors import ParameterError

# 常用片段
_WINDOW_4 = {"window": 4}
_ENERGY = {"kind": "diagonal_profile", "params": {"profile": "energy"}}

PRESETS: dict[str, dict[str, Any]] = {
    "smoke": {
        "description": "小规模冒烟测试：N = 200，N_Δ = 20，R = 12",
        "config": {
            "n": 200, "realizations": 12, "seed": 7,
            "density": {"kind": "constant", "rho0": 20.0},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "window_uniform", "params": _WINDOW_4},
            "observable": _ENERGY,
            "grid": {"t_max": 6.0, "points": 31},
            "spectra": {"L_values": [2.0, 5.0, 10.0, 20.0]},
        },
    },
    "thermalizing": {
        "description": "单能窗 Π（N = 800，N_Δ = 80，R = 100），应判为热化",
        "config": {
            "n": 800, "realizations": 100, "seed": 20240601,
            "density": {"kind": "constant", "rho0": 80.0},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "window_uniform", "params": _WINDOW_4},
            "observable": _ENERGY,
            "assert_verdict": "thermalizes",
        },
    },
    "nonthermalizing": {
        "description": "Π 均匀分布在能窗 4 与 10 上，渐近值是两窗平衡值的混合",
        "config": {
            "n": 1200, "realizations": 100, "seed": 20240602,
            "density": {"kind": "constant", "rho0": 80.0},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "window_mixture",
                   "params": {"windows": [{"window": 4}, {"window": 10}], "weights": [0.5, 0.5]}},
            "observable": _ENERGY,
            "eq_window": 4,
            "assert_verdict": "does_not_thermalize",
        },
    },
    "gue_thermalizing": {
        "description": "thermalizing 的幺正类版本",
        "config": {
            "n": 800, "realizations": 100, "seed": 20240603, "symmetry": "unitary",
            "density": {"kind": "constant", "rho0": 80.0},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "window_uniform", "params": _WINDOW_4},
            "observable": _ENERGY,
            "spectra": {"reference": "gue"},
            "assert_verdict": "thermalizes",
        },
    },
    "lorentzian_relaxation": {
        "description": "洛伦兹包络，弛豫应为指数形式",
        "config": {
            "n": 800, "realizations": 60, "seed": 20240604,
            "density": {"kind": "constant", "rho0": 80.0},
            "envelope": {"kind": "lorentzian", "delta": 1.0},
            "pi": {"kind": "window_uniform", "params": _WINDOW_4},
            "observable": _ENERGY,
        },
    },
    "bgs_emergence": {
        "description": "微观路线：带状稀疏 V（b = 100，f = 0.5）使中心谱呈 GOE 间距分布",
        "config": {
            "n": 1000, "realizations": 10, "seed": 20240605,
            "density": {"kind": "constant", "rho0": 20.0},
            "route": "microscopic", "envelope": None,
            "residual": {"band_halfwidth": 100, "fill_probability": 0.5, "rms_strength": 0.15},
            "pi": {"kind": "pure_hf", "params": {}},
            "observable": _ENERGY,
            "spectra": {"central_fraction": 0.6},
        },
    },
    "full_coupling": {
        "description": "微观路线：满带稀疏 V（f = 0.1，黄金规则 Δ ≈ 1），强度函数应为洛伦兹形",
        "config": {
            "n": 1000, "realizations": 5, "seed": 20240606,
            "density": {"kind": "constant", "rho0": 20.0},
            "route": "microscopic", "envelope": None,
            "residual": {"band_halfwidth": 999, "fill_probability": 0.1, "rms_strength": 0.282},
            "pi": {"kind": "pure_hf", "params": {}},
            "observable": _ENERGY,
        },
    },
    "strength_gaussian": {
        "description": "合成路线：高斯包络 Δ = 1，N_Δ = 100，R = 50",
        "config": {
            "n": 1000, "realizations": 50, "seed": 20240607,
            "density": {"kind": "constant", "rho0": 100.0},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "pure_hf", "params": {}},
            "observable": _ENERGY,
        },
    },
    "stitched_rigidity": {
        "description": "逐窗拼接的本征值（N_Δ = 20），Δ3 应在 L ≈ 20 附近上翘",
        "config": {
            "n": 2000, "realizations": 4, "seed": 20240608,
            "density": {"kind": "constant", "rho0": 20.0},
            "envelope": {"kind": "gaussian", "delta": 1.0, "eigenvalue_mode": "stitched"},
            "pi": {"kind": "window_uniform", "params": _WINDOW_4},
            "observable": _ENERGY,
            "grid": {"t_max": 6.0, "points": 13},
            "spectra": {"L_values": [2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 60.0, 80.0]},
        },
    },
    "cross_window_correlation": {
        "description": "非对角 A 与跨能窗纯态 Π，平台协方差与 c8 比较",
        "config": {
            "n": 500, "realizations": 100, "seed": 20240609,
            "density": {"kind": "constant", "rho0": 50.0},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "cross_window_pure",
                   "params": {"windows": [{"window": 3}, {"window": 5}], "weights": [0.5, 0.5]}},
            "observable": {"kind": "window_coherence",
                           "params": {"first": {"window": 3}, "second": {"window": 5}}},
            "eq_window": 3,
        },
    },
}

for _n_delta in (25, 50, 100):
    PRESETS[f"diagonal_fluctuations_{_n_delta}"] = {
        "description": f"A、Π 都在 HF 基中对角，N_Δ = {_n_delta}，用于平台涨落的 1/N_Δ 标度",
        "config": {
            "n": 10 * _n_delta, "realizations": 40, "seed": 20240610 + _n_delta,
            "density": {"kind": "constant", "rho0": float(_n_delta)},
            "envelope": {"kind": "gaussian", "delta": 1.0},
            "pi": {"kind": "window_uniform", "params": _WINDOW_4},
            "observable": {"kind": "diagonal_profile", "params": {"profile": "tanh"}},
            "grid": {"t_max": 8.0, "points": 41},
        },
    }


def list_presets() -> list[tuple[str, str]]:
    """(名称, 描述) 列表"""
    return [(name, spec["description"]) for name, spec in PRESETS.items()]


def get_preset(name: str) -> dict[str, Any]:
    """
    获取预设的配置字典（深拷贝）

    Raises:
        ParameterError: 未知的预设名
    """
    if name not in PRESETS:
        raise ParameterError(f"未知的预设: {name}（可选: {', '.join(PRESETS)}）")
    data = copy.deepcopy(PRESETS[name]["config"])
    data["preset"] = name
    return data
