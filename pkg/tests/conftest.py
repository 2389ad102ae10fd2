"""
公共 fixture：小能谱、2×2 耦合实现、固定种子的随机数发生器
"""
import os
import sys

import numpy as np
import pytest

# 添加项目根目录到 sys.path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.core.ensemble import EnsembleSpec, EnvelopeF, Realization, diagonalize  # noqa: E402
from app.core.scaffold import DensityModel, HFSpectrum, build_hf_spectrum  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_spectrum() -> HFSpectrum:
    """ρ = 2 的 40 个 HF 能级"""
    return build_hf_spectrum(DensityModel(kind="constant", rho0=2.0), 40, seed=5)


@pytest.fixture
def dense_spectrum() -> HFSpectrum:
    """N_Δ = 20（Δ = 1）的 200 个 HF 能级，能量范围 [0, 10]"""
    return build_hf_spectrum(DensityModel(kind="constant", rho0=20.0), 200, seed=6)


@pytest.fixture
def two_level() -> tuple[HFSpectrum, np.ndarray, Realization]:
    """ℰ = (−1, 1)、V_12 = 1 的两能级系统，本征值 ∓√2"""
    spectrum = HFSpectrum.from_levels([-1.0, 1.0], DensityModel(kind="constant", rho0=1.0,
                                                                 origin=-1.5))
    v = np.array([[0.0, 1.0], [1.0, 0.0]])
    return spectrum, v, diagonalize(spectrum, v)


@pytest.fixture
def synthetic_spec() -> EnsembleSpec:
    return EnsembleSpec(route="synthetic", envelope=EnvelopeF(kind="gaussian", delta=1.0))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 缩小规模的端到端验收运行")
