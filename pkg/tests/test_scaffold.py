"""
HF 骨架、可观测量、统计算符与能窗划分
"""
import logging

import numpy as np
import pytest

from app.core.errors import (
    EmptySpectrumError,
    OrderingError,
    ParameterError,
    RangeError,
)
from app.core.scaffold import (
    STAT_OPERATOR_KINDS,
    DensityModel,
    HFSpectrum,
    Observable,
    build_hf_spectrum,
    build_observable,
    build_stat_operator,
    energy_moments,
    partition_windows,
    select_indices,
    window_bounds,
)


def test_constant_density_mean_spacing():
    spectrum = build_hf_spectrum(DensityModel(rho0=2.0), 2000, seed=1)
    assert spectrum.mean_spacing == pytest.approx(0.5, rel=0.05)
    assert np.all(np.diff(spectrum.levels) > 0)


def test_exponential_density_window_ratio():
    density = DensityModel(kind="exponential", rho0=1.0, T=10.0)
    spectrum = build_hf_spectrum(density, 8000, seed=2)
    lower = spectrum.window_indices(45.0, 55.0).size
    upper = spectrum.window_indices(55.0, 65.0).size
    assert upper / lower == pytest.approx(np.e, rel=0.1)


def test_same_seed_same_levels():
    density = DensityModel(rho0=3.0)
    a = build_hf_spectrum(density, 100, seed=9)
    b = build_hf_spectrum(density, 100, seed=9)
    np.testing.assert_array_equal(a.levels, b.levels)


def test_levels_are_read_only(small_spectrum):
    with pytest.raises(ValueError):
        small_spectrum.levels[0] = 1.0


@pytest.mark.parametrize("count, error", [(0, EmptySpectrumError), (-3, ParameterError)])
def test_invalid_count(count, error):
    with pytest.raises(error):
        build_hf_spectrum(DensityModel(), count, seed=0)


def test_exponential_density_needs_temperature():
    with pytest.raises(ParameterError):
        DensityModel(kind="exponential", rho0=1.0)


def test_from_levels_rejects_unsorted():
    with pytest.raises(OrderingError):
        HFSpectrum.from_levels([0.0, 2.0, 1.0], DensityModel())


def test_from_levels_splits_ties(caplog):
    with caplog.at_level(logging.WARNING):
        spectrum = HFSpectrum.from_levels([0.0, 1.0, 1.0, 2.0], DensityModel())
    assert np.all(np.diff(spectrum.levels) > 0)
    assert spectrum.levels[2] - spectrum.levels[1] < 1e-9
    assert "简并" in caplog.text


def test_window_projector_trace(small_spectrum):
    A = build_observable("window_projector", {"indices": (3, 5)}, small_spectrum)
    assert np.trace(A.matrix) == pytest.approx(3.0)
    assert A.is_diagonal


def test_selection_out_of_range(small_spectrum):
    with pytest.raises(RangeError):
        select_indices(small_spectrum, {"indices": (30, 45)})
    with pytest.raises(RangeError):
        window_bounds(small_spectrum, 1.0, 500)
    with pytest.raises(ParameterError):
        select_indices(small_spectrum, {"window": 1})


def test_non_hermitian_observable_rejected():
    with pytest.raises(ParameterError):
        Observable(matrix=np.array([[0.0, 1.0], [0.0, 0.0]]), kind="custom")


def test_named_profiles(dense_spectrum):
    energy = build_observable("diagonal_profile", {"profile": "energy"}, dense_spectrum)
    np.testing.assert_allclose(np.diag(energy.matrix), dense_spectrum.levels)
    tanh = build_observable("diagonal_profile", {"profile": "tanh"}, dense_spectrum)
    assert np.all(np.abs(np.diag(tanh.matrix)) < 1.0)
    with pytest.raises(ParameterError):
        build_observable("diagonal_profile", {"profile": "cubic"}, dense_spectrum)


def test_window_coherence_requires_disjoint_windows(dense_spectrum):
    params = {"first": {"window": 3, "delta": 1.0}, "second": {"window": 3, "delta": 1.0}}
    with pytest.raises(ParameterError):
        build_observable("window_coherence", params, dense_spectrum)


STAT_PARAMS = {
    "pure_hf": {},
    "window_uniform": {"window": 4, "delta": 1.0},
    "boltzmann_diagonal": {"beta": 1.0, "window": 4, "delta": 1.0},
    "random_psd_window": {"window": 4, "delta": 1.0, "rank": 3},
    "cross_window_pure": {"windows": [{"window": 3, "delta": 1.0}, {"window": 6, "delta": 1.0}]},
    "window_mixture": {"windows": [{"window": 3, "delta": 1.0}, {"window": 6, "delta": 1.0}],
                       "weights": [0.25, 0.75]},
}


@pytest.mark.parametrize("kind", STAT_OPERATOR_KINDS)
def test_stat_operator_is_a_density_matrix(dense_spectrum, kind):
    pi = build_stat_operator(kind, STAT_PARAMS[kind], dense_spectrum, seed=3)
    assert np.trace(pi.matrix).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(pi.matrix).min() > -1e-12


def test_negative_weights_rejected(dense_spectrum):
    params = dict(STAT_PARAMS["window_mixture"], weights=[-0.5, 1.5])
    with pytest.raises(ParameterError):
        build_stat_operator("window_mixture", params, dense_spectrum)


def test_partition_of_window_uniform(dense_spectrum):
    pi = build_stat_operator("window_uniform", STAT_PARAMS["window_uniform"], dense_spectrum)
    partition = partition_windows(dense_spectrum, pi, 1.0)
    assert partition.p.sum() == pytest.approx(1.0)
    assert partition.p[4] == pytest.approx(1.0)
    assert partition.occupied(1e-12).tolist() == [4]
    assert partition.rho[4] == pytest.approx(20.0)


def test_partition_mixture_weights(dense_spectrum):
    pi = build_stat_operator("window_mixture", STAT_PARAMS["window_mixture"], dense_spectrum)
    partition = partition_windows(dense_spectrum, pi, 1.0)
    assert partition.p[3] == pytest.approx(0.25)
    assert partition.p[6] == pytest.approx(0.75)


def test_partition_rejects_bad_delta(dense_spectrum):
    pi = build_stat_operator("pure_hf", {}, dense_spectrum)
    with pytest.raises(ParameterError):
        partition_windows(dense_spectrum, pi, 0.0)


def test_moments_of_pure_state(dense_spectrum):
    pi = build_stat_operator("pure_hf", {"m0": 100}, dense_spectrum)
    moments = energy_moments(dense_spectrum, pi, 0.7)
    assert moments.E == pytest.approx(dense_spectrum.levels[100])
    assert moments.hf_variance == pytest.approx(0.0, abs=1e-14)
    assert moments.deltaE_sq == pytest.approx(0.49)


@pytest.mark.parametrize("kind", STAT_OPERATOR_KINDS)
def test_energy_spread_never_below_delta(dense_spectrum, kind):
    pi = build_stat_operator(kind, STAT_PARAMS[kind], dense_spectrum, seed=4)
    moments = energy_moments(dense_spectrum, pi, 1.0)
    assert moments.deltaE_sq >= moments.delta_sq
