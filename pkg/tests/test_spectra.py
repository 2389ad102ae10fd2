"""
展开、间距分布、Δ3 刚度与强度函数
"""
import numpy as np
import pytest

from app.core.ensemble import EnvelopeF, Realization, diagonalize, sample_synthetic
from app.core.errors import (
    DegenerateInputError,
    InsufficientDataError,
    OrderingError,
    ParameterError,
    ShapeError,
)
from app.core.scaffold import DensityModel, build_hf_spectrum
from app.core.spectra import (
    Delta3Curve,
    delta3,
    delta3_curve,
    detect_upbend,
    goe_delta3,
    nns_ks,
    reference_curve,
    strength_function,
    unfold,
)
from app.tools.parallel import realization_rng


@pytest.fixture
def poisson_levels() -> np.ndarray:
    return np.cumsum(np.random.default_rng(42).exponential(size=20000))


def test_unfold_constant_density():
    density = DensityModel(rho0=2.0, origin=1.0)
    np.testing.assert_allclose(unfold([1.0, 2.0, 3.5], density), [0.0, 2.0, 5.0])


def test_unfold_rejects_unsorted():
    with pytest.raises(OrderingError):
        unfold([0.0, 2.0, 1.0], DensityModel())


def test_poisson_nns(poisson_levels):
    report = nns_ks(poisson_levels)
    assert report.ks_poisson < 0.02
    assert report.ks_wigner > 0.1
    assert report.spacings == poisson_levels.size - 1
    assert report.counts.sum() <= report.spacings


def test_lattice_is_far_from_both_references():
    report = nns_ks(np.arange(1000, dtype=float))
    assert report.ks_wigner > 0.3
    assert report.ks_poisson > 0.3


def test_nns_needs_enough_spacings():
    with pytest.raises(InsufficientDataError):
        nns_ks(np.arange(150, dtype=float))


def test_nns_rejects_degenerate_levels():
    with pytest.raises(DegenerateInputError):
        nns_ks(np.zeros(300))


def test_nns_pools_sequences():
    sequences = [np.arange(120, dtype=float), 5.0 * np.arange(120, dtype=float)]
    assert nns_ks(sequences).spacings == 238


@pytest.mark.parametrize("L", [5.0, 10.0, 20.0])
def test_poisson_rigidity(poisson_levels, L):
    curve = delta3_curve(poisson_levels, [L])
    assert curve.values[0] == pytest.approx(L / 15.0, rel=0.15)
    assert curve.stderr[0] > 0


def test_delta3_is_affine_invariant(poisson_levels):
    L_values = [2.0, 10.0]
    original = delta3_curve(poisson_levels[:4000], L_values)
    moved = delta3_curve(3.0 * poisson_levels[:4000] + 7.0, L_values)
    np.testing.assert_allclose(moved.values, original.values, rtol=1e-9)


def test_delta3_rejects_long_intervals():
    with pytest.raises(ParameterError):
        delta3_curve(np.arange(100, dtype=float), [30.0])
    with pytest.raises(ParameterError):
        delta3_curve(np.arange(100, dtype=float), [-1.0])


def test_poisson_upbend_against_goe(poisson_levels):
    result = delta3(poisson_levels, [2.0, 5.0, 10.0], reference="goe_analytic")
    assert result.upbend_L == 2.0
    np.testing.assert_allclose(result.reference.values, goe_delta3([2.0, 5.0, 10.0]))


def test_no_reference_means_no_upbend(poisson_levels):
    result = delta3(poisson_levels, [2.0, 5.0], reference=None)
    assert result.reference is None
    assert result.upbend_L is None


def test_reference_curve_lookup():
    analytic = reference_curve("poisson_analytic", [3.0, 15.0])
    np.testing.assert_allclose(analytic.values, [0.2, 1.0])
    assert np.all(analytic.stderr == 0)
    with pytest.raises(ParameterError):
        reference_curve("cue", [3.0])


def test_detect_upbend_requires_same_grid():
    a = Delta3Curve(L=np.array([1.0, 2.0]), values=np.zeros(2), stderr=np.zeros(2))
    b = Delta3Curve(L=np.array([1.0, 3.0]), values=np.zeros(2), stderr=np.zeros(2))
    with pytest.raises(ShapeError):
        detect_upbend(a, b)


def test_strength_of_unperturbed_system(dense_spectrum):
    real = diagonalize(dense_spectrum, np.zeros((dense_spectrum.n, dense_spectrum.n)))
    fit = strength_function([real], dense_spectrum, delta=1.0)
    assert fit.gaussian_width == 0.0
    assert fit.lorentzian_width == 0.0
    assert np.count_nonzero(fit.mean_weight) == 1


def test_strength_of_zero_transform(dense_spectrum):
    real = Realization(eigenvalues=np.array(dense_spectrum.levels),
                       transform=np.zeros((dense_spectrum.n, dense_spectrum.n)),
                       origin="microscopic", symmetry="orthogonal")
    with pytest.raises(DegenerateInputError):
        strength_function([real], dense_spectrum, delta=1.0)
    with pytest.raises(DegenerateInputError):
        strength_function([real], dense_spectrum)


def test_strength_needs_realizations(dense_spectrum):
    with pytest.raises(InsufficientDataError):
        strength_function([], dense_spectrum, delta=1.0)


def test_synthetic_strength_is_gaussian(dense_spectrum):
    envelope = EnvelopeF(delta=1.0)
    reals = [sample_synthetic(dense_spectrum, envelope, "orthogonal", realization_rng(11, r))
             for r in range(5)]
    fit = strength_function(reals, dense_spectrum, delta=1.0, workers=2)
    assert fit.gaussian_width == pytest.approx(1.0, rel=0.15)
    assert fit.preferred_shape == "gaussian"
    assert fit.sum_rule == pytest.approx(1.0, abs=0.1)
    assert fit.realizations == 5


def test_strength_width_converges_with_realizations():
    spectrum = build_hf_spectrum(DensityModel(rho0=50.0), 500, seed=12)
    envelope = EnvelopeF(delta=1.0)
    reals = [sample_synthetic(spectrum, envelope, "orthogonal", realization_rng(13, r))
             for r in range(24)]
    errors = [abs(strength_function(reals[:count], spectrum, delta=1.0).gaussian_width - 1.0)
              for count in (2, 8, 24)]
    assert max(errors) <= 0.1
    assert errors[-1] <= 0.05
