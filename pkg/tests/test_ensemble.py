"""
微观与合成两条路线的系综
"""
import numpy as np
import pytest
from scipy.integrate import trapezoid

from app.core.ensemble import (
    CALIBRATION_TOLERANCE,
    EnsembleSpec,
    EnvelopeCalibration,
    EnvelopeF,
    ResidualSpec,
    binned_moments,
    calibrate_envelope,
    diagonalize,
    golden_rule_width,
    realize,
    sample_residual,
    sample_synthetic,
    stitched_goe_levels,
    unfolded_goe_levels,
)
from app.core.errors import InsufficientDataError, NumericError, ParameterError, ShapeError
from app.core.scaffold import DensityModel, build_hf_spectrum
from app.tools.artifacts import decode_array


def test_two_level_eigenvalues(two_level):
    _, _, real = two_level
    np.testing.assert_allclose(real.eigenvalues, [-np.sqrt(2.0), np.sqrt(2.0)], atol=1e-12)
    assert real.orthogonality_residual() < 1e-12


def test_zero_residual_gives_identity(small_spectrum):
    real = diagonalize(small_spectrum, np.zeros((small_spectrum.n, small_spectrum.n)))
    np.testing.assert_allclose(real.eigenvalues, small_spectrum.levels, atol=1e-12)
    np.testing.assert_allclose(np.abs(real.transform), np.eye(small_spectrum.n), atol=1e-12)


def test_phase_convention_makes_pivot_positive(small_spectrum):
    v = sample_residual(small_spectrum, ResidualSpec(band_halfwidth=5, rms_strength=0.3), seed=1)
    real = diagonalize(small_spectrum, v)
    pivots = real.transform[np.argmax(np.abs(real.transform), axis=0), np.arange(real.n)]
    assert np.all(pivots > 0)


def test_residual_structure(small_spectrum):
    spec = ResidualSpec(band_halfwidth=3, fill_probability=1.0, rms_strength=0.2)
    v = sample_residual(small_spectrum, spec, seed=2)
    np.testing.assert_array_equal(v, v.T)
    offsets = np.abs(np.subtract.outer(np.arange(v.shape[0]), np.arange(v.shape[0])))
    assert np.all(v[offsets > 3] == 0)
    assert np.all(np.diag(v) == 0)


def test_unitary_residual_is_hermitian(small_spectrum):
    spec = ResidualSpec(band_halfwidth=4, rms_strength=0.2, symmetry="unitary")
    v = sample_residual(small_spectrum, spec, seed=3)
    assert np.iscomplexobj(v)
    np.testing.assert_allclose(v, v.conj().T)
    real = diagonalize(small_spectrum, v)
    assert real.symmetry == "unitary"
    assert real.orthogonality_residual() < 1e-10


def test_wide_band_is_clipped(small_spectrum):
    spec = ResidualSpec(band_halfwidth=10 * small_spectrum.n, rms_strength=0.1)
    v = sample_residual(small_spectrum, spec, seed=4)
    assert v.shape == (small_spectrum.n, small_spectrum.n)
    assert v[0, -1] != 0


def test_diagonalize_rejects_bad_input(small_spectrum):
    with pytest.raises(ShapeError):
        diagonalize(small_spectrum, np.zeros((3, 3)))
    v = np.zeros((small_spectrum.n, small_spectrum.n))
    v[0, 0] = np.nan
    with pytest.raises(NumericError) as info:
        diagonalize(small_spectrum, v)
    assert info.value.diagnostics["finite"] is False


def test_golden_rule_full_band():
    spectrum = build_hf_spectrum(DensityModel(rho0=1.0), 400, seed=5)
    v = sample_residual(spectrum, ResidualSpec(band_halfwidth=399, rms_strength=1.0), seed=6)
    assert golden_rule_width(spectrum, v) == pytest.approx(2.0 * np.pi, rel=0.05)


def test_golden_rule_scales_with_strength_squared():
    spectrum = build_hf_spectrum(DensityModel(rho0=20.0), 500, seed=7)
    weak = sample_residual(spectrum, ResidualSpec(band_halfwidth=499, rms_strength=0.1), seed=8)
    strong = sample_residual(spectrum, ResidualSpec(band_halfwidth=499, rms_strength=0.2), seed=8)
    ratio = golden_rule_width(spectrum, strong) / golden_rule_width(spectrum, weak)
    assert ratio == pytest.approx(4.0, rel=1e-9)


def test_golden_rule_alpha_scaling():
    sparse = build_hf_spectrum(DensityModel(rho0=20.0), 800, seed=9)
    dense = build_hf_spectrum(DensityModel(rho0=40.0), 1600, seed=10)
    width = golden_rule_width(sparse, sample_residual(
        sparse, ResidualSpec(band_halfwidth=799, fill_probability=0.2, rms_strength=0.2), seed=11))
    scaled = golden_rule_width(dense, sample_residual(
        dense, ResidualSpec(band_halfwidth=1599, fill_probability=0.1, rms_strength=0.2), seed=12))
    assert scaled / width == pytest.approx(1.0, rel=0.25)


def test_golden_rule_needs_rows():
    tiny = build_hf_spectrum(DensityModel(), 5, seed=0)
    with pytest.raises(InsufficientDataError):
        golden_rule_width(tiny, np.zeros((5, 5)))


def test_envelope_profiles_are_normalized():
    x = np.linspace(-1000.0, 1000.0, 800001)
    for kind in ("gaussian", "lorentzian"):
        envelope = EnvelopeF(kind=kind, delta=1.3)
        assert trapezoid(envelope.profile(x), x) == pytest.approx(1.0, rel=5e-3)
        assert trapezoid(envelope.pair_profile(x), x) == pytest.approx(1.0, rel=5e-3)
        assert envelope.propagator([0.0])[0] == pytest.approx(1.0)


def test_envelope_rejects_bad_width():
    with pytest.raises(ParameterError):
        EnvelopeF(delta=0.0)
    with pytest.raises(ParameterError):
        EnvelopeF(kind="cauchy")


def test_envelope_sum_rule_in_bulk(dense_spectrum):
    envelope = EnvelopeF(delta=1.0)
    density = dense_spectrum.density
    positions = density.inverse_staircase(np.arange(dense_spectrum.n) + 0.5)
    sums = envelope.sum_rule(dense_spectrum.levels, positions, density)
    bulk = dense_spectrum.window_indices(4.0, 6.0)
    np.testing.assert_allclose(sums[bulk], 1.0, atol=0.02)


def test_synthetic_realization(dense_spectrum):
    real = sample_synthetic(dense_spectrum, EnvelopeF(delta=1.0), "orthogonal", seed=13)
    assert real.origin == "synthetic"
    assert real.orthogonality_residual() < 1e-10
    assert np.all(np.diff(real.eigenvalues) >= 0)
    assert real.mean_eigenvalues.shape == (dense_spectrum.n,)


def test_synthetic_needs_enough_levels_per_window(small_spectrum):
    with pytest.raises(ParameterError):
        sample_synthetic(small_spectrum, EnvelopeF(delta=1.0), "orthogonal", seed=14)


def test_unitary_synthetic_is_unitary(dense_spectrum):
    real = sample_synthetic(dense_spectrum, EnvelopeF(delta=1.0), "unitary", seed=15)
    assert np.iscomplexobj(real.transform)
    assert real.orthogonality_residual() < 1e-10


def test_unfolded_goe_levels_have_unit_spacing(rng):
    levels = unfolded_goe_levels(500, "orthogonal", rng)
    assert levels.size == 500
    assert np.mean(np.diff(levels)) == pytest.approx(1.0, rel=0.05)


def test_stitched_levels(rng):
    levels = stitched_goe_levels(400, 20.0, "orthogonal", rng)
    assert levels.size == 400
    assert np.all(np.diff(levels) >= 0)
    with pytest.raises(ParameterError):
        stitched_goe_levels(10, 0.5, "orthogonal", rng)


def test_realize_is_seed_deterministic(dense_spectrum, synthetic_spec):
    a = realize(dense_spectrum, synthetic_spec, np.random.SeedSequence(3, spawn_key=(0,)))
    b = realize(dense_spectrum, synthetic_spec, np.random.SeedSequence(3, spawn_key=(0,)))
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.transform, b.transform)


def test_ensemble_spec_validation():
    with pytest.raises(ParameterError):
        EnsembleSpec(route="microscopic")
    with pytest.raises(ParameterError):
        EnsembleSpec(route="synthetic")
    with pytest.raises(ParameterError):
        EnsembleSpec(route="microscopic", symmetry="unitary",
                     residual=ResidualSpec(band_halfwidth=2))


def test_payload_roundtrip_of_eigenvalues(two_level):
    _, _, real = two_level
    payload = real.to_payload()
    np.testing.assert_array_equal(decode_array(payload["eigenvalues"]), real.eigenvalues)


@pytest.fixture(scope="module")
def bulk_spectrum():
    """N_Δ = 50 的 500 个 HF 能级"""
    return build_hf_spectrum(DensityModel(rho0=50.0), 500, seed=40)


def _binned_deviation(spectrum, envelope, calibrate: bool, count: int = 4) -> float:
    positions = spectrum.density.inverse_staircase(np.arange(spectrum.n) + 0.5)
    moments = binned_moments(spectrum, envelope, positions)
    measured = sum(
        moments.measure(sample_synthetic(spectrum, envelope, "orthogonal", seed=41 + r,
                                         calibrate=calibrate).transform)
        for r in range(count)
    ) / count
    return float(np.max(np.abs(measured / moments.target - 1.0)))


def test_post_polar_moments_match_envelope(bulk_spectrum):
    assert _binned_deviation(bulk_spectrum, EnvelopeF(delta=1.0), calibrate=True) <= 0.1


def test_uncalibrated_polar_factor_widens_envelope(bulk_spectrum):
    assert _binned_deviation(bulk_spectrum, EnvelopeF(delta=1.0), calibrate=False, count=2) > 0.1


def test_calibration_is_cached_and_converged(bulk_spectrum):
    envelope = EnvelopeF(delta=1.0)
    first = calibrate_envelope(bulk_spectrum, envelope, "orthogonal")
    assert calibrate_envelope(bulk_spectrum, envelope, "orthogonal") is first
    assert first.averaged >= 2
    assert first.deviation < CALIBRATION_TOLERANCE
    # 极分解使线形变宽，远端需要压低
    assert first.gain([0.0])[0] > first.gain([2.5])[0]
    assert set(first.to_dict()) == {"offsets", "gain", "rounds", "deviation", "averaged"}


def test_identity_calibration_keeps_envelope(dense_spectrum):
    envelope = EnvelopeF(delta=1.0)
    density = dense_spectrum.density
    positions = density.inverse_staircase(np.arange(dense_spectrum.n) + 0.5)
    np.testing.assert_array_equal(
        EnvelopeCalibration.identity().variance(envelope, dense_spectrum.levels, positions, density),
        envelope.matrix(dense_spectrum.levels, positions, density),
    )


def test_calibration_skipped_without_interior_rows():
    spectrum = build_hf_spectrum(DensityModel(rho0=3.0), 18, seed=42)
    calibration = calibrate_envelope(spectrum, EnvelopeF(delta=1.0), "orthogonal")
    assert calibration.offsets.size == 1
    assert calibration.gain([1.0])[0] == 1.0


@pytest.mark.parametrize("symmetry", ["orthogonal", "unitary"])
def test_synthetic_rows_and_columns_are_normalized(dense_spectrum, symmetry):
    real = sample_synthetic(dense_spectrum, EnvelopeF(delta=1.0), symmetry, seed=43)
    power = np.abs(real.transform) ** 2
    np.testing.assert_allclose(power.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(power.sum(axis=0), 1.0, atol=1e-10)


def test_eigenvalues_independent_of_eigenvectors(dense_spectrum):
    envelope = EnvelopeF(delta=1.0)
    rows = np.arange(80, 120)
    shifts = []
    strengths = []
    for r in range(30):
        real = sample_synthetic(dense_spectrum, envelope, "orthogonal", seed=44 + r)
        nearest = np.argmin(np.abs(np.subtract.outer(real.mean_eigenvalues, dense_spectrum.levels[rows])),
                            axis=0)
        shifts.append(real.eigenvalues[nearest] - real.mean_eigenvalues[nearest])
        strengths.append(np.abs(real.transform[rows, nearest]) ** 2)
    shifts = np.concatenate(shifts)
    strengths = np.concatenate(strengths)
    assert shifts.size >= 1000
    assert abs(np.corrcoef(shifts, strengths)[0, 1]) < 0.1


def test_level_density_matches_rho():
    density = DensityModel(rho0=50.0)
    spectrum = build_hf_spectrum(density, 2000, seed=45)
    inside = (spectrum.levels >= 10.0) & (spectrum.levels < 30.0)
    assert inside.sum() / 20.0 == pytest.approx(50.0, rel=0.05)
    real = sample_synthetic(spectrum, EnvelopeF(delta=1.0), "orthogonal", seed=46, calibrate=False)
    inside = (real.eigenvalues >= 10.0) & (real.eigenvalues < 30.0)
    assert inside.sum() / 20.0 == pytest.approx(50.0, rel=0.03)
