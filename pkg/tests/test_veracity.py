import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from aggrekit.datamodel import TrafficMatrix, UncertaintySpec, corrupt, generate_synthetic
from aggrekit.exceptions import AmbiguityError, ParameterError, UnsupportedInputError
from aggrekit.validation import rng_for
from aggrekit.veracity import (
    AnnealSchedule,
    PCASubspaceEstimator,
    RobustSubspaceEstimator,
    SubspaceBasis,
    TrueDataEstimator,
    align_gain_scale,
    estimate_dominant_subspace,
    estimate_gain,
    gain_system,
    pca_subspace,
    perturb_basis,
    principal_angles,
    reconstruct_true_data,
    smoothed_penalty,
    smoothed_penalty_gradient,
    subspace_reconstruction_error,
    true_data_error,
    variance_captured,
)


def _orthonormal(n, k, seed):
    return np.linalg.qr(rng_for(seed, "basis").normal(size=(n, k)))[0]


def _centered(m, n, k, seed):
    y, truth = generate_synthetic(m, n, k, seed)
    return y.values - y.values.mean(axis=0), truth


# -- penalty ----------------------------------------------------------------

def test_penalty_frozen_value():
    # (0 + 1)^0.25 + (9 + 1)^0.25 + (16 + 1)^0.25
    assert smoothed_penalty(np.array([0.0, 3.0, -4.0]), 1.0, 0.5) == pytest.approx(
        1.0 + 10 ** 0.25 + 17 ** 0.25, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 2), st.floats(0.1, 0.9))
def test_penalty_gradient_finite_difference(r, delta, p):
    h = 1e-6
    fd = (smoothed_penalty(np.array([r + h]), delta, p) - smoothed_penalty(np.array([r - h]), delta, p)) / (2 * h)
    assert smoothed_penalty_gradient(np.array([r]), delta, p)[0] == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("delta,p", [(0.0, 0.5), (1.0, 1.0), (1.0, 0.0)])
def test_penalty_rejects_bad_parameters(delta, p):
    with pytest.raises(ParameterError):
        smoothed_penalty(np.ones(2), delta, p)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1), st.floats(0.1, 0.9))
def test_penalty_shrinks_with_delta(delta, p):
    r = np.linspace(-2, 2, 11)
    assert smoothed_penalty(r, delta / 2, p) <= smoothed_penalty(r, delta, p)


# -- schedule ---------------------------------------------------------------

def test_schedule_endpoints():
    s = AnnealSchedule(1.0, 1e-6, 7)
    d = s.deltas()
    assert d[0] == 1.0 and d[-1] == pytest.approx(1e-6)
    np.testing.assert_allclose(d[1:] / d[:-1], s.shrink)


@pytest.mark.parametrize("kw", [{"omega": 1}, {"p": 1.5}, {"delta_0": 0}, {"inner_steps": 0}])
def test_schedule_validation(kw):
    with pytest.raises(ParameterError):
        AnnealSchedule(**kw)


# -- subspace ---------------------------------------------------------------

def test_clean_data_recovers_exact_subspace():
    X, truth = _centered(120, 60, 4, seed=0)
    basis, L = estimate_dominant_subspace(X, 4, AnnealSchedule(omega=20))
    oracle = np.linalg.svd(X, full_matrices=False)[2][:4].T
    assert principal_angles(basis, oracle).max() < 1e-8
    assert basis.orthonormality_error() < 1e-12
    np.testing.assert_allclose(L, X, atol=1e-8)


def test_objective_decreases_within_each_step():
    X, _ = _centered(80, 40, 3, seed=1)
    Xc = corrupt(TrafficMatrix(X), UncertaintySpec(outlier_density=0.1, seed=1)).values
    _, _, info = estimate_dominant_subspace(Xc, 3, AnnealSchedule(omega=15), return_info=True)
    for path in info["objective_path"]:
        assert all(b <= a * (1 + 1e-12) for a, b in zip(path, path[1:]))


def test_robust_beats_pca_on_outliers():
    y, _ = generate_synthetic(150, 80, 3, seed=2)
    clean_basis = pca_subspace(TrafficMatrix(y.values - y.values.mean(axis=0)), 3)
    yc = corrupt(y, UncertaintySpec(outlier_density=0.1, seed=2))
    robust = RobustSubspaceEstimator(3, n_outer=30).fit(yc)
    pca = PCASubspaceEstimator(3).fit(yc)
    angle_r = principal_angles(robust.basis_, clean_basis).max()
    angle_p = principal_angles(pca.basis_, clean_basis).max()
    assert angle_r < 1e-3 < angle_p


def test_robust_handles_missing_entries():
    y, _ = generate_synthetic(150, 80, 3, seed=3)
    clean_basis = pca_subspace(TrafficMatrix(y.values - y.values.mean(axis=0)), 3)
    yc = corrupt(y, UncertaintySpec(missing_fraction=0.3, seed=3))
    est = RobustSubspaceEstimator(3, n_outer=30).fit(yc)
    assert principal_angles(est.basis_, clean_basis).max() < 1e-6
    # missing entries are filled from the model
    np.testing.assert_allclose(est.cleaned(), y.values, atol=1e-5)


def test_outliers_are_flagged():
    y, _ = generate_synthetic(100, 60, 3, seed=4)
    yc = corrupt(y, UncertaintySpec(outlier_density=0.05, outlier_range=(5, 10), seed=4))
    est = RobustSubspaceEstimator(3, n_outer=30).fit(yc)
    hit = yc.values != y.values
    assert (~est.trusted_mask_[hit]).mean() > 0.99
    assert est.trusted_mask_[~hit].mean() > 0.95


def test_needs_observed_rows_and_columns():
    X = np.ones((4, 3))
    mask = np.ones((4, 3), bool)
    mask[:, 1] = False
    with pytest.raises(UnsupportedInputError):
        estimate_dominant_subspace(TrafficMatrix(X, mask=mask), 1)


def test_variance_captured():
    X, _ = _centered(50, 20, 2, seed=0)
    assert variance_captured(TrafficMatrix(X), 2) == pytest.approx(1.0)
    assert variance_captured(TrafficMatrix(np.zeros((3, 3))), 1) == 1.0


def test_perturb_basis_stays_orthonormal():
    b = SubspaceBasis(_orthonormal(30, 4, 0))
    assert perturb_basis(b, 0.0, 0) is b
    p = perturb_basis(b, 1e-4, 0)
    assert p.orthonormality_error() < 1e-12
    assert 0 < principal_angles(b, p).max() < 0.1


# -- gains ------------------------------------------------------------------

def _calibrated(m, n, k, seed):
    """Data whose true readings lie in a known subspace U, plus its gains."""
    rng = rng_for(seed, "cal")
    U = _orthonormal(n, k, seed)
    Z = rng.normal(size=(m, k)) @ U.T
    gains = rng.uniform(0.5, 1.5, n)
    return Z / gains, U, gains


def test_gain_matches_explicit_svd_oracle():
    Y, U, gains = _calibrated(40, 12, 3, seed=0)
    basis = SubspaceBasis(U)
    H = gain_system(basis, Y)
    assert H.shape == (40 * 12, 12)
    v = np.linalg.svd(H)[2][-1]
    v = v / v.mean()
    alpha = estimate_gain(basis, Y)
    np.testing.assert_allclose(alpha, v, atol=1e-9)
    np.testing.assert_allclose(alpha, gains / gains.mean(), atol=1e-9)


def test_data_derived_basis_gives_unit_gains():
    # the basis of the raw data itself already contains the raw data, so all
    # ones solves the homogeneous system exactly
    Y, _, _ = _calibrated(60, 15, 3, seed=1)
    basis = pca_subspace(TrafficMatrix(Y), 3)
    np.testing.assert_allclose(estimate_gain(basis, Y), np.ones(15), atol=1e-8)
    H = gain_system(basis, Y)
    assert np.linalg.norm(H @ np.ones(15)) < 1e-10


def test_gain_ambiguity_and_validation():
    basis = SubspaceBasis(_orthonormal(6, 2, 0))
    with pytest.raises(AmbiguityError):
        estimate_gain(basis, np.zeros((10, 6)))
    with pytest.raises(ParameterError):
        estimate_gain(basis, np.ones((10, 5)))
    mask = np.ones((10, 6), bool)
    mask[0, 0] = False
    with pytest.raises(UnsupportedInputError):
        estimate_gain(basis, TrafficMatrix(np.ones((10, 6)), mask=mask))


def test_gain_singular_values_sorted():
    Y, U, _ = _calibrated(30, 10, 2, seed=2)
    _, s = estimate_gain(SubspaceBasis(U), Y, return_singular_values=True)
    assert s[0] < 1e-6 < s[1]
    assert (np.diff(s) >= 0).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10))
def test_gain_scale_invariance(seed, c):
    Y, U, _ = _calibrated(30, 8, 2, seed)
    basis = SubspaceBasis(U)
    np.testing.assert_allclose(estimate_gain(basis, c * Y), estimate_gain(basis, Y), rtol=1e-7, atol=1e-9)


def test_true_data_estimator_with_known_basis():
    Y, U, gains = _calibrated(80, 20, 3, seed=5)
    offsets = rng_for(5, "off").uniform(-0.5, 0.5, 20)
    Z = Y * gains + offsets
    est = TrueDataEstimator(PCASubspaceEstimator(3), offsets=offsets, calibration_basis=U).fit(Y)
    s = align_gain_scale(est.gains_, gains)
    z_hat = reconstruct_true_data(est.cleaned_, s * est.gains_, offsets)
    assert true_data_error(z_hat, Z) < 1e-8
    res = est.result()
    np.testing.assert_allclose(res.z_hat, est.fit_transform(Y))


def test_blind_defaults_report_unit_gains():
    y, _ = generate_synthetic(60, 30, 3, seed=0)
    est = TrueDataEstimator(RobustSubspaceEstimator(3, n_outer=5)).fit(y.values)
    np.testing.assert_allclose(est.gains_, np.ones(30), atol=1e-6)


def test_reconstruct_requires_fill_for_masked():
    mask = np.ones((3, 2), bool)
    mask[0, 0] = False
    y = TrafficMatrix(np.ones((3, 2)), mask=mask)
    with pytest.raises(ParameterError):
        reconstruct_true_data(y, np.ones(2), np.zeros(2))
    out = reconstruct_true_data(y, np.array([2.0, 1.0]), np.array([0.0, 1.0]), fill=np.full((3, 2), 5.0))
    assert out[0, 0] == 10.0 and out[1, 1] == 2.0


# -- errors -----------------------------------------------------------------

def test_error_metrics_frozen():
    basis = SubspaceBasis(np.eye(3)[:, :2])
    ref = np.array([[3.0, 4.0, 9.0], [0.0, 0.0, 1.0]])
    est = np.array([[3.0, 5.0, 0.0], [1.0, 0.0, 0.0]])
    val, skipped = subspace_reconstruction_error(basis, est, ref, return_skipped=True)
    assert val == pytest.approx(0.2) and skipped == 1
    z = np.array([[1.0, 0.0], [0.0, 0.0]])
    val, skipped = true_data_error(np.array([[2.0, 1.0], [0.0, 0.0]]), z, return_skipped=True)
    assert val == pytest.approx(1.0) and skipped == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_error_metrics_zero_on_identity(seed):
    rng = rng_for(seed, "err")
    Y = rng.normal(size=(10, 6))
    basis = SubspaceBasis(_orthonormal(6, 2, seed))
    assert subspace_reconstruction_error(basis, Y, Y) == 0.0
    assert true_data_error(Y, Y) == 0.0


def test_align_gain_scale():
    a = np.array([1.0, 2.0, 3.0])
    assert align_gain_scale(a, 4 * a) == pytest.approx(4.0)


# -- estimator API ----------------------------------------------------------

def test_estimator_api():
    y, _ = generate_synthetic(60, 20, 2, seed=0)
    est = RobustSubspaceEstimator(2, n_outer=8)
    params = est.get_params()
    assert params["n_components"] == 2 and params["n_outer"] == 8
    twin = clone(est).set_params(p=0.3)
    assert twin.p == 0.3 and est.p == 0.5
    Z = est.fit_transform(y.values)
    assert Z.shape == (60, 2)
    np.testing.assert_allclose(est.inverse_transform(Z), y.values, atol=1e-6)
    assert est.n_iter_ == 8 and len(est.objective_path_) == 8


def test_transform_masked_rows():
    y, _ = generate_synthetic(60, 20, 2, seed=0)
    est = PCASubspaceEstimator(2).fit(y.values)
    X = y.values.copy()
    full = est.transform(X)
    X[0, :5] = np.nan
    part = est.transform(X)
    np.testing.assert_allclose(part, full, atol=1e-8)
    with pytest.raises(ParameterError):
        est.transform(np.ones((2, 3)))


def test_pipeline_composition():
    y, _ = generate_synthetic(40, 15, 2, seed=0)
    pipe = make_pipeline(PCASubspaceEstimator(2))
    assert pipe.fit_transform(y.values).shape == (40, 2)


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        PCASubspaceEstimator(2).transform(np.ones((2, 3)))


# -- operation examples -----------------------------------------------------

def test_penalty_examples():
    assert smoothed_penalty(np.zeros((3, 4)), 0.01, 0.5) == pytest.approx(12 * 0.01 ** 0.25)
    assert smoothed_penalty(np.array([[2.0]]), 1e-14, 0.5) == pytest.approx(2 ** 0.5, rel=1e-10)


def test_projector_identities():
    b = SubspaceBasis(_orthonormal(12, 3, 0))
    theta = b.complement()
    np.testing.assert_allclose(theta @ theta, theta, atol=1e-12)
    np.testing.assert_allclose(theta @ b.u, 0, atol=1e-12)


def test_schedule_ratio_exact():
    d = AnnealSchedule().deltas()
    assert (np.diff(d) < 0).all()
    np.testing.assert_allclose(d[1:] / d[:-1], AnnealSchedule().shrink, rtol=1e-12)


def test_missing_entries_angle_against_factors():
    y, truth = generate_synthetic(100, 60, 3, seed=6, calibrate=False)
    yc = corrupt(y, UncertaintySpec(missing_fraction=0.3, seed=6))
    est = RobustSubspaceEstimator(3, n_outer=30).fit(yc)
    Z = truth.low_rank - truth.low_rank.mean(axis=0)
    oracle = np.linalg.svd(Z, full_matrices=False)[2][:3].T
    assert principal_angles(est.basis_, oracle).max() < 1e-3


def test_robust_subspace_error_below_pca_with_outliers():
    y, _ = generate_synthetic(120, 60, 3, seed=7)
    yc = corrupt(y, UncertaintySpec(outlier_density=0.2, seed=7))
    ref = y.values - y.values.mean(axis=0)
    errs = {}
    for name, est in (("robust", RobustSubspaceEstimator(3, n_outer=30)), ("pca", PCASubspaceEstimator(3))):
        est.fit(yc)
        errs[name] = subspace_reconstruction_error(est.basis_, est.denoised() - y.values.mean(axis=0), ref)
    assert errs["robust"] < errs["pca"]


def test_variance_captured_examples():
    rng = rng_for(0, "white")
    assert variance_captured(TrafficMatrix(rng.normal(size=(20000, 10))), 3) == pytest.approx(0.3, abs=0.01)
    X, _ = _centered(30, 10, 10, seed=0)
    assert variance_captured(TrafficMatrix(X), 10) == pytest.approx(1.0, abs=1e-10)


def test_rank_one_basis_parallel_to_factor():
    a, b = np.arange(1.0, 9.0), np.array([1.0, -2.0, 0.5])
    basis = pca_subspace(TrafficMatrix(np.outer(b, a)), 1)
    cos = abs(basis.u[:, 0] @ a) / np.linalg.norm(a)
    assert cos >= 1 - 1e-10


def test_identity_calibration_recovers_unit_gains():
    Y, U, gains = _calibrated(50, 12, 3, seed=8)
    Z = Y * gains  # readings already equal to the truth
    np.testing.assert_allclose(estimate_gain(SubspaceBasis(U), Z), np.ones(12), atol=1e-6)


def test_gain_cosine_with_known_subspace():
    Y, U, gains = _calibrated(80, 30, 5, seed=9)
    alpha = estimate_gain(SubspaceBasis(U), Y)
    assert alpha @ gains / (np.linalg.norm(alpha) * np.linalg.norm(gains)) >= 0.99


def test_reconstruct_examples():
    y = TrafficMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(reconstruct_true_data(y, np.ones(2), np.zeros(2)), y.values)
    np.testing.assert_array_equal(reconstruct_true_data(y, 2 * np.ones(2), None), 2 * y.values)


def test_subspace_error_examples():
    rng = rng_for(1, "e")
    basis = SubspaceBasis(_orthonormal(6, 2, 1))
    ref = rng.normal(size=(9, 6))
    assert subspace_reconstruction_error(basis, 2 * ref, ref) == pytest.approx(1.0)
    est = ref + 0.1 * rng.normal(size=ref.shape)
    # independently coded per-snapshot loop
    terms = [np.linalg.norm(basis.u.T @ (e - r)) / np.linalg.norm(basis.u.T @ r) for e, r in zip(est, ref)]
    assert subspace_reconstruction_error(basis, est, ref) == pytest.approx(np.mean(terms), rel=1e-12)


def test_true_data_error_examples():
    z = rng_for(2, "z").normal(size=(7, 4))
    assert true_data_error(np.zeros_like(z), z) == pytest.approx(1.0)
    eps = 1e-3
    shifted = z.copy()
    shifted[0] += eps
    expected = np.mean(eps / np.linalg.norm(z, axis=0))
    assert true_data_error(shifted, z) == pytest.approx(expected, rel=1e-12)


def test_orthonormality_kept_through_annealing():
    y, _ = generate_synthetic(60, 30, 3, seed=3)
    yc = corrupt(y, UncertaintySpec(outlier_density=0.2, missing_fraction=0.2, noise_std=0.1, seed=3))
    for omega in (2, 5, 20):
        est = RobustSubspaceEstimator(3, n_outer=omega).fit(yc)
        assert est.basis_.orthonormality_error() < 1e-8
