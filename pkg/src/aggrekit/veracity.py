"""Robust dominant-subspace estimation and true-sensor-data recovery.

Data are oriented samples x sensors (scikit-learn convention), so a basis
``U`` of shape ``(n_sensors, k)`` spans sensor space, gains have one entry per
sensor and the projection of a snapshot ``x`` is ``U.T @ x``.

The estimators follow the scikit-learn API and compose with pipelines and
``clone``:

>>> from aggrekit.datamodel import generate_synthetic
>>> Y, truth = generate_synthetic(60, 40, 3, seed=0)
>>> est = RobustSubspaceEstimator(n_components=3, n_outer=10).fit(Y.values)
>>> est.components_.shape
(3, 40)
"""

from dataclasses import dataclass
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .datamodel import TrafficMatrix, center_columns
from .exceptions import AmbiguityError, ConvergenceError, ParameterError, UnsupportedInputError
from .validation import check_matrix, check_positive, check_rank, rng_for


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis ``u`` (n_sensors x k) of a dominant subspace."""

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2:
            raise ParameterError("basis must be a 2-D array")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def k(self):
        return self.u.shape[1]

    @property
    def dim(self):
        return self.u.shape[0]

    def projector(self):
        return self.u @ self.u.T

    def complement(self):
        """Projector ``I - U U^T`` onto the orthogonal complement."""
        return np.eye(self.dim) - self.u @ self.u.T

    def orthonormality_error(self):
        return float(np.linalg.norm(self.u.T @ self.u - np.eye(self.k)))


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric shrinkage of the smoothing parameter over ``omega`` outer steps."""

    delta_0: float = 1.0
    delta_final: float = 1e-6
    omega: int = 100
    p: float = 0.5
    inner_steps: int = 5

    def __post_init__(self):
        check_positive(self.delta_0, "delta_0")
        check_positive(self.delta_final, "delta_final")
        if int(self.omega) != self.omega or self.omega < 2:
            raise ParameterError(f"omega must be an integer >= 2, got {self.omega}")
        if not 0 < self.p < 1:
            raise ParameterError(f"p must lie in (0, 1), got {self.p}")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            raise ParameterError("inner_steps must be a positive integer")

    @property
    def shrink(self):
        return (self.delta_final / self.delta_0) ** (1.0 / (self.omega - 1))

    def deltas(self):
        return self.delta_0 * self.shrink ** np.arange(self.omega)


@dataclass(frozen=True)
class CalibrationResult:
    alpha: np.ndarray
    beta: np.ndarray
    z_hat: np.ndarray


# --------------------------------------------------------------------------
# smoothed l_p penalty

def _penalty_terms(residual, delta, p):
    s = residual * residual + delta
    if p == 0.5:
        q = np.sqrt(np.sqrt(s))
        return q, q * q * q  # s**(p/2), s**(1 - p/2)
    return np.power(s, p / 2), np.power(s, 1 - p / 2)


def smoothed_penalty(residual, delta, p):
    """Sum of ``(r**2 + delta) ** (p / 2)`` over all entries."""
    check_positive(delta, "delta")
    if not 0 < p < 1:
        raise ParameterError(f"p must lie in (0, 1), got {p}")
    value, _ = _penalty_terms(np.asarray(residual, dtype=float), delta, p)
    return float(value.sum())


def smoothed_penalty_gradient(residual, delta, p):
    """Entrywise derivative ``p * r * (r**2 + delta) ** (p/2 - 1)``."""
    check_positive(delta, "delta")
    if not 0 < p < 1:
        raise ParameterError(f"p must lie in (0, 1), got {p}")
    r = np.asarray(residual, dtype=float)
    _, denom = _penalty_terms(r, delta, p)
    return p * r / denom


# --------------------------------------------------------------------------
# annealed robust subspace fit

def _as_traffic(X):
    if isinstance(X, TrafficMatrix):
        return X
    return TrafficMatrix.from_array(X)


def _weighted_coefficients(X, weights, U, previous, ridge):
    """Row-wise weighted least squares of ``X`` onto ``span(U)``.

    A small ridge towards ``previous`` keeps rows with too few trusted
    entries well posed.
    """
    k = U.shape[1]
    A = np.einsum("ik,ji,il->jkl", U, weights, U, optimize=True)
    A += ridge * np.eye(k)
    b = (weights * X) @ U + ridge * previous
    return np.linalg.solve(A, b[..., None])[..., 0]


def _anneal(X, W, k, schedule, record=False):
    """Minimize the smoothed penalty over orthonormal U at shrinking delta.

    ``X`` is centered (n_samples x n_sensors) with zeros at unobserved
    entries; ``W`` is the 0/1 float observation mask. Column means computed
    from corrupted data are biased, so a per-column shift is refit with the
    same robust weights and returned alongside ``U`` and ``L``.
    """
    p = schedule.p
    X0 = X * W
    shift = np.zeros(X.shape[1])
    Xz = X0
    _, s, Vt = np.linalg.svd(Xz, full_matrices=False)
    U = Vt[:k].T.copy()
    C = Xz @ U
    L = C @ U.T
    sigma_max = max(float(s[0]), 1e-300)
    deltas = schedule.deltas()
    step = 1.0 / (p * deltas[0] ** (p / 2 - 1) * sigma_max ** 2)
    objective_path = []

    def evaluate(Uc, delta):
        R = (X - (L @ Uc) @ Uc.T) * W
        q, denom = _penalty_terms(R, delta, p)
        return float((q * W).sum()), R, denom

    for delta in deltas:
        f, R, denom = evaluate(U, delta)
        path = [f]
        for _ in range(schedule.inner_steps):
            G = -(p * R / denom) * W
            grad = L.T @ (G @ U) + G.T @ (L @ U)
            grad -= U @ (U.T @ grad)
            gnorm2 = float((grad * grad).sum())
            if gnorm2 <= 1e-30 * (1.0 + f):
                break
            accepted = False
            for _ in range(60):
                U_try = np.linalg.qr(U - step * grad)[0]
                f_try, R_try, denom_try = evaluate(U_try, delta)
                if f_try <= f - 1e-4 * step * gnorm2:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                if not np.isfinite(f_try):
                    raise ConvergenceError(
                        "backtracking produced a non-finite objective",
                        {"delta": delta, "objective": f, "grad_norm": math.sqrt(gnorm2), "step": step},
                    )
                break
            U, f, R, denom = U_try, f_try, R_try, denom_try
            path.append(f)
            step *= 1.5
        objective_path.append(path)
        # IRLS weights of the current penalty; unobserved entries are pinned
        # to the current estimate with unit weight
        filled = X * W + L * (1 - W)
        _, wden = _penalty_terms((filled - L) * W, delta, p)
        weights = W / wden + (1 - W)
        C = _weighted_coefficients(filled, weights, U, L @ U, 0.0)
        L = C @ U.T
        resid = (X - L) * W
        _, wden = _penalty_terms(resid, delta, p)
        wmean = W / wden
        correction = (wmean * resid).sum(axis=0) / np.maximum(wmean.sum(axis=0), 1e-300)
        shift += correction
        X = (X0 - shift) * W
        if not np.isfinite(L).all():
            raise ConvergenceError("non-finite low-rank estimate", {"delta": delta})
    info = {"objective_path": objective_path if record else None, "deltas": deltas, "shift": shift}
    return U, L, info


def estimate_dominant_subspace(y_bar, k, schedule=None, *, return_info=False):
    """Robust rank-``k`` subspace of a centered, possibly masked matrix.

    Starts from the SVD of the zero-filled observations, then alternates a
    projected-gradient minimization of the smoothed l_p residual over
    orthonormal bases with a reweighted refit of the low-rank matrix while the
    smoothing parameter shrinks geometrically.

    Returns
    -------
    (SubspaceBasis, ndarray)
        The basis and the centered low-rank estimate ``L`` (same shape as the
        input). With ``return_info`` a dict is appended holding the per-step
        objective values, the smoothing schedule and ``shift``, the robust
        correction to the column means that ``L`` is relative to.
    """
    y_bar = _as_traffic(y_bar)
    schedule = schedule or AnnealSchedule()
    k = check_rank(k, y_bar.shape)
    observed = y_bar.observed
    if not observed.any(axis=0).all() or not observed.any(axis=1).all():
        raise UnsupportedInputError("every row and column needs at least one observed entry")
    W = observed.astype(float)
    U, L, info = _anneal(np.where(observed, y_bar.values, 0.0), W, k, schedule, record=return_info)
    basis = SubspaceBasis(U)
    if return_info:
        return basis, L, info
    return basis, L


def pca_subspace(y_bar, k):
    """Top-``k`` principal directions; unobserved entries are treated as zero."""
    y_bar = _as_traffic(y_bar)
    k = check_rank(k, y_bar.shape)
    Xz = np.where(y_bar.observed, y_bar.values, 0.0)
    Vt = np.linalg.svd(Xz, full_matrices=False)[2]
    return SubspaceBasis(Vt[:k].T)


def variance_captured(y_bar, k):
    """Fraction of total variance in the leading ``k`` singular directions."""
    y_bar = _as_traffic(y_bar)
    if y_bar.mask is not None and not y_bar.mask.all():
        raise UnsupportedInputError("variance_captured requires a fully observed matrix")
    k = check_rank(k, y_bar.shape)
    s2 = np.linalg.svd(y_bar.values, compute_uv=False) ** 2
    total = s2.sum()
    if total == 0:
        return 1.0
    return float(s2[:k].sum() / total)


def perturb_basis(basis, noise_var, seed):
    """Add Gaussian noise of variance ``noise_var`` to a basis and re-orthonormalize."""
    std = math.sqrt(max(float(noise_var), 0.0))
    if std == 0:
        return basis
    noisy = basis.u + rng_for(seed, "subspace-noise").normal(0.0, std, basis.u.shape)
    return SubspaceBasis(np.linalg.qr(noisy)[0])


# --------------------------------------------------------------------------
# gain recovery and reconstruction

def gain_system(basis, y_bar):
    """Stacked blocks ``theta @ diag(y_t)`` for every snapshot ``y_t``.

    Memory grows as n_samples * n_sensors**2; :func:`estimate_gain` never
    forms this matrix.
    """
    Y = check_matrix(_as_traffic(y_bar).values)
    theta = basis.complement()
    return np.concatenate([theta * y[None, :] for y in Y], axis=0)


def estimate_gain(basis, y_bar, beta=None, *, return_singular_values=False):
    """Per-sensor gains as the least singular vector of the stacked system.

    ``beta`` is accepted for symmetry with :func:`reconstruct_true_data`;
    known offsets cancel once the columns are centered, so it does not enter
    the system. The normal matrix of the stacked blocks equals the Hadamard product of
    the complement projector with ``Y.T @ Y``, so the minimizer is found from
    an ``n_sensors x n_sensors`` eigenproblem. Gains are returned with unit
    mean (which also fixes the sign).
    """
    y_bar = _as_traffic(y_bar)
    if y_bar.mask is not None and not y_bar.mask.all():
        raise UnsupportedInputError("estimate_gain needs a completed matrix; impute first")
    Y = y_bar.values
    if basis.dim != Y.shape[1]:
        raise ParameterError(f"basis dimension {basis.dim} does not match {Y.shape[1]} sensors")
    if basis.k >= basis.dim:
        raise ParameterError("complement projector is trivial (k must be smaller than the sensor count)")
    normal = basis.complement() * (Y.T @ Y)
    normal = 0.5 * (normal + normal.T)
    evals, evecs = np.linalg.eigh(normal)
    top = max(float(evals[-1]), 1e-300)
    if evals[1] - evals[0] <= 1e-10 * top:
        raise AmbiguityError("two smallest singular values coincide; gains are not identifiable")
    alpha = evecs[:, 0]
    mean = alpha.mean()
    if abs(mean) <= 1e-12 * np.abs(alpha).max():
        raise AmbiguityError("least singular vector has zero mean; unit-mean normalization undefined")
    alpha = alpha / mean
    if return_singular_values:
        return alpha, np.sqrt(np.clip(evals, 0.0, None))
    return alpha


def reconstruct_true_data(y, alpha, beta, fill=None):
    """True readings ``alpha * y + beta`` per sensor column.

    ``y`` is the raw (un-centered) matrix; its unobserved entries are taken
    from ``fill`` (raw scale) before scaling.
    """
    y = _as_traffic(y)
    values = np.array(y.values)
    if y.mask is not None and not y.mask.all():
        if fill is None:
            raise ParameterError("fill is required for a masked matrix")
        fill = np.asarray(fill, dtype=float)
        values = np.where(y.mask, values, fill)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.zeros(y.cols) if beta is None else np.asarray(beta, dtype=float)
    if alpha.shape != (y.cols,) or beta.shape != (y.cols,):
        raise ParameterError("alpha and beta need one entry per sensor column")
    return values * alpha + beta


def subspace_reconstruction_error(basis, y_est, y_bar, *, return_skipped=False):
    """Mean over snapshots of ``|U^T(y_est_i - y_bar_i)| / |U^T y_bar_i|``.

    Snapshots whose reference projection has zero norm are skipped.
    """
    est = check_matrix(y_est, name="y_est")
    ref = check_matrix(y_bar, name="y_bar")
    if est.shape != ref.shape:
        raise ParameterError("y_est and y_bar must have the same shape")
    proj_ref = ref @ basis.u
    num = np.linalg.norm(est @ basis.u - proj_ref, axis=1)
    den = np.linalg.norm(proj_ref, axis=1)
    keep = den > 0
    value = float(np.mean(num[keep] / den[keep])) if keep.any() else 0.0
    if return_skipped:
        return value, int((~keep).sum())
    return value


def true_data_error(z_hat, z, *, return_skipped=False):
    """Mean over sensors of ``|z_hat_i - z_i| / |z_i|`` (columns are sensors)."""
    z_hat = check_matrix(z_hat, name="z_hat")
    z = check_matrix(z, name="z")
    if z_hat.shape != z.shape:
        raise ParameterError("z_hat and z must have the same shape")
    num = np.linalg.norm(z_hat - z, axis=0)
    den = np.linalg.norm(z, axis=0)
    keep = den > 0
    value = float(np.mean(num[keep] / den[keep])) if keep.any() else 0.0
    if return_skipped:
        return value, int((~keep).sum())
    return value


def align_gain_scale(alpha_hat, alpha_true):
    """Least-squares scalar ``s`` minimizing ``|s * alpha_hat - alpha_true|``."""
    a = np.asarray(alpha_hat, dtype=float)
    return float(a @ np.asarray(alpha_true, dtype=float) / (a @ a))


def principal_angles(a, b):
    from scipy.linalg import subspace_angles

    ua = a.u if isinstance(a, SubspaceBasis) else a
    ub = b.u if isinstance(b, SubspaceBasis) else b
    return np.sort(subspace_angles(ua, ub))


# --------------------------------------------------------------------------
# estimators

def _project_rows(Xc, observed, U):
    """Coefficients of each row on ``span(U)`` using only observed entries."""
    if observed.all():
        return Xc @ U
    W = observed.astype(float)
    return _weighted_coefficients(np.where(observed, Xc, 0.0), W, U, np.zeros((Xc.shape[0], U.shape[1])), 1e-12)


class _SubspaceMixin(TransformerMixin):
    def _prepare(self, X):
        Y = _as_traffic(X)
        centered = center_columns(Y)
        self.mean_ = np.array(centered.column_means)
        self.n_features_in_ = Y.cols
        return Y, centered

    @property
    def basis_(self):
        check_is_fitted(self, "components_")
        return SubspaceBasis(self.components_.T)

    def transform(self, X):
        """Coefficients of the centered rows of ``X`` on the fitted basis."""
        check_is_fitted(self, "components_")
        Y = _as_traffic(X)
        if Y.cols != self.n_features_in_:
            raise ParameterError(f"expected {self.n_features_in_} columns, got {Y.cols}")
        observed = Y.observed
        return _project_rows(np.where(observed, Y.values - self.mean_, 0.0), observed, self.components_.T)

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X, dtype=float) @ self.components_ + self.mean_

    def denoised(self):
        """Low-rank reconstruction of the training data on the raw scale."""
        check_is_fitted(self, "components_")
        return self.low_rank_ + self.mean_

    def cleaned(self):
        """Training data with untrusted and missing entries taken from the model."""
        check_is_fitted(self, "components_")
        return np.where(self.trusted_mask_, self.centered_, self.low_rank_) + self.mean_


class RobustSubspaceEstimator(_SubspaceMixin, BaseEstimator):
    """Outlier- and missing-data-robust dominant subspace.

    Parameters
    ----------
    n_components : int
        Rank ``k`` of the subspace.
    delta_0, delta_final : float
        First and last value of the smoothing parameter.
    n_outer : int
        Number of annealing steps.
    p : float
        Exponent of the smoothed l_p penalty, ``0 < p < 1``.
    inner_steps : int
        Projected-gradient steps per annealing step.
    outlier_threshold : float
        Entries whose final residual exceeds this many robust standard
        deviations are flagged as untrusted.

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_features)
    mean_ : ndarray of shape (n_features,)
    low_rank_ : ndarray of shape (n_samples, n_features)
        Centered low-rank estimate of the training data.
    trusted_mask_ : ndarray of bool
        Observed entries not flagged as outliers.
    objective_path_ : list of list of float
        Penalty after every accepted inner step, one list per annealing step.
    """

    def __init__(self, n_components=10, delta_0=1.0, delta_final=1e-6, n_outer=100, p=0.5,
                 inner_steps=5, outlier_threshold=3.0):
        self.n_components = n_components
        self.delta_0 = delta_0
        self.delta_final = delta_final
        self.n_outer = n_outer
        self.p = p
        self.inner_steps = inner_steps
        self.outlier_threshold = outlier_threshold

    @property
    def schedule(self):
        return AnnealSchedule(self.delta_0, self.delta_final, self.n_outer, self.p, self.inner_steps)

    def fit(self, X, y=None):
        Y, centered = self._prepare(X)
        basis, L, info = estimate_dominant_subspace(centered, self.n_components, self.schedule, return_info=True)
        observed = Y.observed
        self.mean_ = self.mean_ + info["shift"]
        Xc = np.where(observed, centered.values - info["shift"], 0.0)
        resid = np.abs(Xc - L)[observed]
        scale = 1.4826 * float(np.median(resid)) if resid.size else 0.0
        floor = 1e-9 * (float(np.abs(Xc).max()) or 1.0)
        limit = max(self.outlier_threshold * scale, floor)
        self.components_ = basis.u.T.copy()
        self.low_rank_ = L
        self.centered_ = Xc
        self.observed_mask_ = observed
        self.trusted_mask_ = observed & (np.abs(Xc - L) <= limit)
        self.objective_path_ = info["objective_path"]
        self.delta_path_ = info["deltas"]
        self.n_iter_ = len(info["deltas"])
        return self


class PCASubspaceEstimator(_SubspaceMixin, BaseEstimator):
    """Classical PCA baseline: SVD of the centered, zero-filled matrix."""

    def __init__(self, n_components=10):
        self.n_components = n_components

    def fit(self, X, y=None):
        Y, centered = self._prepare(X)
        basis = pca_subspace(centered, self.n_components)
        Xc = np.where(Y.observed, centered.values, 0.0)
        self.components_ = basis.u.T.copy()
        self.low_rank_ = (Xc @ basis.u) @ basis.u.T
        self.centered_ = Xc
        self.observed_mask_ = Y.observed
        self.trusted_mask_ = Y.observed
        return self


class TrueDataEstimator(TransformerMixin, BaseEstimator):
    """Dominant subspace -> blind gains -> true sensor data.

    Parameters
    ----------
    subspace_estimator : estimator, default=RobustSubspaceEstimator()
        Any estimator exposing ``components_``, ``mean_``, ``low_rank_``,
        ``centered_`` and ``trusted_mask_`` after ``fit``. It is cloned.
    offsets : array-like of shape (n_features,), optional
        Known per-sensor offsets (zero when omitted).
    calibration_basis : array-like of shape (n_features, k), optional
        Signal subspace used for the gain system instead of the estimated
        one, for settings where the true subspace is known a priori.

    Notes
    -----
    Gains are recovered from the de-outliered, completed matrix. With a basis
    estimated from the raw data itself the gain system is solved exactly by
    the all-ones vector, so gains are only identifiable when
    ``calibration_basis`` carries independent knowledge of the signal space.
    """

    def __init__(self, subspace_estimator=None, offsets=None, calibration_basis=None):
        self.subspace_estimator = subspace_estimator
        self.offsets = offsets
        self.calibration_basis = calibration_basis

    def fit(self, X, y=None):
        est = clone(self.subspace_estimator) if self.subspace_estimator is not None else RobustSubspaceEstimator()
        est.fit(X)
        self.subspace_estimator_ = est
        self.n_features_in_ = est.n_features_in_
        cleaned_centered = np.where(est.trusted_mask_, est.centered_, est.low_rank_)
        if self.calibration_basis is not None:
            basis = SubspaceBasis(np.linalg.qr(np.asarray(self.calibration_basis, dtype=float))[0])
        else:
            basis = est.basis_
        self.gains_ = estimate_gain(basis, cleaned_centered)
        self.offsets_ = np.zeros(est.n_features_in_) if self.offsets is None else np.asarray(self.offsets, float)
        self.cleaned_ = cleaned_centered + est.mean_
        return self

    def fit_transform(self, X, y=None):
        """Fit, then reconstruct from the cleaned training matrix."""
        self.fit(X)
        return reconstruct_true_data(self.cleaned_, self.gains_, self.offsets_)

    def transform(self, X):
        """True-data estimate for new raw data; missing entries come from the basis."""
        check_is_fitted(self, "gains_")
        Y = _as_traffic(X)
        est = self.subspace_estimator_
        fill = est.inverse_transform(est.transform(Y))
        return reconstruct_true_data(Y, self.gains_, self.offsets_, fill=fill)

    def result(self):
        check_is_fitted(self, "gains_")
        return CalibrationResult(self.gains_, self.offsets_,
                                 reconstruct_true_data(self.cleaned_, self.gains_, self.offsets_))
