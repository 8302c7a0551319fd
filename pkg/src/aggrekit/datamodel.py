"""Traffic-matrix types, synthetic data, uncertainty injection and ingestion.

Orientation follows the scikit-learn convention everywhere in the package:
rows are time samples (snapshots) and columns are sensors/devices.
"""

from dataclasses import dataclass
import math
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .exceptions import (
    DegenerateInputError,
    ParameterError,
    TableParseError,
    UnsupportedInputError,
)
from .validation import check_fraction, check_mask, check_matrix, check_rank, rng_for

PROVENANCES = ("raw", "centered", "low_rank")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrafficMatrix:
    """Sensor readings with an optional observation mask.

    ``mask[i, j]`` is True when entry ``(i, j)`` was observed. Arrays are
    copied and made read-only on construction.
    """

    values: np.ndarray
    mask: Optional[np.ndarray] = None
    column_means: Optional[np.ndarray] = None
    provenance: str = "raw"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ParameterError(f"values must be 2-D, got shape {values.shape}")
        mask = check_mask(self.mask, values.shape)
        if self.provenance not in PROVENANCES:
            raise ParameterError(f"provenance must be one of {PROVENANCES}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", None if mask is None else _frozen(mask))
        if self.column_means is not None:
            means = np.asarray(self.column_means, dtype=np.float64).ravel()
            if means.shape != (values.shape[1],):
                raise ParameterError("column_means must have one entry per column")
            object.__setattr__(self, "column_means", _frozen(means))

    @classmethod
    def from_array(cls, X, provenance="raw"):
        """Build from an array where NaN marks a missing entry."""
        X = check_matrix(X, allow_nan=True)
        missing = np.isnan(X)
        if not missing.any():
            return cls(X, provenance=provenance)
        return cls(np.where(missing, 0.0, X), mask=~missing, provenance=provenance)

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def observed(self):
        """Boolean observation mask (all True when no mask is set)."""
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return np.array(self.mask)

    @property
    def masked_count(self):
        return 0 if self.mask is None else int((~self.mask).sum())

    def to_nan(self):
        """Values with unobserved entries replaced by NaN."""
        out = np.array(self.values)
        if self.mask is not None:
            out[~self.mask] = np.nan
        return out


@dataclass(frozen=True)
class GroundTruth:
    """Rank-``k`` true sensor data ``low_rank`` and per-sensor calibration."""

    low_rank: np.ndarray
    gains: np.ndarray
    offsets: np.ndarray
    rank: int

    def __post_init__(self):
        object.__setattr__(self, "low_rank", _frozen(np.asarray(self.low_rank, dtype=float)))
        object.__setattr__(self, "gains", _frozen(np.asarray(self.gains, dtype=float)))
        object.__setattr__(self, "offsets", _frozen(np.asarray(self.offsets, dtype=float)))


@dataclass(frozen=True)
class UncertaintySpec:
    """Corruption recipe: Gaussian noise, sparse outliers and missing entries."""

    noise_std: float = 0.0
    outlier_density: float = 0.0
    outlier_range: tuple = (-10.0, 10.0)
    missing_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.noise_std) or self.noise_std < 0:
            raise ParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        check_fraction(self.outlier_density, "outlier_density")
        check_fraction(self.missing_fraction, "missing_fraction")
        low, high = self.outlier_range
        if not low <= high:
            raise ParameterError(f"outlier_range must satisfy low <= high, got {self.outlier_range}")
        object.__setattr__(self, "outlier_range", (float(low), float(high)))

    @classmethod
    def from_variance(cls, noise_var, **kwargs):
        """Build from a noise variance; negative values are clamped to zero."""
        return cls(noise_std=math.sqrt(max(float(noise_var), 0.0)), **kwargs)


def _apply_calibration(Z, gains, offsets):
    # raw reading y = (z - beta) / alpha, one (alpha, beta) per sensor column
    return (Z - offsets[None, :]) / gains[None, :]


def generate_synthetic(m, n, k, seed, *, calibrate=True):
    """Synthetic traffic matrix with ``m`` snapshots of ``n`` sensors.

    The true data is a rank-``k`` product of Gaussian factors. With
    ``calibrate`` the per-sensor gains are drawn from U[0.5, 1.5] and offsets
    from U[-0.5, 0.5]; otherwise gains are 1 and offsets 0.

    Returns
    -------
    (TrafficMatrix, GroundTruth)
    """
    k = check_rank(k, (m, n))
    rng = rng_for(seed, "factors")
    left = rng.standard_normal((m, k))
    right = rng.standard_normal((n, k))
    Z = left @ right.T / math.sqrt(k)
    if calibrate:
        cal = rng_for(seed, "calibration")
        gains = cal.uniform(0.5, 1.5, n)
        offsets = cal.uniform(-0.5, 0.5, n)
    else:
        gains, offsets = np.ones(n), np.zeros(n)
    truth = GroundTruth(Z, gains, offsets, k)
    return TrafficMatrix(_apply_calibration(Z, gains, offsets)), truth


def ground_truth_from_data(X, k, seed, *, calibrate=True):
    """Treat measured data as true readings and derive a raw matrix from it.

    The rank-``k`` truncation of ``X`` is the true-data reference; the raw
    matrix keeps the residual of ``X`` (real data is noisy before any injected
    corruption) and applies drawn gains/offsets like :func:`generate_synthetic`.
    """
    X = check_matrix(X)
    k = check_rank(k, X.shape)
    Z = low_rank_truncate(TrafficMatrix(X), k).values
    n = X.shape[1]
    if calibrate:
        cal = rng_for(seed, "calibration")
        gains = cal.uniform(0.5, 1.5, n)
        offsets = cal.uniform(-0.5, 0.5, n)
    else:
        gains, offsets = np.ones(n), np.zeros(n)
    return TrafficMatrix(_apply_calibration(X, gains, offsets)), GroundTruth(Z, gains, offsets, k)


def corrupt(matrix, spec):
    """Return a corrupted copy of ``matrix`` following ``spec``.

    Noise is added to every entry, outliers are added on a Bernoulli support
    and exactly ``round(missing_fraction * size)`` entries are masked out. The
    three effects draw from independent streams.
    """
    values = np.array(matrix.values)
    shape = values.shape
    if spec.noise_std > 0:
        values += rng_for(spec.seed, "noise").normal(0.0, spec.noise_std, shape)
    if spec.outlier_density > 0:
        rng = rng_for(spec.seed, "outliers")
        support = rng.random(shape) < spec.outlier_density
        low, high = spec.outlier_range
        values += np.where(support, rng.uniform(low, high, shape), 0.0)
    mask = None if matrix.mask is None else np.array(matrix.mask)
    n_missing = int(round(spec.missing_fraction * values.size))
    if n_missing:
        if mask is None:
            mask = np.ones(shape, dtype=bool)
        chosen = rng_for(spec.seed, "mask").permutation(values.size)[:n_missing]
        mask.flat[chosen] = False
    return TrafficMatrix(values, mask=mask, column_means=matrix.column_means, provenance=matrix.provenance)


def center_columns(matrix):
    """Subtract each column's observed mean.

    The subtracted means are accumulated into ``column_means`` so that
    :func:`uncenter_columns` restores the original values.
    """
    observed = matrix.observed
    counts = observed.sum(axis=0)
    if (counts == 0).any():
        bad = np.flatnonzero(counts == 0).tolist()
        raise DegenerateInputError(f"columns {bad} have no observed entries")
    means = np.where(observed, matrix.values, 0.0).sum(axis=0) / counts
    values = np.where(observed, matrix.values - means, 0.0)
    total = means if matrix.column_means is None else matrix.column_means + means
    return TrafficMatrix(values, mask=matrix.mask, column_means=total, provenance="centered")


def uncenter_columns(matrix):
    if matrix.column_means is None:
        return matrix
    values = matrix.values + matrix.column_means
    if matrix.mask is not None:
        values = np.where(matrix.mask, values, 0.0)
    return TrafficMatrix(values, mask=matrix.mask, provenance="raw")


def low_rank_truncate(matrix, k):
    """Best rank-``k`` approximation via truncated SVD (fully observed input only)."""
    if matrix.mask is not None and not matrix.mask.all():
        raise UnsupportedInputError("low_rank_truncate requires a fully observed matrix")
    k = check_rank(k, matrix.shape)
    U, s, Vt = np.linalg.svd(matrix.values, full_matrices=False)
    values = (U[:, :k] * s[:k]) @ Vt[:k]
    return TrafficMatrix(values, column_means=matrix.column_means, provenance="low_rank")


_DELIMITERS = {"whitespace": None, "comma": ",", "tab": "\t"}


def ingest_table(path, columns, delimiter="whitespace"):
    """Read 1-based ``columns`` of a delimited text file into a TrafficMatrix.

    Blank lines and lines starting with ``#`` are skipped. Any row that is too
    short or holds a non-numeric field raises :class:`TableParseError` with
    its line number.
    """
    path = Path(path)
    if not columns:
        raise ParameterError("at least one column is required")
    if min(columns) < 1:
        raise ParameterError("columns are 1-based")
    sep = _DELIMITERS.get(delimiter, delimiter)
    idx = [c - 1 for c in columns]
    need = max(columns)
    rows = []
    with path.open() as fh:
        for line_number, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split(sep)
            if len(fields) < need:
                raise TableParseError(path, line_number, f"expected at least {need} fields, found {len(fields)}")
            try:
                rows.append([float(fields[i]) for i in idx])
            except ValueError as exc:
                raise TableParseError(path, line_number, str(exc)) from None
    if not rows:
        raise DegenerateInputError(f"{path} contains no data rows")
    return TrafficMatrix(np.array(rows))


def slice_streams(series, n_streams, n_readings):
    """Cut a 1-D series row-major into ``n_streams`` streams of ``n_readings``.

    The result is oriented readings x streams, i.e. each stream is a column.
    """
    series = np.asarray(series, dtype=float).ravel()
    need = n_streams * n_readings
    if series.size < need:
        raise ParameterError(f"series has {series.size} values, {need} required")
    return series[:need].reshape(n_streams, n_readings).T.copy()


def write_matrix_csv(matrix, path):
    """Write ``matrix`` as CSV with a ``# rows=.. cols=.. masked=..`` header.

    Unobserved entries are written as empty fields.
    """
    path = Path(path)
    observed = matrix.observed
    lines = [f"# rows={matrix.rows} cols={matrix.cols} masked={matrix.masked_count}"]
    for i in range(matrix.rows):
        lines.append(",".join(repr(float(v)) if ok else "" for v, ok in zip(matrix.values[i], observed[i])))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_matrix_csv(path):
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise TableParseError(path, 1, "missing '# rows=.. cols=.. masked=..' header")
        try:
            meta = dict(item.split("=") for item in header[1:].split())
            rows, cols = int(meta["rows"]), int(meta["cols"])
        except (KeyError, ValueError):
            raise TableParseError(path, 1, f"malformed header {header!r}") from None
        values = np.zeros((rows, cols))
        mask = np.ones((rows, cols), dtype=bool)
        for i in range(rows):
            fields = fh.readline().rstrip("\n").split(",")
            if len(fields) != cols:
                raise TableParseError(path, i + 2, f"expected {cols} fields, found {len(fields)}")
            for j, f in enumerate(fields):
                if f == "":
                    mask[i, j] = False
                else:
                    try:
                        values[i, j] = float(f)
                    except ValueError as exc:
                        raise TableParseError(path, i + 2, str(exc)) from None
    return TrafficMatrix(values, mask=None if mask.all() else mask)


# --------------------------------------------------------------------------
# offline fixtures

MHEALTH_COLUMNS = 23
MHEALTH_RATE_HZ = 50.0
CHEST_ACCEL = (1, 2, 3)
ARM_GYRO = (18, 19, 20)


def _ar1(rng, n, phi, sigma):
    return lfilter([1.0], [1.0, -phi], rng.normal(0.0, sigma, n))


def physiological_fixture(n_samples=2000, seed=0):
    """MHEALTH-shaped log: ``n_samples`` rows x 23 signal columns at 50 Hz.

    Each column is an offset plus a few slow sinusoids plus AR(1) noise.
    Columns 1-3 mimic the chest accelerometer (gravity on the first axis) and
    18-20 the lower-arm gyroscope, matching the real log's layout.
    """
    rng = rng_for(seed, "physiological")
    t = np.arange(n_samples) / MHEALTH_RATE_HZ
    table = np.empty((n_samples, MHEALTH_COLUMNS))
    for c in range(MHEALTH_COLUMNS):
        col = c + 1
        if col in CHEST_ACCEL:
            offset = (-9.6, 0.4, 0.8)[col - 1]
            amps = rng.uniform(0.3, 0.9, 3)
            freqs = rng.uniform(0.1, 0.6, 3)
            noise = (0.98, 0.03)
        elif col in (4, 5):  # ECG leads
            offset, amps, freqs, noise = 0.0, rng.uniform(0.1, 0.4, 3), rng.uniform(1.0, 1.5, 3), (0.5, 0.02)
        elif col in ARM_GYRO:
            offset = rng.uniform(-0.2, 0.2)
            amps = rng.uniform(0.05, 0.3, 3)
            freqs = rng.uniform(0.1, 0.8, 3)
            noise = (0.95, 0.01)
        else:
            offset = rng.uniform(-5.0, 5.0)
            amps = rng.uniform(0.1, 1.0, 3)
            freqs = rng.uniform(0.1, 1.0, 3)
            noise = (0.95, 0.05)
        phases = rng.uniform(0.0, 2 * np.pi, len(amps))
        wave = sum(a * np.sin(2 * np.pi * f * t + p) for a, f, p in zip(amps, freqs, phases))
        table[:, c] = offset + wave + _ar1(rng, n_samples, *noise)
    return table


def write_table(table, path):
    """Write a whitespace-delimited numeric table (MHEALTH log format)."""
    path = Path(path)
    path.write_text("\n".join("\t".join(f"{v:.6f}" for v in row) for row in np.asarray(table)) + "\n")
    return path


def house_sensor_fixture(n_streams=400, n_readings=400, seed=0):
    """Temperature-like readings every 10 minutes, sliced into streams.

    One long indoor temperature series (daily cycle, slow drift, AR(1)
    noise) is cut row-major into ``n_streams`` streams as done for the real
    house deployment. Result is oriented readings x streams.
    """
    rng = rng_for(seed, "house")
    n = n_streams * n_readings
    t = np.arange(n)
    per_day = 144.0
    drift = np.cumsum(rng.normal(0.0, 0.004, n))
    daily = 2.5 * np.sin(2 * np.pi * t / per_day) + 0.8 * np.sin(4 * np.pi * t / per_day + 1.0)
    series = 20.0 + drift + daily + _ar1(rng, n, 0.9, 0.05)
    return slice_streams(series, n_streams, n_readings)
