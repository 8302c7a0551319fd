"""Input validation helpers shared by the estimators and free functions."""

import numbers
import zlib

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ParameterError


def check_matrix(X, *, allow_nan=False, name="X"):
    """Return ``X`` as a 2-D float64 array, rejecting infinities.

    NaN entries are accepted only with ``allow_nan=True``; they mark missing
    observations in the scikit-learn convention.
    """
    try:
        return check_array(
            X,
            dtype=np.float64,
            ensure_all_finite="allow-nan" if allow_nan else True,
            ensure_min_samples=1,
            ensure_min_features=1,
            input_name=name,
        )
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc


def check_mask(mask, shape):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ParameterError(f"mask shape {mask.shape} does not match values shape {tuple(shape)}")
    return mask


def check_rank(k, shape):
    if not isinstance(k, numbers.Integral) or isinstance(k, bool):
        raise ParameterError(f"rank must be an integer, got {k!r}")
    limit = min(shape)
    if not 1 <= k <= limit:
        raise ParameterError(f"rank must lie in [1, {limit}], got {k}")
    return int(k)


def check_fraction(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value, name, *, strict=True):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ParameterError(f"{name} must be finite and {bound}, got {value}")
    return value


def rng_for(seed, purpose):
    """Independent generator for ``(seed, purpose)``.

    Streams are keyed by purpose so that switching one corruption off never
    shifts the draws of another.
    """
    code = zlib.crc32(purpose.encode())
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, code])
