"""Federated LMS filtering with dead-band model sharing.

Every device runs a short LMS predictor and mirrors the prediction the fog
server makes for it. A device transmits only when its reading leaves the
band ``[prediction - delta, prediction + delta]``; the message carries the
retrained taps and the last ``M`` real readings, which the fog splices into
its estimate. The fog averages the shared taps, rolls its estimate of the
global matrix forward with the average and keeps the covariance
perturbation inside an analytic budget.

Windows are most-recent-first: ``window[0]`` is the latest reading.
"""

from collections import deque
from dataclasses import dataclass, field, replace
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .datamodel import TrafficMatrix
from .exceptions import DegenerateInputError, ParameterError
from .mobility import RadioModel
from .validation import check_matrix, check_positive, rng_for


@dataclass(frozen=True)
class LmsModel:
    taps: np.ndarray
    step: float

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float).ravel()
        if taps.size == 0:
            raise ParameterError("an LMS model needs at least one tap")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        check_positive(self.step, "step", strict=False)

    @property
    def order(self):
        return self.taps.size

    @classmethod
    def zeros(cls, order, step):
        return cls(np.zeros(order), step)


@dataclass(frozen=True)
class Transmission:
    device: int
    taps: np.ndarray
    samples: tuple  # most recent first
    time: int = -1
    kind: str = "violation"  # "violation", "summon" or "register"


def _window(window, order):
    w = np.asarray(window, dtype=float).ravel()
    if w.size == 0:
        raise ParameterError("empty window")
    if w.size < order:
        w = np.concatenate([w, np.full(order - w.size, w[-1])])
    return w[:order]


def lms_predict(model, window):
    """``taps @ window``; a short window is padded with its earliest reading."""
    return float(model.taps @ _window(window, model.order))


def lms_update(model, window, target):
    """One Widrow-Hoff step ``taps += step * (target - prediction) * window``."""
    x = _window(window, model.order)
    if not (np.isfinite(x).all() and math.isfinite(target)):
        raise ParameterError("non-finite LMS input")
    e = target - float(model.taps @ x)
    return replace(model, taps=model.taps + model.step * e * x)


def step_bound(training_window):
    """Upper step bound ``1 / P_Y`` with ``P_Y`` the mean power of the window.

    Returns ``inf`` for an all-zero window.
    """
    w = np.asarray(training_window, dtype=float).ravel()
    if w.size == 0:
        raise ParameterError("empty training window")
    power = float(np.mean(w * w))
    return math.inf if power == 0 else 1.0 / power


def operating_step(training_window, order, fraction=0.5, default=1e-3):
    """``fraction`` of the step bound, shared over the ``order`` taps.

    The tap vector carries ``order`` readings, so its power is ``order``
    times the per-sample power and the Widrow-Hoff recursion is only stable
    below ``2 / (order * P_Y)``.
    """
    bound = step_bound(training_window)
    if not math.isfinite(bound):
        return default
    return fraction * bound / order


def train_lms(series, order, step, passes=1, model=None):
    """Run LMS over a series (oldest first) and return the final model."""
    y = np.asarray(series, dtype=float).ravel()
    model = model or LmsModel.zeros(order, step)
    taps = np.array(model.taps)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        for _ in range(passes):
            for t in range(1, y.size):
                x = _window(y[max(0, t - order):t][::-1], order)
                e = y[t] - taps @ x
                taps += model.step * e * x
    if not np.isfinite(taps).all():
        raise ParameterError("LMS diverged; reduce the step size")
    return replace(model, taps=taps)


class LmsPredictor(RegressorMixin, BaseEstimator):
    """One-step-ahead LMS predictor on a univariate series.

    ``fit(X, y)`` takes windows ``X`` (n_samples, order), most recent first,
    and targets ``y``; with ``X`` of a single column and ``y=None`` the
    column is read as the series itself.
    """

    def __init__(self, order=4, step=None, step_fraction=0.5, passes=1):
        self.order = order
        self.step = step
        self.step_fraction = step_fraction
        self.passes = passes

    def fit(self, X, y=None):
        X = check_matrix(X)
        if y is None:
            if X.shape[1] != 1:
                raise ParameterError("pass y or a single-column series")
            series = X[:, 0]
            X = np.array([_window(series[max(0, t - self.order):t][::-1], self.order)
                          for t in range(1, series.size)])
            y = series[1:]
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[1] != self.order:
            raise ParameterError(f"expected windows of {self.order} readings")
        step = self.step
        if step is None:
            step = operating_step(X[:, 0], self.order, self.step_fraction)
        model = LmsModel.zeros(self.order, step)
        for _ in range(self.passes):
            for x, target in zip(X, y):
                model = lms_update(model, x, target)
        self.model_ = model
        self.coef_ = np.array(model.taps)
        self.n_features_in_ = self.order
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_matrix(X)
        return X @ self.coef_


# --------------------------------------------------------------------------
# devices

@dataclass
class DeviceState:
    """State of one device.

    ``mirror`` is the fog's window for this device (predictions between
    syncs, real readings right after one) and ``shared`` the averaged model
    the fog predicts with; the device uses both to reproduce the fog's
    estimate exactly.
    """

    id: int
    model: LmsModel
    delta: float
    history: deque
    mirror: np.ndarray
    shared: LmsModel = None
    w: float = 0.0
    tx_count: int = 0
    sample_count: int = 0
    retrain_window: int = 32

    def __post_init__(self):
        check_positive(self.delta, "delta", strict=False)
        if self.shared is None:
            self.shared = self.model

    @property
    def prediction(self):
        return lms_predict(self.shared, self.mirror)

    def payload(self, time, kind):
        samples = tuple(list(self.history)[::-1][: self.model.order])
        return Transmission(self.id, np.array(self.model.taps), samples, time, kind)


def retrain(model, history, step_fraction=0.5):
    """Refresh taps with one LMS pass over the recent real readings.

    The step is re-derived from the power of those readings so that a change
    of signal level cannot push the recursion past its stability bound.
    """
    h = np.asarray(history, dtype=float)
    step = operating_step(h, model.order, step_fraction, default=model.step)
    return train_lms(h, model.order, step, passes=1, model=replace(model, step=step))


def device_step(state, reading, time=-1):
    """Process one reading; returns the new state and an optional transmission."""
    pred = state.prediction
    w = reading - pred
    history = deque(state.history, maxlen=state.history.maxlen)
    history.append(reading)
    new = replace(state, history=history, sample_count=state.sample_count + 1, w=w)
    if abs(w) > state.delta:
        new.model = retrain(state.model, history)
        new.tx_count = state.tx_count + 1
        new.w = 0.0
        tx = new.payload(time, "violation")
        new.mirror = _window(tx.samples, state.model.order)
        return new, tx
    new.mirror = np.concatenate([[pred], state.mirror[:-1]])
    return new, None


# --------------------------------------------------------------------------
# perturbation budget

def tol_f(y, sigmas):
    """Analytic bound on the expected covariance perturbation.

    ``sigmas`` holds the per-device error variances.
    """
    Y = check_matrix(y.values if isinstance(y, TrafficMatrix) else y)
    s2 = np.asarray(sigmas, dtype=float).ravel()
    m, n = Y.shape
    if s2.size != n:
        raise ParameterError(f"need one variance per column ({n}), got {s2.size}")
    if (s2 < 0).any():
        raise ParameterError("variances must be nonnegative")
    trace = float(np.sum(Y * Y))
    return _tol_from_trace(trace, m, n, s2)


def _tol_from_trace(trace, m, n, s2):
    first = 2.0 * math.sqrt(trace / (m * m * n) * float(s2.sum()))
    second = math.sqrt((1.0 / m + 1.0 / n) * float(np.sum(s2 * s2)))
    return first + second


def tol_f_homogeneous(trace, m, n, delta):
    """Bound for ``n`` devices sharing dead-band ``delta`` (variance ``delta**2 / 3``)."""
    return _tol_from_trace(trace, m, n, np.full(n, delta * delta / 3.0))


def solve_delta(tol, m, n, trace):
    """Dead-band ``delta`` whose homogeneous budget equals ``tol``.

    Evaluates ``(sqrt(A + B) - sqrt(A)) / sqrt(m + n)`` with ``A = 3 Tr / m``
    and ``B = 3 tol sqrt(n m + m**2)`` in the cancellation-free form
    ``B / (sqrt(A + B) + sqrt(A))``.
    """
    if tol < 0 or trace < 0 or m < 1 or n < 1:
        raise ParameterError("need tol >= 0, trace >= 0 and m, n >= 1")
    if tol == 0:
        return 0.0
    a = 3.0 * trace / m
    b = 3.0 * tol * math.sqrt(n * m + m * m)
    if a + b < 0:
        raise ArithmeticError("negative radicand")
    return b / ((math.sqrt(a + b) + math.sqrt(a)) * math.sqrt(m + n))


@dataclass(frozen=True)
class PerturbationReport:
    lambda_real: np.ndarray
    lambda_pert: np.ndarray
    delta_norm: float
    mirsky_lhs: float

    @property
    def holds(self):
        """Mirsky inequality, with rounding slack of a few ulps of ``A``."""
        scale = float(np.sqrt(np.sum(self.lambda_real ** 2)))
        return self.mirsky_lhs <= self.delta_norm + 64 * np.finfo(float).eps * scale


def covariance(y):
    Y = check_matrix(y.values if isinstance(y, TrafficMatrix) else y)
    return (Y.T @ Y) / Y.shape[0]


def perturbation_report(y_real, y_pred):
    """Eigenvalue shifts of the covariance between real and predicted data."""
    A = covariance(y_real)
    B = covariance(y_pred)
    if A.shape != B.shape:
        raise ParameterError("real and predicted matrices differ in shape")
    lam = np.linalg.eigvalsh(A)
    lam_hat = np.linalg.eigvalsh(B)
    return PerturbationReport(lam, lam_hat, float(np.linalg.norm(B - A)),
                              float(np.sqrt(np.sum((lam_hat - lam) ** 2))))


def normalized_tol(tol, lam):
    """``tol`` divided by the RMS eigenvalue."""
    lam = np.asarray(lam, dtype=float).ravel()
    rms2 = float(np.sum(lam * lam)) / lam.size if lam.size else 0.0
    if rms2 <= 0:
        raise DegenerateInputError("zero spectrum")
    return tol / math.sqrt(rms2)


# --------------------------------------------------------------------------
# fog server

@dataclass
class FogState:
    """Fog-side view: stored models, the averaged model and the estimate.

    ``errors`` collects, per device, the fog's prediction errors on the
    readings a device reports back (all but the reading that triggered the
    sync); their variances feed the running budget estimate.
    """

    models: dict
    averaged: LmsModel
    delta: float
    windows: dict = field(default_factory=dict)
    predicted: list = field(default_factory=list)  # rows of the estimate
    history: dict = field(default_factory=dict)  # past predictions per device, most recent last
    errors: dict = field(default_factory=dict)
    tol_f: float = 0.0
    budget_estimate: float = 0.0
    summon: bool = False
    rounds: int = 0
    weights: dict = field(default_factory=dict)

    def predict_row(self, ids):
        return np.array([lms_predict(self.averaged, self.windows[i]) for i in ids])

    def advance(self, ids, row_pred):
        for i, p in zip(ids, row_pred):
            self.windows[i] = np.concatenate([[p], self.windows[i][:-1]])
            self.history.setdefault(i, deque(maxlen=64)).append(p)

    def receive(self, tx, row_pred=None, position=None):
        """Store a shared model and splice its real readings into the estimate."""
        taps, n_k = tx.taps, len(tx.samples)
        old = self.models.get(tx.device)
        weight = (old[1] if old is not None else 0) + n_k
        self.models[tx.device] = (LmsModel(taps, self.averaged.step), weight)
        past = list(self.history.get(tx.device, ()))
        # fog predictions for the readings preceding the trigger
        if past and tx.kind == "violation":
            earlier = past[-len(tx.samples):-1][::-1] if len(past) >= 2 else []
            real = tx.samples[1:1 + len(earlier)]
            self.errors.setdefault(tx.device, []).extend(np.subtract(real, earlier).tolist())
        self.windows[tx.device] = _window(tx.samples, self.averaged.order)
        if row_pred is not None and position is not None:
            row_pred[position] = tx.samples[0]
            hist = self.history.setdefault(tx.device, deque(maxlen=64))
            if hist:
                hist[-1] = tx.samples[0]


def average_models(models, ids=None):
    """Weighted tap average ``sum (n_k / n) taps_k`` over the selected devices."""
    ids = list(models) if ids is None else list(ids)
    if not ids:
        raise ParameterError("no models to average")
    w = np.array([models[i][1] for i in ids], dtype=float)
    if w.sum() <= 0:
        w = np.ones(len(ids))
    w = w / w.sum()
    taps = np.sum([wk * models[i][0].taps for wk, i in zip(w, ids)], axis=0)
    return LmsModel(taps, models[ids[0]][0].step), dict(zip(ids, w))


def fog_round(state, incoming, fraction_k=1.0, seed=0, trace=None, shape=None):
    """Average the models of a random fraction of devices and check the budget.

    ``incoming`` transmissions not yet passed to :meth:`FogState.receive`
    are stored first. When the running estimate of
    the covariance perturbation exceeds the homogeneous budget the fog sets
    ``summon`` so that every device reports on the next round.
    """
    if not state.models and not incoming:
        raise ParameterError("fog has no models")
    for tx in incoming:
        state.receive(tx)
    if not 0 < fraction_k <= 1:
        raise ParameterError("fraction_k must lie in (0, 1]")
    ids = sorted(state.models)
    count = max(1, int(round(fraction_k * len(ids))))
    if count < len(ids):
        rng = rng_for(seed, f"fog-sample-{state.rounds}")
        ids = sorted(rng.choice(ids, size=count, replace=False).tolist())
    state.averaged, state.weights = average_models(state.models, ids)
    state.rounds += 1
    if trace is not None and shape is not None:
        m, n = shape
        state.tol_f = tol_f_homogeneous(trace, m, n, state.delta)
        default = state.delta * state.delta / 3.0
        s2 = np.array([np.mean(np.square(state.errors[i]))
                       if len(state.errors.get(i, [])) >= 2 else default for i in sorted(state.models)])
        state.budget_estimate = _tol_from_trace(trace, m, n, s2)
        state.summon = state.budget_estimate > state.tol_f
    return state


# --------------------------------------------------------------------------
# energy and overhead

def comm_and_energy(devices, radio=None, distances=None, packet_bits=None, tti=1.0):
    """Uplink overhead fraction and energy efficiency of a finished run.

    ``overhead_fraction`` is total transmissions over total readings. The
    efficiency sums ``d_n / (E_n * r_n * TTI)`` over devices that sent at
    least one packet, with ``E_n`` the mean joules per packet.
    """
    devices = list(devices)
    radio = radio or RadioModel()
    tx = np.array([d.tx_count for d in devices], dtype=float)
    samples = np.array([d.sample_count for d in devices], dtype=float)
    overhead = float(tx.sum() / samples.sum()) if samples.sum() > 0 else 0.0
    if distances is None:
        distances = np.full(len(devices), 50.0)
    eta = 0.0
    for d, r, dist in zip(devices, tx, distances):
        if r < 1:
            continue
        bits = packet_bits if packet_bits is not None else packet_size(d.model.order)
        joules = r * radio.cost(bits, dist)
        eta += (r * bits) / ((joules / r) * r * tti)
    return overhead, float(eta)


def packet_size(order, word_bits=32):
    """Device id, ``order`` taps and ``order`` readings, one word each."""
    return word_bits * (1 + 2 * order)


# --------------------------------------------------------------------------
# simulation

@dataclass(frozen=True)
class FederatedParams:
    delta: float = 2.0
    taps: int = 4
    warmup: int = 200
    warmup_passes: int = 1
    step_fraction: float = 0.5
    retrain_window: int = 32
    round_length: int = 100
    fraction_k: float = 1.0
    fog_radius_m: float = 100.0
    tti_s: float = 1.0
    e_elec: float = 50e-9
    eps_amp: float = 100e-12

    def __post_init__(self):
        check_positive(self.delta, "delta", strict=False)
        if self.taps < 1 or self.warmup < self.taps + 1 or self.round_length < 1:
            raise ParameterError("need taps >= 1, warmup > taps and round_length >= 1")
        if not 0 < self.fraction_k <= 1:
            raise ParameterError("fraction_k must lie in (0, 1]")


def split_streams(series, n_devices):
    """Equal contiguous chunks of a flat series, one column per device."""
    s = np.asarray(series, dtype=float).ravel()
    length = s.size // n_devices
    if length < 1:
        raise DegenerateInputError("fewer readings than devices")
    return s[: length * n_devices].reshape(n_devices, length).T


@dataclass
class FederatedResult:
    devices: list
    fog: FogState
    real: np.ndarray
    predicted: np.ndarray
    reports: list
    distances: np.ndarray
    params: FederatedParams
    registrations: int
    summons: int

    def comm_and_energy(self):
        p = self.params
        return comm_and_energy(self.devices, RadioModel(p.e_elec, p.eps_amp), self.distances, tti=p.tti_s)

    @property
    def overhead_fraction(self):
        return self.comm_and_energy()[0]

    @property
    def eta(self):
        return self.comm_and_energy()[1]

    @property
    def mirsky_violations(self):
        return sum(not r.holds for r in self.reports)

    @property
    def max_abs_error(self):
        return float(np.max(np.abs(self.predicted - self.real))) if self.real.size else 0.0


def simulate(data, params=None, seed=0):
    """Run devices and fog over ``data`` (readings x devices).

    The first ``warmup`` readings train each device; it then registers with
    the fog. Afterwards each reading goes through :func:`device_step`, the
    fog splices incoming messages into its estimate and at the end of every
    round averages models, checks the budget and, if needed, summons every
    device. A perturbation report against the real data is recorded per round.
    """
    p = params or FederatedParams()
    Y = check_matrix(data)
    T, n = Y.shape
    if T <= p.warmup:
        raise DegenerateInputError(f"need more than {p.warmup} readings per device")
    rng = rng_for(seed, "fog-placement")
    placement = rng.random((n, 2))
    distances = p.fog_radius_m * np.sqrt(placement[:, 0])

    devices = []
    fog = None
    register = []
    for i in range(n):
        train = Y[: p.warmup, i]
        step = operating_step(train, p.taps, p.step_fraction)
        model = train_lms(train, p.taps, step, passes=p.warmup_passes)
        hist = deque(train[-p.retrain_window:], maxlen=p.retrain_window)
        mirror = _window(train[::-1], p.taps)
        devices.append(DeviceState(i, model, p.delta, hist, mirror, retrain_window=p.retrain_window))
        register.append(devices[-1].payload(p.warmup - 1, "register"))
    models = {tx.device: (LmsModel(tx.taps, devices[tx.device].model.step), len(tx.samples)) for tx in register}
    averaged, weights = average_models(models)
    fog = FogState(models, averaged, p.delta, weights=weights)
    for tx in register:
        fog.windows[tx.device] = _window(tx.samples, p.taps)
    for d in devices:
        d.shared = fog.averaged

    ids = list(range(n))
    real_rows, pred_rows, reports = [], [], []
    summons = 0
    for t in range(p.warmup, T):
        row = fog.predict_row(ids)
        fog.advance(ids, row)
        for i in ids:
            devices[i], tx = device_step(devices[i], float(Y[t, i]), t)
            if tx is not None:
                fog.receive(tx, row, i)
        real_rows.append(Y[t])
        pred_rows.append(row)
        if (t - p.warmup + 1) % p.round_length == 0 or t == T - 1:
            real = np.array(real_rows)
            pred = np.array(pred_rows)
            fog_round(fog, [], p.fraction_k, seed, trace=float(np.sum(pred * pred)), shape=pred.shape)
            reports.append(perturbation_report(real, pred))
            if fog.summon and t < T - 1:
                summons += 1
                for i in ids:
                    d = devices[i]
                    d.model = retrain(d.model, d.history)
                    d.tx_count += 1
                    tx = d.payload(t, "summon")
                    fog.receive(tx)
                    d.mirror = _window(tx.samples, p.taps)
                    d.w = 0.0
                fog.errors = {}
                fog_round(fog, [], p.fraction_k, seed)
            for d in devices:
                d.shared = fog.averaged
    fog.predicted = pred_rows
    return FederatedResult(devices, fog, np.array(real_rows), np.array(pred_rows), reports,
                           distances, p, len(register), summons)
