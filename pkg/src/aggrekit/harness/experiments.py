"""Experiment definitions: each sweeps a grid over seeds and returns a report.

CSV schemas (header row first, seed-major then grid order):

* mobility experiments and ``veracity_scalability``:
  ``seed,nodes,payload_bits,eta_bits_per_joule,delivered,dropped,eta_direct_bits_per_joule``
* veracity sweeps: ``seed,noise_var,method,subspace_err,true_data_err``
* federated sweeps: ``seed,delta,devices,overhead_fraction,tol_f,norm_tol,mirsky_lhs,delta_norm,eta``
  (simulation columns are blank when ``federated.simulate`` is off)
* ``federated_prediction``: ``seed,device,time,real,predicted``
"""

import math

import numpy as np

from .. import __version__
from .. import federated as fed
from .. import mobility as mob
from .. import veracity as ver
from ..datamodel import (
    UncertaintySpec,
    corrupt,
    generate_synthetic,
    ground_truth_from_data,
    house_sensor_fixture,
    ingest_table,
    physiological_fixture,
    slice_streams,
)
from ..exceptions import ConfigError, ExperimentError
from .config import ExperimentConfig, resolve_data_path
from .report import ExperimentReport

MOBILITY_COLUMNS = ("seed", "nodes", "payload_bits", "eta_bits_per_joule", "delivered", "dropped",
                    "eta_direct_bits_per_joule")
VERACITY_COLUMNS = ("seed", "noise_var", "method", "subspace_err", "true_data_err")
FEDERATED_COLUMNS = ("seed", "delta", "devices", "overhead_fraction", "tol_f", "norm_tol",
                     "mirsky_lhs", "delta_norm", "eta")
TRACE_COLUMNS = ("seed", "device", "time", "real", "predicted")


# --------------------------------------------------------------------------
# mobility

def mobility_params(cfg, **overrides):
    s = cfg.section("mobility")
    names = mob.MobilityParams.__dataclass_fields__
    values = {k: v for k, v in s.items() if k in names}
    values.update(overrides)
    return mob.MobilityParams(**values)


def _mobility_rows(cfg, params, counts, payloads):
    rows = []
    for seed in cfg.seeds:
        for n in counts:
            for b in payloads:
                r = mob.simulate(n, 8 * b, seed, params)
                rows.append((seed, n, 8 * b, r.eta, r.delivered, r.dropped, r.eta_direct))
    return rows


def run_mobility_eta_vs_devices(cfg):
    return _mobility_rows(cfg, mobility_params(cfg), cfg.get("mobility.devices"), cfg.get("mobility.payload_bytes"))


def run_mobility_eta_vs_packet(cfg):
    payloads = cfg.get("mobility.payload_bytes")
    if "mobility.payload_bytes" not in cfg.parameters:
        payloads = tuple(range(0, 101, 10))
    counts = cfg.get("mobility.devices") if "mobility.devices" in cfg.parameters else (50,)
    return _mobility_rows(cfg, mobility_params(cfg), counts, payloads)


def run_veracity_scalability(cfg):
    # energy efficiency of D2D delivery with the unit TTI used alongside the veracity study
    overrides = {} if "mobility.tti_s" in cfg.parameters else {"tti_s": 1.0}
    return _mobility_rows(cfg, mobility_params(cfg, **overrides), cfg.get("mobility.devices"),
                          cfg.get("mobility.payload_bytes"))


# --------------------------------------------------------------------------
# veracity

def veracity_data(cfg, seed):
    """Raw matrix and ground truth for one seed."""
    v = cfg.section("veracity")
    if v["dataset"] == "synthetic":
        return generate_synthetic(v["m"], v["n"], v["k"], seed)
    if v["dataset"] == "fixture":
        X = house_sensor_fixture(v["n"], v["m"], seed=seed)
    else:
        table = ingest_table(resolve_data_path(v["path"]), [v["column"]], v["delimiter"])
        X = slice_streams(table.values.ravel(), v["n"], v["m"])
    return ground_truth_from_data(X, v["k"], seed)


def make_estimator(cfg, method):
    v = cfg.section("veracity")
    if method == "pca":
        return ver.PCASubspaceEstimator(v["k"])
    return ver.RobustSubspaceEstimator(v["k"], v["delta_0"], v["delta_final"], v["omega"], v["p"],
                                       v["inner_steps"])


def veracity_trial(cfg, y, truth, seed, noise_var, method):
    """Corrupt, estimate and score one configuration.

    The subspace error compares the model's reconstruction with the clean
    raw matrix, both centered by the clean column means, in the coordinates
    of the estimated basis. The true-data error uses gains after the optimal
    scalar alignment.
    """
    v = cfg.section("veracity")
    data_noise = noise_var if v["noise_mode"] == "data" else 0.0
    spec = UncertaintySpec.from_variance(data_noise, outlier_density=v["outliers"],
                                         outlier_range=(v["outlier_low"], v["outlier_high"]),
                                         missing_fraction=v["missing"], seed=seed)
    yc = corrupt(y, spec)
    est = make_estimator(cfg, method).fit(yc)
    basis = est.basis_
    clean_mean = y.values.mean(axis=0)
    reference = y.values - clean_mean
    cleaned = est.cleaned()
    if v["noise_mode"] == "subspace":
        gain_basis = ver.perturb_basis(basis, noise_var, seed)
        proj = gain_basis.projector()
        estimate = (cleaned - clean_mean) @ proj
    else:
        gain_basis = basis
        estimate = est.denoised() - clean_mean
    sub_err = ver.subspace_reconstruction_error(basis, estimate, reference)
    gains = ver.estimate_gain(gain_basis, cleaned - est.mean_, truth.offsets)
    scale = ver.align_gain_scale(gains, truth.gains)
    z_hat = ver.reconstruct_true_data(cleaned, scale * gains, truth.offsets)
    return sub_err, ver.true_data_error(z_hat, truth.low_rank)


def _veracity_rows(cfg, methods=None):
    methods = methods or cfg.get("veracity.methods")
    rows = []
    for seed in cfg.seeds:
        y, truth = veracity_data(cfg, seed)
        for var in cfg.get("veracity.noise_grid"):
            for method in methods:
                sub, te = veracity_trial(cfg, y, truth, seed, var, method)
                rows.append((seed, var, method, sub, te))
    return rows


def _with_defaults(cfg, **defaults):
    params = dict(cfg.parameters)
    for k, val in defaults.items():
        params.setdefault(k, val)
    return ExperimentConfig(cfg.experiment, cfg.seeds, params, cfg.output_dir)


def run_veracity_noise_sweep(cfg):
    return _veracity_rows(cfg)


def run_veracity_outliers(cfg):
    return _veracity_rows(_with_defaults(cfg, **{"veracity.outliers": 0.2, "veracity.methods": ("robust", "pca")}))


def run_veracity_missing(cfg):
    return _veracity_rows(_with_defaults(cfg, **{"veracity.missing": 0.3, "veracity.methods": ("robust", "pca")}))


# --------------------------------------------------------------------------
# federated

def federated_params(cfg, delta):
    f = cfg.section("federated")
    return fed.FederatedParams(delta=delta, taps=f["taps"], warmup=f["warmup"], step_fraction=f["step_fraction"],
                               retrain_window=f["retrain_window"], round_length=f["round_length"],
                               fraction_k=f["fraction_k"], fog_radius_m=f["fog_radius_m"], tti_s=f["tti_s"],
                               e_elec=cfg.get("mobility.e_elec"), eps_amp=cfg.get("mobility.eps_amp"))


def federated_series(cfg, seed=0):
    """Selected log columns flattened column by column into one stream."""
    f = cfg.section("federated")
    cols = f["columns"]
    if f["dataset"] == "file":
        values = ingest_table(resolve_data_path(f["path"]), list(cols)).values
    else:
        rows = math.ceil(f["samples_per_device"] * max(f["devices"]) / len(cols))
        table = physiological_fixture(rows, seed=0 if f["dataset"] == "fixture" else seed)
        values = table[:, [c - 1 for c in cols]]
    return values.ravel(order="F")


def federated_matrix(cfg, n_devices, seed=0):
    return fed.split_streams(federated_series(cfg, seed), n_devices)


def federated_row(cfg, seed, delta, n_devices, Y=None):
    Y = federated_matrix(cfg, n_devices, seed) if Y is None else Y
    m, n = Y.shape
    trace = float(np.sum(Y * Y))
    tol = fed.tol_f_homogeneous(trace, m, n, delta)
    lam = np.linalg.eigvalsh(fed.covariance(Y))
    norm = fed.normalized_tol(tol, lam)
    if not cfg.get("federated.simulate"):
        return (seed, delta, n_devices, None, tol, norm, None, None, None), None
    res = fed.simulate(Y, federated_params(cfg, delta), seed)
    last = res.reports[-1]
    overhead, eta = res.comm_and_energy()
    return (seed, delta, n_devices, overhead, tol, norm, last.mirsky_lhs, last.delta_norm, eta), res


def _federated_rows(cfg, deltas, counts):
    rows = []
    cache = {}
    for seed in cfg.seeds:
        for n in counts:
            key = (n, seed if cfg.get("federated.dataset") == "synthetic" else 0)
            if key not in cache:
                cache[key] = federated_matrix(cfg, n, seed)
            for d in deltas:
                rows.append(federated_row(cfg, seed, d, n, cache[key])[0])
    return rows


def run_federated_tol_vs_delta(cfg):
    deltas = cfg.get("federated.delta") if "federated.delta" in cfg.parameters else tuple(
        round(0.1 * i, 10) for i in range(21))
    return _federated_rows(cfg, deltas, cfg.get("federated.devices"))


def run_federated_overhead(cfg):
    deltas = cfg.get("federated.delta") if "federated.delta" in cfg.parameters else (0.25, 0.5, 1.0, 1.5, 2.0)
    return _federated_rows(cfg, deltas, cfg.get("federated.devices"))


def run_federated_scalability(cfg):
    counts = cfg.get("federated.devices") if "federated.devices" in cfg.parameters else (10, 20, 30, 40, 50)
    return _federated_rows(cfg, cfg.get("federated.delta"), counts)


def run_federated_prediction(cfg):
    rows = []
    n = cfg.get("federated.devices")[0]
    delta = cfg.get("federated.delta")[0]
    p = federated_params(cfg, delta)
    for seed in cfg.seeds:
        Y = federated_matrix(cfg, n, seed)
        res = fed.simulate(Y, p, seed)
        traced = cfg.get("federated.trace_devices") if "federated.trace_devices" in cfg.parameters else (0, n // 2)
        for dev in sorted(set(traced)):
            if not 0 <= dev < n:
                raise ConfigError(f"trace device {dev} outside 0..{n - 1}")
            for t in range(res.real.shape[0]):
                rows.append((seed, dev, p.warmup + t, float(res.real[t, dev]), float(res.predicted[t, dev])))
    return rows


# --------------------------------------------------------------------------

RUNNERS = {
    "mobility_eta_vs_devices": (run_mobility_eta_vs_devices, MOBILITY_COLUMNS),
    "mobility_eta_vs_packet": (run_mobility_eta_vs_packet, MOBILITY_COLUMNS),
    "veracity_noise_sweep": (run_veracity_noise_sweep, VERACITY_COLUMNS),
    "veracity_outliers": (run_veracity_outliers, VERACITY_COLUMNS),
    "veracity_missing": (run_veracity_missing, VERACITY_COLUMNS),
    "veracity_scalability": (run_veracity_scalability, MOBILITY_COLUMNS),
    "federated_tol_vs_delta": (run_federated_tol_vs_delta, FEDERATED_COLUMNS),
    "federated_prediction": (run_federated_prediction, TRACE_COLUMNS),
    "federated_overhead": (run_federated_overhead, FEDERATED_COLUMNS),
    "federated_scalability": (run_federated_scalability, FEDERATED_COLUMNS),
}


def run_experiment(cfg):
    """Run a configured experiment and return its report (nothing is written)."""
    if not isinstance(cfg, ExperimentConfig):
        raise ConfigError("run_experiment needs an ExperimentConfig")
    try:
        runner, columns = RUNNERS[cfg.experiment]
    except KeyError:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}") from None
    try:
        rows = runner(cfg)
    except ConfigError:
        raise
    except Exception as exc:
        raise ExperimentError(f"experiment {cfg.experiment} failed: {exc}") from exc
    rows.sort(key=lambda r: r[0])  # stable: seed-major, grid order kept within a seed
    provenance = {"experiment": cfg.experiment, "config_sha256": cfg.digest(), "seeds": list(cfg.seeds),
                  "version": __version__}
    return ExperimentReport(cfg.experiment, columns, rows, provenance)

