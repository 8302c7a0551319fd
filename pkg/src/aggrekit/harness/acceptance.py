"""Acceptance suite: ten end-to-end checks with fixed tolerances.

Each ``criterion_*`` function returns a :class:`CriterionResult`; nothing is
asserted here so that callers (pytest, the CLI) decide how to report.
"""

from dataclasses import dataclass
import time

import numpy as np

from .. import federated as fed
from .. import mobility as mob
from ..datamodel import generate_synthetic
from .config import EXPERIMENTS, ExperimentConfig
from .experiments import federated_matrix, federated_params, run_experiment, veracity_trial
from .report import to_csv_text

# annealing profile for the multi-seed sweeps; single runs use the estimator defaults
SWEEP_PROFILE = {"veracity.omega": 30, "veracity.inner_steps": 3}
SUITE_BUDGET_S = 600.0


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.detail} ({self.elapsed:.1f}s)"


def _timed(number, name):
    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, detail = fn(*args, **kwargs)
            return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


def _pearson(x, y):
    return float(np.corrcoef(np.asarray(x, float), np.asarray(y, float))[0, 1])


def _mean_curve(report, x, y, where=None):
    groups = {}
    for rec in report.records():
        if where and any(rec[k] != v for k, v in where.items()):
            continue
        groups.setdefault(rec[x], []).append(rec[y])
    keys = sorted(groups)
    return keys, [float(np.mean(groups[k])) for k in keys]


@_timed(1, "clean-case oracle equivalence")
def criterion_1(seed=0):
    """Subspace error <= 1e-6 and aligned true-data error <= 1e-3 on clean rank-10 data, <= 60 s."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig("veracity_noise_sweep", (seed,))
    y, truth = generate_synthetic(400, 400, 10, seed)
    sub, te = veracity_trial(cfg, y, truth, seed, 0.0, "robust")
    elapsed = time.perf_counter() - t0
    ok = sub <= 1e-6 and te <= 1e-3 and elapsed <= 60.0
    return ok, f"subspace_err={sub:.3e} (<=1e-6), true_data_err={te:.3e} (<=1e-3), run={elapsed:.1f}s (<=60s)"


@_timed(2, "noise linearity")
def criterion_2(seeds=range(10)):
    """Pearson r between noise variance and mean subspace error >= 0.9 on both datasets."""
    parts, ok = [], True
    for ds in ("synthetic", "fixture"):
        params = dict(SWEEP_PROFILE, **{"veracity.dataset": ds})
        rep = run_experiment(ExperimentConfig("veracity_noise_sweep", tuple(seeds), params))
        grid, curve = _mean_curve(rep, "noise_var", "subspace_err")
        r = _pearson(grid, curve)
        ok &= r >= 0.9
        parts.append(f"{ds} r={r:.4f}")
    return ok, ", ".join(parts) + " (>=0.9)"


@_timed(3, "robustness dominance over PCA")
def criterion_3(seeds=range(10)):
    """Robust pipeline's mean true-data error below PCA's at every noise level, outliers and missing."""
    parts, ok = [], True
    for exp in ("veracity_outliers", "veracity_missing"):
        rep = run_experiment(ExperimentConfig(exp, tuple(seeds), dict(SWEEP_PROFILE)))
        _, robust = _mean_curve(rep, "noise_var", "true_data_err", {"method": "robust"})
        _, pca = _mean_curve(rep, "noise_var", "true_data_err", {"method": "pca"})
        wins = sum(a < b for a, b in zip(robust, pca))
        ok &= wins == len(robust)
        parts.append(f"{exp.split('_')[1]} {wins}/{len(robust)} levels "
                     f"(robust max {max(robust):.3f}, pca min {min(pca):.3f})")
    return ok, ", ".join(parts)


_FED_CACHE = {}


def _federated_run(seed=0):
    if seed not in _FED_CACHE:
        cfg = ExperimentConfig("federated_overhead", (seed,), {"federated.delta": "2.0", "federated.devices": "50"})
        Y = federated_matrix(cfg, 50, seed)
        t0 = time.perf_counter()
        res = fed.simulate(Y, federated_params(cfg, 2.0), seed)
        _FED_CACHE[seed] = (Y, res, time.perf_counter() - t0)
    return _FED_CACHE[seed]


@_timed(4, "federated communication reduction")
def criterion_4(seed=0):
    """Overhead fraction <= 0.10 on the chest-accelerometer fixture, 50 devices, delta 2, 4 taps, <= 120 s."""
    _, res, elapsed = _federated_run(seed)
    overhead = res.overhead_fraction
    return overhead <= 0.10 and elapsed <= 120.0, (
        f"overhead_fraction={overhead:.4f} (<=0.10), reduction={100 * (1 - overhead):.1f}%, run={elapsed:.1f}s (<=120s)")


@_timed(5, "Mirsky instance check")
def criterion_5(seed=0):
    """Eigenvalue shift never exceeds the Frobenius perturbation in any fog round."""
    _, res, _ = _federated_run(seed)
    worst = max(r.mirsky_lhs - r.delta_norm for r in res.reports)
    return res.mirsky_violations == 0, (
        f"{res.mirsky_violations} violations over {len(res.reports)} rounds, max(lhs - |dA|_F)={worst:.3e}")


@_timed(6, "delta / Tol_F round trip")
def criterion_6(n_cases=100, seed=0):
    """solve_delta(tol_f(delta)) reproduces delta within 1e-9 relative on 100 tuples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        m = int(rng.integers(1, 10_000))
        n = int(rng.integers(1, 500))
        trace = float(10 ** rng.uniform(-3, 8))
        delta = float(10 ** rng.uniform(-3, 1))
        tol = fed.tol_f_homogeneous(trace, m, n, delta)
        back = fed.solve_delta(tol, m, n, trace)
        worst = max(worst, abs(back - delta) / delta)
    return worst <= 1e-9, f"max relative error {worst:.2e} over {n_cases} tuples (<=1e-9)"


@_timed(7, "Tol_F linearity")
def criterion_7():
    """Pearson r between delta in [0, 2] and normalized Tol_F >= 0.95 on the criterion-4 data."""
    cfg = ExperimentConfig("federated_tol_vs_delta", (0,), {"federated.simulate": "false", "federated.devices": "50"})
    rep = run_experiment(cfg)
    r = _pearson(rep.column("delta"), rep.column("norm_tol"))
    return r >= 0.95, f"r={r:.5f} over {len(rep.rows)} deltas (>=0.95)"


@_timed(8, "mobility trend and baseline comparison")
def criterion_8(seeds=range(10), counts=(10, 25, 50, 75, 100)):
    """Mean eta nondecreasing in device count; multi-hop beats direct-to-BS in >= 80% of cells."""
    cfg = ExperimentConfig("mobility_eta_vs_devices", tuple(seeds),
                           {"mobility.devices": ",".join(map(str, counts)), "mobility.payload_bytes": "10"})
    rep = run_experiment(cfg)
    keys, curve = _mean_curve(rep, "nodes", "eta_bits_per_joule")
    monotone = all(b >= a for a, b in zip(curve, curve[1:]))
    recs = rep.records()
    wins = sum(r["eta_bits_per_joule"] >= r["eta_direct_bits_per_joule"] for r in recs)
    share = wins / len(recs)
    return monotone and share >= 0.8, (
        f"mean eta {'nondecreasing' if monotone else 'NOT monotone'} over {list(keys)}, "
        f"multi-hop >= direct in {100 * share:.0f}% of cells (>=80%)")


@_timed(9, "cluster invariants")
def criterion_9(n_topologies=1000, seed=0):
    """Zero invariant violations over randomized topologies."""
    rng = np.random.default_rng(seed)
    totals = {}
    for i in range(n_topologies):
        n = int(rng.integers(1, 81))
        params = mob.MobilityParams(distance_jitter_m=float(rng.choice([0.0, 5.0])),
                                    stationary_fraction=float(rng.uniform(0, 1)),
                                    initial_energy_j=float(rng.choice([0.5, 0.01])))
        res = mob.simulate(n, 80, 10_000 + i, params)
        for k, v in mob.check_invariants(res.world, res.ledger, res.initial_energy).items():
            totals[k] = totals.get(k, 0) + v
    bad = sum(totals.values())
    return bad == 0, f"{bad} violations over {n_topologies} topologies " + str(totals)


SMALL_CONFIGS = {
    "mobility_eta_vs_devices": {"mobility.devices": "10,20"},
    "mobility_eta_vs_packet": {"mobility.devices": "15", "mobility.payload_bytes": "10,40"},
    "veracity_noise_sweep": {"veracity.m": "60", "veracity.n": "40", "veracity.k": "3",
                             "veracity.noise_grid": "0:0.03:0.06", "veracity.omega": "10"},
    "veracity_outliers": {"veracity.m": "60", "veracity.n": "40", "veracity.k": "3",
                          "veracity.noise_grid": "0.01", "veracity.omega": "10"},
    "veracity_missing": {"veracity.m": "60", "veracity.n": "40", "veracity.k": "3",
                         "veracity.noise_grid": "0.01", "veracity.omega": "10"},
    "veracity_scalability": {"mobility.devices": "10,20"},
    "federated_tol_vs_delta": {"federated.devices": "10", "federated.samples_per_device": "600",
                               "federated.delta": "0.5,2.0"},
    "federated_prediction": {"federated.devices": "10", "federated.samples_per_device": "600",
                             "federated.trace_devices": "0,5"},
    "federated_overhead": {"federated.devices": "10", "federated.samples_per_device": "600",
                           "federated.delta": "1.0,2.0"},
    "federated_scalability": {"federated.devices": "5,10", "federated.samples_per_device": "600"},
}


@_timed(10, "determinism and runtime")
def criterion_10(suite_elapsed=None, seeds=(0, 1)):
    """Byte-identical CSV on rerun for every experiment; whole suite within the budget."""
    mismatched = []
    for exp in EXPERIMENTS:
        texts = [to_csv_text(run_experiment(ExperimentConfig(exp, seeds, SMALL_CONFIGS[exp]))) for _ in range(2)]
        if texts[0] != texts[1]:
            mismatched.append(exp)
    within = suite_elapsed is None or suite_elapsed <= SUITE_BUDGET_S
    budget = "not measured" if suite_elapsed is None else f"suite {suite_elapsed:.0f}s (<= {SUITE_BUDGET_S:.0f}s)"
    return not mismatched and within, (
        f"{len(EXPERIMENTS) - len(mismatched)}/{len(EXPERIMENTS)} experiments byte-identical, {budget}")


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9)


def run_all(echo=print):
    """Run every criterion, echo one line each, return the results."""
    t0 = time.perf_counter()
    results = []
    for crit in CRITERIA:
        results.append(crit())
        if echo:
            echo(results[-1].line())
    # the determinism check's own time counts towards the suite budget
    t10 = time.perf_counter()
    first = criterion_10(None)
    total = time.perf_counter() - t0
    last = CriterionResult(10, first.name, first.passed and total <= SUITE_BUDGET_S,
                           first.detail.replace("not measured", f"suite {total:.0f}s (<= {SUITE_BUDGET_S:.0f}s)"),
                           time.perf_counter() - t10)
    results.append(last)
    if echo:
        echo(last.line())
    return results
