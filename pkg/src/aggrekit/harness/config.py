"""Experiment configuration: INI sections flattened to ``section.key``.

Example::

    [experiment]
    name = veracity_noise_sweep
    seeds = 0-9
    output_dir = results

    [veracity]
    noise_grid = 0:0.01:0.06
    p = 0.5

Unknown sections or keys raise :class:`~aggrekit.exceptions.ConfigError`.
"""

import configparser
from dataclasses import dataclass, field
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError

EXPERIMENTS = (
    "mobility_eta_vs_devices",
    "mobility_eta_vs_packet",
    "veracity_noise_sweep",
    "veracity_outliers",
    "veracity_missing",
    "veracity_scalability",
    "federated_tol_vs_delta",
    "federated_prediction",
    "federated_overhead",
    "federated_scalability",
)


def parse_grid(text):
    """``start:step:stop`` (inclusive) or a comma list, as a tuple of floats."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid needs start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"bad grid {text!r}")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        # round to the step's decimals so 0.1 * 3 prints as 0.3
        decimals = max(0, -int(np.floor(np.log10(step))) + 6)
        return tuple(round(start + i * step, decimals) for i in range(count))
    return tuple(float(v) for v in _items(text))


def parse_ints(text):
    """Comma list of integers; ``a-b`` spans are inclusive."""
    out = []
    for item in _items(text):
        if "-" in item[1:]:
            lo, hi = item[0] + item[1:].split("-", 1)[0], item[1:].split("-", 1)[1]
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(item))
    return tuple(out)


def _items(text):
    items = [t.strip() for t in str(text).replace(";", ",").split(",")]
    return [t for t in items if t]


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text):
        value = str(text).strip()
        if value not in options:
            raise ConfigError(f"expected one of {options}, got {value!r}")
        return value
    return parse


def _str(text):
    return str(text).strip()


def _methods(text):
    out = tuple(_items(text))
    for m in out:
        if m not in ("robust", "pca"):
            raise ConfigError(f"unknown method {m!r}")
    return out


# key -> (parser, default, description)
KEYS = {
    "experiment.name": (_choice(*EXPERIMENTS), None, "experiment to run"),
    "experiment.seeds": (parse_ints, (0,), "seed list, e.g. 0-9 or 1,4,7"),
    "experiment.output_dir": (_str, ".", "directory for CSV output"),

    "mobility.alpha": (float, 0.5, "distance weight of relative mobility"),
    "mobility.beta": (float, 0.5, "speed weight of relative mobility"),
    "mobility.beacon_range_m": (float, 300.0, "beacon range CR in metres"),
    "mobility.tti_s": (float, 1e-3, "transmission time interval in seconds"),
    "mobility.control_packet_bits": (int, 200, "advertisement size in bits"),
    "mobility.initial_energy_j": (float, 0.5, "initial battery per node"),
    "mobility.max_rings": (int, 5, "number of rings around the BS"),
    "mobility.rounds": (int, 2, "cluster-form and upload cycles"),
    "mobility.cell_radius_m": (float, 500.0, "cell radius in metres"),
    "mobility.window": (int, 16, "correlation window in steps"),
    "mobility.max_speed": (float, 2.0, "maximum node speed in m/s"),
    "mobility.stationary_fraction": (float, 0.5, "share of nodes that never move"),
    "mobility.accel_std": (float, 0.2, "std of random accelerations"),
    "mobility.distance_jitter_m": (float, 0.0, "ranging noise std in metres"),
    "mobility.e_elec": (float, 50e-9, "electronics energy per bit"),
    "mobility.eps_amp": (float, 100e-12, "amplifier energy per bit per m^2"),
    "mobility.devices": (parse_ints, (10, 25, 50, 75, 100), "device counts"),
    "mobility.payload_bytes": (parse_ints, (10,), "payload sizes in bytes"),

    "veracity.dataset": (_choice("synthetic", "fixture", "file"), "synthetic", "data source"),
    "veracity.path": (_str, "", "data file for dataset=file (relative to AGGREKIT_DATA_DIR)"),
    "veracity.column": (int, 1, "1-based column of the data file"),
    "veracity.delimiter": (_str, "whitespace", "data file delimiter"),
    "veracity.m": (int, 400, "readings per stream (rows)"),
    "veracity.n": (int, 400, "streams (columns)"),
    "veracity.k": (int, 10, "subspace rank"),
    "veracity.noise_grid": (parse_grid, parse_grid("0:0.01:0.06"), "noise variances"),
    "veracity.noise_mode": (_choice("data", "subspace"), "data", "inject noise into data or basis"),
    "veracity.outliers": (float, 0.0, "outlier density"),
    "veracity.outlier_low": (float, -10.0, "outlier range low"),
    "veracity.outlier_high": (float, 10.0, "outlier range high"),
    "veracity.missing": (float, 0.0, "fraction of masked entries"),
    "veracity.methods": (_methods, ("robust",), "pipelines: robust, pca"),
    "veracity.delta_0": (float, 1.0, "initial smoothing"),
    "veracity.delta_final": (float, 1e-6, "final smoothing"),
    "veracity.omega": (int, 100, "annealing steps"),
    "veracity.p": (float, 0.5, "penalty exponent"),
    "veracity.inner_steps": (int, 5, "gradient steps per annealing step"),

    "federated.dataset": (_choice("fixture", "file", "synthetic"), "fixture", "data source"),
    "federated.path": (_str, "", "MHEALTH log for dataset=file (relative to AGGREKIT_DATA_DIR)"),
    "federated.columns": (parse_ints, (1, 2, 3), "1-based columns of the log"),
    "federated.samples_per_device": (int, 2000, "fixture readings per device at the largest device count"),
    "federated.devices": (parse_ints, (50,), "device counts"),
    "federated.delta": (parse_grid, (2.0,), "dead-band values"),
    "federated.taps": (int, 4, "LMS filter order"),
    "federated.warmup": (int, 200, "training readings per device"),
    "federated.step_fraction": (float, 0.5, "fraction of the LMS step bound"),
    "federated.retrain_window": (int, 32, "readings used to retrain on a violation"),
    "federated.round_length": (int, 100, "readings per fog round"),
    "federated.fraction_k": (float, 1.0, "fraction of devices averaged per round"),
    "federated.fog_radius_m": (float, 100.0, "device placement radius around the fog"),
    "federated.tti_s": (float, 1.0, "transmission time interval"),
    "federated.simulate": (_bool, True, "run the device/fog simulation"),
    "federated.trace_devices": (parse_ints, (0, 25), "devices whose traces are dumped (default: first and middle)"),
}


def data_dir():
    return Path(os.environ.get("AGGREKIT_DATA_DIR", "."))


def resolve_data_path(path):
    p = Path(path)
    if not p.is_absolute():
        p = data_dir() / p
    if not p.exists():
        raise ConfigError(f"data file not found: {p}")
    return p


@dataclass
class ExperimentConfig:
    experiment: str
    seeds: tuple = (0,)
    parameters: dict = field(default_factory=dict)
    output_dir: str = "."

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seed list is empty")
        params = {}
        for key, value in dict(self.parameters).items():
            if key not in KEYS or key.startswith("experiment."):
                raise ConfigError(f"unknown config key {key!r}")
            parser = KEYS[key][0]
            params[key] = parser(value) if isinstance(value, str) else value
        self.parameters = params

    def get(self, key):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        return self.parameters.get(key, KEYS[key][1])

    def section(self, name):
        """Effective values of one section, keys without the prefix."""
        prefix = name + "."
        return {k[len(prefix):]: self.get(k) for k in KEYS if k.startswith(prefix)}

    def canonical(self):
        return json.dumps({"experiment": self.experiment, "seeds": list(self.seeds),
                           "parameters": {k: _jsonable(v) for k, v in sorted(self.parameters.items())}},
                          sort_keys=True)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping):
        """Build from flat ``section.key`` strings (as read from an INI file)."""
        mapping = dict(mapping)
        for key in mapping:
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
        name = mapping.pop("experiment.name", None)
        if name is None:
            raise ConfigError("experiment.name is required")
        seeds = mapping.pop("experiment.seeds", None)
        out = mapping.pop("experiment.output_dir", None)
        return cls(KEYS["experiment.name"][0](name),
                   KEYS["experiment.seeds"][0](seeds) if seeds is not None else (0,),
                   mapping,
                   out if out is not None else ".")

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        flat = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                flat[f"{section}.{key}"] = value
        return cls.from_mapping(flat)


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def documented_keys():
    return {k: (v[1], v[2]) for k, v in KEYS.items()}
