"""Command line entry point ``aggrekit``."""

import argparse
import logging
from pathlib import Path
import sys

from .exceptions import AggrekitError
from .harness import ExperimentConfig, emit_csv, run_experiment
from .harness.config import KEYS, parse_ints

log = logging.getLogger("aggrekit")


def _seeds(text):
    """A bare count ``K`` means seeds ``0..K-1``; lists and ranges pass through."""
    text = str(text).strip()
    if text.isdigit():
        return tuple(range(int(text)))
    return parse_ints(text)


def _base_params(args, section):
    """Parameters of an optional INI file, restricted to ``section``."""
    if not getattr(args, "config", None):
        return {}, None
    cfg = ExperimentConfig.from_file(args.config)
    params = {k: v for k, v in cfg.parameters.items() if k.startswith(section + ".")}
    return params, cfg


def _emit(cfg, out_dir, filename):
    report = run_experiment(cfg)
    path = emit_csv(report, Path(out_dir) / filename)
    print(f"{cfg.experiment}: {len(report.rows)} rows -> {path}")
    return 0


def cmd_mobility(args):
    params, base = _base_params(args, "mobility")
    if args.nodes is not None:
        params["mobility.devices"] = args.nodes
    if args.payload_bytes is not None:
        params["mobility.payload_bytes"] = args.payload_bytes
    seeds = _seeds(args.seeds) if args.seeds is not None else (base.seeds if base else (0,))
    cfg = ExperimentConfig("mobility_eta_vs_devices", seeds, params)
    return _emit(cfg, args.output_dir, "mobility_results.csv")


def cmd_veracity(args):
    params, base = _base_params(args, "veracity")
    for key, value in (("dataset", args.dataset), ("path", args.path), ("k", args.k),
                       ("noise_grid", args.noise_grid), ("outliers", args.outliers),
                       ("missing", args.missing), ("methods", args.methods)):
        if value is not None:
            params["veracity." + key] = str(value)
    seeds = _seeds(args.seeds) if args.seeds is not None else (base.seeds if base else (0,))
    cfg = ExperimentConfig("veracity_noise_sweep", seeds, params)
    return _emit(cfg, args.output_dir, "veracity_results.csv")


def cmd_federated(args):
    params, base = _base_params(args, "federated")
    for key, value in (("dataset", args.dataset), ("path", args.path), ("devices", args.devices),
                       ("delta", args.delta), ("taps", args.taps)):
        if value is not None:
            params["federated." + key] = str(value)
    seeds = _seeds(args.seeds) if args.seeds is not None else (base.seeds if base else (0,))
    cfg = ExperimentConfig("federated_overhead", seeds, params)
    status = _emit(cfg, args.output_dir, "federated_results.csv")
    if args.traces:
        trace = ExperimentConfig("federated_prediction", seeds, params)
        _emit(trace, args.output_dir, "federated_traces.csv")
    return status


def cmd_run(args):
    cfg = ExperimentConfig.from_file(args.config)
    out = args.output_dir if args.output_dir is not None else cfg.output_dir
    return _emit(cfg, out, f"{cfg.experiment}.csv")


def cmd_accept(args):
    from .harness.acceptance import run_all

    results = run_all(echo=lambda line: print(line, flush=True))
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 1


def cmd_keys(args):
    for key, (_, default, doc) in KEYS.items():
        print(f"{key:36s} {default!s:28s} {doc}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="aggrekit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--seeds", help="seed count K (0..K-1) or a list such as 0-9 or 1,4,7")
        p.add_argument("--output-dir", default=None, help="directory for CSV output (default: .)")
        if config:
            p.add_argument("--config", help="INI file providing defaults for this section")

    p = sub.add_parser("mobility", help="D2D clustering energy efficiency sweep")
    p.add_argument("--nodes", help="device counts, e.g. 10,25,50")
    p.add_argument("--payload-bytes", help="payload sizes in bytes")
    common(p)
    p.set_defaults(func=cmd_mobility)

    p = sub.add_parser("veracity", help="true-data estimation under noise")
    p.add_argument("--dataset", choices=("synthetic", "fixture", "file"))
    p.add_argument("--path", help="data file for --dataset file (relative to AGGREKIT_DATA_DIR)")
    p.add_argument("--k", type=int)
    p.add_argument("--noise-grid", help="start:step:stop or a comma list")
    p.add_argument("--outliers", type=float, help="outlier density")
    p.add_argument("--missing", type=float, help="missing fraction")
    p.add_argument("--methods", help="comma list of robust, pca")
    common(p)
    p.set_defaults(func=cmd_veracity)

    p = sub.add_parser("federated", help="federated LMS filtering overhead")
    p.add_argument("--dataset", choices=("fixture", "synthetic", "file"))
    p.add_argument("--path", help="MHEALTH log for --dataset file (relative to AGGREKIT_DATA_DIR)")
    p.add_argument("--devices")
    p.add_argument("--delta")
    p.add_argument("--taps", type=int)
    p.add_argument("--traces", action="store_true", help="also dump per-device prediction traces")
    common(p)
    p.set_defaults(func=cmd_federated)

    p = sub.add_parser("run", help="run one experiment from an INI file")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.set_defaults(func=cmd_accept)

    p = sub.add_parser("keys", help="list configuration keys and defaults")
    p.set_defaults(func=cmd_keys)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "output_dir", "") is None and args.command != "run":
        args.output_dir = "."
    try:
        return args.func(args)
    except AggrekitError as exc:
        print(f"aggrekit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
