"""Command-line experiment runner: ``dagekit {split,run,check,gen}``."""
import argparse
import json
import os
import sys

from . import checks, experiment, protocol, synthetic
from .data import LabeledDataset, write_feature_csv
from .errors import ConfigError, DageError, DataError, NumericError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _config(args):
    overrides = list(args.set or [])
    if args.out:
        overrides.append(f"out={json.dumps(args.out)}")
    return experiment.load_config(args.config, overrides)


def _manifest(cfg, args, source, target, fingerprint):
    if getattr(args, "manifest", None):
        try:
            with open(args.manifest, encoding="utf-8") as fh:
                m = protocol.SplitManifest.from_json(fh.read())
        except OSError as exc:
            raise DataError(f"cannot read manifest {args.manifest}: {exc}") from None
        if m.fingerprint != fingerprint:
            raise DataError("manifest was built for different data (fingerprint mismatch)")
        return m
    return experiment.make_manifest(cfg, source, target, fingerprint, args.protocol)


def cmd_split(args):
    cfg = _config(args)
    source, target, fp = experiment.load_data(cfg)
    m = experiment.make_manifest(cfg, source, target, fp, args.protocol)
    os.makedirs(cfg.out, exist_ok=True)
    if m.protocol == "traditional":
        print("warning: the traditional protocol is deprecated; its test data doubles as validation data",
              file=sys.stderr)
    for run in m.runs:
        single = experiment.single_run_manifest(m, run)
        experiment.write_atomic(os.path.join(cfg.out, f"manifest_seed{run.seed}.json"), single.to_json())
        print(f"seed {run.seed}: {single.manifest_hash}")
    experiment.write_atomic(os.path.join(cfg.out, "manifest.json"), m.to_json())
    summary = {
        "manifest_hash": m.manifest_hash,
        "protocol": m.protocol,
        "fingerprint": m.fingerprint,
        "runs": {str(r.seed): experiment.single_run_manifest(m, r).manifest_hash for r in m.runs},
        "test_size": len(m.test),
    }
    experiment.write_atomic(os.path.join(cfg.out, "split_summary.json"), protocol.canonical_json(summary))
    print(f"manifest: {m.manifest_hash}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    source, target, fp = experiment.load_data(cfg)
    m = _manifest(cfg, args, source, target, fp)
    print(f"method={cfg.method} manifest={m.manifest_hash}")
    if m.protocol == "traditional":
        print("warning: the traditional protocol is deprecated; model selection sees the test data",
              file=sys.stderr)
    try:
        results = experiment.run_experiment(cfg, source, target, m, jobs=args.jobs)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    os.makedirs(cfg.out, exist_ok=True)
    experiment.write_atomic(os.path.join(cfg.out, "manifest.json"), m.to_json())
    experiment.write_atomic(os.path.join(cfg.out, "results.json"), experiment.results_json(results))
    experiment.write_atomic(os.path.join(cfg.out, "results.csv"), experiment.results_csv(results))
    for key in sorted(results["per_seed"], key=int):
        r = results["per_seed"][key]
        print(f"seed {key}: test {100 * r['test_accuracy']:.1f} (best epoch {r['best_epoch']})")
    print(f"{cfg.method}: {experiment.format_mean_std(results['mean'], results['std'])}")
    if cfg.baseline:
        print(f"source-only NCM: {experiment.format_mean_std(results['baseline_mean'], results['baseline_std'])}")
    return EXIT_OK


def cmd_check(args):
    ok = checks.run_checks(args.filter, args.golden)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gen(args):
    cfg = _config(args)
    if "synthetic" not in cfg.data:
        raise ConfigError("gen needs a synthetic data spec")
    spec = synthetic.ShiftSpec.from_dict(cfg.data["synthetic"])
    source, target = synthetic.generate(spec)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "synthetic.csv")
    write_feature_csv(LabeledDataset.concat(source, target), path)
    print(path)
    return EXIT_OK


def _global_flags(suppress):
    # flags may appear before or after the subcommand; the subcommand copy must
    # not reset values given before it
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=default(None), help="JSON experiment config")
    common.add_argument("--set", metavar="K=V", action="append", default=default(None),
                        help="override a config key (dotted path)")
    common.add_argument("--out", metavar="DIR", default=default(None), help="output directory")
    common.add_argument("--protocol", choices=("rectified", "traditional"), default=default("rectified"))
    common.add_argument("--jobs", type=int, default=default(1), metavar="N", help="seeds to run in parallel")
    return common


def build_parser():
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="dagekit", description=__doc__, parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("split", parents=[common], help="write split manifests").set_defaults(func=cmd_split)
    p = sub.add_parser("run", parents=[common], help="train and evaluate every seed")
    p.add_argument("--manifest", metavar="PATH", help="reuse an existing manifest.json")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--filter", help="only run checks whose name or tag contains this text")
    p.add_argument("--golden", metavar="PATH", help="golden digest file (defaults to the packaged one)")
    p.set_defaults(func=cmd_check)
    sub.add_parser("gen", parents=[common], help="write the synthetic dataset as CSV").set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
