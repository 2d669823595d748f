"""Command-line harness: ``cbag ingest | run | sweep | verify``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import KEY_TO_FIELD, build_config, convert_value, parse_seeds, read_config_file
from .datasets import (CORA_LABEL_ORDER, ingest_content_cites, read_bundle, save_bundle,
                       verify_bundle)
from .errors import CbagError, ConfigError
from .metrics import run_experiment, sweep, write_run_outputs, write_sweep_outputs

log = logging.getLogger("cbag")

# Bundles shipped with the source tree, addressable by name.
DATA_DIR = Path(__file__).resolve().parents[2] / "data" / "bundles"

LABEL_ORDER_PRESETS = {"cora": CORA_LABEL_ORDER}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def resolve_dataset(name: str) -> Path:
    path = Path(name)
    if path.is_dir():
        return path
    shipped = DATA_DIR / name.lower()
    if shipped.is_dir():
        return shipped
    raise ConfigError(f"dataset {name!r} is neither a bundle directory nor a shipped bundle name")


def _add_experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--dataset", help="bundle directory or shipped name (cora, citeseer, pubmed)")
    p.add_argument("--method", choices=["cbag", "cbag-r"], type=str.lower)
    p.add_argument("--target-label", type=int, dest="target_label")
    p.add_argument("--p", type=float, help="poisoning rate (default 0.05)")
    p.add_argument("--lambda", type=float, dest="lam", help="trigger fraction, k = floor(lambda*d)")
    p.add_argument("--seeds", type=parse_seeds, help="comma-separated seed list (default 1,2,3,4,5)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--audit", type=int,
                   help="per seed, re-check this many ASR predictions with a full forward pass")
    p.add_argument("--out", help="output directory")


def _experiment_config(args):
    file_values = read_config_file(args.config) if args.config else {}
    flags = {name: getattr(args, name, None) for name in KEY_TO_FIELD.values()}
    cfg = build_config(file_values, flags)
    if not cfg.dataset:
        raise ConfigError("no dataset given (--dataset or 'dataset =' in the config file)")
    if not cfg.out:
        raise ConfigError("no output directory given (--out)")
    return cfg


def cmd_ingest(args) -> int:
    if args.planetoid:
        from .planetoid import convert_planetoid
        bundle = convert_planetoid(args.planetoid, args.prefix or args.name, name=args.name,
                                   target_label=args.target_label)
    else:
        if not (args.content and args.cites):
            raise ConfigError("ingest needs --content and --cites, or --planetoid")
        order = args.label_order
        if order is not None:
            order = LABEL_ORDER_PRESETS.get(order.lower()) or tuple(order.split(","))
        bundle = ingest_content_cites(args.content, args.cites, args.name, label_order=order,
                                      target_label=args.target_label)
    save_bundle(bundle, args.out)
    print(f"wrote {args.out}: N={bundle.num_nodes} d={bundle.num_features} "
          f"C={bundle.num_classes} edges={len(bundle.edges)} (raw lines {bundle.raw_edge_lines}, "
          f"dropped {bundle.dropped_edges})")
    return 0


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    bundle = read_bundle(resolve_dataset(cfg.dataset))
    report = run_experiment(bundle, cfg)
    path = write_run_outputs(report, cfg.out)
    print(f"{bundle.name} {cfg.method}: asr={report.asr:.4f} cad={report.cad:.4f} "
          f"acc_clean={report.acc_clean:.4f} acc_backdoor={report.acc_backdoor:.4f} -> {path}")
    if cfg.audit:
        print(f"audit: {report.audit_mismatches}/{report.audit_checked} mismatches")
    if report.audit_mismatches:
        print(f"warning: {report.audit_mismatches}/{report.audit_checked} audited predictions "
              "disagree with full recomputation", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    bundle = read_bundle(resolve_dataset(cfg.dataset))
    values = [convert_value("p", v) for v in args.values.split(",") if v.strip()]
    reports = sweep(bundle, cfg, args.axis, values)
    path = write_sweep_outputs(reports, cfg, args.axis, cfg.out)
    for r in reports:
        v = r.config.p if args.axis == "p" else r.config.lam
        print(f"{args.axis}={v}: asr={r.asr:.4f} cad={r.cad:.4f}")
    print(f"-> {path}")
    return 0


def cmd_verify(args) -> int:
    report = verify_bundle(resolve_dataset(args.dataset))
    for key, value in report.items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        print(f"{key}\t{value}")
    print("status\tok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbag", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert raw dataset files into a canonical bundle")
    p.add_argument("--content", help=".content file (optionally .gz)")
    p.add_argument("--cites", help=".cites file (optionally .gz)")
    p.add_argument("--planetoid", help="directory of ind.<prefix>.* Planetoid files")
    p.add_argument("--prefix", help="Planetoid file prefix (defaults to --name)")
    p.add_argument("--name", required=True)
    p.add_argument("--label-order", dest="label_order",
                   help="comma-separated label names in id order, or a preset name (cora)")
    p.add_argument("--target-label", type=int, dest="target_label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="clean vs backdoor experiment over all seeds")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="repeat run over poisoning rates or trigger sizes")
    _add_experiment_flags(p)
    p.add_argument("--axis", choices=["p", "lambda"], required=True)
    p.add_argument("--values", required=True, help="comma-separated ascending values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="integrity report for a bundle")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CbagError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"cbag: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
