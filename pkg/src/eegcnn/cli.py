"""Command-line front end.

    eegcnn generate [--config SPEC.json] --seed N --out DIR
    eegcnn run --config CONFIG.json [--out DIR] [--jobs N] [--seed N]
    eegcnn report RESULTS_DIR [--out DIR]

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .dataset import DatasetError, SyntheticSpec, generate_synthetic, write_dataset
from .experiment import REPORT_CSV_HEADER, ConfigError, load_configs, report_rows, run_experiment
from .report import write_summary

log = logging.getLogger("eegcnn")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def cmd_generate(args) -> int:
    try:
        doc = {}
        if args.config is not None:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if not isinstance(doc, dict):
                raise DatasetError("synthetic spec must be a JSON object")
        spec = SyntheticSpec.from_dict(doc)
    except (OSError, json.JSONDecodeError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        recs = generate_synthetic(spec, args.seed)
        manifest = write_dataset(recs, args.out)
    except OSError as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(recs)} recordings for {spec.n_subjects} subjects; manifest {manifest}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        configs = load_configs(args.config, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(args.out) if args.out is not None else Path(args.config).parent / configs[0].output_dir
    single = len(configs) == 1
    summary = []
    for cfg in configs:
        out = root if single else root / cfg.slug()
        log.info("run %s -> %s", cfg.slug(), out)
        try:
            report = run_experiment(cfg, out, jobs=args.jobs)
        except Exception as exc:  # stage-annotated by the pipeline
            print(f"error in run {cfg.slug()}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        summary.append(report_rows(report)[-1])
        print(f"{cfg.slug()}: accuracy {report['mean_accuracy']:.6f} mcc {report['mean_mcc']:.6f}")
    if not single:
        with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_CSV_HEADER)
            w.writerows(summary)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        csv_path, txt_path = write_summary(args.results_dir, args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(txt_path.read_text(encoding="utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegcnn", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset and manifest")
    g.add_argument("--config", type=Path, help="synthetic spec JSON (defaults if omitted)")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run one experiment config (or a sweep)")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--out", type=Path)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int, help="override the config seed")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="pivot run reports into comparison tables")
    p.add_argument("results_dir", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
