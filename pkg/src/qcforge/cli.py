"""Command-line entry point: one subcommand per stage plus ``all`` and ``synth``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import __version__, pipeline, synth
from .config import load_config
from .errors import QCError

logger = logging.getLogger("qcforge")

STAGE_HELP = {
    "index": "index a BIDS tree and join clinical visits (s4_clinica)",
    "gate": "apply the scanner-parameter gate (s5_post_clinica_qc)",
    "iqm": "compute image quality metrics (s6_mriqc)",
    "outliers": "robust per-metric outlier screen (s6_mriqc)",
    "classify-logs": "classify preprocessing logs and plan reruns (s7_fmriprep)",
    "motion": "framewise displacement and censoring rules (s8_final_qc)",
    "euler": "per-site Euler number screen (s8_final_qc)",
    "finalize": "fuse ledgers into included/excluded lists and stage counts",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration (default: $QCFORGE_CONFIG)")
    p.add_argument("--bids-root", help="BIDS dataset root (overrides the config)")
    p.add_argument("--output", help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, help="worker processes for per-session stages")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcforge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"qcforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, text in STAGE_HELP.items():
        _common(sub.add_parser(name, help=text, description=text))
    p = sub.add_parser("all", help="run every stage in order", description="run every stage in order")
    _common(p)
    p.add_argument("--stage", choices=pipeline.CHAIN, help="resume the chain at this stage")
    p = sub.add_parser("synth", help="write a synthetic fixture dataset",
                       description="write a seeded synthetic BIDS dataset with known faults")
    p.add_argument("--output", required=True, help="directory to create")
    p.add_argument("--seed", type=int, default=synth.FixtureSpec.seed)
    p.add_argument("--spec", help="YAML file with fixture fields (seed, n_subjects, faults, ...)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING - 10 * min(verbosity, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _abs(path):
    return str(Path(path).resolve()) if path else None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        if args.command == "synth":
            doc = {}
            if args.spec:
                doc = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) or {}
            doc.setdefault("seed", args.seed)
            manifest = synth.generate(synth.FixtureSpec.from_dict(doc), args.output)
            print(f"wrote {len(manifest['sessions'])} sessions to {args.output}")
            return 0
        cfg = load_config(args.config, {"bids_root": _abs(args.bids_root),
                                        "output_dir": _abs(args.output), "jobs": args.jobs})
        if args.command == "all":
            result = pipeline.run_all(cfg, args.stage)
        else:
            result = {args.command: pipeline.STAGE_RUNNERS[args.command](cfg)}
    except QCError as exc:
        print(f"qcforge: error: {exc}", file=sys.stderr)
        return 1
    for stage, summary in result.items():
        print(f"{stage}: " + ", ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
