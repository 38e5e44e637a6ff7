"""Command-line entry point.

Every analysis command consumes the same configuration file; stages write
into the configured output directory and can be re-run independently. The
``fixture`` command materializes a synthetic dataset plus a matching
configuration for demos and smoke tests.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import (
    ConfigError,
    StageError,
    load_config,
    run_pipeline,
    run_stage,
)
from .synthetic import CYCLE_SUFFIXES, synthetic_tables
from .xport import save_xport


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except StageError as exc:
        print(exc, file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskscreen",
        description=(
            "Fit survey-weighted risk models, audit their calibration by "
            "group, and quantify the value of screening policies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("ingest", "build and snapshot the analysis cohort"),
        ("fit", "fit the configured risk models"),
        ("report", "write calibration, utility, and subgroup reports"),
        ("sweep", "sweep the detection reward grid"),
        ("all", "run every stage and write the artifact manifest"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="configuration file")
        cmd.add_argument("--output", help="override the configured output directory")
        cmd.add_argument("--unweighted", action="store_true",
                         help="ignore survey weights in every estimate")
        cmd.add_argument("--seed", type=int, help="override the configured seed")
        cmd.set_defaults(handler=run_analysis_command, stage=name)

    fixture = sub.add_parser(
        "fixture", help="write a synthetic dataset and a ready-to-run config"
    )
    fixture.add_argument("--output", required=True, help="directory to create")
    fixture.add_argument("--rows", type=int, default=100,
                         help="respondents per cycle (default 100)")
    fixture.add_argument("--seed", type=int, default=7)
    fixture.add_argument("--format", choices=("xpt", "csv"), default="xpt")
    fixture.set_defaults(handler=run_fixture_command)
    return parser


def run_analysis_command(args) -> int:
    config = load_config(args.config)
    if args.output:
        config.output_dir = Path(args.output)
    if args.unweighted:
        config.weighted = False
    if args.seed is not None:
        config.seed = args.seed
    if args.stage == "all":
        artifacts = run_pipeline(config)
        print(f"wrote {len(artifacts.files)} artifacts to {artifacts.output_dir}")
        print(f"manifest: {artifacts.manifest_path}")
    else:
        run_stage(config, args.stage)
        print(f"stage {args.stage} finished; outputs in {config.output_dir}")
    return 0


def run_fixture_command(args) -> int:
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = synthetic_tables(rows_per_cycle=args.rows, seed=args.seed)
    sources = []
    if args.format == "xpt":
        by_cycle: dict = {}
        for table in tables:
            by_cycle.setdefault(table.cycle, []).append(table)
        for cycle, members in sorted(by_cycle.items()):
            name = f"synthetic_{CYCLE_SUFFIXES[cycle]}.xpt"
            save_xport(members, out_dir / name)
            sources.append({"path": name, "kind": "xport"})
    else:
        for table in tables:
            name = f"{table.name.lower()}.csv"
            _table_to_csv(table, out_dir / name)
            sources.append({"path": name, "kind": "csv", "cycle": table.cycle})
    config_path = out_dir / "synthetic.yaml"
    config_path.write_text(_fixture_config(sources))
    print(f"fixture data and config written to {out_dir}")
    print(f"run: riskscreen all --config {config_path}")
    return 0


def _table_to_csv(table, path) -> None:
    frame = table.to_frame()
    frame.to_csv(path, index=False)


def _fixture_config(sources) -> str:
    lines = ["data_sources:"]
    for src in sources:
        lines.append(f"  - path: {src['path']}")
        lines.append(f"    kind: {src['kind']}")
        if "cycle" in src:
            lines.append(f"    cycle: \"{src['cycle']}\"")
    lines += [
        "output_dir: out",
        "reward: 70.0",
        "dollars_per_util: 100.0",
        "capacity_fraction: 0.5",
        "calibration:",
        "  score_range: [0.0, 0.3]",
        "  bandwidth: 0.03",
        "subgroup:",
        "  min_weighted_n: 10.0",
        "sweep_rewards: [10, 20, 40, 70, 100, 150, 200]",
        "",
    ]
    return "\n".join(lines)


if __name__ == "__main__":
    sys.exit(main())
