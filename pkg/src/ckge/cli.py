"""Command-line entry point: ``train``, ``eval``, ``gen-synthetic``, ``report``.

Exit codes: 0 success, 2 configuration error, 3 data/checkpoint error,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from ckge.config import Hyperparameters, load_config
from ckge.errors import (
    CheckpointError,
    ConfigError,
    ConsistencyError,
    IngestionError,
    InvariantError,
    NumericError,
    SpecError,
)
from ckge.evaluation import METRICS, MetricsReport
from ckge.kg import write_snapshot_sequence
from ckge.pipeline import average_reports, eval_checkpoint, train_run
from ckge.synthetic import SyntheticSpec, generate_synthetic_sequence

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("ckge")

_TOP_BOOLS = ("disable_bayes", "disable_fcc", "freeze_old_centroids")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (each flag overrides the config file)")
    g.add_argument("--data-root", dest="cfg:data_root")
    g.add_argument("--protocol", dest="cfg:protocol", choices=("filtered", "raw"))
    g.add_argument("--out-dir", "--out", dest="cfg:out_dir")
    for name in _TOP_BOOLS:
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg:{name}", action="store_const", const="true")
    for f in fields(Hyperparameters):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg:{f.name}", metavar=f.name.upper())
    s = p.add_argument_group("synthetic dataset")
    for f in fields(SyntheticSpec):
        s.add_argument(f"--synthetic-{f.name.replace('_', '-')}", dest=f"cfg:synthetic.{f.name}",
                       metavar=f.name.upper())


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out: dict[str, str] = {}
    for k, v in vars(args).items():
        if k.startswith("cfg:") and v is not None:
            out[k[4:]] = str(v)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, _overrides(args)).validate()
    out = Path(cfg.out_dir)
    if args.seeds <= 1:
        run_dir = train_run(cfg, out)
        print(run_dir)
        return EXIT_OK
    reports = []
    for k in range(args.seeds):
        seed = cfg.hp.seed + k
        sub = dataclasses.replace(cfg, hp=dataclasses.replace(cfg.hp, seed=seed), out_dir=str(out / f"seed_{seed}"))
        run_dir = train_run(sub, sub.out_dir)
        reports.append(MetricsReport.from_dict(json.loads((run_dir / "metrics.json").read_text())))
        print(run_dir)
    mean = average_reports(reports)
    (out / "metrics.json").write_text(mean.to_json(), encoding="utf-8")
    (out / "metrics.csv").write_text(mean.to_csv(), encoding="utf-8")
    print(out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    report = eval_checkpoint(args.checkpoint, args.data_root, args.protocol)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec = load_config(None, {k: v for k, v in _overrides(args).items() if k.startswith("synthetic.")}).synthetic
    spec = spec or SyntheticSpec()
    seq = generate_synthetic_sequence(spec)
    write_snapshot_sequence(seq, args.output, write_id_maps=args.write_id_maps)
    for c in seq.counts():
        print(f"N_E={c['N_E']}\tN_R={c['N_R']}\tN_T={c['N_T']}")
    return EXIT_OK


def _load_run(run_dir: Path) -> MetricsReport:
    path = run_dir / "metrics.json"
    try:
        return MetricsReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc


def _table(rows: list[tuple[str, dict[str, float]]], mark_best: bool) -> str:
    best = {m: max(r[m] for _, r in rows) for m in METRICS} if mark_best and len(rows) > 1 else {}
    width = max(len("run"), *(len(n) for n, _ in rows))
    out = [f"{'run':<{width}}  " + "  ".join(f"{m:>9}" for m in METRICS)]
    for name, r in rows:
        cells = []
        for m in METRICS:
            flag = "*" if best and r[m] == best[m] else " "
            cells.append(f"{r[m]:8.4f}{flag}")
        out.append(f"{name:<{width}}  " + "  ".join(cells))
    return "\n".join(out)


def render_report(runs: list[tuple[str, MetricsReport]]) -> tuple[str, str]:
    """Text tables of averaged metrics per model snapshot, and the long-format CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run", "model_snapshot", "test_snapshot", "metric", "value"])
    for name, rep in runs:
        for i, j, m, v in rep.csv_rows():
            w.writerow([name, i, j, m, repr(v)])

    parts = []
    snapshot_sets = {tuple(rep.model_snapshots) for _, rep in runs}
    if len(snapshot_sets) == 1:
        for i in runs[0][1].model_snapshots:
            parts.append(f"## model snapshot {i} (mean over test snapshots 0..{i}; * = best)")
            parts.append(_table([(name, rep.averaged(i)) for name, rep in runs], mark_best=True))
    else:
        for name, rep in runs:
            parts.append(f"## run {name}")
            parts.append(_table([(f"snapshot {i}", rep.averaged(i)) for i in rep.model_snapshots], mark_best=False))
    return "\n\n".join(parts) + "\n", buf.getvalue()


def cmd_report(args: argparse.Namespace) -> int:
    runs = []
    for d in args.runs:
        p = Path(d)
        runs.append((p.name or str(p), _load_run(p)))
    text, rows = render_report(runs)
    sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(rows, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train over every snapshot and persist a run directory")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra override, repeatable")
    p.add_argument("--seeds", type=int, default=1, help="run this many consecutive seeds and average")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a checkpoint without training")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--protocol", choices=("filtered", "raw"), default="filtered")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synthetic", help="write a synthetic snapshot sequence")
    p.add_argument("output")
    p.add_argument("--write-id-maps", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    s = p.add_argument_group("synthetic dataset")
    for f in fields(SyntheticSpec):
        s.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg:synthetic.{f.name}", metavar=f.name.upper())
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("report", help="compare run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--csv", help="write long-format rows here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "set", None) is None:
        args.set = []
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, ConsistencyError, InvariantError, SpecError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
