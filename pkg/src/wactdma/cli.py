"""Command-line scenario runner.

Exit codes: 0 when the command completed (a run that fails to converge
still completes), 2 for an invalid config or trace, 3 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import yaml

from .config import ScenarioConfig
from .protocol.state import ConfigError
from .simulation import Simulation
from .verifier import ORACLE_BUDGET, oracle_distance2_coloring, summarize_trace

log = logging.getLogger("wactdma")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
SWEEP_HEADER = ["cell", "params", "converged_at", "resets", "slots_per_node", "violations",
                "recovery_frames", "status", "error"]


@contextmanager
def atomic_writer(path: str | Path):
    """Text handle whose content replaces ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def simulate(cfg: ScenarioConfig, trace=None) -> dict:
    """Run one validated scenario and return its summary dict."""
    topo, proto = cfg.validate()
    sim = Simulation(topo, proto, start=cfg.start, perturbations=cfg.events(), trace=trace)
    result = sim.run(cfg.frames)
    chi2 = None
    if 0 < len(sim.topology) <= ORACLE_BUDGET:
        chi2 = oracle_distance2_coloring(sim.topology)[0]
    summary = result.summary(chi2)
    summary["period"] = proto.period
    summary["max_recovery"] = result.recovery_frames
    return summary


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


def cmd_run(args) -> int:
    cfg = ScenarioConfig.read(args.config)
    base = Path(args.config).resolve().parent
    trace_path = _resolve(base, args.trace or cfg.trace_path)
    summary_path = _resolve(base, args.summary or cfg.summary_path)
    cfg.validate()
    if trace_path is not None:
        with atomic_writer(trace_path) as fh:
            summary = simulate(cfg, fh)
    else:
        summary = simulate(cfg)
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if summary_path is not None:
        with atomic_writer(summary_path) as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def parse_vary(items: list[str]) -> list[tuple[str, list]]:
    grid = []
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--vary expects key=v1,v2,...: {item!r}")
        vals = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
        grid.append((key, vals))
    return grid


def _cell(job):
    index, base_dict, params, out_dir = job
    row = {"cell": index, "params": json.dumps(dict(params), sort_keys=True)}
    try:
        cfg = ScenarioConfig.from_dict(base_dict)
        for key, value in params:
            cfg = cfg.with_value(key, value)
        summary = simulate(cfg)
        row.update(
            converged_at=summary["converged_at"],
            resets=summary["resets"],
            slots_per_node=round(summary["slots_per_node"], 4),
            violations=len(summary["violations"]),
            recovery_frames=summary["recovery_frames"],
            status="ok" if summary["error"] is None else "failed",
            error=summary["error"] or "",
        )
        if out_dir is not None:
            with atomic_writer(Path(out_dir) / f"cell-{index:04d}.json") as fh:
                fh.write(json.dumps({"params": dict(params), **summary}, indent=2, sort_keys=True) + "\n")
    except (ConfigError, ValueError) as exc:
        row.update(status="failed", error=str(exc))
    return row


def cmd_sweep(args) -> int:
    cfg = ScenarioConfig.read(args.config)
    grid = parse_vary(args.vary or [])
    keys = [k for k, _ in grid]
    combos = list(itertools.product(*(vals for _, vals in grid)))
    jobs = [(i, cfg.to_dict(), tuple(zip(keys, combo)), args.out_dir) for i, combo in enumerate(combos)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_cell, jobs))
    else:
        rows = [_cell(j) for j in jobs]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in SWEEP_HEADER})
    if args.output:
        with atomic_writer(args.output) as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def read_trace(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                raise ConfigError(f"trace line {lineno} is not JSON") from None
    return records


def cmd_verify(args) -> int:
    summary = summarize_trace(read_trace(args.trace))
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_dump_topology(args) -> int:
    cfg = ScenarioConfig.read(args.config)
    sys.stdout.write(cfg.build_topology().dump())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wactdma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config")
    r.add_argument("--trace", help="override trace_path")
    r.add_argument("--summary", help="override summary_path")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a parameter grid and emit a CSV table")
    s.add_argument("config")
    s.add_argument("--vary", action="append", metavar="KEY=V1,V2", help="dotted config key and values")
    s.add_argument("-o", "--output", help="CSV path (default stdout)")
    s.add_argument("--out-dir", help="write one summary JSON per cell here")
    s.add_argument("-j", "--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="recompute the verifier summary from a trace")
    v.add_argument("trace")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump-topology", help="print the scenario's initial topology")
    d.add_argument("config")
    d.set_defaults(func=cmd_dump_topology)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
