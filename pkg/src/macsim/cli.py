"""macsim command line: run, sweep, golden, calibrate.

Exit status is 0 on success, 1 when a golden diff or a simulator invariant
fails, and 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics as M
from . import presets
from .engine import InvariantViolation, RunConfig, run
from .golden import GOLDEN, run_golden
from .scenario import ConfigError, calibrate_los_range

SWEEP_RTX = (0.15, 0.20, 0.25, 0.30, 0.35, 0.40)
FORMATS = ("csv", "json", "ndjson")

log = logging.getLogger("macsim")


def _rtx_list(text: str) -> list[float]:
    vals = []
    for part in text.split(","):
        v = float(part)
        vals.append(v / 100 if v > 1 else v)  # accept 15 or 0.15
    return vals


def _formats(text: str) -> set[str]:
    out = {f.strip() for f in text.split(",") if f.strip()}
    bad = out - set(FORMATS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s): {', '.join(sorted(bad))}")
    return out


def _config(args, mac: str | None = None, r_tx: float | None = None) -> RunConfig:
    cfg = presets.load(args.preset, args.set or ())
    changes = {}
    if mac or getattr(args, "mac", None) not in (None, "both"):
        changes["mac"] = mac or args.mac
    if r_tx is not None:
        changes["r_tx"] = r_tx
    for attr, key in (("seed", "seed"), ("replications", "replications"),
                      ("target_ci", "target_ci"), ("max_trace_events", "max_trace_events")):
        val = getattr(args, attr, None)
        if val is not None:
            changes[key] = val
    if "replications" in changes:
        changes["min_replications"] = min(cfg.min_replications, changes["replications"])
    return replace(cfg, **changes)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _write_dicts(path: Path, rows: list[dict]) -> None:
    rows = [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows]
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _tag(cfg: RunConfig) -> str:
    return f"{cfg.mac}_rtx{round(cfg.r_tx * 100):02d}"


def cmd_run(args) -> int:
    cfg = _config(args, r_tx=args.rtx)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run(cfg, keep=True, progress=lambda k, row: log.info(
        "replication %d: ratio %.3f, delay1 %.1f ms", k, row["scheduled_ratio"],
        row["delay_1_mean"]))
    tag = _tag(cfg)
    first = res.replications[0]
    if "csv" in args.format:
        M.write_rows_csv(res.rows, out / f"{tag}_replications.csv")
        _write_dicts(out / f"{tag}_reservations.csv", first.ledger.reservation_rows())
        if cfg.mac == "assisted":
            first.ledger.beacons.to_csv(out / f"{tag}_beacons.csv")
    if "json" in args.format:
        (out / f"{tag}_report.json").write_text(res.report.to_json() + "\n")
    if "ndjson" in args.format:
        first.log.write(out / f"{tag}_trace.ndjson")
    print(json.dumps(res.report.flat(), sort_keys=True, default=float))
    return 0


def cmd_sweep(args) -> int:
    macs = ("assisted", "ref-ad") if args.mac == "both" else (args.mac,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, reports = [], []
    for mac in macs:
        for r in args.rtx:
            cfg = _config(args, mac=mac, r_tx=r)
            try:
                res = run(cfg)
            except InvariantViolation as exc:
                print(f"macsim: sweep aborted at mac={mac} r_tx={r:.2f}, "
                      f"replication seed {exc.seed}", file=sys.stderr)
                raise
            flat = res.report.flat()
            table.append(flat)
            reports.append(json.loads(res.report.to_json()))
            log.info("%s r_tx=%.2f: ratio %.3f over %d replications", mac, r,
                     flat["scheduled_ratio"], flat["replications"])
    if "csv" in args.format:
        _write_dicts(out / "sweep.csv", table)
    if "json" in args.format:
        _write_json(out / "sweep.json", reports)
    for row in table:
        print(f"{row['mac']:9s} r_tx={row['r_tx']:.2f} ratio={row['scheduled_ratio']:.3f} "
              f"delay1={row['delay_1_mean']:.1f}ms k0={row['share_0']:.3f}")
    return 0


def cmd_golden(args) -> int:
    names = sorted(GOLDEN) if args.name == "all" else [args.name]
    ok = True
    for name in names:
        res = run_golden(name)
        print(f"{name}: {'PASS' if res.passed else 'FAIL'} ({res.elapsed_s * 1000:.1f} ms)")
        if not res.passed:
            print(res.diff())
            ok = False
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            _write_dicts(out / f"golden_{name}_reservations.csv", res.ledger.reservation_rows())
    return 0 if ok else 1


def cmd_calibrate(args) -> int:
    path = presets.locate(args.preset)
    cfg = presets.load(args.preset, args.set or ())
    cal = calibrate_los_range(cfg.scenario, target=args.target, tol=args.tol,
                              seeds=range(args.seeds))
    print(f"mmwave_los_range = {cal.mmwave_los_range:g} m "
          f"(mean {cal.mean_neighbors:.3f} LOS neighbours, {cal.iterations} probe(s))")
    if not args.dry_run:
        presets.set_value(path, "scenario", "mmwave_los_range", cal.mmwave_los_range)
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macsim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_formats="csv,json"):
        sp.add_argument("--preset", default="paper-highway-125")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a preset key, e.g. ad.max_cycles=5")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--target-ci", type=float, dest="target_ci")
        sp.add_argument("--out", default="results")
        sp.add_argument("--format", type=_formats, default=_formats(default_formats))
        sp.add_argument("--max-trace-events", type=int, dest="max_trace_events")

    r = sub.add_parser("run", help="replicate one (mac, r_tx) cell")
    common(r, "csv,json,ndjson")
    r.add_argument("--mac", choices=("assisted", "ref-ad"))
    r.add_argument("--rtx", type=lambda s: _rtx_list(s)[0])
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="both MACs over a list of transmitter ratios")
    common(s)
    s.add_argument("--mac", choices=("assisted", "ref-ad", "both"), default="both")
    s.add_argument("--rtx", type=_rtx_list, default=list(SWEEP_RTX))
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("golden", help="replay a pinned six-vehicle trace")
    g.add_argument("name", choices=sorted(GOLDEN) + ["all"])
    g.add_argument("--out")
    g.set_defaults(func=cmd_golden)

    c = sub.add_parser("calibrate", help="fit the LOS range to a mean neighbour count")
    c.add_argument("--preset", default="paper-highway-125")
    c.add_argument("--set", action="append", metavar="KEY=VALUE")
    c.add_argument("--target", type=float, default=5.5)
    c.add_argument("--tol", type=float, default=0.1)
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--dry-run", action="store_true", help="report without editing the preset")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"macsim: configuration error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"macsim: invariant violated: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
