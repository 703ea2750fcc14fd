"""Evaluation metrics computed from a replication's global ledger."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .sub6 import population_cbr

MAX_N = 5
HIST_LEVELS = ("0", "1", "2", "3", "4+")
CI_KEYS = ("scheduled_ratio", "delay_1_mean")


def scheduled_ratio(ledger) -> dict[int, float]:
    """Per-transmitter fraction of its LOS targets that got a committed reservation.

    Transmitters without LOS neighbours are left out (no 0/0).
    """
    served: dict[int, set[int]] = {}
    for e in ledger.reservations:
        served.setdefault(e.reservation.tx, set()).add(e.reservation.rx)
    out = {}
    for v, targets in ledger.targets.items():
        if targets:
            out[v] = len(served.get(v, set()) & set(targets)) / len(targets)
    return out


def delay_to_nth(ledger, max_n: int = MAX_N) -> dict[int, list[int]]:
    """Delay samples (us) from activation to the n-th reservation start, n = 1..max_n."""
    out = {n: [] for n in range(1, max_n + 1)}
    for v, entries in ledger.by_transmitter().items():
        starts = sorted(e.reservation.start for e in entries)
        t0 = ledger.activations[v]
        for n, s in enumerate(starts[:max_n], start=1):
            out[n].append(s - t0)
    return out


def summarize(samples: Sequence[float]) -> dict:
    if len(samples) == 0:
        return {"mean": math.nan, "p10": math.nan, "p90": math.nan, "count": 0}
    a = np.asarray(samples, dtype=float)
    return {"mean": float(a.mean()), "p10": float(np.percentile(a, 10)),
            "p90": float(np.percentile(a, 90)), "count": int(a.size)}


def concurrency_durations(intervals: Iterable[tuple[int, int]], window: tuple[int, int],
                          levels: int = len(HIST_LEVELS)) -> np.ndarray:
    """Time spent at each concurrency level inside ``window``; the last level is open ended.

    The returned durations always sum to the window length.
    """
    lo, hi = window
    if hi < lo:
        raise ValueError("window end precedes start")
    edges = []
    for s, e in intervals:
        s, e = max(s, lo), min(e, hi)
        if e > s:
            edges.append((s, 1))
            edges.append((e, -1))
    edges.sort()
    acc = np.zeros(levels)
    k, t = 0, lo
    for x, d in edges:
        acc[min(k, levels - 1)] += x - t
        t = x
        k += d
    acc[min(k, levels - 1)] += hi - t
    return acc


def sharing_histogram(intervals: Iterable[tuple[int, int]], window: tuple[int, int]) -> np.ndarray:
    """Fraction of ``window`` with exactly k concurrent transmissions, k in 0..3 and 4+."""
    acc = concurrency_durations(intervals, window)
    span = window[1] - window[0]
    return acc / span if span > 0 else acc


def mmwave_spans(ledger) -> dict[int, tuple[int, int]]:
    """Per transmitter, the span over which it occupies the mmWave channel.

    Control time counts when it is spent on mmWave: a cycling transmitter is
    on the channel from its first BHI to the end of its last DTI.  Otherwise
    the span is its first reservation start to its last reservation end.
    """
    spans: dict[int, tuple[int, int]] = {}
    for e in ledger.reservations:
        r = e.reservation
        lo, hi = spans.get(r.tx, (r.start, r.end))
        spans[r.tx] = (min(lo, r.start), max(hi, r.end))
    for c in ledger.cycles:
        if c.owner not in spans:
            continue
        lo, hi = spans[c.owner]
        spans[c.owner] = (min(lo, c.bhi[0]), max(hi, c.dti[1]))
    return spans


def local_sharing_histogram(ledger) -> np.ndarray:
    """Sharing as seen around each transmitter, averaged over transmitters.

    For transmitter v the window is its mmWave span (see ``mmwave_spans``);
    the transmissions counted are those with an endpoint in v's LOS
    neighbourhood, v included.
    """
    links = [(e.reservation.tx, e.reservation.rx, e.reservation.start, e.reservation.end)
             for e in ledger.reservations]
    hists = []
    for v, window in sorted(mmwave_spans(ledger).items()):
        hood = set(ledger.targets.get(v, ())) | {v}
        spans = [(s, e) for tx, rx, s, e in links if tx in hood or rx in hood]
        hists.append(sharing_histogram(spans, window))
    if not hists:
        return np.zeros(len(HIST_LEVELS))
    return np.mean(hists, axis=0)


def global_sharing_histogram(ledger) -> np.ndarray:
    """Network-wide histogram from the first activation to the last reservation end."""
    if not ledger.reservations:
        return np.zeros(len(HIST_LEVELS))
    window = (min(ledger.activations.values()), max(e.reservation.end for e in ledger.reservations))
    return sharing_histogram([(e.reservation.start, e.reservation.end)
                              for e in ledger.reservations], window)


def overhead_report(ledger, control_bytes_per_neighbor: int = 5800) -> dict:
    """Control bytes per transmitter round and per served neighbour, both MACs.

    For the assisted MAC the round is the RTS entries a transmitter sent plus
    the CTS entries answering it; the reference MAC spends a fixed byte count
    per served neighbour.
    """
    served: dict[int, int] = {}
    for e in ledger.reservations:
        served[e.reservation.tx] = served.get(e.reservation.tx, 0) + 1
    txs = sorted(served)
    if not txs:
        return {"round_bytes_mean": 0.0, "per_neighbor_bytes": 0.0, "ref_round_bytes_mean": 0.0,
                "reduction_per_neighbor": 0.0, "reduction_vs_link": 0.0, "reduction_per_round": 0.0}
    if ledger.mac == "assisted":
        rounds = [ledger.rts_bytes.get(v, 0) + ledger.cts_bytes.get(v, 0) for v in txs]
    else:
        rounds = [control_bytes_per_neighbor * served[v] for v in txs]
    total_served = sum(served[v] for v in txs)
    round_mean = float(np.mean(rounds))
    per_neighbor = float(sum(rounds) / total_served)
    ref_round = float(np.mean([control_bytes_per_neighbor * served[v] for v in txs]))
    if ledger.mac != "assisted":
        # the reference MAC is the baseline; a reduction against itself is meaningless
        return {"round_bytes_mean": round_mean, "per_neighbor_bytes": per_neighbor,
                "ref_round_bytes_mean": ref_round, "reduction_per_neighbor": math.nan,
                "reduction_vs_link": math.nan, "reduction_per_round": math.nan}
    return {
        "round_bytes_mean": round_mean,
        "per_neighbor_bytes": per_neighbor,
        "ref_round_bytes_mean": ref_round,
        "reduction_per_neighbor": 1 - per_neighbor / control_bytes_per_neighbor,
        # a whole assisted round against one neighbour's worth of reference control
        "reduction_vs_link": 1 - round_mean / control_bytes_per_neighbor,
        "reduction_per_round": 1 - round_mean / ref_round,
    }


def extension_bytes_total(ledger) -> int:
    return sum(r.extension_bytes for r in ledger.beacons)


def cbr_report(rep, cfg) -> dict:
    """Population-mean CBR with and without scheduling extensions over the CBR window."""
    recs = list(rep.ledger.beacons)
    if not recs:
        return {"cbr_base": 0.0, "cbr_ext": 0.0, "cbr_delta": 0.0}
    window = (0, cfg.cbr_window_us)
    sc = rep.initial.cfg
    args = (recs, rep.positions, cfg.sub6, window, sc.sub6_range, sc.road_length)
    base = population_cbr(*args, with_extensions=False)
    ext = population_cbr(*args, with_extensions=True)
    b, x = float(base.mean()), float(ext.mean())
    return {"cbr_base": b, "cbr_ext": x, "cbr_delta": (x - b) / b if b else 0.0}


def replication_metrics(rep, cfg) -> dict:
    ledger = rep.ledger
    ratios = scheduled_ratio(ledger)
    delays = delay_to_nth(ledger)
    row: dict = {
        "mac": cfg.mac,
        "r_tx": cfg.r_tx,
        "seed": rep.seed,
        "transmitters": len(ledger.activations),
        "mean_targets": float(np.mean([len(t) for t in ledger.targets.values()]))
        if ledger.targets else 0.0,
        "scheduled_ratio": float(np.mean(list(ratios.values()))) if ratios else math.nan,
        "reservations": len(ledger.reservations),
        "los_lost_fraction": (sum(e.status == "los_lost" for e in ledger.reservations)
                              / len(ledger.reservations)) if ledger.reservations else 0.0,
        "failed_grants": len(ledger.failed_grants),
        "control_time_fraction": cfg.ad.control_time_fraction if cfg.mac == "ref-ad" else 0.0,
    }
    for n, samples in delays.items():
        s = summarize(samples)
        row[f"delay_{n}_mean"] = s["mean"] / 1000
        row[f"delay_{n}_p10"] = s["p10"] / 1000
        row[f"delay_{n}_p90"] = s["p90"] / 1000
    incs = []
    for entries in ledger.by_transmitter().values():
        starts = sorted(e.reservation.start for e in entries)
        incs.extend(np.diff(starts[:MAX_N]).tolist())
    row["delay_increment_mean"] = float(np.mean(incs)) / 1000 if incs else math.nan
    hist = local_sharing_histogram(ledger)
    for lvl, frac in zip(HIST_LEVELS, hist):
        row[f"share_{lvl}"] = float(frac)
    ghist = global_sharing_histogram(ledger)
    for lvl, frac in zip(HIST_LEVELS, ghist):
        row[f"share_global_{lvl}"] = float(frac)
    oh = overhead_report(ledger, cfg.ad.control_bytes_per_neighbor)
    row.update({f"overhead_{k}": v for k, v in oh.items()})
    if cfg.mac == "assisted":
        row["extension_bytes_total"] = extension_bytes_total(ledger)
        row.update(cbr_report(rep, cfg))
    row["_delay_samples"] = {n: [d / 1000 for d in s] for n, s in delays.items()}
    return row


def margin(values: Sequence[float], confidence: float = 0.95) -> float:
    """Half width of the Student-t confidence interval of the mean."""
    a = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if a.size < 2:
        return math.inf
    sd = a.std(ddof=1)
    if sd == 0:
        return 0.0
    return float(stats.t.ppf(0.5 + confidence / 2, a.size - 1) * sd / math.sqrt(a.size))


def relative_margin(values: Sequence[float]) -> float:
    m = margin(values)
    mean = float(np.nanmean(values)) if len(values) else math.nan
    if m == 0:
        return 0.0
    return m / abs(mean) if mean else math.inf


def ci_met(rows: Sequence[dict], target: float) -> bool:
    return all(relative_margin([r[k] for r in rows]) <= target for k in CI_KEYS)


@dataclass
class MetricsReport:
    mac: str
    r_tx: float
    replications: int
    scheduled_ratio: float
    scheduled_ratio_ci: float
    control_overhead_bytes: float
    control_overhead_per_neighbor: float
    overhead_reduction_vs_link: float
    overhead_reduction_per_neighbor: float
    control_time_fraction: float
    delay_to_nth: dict = field(default_factory=dict)
    delay_1_ci: float = math.nan
    delay_increment_mean: float = math.nan
    sharing_histogram: dict = field(default_factory=dict)
    cbr_delta: float | None = None
    cbr_delta_ci: float | None = None
    mean_targets: float = math.nan
    failed_grants_mean: float = 0.0

    def flat(self) -> dict:
        row = {k: v for k, v in asdict(self).items()
               if k not in ("delay_to_nth", "sharing_histogram")}
        for n, s in self.delay_to_nth.items():
            for k, v in s.items():
                row[f"delay_{n}_{k}"] = v
        for lvl, v in self.sharing_histogram.items():
            row[f"share_{lvl}"] = v
        return row

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)


def aggregate(rows: Sequence[dict], cfg) -> MetricsReport:
    def mean(key):
        vals = [r[key] for r in rows if r.get(key) is not None and not math.isnan(r[key])]
        return float(np.mean(vals)) if vals else math.nan

    pooled = {n: [] for n in range(1, MAX_N + 1)}
    for r in rows:
        for n, s in r["_delay_samples"].items():
            pooled[n].extend(s)
    delay = {}
    for n, s in pooled.items():
        d = summarize(s)
        d["mean"] = mean(f"delay_{n}_mean")  # mean of replication means
        delay[n] = d
    return MetricsReport(
        mac=cfg.mac, r_tx=cfg.r_tx, replications=len(rows),
        scheduled_ratio=mean("scheduled_ratio"),
        scheduled_ratio_ci=margin([r["scheduled_ratio"] for r in rows]),
        control_overhead_bytes=mean("overhead_round_bytes_mean"),
        control_overhead_per_neighbor=mean("overhead_per_neighbor_bytes"),
        overhead_reduction_vs_link=mean("overhead_reduction_vs_link"),
        overhead_reduction_per_neighbor=mean("overhead_reduction_per_neighbor"),
        control_time_fraction=mean("control_time_fraction"),
        delay_to_nth=delay,
        delay_1_ci=margin([r["delay_1_mean"] for r in rows]),
        delay_increment_mean=mean("delay_increment_mean"),
        sharing_histogram={lvl: mean(f"share_{lvl}") for lvl in HIST_LEVELS},
        cbr_delta=mean("cbr_delta") if cfg.mac == "assisted" else None,
        cbr_delta_ci=margin([r["cbr_delta"] for r in rows]) if cfg.mac == "assisted" else None,
        mean_targets=mean("mean_targets"),
        failed_grants_mean=mean("failed_grants"),
    )


def write_rows_csv(rows: Sequence[dict], path) -> None:
    rows = [{k: v for k, v in r.items() if not k.startswith("_")} for r in rows]
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
