"""Sub-6GHz control plane: beacons, scheduling extensions, airtime and CBR."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .scenario import ScenarioState, sub6_neighbors

ID_BYTES = 6
DUR_BYTES = 2
DELAY_BYTES = 2


@dataclass(frozen=True)
class Sub6Config:
    beacon_period_us: int = 100_000
    data_rate_mbps: float = 6.0
    base_beacon_bytes: int = 300
    tx_power_dbm: float = 15.0  # informational only

    def __post_init__(self):
        if self.beacon_period_us <= 0:
            raise ValueError("beacon_period must be > 0")
        if self.data_rate_mbps <= 0:
            raise ValueError("data_rate must be > 0")


@dataclass(frozen=True)
class RtsExtension:
    """Scheduling request: (neighbour id, transmission duration in us) pairs."""
    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("RTS extension needs at least one entry")
        ids = [n for n, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("RTS neighbour ids must be distinct")
        if any(d <= 0 for _, d in self.entries):
            raise ValueError("tx_dur must be > 0")

    kind = "rts"
    entry_bytes = ID_BYTES + DUR_BYTES


@dataclass(frozen=True)
class CtsExtension:
    """Scheduling grant: (transmitter id, start delay in us) pairs."""
    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("CTS extension needs at least one entry")
        ids = [n for n, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("CTS transmitter ids must be distinct")
        if any(d < 0 for _, d in self.entries):
            raise ValueError("delay must be >= 0")

    kind = "cts"
    entry_bytes = ID_BYTES + DELAY_BYTES


Extension = Union[RtsExtension, CtsExtension, None]


@dataclass(frozen=True)
class Beacon:
    sender: int
    tx_time_us: int
    position: tuple[float, float] = (0.0, 0.0)
    speed: float = 0.0
    heading: float = 0.0
    dimensions: tuple[float, float] = (5.0, 2.0)
    extension: Extension = None

    @property
    def kind(self) -> str:
        return "none" if self.extension is None else self.extension.kind

    @property
    def entry_count(self) -> int:
        return 0 if self.extension is None else len(self.extension.entries)


def next_beacon_time(phase_us: int, now_us: int, period_us: int) -> int:
    """Smallest t >= now with t = phase (mod period)."""
    k = -((phase_us - now_us) // period_us)  # integer ceil
    return phase_us + k * period_us


def extension_bytes(ext: Extension) -> int:
    if ext is None:
        return 0
    return ext.entry_bytes * len(ext.entries)


def beacon_bytes(b: Beacon, cfg: Sub6Config = Sub6Config()) -> int:
    return cfg.base_beacon_bytes + extension_bytes(b.extension)


def airtime_us(n_bytes: int, cfg: Sub6Config = Sub6Config()) -> float:
    # Mbps is bits per microsecond
    return n_bytes * 8 / cfg.data_rate_mbps


def make_beacon(state: ScenarioState, sender: int, t_us: int, extension: Extension = None) -> Beacon:
    v = state.vehicle(sender)
    return Beacon(sender=sender, tx_time_us=t_us,
                  position=(v.longitudinal_pos, state.cfg.lane_center(v.lane)),
                  speed=v.speed, dimensions=(v.length, v.width), extension=extension)


def deliver_beacon(b: Beacon, state: ScenarioState) -> frozenset[int]:
    """Recipients of ``b``: every vehicle within sub-6GHz range of the sender."""
    if b.sender not in state.index:
        raise KeyError(f"unknown sender {b.sender}")
    return sub6_neighbors(b.sender, state)


@dataclass(frozen=True)
class BeaconRecord:
    time_us: int
    sender: int
    extension_kind: str
    entry_count: int
    bytes: int
    extension_bytes: int
    recipients_count: int


class BeaconLog:
    """Append-only log of transmitted beacons."""

    def __init__(self):
        self.records: list[BeaconRecord] = []

    def append(self, rec: BeaconRecord) -> None:
        if self.records and rec.time_us < self.records[-1].time_us:
            raise ValueError("beacon log must be appended in time order")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def extension_records(self) -> list[BeaconRecord]:
        return [r for r in self.records if r.extension_kind != "none"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "sender", "extension_kind", "entry_count", "bytes",
                        "recipients_count"])
            for r in self.records:
                w.writerow([f"{r.time_us / 1000:.3f}", r.sender, r.extension_kind,
                            r.entry_count, r.bytes, r.recipients_count])


def busy_union(intervals: Iterable[tuple[float, float]], lo: float, hi: float) -> float:
    """Total length of the union of intervals, clipped to [lo, hi)."""
    total = 0.0
    cur_s = cur_e = None
    for s, e in sorted(intervals):
        s, e = max(s, lo), min(e, hi)
        if e <= s:
            continue
        if cur_e is None or s > cur_e:
            if cur_e is not None:
                total += cur_e - cur_s
            cur_s, cur_e = s, e
        else:
            cur_e = max(cur_e, e)
    if cur_e is not None:
        total += cur_e - cur_s
    return total


def cbr(v: int, window: tuple[int, int], beacons: Sequence[tuple[int, int, float]],
        audible) -> float:
    """Channel busy ratio at ``v`` over ``window`` (us).

    ``beacons`` holds (sender, tx_time_us, airtime_us); ``audible(sender, t, v)``
    says whether the sender is within sub-6GHz range of ``v`` at ``t``.
    Overlapping airtimes count once.
    """
    lo, hi = window
    if hi <= lo:
        raise ValueError("window must be > 0")
    spans = [(t, t + a) for s, t, a in beacons
             if t < hi and t + a > lo and (s == v or audible(s, t, v))]
    return busy_union(spans, lo, hi) / (hi - lo)


def _union_lengths(starts: np.ndarray, ends: np.ndarray, lo: float, hi: float) -> float:
    starts = np.clip(starts, lo, hi)
    ends = np.clip(ends, lo, hi)
    keep = ends > starts
    starts, ends = starts[keep], ends[keep]
    if starts.size == 0:
        return 0.0
    order = np.argsort(starts, kind="stable")
    starts, ends = starts[order], ends[order]
    run_end = np.maximum.accumulate(ends)
    new_block = np.empty(starts.size, dtype=bool)
    new_block[0] = True
    new_block[1:] = starts[1:] > run_end[:-1]
    idx = np.flatnonzero(new_block)
    block_end = np.append(run_end[idx[1:] - 1], run_end[-1])
    return float(np.sum(block_end - starts[idx]))


def population_cbr(records: Sequence[BeaconRecord], positions, cfg: Sub6Config,
                   window: tuple[int, int], sub6_range: float, road_length: float,
                   with_extensions: bool = True) -> np.ndarray:
    """Per-vehicle CBR over ``window``.

    ``positions(t_us)`` returns (ids, xs, ys) arrays at time ``t_us``.  With
    ``with_extensions=False`` every beacon is costed at the base size, which is
    the extension-free baseline over identical topology and phases.
    """
    lo, hi = window
    recs = [r for r in records
            if r.time_us < hi and r.time_us + airtime_us(r.bytes, cfg) > lo]
    ids, _, _ = positions(lo)
    col = {int(u): k for k, u in enumerate(ids)}
    n = len(ids)
    if not recs:
        return np.zeros(n)
    hear = np.zeros((len(recs), n), dtype=bool)
    cache = {}
    for row, r in enumerate(recs):
        step = r.time_us // 100_000 * 100_000
        if step not in cache:
            cache[step] = positions(step)
        _, xs, ys = cache[step]
        i = col[r.sender]
        dx = np.mod(xs - xs[i] + road_length / 2, road_length) - road_length / 2
        hear[row] = np.hypot(dx, ys - ys[i]) <= sub6_range
    t0 = np.array([r.time_us for r in recs], dtype=float)
    nbytes = np.array([r.bytes if with_extensions else r.bytes - r.extension_bytes
                       for r in recs], dtype=float)
    t1 = t0 + nbytes * 8 / cfg.data_rate_mbps
    out = np.array([_union_lengths(t0[hear[:, k]], t1[hear[:, k]], lo, hi) for k in range(n)])
    return out / (hi - lo)
