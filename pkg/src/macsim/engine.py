"""Deterministic discrete-event core.

One event loop per replication.  Time is integer microseconds.  Same-time
events are ordered by (kind rank, subject id, insertion order) so logs are
reproducible byte for byte.
"""
from __future__ import annotations

import heapq
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import metrics as M
from .assisted import AssistedMac, Reservation, ReservationBook, ScheduleConflict
from .ref80211ad import AdCycleConfig, Grant, RefAdMac
from .scenario import ConfigError, ScenarioConfig, ScenarioState, generate_scenario, los, state_at, step_mobility
from .sub6 import BeaconLog, BeaconRecord, Sub6Config, beacon_bytes, extension_bytes

log = logging.getLogger(__name__)

KIND_RANK = {
    "mobility-step": 0,
    "become-transmitter": 1,
    "reservation-end": 2,
    "reservation-start": 3,
    "cycle-boundary": 4,
    "beacon-tx": 5,
}
MOBILITY_STEP_US = 100_000
ACTIVATION_POLICIES = ("uniform", "all-at-zero", "poisson")


class InvariantViolation(RuntimeError):
    """A global assertion failed; carries the tail of the event trace."""

    def __init__(self, msg: str, trace: list[dict], seed: int | None = None):
        super().__init__(msg + "\nlast events:\n" + "\n".join(json.dumps(r) for r in trace))
        self.trace = trace
        self.seed = seed


@dataclass(order=True)
class Event:
    time: int
    rank: int
    subject: int
    seq: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


class EventQueue:
    def __init__(self):
        self._heap: list[Event] = []
        self._seq = itertools.count()

    def push(self, time: int, kind: str, subject: int, **payload) -> None:
        heapq.heappush(self._heap, Event(int(time), KIND_RANK[kind], subject,
                                         next(self._seq), kind, payload))

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek_time(self) -> int | None:
        return self._heap[0].time if self._heap else None

    def __len__(self):
        return len(self._heap)


class EventLog:
    """Newline-delimited event records; capped to keep desk runs bounded."""

    def __init__(self, max_events: int | None = None):
        self.max_events = max_events
        self.records: list[dict] = []
        self.dropped = 0

    def add(self, time_us: int, kind: str, subject: int, **payload) -> None:
        if self.max_events is not None and len(self.records) >= self.max_events:
            self.dropped += 1
            return
        rec = {"time_us": int(time_us), "kind": kind, "subject": int(subject)}
        rec.update(payload)
        self.records.append(rec)

    def tail(self, n: int = 20) -> list[dict]:
        return self.records[-n:]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


@dataclass
class LedgerEntry:
    reservation: Reservation
    rts_time: int | None = None
    cts_time: int | None = None
    status: str = "ok"  # "los_lost" when LOS broke during the transmission
    cycle: int | None = None
    slot: int | None = None

    @property
    def delay(self) -> int | None:
        if self.cts_time is None:
            return None
        return self.reservation.start - self.cts_time


@dataclass
class GlobalLedger:
    mac: str
    reservations: list[LedgerEntry] = field(default_factory=list)
    failed_grants: list[Grant] = field(default_factory=list)
    activations: dict[int, int] = field(default_factory=dict)
    targets: dict[int, list[int]] = field(default_factory=dict)
    first_rts: dict[int, int] = field(default_factory=dict)
    first_cts: dict[int, int] = field(default_factory=dict)
    rts_bytes: dict[int, int] = field(default_factory=dict)
    cts_bytes: dict[int, int] = field(default_factory=dict)
    beacons: BeaconLog = field(default_factory=BeaconLog)
    cycles: list = field(default_factory=list)
    end_time: int = 0
    _book: ReservationBook = field(default_factory=lambda: ReservationBook(-1), repr=False)

    def commit(self, entry: LedgerEntry) -> None:
        """Record a committed transmission; half-duplex is asserted here."""
        self._book.add(entry.reservation)
        self.reservations.append(entry)

    def by_transmitter(self) -> dict[int, list[LedgerEntry]]:
        out: dict[int, list[LedgerEntry]] = {}
        for e in self.reservations:
            out.setdefault(e.reservation.tx, []).append(e)
        return out

    def reservation_rows(self) -> list[dict]:
        rows = []
        for e in sorted(self.reservations, key=lambda e: (e.reservation.start, e.reservation.tx,
                                                          e.reservation.rx)):
            r = e.reservation
            row = {"tx": r.tx, "rx": r.rx, "start_ms": r.start / 1000, "end_ms": r.end / 1000,
                   "rts_time_ms": None if e.rts_time is None else e.rts_time / 1000,
                   "cts_time_ms": None if e.cts_time is None else e.cts_time / 1000,
                   "delay_ms": None if e.delay is None else e.delay / 1000,
                   "status": e.status}
            if self.mac == "ref-ad":
                row["cycle"] = e.cycle
                row["slot"] = e.slot
            rows.append(row)
        return rows


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    mac: str = "assisted"
    r_tx: float = 0.15
    sim_duration_us: int = 20_000_000
    replications: int = 30
    min_replications: int = 10
    target_ci: float = 0.045
    tx_activation: str = "uniform"
    sub6: Sub6Config = field(default_factory=Sub6Config)
    ad: AdCycleConfig = field(default_factory=AdCycleConfig)
    tx_dur_us: int = 50_000
    cbr_window_us: int = 1_000_000
    stop_when_idle: bool = True
    max_trace_events: int | None = None
    seed: int = 1

    def __post_init__(self):
        if self.mac not in ("assisted", "ref-ad"):
            raise ConfigError(f"unknown mac {self.mac!r}")
        if not 0.0 <= self.r_tx <= 1.0:
            raise ConfigError("r_tx must lie in [0, 1]")
        if self.replications < 1 or self.min_replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.sim_duration_us <= 0:
            raise ConfigError("sim_duration must be > 0")
        if self.tx_activation not in ACTIVATION_POLICIES:
            raise ConfigError(f"unknown activation policy {self.tx_activation!r}")


def activate_transmitters(state: ScenarioState, policy: str, rng: np.random.Generator,
                          beacon_period_us: int = 100_000) -> dict[int, int]:
    """Activation time of every flagged transmitter."""
    txs = state.transmitters()
    if policy == "all-at-zero":
        return {v: 0 for v in txs}
    if policy == "uniform":
        times = rng.integers(0, beacon_period_us, len(txs))
    elif policy == "poisson":
        times = np.round(rng.exponential(beacon_period_us, len(txs)))
    else:
        raise ConfigError(f"unknown activation policy {policy!r}")
    return {v: int(t) for v, t in zip(txs, times)}


@dataclass
class Replication:
    seed: int
    initial: ScenarioState
    ledger: GlobalLedger
    log: EventLog
    mac: object
    positions: Callable = field(repr=False, default=None)


class Simulator:
    """Runs one replication of either MAC over a prepared scenario."""

    def __init__(self, cfg: RunConfig, state: ScenarioState, activations: dict[int, int],
                 target_override: dict[int, list[int]] | None = None):
        self.cfg = cfg
        self.initial = state
        self.snapshot = state
        self.activations = activations
        self.queue = EventQueue()
        self.log = EventLog(cfg.max_trace_events)
        self.ledger = GlobalLedger(cfg.mac)
        self._snapshots = {0: state}
        ids = [v.id for v in state.vehicles]
        if cfg.mac == "assisted":
            self.mac = AssistedMac(ids, cfg.sub6, tx_dur=cfg.tx_dur_us,
                                   target_override=target_override)
        else:
            self.mac = RefAdMac(cfg.ad)
        self._work = 0  # queued events other than beacons and mobility

    # geometry at the current event time
    def geo(self, t: int) -> ScenarioState:
        return state_at(self.snapshot, t)

    def positions(self, t: int):
        step = t // MOBILITY_STEP_US * MOBILITY_STEP_US
        st = state_at(self.initial, step) if step else self.initial
        return st.ids, st.xs, st.ys

    def _push(self, time, kind, subject, **payload):
        if kind not in ("beacon-tx", "mobility-step"):
            self._work += 1
        self.queue.push(time, kind, subject, **payload)

    def _commit(self, entry: LedgerEntry, t: int) -> None:
        try:
            self.ledger.commit(entry)
        except ScheduleConflict as exc:
            raise InvariantViolation(f"half-duplex violated at {t} us: {exc}", self.log.tail()) from exc
        r = entry.reservation
        self._push(r.start, "reservation-start", r.tx, rx=r.rx, end=r.end)
        self._push(r.end, "reservation-end", r.tx, rx=r.rx, start=r.start)

    def run(self) -> GlobalLedger:
        cfg = self.cfg
        moving = any(v.speed for v in self.initial.vehicles)
        if moving:
            self._push(MOBILITY_STEP_US, "mobility-step", -1)
        for v, t in sorted(self.activations.items()):
            self._push(t, "become-transmitter", v)
        if cfg.mac == "assisted":
            for v in self.initial.vehicles:
                self._push(v.beacon_phase_us, "beacon-tx", v.id)
        min_end = cfg.cbr_window_us if cfg.mac == "assisted" else 0
        t = 0
        while len(self.queue):
            if self.queue.peek_time() >= cfg.sim_duration_us:
                break
            if (cfg.stop_when_idle and self._work == 0 and self.mac.idle()
                    and self.queue.peek_time() >= min_end):
                break
            ev = self.queue.pop()
            t = ev.time
            if ev.kind not in ("beacon-tx", "mobility-step"):
                self._work -= 1
            getattr(self, "_on_" + ev.kind.replace("-", "_"))(ev)
        self.ledger.end_time = t
        if cfg.mac == "ref-ad":
            self.ledger.cycles = self.mac.cycles
        return self.ledger

    def _on_mobility_step(self, ev: Event) -> None:
        self.snapshot = step_mobility(self.snapshot, ev.time - self.snapshot.time_us)
        self._push(ev.time + MOBILITY_STEP_US, "mobility-step", -1)

    def _on_become_transmitter(self, ev: Event) -> None:
        v, t = ev.subject, ev.time
        geo = self.geo(t)
        self.ledger.activations[v] = t
        self.log.add(t, ev.kind, v)
        if self.cfg.mac == "assisted":
            self.mac.activate(v, t, geo)
            return
        st = self.mac.activate(v, t, geo)
        self.ledger.targets[v] = list(self.mac.tx[v].targets)
        if st is not None:
            self._push(t, "cycle-boundary", v, phase="bhi_start", cycle=0)

    def _on_beacon_tx(self, ev: Event) -> None:
        v, t = ev.subject, ev.time
        geo = self.geo(t)
        out = self.mac.on_beacon(v, t, geo)
        b = out.beacon
        ext = b.extension
        nbytes = beacon_bytes(b, self.cfg.sub6)
        self.ledger.beacons.append(BeaconRecord(t, v, b.kind, b.entry_count, nbytes,
                                                extension_bytes(ext), len(out.recipients)))
        if ext is not None:
            payload = {"ext": b.kind, "entries": [list(e) for e in ext.entries],
                       "recipients": len(out.recipients)}
            self.log.add(t, ev.kind, v, **payload)
            if b.kind == "rts":
                intent = self.mac.intents[v]
                self.ledger.targets.setdefault(v, [u for u, _ in intent.targets])
                self.ledger.first_rts.setdefault(v, t)
                self.ledger.rts_bytes[v] = self.ledger.rts_bytes.get(v, 0) + extension_bytes(ext)
            else:
                for tx, _ in ext.entries:
                    self.ledger.first_cts.setdefault(tx, t)
                    self.ledger.cts_bytes[tx] = self.ledger.cts_bytes.get(tx, 0) + ext.entry_bytes
        intent = self.mac.intents.get(v)
        if intent is not None and intent.composed:
            self.ledger.targets.setdefault(v, [u for u, _ in intent.targets])
        for c in out.commits:
            self._commit(LedgerEntry(c.reservation, c.rts_time, c.cts_time), t)
        self._push(t + self.cfg.sub6.beacon_period_us, "beacon-tx", v)

    def _on_cycle_boundary(self, ev: Event) -> None:
        v, t = ev.subject, ev.time
        geo = self.geo(t)
        if ev.payload["phase"] == "bhi_start":
            self.mac.on_bhi_start(v, geo)
            self.log.add(t, ev.kind, v, phase="bhi_start", cycle=ev.payload["cycle"])
            self._push(t + self.cfg.ad.bhi_us, "cycle-boundary", v, phase="bhi_end",
                       cycle=ev.payload["cycle"])
            return
        st = self.mac.tx[v]
        res, nxt = self.mac.on_bhi_end(v, geo)
        self.log.add(t, ev.kind, v, phase="bhi_end", cycle=ev.payload["cycle"],
                     discovered=list(st.discovered),
                     accepted=[g.rx for g in res.accepted],
                     rejected=[r.grant.rx for r in res.rejected])
        for g in res.accepted:
            self._commit(LedgerEntry(g.as_reservation(), cycle=g.cycle, slot=g.slot), t)
        self.ledger.failed_grants.extend(r.grant for r in res.rejected)
        if nxt is not None:
            self._push(nxt.cycle_start, "cycle-boundary", v, phase="bhi_start",
                       cycle=nxt.cycle_index)

    def _los_ok(self, tx: int, rx: int, t: int) -> bool:
        geo = self.geo(t)
        return los(geo.vehicle(tx), geo.vehicle(rx), geo)

    def _find(self, tx, rx, start) -> LedgerEntry:
        for e in reversed(self.ledger.reservations):
            r = e.reservation
            if r.tx == tx and r.rx == rx and r.start == start:
                return e
        raise KeyError((tx, rx, start))

    def _on_reservation_start(self, ev: Event) -> None:
        tx, rx = ev.subject, ev.payload["rx"]
        self.log.add(ev.time, ev.kind, tx, rx=rx, end=ev.payload["end"])
        if not self._los_ok(tx, rx, ev.time):
            self._find(tx, rx, ev.time).status = "los_lost"

    def _on_reservation_end(self, ev: Event) -> None:
        tx, rx = ev.subject, ev.payload["rx"]
        self.log.add(ev.time, ev.kind, tx, rx=rx, start=ev.payload["start"])
        if not self._los_ok(tx, rx, ev.time):
            self._find(tx, rx, ev.payload["start"]).status = "los_lost"


def replicate(cfg: RunConfig, seed: int) -> Replication:
    """One deterministic replication for ``seed``."""
    scen_seq, act_seq = np.random.SeedSequence(seed).spawn(2)
    state = generate_scenario(replace(cfg.scenario, seed=seed), np.random.default_rng(scen_seq),
                              r_tx=cfg.r_tx, beacon_period_us=cfg.sub6.beacon_period_us)
    acts = activate_transmitters(state, cfg.tx_activation, np.random.default_rng(act_seq),
                                 cfg.sub6.beacon_period_us)
    sim = Simulator(cfg, state, acts)
    ledger = sim.run()
    return Replication(seed, state, ledger, sim.log, sim.mac, sim.positions)


def replication_seeds(cfg: RunConfig, n: int) -> list[int]:
    children = np.random.SeedSequence(cfg.seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


@dataclass
class RunResult:
    cfg: RunConfig
    replications: list[Replication]
    rows: list[dict]
    report: M.MetricsReport


def run(cfg: RunConfig, keep: bool = False,
        progress: Callable[[int, dict], None] | None = None) -> RunResult:
    """Replicate until the 95% margins of the headline metrics meet ``target_ci``.

    Replication k uses the k-th child of the run seed, so its metrics do not
    depend on how many replications follow it.
    """
    seeds = replication_seeds(cfg, cfg.replications)
    reps, rows = [], []
    for k, seed in enumerate(seeds):
        try:
            rep = replicate(cfg, seed)
        except InvariantViolation as exc:
            exc.seed = seed
            raise
        row = M.replication_metrics(rep, cfg)
        row["replication"] = k
        rows.append(row)
        if keep:
            reps.append(rep)
        if progress:
            progress(k, row)
        if k + 1 >= cfg.min_replications and M.ci_met(rows, cfg.target_ci):
            break
    return RunResult(cfg, reps, rows, M.aggregate(rows, cfg))
