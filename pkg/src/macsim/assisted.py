"""Sub-6GHz assisted mmWave scheduling.

A transmitter announces its LOS targets and per-target durations in an
RTS-like beacon.  Each addressed neighbour answers in its own next beacon with
a CTS-like extension carrying the start delay it computed from every
reservation it has overheard.  Everyone in sub-6GHz range overhears both, so
all books stay mutually consistent.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field

from .scenario import ScenarioState, los_neighbors
from .sub6 import Beacon, CtsExtension, RtsExtension, Sub6Config, deliver_beacon, make_beacon

log = logging.getLogger(__name__)

DEFAULT_TX_DUR_US = 50_000


class ScheduleConflict(RuntimeError):
    """A reservation would overlap another one sharing a vehicle."""


@dataclass(frozen=True, order=True)
class Reservation:
    start: int
    end: int
    tx: int
    rx: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"empty reservation {self}")
        if self.tx == self.rx:
            raise ValueError("tx and rx must differ")

    @property
    def duration(self) -> int:
        return self.end - self.start

    def involves(self, vid: int) -> bool:
        return vid == self.tx or vid == self.rx


class ReservationBook:
    """A vehicle's conflict-free view of mmWave reservations.

    Kept as per-vehicle sorted interval lists so that feasibility lookups only
    touch the two vehicles in question.
    """

    def __init__(self, owner: int):
        self.owner = owner
        self.known: set[Reservation] = set()
        self._busy: dict[int, list[tuple[int, int, Reservation]]] = {}

    def __contains__(self, res: Reservation) -> bool:
        return res in self.known

    def __len__(self):
        return len(self.known)

    def busy(self, vid: int) -> list[tuple[int, int, Reservation]]:
        return self._busy.get(vid, [])

    def clash(self, res: Reservation) -> Reservation | None:
        for vid in (res.tx, res.rx):
            lst = self.busy(vid)
            # per-vehicle lists are disjoint, so ends grow with starts and only
            # the last interval starting before res.end can reach past res.start
            k = bisect.bisect_left(lst, (res.end,))
            if k and lst[k - 1][1] > res.start and lst[k - 1][2] != res:
                return lst[k - 1][2]
        return None

    def add(self, res: Reservation) -> bool:
        """Insert ``res``; returns False if already known."""
        if res in self.known:
            return False
        other = self.clash(res)
        if other is not None:
            raise ScheduleConflict(f"book {self.owner}: {res} overlaps {other}")
        self.known.add(res)
        for vid in (res.tx, res.rx):
            bisect.insort(self._busy.setdefault(vid, []), (res.start, res.end, res))
        return True


def earliest_start(tx: int, rx: int, ref_time: int, dur: int, book: ReservationBook) -> int:
    """Smallest s >= ref_time with [s, s+dur) clear of every reservation of tx or rx."""
    spans = sorted(book.busy(tx) + book.busy(rx))
    s = ref_time
    for a, b, _ in spans:
        if b <= s:
            continue
        if a >= s + dur:
            break
        s = b
    return s


@dataclass(frozen=True)
class PendingRts:
    transmitter: int
    tx_dur: int
    received_at: int


@dataclass
class TxIntent:
    owner: int
    activated_at: int
    targets: list[tuple[int, int]] = field(default_factory=list)
    awaiting: set[int] = field(default_factory=set)
    announced_at: dict[int, int] = field(default_factory=dict)
    first_rts_at: int | None = None
    composed: bool = False
    closed: bool = False

    def durations(self) -> dict[int, int]:
        return dict(self.targets)


def on_become_transmitter(v: int, t: int, state: ScenarioState,
                          tx_dur: int = DEFAULT_TX_DUR_US) -> TxIntent:
    """Open a transmit intent for ``v``; targets are its current LOS neighbours.

    The driver refreshes the target list at the RTS beacon instant.
    """
    targets = [(u, tx_dur) for u in sorted(los_neighbors(v, state))]
    if not targets:
        log.debug("vehicle %d has no LOS neighbours at %d us", v, t)
    return TxIntent(owner=v, activated_at=t, targets=targets, awaiting={u for u, _ in targets})


def compose_cts(responder: int, beacon_time: int, pending: dict[int, PendingRts],
                book: ReservationBook, rts_queued: bool = False
                ) -> tuple[CtsExtension | None, list[Reservation]]:
    """Answer every pending RTS, oldest first, committing each into ``book``.

    A responder with its own RTS queued answers nothing and keeps ``pending``.
    Answered entries are removed from ``pending``.
    """
    if rts_queued or not pending:
        return None, []
    entries, reserved = [], []
    for p in sorted(pending.values(), key=lambda p: (p.received_at, p.transmitter)):
        s = earliest_start(p.transmitter, responder, beacon_time, p.tx_dur, book)
        res = Reservation(start=s, end=s + p.tx_dur, tx=p.transmitter, rx=responder)
        book.add(res)
        entries.append((p.transmitter, s - beacon_time))
        reserved.append(res)
    pending.clear()
    return CtsExtension(tuple(entries)), reserved


def on_receive_cts(transmitter: int, responder: int, cts: CtsExtension, cts_time: int,
                   intent: TxIntent, book: ReservationBook) -> set[Reservation]:
    """Commit the reservations a CTS grants to ``transmitter``."""
    out = set()
    durs = intent.durations()
    for tx, delay in cts.entries:
        if tx != transmitter:
            continue
        if responder not in intent.awaiting:
            log.info("stale CTS from %d to %d ignored", responder, transmitter)
            continue
        start = cts_time + delay
        res = Reservation(start=start, end=start + durs[responder], tx=transmitter, rx=responder)
        book.add(res)
        intent.awaiting.discard(responder)
        out.add(res)
    return out


def on_overhear(vehicle: int, beacon: Beacon, book: ReservationBook,
                rts_cache: dict[int, dict[int, int]],
                default_tx_dur: int = DEFAULT_TX_DUR_US) -> list[Reservation]:
    """Fold an overheard beacon into ``vehicle``'s cached RTS durations and book."""
    ext = beacon.extension
    if isinstance(ext, RtsExtension):
        rts_cache.setdefault(beacon.sender, {}).update(dict(ext.entries))
        return []
    added = []
    if isinstance(ext, CtsExtension):
        for tx, delay in ext.entries:
            dur = rts_cache.get(tx, {}).get(beacon.sender)
            if dur is None:
                log.info("vehicle %d: no cached RTS for %d->%d, assuming %d us",
                         vehicle, tx, beacon.sender, default_tx_dur)
                dur = default_tx_dur
            start = beacon.tx_time_us + delay
            res = Reservation(start=start, end=start + dur, tx=tx, rx=beacon.sender)
            if book.add(res):
                added.append(res)
    return added


@dataclass
class VehicleMac:
    vid: int
    book: ReservationBook
    pending: dict[int, PendingRts] = field(default_factory=dict)
    rts_cache: dict[int, dict[int, int]] = field(default_factory=dict)
    intent: TxIntent | None = None


@dataclass(frozen=True)
class Commit:
    """A reservation as committed by its transmitter, with handshake timing."""
    reservation: Reservation
    rts_time: int
    cts_time: int

    @property
    def delay(self) -> int:
        return self.reservation.start - self.cts_time


@dataclass
class BeaconOutcome:
    beacon: Beacon
    recipients: frozenset[int]
    commits: list[Commit]
    rts_closed: list[int] = field(default_factory=list)


class AssistedMac:
    """Per-vehicle protocol state driven by beacon and activation events."""

    name = "assisted"

    def __init__(self, vehicle_ids, sub6: Sub6Config = Sub6Config(),
                 tx_dur: int = DEFAULT_TX_DUR_US, default_tx_dur: int = DEFAULT_TX_DUR_US,
                 retransmit_periods: int = 2, expiry_periods: int = 10,
                 target_override: dict[int, list[int]] | None = None):
        self.sub6 = sub6
        self.tx_dur = tx_dur
        self.default_tx_dur = default_tx_dur
        self.retransmit_after = retransmit_periods * sub6.beacon_period_us
        self.expire_after = expiry_periods * sub6.beacon_period_us
        self.target_override = target_override or {}
        self.macs = {v: VehicleMac(v, ReservationBook(v)) for v in vehicle_ids}
        self.intents: dict[int, TxIntent] = {}

    def activate(self, v: int, t: int, state: ScenarioState) -> TxIntent:
        mac = self.macs[v]
        if mac.intent is not None and not mac.intent.closed:
            raise RuntimeError(f"vehicle {v} already holds an open intent")
        intent = on_become_transmitter(v, t, state, self.tx_dur)
        mac.intent = intent
        self.intents[v] = intent
        return intent

    def _targets(self, v: int, state: ScenarioState) -> list[tuple[int, int]]:
        if v in self.target_override:
            return [(u, self.tx_dur) for u in self.target_override[v]]
        return [(u, self.tx_dur) for u in sorted(los_neighbors(v, state))]

    def _rts_entries(self, intent: TxIntent, t: int, state: ScenarioState):
        if not intent.composed:
            intent.composed = True
            intent.targets = self._targets(intent.owner, state)
            intent.awaiting = {u for u, _ in intent.targets}
            if not intent.targets:
                intent.closed = True
                log.debug("transmitter %d: empty target set, no RTS", intent.owner)
                return []
            return list(intent.targets)
        if intent.closed or not intent.awaiting:
            return []
        if intent.first_rts_at is not None and t - intent.first_rts_at >= self.expire_after:
            log.info("transmitter %d: expiring unanswered targets %s", intent.owner,
                     sorted(intent.awaiting))
            intent.awaiting.clear()
            intent.closed = True
            return []
        durs = intent.durations()
        return [(u, durs[u]) for u in sorted(intent.awaiting)
                if t - intent.announced_at[u] >= self.retransmit_after]

    def on_beacon(self, v: int, t: int, state: ScenarioState) -> BeaconOutcome:
        mac = self.macs[v]
        ext = None
        intent = mac.intent
        rts = self._rts_entries(intent, t, state) if intent is not None else []
        if rts:
            ext = RtsExtension(tuple(rts))
            for u, _ in rts:
                intent.announced_at[u] = t
            mac.rts_cache.setdefault(v, {}).update(dict(rts))
            if intent.first_rts_at is None:
                intent.first_rts_at = t
        else:
            ext, _ = compose_cts(v, t, mac.pending, mac.book)
        beacon = make_beacon(state, v, t, ext)
        recipients = deliver_beacon(beacon, state)
        commits = []
        if ext is None:
            return BeaconOutcome(beacon, recipients, commits)
        for r in sorted(recipients):
            rmac = self.macs[r]
            on_overhear(r, beacon, rmac.book, rmac.rts_cache, self.default_tx_dur)
            if isinstance(ext, RtsExtension):
                for u, dur in ext.entries:
                    if u == r and v not in rmac.pending:
                        rmac.pending[v] = PendingRts(v, dur, t)
            elif isinstance(ext, CtsExtension) and rmac.intent is not None:
                for res in on_receive_cts(r, v, ext, t, rmac.intent, rmac.book):
                    commits.append(Commit(res, rmac.intent.announced_at[v], t))
        return BeaconOutcome(beacon, recipients, commits)

    def rts_queued(self, v: int) -> bool:
        intent = self.macs[v].intent
        return intent is not None and not intent.composed

    def idle(self) -> bool:
        """No intent is waiting on anything and no RTS is pending anywhere."""
        for intent in self.intents.values():
            if not intent.closed and (not intent.composed or intent.awaiting):
                return False
        return not any(m.pending for m in self.macs.values())
