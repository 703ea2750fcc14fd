"""Reference 802.11ad-style directional MAC.

Each transmitter runs its own unsynchronised cycle: a beacon header interval
(BHI) in which it discovers idle LOS neighbours, followed by a data
transmission interval (DTI) split into fixed slots, one per discovered
neighbour.  Nobody coordinates across transmitters, so a receiver can be
granted overlapping slots by two of them; the grant allocated first wins and
the loser retries in its next cycle.

By default a transmitter keeps cycling only for neighbours it has already
found (``rediscover=False``): one it never detected stays unscheduled, as a
PCP has no way of knowing it exists.  A vehicle running its own cycle is
deaf to everyone else's for the whole cycle (``pcp_exclusive``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .assisted import Reservation, ReservationBook
from .scenario import ScenarioState, los_neighbors, ring_distance
from .timebase import overlaps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdCycleConfig:
    bhi_us: int = 35_840
    dti_us: int = 250_000
    slot_us: int = 50_000
    max_neighbors: int = 5
    control_bytes_per_neighbor: int = 5800
    max_cycles: int = 20
    pcp_exclusive: bool = True   # a cycling transmitter is nobody's receiver
    rediscover: bool = False     # later cycles only retry neighbours already found

    def __post_init__(self):
        if self.max_neighbors * self.slot_us > self.dti_us:
            raise ValueError("max_neighbors slots do not fit in the DTI")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")

    @property
    def period_us(self) -> int:
        return self.bhi_us + self.dti_us

    @property
    def control_time_fraction(self) -> float:
        return self.bhi_us / self.period_us


@dataclass(frozen=True)
class Grant:
    tx: int
    rx: int
    start: int
    end: int
    bhi_end: int
    slot: int = 0
    cycle: int = 0

    def as_reservation(self) -> Reservation:
        return Reservation(start=self.start, end=self.end, tx=self.tx, rx=self.rx)


@dataclass
class AdTransmitterState:
    owner: int
    activated_at: int
    cycle_start: int
    cycle_index: int = 0
    targets: list[int] = field(default_factory=list)
    discovered: list[int] = field(default_factory=list)
    slot_map: dict[int, Grant | None] = field(default_factory=dict)
    unserved: list[int] = field(default_factory=list)  # failed grants, retried first
    served: set[int] = field(default_factory=set)
    known: set[int] = field(default_factory=set)
    los_at_bhi_start: frozenset[int] = frozenset()
    done: bool = False

    def bhi(self, cfg: AdCycleConfig) -> tuple[int, int]:
        return self.cycle_start, self.cycle_start + cfg.bhi_us

    def dti(self, cfg: AdCycleConfig) -> tuple[int, int]:
        return self.cycle_start + cfg.bhi_us, self.cycle_start + cfg.period_us

    def slot_window(self, k: int, cfg: AdCycleConfig) -> tuple[int, int]:
        s = self.cycle_start + cfg.bhi_us + k * cfg.slot_us
        return s, s + cfg.slot_us

    def remaining(self, rediscover: bool = True) -> list[int]:
        pool = self.targets if rediscover or not self.known else self.known
        return [u for u in self.targets if u in pool and u not in self.served]


def start_cycle(v: int, t: int, cfg: AdCycleConfig = AdCycleConfig(),
                prev: AdTransmitterState | None = None) -> AdTransmitterState:
    """Open a cycle for ``v`` at ``t``; ``prev`` carries targets and retries over."""
    if prev is None:
        return AdTransmitterState(owner=v, activated_at=t, cycle_start=t)
    return AdTransmitterState(owner=v, activated_at=prev.activated_at, cycle_start=t,
                              cycle_index=prev.cycle_index + 1, targets=prev.targets,
                              unserved=list(prev.unserved), served=prev.served,
                              known=prev.known)


class AdLedger:
    """Accepted links, BHI windows and whole-cycle windows, as known so far.

    With ``pcp_exclusive`` a vehicle running its own cycle can neither be
    discovered nor receive for the full span of that cycle.
    """

    def __init__(self, pcp_exclusive: bool = True):
        self.pcp_exclusive = pcp_exclusive
        self.links = ReservationBook(owner=-1)
        self.bhis: dict[int, list[tuple[int, int]]] = {}
        self.cycles: dict[int, list[tuple[int, int]]] = {}

    def add_cycle(self, v: int, window: tuple[int, int]) -> None:
        self.cycles.setdefault(v, []).append(window)

    def cycle_overlapping(self, v: int, s: int, e: int) -> tuple[int, int] | None:
        for a, b in self.cycles.get(v, ()):
            if overlaps(a, b, s, e):
                return a, b
        return None

    def add_bhi(self, v: int, window: tuple[int, int]) -> None:
        self.bhis.setdefault(v, []).append(window)

    def link_overlapping(self, v: int, s: int, e: int) -> Reservation | None:
        for a, b, res in self.links.busy(v):
            if a >= e:
                break
            if b > s:
                return res
        return None

    def bhi_overlapping(self, v: int, s: int, e: int) -> tuple[int, int] | None:
        for a, b in self.bhis.get(v, ()):
            if overlaps(a, b, s, e):
                return a, b
        return None


def discover(v: int, bhi: tuple[int, int], los_start: Iterable[int], los_end: Iterable[int],
             candidates: Iterable[int], ledger: AdLedger, distance: dict[int, float],
             max_neighbors: int = 5, carry: Iterable[int] = ()) -> list[int]:
    """Neighbours ``v`` detects during its BHI, retries first, then nearest first.

    A candidate is found iff it stays in LOS for the whole BHI, has no accepted
    link overlapping the BHI, and is not running its own overlapping BHI (or,
    under ``pcp_exclusive``, any overlapping cycle of its own).
    """
    s, e = bhi
    visible = set(los_start) & set(los_end)
    carry = list(carry)
    found = []
    for u in candidates:
        if u == v or u not in visible:
            continue
        if ledger.link_overlapping(u, s, e) is not None:
            continue
        if ledger.bhi_overlapping(u, s, e) is not None:
            continue
        if ledger.pcp_exclusive and ledger.cycle_overlapping(u, s, e) is not None:
            continue
        found.append(u)
    rank = {u: k for k, u in enumerate(carry)}
    found.sort(key=lambda u: (rank.get(u, len(rank)), distance[u], u))
    return found[:max_neighbors]


def allocate_slots(st: AdTransmitterState, cfg: AdCycleConfig = AdCycleConfig()) -> dict[int, Grant | None]:
    """Map discovered neighbours to consecutive DTI slots, carry-overs first."""
    retry = [u for u in st.unserved if u in st.discovered]
    order = retry + [u for u in st.discovered if u not in retry]
    bhi_end = st.cycle_start + cfg.bhi_us
    slots: dict[int, Grant | None] = {}
    for k in range(cfg.max_neighbors):
        if k < len(order):
            s, e = st.slot_window(k, cfg)
            slots[k] = Grant(tx=st.owner, rx=order[k], start=s, end=e, bhi_end=bhi_end,
                             slot=k, cycle=st.cycle_index)
        else:
            slots[k] = None
    st.slot_map = slots
    return slots


@dataclass(frozen=True)
class Rejection:
    grant: Grant
    reason: str  # "link", "bhi" or "pcp"
    blocker: object


@dataclass
class Resolution:
    accepted: list[Grant] = field(default_factory=list)
    rejected: list[Rejection] = field(default_factory=list)

    def per_receiver(self) -> dict[int, list[Grant]]:
        out: dict[int, list[Grant]] = {}
        for g in self.accepted:
            out.setdefault(g.rx, []).append(g)
        return out


ARBITRATION_KEYS = {
    "earliest-bhi": lambda g: (g.bhi_end, g.tx, g.start),
    "lowest-id": lambda g: (g.tx, g.bhi_end, g.start),
}


def resolve_grant_conflicts(grants: Iterable[Grant], ledger: AdLedger | None = None,
                            arbitration: str = "earliest-bhi") -> Resolution:
    """Accept grants in arbitration order unless they clash with an accepted link.

    A grant is also refused when its receiver runs a BHI during the slot, or
    under ``pcp_exclusive`` any cycle of its own.
    Accepted grants are written into ``ledger`` as links.
    """
    ledger = AdLedger() if ledger is None else ledger
    out = Resolution()
    for g in sorted(grants, key=ARBITRATION_KEYS[arbitration]):
        blocker = (ledger.link_overlapping(g.tx, g.start, g.end)
                   or ledger.link_overlapping(g.rx, g.start, g.end))
        if blocker is not None:
            out.rejected.append(Rejection(g, "link", blocker))
            continue
        window = ledger.bhi_overlapping(g.rx, g.start, g.end)
        if window is not None:
            out.rejected.append(Rejection(g, "bhi", window))
            continue
        if ledger.pcp_exclusive:
            window = ledger.cycle_overlapping(g.rx, g.start, g.end)
            if window is not None:
                out.rejected.append(Rejection(g, "pcp", window))
                continue
        ledger.links.add(g.as_reservation())
        out.accepted.append(g)
    return out


@dataclass
class CycleRecord:
    owner: int
    index: int
    bhi: tuple[int, int]
    discovered: list[int]
    accepted: list[Grant]
    rejected: list[Rejection]
    dti: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class AdMetrics:
    scheduled_ratio: dict[int, float]
    control_time_fraction: float
    control_bytes: dict[int, int]


class RefAdMac:
    """Cycle-driven reference MAC; the engine calls ``activate`` and ``on_bhi_end``."""

    name = "ref-ad"

    def __init__(self, cfg: AdCycleConfig = AdCycleConfig(), arbitration: str = "earliest-bhi"):
        self.cfg = cfg
        self.arbitration = arbitration
        self.ledger = AdLedger(cfg.pcp_exclusive)
        self.tx: dict[int, AdTransmitterState] = {}
        self.cycles: list[CycleRecord] = []

    def activate(self, v: int, t: int, state: ScenarioState) -> AdTransmitterState | None:
        st = start_cycle(v, t, self.cfg)
        st.targets = sorted(los_neighbors(v, state))
        self.tx[v] = st
        if not st.targets:
            st.done = True
            log.debug("transmitter %d has no LOS neighbours", v)
            return None
        self.ledger.add_bhi(v, st.bhi(self.cfg))
        self.ledger.add_cycle(v, (t, t + self.cfg.period_us))
        return st

    def on_bhi_start(self, v: int, state: ScenarioState) -> None:
        self.tx[v].los_at_bhi_start = los_neighbors(v, state)

    def on_bhi_end(self, v: int, state: ScenarioState) -> tuple[Resolution, AdTransmitterState | None]:
        """Discover, allocate and arbitrate; returns the next cycle if one is needed."""
        st = self.tx[v]
        cfg = self.cfg
        remaining = st.remaining(cfg.rediscover)
        me = state.vehicle(v)
        dist = {u: ring_distance(me, state.vehicle(u), state) for u in remaining}
        st.discovered = discover(v, st.bhi(cfg), st.los_at_bhi_start, los_neighbors(v, state),
                                 remaining, self.ledger, dist, cfg.max_neighbors, st.unserved)
        st.known.update(st.discovered)
        grants = [g for g in allocate_slots(st, cfg).values() if g is not None]
        res = resolve_grant_conflicts(grants, self.ledger, self.arbitration)
        for g in res.accepted:
            st.served.add(g.rx)
        lost = [r.grant.rx for r in res.rejected]
        st.unserved = lost + [u for u in st.unserved if u not in lost and u not in st.served]
        self.cycles.append(CycleRecord(v, st.cycle_index, st.bhi(cfg), list(st.discovered),
                                       res.accepted, res.rejected, st.dti(cfg)))
        if not st.remaining(cfg.rediscover) or st.cycle_index + 1 >= cfg.max_cycles:
            st.done = True
            return res, None
        nxt = start_cycle(v, st.cycle_start + cfg.period_us, cfg, prev=st)
        self.tx[v] = nxt
        self.ledger.add_bhi(v, nxt.bhi(cfg))
        self.ledger.add_cycle(v, (nxt.cycle_start, nxt.cycle_start + cfg.period_us))
        return res, nxt

    def conflicts(self) -> list[Rejection]:
        return [r for c in self.cycles for r in c.rejected]

    def idle(self) -> bool:
        return all(st.done for st in self.tx.values())


def ad_metrics_hooks(mac: RefAdMac) -> AdMetrics:
    ratio, cbytes = {}, {}
    for v, st in mac.tx.items():
        if not st.targets:
            continue
        served = len(st.served & set(st.targets))
        ratio[v] = served / len(st.targets)
        cbytes[v] = mac.cfg.control_bytes_per_neighbor * served
    return AdMetrics(ratio, mac.cfg.control_time_fraction, cbytes)
