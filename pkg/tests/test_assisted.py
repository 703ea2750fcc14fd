import pytest
from hypothesis import given, settings, strategies as st

from macsim.assisted import (AssistedMac, PendingRts, Reservation, ReservationBook,
                             ScheduleConflict, TxIntent, compose_cts, earliest_start,
                             on_overhear, on_receive_cts)
from macsim.engine import RunConfig, Simulator
from macsim.golden import A, B, D, E, F, golden_state
from macsim.scenario import ScenarioConfig, ScenarioState, VehicleState
from macsim.sub6 import Beacon, CtsExtension, RtsExtension

STATIC = ScenarioConfig(lane_speeds=(0.0,) * 4)


def test_reservation_validation():
    with pytest.raises(ValueError):
        Reservation(5, 5, 1, 2)
    with pytest.raises(ValueError):
        Reservation(0, 5, 1, 1)
    assert Reservation(0, 5, 1, 2).duration == 5


def test_book_rejects_overlap_and_ignores_duplicates():
    book = ReservationBook(0)
    r = Reservation(10, 20, 1, 2)
    assert book.add(r)
    assert not book.add(r)
    with pytest.raises(ScheduleConflict):
        book.add(Reservation(15, 25, 2, 3))
    assert book.add(Reservation(20, 30, 2, 3))  # touching is fine
    assert book.add(Reservation(10, 20, 3, 4))  # disjoint vehicles
    assert len(book) == 3


def test_earliest_start_examples():
    book = ReservationBook(0)
    book.add(Reservation(20, 70, A, B))
    book.add(Reservation(70, 120, A, E))
    assert earliest_start(A, F, 70, 50, book) == 120
    assert earliest_start(D, F, 70, 50, book) == 70
    assert earliest_start(B, E, 0, 20, book) == 0
    assert earliest_start(B, E, 0, 21, book) == 120  # no 21-wide hole in E∪B before 120


def _brute_start(tx, rx, ref, dur, reservations):
    s = ref
    while True:
        if all(not (r.start < s + dur and s < r.end) for r in reservations
               if r.tx in (tx, rx) or r.rx in (tx, rx)):
            return s
        s += 1


reservation_sets = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 120), st.integers(1, 30)),
    max_size=10)


@settings(max_examples=1000)
@given(reservation_sets, st.integers(0, 5), st.integers(0, 5), st.integers(0, 100),
       st.integers(1, 40))
def test_earliest_start_brute_force(raw, tx, rx, ref, dur):
    if tx == rx:
        rx = (tx + 1) % 6
    book = ReservationBook(0)
    for a, b, s, d in raw:
        if a == b:
            continue
        r = Reservation(s, s + d, a, b)
        if book.clash(r) is None:
            book.add(r)
    assert earliest_start(tx, rx, ref, dur, book) == _brute_start(tx, rx, ref, dur, book.known)


def test_compose_cts_oldest_first_and_commits():
    book = ReservationBook(F)
    pending = {D: PendingRts(D, 50_000, 50_000), A: PendingRts(A, 50_000, 10_000)}
    book.add(Reservation(20_000, 120_000, A, E))
    ext, res = compose_cts(F, 70_000, pending, book)
    assert ext.entries == ((A, 50_000), (D, 0))
    assert res == [Reservation(120_000, 170_000, A, F), Reservation(70_000, 120_000, D, F)]
    assert pending == {}


def test_compose_cts_deferred_by_own_rts():
    pending = {A: PendingRts(A, 50_000, 10_000)}
    ext, res = compose_cts(D, 50_000, pending, ReservationBook(D), rts_queued=True)
    assert ext is None and res == [] and A in pending


def test_receive_cts():
    intent = TxIntent(owner=A, activated_at=0, targets=[(B, 50_000), (E, 40_000)],
                      awaiting={B, E})
    book = ReservationBook(A)
    got = on_receive_cts(A, E, CtsExtension(((D, 0), (A, 30_000))), 40_000, intent, book)
    assert got == {Reservation(70_000, 110_000, A, E)}
    assert intent.awaiting == {B}
    # a repeat of the same grant is stale
    assert on_receive_cts(A, E, CtsExtension(((A, 30_000),)), 40_000, intent, book) == set()


def test_overhear_uses_cached_duration_then_default():
    book, cache = ReservationBook(9), {}
    on_overhear(9, Beacon(A, 10_000, extension=RtsExtension(((B, 40_000),))), book, cache)
    assert cache == {A: {B: 40_000}}
    got = on_overhear(9, Beacon(B, 20_000, extension=CtsExtension(((A, 0),))), book, cache)
    assert got == [Reservation(20_000, 60_000, A, B)]
    got = on_overhear(9, Beacon(E, 30_000, extension=CtsExtension(((D, 5_000),))), book, cache)
    assert got == [Reservation(35_000, 85_000, D, E)]


def test_rts_priority_in_golden_layout():
    state = golden_state(STATIC)
    mac = AssistedMac([v.id for v in state.vehicles], target_override={D: [F]})
    mac.activate(A, 0, state)
    out = mac.on_beacon(A, 10_000, state)
    assert out.beacon.kind == "rts"
    assert [u for u, _ in out.beacon.extension.entries] == [B, D, E, F]
    mac.activate(D, 50_000, state)
    assert mac.rts_queued(D)
    out = mac.on_beacon(D, 50_000, state)
    assert out.beacon.kind == "rts" and A in mac.macs[D].pending


def _far_target_run(expiry_periods=10):
    # target 1 sits out of sub-6GHz range, so nothing ever answers
    vs = [VehicleState(0, 0, 100.0, 0.0, 5.0, 2.0, True, 10_000),
          VehicleState(1, 0, 900.0, 0.0, 5.0, 2.0, False, 20_000)]
    state = ScenarioState(STATIC, 0, vs)
    cfg = RunConfig(scenario=STATIC, cbr_window_us=0)
    sim = Simulator(cfg, state, {0: 0}, target_override={0: [1]})
    sim.mac.expire_after = expiry_periods * 100_000
    sim.run()
    return sim


def test_retransmit_every_two_periods_then_expire():
    sim = _far_target_run()
    rts_times = [r.time_us for r in sim.ledger.beacons if r.extension_kind == "rts"]
    assert rts_times == [10_000, 210_000, 410_000, 610_000, 810_000]
    intent = sim.mac.intents[0]
    assert intent.closed and not intent.awaiting
    assert sim.ledger.reservations == []


def test_golden_fig2_reservations():
    from macsim.golden import fig2
    res = fig2()
    assert res.passed, res.diff()
    starts = {(e.reservation.tx, e.reservation.rx): e for e in res.ledger.reservations}
    # delays measured from each CTS: 0, 30 and 50 ms
    assert starts[(A, B)].delay == 0
    assert starts[(A, E)].delay == 30_000
    assert starts[(A, F)].delay == 50_000
