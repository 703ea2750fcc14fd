import json
from dataclasses import replace

import numpy as np
import pytest

from macsim.assisted import Reservation
from macsim.engine import (KIND_RANK, EventLog, EventQueue, GlobalLedger, InvariantViolation,
                           LedgerEntry, RunConfig, Simulator, activate_transmitters, replicate,
                           replication_seeds, run)
from macsim.scenario import ConfigError, ScenarioConfig, generate_scenario

SMALL = ScenarioConfig(road_length=200.0, lane_count=2, lane_speeds=(30.0, 25.0), density=30.0,
                       mmwave_los_range=40.0)


def small(mac="assisted", **kw):
    return RunConfig(scenario=SMALL, mac=mac, r_tx=0.5, cbr_window_us=0, **kw)


def test_same_time_events_follow_kind_rank_then_subject():
    q = EventQueue()
    kinds = list(KIND_RANK)
    for k in reversed(kinds):
        q.push(500, k, 3)
        q.push(500, k, 1)
    q.push(499, "beacon-tx", 9)
    order = [(e.time, e.kind, e.subject) for e in (q.pop() for _ in range(len(q)))]
    assert order[0] == (499, "beacon-tx", 9)
    assert [k for _, k, _ in order[1::2]] == kinds
    assert all(order[i][2] == 1 and order[i + 1][2] == 3 for i in range(1, len(order), 2))


def test_insertion_order_breaks_remaining_ties():
    q = EventQueue()
    q.push(0, "beacon-tx", 2, tag="first")
    q.push(0, "beacon-tx", 2, tag="second")
    assert [q.pop().payload["tag"] for _ in range(2)] == ["first", "second"]


def test_event_log_cap():
    log = EventLog(max_events=3)
    for t in range(5):
        log.add(t, "beacon-tx", 0, n=t)
    assert len(log.records) == 3 and log.dropped == 2
    assert [json.loads(l)["n"] for l in log.dumps().splitlines()] == [0, 1, 2]
    assert log.tail(1) == [{"time_us": 2, "kind": "beacon-tx", "subject": 0, "n": 2}]


def test_ledger_rejects_half_duplex_clash():
    led = GlobalLedger("assisted")
    led.commit(LedgerEntry(Reservation(0, 50, 1, 2)))
    with pytest.raises(Exception):
        led.commit(LedgerEntry(Reservation(25, 75, 2, 3)))
    led.commit(LedgerEntry(Reservation(50, 100, 2, 3)))
    assert len(led.reservations) == 2


def test_simulator_wraps_clash_as_invariant_violation():
    state = generate_scenario(SMALL, np.random.default_rng(0), r_tx=0.0)
    sim = Simulator(small(), state, {})
    sim.ledger.commit(LedgerEntry(Reservation(0, 50, 1, 2)))
    with pytest.raises(InvariantViolation) as exc:
        sim._commit(LedgerEntry(Reservation(10, 60, 3, 2)), 10)
    assert "half-duplex" in str(exc.value)


def test_run_config_validation():
    for kw in (dict(mac="csma"), dict(r_tx=1.5), dict(replications=0), dict(sim_duration_us=0),
               dict(tx_activation="burst")):
        with pytest.raises(ConfigError):
            RunConfig(**kw)


@pytest.mark.parametrize("policy", ["uniform", "all-at-zero", "poisson"])
def test_activation_policies(policy):
    state = generate_scenario(SMALL, np.random.default_rng(2), r_tx=0.5)
    acts = activate_transmitters(state, policy, np.random.default_rng(0))
    assert sorted(acts) == state.transmitters()
    assert all(isinstance(t, int) and t >= 0 for t in acts.values())
    if policy == "uniform":
        assert max(acts.values()) < 100_000
    if policy == "all-at-zero":
        assert set(acts.values()) == {0}


@pytest.mark.parametrize("mac", ["assisted", "ref-ad"])
def test_replication_is_deterministic(mac):
    a, b = replicate(small(mac), 11), replicate(small(mac), 11)
    assert a.log.dumps() == b.log.dumps()
    assert a.ledger.reservation_rows() == b.ledger.reservation_rows()


@pytest.mark.parametrize("mac", ["assisted", "ref-ad"])
def test_committed_reservations_are_half_duplex(mac):
    for seed in range(5):
        rep = replicate(small(mac), seed)
        rs = [e.reservation for e in rep.ledger.reservations]
        for i, x in enumerate(rs):
            for y in rs[i + 1:]:
                if {x.tx, x.rx} & {y.tx, y.rx}:
                    assert x.end <= y.start or y.end <= x.start


def test_reservations_start_after_activation():
    rep = replicate(small(), 3)
    for e in rep.ledger.reservations:
        assert e.reservation.start >= rep.ledger.activations[e.reservation.tx]


def test_replication_seeds_prefix_stable():
    cfg = small()
    assert replication_seeds(cfg, 3) == replication_seeds(cfg, 8)[:3]
    assert replication_seeds(cfg, 3) != replication_seeds(replace(cfg, seed=2), 3)


def test_run_stops_at_min_replications_when_ci_met():
    res = run(small(replications=12, min_replications=4, target_ci=10.0))
    assert len(res.rows) == 4
    assert [r["replication"] for r in res.rows] == [0, 1, 2, 3]


def test_run_exhausts_budget_when_ci_unreachable():
    res = run(small(replications=5, min_replications=2, target_ci=0.0))
    assert len(res.rows) == 5


def test_sim_duration_bounds_time():
    rep = replicate(small(sim_duration_us=150_000, stop_when_idle=False), 1)
    assert rep.ledger.end_time < 150_000
