import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from macsim import metrics as M
from macsim.assisted import Reservation
from macsim.engine import GlobalLedger, LedgerEntry
from macsim.golden import A, B, D, E, F, fig2, fig3


def ledger(mac, links, targets, activations):
    led = GlobalLedger(mac)
    for tx, rx, s, e in links:
        led.commit(LedgerEntry(Reservation(s, e, tx, rx)))
    led.targets = targets
    led.activations = activations
    return led


intervals = st.lists(st.tuples(st.integers(-50, 300), st.integers(1, 120)), max_size=12)


@settings(max_examples=1000)
@given(intervals, st.integers(0, 100), st.integers(0, 200))
def test_concurrency_durations_conserve_window(raw, lo, width):
    spans = [(s, s + d) for s, d in raw]
    acc = M.concurrency_durations(spans, (lo, lo + width))
    assert acc.sum() == width
    assert np.all(acc >= 0)


@settings(max_examples=300)
@given(intervals, st.integers(0, 100), st.integers(1, 200))
def test_concurrency_matches_grid_count(raw, lo, width):
    spans = [(s, s + d) for s, d in raw]
    t = np.arange(lo, lo + width)
    level = np.zeros(width, dtype=int)
    for s, e in spans:
        level += (t >= s) & (t < e)
    want = np.bincount(np.minimum(level, 4), minlength=5)
    np.testing.assert_array_equal(M.concurrency_durations(spans, (lo, lo + width)), want)


def test_single_transmitter_has_no_sharing():
    led = ledger("assisted", [(1, 2, 0, 50), (1, 3, 50, 100)], {1: [2, 3]}, {1: 0})
    np.testing.assert_allclose(M.local_sharing_histogram(led), [0, 1, 0, 0, 0])


def test_one_overlapping_neighbour_gives_level_two():
    led = ledger("assisted", [(1, 2, 0, 100), (3, 4, 0, 100)], {1: [2, 3], 3: [4, 1]},
                 {1: 0, 3: 0})
    np.testing.assert_allclose(M.local_sharing_histogram(led), [0, 0, 1, 0, 0])


def test_local_histogram_ignores_distant_links():
    led = ledger("assisted", [(1, 2, 0, 100), (7, 8, 0, 100)], {1: [2], 7: [8]}, {1: 0, 7: 0})
    np.testing.assert_allclose(M.local_sharing_histogram(led), [0, 1, 0, 0, 0])
    np.testing.assert_allclose(M.global_sharing_histogram(led), [0, 0, 1, 0, 0])


def test_golden_fig2_local_histogram():
    # A sees one overlap for a quarter of its span, D never shares
    np.testing.assert_allclose(M.local_sharing_histogram(fig2().ledger),
                               [0, 0.875, 0.125, 0, 0])


def test_ratio_excludes_transmitters_without_targets():
    led = ledger("assisted", [(1, 2, 0, 50)], {1: [2, 3], 5: []}, {1: 0, 5: 0})
    assert M.scheduled_ratio(led) == {1: 0.5}


def test_ratio_on_golden_traces():
    assert M.scheduled_ratio(fig2().ledger) == {A: 1.0, D: 1.0}
    assert M.scheduled_ratio(fig3().ledger)[A] == pytest.approx(0.75)


def test_delay_to_nth_from_activation():
    led = ledger("assisted", [(1, 2, 30, 80), (1, 3, 80, 130), (4, 5, 10, 60)],
                 {1: [2, 3], 4: [5]}, {1: 10, 4: 0})
    d = M.delay_to_nth(led)
    assert sorted(d[1]) == [10, 20] and d[2] == [70] and d[3] == []


def test_golden_delays_increase_with_n():
    d = M.delay_to_nth(fig2().ledger)
    # A commits first, so its sample leads each list
    assert [d[n][0] for n in (1, 2, 3, 4)] == [20_000, 70_000, 120_000, 170_000]
    assert d[5] == []


def test_golden_assisted_overhead():
    # A's round: four 8-byte RTS entries plus four 8-byte CTS entries
    led = fig2().ledger
    assert led.rts_bytes[A] + led.cts_bytes[A] == 64
    oh = M.overhead_report(led)
    assert oh["round_bytes_mean"] == (64 + 16) / 2
    assert oh["per_neighbor_bytes"] == 80 / 5
    assert oh["reduction_per_neighbor"] == pytest.approx(1 - 16 / 5800)


def test_reference_overhead_has_no_self_reduction():
    oh = M.overhead_report(fig3().ledger)
    assert oh["per_neighbor_bytes"] == 5800
    assert math.isnan(oh["reduction_per_neighbor"]) and math.isnan(oh["reduction_vs_link"])


@settings(max_examples=200)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=40))
def test_margin_matches_scipy_interval(xs):
    a = np.asarray(xs)
    if a.std(ddof=1) == 0:
        assert M.margin(xs) == 0.0
        return
    lo, hi = stats.t.interval(0.95, a.size - 1, loc=a.mean(), scale=stats.sem(a))
    assert M.margin(xs) == pytest.approx((hi - lo) / 2, rel=1e-9)


def test_margin_needs_two_samples():
    assert M.margin([1.0]) == math.inf
    assert M.margin([1.0, math.nan]) == math.inf


def test_ci_met():
    rows = [{"scheduled_ratio": 0.5, "delay_1_mean": 10.0}] * 3
    assert M.ci_met(rows, 0.01)
    rows = [{"scheduled_ratio": x, "delay_1_mean": 10.0} for x in (0.1, 0.9, 0.5)]
    assert not M.ci_met(rows, 0.05)


def test_summarize_empty_and_percentiles():
    assert M.summarize([])["count"] == 0
    s = M.summarize(list(range(11)))
    assert (s["mean"], s["p10"], s["p90"]) == (5.0, 1.0, 9.0)


def test_write_rows_csv_drops_private_keys(tmp_path):
    path = tmp_path / "r.csv"
    M.write_rows_csv([{"a": 1, "_x": [1]}, {"a": 2, "b": 3}], path)
    assert path.read_text().splitlines() == ["a,b", "1,", "2,3"]
