"""Pinned six-vehicle traces for both MACs with their expected outcomes.

Vehicle C of the original layout is absent; ids follow letters (A=0, B=1,
D=3, E=4, F=5).  All vehicles are static, so geometry is fixed for the run.
"""
from __future__ import annotations

import difflib
import time
from dataclasses import dataclass, field

from .engine import GlobalLedger, RunConfig, Simulator
from .scenario import ScenarioConfig, ScenarioState, VehicleState
from .timebase import ms

A, B, D, E, F = 0, 1, 3, 4, 5
NAMES = {A: "A", B: "B", D: "D", E: "E", F: "F"}

# (lane, x metres)
LAYOUT = {A: (1, 100.0), B: (0, 106.0), D: (3, 104.0), E: (0, 122.0), F: (0, 80.0)}
PHASES_MS = {A: 10, B: 20, E: 40, D: 50, F: 70}

# tx, rx, start ms, end ms
FIG2_EXPECTED = (
    (A, B, 20, 70),
    (A, E, 70, 120),
    (D, F, 70, 120),
    (A, F, 120, 170),
    (A, D, 170, 220),
)
FIG3_DISCOVERED = {A: [B, F, E], D: [E, F]}
FIG3_CONFLICTS = ((D, F),)


def golden_state(cfg: ScenarioConfig | None = None) -> ScenarioState:
    cfg = ScenarioConfig(lane_speeds=(0.0,) * 4) if cfg is None else cfg
    vehicles = [VehicleState(id=v, lane=lane, longitudinal_pos=x, speed=0.0,
                             length=cfg.vehicle_length, width=cfg.vehicle_width,
                             is_mmwave_tx=v in (A, D), beacon_phase_us=ms(PHASES_MS[v]))
                for v, (lane, x) in sorted(LAYOUT.items())]
    return ScenarioState(cfg, 0, vehicles)


@dataclass
class GoldenResult:
    name: str
    passed: bool
    expected: list[str]
    actual: list[str]
    elapsed_s: float
    ledger: GlobalLedger = field(repr=False)

    def diff(self) -> str:
        return "\n".join(difflib.unified_diff(self.expected, self.actual, "expected", "actual",
                                              lineterm=""))


def _fmt_res(tx, rx, s, e) -> str:
    return f"{NAMES[tx]}->{NAMES[rx]} [{s:g}, {e:g}) ms"


def _run(mac: str, activations: dict[int, int], override=None) -> GlobalLedger:
    cfg = RunConfig(scenario=ScenarioConfig(lane_speeds=(0.0,) * 4), mac=mac, r_tx=0.0,
                    cbr_window_us=0)
    sim = Simulator(cfg, golden_state(cfg.scenario), activations, target_override=override)
    return sim.run()


def fig2() -> GoldenResult:
    t0 = time.perf_counter()
    ledger = _run("assisted", {A: 0, D: ms(50)}, override={D: [F]})
    actual = sorted(_fmt_res(r.tx, r.rx, r.start / 1000, r.end / 1000)
                    for r in (e.reservation for e in ledger.reservations))
    expected = sorted(_fmt_res(*row) for row in FIG2_EXPECTED)
    return GoldenResult("fig2", actual == expected, expected, actual,
                        time.perf_counter() - t0, ledger)


def fig3() -> GoldenResult:
    t0 = time.perf_counter()
    ledger = _run("ref-ad", {A: 0, D: ms(20)})
    first = {}
    for c in ledger.cycles:
        if c.index == 0:
            first[c.owner] = c.discovered
    conflicts = [(g.tx, g.rx) for g in ledger.failed_grants]
    actual = [f"{NAMES[v]} discovers {[NAMES[u] for u in first.get(v, [])]}"
              for v in sorted(FIG3_DISCOVERED)]
    actual += [f"conflict {NAMES[tx]}->{NAMES[rx]}" for tx, rx in conflicts]
    expected = [f"{NAMES[v]} discovers {[NAMES[u] for u in found]}"
                for v, found in sorted(FIG3_DISCOVERED.items())]
    expected += [f"conflict {NAMES[tx]}->{NAMES[rx]}" for tx, rx in FIG3_CONFLICTS]
    return GoldenResult("fig3", actual == expected, expected, actual,
                        time.perf_counter() - t0, ledger)


GOLDEN = {"fig2": fig2, "fig3": fig3}


def run_golden(name: str) -> GoldenResult:
    try:
        return GOLDEN[name]()
    except KeyError:
        raise ValueError(f"unknown golden trace {name!r}; choose from {sorted(GOLDEN)}") from None
