"""Ring-road highway scenario and the geometric queries built on it.

Vehicles are axis-aligned rectangles on a multi-lane ring road.  The x axis is
the longitudinal (wrapping) coordinate, y is lateral.  Antennas sit at the
2-D geometric centre of each vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid or infeasible simulator configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    road_length: float = 4000.0
    lane_count: int = 4
    lane_width: float = 3.5
    density: float = 125.0  # vehicles per km, all lanes together
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    lane_speeds: tuple[float, ...] = (33.0, 30.0, 27.0, 24.0)
    mmwave_los_range: float = 28.4
    sub6_range: float = 300.0
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "lane_speeds", tuple(float(s) for s in self.lane_speeds))
        if self.lane_count < 1:
            raise ConfigError("lane_count must be >= 1")
        if self.density <= 0:
            raise ConfigError("density must be > 0")
        for name in ("road_length", "lane_width", "vehicle_length", "vehicle_width",
                     "mmwave_los_range", "sub6_range"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.mmwave_los_range > self.sub6_range:
            raise ConfigError("mmwave_los_range must not exceed sub6_range")
        if len(self.lane_speeds) != self.lane_count:
            raise ConfigError(
                f"lane_speeds has {len(self.lane_speeds)} entries for {self.lane_count} lanes")
        if any(s < 0 for s in self.lane_speeds):
            raise ConfigError("lane speeds must be >= 0")

    @property
    def vehicle_count(self) -> int:
        return math.floor(self.density * self.road_length / 1000.0 + 1e-9)

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width


@dataclass(frozen=True)
class VehicleState:
    id: int
    lane: int
    longitudinal_pos: float
    speed: float
    length: float
    width: float
    is_mmwave_tx: bool = False
    beacon_phase_us: int = 0


class ScenarioState:
    """Snapshot of the road at ``time_us``.

    Positions live in a numpy array; ``VehicleState`` objects are only built
    on demand, which keeps per-event snapshots cheap.
    """

    def __init__(self, cfg: ScenarioConfig, time_us: int, vehicles, xs: np.ndarray | None = None,
                 _static: dict | None = None):
        self.cfg = cfg
        self.time_us = int(time_us)
        self._base = tuple(vehicles)
        if _static is None:
            ids = [v.id for v in self._base]
            if len(set(ids)) != len(ids):
                raise ConfigError("vehicle ids must be unique")
            _static = {
                "index": {v.id: i for i, v in enumerate(self._base)},
                "ids": np.array(ids, dtype=np.int64),
                "ys": np.array([cfg.lane_center(v.lane) for v in self._base], dtype=float),
                "speeds": np.array([v.speed for v in self._base], dtype=float),
                "half_lengths": np.array([v.length / 2 for v in self._base], dtype=float),
                "half_widths": np.array([v.width / 2 for v in self._base], dtype=float),
            }
        self._static = _static
        self.index: dict[int, int] = _static["index"]
        self.ids: np.ndarray = _static["ids"]
        self.ys: np.ndarray = _static["ys"]
        self.speeds: np.ndarray = _static["speeds"]
        self.half_lengths: np.ndarray = _static["half_lengths"]
        self.half_widths: np.ndarray = _static["half_widths"]
        self._xs = xs

    @cached_property
    def xs(self) -> np.ndarray:
        if self._xs is not None:
            return self._xs
        return np.array([v.longitudinal_pos for v in self._base], dtype=float)

    @cached_property
    def vehicles(self) -> tuple[VehicleState, ...]:
        if self._xs is None:
            return self._base
        return tuple(replace(v, longitudinal_pos=float(x)) for v, x in zip(self._base, self._xs))

    def vehicle(self, vid: int) -> VehicleState:
        i = self.index[vid]
        if self._xs is None:
            return self._base[i]
        return replace(self._base[i], longitudinal_pos=float(self._xs[i]))

    def transmitters(self) -> list[int]:
        return [v.id for v in self._base if v.is_mmwave_tx]

    def moved_to(self, time_us: int, xs: np.ndarray) -> "ScenarioState":
        return ScenarioState(self.cfg, time_us, self._base, xs, self._static)

    def with_config(self, cfg: ScenarioConfig) -> "ScenarioState":
        return ScenarioState(cfg, self.time_us, self.vehicles)

    def __eq__(self, other):
        if not isinstance(other, ScenarioState):
            return NotImplemented
        return (self.cfg == other.cfg and self.time_us == other.time_us
                and self.vehicles == other.vehicles)

    def __repr__(self):
        return f"ScenarioState(t={self.time_us} us, {len(self._base)} vehicles)"


def _wrap(dx, road_length: float):
    """Map longitudinal differences into [-L/2, L/2)."""
    return np.mod(np.asarray(dx) + road_length / 2, road_length) - road_length / 2


def ring_offsets(state: ScenarioState, vid: int) -> tuple[np.ndarray, np.ndarray]:
    """Relative (dx, dy) of every vehicle as seen from ``vid``, wrap-aware."""
    i = state.index[vid]
    dx = _wrap(state.xs - state.xs[i], state.cfg.road_length)
    dy = state.ys - state.ys[i]
    return dx, dy


def ring_distance(a: VehicleState, b: VehicleState, state: ScenarioState) -> float:
    cfg = state.cfg
    dx = float(_wrap(b.longitudinal_pos - a.longitudinal_pos, cfg.road_length))
    dy = cfg.lane_center(b.lane) - cfg.lane_center(a.lane)
    return math.hypot(dx, dy)


def segment_hits_rects(x1, y1, cx, cy, hx, hy) -> np.ndarray:
    """Closed intersection test of the segment (0,0)-(x1,y1) with rectangles.

    Liang-Barsky slab clipping, vectorised over rectangles given by centre
    (cx, cy) and half sizes (hx, hy).
    """
    cx = np.asarray(cx, dtype=float)
    t_lo = np.zeros_like(cx)
    t_hi = np.ones_like(cx)
    ok = np.ones(cx.shape, dtype=bool)
    for d, c, h in ((x1, cx, hx), (y1, np.asarray(cy, dtype=float), hy)):
        lo, hi = c - h, c + h
        if d == 0:
            ok &= (lo <= 0) & (0 <= hi)
        else:
            ta, tb = lo / d, hi / d
            t_lo = np.maximum(t_lo, np.minimum(ta, tb))
            t_hi = np.minimum(t_hi, np.maximum(ta, tb))
    return ok & (t_lo <= t_hi)


def _los_index(state: ScenarioState, i: int, j: int, dx=None, dy=None) -> bool:
    if dx is None:
        dx, dy = ring_offsets(state, int(state.ids[i]))
    x1, y1 = dx[j], dy[j]
    reach = abs(x1) + state.half_lengths.max() + 1e-9
    mask = np.abs(dx) <= reach
    mask[i] = False
    mask[j] = False
    if not mask.any():
        return True
    hits = segment_hits_rects(x1, y1, dx[mask], dy[mask],
                              state.half_lengths[mask], state.half_widths[mask])
    return not bool(hits.any())


def los(a: VehicleState, b: VehicleState, state: ScenarioState) -> bool:
    """True iff the centre-to-centre segment clears every other footprint."""
    if a.id == b.id:
        raise ValueError("los() needs two distinct vehicles")
    i, j = state.index[a.id], state.index[b.id]
    # evaluate from the lower id so the answer is exactly symmetric
    if a.id > b.id:
        i, j = j, i
    return _los_index(state, i, j)


def los_neighbors(v: VehicleState | int, state: ScenarioState) -> frozenset[int]:
    vid = v if isinstance(v, (int, np.integer)) else v.id
    i = state.index[vid]
    dx, dy = ring_offsets(state, vid)
    dist = np.hypot(dx, dy)
    cand = np.flatnonzero(dist <= state.cfg.mmwave_los_range)
    out = set()
    for j in cand:
        if j == i:
            continue
        uid = int(state.ids[j])
        if vid < uid:
            visible = _los_index(state, i, j, dx, dy)
        else:
            visible = _los_index(state, j, i)
        if visible:
            out.add(uid)
    return frozenset(out)


def sub6_neighbors(v: VehicleState | int, state: ScenarioState) -> frozenset[int]:
    vid = v if isinstance(v, (int, np.integer)) else v.id
    dx, dy = ring_offsets(state, vid)
    within = np.hypot(dx, dy) <= state.cfg.sub6_range
    within[state.index[vid]] = False
    return frozenset(int(u) for u in state.ids[within])


def in_sub6_range(a: VehicleState, b: VehicleState, state: ScenarioState) -> bool:
    if a.id == b.id:
        raise ValueError("in_sub6_range() needs two distinct vehicles")
    return ring_distance(a, b, state) <= state.cfg.sub6_range


def _hard_core_positions(n: int, length: float, gap: float, rng: np.random.Generator) -> np.ndarray:
    # n points on a circle with pairwise spacing >= gap, uniform over such
    # configurations: shrink every gap by `gap`, sample freely, re-expand.
    free = length - n * gap
    if free < 0:
        raise ConfigError(
            f"cannot place {n} vehicles with {gap} m spacing on a {length} m lane")
    base = np.sort(rng.uniform(0.0, free, n)) if n else np.empty(0)
    pos = base + gap * np.arange(n) + rng.uniform(0.0, length)
    return np.mod(pos, length)


def generate_scenario(cfg: ScenarioConfig, rng: np.random.Generator, r_tx: float = 0.0,
                      beacon_period_us: int = 100_000) -> ScenarioState:
    """Place vehicles on the ring, flag transmitters and draw beacon phases."""
    if not 0.0 <= r_tx <= 1.0:
        raise ConfigError("r_tx must lie in [0, 1]")
    n = cfg.vehicle_count
    per_lane = np.full(cfg.lane_count, n // cfg.lane_count)
    extra = rng.choice(cfg.lane_count, n % cfg.lane_count, replace=False)
    per_lane[extra] += 1
    # bumper-to-bumper gap of one vehicle length
    min_spacing = 2 * cfg.vehicle_length
    placed = []
    for lane in range(cfg.lane_count):
        for x in np.sort(_hard_core_positions(int(per_lane[lane]), cfg.road_length,
                                              min_spacing, rng)):
            placed.append((lane, float(x)))
    n_tx = math.floor(r_tx * n + 0.5)
    tx = np.zeros(n, dtype=bool)
    if n_tx:
        tx[rng.choice(n, n_tx, replace=False)] = True
    phases = rng.integers(0, beacon_period_us, n)
    vehicles = tuple(
        VehicleState(id=k, lane=lane, longitudinal_pos=x, speed=cfg.lane_speeds[lane],
                     length=cfg.vehicle_length, width=cfg.vehicle_width,
                     is_mmwave_tx=bool(tx[k]), beacon_phase_us=int(phases[k]))
        for k, (lane, x) in enumerate(placed)
    )
    return ScenarioState(cfg=cfg, time_us=0, vehicles=vehicles)


def step_mobility(state: ScenarioState, dt_us: int) -> ScenarioState:
    if dt_us <= 0:
        raise ValueError("dt must be > 0")
    xs = np.mod(state.xs + state.speeds * dt_us / 1e6, state.cfg.road_length)
    return state.moved_to(state.time_us + dt_us, xs)


def state_at(state: ScenarioState, t_us: int) -> ScenarioState:
    """Linear interpolation of ``state`` forward to ``t_us``."""
    if t_us == state.time_us:
        return state
    if t_us < state.time_us:
        raise ValueError("cannot move a scenario backwards in time")
    return step_mobility(state, t_us - state.time_us)


def mean_los_neighbors(state: ScenarioState) -> float:
    return float(np.mean([len(los_neighbors(v.id, state)) for v in state.vehicles]))


@dataclass
class Calibration:
    mmwave_los_range: float
    mean_neighbors: float
    iterations: int
    history: list[tuple[float, float]] = field(default_factory=list)


def los_pair_distances(state: ScenarioState, max_range: float) -> np.ndarray:
    """Distances of all LOS pairs (each counted once) no farther than ``max_range``."""
    out = []
    for i, vid in enumerate(state.ids):
        dx, dy = ring_offsets(state, int(vid))
        dist = np.hypot(dx, dy)
        for j in np.flatnonzero((dist <= max_range) & (state.ids > vid)):
            if _los_index(state, i, int(j), dx, dy):
                out.append(dist[j])
    return np.sort(np.asarray(out, dtype=float))


def calibrate_los_range(cfg: ScenarioConfig, target: float = 5.5, tol: float = 0.1,
                        seeds=range(10), lo: float = 10.0, hi: float | None = None,
                        max_iter: int = 40) -> Calibration:
    """Bisect ``mmwave_los_range`` until the mean LOS-neighbour count hits ``target``.

    The first probe is the configured range, so an already calibrated config
    exits after a single evaluation.  Blockage does not depend on the range,
    so LOS pair distances are computed once up to the bracket's upper end and
    every probe is a count.
    """
    hi = cfg.sub6_range if hi is None else hi
    states = [generate_scenario(cfg, np.random.default_rng(s)) for s in seeds]
    cache = {"reach": -1.0, "pairs": []}

    def mean_at(r: float) -> float:
        if r > cache["reach"]:
            cache["pairs"] = [los_pair_distances(st, r) for st in states]
            cache["reach"] = r
        return float(np.mean([2 * np.searchsorted(d, r, side="right") / len(st.ids)
                              for d, st in zip(cache["pairs"], states)]))

    history = []
    probe = cfg.mmwave_los_range
    for it in range(1, max_iter + 1):
        m = mean_at(probe)
        history.append((probe, m))
        if abs(m - target) <= tol:
            return Calibration(probe, m, it, history)
        if it == 1:
            if m > target:
                hi, m_hi = probe, m
                m_lo = mean_at(lo)
            else:
                lo, m_lo = probe, m
                m_hi = mean_at(hi)
            if not (m_lo <= target <= m_hi):
                raise ConfigError(
                    f"target {target} not bracketed: {m_lo:.2f} at {lo} m, {m_hi:.2f} at {hi} m")
        elif m < target:
            lo = probe
        else:
            hi = probe
        probe = round((lo + hi) / 2, 3)
    raise ConfigError(f"calibration did not converge; history={history}")
