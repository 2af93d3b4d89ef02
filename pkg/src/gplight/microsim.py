"""Deterministic 1-second point-queue traffic simulator.

Vehicles follow fixed lane routes. A vehicle entering a lane spends the lane's
free-flow time travelling to the stop line, then queues FIFO. Each green lane
discharges at most one vehicle per headway, and only into a downstream lane
with free space. Vehicles leave the network at the end of a boundary exit lane.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netgraph import (
    APPROACHES,
    EXIT_SIDE,
    MOVEMENTS,
    OPPOSITE,
    RIGHT_TURNS,
    TURNS,
    RoadGraph,
)

VEHICLE_LENGTH_M = 7.5
FREE_FLOW_SPEED_MS = 11.11
DISCHARGE_HEADWAY_S = 2
YELLOW_S = 5
OBS_SIZE = 4 + 12 + 12


class FlowError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass
class Lane:
    id: str
    length_m: float
    node: int
    kind: str  # "in" or "exit"
    movement: str
    capacity: int = 0
    free_flow_time_s: float = 0.0
    queue: deque = field(default_factory=deque)  # (vehicle id, entry time)
    next_slot: int = 0

    def __post_init__(self) -> None:
        self.capacity = max(1, int(math.floor(self.length_m / VEHICLE_LENGTH_M)))
        self.free_flow_time_s = self.length_m / FREE_FLOW_SPEED_MS


@dataclass
class Vehicle:
    id: int
    route: list[int]
    spawn_time_s: int
    enter_network_time_s: int | None = None
    exit_time_s: int | None = None
    pos: int = -1  # index into route; -1 while in the spawn backlog


@dataclass
class FlowSpec:
    route: list[str]
    interval_s: int
    start_s: int
    end_s: int
    surge_interval_s: int | None = None
    surge_start_s: int | None = None
    surge_end_s: int | None = None

    def __post_init__(self) -> None:
        if self.interval_s < 1:
            raise FlowError(f"interval_s must be >= 1, got {self.interval_s}")
        if self.start_s > self.end_s:
            raise FlowError(f"start_s {self.start_s} after end_s {self.end_s}")
        if not self.route:
            raise FlowError("empty route")
        surge = (self.surge_interval_s, self.surge_start_s, self.surge_end_s)
        if any(v is not None for v in surge):
            if any(v is None for v in surge):
                raise FlowError("surge needs interval, start and end")
            if self.surge_interval_s < 1 or self.surge_start_s > self.surge_end_s:
                raise FlowError("invalid surge window")

    @property
    def has_surge(self) -> bool:
        return self.surge_interval_s is not None

    def spawn_times(self) -> list[int]:
        base = range(self.start_s, self.end_s + 1, self.interval_s)
        if not self.has_surge:
            return list(base)
        lo, hi = self.surge_start_s, self.surge_end_s
        times = [t for t in base if t < lo or t > hi]
        times += range(max(lo, self.start_s), min(hi, self.end_s) + 1, self.surge_interval_s)
        return sorted(times)

    def to_dict(self) -> dict:
        d = {"route": list(self.route), "interval_s": self.interval_s, "start_s": self.start_s, "end_s": self.end_s}
        if self.has_surge:
            d.update(surge_interval_s=self.surge_interval_s, surge_start_s=self.surge_start_s, surge_end_s=self.surge_end_s)
        return d


@dataclass
class SignalState:
    intersection: int
    active_phase: int = 0
    green_remaining_s: int = 0
    yellow_remaining_s: int = 0
    pending_phase: int = 0
    pending_green_s: int = 0
    started: bool = False

    @property
    def awaiting(self) -> bool:
        return self.green_remaining_s == 0 and self.yellow_remaining_s == 0

    @property
    def green(self) -> bool:
        return self.green_remaining_s > 0

    def set_action(self, phase: int, green_s: int) -> int:
        """Schedule `phase` for `green_s` seconds; returns the yellow seconds inserted."""
        if not self.awaiting:
            raise SimulationError(f"signal {self.intersection} is busy")
        if not 0 <= phase < 4 or green_s < 1:
            raise SimulationError(f"invalid action phase={phase} green={green_s}")
        if self.started and phase != self.active_phase:
            self.yellow_remaining_s = YELLOW_S
            self.pending_phase, self.pending_green_s = phase, int(green_s)
            return YELLOW_S
        self.active_phase, self.green_remaining_s, self.started = phase, int(green_s), True
        return 0

    def tick(self) -> None:
        if self.yellow_remaining_s > 0:
            self.yellow_remaining_s -= 1
            if self.yellow_remaining_s == 0:
                self.active_phase, self.green_remaining_s = self.pending_phase, self.pending_green_s
                self.pending_green_s = 0
        elif self.green_remaining_s > 0:
            self.green_remaining_s -= 1


@dataclass
class MetricsRecord:
    throughput: int
    average_travel_time_s: float
    average_travel_time_inclusive_s: float
    empty: bool
    spawned: int
    cumulative_passed: list[int]

    def summary(self) -> dict:
        return {
            "throughput": self.throughput,
            "att_completed": round(self.average_travel_time_s, 6),
            "att_inclusive": round(self.average_travel_time_inclusive_s, 6),
        }


def compute_metrics(vehicles: list[Vehicle], now: int, cumulative_passed: list[int] | None = None) -> MetricsRecord:
    """Metrics as of `now`; the inclusive ATT adds in-network vehicles at their current sojourn."""
    done = [v.exit_time_s - v.spawn_time_s for v in vehicles if v.exit_time_s is not None and v.exit_time_s < now]
    live = [
        now - v.spawn_time_s
        for v in vehicles
        if v.enter_network_time_s is not None
        and v.enter_network_time_s < now
        and (v.exit_time_s is None or v.exit_time_s >= now)
    ]
    both = done + live
    return MetricsRecord(
        throughput=len(done),
        average_travel_time_s=float(np.mean(done)) if done else 0.0,
        average_travel_time_inclusive_s=float(np.mean(both)) if both else 0.0,
        empty=not done,
        spawned=sum(1 for v in vehicles if v.spawn_time_s < now),
        cumulative_passed=list(cumulative_passed or []),
    )


# -- flow files ---------------------------------------------------------------

def load_flows(source: str | Path | list | None, lane_ids: set[str] | None = None) -> list[FlowSpec]:
    """Read flow records from a path, JSON text or already-parsed list."""
    if source is None:
        return []
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip()[:1] in ("[", "{", "")):
        source = Path(source).read_text()
    if isinstance(source, str):
        if not source.strip():
            return []
        source = json.loads(source)
    if isinstance(source, dict):
        source = source.get("flows", [])
    flows = []
    for rec in source:
        try:
            spec = FlowSpec(
                route=[str(x) for x in rec["route"]],
                interval_s=int(rec["interval_s"]),
                start_s=int(rec["start_s"]),
                end_s=int(rec["end_s"]),
                surge_interval_s=rec.get("surge_interval_s"),
                surge_start_s=rec.get("surge_start_s"),
                surge_end_s=rec.get("surge_end_s"),
            )
        except KeyError as exc:
            raise FlowError(f"flow record missing {exc}") from None
        if lane_ids is not None:
            unknown = [x for x in spec.route if x not in lane_ids]
            if unknown:
                raise FlowError(f"route references unknown lanes {unknown}")
        flows.append(spec)
    return flows


def dump_flows(flows: list[FlowSpec]) -> str:
    return json.dumps([f.to_dict() for f in flows], indent=1)


# -- network layout -------------------------------------------------------------

class Network:
    """Lane table derived from a RoadGraph: incoming lanes plus boundary exit lanes."""

    def __init__(self, graph: RoadGraph):
        self.graph = graph
        self.lanes: list[Lane] = []
        self.lane_index: dict[str, int] = {}
        n = graph.n
        self.incoming = np.zeros((n, 12), dtype=int)
        for i, node in enumerate(graph.nodes):
            for d, spec in enumerate(node.incoming_by_movement()):
                self.incoming[i, d] = self._add(Lane(spec.id, spec.length_m, i, "in", spec.movement))
        # outgoing[i, 3*side + turn]: lanes leaving node i through `side`
        self.outgoing = np.zeros((n, 12), dtype=int)
        for i, node in enumerate(graph.nodes):
            for s, side in enumerate(APPROACHES):
                nb = graph.neighbors[i].get(side)
                for t, turn in enumerate(TURNS):
                    if nb is not None:
                        lane = self.incoming[nb, 3 * APPROACHES.index(OPPOSITE[side]) + t]
                    else:
                        length = node.lane_for(side + "S").length_m
                        lane = self._add(Lane(f"{node.id}_out_{side}_{turn}", length, i, "exit", side + turn))
                    self.outgoing[i, s * 3 + t] = lane
        self.exit_lanes = [k for k, ln in enumerate(self.lanes) if ln.kind == "exit"]
        self.capacity = np.array([ln.capacity for ln in self.lanes])
        # phase k at node i -> incoming movement indices
        self.phase_movements = [
            [tuple(MOVEMENTS.index(m) for m in ph) for ph in node.phases] for node in graph.nodes
        ]
        self.right_movements = tuple(MOVEMENTS.index(m) for m in RIGHT_TURNS)

    def _add(self, lane: Lane) -> int:
        if lane.id in self.lane_index:
            raise SimulationError(f"duplicate lane id {lane.id}")
        self.lane_index[lane.id] = len(self.lanes)
        self.lanes.append(lane)
        return len(self.lanes) - 1

    def exit_side_lanes(self, node: int, movement: int) -> np.ndarray:
        side = APPROACHES.index(EXIT_SIDE[MOVEMENTS[movement]])
        return self.outgoing[node, 3 * side : 3 * side + 3]

    def successors(self, lane_idx: int) -> list[int]:
        lane = self.lanes[lane_idx]
        if lane.kind == "exit":
            return []
        side = APPROACHES.index(EXIT_SIDE[lane.movement])
        turn_out = TURNS.index(lane.movement[1])
        out = self.outgoing[lane.node, 3 * side : 3 * side + 3]
        if self.lanes[out[0]].kind == "exit":
            return [int(out[turn_out])]
        return [int(x) for x in out]

    def validate_route(self, route: list[str]) -> list[int]:
        try:
            idx = [self.lane_index[x] for x in route]
        except KeyError as exc:
            raise FlowError(f"route references unknown lane {exc}") from None
        if self.lanes[idx[0]].kind != "in":
            raise FlowError(f"route must start on an incoming lane, got {route[0]}")
        if self.lanes[idx[-1]].kind != "exit":
            raise FlowError(f"route must end on a boundary exit lane, got {route[-1]}")
        for a, b in zip(idx, idx[1:]):
            if b not in self.successors(a):
                raise FlowError(f"route not connected: {self.lanes[a].id} -> {self.lanes[b].id}")
        first = self.lanes[idx[0]]
        side = first.movement[0]
        if side in self.graph.neighbors[first.node]:
            raise FlowError(f"route must enter from the network boundary, {first.id} is internal")
        return idx


# -- simulator ------------------------------------------------------------------

class Simulator:
    """One-second-step queue simulator over a Network.

    `step()` advances the clock by one second and returns that second's events as
    (step, event_type, vehicle, lane) tuples.
    """

    def __init__(
        self,
        graph: RoadGraph,
        flows: list[FlowSpec],
        seed: int = 0,
        spawn_jitter_s: int = 0,
        record_events: bool = True,
        headway_s: int = DISCHARGE_HEADWAY_S,
    ):
        self.net = Network(graph)
        self.graph = graph
        self.headway_s = headway_s
        self.lanes = self.net.lanes
        self.signals = [SignalState(i) for i in range(graph.n)]
        self.clock = 0
        self.vehicles: list[Vehicle] = []
        self.record_events = record_events
        self.events: list[tuple[int, str, int, str]] = []
        self.occ = np.zeros(len(self.lanes), dtype=np.int64)
        self.backlog: dict[int, deque] = {}
        self.backlog_count = 0
        self.in_network = 0
        self.completed = 0
        self.cumulative_passed: list[int] = []
        self._minute_max = np.zeros((graph.n, 12), dtype=np.int64)
        self._minute_steps = 0
        self.minute_history: list[np.ndarray] = []

        rng = np.random.default_rng(seed)
        schedule = []
        for f, flow in enumerate(flows):
            route = self.net.validate_route(flow.route)
            for t in flow.spawn_times():
                if spawn_jitter_s:
                    t = int(t + rng.integers(0, spawn_jitter_s + 1))
                schedule.append((t, f, route))
        schedule.sort(key=lambda s: (s[0], s[1]))
        self._schedule = schedule
        self._next_spawn = 0

    # -- accounting
    @property
    def spawned(self) -> int:
        return len(self.vehicles)

    def conservation_ok(self) -> bool:
        return self.spawned == self.backlog_count + self.in_network + self.completed

    def _log(self, kind: str, vid: int, lane: int) -> None:
        if self.record_events:
            self.events.append((self.clock, kind, vid, self.lanes[lane].id))

    def _enter(self, vid: int, lane: int) -> None:
        self.lanes[lane].queue.append((vid, self.clock))
        self.occ[lane] += 1
        self._log("enter", vid, lane)

    # -- dynamics
    def step(self) -> list[tuple[int, str, int, str]]:
        t = self.clock
        first_event = len(self.events)
        lanes = self.lanes

        # (1) spawn and admit from the backlog
        sched = self._schedule
        while self._next_spawn < len(sched) and sched[self._next_spawn][0] <= t:
            _, _, route = sched[self._next_spawn]
            self._next_spawn += 1
            vid = len(self.vehicles)
            self.vehicles.append(Vehicle(vid, route, t))
            self.backlog.setdefault(route[0], deque()).append(vid)
            self.backlog_count += 1
            self._log("spawn", vid, route[0])
        for lane_idx in sorted(self.backlog):
            waiting = self.backlog[lane_idx]
            while waiting and self.occ[lane_idx] < lanes[lane_idx].capacity:
                vid = waiting.popleft()
                v = self.vehicles[vid]
                v.pos, v.enter_network_time_s = 0, t
                self.backlog_count -= 1
                self.in_network += 1
                self._enter(vid, lane_idx)

        # (2) signalized discharge; right turns are unsignalized
        for i, sig in enumerate(self.signals):
            allowed = self.net.right_movements
            if sig.green:
                allowed = self.net.phase_movements[i][sig.active_phase] + allowed
            for d in allowed:
                self._discharge(int(self.net.incoming[i, d]), t)

        # (3) vehicles reaching the end of an exit lane leave
        for lane_idx in self.net.exit_lanes:
            lane = lanes[lane_idx]
            q = lane.queue
            while q and q[0][1] + lane.free_flow_time_s <= t:
                vid, _ = q.popleft()
                self.occ[lane_idx] -= 1
                self.vehicles[vid].exit_time_s = t
                self.in_network -= 1
                self.completed += 1
                self._log("exit", vid, lane_idx)

        # (4) signal timers, minute statistics, clock
        for sig in self.signals:
            sig.tick()
        np.maximum(self._minute_max, self.occ[self.net.incoming], out=self._minute_max)
        self._minute_steps += 1
        if self._minute_steps == 60:
            self.minute_history.append(self._minute_max.copy())
            self._minute_max[:] = 0
            self._minute_steps = 0
        self.cumulative_passed.append(self.completed)
        self.clock += 1
        return self.events[first_event:] if self.record_events else []

    def _discharge(self, lane_idx: int, t: int) -> None:
        lane = self.lanes[lane_idx]
        if not lane.queue or t < lane.next_slot:
            return
        vid, entered = lane.queue[0]
        if entered + lane.free_flow_time_s > t:
            return
        v = self.vehicles[vid]
        target = v.route[v.pos + 1]
        if self.occ[target] >= self.lanes[target].capacity:
            return
        lane.queue.popleft()
        self.occ[lane_idx] -= 1
        lane.next_slot = t + self.headway_s
        v.pos += 1
        self._enter(vid, target)

    def run(self, seconds: int) -> None:
        for _ in range(seconds):
            self.step()

    # -- observation
    def queue_length(self, lane_idx: int) -> int:
        """Vehicles that have reached the stop line."""
        lane = self.lanes[lane_idx]
        horizon = self.clock - lane.free_flow_time_s
        n = 0
        for _, entered in lane.queue:
            if entered > horizon:
                break
            n += 1
        return n

    def incoming_queues(self, node: int) -> np.ndarray:
        return np.array([self.queue_length(int(k)) for k in self.net.incoming[node]], dtype=float)

    def observe(self, node: int) -> np.ndarray:
        """Phase one-hot, 12 incoming queue lengths, 12 outgoing occupancies."""
        if not 0 <= node < self.graph.n:
            raise KeyError(node)
        obs = np.zeros(OBS_SIZE)
        obs[self.signals[node].active_phase] = 1.0
        obs[4:16] = self.incoming_queues(node)
        obs[16:28] = self.occ[self.net.outgoing[node]]
        return obs

    def movement_readings(self, node: int, obs: np.ndarray | None = None) -> list[tuple[float, float, float]]:
        """(N_in, N_out, N_max) for each of the 12 movements; N_out/N_max over the exit road."""
        obs = self.observe(node) if obs is None else obs
        out = []
        for d in range(12):
            side = APPROACHES.index(EXIT_SIDE[MOVEMENTS[d]])
            road = self.net.outgoing[node, 3 * side : 3 * side + 3]
            out.append((float(obs[4 + d]), float(obs[16 + 3 * side : 19 + 3 * side].sum()), float(self.net.capacity[road].sum())))
        return out

    def per_minute_lane_max(self) -> np.ndarray:
        """Max incoming-lane occupancy over the last completed minute, shape N x 12."""
        if self._minute_steps != 0 or not self.minute_history:
            raise SimulationError(f"minute incomplete: {self._minute_steps} s into minute {len(self.minute_history)}")
        return self.minute_history[-1]

    # -- metrics
    def metrics(self, at: int | None = None) -> MetricsRecord:
        now = self.clock if at is None else at
        return compute_metrics(self.vehicles, now, self.cumulative_passed[:now])

    def event_log_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerows(self.events)
        return buf.getvalue()
