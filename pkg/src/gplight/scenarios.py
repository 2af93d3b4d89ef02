"""Synthetic road networks and flows for the single, grid16 and grid48 scenarios."""
from __future__ import annotations

import numpy as np

from .microsim import FlowSpec
from .netgraph import APPROACHES, EXIT_SIDE, MOVEMENTS, OPPOSITE, SIDE_VECTOR, standard_intersection

SCENARIOS = ("single", "grid16", "grid48")
SURGE_START_S, SURGE_END_S = 900, 2700


def _grid(rows: int, cols: int, dx: float, dy: float) -> dict:
    nodes, links = [], []
    lengths = {"E": dx, "W": dx, "N": dy, "S": dy}
    for r in range(rows):
        for c in range(cols):
            nodes.append(standard_intersection(f"n{r}_{c}", c * dx, r * dy, lengths))
    for r in range(rows):
        for c in range(cols):
            here = f"n{r}_{c}"
            if c + 1 < cols:
                links += [{"from": here, "to": f"n{r}_{c + 1}"}, {"from": f"n{r}_{c + 1}", "to": here}]
            if r + 1 < rows:
                links += [{"from": here, "to": f"n{r + 1}_{c}"}, {"from": f"n{r + 1}_{c}", "to": here}]
    return {"intersections": nodes, "links": links}


def _trace(roadnet: dict, start: str, approach: str, turns: list[str]) -> list[str] | None:
    """Lane ids for a vehicle entering `start` on `approach` and turning as listed.

    Straight is used once `turns` runs out; returns None if a turn would leave
    the network before the list is consumed.
    """
    pos = {n["id"]: (n["x"], n["y"]) for n in roadnet["intersections"]}
    at = {v: k for k, v in pos.items()}
    node, route, k = start, [], 0
    while True:
        turn = turns[k] if k < len(turns) else "S"
        route.append(f"{node}_{approach}_{turn}")
        side = EXIT_SIDE[approach + turn]
        vx, vy = SIDE_VECTOR[side]
        x, y = pos[node]
        step = _spacing(roadnet, side)
        nxt = at.get((x + vx * step, y + vy * step))
        k += 1
        if nxt is None:
            if k < len(turns):
                return None
            route.append(f"{node}_out_{side}_{turn}")
            return route
        node, approach = nxt, OPPOSITE[side]


def _spacing(roadnet: dict, side: str) -> float:
    lane = roadnet["intersections"][0]["lanes"][3 * APPROACHES.index(side) + 1]
    return lane["length_m"]


def single() -> tuple[dict, list[FlowSpec]]:
    roadnet = {"intersections": [standard_intersection("n0", 0.0, 0.0, dict.fromkeys(APPROACHES, 300.0))], "links": []}
    flows = []
    for m in MOVEMENTS:
        approach, turn = m
        route = [f"n0_{approach}_{turn}", f"n0_out_{EXIT_SIDE[m]}_{turn}"]
        spec = FlowSpec(route, interval_s=20, start_s=0, end_s=3600)
        if m in ("WS", "ES"):
            spec = FlowSpec(route, 20, 0, 3600, surge_interval_s=1, surge_start_s=SURGE_START_S, surge_end_s=SURGE_END_S)
        flows.append(spec)
    return roadnet, flows


def grid_flows(roadnet: dict, seed: int = 0, surge: bool = False, interval_range=(20, 60)) -> list[FlowSpec]:
    """One straight-through flow per boundary entry plus one-turn variants.

    Intervals are drawn with a fixed seed; with `surge`, every west-to-east and
    east-to-west straight flow runs at 1 s between 900 s and 2700 s.
    """
    rng = np.random.default_rng(seed)
    nodes = roadnet["intersections"]
    pos = {n["id"]: (n["x"], n["y"]) for n in nodes}
    occupied = set(pos.values())
    flows = []
    for node in nodes:
        x, y = pos[node["id"]]
        for approach in APPROACHES:
            # entry approach is on the boundary when there is no node on that side
            vx, vy = SIDE_VECTOR[approach]
            if (x + vx * _spacing(roadnet, approach), y + vy * _spacing(roadnet, approach)) in occupied:
                continue
            for turns in (["S"], ["L"], ["R"], ["S", "L"], ["S", "R"]):
                route = _trace(roadnet, node["id"], approach, turns)
                if route is None:
                    continue
                straight = turns == ["S"]
                lo, hi = interval_range
                interval = int(rng.integers(lo, hi + 1)) if straight else int(rng.integers(2 * lo, 2 * hi + 1))
                spec = FlowSpec(route, interval, 0, 3600)
                if surge and straight and approach in ("W", "E"):
                    spec = FlowSpec(route, interval, 0, 3600, surge_interval_s=1, surge_start_s=SURGE_START_S, surge_end_s=SURGE_END_S)
                flows.append(spec)
    return flows


def generate_scenario(name: str, seed: int = 0, surge: bool = False) -> tuple[dict, list[FlowSpec]]:
    if name == "single":
        return single()
    if name == "grid16":
        roadnet = _grid(4, 4, 300.0, 300.0)
    elif name == "grid48":
        roadnet = _grid(3, 16, 350.0, 100.0)
    else:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return roadnet, grid_flows(roadnet, seed=seed, surge=surge)

