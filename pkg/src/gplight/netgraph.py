"""Road-network graph: intersections, lane geometry, weighted adjacency and Laplacians.

Every intersection has four approaches (E/W/S/N), each split into left, straight
and right incoming lanes. A vehicle on the west approach travels eastward, so its
straight movement leaves through the east side.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

log = logging.getLogger(__name__)

APPROACHES = ("E", "W", "S", "N")
TURNS = ("L", "S", "R")
# movement index d = 3 * approach_index + turn_index, matching the 12 lane features
MOVEMENTS = tuple(a + t for a in APPROACHES for t in TURNS)

OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}
# side through which a movement leaves the intersection
EXIT_SIDE = {
    "WS": "E", "WL": "N", "WR": "S",
    "ES": "W", "EL": "S", "ER": "N",
    "NS": "S", "NL": "E", "NR": "W",
    "SS": "N", "SL": "W", "SR": "E",
}
SIDE_VECTOR = {"E": (1.0, 0.0), "W": (-1.0, 0.0), "N": (0.0, 1.0), "S": (0.0, -1.0)}

# Signalized pairs that never cross: opposing straights, opposing lefts, and the
# straight+left of one approach. Right turns are unsignalized.
COMPATIBLE_PAIRS = frozenset(
    frozenset(p)
    for p in [
        ("WS", "ES"), ("NS", "SS"), ("WL", "EL"), ("NL", "SL"),
        ("WS", "WL"), ("ES", "EL"), ("NS", "NL"), ("SS", "SL"),
    ]
)
STANDARD_PHASES = (("WS", "ES"), ("NS", "SS"), ("WL", "EL"), ("NL", "SL"))
RIGHT_TURNS = ("ER", "WR", "SR", "NR")

_INTERSECTION_KEYS = {"id", "x", "y", "lanes", "phases"}
_LANE_KEYS = {"id", "length_m", "approach", "turn"}
_TOP_KEYS = {"intersections", "links"}
_LINK_KEYS = {"from", "to"}


class RoadnetError(ValueError):
    """Raised for malformed or inconsistent road networks."""


@dataclass(frozen=True)
class LaneSpec:
    id: str
    length_m: float
    approach: str
    turn: str

    @property
    def movement(self) -> str:
        return self.approach + self.turn


@dataclass
class IntersectionSpec:
    id: str
    x: float
    y: float
    lanes: list[LaneSpec]
    phases: list[tuple[str, str]]

    def lane_for(self, movement: str) -> LaneSpec:
        for lane in self.lanes:
            if lane.movement == movement:
                return lane
        raise KeyError(movement)

    def incoming_by_movement(self) -> list[LaneSpec]:
        """Incoming lanes ordered by the canonical movement index."""
        return [self.lane_for(m) for m in MOVEMENTS]


@dataclass
class RoadGraph:
    nodes: list[IntersectionSpec]
    edges: np.ndarray  # N x N, 0/1
    weights: np.ndarray  # N x N
    positions: np.ndarray  # N x 2, meters
    # neighbors[i][side] -> node index reachable by leaving node i through `side`
    neighbors: list[dict[str, int]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self, node_id: str) -> int:
        for i, node in enumerate(self.nodes):
            if node.id == node_id:
                return i
        raise KeyError(node_id)

    def adjacent(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.edges[i])]

    def graph_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.n).encode())
        h.update(np.ascontiguousarray(np.round(self.weights, 12), dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Laplacian:
    L: np.ndarray
    lambda_max: float
    L_scaled: np.ndarray


def _warn_unknown(obj: dict, allowed: set[str], where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        log.warning("ignoring unknown fields in %s: %s", where, ", ".join(extra))


def check_phases(phases: list[tuple[str, str]], where: str = "") -> None:
    if len(phases) != 4:
        raise RoadnetError(f"{where}: expected exactly 4 phases, got {len(phases)}")
    for pair in phases:
        if len(pair) != 2:
            raise RoadnetError(f"{where}: phase {pair!r} must pair two movements")
        a, b = pair
        for m in pair:
            if m not in EXIT_SIDE:
                raise RoadnetError(f"{where}: unknown movement {m!r}")
            if m in RIGHT_TURNS:
                raise RoadnetError(f"{where}: right turn {m} is unsignalized and cannot be in a phase")
        if frozenset(pair) not in COMPATIBLE_PAIRS:
            raise RoadnetError(f"{where}: phase {a}+{b} has conflicting movements")


def _parse_intersection(raw: dict) -> IntersectionSpec:
    if not isinstance(raw, dict):
        raise RoadnetError(f"intersection entry must be an object, got {type(raw).__name__}")
    missing = _INTERSECTION_KEYS - set(raw)
    if missing:
        raise RoadnetError(f"intersection missing fields: {sorted(missing)}")
    _warn_unknown(raw, _INTERSECTION_KEYS, f"intersection {raw.get('id')}")
    lanes = []
    for lr in raw["lanes"]:
        missing = _LANE_KEYS - set(lr)
        if missing:
            raise RoadnetError(f"lane in {raw['id']} missing fields: {sorted(missing)}")
        _warn_unknown(lr, _LANE_KEYS, f"lane {lr.get('id')}")
        lane = LaneSpec(str(lr["id"]), float(lr["length_m"]), str(lr["approach"]), str(lr["turn"]))
        if lane.approach not in APPROACHES or lane.turn not in TURNS:
            raise RoadnetError(f"lane {lane.id}: bad approach/turn {lane.approach}/{lane.turn}")
        if lane.length_m < 7.5:
            raise RoadnetError(f"lane {lane.id}: length {lane.length_m} m holds no vehicle")
        lanes.append(lane)
    movements = [ln.movement for ln in lanes]
    if sorted(movements) != sorted(MOVEMENTS):
        raise RoadnetError(f"intersection {raw['id']}: need one incoming lane per movement, got {movements}")
    phases = [tuple(p) for p in raw["phases"]]
    check_phases(phases, f"intersection {raw['id']}")
    return IntersectionSpec(str(raw["id"]), float(raw["x"]), float(raw["y"]), lanes, phases)


def _side_between(p: np.ndarray, q: np.ndarray) -> str:
    dx, dy = q - p
    if abs(dy) < 1e-9 and abs(dx) > 0:
        return "E" if dx > 0 else "W"
    if abs(dx) < 1e-9 and abs(dy) > 0:
        return "N" if dy > 0 else "S"
    raise RoadnetError(f"link between {tuple(p)} and {tuple(q)} is not axis-aligned")


def build_graph(roadnet: dict | str | Path, sigma: float | None = None, cutoff: float = math.inf) -> RoadGraph:
    """Parse roadnet content (dict, JSON text or path) into a validated RoadGraph."""
    if isinstance(roadnet, Path) or (isinstance(roadnet, str) and not roadnet.lstrip().startswith("{")):
        roadnet = json.loads(Path(roadnet).read_text())
    elif isinstance(roadnet, str):
        roadnet = json.loads(roadnet)
    if not isinstance(roadnet, dict) or "intersections" not in roadnet:
        raise RoadnetError("roadnet must be an object with an 'intersections' list")
    _warn_unknown(roadnet, _TOP_KEYS, "roadnet")

    nodes = [_parse_intersection(r) for r in roadnet["intersections"]]
    if not nodes:
        raise RoadnetError("roadnet has no intersections")
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise RoadnetError("duplicate intersection ids")
    lane_ids = [ln.id for n in nodes for ln in n.lanes]
    if len(set(lane_ids)) != len(lane_ids):
        raise RoadnetError("duplicate lane ids")
    index = {nid: i for i, nid in enumerate(ids)}
    n = len(nodes)
    positions = np.array([[nd.x, nd.y] for nd in nodes], dtype=float)

    edges = np.zeros((n, n), dtype=np.int8)
    neighbors: list[dict[str, int]] = [{} for _ in range(n)]
    for link in roadnet.get("links", []):
        _warn_unknown(link, _LINK_KEYS, "link")
        try:
            a, b = index[link["from"]], index[link["to"]]
        except KeyError as exc:
            raise RoadnetError(f"link references unknown intersection {exc}") from None
        if a == b:
            raise RoadnetError(f"self-link at {ids[a]}")
        side = _side_between(positions[a], positions[b])
        if neighbors[a].get(side, b) != b:
            raise RoadnetError(f"{ids[a]} has two neighbors on side {side}")
        neighbors[a][side] = b
        neighbors[b][OPPOSITE[side]] = a
        edges[a, b] = edges[b, a] = 1

    if n > 1:
        lonely = [ids[i] for i in range(n) if not edges[i].any()]
        if lonely:
            raise RoadnetError(f"disconnected intersections: {lonely}")

    graph = RoadGraph(nodes, edges, np.zeros((n, n)), positions, neighbors)
    if n > 1:
        if sigma is None:
            dists = [np.linalg.norm(positions[i] - positions[j]) for i, j in zip(*np.nonzero(np.triu(edges)))]
            sigma = float(np.median(dists))
        graph.weights = edge_weights(graph, sigma, cutoff)
    return graph


def edge_weights(graph: RoadGraph, sigma: float, cutoff: float = math.inf) -> np.ndarray:
    """Gaussian kernel of node distance, kept only on connected pairs within `cutoff`."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = graph.positions[:, None, :] - graph.positions[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    w = np.exp(-(dist**2) / sigma**2)
    w[(graph.edges == 0) | (dist > cutoff)] = 0.0
    np.fill_diagonal(w, 0.0)
    return w


def power_iteration(m: np.ndarray, rtol: float = 1e-6, max_iter: int = 1000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Stops once the eigen-residual |Mv - lam v| falls below rtol * lam, and
    returns lam + |residual|, which bounds the eigenvalue from above.
    """
    n = m.shape[0]
    # deterministic, non-degenerate start vector
    v = np.linspace(1.0, 2.0, n)
    v /= np.linalg.norm(v)
    lam, res = 0.0, 0.0
    for _ in range(max_iter):
        w = m @ v
        lam = float(v @ w)
        res = float(np.linalg.norm(w - lam * v))
        if lam <= 0.0 or res <= rtol * lam:
            break
        v = w / np.linalg.norm(w)
    return max(lam, 0.0) + res


def normalized_laplacian(graph: RoadGraph | np.ndarray) -> Laplacian:
    w = graph.weights if isinstance(graph, RoadGraph) else np.asarray(graph, dtype=float)
    if (w < 0).any():
        raise ValueError("negative edge weight")
    deg = w.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    L = np.diag(nz.astype(float)) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    L = 0.5 * (L + L.T)
    lam = power_iteration(L) if nz.any() else 0.0
    if lam <= 0.0:
        lam = 2.0  # edgeless graph: keeps the scaling total
    return Laplacian(L, lam, scale_laplacian_matrix(L, lam))


def scale_laplacian_matrix(L: np.ndarray, lambda_max: float) -> np.ndarray:
    if not lambda_max > 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    return 2.0 * L / lambda_max - np.eye(L.shape[0])


def scale_laplacian(lap: Laplacian) -> np.ndarray:
    return scale_laplacian_matrix(lap.L, lap.lambda_max)


# -- helpers shared by scenario generation ---------------------------------

def standard_lanes(node_id: str, lengths: dict[str, float]) -> list[dict[str, Any]]:
    """Twelve incoming lane records; `lengths` maps approach to lane length."""
    return [
        {"id": f"{node_id}_{a}_{t}", "length_m": lengths[a], "approach": a, "turn": t}
        for a in APPROACHES
        for t in TURNS
    ]


def standard_intersection(node_id: str, x: float, y: float, lengths: dict[str, float]) -> dict[str, Any]:
    return {
        "id": node_id,
        "x": x,
        "y": y,
        "lanes": standard_lanes(node_id, lengths),
        "phases": [list(p) for p in STANDARD_PHASES],
    }
