"""Floor plan geometry: polygons, walls with door gaps, grid sampling,
line-of-sight visibility graphs and all-pairs geodesics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from shapely.geometry import LineString, Point, Polygon

from .gmatch import WeightedGraph


@dataclass
class Room:
    label: str
    polygon: List[Tuple[float, float]]


@dataclass
class FloorPlan:
    outer: List[Tuple[float, float]]
    walls: List[Tuple[Tuple[float, float], Tuple[float, float]]] = field(default_factory=list)
    doors: List[Tuple[float, float]] = field(default_factory=list)
    rooms: List[Room] = field(default_factory=list)
    door_clearance: float = 0.9   # segment passing within this of a door is not blocked

    def __post_init__(self):
        self._outer_poly = Polygon(self.outer)
        if not self._outer_poly.is_valid or self._outer_poly.area <= 0:
            raise ValueError("outer polygon is degenerate")
        self._wall_lines = [LineString([a, b]) for a, b in self.walls]
        self._door_pts = [Point(p) for p in self.doors]
        for r in self.rooms:
            if not Polygon(r.polygon).is_valid:
                raise ValueError(f"room {r.label} polygon is invalid")

    def contains(self, p) -> bool:
        return self._outer_poly.buffer(1e-9).contains(Point(float(p[0]), float(p[1])))

    def _door_near(self, pt: Point) -> bool:
        return any(pt.distance(d) <= self.door_clearance for d in self._door_pts)

    def wall_crossings(self, p, q) -> int:
        """Number of walls blocking segment p-q; crossings next to a door pass."""
        seg = LineString([tuple(map(float, p)), tuple(map(float, q))])
        count = 0
        for wall in self._wall_lines:
            inter = seg.intersection(wall)
            if inter.is_empty:
                continue
            pts = []
            if inter.geom_type == "Point":
                pts = [inter]
            elif inter.geom_type == "MultiPoint":
                pts = list(inter.geoms)
            else:   # collinear overlap counts as a single blocked contact
                pts = [inter.centroid]
            for x in pts:
                if not self._door_near(x):
                    count += 1
        return count

    def blocked(self, p, q) -> bool:
        return self.wall_crossings(p, q) > 0

    def room_index_of(self, p) -> Optional[int]:
        pt = Point(float(p[0]), float(p[1]))
        for k, r in enumerate(self.rooms):
            if Polygon(r.polygon).buffer(1e-9).contains(pt):
                return k
        return None

    def to_json(self) -> str:
        return json.dumps({
            "outer": [list(p) for p in self.outer],
            "walls": [[list(a), list(b)] for a, b in self.walls],
            "doors": [list(p) for p in self.doors],
            "rooms": [{"label": r.label, "polygon": [list(p) for p in r.polygon]}
                      for r in self.rooms],
            "door_clearance": self.door_clearance,
        })

    @staticmethod
    def from_json(text: str) -> "FloorPlan":
        obj = json.loads(text)
        return FloorPlan(
            outer=[tuple(p) for p in obj["outer"]],
            walls=[(tuple(a), tuple(b)) for a, b in obj["walls"]],
            doors=[tuple(p) for p in obj["doors"]],
            rooms=[Room(r["label"], [tuple(p) for p in r["polygon"]]) for r in obj["rooms"]],
            door_clearance=obj.get("door_clearance", 0.9),
        )


@dataclass
class SampledMap:
    """Uniform grid sampling of the walkable space with LoS visibility edges."""

    points: np.ndarray               # (n, 2)
    graph: WeightedGraph             # Euclidean-weight visibility edges
    geodesic: np.ndarray             # (n, n) shortest walking distances
    grid: float
    room_of: np.ndarray              # (n,), room index or -1 for corridor/open space
    dropped_points: int = 0

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def nearest_node(self, p) -> int:
        d = np.hypot(self.points[:, 0] - p[0], self.points[:, 1] - p[1])
        return int(np.argmin(d))


def sample_floorplan(plan: FloorPlan, grid: float, neighbor_radius_mult: float = 3.0) -> SampledMap:
    """Scatter grid points over the walkable space and link mutually visible
    neighbors; geodesics are all-pairs shortest paths over that graph.

    Unreachable islands (e.g. fully walled voids) are dropped so the geodesic
    matrix is finite on what remains.
    """
    if grid <= 0:
        raise ValueError("grid must be positive")
    minx, miny, maxx, maxy = Polygon(plan.outer).bounds
    xs = np.arange(minx + grid / 2.0, maxx, grid)
    ys = np.arange(miny + grid / 2.0, maxy, grid)
    pts = [(x, y) for x in xs for y in ys if plan.contains((x, y))]
    if len(pts) < 2:
        raise ValueError("grid too coarse: fewer than 2 sample points")
    pts = np.array(pts)

    radius = neighbor_radius_mult * grid
    n = len(pts)
    rows, cols, vals = [], [], []
    for i in range(n):
        d = np.hypot(pts[:, 0] - pts[i, 0], pts[:, 1] - pts[i, 1])
        for j in np.nonzero((d > 0) & (d <= radius))[0]:
            if j <= i:
                continue
            if not plan.blocked(pts[i], pts[j]):
                rows += [i, j]
                cols += [j, i]
                vals += [d[j], d[j]]
    w = np.zeros((n, n))
    w[rows, cols] = vals

    sparse = csr_matrix(w)
    n_comp, labels = connected_components(sparse, directed=False)
    dropped = 0
    if n_comp > 1:
        main = np.argmax(np.bincount(labels))
        keep = labels == main
        dropped = int(n - keep.sum())
        pts = pts[keep]
        w = w[np.ix_(keep, keep)]
        sparse = csr_matrix(w)

    geo = dijkstra(sparse, directed=False)
    room_of = np.array([plan.room_index_of(p) if plan.room_index_of(p) is not None else -1
                        for p in pts])
    return SampledMap(points=pts, graph=WeightedGraph(w), geodesic=geo, grid=grid,
                      room_of=room_of, dropped_points=dropped)


def shortest_path_nodes(graph: WeightedGraph, src: int, dst: int) -> List[int]:
    """Node sequence of one shortest path (Dijkstra predecessors)."""
    sparse = csr_matrix(graph.weights)
    _, pred = dijkstra(sparse, directed=False, indices=src, return_predecessors=True)
    if pred[dst] < 0 and src != dst:
        raise ValueError("destination unreachable")
    path = [dst]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    return path[::-1]
