"""Synthetic floor plans, AP layouts and walk generators for the evaluation
ensembles and the test suite.

The reference office is a ring corridor around a sealed courtyard with 12
rooms along the outer band and 18 APs, sized so a 2 m sampling grid yields
point counts comparable to a real mid-size office deployment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .chansim import simulate_rss_walk
from .floorplan import FloorPlan, Room
from .fpextract import RssTrajectory


def office_plan() -> Tuple[FloorPlan, List[Tuple[float, float]]]:
    """Reference office: 56 x 44 m building with a 2 m ring corridor around a
    sealed courtyard, 12 rooms on the outer band, 18 APs (12 corridor, 6 in
    rooms).  Walls sit on even coordinates so the half-grid sample points at
    odd coordinates never fall on a wall line."""
    outer = [(0, 0), (56, 0), (56, 44), (0, 44)]

    # corridor boundaries: the outer rectangle carries the room doors; three
    # sealed courtyards leave a ring plus two cross-corridors (vertical at
    # x in [18, 20], horizontal at y in [16, 18]), so the walkable network has
    # no nontrivial isometry for the matcher to confuse
    r_out = [(6, 6), (50, 6), (50, 36), (6, 36)]
    court_a = [(8, 8), (18, 8), (18, 34), (8, 34)]
    court_b1 = [(20, 8), (48, 8), (48, 16), (20, 16)]
    court_b2 = [(20, 18), (48, 18), (48, 34), (20, 34)]
    walls = []
    for rect in (r_out, court_a, court_b1, court_b2):
        for a, b in zip(rect, rect[1:] + rect[:1]):
            walls.append((a, b))
    # room partitions and corner closers
    for x in (14, 28, 42):
        walls.append(((x, 0), (x, 6)))
        walls.append(((x, 36), (x, 44)))
    walls.append(((0, 21), (6, 21)))
    walls.append(((50, 21), (56, 21)))
    for x0, x1 in ((0, 6), (50, 56)):
        walls.append(((x0, 6), (x1, 6)))
        walls.append(((x0, 36), (x1, 36)))

    doors = [
        (10, 6), (21, 6), (35, 6), (46, 6),          # bottom rooms
        (10, 36), (21, 36), (35, 36), (46, 36),      # top rooms
        (6, 13.5), (6, 28.5),                        # left rooms
        (50, 13.5), (50, 28.5),                      # right rooms
    ]

    rooms = [
        Room("b1", [(0, 0), (14, 0), (14, 6), (0, 6)]),
        Room("b2", [(14, 0), (28, 0), (28, 6), (14, 6)]),
        Room("b3", [(28, 0), (42, 0), (42, 6), (28, 6)]),
        Room("b4", [(42, 0), (56, 0), (56, 6), (42, 6)]),
        Room("t1", [(0, 36), (14, 36), (14, 44), (0, 44)]),
        Room("t2", [(14, 36), (28, 36), (28, 44), (14, 44)]),
        Room("t3", [(28, 36), (42, 36), (42, 44), (28, 44)]),
        Room("t4", [(42, 36), (56, 36), (56, 44), (42, 44)]),
        Room("l1", [(0, 6), (6, 6), (6, 21), (0, 21)]),
        Room("l2", [(0, 21), (6, 21), (6, 36), (0, 36)]),
        Room("r1", [(50, 6), (56, 6), (56, 21), (50, 21)]),
        Room("r2", [(50, 21), (56, 21), (56, 36), (50, 36)]),
    ]

    plan = FloorPlan(outer=outer, walls=walls, doors=doors, rooms=rooms)
    aps = [
        (12, 7), (24, 7), (36, 7), (46, 7),
        (12, 35), (24, 35), (36, 35), (46, 35),
        (7, 14), (7, 28), (49, 14), (49, 28),
        (7, 3), (35, 3), (21, 39), (46, 39), (3, 13), (53, 28),
    ]
    return plan, aps


RING_WAYPOINTS = [(7, 7), (49, 7), (49, 35), (7, 35), (7, 7)]
CHORD_V_WAYPOINTS = [(49, 7), (19, 7), (19, 17), (19, 35), (7, 35)]
CHORD_H_WAYPOINTS = [(7, 35), (19, 35), (19, 17), (49, 17), (49, 35)]

# door approach points just inside the corridor and the room interior targets
ROOM_VISITS: Dict[str, Tuple[Tuple[float, float], Tuple[float, float]]] = {
    "b1": ((10, 7), (10, 3)),
    "b2": ((21, 7), (21, 3)),
    "b3": ((35, 7), (35, 3)),
    "b4": ((46, 7), (46, 3)),
    "t1": ((10, 35), (10, 39)),
    "t2": ((21, 35), (21, 39)),
    "t3": ((35, 35), (35, 39)),
    "t4": ((46, 35), (46, 39)),
    "l1": ((7, 13.5), (3, 13.5)),
    "l2": ((7, 28.5), (3, 28.5)),
    "r1": ((49, 13.5), (53, 13.5)),
    "r2": ((49, 28.5), (53, 28.5)),
}


def polyline_walk(waypoints: Sequence[Tuple[float, float]], speed: float,
                  sample_dt: float = 1.0, t0: float = 0.0):
    """Constant-speed walk along a polyline, sampled every sample_dt seconds.
    Returns (points, times, total_length)."""
    wp = np.asarray(waypoints, dtype=float)
    seg_len = np.hypot(*np.diff(wp, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = float(cum[-1])
    duration = total / speed
    times = t0 + np.arange(0.0, duration, sample_dt)
    dist = (times - t0) * speed
    pts = np.empty((times.size, 2))
    for k, d in enumerate(dist):
        i = min(int(np.searchsorted(cum, d, side="right")) - 1, len(seg_len) - 1)
        frac = (d - cum[i]) / max(seg_len[i], 1e-12)
        pts[k] = wp[i] + frac * (wp[i + 1] - wp[i])
    return pts, times, total


def position_at(waypoints: Sequence[Tuple[float, float]], speed: float,
                t: float, t0: float = 0.0) -> np.ndarray:
    """Ground-truth position of a polyline walk at time t."""
    wp = np.asarray(waypoints, dtype=float)
    seg_len = np.hypot(*np.diff(wp, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    d = np.clip((t - t0) * speed, 0.0, cum[-1])
    i = min(int(np.searchsorted(cum, d, side="right")) - 1, len(seg_len) - 1)
    frac = (d - cum[i]) / max(seg_len[i], 1e-12)
    return wp[i] + frac * (wp[i + 1] - wp[i])


def ring_tour_waypoints(rooms: Sequence[str], reverse: bool = False) -> List[Tuple[float, float]]:
    """Ring loop with detours into the given rooms, in ring order."""
    ring = list(RING_WAYPOINTS)
    if reverse:
        ring = ring[::-1]
    # insert room detours at their door approach points along the ring path
    path: List[Tuple[float, float]] = []
    for a, b in zip(ring, ring[1:]):
        path.append(a)
        ax, ay = a
        bx, by = b
        on_seg = []
        for room in rooms:
            door, target = ROOM_VISITS[room]
            dx, dy = door
            if min(ax, bx) - 1e-6 <= dx <= max(ax, bx) + 1e-6 and \
               min(ay, by) - 1e-6 <= dy <= max(ay, by) + 1e-6:
                along = abs(dx - ax) + abs(dy - ay)
                on_seg.append((along, door, target))
        for _, door, target in sorted(on_seg, key=lambda x: x[0]):
            path += [door, target, door]
    path.append(ring[-1])
    return path


@dataclass
class WalkTruth:
    trajectory: RssTrajectory
    waypoints: List[Tuple[float, float]]
    speed: float
    t0: float

    def position_at(self, t: float) -> np.ndarray:
        return position_at(self.waypoints, self.speed, t, self.t0)


def training_walks(plan: FloorPlan, aps, seed: int, shadow_sigma_db: float = 2.0,
                   directional_offset_db: float = 4.0,
                   sample_dt: float = 1.0) -> List[WalkTruth]:
    """Walk suite covering the full ring and every room: two opposite ring
    loops plus two room tours, each with its own speed and body offset."""
    def rotate(wps, k):
        # closed-loop rotation so walk seams land on different corners
        loop = list(wps[:-1])
        loop = loop[k:] + loop[:k]
        return loop + [loop[0]]

    specs = [
        (RING_WAYPOINTS, 1.3, False),
        (rotate(list(reversed(RING_WAYPOINTS)), 1), 1.1, False),
        (rotate(ring_tour_waypoints(["b1", "b2", "b3", "b4", "r1", "r2"]), 0), 1.2, False),
        (ring_tour_waypoints(["t1", "t2", "t3", "t4", "l1", "l2"], reverse=True), 1.0, False),
        (CHORD_V_WAYPOINTS, 1.25, False),
        (CHORD_H_WAYPOINTS, 1.15, False),
    ]
    walks = []
    rng = np.random.default_rng(seed)
    for k, (wps, speed, _rev) in enumerate(specs):
        pts, times, _ = polyline_walk(wps, speed, sample_dt)
        traj = simulate_rss_walk(plan, aps, pts, times, shadow_sigma_db,
                                 directional_offset_db, seed=int(rng.integers(2**31)),
                                 env_seed=seed, walk_id=f"train-{seed}-{k}")
        walks.append(WalkTruth(traj, list(wps), speed, 0.0))
    return walks


def corridor_plan() -> Tuple[FloorPlan, List[Tuple[float, float]]]:
    """Small straight-corridor plan for unit tests: 30 x 6 m, 3 APs."""
    outer = [(0, 0), (30, 0), (30, 6), (0, 6)]
    plan = FloorPlan(outer=outer, walls=[], doors=[], rooms=[])
    aps = [(5, 3), (15, 3), (25, 3)]
    return plan, aps
