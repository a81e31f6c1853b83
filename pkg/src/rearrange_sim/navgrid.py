"""Walkable-region occupancy grid.

The walkable area is authored as 2D polygons (scene layout `navmesh_source`),
rasterized at a uniform cell size, with furniture footprints (inflated by the
robot base radius) carved out. The grid answers the queries the rest of the
stack needs: point membership, nearest-walkable projection for base sliding,
and geodesic distances / shortest paths via Dijkstra.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

CELL_SIZE = 0.05  # m


class NavGrid:
    def __init__(
        self,
        polygons: list[np.ndarray],
        blocked_rects: list[tuple[float, float, float, float]] | None = None,
        cell_size: float = CELL_SIZE,
    ):
        if not polygons:
            raise ValueError("walkable region needs at least one polygon")
        self.cell = float(cell_size)
        pts = np.vstack(polygons)
        self.origin = pts.min(axis=0) - self.cell
        extent = pts.max(axis=0) + self.cell - self.origin
        self.nx = max(1, int(math.ceil(extent[0] / self.cell)))
        self.ny = max(1, int(math.ceil(extent[1] / self.cell)))
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.cell
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.cell
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        centers = np.column_stack([gx.ravel(), gy.ravel()])
        walkable = np.zeros(len(centers), dtype=bool)
        for poly in polygons:
            walkable |= _points_in_polygon(centers, np.asarray(poly, dtype=float))
        for x0, y0, x1, y1 in blocked_rects or []:
            inside = (
                (centers[:, 0] >= x0)
                & (centers[:, 0] <= x1)
                & (centers[:, 1] >= y0)
                & (centers[:, 1] <= y1)
            )
            walkable &= ~inside
        self.walkable = walkable.reshape(self.nx, self.ny)
        self._dist_fields: dict[tuple[int, int], np.ndarray] = {}

    # -- indexing -----------------------------------------------------------

    def cell_of(self, xy) -> tuple[int, int]:
        i = int(math.floor((xy[0] - self.origin[0]) / self.cell))
        j = int(math.floor((xy[1] - self.origin[1]) / self.cell))
        return i, j

    def center_of(self, ij: tuple[int, int]) -> np.ndarray:
        return self.origin + (np.array(ij, dtype=float) + 0.5) * self.cell

    def in_bounds(self, ij) -> bool:
        return 0 <= ij[0] < self.nx and 0 <= ij[1] < self.ny

    def is_walkable(self, xy) -> bool:
        ij = self.cell_of(xy)
        return self.in_bounds(ij) and bool(self.walkable[ij])

    def nearest_walkable(self, xy) -> np.ndarray:
        """Center of the closest walkable cell (deterministic tie-break)."""
        if self.is_walkable(xy):
            return np.array([xy[0], xy[1]], dtype=float)
        ci, cj = self.cell_of(xy)
        best = None
        max_ring = max(self.nx, self.ny)
        for ring in range(max_ring + 1):
            candidates = []
            for i in range(ci - ring, ci + ring + 1):
                for j in range(cj - ring, cj + ring + 1):
                    if max(abs(i - ci), abs(j - cj)) != ring:
                        continue
                    if self.in_bounds((i, j)) and self.walkable[i, j]:
                        c = self.center_of((i, j))
                        d2 = float((c[0] - xy[0]) ** 2 + (c[1] - xy[1]) ** 2)
                        candidates.append((d2, i, j, c))
            if candidates:
                candidates.sort(key=lambda t: (t[0], t[1], t[2]))
                best = candidates[0][3]
                # one more ring: a nearer cell can still live in ring+1
                more = []
                for i in range(ci - ring - 1, ci + ring + 2):
                    for j in range(cj - ring - 1, cj + ring + 2):
                        if max(abs(i - ci), abs(j - cj)) != ring + 1:
                            continue
                        if self.in_bounds((i, j)) and self.walkable[i, j]:
                            c = self.center_of((i, j))
                            d2 = float((c[0] - xy[0]) ** 2 + (c[1] - xy[1]) ** 2)
                            more.append((d2, i, j, c))
                if more:
                    more.sort(key=lambda t: (t[0], t[1], t[2]))
                    if more[0][0] < candidates[0][0]:
                        best = more[0][3]
                return best
        raise ValueError("grid has no walkable cells")

    # -- geodesics ----------------------------------------------------------

    def distance_field(self, goal_xy) -> np.ndarray:
        """Geodesic distance (m) from every cell to the goal cell. Cached."""
        gi, gj = self.cell_of(self.nearest_walkable(goal_xy))
        key = (gi, gj)
        if key in self._dist_fields:
            return self._dist_fields[key]
        dist = np.full((self.nx, self.ny), np.inf)
        dist[gi, gj] = 0.0
        pq = [(0.0, gi, gj)]
        straight = self.cell
        diag = self.cell * math.sqrt(2.0)
        while pq:
            d, i, j = heapq.heappop(pq)
            if d > dist[i, j]:
                continue
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ni, nj = i + di, j + dj
                    if not (0 <= ni < self.nx and 0 <= nj < self.ny):
                        continue
                    if not self.walkable[ni, nj]:
                        continue
                    nd = d + (diag if di != 0 and dj != 0 else straight)
                    if nd < dist[ni, nj]:
                        dist[ni, nj] = nd
                        heapq.heappush(pq, (nd, ni, nj))
        self._dist_fields[key] = dist
        return dist

    def geodesic_distance(self, from_xy, to_xy) -> float:
        field = self.distance_field(to_xy)
        ij = self.cell_of(self.nearest_walkable(from_xy))
        return float(field[ij])

    def shortest_path(self, from_xy, to_xy) -> list[np.ndarray]:
        """Waypoints (cell centers) from start to goal by steepest descent on
        the goal's distance field. Empty list when unreachable."""
        field = self.distance_field(to_xy)
        ij = self.cell_of(self.nearest_walkable(from_xy))
        if not np.isfinite(field[ij]):
            return []
        path = [self.center_of(ij)]
        cur = ij
        guard = self.nx * self.ny
        while field[cur] > 0.0 and guard > 0:
            guard -= 1
            i, j = cur
            best = None
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == 0 and dj == 0:
                        continue
                    ni, nj = i + di, j + dj
                    if 0 <= ni < self.nx and 0 <= nj < self.ny and np.isfinite(field[ni, nj]):
                        cand = (field[ni, nj], ni, nj)
                        if best is None or cand < best:
                            best = cand
            if best is None or best[0] >= field[cur]:
                break
            cur = (best[1], best[2])
            path.append(self.center_of(cur))
        return path


def _points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Ray-crossing membership test, vectorized over points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < np.where(crosses, x_at, np.inf))
    return inside
