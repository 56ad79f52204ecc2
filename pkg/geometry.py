"""Geometry - rotations, camera FOV pyramids, facet meshes, waypoint cubes and polytopes."""

import csv
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from errors import GeometryError

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-9
COLLINEAR_TOL = 1e-12
FOV_FACES = 5
CUBE_FACES = 6


def rotation_y(angle: float) -> np.ndarray:
    """Basic rotation about the y-axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s],
                     [0.0, 1.0, 0.0],
                     [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    """Basic rotation about the z-axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


# ============================================================================
# Convex polytopes
# ============================================================================

@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Intersection of half-spaces a_j^T p <= b_j with unit outward normals."""
    normals: np.ndarray
    offsets: np.ndarray
    name: str = ""

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if normals.shape[1] != 3 or normals.shape[0] != offsets.shape[0]:
            raise GeometryError(f"half-space arrays have mismatched shapes {normals.shape} / {offsets.shape}")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms <= 0.0):
            raise GeometryError("half-space normal with zero length")
        object.__setattr__(self, 'normals', normals / norms[:, None])
        object.__setattr__(self, 'offsets', offsets / norms)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float], name: str = "") -> 'ConvexPolytope':
        """Axis-aligned box; faces ordered +x, -x, +y, -y, +z, -z."""
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if np.any(hi <= lo):
            raise GeometryError(f"empty box {lo} .. {hi}")
        normals = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                            [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
        offsets = np.array([hi[0], -lo[0], hi[1], -lo[1], hi[2], -lo[2]])
        return cls(normals, offsets, name)

    @property
    def face_count(self) -> int:
        return self.normals.shape[0]

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Vectorized containment for points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=-1)

    def translated(self, shift: Sequence[float]) -> 'ConvexPolytope':
        shift = np.asarray(shift, dtype=float)
        return ConvexPolytope(self.normals, self.offsets + self.normals @ shift, self.name)

    def shrunk(self, margins: Sequence[float]) -> 'ConvexPolytope':
        """Pull each face inward by its own margin."""
        return ConvexPolytope(self.normals, self.offsets - np.asarray(margins, dtype=float), self.name)

    def vertices(self, tol: float = 1e-9) -> np.ndarray:
        """Vertex enumeration by intersecting every triple of face planes."""
        found = []
        for i, j, k in itertools.combinations(range(self.face_count), 3):
            A = self.normals[[i, j, k]]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            p = np.linalg.solve(A, self.offsets[[i, j, k]])
            if self.contains(p, tol) and not any(np.linalg.norm(p - q) < 1e-7 for q in found):
                found.append(p)
        return np.array(found).reshape(-1, 3)

    def is_bounded(self) -> bool:
        """True when max/min of every coordinate over the polytope is finite."""
        for axis in range(3):
            for sign in (1.0, -1.0):
                c = np.zeros(3)
                c[axis] = -sign
                res = linprog(c, A_ub=self.normals, b_ub=self.offsets,
                              bounds=[(None, None)] * 3, method="highs")
                if res.status != 0:
                    return False
        return True

    def validate(self) -> 'ConvexPolytope':
        """Construction precondition for obstacles: bounded and nonempty."""
        if not self.is_bounded():
            raise GeometryError(f"polytope '{self.name}' is empty or unbounded")
        if len(self.vertices()) < 4:
            raise GeometryError(f"polytope '{self.name}' has fewer than 4 vertices")
        return self


def point_in_polytope(p: Sequence[float], poly: ConvexPolytope, tol: float = 1e-9) -> bool:
    """True iff a_j^T p <= b_j + tol for all faces."""
    return bool(poly.contains(np.asarray(p, dtype=float), tol))


# ============================================================================
# Facets and waypoints
# ============================================================================

@dataclass(frozen=True, eq=False)
class Facet:
    """Triangular surface element; rows of `vertices` are the corners."""
    vertices: np.ndarray
    centroid: np.ndarray
    unit_normal: np.ndarray

    @classmethod
    def from_vertices(cls, vertices: np.ndarray, orient_upward: bool = False) -> 'Facet':
        v = np.asarray(vertices, dtype=float).reshape(3, 3)
        normal = np.cross(v[1] - v[0], v[2] - v[0])
        norm = np.linalg.norm(normal)
        if norm < COLLINEAR_TOL:
            raise GeometryError(f"facet vertices are collinear: {v.tolist()}")
        if orient_upward and normal[2] < 0.0:
            v = v[[0, 2, 1]]
            normal = -normal
        return cls(v, v.mean(axis=0), normal / norm)

    def targets(self, cover_vertices: bool = False) -> np.ndarray:
        """Points that must fall inside the camera FOV for coverage."""
        return self.vertices.copy() if cover_vertices else self.centroid[None, :]


@dataclass(frozen=True, eq=False)
class Waypoint:
    facet_index: int
    centroid: np.ndarray
    cube: ConvexPolytope
    edge_length: float


def make_waypoint(facet: Facet, c: float, h_fov: float, edge_length: float,
                  facet_index: int = 0) -> Waypoint:
    """Cube of edge `edge_length` centred c*h_fov along the facet normal."""
    if edge_length <= 0.0:
        raise GeometryError(f"waypoint edge length must be positive, got {edge_length}")
    center = c * h_fov * facet.unit_normal + facet.centroid
    half = 0.5 * edge_length
    cube = ConvexPolytope.box(center - half, center + half, name=f"waypoint-{facet_index}")
    return Waypoint(facet_index, center, cube, float(edge_length))


# ============================================================================
# Camera field of view
# ============================================================================

@dataclass(frozen=True)
class CameraConfig:
    h_fov: float
    phi_h: float
    phi_v: float
    psi_y_set: Tuple[float, ...]
    psi_z_set: Tuple[float, ...]

    def __post_init__(self):
        if self.h_fov <= 0.0:
            raise GeometryError(f"h_fov must be positive, got {self.h_fov}")
        for name, angle in (('phi_h', self.phi_h), ('phi_v', self.phi_v)):
            if not 0.0 < angle < np.pi:
                raise GeometryError(f"{name} must lie in (0, pi), got {angle}")
        if not self.psi_y_set or not self.psi_z_set:
            raise GeometryError("rotation angle sets must be non-empty")
        if any(abs(a) > np.pi / 2 + 1e-12 for a in self.psi_y_set):
            raise GeometryError("psi_y values must lie in [-pi/2, pi/2]")
        if any(a <= -np.pi - 1e-12 or a > np.pi + 1e-12 for a in self.psi_z_set):
            raise GeometryError("psi_z values must lie in (-pi, pi]")

    @property
    def footprint(self) -> Tuple[float, float]:
        """(length, width) of the FOV base."""
        return (2.0 * self.h_fov * np.tan(self.phi_h / 2.0),
                2.0 * self.h_fov * np.tan(self.phi_v / 2.0))


@dataclass(frozen=True, eq=False)
class FovState:
    index: int
    psi_y: float
    psi_z: float
    vertices_body: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    def polytope(self, position: Optional[Sequence[float]] = None) -> ConvexPolytope:
        poly = ConvexPolytope(self.normals, self.offsets, name=f"fov-{self.index}")
        return poly if position is None else poly.translated(position)


def base_fov_vertices(cfg: CameraConfig) -> np.ndarray:
    """3x5 matrix: four base corners at x = h_fov, apex at the origin."""
    length, width = cfg.footprint
    h, l2, w2 = cfg.h_fov, length / 2.0, width / 2.0
    return np.array([[h, h, h, h, 0.0],
                     [l2, l2, -l2, -l2, 0.0],
                     [w2, -w2, -w2, w2, 0.0]])


def pyramid_halfspaces(vertices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Outward half-spaces (4 lateral faces then the base) of a right pyramid."""
    corners = vertices[:, :4].T
    apex = vertices[:, 4]
    normals = np.zeros((FOV_FACES, 3))
    offsets = np.zeros(FOV_FACES)
    for i in range(4):
        a, b, opposite = corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]
        n = np.cross(a - apex, b - apex)
        if n @ (opposite - apex) > 0.0:
            n = -n
        n /= np.linalg.norm(n)
        normals[i], offsets[i] = n, n @ apex
    axis = corners.mean(axis=0) - apex
    axis /= np.linalg.norm(axis)
    normals[4], offsets[4] = axis, axis @ corners[0]
    return normals, offsets


def enumerate_fov_states(cfg: CameraConfig) -> List[FovState]:
    """All (psi_y, psi_z) rotations of the base pyramid, psi_y outer, psi_z inner."""
    v0 = base_fov_vertices(cfg)
    states = []
    for psi_y in cfg.psi_y_set:
        for psi_z in cfg.psi_z_set:
            v = rotation_z(psi_z) @ rotation_y(psi_y) @ v0
            v[:, 4] = 0.0
            normals, offsets = pyramid_halfspaces(v)
            states.append(FovState(len(states), float(psi_y), float(psi_z), v, normals, offsets))
    logger.debug("enumerated %d FOV states", len(states))
    return states


# ============================================================================
# 2.5D Delaunay triangulation (Bowyer-Watson on the xy projection)
# ============================================================================

SUPER_SCALE = 100.0


def _circumcircle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> Tuple[np.ndarray, float]:
    bx, by = b - a
    cx, cy = c - a
    d = 2.0 * (bx * cy - by * cx)
    if abs(d) < 1e-300:
        return a, np.inf
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return a + np.array([ux, uy]), ux * ux + uy * uy


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _contains_2d(tri: Tuple[int, int, int], pts: np.ndarray, p: np.ndarray) -> bool:
    a, b, c = (pts[i] for i in tri)
    scale = max(abs(_orient(a, b, c)), 1e-300)
    return min(_orient(a, b, p), _orient(b, c, p), _orient(c, a, p)) >= -1e-12 * scale


def _deduplicate(points: np.ndarray) -> np.ndarray:
    kept: List[np.ndarray] = []
    for p in points:
        if any(np.linalg.norm(p[:2] - q[:2]) <= DUPLICATE_TOL for q in kept):
            logger.warning("dropping duplicate point %s", p.tolist())
            continue
        kept.append(p)
    return np.array(kept)


def _check_not_collinear(xy: np.ndarray) -> None:
    rel = xy - xy[0]
    far = rel[np.argmax(np.einsum('ij,ij->i', rel, rel))]
    cross = np.abs(rel[:, 0] * far[1] - rel[:, 1] * far[0])
    if cross.max() <= COLLINEAR_TOL:
        raise GeometryError("point projections are collinear; no triangulation exists")


def _hull_seed(xy: np.ndarray) -> Tuple[int, int]:
    """A hull edge (a, b) with every point on or left of a -> b."""
    a = int(np.lexsort((xy[:, 1], xy[:, 0]))[0])
    b = (a + 1) % len(xy)
    for c in range(len(xy)):
        if c == a:
            continue
        turn = _orient(xy[a], xy[b], xy[c])
        nearer = np.sum((xy[c] - xy[a]) ** 2) < np.sum((xy[b] - xy[a]) ** 2)
        if turn < 0.0 or (turn == 0.0 and nearer):
            b = c
    # collinear points met before the final direction was fixed
    for c in range(len(xy)):
        if c != a and _orient(xy[a], xy[b], xy[c]) == 0.0 \
                and np.sum((xy[c] - xy[a]) ** 2) < np.sum((xy[b] - xy[a]) ** 2):
            b = c
    return a, b


def _complete_hull(xy: np.ndarray, triangles: List[Tuple[int, int, int]]) -> List[Tuple[int, int, int]]:
    """Fill the hull triangles lost with the super-triangle.

    Every kept triangle is Delaunay, so each open edge is closed by the point
    on its open side that sees it under the largest angle.
    """
    span = float(np.max(xy.max(axis=0) - xy.min(axis=0)))
    tol = 1e-12 * span * span
    edges = {e for tri in triangles for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))}
    front = [(b, a) for a, b in edges if (b, a) not in edges] if triangles else [_hull_seed(xy)]
    out = list(triangles)
    while front:
        a, b = front.pop()
        if (a, b) in edges:
            continue
        pa, pb = xy[a], xy[b]
        left = (pb[0] - pa[0]) * (xy[:, 1] - pa[1]) - (pb[1] - pa[1]) * (xy[:, 0] - pa[0]) > tol
        candidates = np.flatnonzero(left)
        if not len(candidates):
            continue
        u, v = pa - xy[candidates], pb - xy[candidates]
        angle = np.arctan2(np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]), np.einsum('ij,ij->i', u, v))
        c = int(candidates[np.argmax(angle)])
        out.append((a, b, c))
        edges.update(((a, b), (b, c), (c, a)))
        front.extend(e for e in ((c, b), (a, c)) if e not in edges)
    if len(out) > len(triangles):
        logger.debug("hull completion added %d triangles", len(out) - len(triangles))
    return out


def bowyer_watson(xy: np.ndarray) -> List[Tuple[int, int, int]]:
    """Counter-clockwise Delaunay triangles (index triples) of unique 2D points."""
    n = len(xy)
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    center = 0.5 * (lo + hi)
    span = SUPER_SCALE * max(float(np.max(hi - lo)), 1.0)
    pts = np.vstack([xy, center + span * np.array([[-2.0, -1.0], [2.0, -1.0], [0.0, 2.0]])])

    triangles: Dict[Tuple[int, int, int], Tuple[np.ndarray, float]] = {}

    def add(tri):
        triangles[tri] = _circumcircle(*(pts[i] for i in tri))

    add((n, n + 1, n + 2))
    for i in range(n):
        p = pts[i]
        bad = {tri for tri, (cc, r2) in triangles.items()
               if np.sum((p - cc) ** 2) < r2 * (1.0 - 1e-12)}
        seeds = [tri for tri in bad if _contains_2d(tri, pts, p)]
        if not seeds:
            raise GeometryError(f"point {i} not located in the current triangulation")

        edge_owner = defaultdict(list)
        for tri in bad:
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edge_owner[frozenset(e)].append(tri)
        cavity, stack = set(), [seeds[0]]
        while stack:
            tri = stack.pop()
            if tri in cavity:
                continue
            cavity.add(tri)
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                stack.extend(t for t in edge_owner[frozenset(e)] if t not in cavity)

        boundary = defaultdict(int)
        directed = {}
        for tri in cavity:
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                boundary[frozenset(e)] += 1
                directed[frozenset(e)] = e
            del triangles[tri]
        for key, count in boundary.items():
            if count != 1:
                continue
            a, b = directed[key]
            if abs(_orient(pts[a], pts[b], p)) <= 1e-14 * span * span:
                logger.debug("skipping degenerate triangle (%d, %d, %d)", a, b, i)
                continue
            add((a, b, i))

    return _complete_hull(xy, [tri for tri in triangles if max(tri) < n])


def delaunay_2p5d(points: Sequence[Sequence[float]]) -> List[Facet]:
    """Triangulate a height field: 2D Delaunay on xy, lifted back to z."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise GeometryError(f"need at least 3 points, got {len(pts)}")
    pts = _deduplicate(pts)
    if len(pts) < 3:
        raise GeometryError("fewer than 3 distinct points after deduplication")
    _check_not_collinear(pts[:, :2])
    triangles = bowyer_watson(pts[:, :2])
    facets = [Facet.from_vertices(pts[list(tri)], orient_upward=True) for tri in sorted(triangles)]
    logger.info("triangulated %d points into %d facets", len(pts), len(facets))
    return facets


# ============================================================================
# Mesh ingestion
# ============================================================================

def gaussian_hill_points(lower: float = 25.0, upper: float = 65.0, samples: int = 14,
                         height: float = 40.0, center: Tuple[float, float] = (45.0, 45.0),
                         spread: float = 160.0) -> np.ndarray:
    """Uniform grid samples of h*exp(-((x-cx)^2 + (y-cy)^2)/spread)."""
    axis = np.linspace(lower, upper, samples)
    xx, yy = np.meshgrid(axis, axis, indexing='ij')
    zz = height * np.exp(-((xx - center[0]) ** 2 + (yy - center[1]) ** 2) / spread)
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def _read_rows(path: Path, width: int) -> List[List[float]]:
    rows = []
    with open(path, 'r', newline='') as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].strip().startswith('#'):
                continue
            try:
                values = [float(v) for v in row]
            except ValueError as e:
                raise GeometryError(f"{path}:{lineno}: {e}") from e
            if len(values) != width:
                raise GeometryError(f"{path}:{lineno}: expected {width} values, got {len(values)}")
            rows.append(values)
    return rows


def load_triangle_soup(path) -> List[Facet]:
    """One facet per line: x1,y1,z1,x2,y2,z2,x3,y3,z3."""
    return [Facet.from_vertices(np.reshape(row, (3, 3))) for row in _read_rows(Path(path), 9)]


def load_point_cloud(path) -> np.ndarray:
    return np.array(_read_rows(Path(path), 3)).reshape(-1, 3)


def write_point_cloud(path, points: np.ndarray) -> None:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        for p in np.asarray(points, dtype=float):
            writer.writerow([repr(float(v)) for v in p])


def write_triangle_soup(path, facets: Sequence[Facet], flags: Optional[Sequence[bool]] = None) -> None:
    """Triangle soup; an optional trailing 0/1 column marks covered facets."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        for i, facet in enumerate(facets):
            row = [repr(float(v)) for v in facet.vertices.reshape(-1)]
            if flags is not None:
                row.append(str(int(bool(flags[i]))))
            writer.writerow(row)


def load_facet_subset(path) -> List[int]:
    """One 0-based facet index per line."""
    indices = []
    with open(path, 'r') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            try:
                indices.append(int(line))
            except ValueError as e:
                raise GeometryError(f"{path}:{lineno}: bad facet index '{line}'") from e
    return indices


def write_facet_subset(path, indices: Sequence[int]) -> None:
    with open(path, 'w') as f:
        f.write(''.join(f"{i}\n" for i in indices))


def select_facets(facets: Sequence[Facet], count: int, c: float, h_fov: float, edge_length: float,
                  keep_out: Optional[ConvexPolytope] = None, max_tilt: float = np.radians(60.0),
                  compact: bool = False) -> List[int]:
    """Deterministic facet subset whose waypoints clear `keep_out`.

    Candidates must face upward within `max_tilt` and have waypoint cubes
    entirely outside `keep_out` (inflated by half an edge). Among them the
    flattest facet is taken first, then greedily the candidate farthest from
    those already chosen, or nearest to the first one when `compact`.
    """
    candidates = []
    for i, facet in enumerate(facets):
        tilt = np.arccos(np.clip(facet.unit_normal[2], -1.0, 1.0))
        if tilt > max_tilt:
            continue
        if keep_out is not None:
            wp = make_waypoint(facet, c, h_fov, edge_length, i)
            clearance = keep_out.offsets + 0.5 * edge_length * np.abs(keep_out.normals).sum(axis=1)
            if np.all(keep_out.normals @ wp.centroid <= clearance):
                continue
        candidates.append((tilt, i))
    if len(candidates) < count:
        raise GeometryError(f"only {len(candidates)} facets qualify, {count} requested")
    candidates.sort()
    chosen = [candidates[0][1]]
    if compact:
        first = facets[chosen[0]].centroid
        rest = sorted((np.linalg.norm(facets[i].centroid - first), i) for _, i in candidates[1:])
        return chosen + [i for _, i in rest[:count - 1]]
    while len(chosen) < count:
        best, best_gap = None, -1.0
        for _, i in candidates:
            if i in chosen:
                continue
            gap = min(np.linalg.norm(facets[i].centroid - facets[j].centroid) for j in chosen)
            if gap > best_gap + 1e-12:
                best, best_gap = i, gap
        chosen.append(best)
    return chosen
