"""Moving triangulations: benchmark geometry, labels, motion, point location, I/O.

A :class:`Mesh` is immutable.  Moving it returns a new instance that shares
the connectivity (and the derived edge tables) of the original, so the
topology-dependent caches built by :mod:`cfsi.fespace` remain valid for the
whole run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path

import numpy as np
import triangle

__all__ = [
    "Region",
    "Boundary",
    "GeometryParams",
    "Mesh",
    "QualityReport",
    "PointLocator",
    "GeometryError",
    "TanglingError",
    "MeshParseError",
    "generate_benchmark_mesh",
    "rectangle_mesh",
    "move_mesh",
    "validate_mesh",
    "locate_point",
    "save_mesh",
    "load_mesh",
]

# Barycentric containment tolerance.
LOCATE_TOL = 1e-10


class Region(IntEnum):
    FLUID = 0
    SOLID = 1

    @property
    def label(self) -> str:
        return self.name.capitalize()


class Boundary(IntEnum):
    INLET = 1
    OUTLET = 2
    WALL = 3
    CYLINDER = 4
    INTERFACE = 5

    @property
    def label(self) -> str:
        return self.name.capitalize()


class GeometryError(ValueError):
    """Infeasible benchmark geometry."""


class TanglingError(RuntimeError):
    """A mesh motion produced a triangle with non-positive area."""

    def __init__(self, triangle_id: int, area: float):
        super().__init__(f"triangle {triangle_id} has non-positive area {area:.3e}")
        self.triangle_id = int(triangle_id)
        self.area = float(area)


class MeshParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class GeometryParams:
    """Channel with a rigid cylinder and an elastic flag attached behind it."""

    L: float = 2.5
    H: float = 0.41
    cx: float = 0.2
    cy: float = 0.2
    r: float = 0.05
    l: float = 0.35
    h: float = 0.02

    @property
    def A0(self) -> tuple[float, float]:
        """Trailing-edge control point of the flag."""
        return (self.cx + self.r + self.l, self.cy)

    def check(self) -> None:
        problems = []
        if not self.r > 0:
            problems.append("r > 0 required")
        if not self.cx - self.r > 0:
            problems.append("cylinder crosses the inlet")
        if not (0 < self.cy - self.r and self.cy + self.r < self.H):
            problems.append("cylinder crosses a wall")
        if not self.cx + self.r + self.l < self.L:
            problems.append("flag leaves the channel")
        if not (0 < self.cy - self.h / 2 and self.cy + self.h / 2 < self.H):
            problems.append("flag band crosses a wall")
        if not (0 < self.h < 2 * self.r and self.l > 0):
            problems.append("flag must be thinner than the cylinder and have positive length")
        if problems:
            raise GeometryError("; ".join(problems))


@dataclass(frozen=True)
class QualityReport:
    min_area: float
    min_angle: float
    inverted_count: int

    @property
    def ok(self) -> bool:
        return self.inverted_count == 0


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with per-triangle regions and labelled boundary edges.

    ``boundary_edges`` lists vertex pairs for outer boundary edges and for the
    fluid/solid interface; ``boundary_labels`` holds the matching
    :class:`Boundary` codes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    _topology: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "region", np.ascontiguousarray(self.region, dtype=np.int8))
        be = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "boundary_edges", be)
        object.__setattr__(
            self, "boundary_labels", np.asarray(self.boundary_labels, dtype=np.int8).reshape(-1)
        )
        for arr in (self.vertices, self.triangles, self.region, self.boundary_edges, self.boundary_labels):
            arr.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    # -- topology (shared between moved copies) ---------------------------------

    def _topo(self, key):
        if key not in self._topology:
            self._build_topology()
        return self._topology[key]

    def _build_topology(self) -> None:
        t = self.triangles
        local = np.array([[0, 1], [1, 2], [2, 0]])
        all_edges = t[:, local].reshape(-1, 2)
        key = np.sort(all_edges, axis=1)
        nv = max(self.n_vertices, 1)
        code = key[:, 0] * nv + key[:, 1]
        _, first, inverse = np.unique(code, return_index=True, return_inverse=True)
        # Number edges by first appearance in triangle order.
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        tri_edges = rank[inverse].reshape(-1, 3)
        edges = key[first[order]]
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        eid = tri_edges.reshape(-1)
        order = np.argsort(eid, kind="stable")
        tri_of = order // 3
        first = np.ones(len(order), dtype=bool)
        first[1:] = eid[order][1:] != eid[order][:-1]
        edge_tris[eid[order][first], 0] = tri_of[first]
        edge_tris[eid[order][~first], 1] = tri_of[~first]
        self._topology.update(edges=edges, tri_edges=tri_edges, edge_tris=edge_tris)

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) vertex pairs, one row per unique edge (the P2 node table)."""
        return self._topo("edges")

    @property
    def tri_edges(self) -> np.ndarray:
        """(nt, 3) edge ids of local edges (0,1), (1,2), (2,0)."""
        return self._topo("tri_edges")

    @property
    def edge_triangles(self) -> np.ndarray:
        """(ne, 2) adjacent triangles; -1 where the edge lies on the boundary."""
        return self._topo("edge_tris")

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Edge ids for an array of vertex pairs (order-insensitive)."""
        if "edge_lookup" not in self._topology:
            nv = max(self.n_vertices, 1)
            codes = self.edges[:, 0] * nv + self.edges[:, 1]
            order = np.argsort(codes)
            self._topology["edge_lookup"] = (codes[order], order)
        codes, order = self._topology["edge_lookup"]
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        q = pairs[:, 0] * max(self.n_vertices, 1) + pairs[:, 1]
        pos = np.searchsorted(codes, q)
        pos = np.minimum(pos, len(codes) - 1)
        if len(q) and not np.all(codes[pos] == q):
            raise KeyError("pair is not an edge of the mesh")
        return order[pos]

    @property
    def midpoints(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (self.vertices[e[:, 0]] + self.vertices[e[:, 1]])

    @property
    def nodes(self) -> np.ndarray:
        """P2 node coordinates: vertices first, then edge midpoints."""
        return np.vstack([self.vertices, self.midpoints])

    # -- geometry ---------------------------------------------------------------

    @cached_property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @cached_property
    def locator(self) -> "PointLocator":
        return PointLocator(self)

    def labelled_vertices(self, label: Boundary) -> np.ndarray:
        return np.unique(self.boundary_edges[self.boundary_labels == label])

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """Same connectivity and labels, new coordinates."""
        return Mesh(
            vertices,
            self.triangles,
            self.region,
            self.boundary_edges,
            self.boundary_labels,
            _topology=self._topology,
        )

    def interface_edges_from_regions(self) -> np.ndarray:
        """Edges shared by one fluid and one solid triangle, as sorted pairs."""
        et = self.edge_triangles
        inner = et[:, 1] >= 0
        r0 = np.where(inner, self.region[et[:, 0]], -1)
        r1 = np.where(inner, self.region[np.maximum(et[:, 1], 0)], -1)
        mask = inner & (r0 != r1)
        return self.edges[mask]


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------


class PointLocator:
    """Uniform background grid of cells listing the triangles that overlap them."""

    def __init__(self, mesh: Mesh, cell_factor: float = 2.0):
        self.mesh = mesh
        v = mesh.vertices
        p = v[mesh.triangles]
        lo = p.min(axis=1)
        hi = p.max(axis=1)
        self.origin = v.min(axis=0)
        extent = np.maximum(v.max(axis=0) - self.origin, 1e-300)
        diam = float(np.mean(np.max(hi - lo, axis=1))) if len(p) else 1.0
        cell = cell_factor * diam
        self.shape = np.maximum(np.ceil(extent / cell).astype(int), 1)
        self.cell = extent / self.shape
        ilo = self._cell_ij(lo)
        ihi = self._cell_ij(hi)
        nx = ihi[:, 0] - ilo[:, 0] + 1
        ny = ihi[:, 1] - ilo[:, 1] + 1
        counts = nx * ny
        tri = np.repeat(np.arange(len(p)), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        ci = ilo[tri, 0] + offs % nx[tri]
        cj = ilo[tri, 1] + offs // nx[tri]
        flat = ci * self.shape[1] + cj
        order = np.argsort(flat, kind="stable")
        self.cell_tris = tri[order]
        self.cell_start = np.searchsorted(flat[order], np.arange(self.shape[0] * self.shape[1] + 1))
        # Inverse affine maps: bary[1:] = Minv @ (x - p0).
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.stack(
                [np.stack([e2[:, 1], -e2[:, 0]], -1), np.stack([-e1[:, 1], e1[:, 0]], -1)], 1
            ) / det[:, None, None]
        self.p0 = p[:, 0]
        self.inv = inv
        self._boundary = None

    def _cell_ij(self, x: np.ndarray) -> np.ndarray:
        ij = np.floor((x - self.origin) / self.cell).astype(int)
        return np.clip(ij, 0, self.shape - 1)

    def barycentric(self, tris: np.ndarray, x: np.ndarray) -> np.ndarray:
        d = x - self.p0[tris]
        b12 = np.einsum("nij,nj->ni", self.inv[tris], d)
        return np.column_stack([1.0 - b12.sum(axis=1), b12])

    def locate(self, points: np.ndarray, tol: float = LOCATE_TOL):
        """Vectorised location. Returns ``(tri, bary)``; ``tri == -1`` marks Outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        tri_out = np.full(n, -1, dtype=np.int64)
        bary_out = np.zeros((n, 3))
        if n == 0:
            return tri_out, bary_out
        slack = tol * self.cell
        inside_box = np.all(
            (pts >= self.origin - slack) & (pts <= self.origin + self.cell * self.shape + slack), axis=1
        )
        idx = np.nonzero(inside_box)[0]
        ij = self._cell_ij(pts[idx])
        flat = ij[:, 0] * self.shape[1] + ij[:, 1]
        start = self.cell_start[flat]
        counts = self.cell_start[flat + 1] - start
        pair_pt = np.repeat(idx, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        pair_tri = self.cell_tris[np.repeat(start, counts) + offs]
        bary = self.barycentric(pair_tri, pts[pair_pt])
        score = bary.min(axis=1)
        ok = score >= -tol
        pair_pt, pair_tri, bary, score = pair_pt[ok], pair_tri[ok], bary[ok], score[ok]
        # Keep the most interior candidate per point.
        order = np.lexsort((-score, pair_pt))
        pair_pt, pair_tri, bary = pair_pt[order], pair_tri[order], bary[order]
        first = np.ones(len(pair_pt), dtype=bool)
        first[1:] = pair_pt[1:] != pair_pt[:-1]
        tri_out[pair_pt[first]] = pair_tri[first]
        bary_out[pair_pt[first]] = bary[first]
        return tri_out, bary_out

    def _boundary_segments(self):
        if self._boundary is None:
            m = self.mesh
            et = m.edge_triangles
            on_bdry = et[:, 1] < 0
            self._boundary = (m.edges[on_bdry], et[on_bdry, 0])
        return self._boundary

    def project_to_boundary(self, points: np.ndarray):
        """Nearest point on the domain boundary, with its owning triangle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        edges, owner = self._boundary_segments()
        a = self.mesh.vertices[edges[:, 0]]
        b = self.mesh.vertices[edges[:, 1]]
        ab = b - a
        ll = np.einsum("ij,ij->i", ab, ab)
        out = np.empty_like(pts)
        tris = np.empty(len(pts), dtype=np.int64)
        for k, x in enumerate(pts):
            s = np.clip(np.einsum("ij,ij->i", x - a, ab) / ll, 0.0, 1.0)
            q = a + s[:, None] * ab
            j = int(np.argmin(np.einsum("ij,ij->i", q - x, q - x)))
            out[k] = q[j]
            tris[k] = owner[j]
        return out, tris

    def locate_or_project(self, points: np.ndarray, tol: float = LOCATE_TOL):
        """Locate points; those outside are replaced by their boundary projection."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri, bary = self.locate(pts, tol)
        out = np.nonzero(tri < 0)[0]
        if len(out):
            q, owner = self.project_to_boundary(pts[out])
            b = np.clip(self.barycentric(owner, q), 0.0, 1.0)
            b /= b.sum(axis=1, keepdims=True)
            tri[out] = owner
            bary[out] = b
        return tri, bary, out


def locate_point(mesh: Mesh, p, tol: float = LOCATE_TOL):
    """Triangle id and barycentric coordinates of ``p``, or ``None`` if outside."""
    tri, bary = mesh.locator.locate(np.asarray(p, dtype=float).reshape(1, 2), tol)
    if tri[0] < 0:
        return None
    return int(tri[0]), bary[0]


# ---------------------------------------------------------------------------
# quality and motion
# ---------------------------------------------------------------------------


def validate_mesh(mesh: Mesh) -> QualityReport:
    areas = mesh.areas
    p = mesh.vertices[mesh.triangles]
    if len(p) == 0:
        return QualityReport(0.0, 0.0, 0)
    angles = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, w) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        )
        angles.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return QualityReport(
        min_area=float(areas.min()),
        min_angle=float(np.min(angles)),
        inverted_count=int(np.count_nonzero(areas <= 0.0)),
    )


def move_mesh(mesh: Mesh, vertex_velocity: np.ndarray, dt: float) -> Mesh:
    """Displace every vertex by ``dt * velocity``; raise on tangling."""
    vel = np.asarray(vertex_velocity, dtype=float)
    if vel.shape != mesh.vertices.shape:
        raise ValueError(f"velocity shape {vel.shape} != vertices shape {mesh.vertices.shape}")
    moved = mesh.with_vertices(mesh.vertices + dt * vel)
    bad = np.nonzero(moved.areas <= 0.0)[0]
    if len(bad):
        raise TanglingError(bad[0], moved.areas[bad[0]])
    return moved


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _structure_distance(geom: GeometryParams, pts: np.ndarray) -> np.ndarray:
    d_cyl = np.abs(np.hypot(pts[:, 0] - geom.cx, pts[:, 1] - geom.cy) - geom.r)
    x0 = geom.cx + geom.r
    qx = np.clip(pts[:, 0], x0, x0 + geom.l)
    qy = np.clip(pts[:, 1], geom.cy - geom.h / 2, geom.cy + geom.h / 2)
    return np.minimum(d_cyl, np.hypot(pts[:, 0] - qx, pts[:, 1] - qy))


def generate_benchmark_mesh(
    geom: GeometryParams | None = None,
    level: int = 0,
    *,
    far_size: float = 0.06,
    grading: float = 0.12,
    min_angle: float = 30.0,
) -> Mesh:
    """Constrained Delaunay mesh of the channel minus the cylinder, flag included.

    The cylinder is a polygon of ``16 * 2**level`` chords between the flag's
    attachment corners; the flag occupies exactly
    ``[cx + r, cx + r + l] x [cy - h/2, cy + h/2]`` and its left edge is
    clamped to the cylinder.  Element size grows linearly with the distance
    from the cylinder/flag up to ``far_size / 2**level``.
    """
    geom = geom or GeometryParams()
    geom.check()
    if level < 0:
        raise ValueError("level must be >= 0")
    scale = 2.0**-level
    n_arc = 16 * 2**level
    h_near = 2 * math.pi * geom.r / n_arc
    h_far = far_size * scale

    verts: list[tuple[float, float]] = []
    segs: list[tuple[int, int]] = []
    marks: list[int] = []

    def add(p) -> int:
        verts.append((float(p[0]), float(p[1])))
        return len(verts) - 1

    def chain(ids, label, closed=False):
        n = len(ids)
        for k in range(n if closed else n - 1):
            segs.append((ids[k], ids[(k + 1) % n]))
            marks.append(int(label))

    L, H = geom.L, geom.H
    corners = [add((0, 0)), add((L, 0)), add((L, H)), add((0, H))]
    for (a, b), lab in zip(
        [(0, 1), (1, 2), (2, 3), (3, 0)],
        [Boundary.WALL, Boundary.OUTLET, Boundary.WALL, Boundary.INLET],
    ):
        chain([corners[a], corners[b]], lab)

    x0 = geom.cx + geom.r
    yb, yt = geom.cy - geom.h / 2, geom.cy + geom.h / 2
    theta = math.asin(geom.h / 2 / geom.r)
    angles = np.linspace(theta, 2 * math.pi - theta, n_arc + 1)[1:-1]
    top = add((x0, yt))
    arc = [add((geom.cx + geom.r * math.cos(a), geom.cy + geom.r * math.sin(a))) for a in angles]
    bot = add((x0, yb))
    mid = add((x0, geom.cy))
    chain([top, *arc, bot, mid], Boundary.CYLINDER, closed=True)

    n_flag = max(2, int(round(geom.l / h_near)))
    xs = np.linspace(x0, x0 + geom.l, n_flag + 1)[1:]
    upper = [top] + [add((x, yt)) for x in xs]
    a_pt = add(geom.A0)
    lower = [add((x, yb)) for x in xs[::-1]] + [bot]
    chain(upper + [a_pt] + lower, Boundary.INTERFACE)

    pslg = {
        "vertices": np.array(verts),
        "segments": np.array(segs),
        "segment_markers": np.array(marks)[:, None],
        "holes": np.array([[geom.cx, geom.cy]]),
        "regions": np.array(
            [[0.5 * geom.cx, 0.5 * H, Region.FLUID, 0.0], [x0 + geom.l / 2, geom.cy, Region.SOLID, 0.0]]
        ),
    }
    opts = f"pq{min_angle:g}A"
    out = triangle.triangulate(pslg, opts + f"a{0.433 * h_far**2:.12g}")
    for _ in range(8):
        centroids = out["vertices"][out["triangles"]].mean(axis=1)
        size = np.minimum(h_near + grading * scale * _structure_distance(geom, centroids), h_far)
        n_before = len(out["triangles"])
        out["triangle_max_area"] = 0.433 * size**2
        out = triangle.triangulate(out, "r" + opts + "a")
        if len(out["triangles"]) == n_before:
            break

    tris = out["triangles"].astype(np.int64)
    region = out["triangle_attributes"][:, 0].round().astype(np.int8)
    mesh = Mesh(
        out["vertices"],
        tris,
        region,
        out["segments"],
        out["segment_markers"].reshape(-1),
    )
    if np.any(mesh.areas <= 0):
        raise GeometryError("generator produced inverted triangles")
    return mesh


def rectangle_mesh(
    L: float,
    H: float,
    nx: int,
    ny: int,
    *,
    labels: dict[str, Boundary] | None = None,
    pattern: str = "alternating",
    solid_box: tuple[float, float, float, float] | None = None,
    origin: tuple[float, float] = (0.0, 0.0),
) -> Mesh:
    """Structured triangulation of ``[0, L] x [0, H]`` (shifted by ``origin``).

    ``labels`` maps the sides ``left/right/bottom/top`` to boundary labels
    (default: Inlet, Outlet, Wall, Wall).  With ``pattern='alternating'`` the
    diagonals flip in a checkerboard, which makes the mesh mirror-symmetric
    for even ``nx``/``ny``.  Cells whose centre lies in ``solid_box``
    ``(x0, x1, y0, y1)`` are Solid; the Interface edges are labelled.
    """
    labels = {
        "left": Boundary.INLET,
        "right": Boundary.OUTLET,
        "bottom": Boundary.WALL,
        "top": Boundary.WALL,
        **(labels or {}),
    }
    xs = origin[0] + np.linspace(0.0, L, nx + 1)
    ys = origin[1] + np.linspace(0.0, H, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris, region = [], []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            flip = pattern == "alternating" and (i + j) % 2 == 1
            cell = [(a, b, d), (b, c, d)] if flip else [(a, b, c), (a, c, d)]
            xm, ym = (xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2
            solid = solid_box is not None and (
                solid_box[0] < xm < solid_box[1] and solid_box[2] < ym < solid_box[3]
            )
            for t in cell:
                tris.append(t)
                region.append(Region.SOLID if solid else Region.FLUID)

    edges, elabels = [], []
    for i in range(nx):
        edges += [(vid(i, 0), vid(i + 1, 0)), (vid(i + 1, ny), vid(i, ny))]
        elabels += [labels["bottom"], labels["top"]]
    for j in range(ny):
        edges += [(vid(nx, j), vid(nx, j + 1)), (vid(0, j + 1), vid(0, j))]
        elabels += [labels["right"], labels["left"]]
    mesh = Mesh(vertices, np.array(tris), np.array(region), np.array(edges), np.array(elabels))
    iface = mesh.interface_edges_from_regions()
    if len(iface):
        mesh = Mesh(
            vertices,
            mesh.triangles,
            mesh.region,
            np.vstack([mesh.boundary_edges, iface]),
            np.concatenate([mesh.boundary_labels, np.full(len(iface), Boundary.INTERFACE)]),
        )
    return mesh


# ---------------------------------------------------------------------------
# native text format
# ---------------------------------------------------------------------------

_HEADER = "cfsi-mesh v1"
_REGION_BY_NAME = {r.label: r for r in Region}
_BOUNDARY_BY_NAME = {b.label: b for b in Boundary}


def save_mesh(mesh: Mesh, path) -> None:
    lines = [_HEADER, f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    for (i, j, k), r in zip(mesh.triangles.tolist(), mesh.region.tolist()):
        lines.append(f"{i} {j} {k} {Region(r).label}")
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    for (i, j), b in zip(mesh.boundary_edges.tolist(), mesh.boundary_labels.tolist()):
        lines.append(f"{i} {j} {Boundary(b).label}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    lines = Path(path).read_text().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError(pos + 1, "unexpected end of file")
        pos += 1
        return lines[pos - 1].split()

    def section(name):
        tok = next_line()
        if len(tok) != 2 or tok[0] != name or not tok[1].isdigit():
            raise MeshParseError(pos, f"expected '{name} <count>'")
        return int(tok[1])

    if not lines or lines[0].strip() != _HEADER:
        raise MeshParseError(1, f"missing header '{_HEADER}'")
    pos = 1
    nv = section("vertices")
    vertices = np.empty((nv, 2))
    for k in range(nv):
        tok = next_line()
        try:
            if len(tok) != 2:
                raise ValueError
            vertices[k] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshParseError(pos, "expected 'x y'") from None

    def indices(tok, n):
        try:
            idx = [int(t) for t in tok[:n]]
        except ValueError:
            raise MeshParseError(pos, "bad vertex index") from None
        if any(i < 0 or i >= nv for i in idx):
            raise MeshParseError(pos, "vertex index out of range")
        return idx

    nt = section("triangles")
    tris = np.empty((nt, 3), dtype=np.int64)
    region = np.empty(nt, dtype=np.int8)
    for k in range(nt):
        tok = next_line()
        if len(tok) != 4 or tok[3] not in _REGION_BY_NAME:
            raise MeshParseError(pos, "expected 'i j k Fluid|Solid'")
        tris[k] = indices(tok, 3)
        region[k] = _REGION_BY_NAME[tok[3]]
    nb = section("boundary")
    edges = np.empty((nb, 2), dtype=np.int64)
    labels = np.empty(nb, dtype=np.int8)
    for k in range(nb):
        tok = next_line()
        if len(tok) != 3 or tok[2] not in _BOUNDARY_BY_NAME:
            raise MeshParseError(pos, "expected 'i j <label>'")
        edges[k] = indices(tok, 2)
        labels[k] = _BOUNDARY_BY_NAME[tok[2]]
    for rest in lines[pos:]:
        pos += 1
        if rest.strip():
            raise MeshParseError(pos, "trailing content")
    return Mesh(vertices, tris, region, edges, labels)
