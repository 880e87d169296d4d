"""P2/P1 Taylor-Hood spaces with an interface-discontinuous pressure.

Local node order on a triangle is the three vertices followed by the
midpoints of edges (0,1), (1,2), (2,0); it matches ``Mesh.tri_edges``.
Global P2 nodes are numbered vertices first, then edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .mesh import Boundary, Mesh, Region

__all__ = [
    "Space",
    "QuadratureRule",
    "DofMap",
    "Field",
    "SpaceError",
    "quadrature",
    "eval_basis",
    "build_spaces",
    "element_gradients",
    "evaluate",
    "interpolate",
    "interpolant",
    "field_norms",
    "CsrPattern",
    "csr_pattern",
]


class Space(str, Enum):
    VECTOR_P2 = "VectorP2"
    SCALAR_P2 = "ScalarP2"
    PRESSURE_P1 = "PressureP1"


class SpaceError(ValueError):
    """Inconsistent mesh labelling found while building the DOF maps."""


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,) summing to 1/2
    order: int


def _perms(a: float, w: float):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)], [w] * 3


def quadrature(order: int) -> QuadratureRule:
    """Symmetric rules on the reference triangle, exact to degree ``order``."""
    if order == 2:
        pts, wts = _perms(1.0 / 6.0, 1.0 / 3.0)
    elif order == 5:
        s15 = np.sqrt(15.0)
        pa, wa = _perms((6.0 - s15) / 21.0, (155.0 - s15) / 1200.0)
        pb, wb = _perms((6.0 + s15) / 21.0, (155.0 + s15) / 1200.0)
        pts = [(1 / 3, 1 / 3, 1 / 3)] + pa + pb
        wts = [9.0 / 40.0] + wa + wb
    else:
        raise ValueError(f"unsupported quadrature order {order}; use 2 or 5")
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), order)


# ---------------------------------------------------------------------------
# reference basis
# ---------------------------------------------------------------------------

_EDGES = ((0, 1), (1, 2), (2, 0))
# d(lambda_k)/d(xi, eta) on the reference triangle, lambda = (1 - xi - eta, xi, eta)
_DLAM_REF = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def _p2_values(lam: np.ndarray) -> np.ndarray:
    """(..., 3) barycentric -> (..., 6) P2 values."""
    vert = lam * (2.0 * lam - 1.0)
    edge = np.stack([4.0 * lam[..., i] * lam[..., j] for i, j in _EDGES], axis=-1)
    return np.concatenate([vert, edge], axis=-1)


def _p2_dlam(lam: np.ndarray) -> np.ndarray:
    """(..., 3) barycentric -> (..., 6, 3) derivatives with respect to each lambda."""
    out = np.zeros(lam.shape[:-1] + (6, 3))
    for k in range(3):
        out[..., k, k] = 4.0 * lam[..., k] - 1.0
    for e, (i, j) in enumerate(_EDGES):
        out[..., 3 + e, i] = 4.0 * lam[..., j]
        out[..., 3 + e, j] = 4.0 * lam[..., i]
    return out


def _p1_dlam(lam: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(3), lam.shape[:-1] + (3, 3)).copy()


def eval_basis(space: Space | str, bary) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and gradients with respect to reference coordinates (xi, eta).

    Vector P2 uses the scalar P2 basis for each component.
    """
    space = Space(space)
    lam = np.asarray(bary, dtype=float)
    if space is Space.PRESSURE_P1:
        return lam.copy(), _p1_dlam(lam) @ _DLAM_REF
    return _p2_values(lam), _p2_dlam(lam) @ _DLAM_REF


# ---------------------------------------------------------------------------
# DOF maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DofMap:
    """Connectivity of the P2 velocity/microrotation and P1 pressure spaces.

    The monolithic unknown vector is laid out in blocks
    ``[u_x (n), u_y (n), w (n), p (n_pressure)]`` with ``n`` P2 nodes.
    Interface vertices carry two pressure DOFs: the vertex index itself is the
    fluid-side copy, solid-side copies are appended after the vertices.
    """

    n_nodes: int
    n_vertices: int
    p2_cells: np.ndarray  # (nt, 6) global P2 node ids
    p1_cells: np.ndarray  # (nt, 3) pressure dof ids
    n_pressure: int
    pressure_vertex: np.ndarray  # (n_pressure,) vertex carrying each pressure dof
    pressure_side: np.ndarray  # (n_pressure,) Region of the copy
    interface_vertices: np.ndarray
    boundary_nodes: dict  # Boundary -> sorted P2 node ids

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_microrot(self) -> int:
        return self.n_nodes

    @property
    def n_total(self) -> int:
        return 3 * self.n_nodes + self.n_pressure

    @property
    def blocks(self) -> dict[str, slice]:
        n = self.n_nodes
        return {
            "ux": slice(0, n),
            "uy": slice(n, 2 * n),
            "u": slice(0, 2 * n),
            "w": slice(2 * n, 3 * n),
            "p": slice(3 * n, 3 * n + self.n_pressure),
        }

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """(nt, 21) monolithic indices: u_x(6), u_y(6), w(6), p(3)."""
        n = self.n_nodes
        c = self.p2_cells
        return np.hstack([c, c + n, c + 2 * n, self.p1_cells + 3 * n])

    def size(self, space: Space | str) -> int:
        space = Space(space)
        return self.n_pressure if space is Space.PRESSURE_P1 else self.n_nodes

    def nodes_on(self, *labels: Boundary) -> np.ndarray:
        parts = [self.boundary_nodes.get(Boundary(b), np.empty(0, dtype=np.int64)) for b in labels]
        return np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)


def build_spaces(mesh: Mesh) -> DofMap:
    labelled = mesh.boundary_edges[mesh.boundary_labels == Boundary.INTERFACE]
    topo = mesh.interface_edges_from_regions()
    a = {tuple(e) for e in np.sort(labelled, axis=1).tolist()}
    b = {tuple(e) for e in np.sort(topo, axis=1).tolist()}
    if a != b:
        raise SpaceError(
            f"interface labels disagree with regions: {len(a - b)} spurious, {len(b - a)} missing"
        )
    outer = mesh.boundary_labels != Boundary.INTERFACE
    if np.any(mesh.edge_triangles[mesh.edge_index(mesh.boundary_edges[outer]), 1] >= 0):
        raise SpaceError("an outer boundary label sits on an interior edge")

    nv = mesh.n_vertices
    p2_cells = np.hstack([mesh.triangles, nv + mesh.tri_edges])

    touches = np.zeros((nv, 2), dtype=bool)
    for r in (Region.FLUID, Region.SOLID):
        touches[np.unique(mesh.triangles[mesh.region == r]), r] = True
    iface = np.nonzero(touches.all(axis=1))[0]
    solid_copy = np.full(nv, -1, dtype=np.int64)
    solid_copy[iface] = nv + np.arange(len(iface))
    p1_cells = mesh.triangles.copy()
    solid_tris = mesh.region == Region.SOLID
    st = p1_cells[solid_tris]
    p1_cells[solid_tris] = np.where(solid_copy[st] >= 0, solid_copy[st], st)
    n_pressure = nv + len(iface)
    pressure_vertex = np.concatenate([np.arange(nv), iface])
    side = np.where(touches[:, Region.SOLID] & ~touches[:, Region.FLUID], Region.SOLID, Region.FLUID)
    pressure_side = np.concatenate([side, np.full(len(iface), Region.SOLID)]).astype(np.int8)

    bnodes = {}
    for lab in Boundary:
        edges = mesh.boundary_edges[mesh.boundary_labels == lab]
        if len(edges) == 0:
            continue
        mids = nv + mesh.edge_index(edges)
        bnodes[lab] = np.unique(np.concatenate([edges.ravel(), mids]))

    return DofMap(
        n_nodes=nv + len(mesh.edges),
        n_vertices=nv,
        p2_cells=p2_cells,
        p1_cells=p1_cells,
        n_pressure=n_pressure,
        pressure_vertex=pressure_vertex,
        pressure_side=pressure_side,
        interface_vertices=iface,
        boundary_nodes=bnodes,
    )


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Field:
    """Coefficients of a finite-element function.

    Vector fields hold an ``(n_nodes, 2)`` array, scalar fields a flat one.
    """

    space: Space
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "space", Space(self.space))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.space is Space.VECTOR_P2 and (self.values.ndim != 2 or self.values.shape[1] != 2):
            raise ValueError("VectorP2 coefficients must have shape (n_nodes, 2)")
        if self.space is not Space.VECTOR_P2 and self.values.ndim != 1:
            raise ValueError(f"{self.space.value} coefficients must be one-dimensional")

    @classmethod
    def zeros(cls, space: Space | str, dofs: DofMap) -> "Field":
        space = Space(space)
        shape = (dofs.n_nodes, 2) if space is Space.VECTOR_P2 else (dofs.size(space),)
        return cls(space, np.zeros(shape))

    def check(self, dofs: DofMap) -> None:
        if len(self.values) != dofs.size(self.space):
            raise ValueError(
                f"{self.space.value} field has {len(self.values)} coefficients, expected {dofs.size(self.space)}"
            )

    def copy(self) -> "Field":
        return Field(self.space, self.values.copy())


def interpolant(space: Space | str, dofs: DofMap, mesh: Mesh, func) -> Field:
    """Nodal interpolant of ``func(x, y)`` (vectorised over coordinate arrays)."""
    space = Space(space)
    if space is Space.PRESSURE_P1:
        xy = mesh.vertices[dofs.pressure_vertex]
    else:
        xy = mesh.nodes
    x, y = xy[:, 0], xy[:, 1]
    if space is Space.VECTOR_P2:
        fx, fy = func(x, y)
        return Field(space, np.column_stack(np.broadcast_arrays(np.asarray(fx, float), np.asarray(fy, float), x)[:2]))
    return Field(space, np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape).copy())


# ---------------------------------------------------------------------------
# element geometry and evaluation
# ---------------------------------------------------------------------------


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """(nt, 3, 2) constant gradients of the barycentric coordinates."""
    p = mesh.vertices[mesh.triangles]
    det = 2.0 * mesh.areas
    g = np.empty((mesh.n_triangles, 3, 2))
    for k in range(3):
        a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
        g[:, k, 0] = (a[:, 1] - b[:, 1]) / det
        g[:, k, 1] = (b[:, 0] - a[:, 0]) / det
    return g


def element_gradients(mesh: Mesh, bary: np.ndarray, space: Space | str = Space.SCALAR_P2) -> np.ndarray:
    """Physical basis gradients, shape (nt, nq, nb, 2), at barycentric points (nq, 3)."""
    glam = barycentric_gradients(mesh)
    dl = _p1_dlam(bary) if Space(space) is Space.PRESSURE_P1 else _p2_dlam(bary)
    return np.einsum("qbk,ekd->eqbd", dl, glam)


def _cell_values(field: Field, dofs: DofMap, tris: np.ndarray) -> np.ndarray:
    cells = dofs.p1_cells if field.space is Space.PRESSURE_P1 else dofs.p2_cells
    return field.values[cells[tris]]


def evaluate(field: Field, dofs: DofMap, mesh: Mesh, points, *, project: bool = True):
    """Evaluate ``field`` at many points.

    Points outside the mesh are moved to the nearest boundary point when
    ``project`` is true; otherwise their values are NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    loc = mesh.locator
    if project:
        tri, bary, _ = loc.locate_or_project(pts)
    else:
        tri, bary = loc.locate(pts)
    ok = tri >= 0
    basis = bary[:, :3] if field.space is Space.PRESSURE_P1 else _p2_values(bary)
    vals = _cell_values(field, dofs, np.where(ok, tri, 0))
    if field.space is Space.VECTOR_P2:
        out = np.einsum("nb,nbc->nc", basis, vals)
        out[~ok] = np.nan
    else:
        out = np.einsum("nb,nb->n", basis, vals)
        out[~ok] = np.nan
    return out


def interpolate(field: Field, dofs: DofMap, mesh: Mesh, p, *, project: bool = False):
    """Value of ``field`` at a single point; ``None`` outside unless projecting."""
    val = evaluate(field, dofs, mesh, np.asarray(p, dtype=float).reshape(1, 2), project=project)[0]
    if np.any(np.isnan(val)):
        return None
    return val if field.space is Space.VECTOR_P2 else float(val)


def field_norms(field: Field, dofs: DofMap, mesh: Mesh) -> dict[str, float]:
    """L2 norm, H1 seminorm and (vector fields) L2 norm of the divergence."""
    rule = quadrature(5)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    space = field.space
    if space is Space.PRESSURE_P1:
        phi = rule.points
    else:
        phi = _p2_values(rule.points)
    grads = element_gradients(mesh, rule.points, space)
    vals = _cell_values(field, dofs, np.arange(mesh.n_triangles))
    if space is Space.VECTOR_P2:
        fq = np.einsum("qb,ebc->eqc", phi, vals)
        gq = np.einsum("eqbd,ebc->eqcd", grads, vals)
        l2 = np.sum(w * np.sum(fq**2, axis=-1))
        h1 = np.sum(w * np.sum(gq**2, axis=(-1, -2)))
        div = np.sum(w * (gq[..., 0, 0] + gq[..., 1, 1]) ** 2)
        return {"L2": float(np.sqrt(l2)), "H1": float(np.sqrt(h1)), "div": float(np.sqrt(div))}
    fq = np.einsum("qb,eb->eq", phi, vals)
    gq = np.einsum("eqbd,eb->eqd", grads, vals)
    return {
        "L2": float(np.sqrt(np.sum(w * fq**2))),
        "H1": float(np.sqrt(np.sum(w * np.sum(gq**2, axis=-1)))),
    }


@dataclass(frozen=True)
class CsrPattern:
    """Scatter map from stacked element matrices to a fixed CSR structure."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    inverse: np.ndarray  # element entry -> CSR data slot
    rows: np.ndarray  # row of each CSR data slot
    diagonal: np.ndarray  # CSR data slot of (i, i)

    def scatter(self, element_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.inverse, weights=element_values.ravel(), minlength=len(self.indices))


def csr_pattern(dofs: DofMap) -> CsrPattern:
    """Sparsity of the monolithic matrix; cached on the DofMap (topology is fixed)."""
    cached = dofs.__dict__.get("_csr_pattern")
    if cached is not None:
        return cached
    ed = dofs.element_dofs
    k = ed.shape[1]
    n = dofs.n_total
    rows = np.broadcast_to(ed[:, :, None], (len(ed), k, k)).ravel()
    cols = np.broadcast_to(ed[:, None, :], (len(ed), k, k)).ravel()
    codes, inverse = np.unique(rows * n + cols, return_inverse=True)
    r = codes // n
    c = codes % n
    indptr = np.searchsorted(r, np.arange(n + 1))
    diagonal = np.flatnonzero(r == c)
    pattern = CsrPattern(n, indptr, c, inverse.reshape(-1), r, diagonal)
    dofs.__dict__["_csr_pattern"] = pattern
    return pattern
