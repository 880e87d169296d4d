"""VTK snapshots, probe time series, state dumps and line profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fespace import DofMap, Field, Space, build_spaces, evaluate
from .mesh import Mesh

__all__ = [
    "ProbeSeries",
    "LineProfile",
    "write_vtk_snapshot",
    "read_vtk_snapshot",
    "write_probe_series",
    "read_probe_series",
    "extract_line_profile",
    "profile_from_vtk",
    "save_state",
    "load_state",
    "write_profile_csv",
]


def _num(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# VTK legacy ASCII
# ---------------------------------------------------------------------------


def write_vtk_snapshot(mesh: Mesh, state, path, dofs: Optional[DofMap] = None) -> Path:
    """Write vertex values of ``state`` as a legacy ASCII unstructured grid.

    P2 midpoint values are dropped.  ``pressure_fluid_side`` takes the copy
    whose index equals the vertex index, which is the fluid-side copy on the
    interface.  Identical inputs give identical bytes.
    """
    path = Path(path)
    nv = mesh.n_vertices
    nt = mesh.n_triangles
    u = state.u.values[:nv]
    d = state.d.values[:nv]
    w = state.w.values[:nv]
    p = state.p.values[:nv]
    out = [
        "# vtk DataFile Version 3.0",
        f"cfsi snapshot t={_num(state.t)}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    out += [f"{_num(x)} {_num(y)} 0.0" for x, y in mesh.vertices.tolist()]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    out += [f"CELL_DATA {nt}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    out += [str(int(r)) for r in mesh.region.tolist()]
    out.append(f"POINT_DATA {nv}")
    out.append("VECTORS velocity double")
    out += [f"{_num(a)} {_num(b)} 0.0" for a, b in u.tolist()]
    out.append("VECTORS displacement double")
    out += [f"{_num(a)} {_num(b)} 0.0" for a, b in d.tolist()]
    for name, vals in (("microrotation", w), ("pressure_fluid_side", p)):
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_num(v) for v in vals.tolist()]
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


@dataclass
class VtkData:
    t: float
    points: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    point_data: dict = field(default_factory=dict)


def read_vtk_snapshot(path) -> VtkData:
    """Parse a file produced by :func:`write_vtk_snapshot`."""
    tokens = Path(path).read_text().split("\n")
    title = tokens[1]
    t = float(title.split("t=")[1]) if "t=" in title else math.nan
    i = 4
    n = int(tokens[i].split()[1])
    pts = np.array([[float(v) for v in tokens[i + 1 + k].split()[:2]] for k in range(n)])
    i += n + 1
    nt = int(tokens[i].split()[1])
    tris = np.array([[int(v) for v in tokens[i + 1 + k].split()[1:4]] for k in range(nt)], dtype=np.int64)
    i += nt + 1
    i += nt + 1  # CELL_TYPES
    region = np.array([int(tokens[i + 3 + k]) for k in range(nt)], dtype=np.int8)
    i += 3 + nt
    data = {}
    i += 1  # POINT_DATA
    while i < len(tokens) and tokens[i].strip():
        head = tokens[i].split()
        if head[0] == "VECTORS":
            data[head[1]] = np.array([[float(v) for v in tokens[i + 1 + k].split()[:2]] for k in range(n)])
            i += 1 + n
        elif head[0] == "SCALARS":
            data[head[1]] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += 2 + n
        else:
            raise ValueError(f"unexpected VTK section {head[0]!r}")
    return VtkData(t, pts, tris, region, data)


# ---------------------------------------------------------------------------
# probe series
# ---------------------------------------------------------------------------


@dataclass
class ProbeSeries:
    """Per-step control-point displacement plus optional named columns."""

    t: list = field(default_factory=list)
    dxA: list = field(default_factory=list)
    dyA: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)

    def append(self, t: float, dA, extra: Optional[dict] = None) -> None:
        if self.t and not t > self.t[-1]:
            raise ValueError(f"time {t} does not increase past {self.t[-1]}")
        self.t.append(float(t))
        self.dxA.append(float(dA[0]))
        self.dyA.append(float(dA[1]))
        for k, v in (extra or {}).items():
            self.columns.setdefault(k, []).append(float(v))

    def __len__(self) -> int:
        return len(self.t)

    def arrays(self):
        return np.asarray(self.t), np.asarray(self.dxA), np.asarray(self.dyA)


def write_probe_series(series: ProbeSeries, path, failure: Optional[str] = None) -> Path:
    """CSV ``t,dxA,dyA[,columns]`` in full double precision.

    ``failure`` appends a ``# FAILED ...`` marker line.
    """
    if len(series) == 0:
        raise ValueError("empty probe series")
    t = np.asarray(series.t)
    if np.any(np.diff(t) <= 0):
        raise ValueError("probe series times must be strictly increasing")
    names = list(series.columns)
    for k in names:
        if len(series.columns[k]) != len(t):
            raise ValueError(f"column {k!r} length mismatch")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "dxA", "dyA", *names])
        for i in range(len(t)):
            row = [series.t[i], series.dxA[i], series.dyA[i], *(series.columns[k][i] for k in names)]
            w.writerow([_num(v) for v in row])
        if failure:
            fh.write(f"# FAILED {failure}\n")
    return path


def read_probe_series(path) -> tuple[ProbeSeries, Optional[str]]:
    """Inverse of :func:`write_probe_series`; also returns the failure marker."""
    series = ProbeSeries()
    failure = None
    with Path(path).open() as fh:
        header = next(csv.reader(fh))
        names = header[3:]
        for line in fh:
            if line.startswith("# FAILED"):
                failure = line[len("# FAILED"):].strip()
                continue
            vals = [float(v) for v in line.strip().split(",")]
            series.append(vals[0], vals[1:3], dict(zip(names, vals[3:])))
    return series, failure


# ---------------------------------------------------------------------------
# line profiles and state dumps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LineProfile:
    """Samples along ``x = x0``; NaN rows are outside the fluid/solid domain."""

    x0: float
    y: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    omega: np.ndarray

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.y.tolist(), self.ux.tolist(), self.uy.tolist(), self.omega.tolist()))

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.ux)


def extract_line_profile(mesh: Mesh, state, x0: float, n: int, dofs: Optional[DofMap] = None) -> LineProfile:
    """Sample velocity and microrotation at ``n`` equispaced heights.

    The heights span the vertical extent of the mesh.  Points in holes (the
    cylinder) are reported as NaN.
    """
    xmin, ymin = mesh.vertices.min(axis=0)
    xmax, ymax = mesh.vertices.max(axis=0)
    if not (xmin - 1e-12 <= x0 <= xmax + 1e-12):
        raise ValueError(f"x0 = {x0} lies outside [{xmin}, {xmax}]")
    if n < 2:
        raise ValueError("need at least two samples")
    dofs = dofs if dofs is not None else build_spaces(mesh)
    y = np.linspace(ymin, ymax, n)
    pts = np.column_stack([np.full(n, float(x0)), y])
    u = evaluate(state.u, dofs, mesh, pts, project=False)
    w = evaluate(state.w, dofs, mesh, pts, project=False)
    return LineProfile(float(x0), y, u[:, 0], u[:, 1], w)


def profile_from_vtk(data: VtkData, x0: float, n: int) -> LineProfile:
    """Piecewise-linear profile from a vertex-only VTK snapshot."""
    from .timeloop import State  # local import keeps output independent of timeloop

    mesh = Mesh(data.points, data.triangles, data.region, np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64))
    vel = _p1_to_p2(mesh, data.point_data["velocity"])
    om = _p1_to_p2(mesh, data.point_data["microrotation"][:, None])[:, 0]
    dofs = build_spaces_loose(mesh)
    zeros_p = Field(Space.PRESSURE_P1, np.zeros(dofs.n_pressure))
    state = State(data.t, Field(Space.VECTOR_P2, vel), Field(Space.SCALAR_P2, om), zeros_p,
                  Field(Space.VECTOR_P2, np.zeros_like(vel)))
    return extract_line_profile(mesh, state, x0, n, dofs)


def _p1_to_p2(mesh: Mesh, vertex_values: np.ndarray) -> np.ndarray:
    mid = 0.5 * (vertex_values[mesh.edges[:, 0]] + vertex_values[mesh.edges[:, 1]])
    return np.concatenate([vertex_values, mid])


def build_spaces_loose(mesh: Mesh) -> DofMap:
    """DOF map for a mesh read without boundary labels (evaluation only)."""
    from .mesh import Boundary

    iface = mesh.interface_edges_from_regions()
    labelled = Mesh(
        mesh.vertices, mesh.triangles, mesh.region,
        iface.reshape(-1, 2), np.full(len(iface), Boundary.INTERFACE),
    )
    return build_spaces(labelled)


def write_profile_csv(profile: LineProfile, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "u_x", "u_y", "omega"])
        for row in profile.rows():
            w.writerow(["nan" if math.isnan(v) else _num(v) for v in row])
    return path


def save_state(mesh: Mesh, state, path) -> Path:
    """Full-precision dump of mesh and P2/P1 coefficients (``.npz``)."""
    path = Path(path)
    np.savez_compressed(
        path,
        t=state.t,
        vertices=mesh.vertices,
        triangles=mesh.triangles,
        region=mesh.region,
        boundary_edges=mesh.boundary_edges,
        boundary_labels=mesh.boundary_labels,
        u=state.u.values,
        w=state.w.values,
        p=state.p.values,
        d=state.d.values,
    )
    return path


def load_state(path):
    """Return ``(mesh, state)`` from :func:`save_state` output."""
    from .timeloop import State

    with np.load(path) as z:
        mesh = Mesh(z["vertices"], z["triangles"], z["region"], z["boundary_edges"], z["boundary_labels"])
        state = State(
            float(z["t"]),
            Field(Space.VECTOR_P2, z["u"]),
            Field(Space.SCALAR_P2, z["w"]),
            Field(Space.PRESSURE_P1, z["p"]),
            Field(Space.VECTOR_P2, z["d"]),
        )
    return mesh, state
