"""Semi-implicit time stepping on a moving mesh.

One step convects the previous velocity and microrotation along
characteristics, solves the monolithic linear system once, accumulates the
displacement and moves the mesh: solid vertices with the new velocity, fluid
vertices with the harmonic extension of the interface velocity.
"""

from __future__ import annotations

import time
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    BoundaryConditions,
    PhysicalParams,
    SparseSystem,
    apply_boundary_conditions,
    assemble_system,
)
from .fespace import DofMap, Field, Space, build_spaces, element_gradients, evaluate, field_norms, quadrature
from .mesh import Boundary, Mesh, QualityReport, Region, TanglingError, move_mesh, validate_mesh

__all__ = [
    "State",
    "StepReport",
    "SolverError",
    "StepFailure",
    "characteristic_foot",
    "convect",
    "harmonic_extension",
    "update_displacement",
    "solve_linear",
    "available_backends",
    "mesh_velocity",
    "advance",
    "SimulationOutput",
    "run_simulation",
]

SOLVER_TOL = 1e-10


class SolverError(RuntimeError):
    """The linear solve failed or missed the residual tolerance."""


class StepFailure(RuntimeError):
    """A step aborted; ``report`` holds whatever diagnostics were collected."""

    def __init__(self, message: str, report: Optional["StepReport"] = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class State:
    """Solution at time ``t`` on the mesh it was computed on.

    ``mesh_velocity`` is the vertex velocity used for the most recent mesh
    motion, if any; the next step uses it as its ALE velocity.
    """

    t: float
    u: Field
    w: Field
    p: Field
    d: Field
    mesh_velocity: Optional[np.ndarray] = None

    @classmethod
    def rest(cls, dofs: DofMap, t: float = 0.0) -> "State":
        return cls(
            t,
            Field.zeros(Space.VECTOR_P2, dofs),
            Field.zeros(Space.SCALAR_P2, dofs),
            Field.zeros(Space.PRESSURE_P1, dofs),
            Field.zeros(Space.VECTOR_P2, dofs),
        )

    def check(self, dofs: DofMap) -> None:
        for f in (self.u, self.w, self.p, self.d):
            f.check(dofs)


@dataclass(frozen=True)
class StepReport:
    residual: float
    quality: Optional[QualityReport]
    divergence: float
    wall_time: float
    dt: float = 0.0


# ---------------------------------------------------------------------------
# characteristics
# ---------------------------------------------------------------------------


def characteristic_foot(x, u_n: Field, w_mesh: Field, mesh: Mesh, dt: float, dofs: Optional[DofMap] = None):
    """First-order foot ``x - dt (u_n(x) - w_mesh(x))`` of the characteristic.

    Accepts one point or an ``(n, 2)`` array.  With ``w_mesh = 0`` this is
    the Eulerian foot; with ``w_mesh = u_n`` it is ``x`` itself.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    dofs = dofs if dofs is not None else build_spaces(mesh)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    rel = evaluate(u_n, dofs, mesh, pts) - evaluate(w_mesh, dofs, mesh, pts)
    foot = pts - dt * rel
    return foot[0] if single else foot


def _nodal_relative_velocity(u_n: Field, w_mesh: Field) -> np.ndarray:
    return u_n.values - w_mesh.values


def convect(field_in: Field, u_n: Field, w_mesh: Field, mesh: Mesh, dofs: DofMap, dt: float) -> Field:
    """Nodal values of ``field_in`` composed with the characteristic map.

    Feet that leave the domain are projected onto the boundary.
    """
    if field_in.space is Space.PRESSURE_P1:
        raise ValueError("convect expects a P2 field")
    if not dt > 0:
        raise ValueError("dt must be positive")
    rel = _nodal_relative_velocity(u_n, w_mesh)
    moving = np.any(rel != 0.0, axis=1)
    out = field_in.values.copy()
    if np.any(moving):
        feet = mesh.nodes[moving] - dt * rel[moving]
        out[moving] = evaluate(field_in, dofs, mesh, feet, project=True)
    return Field(field_in.space, out)


# ---------------------------------------------------------------------------
# mesh velocity
# ---------------------------------------------------------------------------


def _fluid_laplacian(mesh: Mesh, dofs: DofMap) -> sp.csr_matrix:
    fluid = mesh.region == Region.FLUID
    rule = quadrature(5)
    G = element_gradients(mesh, rule.points)[fluid]
    wq = 2.0 * mesh.areas[fluid, None] * rule.weights[None, :]
    K = np.einsum("eq,eqid,eqjd->eij", wq, G, G)
    cells = dofs.p2_cells[fluid]
    rows = np.broadcast_to(cells[:, :, None], K.shape).ravel()
    cols = np.broadcast_to(cells[:, None, :], K.shape).ravel()
    return sp.csr_matrix((K.ravel(), (rows, cols)), shape=(dofs.n_nodes, dofs.n_nodes))


def harmonic_extension(mesh: Mesh, dofs: DofMap, interface_velocity) -> Field:
    """Componentwise discrete Laplace extension of interface data into the fluid.

    Parameters
    ----------
    interface_velocity : Field or array_like
        Either a VectorP2 field (only its Interface node values are read) or
        an array of shape (m, 2) aligned with ``dofs.boundary_nodes[INTERFACE]``.

    Returns
    -------
    Field
        VectorP2 field equal to the extension on fluid nodes, to the data on
        the interface and zero on nodes belonging only to the solid.
    """
    iface = dofs.boundary_nodes.get(Boundary.INTERFACE, np.empty(0, dtype=np.int64))
    if isinstance(interface_velocity, Field):
        data = interface_velocity.values[iface]
    else:
        data = np.asarray(interface_velocity, dtype=float).reshape(-1, 2)
        if len(data) != len(iface):
            raise ValueError(f"expected {len(iface)} interface values, got {len(data)}")
    out = np.zeros((dofs.n_nodes, 2))
    if len(iface) == 0 or not np.any(data):
        out[iface] = data
        return Field(Space.VECTOR_P2, out)

    fluid_nodes = np.unique(dofs.p2_cells[mesh.region == Region.FLUID])
    fixed = np.zeros(dofs.n_nodes, dtype=bool)
    for lab, nodes in dofs.boundary_nodes.items():
        fixed[nodes] = True
    free = np.setdiff1d(fluid_nodes, np.nonzero(fixed)[0])
    K = _fluid_laplacian(mesh, dofs)
    known = np.zeros((dofs.n_nodes, 2))
    known[iface] = data
    Kff = K[free][:, free].tocsc()
    rhs = -(K[free] @ known)
    try:
        lu = spla.splu(Kff)
    except RuntimeError as exc:
        raise SolverError(f"harmonic extension is singular: {exc}") from exc
    sol = lu.solve(rhs)
    out[iface] = data
    out[free] = sol
    return Field(Space.VECTOR_P2, out)


def _vertex_to_p2(mesh: Mesh, vertex_values: np.ndarray) -> np.ndarray:
    """P2 nodal values of the piecewise-linear interpolant of vertex data."""
    mid = 0.5 * (vertex_values[mesh.edges[:, 0]] + vertex_values[mesh.edges[:, 1]])
    return np.concatenate([vertex_values, mid])


def mesh_velocity(mesh: Mesh, dofs: DofMap, u: Field) -> np.ndarray:
    """Vertex velocities: ``u`` on solid vertices, harmonic extension elsewhere."""
    nv = mesh.n_vertices
    vel = np.zeros((nv, 2))
    solid = mesh.region == Region.SOLID
    if not np.any(solid):
        return vel
    ext = harmonic_extension(mesh, dofs, u)
    vel[:] = ext.values[:nv]
    solid_vertices = np.unique(mesh.triangles[solid])
    vel[solid_vertices] = u.values[solid_vertices]
    return vel


def update_displacement(d_n: Field, u_next: Field, dt: float) -> Field:
    if d_n.values.shape != u_next.values.shape:
        raise ValueError("d_n and u_next live on different spaces")
    return Field(d_n.space, d_n.values + dt * u_next.values)


# ---------------------------------------------------------------------------
# solve and step
# ---------------------------------------------------------------------------


def _load_pardiso():
    """Import pypardiso, pointing it at the pip-installed MKL runtime if needed."""
    import os

    try:
        import pypardiso
    except ImportError:
        if "PYPARDISO_MKL_RT" in os.environ:
            raise
        from importlib import metadata

        try:
            files = metadata.files("mkl") or []
        except metadata.PackageNotFoundError:
            raise ImportError("pypardiso needs the MKL runtime (pip install mkl)") from None
        libs = sorted((f for f in files if "libmkl_rt" in f.name), key=lambda f: len(str(f)))
        if not libs:
            raise
        os.environ["PYPARDISO_MKL_RT"] = str(libs[0].locate())
        import pypardiso
    return pypardiso


@lru_cache(maxsize=None)
def _has_pardiso() -> bool:
    try:
        _load_pardiso()
    except (ImportError, OSError):
        return False
    return True


class _PardisoCache:
    """PARDISO handle that keeps the symbolic analysis while the pattern is fixed.

    Mesh motion changes matrix values but never the sparsity, so the
    ordering from the first step is reused and later steps only factor
    numerically (phase 23).
    """

    def __init__(self):
        self.solver = None
        self.indptr = None
        self.indices = None

    def solve(self, A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
        pypardiso = _load_pardiso()
        A.sort_indices()
        same = (
            self.solver is not None
            and np.array_equal(self.indptr, A.indptr)
            and np.array_equal(self.indices, A.indices)
        )
        if not same:
            self.solver = pypardiso.PyPardisoSolver()
            self.solver._check_A(A)
            self.solver.set_phase(11)
            self.solver._call_pardiso(A, np.zeros((A.shape[0], 1)))
            self.indptr, self.indices = A.indptr.copy(), A.indices.copy()
        self.solver._check_A(A)
        self.solver.set_phase(23)
        x = self.solver._call_pardiso(A, np.asfortranarray(b.reshape(-1, 1)))
        return x.ravel()

    def reset(self):
        self.solver = self.indptr = self.indices = None


_PARDISO = _PardisoCache()


def available_backends() -> list[str]:
    return ["direct", "gmres"] + (["pardiso"] if _has_pardiso() else [])


def solve_linear(system: SparseSystem, backend: str = "direct", tol: float = SOLVER_TOL):
    """Solve ``system`` and return ``(x, relative_residual)``.

    Backends: ``direct`` (SuperLU), ``pardiso`` (MKL PARDISO through the
    optional pypardiso package), ``gmres`` (restarted GMRES with an
    incomplete-LU preconditioner), and ``auto`` (PARDISO when installed,
    SuperLU otherwise).
    """
    b = system.rhs
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0
    if backend == "auto":
        backend = "pardiso" if "pardiso" in available_backends() else "direct"
    if backend == "pardiso":
        A = system.matrix.tocsr()
        x = _PARDISO.solve(A, b)
        if not np.all(np.isfinite(x)) or np.linalg.norm(A @ x - b) > tol * bnorm:
            # stale pivoting or scaling from the cached analysis: start afresh
            _PARDISO.reset()
            x = _PARDISO.solve(A, b)
    elif backend == "direct":
        A = system.matrix.tocsc()
        try:
            x = spla.splu(A).solve(b)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
    elif backend == "gmres":
        A = system.matrix.tocsc()
        ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, b, M=M, rtol=tol * 0.1, atol=0.0, restart=200, maxiter=50)
        if info != 0:
            raise SolverError(f"gmres did not converge (info={info})")
    else:
        raise ValueError(f"unknown solver backend {backend!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution")
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    if res > tol:
        raise SolverError(f"relative residual {res:.2e} exceeds {tol:.0e}")
    return x, res


def advance(
    state: State,
    mesh: Mesh,
    dofs: DofMap,
    params: PhysicalParams,
    bcs: BoundaryConditions,
    dt: float,
    *,
    backend: str = "auto",
):
    """One time step; returns ``(state, mesh, dofs, report)``.

    The DOF numbering depends only on topology, which mesh motion keeps, so
    the same ``DofMap`` is returned.  Raises :class:`StepFailure` on solver
    failure or tangling.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    state.check(dofs)
    t0 = time.perf_counter()

    # (1) ALE velocity at t^n
    if state.mesh_velocity is not None:
        wv = state.mesh_velocity
    else:
        wv = mesh_velocity(mesh, dofs, state.u)
    w_mesh = Field(Space.VECTOR_P2, _vertex_to_p2(mesh, wv))

    # (2) characteristics
    u_conv = convect(state.u, state.u, w_mesh, mesh, dofs, dt)
    w_conv = convect(state.w, state.u, w_mesh, mesh, dofs, dt)

    # (3) monolithic solve
    t_new = state.t + dt
    system = assemble_system(mesh, dofs, params, dt, state.d, u_conv, w_conv)
    system = apply_boundary_conditions(system, bcs, dofs, mesh, t_new)
    try:
        x, res = solve_linear(system, backend)
    except SolverError as exc:
        raise StepFailure(str(exc), StepReport(np.inf, None, np.nan, time.perf_counter() - t0, dt)) from exc
    n = dofs.n_nodes
    u_new = Field(Space.VECTOR_P2, np.column_stack([x[:n], x[n : 2 * n]]))
    w_new = Field(Space.SCALAR_P2, x[2 * n : 3 * n].copy())
    p_new = Field(Space.PRESSURE_P1, x[3 * n :].copy())
    divergence = field_norms(u_new, dofs, mesh)["div"]

    # (4) displacement
    d_new = update_displacement(state.d, u_new, dt)

    # (5)-(7) mesh motion and quality
    vel = mesh_velocity(mesh, dofs, u_new)
    if np.any(vel):
        try:
            new_mesh = move_mesh(mesh, vel, dt)
        except TanglingError as exc:
            report = StepReport(res, validate_mesh(mesh.with_vertices(mesh.vertices + dt * vel)), divergence,
                                time.perf_counter() - t0, dt)
            raise StepFailure(str(exc), report) from exc
        stored = vel
    else:
        new_mesh, stored = mesh, None
    quality = validate_mesh(new_mesh)
    report = StepReport(res, quality, divergence, time.perf_counter() - t0, dt)
    if quality.inverted_count:
        raise StepFailure(f"{quality.inverted_count} inverted triangles", report)
    new_state = State(t_new, u_new, w_new, p_new, d_new, stored)
    return new_state, new_mesh, dofs, report


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class SimulationOutput:
    """Result of :func:`run_simulation`.

    ``profiles`` maps each probe line ``x0`` to its final profile;
    ``mean_profiles`` holds time averages when averaging is configured.
    """

    out_dir: Optional[object]
    series: object
    state: State
    mesh: Mesh
    dofs: DofMap
    profiles: dict = field(default_factory=dict)
    mean_profiles: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def _version_string() -> str:
    import subprocess
    from pathlib import Path

    from . import __version__

    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_simulation(config, out_dir=None, *, progress=None) -> SimulationOutput:
    """Integrate the configured problem from rest up to ``numerics.T``.

    Parameters
    ----------
    config : Config
        Parsed configuration.
    out_dir : path-like, optional
        Output directory for ``series.csv``, ``run.json``, snapshots and the
        final state dump; nothing is written when omitted.
    progress : callable, optional
        Called as ``progress(step, state, report)`` after every step.

    Returns
    -------
    SimulationOutput
        A failed step stops the run; ``failure`` then holds the reason and
        the series file ends with a ``# FAILED`` marker.
    """
    import json
    from pathlib import Path

    from .config import render_config
    from .output import (
        LineProfile,
        ProbeSeries,
        extract_line_profile,
        save_state,
        write_probe_series,
        write_vtk_snapshot,
    )
    from .mesh import save_mesh

    mesh = config.build_mesh()
    dofs = build_spaces(mesh)
    params = config.params
    bcs = config.boundary_conditions()
    num = config.numerics
    probes = config.probes
    state = State.rest(dofs)

    cp = np.asarray(config.control_point, dtype=float)
    tracked = int(np.argmin(np.hypot(*(mesh.vertices - cp).T)))
    point_list = [np.asarray(p, dtype=float) for p in probes.points]

    def record(series, st, m):
        extra = {}
        if point_list:
            pts = np.array(point_list)
            uv = evaluate(st.u, dofs, m, pts)
            wv = evaluate(st.w, dofs, m, pts)
            for k in range(len(pts)):
                extra[f"ux_p{k}"] = uv[k, 0]
                extra[f"uy_p{k}"] = uv[k, 1]
                extra[f"w_p{k}"] = wv[k]
        series.append(st.t, st.d.values[tracked], extra)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def snapshot(k, st, m):
        if out is None or not num.snapshot_every or k % num.snapshot_every:
            return
        write_vtk_snapshot(m, st, out / f"snap_{k}.vtk")
        save_state(m, st, out / f"state_{k}.npz")
        if num.save_mesh:
            save_mesh(m, out / f"mesh_{k}.cfsimesh")

    series = ProbeSeries()
    record(series, state, mesh)
    snapshot(0, state, mesh)
    sums: dict = {}
    n_avg = 0
    reports = []
    failure = None
    t_start = time.perf_counter()
    n_steps = num.n_steps
    for k in range(1, n_steps + 1):
        try:
            state, mesh, dofs, report = advance(state, mesh, dofs, params, bcs, num.dt, backend=num.solver)
        except StepFailure as exc:
            failure = f"step {k} t={state.t + num.dt:.6g}: {exc}"
            break
        reports.append(report)
        record(series, state, mesh)
        snapshot(k, state, mesh)
        if probes.average_from >= 0 and state.t >= probes.average_from - 1e-9:
            for x0 in probes.lines:
                prof = extract_line_profile(mesh, state, x0, probes.line_samples, dofs)
                acc = sums.setdefault(x0, [np.zeros_like(prof.y), np.zeros_like(prof.y), np.zeros_like(prof.y)])
                acc[0] += prof.ux
                acc[1] += prof.uy
                acc[2] += prof.omega
            n_avg += 1
        if progress is not None:
            progress(k, state, report)

    profiles = {x0: extract_line_profile(mesh, state, x0, probes.line_samples, dofs) for x0 in probes.lines}
    means = {}
    if n_avg:
        for x0, (sx, sy, sw) in sums.items():
            y = profiles[x0].y
            means[x0] = LineProfile(x0, y, sx / n_avg, sy / n_avg, sw / n_avg)

    if out is not None:
        from .output import write_profile_csv

        write_probe_series(series, out / "series.csv", failure)
        save_state(mesh, state, out / "state_final.npz")
        for x0, prof in profiles.items():
            write_profile_csv(prof, out / f"profile_x{x0:g}.csv")
        for x0, prof in means.items():
            write_profile_csv(prof, out / f"profile_mean_x{x0:g}.csv")
        meta = {
            "version": _version_string(),
            "steps": len(series) - 1,
            "t_final": state.t,
            "failed": failure,
            "wall_time_s": round(time.perf_counter() - t_start, 3),
            "tracked_vertex": tracked,
            "max_divergence": max((r.divergence for r in reports), default=0.0),
            "config": render_config(config).splitlines(),
        }
        (out / "run.json").write_text(json.dumps(meta, indent=1) + "\n")

    return SimulationOutput(out, series, state, mesh, dofs, profiles, means, reports, failure)
