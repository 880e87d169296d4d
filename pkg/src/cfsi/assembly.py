"""Monolithic linear system of one semi-implicit step.

Unknowns are the new velocity, microrotation and pressure on the current
mesh.  The couplings between them are implicit, so a step is a single sparse
solve.  Tensor gradients follow the Jacobian convention
``grad[i, j] = d f_i / d x_j`` throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .fespace import DofMap, Field, Space, _p2_values, csr_pattern, element_gradients, quadrature
from .mesh import Boundary, Mesh, Region

__all__ = [
    "PhysicalParams",
    "SparseSystem",
    "VelocityBC",
    "BoundaryConditions",
    "BoundaryConditionError",
    "elastic_tensor",
    "curl_of_vector",
    "rot_of_scalar",
    "element_matrices",
    "assemble_system",
    "dirichlet_values",
    "apply_boundary_conditions",
    "benchmark_conditions",
    "channel_conditions",
    "closed_conditions",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Material and forcing coefficients (SI units).

    ``lambda2`` multiplies grad(div w), which vanishes identically for the
    scalar out-of-plane microrotation of a planar flow; it is accepted and
    ignored.  ``c3`` is the solid coefficient in front of the Almansi-type
    term ``Dd - grad d grad d^T``.
    """

    rho_f: float = 1.0e3
    rho_s: float = 1.0e3
    mu: float = 1.0
    mu_r: float = 0.0
    lambda1: float = 1.0e-2
    lambda2: float = 0.0
    micro_inertia: float = 1.0
    c3: float = 2.0e6
    zeta: float = 1.0e-7
    f: tuple[float, float] = (0.0, 0.0)
    g: float = 0.0
    viscous_in_solid: bool = True

    def violations(self) -> list[str]:
        out = []
        checks = [
            (self.rho_f > 0, "rho_f > 0 required"),
            (self.rho_s > 0, "rho_s > 0 required"),
            (self.mu > 0, "mu > 0 required"),
            (self.mu_r >= 0, "mu_r >= 0 required"),
            (self.lambda1 > 0, "lambda1 > 0 required"),
            (self.micro_inertia > 0, "micro_inertia > 0 required"),
            (self.c3 > 0, "c3 > 0 required"),
            (0 < self.zeta < 1, "0 < zeta << 1 required"),
        ]
        for ok, msg in checks:
            if not ok:
                out.append(msg)
        if len(self.f) != 2:
            out.append("f must have two components")
        return out


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict[str, slice]
    dirichlet: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


class BoundaryConditionError(ValueError):
    """A DOF received two different Dirichlet values."""


# ---------------------------------------------------------------------------
# pointwise kinematics
# ---------------------------------------------------------------------------


def elastic_tensor(grad_d) -> np.ndarray:
    """``Dd - grad d grad d^T`` written with the displacement Jacobian ``J``.

    In the column-gradient convention ``grad d = J^T`` the product
    ``grad d grad d^T`` is ``J^T J``, so the result is ``J + J^T - J^T J``:
    twice the Euler-Almansi strain.  Works on stacks of 2x2 matrices.
    """
    J = np.asarray(grad_d, dtype=float)
    Jt = np.swapaxes(J, -1, -2)
    return J + Jt - Jt @ J


def curl_of_vector(grad_u) -> np.ndarray | float:
    """Planar curl ``d u_y/dx - d u_x/dy`` from the velocity Jacobian."""
    G = np.asarray(grad_u, dtype=float)
    return G[..., 1, 0] - G[..., 0, 1]


def rot_of_scalar(grad_w) -> np.ndarray:
    """Vector curl of an out-of-plane scalar: ``(dw/dy, -dw/dx)``."""
    g = np.asarray(grad_w, dtype=float)
    return np.stack([g[..., 1], -g[..., 0]], axis=-1)


# ---------------------------------------------------------------------------
# element level
# ---------------------------------------------------------------------------


def _jacobian_at_quadrature(values: np.ndarray, cells: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """(ne, nq, 2, 2) Jacobian of a P2 vector field."""
    return np.einsum("ejm,eqjn->eqmn", values[cells], grads)


def _elastic_increment(grads: np.ndarray, wq: np.ndarray, Jd: np.ndarray) -> np.ndarray:
    """(ne, 12, 12) matrix of ``[Du - grad u grad d^T - grad d grad u^T] : Dv``.

    Rows are test functions, columns trial functions, both ordered
    ``(component, node)``.
    """
    ne, nq = wq.shape
    E = np.zeros((ne, nq, 2, 6, 2, 2))
    for b in range(2):
        E[:, :, b, :, b, :] = grads
    E = E.reshape(ne, nq, 12, 2, 2)
    Et = np.swapaxes(E, -1, -2)
    JuT_Jd = np.einsum("eqjnm,eqnk->eqjmk", E, Jd)
    lin = E + Et - JuT_Jd - np.swapaxes(JuT_Jd, -1, -2)
    test = E + Et
    return np.einsum("eq,eqimn,eqjmn->eij", wq, test, lin, optimize=True)


def element_matrices(
    mesh: Mesh,
    dofs: DofMap,
    params: PhysicalParams,
    dt: float,
    d_n: Field,
    u_convected: Field,
    w_convected: Field,
):
    """Stacked element matrices (nt, 21, 21) and load vectors (nt, 21).

    Local ordering is ``u_x(6), u_y(6), w(6), p(3)`` as in
    ``DofMap.element_dofs``.  The viscous part is
    ``(mu + mu_r)/2 Du:Dv = (mu + mu_r) Du:grad v`` so that the operator is
    ``(mu + mu_r) lap u`` on solenoidal fields.
    """
    rule = quadrature(5)
    phi = _p2_values(rule.points)  # (nq, 6)
    chi = rule.points  # P1 values = barycentrics
    G = element_gradients(mesh, rule.points)  # (nt, nq, 6, 2)
    nt = mesh.n_triangles
    wq = 2.0 * mesh.areas[:, None] * rule.weights[None, :]

    solid = mesh.region == Region.SOLID
    rho = np.where(solid, params.rho_s, params.rho_f)
    active = np.ones(nt) if params.viscous_in_solid else (~solid).astype(float)
    nu = (params.mu + params.mu_r) * active
    mur = params.mu_r * active
    lam1 = params.lambda1 * active

    M = np.einsum("eq,qi,qj->eij", wq, phi, phi)
    S = np.einsum("eq,eqid,eqjd->eij", wq, G, G)
    P = np.einsum("eq,eqic,eqjd->ecdij", wq, G, G)  # P[c,d,i,j] = int d_c phi_i d_d phi_j

    K = np.zeros((nt, 21, 21))
    F = np.zeros((nt, 21))
    ux, uy, w, p = slice(0, 6), slice(6, 12), slice(12, 18), slice(18, 21)
    comp = (ux, uy)

    for a in range(2):
        for b in range(2):
            blk = nu[:, None, None] * ((a == b) * S + P[:, b, a])
            if a == b:
                blk = blk + (rho / dt)[:, None, None] * M
            K[:, comp[a], comp[b]] += blk

    K[:, w, w] += (rho * params.micro_inertia / dt)[:, None, None] * M
    K[:, w, w] += lam1[:, None, None] * S + (4.0 * mur)[:, None, None] * M

    # -2 mu_r rot(w) . v  and  -2 mu_r curl(u) q
    R = np.stack([G[..., 1], -G[..., 0]], axis=-1)  # rot of each P2 basis fn
    Buw = np.einsum("eq,qi,eqja->eaij", wq, phi, R)
    for a in range(2):
        K[:, comp[a], w] += (-2.0 * mur)[:, None, None] * Buw[:, a]
        K[:, w, comp[a]] += (2.0 * mur)[:, None, None] * Buw[:, a]

    # -p div v - q div u, and the penalty zeta p q
    Bup = -np.einsum("eq,qk,eqia->eaik", wq, chi, G)
    for a in range(2):
        K[:, comp[a], p] += Bup[:, a]
        K[:, p, comp[a]] += np.swapaxes(Bup[:, a], 1, 2)
    K[:, p, p] += params.zeta * np.einsum("eq,qk,ql->ekl", wq, chi, chi)

    cells = dofs.p2_cells
    uc = u_convected.values[cells]  # (nt, 6, 2)
    wc = w_convected.values[cells]
    lump = np.einsum("eq,qi->ei", wq, phi)
    for a in range(2):
        F[:, comp[a]] = (rho / dt)[:, None] * np.einsum("eij,ej->ei", M, uc[:, :, a])
        F[:, comp[a]] += params.f[a] * lump
    F[:, w] = (rho * params.micro_inertia / dt)[:, None] * np.einsum("eij,ej->ei", M, wc)
    F[:, w] += params.g * lump

    if np.any(solid):
        es = np.nonzero(solid)[0]
        Gs, ws = G[es], wq[es]
        Jd = _jacobian_at_quadrature(d_n.values, cells[es], Gs)
        K[es, :12, :12] += params.c3 * dt * _elastic_increment(Gs, ws, Jd)
        Ed = elastic_tensor(Jd)  # (ns, nq, 2, 2)
        # E : Dv = 2 (E grad phi_i)_a for symmetric E
        load = 2.0 * np.einsum("eq,eqam,eqim->eai", ws, Ed, Gs)
        F[es, :12] -= params.c3 * load.reshape(len(es), 12)
    return K, F


def assemble_system(
    mesh: Mesh,
    dofs: DofMap,
    params: PhysicalParams,
    dt: float,
    d_n: Field,
    u_convected: Field,
    w_convected: Field,
) -> SparseSystem:
    if not dt > 0:
        raise ValueError("dt must be positive")
    bad = params.violations()
    if bad:
        raise ValueError("invalid parameters: " + "; ".join(bad))
    for fld, space in ((d_n, Space.VECTOR_P2), (u_convected, Space.VECTOR_P2), (w_convected, Space.SCALAR_P2)):
        if fld.space is not space:
            raise ValueError(f"expected a {space.value} field, got {fld.space.value}")
        fld.check(dofs)
    K, F = element_matrices(mesh, dofs, params, dt, d_n, u_convected, w_convected)
    pattern = csr_pattern(dofs)
    data = pattern.scatter(K)
    A = sp.csr_matrix((data, pattern.indices.copy(), pattern.indptr.copy()), shape=(pattern.n, pattern.n))
    rhs = np.bincount(dofs.element_dofs.ravel(), weights=F.ravel(), minlength=pattern.n)
    return SparseSystem(A, rhs, dofs.blocks)


# ---------------------------------------------------------------------------
# boundary conditions
# ---------------------------------------------------------------------------

Scalar = Union[float, Callable]


@dataclass(frozen=True)
class VelocityBC:
    """Dirichlet velocity on one boundary label.

    ``value`` is a constant pair or ``f(x, y, t) -> (ux, uy)``; only the
    listed ``components`` are prescribed, the others stay natural.
    """

    value: tuple[float, float] | Callable = (0.0, 0.0)
    components: tuple[int, ...] = (0, 1)

    def evaluate(self, xy: np.ndarray, t: float) -> np.ndarray:
        if callable(self.value):
            ux, uy = self.value(xy[:, 0], xy[:, 1], t)
        else:
            ux, uy = self.value
        return np.column_stack(np.broadcast_arrays(np.asarray(ux, float), np.asarray(uy, float), xy[:, 0])[:2])


@dataclass(frozen=True)
class BoundaryConditions:
    """Per-label Dirichlet data; labels not listed are natural (do-nothing)."""

    velocity: dict = field(default_factory=dict)  # Boundary -> VelocityBC
    microrotation: dict = field(default_factory=dict)  # Boundary -> float or f(x, y, t)


def benchmark_conditions(
    U_bar: float = 2.0, H: float = 0.41, omega_inlet: float = 0.0, ramp_time: float = 0.0
) -> BoundaryConditions:
    """Parabolic inflow, no-slip walls and cylinder, do-nothing outlet.

    ``ramp_time > 0`` multiplies the inflow by ``(1 - cos(pi t / ramp_time)) / 2``
    until ``t = ramp_time``.
    """
    from .physics import inlet_profile

    def inflow(x, y, t):
        s = 1.0
        if ramp_time > 0 and t < ramp_time:
            s = 0.5 * (1.0 - np.cos(np.pi * t / ramp_time))
        return s * inlet_profile(np.clip(y, 0.0, H), U_bar, H), 0.0

    wall = VelocityBC()
    return BoundaryConditions(
        velocity={Boundary.INLET: VelocityBC(inflow), Boundary.WALL: wall, Boundary.CYLINDER: wall},
        microrotation={Boundary.INLET: omega_inlet, Boundary.WALL: 0.0, Boundary.CYLINDER: 0.0},
    )


def channel_conditions() -> BoundaryConditions:
    """No-slip walls; only the normal velocity is fixed on the channel ends.

    Fully developed flow driven by a body force then satisfies the natural
    condition on the ends exactly (zero axial traction, zero pressure).
    """
    ends = VelocityBC((0.0, 0.0), components=(1,))
    return BoundaryConditions(
        velocity={Boundary.WALL: VelocityBC(), Boundary.INLET: ends, Boundary.OUTLET: ends},
        microrotation={Boundary.WALL: 0.0},
    )


def closed_conditions() -> BoundaryConditions:
    wall = VelocityBC()
    labels = (Boundary.INLET, Boundary.OUTLET, Boundary.WALL, Boundary.CYLINDER)
    return BoundaryConditions(
        velocity={b: wall for b in labels}, microrotation={b: 0.0 for b in labels}
    )


def dirichlet_values(bcs: BoundaryConditions, dofs: DofMap, mesh: Mesh, t: float, tol: float = 1e-12):
    """Monolithic indices and values of all prescribed DOFs."""
    nodes_xy = mesh.nodes
    n = dofs.n_nodes
    idx_parts, val_parts = [], []
    for lab, bc in bcs.velocity.items():
        nodes = dofs.boundary_nodes.get(Boundary(lab))
        if nodes is None or len(nodes) == 0:
            continue
        vals = bc.evaluate(nodes_xy[nodes], t)
        for c in bc.components:
            idx_parts.append(nodes + c * n)
            val_parts.append(vals[:, c])
    for lab, value in bcs.microrotation.items():
        nodes = dofs.boundary_nodes.get(Boundary(lab))
        if nodes is None or len(nodes) == 0:
            continue
        xy = nodes_xy[nodes]
        v = value(xy[:, 0], xy[:, 1], t) if callable(value) else value
        idx_parts.append(nodes + 2 * n)
        val_parts.append(np.broadcast_to(np.asarray(v, float), (len(nodes),)))
    if not idx_parts:
        return np.empty(0, dtype=np.int64), np.empty(0)
    idx = np.concatenate(idx_parts)
    vals = np.concatenate(val_parts)
    order = np.argsort(idx, kind="stable")
    idx, vals = idx[order], vals[order]
    same = idx[1:] == idx[:-1]
    clash = same & (np.abs(vals[1:] - vals[:-1]) > tol * np.maximum(1.0, np.abs(vals[1:])))
    if np.any(clash):
        k = int(idx[1:][clash][0])
        raise BoundaryConditionError(f"DOF {k} prescribed with conflicting values")
    keep = np.ones(len(idx), dtype=bool)
    keep[1:] = ~same
    return idx[keep], vals[keep]


def apply_boundary_conditions(
    system: SparseSystem, bcs: BoundaryConditions, dofs: DofMap, mesh: Mesh, t: float
) -> SparseSystem:
    """Identity rows for Dirichlet DOFs; known values lifted into the RHS."""
    idx, vals = dirichlet_values(bcs, dofs, mesh, t)
    A = system.matrix.tocsr(copy=True)
    n = A.shape[0]
    known = np.zeros(n)
    known[idx] = vals
    rhs = system.rhs - A @ known
    is_d = np.zeros(n, dtype=bool)
    is_d[idx] = True
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    kill = is_d[rows] | is_d[A.indices]
    A.data[kill] = 0.0
    diag = np.flatnonzero((rows == A.indices) & is_d[rows])
    A.data[diag] = 1.0
    missing = np.setdiff1d(idx, rows[diag])
    if len(missing):
        A = A + sp.csr_matrix((np.ones(len(missing)), (missing, missing)), shape=A.shape)
    rhs[idx] = vals
    return replace(system, matrix=A, rhs=rhs, dirichlet=idx)


def warn_inert_lambda2(params: PhysicalParams) -> None:
    if params.lambda2 != 0:
        warnings.warn("lambda2 multiplies grad(div w), which is identically zero in 2D", stacklevel=3)
