import numpy as np
import pytest
import scipy.sparse as sp

from cfsi.assembly import (
    BoundaryConditionError,
    BoundaryConditions,
    PhysicalParams,
    VelocityBC,
    apply_boundary_conditions,
    assemble_system,
    benchmark_conditions,
    curl_of_vector,
    dirichlet_values,
    elastic_tensor,
    element_matrices,
    rot_of_scalar,
)
from cfsi.fespace import Field, Space, build_spaces, interpolant
from cfsi.mesh import Boundary, Region, rectangle_mesh

from conftest import single_triangle

UX, UY, W, P = slice(0, 6), slice(6, 12), slice(12, 18), slice(18, 21)


def _zero_state(dofs):
    return Field.zeros(Space.VECTOR_P2, dofs), Field.zeros(Space.VECTOR_P2, dofs), Field.zeros(Space.SCALAR_P2, dofs)


def _matrix(mesh, params, dt=0.01, d=None):
    dofs = build_spaces(mesh)
    d0, u0, w0 = _zero_state(dofs)
    sysm = assemble_system(mesh, dofs, params, dt, d if d is not None else d0, u0, w0)
    return dofs, sysm


def _without_inertia(mesh, params):
    """Stationary part of the operator: K(dt) = A + M/dt on a fluid mesh."""
    dofs, s1 = _matrix(mesh, params, dt=1.0)
    _, s2 = _matrix(mesh, params, dt=2.0)
    return dofs, (2.0 * s2.matrix - s1.matrix).tocsr()


# -- pointwise kinematics -----------------------------------------------------


def test_elastic_tensor_examples():
    assert np.array_equal(elastic_tensor(np.zeros((2, 2))), np.zeros((2, 2)))
    a = 0.1
    assert np.allclose(elastic_tensor([[a, 0], [0, 0]]), [[2 * a - a * a, 0], [0, 0]])
    t = 0.3
    assert np.allclose(elastic_tensor([[0, -t], [t, 0]]), -t * t * np.eye(2))


def test_elastic_tensor_is_symmetric_and_stacks():
    J = np.random.default_rng(1).normal(size=(7, 5, 2, 2))
    E = elastic_tensor(J)
    assert E.shape == J.shape
    assert np.allclose(E, np.swapaxes(E, -1, -2))
    # dense oracle: grad d = J^T, E = grad d + grad d^T - grad d grad d^T
    gd = np.swapaxes(J, -1, -2)
    assert np.allclose(E, gd + np.swapaxes(gd, -1, -2) - gd @ np.swapaxes(gd, -1, -2))


def test_curl_and_rot_examples():
    assert curl_of_vector([[0.0, -1.0], [1.0, 0.0]]) == 2.0
    assert curl_of_vector(np.eye(2)) == 0.0
    assert np.array_equal(rot_of_scalar([1.0, 0.0]), [0.0, -1.0])
    assert np.array_equal(rot_of_scalar([0.0, 1.0]), [1.0, 0.0])


# -- element level ---------------------------------------------------------------


def test_classical_limit_has_no_coupling():
    mesh = rectangle_mesh(1.0, 1.0, 3, 3)
    dofs = build_spaces(mesh)
    K, _ = element_matrices(mesh, dofs, PhysicalParams(mu_r=0.0), 0.01, *_zero_state(dofs))
    assert np.all(K[:, :12, W] == 0.0)
    assert np.all(K[:, W, :12] == 0.0)


def test_single_triangle_penalty_block():
    mesh = single_triangle()
    dofs = build_spaces(mesh)
    zeta = 1e-3
    K, _ = element_matrices(mesh, dofs, PhysicalParams(zeta=zeta), 0.01, *_zero_state(dofs))
    expected = zeta * 0.5 / 12.0 * (np.ones((3, 3)) + np.eye(3))
    assert np.allclose(K[0, P, P], expected, rtol=1e-13)


def test_pressure_coupling_is_transposed():
    mesh = rectangle_mesh(1.0, 1.0, 3, 3)
    dofs, s = _matrix(mesh, PhysicalParams())
    A = s.matrix.toarray()
    b = dofs.blocks
    assert np.allclose(A[b["u"], b["p"]], A[b["p"], b["u"]].T, atol=1e-14)


def test_divergence_rows_vanish_on_rigid_motion():
    mesh = rectangle_mesh(1.0, 1.0, 4, 4)
    dofs, s = _matrix(mesh, PhysicalParams())
    u = interpolant(Space.VECTOR_P2, dofs, mesh, lambda x, y: (1.0 - 0.5 * y, 0.5 * x))
    x = np.zeros(dofs.n_total)
    x[dofs.blocks["u"]] = u.values.T.ravel()
    assert np.max(np.abs((s.matrix @ x)[dofs.blocks["p"]])) < 1e-14


def test_coupling_adjointness():
    mesh = rectangle_mesh(1.0, 1.0, 4, 4)
    dofs, s = _matrix(mesh, PhysicalParams(mu_r=0.7))
    A = s.matrix.toarray()
    n = dofs.n_nodes
    boundary = np.zeros(n, dtype=bool)
    for nodes in dofs.boundary_nodes.values():
        boundary[nodes] = True
    both = boundary[:, None] & boundary[None, :]
    for a in range(2):
        Kuw = A[a * n:(a + 1) * n, 2 * n:3 * n]
        Kwu = A[2 * n:3 * n, a * n:(a + 1) * n]
        diff = Kuw - Kwu.T
        # integration by parts leaves boundary terms only
        assert np.max(np.abs(diff[~both])) <= 1e-12
        assert np.max(np.abs(Kuw)) > 1e-3


def test_viscous_block_symmetric_psd():
    mesh = rectangle_mesh(1.0, 1.0, 4, 4, pattern="alternating")
    dofs, A = _without_inertia(mesh, PhysicalParams(mu=1.3, mu_r=0.4))
    u = A[dofs.blocks["u"], dofs.blocks["u"]].toarray()
    assert np.allclose(u, u.T, atol=1e-12)
    ev = np.linalg.eigvalsh(0.5 * (u + u.T))
    assert ev.min() >= -1e-10 * ev.max()


def test_microrotation_block_spd():
    mesh = rectangle_mesh(1.0, 1.0, 4, 4)
    dofs, s = _matrix(mesh, PhysicalParams(mu_r=0.5, lambda1=1e-2))
    w = s.matrix[dofs.blocks["w"], dofs.blocks["w"]].toarray()
    assert np.allclose(w, w.T, atol=1e-12)
    assert np.linalg.eigvalsh(w).min() > 0


def test_rigid_rotation_equilibrium():
    mesh = rectangle_mesh(1.0, 1.0, 4, 4, origin=(-0.5, -0.5))
    c = 0.8
    dofs, A = _without_inertia(mesh, PhysicalParams(mu=1.0, mu_r=2.0, lambda1=0.3))
    u = interpolant(Space.VECTOR_P2, dofs, mesh, lambda x, y: (-c * y, c * x))
    x = np.zeros(dofs.n_total)
    x[dofs.blocks["u"]] = u.values.T.ravel()
    x[dofs.blocks["w"]] = c
    assert np.max(np.abs(A @ x)) <= 1e-12


def _solid_square():
    return rectangle_mesh(1.0, 1.0, 3, 3, solid_box=(-1, 2, -1, 2),
                          labels={s: Boundary.WALL for s in ("left", "right", "bottom", "top")})


def _elastic_part(mesh, dofs, d, dt):
    """Elastic contribution isolated through linearity in c3."""
    z = _zero_state(dofs)
    K1, F1 = element_matrices(mesh, dofs, PhysicalParams(c3=1.0), dt, d, z[1], z[2])
    K2, F2 = element_matrices(mesh, dofs, PhysicalParams(c3=2.0), dt, d, z[1], z[2])
    return K2 - K1, F2 - F1


def test_zero_displacement_gives_linear_elasticity():
    mesh = _solid_square()
    assert np.all(mesh.region == Region.SOLID)
    dofs = build_spaces(mesh)
    dt = 0.01
    Ke, Fe = _elastic_part(mesh, dofs, Field.zeros(Space.VECTOR_P2, dofs), dt)
    assert np.all(Fe == 0.0)
    # viscous element block with nu = 1 is (1/2) Du:Dv
    z = _zero_state(dofs)
    Kv1, _ = element_matrices(mesh, dofs, PhysicalParams(mu=1.0, c3=1.0), dt, *z)
    Kv2, _ = element_matrices(mesh, dofs, PhysicalParams(mu=2.0, c3=1.0), dt, *z)
    visc = (Kv2 - Kv1)[:, :12, :12]
    assert np.allclose(Ke[:, :12, :12], 2.0 * dt * visc, atol=1e-12)


def test_elastic_increment_linearises_the_load():
    mesh = _solid_square()
    dofs = build_spaces(mesh)
    rng = np.random.default_rng(3)
    d = Field(Space.VECTOR_P2, 0.05 * rng.normal(size=(dofs.n_nodes, 2)))
    u = 0.5 * rng.normal(size=(dofs.n_nodes, 2))
    cells = dofs.p2_cells
    errs = []
    for dt in (1e-2, 5e-3):
        Ke, Fe = _elastic_part(mesh, dofs, d, dt)
        _, Fnext = _elastic_part(mesh, dofs, Field(Space.VECTOR_P2, d.values + dt * u), dt)
        ue = np.concatenate([u[cells, 0], u[cells, 1]], axis=1)
        predicted = Fe[:, :12] - np.einsum("eij,ej->ei", Ke[:, :12, :12], ue)
        errs.append(np.max(np.abs(Fnext[:, :12] - predicted)))
    assert errs[1] < 0.3 * errs[0]


def test_sparsity_respects_element_connectivity():
    mesh = rectangle_mesh(1.0, 1.0, 4, 4)
    dofs, s = _matrix(mesh, PhysicalParams(mu_r=0.2))
    A = s.matrix
    assert A.shape == (dofs.n_total, dofs.n_total)
    ed = dofs.element_dofs
    mask = sp.csr_matrix(
        (np.ones(ed.shape[1] ** 2 * len(ed)), (np.repeat(ed, ed.shape[1], axis=1).ravel(), np.tile(ed, ed.shape[1]).ravel())),
        shape=A.shape,
    )
    dense_mask = mask.toarray() > 0
    assert np.all(A.toarray()[~dense_mask] == 0.0)


def test_fluid_rhs_is_mass_times_velocity():
    mesh = rectangle_mesh(1.0, 1.0, 2, 2)
    dofs = build_spaces(mesh)
    d0, _, w0 = _zero_state(dofs)
    uc = interpolant(Space.VECTOR_P2, dofs, mesh, lambda x, y: (1.0, 0.0))
    s = assemble_system(mesh, dofs, PhysicalParams(rho_f=2.0), 0.5, d0, uc, w0)
    # sum of P2 mass rows times a constant is rho/dt * area
    assert s.rhs[dofs.blocks["ux"]].sum() == pytest.approx(4.0, rel=1e-13)
    assert np.all(s.rhs[dofs.blocks["uy"]] == 0.0)


# -- validation ------------------------------------------------------------------


@pytest.mark.parametrize("dt", [0.0, -1e-3])
def test_nonpositive_dt(dt):
    mesh = single_triangle()
    with pytest.raises(ValueError):
        _matrix(mesh, PhysicalParams(), dt=dt)


@pytest.mark.parametrize(
    "kw,msg",
    [(dict(mu=0.0), "mu > 0"), (dict(mu_r=-1.0), "mu_r >= 0"), (dict(lambda1=0.0), "lambda1 > 0"), (dict(zeta=0.0), "zeta")],
)
def test_invalid_params(kw, msg):
    with pytest.raises(ValueError, match=msg):
        _matrix(single_triangle(), PhysicalParams(**kw))


def test_wrong_field_space():
    mesh = single_triangle()
    dofs = build_spaces(mesh)
    d, u, w = _zero_state(dofs)
    with pytest.raises(ValueError):
        assemble_system(mesh, dofs, PhysicalParams(), 0.1, d, u, u)


# -- boundary conditions -------------------------------------------------------


@pytest.fixture(scope="module")
def channel():
    mesh = rectangle_mesh(2.5, 0.41, 10, 2)
    dofs = build_spaces(mesh)
    return mesh, dofs


def test_wall_rows_become_identity(channel):
    mesh, dofs = channel
    _, s = _matrix(mesh, PhysicalParams(mu_r=0.5))
    bc = apply_boundary_conditions(s, benchmark_conditions(), dofs, mesh, 0.0)
    A = bc.matrix.tocsr()
    k = int(dofs.nodes_on(Boundary.WALL)[3])
    row = A.getrow(k).toarray().ravel()
    assert row[k] == 1.0 and np.count_nonzero(row) == 1
    col = A.getcol(k).toarray().ravel()
    assert np.count_nonzero(col) == 1
    assert bc.rhs[k] == 0.0


def test_inlet_midline_value(channel):
    mesh, dofs = channel
    _, s = _matrix(mesh, PhysicalParams())
    bc = apply_boundary_conditions(s, benchmark_conditions(U_bar=2.0), dofs, mesh, 0.0)
    inlet = dofs.nodes_on(Boundary.INLET)
    mid = inlet[np.isclose(mesh.nodes[inlet, 1], 0.205)]
    assert len(mid) == 1
    assert bc.rhs[mid[0]] == pytest.approx(3.0, abs=1e-12)


def test_cylinder_microrotation_is_zero(bench_mesh, bench_dofs):
    idx, vals = dirichlet_values(benchmark_conditions(), bench_dofs, bench_mesh, 0.0)
    cyl = bench_dofs.nodes_on(Boundary.CYLINDER) + 2 * bench_dofs.n_nodes
    where = np.searchsorted(idx, cyl)
    assert np.array_equal(idx[where], cyl)
    assert np.all(vals[where] == 0.0)


def test_ramped_inflow_starts_at_rest(channel):
    mesh, dofs = channel
    idx, vals = dirichlet_values(benchmark_conditions(ramp_time=1.0), dofs, mesh, 0.0)
    assert np.all(vals == 0.0)
    idx, vals = dirichlet_values(benchmark_conditions(ramp_time=1.0), dofs, mesh, 2.0)
    assert vals.max() == pytest.approx(3.0)


def test_conflicting_values(channel):
    mesh, dofs = channel
    bcs = BoundaryConditions(
        velocity={Boundary.INLET: VelocityBC((1.0, 0.0)), Boundary.WALL: VelocityBC((0.0, 0.0))}
    )
    with pytest.raises(BoundaryConditionError):
        dirichlet_values(bcs, dofs, mesh, 0.0)


def test_agreeing_duplicates_are_merged(channel):
    mesh, dofs = channel
    bcs = BoundaryConditions(velocity={Boundary.INLET: VelocityBC(), Boundary.WALL: VelocityBC()})
    idx, _ = dirichlet_values(bcs, dofs, mesh, 0.0)
    assert len(idx) == len(np.unique(idx))


def test_lifting_preserves_solution(channel):
    mesh, dofs = channel
    _, s = _matrix(mesh, PhysicalParams(mu_r=0.5))
    bcs = benchmark_conditions()
    bc = apply_boundary_conditions(s, bcs, dofs, mesh, 0.0)
    from scipy.sparse.linalg import spsolve

    x = spsolve(bc.matrix.tocsc(), bc.rhs)
    idx, vals = dirichlet_values(bcs, dofs, mesh, 0.0)
    assert np.allclose(x[idx], vals, atol=1e-12)
    free = np.setdiff1d(np.arange(dofs.n_total), idx)
    r = s.rhs - s.matrix @ x
    assert np.max(np.abs(r[free])) < 1e-8 * max(1.0, np.max(np.abs(s.rhs)))
