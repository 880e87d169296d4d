"""Channel-flow verification of the 2D solver against the 1D oracle."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .assembly import PhysicalParams, channel_conditions
from .fespace import _p2_values, build_spaces, quadrature
from .mesh import rectangle_mesh
from .physics import ChannelProfile, poiseuille_micropolar_oracle
from .timeloop import State, advance

__all__ = ["REFERENCE_PARAMS", "REFERENCE_G", "ChannelRun", "channel_steady_state", "oracle_errors", "poiseuille_study", "format_table"]

# Reference tuple for the channel verification.  Density and micro-inertia
# do not enter the steady state; small values make the pseudo-time march
# converge in a handful of steps.
REFERENCE_PARAMS = PhysicalParams(
    rho_f=1e-3, rho_s=1e-3, mu=1e-3, mu_r=1e-3, lambda1=1e-4, micro_inertia=1e-3
)
REFERENCE_G = -1.0
CHANNEL_L = 1.0
CHANNEL_H = 0.41


@dataclass
class ChannelRun:
    nx: int
    ny: int
    steps: int
    change: float
    err_u: float
    err_w: float
    seconds: float


def channel_steady_state(params: PhysicalParams, G: float, nx: int, ny: int, *, dt: float = 1.0,
                         tol: float = 1e-8, max_steps: int = 500):
    """March the channel problem driven by body force ``-G`` to steady state.

    Returns ``(mesh, dofs, state, steps, last_relative_change)``.
    """
    mesh = rectangle_mesh(CHANNEL_L, CHANNEL_H, nx, ny)
    dofs = build_spaces(mesh)
    p = replace(params, f=(-G, 0.0))
    bcs = channel_conditions()
    state = State.rest(dofs)
    change = np.inf
    for k in range(1, max_steps + 1):
        new, mesh, dofs, _ = advance(state, mesh, dofs, p, bcs, dt)
        num = np.linalg.norm(new.u.values - state.u.values) + np.linalg.norm(new.w.values - state.w.values)
        den = np.linalg.norm(new.u.values) + np.linalg.norm(new.w.values)
        change = num / den if den > 0 else 0.0
        state = new
        if change < tol:
            return mesh, dofs, state, k, change
    return mesh, dofs, state, max_steps, change


def oracle_errors(mesh, dofs, state, oracle: ChannelProfile) -> tuple[float, float]:
    """Relative L2 errors of ``u`` and ``omega`` against the oracle profile.

    The oracle is interpolated linearly from its fine grid to quadrature
    points; that interpolation error is far below the 2D errors.
    """
    rule = quadrature(5)
    phi = _p2_values(rule.points)
    wq = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    xq = np.einsum("qk,ekd->eqd", rule.points, mesh.vertices[mesh.triangles])
    cells = dofs.p2_cells
    uh = np.einsum("qi,eic->eqc", phi, state.u.values[cells])
    wh = np.einsum("qi,ei->eq", phi, state.w.values[cells])
    ue = oracle.u_at(xq[..., 1])
    we = oracle.omega_at(xq[..., 1])
    eu = np.sqrt(np.sum(wq * ((uh[..., 0] - ue) ** 2 + uh[..., 1] ** 2)) / np.sum(wq * ue**2))
    ew = np.sqrt(np.sum(wq * (wh - we) ** 2) / np.sum(wq * we**2))
    return float(eu), float(ew)


def poiseuille_study(params: PhysicalParams = REFERENCE_PARAMS, G: float = REFERENCE_G,
                     meshes=((40, 10), (80, 20)), oracle_n: int = 10_000) -> list[ChannelRun]:
    oracle = poiseuille_micropolar_oracle(params, G, CHANNEL_H, oracle_n)
    rows = []
    for nx, ny in meshes:
        t0 = time.perf_counter()
        mesh, dofs, state, steps, change = channel_steady_state(params, G, nx, ny)
        eu, ew = oracle_errors(mesh, dofs, state, oracle)
        rows.append(ChannelRun(nx, ny, steps, change, eu, ew, time.perf_counter() - t0))
    return rows


def format_table(rows: list[ChannelRun]) -> str:
    lines = [f"{'mesh':>8} {'steps':>5} {'err_u':>10} {'rate_u':>6} {'err_w':>10} {'rate_w':>6} {'sec':>6}"]
    prev = None
    for r in rows:
        ru = rw = ""
        if prev is not None:
            ru = f"{prev.err_u / r.err_u:6.2f}"
            rw = f"{prev.err_w / r.err_w:6.2f}"
        lines.append(f"{r.nx:>4}x{r.ny:<3} {r.steps:>5} {r.err_u:10.3e} {ru:>6} {r.err_w:10.3e} {rw:>6} {r.seconds:6.1f}")
        prev = r
    return "\n".join(lines)
