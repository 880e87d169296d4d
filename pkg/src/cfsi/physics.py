"""Parameter checks, inflow helpers and the micropolar channel-flow oracle.

The oracle solves the unidirectional reduction of the micropolar equations,

    (mu + mu_r) u'' + 2 mu_r w' = G
    lambda1 w'' - 4 mu_r w - 2 mu_r u' = 0,

with homogeneous Dirichlet data on both walls, by central differences.  It
shares no code with the finite-element assembly.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import PhysicalParams

__all__ = [
    "ChannelProfile",
    "validate_params",
    "inlet_profile",
    "reynolds_number",
    "poiseuille_micropolar_oracle",
]


def validate_params(params: PhysicalParams) -> list[str]:
    """Return the list of violated invariants (empty when valid).

    A nonzero ``lambda2`` is accepted but triggers a warning, since that
    term cannot act on a planar microrotation.
    """
    if params.lambda2 != 0:
        warnings.warn("lambda2 is inert for a planar microrotation field", stacklevel=2)
    return params.violations()


def inlet_profile(y, U_bar: float, H: float):
    """Parabolic inflow ``6 U_bar y (H - y) / H**2`` with mean ``U_bar``."""
    y_arr = np.asarray(y, dtype=float)
    slack = 1e-12 * H
    if np.any(y_arr < -slack) or np.any(y_arr > H + slack):
        raise ValueError(f"y must lie in [0, {H}]")
    out = 6.0 * U_bar * y_arr * (H - y_arr) / H**2
    return float(out) if out.ndim == 0 else out


def reynolds_number(U_bar: float, D: float, nu: float) -> float:
    if U_bar <= 0 or D <= 0 or nu <= 0:
        raise ValueError("U_bar, D and nu must be positive")
    return U_bar * D / nu


@dataclass(frozen=True)
class ChannelProfile:
    y: np.ndarray
    u: np.ndarray
    omega: np.ndarray
    G: float
    residual: float = 0.0  # truncation estimate of the second-order scheme

    def __post_init__(self):
        if not (len(self.y) == len(self.u) == len(self.omega)):
            raise ValueError("sample arrays must have equal length")

    def u_at(self, y):
        return np.interp(y, self.y, self.u)

    def omega_at(self, y):
        return np.interp(y, self.y, self.omega)

    def to_csv(self, directory) -> tuple[Path, Path]:
        """Write ``u.csv`` and ``omega.csv`` as ``y,value`` columns."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, vals in (("u", self.u), ("omega", self.omega)):
            path = directory / f"{name}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["y", name])
                w.writerows(zip(map(repr, self.y.tolist()), map(repr, vals.tolist())))
            paths.append(path)
        return paths[0], paths[1]


def _second_order_operator(params: PhysicalParams, h: float, n: int):
    """Matrix on interior unknowns ``[u_1..u_{n-1}, w_1..w_{n-1}]``."""
    m = n - 1
    one = np.ones(m)
    lap = sp.diags([one[1:], -2.0 * one, one[1:]], [-1, 0, 1]) / h**2
    d1 = sp.diags([-one[1:], one[1:]], [-1, 1]) / (2.0 * h)
    eye = sp.identity(m)
    nu = params.mu + params.mu_r
    top = sp.hstack([nu * lap, 2.0 * params.mu_r * d1])
    bot = sp.hstack([-2.0 * params.mu_r * d1, params.lambda1 * lap - 4.0 * params.mu_r * eye])
    return sp.vstack([top, bot]).tocsc()


def _fourth_order_residual(params: PhysicalParams, u: np.ndarray, w: np.ndarray, h: float, G: float) -> float:
    """Max residual of the ODEs evaluated with fourth-order stencils.

    For a converged second-order solution this measures the O(h^2)
    truncation error, so it shrinks about fourfold per halving of h.
    """
    def d2(f):
        return (-f[4:] + 16 * f[3:-1] - 30 * f[2:-2] + 16 * f[1:-3] - f[:-4]) / (12 * h**2)

    def d1(f):
        return (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)

    nu = params.mu + params.mu_r
    r1 = nu * d2(u) + 2 * params.mu_r * d1(w) - G
    r2 = params.lambda1 * d2(w) - 4 * params.mu_r * w[2:-2] - 2 * params.mu_r * d1(u)
    scale = max(abs(G), 1e-300)
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))) / scale)


def poiseuille_micropolar_oracle(params: PhysicalParams, G: float, H: float, N: int = 10_000) -> ChannelProfile:
    """Fully developed channel flow under the body-force/pressure gradient ``G``.

    ``G`` enters as ``(mu + mu_r) u'' + 2 mu_r w' = G``: a negative ``G``
    drives flow in the positive x direction.

    Parameters
    ----------
    params : PhysicalParams
        Only ``mu``, ``mu_r`` and ``lambda1`` are used.
    G : float
        Pressure gradient dp/dx (equivalently minus the body force).
    H : float
        Channel height.
    N : int
        Number of intervals; at least 1000.

    Returns
    -------
    ChannelProfile
        Samples on the N+1 grid points, with a truncation-error estimate.
    """
    if N < 1000:
        raise ValueError("N must be at least 1000")
    if H <= 0:
        raise ValueError("H must be positive")
    if params.mu <= 0 or params.mu_r < 0:
        raise ValueError("mu > 0 and mu_r >= 0 required")
    if params.mu_r > 0 and params.lambda1 <= 0:
        raise ValueError("lambda1 = 0 with mu_r > 0 makes the system singular")

    y = np.linspace(0.0, H, N + 1)
    h = H / N
    m = N - 1
    if params.mu_r == 0:
        u = G * y * (y - H) / (2.0 * params.mu)
        # the second-order scheme is exact for quadratics
        return ChannelProfile(y, u, np.zeros_like(y), G, 0.0)

    A = _second_order_operator(params, h, N)
    rhs = np.concatenate([np.full(m, G), np.zeros(m)])
    sol = spla.spsolve(A, rhs)
    u = np.concatenate([[0.0], sol[:m], [0.0]])
    w = np.concatenate([[0.0], sol[m:], [0.0]])
    # backward error: residual against the size of the terms that produced it
    scale = spla.norm(A, np.inf) * np.max(np.abs(sol)) + abs(G)
    discrete = float(np.max(np.abs(A @ sol - rhs)) / max(scale, 1e-300))
    if discrete > 1e-8:
        raise RuntimeError(f"oracle solve did not converge (residual {discrete:.2e})")
    return ChannelProfile(y, u, w, G, _fourth_order_residual(params, u, w, h, G))
