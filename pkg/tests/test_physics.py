import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfsi.assembly import PhysicalParams
from cfsi.physics import (
    ChannelProfile,
    inlet_profile,
    poiseuille_micropolar_oracle,
    reynolds_number,
    validate_params,
)

REF = PhysicalParams(mu=1e-3, mu_r=1e-3, lambda1=1e-4)
H = 0.41


def closed_form(params, G, H, y):
    """Analytic channel solution, written in the centred coordinate s = y - H/2.

    Integrating the momentum balance once gives
    (mu + mu_r) u' + 2 mu_r w = G s, which reduces the spin balance to
    w'' - k^2 w = const * s with k^2 = 4 mu mu_r / (lambda1 (mu + mu_r)).
    """
    mu, mur, lam = params.mu, params.mu_r, params.lambda1
    nu = mu + mur
    k = np.sqrt(4.0 * mu * mur / (lam * nu))
    s = np.asarray(y) - H / 2
    a = H / 2
    w = G / (2 * mu) * (a * np.sinh(k * s) / np.sinh(k * a) - s)
    int_w = G / (2 * mu) * (a * (np.cosh(k * s) - np.cosh(k * a)) / (k * np.sinh(k * a)) - (s**2 - a**2) / 2)
    u = (G * (s**2 - a**2) / 2 - 2 * mur * int_w) / nu
    return u, w


# -- parameters -------------------------------------------------------------


def test_defaults_are_valid():
    assert validate_params(PhysicalParams()) == []


@pytest.mark.parametrize(
    "kw,msg",
    [
        (dict(mu=0.0), "mu > 0 required"),
        (dict(mu_r=-1.0), "mu_r >= 0 required"),
        (dict(lambda1=-1.0), "lambda1 > 0 required"),
        (dict(rho_f=0.0), "rho_f > 0 required"),
        (dict(c3=0.0), "c3 > 0 required"),
        (dict(micro_inertia=0.0), "micro_inertia > 0 required"),
    ],
)
def test_violations_name_the_invariant(kw, msg):
    assert msg in validate_params(PhysicalParams(**kw))


def test_several_violations_reported_together():
    assert len(validate_params(PhysicalParams(mu=-1.0, mu_r=-1.0))) == 2


def test_lambda2_is_accepted_with_warning():
    with pytest.warns(UserWarning, match="lambda2"):
        assert validate_params(PhysicalParams(lambda2=0.5)) == []
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        validate_params(PhysicalParams(lambda2=0.0))


# -- inflow and Reynolds number ------------------------------------------------


def test_inlet_profile_examples():
    assert inlet_profile(0.0, 2.0, H) == 0.0
    assert inlet_profile(H, 2.0, H) == pytest.approx(0.0, abs=1e-12)
    assert inlet_profile(H / 2, 2.0, H) == pytest.approx(3.0, rel=1e-14)


def test_inlet_profile_mean_is_U_bar():
    y = np.linspace(0, H, 20001)
    u = inlet_profile(y, 2.0, H)
    assert np.trapezoid(u, y) / H == pytest.approx(2.0, rel=1e-7)


@pytest.mark.parametrize("y", [-0.01, H + 0.01])
def test_inlet_profile_outside_channel(y):
    with pytest.raises(ValueError):
        inlet_profile(y, 2.0, H)


def test_reynolds_examples():
    assert reynolds_number(2.0, 0.1, 1e-3) == pytest.approx(200.0)
    assert reynolds_number(0.2, 0.1, 1e-3) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        reynolds_number(2.0, 0.1, 0.0)


# -- channel oracle -------------------------------------------------------------


def test_classical_parabola():
    prof = poiseuille_micropolar_oracle(PhysicalParams(mu=1e-3, mu_r=0.0), -1.0, H, N=1000)
    assert np.all(prof.omega == 0.0)
    assert prof.u_at(H / 2) == pytest.approx(H**2 / (8e-3), rel=1e-12)


def test_matches_closed_form():
    prof = poiseuille_micropolar_oracle(REF, -1.0, H)
    u, w = closed_form(REF, -1.0, H, prof.y)
    assert np.max(np.abs(prof.u - u)) <= 1e-6 * np.max(np.abs(u))
    assert np.max(np.abs(prof.omega - w)) <= 1e-6 * np.max(np.abs(w))


def test_reference_values():
    prof = poiseuille_micropolar_oracle(REF, -1.0, H)
    assert prof.u_at(H / 2) == pytest.approx(11.185122550470481, rel=1e-9)
    assert np.max(np.abs(prof.omega)) == pytest.approx(5.098911605372201, rel=1e-9)
    assert prof.u[0] == 0.0 and prof.u[-1] == 0.0
    assert prof.omega[0] == 0.0 and prof.omega[-1] == 0.0


def test_symmetry():
    prof = poiseuille_micropolar_oracle(REF, -1.0, H, N=4000)
    assert np.allclose(prof.u, prof.u[::-1], atol=1e-10 * prof.u.max())
    assert np.allclose(prof.omega, -prof.omega[::-1], atol=1e-10 * np.abs(prof.omega).max())


def test_richardson_convergence():
    coarse = poiseuille_micropolar_oracle(REF, -1.0, H, N=10_000)
    fine = poiseuille_micropolar_oracle(REF, -1.0, H, N=20_000)
    u_exact, _ = closed_form(REF, -1.0, H, H / 2)
    e1 = abs(coarse.u_at(H / 2) - u_exact)
    e2 = abs(fine.u_at(H / 2) - u_exact)
    assert 3.5 < e1 / e2 < 4.5
    # extrapolated value improves on both
    assert abs((4 * fine.u_at(H / 2) - coarse.u_at(H / 2)) / 3 - u_exact) < e2


def test_truncation_estimate_shrinks_fourfold():
    r1 = poiseuille_micropolar_oracle(REF, -1.0, H, N=2000).residual
    r2 = poiseuille_micropolar_oracle(REF, -1.0, H, N=4000).residual
    assert 3.5 < r1 / r2 < 4.5


def test_flow_direction_follows_G():
    assert poiseuille_micropolar_oracle(REF, -1.0, H, N=1000).u_at(H / 2) > 0
    assert poiseuille_micropolar_oracle(REF, 1.0, H, N=1000).u_at(H / 2) < 0


def test_centreline_velocity_decreases_with_mu_r():
    vals = [
        poiseuille_micropolar_oracle(PhysicalParams(mu=1e-3, mu_r=m, lambda1=1e-4), -1.0, H, N=2000).u_at(H / 2)
        for m in (0.0, 1e-4, 1e-3, 1e-2)
    ]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_microrotation_decreases_with_lambda1():
    peaks = [
        np.abs(poiseuille_micropolar_oracle(PhysicalParams(mu=1e-3, mu_r=1e-3, lambda1=l), -1.0, H, N=2000).omega).max()
        for l in (1e-5, 1e-4, 1e-3)
    ]
    assert peaks[0] > peaks[1] > peaks[2]


@settings(max_examples=20, deadline=None)
@given(
    mur=st.floats(1e-4, 1e-1),
    lam=st.floats(1e-5, 1e-2),
    G=st.floats(-5.0, 5.0).filter(lambda g: abs(g) > 1e-3),
)
def test_oracle_agrees_with_closed_form(mur, lam, G):
    params = PhysicalParams(mu=1e-2, mu_r=mur, lambda1=lam)
    prof = poiseuille_micropolar_oracle(params, G, H, N=4000)
    u, w = closed_form(params, G, H, prof.y)
    assert np.max(np.abs(prof.u - u)) <= 1e-4 * np.max(np.abs(u))
    assert np.max(np.abs(prof.omega - w)) <= 1e-3 * np.max(np.abs(w)) + 1e-12


def test_singular_lambda1():
    with pytest.raises(ValueError, match="singular"):
        poiseuille_micropolar_oracle(PhysicalParams(mu=1e-3, mu_r=1e-3, lambda1=0.0), -1.0, H)


def test_too_few_intervals():
    with pytest.raises(ValueError):
        poiseuille_micropolar_oracle(REF, -1.0, H, N=100)


def test_profile_csv(tmp_path):
    prof = poiseuille_micropolar_oracle(REF, -1.0, H, N=1000)
    u_path, w_path = prof.to_csv(tmp_path)
    rows = np.loadtxt(u_path, delimiter=",", skiprows=1)
    assert rows.shape == (1001, 2)
    assert np.array_equal(rows[:, 1], prof.u)
    assert np.loadtxt(w_path, delimiter=",", skiprows=1).shape == (1001, 2)
    with pytest.raises(ValueError):
        ChannelProfile(np.zeros(3), np.zeros(2), np.zeros(3), -1.0)
