import math
from dataclasses import replace

import numpy as np
import pytest
import sympy as sp

from emlag.dynamics import ConstantVoltage, DriveInput, MachineState, SinusoidalVoltage, simulate, zero_state
from emlag.energy import (
    EnergyBreakdown,
    audit_csv,
    audit_report,
    closed_form_magnetic_energy,
    energy_breakdown,
    legendre_energy,
    magnetic_energy,
    power_balance_audit,
    time_derivative,
)
from emlag.models import CONSTANT_CURVE, KINDS, Harmonic, MagneticLagrangianModel, default_model, eval_lagrangian

from oracles import fd_gradient


def _points(m, rng, n=100):
    theta = rng.uniform(-7, 7, n)
    half = 5.0 if m.is_pm else 3.0
    cur = [rng.uniform(-half, half, n) + 1j * rng.uniform(-half, half, n) for _ in range(m.n_currents)]
    return theta, cur


def test_pm_standard_energy_at_zero_current():
    m = default_model("pm_standard")
    assert magnetic_energy(m, 0.3, [0j]) == pytest.approx(-0.5, rel=1e-15)
    assert closed_form_magnetic_energy("pm_standard", m.params, 0.3, [0j]) == pytest.approx(-0.5, rel=1e-15)


def test_pm_saliency_energy_example():
    m = default_model("pm_saliency")
    assert closed_form_magnetic_energy("pm_saliency", m.params, 0.0, [1 + 0j]) == pytest.approx(-0.496, rel=1e-14)
    assert magnetic_energy(m, 0.0, [1 + 0j]) == pytest.approx(-0.496, rel=1e-13)


def test_im_standard_energy_is_lagrangian(rng):
    m = default_model("im_standard")
    theta, cur = _points(m, rng, 1000)
    h = magnetic_energy(m, theta, cur)
    lag = eval_lagrangian(m, theta, cur)
    closed = closed_form_magnetic_energy("im_standard", m.params, theta, cur)
    assert np.all(np.abs(closed - lag) <= 8 * np.spacing(np.abs(lag)))
    assert np.all(np.abs(h - lag) <= 8 * np.spacing(np.abs(lag)))


@pytest.mark.parametrize("kind", KINDS)
def test_legendre_matches_closed_form(kind, rng):
    m = default_model(kind)
    theta, cur = _points(m, rng)
    h = magnetic_energy(m, theta, cur)
    ref = closed_form_magnetic_energy(kind, m.params, theta, cur)
    assert np.max(np.abs(h - ref) / np.abs(ref)) <= 1e-9


def test_closed_form_degenerate_cases(rng):
    std = default_model("im_standard")
    sat = MagneticLagrangianModel("im_sat", replace(std.params, saturation=CONSTANT_CURVE))
    theta, cur = _points(std, rng)
    assert np.allclose(
        closed_form_magnetic_energy("im_sat", sat.params, theta, cur),
        closed_form_magnetic_energy("im_standard", std.params, theta, cur),
        rtol=1e-15,
        atol=0,
    )
    imsat = default_model("im_sat")
    harm = replace(imsat.params, harmonics=(Harmonic(5, 1, 0.0),))
    assert np.array_equal(
        closed_form_magnetic_energy("im_sat_harmonic", harm, theta, cur),
        closed_form_magnetic_energy("im_sat", imsat.params, theta, cur),
    )


@pytest.mark.parametrize("kind", ["im_standard", "pm_standard"])
def test_quadratic_self_duality(kind, rng):
    m = default_model(kind)
    if m.is_pm:
        m = m.with_params(ibar=0.0)
    for x in np.concatenate([rng.uniform(-3, 3, (10, 2 * m.n_currents)), rng.uniform(0, 6, (10, 1))], axis=1):
        def diff(z):
            return float(legendre_energy(m, z) - m.lagrangian(list(z)))

        # H_m - L_m is constant in the currents, so a wide step only reduces rounding noise
        g = fd_gradient(diff, x, rel_step=1e-3)
        assert np.max(np.abs(g[:-1])) <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_energy_periodic(kind, rng):
    m = default_model(kind)
    theta, cur = _points(m, rng)
    a = magnetic_energy(m, theta, cur)
    b = magnetic_energy(m, theta + 2 * math.pi / m.params.n_p, cur)
    assert np.all(np.abs(a - b) <= 1e-12 * np.abs(a) + 1e-15)


def test_breakdown_total():
    m = default_model("pm_saliency")
    b = energy_breakdown(m, 0.0, 2.0, [1 + 0j])
    assert b.h_mech == pytest.approx(0.02)
    assert b.total == b.h_mech + b.h_mag
    assert EnergyBreakdown(1.5, -0.25).total == 1.25


def test_power_balance_identity_symbolic():
    a, b, th, w, lam, ib, R, J, tau, ua, ub = sp.symbols("a b theta omega lambda ibar R J tau u_a u_b", real=True)
    n = sp.Integer(3)
    i = a + sp.I * b
    u = ua + sp.I * ub
    e = sp.cos(n * th) + sp.I * sp.sin(n * th)
    z = i + ib * e
    L = lam / 2 * sp.expand(z * sp.conjugate(z))

    # flux is the real gradient over (a, b), i.e. 2 dL/di*
    phi = sp.diff(L, a) + sp.I * sp.diff(L, b)
    assert sp.simplify(sp.expand(phi - lam * z)) == 0
    # Legendre transform
    H_m = a * sp.diff(L, a) + b * sp.diff(L, b) - L
    assert sp.simplify(sp.expand(H_m - lam / 2 * (a**2 + b**2 - ib**2))) == 0

    T = sp.diff(L, th)
    # d phi/dt = u - R i with d phi/dt = lam di/dt + lam ibar de/dt
    di = (u - R * i) / lam - ib * sp.diff(e, th) * w
    dw = (T - tau) / J
    da, db = sp.re(sp.expand(di)), sp.im(sp.expand(di))
    dH = J * w * dw + sp.diff(H_m, a) * da + sp.diff(H_m, b) * db
    power = sp.re(sp.expand(u * sp.conjugate(i))) - R * (a**2 + b**2) - tau * w
    assert sp.simplify(sp.expand(dH - power)) == 0


def test_zero_drive_zero_state_residual_is_zero():
    m = default_model("im_sat_harmonic")
    drive = DriveInput(ConstantVoltage(0j), 0.0)
    traj = simulate(m, zero_state(m), drive, 0.01, 1e-4, backend="numpy")
    res = power_balance_audit(m, traj, drive)
    assert np.all(res.residual == 0.0)
    assert res.drift == 0.0
    assert res.relative_drift == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_short_run_power_balance(kind):
    m = default_model(kind)
    drive = DriveInput(SinusoidalVoltage(20.0, 10.0), 0.5)
    traj = simulate(m, zero_state(m), drive, 0.1, 1e-5)
    res = power_balance_audit(m, traj, drive)
    assert res.max_residual <= 1e-3 * res.peak_power
    assert res.relative_drift <= 1e-6


def test_audit_outputs_and_checks():
    m = default_model("pm_standard")
    drive = DriveInput(SinusoidalVoltage(5.0, 10.0), 0.0)
    traj = simulate(m, zero_state(m), drive, 0.002, 1e-4, backend="numpy")
    res = power_balance_audit(m, traj, drive)
    rep = audit_report(res, 1e-6)
    assert rep.splitlines()[-1].split() in (["verdict", "PASS"], ["verdict", "FAIL"])
    lines = audit_csv(res).splitlines()
    assert lines[0] == "t,hamiltonian,dh_dt,power,residual"
    assert len(lines) == len(traj) + 1
    with pytest.raises(ValueError):
        power_balance_audit(default_model("pm_saliency"), traj, drive)


def test_time_derivative_exact_on_quadratics():
    t = np.arange(11) * 0.1
    d = time_derivative(3 * t**2 - t + 2, 0.1)
    assert np.allclose(d, 6 * t - 1, rtol=0, atol=1e-12)
