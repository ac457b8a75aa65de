import math
from dataclasses import replace

import numpy as np
import pytest

from emlag.dynamics import (
    ConstantVoltage,
    DriveInput,
    IntegrationError,
    MachineState,
    PiecewiseVoltage,
    SingularMassMatrixError,
    SinusoidalVoltage,
    flux,
    flux_state_simulate,
    mass_matrix,
    rhs,
    simulate,
    state_derivative,
    zero_state,
)
from emlag.models import (
    CONSTANT_CURVE,
    KINDS,
    MagneticLagrangianModel,
    SaturationCurve,
    default_model,
)
from emlag.wirtinger import DomainError

SINE = DriveInput(SinusoidalVoltage(20.0, 10.0), 0.5)


def _pathological():
    # lambda(rho) = 0.01 - 2e-6 rho^2: radial inductance 0.01 - 8e-6 rho^2 vanishes at rho ~ 35 A
    curve = SaturationCurve("polynomial", (0.01, -2e-6), rho_max=60.0)
    return default_model("pm_sat_saliency").with_params(mu=0.0005, saturation=curve)


# flux and mass matrix ---------------------------------------------------------


@pytest.mark.parametrize("theta", [0.0, 1.1, -4.0])
def test_pm_flux_at_zero_current(theta):
    (phi,) = flux(default_model("pm_standard"), MachineState(theta, 0.0, 0j))
    assert phi == pytest.approx(0.1 * np.exp(3j * theta), rel=1e-14, abs=1e-16)


def test_im_flux_example():
    phi_r, phi_s = flux(default_model("im_standard"), MachineState(0.0, 0.0, 2 + 0j, 0j))
    assert phi_r == pytest.approx(0.2, rel=1e-15)
    assert phi_s == pytest.approx(0.21, rel=1e-15)


def test_constant_curve_flux_equals_saliency():
    sal = default_model("pm_saliency")
    sat = MagneticLagrangianModel("pm_sat_saliency", replace(sal.params, saturation=CONSTANT_CURVE))
    s = MachineState(0.4, 0.0, 1.3 - 2.2j)
    assert flux(sat, s) == flux(sal, s)


@pytest.mark.parametrize("theta", [0.0, 0.8])
def test_mass_matrix_pm_standard(theta):
    M, cond = mass_matrix(default_model("pm_standard"), MachineState(theta, 5.0, 3 - 1j))
    assert np.allclose(M, 0.01 * np.eye(2), rtol=1e-14, atol=1e-18)
    assert cond == pytest.approx(1.0)


def test_mass_matrix_pm_saliency():
    M, _ = mass_matrix(default_model("pm_saliency"), MachineState(0.0, 0.0, 1 + 1j))
    assert np.allclose(M, np.diag([0.008, 0.012]), rtol=1e-14, atol=1e-18)


def test_mass_matrix_im_standard():
    p = default_model("im_standard").params
    M, _ = mass_matrix(default_model("im_standard"), MachineState(0.0, 0.0, 1 + 2j, -1 + 0.5j))
    block = np.array([[p.L_m + p.L_fr, p.L_m], [p.L_m, p.L_m + p.L_fs]])
    assert np.allclose(M, np.kron(block, np.eye(2)), rtol=1e-14, atol=1e-18)


@pytest.mark.parametrize("kind", KINDS)
def test_mass_matrix_symmetric_positive(kind, rng):
    m = default_model(kind)
    for _ in range(10):
        s = MachineState(rng.uniform(0, 6), 0.0, complex(*rng.uniform(-3, 3, 2)), None if m.is_pm else complex(*rng.uniform(-3, 3, 2)))
        M, _ = mass_matrix(m, s)
        assert np.array_equal(M, M.T)
        assert np.all(np.linalg.eigvalsh(M) > 0)


def test_mass_matrix_singular_error():
    m = _pathological()
    state = MachineState(0.0, 0.0, 30 + 0j)  # rho = 40 A
    with pytest.raises(SingularMassMatrixError) as info:
        mass_matrix(m, state)
    assert info.value.state == state


# rhs ---------------------------------------------------------------------------


def test_rhs_zero_equilibrium():
    d = rhs(default_model("pm_standard"), zero_state(default_model("pm_standard")), DriveInput(), 0.0)
    assert (d.theta, d.omega, d.i_s) == (0.0, 0.0, 0j)


def test_rhs_steady_family_member():
    m = default_model("pm_standard")
    i_bar = 1.5 - 0.7j
    theta = 0.3
    from emlag.dynamics import torque

    tau = torque(m, MachineState(theta, 0.0, i_bar))
    d = rhs(m, MachineState(theta, 0.0, i_bar), DriveInput(ConstantVoltage(m.params.R_s * i_bar), tau), 0.0)
    assert d.theta == 0.0 and d.omega == 0.0 and d.i_s == 0j


def test_rhs_im_matches_explicit_inverse():
    m = default_model("im_standard")
    s = zero_state(m)
    d = rhs(m, s, DriveInput(ConstantVoltage(1 + 0j)), 0.0)
    M, _ = mass_matrix(m, s)
    ref = np.linalg.inv(M) @ np.array([0.0, 0.0, 1.0, 0.0])
    got = np.array([d.i_r.real, d.i_r.imag, d.i_s.real, d.i_s.imag])
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_rhs_rejects_non_finite():
    with pytest.raises(ValueError):
        rhs(default_model("pm_standard"), MachineState(math.nan, 0.0, 0j), DriveInput(), 0.0)


# simulation -----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["pm_sat_saliency", "im_sat_harmonic"])
def test_zero_input_zero_trajectory(kind):
    m = default_model(kind)
    if m.is_pm:
        m = m.with_params(ibar=0.0)
    traj = simulate(m, zero_state(m), DriveInput(), 0.01, 1e-4, backend="numpy")
    assert np.all(traj.states == 0.0)


def test_steady_state_preserved():
    m = default_model("pm_standard")
    i_bar = 2.0 - 1.0j
    from emlag.dynamics import torque

    s0 = MachineState(0.5, 0.0, i_bar)
    drive = DriveInput(ConstantVoltage(m.params.R_s * i_bar), torque(m, s0))
    traj = simulate(m, s0, drive, 1.0, 1e-5)
    assert len(traj) == 100_001
    assert np.max(np.abs(traj.states - traj.states[0])) <= 1e-10


@pytest.mark.parametrize("kind", ["im_sat_harmonic", "pm_sat_saliency"])
def test_steady_state_preserved_nonlinear(kind):
    from emlag.observability import zero_freq_steady_family

    m = default_model(kind)
    pt = zero_freq_steady_family(m, 1.2 + 0.4j, 0.9)
    s0 = MachineState.from_vector(m, pt.X[1:])
    traj = simulate(m, s0, DriveInput(ConstantVoltage(pt.u_s), pt.tau_L), 1.0, 1e-5)
    assert np.max(np.abs(traj.states - traj.states[0])) <= 1e-9


def test_richardson_order():
    m = default_model("pm_saliency")
    ys = [simulate(m, zero_state(m), SINE, 0.1, 1e-3 / 2**k, backend="numpy").states[-1] for k in range(3)]
    order = math.log2(np.linalg.norm(ys[0] - ys[1]) / np.linalg.norm(ys[1] - ys[2]))
    assert order >= 3.7


def test_backends_agree():
    m = default_model("im_sat_harmonic")
    a = simulate(m, zero_state(m), SINE, 0.02, 1e-5, backend="numpy")
    b = simulate(m, zero_state(m), SINE, 0.02, 1e-5, backend="jax")
    assert np.allclose(a.states, b.states, rtol=1e-12, atol=1e-12)
    assert np.allclose(a.energies, b.energies, rtol=1e-12, atol=1e-14)


def test_trajectory_csv_layout():
    m = default_model("im_sat")
    traj = simulate(m, zero_state(m), SINE, 0.1, 1e-5)
    text = traj.to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,theta,omega,i_s_re,i_s_im,i_r_re,i_r_im,phi_s_re,phi_s_im,phi_r_re,phi_r_im,torque_em,hamiltonian"
    assert len(lines) == 10_002
    row = lines[-1].split(",")
    assert len(row) == 13
    assert float(row[0]) == pytest.approx(0.1)
    assert np.all(np.diff(traj.times) > 0)
    # round trip at 17 significant digits is exact
    data = np.loadtxt(text.splitlines()[1:], delimiter=",")
    assert np.array_equal(data[:, 1], traj.theta)


def test_pm_csv_header():
    m = default_model("pm_standard")
    traj = simulate(m, zero_state(m), SINE, 1e-3, 1e-4, backend="numpy")
    assert traj.to_csv().splitlines()[0] == "t,theta,omega,i_s_re,i_s_im,phi_s_re,phi_s_im,torque_em,hamiltonian"


def test_derived_columns_consistent_with_flux():
    m = default_model("pm_sat_saliency")
    traj = simulate(m, zero_state(m), SINE, 0.01, 1e-4, backend="numpy")
    for k in (0, 50, 100):
        assert traj.phi_s[k] == pytest.approx(flux(m, traj.state(k))[0], rel=1e-13)


def test_implicit_form_consistency():
    # d phi/dt from finite differences of the flux column equals the source term to O(dt^2)
    m = default_model("im_sat_harmonic")
    errs = []
    for dt in (1e-4, 5e-5):
        traj = simulate(m, zero_state(m), SINE, 0.02, dt, backend="numpy")
        dphi = (traj.phi_s[2:] - traj.phi_s[:-2]) / (2 * dt)
        src = SINE.u_s(traj.times[1:-1]) - m.params.R_s * traj.i_s[1:-1]
        errs.append(np.max(np.abs(dphi - src)) / np.max(np.abs(src)))
    assert errs[0] < 1e-3
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_singular_run_truncated():
    m = _pathological()
    with pytest.raises(SingularMassMatrixError) as info:
        simulate(m, zero_state(m), DriveInput(ConstantVoltage(40 + 0j)), 0.2, 1e-5)
    traj = info.value.trajectory
    assert 0 < len(traj) < 20_001
    M, _ = mass_matrix(m, traj.state(len(traj) - 1))
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_leaving_curve_range_is_domain_error():
    m = default_model("im_sat")
    with pytest.raises(DomainError) as info:
        simulate(m, zero_state(m), DriveInput(ConstantVoltage(100 + 0j)), 0.5, 1e-4, backend="numpy")
    assert info.value.trajectory is not None


@pytest.mark.parametrize("dt,t_end", [(0.0, 1.0), (-1e-5, 1.0), (1e-3, 1e-4), (math.nan, 1.0)])
def test_bad_step_rejected(dt, t_end):
    m = default_model("pm_standard")
    with pytest.raises(ValueError):
        simulate(m, zero_state(m), DriveInput(), t_end, dt)


def test_step_cap():
    m = default_model("pm_standard")
    with pytest.raises((IntegrationError, ValueError)):
        simulate(m, zero_state(m), DriveInput(), 1e4, 1e-5)


def test_state_validation():
    with pytest.raises(ValueError):
        MachineState(0.0, 0.0, 0j, 1j).vector(default_model("pm_standard"))


def test_piecewise_voltage():
    v = PiecewiseVoltage((0.0, 1.0), (0j, 2 + 2j))
    assert v(0.5) == 1 + 1j
    assert v(3.0) == 2 + 2j
    with pytest.raises(ValueError):
        PiecewiseVoltage((1.0, 0.0), (0j, 1j))


# flux-state cross-check ---------------------------------------------------------


@pytest.mark.parametrize("kind", ["pm_standard", "im_standard"])
def test_flux_state_agrees(kind):
    m = default_model(kind)
    a = simulate(m, zero_state(m), SINE, 0.1, 1e-5)
    b = flux_state_simulate(m, zero_state(m), SINE, 0.1, 1e-5)
    scale = np.max(np.abs(a.states), axis=0)
    assert np.max(np.abs(a.states - b.states) / np.maximum(scale, 1e-300)) <= 1e-6


def test_flux_state_zero():
    m = default_model("im_standard")
    traj = flux_state_simulate(m, zero_state(m), DriveInput(), 0.01, 1e-4, backend="numpy")
    assert np.all(traj.states == 0.0)


def test_flux_state_rejects_nonlinear_kind():
    m = default_model("im_sat")
    with pytest.raises(ValueError):
        flux_state_simulate(m, zero_state(m), DriveInput(), 0.01, 1e-4)


def test_state_derivative_batched(rng):
    m = default_model("pm_saliency")
    y = np.concatenate([rng.uniform(0, 6, (5, 1)), rng.uniform(-10, 10, (5, 1)), rng.uniform(-3, 3, (5, 2))], axis=1)
    batch = state_derivative(m, y, 1 + 2j, 0.3)
    for k in range(5):
        assert np.allclose(state_derivative(m, y[k], 1 + 2j, 0.3), batch[k], rtol=1e-13, atol=1e-12)
