"""Magnetic energy (Legendre transform) and power-balance auditing."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .models import MagneticLagrangianModel, PmParams, ImParams, coordinates, _currents
from .wirtinger import abs2, array_namespace, conj, derivatives, expj, real, wirtinger_from_real


@dataclass(frozen=True)
class EnergyBreakdown:
    h_mech: float
    h_mag: float

    @property
    def total(self) -> float:
        return self.h_mech + self.h_mag


def legendre_energy(model: MagneticLagrangianModel, x):
    """``H_m`` at real coordinates ``x`` (numpy or jax, batched).

    Sums ``dL/dq q + dL/dq* q*`` over the complex currents and subtracts
    ``L_m``.
    """
    xp = array_namespace(x)
    value, grad, _ = derivatives(model.lagrangian, x)
    w = wirtinger_from_real(grad, model.layout)
    n = model.n_currents
    q = x[..., 0 : 2 * n : 2] + 1j * x[..., 1 : 2 * n : 2]
    pairing = w.d_dq * q + w.d_dqstar * xp.conj(q)
    return xp.sum(xp.real(pairing), axis=-1) - value


def magnetic_energy(model: MagneticLagrangianModel, theta, currents):
    """Magnetic energy ``H_m`` from the Wirtinger partials of ``L_m``."""
    return legendre_energy(model, coordinates(model, theta, currents))


def closed_form_magnetic_energy(kind: str, params: PmParams | ImParams, theta, currents):
    """Hand-derived ``H_m`` for each model kind, evaluated without AD."""
    model = MagneticLagrangianModel(kind, params)
    cur = _currents(model, currents)
    theta = np.asarray(theta, dtype=float)
    p = params
    e = np.exp(1j * p.n_p * theta)
    if model.is_pm:
        (i_s,) = cur
        i2 = np.abs(i_s) ** 2
        if kind == "pm_standard":
            return 0.5 * p.lam * (i2 - p.ibar**2)
        sal = (np.conj(i_s) * e) ** 2 + (i_s * np.conj(e)) ** 2
        if kind == "pm_saliency":
            return np.real(0.5 * p.lam * (i2 - p.ibar**2) - 0.25 * p.mu * sal)
        z = i_s + p.ibar * e
        s = np.abs(z) ** 2
        lam, mu = p.inductances(s)
        dlam, dmu = p.inductance_slopes(s)
        rho_lam_prime = 2.0 * s * dlam  # rho * lambda'
        cross = np.conj(i_s) * z + i_s * np.conj(z)
        h = (
            0.5 * (lam + rho_lam_prime) * i2
            - 0.5 * lam * p.ibar**2
            + 0.25 * rho_lam_prime * p.ibar * (i_s * np.conj(e) + np.conj(i_s) * e)
            # mu' * cross / (2 rho) with mu'/(2 rho) = d mu / d rho^2
            - 0.25 * (mu + dmu * cross) * sal
        )
        return np.real(h)
    i_r, i_s = cur
    z = i_s + i_r * e
    s = np.abs(z) ** 2
    leak = 0.5 * p.L_fr * np.abs(i_r) ** 2 + 0.5 * p.L_fs * np.abs(i_s) ** 2
    if kind == "im_standard":
        return 0.5 * p.L_m * s + leak
    lm = p.main_inductance(s)
    rho_lm_prime = 2.0 * s * p.main_inductance_slope(s)
    h = 0.5 * (lm + rho_lm_prime) * s + leak
    if kind == "im_sat_harmonic":
        for hm in p.harmonics:
            eh = np.exp(-1j * hm.sigma * hm.nu * p.n_p * theta)
            h = h + 0.5 * hm.L * np.real(i_s * np.conj(i_r) * eh + np.conj(i_s) * i_r * np.conj(eh))
    return h


def energy_breakdown(model: MagneticLagrangianModel, theta, omega, currents) -> EnergyBreakdown:
    return EnergyBreakdown(
        h_mech=0.5 * model.params.J * omega**2,
        h_mag=float(magnetic_energy(model, theta, currents)),
    )


# ---------------------------------------------------------------------------
# flux-coordinate Hamiltonians of the two linear models


FLUX_STATE_KINDS = ("pm_standard", "im_standard")


def flux_hamiltonian(model: MagneticLagrangianModel, xs):
    """``H_m`` as a function of fluxes and angle, for the linear models.

    Coordinates follow the current layout with fluxes in place of currents:
    PM ``(phi_s.re, phi_s.im, theta)``, IM ``(phi_r.re, phi_r.im, phi_s.re,
    phi_s.im, theta)``.
    """
    p = model.params
    if model.kind == "pm_standard":
        phi_s = xs[0] + 1j * xs[1]
        d = phi_s - p.phibar * expj(p.n_p * xs[2])
        return abs2(d) * (0.5 / p.lam) - 0.5 * p.lam * p.ibar**2
    if model.kind == "im_standard":
        phi_r = xs[0] + 1j * xs[1]
        phi_s = xs[2] + 1j * xs[3]
        a = p.L_m + p.L_fr
        b = p.L_m + p.L_fs
        det = a * b - p.L_m**2
        coupling = real(conj(phi_r) * conj(expj(p.n_p * xs[4])) * phi_s)
        return (b * abs2(phi_r) + a * abs2(phi_s) - 2.0 * p.L_m * coupling) * (0.5 / det)
    raise ValueError(f"no flux-state Hamiltonian for kind {model.kind}; use one of {FLUX_STATE_KINDS}")


# ---------------------------------------------------------------------------
# power balance


@dataclass
class AuditResult:
    """Residual of ``dH/dt = Re(u_s i_s*) - R_s|i_s|^2 - R_r|i_r|^2 - tau_L omega``."""

    times: np.ndarray
    hamiltonian: np.ndarray
    dh_dt: np.ndarray
    power: np.ndarray
    residual: np.ndarray
    peak_power: float
    max_residual: float
    drift: float
    throughput: float

    @property
    def relative_drift(self) -> float:
        if self.throughput == 0.0:
            return 0.0 if self.drift == 0.0 else float("inf")
        return self.drift / self.throughput

    @property
    def relative_residual(self) -> float:
        if self.peak_power == 0.0:
            return 0.0 if self.max_residual == 0.0 else float("inf")
        return self.max_residual / self.peak_power


def time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Second-order central differences; one-sided second-order stencils at the ends."""
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(v)
    if v.size < 3:
        if v.size == 2:
            out[:] = (v[1] - v[0]) / dt
        return out
    out[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dt)
    out[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dt)
    return out


def power_terms(model: MagneticLagrangianModel, trajectory, drive):
    """Split the exchanged power into (supply, ohmic loss, load) series."""
    p = model.params
    i_s = trajectory.i_s
    u = drive.u_s(trajectory.times)
    supply = np.real(u * np.conj(i_s))
    loss = p.R_s * np.abs(i_s) ** 2
    if not model.is_pm:
        loss = loss + p.R_r * np.abs(trajectory.i_r) ** 2
    load = drive.tau_L * trajectory.omega
    return supply, loss, load


def power_balance_audit(model: MagneticLagrangianModel, trajectory, drive) -> AuditResult:
    if trajectory.kind != model.kind or trajectory.states.shape[-1] != 2 + 2 * model.n_currents:
        raise ValueError("trajectory was not produced by this model")
    t = trajectory.times
    if t.size < 2:
        raise ValueError("trajectory needs at least two samples")
    dts = np.diff(t)
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-9, atol=0.0):
        raise ValueError("power balance audit needs uniformly sampled times")
    h = trajectory.energies
    supply, loss, load = power_terms(model, trajectory, drive)
    power = supply - loss - load
    dh = time_derivative(h, dt)
    residual = dh - power
    integrated = np.trapezoid(power, t)
    throughput = np.trapezoid(np.abs(supply) + loss + np.abs(load), t)
    return AuditResult(
        times=t,
        hamiltonian=h,
        dh_dt=dh,
        power=power,
        residual=residual,
        peak_power=float(np.max(np.abs(supply))),
        max_residual=float(np.max(np.abs(residual))),
        drift=float(abs(h[-1] - h[0] - integrated)),
        throughput=float(throughput),
    )


def audit_report(result: AuditResult, bound: float) -> str:
    ok = result.relative_drift <= bound
    lines = [
        f"samples            {result.times.size}",
        f"peak_input_power   {result.peak_power:.17g}",
        f"max_residual       {result.max_residual:.17g}",
        f"relative_residual  {result.relative_residual:.17g}",
        f"energy_throughput  {result.throughput:.17g}",
        f"drift              {result.drift:.17g}",
        f"relative_drift     {result.relative_drift:.17g}",
        f"bound              {bound:.17g}",
        f"verdict            {'PASS' if ok else 'FAIL'}",
    ]
    return "\n".join(lines) + "\n"


def audit_csv(result: AuditResult) -> str:
    buf = io.StringIO()
    data = np.column_stack([result.times, result.hamiltonian, result.dh_dt, result.power, result.residual])
    np.savetxt(buf, data, fmt="%.17g", delimiter=",", header="t,hamiltonian,dh_dt,power,residual", comments="")
    return buf.getvalue()
