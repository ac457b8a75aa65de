"""Euler-Lagrange dynamics in mass-matrix form and fixed-step integration.

The integrated state is ``y = (theta, omega, [i_r.re, i_r.im,] i_s.re,
i_s.im)``.  A single AD pass of ``L_m`` at the current coordinates gives

* flux coordinates ``phi = dL_m/d(currents)`` (the real form of
  ``2 dL_m/di*``),
* the torque ``dL_m/dtheta``,
* the mass matrix ``M = d phi / d(currents)`` and the angle column
  ``d phi / d theta`` of the Hessian,

so ``d phi/dt = source`` becomes ``M di/dt = source - (d phi/d theta) omega``.
"""
from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import FLUX_STATE_KINDS, flux_hamiltonian, legendre_energy
from .models import MagneticLagrangianModel
from .wirtinger import DomainError, array_namespace, derivatives

COND_LIMIT = 1e12
MAX_STEPS = 50_000_000
AUTO_JAX_STEPS = 2000


class SingularMassMatrixError(RuntimeError):
    """The mass matrix lost positive definiteness or exceeded the condition limit.

    ``trajectory`` holds the samples accepted before the failure, if any.
    """

    def __init__(self, message: str, state=None, trajectory=None):
        super().__init__(message)
        self.state = state
        self.trajectory = trajectory


class IntegrationError(RuntimeError):
    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# state and inputs


@dataclass(frozen=True)
class MachineState:
    theta: float
    omega: float
    i_s: complex
    i_r: complex | None = None

    def vector(self, model: MagneticLagrangianModel) -> np.ndarray:
        if model.is_pm:
            if self.i_r is not None:
                raise ValueError("PM machine state has no rotor current")
            v = [self.theta, self.omega, self.i_s.real, self.i_s.imag]
        else:
            i_r = 0j if self.i_r is None else complex(self.i_r)
            v = [self.theta, self.omega, i_r.real, i_r.imag, self.i_s.real, self.i_s.imag]
        v = np.array(v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("machine state has non-finite components")
        return v

    @classmethod
    def from_vector(cls, model: MagneticLagrangianModel, y) -> MachineState:
        y = [float(v) for v in y]
        if model.is_pm:
            return cls(y[0], y[1], complex(y[2], y[3]))
        return cls(y[0], y[1], complex(y[4], y[5]), complex(y[2], y[3]))


def zero_state(model: MagneticLagrangianModel) -> MachineState:
    return MachineState(0.0, 0.0, 0j, None if model.is_pm else 0j)


@dataclass(frozen=True)
class ConstantVoltage:
    value: complex = 0j

    def __call__(self, t, xp=np):
        return self.value + 0.0 * xp.asarray(t)


@dataclass(frozen=True)
class SinusoidalVoltage:
    """Rotating voltage ``amplitude * exp(j(2 pi frequency t + phase))``."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def __call__(self, t, xp=np):
        return self.amplitude * xp.exp(1j * (2.0 * math.pi * self.frequency * xp.asarray(t) + self.phase))


@dataclass(frozen=True)
class PiecewiseVoltage:
    """Linear interpolation through ``(times, values)``; held constant outside."""

    times: tuple[float, ...]
    values: tuple[complex, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(complex(v) for v in self.values))
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("piecewise table needs matching, non-empty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("piecewise table times must be strictly increasing")

    def __call__(self, t, xp=np):
        tp = xp.asarray(self.times)
        v = np.asarray(self.values)
        t = xp.asarray(t)
        return xp.interp(t, tp, xp.asarray(v.real)) + 1j * xp.interp(t, tp, xp.asarray(v.imag))


@dataclass(frozen=True)
class DriveInput:
    u_s: ConstantVoltage | SinusoidalVoltage | PiecewiseVoltage = field(default_factory=ConstantVoltage)
    tau_L: float = 0.0


# ---------------------------------------------------------------------------
# electrical quantities


def coords_from_state_vector(y):
    """Lagrangian coordinates ``(currents..., theta)`` from ``y``."""
    xp = array_namespace(y)
    return xp.concatenate([y[..., 2:], y[..., :1]], axis=-1)


def _ad_pass(model: MagneticLagrangianModel, y):
    x = coords_from_state_vector(y)
    _, g, h = derivatives(model.lagrangian, x)
    nc = 2 * model.n_currents
    return g[..., :nc], g[..., nc], h[..., :nc, :nc], h[..., :nc, nc]


def _source(model: MagneticLagrangianModel, y, u):
    xp = array_namespace(y, u)
    p = model.params
    us = xp.stack([xp.real(u), xp.imag(u)], axis=-1)
    if model.is_pm:
        return us - p.R_s * y[..., 2:4]
    return xp.concatenate([-p.R_r * y[..., 2:4], us - p.R_s * y[..., 4:6]], axis=-1)


def _solve(M, b):
    xp = array_namespace(M, b)
    return xp.linalg.solve(M, b[..., None])[..., 0]


def state_derivative(model: MagneticLagrangianModel, y, u, tau_L):
    """``dy/dt`` for state vectors ``y`` (numpy or jax, batched) and complex voltage ``u``."""
    xp = array_namespace(y, u)
    _, torque, M, dphi_dtheta = _ad_pass(model, y)
    omega = y[..., 1]
    di = _solve(M, _source(model, y, u) - dphi_dtheta * omega[..., None])
    mech = xp.stack([omega, (torque - tau_L) / model.params.J], axis=-1)
    return xp.concatenate([mech, di], axis=-1)


def mass_matrix_health(M):
    """``(min eigenvalue, condition number)`` of symmetric mass matrices."""
    ev = np.linalg.eigvalsh(M)
    lo, hi = ev[..., 0], ev[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lo > 0, hi / lo, np.inf)
    return lo, cond


def flux(model: MagneticLagrangianModel, state: MachineState) -> list[complex]:
    """Flux linkages ``[phi_s]`` (PM) or ``[phi_r, phi_s]`` (IM) via ``2 dL_m/di*``."""
    phi, _, _, _ = _ad_pass(model, state.vector(model))
    return [complex(phi[2 * k], phi[2 * k + 1]) for k in range(model.n_currents)]


def torque(model: MagneticLagrangianModel, state: MachineState) -> float:
    return float(_ad_pass(model, state.vector(model))[1])


def mass_matrix(model: MagneticLagrangianModel, state: MachineState):
    """Real symmetric mass matrix over current coordinates and its condition number."""
    _, _, M, _ = _ad_pass(model, state.vector(model))
    lo, cond = mass_matrix_health(M)
    if not lo > 0 or cond > COND_LIMIT:
        raise SingularMassMatrixError(
            f"mass matrix singular or indefinite at {state} (min eigenvalue {lo:.3g}, cond {cond:.3g})",
            state=state,
        )
    return M, float(cond)


def rhs(model: MagneticLagrangianModel, state: MachineState, drive: DriveInput, t: float) -> MachineState:
    """Time derivative of ``state``, returned as a :class:`MachineState` of rates."""
    y = state.vector(model)
    mass_matrix(model, state)
    dy = state_derivative(model, y, complex(drive.u_s(t)), drive.tau_L)
    if not np.all(np.isfinite(dy)):
        raise ValueError(f"non-finite derivative at {state}")
    return MachineState.from_vector(model, dy)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    kind: str
    times: np.ndarray
    states: np.ndarray  # rows of y
    fluxes: np.ndarray  # complex, columns [phi_s] or [phi_r, phi_s]
    torque_em: np.ndarray
    energies: np.ndarray  # J omega^2/2 + H_m

    def __len__(self) -> int:
        return self.times.size

    @property
    def theta(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def omega(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def i_s(self) -> np.ndarray:
        return self.states[:, -2] + 1j * self.states[:, -1]

    @property
    def i_r(self) -> np.ndarray | None:
        if self.states.shape[1] == 4:
            return None
        return self.states[:, 2] + 1j * self.states[:, 3]

    @property
    def phi_s(self) -> np.ndarray:
        return self.fluxes[:, -1]

    @property
    def phi_r(self) -> np.ndarray | None:
        return None if self.fluxes.shape[1] == 1 else self.fluxes[:, 0]

    def state(self, k: int) -> MachineState:
        y = self.states[k]
        i_r = None if self.states.shape[1] == 4 else complex(y[2], y[3])
        return MachineState(float(y[0]), float(y[1]), complex(y[-2], y[-1]), i_r)

    def columns(self) -> tuple[list[str], np.ndarray]:
        names = ["t", "theta", "omega", "i_s_re", "i_s_im"]
        cols = [self.times, self.theta, self.omega, self.i_s.real, self.i_s.imag]
        if self.i_r is not None:
            names += ["i_r_re", "i_r_im"]
            cols += [self.i_r.real, self.i_r.imag]
        names += ["phi_s_re", "phi_s_im"]
        cols += [self.phi_s.real, self.phi_s.imag]
        if self.phi_r is not None:
            names += ["phi_r_re", "phi_r_im"]
            cols += [self.phi_r.real, self.phi_r.imag]
        names += ["torque_em", "hamiltonian"]
        cols += [self.torque_em, self.energies]
        return names, np.column_stack(cols)

    def to_csv(self) -> str:
        names, data = self.columns()
        buf = io.StringIO()
        np.savetxt(buf, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def derived_columns(model: MagneticLagrangianModel, states: np.ndarray, chunk: int = 8192):
    """Fluxes, torque, Hamiltonian and mass-matrix health for state rows."""
    n = states.shape[0]
    nc = model.n_currents
    fluxes = np.empty((n, nc), dtype=complex)
    torque = np.empty(n)
    energy = np.empty(n)
    lo = np.empty(n)
    cond = np.empty(n)
    for a in range(0, n, chunk):
        y = states[a : a + chunk]
        phi, tq, M, _ = _ad_pass(model, y)
        fluxes[a : a + chunk] = phi[:, 0::2] + 1j * phi[:, 1::2]
        torque[a : a + chunk] = tq
        energy[a : a + chunk] = 0.5 * model.params.J * y[:, 1] ** 2 + legendre_energy(
            model, coords_from_state_vector(y)
        )
        lo[a : a + chunk], cond[a : a + chunk] = mass_matrix_health(M)
    return fluxes, torque, energy, lo, cond


def _rho_squared(model: MagneticLagrangianModel, states: np.ndarray) -> np.ndarray:
    p = model.params
    e = np.exp(1j * p.n_p * states[:, 0])
    i_s = states[:, -2] + 1j * states[:, -1]
    if model.is_pm:
        return np.abs(i_s + p.ibar * e) ** 2
    return np.abs(i_s + (states[:, 2] + 1j * states[:, 3]) * e) ** 2


def _first_bad_row(model: MagneticLagrangianModel, states: np.ndarray):
    """Index and description of the first inadmissible row, or ``(None, None)``."""
    finite = np.all(np.isfinite(states), axis=1)
    bad = ~finite
    reason = np.where(bad, "non-finite state", "")
    curve = model.params.saturation
    if curve is not None and math.isfinite(curve.rho_max):
        over = finite & (_rho_squared(model, np.where(finite[:, None], states, 0.0)) > curve.rho_max**2)
        reason = np.where(over & ~bad, "rho outside saturation curve range", reason)
        bad |= over
    if not np.any(bad):
        return None, None
    k = int(np.argmax(bad))
    return k, str(reason[k])


def _build_trajectory(model, times, states) -> tuple[Trajectory, int | None, str | None]:
    k, why = _first_bad_row(model, states)
    if k is not None:
        times, states = times[:k], states[:k]
    fluxes, tq, energy, lo, cond = derived_columns(model, states)
    singular = ~(lo > 0) | (cond > COND_LIMIT)
    if np.any(singular):
        j = int(np.argmax(singular))
        k, why = j, f"mass matrix singular (min eigenvalue {lo[j]:.3g}, cond {cond[j]:.3g})"
        times, states = times[:j], states[:j]
        fluxes, tq, energy = fluxes[:j], tq[:j], energy[:j]
    traj = Trajectory(model.kind, times, states, fluxes, tq, energy)
    return traj, k, why


def _check_run(dt: float, t_end: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end >= dt:
        raise ValueError("t_end must be at least dt")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * t_end:
        n = int(math.floor(t_end / dt))
    if n > MAX_STEPS:
        raise IntegrationError(f"{n} steps exceed the step-count cap {MAX_STEPS}")
    return n


class _StageFailure(Exception):
    def __init__(self, rows: np.ndarray, reason: str):
        self.rows = rows
        self.reason = reason


def _rk4_numpy(deriv, y0: np.ndarray, dt: float, n: int, stop) -> np.ndarray:
    """Fixed-step RK4; raises :class:`_StageFailure` with the accepted rows if a stage fails."""
    out = np.empty((n + 1, y0.size))
    out[0] = y = y0
    for k in range(n):
        t = k * dt
        try:
            k1 = deriv(y, t)
            k2 = deriv(y + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = deriv(y + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = deriv(y + dt * k3, t + dt)
        except DomainError:
            raise _StageFailure(out[: k + 1], "rho outside saturation curve range (RK stage)") from None
        except np.linalg.LinAlgError:
            raise _StageFailure(out[: k + 1], "mass matrix singular (RK stage)") from None
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = y
        if stop(y):
            out[k + 2 :] = np.nan
            return out
    return out


@functools.lru_cache(maxsize=32)
def _jax_runner(system: str, model: MagneticLagrangianModel, drive: DriveInput, n: int):
    import jax
    import jax.numpy as jnp

    deriv = _derivative_function(system, model, drive, jnp)

    @jax.jit
    def run(y0, dt):
        def step(y, k):
            t = k * dt
            k1 = deriv(y, t)
            k2 = deriv(y + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = deriv(y + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = deriv(y + dt * k3, t + dt)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            return y, y

        _, ys = jax.lax.scan(step, y0, jnp.arange(n, dtype=jnp.float64))
        return ys

    return run


def _run_jax(system, model, drive, y0, dt, n) -> np.ndarray:
    from jax.experimental import enable_x64
    import jax.numpy as jnp

    with enable_x64():
        run = _jax_runner(system, model, drive, n)
        ys = np.asarray(run(jnp.asarray(y0, dtype=jnp.float64), jnp.float64(dt)))
    return np.vstack([y0[None, :], ys])


def _derivative_function(system: str, model, drive: DriveInput, xp):
    if system == "current":
        return lambda y, t: state_derivative(model, y, drive.u_s(t, xp), drive.tau_L)
    return lambda y, t: flux_state_derivative(model, y, drive.u_s(t, xp), drive.tau_L)


def _pick_backend(backend: str, n: int) -> str:
    if backend == "auto":
        try:
            import jax  # noqa: F401
        except ImportError:
            return "numpy"
        return "jax" if n >= AUTO_JAX_STEPS else "numpy"
    if backend not in ("numpy", "jax"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def simulate(
    model: MagneticLagrangianModel,
    initial: MachineState,
    drive: DriveInput,
    t_end: float,
    dt: float = 1e-5,
    backend: str = "auto",
) -> Trajectory:
    """Classical RK4 on the mass-matrix ODE, sampled every ``dt``.

    Raises :class:`SingularMassMatrixError` (or :class:`DomainError` when the
    saturation range is left) carrying the trajectory truncated before the
    first inadmissible sample.
    """
    n = _check_run(dt, t_end)
    y0 = initial.vector(model)
    mass_matrix(model, initial)
    backend = _pick_backend(backend, n)
    stage_reason = None
    if backend == "jax":
        ys = _run_jax("current", model, drive, y0, dt, n)
    else:
        deriv = _derivative_function("current", model, drive, np)
        try:
            ys = _rk4_numpy(deriv, y0, dt, n, stop=lambda y: _first_bad_row(model, y[None, :])[0] is not None)
        except _StageFailure as fail:
            ys = np.full((n + 1, y0.size), np.nan)
            ys[: len(fail.rows)] = fail.rows
            stage_reason = (len(fail.rows), fail.reason)
        else:
            stage_reason = None
    times = np.arange(n + 1) * dt
    traj, k, why = _build_trajectory(model, times, ys)
    if stage_reason is not None and k == stage_reason[0]:
        why = stage_reason[1]
    if k is not None:
        msg = f"integration stopped at t = {k * dt:.6g} s: {why}"
        if why.startswith("rho"):
            err = DomainError(msg, "rho")
            err.trajectory = traj
            raise err
        if why.startswith("mass"):
            raise SingularMassMatrixError(msg, state=MachineState.from_vector(model, ys[k]), trajectory=traj)
        raise IntegrationError(msg, trajectory=traj)
    return traj


# ---------------------------------------------------------------------------
# flux-state (Hamiltonian) integration of the linear models


def flux_state_derivative(model: MagneticLagrangianModel, y, u, tau_L):
    """``d/dt (theta, omega, fluxes)`` from ``H_m(theta, fluxes)``.

    Currents are ``2 dH_m/dphi*`` (the real gradient over flux coordinates)
    and the torque is ``-dH_m/dtheta`` at constant flux.
    """
    xp = array_namespace(y, u)
    x = coords_from_state_vector(y)
    _, g, _ = derivatives(lambda xs: flux_hamiltonian(model, xs), x)
    nc = 2 * model.n_currents
    currents = g[..., :nc]
    torque = -g[..., nc]
    y_cur = xp.concatenate([y[..., :2], currents], axis=-1)
    dphi = _source(model, y_cur, u)
    mech = xp.stack([y[..., 1], (torque - tau_L) / model.params.J], axis=-1)
    return xp.concatenate([mech, dphi], axis=-1)


def _currents_from_fluxes(model, yf: np.ndarray) -> np.ndarray:
    _, g, _ = derivatives(lambda xs: flux_hamiltonian(model, xs), coords_from_state_vector(yf))
    return np.concatenate([yf[:, :2], g[:, : 2 * model.n_currents]], axis=1)


def flux_state_simulate(
    model: MagneticLagrangianModel,
    initial: MachineState,
    drive: DriveInput,
    t_end: float,
    dt: float = 1e-5,
    backend: str = "auto",
) -> Trajectory:
    """Integrate the flux-state equations; report states in current coordinates."""
    if model.kind not in FLUX_STATE_KINDS:
        raise ValueError(f"flux-state integration supports {FLUX_STATE_KINDS}, not {model.kind}")
    n = _check_run(dt, t_end)
    y0 = initial.vector(model)
    phi0 = flux(model, initial)
    yf0 = y0.copy()
    for k, phi in enumerate(phi0):
        yf0[2 + 2 * k : 4 + 2 * k] = (phi.real, phi.imag)
    backend = _pick_backend(backend, n)
    if backend == "jax":
        yf = _run_jax("flux", model, drive, yf0, dt, n)
    else:
        deriv = _derivative_function("flux", model, drive, np)
        try:
            yf = _rk4_numpy(deriv, yf0, dt, n, stop=lambda y: not np.all(np.isfinite(y)))
        except _StageFailure as fail:
            yf = np.full((n + 1, yf0.size), np.nan)
            yf[: len(fail.rows)] = fail.rows
    states = _currents_from_fluxes(model, yf)
    times = np.arange(n + 1) * dt
    traj, k, why = _build_trajectory(model, times, states)
    if k is not None:
        raise IntegrationError(f"integration stopped at t = {k * dt:.6g} s: {why}", trajectory=traj)
    traj.fluxes = yf[:, 2:][:, 0::2] + 1j * yf[:, 2:][:, 1::2]
    return traj
