"""Magnetic Lagrangians of permanent-magnet and induction machines.

Every model is a real scalar function of the rotor angle and complex
currents, written with complex arithmetic over :mod:`emlag.wirtinger`
quantities so the same code evaluates plain numbers, batched arrays and
dual numbers.

Real coordinate layout (complex pairs first, angle last):

* PM: ``(i_s.re, i_s.im, theta)``
* IM: ``(i_r.re, i_r.im, i_s.re, i_s.im, theta)``

The ``analytic_*`` functions are hand-derived closed forms kept independent
of the AD path; they serve as oracles for it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .wirtinger import DomainError, Layout, abs2, array_namespace, conj, expj, real

PM_KINDS = ("pm_standard", "pm_saliency", "pm_sat_saliency")
IM_KINDS = ("im_standard", "im_sat", "im_sat_harmonic")
KINDS = PM_KINDS + IM_KINDS

PM_LAYOUT = Layout(n_complex=1, n_real=1)
IM_LAYOUT = Layout(n_complex=2, n_real=1)


class ModelError(ValueError):
    """Invalid model parameters."""


# ---------------------------------------------------------------------------
# saturation curves


@dataclass(frozen=True)
class SaturationCurve:
    """Inductance as a function of the magnetizing-current modulus ``rho``.

    kinds and coefficients:

    * ``constant``: ``(value,)``
    * ``rational``: ``(value0, rho_s)`` for ``value0 / (1 + (rho/rho_s)**2)``
    * ``polynomial``: ``(a0, a1, a2, ...)`` for ``sum a_k rho**(2k)``

    All three are functions of ``rho**2``, so they stay smooth at ``rho = 0``
    and the AD path never differentiates ``|.|``.
    """

    kind: str
    coefficients: tuple[float, ...]
    rho_max: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        c = self.coefficients
        if self.kind == "constant":
            if len(c) != 1:
                raise ModelError("constant curve takes exactly one coefficient")
        elif self.kind == "rational":
            if len(c) != 2 or c[1] <= 0:
                raise ModelError("rational curve takes (value0, rho_s) with rho_s > 0")
        elif self.kind == "polynomial":
            if not c:
                raise ModelError("polynomial curve needs at least one coefficient")
            if len(c) > 1 and not math.isfinite(self.rho_max):
                raise ModelError("non-constant polynomial curve needs a finite rho_max")
        else:
            raise ModelError(f"unknown saturation curve kind {self.kind!r}")
        if not self.rho_max > 0:
            raise ModelError("rho_max must be positive")
        grid = self._grid()
        if np.any(self.of_square(grid**2) <= 0):
            raise ModelError("saturation curve must stay positive on its range")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (self.kind == "polynomial" and len(self.coefficients) == 1)

    @property
    def value0(self) -> float:
        return self.coefficients[0]

    def _grid(self, n: int = 257) -> np.ndarray:
        if math.isfinite(self.rho_max):
            top = self.rho_max
        elif self.kind == "rational":
            top = 100.0 * self.coefficients[1]
        else:
            top = 1e3
        return np.linspace(0.0, top, n)

    def of_square(self, s):
        """Curve value at ``rho**2 = s``; plain float for constant curves."""
        c = self.coefficients
        if self.is_constant:
            return c[0]
        if self.kind == "rational":
            return c[0] / (1.0 + s * (1.0 / (c[1] * c[1])))
        out = c[-1]
        for a in reversed(c[:-1]):
            out = out * s + a
        return out

    def d_of_square(self, s):
        """Derivative of the value with respect to ``s = rho**2``."""
        c = self.coefficients
        if self.is_constant:
            return 0.0
        if self.kind == "rational":
            q = 1.0 + s / (c[1] * c[1])
            return -c[0] / (c[1] * c[1] * q * q)
        out = 0.0
        for k in range(len(c) - 1, 0, -1):
            out = out * s + k * c[k]
        return out

    def check(self, s) -> None:
        """Raise :class:`DomainError` if any ``rho**2 = s`` exceeds the range."""
        if not math.isfinite(self.rho_max) or array_namespace(s) is not np:
            return
        rho2 = np.max(np.asarray(getattr(s, "value", s)).real)
        if rho2 > self.rho_max**2:
            raise DomainError(
                f"rho = {math.sqrt(rho2):.6g} A outside saturation curve range [0, {self.rho_max:.6g}]",
                "rho",
            )

    def evaluate(self, rho):
        """Return ``(value, d value / d rho)`` at ``rho``."""
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise DomainError("rho must be non-negative", "rho")
        s = rho * rho
        self.check(s)
        return self.of_square(s) + 0.0 * rho, 2.0 * rho * self.d_of_square(s)


def saturation_eval(curve: SaturationCurve, rho):
    """``(lambda(rho), lambda'(rho))`` for a saturation curve."""
    return curve.evaluate(rho)


CONSTANT_CURVE = SaturationCurve("constant", (1.0,))


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class PmParams:
    """Permanent-magnet machine parameters (SI units).

    ``lam`` is the mean inductance (L_d + L_q)/2, ``mu`` the saliency
    inductance (L_q - L_d)/2 and ``ibar`` the magnetizing current, so that the
    magnet flux is ``phibar = lam * ibar``.  A saturation curve scales ``lam``
    and ``mu`` by ``curve(rho) / curve(0)``.
    """

    n_p: int = 3
    J: float = 0.01
    R_s: float = 1.0
    lam: float = 0.01
    mu: float = 0.002
    ibar: float = 10.0
    saturation: SaturationCurve | None = None

    def __post_init__(self):
        if int(self.n_p) != self.n_p or self.n_p < 1:
            raise ModelError("n_p must be a positive integer")
        for name in ("J", "R_s", "lam"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive")
        if not self.ibar >= 0:
            raise ModelError("ibar must be non-negative")
        if not abs(self.mu) < self.lam:
            raise ModelError("|mu| must be smaller than lambda")
        if self.saturation is not None:
            grid = self.saturation._grid()
            lam, mu = self.inductances(grid**2)
            if np.any(np.abs(mu + 0.0 * grid) >= lam):
                raise ModelError("|mu(rho)| must stay below lambda(rho) on the curve range")

    @classmethod
    def from_flux(cls, phibar: float, lam: float, **kw) -> PmParams:
        return cls(lam=lam, ibar=phibar / lam, **kw)

    @property
    def phibar(self) -> float:
        return self.lam * self.ibar

    @property
    def L_d(self) -> float:
        return self.lam - self.mu

    @property
    def L_q(self) -> float:
        return self.lam + self.mu

    def _shape(self, s):
        curve = self.saturation
        if curve is None or curve.is_constant:
            return 1.0, 0.0
        return curve.of_square(s) / curve.value0, curve.d_of_square(s) / curve.value0

    def inductances(self, s):
        """``(lambda, mu)`` at ``rho**2 = s``."""
        f, _ = self._shape(s)
        return self.lam * f, self.mu * f

    def inductance_slopes(self, s):
        """``(d lambda/ds, d mu/ds)`` at ``rho**2 = s``."""
        _, df = self._shape(s)
        return self.lam * df, self.mu * df


@dataclass(frozen=True)
class Harmonic:
    """Space harmonic of order ``nu`` with sign ``sigma`` and inductance ``L``."""

    nu: int
    sigma: int
    L: float

    def __post_init__(self):
        if int(self.nu) != self.nu or self.nu < 1:
            raise ModelError("harmonic order nu must be a positive integer")
        if self.sigma not in (1, -1):
            raise ModelError("harmonic sign sigma must be +1 or -1")


@dataclass(frozen=True)
class ImParams:
    """Induction machine parameters (SI units).

    A saturation curve scales the main inductance ``L_m`` by
    ``curve(rho) / curve(0)``.
    """

    n_p: int = 2
    J: float = 0.05
    R_s: float = 0.5
    R_r: float = 0.4
    L_m: float = 0.1
    L_fs: float = 0.005
    L_fr: float = 0.005
    harmonics: tuple[Harmonic, ...] = ()
    saturation: SaturationCurve | None = None

    def __post_init__(self):
        object.__setattr__(self, "harmonics", tuple(self.harmonics))
        if int(self.n_p) != self.n_p or self.n_p < 1:
            raise ModelError("n_p must be a positive integer")
        for name in ("J", "R_s", "R_r", "L_m", "L_fs", "L_fr"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive")
        for h in self.harmonics:
            if not abs(h.L) < 0.2 * self.L_m:
                raise ModelError(f"harmonic nu={h.nu}: |L_nu| must be below 0.2 * L_m")

    def main_inductance(self, s):
        curve = self.saturation
        if curve is None or curve.is_constant:
            return self.L_m
        return self.L_m * (curve.of_square(s) / curve.value0)

    def main_inductance_slope(self, s):
        curve = self.saturation
        if curve is None or curve.is_constant:
            return 0.0
        return self.L_m * (curve.d_of_square(s) / curve.value0)


DEFAULT_PM = PmParams()
DEFAULT_IM = ImParams(harmonics=(Harmonic(5, 1, 0.002),))
# rational curves keep a positive-definite mass matrix only for rho < rho_s / sqrt(3)
IM_CURVE = SaturationCurve("rational", (0.1, 20.0), rho_max=11.0)


# ---------------------------------------------------------------------------
# model descriptor


@dataclass(frozen=True)
class MagneticLagrangianModel:
    kind: str
    params: PmParams | ImParams = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        expected = PmParams if self.is_pm else ImParams
        if self.params is None:
            object.__setattr__(self, "params", default_params(self.kind))
        if not isinstance(self.params, expected):
            raise ModelError(f"kind {self.kind} needs {expected.__name__}")
        p = self.params
        if self.kind in ("pm_standard", "pm_saliency", "im_standard") and p.saturation is not None:
            raise ModelError(f"kind {self.kind} takes no saturation curve")
        if self.kind == "pm_standard" and p.mu != 0:
            raise ModelError("pm_standard has no saliency; set mu = 0 or use pm_saliency")
        if not self.is_pm and self.kind != "im_sat_harmonic" and p.harmonics:
            raise ModelError(f"kind {self.kind} takes no harmonics")

    @property
    def is_pm(self) -> bool:
        return self.kind in PM_KINDS

    @property
    def layout(self) -> Layout:
        return PM_LAYOUT if self.is_pm else IM_LAYOUT

    @property
    def n_currents(self) -> int:
        return self.layout.n_complex

    @property
    def current_names(self) -> tuple[str, ...]:
        return ("i_s",) if self.is_pm else ("i_r", "i_s")

    def lagrangian(self, xs: Sequence):
        """Magnetic Lagrangian over real coordinates ``xs`` (see module doc)."""
        if self.is_pm:
            i_s = xs[0] + 1j * xs[1]
            return _pm_lagrangian(self.kind, self.params, i_s, xs[2])
        i_r = xs[0] + 1j * xs[1]
        i_s = xs[2] + 1j * xs[3]
        return _im_lagrangian(self.kind, self.params, i_r, i_s, xs[4])

    def with_params(self, **changes) -> MagneticLagrangianModel:
        return MagneticLagrangianModel(self.kind, replace(self.params, **changes))


def default_params(kind: str) -> PmParams | ImParams:
    """Shipped desk-scale parameters for ``kind``."""
    if kind == "pm_standard":
        return replace(DEFAULT_PM, mu=0.0)
    if kind == "pm_saliency":
        return DEFAULT_PM
    if kind == "pm_sat_saliency":
        return replace(DEFAULT_PM, saturation=SaturationCurve("rational", (0.01, 100.0), rho_max=50.0))
    if kind == "im_standard":
        return ImParams()
    if kind == "im_sat":
        return ImParams(saturation=IM_CURVE)
    if kind == "im_sat_harmonic":
        return replace(DEFAULT_IM, saturation=IM_CURVE)
    raise ModelError(f"unknown model kind {kind!r}")


def default_model(kind: str) -> MagneticLagrangianModel:
    return MagneticLagrangianModel(kind, default_params(kind))


def _pm_lagrangian(kind, p: PmParams, i_s, theta):
    e = expj(p.n_p * theta)
    z = i_s + p.ibar * e
    if kind == "pm_standard":
        return 0.5 * p.lam * abs2(z)
    w = i_s * conj(e)
    if kind == "pm_saliency":
        return 0.5 * p.lam * abs2(z) - 0.5 * p.mu * real(w * w)
    s = abs2(z)
    if p.saturation is not None:
        p.saturation.check(s)
    lam, mu = p.inductances(s)
    return 0.5 * lam * s - 0.5 * mu * real(w * w)


def _im_lagrangian(kind, p: ImParams, i_r, i_s, theta):
    e = expj(p.n_p * theta)
    z = i_s + i_r * e
    s = abs2(z)
    leak = 0.5 * p.L_fr * abs2(i_r) + 0.5 * p.L_fs * abs2(i_s)
    if kind == "im_standard":
        return 0.5 * p.L_m * s + leak
    if p.saturation is not None:
        p.saturation.check(s)
    out = 0.5 * p.main_inductance(s) * s + leak
    if kind == "im_sat_harmonic":
        for h in p.harmonics:
            out = out + h.L * real(i_s * conj(i_r) * expj(-h.sigma * h.nu * p.n_p * theta))
    return out


# ---------------------------------------------------------------------------
# public evaluation helpers


def _currents(model: MagneticLagrangianModel, currents) -> list:
    cur = list(currents) if isinstance(currents, (list, tuple)) else [currents]
    if len(cur) != model.n_currents:
        raise ValueError(
            f"kind {model.kind} expects {model.n_currents} current(s) "
            f"({', '.join(model.current_names)}), got {len(cur)}"
        )
    return [np.asarray(c, dtype=complex) for c in cur]


def coordinates(model: MagneticLagrangianModel, theta, currents) -> np.ndarray:
    """Pack angle and complex currents into the real layout (batched)."""
    cur = _currents(model, currents)
    theta = np.asarray(theta, dtype=float)
    parts = []
    for c in cur:
        parts += [c.real, c.imag]
    parts.append(theta)
    parts = np.broadcast_arrays(*parts)
    return np.stack(parts, axis=-1)


def eval_lagrangian(model: MagneticLagrangianModel, theta, currents):
    """Magnetic Lagrangian ``L_m(theta, currents)`` in joules."""
    x = coordinates(model, theta, currents)
    return model.lagrangian([x[..., k] for k in range(x.shape[-1])])


def analytic_flux(model: MagneticLagrangianModel, theta, currents) -> list:
    """Closed-form flux linkages: ``[phi_s]`` (PM) or ``[phi_r, phi_s]`` (IM)."""
    cur = _currents(model, currents)
    theta = np.asarray(theta, dtype=float)
    p = model.params
    e = np.exp(1j * p.n_p * theta)
    if model.is_pm:
        (i_s,) = cur
        if model.kind == "pm_standard":
            return [p.lam * i_s + p.phibar * e]
        if model.kind == "pm_saliency":
            return [p.lam * i_s + p.phibar * e - p.mu * np.conj(i_s) * e**2]
        z = i_s + p.ibar * e
        s = np.abs(z) ** 2
        _check_range(p.saturation, s)
        lam, mu = p.inductances(s)
        dlam, dmu = p.inductance_slopes(s)
        big_lam = lam + s * dlam  # lambda + rho/2 * lambda'
        u = (i_s * np.conj(e)) ** 2
        # dmu = mu'/(2 rho): the mu' contribution acts along z, not along i_s* e^{2j n_p theta}
        return [big_lam * z - mu * np.conj(i_s) * e**2 - dmu * np.real(u) * z]
    i_r, i_s = cur
    z = i_s + i_r * e
    s = np.abs(z) ** 2
    if model.kind == "im_standard":
        big_lm = p.L_m
    else:
        _check_range(p.saturation, s)
        big_lm = p.main_inductance(s) + s * p.main_inductance_slope(s)
    phi_r = big_lm * (i_r + i_s * np.conj(e)) + p.L_fr * i_r
    phi_s = big_lm * (i_s + i_r * e) + p.L_fs * i_s
    if model.kind == "im_sat_harmonic":
        for h in p.harmonics:
            eh = np.exp(1j * h.sigma * h.nu * p.n_p * theta)
            phi_r = phi_r + h.L * i_s * np.conj(eh)
            phi_s = phi_s + h.L * i_r * eh
    return [phi_r, phi_s]


def analytic_torque(model: MagneticLagrangianModel, theta, currents):
    """Closed-form electromagnetic torque ``dL_m/dtheta`` in N m."""
    cur = _currents(model, currents)
    theta = np.asarray(theta, dtype=float)
    p = model.params
    n_p = p.n_p
    e = np.exp(1j * n_p * theta)
    if model.is_pm:
        (i_s,) = cur
        if model.kind == "pm_standard":
            return n_p * np.imag(np.conj(p.phibar * e) * i_s)
        if model.kind == "pm_saliency":
            f = p.lam * np.conj(i_s) + p.phibar * np.conj(e) - p.mu * i_s * np.conj(e) ** 2
            return n_p * np.imag(f * i_s)
        z = i_s + p.ibar * e
        s = np.abs(z) ** 2
        _check_range(p.saturation, s)
        lam, mu = p.inductances(s)
        dlam, dmu = p.inductance_slopes(s)
        big_lam = lam + s * dlam
        u = (i_s * np.conj(e)) ** 2
        f = big_lam * np.conj(z) - mu * i_s * np.conj(e) ** 2
        return n_p * np.imag(f * i_s) - n_p * dmu * p.ibar * np.imag(i_s * np.conj(e)) * np.real(u)
    i_r, i_s = cur
    z = i_s + i_r * e
    s = np.abs(z) ** 2
    if model.kind == "im_standard":
        coupling = p.L_m * np.conj(e)
    else:
        _check_range(p.saturation, s)
        coupling = (p.main_inductance(s) + s * p.main_inductance_slope(s)) * np.conj(e)
    if model.kind == "im_sat_harmonic":
        for h in p.harmonics:
            coupling = coupling + h.L * h.sigma * h.nu * np.exp(-1j * h.sigma * h.nu * n_p * theta)
    return n_p * np.imag(coupling * np.conj(i_r) * i_s)


def _check_range(curve: SaturationCurve | None, s) -> None:
    if curve is not None:
        curve.check(s)
