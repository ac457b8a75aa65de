"""Zero-stator-frequency steady states, linearization and Kalman rank tests.

Sensorless state ordering: ``X = (tau_L, theta, omega, [i_r.re, i_r.im,]
i_s.re, i_s.im)`` with input ``U = (u_s.re, u_s.im)`` and output
``Y = (i_s.re, i_s.im)``.  The load torque is constant, so its row of ``f``
is identically zero.

Linearization uses central finite differences on the state derivative, not
the AD core, so the rank test does not share code with the derivative path
it is meant to check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import SingularMassMatrixError, _ad_pass, mass_matrix_health, state_derivative
from .models import ImParams, MagneticLagrangianModel, PmParams
from .wirtinger import DomainError

RANK_RTOL = 1e-10
STEADY_TOL = 1e-12
LINEARIZE_TOL = 1e-9
FD_STEP = 1e-6


class InternalConsistencyError(RuntimeError):
    pass


class NonConvergenceError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


class PropositionViolation(RuntimeError):
    """A zero-frequency steady state produced a full-rank observability matrix."""

    def __init__(self, message: str, summary=None):
        super().__init__(message)
        self.summary = summary


@dataclass(frozen=True)
class SensorlessStatePoint:
    X: np.ndarray
    U: np.ndarray

    @property
    def dim(self) -> int:
        return self.X.size

    @property
    def Y(self) -> np.ndarray:
        return self.X[-2:].copy()

    @property
    def tau_L(self) -> float:
        return float(self.X[0])

    @property
    def u_s(self) -> complex:
        return complex(self.U[0], self.U[1])


def state_names(model: MagneticLagrangianModel) -> tuple[str, ...]:
    cur = ("i_s_re", "i_s_im") if model.is_pm else ("i_r_re", "i_r_im", "i_s_re", "i_s_im")
    return ("tau_L", "theta", "omega") + cur


def sensorless_rhs(model: MagneticLagrangianModel, X, U) -> np.ndarray:
    """``f(X, U)`` including the zero row for the load torque (batched)."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    batch = np.broadcast_shapes(X.shape[:-1], U.shape[:-1])
    X = np.broadcast_to(X, batch + X.shape[-1:])
    U = np.broadcast_to(U, batch + U.shape[-1:])
    _, _, M, _ = _ad_pass(model, X[..., 1:])
    lo, cond = mass_matrix_health(M)
    if np.any(~(lo > 0)) or np.any(cond > 1e12):
        raise SingularMassMatrixError("mass matrix singular at linearization point")
    dy = state_derivative(model, X[..., 1:], U[..., 0] + 1j * U[..., 1], X[..., 0])
    return np.concatenate([np.zeros(X.shape[:-1] + (1,)), dy], axis=-1)


def residual(model: MagneticLagrangianModel, point: SensorlessStatePoint) -> float:
    return float(np.max(np.abs(sensorless_rhs(model, point.X, point.U))))


def _steady_vector(model, tau, xi, i_s_bar):
    i_s_bar = np.asarray(i_s_bar, dtype=complex)
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    zero = np.zeros(np.broadcast(tau, xi, i_s_bar).shape)
    cols = [tau + zero, xi + zero, zero]
    if not model.is_pm:
        cols += [zero, zero]
    cols += [i_s_bar.real + zero, i_s_bar.imag + zero]
    return np.stack(cols, axis=-1)


def family_torque(model: MagneticLagrangianModel, xi, i_s_bar):
    """``(tau_L, d tau_L / d xi)`` along the zero-frequency family (AD, batched)."""
    X = _steady_vector(model, 0.0, xi, i_s_bar)
    x = np.concatenate([X[..., 3:], X[..., 1:2]], axis=-1)
    from .wirtinger import derivatives

    _, g, h = derivatives(model.lagrangian, x)
    return g[..., -1], h[..., -1, -1]


def zero_freq_steady_family(model: MagneticLagrangianModel, i_s_bar: complex, xi: float) -> SensorlessStatePoint:
    """Steady state with ``omega = 0``, ``theta = xi``, ``i_s = i_s_bar``, ``u_s = R_s i_s_bar``.

    For induction machines the rotor current is zero.  The load torque is the
    electromagnetic torque at that point, which makes the family one
    dimensional in ``xi`` for each constant input and output.
    """
    i_s_bar = complex(i_s_bar)
    if not (math.isfinite(i_s_bar.real) and math.isfinite(i_s_bar.imag) and math.isfinite(xi)):
        raise ValueError("family parameters must be finite")
    tau, _ = family_torque(model, xi, i_s_bar)
    X = _steady_vector(model, float(tau), xi, i_s_bar)
    R_s = model.params.R_s
    U = np.array([R_s * i_s_bar.real, R_s * i_s_bar.imag])
    point = SensorlessStatePoint(X, U)
    r = residual(model, point)
    if not r <= STEADY_TOL:
        raise InternalConsistencyError(f"family point residual {r:.3g} exceeds {STEADY_TOL:g}")
    return point


# ---------------------------------------------------------------------------
# linearization


@dataclass(frozen=True)
class LinearizedSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    point: SensorlessStatePoint
    names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.A.shape[0]


def _jacobian(fun, x0: np.ndarray, step: float) -> np.ndarray:
    """Central differences with per-coordinate step ``step * (1 + |x_k|)``, batched."""
    n = x0.size
    h = step * (1.0 + np.abs(x0))
    pts = np.concatenate([x0 + np.diag(h), x0 - np.diag(h)], axis=0)
    vals = fun(pts)
    return ((vals[:n] - vals[n:]) / (2.0 * h[:, None])).T


def linearize(model: MagneticLagrangianModel, point: SensorlessStatePoint, step: float = FD_STEP) -> LinearizedSystem:
    """Tangent system ``(A, B, C)`` at a steady state."""
    r = residual(model, point)
    if not r <= LINEARIZE_TOL:
        raise PreconditionError(f"linearization point is not a steady state (residual {r:.3g})")
    A = _jacobian(lambda X: sensorless_rhs(model, X, point.U), point.X, step)
    B = _jacobian(lambda U: sensorless_rhs(model, point.X, U), point.U, step)
    n = point.dim
    C = np.zeros((2, n))
    C[0, n - 2] = C[1, n - 1] = 1.0
    return LinearizedSystem(A, B, C, point, state_names(model))


# ---------------------------------------------------------------------------
# steady-state solving


def _numerical_jacobian_X(model, X, U, step=FD_STEP):
    return _jacobian(lambda Z: sensorless_rhs(model, Z, U), X, step)


@dataclass(frozen=True)
class SteadyStateSolution:
    point: SensorlessStatePoint
    iterations: int
    residual: float


def steady_state_solve(
    model: MagneticLagrangianModel,
    u_s: complex,
    initial_guess: SensorlessStatePoint,
    max_iter: int = 100,
    tol: float = STEADY_TOL,
) -> SteadyStateSolution:
    """Damped Newton on ``f(X, U) = 0`` with minimum-norm steps.

    The load-torque row of ``f`` vanishes identically and the zero-frequency
    solutions form a curve, so the Jacobian is always rank deficient; the
    least-squares step moves to the nearest point of that curve.
    """
    U = np.array([complex(u_s).real, complex(u_s).imag])
    X = np.array(initial_guess.X, dtype=float)

    def norm(Z):
        try:
            return float(np.max(np.abs(sensorless_rhs(model, Z, U))))
        except (DomainError, SingularMassMatrixError, np.linalg.LinAlgError):
            return math.inf

    r = norm(X)
    if not math.isfinite(r):
        raise NonConvergenceError("initial guess is outside the model's admissible region")
    for it in range(max_iter + 1):
        if r <= tol:
            return SteadyStateSolution(SensorlessStatePoint(X, U), it, r)
        if it == max_iter:
            break
        try:
            Jx = _numerical_jacobian_X(model, X, U)
        except (DomainError, SingularMassMatrixError, np.linalg.LinAlgError) as exc:
            raise NonConvergenceError(f"Jacobian evaluation failed at iteration {it}: {exc}") from exc
        fx = sensorless_rhs(model, X, U)
        dx = np.linalg.lstsq(Jx, -fx, rcond=None)[0]
        alpha = 1.0
        while alpha > 1e-6:
            trial = X + alpha * dx
            rt = norm(trial)
            if rt < r:
                X, r = trial, rt
                break
            alpha *= 0.5
        else:
            break
    raise NonConvergenceError(f"steady-state solve did not converge (residual {r:.3g} after {max_iter} iterations)")


# ---------------------------------------------------------------------------
# rank tests


def observability_matrix(sys: LinearizedSystem, rescale: bool = True) -> np.ndarray:
    """Stack ``[C; CA; ...; CA^(n-1)]``.

    With ``rescale`` the stack is built from ``A / |A|_2``, i.e. time measured
    in units of the fastest mode.  Block ``k`` is only multiplied by
    ``|A|^-k``, so the row space and rank are unchanged, but electrical time
    constants no longer spread the singular values over ``n`` powers of
    ``|A|``.
    """
    n = sys.dim
    A = sys.A
    if rescale:
        scale = np.linalg.norm(A, 2)
        if scale > 0.0:
            A = A / scale
    blocks = [sys.C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


@dataclass(frozen=True)
class ObservabilityReport:
    dim: int
    rank: int
    singular_values: np.ndarray
    tolerance: float

    @property
    def verdict(self) -> str:
        if self.rank >= self.dim:
            return "observable"
        return f"rank_deficient({self.dim - self.rank})"

    @property
    def observable(self) -> bool:
        return self.rank >= self.dim

    @property
    def sigma_min_kept(self) -> float:
        return float(self.singular_values[self.rank - 1]) if self.rank > 0 else math.nan

    @property
    def sigma_max_dropped(self) -> float:
        s = self.singular_values
        return float(s[self.rank]) if self.rank < s.size else 0.0

    @property
    def gap(self) -> float:
        dropped = self.sigma_max_dropped
        if self.rank == 0:
            return math.nan
        return math.inf if dropped == 0.0 else self.sigma_min_kept / dropped


def numerical_rank(matrix, dim: int | None = None) -> ObservabilityReport:
    """SVD rank with tolerance ``max(rows, cols) * sigma_max * 1e-10``."""
    m = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    s = np.linalg.svd(m, compute_uv=False)
    smax = s[0] if s.size else 0.0
    tol = max(m.shape) * smax * RANK_RTOL
    rank = int(np.sum(s > tol))
    return ObservabilityReport(m.shape[1] if dim is None else dim, rank, s, tol)


def observability_report(sys: LinearizedSystem) -> ObservabilityReport:
    return numerical_rank(observability_matrix(sys), sys.dim)


def steady_map_rank(sys: LinearizedSystem) -> ObservabilityReport:
    """Rank of the Jacobian of ``X -> (f(X, U), h(X))``."""
    return numerical_rank(np.vstack([sys.A, sys.C]), sys.dim)


def family_tangent(model: MagneticLagrangianModel, point: SensorlessStatePoint) -> np.ndarray:
    """``dX/dxi`` along the zero-frequency family through ``point``."""
    i_s = complex(point.X[-2], point.X[-1])
    _, dtau = family_torque(model, point.X[1], i_s)
    t = np.zeros(point.dim)
    t[0] = float(dtau)
    t[1] = 1.0
    return t


def tangent_residual(sys: LinearizedSystem, model: MagneticLagrangianModel) -> float:
    """``|O t| / (|O| |t|)`` for the family tangent ``t``."""
    O = observability_matrix(sys)
    t = family_tangent(model, sys.point)
    return float(np.linalg.norm(O @ t) / (np.linalg.norm(O, 2) * np.linalg.norm(t)))


# ---------------------------------------------------------------------------
# proposition sweep


@dataclass(frozen=True)
class SampleResult:
    index: int
    kind: str
    xi: float
    i_s_abs: float
    dim: int
    rank: int
    sigma_min_kept: float
    sigma_max_dropped: float
    steady_map_rank: int
    tangent_residual: float

    @property
    def gap(self) -> float:
        if self.sigma_max_dropped == 0.0:
            return math.inf
        return self.sigma_min_kept / self.sigma_max_dropped

    def line(self) -> str:
        return (
            f"{self.kind} xi={self.xi:.17g} |i_s|={self.i_s_abs:.17g} dim={self.dim} rank={self.rank} "
            f"sigma_min_kept={self.sigma_min_kept:.17g} sigma_max_dropped={self.sigma_max_dropped:.17g}"
        )


@dataclass
class Prop1Summary:
    kind: str
    samples: list[SampleResult] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.samples[0].dim if self.samples else 0

    @property
    def all_deficient(self) -> bool:
        return all(s.rank < s.dim for s in self.samples)

    @property
    def ranks(self) -> list[int]:
        return [s.rank for s in self.samples]

    @property
    def min_gap(self) -> float:
        return min(s.gap for s in self.samples)

    def notes(self) -> list[str]:
        out = []
        for s in self.samples:
            if s.rank < s.dim - 1:
                out.append(f"sample {s.index}: rank {s.rank} is below dim-1 = {s.dim - 1}")
        return out

    def machine_lines(self) -> str:
        return "".join(s.line() + "\n" for s in self.samples)

    def text(self) -> str:
        lines = [
            f"kind              {self.kind}",
            f"samples           {len(self.samples)}",
            f"dim               {self.dim}",
            f"ranks             {' '.join(str(r) for r in self.ranks)}",
            f"min gap           {self.min_gap:.6g}",
            f"max tangent res   {max(s.tangent_residual for s in self.samples):.6g}",
            f"verdict           {'unobservable at every sample' if self.all_deficient else 'PROPOSITION VIOLATED'}",
        ]
        lines += [f"note              {n}" for n in self.notes()]
        return "\n".join(lines) + "\n"


def _scaled_params(params, rng: np.random.Generator, spread: float):
    def f():
        return float(rng.uniform(1.0 - spread, 1.0 + spread))

    if isinstance(params, PmParams):
        return replace(params, J=params.J * f(), R_s=params.R_s * f(), lam=params.lam * f(), mu=params.mu * f(), ibar=params.ibar * f())
    harmonics = tuple(replace(h, L=h.L * f()) for h in params.harmonics)
    return replace(
        params,
        J=params.J * f(),
        R_s=params.R_s * f(),
        R_r=params.R_r * f(),
        L_m=params.L_m * f(),
        L_fs=params.L_fs * f(),
        L_fr=params.L_fr * f(),
        harmonics=harmonics,
    )


def draw_samples(model: MagneticLagrangianModel, samples: int, seed: int, spread: float = 0.2):
    """Random ``(model, xi, i_s_bar)`` triples from a PCG64 stream seeded with ``seed``.

    Per sample, in order: one uniform factor in ``[1-spread, 1+spread]`` per
    scaled parameter, then ``|i_s| ~ U(0.5, 5)`` A, ``arg i_s ~ U(0, 2 pi)``
    and ``xi ~ U(0, 2 pi)``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for _ in range(samples):
        params = _scaled_params(model.params, rng, spread)
        mag = rng.uniform(0.5, 5.0)
        arg = rng.uniform(0.0, 2.0 * math.pi)
        xi = rng.uniform(0.0, 2.0 * math.pi)
        out.append((MagneticLagrangianModel(model.kind, params), xi, mag * complex(math.cos(arg), math.sin(arg))))
    return out


def analyze_sample(index: int, model: MagneticLagrangianModel, xi: float, i_s_bar: complex) -> SampleResult:
    point = zero_freq_steady_family(model, i_s_bar, xi)
    sys = linearize(model, point)
    rep = observability_report(sys)
    return SampleResult(
        index=index,
        kind=model.kind,
        xi=float(xi),
        i_s_abs=abs(i_s_bar),
        dim=rep.dim,
        rank=rep.rank,
        sigma_min_kept=rep.sigma_min_kept,
        sigma_max_dropped=rep.sigma_max_dropped,
        steady_map_rank=steady_map_rank(sys).rank,
        tangent_residual=tangent_residual(sys, model),
    )


def verify_prop1(model: MagneticLagrangianModel, samples: int = 20, seed: int = 0, spread: float = 0.2) -> Prop1Summary:
    """Check rank deficiency of the linearized sensorless system on random family points.

    Raises :class:`PropositionViolation` if any sample is full rank.  Ranks
    below ``dim - 1`` are reported in :meth:`Prop1Summary.notes`, not raised.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    summary = Prop1Summary(model.kind)
    for k, (m, xi, i_s_bar) in enumerate(draw_samples(model, samples, seed, spread)):
        summary.samples.append(analyze_sample(k, m, xi, i_s_bar))
    if not summary.all_deficient:
        bad = [s.index for s in summary.samples if s.rank >= s.dim]
        raise PropositionViolation(f"full-rank observability matrix at samples {bad}", summary)
    return summary
