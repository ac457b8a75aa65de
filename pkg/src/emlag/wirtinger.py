"""Second-order forward-mode AD over real coordinates and Wirtinger partials.

A point is a flat real vector.  The first ``2 * n_complex`` entries are
(real, imaginary) pairs of complex coordinates, the trailing ``n_real``
entries are plain real coordinates.  Functions are differentiated with
respect to that real layout; :func:`wirtinger_from_real` then maps the real
gradient onto the pair ``(df/dq, df/dq*)`` for each complex coordinate.

:class:`Dual2` carries (value, gradient, Hessian) and supports leading batch
dimensions, so one pass can differentiate a function at many points.  The
arrays may be numpy arrays or jax arrays; elementary functions dispatch on
the array type, which lets the same model code run under ``jax.jit``.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain.

    ``coordinate`` names the offending quantity (for example ``"rho"``).
    """

    def __init__(self, message: str, coordinate: str):
        super().__init__(message)
        self.coordinate = coordinate


def array_namespace(*xs):
    """Return ``jax.numpy`` if any argument is a jax array/tracer, else numpy."""
    jax = sys.modules.get("jax")
    if jax is not None:
        for x in xs:
            if isinstance(x, Dual2):
                x = x.value
            if isinstance(x, jax.Array):
                return jax.numpy
    return np


def _col(c):
    return c[..., None] if getattr(c, "ndim", 0) else c


def _mat(c):
    return c[..., None, None] if getattr(c, "ndim", 0) else c


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class Dual2:
    """Scalar (or batch of scalars) with first and second derivative parts.

    ``value`` has the batch shape ``B``, ``grad`` has shape ``B + (n,)`` and
    ``hess`` has shape ``B + (n, n)``.  Products build the Hessian as
    ``a*H_b + b*H_a + g_a g_b^T + g_b g_a^T``, which is exactly symmetric in
    floating point because each off-diagonal pair sums the same two products.
    """

    __slots__ = ("value", "grad", "hess")
    __array_ufunc__ = None

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess

    def __repr__(self):
        return f"Dual2(value={self.value!r}, grad={self.grad!r})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)
        return Dual2(self.value + other, self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self):
        return Dual2(-self.value, -self.grad, -self.hess)

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.value - other.value, self.grad - other.grad, self.hess - other.hess)
        return Dual2(self.value - other, self.grad, self.hess)

    def __rsub__(self, other):
        return Dual2(other - self.value, -self.grad, -self.hess)

    def __mul__(self, other):
        if isinstance(other, Dual2):
            a, b = self, other
            return Dual2(
                a.value * b.value,
                _col(a.value) * b.grad + _col(b.value) * a.grad,
                _mat(a.value) * b.hess
                + _mat(b.value) * a.hess
                + (_outer(a.grad, b.grad) + _outer(b.grad, a.grad)),
            )
        return Dual2(self.value * other, self.grad * _col(other), self.hess * _mat(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other._reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def __pow__(self, k):
        if not isinstance(k, int) or k < 0:
            raise TypeError("Dual2 supports non-negative integer powers only")
        if k == 0:
            return Dual2(self.value * 0 + 1, self.grad * 0, self.hess * 0)
        out = self
        for _ in range(k - 1):
            out = out * self
        return out

    def _reciprocal(self):
        v = self.value
        return self._chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))

    def _chain(self, f0, f1, f2):
        # f(a) with derivatives f1 = f'(a), f2 = f''(a)
        return Dual2(
            f0,
            _col(f1) * self.grad,
            _mat(f1) * self.hess + _mat(f2) * _outer(self.grad, self.grad),
        )

    # complex helpers ------------------------------------------------------

    def conj(self):
        xp = array_namespace(self.value)
        return Dual2(xp.conj(self.value), xp.conj(self.grad), xp.conj(self.hess))

    @property
    def real(self):
        xp = array_namespace(self.value)
        return Dual2(xp.real(self.value), xp.real(self.grad), xp.real(self.hess))

    @property
    def imag(self):
        xp = array_namespace(self.value)
        return Dual2(xp.imag(self.value), xp.imag(self.grad), xp.imag(self.hess))


def _unary(x, f0, f1, f2):
    if isinstance(x, Dual2):
        return x._chain(f0(x.value), f1(x.value), f2(x.value))
    return f0(x)


def exp(x):
    xp = array_namespace(x)
    return _unary(x, xp.exp, xp.exp, xp.exp)


def sin(x):
    xp = array_namespace(x)
    return _unary(x, xp.sin, xp.cos, lambda v: -xp.sin(v))


def cos(x):
    xp = array_namespace(x)
    return _unary(x, xp.cos, lambda v: -xp.sin(v), lambda v: -xp.cos(v))


def sqrt(x):
    xp = array_namespace(x)
    return _unary(
        x,
        xp.sqrt,
        lambda v: 0.5 / xp.sqrt(v),
        lambda v: -0.25 / (v * xp.sqrt(v)),
    )


def expj(x):
    """``exp(j*x)`` for a real argument."""
    return exp(1j * x)


def conj(z):
    if isinstance(z, Dual2):
        return z.conj()
    return array_namespace(z).conj(z)


def real(z):
    if isinstance(z, Dual2):
        return z.real
    return array_namespace(z).real(z)


def abs2(z):
    """``|z|^2`` as a real quantity."""
    if isinstance(z, Dual2):
        return (z * z.conj()).real
    xp = array_namespace(z)
    return xp.real(z * xp.conj(z))


def variables(x) -> list[Dual2]:
    """Seed one dual component per real coordinate of ``x`` (shape ``B + (n,)``)."""
    xp = array_namespace(x)
    x = xp.asarray(x, dtype=float)
    n = x.shape[-1]
    batch = x.shape[:-1]
    eye = xp.eye(n)
    zero_h = xp.zeros(batch + (n, n))
    return [
        Dual2(x[..., k], xp.broadcast_to(eye[k], batch + (n,)), zero_h)
        for k in range(n)
    ]


def _as_dual(y, x, xp):
    if isinstance(y, Dual2):
        return y
    n = x.shape[-1]
    batch = x.shape[:-1]
    return Dual2(y, xp.zeros(batch + (n,)), xp.zeros(batch + (n, n)))


def derivatives(f: Callable[[list[Dual2]], Dual2], x):
    """One AD pass: return ``(value, gradient, hessian)`` of ``f`` at ``x``.

    ``f`` receives the list of seeded coordinates and must return a real
    scalar expression (complex intermediates are fine; the result's
    imaginary part is dropped only if it is exactly zero).
    """
    xp = array_namespace(x)
    x = xp.asarray(x, dtype=float)
    y = _as_dual(f(variables(x)), x, xp)
    if xp.iscomplexobj(y.value):
        if xp is np and np.any(np.imag(y.value) != 0):
            raise TypeError("function is not real-valued")
        y = y.real
    return y.value, y.grad, y.hess


def real_gradient(f, x):
    """Gradient of ``f`` with respect to every real coordinate of ``x``."""
    return derivatives(f, x)[1]


def real_hessian(f, x):
    """Full real Hessian of ``f``; exactly symmetric by construction."""
    return derivatives(f, x)[2]


@dataclass(frozen=True)
class Layout:
    """Coordinate layout: ``n_complex`` (re, im) pairs then ``n_real`` reals."""

    n_complex: int
    n_real: int

    @property
    def size(self) -> int:
        return 2 * self.n_complex + self.n_real

    def check(self, x) -> None:
        n = np.shape(x)[-1]
        if n != self.size:
            raise ValueError(
                f"layout expects {self.size} coordinates "
                f"({self.n_complex} complex, {self.n_real} real), got {n}"
            )

    def pack(self, complex_coords: Sequence[complex], real_coords: Sequence[float] = ()):
        cz = np.asarray(complex_coords, dtype=complex).reshape(-1)
        rz = np.asarray(real_coords, dtype=float).reshape(-1)
        if cz.size != self.n_complex or rz.size != self.n_real:
            raise ValueError("coordinate counts do not match layout")
        out = np.empty(self.size)
        out[0 : 2 * self.n_complex : 2] = cz.real
        out[1 : 2 * self.n_complex : 2] = cz.imag
        out[2 * self.n_complex :] = rz
        return out


@dataclass(frozen=True)
class RealPoint:
    """A real coordinate vector together with its complex/real layout."""

    coords: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.layout.check(self.coords)

    @classmethod
    def from_complex(cls, complex_coords, real_coords=()):
        cz = list(np.atleast_1d(complex_coords))
        rz = list(np.atleast_1d(real_coords)) if np.size(real_coords) else []
        layout = Layout(len(cz), len(rz))
        return cls(layout.pack(cz, rz), layout)

    @property
    def complex_coords(self) -> np.ndarray:
        n = self.layout.n_complex
        return self.coords[..., 0 : 2 * n : 2] + 1j * self.coords[..., 1 : 2 * n : 2]

    @property
    def real_coords(self) -> np.ndarray:
        return self.coords[..., 2 * self.layout.n_complex :]


@dataclass(frozen=True)
class WirtingerDerivatives:
    """Bare Wirtinger partials (no factor 2) plus real partials and Hessian."""

    d_dq: np.ndarray
    d_dqstar: np.ndarray
    d_dreal: np.ndarray
    real_hessian: np.ndarray | None = None


def wirtinger_from_real(real_grad, layout: Layout, hessian=None) -> WirtingerDerivatives:
    """Map a real gradient onto ``df/dq = (f_x - j f_y)/2`` and ``df/dq* = (f_x + j f_y)/2``."""
    xp = array_namespace(real_grad)
    g = xp.asarray(real_grad, dtype=float)
    layout.check(g)
    n = layout.n_complex
    gx = g[..., 0 : 2 * n : 2]
    gy = g[..., 1 : 2 * n : 2]
    return WirtingerDerivatives(
        d_dq=(gx - 1j * gy) / 2,
        d_dqstar=(gx + 1j * gy) / 2,
        d_dreal=g[..., 2 * n :],
        real_hessian=hessian,
    )


def wirtinger(f, point: RealPoint) -> WirtingerDerivatives:
    """Differentiate ``f`` at ``point`` and return its Wirtinger partials."""
    _, g, h = derivatives(f, point.coords)
    return wirtinger_from_real(g, point.layout, h)
