"""Independent reference computations used by the tests.

Nothing here calls the AD core: Lagrangians are restated in plain numpy and
derivatives come from central finite differences.
"""
import math

import numpy as np


def fd_gradient(f, x, rel_step=1e-6):
    """Central differences with step ``rel_step * (1 + |x_k|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(a, b, floor=0.0):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def plain_lagrangian(model, x):
    """``L_m`` at real coordinates ``(currents..., theta)`` written directly from the model formulas."""
    p = model.params
    theta = x[-1]
    e = complex(math.cos(p.n_p * theta), math.sin(p.n_p * theta))
    if model.is_pm:
        i_s = complex(x[0], x[1])
        z = i_s + p.ibar * e
        s = abs(z) ** 2
        lam, mu = p.inductances(s)
        w = i_s * e.conjugate()
        return 0.5 * lam * s - 0.5 * mu * (w * w).real
    i_r = complex(x[0], x[1])
    i_s = complex(x[2], x[3])
    z = i_s + i_r * e
    s = abs(z) ** 2
    out = 0.5 * p.main_inductance(s) * s + 0.5 * p.L_fr * abs(i_r) ** 2 + 0.5 * p.L_fs * abs(i_s) ** 2
    for h in p.harmonics:
        ang = -h.sigma * h.nu * p.n_p * theta
        out += h.L * (i_s * i_r.conjugate() * complex(math.cos(ang), math.sin(ang))).real
    return out


def random_coords(model, rng, n):
    """Random real coordinate rows ``(currents..., theta)`` inside the admissible range."""
    half = 5.0 if model.is_pm else 3.0
    cur = rng.uniform(-half, half, (n, 2 * model.n_currents))
    theta = rng.uniform(-2 * math.pi, 2 * math.pi, (n, 1))
    return np.concatenate([cur, theta], axis=1)
