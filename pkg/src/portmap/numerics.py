"""Small numerical helpers: Jacobians and a damped Newton solver."""
from __future__ import annotations

import numpy as np

from .errors import NoSteadyStateError


def central_difference_jacobian(fun, x, step=1e-6):
    """Central finite differences, step scaled to each coordinate."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return J


def complex_step_jacobian(fun, x, step=1e-30):
    """Jacobian to machine precision for functions analytic in ``x``.

    ``fun`` must be written with operations that propagate complex dtype
    (no ``abs``, no ``float()`` casts on state-dependent values).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for k in range(n):
        xc = x.astype(complex)
        xc[k] += 1j * step
        cols.append(np.imag(np.asarray(fun(xc))) / step)
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def newton(fun, x0, jac=None, tol=1e-12, maxiter=50):
    """Plain Newton iteration with backtracking on the residual norm.

    Returns ``(x, residual_norm, iterations)``; raises
    :class:`NoSteadyStateError` with the final residual on failure.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(fun(x), dtype=float)
    norm = np.linalg.norm(r, np.inf)
    for it in range(maxiter):
        if norm < tol:
            return x, norm, it
        J = jac(x) if jac is not None else central_difference_jacobian(fun, x, 1e-7)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        while True:
            xn = x + t * dx
            rn = np.asarray(fun(xn), dtype=float)
            nn = np.linalg.norm(rn, np.inf)
            if nn < norm or t < 1e-4:
                break
            t *= 0.5
        x, r, norm = xn, rn, nn
    if norm < tol:
        return x, norm, maxiter
    raise NoSteadyStateError(
        f"Newton did not converge in {maxiter} steps (residual {norm:.3e})", residual=norm
    )
