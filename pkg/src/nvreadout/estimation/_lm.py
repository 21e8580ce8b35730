"""Bounded Levenberg-Marquardt with central finite-difference Jacobians."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    residuals: np.ndarray
    jacobian: np.ndarray
    cost: float
    n_iter: int
    converged: bool
    cost_history: list = field(default_factory=list)


def fd_step(x):
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def jacobian(fun, x, lower, upper, f0=None):
    """Central differences, falling back to one-sided steps at active bounds."""
    h = fd_step(x)
    cols = []
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        up_ok = x[j] + h[j] <= upper[j]
        dn_ok = x[j] - h[j] >= lower[j]
        if up_ok and dn_ok:
            xp[j] += h[j]
            xm[j] -= h[j]
            cols.append((fun(xp) - fun(xm)) / (2.0 * h[j]))
            continue
        if f0 is None:
            f0 = fun(x)
        if up_ok:
            xp[j] += h[j]
            cols.append((fun(xp) - f0) / h[j])
        else:
            xm[j] -= h[j]
            cols.append((f0 - fun(xm)) / h[j])
    return np.column_stack(cols)


def levenberg_marquardt(fun, x0, lower=None, upper=None, *, lam0=1e-3, ftol=1e-10,
                        max_iter=500):
    """Minimize ``sum(fun(x)**2)`` subject to box bounds.

    Damping starts at ``lam0`` and is divided by 10 after an accepted step and
    multiplied by 10 after a rejected one. A step is accepted only if the cost
    strictly decreases; steps are projected onto the bounds. Iteration stops
    when the relative cost change of an accepted step drops below ``ftol``,
    the damping blows up, or after ``max_iter`` iterations.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = np.clip(x, lower, upper)
    r = np.asarray(fun(x), dtype=float)
    cost = float(r @ r)
    history = [cost]
    lam = lam0
    converged = False
    J = jacobian(fun, x, lower, upper, r)
    it = 0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        diag = np.diag(A).copy()
        diag[diag == 0.0] = 1.0
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + step, lower, upper)
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        rel = (cost - cost_new) / max(cost, 1e-300)
        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        J = jacobian(fun, x, lower, upper, r)
        if rel < ftol or cost == 0.0:
            converged = True
            break
    return LMResult(x=x, residuals=r, jacobian=J, cost=cost, n_iter=it,
                    converged=converged, cost_history=history)
