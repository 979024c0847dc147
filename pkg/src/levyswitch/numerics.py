"""Dense linear-algebra and root-finding kernels shared by the other modules.

Everything here is pure: inputs are never mutated and results carry no
hidden state, so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg


class NumericsError(ValueError):
    """Invalid input to a numerics kernel."""


class NoConvergenceError(RuntimeError):
    """Root solver exhausted its iteration budget.

    Carries the best iterate seen so the caller can report a diagnosis
    instead of a bare failure.
    """

    def __init__(self, message: str, best_x: np.ndarray, best_residual: float):
        super().__init__(message)
        self.best_x = best_x
        self.best_residual = best_residual


def mat_exp(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``e^{t A}`` for a small dense square matrix.

    Backed by the scaling-and-squaring Pade evaluation (degree up to 13)
    of :func:`scipy.linalg.expm`; matrices here are tiny (number of
    regimes squared), so no sparse machinery is involved.  Complex input
    is supported for characteristic-function work.

    Parameters
    ----------
    a : (n, n) array_like, real or complex
    t : float, nonnegative time scale

    Raises
    ------
    NumericsError
        If ``a`` is not square, has non-finite entries, or ``t < 0``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericsError(f"matrix exponential needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or (np.iscomplexobj(a) and not np.all(np.isfinite(a.imag))):
        raise NumericsError("matrix exponential needs finite entries")
    if not np.isfinite(t) or t < 0.0:
        raise NumericsError(f"time scale must be finite and >= 0, got {t}")
    if a.shape[0] == 1:
        return np.exp(t * a)
    return scipy.linalg.expm(t * a)


@dataclass
class RootProblem:
    """A square root-finding problem F(x) = 0 on a guarded domain.

    ``guard`` is a predicate marking the open feasible set; the solver
    never evaluates ``residual`` outside it.  It must hold at ``x0``.
    """

    dim: int
    residual: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    guard: Callable[[np.ndarray], bool] = field(default=lambda x: True)

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.x0.shape != (self.dim,):
            raise NumericsError(f"initial guess has shape {self.x0.shape}, expected ({self.dim},)")
        if not self.guard(self.x0):
            raise NumericsError("initial guess violates the domain guard")


def _fd_jacobian(f, x, fx):
    # step 1e-7 * (1 + |x|) per coordinate; forward differences
    d = x.size
    jac = np.empty((d, d))
    for k in range(d):
        h = 1e-7 * (1.0 + abs(x[k]))
        xp = x.copy()
        xp[k] += h
        jac[:, k] = (f(xp) - fx) / h
    return jac


def _bisect(f, lo, hi, tol, max_iter=200):
    flo, fhi = f(np.array([lo]))[0], f(np.array([hi]))[0]
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        return None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(np.array([mid]))[0]
        if abs(fmid) <= tol or (hi - lo) < 1e-15 * (1.0 + abs(mid)):
            return mid
        if flo * fmid <= 0.0:
            hi, fhi = mid, fmid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def solve_root(problem: RootProblem, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Solve F(x) = 0 by damped Newton with a finite-difference Jacobian.

    Step halving keeps every trial point inside the guard set.  A
    singular Jacobian triggers a gradient-descent step on ``|F|^2``
    (robust near saturation of jump terms).  For one-dimensional
    problems a bracketing bisection fallback runs if Newton stalls.

    Returns x with ``max|F(x)| <= tol``.

    Raises
    ------
    NoConvergenceError
        If no iterate meets the tolerance within the budget.
    """
    if tol <= 0.0:
        raise NumericsError("tolerance must be positive")
    f = lambda x: np.atleast_1d(np.asarray(problem.residual(x), dtype=float))
    x = problem.x0.copy()
    fx = f(x)
    best_x, best_r = x.copy(), float(np.max(np.abs(fx)))

    for _ in range(max_iter):
        r = float(np.max(np.abs(fx)))
        if r <= tol:
            return x
        if r < best_r:
            best_x, best_r = x.copy(), r
        jac = _fd_jacobian(f, x, fx)
        try:
            step = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            grad = jac.T @ fx  # descent direction for 0.5*|F|^2
            norm = np.linalg.norm(grad)
            if norm == 0.0:
                break
            step = -grad / norm * (1.0 + np.linalg.norm(x))
        # damping: halve until inside the guard and not diverging
        lam = 1.0
        accepted = False
        for _ in range(60):
            xn = x + lam * step
            if problem.guard(xn):
                fn = f(xn)
                if np.max(np.abs(fn)) < np.max(np.abs(fx)) or lam < 1e-12:
                    x, fx = xn, fn
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            break

    if float(np.max(np.abs(fx))) <= tol:
        return x

    if problem.dim == 1:
        root = _try_bisection(problem, f, tol)
        if root is not None:
            return root

    raise NoConvergenceError(
        f"root solver stalled; best max-residual {best_r:.3e} exceeds tol {tol:.1e}",
        best_x,
        best_r,
    )


def _try_bisection(problem, f, tol):
    # expand a guarded bracket around the initial guess out to +-50
    center = float(problem.x0[0])
    for half_width in (1.0, 2.0, 5.0, 10.0, 25.0, 50.0):
        lo, hi = center - half_width, center + half_width
        # shrink endpoints into the guard set
        for _ in range(80):
            if problem.guard(np.array([lo])):
                break
            lo = 0.5 * (lo + center)
        for _ in range(80):
            if problem.guard(np.array([hi])):
                break
            hi = 0.5 * (hi + center)
        if not (problem.guard(np.array([lo])) and problem.guard(np.array([hi]))):
            continue
        root = _bisect(f, lo, hi, tol)
        if root is not None and abs(f(np.array([root]))[0]) <= tol:
            return np.array([root])
    return None
