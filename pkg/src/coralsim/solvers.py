"""Shared Krylov solves and the velocity Laplacian.

All implicit pieces of the scheme are symmetric positive (semi)definite:
the cell-centered Neumann Poisson/Helmholtz operators and the face-centered
Dirichlet vector Laplacian (no-slip enforced through odd-reflection ghosts in
the transverse directions).  They are solved by (Jacobi-scaled) conjugate
gradients; on these constant-coefficient operators the diagonal is a
multiple of the identity, so plain CG is used.  Non-convergence is a hard
error carrying the final residual.
"""

from __future__ import annotations

import inspect
import math

import numpy as np
from scipy.sparse.linalg import LinearOperator
from scipy.sparse.linalg import cg as _scipy_cg
from scipy.sparse.linalg import minres as _scipy_minres

from .fields import Grid

__all__ = [
    "cg_solve",
    "minres_solve",
    "poisson_neumann",
    "helmholtz_neumann",
    "laplacian_dirichlet_component",
]

# scipy renamed the relative-tolerance keyword (tol -> rtol); converge purely
# on the absolute residual either way
_RTOL_KW = "rtol" if "rtol" in inspect.signature(_scipy_cg).parameters else "tol"
_MINRES_RTOL_KW = ("rtol" if "rtol" in inspect.signature(_scipy_minres).parameters
                   else "tol")


def cg_solve(matvec, b: np.ndarray, x0: np.ndarray | None, atol: float,
             maxiter: int, what: str) -> np.ndarray:
    """Conjugate gradients down to an absolute l2 residual; hard error otherwise."""
    b = b.ravel()
    if not b.any():
        return np.zeros_like(b)
    op = LinearOperator((b.size, b.size), matvec=matvec, dtype=np.float64)
    kwargs = {_RTOL_KW: 0.0, "atol": atol}
    x, info = _scipy_cg(op, b, x0=None if x0 is None else x0.ravel(),
                        maxiter=maxiter, **kwargs)
    if info != 0:
        res = float(np.linalg.norm(b - matvec(x)))
        raise RuntimeError(
            f"{what}: conjugate gradients did not converge within {maxiter} "
            f"iterations (final residual {res:.3e}, target {atol:.3e})"
        )
    return x


def minres_solve(matvec, b: np.ndarray, x0: np.ndarray | None, atol: float,
                 maxiter: int, what: str) -> np.ndarray:
    """MINRES for symmetric (possibly indefinite) systems, to an absolute residual.

    scipy's stopping rule is relative to an internal estimate of
    |A| |x| + |b|, so each pass is followed by a true-residual check; the
    requested tolerance is tightened and the solve restarted (warm) until
    |b - A x| <= atol.  Persistent failure is a hard error carrying the
    final residual.
    """
    b = b.ravel()
    if not b.any():
        return np.zeros_like(b)
    op = LinearOperator((b.size, b.size), matvec=matvec, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    rtol = max(atol / bnorm, 1e-16)
    x = None if x0 is None else x0.ravel()
    res = math.inf
    for _ in range(4):
        kwargs = {_MINRES_RTOL_KW: rtol}
        x, _ = _scipy_minres(op, b, x0=x, maxiter=maxiter, **kwargs)
        res = float(np.linalg.norm(b - matvec(x)))
        if res <= atol:
            return x
        rtol = max(rtol / 100.0, 1e-16)
    raise RuntimeError(
        f"{what}: MINRES stalled (final residual {res:.3e}, target {atol:.3e})"
    )


def _sl(axis: int, s) -> tuple:
    t = [slice(None)] * 3
    t[axis] = s
    return tuple(t)


def _neg_laplacian_neumann(grid: Grid, v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    for a in grid.active_axes:
        h2 = grid.spacing[a] ** 2
        g = np.diff(v, axis=a)
        out[_sl(a, 0)] -= g[_sl(a, 0)] / h2
        out[_sl(a, slice(1, -1))] -= np.diff(g, axis=a) / h2
        out[_sl(a, -1)] += g[_sl(a, -1)] / h2
    return out


def poisson_neumann(grid: Grid, rhs: np.ndarray, *, atol: float, maxiter: int,
                    x0: np.ndarray | None = None,
                    what: str = "pressure Poisson solve") -> np.ndarray:
    """Solve -lap q = rhs (zero-flux walls); returns the mean-zero solution.

    The operator is singular with constant nullspace, so the right-hand side
    is demeaned (compatibility) and the result is gauged to zero mean.
    """
    shape = rhs.shape
    b = rhs - rhs.mean()

    def matvec(x):
        return _neg_laplacian_neumann(grid, x.reshape(shape)).ravel()

    if x0 is not None:
        x0 = x0 - x0.mean()
    q = cg_solve(matvec, b, x0, atol, maxiter, what).reshape(shape)
    return q - q.mean()


def helmholtz_neumann(grid: Grid, rhs: np.ndarray, coef: float, *, atol: float,
                      maxiter: int, x0: np.ndarray | None = None,
                      what: str = "scalar diffusion solve") -> np.ndarray:
    """Solve (I + coef * (-lap)) q = rhs with zero-flux walls."""
    shape = rhs.shape

    def matvec(x):
        v = x.reshape(shape)
        return (v + coef * _neg_laplacian_neumann(grid, v)).ravel()

    return cg_solve(matvec, rhs, x0, atol, maxiter, what).reshape(shape)


def laplacian_dirichlet_component(grid: Grid, v: np.ndarray, axis: int) -> np.ndarray:
    """Vector Laplacian of one MAC component with no-slip walls.

    Along its own axis the stored boundary faces (pinned to zero) act as
    Dirichlet values; transverse walls use odd-reflection ghosts so the wall
    velocity itself is zero.  Output boundary faces are zero (they are not
    unknowns).  Collapsed axes contribute nothing.
    """
    out = np.zeros_like(v)
    a = axis
    if grid.dims[a] > 1:
        h2 = grid.spacing[a] ** 2
        out[_sl(a, slice(1, -1))] += (
            v[_sl(a, slice(2, None))]
            - 2.0 * v[_sl(a, slice(1, -1))]
            + v[_sl(a, slice(0, -2))]
        ) / h2
    for b in grid.active_axes:
        if b == a:
            continue
        h2 = grid.spacing[b] ** 2
        lap = np.empty_like(v)
        lap[_sl(b, slice(1, -1))] = (
            v[_sl(b, slice(2, None))]
            - 2.0 * v[_sl(b, slice(1, -1))]
            + v[_sl(b, slice(0, -2))]
        )
        lap[_sl(b, 0)] = v[_sl(b, 1)] - 3.0 * v[_sl(b, 0)]
        lap[_sl(b, -1)] = v[_sl(b, -2)] - 3.0 * v[_sl(b, -1)]
        out += lap / h2
    out[_sl(a, 0)] = 0.0
    out[_sl(a, -1)] = 0.0
    return out
