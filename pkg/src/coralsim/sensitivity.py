"""Chemotactic sensitivity tensor with regularizing cutoffs.

The drift coefficient multiplying the signal gradient is the matrix

    S_eps(x, n, c) = rho_eps(x) * chi_eps(n) * (1+n)^(-alpha) * S0(c)
                     * [cos(theta) * I + sin(theta) * R]

where R is the rotation generator about the third axis (R e1 = e2,
R e2 = -e1, R e3 = 0), S0 is a nondecreasing response (constant or affine in
c), and the two cutoffs switch the drift off in an eps-collar of the boundary
(rho_eps) and above density 1/eps (chi_eps).  Both cutoffs are monotone C^1
smoothsteps, identically one when eps == 0, so eps == 0 recovers the
unregularized closed form exactly.

The Frobenius norm of the bracket is sqrt(2 + cos^2(theta)), so every
evaluated matrix satisfies

    ||S_eps(x,n,c)||_F <= (1+n)^(-alpha) * S0(c) * sqrt(2 + cos^2(theta))

exactly by construction (the cutoffs only shrink it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Grid

__all__ = [
    "SensitivityParams",
    "SensitivityEvaluator",
    "cutoff_rho",
    "cutoff_chi",
    "smoothstep",
]

_S0_KINDS = ("constant", "affine")


@dataclass(frozen=True)
class SensitivityParams:
    alpha: float = 1.0      # density desensitization exponent, >= 0
    chi0: float = 1.0       # base response magnitude, > 0
    s0_kind: str = "constant"
    s0_slope: float = 0.0   # affine response S0(c) = chi0 + s0_slope*c, slope >= 0
    theta: float = 0.0      # rotation angle in [0, pi/2]
    eps: float = 0.0        # cutoff scale in [0, 1]; 0 disables both cutoffs

    def __post_init__(self) -> None:
        if not self.alpha >= 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.chi0 > 0.0:
            raise ValueError(f"chi0 must be > 0, got {self.chi0}")
        if self.s0_kind not in _S0_KINDS:
            raise ValueError(f"s0_kind must be one of {_S0_KINDS}, got {self.s0_kind!r}")
        if not self.s0_slope >= 0.0:
            raise ValueError(f"s0_slope must be >= 0 (nondecreasing S0), got {self.s0_slope}")
        if not 0.0 <= self.theta <= math.pi / 2:
            raise ValueError(f"theta must lie in [0, pi/2], got {self.theta}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")

    @property
    def bracket_frobenius(self) -> float:
        """||cos(theta) I + sin(theta) R||_F = sqrt(2 + cos^2 theta)."""
        return math.sqrt(2.0 + math.cos(self.theta) ** 2)


def smoothstep(t):
    """C^1 monotone ramp: 0 below 0, 1 above 1, 3t^2 - 2t^3 between."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def cutoff_rho(dist, eps: float):
    """Boundary collar cutoff: 0 at the boundary, 1 at distance >= eps.

    ``dist`` is the distance to the domain boundary.  The ramp runs from
    eps/2 to eps, so the midpoint of the ramp (dist = 3*eps/4) gives 0.5.
    eps == 0 disables the cutoff (identically 1).
    """
    if eps == 0.0:
        return np.ones_like(np.asarray(dist, dtype=np.float64))
    return smoothstep((np.asarray(dist, dtype=np.float64) - 0.5 * eps) / (0.5 * eps))


def cutoff_chi(n, eps: float):
    """Density cutoff: 1 on [0, 1/eps - 1], 0 on [1/eps, inf), smoothstep between.

    eps == 0 disables the cutoff (identically 1).
    """
    if eps == 0.0:
        return np.ones_like(np.asarray(n, dtype=np.float64))
    hi = 1.0 / eps
    return 1.0 - smoothstep(np.asarray(n, dtype=np.float64) - (hi - 1.0))


class SensitivityEvaluator:
    """Evaluates the sensitivity tensor and its scalar drift magnitude.

    The evaluator is pure: identical inputs give identical outputs, and every
    evaluated matrix satisfies the defining bound (see module docstring)
    exactly by construction.
    """

    def __init__(self, params: SensitivityParams, grid: Grid):
        self.params = params
        self.grid = grid
        self._cos = math.cos(params.theta)
        self._sin = math.sin(params.theta)

    def s0(self, c):
        """Signal response S0(c); nondecreasing in c."""
        c = np.asarray(c, dtype=np.float64)
        if self.params.s0_kind == "constant":
            return np.full_like(c, self.params.chi0)
        return self.params.chi0 + self.params.s0_slope * c

    def magnitude(self, dist, n, c):
        """Scalar prefactor rho_eps(dist) * chi_eps(n) * (1+n)^(-alpha) * S0(c)."""
        n = np.asarray(n, dtype=np.float64)
        eps = self.params.eps
        mag = (1.0 + n) ** (-self.params.alpha) * self.s0(c)
        if eps > 0.0:
            mag = mag * cutoff_rho(dist, eps) * cutoff_chi(n, eps)
        return mag

    def drift(self, magnitude, gx, gy, gz):
        """Drift vector S_eps * grad(c) from the scalar prefactor and gradient.

        Returns the three components of magnitude * [cos I + sin R] g where
        (R g) = (-g2, g1, 0).
        """
        co, si = self._cos, self._sin
        return (
            magnitude * (co * gx - si * gy),
            magnitude * (co * gy + si * gx),
            magnitude * (co * gz),
        )

    def eval_tensor(self, x, n: float, c: float) -> np.ndarray:
        """Full 3x3 tensor at a point ``x = (x1, x2, x3)``.

        Negative densities or signal values are rejected.
        """
        if n < 0.0 or c < 0.0:
            raise ValueError(f"n and c must be nonnegative, got n={n}, c={c}")
        x = np.asarray(x, dtype=np.float64)
        dist = self.grid.boundary_distance(x[0], x[1], x[2])
        mag = float(self.magnitude(dist, n, c))
        co, si = self._cos, self._sin
        bracket = np.array(
            [
                [co, -si, 0.0],
                [si, co, 0.0],
                [0.0, 0.0, co],
            ]
        )
        return mag * bracket

    def bound(self, n, c) -> np.ndarray:
        """RHS of the defining bound: (1+n)^(-alpha) S0(c) * bracket norm."""
        n = np.asarray(n, dtype=np.float64)
        return (1.0 + n) ** (-self.params.alpha) * self.s0(c) * self.params.bracket_frobenius
