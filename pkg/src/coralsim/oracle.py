"""Reference solutions used to cross-check the solver.

Two independent oracles:

* the closed-form solution of the spatially homogeneous reduction

      n' = -n m,   m' = -n m,   c' = -c + m,

  where d = n0 - m0 is conserved.  For d != 0 the egg density is
  m(t) = d * m0 / (n0 * e^{d t} - m0) (written in overflow-safe branches);
  for d == 0 it is m(t) = m0 / (1 + m0 t).  The signal follows by the
  variation-of-constants integral, evaluated with adaptive quadrature.

* manufactured fields with zero Neumann flux (cosine modes) whose exact
  operator images are known in closed form, for measured-convergence studies
  of the diffusion and advection stencils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .fields import Grid, ScalarField, VectorField

__all__ = ["HomogeneousIC", "homogeneous_solution", "mms_sources", "MMSCase"]


@dataclass(frozen=True)
class HomogeneousIC:
    n0: float
    m0: float
    c0: float

    def __post_init__(self) -> None:
        for name in ("n0", "m0", "c0"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")

    @property
    def mass_gap(self) -> float:
        """d = n0 - m0, conserved along the flow."""
        return self.n0 - self.m0


def _m_of_t(ic: HomogeneousIC, t: float) -> float:
    n0, m0 = ic.n0, ic.m0
    d = ic.mass_gap
    if m0 == 0.0:
        return 0.0
    if n0 == 0.0:
        return m0  # nothing to react with
    if d == 0.0:
        return m0 / (1.0 + m0 * t)
    if d > 0.0:
        r = (m0 / n0) * math.exp(-d * t)  # decays, no overflow
        return d * r / (1.0 - r)
    return d * m0 / (n0 * math.exp(d * t) - m0)  # e^{dt} <= 1, no overflow


def homogeneous_solution(ic: HomogeneousIC, t: float) -> tuple[float, float, float]:
    """(n, m, c) of the homogeneous reduction at time t >= 0.

    The c-integral is evaluated by adaptive quadrature with relative error
    well below 1e-10.
    """
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t}")
    m = _m_of_t(ic, t)
    n = m + ic.mass_gap
    c = ic.c0 * math.exp(-t)
    if ic.m0 > 0.0 and t > 0.0:
        val, _ = quad(
            lambda s: math.exp(s - t) * _m_of_t(ic, s),
            0.0,
            t,
            epsabs=1e-14,
            epsrel=1e-12,
            limit=400,
        )
        c += val
    return n, max(m, 0.0), c


@dataclass(frozen=True)
class MMSCase:
    """A manufactured target with its exact operator image on a given grid."""

    name: str
    target: ScalarField            # sampled exact field q
    source: ScalarField            # exact operator image (see ``name``)
    velocity: VectorField | None   # advecting field for the advection case


def _diffusion_case(grid: Grid) -> MMSCase:
    # q = cos(pi x) cos(pi y): -lap q = 2 pi^2 q, zero Neumann flux on the box
    q = ScalarField.from_function(
        grid, lambda x, y, z: np.cos(np.pi * x) * np.cos(np.pi * y))
    src = ScalarField(grid, 2.0 * np.pi ** 2 * q.values)
    return MMSCase("diffusion", q, src, None)


def _advection_case(grid: Grid) -> MMSCase:
    # streamfunction psi = sin(pi x) sin(pi y)/pi gives
    #   u = (sin(pi x) cos(pi y), -cos(pi x) sin(pi y), 0)
    # and for q = cos(pi x) cos(pi y) the exact advective source is
    #   div(u q) = u . grad q
    #            = pi [cos^2(pi x) sin^2(pi y) - sin^2(pi x) cos^2(pi y)].
    # The discrete velocity is built from node values of psi so its discrete
    # divergence vanishes identically.
    if grid.dims[2] != 1:
        raise ValueError("advection case is two-dimensional (nz must be 1)")
    hx, hy, _ = grid.spacing
    nx, ny, _ = grid.dims
    xn = np.arange(nx + 1) * hx
    yn = np.arange(ny + 1) * hy
    psi = np.sin(np.pi * xn[:, None]) * np.sin(np.pi * yn[None, :]) / np.pi
    u = VectorField.zeros(grid)
    u.components[0][:, :, 0] = np.diff(psi, axis=1) / hy
    u.components[1][:, :, 0] = -np.diff(psi, axis=0) / hx
    u.zero_boundary_faces()
    q = ScalarField.from_function(
        grid, lambda x, y, z: np.cos(np.pi * x) * np.cos(np.pi * y))
    src = ScalarField.from_function(
        grid,
        lambda x, y, z: np.pi * (
            np.cos(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2
            - np.sin(np.pi * x) ** 2 * np.cos(np.pi * y) ** 2
        ),
    )
    return MMSCase("advection", q, src, u)


def _heat_eigenmode_case(grid: Grid, t: float) -> MMSCase:
    # q = cos(pi x) e^{-pi^2 t} solves the heat equation exactly: zero source
    q = ScalarField.from_function(
        grid, lambda x, y, z: np.cos(np.pi * x) * math.exp(-np.pi ** 2 * t) + 0.0 * y)
    return MMSCase("heat-eigenmode", q, ScalarField.zeros(grid), None)


def mms_sources(case: str, grid: Grid, t: float = 0.0) -> MMSCase:
    """Manufactured target/source pair for the named convergence check."""
    if case == "diffusion":
        return _diffusion_case(grid)
    if case == "advection":
        return _advection_case(grid)
    if case == "heat-eigenmode":
        return _heat_eigenmode_case(grid, t)
    raise ValueError(f"unknown manufactured case {case!r}")
