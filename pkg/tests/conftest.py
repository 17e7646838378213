import numpy as np
import pytest

import coralsim.operators as operators
from coralsim.fields import Grid, VectorField


@pytest.fixture(autouse=True)
def _conservativity_asserts():
    """Every conservative operator self-checks during the whole test run."""
    old = operators.DEBUG_CHECKS
    operators.DEBUG_CHECKS = True
    yield
    operators.DEBUG_CHECKS = old


def stream_velocity(grid: Grid, psi_fn, amplitude: float = 1.0) -> VectorField:
    """Exactly divergence-free 2D velocity from a node-sampled streamfunction.

    u_x = d(psi)/dy, u_y = -d(psi)/dx as compact differences of node values,
    so divergence_cells(u) telescopes to zero at machine precision.  psi must
    vanish on the boundary for no-penetration.
    """
    nx, ny, nz = grid.dims
    assert nz == 1, "stream velocity helper is 2D"
    hx, hy, _ = grid.spacing
    xn = np.arange(nx + 1) * hx
    yn = np.arange(ny + 1) * hy
    psi = amplitude * psi_fn(xn[:, None], yn[None, :])  # (nx+1, ny+1)
    u = VectorField.zeros(grid)
    u.components[0][:, :, 0] = np.diff(psi, axis=1) / hy
    u.components[1][:, :, 0] = -np.diff(psi, axis=0) / hx
    u.zero_boundary_faces()
    return u


def sine_box_psi(x, y):
    """Streamfunction vanishing on the unit-box boundary."""
    return np.sin(np.pi * x) * np.sin(np.pi * y) / np.pi


def random_cosine_ic(rng, *, floor: float = 0.2, amp: float = 0.6, kmax: int = 2):
    """Random smooth nonnegative initial condition on the unit box.

    A cosine series (zero normal derivative at the walls, so compatible with
    no-flux boundaries) riding on a constant offset chosen so the minimum
    stays >= floor.  Every non-constant cosine mode has an exactly zero
    midpoint-rule sum, so the discrete mean is exactly floor + amp.
    """
    coeffs = rng.normal(size=(kmax + 1, kmax + 1))
    coeffs[0, 0] = 0.0
    total = np.abs(coeffs).sum()
    if total > 0.0:
        coeffs *= amp / total

    def fn(x, y, z):
        out = (floor + amp) + 0.0 * x + 0.0 * y + 0.0 * z
        for j in range(kmax + 1):
            for k in range(kmax + 1):
                if coeffs[j, k] != 0.0:
                    out = out + coeffs[j, k] * np.cos(j * np.pi * x) * np.cos(k * np.pi * y)
        return out

    return fn
