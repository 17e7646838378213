"""Conservative finite-volume stencils on the MAC grid.

Every scalar operator is written in face-flux form: a flux is computed on
cell faces (identically zero on boundary faces — the total-zero-flux boundary
condition) and the result is the discrete flux divergence.  Summing any
output over the grid therefore telescopes to the boundary flux, i.e. to zero,
at machine precision — the discrete divergence theorem the stepper's
conservation checks rely on.

Schemes:
  diffusion   central second-order (7-point, 5-point on collapsed grids)
  advection   first-order donor-cell upwind (optional minmod-limited slopes)
  chemotaxis  face density upwinded by the sign of the drift (S grad c) . nu
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .fields import Grid, ScalarField, VectorField, velocity_l2

__all__ = [
    "StencilConfig",
    "laplacian_neumann",
    "gradient_faces",
    "divergence_cells",
    "advect_conservative",
    "chemotactic_flux_div",
    "chemotactic_face_drift",
    "face_average",
]

# When True, every conservative operator asserts that its output integrates
# to (machine) zero.  Costs one reduction per call; enabled by tests.
DEBUG_CHECKS = False


@dataclass(frozen=True)
class StencilConfig:
    diffusion: str = "central"
    advection: str = "upwind"   # or "minmod"
    chemotaxis: str = "upwind"

    def __post_init__(self) -> None:
        if self.diffusion != "central":
            raise ValueError(f"unknown diffusion stencil {self.diffusion!r}")
        if self.advection not in ("upwind", "minmod"):
            raise ValueError(f"unknown advection stencil {self.advection!r}")
        if self.chemotaxis != "upwind":
            raise ValueError(f"unknown chemotaxis stencil {self.chemotaxis!r}")


def _sl(axis: int, s) -> tuple:
    t = [slice(None)] * 3
    t[axis] = s
    return tuple(t)


def _sl2(a: int, sa, b: int, sb) -> tuple:
    t = [slice(None)] * 3
    t[a] = sa
    t[b] = sb
    return tuple(t)


def _flux_divergence_add(out: np.ndarray, flux: np.ndarray, axis: int, h: float) -> None:
    """out += d(flux)/dx along ``axis``; ``flux`` lives on interior faces."""
    out[_sl(axis, 0)] += flux[_sl(axis, 0)] / h
    out[_sl(axis, slice(1, -1))] += np.diff(flux, axis=axis) / h
    out[_sl(axis, -1)] -= flux[_sl(axis, -1)] / h


def laplacian_neumann(f: ScalarField) -> ScalarField:
    """Discrete Laplacian with zero-flux (homogeneous Neumann) boundaries."""
    g = f.grid
    v = f.values
    out = np.zeros_like(v)
    for a in g.active_axes:
        h = g.spacing[a]
        _flux_divergence_add(out, np.diff(v, axis=a) / h, a, h)
    if DEBUG_CHECKS:
        _assert_conservative(out, g, "laplacian_neumann")
    return ScalarField(g, out)


def gradient_faces(f: ScalarField) -> VectorField:
    """Central gradient on faces; boundary faces carry zero (Neumann)."""
    g = f.grid
    v = f.values
    comps = []
    for a in range(3):
        comp = np.zeros(g.face_shape(a))
        if g.dims[a] > 1:
            comp[_sl(a, slice(1, -1))] = np.diff(v, axis=a) / g.spacing[a]
        comps.append(comp)
    return VectorField(g, comps)


def divergence_cells(u: VectorField) -> ScalarField:
    """Discrete divergence of a face field (boundary faces used as stored)."""
    g = u.grid
    out = np.zeros(g.dims)
    for a in range(3):
        out += np.diff(u.components[a], axis=a) / g.spacing[a]
    return ScalarField(g, out)


def face_average(f: ScalarField, axis: int) -> np.ndarray:
    """Arithmetic face interpolation; boundary faces copy the edge cell."""
    g = f.grid
    v = f.values
    out = np.empty(g.face_shape(axis))
    out[_sl(axis, slice(1, -1))] = 0.5 * (v[_sl(axis, slice(0, -1))] + v[_sl(axis, slice(1, None))])
    out[_sl(axis, 0)] = v[_sl(axis, 0)]
    out[_sl(axis, -1)] = v[_sl(axis, -1)]
    return out


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = np.sign(a)
    return np.where(s * np.sign(b) > 0, s * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _upwind_face_values(v: np.ndarray, vel: np.ndarray, axis: int, scheme: str) -> np.ndarray:
    """Transported value on interior faces, picked from the upwind side."""
    left = v[_sl(axis, slice(0, -1))]
    right = v[_sl(axis, slice(1, None))]
    if scheme == "upwind":
        return np.where(vel > 0.0, left, right)
    # minmod-limited linear reconstruction (zero slope in boundary cells,
    # consistent with the zero-flux ghost state)
    d = np.diff(v, axis=axis)
    slope = np.zeros_like(v)
    slope[_sl(axis, slice(1, -1))] = _minmod(d[_sl(axis, slice(0, -1))], d[_sl(axis, slice(1, None))])
    lo = left + 0.5 * slope[_sl(axis, slice(0, -1))]
    hi = right - 0.5 * slope[_sl(axis, slice(1, None))]
    return np.where(vel > 0.0, lo, hi)


def advect_conservative(
    u: VectorField,
    f: ScalarField,
    scheme: str = "upwind",
    div_check_tol: float | None = None,
) -> ScalarField:
    """div(u f) in conservative face-flux form; boundary faces carry no flux.

    The advecting velocity should be (discretely) divergence-free; if
    ``div_check_tol`` is given, a divergence residual above 10x that
    tolerance (relative to ||u||_2) triggers a warning.
    """
    g = f.grid
    if div_check_tol is not None:
        from .fields import lp_norm

        r = lp_norm(divergence_cells(u), 2.0)
        if r > 10.0 * div_check_tol * max(velocity_l2(u), 1e-300):
            warnings.warn(
                f"advecting field is not divergence-free: ||div u||_2 = {r:.3e}",
                stacklevel=2,
            )
    v = f.values
    out = np.zeros_like(v)
    for a in g.active_axes:
        vel = u.components[a][_sl(a, slice(1, -1))]
        flux = vel * _upwind_face_values(v, vel, a, scheme)
        _flux_divergence_add(out, flux, a, g.spacing[a])
    if DEBUG_CHECKS:
        _assert_conservative(out, g, "advect_conservative")
    return ScalarField(g, out)


# ---------------------------------------------------------------------------
# chemotactic flux
# ---------------------------------------------------------------------------

def _face_gradient_full(c: np.ndarray, grid: Grid, axis_face: int) -> list[np.ndarray]:
    """All three components of grad(c) evaluated at interior faces of ``axis_face``.

    The normal component is the two-point difference across the face; each
    tangential component is the four-point average of the neighbouring
    same-direction differences (zero at domain boundaries, matching the
    Neumann condition).  Collapsed axes contribute zero.
    """
    comps: list[np.ndarray] = [None, None, None]  # type: ignore[list-item]
    hn = grid.spacing[axis_face]
    gn = np.diff(c, axis=axis_face) / hn
    comps[axis_face] = gn
    for b in range(3):
        if b == axis_face:
            continue
        if grid.dims[b] == 1:
            comps[b] = np.zeros_like(gn)
            continue
        # same-direction differences on b-faces, zero on boundary b-faces
        db = np.zeros(grid.face_shape(b))
        db[_sl(b, slice(1, -1))] = np.diff(c, axis=b) / grid.spacing[b]
        # average the four surrounding b-differences onto interior a-faces
        lo, hi = slice(0, -1), slice(1, None)
        comps[b] = 0.25 * (
            db[_sl2(axis_face, lo, b, lo)]
            + db[_sl2(axis_face, lo, b, hi)]
            + db[_sl2(axis_face, hi, b, lo)]
            + db[_sl2(axis_face, hi, b, hi)]
        )
    return comps


def _interior_face_coords(grid: Grid, axis: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    out = []
    for a in range(3):
        h = grid.spacing[a]
        if a == axis:
            coords = np.arange(1, grid.dims[a]) * h
        else:
            coords = (np.arange(grid.dims[a]) + 0.5) * h
        out.append(coords.reshape([-1 if b == a else 1 for b in range(3)]))
    return tuple(out)


def chemotactic_face_drift(n: ScalarField, c: ScalarField, evaluator) -> list[tuple[int, np.ndarray]]:
    """Normal drift component (S_eps grad c) . nu on interior faces, per axis.

    Face states (n, c) are arithmetic two-point interpolants; the sensitivity
    prefactor is evaluated at the face from those interpolants and the face
    position.  Used both for the flux and for the CFL speed estimate.
    """
    grid = n.grid
    eps = evaluator.params.eps
    drifts = []
    for a in grid.active_axes:
        gcomp = _face_gradient_full(c.values, grid, a)
        n_face = 0.5 * (n.values[_sl(a, slice(0, -1))] + n.values[_sl(a, slice(1, None))])
        c_face = 0.5 * (c.values[_sl(a, slice(0, -1))] + c.values[_sl(a, slice(1, None))])
        if eps > 0.0:
            x, y, z = _interior_face_coords(grid, a)
            dist = grid.boundary_distance(x, y, z)
        else:
            dist = 0.0
        mag = evaluator.magnitude(dist, n_face, c_face)
        drift = evaluator.drift(mag, gcomp[0], gcomp[1], gcomp[2])[a]
        drifts.append((a, drift))
    return drifts


def chemotactic_flux_div(n: ScalarField, c: ScalarField, evaluator,
                         drift: list[tuple[int, np.ndarray]] | None = None) -> ScalarField:
    """div(n S_eps grad c) with the face density upwinded by the drift sign.

    Pass a precomputed ``chemotactic_face_drift`` result to avoid evaluating
    the sensitivity twice when the drift is also needed for CFL control.
    """
    grid = n.grid
    v = n.values
    out = np.zeros_like(v)
    if drift is None:
        drift = chemotactic_face_drift(n, c, evaluator)
    for a, d in drift:
        n_up = np.where(d > 0.0, v[_sl(a, slice(0, -1))], v[_sl(a, slice(1, None))])
        _flux_divergence_add(out, d * n_up, a, grid.spacing[a])
    if DEBUG_CHECKS:
        _assert_conservative(out, grid, "chemotactic_flux_div")
    return ScalarField(grid, out)


def scalar_grad_norm_sq(f: ScalarField) -> float:
    """Discrete |grad f|_L2^2 over interior faces (zero-flux boundary).

    Equal to <(-lap) f, f> by summation by parts, which is the form entering
    the discrete dissipation identities.
    """
    g = f.grid
    total = 0.0
    for a in g.active_axes:
        d = np.diff(f.values, axis=a) / g.spacing[a]
        total += float(np.vdot(d, d))
    return total * g.cell_volume


def _assert_conservative(out: np.ndarray, grid: Grid, what: str) -> None:
    total = abs(out.sum()) * grid.cell_volume
    scale = np.abs(out).sum() * grid.cell_volume + 1e-300
    if total > 1e-12 * scale:
        raise AssertionError(f"{what} lost conservation: integral {total:.3e} vs scale {scale:.3e}")
