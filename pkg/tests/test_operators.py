import math

import numpy as np
import pytest

from conftest import sine_box_psi, stream_velocity
from coralsim.fields import Grid, ScalarField, VectorField, integrate, lp_norm, velocity_inner
from coralsim.operators import (
    StencilConfig,
    advect_conservative,
    chemotactic_face_drift,
    chemotactic_flux_div,
    divergence_cells,
    gradient_faces,
    laplacian_neumann,
)
from coralsim.sensitivity import SensitivityEvaluator, SensitivityParams


def random_field(grid, seed, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return ScalarField(grid, lo + (hi - lo) * rng.random(grid.dims))


def test_stencil_config_validation():
    StencilConfig()
    StencilConfig(advection="minmod")
    with pytest.raises(ValueError):
        StencilConfig(diffusion="fourth")
    with pytest.raises(ValueError):
        StencilConfig(advection="weno")


# ---------------------------------------------------------------------------
# Laplacian
# ---------------------------------------------------------------------------

def test_laplacian_integrates_to_zero():
    f = random_field(Grid((9, 7, 5), (1.0, 2.0, 0.5)), seed=1)
    lap = laplacian_neumann(f)
    scale = lp_norm(lap, 1.0) + 1e-300
    assert abs(integrate(lap)) <= 1e-12 * scale


def test_laplacian_exact_on_quadratic_interior():
    # f = x^2 has Laplacian 2 exactly at interior cells (central stencil is
    # exact on quadratics; only the Neumann boundary rows differ)
    g = Grid((16, 1, 1))
    f = ScalarField.from_function(g, lambda x, y, z: x * x)
    lap = laplacian_neumann(f).values[:, 0, 0]
    assert np.allclose(lap[1:-1], 2.0, rtol=0.0, atol=1e-11)


def test_laplacian_of_constant_is_zero():
    g = Grid((8, 8, 4))
    lap = laplacian_neumann(ScalarField.full(g, 3.7))
    assert np.all(lap.values == 0.0)


def test_laplacian_self_adjoint():
    g = Grid((8, 6, 5), (1.0, 1.3, 0.8))
    f = random_field(g, 2)
    w = random_field(g, 3)
    lhs = integrate(ScalarField(g, laplacian_neumann(f).values * w.values))
    rhs = integrate(ScalarField(g, f.values * laplacian_neumann(w).values))
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + abs(rhs) + 1.0)


def test_laplacian_consistency_second_order():
    # -lap q = 2 pi^2 q for q = cos(pi x) cos(pi y); refinement slope ~ 2
    errs = []
    for nx in (16, 32, 64):
        g = Grid((nx, nx, 1))
        q = ScalarField.from_function(
            g, lambda x, y, z: np.cos(np.pi * x) * np.cos(np.pi * y))
        lap = laplacian_neumann(q)
        err = ScalarField(g, lap.values + 2.0 * np.pi ** 2 * q.values)
        errs.append(lp_norm(err, 2.0))
    slope = math.log2(errs[0] / errs[1])
    slope2 = math.log2(errs[1] / errs[2])
    assert 1.7 <= slope <= 2.3 and 1.7 <= slope2 <= 2.3


# ---------------------------------------------------------------------------
# gradient / divergence duality
# ---------------------------------------------------------------------------

def test_gradient_divergence_adjointness():
    g = Grid((7, 6, 5), (1.0, 0.9, 1.4))
    rng = np.random.default_rng(4)
    q = random_field(g, 5)
    v = VectorField(g, [rng.standard_normal(g.face_shape(a)) for a in range(3)])
    v.zero_boundary_faces()
    lhs = velocity_inner(gradient_faces(q), v)
    rhs = -integrate(ScalarField(g, q.values * divergence_cells(v).values))
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + abs(rhs) + 1.0)


def test_gradient_faces_zero_on_boundary():
    gvec = gradient_faces(random_field(Grid((6, 6, 1)), 6))
    assert gvec.boundary_normal_max() == 0.0


# ---------------------------------------------------------------------------
# advection
# ---------------------------------------------------------------------------

def test_advection_exact_translation_at_unit_cfl():
    # uniform u along x at CFL = 1: donor-cell translates by one cell per step
    g = Grid((32, 1, 1))
    h = g.spacing[0]
    f = ScalarField.zeros(g)
    f.values[8:13, 0, 0] = 1.0
    u = VectorField.zeros(g)
    u.components[0][:] = 1.0  # boundary faces carry no flux regardless
    dt = h
    cur = f.values.copy()
    for _ in range(5):
        cur = cur - dt * advect_conservative(u, ScalarField(g, cur)).values
    expected = np.zeros(g.dims)
    expected[13:18, 0, 0] = 1.0
    assert np.allclose(cur, expected, atol=1e-14)
    assert abs(cur.sum() - f.values.sum()) * g.cell_volume <= 1e-14


@pytest.mark.parametrize("scheme", ["upwind", "minmod"])
def test_advection_conserves_mass(scheme):
    g = Grid((24, 24, 1))
    u = stream_velocity(g, sine_box_psi, amplitude=1.3)
    f = random_field(g, 7)
    out = advect_conservative(u, f, scheme=scheme)
    scale = lp_norm(out, 1.0) + 1e-300
    assert abs(integrate(out)) <= 1e-12 * scale


def test_advection_warns_on_nonsolenoidal_velocity():
    g = Grid((8, 8, 1))
    u = VectorField.from_function(g, lambda a, x, y, z: x if a == 0 else 0.0 * x)
    with pytest.warns(UserWarning, match="divergence-free"):
        advect_conservative(u, ScalarField.full(g, 1.0), div_check_tol=1e-10)


def test_advection_consistency_first_order():
    # measured truncation slope of the upwind flux divergence against the
    # analytic div(u q) for a smooth solenoidal field
    errs = []
    for nx in (16, 32, 64):
        g = Grid((nx, nx, 1))
        u = stream_velocity(g, sine_box_psi)
        q = ScalarField.from_function(
            g, lambda x, y, z: np.cos(np.pi * x) * np.cos(np.pi * y))
        exact = ScalarField.from_function(
            g,
            lambda x, y, z: (
                -np.pi * np.sin(np.pi * x) ** 2 * np.cos(np.pi * y) ** 2
                + np.pi * np.cos(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2
            ),
        )
        err = ScalarField(g, advect_conservative(u, q).values - exact.values)
        errs.append(lp_norm(err, 2.0))
    slope = math.log2(errs[0] / errs[1])
    slope2 = math.log2(errs[1] / errs[2])
    assert 0.8 <= slope <= 1.3 and 0.8 <= slope2 <= 1.3


# ---------------------------------------------------------------------------
# chemotactic flux
# ---------------------------------------------------------------------------

def scalar_evaluator(grid, chi0=1.0):
    return SensitivityEvaluator(
        SensitivityParams(alpha=0.0, chi0=chi0, theta=0.0, eps=0.0), grid)


def test_chemotaxis_matches_hand_stencil_1d():
    # scalar sensitivity S = chi0 * I on a 16-cell line: the flux divergence
    # must match the hand-discretized div(n_up * chi0 * dc/dx)
    g = Grid((16, 1, 1))
    h = g.spacing[0]
    chi0 = 1.7
    rng = np.random.default_rng(8)
    n = 0.2 + rng.random(16)
    c = rng.random(16)
    out = chemotactic_flux_div(
        ScalarField(g, n.reshape(16, 1, 1)),
        ScalarField(g, c.reshape(16, 1, 1)),
        scalar_evaluator(g, chi0),
    ).values[:, 0, 0]

    drift = chi0 * np.diff(c) / h                      # interior faces
    nup = np.where(drift > 0.0, n[:-1], n[1:])
    flux = np.concatenate([[0.0], drift * nup, [0.0]])  # zero-flux walls
    hand = np.diff(flux) / h
    assert np.allclose(out, hand, rtol=0.0, atol=1e-14)


def test_chemotaxis_conserves_mass():
    g = Grid((20, 20, 1))
    n = random_field(g, 9, lo=0.0, hi=2.0)
    c = random_field(g, 10)
    ev = SensitivityEvaluator(
        SensitivityParams(alpha=0.5, chi0=1.2, theta=math.pi / 4, eps=0.1), g)
    out = chemotactic_flux_div(n, c, ev)
    scale = lp_norm(out, 1.0) + 1e-300
    assert abs(integrate(out)) <= 1e-12 * scale


def test_chemotaxis_zero_for_constant_signal():
    g = Grid((12, 12, 1))
    n = random_field(g, 11)
    out = chemotactic_flux_div(n, ScalarField.full(g, 2.0), scalar_evaluator(g))
    assert np.all(out.values == 0.0)


def test_chemotaxis_rotation_only_flux_in_2d():
    # theta = pi/2 turns the drift perpendicular to grad c: a signal varying
    # only in x drives a purely y-directed drift.  With n also varying only
    # in x the tangential flux is constant along y, so its divergence
    # vanishes in the interior; only the wall rows absorb the blocked flux
    # (the total-zero-flux boundary).
    g = Grid((16, 16, 1))
    n = ScalarField.from_function(g, lambda x, y, z: 1.0 + 0.3 * np.cos(np.pi * x) + 0.0 * y)
    c = ScalarField.from_function(g, lambda x, y, z: np.cos(np.pi * x) + 0.0 * y)
    ev = SensitivityEvaluator(
        SensitivityParams(alpha=0.0, chi0=1.0, theta=math.pi / 2, eps=0.0), g)
    out = chemotactic_flux_div(n, c, ev)
    assert np.abs(out.values[:, 1:-1, :]).max() <= 1e-13
    assert np.abs(out.values[:, (0, -1), :]).max() > 0.1  # walls absorb the drift


def _positivity_dt(grid, u, drifts):
    """Convex-combination bound: per-cell outgoing rate must stay below 1."""
    rate = np.zeros(grid.dims)
    for a in grid.active_axes:
        h = grid.spacing[a]
        vel = u.components[a]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        out_right = np.maximum(vel[tuple(hi)], 0.0)
        out_left = np.maximum(-vel[tuple(lo)], 0.0)
        rate += (out_right + out_left) / h
    for a, drift in drifts:
        h = grid.spacing[a]
        full = np.zeros(grid.face_shape(a))
        sl = [slice(None)] * 3
        sl[a] = slice(1, -1)
        full[tuple(sl)] = drift
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        rate += (np.maximum(full[tuple(hi)], 0.0) + np.maximum(-full[tuple(lo)], 0.0)) / h
    return 1.0 / rate.max()


@pytest.mark.parametrize("seed", range(6))
def test_explicit_transport_preserves_positivity_under_cfl(seed):
    # randomized trials: upwinded advection + upwinded chemotaxis cannot
    # create negative densities when dt satisfies the convex-combination bound
    g = Grid((14, 14, 1))
    rng = np.random.default_rng(100 + seed)
    n = ScalarField(g, rng.random(g.dims) ** 2)
    c = ScalarField(g, 2.0 * rng.random(g.dims))
    u = stream_velocity(g, sine_box_psi, amplitude=0.5 + rng.random())
    ev = SensitivityEvaluator(
        SensitivityParams(alpha=0.25, chi0=2.0, theta=rng.random() * math.pi / 2, eps=0.0), g)
    drifts = chemotactic_face_drift(n, c, ev)
    dt = _positivity_dt(g, u, drifts)
    new = n.values - dt * (
        advect_conservative(u, n).values + chemotactic_flux_div(n, c, ev).values
    )
    assert new.min() > -1.0e-13 * max(1.0, n.values.max())
