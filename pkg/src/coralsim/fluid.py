"""Incompressible velocity update: projection, Yosida smoothing, momentum step.

The velocity lives on MAC faces with no-slip walls.  One step solves the
coupled implicit viscous/incompressible system

    u_new + dt * (-lap_D) u_new + grad q = u + dt * (f - kappa * conv),
    div u_new = 0,

as one symmetric indefinite system in (interior faces, cell pressures),
solved by MINRES with exact stencil applications.  Solving viscosity and
incompressibility together (rather than splitting) keeps the discrete kinetic
energy budget one-sided: testing the update with ``u_new``, the pressure term
pairs with ``div u_new`` (solver residual) and Cauchy-Schwarz gives, per step,

    (|u_new|^2 - |u|^2) / (2 dt) + |grad u_new|^2 <= <f, u_new> - kappa <conv, u_new>

up to solver tolerance, which `fluid_step` checks (and enforces for kappa=0).
The same solve yields the pressure (q / dt) for free.

The buoyancy-style force is (n + m) * grad(phi) with a constant potential
gradient; convection transports momentum with the Yosida-smoothed velocity
(I + eps * A)^{-1} u and donor-cell upwinding on the dual mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import Grid, ScalarField, VectorField, velocity_inner, velocity_l2
from .operators import divergence_cells, gradient_faces
from .solvers import laplacian_dirichlet_component, minres_solve, poisson_neumann

__all__ = [
    "FluidParams",
    "FluidStepResult",
    "project",
    "yosida_smooth",
    "velocity_grad_norm_sq",
    "fluid_step",
]


@dataclass(frozen=True)
class FluidParams:
    """Momentum-equation settings.

    kappa       weight of the convection term (0 drops it entirely)
    yosida_eps  smoothing strength for the convecting velocity (0 = none)
    phi_grad    constant gradient of the potential driving (n+m)*grad(phi)
    solver_tol  relative residual target of the linear solves, in (0, 1e-4]
    solver_maxit iteration cap per linear solve
    """

    kappa: float = 1.0
    yosida_eps: float = 0.0
    phi_grad: tuple[float, float, float] = (0.0, 0.0, 0.0)
    solver_tol: float = 1.0e-10
    solver_maxit: int = 20000

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and self.kappa >= 0.0):
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        if not (math.isfinite(self.yosida_eps) and self.yosida_eps >= 0.0):
            raise ValueError(f"yosida_eps must be finite and >= 0, got {self.yosida_eps}")
        if len(self.phi_grad) != 3 or not all(math.isfinite(g) for g in self.phi_grad):
            raise ValueError(f"phi_grad must be three finite components, got {self.phi_grad!r}")
        if not (0.0 < self.solver_tol <= 1.0e-4):
            raise ValueError(f"solver_tol must lie in (0, 1e-4], got {self.solver_tol}")
        if self.solver_maxit < 1:
            raise ValueError("solver_maxit must be at least 1")


@dataclass
class FluidStepResult:
    u: VectorField
    pressure: ScalarField
    div_l2: float
    grad_sq: float
    kinetic_energy: float
    work_force: float
    work_convection: float
    energy_residual: float  # signed, relative to energy_scale (0 if scale is 0)
    energy_scale: float


def _pack(comps: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([c.ravel() for c in comps])


def _require_noslip(u: VectorField, where: str) -> None:
    if u.boundary_normal_max() != 0.0:
        raise ValueError(f"{where}: velocity has nonzero wall-normal faces")


def _project_raw(grid: Grid, comps: list[np.ndarray], maxiter: int, *,
                 atol_cells: float, q0: np.ndarray | None = None,
                 what: str = "pressure Poisson solve"):
    """Remove the gradient part of face components (assumed zero on walls).

    Solves (-lap_N) q = -div(comps) down to the given absolute residual; the
    corrected components have divergence equal to the CG residual exactly,
    because the cell-centered divergence of `gradient_faces` *is* the Neumann
    Laplacian.  Returns (corrected components, q).
    """
    div = divergence_cells(VectorField(grid, list(comps)))
    b = -div.values
    if np.linalg.norm(b - b.mean()) <= atol_cells:
        return [c.copy() for c in comps], np.zeros(grid.dims)
    q = poisson_neumann(grid, b, atol=atol_cells, maxiter=maxiter, x0=q0, what=what)
    gq = gradient_faces(ScalarField(grid, q))
    out = [c - g for c, g in zip(comps, gq.components)]
    return out, q


def project(u: VectorField, *, tol: float, maxiter: int,
            pressure_guess: np.ndarray | None = None):
    """Leray projection of a no-slip MAC field.

    Returns ``(u_proj, q, div_l2)`` with ``u_proj = u - grad q`` and
    ``div_l2 = |div u_proj|_L2 <= tol * |u|_L2``.  A field that is already
    divergence-free within tolerance is returned unchanged (exact
    idempotence).  The potential ``q`` is mean-zero.
    """
    _require_noslip(u, "project")
    grid = u.grid
    dv = grid.cell_volume
    atol_cells = tol * velocity_l2(u) / math.sqrt(dv)
    comps, q = _project_raw(grid, u.components, maxiter, atol_cells=atol_cells,
                            q0=pressure_guess)
    out = VectorField(grid, comps)
    out.zero_boundary_faces()
    div_l2 = math.sqrt(dv) * float(np.linalg.norm(divergence_cells(out).values))
    return out, ScalarField(grid, q), div_l2


def _interior_face_masks(grid: Grid) -> list[np.ndarray]:
    masks = []
    for a in range(3):
        msk = np.ones(grid.face_shape(a), dtype=bool)
        sl = [slice(None)] * 3
        sl[a] = 0
        msk[tuple(sl)] = False
        sl[a] = -1
        msk[tuple(sl)] = False
        masks.append(msk)
    return masks


def _stokes_kkt_solve(grid: Grid, rhs_comps: list[np.ndarray], coef: float,
                      atol: float, maxiter: int, x0_comps: list[np.ndarray],
                      q0: np.ndarray | None, what: str):
    """Solve  w + coef*(-lap_D) w + grad q = rhs,  div w = 0  by MINRES.

    Unknowns are the interior faces of w plus one pressure-like multiplier q
    per cell; wall faces are pinned to zero by construction.  In the raw dot
    product the face gradient is exactly minus the transpose of the cell
    divergence, so writing the constraint row as -div w = 0 makes the system
    symmetric (indefinite) and every matvec is an exact stencil application —
    no nested solves to limit the reachable residual.  q is gauged to zero
    mean (the constant nullspace never enters the Krylov space).  Returns
    (face components, q).
    """
    masks = _interior_face_masks(grid)
    nc = int(np.prod(grid.dims))

    def split(x):
        comps, off = [], 0
        for a in range(3):
            c = np.zeros(grid.face_shape(a))
            k = int(masks[a].sum())
            c[masks[a]] = x[off:off + k]
            comps.append(c)
            off += k
        return comps, x[off:off + nc].reshape(grid.dims)

    def join(comps, q):
        return np.concatenate([c[masks[a]] for a, c in enumerate(comps)]
                              + [q.ravel()])

    def matvec(x):
        comps, q = split(x)
        gq = gradient_faces(ScalarField(grid, q)).components
        out = [c - coef * laplacian_dirichlet_component(grid, c, a) + gq[a]
               for a, c in enumerate(comps)]
        dq = -divergence_cells(VectorField(grid, comps)).values
        return join(out, dq)

    b = join(rhs_comps, np.zeros(grid.dims))
    q0 = np.zeros(grid.dims) if q0 is None else q0 - q0.mean()
    x = minres_solve(matvec, b, join(x0_comps, q0), atol, maxiter, what)
    comps, q = split(x)
    return comps, q - q.mean()


def yosida_smooth(u: VectorField, eps: float, *, tol: float, maxiter: int) -> VectorField:
    """Resolvent smoothing (I + eps * Stokes)^{-1} u; contraction is enforced.

    eps = 0 returns a copy.  The smoothed field cannot gain kinetic energy;
    a violation beyond solver accuracy raises RuntimeError.
    """
    _require_noslip(u, "yosida_smooth")
    if eps == 0.0:
        return u.copy()
    grid = u.grid
    atol = tol * float(np.linalg.norm(_pack(u.components)))
    comps, _ = _stokes_kkt_solve(grid, u.components, eps, atol, maxiter,
                                 u.components, None, "velocity smoothing solve")
    out = VectorField(grid, comps)
    l2_in = velocity_l2(u)
    l2_out = velocity_l2(out)
    if l2_out > l2_in * (1.0 + 1.0e3 * tol):
        raise RuntimeError(
            f"velocity smoothing violated contraction: |w| = {l2_out:.17g} "
            f"> |u| = {l2_in:.17g}"
        )
    return out


def velocity_grad_norm_sq(u: VectorField) -> float:
    """|grad u|_L2^2 via <-lap_D u, u>; includes the no-slip wall penalty."""
    lap = VectorField(u.grid, [
        -laplacian_dirichlet_component(u.grid, c, a) for a, c in enumerate(u.components)
    ])
    return velocity_inner(lap, u)


def _force_components(grid: Grid, n: ScalarField, m: ScalarField,
                      phi_grad: tuple[float, float, float]) -> list[np.ndarray]:
    s = n.values + m.values
    comps = [np.zeros(grid.face_shape(a)) for a in range(3)]
    for a in grid.active_axes:
        g = phi_grad[a]
        if g == 0.0:
            continue
        lo = tuple(slice(0, -1) if ax == a else slice(None) for ax in range(3))
        hi = tuple(slice(1, None) if ax == a else slice(None) for ax in range(3))
        inner = tuple(slice(1, -1) if ax == a else slice(None) for ax in range(3))
        comps[a][inner] = g * 0.5 * (s[lo] + s[hi])
    return comps


def _advect_component(grid: Grid, adv: VectorField, v: np.ndarray, axis: int) -> np.ndarray:
    """Donor-cell div(adv * v) for the MAC component of the given axis.

    Dual control volumes are centered on interior faces; dual-face advecting
    velocities are two-point averages of `adv`.  Wall-tangent dual faces
    carry the (zero) wall-normal velocity, so their fluxes vanish and no
    ghost values are needed.  Output is zero on the pinned boundary faces.
    """
    out = np.zeros_like(v)
    a = axis

    def sl(ax, s):
        t = [slice(None)] * 3
        t[ax] = s
        return tuple(t)

    def sl2(ax1, s1, ax2, s2):
        t = [slice(None)] * 3
        t[ax1] = s1
        t[ax2] = s2
        return tuple(t)

    if grid.dims[a] > 1:
        ca = adv.components[a]
        w = 0.5 * (ca[sl(a, slice(0, -1))] + ca[sl(a, slice(1, None))])  # at cells
        val = np.where(w > 0.0, v[sl(a, slice(0, -1))], v[sl(a, slice(1, None))])
        out[sl(a, slice(1, -1))] += np.diff(w * val, axis=a) / grid.spacing[a]

    for b in grid.active_axes:
        if b == a:
            continue
        cb = adv.components[b]
        # edge dual faces: interior a-faces x interior b-faces
        w = 0.5 * (cb[sl2(a, slice(0, -1), b, slice(1, -1))]
                   + cb[sl2(a, slice(1, None), b, slice(1, -1))])
        val = np.where(w > 0.0,
                       v[sl2(a, slice(1, -1), b, slice(0, -1))],
                       v[sl2(a, slice(1, -1), b, slice(1, None))])
        flux = w * val
        hb = grid.spacing[b]
        sub = out[sl(a, slice(1, -1))]
        sub[sl(b, 0)] += flux[sl(b, 0)] / hb
        if grid.dims[b] > 2:
            sub[sl(b, slice(1, -1))] += np.diff(flux, axis=b) / hb
        sub[sl(b, -1)] += -flux[sl(b, -1)] / hb
    return out


def fluid_step(u: VectorField, n: ScalarField, m: ScalarField, params: FluidParams,
               dt: float, *, pressure_guess: np.ndarray | None = None) -> FluidStepResult:
    """Advance the velocity by one step of size dt.

    Returns the new field together with the pieces of the kinetic-energy
    budget.  With kappa = 0 the signed relative energy residual must stay
    below 1e-8; a violation raises RuntimeError (it indicates a broken solve,
    not a modelling choice).
    """
    if dt <= 0.0 or not math.isfinite(dt):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    _require_noslip(u, "fluid_step")
    grid = u.grid
    dv = grid.cell_volume

    force = VectorField(grid, _force_components(grid, n, m, params.phi_grad))

    if params.kappa != 0.0:
        adv = yosida_smooth(u, params.yosida_eps, tol=params.solver_tol,
                            maxiter=params.solver_maxit)
        conv = VectorField(grid, [
            _advect_component(grid, adv, u.components[a], a) for a in range(3)
        ])
    else:
        conv = VectorField.zeros(grid)

    rhs_raw = [
        u.components[a] + dt * (force.components[a] - params.kappa * conv.components[a])
        for a in range(3)
    ]

    # coupled viscous/incompressible solve; tighter for small dt so the
    # solver error stays below the energy budget's 1/(2 dt) amplification
    atol = params.solver_tol * float(np.linalg.norm(_pack(rhs_raw))) * min(1.0, 10.0 * dt)
    q0 = None if pressure_guess is None else dt * pressure_guess
    comps, q = _stokes_kkt_solve(grid, rhs_raw, dt, atol, params.solver_maxit,
                                 u.components, q0, "implicit momentum solve")
    u_new = VectorField(grid, comps)
    div_l2 = math.sqrt(dv) * float(np.linalg.norm(divergence_cells(u_new).values))

    # the multiplier of the constrained solve is dt times the pressure
    lap = [laplacian_dirichlet_component(grid, c, a) for a, c in enumerate(u_new.components)]
    p = q / dt

    e0 = velocity_inner(u, u)
    e1 = velocity_inner(u_new, u_new)
    grad_sq = -velocity_inner(VectorField(grid, lap), u_new)
    work_force = velocity_inner(force, u_new)
    work_conv = params.kappa * velocity_inner(conv, u_new)
    residual = (e1 - e0) / (2.0 * dt) + grad_sq - work_force + work_conv
    scale = abs(e1 - e0) / (2.0 * dt) + grad_sq + abs(work_force) + abs(work_conv)
    # once the velocity decays to the linear solver's noise floor every budget
    # term is rounding residue and the relative test is 0/0; report 0 there
    resolved = math.sqrt(e0) + math.sqrt(e1) > 1.0e-5 * (
        1.0 + dt * math.sqrt(velocity_inner(force, force)))
    rel = residual / scale if scale > 0.0 and resolved else 0.0
    if params.kappa == 0.0 and rel > 1.0e-8:
        raise RuntimeError(
            f"kinetic-energy budget violated: relative residual {rel:.3e} > 1e-8 "
            f"(residual {residual:.6e}, scale {scale:.6e})"
        )

    return FluidStepResult(
        u=u_new,
        pressure=ScalarField(grid, p),
        div_l2=div_l2,
        grad_sq=grad_sq,
        kinetic_energy=0.5 * e1,
        work_force=work_force,
        work_convection=work_conv,
        energy_residual=rel,
        energy_scale=scale,
    )
