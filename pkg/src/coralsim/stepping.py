"""Coupled IMEX time integration of the fertilization system.

One step advances (n, c, m, u) in the order

    fluid -> explicit transport -> implicit diffusion -> reactions,

chosen so the proved identities survive discretely and can be asserted every
step rather than merely hoped for:

* transport and the chemotactic drift are conservative face-flux forms, so
  they change no integral at all;
* implicit diffusion is solved by CG and then *re-applied in flux form*
  (x_new = b + dt * lap(x)), which pins the mass error to rounding level
  instead of solver tolerance — the difference ``x_new - x`` is exactly the
  CG residual;
* the fertilization sink removes the *same* reaction mass R from n and m
  (shared-product Patankar), making d/dt (int n - int m) = 0 exact, and the
  chemical update (c + dt*m_new)/(1+dt) keeps c nonnegative and monotone
  whenever int c >= int m;
* negative undershoots beyond -1e-13 * scale are hard errors (scheme-bug
  trap); smaller ones are clamped and the clamped mass is compensated
  multiplicatively so clamping never leaks mass.

Dissipation accumulators sample the post-diffusion fields with weight dt,
the point at which the backward-Euler energy inequality
(1/2)|x|^2 + dt |grad x|^2 <= (1/2)|b|^2 holds exactly, so the cumulative
bound int_0^t |grad m|^2 <= (1/2) int m_0^2 is a theorem of the scheme, not
an approximation of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import Grid, ScalarField, VectorField, integrate, velocity_l2
from .fluid import FluidParams, fluid_step, project
from .operators import (
    StencilConfig,
    advect_conservative,
    chemotactic_face_drift,
    chemotactic_flux_div,
    laplacian_neumann,
    scalar_grad_norm_sq,
)
from .sensitivity import SensitivityEvaluator, SensitivityParams
from .solvers import helmholtz_neumann

__all__ = [
    "SimConfig",
    "SimState",
    "equilibrium_values",
    "initial_state",
    "stable_dt",
    "step",
    "run",
    "resume",
    "convergence_metric",
]

# relative per-step slack for the asserted identities (solver/rounding noise)
_IDENTITY_SLACK = 1.0e-12
# relative tolerance of the scalar diffusion solves; kept near machine level
# so solver noise cannot masquerade as a negativity or monotonicity violation
_DIFFUSION_RTOL = 1.0e-14
# undershoot below -1e-13 * scale means the scheme is broken, not noisy
_NEGATIVITY_FLOOR = 1.0e-13


@dataclass(frozen=True)
class SimConfig:
    """Complete description of one simulation.

    Initial data are callables: scalars take broadcastable cell-center
    coordinates ``(x, y, z)``; the velocity takes ``(axis, x, y, z)`` at face
    centers (``None`` starts from rest).  The sampled velocity is projected
    once at initialization.

    ``dt`` fixes the step size; leaving it ``None`` selects the CFL-adaptive
    policy ``cfl_sigma / max outgoing rate`` capped at ``max_dt``.
    ``tol_conv`` switches on the convergence stop
    |n - n_hat|_inf + |m - m_hat|_inf + |u|_2 < tol_conv, checked at record
    times.
    """

    grid: Grid
    initial_n: Callable
    initial_c: Callable
    initial_m: Callable
    initial_u: Callable | None = None
    sens: SensitivityParams = SensitivityParams()
    fluid: FluidParams = FluidParams()
    stencil: StencilConfig = StencilConfig()
    dt: float | None = None
    max_dt: float = 0.05
    cfl_sigma: float = 0.4
    t_end: float = 1.0
    record_dt: float = 0.1
    tol_conv: float | None = None

    def __post_init__(self):
        if self.dt is not None and not (0.0 < self.dt < math.inf):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not (0.0 < self.max_dt < math.inf):
            raise ValueError(f"max_dt must be positive and finite, got {self.max_dt}")
        if not (0.0 < self.cfl_sigma <= 1.0):
            raise ValueError(f"cfl_sigma must lie in (0, 1], got {self.cfl_sigma}")
        if not (0.0 <= self.t_end < math.inf):
            raise ValueError(f"t_end must be nonnegative and finite, got {self.t_end}")
        if not (0.0 < self.record_dt < math.inf):
            raise ValueError(f"record_dt must be positive and finite, got {self.record_dt}")
        if self.tol_conv is not None and not (0.0 < self.tol_conv < math.inf):
            raise ValueError(f"tol_conv must be positive when set, got {self.tol_conv}")


@dataclass
class SimState:
    """The evolving solution plus everything the verified identities need.

    The ``mass_*``, ``c0_*`` and ``half_m0_sq`` fields freeze the
    initial-data functionals the bounds refer to; ``sup_m_linf`` tracks the
    running maximum of |m|_inf entering the chemical's L-infinity bound.
    ``worst_energy_rel`` is the worst signed relative kinetic-energy residual
    since the last diagnostics record (NaN if no step happened since).
    """

    t: float
    step_index: int
    n: ScalarField
    c: ScalarField
    m: ScalarField
    u: VectorField
    P: ScalarField
    acc_nm: float = 0.0
    acc_grad_m: float = 0.0
    acc_grad_c: float = 0.0
    acc_grad_u: float = 0.0
    sup_m_linf: float = 0.0
    mass_n0: float = 0.0
    mass_m0: float = 0.0
    c0_linf: float = 0.0
    c0_mass: float = 0.0
    half_m0_sq: float = 0.0
    worst_energy_rel: float = math.nan
    last_div_l2: float = 0.0
    last_dt: float = math.nan

    def copy(self) -> "SimState":
        return SimState(
            t=self.t, step_index=self.step_index,
            n=self.n.copy(), c=self.c.copy(), m=self.m.copy(),
            u=self.u.copy(), P=self.P.copy(),
            acc_nm=self.acc_nm, acc_grad_m=self.acc_grad_m,
            acc_grad_c=self.acc_grad_c, acc_grad_u=self.acc_grad_u,
            sup_m_linf=self.sup_m_linf,
            mass_n0=self.mass_n0, mass_m0=self.mass_m0,
            c0_linf=self.c0_linf, c0_mass=self.c0_mass,
            half_m0_sq=self.half_m0_sq,
            worst_energy_rel=self.worst_energy_rel,
            last_div_l2=self.last_div_l2, last_dt=self.last_dt,
        )

    @property
    def grid(self) -> Grid:
        return self.n.grid


def equilibrium_values(mass_n: float, mass_m: float, volume: float) -> tuple[float, float]:
    """Homogeneous equilibrium (n_hat, m_hat) = ({d}_+, {-d}_+)/|O|, d = mass gap."""
    d = mass_n - mass_m
    return (max(d, 0.0) / volume, max(-d, 0.0) / volume)


def initial_state(cfg: SimConfig) -> SimState:
    grid = cfg.grid
    fields = {}
    for name, fn in (("n", cfg.initial_n), ("c", cfg.initial_c), ("m", cfg.initial_m)):
        f = ScalarField.from_function(grid, fn)
        if not np.all(np.isfinite(f.values)):
            raise ValueError(f"initial {name} contains non-finite samples")
        if f.values.min() < 0.0:
            raise ValueError(
                f"initial {name} is negative somewhere "
                f"(min sample {f.values.min():.3e})"
            )
        fields[name] = f
    if cfg.initial_u is None:
        u = VectorField.zeros(grid)
    else:
        u0 = VectorField.from_function(grid, cfg.initial_u)
        u, _, _ = project(u0, tol=cfg.fluid.solver_tol, maxiter=cfg.fluid.solver_maxit)
    n, c, m = fields["n"], fields["c"], fields["m"]
    return SimState(
        t=0.0, step_index=0, n=n, c=c, m=m, u=u, P=ScalarField.zeros(grid),
        sup_m_linf=float(m.values.max(initial=0.0)),
        mass_n0=integrate(n), mass_m0=integrate(m),
        c0_linf=float(c.values.max(initial=0.0)), c0_mass=integrate(c),
        half_m0_sq=0.5 * integrate(ScalarField(grid, m.values ** 2)),
    )


def _outgoing_rates(grid: Grid, u: VectorField,
                    drifts: list[tuple[int, np.ndarray]]) -> np.ndarray:
    """Per-cell total outgoing transport rate (advection + chemotactic drift).

    ``dt * rate <= 1`` keeps the explicit upwind update a convex combination
    of old cell values, hence positivity-preserving.
    """
    rate = np.zeros(grid.dims)
    dmap = dict(drifts)
    for a in grid.active_axes:
        h = grid.spacing[a]
        vel = u.components[a].copy()
        if a in dmap:
            sl = [slice(None)] * 3
            sl[a] = slice(1, -1)
            vel[tuple(sl)] += dmap[a]
        hi = tuple(slice(1, None) if ax == a else slice(None) for ax in range(3))
        lo = tuple(slice(0, -1) if ax == a else slice(None) for ax in range(3))
        rate += (np.maximum(vel[hi], 0.0) + np.maximum(-vel[lo], 0.0)) / h
    return rate


def stable_dt(state: SimState, cfg: SimConfig) -> float:
    """CFL-limited step: sigma / max outgoing rate, capped at max_dt."""
    evaluator = SensitivityEvaluator(cfg.sens, cfg.grid)
    drifts = chemotactic_face_drift(state.n, state.c, evaluator)
    max_rate = float(_outgoing_rates(cfg.grid, state.u, drifts).max(initial=0.0))
    if max_rate <= 0.0:
        return cfg.max_dt
    return min(cfg.cfl_sigma / max_rate, cfg.max_dt)


def convergence_metric(state: SimState) -> float:
    """|n - n_hat|_inf + |m - m_hat|_inf + |u|_2, the stopping functional."""
    n_hat, m_hat = equilibrium_values(state.mass_n0, state.mass_m0,
                                      state.grid.volume)
    return (float(np.abs(state.n.values - n_hat).max())
            + float(np.abs(state.m.values - m_hat).max())
            + velocity_l2(state.u))


def _clamp_nonnegative(values: np.ndarray, grid: Grid, what: str) -> np.ndarray:
    """Enforce nonnegativity without leaking mass.

    Undershoots beyond the floor abort (they indicate a CFL or solver bug).
    Rounding-level negatives are clamped to zero and the created mass is
    removed again by scaling the positive part, so the field integral is
    unchanged up to rounding.
    """
    vmin = float(values.min())
    if vmin >= 0.0:
        return values
    scale = max(float(np.abs(values).max()), 1.0)
    if vmin < -_NEGATIVITY_FLOOR * scale:
        raise RuntimeError(
            f"{what} produced a negative value {vmin:.6e} beyond the "
            f"{-_NEGATIVITY_FLOOR * scale:.1e} rounding floor"
        )
    clamped = np.maximum(values, 0.0)
    mass_before = float(values.sum())
    mass_after = float(clamped.sum())
    if mass_after > 0.0 and 0.0 < mass_before <= mass_after:
        clamped *= mass_before / mass_after
    return clamped


def _diffuse_conservative(f: ScalarField, dt: float, maxiter: int,
                          what: str) -> ScalarField:
    """Backward-Euler diffusion with zero-flux walls, mass-exact by design."""
    grid = f.grid
    b = f.values
    atol = _DIFFUSION_RTOL * float(np.linalg.norm(b))
    x = helmholtz_neumann(grid, b, dt, atol=atol, maxiter=maxiter, x0=b, what=what)
    # flux-form re-application: mass errors drop from solver to rounding level
    out = b + dt * laplacian_neumann(ScalarField(grid, x)).values
    return ScalarField(grid, _clamp_nonnegative(out, grid, what))


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise RuntimeError(msg)


def step(state: SimState, cfg: SimConfig, dt: float | None = None) -> SimState:
    """Advance one IMEX step; asserts every per-step identity and bound."""
    if dt is None:
        dt = cfg.dt if cfg.dt is not None else stable_dt(state, cfg)
    if not (0.0 < dt < math.inf):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    grid = cfg.grid
    n, c, m = state.n, state.c, state.m

    mass_n_old = integrate(n)
    mass_m_old = integrate(m)
    mass_c_old = integrate(c)
    linf_m_old = float(m.values.max(initial=0.0))
    linf_c_old = float(c.values.max(initial=0.0))

    # (i) fluid
    fres = fluid_step(state.u, n, m, cfg.fluid, dt, pressure_guess=state.P.values)
    u_new = fres.u

    # (ii) explicit transport (new velocity, current scalars)
    evaluator = SensitivityEvaluator(cfg.sens, grid)
    drifts = chemotactic_face_drift(n, c, evaluator)
    if cfg.dt is not None:
        max_rate = float(_outgoing_rates(grid, u_new, drifts).max(initial=0.0))
        if dt * max_rate > 1.0:
            speeds = [
                float(np.abs(u_new.components[a]).max(initial=0.0))
                + max((float(np.abs(d).max(initial=0.0))
                       for ax, d in drifts if ax == a), default=0.0)
                for a in range(3)
            ]
            worst = int(np.argmax([s / grid.spacing[a] for a, s in enumerate(speeds)]))
            raise RuntimeError(
                f"CFL violation under fixed dt: wave speed {speeds[worst]:.6g} "
                f"along axis {worst} (h = {grid.spacing[worst]:.6g}) allows "
                f"dt <= {1.0 / max_rate:.6g}, got dt = {dt:.6g}"
            )

    adv = cfg.stencil.advection
    n_t = n.values - dt * (
        advect_conservative(u_new, n, scheme=adv).values
        + chemotactic_flux_div(n, c, evaluator, drift=drifts).values
    )
    c_t = c.values - dt * advect_conservative(u_new, c, scheme=adv).values
    m_t = m.values - dt * advect_conservative(u_new, m, scheme=adv).values
    n_t = _clamp_nonnegative(n_t, grid, "transport of n")
    c_t = _clamp_nonnegative(c_t, grid, "transport of c")
    m_t = _clamp_nonnegative(m_t, grid, "transport of m")

    # (iii) implicit diffusion
    maxit = cfg.fluid.solver_maxit
    n_d = _diffuse_conservative(ScalarField(grid, n_t), dt, maxit, "diffusion of n")
    c_d = _diffuse_conservative(ScalarField(grid, c_t), dt, maxit, "diffusion of c")
    m_d = _diffuse_conservative(ScalarField(grid, m_t), dt, maxit, "diffusion of m")

    # dissipation accumulators: post-diffusion sample, weight dt
    acc_grad_m = state.acc_grad_m + dt * scalar_grad_norm_sq(m_d)
    acc_grad_c = state.acc_grad_c + dt * scalar_grad_norm_sq(c_d)
    acc_grad_u = state.acc_grad_u + dt * fres.grad_sq

    # (iv) reactions: shared fertilization mass R, then chemical relaxation
    nv, mv = n_d.values, m_d.values
    R = dt * nv * mv / (1.0 + dt * np.maximum(nv, mv))
    n_new = np.maximum(nv - R, 0.0)
    m_new = np.maximum(mv - R, 0.0)
    c_new = (c_d.values + dt * m_new) / (1.0 + dt)
    acc_nm = state.acc_nm + integrate(ScalarField(grid, R))

    out = SimState(
        t=state.t + dt, step_index=state.step_index + 1,
        n=ScalarField(grid, n_new), c=ScalarField(grid, c_new),
        m=ScalarField(grid, m_new), u=u_new, P=fres.pressure,
        acc_nm=acc_nm, acc_grad_m=acc_grad_m, acc_grad_c=acc_grad_c,
        acc_grad_u=acc_grad_u,
        sup_m_linf=max(state.sup_m_linf, float(m_new.max(initial=0.0))),
        mass_n0=state.mass_n0, mass_m0=state.mass_m0,
        c0_linf=state.c0_linf, c0_mass=state.c0_mass,
        half_m0_sq=state.half_m0_sq,
        worst_energy_rel=(fres.energy_residual
                          if math.isnan(state.worst_energy_rel)
                          else max(state.worst_energy_rel, fres.energy_residual)),
        last_div_l2=fres.div_l2, last_dt=dt,
    )

    # per-step identity asserts: these are theorems of the scheme, so any
    # violation is a bug, not an accuracy limitation
    mass_n_new = integrate(out.n)
    mass_m_new = integrate(out.m)
    mass_c_new = integrate(out.c)
    mass_scale = state.mass_n0 + state.mass_m0 + 1e-300
    _require(
        abs((mass_n_new - mass_m_new) - (state.mass_n0 - state.mass_m0))
        <= _IDENTITY_SLACK * mass_scale,
        f"mass-difference identity broken at t = {out.t:.6g}: "
        f"{mass_n_new - mass_m_new:.17g} vs {state.mass_n0 - state.mass_m0:.17g}",
    )
    _require(
        mass_m_new <= mass_m_old * (1.0 + _IDENTITY_SLACK) + 1e-300,
        f"egg mass increased at t = {out.t:.6g}: {mass_m_new:.17g} > {mass_m_old:.17g}",
    )
    if mass_c_old >= mass_m_old * (1.0 - _IDENTITY_SLACK):
        _require(
            mass_c_new <= mass_c_old * (1.0 + _IDENTITY_SLACK) + 1e-300,
            f"chemical mass increased at t = {out.t:.6g} despite "
            f"int c >= int m: {mass_c_new:.17g} > {mass_c_old:.17g}",
        )
    linf_m_new = float(out.m.values.max(initial=0.0))
    _require(
        linf_m_new <= linf_m_old * (1.0 + _IDENTITY_SLACK) + 1e-300,
        f"|m|_inf increased at t = {out.t:.6g}: {linf_m_new:.17g} > {linf_m_old:.17g}",
    )
    linf_c_new = float(out.c.values.max(initial=0.0))
    c_bound = max(linf_c_old, linf_m_new)
    _require(
        linf_c_new <= c_bound * (1.0 + _IDENTITY_SLACK) + 1e-300,
        f"|c|_inf exceeded max(|c|_old, |m|_new) at t = {out.t:.6g}: "
        f"{linf_c_new:.17g} > {c_bound:.17g}",
    )
    _require(
        acc_grad_m <= state.half_m0_sq * (1.0 + 1e-6) + 1e-300,
        f"cumulative egg-gradient dissipation exceeded its cap at t = {out.t:.6g}: "
        f"{acc_grad_m:.17g} > {state.half_m0_sq:.17g}",
    )
    return out


def run(cfg: SimConfig, sink: Callable[[SimState], None] | None = None) -> SimState:
    """Integrate to t_end (or convergence), emitting state snapshots at cadence.

    ``sink`` receives a deep copy of the state at t = 0, at every multiple of
    ``record_dt``, and at the final time; on failure the last reached state
    is emitted before the error propagates, so partial output survives.
    Record times are snapped to exact multiples, which keeps the step-size
    sequence — and therefore the whole trajectory — deterministic for a
    given config.
    """
    state = initial_state(cfg)
    if sink is not None:
        sink(state.copy())
    return resume(state, cfg, sink)


def resume(state: SimState, cfg: SimConfig,
           sink: Callable[[SimState], None] | None = None) -> SimState:
    """Continue a run from an existing state (e.g. a loaded snapshot).

    The state's own time is NOT re-emitted; records resume at the next
    multiple of record_dt, so a split run's concatenated record stream is
    identical to the unbroken run's.
    """

    def emit(s: SimState) -> None:
        if sink is not None:
            sink(s.copy())

    if cfg.t_end <= 0.0:
        return state

    k = 0
    try:
        while state.t < cfg.t_end:
            k += 1
            next_record = min(k * cfg.record_dt, cfg.t_end)
            if next_record <= state.t:
                continue
            while state.t < next_record - 1e-12 * max(next_record, 1.0):
                dt_policy = cfg.dt if cfg.dt is not None else stable_dt(state, cfg)
                dt_step = min(dt_policy, next_record - state.t)
                if not dt_step > 1e-13 * max(next_record, 1.0):
                    raise RuntimeError(
                        f"time step collapsed to {dt_step:.3e} at t = {state.t:.6g}"
                    )
                state = step(state, cfg, dt_step)
            state.t = next_record
            emit(state)
            state.worst_energy_rel = math.nan
            if cfg.tol_conv is not None and convergence_metric(state) < cfg.tol_conv:
                break
    except Exception:
        try:
            emit(state)
        except Exception:
            pass
        raise
    return state
