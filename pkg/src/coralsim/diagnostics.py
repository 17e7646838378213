"""Runtime verification: every tracked functional, bound, and verdict.

The measured quantities fall into three classes:

* identities the scheme satisfies to rounding (mass-difference conservation,
  monotone masses, max principles, nonnegativity) — the verdict asserts these
  at tight tolerances;
* dissipation caps with a proved budget (cumulative |grad m|^2 against half
  the initial egg enstrophy) — asserted with a small relative slack;
* the weighted L^p machinery — the functional L(n, c) = (1/p) int n^p g(c)
  with the Gaussian-in-c weight g(s) = exp(beta s^2) is *measured*, its
  boundedness and tail behavior are asserted, but the full differential
  inequality it satisfies in the continuum,

      d/dt L + (p-1)/2 int n^{p-2} g |grad n|^2
             + (beta/2p) int n^p g |grad c|^2
        <= gamma0 int |grad c|^2 + (mu1 lambda / p) int n^p,

  is only *reported* as its two sides (``lp_dissipation``, ``lp_budget``):
  splitting and spatial discretization perturb it at O(dt + h^2), so a signed
  assert would be dishonest.  The budget constant gamma0 comes from the
  density threshold eta0 above which the chemotactic terms are absorbed into
  the weight's convexity; both are exposed for tests.

Degenerate regimes: with ||c_0||_inf = 0 the weight's curvature parameter is
undefined and g == 1 is used (the functional degrades to (1/p)||n||_p^p);
with alpha = 0 no absorption threshold exists.  In either case the budget
side is reported as 0.0 and carries no meaning.
"""

from __future__ import annotations

import math
import types
import warnings
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .fields import Grid, ScalarField, integrate, velocity_l2
from .fluid import velocity_grad_norm_sq
from .operators import scalar_grad_norm_sq
from .sensitivity import SensitivityParams
from .stepping import SimConfig, SimState
from .stepping import equilibrium_values as _equilibrium_from_masses

__all__ = [
    "equilibrium_values",
    "WeightParams",
    "weight_g",
    "weight_g_prime",
    "weighted_functional",
    "response_sup",
    "absorption_threshold",
    "budget_gamma0",
    "DiagnosticsRecord",
    "record",
    "CheckResult",
    "Verdict",
    "verdict",
    "offline_verdict",
]

MASS_TOL = 1.0e-12          # relative, for conservation/monotonicity checks
DISSIPATION_SLACK = 1.0e-6  # relative, for the cumulative gradient cap
ENERGY_TOL = 1.0e-8         # relative, for the kappa = 0 energy inequality
TAIL_FRACTION = 0.2         # final fraction of records for no-growth checks
TAIL_TOL = 1.0e-6           # allowed relative net growth across the tail


def equilibrium_values(n0: ScalarField, m0: ScalarField) -> tuple[float, float]:
    """Long-time homogeneous targets from the initial fields.

    n_hat = {int n0 - int m0}_+ / |O| and symmetrically for m_hat; the
    surplus species survives uniformly, the other dies out, so at most one
    of the two is nonzero.
    """
    if n0.values.min() < 0.0 or m0.values.min() < 0.0:
        raise ValueError("equilibrium_values requires nonnegative fields")
    return _equilibrium_from_masses(integrate(n0), integrate(m0), n0.grid.volume)


@dataclass(frozen=True)
class WeightParams:
    """Parameters of the weight g(s) = exp(beta s^2) and the L^p functional.

    ``beta == 0`` encodes the degenerate ||c_0||_inf = 0 case where the
    weight is identically one.
    """

    beta: float
    p: float

    def __post_init__(self):
        if not self.beta >= 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.p > 1.0:
            raise ValueError(f"p must exceed 1, got {self.p}")

    @classmethod
    def from_initial_chemical(cls, c0_linf: float, p: float,
                              alpha: float | None = None) -> "WeightParams":
        """beta = 1/(8 ||c_0||_inf^2), or 0 for the degenerate zero chemical.

        Pass ``alpha`` to enforce the standing assumption p > max(1, 2 alpha)
        of the boundedness argument; the fixed measurement probes (p = 2, 4)
        omit it, as the functional itself is defined for any p > 1.
        """
        if not c0_linf >= 0.0:
            raise ValueError(f"c0_linf must be >= 0, got {c0_linf}")
        if alpha is not None and not p > max(1.0, 2.0 * alpha):
            raise ValueError(
                f"functional exponent p = {p} must exceed max(1, 2*alpha) "
                f"= {max(1.0, 2.0 * alpha)}"
            )
        beta = 0.0 if c0_linf == 0.0 else 1.0 / (8.0 * c0_linf ** 2)
        return cls(beta=beta, p=p)

    @property
    def c0_linf(self) -> float:
        """The ||c_0||_inf the weight was built for (0 in the degenerate case)."""
        return 0.0 if self.beta == 0.0 else 1.0 / math.sqrt(8.0 * self.beta)

    @property
    def mu0(self) -> float:
        """Upper weight bound: 1 <= g <= mu0 on [0, ||c_0||_inf]."""
        return 1.0 if self.beta == 0.0 else math.exp(0.125)

    @property
    def mu1(self) -> float:
        """Upper bound of g' on the same interval."""
        return 0.0 if self.beta == 0.0 else math.exp(0.125) / (4.0 * self.c0_linf)


def weight_g(s: float, wp: WeightParams) -> float:
    """g(s) = exp(beta s^2); warns when evaluated outside [0, ||c_0||_inf]."""
    if wp.beta > 0.0 and not 0.0 <= s <= wp.c0_linf * (1.0 + 1e-12):
        warnings.warn(
            f"weight evaluated at s = {s} outside its domain "
            f"[0, {wp.c0_linf}]; bounds 1 <= g <= mu0 no longer apply",
            stacklevel=2,
        )
    return math.exp(wp.beta * s * s)


def weight_g_prime(s: float, wp: WeightParams) -> float:
    """g'(s) = 2 beta s exp(beta s^2), bounded by mu1 on the weight's domain."""
    if wp.beta > 0.0 and not 0.0 <= s <= wp.c0_linf * (1.0 + 1e-12):
        warnings.warn(
            f"weight derivative evaluated at s = {s} outside its domain "
            f"[0, {wp.c0_linf}]",
            stacklevel=2,
        )
    return 2.0 * wp.beta * s * math.exp(wp.beta * s * s)


def _g_array(c: np.ndarray, wp: WeightParams) -> np.ndarray:
    return np.exp(wp.beta * c * c)


def weighted_functional(n: ScalarField, c: ScalarField, wp: WeightParams) -> float:
    """L(n, c) = (1/p) int n^p g(c); sandwiched between (1/p)||n||_p^p and
    (mu0/p)||n||_p^p whenever c stays in the weight's domain."""
    if n.values.min() < 0.0:
        raise ValueError("weighted functional requires n >= 0")
    integrand = n.values ** wp.p * _g_array(c.values, wp)
    return integrate(ScalarField(n.grid, integrand)) / wp.p


def response_sup(sens: SensitivityParams, c0_linf: float) -> float:
    """C_S = sup of the signal response over the chemical's invariant range.

    The response is nondecreasing, so the sup sits at c = ||c_0||_inf.
    """
    if sens.s0_kind == "constant":
        return sens.chi0
    return sens.chi0 + sens.s0_slope * c0_linf


def absorption_threshold(wp: WeightParams, alpha: float, c_s: float) -> float:
    """Density level eta0 above which the chemotactic cross terms are
    dominated by half the weight's convexity term.

    Solves C_S^2 p y^2 + 2 C_S beta cbar y = beta/(2p) for y = s^(-alpha);
    for any density above eta0 = y^(-1/alpha) the bracketed coefficient in
    the functional inequality is below beta/(2p).  Requires alpha > 0 and a
    nondegenerate weight; returns inf otherwise (no threshold exists).
    """
    if alpha <= 0.0 or wp.beta == 0.0 or c_s <= 0.0:
        return math.inf
    beta, p, cbar = wp.beta, wp.p, wp.c0_linf
    y = (-beta * cbar + math.sqrt(beta ** 2 * cbar ** 2 + beta / 2.0)) / (c_s * p)
    return y ** (-1.0 / alpha)


def budget_gamma0(wp: WeightParams, alpha: float, c_s: float) -> float:
    """Coefficient of int |grad c|^2 on the budget side of the inequality:
    gamma0 = e^{beta cbar^2} [C_S^2 p eta0^{p-2a} + 2 C_S beta cbar eta0^{p-a}].

    Returns 0.0 when no absorption threshold exists (alpha = 0 or degenerate
    weight) — the budget side is then reported as meaningless zero.
    """
    eta0 = absorption_threshold(wp, alpha, c_s)
    if not math.isfinite(eta0):
        return 0.0
    beta, p, cbar = wp.beta, wp.p, wp.c0_linf
    return math.exp(beta * cbar ** 2) * (
        c_s ** 2 * p * eta0 ** (p - 2.0 * alpha)
        + 2.0 * c_s * beta * cbar * eta0 ** (p - alpha)
    )


def _face_mean(v: np.ndarray, axis: int) -> np.ndarray:
    lo = tuple(slice(0, -1) if a == axis else slice(None) for a in range(3))
    hi = tuple(slice(1, None) if a == axis else slice(None) for a in range(3))
    return 0.5 * (v[lo] + v[hi])


def _functional_dissipation(n: ScalarField, c: ScalarField, wp: WeightParams) -> float:
    """(p-1)/2 int n^{p-2} g |grad n|^2 + (beta/2p) int n^p g |grad c|^2.

    The first term is evaluated as 2(p-1)/p^2 int g |grad(n^{p/2})|^2, which
    is identical in the continuum and needs no n > 0 guard for p < 2.
    """
    g = n.grid
    p = wp.p
    n_half = n.values ** (0.5 * p)
    total = 0.0
    for a in g.active_axes:
        h = g.spacing[a]
        gc = _g_array(_face_mean(c.values, a), wp)
        dn = np.diff(n_half, axis=a) / h
        total += 2.0 * (p - 1.0) / p ** 2 * float(np.vdot(gc * dn, dn))
        if wp.beta > 0.0:
            dc = np.diff(c.values, axis=a) / h
            nf = _face_mean(n.values, a)
            total += wp.beta / (2.0 * p) * float(np.vdot(gc * nf ** p * dc, dc))
    return total * g.cell_volume


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One CSV row: every tracked functional at a single time.

    Field order is the column order.  ``energy_residual`` is the worst signed
    per-step kinetic-energy-inequality residual since the previous record
    (0.0 on rows emitted before any step).  ``lp_functional`` uses the
    configured exponent; the p = 2 and p = 4 probes are always measured.
    """

    t: float
    dt: float
    mass_n: float
    mass_c: float
    mass_m: float
    mass_gap: float
    linf_n: float
    linf_c: float
    linf_m: float
    min_n: float
    min_c: float
    min_m: float
    l2_n: float
    l2_c: float
    l2_m: float
    l2_u: float
    grad_n_l2: float
    grad_c_l2: float
    grad_m_l2: float
    grad_u_l2: float
    lp_functional: float
    lp_probe_p2: float
    lp_probe_p4: float
    lp_dissipation: float
    lp_budget: float
    acc_nm: float
    acc_grad_m: float
    acc_grad_c: float
    acc_grad_u: float
    div_residual: float
    energy_residual: float
    sup_m_linf: float
    dist_n_inf: float
    dist_m_inf: float
    dist_c_inf: float

    def __post_init__(self):
        for f in dataclass_fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"diagnostics record field {f.name} is not finite")

    @classmethod
    def column_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclass_fields(cls))

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in dataclass_fields(self))


def _l2(f: ScalarField) -> float:
    return math.sqrt(integrate(ScalarField(f.grid, f.values ** 2)))


def record(state: SimState, cfg: SimConfig, p: float = 2.0) -> DiagnosticsRecord:
    """Measure every tracked quantity on one state snapshot."""
    n, c, m = state.n, state.c, state.m
    grid = state.grid
    wp = WeightParams.from_initial_chemical(state.c0_linf, p)
    wp2 = WeightParams.from_initial_chemical(state.c0_linf, 2.0)
    wp4 = WeightParams.from_initial_chemical(state.c0_linf, 4.0)
    n_hat, m_hat = _equilibrium_from_masses(state.mass_n0, state.mass_m0, grid.volume)
    c_s = response_sup(cfg.sens, state.c0_linf)
    lam = float(c.values.max(initial=0.0)) + float(m.values.max(initial=0.0))
    budget = (budget_gamma0(wp, cfg.sens.alpha, c_s) * scalar_grad_norm_sq(c)
              + wp.mu1 * lam / wp.p
              * integrate(ScalarField(grid, n.values ** wp.p)))
    return DiagnosticsRecord(
        t=state.t,
        dt=0.0 if math.isnan(state.last_dt) else state.last_dt,
        mass_n=integrate(n), mass_c=integrate(c), mass_m=integrate(m),
        mass_gap=integrate(n) - integrate(m),
        linf_n=float(np.abs(n.values).max()),
        linf_c=float(np.abs(c.values).max()),
        linf_m=float(np.abs(m.values).max()),
        min_n=float(n.values.min()),
        min_c=float(c.values.min()),
        min_m=float(m.values.min()),
        l2_n=_l2(n), l2_c=_l2(c), l2_m=_l2(m),
        l2_u=velocity_l2(state.u),
        grad_n_l2=math.sqrt(scalar_grad_norm_sq(n)),
        grad_c_l2=math.sqrt(scalar_grad_norm_sq(c)),
        grad_m_l2=math.sqrt(scalar_grad_norm_sq(m)),
        grad_u_l2=math.sqrt(max(velocity_grad_norm_sq(state.u), 0.0)),
        lp_functional=weighted_functional(n, c, wp),
        lp_probe_p2=weighted_functional(n, c, wp2),
        lp_probe_p4=weighted_functional(n, c, wp4),
        lp_dissipation=_functional_dissipation(n, c, wp),
        lp_budget=budget,
        acc_nm=state.acc_nm,
        acc_grad_m=state.acc_grad_m,
        acc_grad_c=state.acc_grad_c,
        acc_grad_u=state.acc_grad_u,
        div_residual=state.last_div_l2,
        energy_residual=(0.0 if math.isnan(state.worst_energy_rel)
                         else state.worst_energy_rel),
        sup_m_linf=state.sup_m_linf,
        dist_n_inf=float(np.abs(n.values - n_hat).max()),
        dist_m_inf=float(np.abs(m.values - m_hat).max()),
        dist_c_inf=float(np.abs(c.values - m_hat).max()),
    )


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str                      # "pass" | "fail" | "skipped"
    worst_residual: float = 0.0
    first_failure_t: float | None = None
    note: str = ""

    def line(self) -> str:
        extra = f" (first failure at t = {self.first_failure_t:g})" \
            if self.first_failure_t is not None else ""
        note = f" — {self.note}" if self.note else ""
        return (f"[{self.status.upper():7s}] {self.name}: "
                f"worst residual {self.worst_residual:.3e}{extra}{note}")


@dataclass(frozen=True)
class Verdict:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(ch.status != "fail" for ch in self.checks)

    def lines(self) -> list[str]:
        return [ch.line() for ch in self.checks]


def _series_check(name, series, violation, note=""):
    """Scan a record series with a per-record violation functional.

    ``violation`` maps a record to a signed residual; positive means the
    invariant failed there.  Worst residual and first failure time are kept.
    """
    worst = -math.inf
    first_t = None
    for r in series:
        v = violation(r)
        worst = max(worst, v)
        if v > 0.0 and first_t is None:
            first_t = r.t
    status = "fail" if first_t is not None else "pass"
    return CheckResult(name, status, worst, first_t, note)


def _pairwise_check(name, series, violation, note=""):
    worst = -math.inf
    first_t = None
    for prev, cur in zip(series, series[1:]):
        v = violation(prev, cur)
        worst = max(worst, v)
        if v > 0.0 and first_t is None:
            first_t = cur.t
    status = "fail" if first_t is not None else "pass"
    return CheckResult(name, status, worst, first_t, note)


def verdict(series: list[DiagnosticsRecord], cfg: SimConfig) -> Verdict:
    """Offline pass/fail evaluation of a diagnostics series.

    The first record is the baseline: its masses, norms, and the derived
    equilibria anchor every conservation and decay statement.  Residuals are
    signed (negative = margin, positive = violation).
    """
    if len(series) < 2:
        raise ValueError(f"verdict needs at least 2 records, got {len(series)}")
    base = series[0]
    mass_scale = base.mass_n + base.mass_m + 1e-300
    half_m0_sq = 0.5 * base.l2_m ** 2

    checks = [
        _series_check(
            "mass-difference conservation", series,
            lambda r: abs(r.mass_gap - base.mass_gap) / mass_scale - MASS_TOL),
        _pairwise_check(
            "egg mass nonincreasing", series,
            lambda a, b: (b.mass_m - a.mass_m) - MASS_TOL * (a.mass_m + 1e-300)),
    ]
    if base.mass_c >= base.mass_m * (1.0 - MASS_TOL):
        checks.append(_pairwise_check(
            "chemical mass nonincreasing", series,
            lambda a, b: (b.mass_c - a.mass_c) - MASS_TOL * (a.mass_c + 1e-300)))
    else:
        checks.append(CheckResult(
            "chemical mass nonincreasing", "skipped",
            note="int c0 < int m0: monotonicity is not implied"))
    checks.extend([
        _series_check(
            "egg max principle", series,
            lambda r: r.linf_m - base.linf_m * (1.0 + MASS_TOL)),
        _series_check(
            "chemical sup bound", series,
            lambda r: r.linf_c - max(base.linf_c, r.sup_m_linf) * (1.0 + MASS_TOL)),
        _series_check(
            "nonnegativity", series,
            lambda r: -min(r.min_n, r.min_c, r.min_m)),
        _series_check(
            "egg-gradient dissipation cap", series,
            lambda r: r.acc_grad_m - half_m0_sq * (1.0 + DISSIPATION_SLACK) - 1e-300,
            note=f"cap (1/2) int m0^2 = {half_m0_sq:.6g}"),
        _pairwise_check(
            "accumulators nondecreasing", series,
            lambda a, b: max(a.acc_nm - b.acc_nm, a.acc_grad_m - b.acc_grad_m,
                             a.acc_grad_c - b.acc_grad_c,
                             a.acc_grad_u - b.acc_grad_u)),
    ])
    if cfg.fluid.kappa == 0.0:
        checks.append(_series_check(
            "kinetic energy inequality", series,
            lambda r: r.energy_residual - ENERGY_TOL,
            note="kappa = 0: per-step residual must be <= tolerance"))
    else:
        checks.append(CheckResult(
            "kinetic energy inequality", "skipped",
            note="kappa != 0: inequality carries an unsigned inertial term"))

    # weighted-functional boundedness and tail stagnation (both probes and
    # the configured exponent)
    for col in ("lp_functional", "lp_probe_p2", "lp_probe_p4"):
        sup = max(getattr(r, col) for r in series)
        tail_start = min(int(math.floor(len(series) * (1.0 - TAIL_FRACTION))),
                         len(series) - 2)
        first = getattr(series[tail_start], col)
        last = getattr(series[-1], col)
        growth = (last - first) / max(abs(first), 1e-300)
        status = "pass" if math.isfinite(sup) and growth <= TAIL_TOL else "fail"
        checks.append(CheckResult(
            f"{col} bounded with stagnant tail", status,
            worst_residual=growth - TAIL_TOL,
            first_failure_t=None if status == "pass" else series[-1].t,
            note=f"sup = {sup:.6g}, tail net growth = {growth:.3e}"))

    if cfg.tol_conv is not None:
        final = series[-1]
        metric = final.dist_n_inf + final.dist_m_inf + final.l2_u
        status = "pass" if metric < cfg.tol_conv else "fail"
        checks.append(CheckResult(
            "equilibrium convergence", status,
            worst_residual=metric - cfg.tol_conv,
            first_failure_t=None if status == "pass" else final.t,
            note=f"final distance metric {metric:.6g} vs tol {cfg.tol_conv:g}"))
    else:
        checks.append(CheckResult(
            "equilibrium convergence", "skipped",
            note="no convergence tolerance configured"))
    return Verdict(tuple(checks))


def offline_verdict(series: list[DiagnosticsRecord], *, kappa: float,
                    tol_conv: float | None) -> Verdict:
    """Run the full verdict from a record series alone.

    ``verdict`` only consults the convection strength (to decide whether the
    kinetic-energy inequality applies) and the convergence tolerance, so a
    CSV plus those two scalars — carried in the CSV meta line — reproduces
    the in-process audit exactly.
    """
    fluid = types.SimpleNamespace(kappa=kappa)
    ctx = types.SimpleNamespace(fluid=fluid, tol_conv=tol_conv)
    return verdict(series, ctx)
