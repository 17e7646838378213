"""INI-style run configuration: parsing, validation, canonical emission.

The file format is flat sections with scalar keys:

    [grid]        nx ny nz lx ly lz
    [model]       alpha chi0 s0_kind s0_slope theta eps ic_n ic_c ic_m
    [fluid]       kappa yosida_eps phi_gx phi_gy phi_gz solver_tol
                  solver_maxit ic_u
    [time]        dt max_dt cfl_sigma t_end tol_conv
    [diagnostics] record_dt p advection

Initial conditions use a tiny grammar:

    scalars:  constant:V | cosine:BASE:AMP:KX:KY[:KZ] | random:FLOOR:AMP:SEED
    velocity: zero | vortex:AMP | random:AMP:SEED

``random`` scalar fields are a seeded low-order cosine series riding on a
floor, so they are smooth, strictly positive, and reproducible.  The single
[model] eps drives all three regularizations (boundary collar, density
cutoff, velocity smoothing); [fluid] yosida_eps may override the last one.

parse_config(text) -> RunSettings is a pure function of the text; RunSettings
round-trips through emit_config exactly (the manifest relies on this).
"""

from __future__ import annotations

import configparser
import io
import warnings
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from .fields import Grid
from .fluid import FluidParams
from .operators import StencilConfig
from .sensitivity import SensitivityParams
from .stepping import SimConfig

__all__ = [
    "RunSettings",
    "parse_config",
    "emit_config",
    "scalar_ic_from_spec",
    "velocity_ic_from_spec",
]

_NONE = "none"

# every recognized key, per section, with its default (None = required or
# derived; see _resolve)
_SCHEMA = {
    "grid": {"nx": "16", "ny": "16", "nz": "1",
             "lx": "1.0", "ly": "1.0", "lz": "1.0"},
    "model": {"alpha": None, "chi0": "1.0", "s0_kind": "constant",
              "s0_slope": "0.0", "theta": "0.0", "eps": "0.0",
              "ic_n": "constant:2", "ic_c": "constant:0", "ic_m": "constant:1"},
    "fluid": {"kappa": "1.0", "yosida_eps": _NONE, "phi_gx": "0.0",
              "phi_gy": "0.0", "phi_gz": "0.0", "solver_tol": "1e-10",
              "solver_maxit": "20000", "ic_u": "zero"},
    "time": {"dt": _NONE, "max_dt": "0.05", "cfl_sigma": "0.4",
             "t_end": "1.0", "tol_conv": _NONE},
    "diagnostics": {"record_dt": "0.1", "p": _NONE, "advection": "upwind"},
}


@dataclass(frozen=True)
class RunSettings:
    """Fully resolved run parameters (pure data; builds SimConfig on demand)."""

    nx: int
    ny: int
    nz: int
    lx: float
    ly: float
    lz: float
    alpha: float
    chi0: float
    s0_kind: str
    s0_slope: float
    theta: float
    eps: float
    ic_n: str
    ic_c: str
    ic_m: str
    kappa: float
    yosida_eps: float
    phi_gx: float
    phi_gy: float
    phi_gz: float
    solver_tol: float
    solver_maxit: int
    ic_u: str
    dt: float | None
    max_dt: float
    cfl_sigma: float
    t_end: float
    tol_conv: float | None
    record_dt: float
    p: float
    advection: str

    def grid(self) -> Grid:
        return Grid((self.nx, self.ny, self.nz), (self.lx, self.ly, self.lz))

    def sim_config(self) -> SimConfig:
        return SimConfig(
            grid=self.grid(),
            initial_n=scalar_ic_from_spec(self.ic_n),
            initial_c=scalar_ic_from_spec(self.ic_c),
            initial_m=scalar_ic_from_spec(self.ic_m),
            initial_u=velocity_ic_from_spec(self.ic_u),
            sens=SensitivityParams(alpha=self.alpha, chi0=self.chi0,
                                   s0_kind=self.s0_kind, s0_slope=self.s0_slope,
                                   theta=self.theta, eps=self.eps),
            fluid=FluidParams(kappa=self.kappa, yosida_eps=self.yosida_eps,
                              phi_grad=(self.phi_gx, self.phi_gy, self.phi_gz),
                              solver_tol=self.solver_tol,
                              solver_maxit=self.solver_maxit),
            stencil=StencilConfig(advection=self.advection),
            dt=self.dt, max_dt=self.max_dt, cfl_sigma=self.cfl_sigma,
            t_end=self.t_end, record_dt=self.record_dt, tol_conv=self.tol_conv,
        )


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


def _float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a number") from None


def scalar_ic_from_spec(spec: str):
    """Initial-condition callable for a scalar field from its grammar string."""
    parts = spec.split(":")
    kind = parts[0]
    if kind == "constant" and len(parts) == 2:
        v = float(parts[1])

        def fn(x, y, z):
            return v + 0.0 * x + 0.0 * y + 0.0 * z
        return fn
    if kind == "cosine" and len(parts) in (5, 6):
        base, amp, kx, ky = (float(s) for s in parts[1:5])
        kz = float(parts[5]) if len(parts) == 6 else 0.0

        def fn(x, y, z):
            return base + amp * (np.cos(kx * np.pi * x)
                                 * np.cos(ky * np.pi * y)
                                 * np.cos(kz * np.pi * z))
        return fn
    if kind == "random" and len(parts) == 4:
        floor, amp = float(parts[1]), float(parts[2])
        seed = int(parts[3])
        rng = np.random.default_rng(seed)
        kmax = 2
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
                        out = out + (coeffs[j, k] * np.cos(j * np.pi * x)
                                     * np.cos(k * np.pi * y))
            return out
        return fn
    raise ConfigError(
        f"bad scalar initial condition {spec!r}; expected constant:V, "
        f"cosine:BASE:AMP:KX:KY[:KZ], or random:FLOOR:AMP:SEED"
    )


def velocity_ic_from_spec(spec: str):
    """Initial-velocity callable (or None for rest) from its grammar string."""
    parts = spec.split(":")
    kind = parts[0]
    if kind == "zero" and len(parts) == 1:
        return None
    if kind == "vortex" and len(parts) == 2:
        amp = float(parts[1])

        def fn(axis, x, y, z):
            if axis == 0:
                return amp * np.sin(np.pi * x) * np.cos(np.pi * y) + 0.0 * z
            if axis == 1:
                return -amp * np.cos(np.pi * x) * np.sin(np.pi * y) + 0.0 * z
            return 0.0 * x + 0.0 * y + 0.0 * z
        return fn
    if kind == "random" and len(parts) == 3:
        amp, seed = float(parts[1]), int(parts[2])
        rng = np.random.default_rng(seed)
        modes = [(j, k, rng.normal()) for j in (1, 2) for k in (1, 2)]
        norm = sum(abs(c) for _, _, c in modes) or 1.0
        modes = [(j, k, amp * c / norm) for j, k, c in modes]

        # u = (d psi/dy, -d psi/dx) from psi = sum c sin(j pi x) sin(k pi y)
        def fn(axis, x, y, z):
            out = 0.0 * x + 0.0 * y + 0.0 * z
            for j, k, c in modes:
                if axis == 0:
                    out = out + c * k * np.pi * np.sin(j * np.pi * x) \
                        * np.cos(k * np.pi * y)
                elif axis == 1:
                    out = out - c * j * np.pi * np.cos(j * np.pi * x) \
                        * np.sin(k * np.pi * y)
            return out
        return fn
    raise ConfigError(
        f"bad velocity initial condition {spec!r}; expected zero, "
        f"vortex:AMP, or random:AMP:SEED"
    )


def parse_config(text: str) -> RunSettings:
    """Parse and fully resolve a run configuration.

    Unknown sections or keys are errors that list the valid ones; constraint
    violations name the constraint.  alpha is the only required key.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None

    raw: dict[str, dict[str, str]] = {s: dict(d) for s, d in _SCHEMA.items()}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"unknown section [{section}]; valid sections: "
                + ", ".join(sorted(_SCHEMA)))
        for key, value in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]; valid keys: "
                    + ", ".join(sorted(_SCHEMA[section])))
            raw[section][key] = value.strip()
    return _resolve(raw)


def _resolve(raw: dict[str, dict[str, str]]) -> RunSettings:
    g, mo, fl, ti, di = (raw[s] for s in ("grid", "model", "fluid", "time",
                                          "diagnostics"))
    if mo["alpha"] is None:
        raise ConfigError("[model] alpha is required")
    alpha = _float("model", "alpha", mo["alpha"])
    if alpha < 0.0:
        raise ConfigError(
            f"[model] alpha = {alpha} violates the constraint alpha >= 0")
    if alpha == 0.0:
        warnings.warn(
            "alpha = 0 disables the density desensitization; the proved "
            "L^p boundedness needs alpha > 0", stacklevel=3)

    eps = _float("model", "eps", mo["eps"])
    yos = fl["yosida_eps"]
    yosida_eps = eps if yos == _NONE else _float("fluid", "yosida_eps", yos)

    p_raw = di["p"]
    p = max(2.0, 2.0 * alpha + 1.0) if p_raw == _NONE \
        else _float("diagnostics", "p", p_raw)
    if not p > max(1.0, 2.0 * alpha):
        raise ConfigError(
            f"[diagnostics] p = {p} violates the constraint "
            f"p > max(1, 2*alpha) = {max(1.0, 2.0 * alpha)}")

    def _int(section, key, raw_val):
        try:
            return int(raw_val)
        except ValueError:
            raise ConfigError(
                f"[{section}] {key} = {raw_val!r} is not an integer") from None

    def _opt(section, key, raw_val):
        return None if raw_val == _NONE else _float(section, key, raw_val)

    settings = RunSettings(
        nx=_int("grid", "nx", g["nx"]), ny=_int("grid", "ny", g["ny"]),
        nz=_int("grid", "nz", g["nz"]),
        lx=_float("grid", "lx", g["lx"]), ly=_float("grid", "ly", g["ly"]),
        lz=_float("grid", "lz", g["lz"]),
        alpha=alpha, chi0=_float("model", "chi0", mo["chi0"]),
        s0_kind=mo["s0_kind"], s0_slope=_float("model", "s0_slope", mo["s0_slope"]),
        theta=_float("model", "theta", mo["theta"]), eps=eps,
        ic_n=mo["ic_n"], ic_c=mo["ic_c"], ic_m=mo["ic_m"],
        kappa=_float("fluid", "kappa", fl["kappa"]), yosida_eps=yosida_eps,
        phi_gx=_float("fluid", "phi_gx", fl["phi_gx"]),
        phi_gy=_float("fluid", "phi_gy", fl["phi_gy"]),
        phi_gz=_float("fluid", "phi_gz", fl["phi_gz"]),
        solver_tol=_float("fluid", "solver_tol", fl["solver_tol"]),
        solver_maxit=_int("fluid", "solver_maxit", fl["solver_maxit"]),
        ic_u=fl["ic_u"],
        dt=_opt("time", "dt", ti["dt"]),
        max_dt=_float("time", "max_dt", ti["max_dt"]),
        cfl_sigma=_float("time", "cfl_sigma", ti["cfl_sigma"]),
        t_end=_float("time", "t_end", ti["t_end"]),
        tol_conv=_opt("time", "tol_conv", ti["tol_conv"]),
        record_dt=_float("diagnostics", "record_dt", di["record_dt"]),
        p=p, advection=di["advection"],
    )
    # materialize once so constraint violations surface at parse time with
    # the constructor's message (grid shape, theta range, scheme name, ...)
    try:
        settings.sim_config()
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(str(exc)) from None
    return settings


_SECTION_FIELDS = {
    "grid": ("nx", "ny", "nz", "lx", "ly", "lz"),
    "model": ("alpha", "chi0", "s0_kind", "s0_slope", "theta", "eps",
              "ic_n", "ic_c", "ic_m"),
    "fluid": ("kappa", "yosida_eps", "phi_gx", "phi_gy", "phi_gz",
              "solver_tol", "solver_maxit", "ic_u"),
    "time": ("dt", "max_dt", "cfl_sigma", "t_end", "tol_conv"),
    "diagnostics": ("record_dt", "p", "advection"),
}


def _format_value(v) -> str:
    if v is None:
        return _NONE
    if isinstance(v, float):
        return repr(v)  # shortest string that round-trips the double
    return str(v)


def emit_config(settings: RunSettings) -> str:
    """Canonical INI text with every resolved value; parse(emit(s)) == s."""
    out = io.StringIO()
    for section, names in _SECTION_FIELDS.items():
        out.write(f"[{section}]\n")
        for name in names:
            out.write(f"{name} = {_format_value(getattr(settings, name))}\n")
        out.write("\n")
    return out.getvalue()


def _check_roundtrip_fields():
    declared = {f.name for f in dataclass_fields(RunSettings)}
    emitted = {n for names in _SECTION_FIELDS.values() for n in names}
    assert declared == emitted, declared ^ emitted


_check_roundtrip_fields()
