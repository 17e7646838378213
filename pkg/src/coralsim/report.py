"""Figure rendering for diagnostics series.

Turns a recorded CSV into a small set of PNG time-series plots: masses and
the conserved gap, norms and distances to equilibrium, the cumulative
dissipation accumulators with the per-record solver residuals, and the
weighted Lp functional against its dissipation/budget monitor.  Uses the
Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .diagnostics import DiagnosticsRecord

__all__ = ["render_report"]

_FIGSIZE = (7.0, 4.5)
_DPI = 130


def _column(records: list[DiagnosticsRecord], name: str) -> list[float]:
    return [getattr(r, name) for r in records]


def _semilogy_safe(ax, t, values, label):
    """Plot on a log axis, dropping exact zeros instead of erroring."""
    pts = [(ti, vi) for ti, vi in zip(t, values) if vi > 0.0]
    if pts:
        ax.semilogy([p[0] for p in pts], [p[1] for p in pts], label=label)
    else:
        # keep the legend entry honest even for an identically-zero series
        ax.plot([], [], label=f"{label} (all zero)")


def _fig_masses(records, t, out_dir):
    fig, (ax0, ax1) = plt.subplots(
        2, 1, figsize=(_FIGSIZE[0], _FIGSIZE[1] * 1.4), sharex=True)
    ax0.plot(t, _column(records, "mass_n"), label=r"$\int n$")
    ax0.plot(t, _column(records, "mass_c"), label=r"$\int c$")
    ax0.plot(t, _column(records, "mass_m"), label=r"$\int m$")
    ax0.set_ylabel("mass")
    ax0.legend(loc="best")
    ax0.set_title("component masses and conserved difference")

    gap = _column(records, "mass_gap")
    drift = [abs(g - gap[0]) for g in gap]
    _semilogy_safe(ax1, t, drift, r"$|\,\mathrm{gap}(t)-\mathrm{gap}(0)\,|$")
    ax1.set_xlabel("t")
    ax1.set_ylabel("gap drift")
    ax1.legend(loc="best")
    fig.tight_layout()
    path = out_dir / "masses.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def _fig_norms(records, t, out_dir):
    fig, (ax0, ax1) = plt.subplots(
        2, 1, figsize=(_FIGSIZE[0], _FIGSIZE[1] * 1.4), sharex=True)
    for name, label in (("linf_n", r"$\|n\|_\infty$"),
                        ("linf_c", r"$\|c\|_\infty$"),
                        ("linf_m", r"$\|m\|_\infty$"),
                        ("l2_u", r"$\|u\|_2$")):
        ax0.plot(t, _column(records, name), label=label)
    ax0.set_ylabel("norm")
    ax0.legend(loc="best")
    ax0.set_title("norms and distance to the long-time state")

    for name, label in (("dist_n_inf", r"$\|n-\hat n\|_\infty$"),
                        ("dist_m_inf", r"$\|m-\hat m\|_\infty$"),
                        ("dist_c_inf", r"$\|c-\hat m\|_\infty$"),
                        ("l2_u", r"$\|u\|_2$")):
        _semilogy_safe(ax1, t, _column(records, name), label)
    ax1.set_xlabel("t")
    ax1.set_ylabel("distance")
    ax1.legend(loc="best")
    fig.tight_layout()
    path = out_dir / "norms.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def _fig_accumulators(records, t, out_dir):
    fig, (ax0, ax1) = plt.subplots(
        2, 1, figsize=(_FIGSIZE[0], _FIGSIZE[1] * 1.4), sharex=True)
    for name, label in (("acc_nm", r"$\int_0^t\!\int nm$"),
                        ("acc_grad_m", r"$\int_0^t\!\int|\nabla m|^2$"),
                        ("acc_grad_c", r"$\int_0^t\!\int|\nabla c|^2$"),
                        ("acc_grad_u", r"$\int_0^t\!\int|\nabla u|^2$")):
        ax0.plot(t, _column(records, name), label=label)
    half = 0.5 * records[0].l2_m ** 2
    ax0.axhline(half, color="k", linestyle=":",
                label=r"$\frac{1}{2}\int m_0^2$ cap")
    ax0.set_ylabel("cumulative")
    ax0.legend(loc="best", fontsize=8)
    ax0.set_title("dissipation accumulators and solver residuals")

    for name, label in (("div_residual", r"$\|\nabla\cdot u\|_2$"),
                        ("energy_residual", "energy residual")):
        _semilogy_safe(ax1, t, _column(records, name), label)
    ax1.set_xlabel("t")
    ax1.set_ylabel("residual")
    ax1.legend(loc="best")
    fig.tight_layout()
    path = out_dir / "accumulators.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def _fig_functional(records, t, out_dir, p_label):
    fig, (ax0, ax1) = plt.subplots(
        2, 1, figsize=(_FIGSIZE[0], _FIGSIZE[1] * 1.4), sharex=True)
    _semilogy_safe(ax0, t, _column(records, "lp_functional"),
                   f"weighted functional (p={p_label})")
    _semilogy_safe(ax0, t, _column(records, "lp_probe_p2"), "probe p=2")
    _semilogy_safe(ax0, t, _column(records, "lp_probe_p4"), "probe p=4")
    ax0.set_ylabel("functional")
    ax0.legend(loc="best")
    ax0.set_title("weighted functional and its dissipation/budget monitor")

    _semilogy_safe(ax1, t, _column(records, "lp_dissipation"), "dissipation")
    _semilogy_safe(ax1, t, _column(records, "lp_budget"), "budget")
    ax1.set_xlabel("t")
    ax1.set_ylabel("rate")
    ax1.legend(loc="best")
    fig.tight_layout()
    path = out_dir / "functional.png"
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_report(records: list[DiagnosticsRecord], meta: dict[str, str],
                  out_dir: Path) -> list[Path]:
    """Write the four standard figures; returns the paths created."""
    if not records:
        raise ValueError("no records to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = _column(records, "t")
    return [
        _fig_masses(records, t, out_dir),
        _fig_norms(records, t, out_dir),
        _fig_accumulators(records, t, out_dir),
        _fig_functional(records, t, out_dir, meta.get("p", "?")),
    ]
