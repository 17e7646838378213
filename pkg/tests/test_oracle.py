import math

import numpy as np
import pytest

from coralsim.fields import Grid, ScalarField, integrate, lp_norm
from coralsim.operators import advect_conservative, divergence_cells, laplacian_neumann
from coralsim.oracle import HomogeneousIC, homogeneous_solution, mms_sources


def test_ic_validation():
    HomogeneousIC(2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        HomogeneousIC(-1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        HomogeneousIC(1.0, math.nan, 0.0)


def test_time_zero_returns_initial_data():
    n, m, c = homogeneous_solution(HomogeneousIC(2.0, 1.0, 0.0), 0.0)
    assert (n, m, c) == (2.0, 1.0, 0.0)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        homogeneous_solution(HomogeneousIC(1.0, 1.0, 0.0), -0.1)


def test_benchmark_values_at_t1():
    # n0=2, m0=1, c0=0: m(t) = e^{-t}/(2 - e^{-t})
    ic = HomogeneousIC(2.0, 1.0, 0.0)
    n, m, c = homogeneous_solution(ic, 1.0)
    m_exact = math.exp(-1.0) / (2.0 - math.exp(-1.0))
    assert m == pytest.approx(m_exact, rel=1e-14)
    assert n == pytest.approx(m_exact + 1.0, rel=1e-14)
    assert m == pytest.approx(0.2254, abs=5e-5)
    # c via independent fine trapezoid quadrature
    s = np.linspace(0.0, 1.0, 200001)
    integrand = np.exp(s - 1.0) * np.exp(-s) / (2.0 - np.exp(-s))
    c_ref = np.trapezoid(integrand, s)
    assert c == pytest.approx(c_ref, rel=1e-9)


def test_mass_gap_is_exact_along_trajectory():
    ic = HomogeneousIC(1.7, 0.4, 0.3)
    for t in (0.1, 0.5, 2.0, 10.0, 40.0):
        n, m, _ = homogeneous_solution(ic, t)
        assert n - m == pytest.approx(ic.mass_gap, rel=0.0, abs=1e-14)


def test_m_monotone_nonincreasing():
    ic = HomogeneousIC(0.5, 1.5, 0.2)
    ts = np.linspace(0.0, 8.0, 60)
    ms = [homogeneous_solution(ic, t)[1] for t in ts]
    assert all(ms[i + 1] <= ms[i] + 1e-14 for i in range(len(ms) - 1))


def test_ode_residual_by_finite_differences():
    # central differences of the closed form satisfy the ODE system
    ic = HomogeneousIC(2.0, 1.0, 0.5)
    dt = 1e-6
    for t in (0.3, 1.0, 3.0):
        nm = [homogeneous_solution(ic, t + k * dt) for k in (-1, 0, 1)]
        dn = (nm[2][0] - nm[0][0]) / (2 * dt)
        dm = (nm[2][1] - nm[0][1]) / (2 * dt)
        dc = (nm[2][2] - nm[0][2]) / (2 * dt)
        n, m, c = nm[1]
        scale = max(1.0, n * m)
        assert abs(dn + n * m) <= 1e-6 * scale
        assert abs(dm + n * m) <= 1e-6 * scale
        assert abs(dc + c - m) <= 1e-6 * scale


@pytest.mark.parametrize(
    "ic,limit",
    [
        (HomogeneousIC(2.0, 1.0, 0.0), (1.0, 0.0, 0.0)),
        (HomogeneousIC(1.0, 3.0, 0.7), (0.0, 2.0, 2.0)),
        (HomogeneousIC(1.0, 1.0, 0.2), (0.0, 0.0, 0.0)),
    ],
)
def test_long_time_limits(ic, limit):
    # surviving mass survives; the signal relaxes to the egg equilibrium
    n, m, c = homogeneous_solution(ic, 60.0)
    assert n == pytest.approx(limit[0], abs=2e-2)
    assert m == pytest.approx(limit[1], abs=2e-2)
    assert c == pytest.approx(limit[2], abs=2e-2)


def test_sterile_branches():
    # n0 = 0: nothing reacts, m stays put
    n, m, c = homogeneous_solution(HomogeneousIC(0.0, 2.0, 0.0), 5.0)
    assert n == 0.0 and m == 2.0
    assert c == pytest.approx(2.0 * (1.0 - math.exp(-5.0)), rel=1e-10)
    # m0 = 0: n stays put, c decays freely
    n, m, c = homogeneous_solution(HomogeneousIC(2.0, 0.0, 1.0), 5.0)
    assert n == 2.0 and m == 0.0
    assert c == pytest.approx(math.exp(-5.0), rel=1e-12)


def test_overflow_safety_large_times():
    for ic in (HomogeneousIC(2.0, 1.0, 0.0), HomogeneousIC(1.0, 2.0, 0.0)):
        n, m, c = homogeneous_solution(ic, 800.0)
        assert math.isfinite(n) and math.isfinite(m) and math.isfinite(c)
        assert n >= 0.0 and m >= 0.0 and c >= 0.0


# ---------------------------------------------------------------------------
# manufactured fields
# ---------------------------------------------------------------------------

def test_mms_diffusion_source_value():
    g = Grid((16, 16, 1))
    case = mms_sources("diffusion", g)
    assert np.allclose(case.source.values, 2.0 * np.pi ** 2 * case.target.values,
                       rtol=1e-14, atol=0.0)


def test_mms_heat_eigenmode_zero_source():
    g = Grid((16, 1, 1))
    case = mms_sources("heat-eigenmode", g, t=0.3)
    assert np.all(case.source.values == 0.0)
    # midpoint sampling caps |cos| at cos(pi h / 2)
    expected = math.cos(np.pi / 32.0) * math.exp(-np.pi ** 2 * 0.3)
    assert lp_norm(case.target, math.inf) == pytest.approx(expected, rel=1e-12)


def test_mms_advection_velocity_is_discretely_solenoidal():
    g = Grid((24, 24, 1))
    case = mms_sources("advection", g)
    div = divergence_cells(case.velocity)
    assert np.abs(div.values).max() <= 1e-13
    assert case.velocity.boundary_normal_max() == 0.0


def test_mms_advection_source_consistency():
    # the discrete upwind operator approaches the manufactured source as the
    # grid refines (first order)
    errs = []
    for nx in (32, 64):
        g = Grid((nx, nx, 1))
        case = mms_sources("advection", g)
        out = advect_conservative(case.velocity, case.target)
        errs.append(lp_norm(ScalarField(g, out.values - case.source.values), 2.0))
    assert 0.8 <= math.log2(errs[0] / errs[1]) <= 1.3


def test_mms_unknown_case_rejected():
    with pytest.raises(ValueError):
        mms_sources("reaction", Grid((8, 8, 1)))
