import math

import numpy as np
import pytest

from coralsim.fields import Grid
from coralsim.sensitivity import (
    SensitivityEvaluator,
    SensitivityParams,
    cutoff_chi,
    cutoff_rho,
)

UNIT_GRID = Grid((16, 16, 16))


def test_cutoff_rho_values():
    eps = 0.1
    assert cutoff_rho(0.0, eps) == 0.0          # on the boundary
    assert cutoff_rho(0.04, eps) == 0.0         # inside the dead zone (< eps/2)
    assert cutoff_rho(0.075, eps) == pytest.approx(0.5)  # ramp midpoint
    assert cutoff_rho(0.1, eps) == 1.0
    assert cutoff_rho(5.0, eps) == 1.0


def test_cutoff_rho_disabled_at_eps_zero():
    d = np.linspace(0.0, 1.0, 7)
    assert np.all(cutoff_rho(d, 0.0) == 1.0)


def test_cutoff_rho_monotone_and_c1():
    eps = 0.2
    d = np.linspace(0.0, 0.3, 4001)
    r = cutoff_rho(d, eps)
    assert np.all(np.diff(r) >= 0.0)
    # C^1: numerical derivative is continuous across the ramp ends
    dr = np.diff(r) / np.diff(d)
    assert np.abs(dr).max() < 2.0 / (0.5 * eps) * 1.01
    assert dr[0] == 0.0 and dr[-1] == 0.0


@pytest.mark.parametrize(
    "n,expected",
    [(0.0, 1.0), (1.0, 1.0), (3.0, 0.0), (10.0, 0.0)],
)
def test_cutoff_chi_values_eps_half(n, expected):
    # eps = 0.5: identically 1 up to 1/eps - 1 = 1, zero from 1/eps = 2
    assert cutoff_chi(n, 0.5) == expected


def test_cutoff_chi_ramp_midpoint():
    assert cutoff_chi(1.5, 0.5) == pytest.approx(0.5)


def test_cutoff_chi_monotone_nonincreasing():
    n = np.linspace(0.0, 12.0, 2000)
    chi = cutoff_chi(n, 0.25)
    assert np.all(np.diff(chi) <= 1e-15)
    assert np.all(cutoff_chi(n, 0.0) == 1.0)


def test_eval_tensor_identity_limit():
    # theta = 0, alpha = 0, constant response, no cutoffs -> chi0 * I
    p = SensitivityParams(alpha=0.0, chi0=2.5, theta=0.0, eps=0.0)
    ev = SensitivityEvaluator(p, UNIT_GRID)
    S = ev.eval_tensor((0.5, 0.5, 0.5), n=7.0, c=3.0)
    assert np.array_equal(S, 2.5 * np.eye(3))


def test_eval_tensor_density_desensitization():
    # alpha = 1, n = 1 halves the magnitude: 0.5 * I
    p = SensitivityParams(alpha=1.0, chi0=1.0, theta=0.0, eps=0.0)
    ev = SensitivityEvaluator(p, UNIT_GRID)
    S = ev.eval_tensor((0.5, 0.5, 0.5), n=1.0, c=0.0)
    assert np.allclose(S, 0.5 * np.eye(3), rtol=0.0, atol=0.0)


def test_eval_tensor_rotation_structure():
    # theta = pi/2: pure rotation generator; R e1 = e2, R e2 = -e1, R e3 = 0
    p = SensitivityParams(alpha=0.0, chi0=1.0, theta=math.pi / 2, eps=0.0)
    ev = SensitivityEvaluator(p, UNIT_GRID)
    S = ev.eval_tensor((0.5, 0.5, 0.5), n=0.0, c=0.0)
    expected = np.zeros((3, 3))
    expected[1, 0] = 1.0
    expected[0, 1] = -1.0
    assert np.allclose(S, expected, atol=1e-15)


def test_eval_tensor_rejects_negative_inputs():
    ev = SensitivityEvaluator(SensitivityParams(), UNIT_GRID)
    with pytest.raises(ValueError):
        ev.eval_tensor((0.5, 0.5, 0.5), n=-1e-9, c=0.0)
    with pytest.raises(ValueError):
        ev.eval_tensor((0.5, 0.5, 0.5), n=0.0, c=-2.0)


def test_params_validation():
    with pytest.raises(ValueError):
        SensitivityParams(alpha=-0.1)
    with pytest.raises(ValueError):
        SensitivityParams(chi0=0.0)
    with pytest.raises(ValueError):
        SensitivityParams(s0_kind="quadratic")
    with pytest.raises(ValueError):
        SensitivityParams(s0_slope=-1.0)
    with pytest.raises(ValueError):
        SensitivityParams(theta=2.0)
    with pytest.raises(ValueError):
        SensitivityParams(eps=1.5)


@pytest.mark.parametrize(
    "params",
    [
        SensitivityParams(alpha=0.25, chi0=1.0, theta=0.0, eps=0.0),
        SensitivityParams(alpha=1.0, chi0=2.0, theta=math.pi / 4, eps=0.1),
        SensitivityParams(alpha=0.5, chi0=0.7, s0_kind="affine", s0_slope=0.3,
                          theta=math.pi / 3, eps=0.5),
    ],
)
def test_frobenius_bound_random_samples(params):
    # 10^4 random states per configuration; the bound
    # ||S||_F <= (1+n)^(-alpha) S0(c) sqrt(2 + cos^2 theta) holds with zero
    # violations (a 1e-12 relative guard absorbs norm-evaluation roundoff).
    rng = np.random.default_rng(42)
    ev = SensitivityEvaluator(params, UNIT_GRID)
    violations = 0
    for _ in range(10_000):
        x = rng.random(3)
        n = rng.exponential(2.0)
        c = rng.exponential(1.0)
        S = ev.eval_tensor(x, n, c)
        fro = float(np.sqrt((S * S).sum()))
        if fro > float(ev.bound(n, c)) * (1.0 + 1e-12):
            violations += 1
    assert violations == 0


def test_eps_to_zero_pointwise_convergence():
    # at a fixed state, S_eps approaches the closed form monotonically as the
    # cutoff scale shrinks through {0.2, 0.1, 0.05}
    base = dict(alpha=0.5, chi0=1.5, theta=math.pi / 6)
    x, n, c = (0.08, 0.5, 0.5), 6.0, 1.0
    exact = SensitivityEvaluator(SensitivityParams(eps=0.0, **base), UNIT_GRID).eval_tensor(x, n, c)
    errs = []
    for eps in (0.2, 0.1, 0.05):
        S = SensitivityEvaluator(SensitivityParams(eps=eps, **base), UNIT_GRID).eval_tensor(x, n, c)
        errs.append(float(np.abs(S - exact).max()))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] == 0.0  # point lies outside both cutoffs at eps = 0.05


def test_evaluator_is_pure():
    ev = SensitivityEvaluator(SensitivityParams(alpha=0.7, eps=0.3), UNIT_GRID)
    a = ev.eval_tensor((0.3, 0.4, 0.5), 1.2, 0.8)
    b = ev.eval_tensor((0.3, 0.4, 0.5), 1.2, 0.8)
    assert np.array_equal(a, b)


def test_collapsed_axis_ignored_in_collar():
    # thin 2D grid: the z-walls would otherwise put every point in the collar
    g = Grid((16, 16, 1), (1.0, 1.0, 0.01))
    p = SensitivityParams(alpha=0.0, chi0=1.0, eps=0.1)
    ev = SensitivityEvaluator(p, g)
    S = ev.eval_tensor((0.5, 0.5, 0.005), n=0.0, c=0.0)
    assert np.allclose(S, np.eye(3), atol=0.0)
