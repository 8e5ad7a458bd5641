import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp
from scipy.optimize import brentq

from aclab.discretization import Field, field_from_function, grid_for, integrate
from aclab.geometry import band, latitude
from aclab.layer import zero_set_spec
from aclab.solver import (NonConvergenceError, SolveOptions, energy, initial_ansatz, resolution_for,
                          solve_critical_point, solve_ladder, transfer)
from aclab.variations import first_variation_E, random_directions

from conftest import R_CMC


def _ones(geom, c=1.0):
    return field_from_function(geom, lambda s, p: c + 0 * s)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(ladder=(0.1, 0.1))


def test_ansatz_values(torus, torus_band, profiles):
    ge = resolution_for(torus, 0.05)
    u0 = initial_ansatz(ge, torus_band, 0.05, profiles)
    g = grid_for(ge)
    col = u0.values[:, 0]
    on = np.argmin(np.abs(g.s - math.pi / 2))
    assert g.s[on] == pytest.approx(math.pi / 2)
    assert abs(col[on]) < 1e-15
    assert col[0] == 1.0
    assert col[np.argmin(np.abs(g.s - math.pi))] == -1.0


def test_ansatz_energy_torus(torus, torus_band, profiles):
    ge = resolution_for(torus, 0.05)
    u0 = initial_ansatz(ge, torus_band, 0.05, profiles)
    E = energy(ge, 0.05, 0.0, u0).total
    assert abs(E - profiles.e0 * 4 * math.pi) <= 0.05 * profiles.e0 * 4 * math.pi


def test_ansatz_chart_failure(sphere, profiles):
    from aclab.geometry import GeometryError

    with pytest.raises(GeometryError):
        initial_ansatz(sphere, latitude(4.0), 0.1, profiles)


def test_constant_one_zero_steps(torus):
    ge = torus.with_resolution(64)
    res = solve_critical_point(ge, 0.1, 0.0, _ones(ge))
    assert res.iterations == 0 and res.residual == 0.0
    assert np.all(res.u.values == 1.0)


def test_constant_root(torus, profiles):
    ge = torus.with_resolution(64)
    eps, c = 0.1, 0.4
    dw = profiles.well
    root = brentq(lambda m: dw(m, 1) + eps * c, 0.5, 1.5, xtol=1e-15)
    res = solve_critical_point(ge, eps, c, _ones(ge), dw=dw)
    assert np.abs(res.u.values - root).max() < 1e-12
    assert root < 1.0


def test_bounded_h_regime(torus):
    ge = torus.with_resolution(64)
    with pytest.raises(ValueError):
        solve_critical_point(ge, 0.1, 50.0, _ones(ge))


def test_nonconvergence_carries_iterate(torus):
    ge = torus.with_resolution(256)
    u0 = field_from_function(ge, lambda s, p: 0.3 * np.sin(5 * s) + 0.2 * np.cos(s))
    with pytest.raises(NonConvergenceError) as info:
        solve_critical_point(ge, 0.05, 0.0, u0, SolveOptions(max_iter=1))
    assert info.value.last is not None and len(info.value.history) == 2


@pytest.fixture(scope="module")
def band_solution(torus, torus_band, profiles):
    eps = 0.05
    ge = resolution_for(torus, eps)
    return ge, eps, solve_critical_point(ge, eps, 0.0, initial_ansatz(ge, torus_band, eps, profiles))


def test_torus_band_residual_and_symmetry(band_solution):
    ge, eps, res = band_solution
    assert res.residual <= 1e-10
    assert res.assumptions.passed
    g = grid_for(ge)
    x = np.linspace(0, 1.2, 25)
    a = g.interp_s(res.u.values[:, 0], math.pi / 2 + x)
    b = g.interp_s(res.u.values[:, 0], math.pi / 2 - x)
    assert np.abs(a + b).max() < 1e-10
    # even about the bisector
    c = g.interp_s(res.u.values[:, 0], math.pi + x)
    d = g.interp_s(res.u.values[:, 0], math.pi - x)
    assert np.abs(c - d).max() < 1e-10


def test_torus_band_bvp_oracle(band_solution):
    # eps^2 u'' = u^3 - u on [pi/2, pi], u(pi/2) = 0 and u'(pi) = 0 by symmetry about the bisector
    ge, eps, res = band_solution
    x = np.linspace(math.pi / 2, math.pi, 801)
    a = (x - x[0]) / (eps * math.sqrt(2))
    guess = np.vstack([-np.tanh(a), -1 / (eps * math.sqrt(2) * np.cosh(a) ** 2)])
    sol = solve_bvp(lambda t, y: np.vstack([y[1], (y[0] ** 3 - y[0]) / eps ** 2]),
                    lambda ya, yb: np.array([ya[0], yb[1]]), x, guess, tol=1e-8, max_nodes=10 ** 6)
    assert sol.success
    t = np.linspace(math.pi / 2, math.pi, 101)
    ours = grid_for(ge).interp_s(res.u.values[:, 0], t)
    assert np.abs(ours - sol.sol(t)[0]).max() < 1e-6


def test_energy_constant_state(sphere):
    ge = sphere.with_resolution(64)
    h = "0.3 + 0.2 * cos(s)"
    rep = energy(ge, 0.1, h, _ones(ge))
    assert abs(rep.gradient) < 1e-20 and rep.potential == 0
    assert rep.total == pytest.approx(integrate(ge, field_from_function(ge, lambda s, p: 0.3 + 0.2 * np.cos(s))))
    assert rep.total == pytest.approx(1.2 * math.pi, rel=1e-12)


def test_energy_torus_band(torus_ladder, profiles):
    errs = []
    for res in torus_ladder:
        rep = energy(res.u.geom, res.eps, 0.0, res.u)
        errs.append(abs(rep.total - profiles.e0 * 4 * math.pi))
        assert rep.total == pytest.approx(rep.gradient + rep.potential + rep.forcing)
    assert errs[-1] < 0.01 * profiles.e0 * 4 * math.pi
    assert errs[-1] <= errs[0]


def test_energy_sphere_cmc(sphere_ladder, profiles, h_cmc):
    # e0 |Sigma| - h |Omega| + h |M \ Omega| with Omega the polar cap
    r = R_CMC
    cap = 2 * math.pi * (1 - math.cos(r))
    sharp = profiles.e0 * 2 * math.pi * math.sin(r) + h_cmc * (4 * math.pi - 2 * cap)
    errs = [abs(energy(res.u.geom, res.eps, h_cmc, res.u).total - sharp) for res in sphere_ladder]
    assert errs[-1] < 0.02 * sharp
    assert errs[-1] < errs[0]


@pytest.mark.parametrize("which", ["torus", "sphere"])
def test_first_variation_vanishes(which, torus_ladder, sphere_ladder, h_cmc):
    res = (torus_ladder if which == "torus" else sphere_ladder)[1]
    h = 0.0 if which == "torus" else h_cmc
    geom = res.u.geom
    for v in random_directions(geom, 20, seed=7):
        bound = 10 * SolveOptions().tol / res.eps * integrate(geom, np.abs(v.values))
        assert abs(first_variation_E(geom, res.eps, h, res.u, v)) <= bound


def test_sphere_radius_converges(sphere_ladder):
    radii = [zero_set_spec(res.u.geom, res.u).positions[0] for res in sphere_ladder]
    gaps = np.abs(np.diff(radii))
    assert np.all(np.diff(gaps) < 0)
    assert abs(radii[-1] - R_CMC) < 0.05
    assert all(res.residual <= 1e-10 for res in sphere_ladder)


def test_translation_equivariance(torus, profiles):
    eps, delta = 0.1, 0.37
    ge = resolution_for(torus, eps)
    base = solve_critical_point(ge, eps, 0.0, initial_ansatz(ge, band(1.0, 4.0), eps, profiles))
    moved = solve_critical_point(ge, eps, 0.0, initial_ansatz(ge, band(1.0 + delta, 4.0 + delta), eps, profiles))
    a = zero_set_spec(ge, base.u).positions
    b = zero_set_spec(ge, moved.u).positions
    assert np.allclose(np.array(b) - np.array(a), delta, atol=1e-9)


def test_transfer_and_ladder(torus, torus_band, profiles):
    res = solve_ladder(torus, torus_band, 0.0, profiles, (0.2, 0.1))
    assert [r.eps for r in res] == [0.2, 0.1]
    fine = transfer(res[0].u, res[1].u.geom)
    g0, g1 = grid_for(res[0].u.geom), grid_for(fine.geom)
    assert np.abs(g0.interp_s(res[0].u.values[:, 0], g1.s) - fine.values[:, 0]).max() < 1e-12


def test_solution_snapshot(tmp_path, torus_ladder):
    u = torus_ladder[0].u
    u.save(tmp_path / "u.fld")
    assert np.array_equal(Field.load(tmp_path / "u.fld").values, u.values)
