import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import eval_legendre

from aclab.discretization import (Field, field_from_function, grad_dot, grid_for, gradient_squared, integrate,
                                  laplace_beltrami)
from aclab.geometry import GeometryError, ModelGeometry

TORUS = ModelGeometry("torus", 2 * math.pi, 2 * math.pi, resolution=(64, 32))
SPHERE = ModelGeometry("sphere", resolution=(48, 1))
SPHERE2D = ModelGeometry("sphere", resolution=(48, 32))


@pytest.mark.parametrize("geom", [TORUS, SPHERE, SPHERE2D])
def test_constant_field(geom):
    f = field_from_function(geom, lambda s, p: 3.0 + 0 * s)
    # round-off in the coefficients is amplified by the operator norm ~ n^2
    n = geom.resolution[0]
    assert np.abs(laplace_beltrami(geom, f).values).max() < 1e-12 * n * n * 3.0
    assert np.abs(gradient_squared(geom, f).values).max() < 1e-20


@pytest.mark.parametrize("k", [1, 2, 5])
def test_torus_mode(k):
    L = TORUS.Lx
    f = field_from_function(TORUS, lambda s, p: np.cos(2 * math.pi * k * s / L))
    lap = laplace_beltrami(TORUS, f).values
    assert np.abs(lap + (2 * math.pi * k / L) ** 2 * f.values).max() < 1e-10
    g2 = gradient_squared(TORUS, f).values
    expect = (2 * math.pi * k / L) ** 2 * np.sin(2 * math.pi * k * grid_for(TORUS).s / L) ** 2
    assert np.abs(g2 - expect[:, None]).max() < 1e-10


def test_torus_phi_mode():
    f = field_from_function(TORUS, lambda s, p: np.sin(3 * p) * np.cos(s))
    assert np.abs(laplace_beltrami(TORUS, f).values + 10 * f.values).max() < 1e-10


@pytest.mark.parametrize("geom", [SPHERE, SPHERE2D])
@pytest.mark.parametrize("l", [0, 1, 3, 8])
def test_sphere_zonal_harmonic(geom, l):
    f = field_from_function(geom, lambda s, p: eval_legendre(l, np.cos(s)) + 0 * p)
    assert np.abs(laplace_beltrami(geom, f).values + l * (l + 1) * f.values).max() < 1e-9


def test_sphere_nonzonal_harmonic():
    # Y = sin^2(theta) cos(2 phi) has l = 2
    f = field_from_function(SPHERE2D, lambda s, p: np.sin(s) ** 2 * np.cos(2 * p))
    assert np.abs(laplace_beltrami(SPHERE2D, f).values + 6 * f.values).max() < 1e-10


def test_sphere_radius_scaling():
    geom = ModelGeometry("sphere", R=2.0, resolution=(32, 1))
    f = field_from_function(geom, lambda s, p: np.cos(s / 2.0))
    assert np.abs(laplace_beltrami(geom, f).values + 0.5 * f.values).max() < 1e-10


def test_integrals():
    assert integrate(SPHERE, np.ones(48)) == pytest.approx(4 * math.pi, rel=1e-13)
    assert integrate(SPHERE2D, field_from_function(SPHERE2D, lambda s, p: 1 + 0 * s)) == pytest.approx(4 * math.pi)
    f = field_from_function(TORUS, lambda s, p: np.cos(s))
    assert abs(integrate(TORUS, f)) < 1e-12
    assert integrate(TORUS, f.with_values(f.values ** 2)) == pytest.approx(2 * math.pi ** 2, rel=1e-13)


@pytest.mark.parametrize("l,m", [(0, 1), (1, 2), (2, 5), (3, 7), (4, 4)])
def test_legendre_orthogonality(l, m):
    f = field_from_function(SPHERE, lambda s, p: eval_legendre(l, np.cos(s)) * eval_legendre(m, np.cos(s)))
    expect = 4 * math.pi / (2 * l + 1) if l == m else 0.0
    assert integrate(SPHERE, f) == pytest.approx(expect, abs=1e-12)


def _smooth(geom, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4)
    if geom.kind == "torus":
        fn = lambda s, p: a[0] * np.cos(s) + a[1] * np.sin(2 * s + p) + a[2] * np.exp(np.sin(s)) + a[3] * np.cos(p)
    else:
        fn = lambda s, p: a[0] * np.cos(s) + a[1] * np.cos(s) ** 3 + a[2] * np.exp(np.cos(s)) + a[3] * np.sin(s) ** 2 * np.cos(p)
    return field_from_function(geom, fn)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([TORUS, SPHERE, SPHERE2D]))
def test_integration_by_parts_and_mean_zero(seed, geom):
    u = _smooth(geom, seed)
    lap = laplace_beltrami(geom, u)
    scale = 1 + integrate(geom, gradient_squared(geom, u))
    assert abs(integrate(geom, lap)) < 1e-10 * scale
    ibp = integrate(geom, gradient_squared(geom, u)) + integrate(geom, u.values * lap.values)
    assert abs(ibp) < 1e-9 * scale


@pytest.mark.parametrize("geom", [TORUS.with_resolution(32, 16), SPHERE, SPHERE2D.with_resolution(24, 16)])
def test_operator_symmetry(geom):
    g = grid_for(geom)
    rng = np.random.default_rng(3)
    L = g.laplacian_matrix()
    w = g.weights.ravel()
    for _ in range(5):
        v, x = rng.normal(size=(2, w.size))
        lhs, rhs = np.dot(w * (L @ v), x), np.dot(w * v, L @ x)
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


def test_full_grid_matches_reduced():
    fn = lambda s, p: np.exp(np.cos(s)) + 0 * p
    a = laplace_beltrami(SPHERE, field_from_function(SPHERE, fn)).values[:, 0]
    b = laplace_beltrami(SPHERE2D, field_from_function(SPHERE2D, fn)).values
    assert np.abs(b - a[:, None]).max() < 1e-11


def _errors(kind):
    out = []
    for n in (16, 32):
        if kind == "torus":
            geom = ModelGeometry("torus", resolution=(n, 1))
            exact = lambda s: (np.cos(s) ** 2 - np.sin(s)) * np.exp(np.sin(s))
            f = field_from_function(geom, lambda s, p: np.exp(np.sin(s)))
        else:
            geom = ModelGeometry("sphere", resolution=(n, 1))
            # f = 1/(a - x), x = cos(theta): Lap f = ((1 - x^2) f')' with f' = 1/(a - x)^2
            a = 1.5
            exact = lambda s: 2 * np.sin(s) ** 2 / (a - np.cos(s)) ** 3 - 2 * np.cos(s) / (a - np.cos(s)) ** 2
            f = field_from_function(geom, lambda s, p: 1 / (a - np.cos(s)))
        lap = laplace_beltrami(geom, f).values[:, 0]
        out.append(np.abs(lap - exact(grid_for(geom).s)).max())
    return out


@pytest.mark.parametrize("kind", ["torus", "sphere"])
def test_refinement_spectral(kind):
    # spectral accuracy: doubling the grid beats the second-order factor 4 by far
    e1, e2 = _errors(kind)
    assert e2 < e1 / 4
    assert e2 < 1e-9


def test_gradient_product_rule():
    u = _smooth(TORUS, 1)
    v = _smooth(TORUS, 2)
    # Delta(uv) = u Lap v + v Lap u + 2 grad u . grad v
    uv = u.with_values(u.values * v.values)
    lhs = laplace_beltrami(TORUS, uv).values
    rhs = (u.values * laplace_beltrami(TORUS, v).values + v.values * laplace_beltrami(TORUS, u).values
           + 2 * grad_dot(TORUS, u, v))
    assert np.abs(lhs - rhs).max() < 1e-9


def test_field_validation():
    with pytest.raises(ValueError):
        Field(SPHERE, np.ones(10))
    bad = np.ones(48)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        Field(SPHERE, bad)
    with pytest.raises(GeometryError):
        grid_for(ModelGeometry("torus", resolution=(8, 1)))


def test_field_round_trip(tmp_path):
    f = _smooth(SPHERE2D, 5)
    f.name, f.eps = "u", 0.1
    f.save(tmp_path / "u.fld")
    g = Field.load(tmp_path / "u.fld")
    assert g.geom == f.geom and g.name == "u" and g.eps == 0.1
    assert np.array_equal(g.values, f.values)
    raw = (tmp_path / "u.fld").read_bytes()
    header, _, body = raw.partition(b"\n")
    assert len(body) == 8 * f.values.size
    assert np.array_equal(np.frombuffer(body, "<f8"), f.values.ravel())


def test_slice_csv(tmp_path):
    f = _smooth(TORUS, 0)
    f.slice_csv(tmp_path / "s.csv", j=3)
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert np.allclose(data[:, 1], f.values[:, 3])
