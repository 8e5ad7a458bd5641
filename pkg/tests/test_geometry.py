import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aclab.geometry import (GeometryError, ModelGeometry, Prescribing, as_prescribing, band, circle_generator,
                            fermi_chart, jacobi_potential, latitude, make_geometry)

E0 = 2 * math.sqrt(2) / 3


def test_torus_area():
    g = make_geometry({"kind": "torus", "Lx": 2 * math.pi, "Ly": 2 * math.pi})
    assert g.area() == pytest.approx((2 * math.pi) ** 2, rel=1e-12)
    assert make_geometry({"kind": "torus", "Lx": 3.0, "Ly": 5.0}).area() == pytest.approx(15.0, rel=1e-12)


@pytest.mark.parametrize("R", [0.5, 1.0, 2.0])
def test_sphere_area(R):
    assert make_geometry({"kind": "sphere", "R": R}).area() == pytest.approx(4 * math.pi * R * R, rel=1e-8)


def test_revolution_matches_sphere():
    rev = make_geometry({"kind": "revolution", "generator": circle_generator(1.0)})
    sph = make_geometry({"kind": "sphere"})
    assert rev.area() == pytest.approx(sph.area(), rel=1e-6)
    s = np.linspace(0.2, math.pi - 0.2, 13)
    assert np.abs(rev.rho(s) - sph.rho(s)).max() < 1e-6
    assert np.abs(rev.gauss_curvature(s) - 1.0).max() < 1e-3


@pytest.mark.parametrize("spec", [{"kind": "torus", "Lx": 0.0}, {"kind": "sphere", "R": -1.0},
                                  {"kind": "sphere", "resolution": (0, 1)}, {"kind": "klein"}, {}])
def test_bad_geometry(spec):
    with pytest.raises(GeometryError):
        make_geometry(spec)


def test_metric_positive_and_config_round_trip(sphere):
    s = np.linspace(1e-3, math.pi - 1e-3, 50)
    assert np.all(sphere.rho(s) > 0)
    assert make_geometry(sphere.to_config()) == sphere


def test_hypersurface_validation(torus, sphere):
    with pytest.raises(GeometryError):
        band(2.0, 1.0)
    with pytest.raises(GeometryError):
        latitude(4.0).validate(sphere)
    assert band(1.0, 2.0).length(torus) == pytest.approx(4 * math.pi)
    assert latitude(math.pi / 3).length(sphere) == pytest.approx(2 * math.pi * math.sin(math.pi / 3))


def test_signed_distance(torus):
    gam = band(math.pi / 2, 3 * math.pi / 2)
    d = gam.signed_distance(torus, np.array([math.pi, 0.0, math.pi / 2]))
    assert np.allclose(d, [-math.pi / 2, math.pi / 2, 0.0])


def test_torus_chart_flat(torus, torus_band):
    ch = fermi_chart(torus, torus_band, 0.5)
    for c in ch.components:
        assert np.all(c.H == 0) and np.all(c.A == 0) and np.all(c.ric == 0)
        assert np.all(c.J == 1)


@pytest.mark.parametrize("r", [0.5, math.pi / 3, 2.0])
def test_sphere_latitude_closed_forms(sphere, r):
    ch = fermi_chart(sphere, latitude(r), 0.4)
    c = ch.components[0]
    k = int(np.argmin(np.abs(c.z)))
    assert c.H[k] == pytest.approx(1 / math.tan(r), abs=1e-12)
    assert c.A2[k] == pytest.approx(1 / math.tan(r) ** 2, abs=1e-12)
    assert c.ric[k] == pytest.approx(1.0, abs=1e-12)
    assert np.abs(c.J - np.sin(r + c.z) / math.sin(r)).max() < 1e-8


@pytest.mark.parametrize("r", [0.5, math.pi / 3, 2.0])
def test_mean_curvature_from_parallel_lengths(sphere, r):
    # H_0 = d/dz log length of the parallel at distance z
    h = 1e-5
    length = lambda z: latitude(r + z).length(sphere)
    fd = (math.log(length(h)) - math.log(length(-h))) / (2 * h)
    assert fd == pytest.approx(1 / math.tan(r), abs=1e-8)


def test_riccati_and_expansion(sphere):
    r = math.pi / 3
    ch = fermi_chart(sphere, latitude(r), 0.5, nz=2001)
    assert ch.riccati_residual() < 1e-5
    c0, c1, _ = ch.expansion_fit(z_fit=0.005)
    assert c0 == pytest.approx(1 / math.tan(r), abs=1e-6)
    assert c1 == pytest.approx(-(1 / math.tan(r) ** 2 + 1), abs=1e-4)


def test_connection_and_lie_derivative(sphere):
    ch = fermi_chart(sphere, latitude(1.0), 0.3, nz=1201)
    c1 = ch.connection_constant()
    assert np.isfinite(c1) and 0 < c1 < 10
    assert ch.lie_derivative_residual() < 1e-4


def test_focal_guard(sphere, torus):
    with pytest.raises(GeometryError):
        fermi_chart(sphere, latitude(0.5), 0.5)
    with pytest.raises(GeometryError):
        fermi_chart(sphere, latitude(2.5), 0.7)
    with pytest.raises(GeometryError):
        fermi_chart(torus, band(1.0, 2.0), 0.6)


def test_chart_csv(sphere, tmp_path):
    fermi_chart(sphere, latitude(1.0), 0.3, nz=11).to_csv(tmp_path / "c.csv")
    data = np.loadtxt(tmp_path / "c.csv", delimiter=",", skiprows=1)
    assert data.shape == (11, 8)


def test_jacobi_potential_cases(torus, torus_band, sphere):
    assert np.all(np.concatenate(jacobi_potential(fermi_chart(torus, torus_band, 0.5), 0.0, E0)) == 0)
    r = 1.1
    ch = fermi_chart(sphere, latitude(r), 0.4)
    assert np.allclose(jacobi_potential(ch, 0.7, E0)[0], 1 / math.sin(r) ** 2, atol=1e-12)
    c = 0.3
    v = jacobi_potential(ch, f"{c} * (s - {r})", E0)[0]
    assert np.allclose(v, 1 / math.sin(r) ** 2 + 2 * c / E0, atol=1e-12)


def test_jacobi_potential_geometry_mismatch(sphere, torus, torus_band):
    from aclab.discretization import field_from_function

    f = field_from_function(sphere.with_resolution(32), lambda s, p: 0 * s)
    with pytest.raises(ValueError):
        jacobi_potential(fermi_chart(torus, torus_band, 0.5), f, E0)


def test_prescribing():
    assert as_prescribing(2).is_constant
    p = as_prescribing({"expr": "sin(s) * cos(phi)"})
    assert not p.is_constant
    assert p.ds(0.3, 0.2) == pytest.approx(math.cos(0.3) * math.cos(0.2), rel=1e-14)
    assert p.dphi(0.3, 0.2) == pytest.approx(-math.sin(0.3) * math.sin(0.2), rel=1e-14)
    hss, hsp, hpp = p.hessian(0.3, 0.2)
    assert hss == pytest.approx(-math.sin(0.3) * math.cos(0.2), rel=1e-8)
    assert hsp == pytest.approx(-math.cos(0.3) * math.sin(0.2), rel=1e-8)
    with pytest.raises(GeometryError):
        as_prescribing([1, 2])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 2.8), st.floats(-0.25, 0.25))
def test_volume_element_property(r, z):
    sph = ModelGeometry("sphere")
    ch = fermi_chart(sph, latitude(r), 0.28, nz=3)
    c = ch.components[0]
    assert np.isclose(sph.rho(ch.ambient_s(c, z)) / sph.rho(r), math.sin(r + z) / math.sin(r), rtol=1e-12)
