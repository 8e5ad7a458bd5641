"""Model surfaces written as warped products g = ds^2 + rho(s)^2 dphi^2.

* flat torus: s = x in [0, Lx), phi = y in [0, Ly), rho = 1
* round sphere of radius R: s = R theta in [0, pi R], rho = R sin(s / R)
* surface of revolution: rho(s) from a generating curve, s its arclength

Reference curves are unions of parallels s = s0, so Fermi coordinates are
z = sigma (s - s0) with sigma = +1 when the normal pointing out of Omega is
+d/ds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline


class GeometryError(ValueError):
    pass


# ------------------------------------------------------------------ surfaces

@dataclass(frozen=True)
class ModelGeometry:
    kind: str
    Lx: float = 2 * math.pi
    Ly: float = 2 * math.pi
    R: float = 1.0
    generator: tuple | None = None  # ((r0, z0), (r1, z1), ...) from pole to pole
    resolution: tuple = (128, 1)

    def __post_init__(self):
        if self.kind not in ("torus", "sphere", "revolution"):
            raise GeometryError(f"unknown geometry kind {self.kind!r}")
        if min(self.Lx, self.Ly, self.R) <= 0:
            raise GeometryError("geometry sizes must be positive")
        if len(self.resolution) != 2 or min(self.resolution) < 1:
            raise GeometryError("resolution must be two positive integers")
        if self.kind == "revolution":
            if self.generator is None or len(self.generator) < 8:
                raise GeometryError("revolution surface needs at least 8 generator samples")
            object.__setattr__(self, "_profile", _RevolutionProfile(self.generator))

    # coordinate ranges
    @property
    def s_length(self) -> float:
        if self.kind == "torus":
            return self.Lx
        if self.kind == "sphere":
            return math.pi * self.R
        return self._profile.length

    @property
    def phi_period(self) -> float:
        return self.Ly if self.kind == "torus" else 2 * math.pi

    @property
    def periodic_s(self) -> bool:
        return self.kind == "torus"

    def with_resolution(self, n_s: int, n_phi: int = 1) -> "ModelGeometry":
        return ModelGeometry(self.kind, self.Lx, self.Ly, self.R, self.generator, (int(n_s), int(n_phi)))

    # warped-product data
    def rho(self, s, der: int = 0):
        s = np.asarray(s, dtype=float)
        if self.kind == "torus":
            return np.full(s.shape, 1.0 if der == 0 else 0.0)
        if self.kind == "sphere":
            a = s / self.R
            vals = (self.R * np.sin(a), np.cos(a), -np.sin(a) / self.R, -np.cos(a) / self.R ** 2)
            return vals[der]
        return self._profile.rho(s, der)

    def gauss_curvature(self, s):
        return -self.rho(s, 2) / self.rho(s)

    def christoffel(self, s):
        """(Gamma^s_phiphi, Gamma^phi_sphi) in the (s, phi) chart."""
        r, r1 = self.rho(s), self.rho(s, 1)
        return -r * r1, r1 / r

    def area(self) -> float:
        if self.kind == "torus":
            return self.Lx * self.Ly
        if self.kind == "sphere":
            return 4 * math.pi * self.R ** 2
        return 2 * math.pi * self._profile.integral_rho()

    def to_config(self) -> dict:
        out = {"kind": self.kind, "resolution": list(self.resolution)}
        if self.kind == "torus":
            out.update(Lx=self.Lx, Ly=self.Ly)
        elif self.kind == "sphere":
            out.update(R=self.R)
        else:
            out.update(generator=[list(p) for p in self.generator])
        return out


class _RevolutionProfile:
    """rho(s) for a generating curve (r(t), z(t)) meeting the axis at both ends."""

    def __init__(self, samples):
        pts = np.asarray(samples, dtype=float)
        r, z = pts[:, 0], pts[:, 1]
        if abs(r[0]) > 1e-12 or abs(r[-1]) > 1e-12 or np.any(r[1:-1] <= 0):
            raise GeometryError("generator must start and end on the axis with r > 0 between")
        t = np.linspace(0.0, 1.0, len(r))
        rs, zs = CubicSpline(t, r), CubicSpline(t, z)
        # arclength by Gauss-Legendre on every spline interval
        xg, wg = np.polynomial.legendre.leggauss(8)
        tt = np.linspace(0.0, 1.0, 4 * len(r) + 1)
        seg = []
        for a, b in zip(tt[:-1], tt[1:]):
            q = 0.5 * (b - a) * xg + 0.5 * (a + b)
            seg.append(0.5 * (b - a) * wg @ np.hypot(rs(q, 1), zs(q, 1)))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(s[-1])
        self._rho = CubicSpline(s, rs(tt))

    def rho(self, s, der=0):
        return self._rho(s, der)

    def integral_rho(self) -> float:
        return float(self._rho.integrate(0.0, self.length))


def make_geometry(spec: dict) -> ModelGeometry:
    """Build a geometry from a config mapping (see ``ModelGeometry.to_config``)."""
    try:
        kind = spec["kind"]
    except (KeyError, TypeError):
        raise GeometryError("geometry spec needs a 'kind'") from None
    res = tuple(int(v) for v in spec.get("resolution", (128, 1)))
    if any(v <= 0 for v in res):
        raise GeometryError("resolution entries must be positive")
    if kind == "torus":
        return ModelGeometry("torus", Lx=float(spec.get("Lx", 2 * math.pi)),
                             Ly=float(spec.get("Ly", 2 * math.pi)), resolution=res)
    if kind == "sphere":
        return ModelGeometry("sphere", R=float(spec.get("R", 1.0)), resolution=res)
    if kind == "revolution":
        gen = tuple(tuple(float(a) for a in p) for p in spec["generator"])
        return ModelGeometry("revolution", generator=gen, resolution=res)
    raise GeometryError(f"unknown geometry kind {kind!r}")


def circle_generator(R: float = 1.0, n: int = 2001):
    """Generator samples of the round sphere, for cross-checking revolution surfaces."""
    t = np.linspace(0.0, math.pi, n)
    r = R * np.sin(t)
    r[0] = r[-1] = 0.0
    return tuple(zip(r.tolist(), (-R * np.cos(t)).tolist()))


# ---------------------------------------------------------------- hypersurfaces

@dataclass(frozen=True)
class HypersurfaceSpec:
    """Union of parallels s = s0 bounding Omega, each with its normal sign.

    ``latitude``: Omega = {s < s0}, one component with sigma = +1.
    ``band``: Omega = {a < s < b} on the torus, components (a, -1), (b, +1).
    """

    kind: str
    positions: tuple

    def __post_init__(self):
        if self.kind == "latitude" and len(self.positions) != 1:
            raise GeometryError("a latitude has one position")
        if self.kind == "band" and (len(self.positions) != 2 or self.positions[0] >= self.positions[1]):
            raise GeometryError("a band needs positions a < b")
        if self.kind not in ("latitude", "band"):
            raise GeometryError(f"unknown hypersurface kind {self.kind!r}")

    @property
    def components(self):
        if self.kind == "latitude":
            return ((float(self.positions[0]), 1.0),)
        a, b = self.positions
        return ((float(a), -1.0), (float(b), 1.0))

    def in_omega(self, geom: ModelGeometry, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "latitude":
            return s < self.positions[0]
        a, b = self.positions
        s = np.mod(s, geom.s_length)
        return (s > a) & (s < b)

    def signed_distance(self, geom: ModelGeometry, s):
        """Distance to Gamma, negative inside Omega (exact for parallels)."""
        s = np.asarray(s, dtype=float)
        if self.kind == "latitude":
            return s - self.positions[0]
        L = geom.s_length
        d = np.min([np.abs((s - p + L / 2) % L - L / 2) for p in self.positions], axis=0)
        return np.where(self.in_omega(geom, s), -d, d)

    def length(self, geom: ModelGeometry) -> float:
        return float(sum(geom.rho(s0) * geom.phi_period for s0, _ in self.components))

    def validate(self, geom: ModelGeometry):
        for s0, _ in self.components:
            if not 0 < s0 < geom.s_length or (not geom.periodic_s and geom.rho(s0) <= 0):
                raise GeometryError(f"parallel s0={s0} is not inside the surface")


def latitude(r: float) -> HypersurfaceSpec:
    return HypersurfaceSpec("latitude", (float(r),))


def band(a: float, b: float) -> HypersurfaceSpec:
    return HypersurfaceSpec("band", (float(a), float(b)))


# ---------------------------------------------------------------- Fermi charts

@dataclass
class ChartComponent:
    s0: float
    sigma: float
    z: np.ndarray
    g: np.ndarray      # g_z(d_phi, d_phi) = rho^2
    A: np.ndarray      # A_z(d_phi, d_phi)
    H: np.ndarray      # mean curvature of {z = const} wrt d/dz
    A2: np.ndarray     # |A_z|^2
    ric: np.ndarray    # Ric(d/dz, d/dz)
    J: np.ndarray      # volume element rho(s0 + sigma z) / rho(s0)


class FermiChart:
    """Fermi coordinates (phi, z) about each component of Gamma."""

    def __init__(self, geom: ModelGeometry, gamma: HypersurfaceSpec, z_max: float, nz: int = 401):
        gamma.validate(geom)
        self.geom, self.gamma, self.z_max = geom, gamma, float(z_max)
        if geom.kind != "torus":
            for s0, sigma in gamma.components:
                focal = min(s0, geom.s_length - s0)
                if z_max >= focal:
                    raise GeometryError(f"z_max={z_max} reaches the focal distance {focal:.4g}")
        elif gamma.kind == "band":
            a, b = gamma.positions
            gap = min(b - a, geom.s_length - (b - a)) / 2
            if z_max > gap:
                raise GeometryError(f"z_max={z_max} exceeds half the band separation {gap:.4g}")
        z = np.linspace(-z_max, z_max, nz)
        self.components = [self._component(s0, sig, z) for s0, sig in gamma.components]

    def ambient_s(self, comp: ChartComponent, z):
        return comp.s0 + comp.sigma * np.asarray(z, dtype=float)

    def _component(self, s0, sigma, z):
        s = s0 + sigma * z
        r, r1 = self.geom.rho(s), self.geom.rho(s, 1)
        H = sigma * r1 / r
        return ChartComponent(s0, sigma, z, r * r, sigma * r * r1, H, H * H,
                              self.geom.gauss_curvature(s), r / self.geom.rho(s0))

    def mean_curvature(self, comp: ChartComponent, z):
        s = self.ambient_s(comp, z)
        return comp.sigma * self.geom.rho(s, 1) / self.geom.rho(s)

    def riccati_residual(self) -> float:
        """max |dA/dz - A^2 + Riem(d_phi, d_z, d_z, d_phi)| by centered differences."""
        out = 0.0
        for c in self.components:
            dz = c.z[1] - c.z[0]
            dA = np.gradient(c.A, dz, edge_order=2)
            A_sq = c.A * c.A / c.g  # (0,2) square A_{phi a} g^{ab} A_{b phi}
            riem = c.ric * c.g       # sectional curvature times |d_phi|^2
            out = max(out, float(np.abs(dA - A_sq + riem)[2:-2].max()))
        return out

    def expansion_fit(self, comp_index: int = 0, z_fit: float = 0.05):
        """Fit H_z = c0 + c1 z + c2 z^2 near z = 0; returns (c0, c1, c2)."""
        c = self.components[comp_index]
        z = np.linspace(-z_fit, z_fit, 41)
        c2, c1, c0 = np.polyfit(z, self.mean_curvature(c, z), 2)
        return c0, c1, c2

    def connection_constant(self, n_modes: int = 4) -> float:
        """Measured c1 in |(grad_{g_z} - grad_Gamma) f| <= c1 |z| |grad_Gamma f|.

        For z-independent f(phi) both gradients are multiples of d_phi; the
        ratio reduces to |rho(s0)^2 / rho(s)^2 - 1| * rho(s) / rho(s0) / |z|.
        """
        worst = 0.0
        for c in self.components:
            z = c.z[c.z != 0]
            g0 = self.geom.rho(c.s0) ** 2
            gz = self.geom.rho(self.ambient_s(c, z)) ** 2
            ratio = np.abs(g0 / gz - 1.0) * np.sqrt(gz / g0) / np.abs(z)
            worst = max(worst, float(ratio.max()))
        return worst

    def lie_derivative_residual(self, f_phi: float = 1.0) -> float:
        """Check L_{d_z} grad_{g_z} f = -2 A_z(grad f, .) for f = f_phi * phi locally.

        grad_{g_z} f = f_phi / g d_phi, whose index-lowered z-derivative
        (as a vector) is -g'/g^2 f_phi; the right-hand side is -2 A/g^2 f_phi.
        """
        out = 0.0
        for c in self.components:
            dz = c.z[1] - c.z[0]
            lhs = np.gradient(f_phi / c.g, dz, edge_order=2)
            rhs = -2.0 * c.A * f_phi / c.g ** 2
            out = max(out, float(np.abs(lhs - rhs)[2:-2].max()))
        return out

    def to_csv(self, path) -> None:
        rows = []
        for k, c in enumerate(self.components):
            rows.append(np.column_stack([np.full(c.z.size, k), c.z, c.g, c.A, c.H, c.A2, c.ric, c.J]))
        np.savetxt(path, np.vstack(rows), delimiter=",",
                   header="component,z,g,A,H,A2,ric,J", comments="")


def fermi_chart(geom: ModelGeometry, gamma: HypersurfaceSpec, z_max: float, nz: int = 401) -> FermiChart:
    return FermiChart(geom, gamma, z_max, nz)


# ---------------------------------------------------------- prescribing function

_EXPR_NS = {k: getattr(np, k) for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh",
                                         "cosh", "sinh", "arctan", "pi")}


@dataclass(frozen=True)
class Prescribing:
    """The prescribing function h(s, phi): a constant or a numpy expression.

    Expressions must be complex-analytic so that derivatives can be taken by
    the complex-step method.
    """

    value: float | str = 0.0

    @property
    def is_constant(self) -> bool:
        return not isinstance(self.value, str)

    def __call__(self, s, phi=0.0):
        s, phi = np.broadcast_arrays(np.asarray(s), np.asarray(phi))
        if self.is_constant:
            return np.full(s.shape, float(self.value), dtype=np.result_type(s, float))
        return eval(self.value, {"__builtins__": {}}, dict(_EXPR_NS, s=s, phi=phi)) + 0 * s

    def ds(self, s, phi=0.0):
        return _cstep(lambda a: self(a, phi), np.asarray(s, dtype=float))

    def dphi(self, s, phi=0.0):
        return _cstep(lambda b: self(s, b), np.asarray(phi, dtype=float))

    def hessian(self, s, phi=0.0, step=1e-5):
        """Coordinate second derivatives (h_ss, h_sphi, h_phiphi)."""
        s = np.asarray(s, dtype=float)
        phi = np.asarray(phi, dtype=float)
        hss = (self.ds(s + step, phi) - self.ds(s - step, phi)) / (2 * step)
        hsp = (self.ds(s, phi + step) - self.ds(s, phi - step)) / (2 * step)
        hpp = (self.dphi(s, phi + step) - self.dphi(s, phi - step)) / (2 * step)
        return hss, hsp, hpp

    def to_config(self):
        return self.value


def _cstep(fn, x, step=1e-30):
    return np.imag(fn(x + 1j * step)) / step


def as_prescribing(h) -> Prescribing:
    if isinstance(h, Prescribing):
        return h
    if isinstance(h, dict) and "expr" in h:
        return Prescribing(str(h["expr"]))
    if isinstance(h, (int, float)):
        return Prescribing(float(h))
    if isinstance(h, str):
        return Prescribing(h)
    raise GeometryError(f"cannot interpret prescribing function {h!r}")


def jacobi_potential(chart: FermiChart, h, e0: float, phi=None):
    """|A|^2 + Ric(n, n) + 2 e0^{-1} dh/dz at z = 0, per component on the phi nodes."""
    from .discretization import Field

    if isinstance(h, Field):
        if h.geom.kind != chart.geom.kind or h.geom.s_length != chart.geom.s_length:
            raise ValueError("prescribing field lives on a different geometry")
        hs = h.s_derivative_at
    else:
        hp = as_prescribing(h)
        hs = hp.ds
    if phi is None:
        phi = np.linspace(0.0, chart.geom.phi_period, 64, endpoint=False)
    out = []
    for c in chart.components:
        k = int(np.argmin(np.abs(c.z)))
        dz_h = c.sigma * hs(c.s0, phi)
        out.append(c.A2[k] + c.ric[k] + 2.0 / e0 * dz_h)
    return out
