"""First and second variations of E_{eps,h} and of the prescribed-curvature functional A_h.

Everything is evaluated in the orthonormal frame e1 = d_s, e2 = rho^-1 d_phi
of a warped product. For a vector field X the frame matrix B has entries
B[a, b] = (nabla_{e_b} X) . e_a, so expressions such as |nabla u . nabla X|^2
become plain matrix algebra at every node.

Each analytic formula has a flow oracle: the flow Phi^t of X and its
Jacobian are integrated with classical RK4, energies of u o Phi^{-t} are
evaluated by the change of variables y = Phi^t(x), and derivatives in t are
taken by centered differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretization import Field, grid_for
from .geometry import _EXPR_NS, HypersurfaceSpec, ModelGeometry, as_prescribing
from .layer import fit_slope
from .potential import DoubleWell, canonical
from .solver import energy


class FlowError(RuntimeError):
    pass


# ------------------------------------------------------------ vector fields

def _bump(x):
    """exp(-1 / (1 - x^2)) on |x| < 1, zero elsewhere; complex-step safe."""
    x = np.asarray(x)
    inside = np.abs(np.real(x)) < 1
    xx = np.where(inside, x, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - xx * xx)), 0.0)


_VF_NS = dict(_EXPR_NS, bump=_bump)


def _eval(expr, s, phi):
    return eval(expr, {"__builtins__": {}}, dict(_VF_NS, s=s, phi=phi)) + 0 * s + 0 * phi


def _cs(fn, s, phi, axis, step=1e-30):
    if axis == 0:
        return np.imag(fn(s + 1j * step, phi + 0j)) / step
    return np.imag(fn(s + 0j, phi + 1j * step)) / step


@dataclass(frozen=True)
class VectorFieldSpec:
    """X = X^s d_s + X^phi d_phi with numpy expressions in (s, phi).

    Expressions may use ``bump(x)``, the smooth compactly supported bump on
    (-1, 1); they must be complex-analytic where the bump is nonzero.
    """

    xs: str
    xphi: str = "0"
    name: str = ""
    t_max: float = 0.02
    steps: int = 40        # RK4 steps per t_max

    def __call__(self, s, phi):
        return _eval(self.xs, s, phi), _eval(self.xphi, s, phi)

    def jacobian(self, s, phi):
        """(dX^s/ds, dX^s/dphi, dX^phi/ds, dX^phi/dphi)."""
        fs = lambda a, b: _eval(self.xs, a, b)
        fp = lambda a, b: _eval(self.xphi, a, b)
        return _cs(fs, s, phi, 0), _cs(fs, s, phi, 1), _cs(fp, s, phi, 0), _cs(fp, s, phi, 1)

    def to_config(self):
        return {"xs": self.xs, "xphi": self.xphi, "name": self.name}


def frame_components(geom: ModelGeometry, X: VectorFieldSpec, s, phi):
    """Frame components (X1, X2) and the frame derivative matrix entries B11, B12, B21, B22."""
    xs, xp = X(s, phi)
    dss, dsp, dps, dpp = X.jacobian(s, phi)
    r, r1 = geom.rho(s), geom.rho(s, 1)
    B11 = dss
    B21 = r * dps + r1 * xp
    B12 = (dsp - r * r1 * xp) / r
    B22 = dpp + r1 / r * xs
    return (np.real(xs), np.real(r * xp)), (B11, B12, B21, B22)


def covariant_self(geom: ModelGeometry, X: VectorFieldSpec, s, phi):
    """Coordinate components of nabla_X X."""
    xs, xp = X(s, phi)
    dss, dsp, dps, dpp = X.jacobian(s, phi)
    r, r1 = geom.rho(s), geom.rho(s, 1)
    ys = xs * dss + xp * dsp - r * r1 * xp * xp
    yp = xs * dps + xp * dpp + 2 * r1 / r * xs * xp
    return np.real(ys), np.real(yp)


def _selfcov_field(geom, X):
    """nabla_X X as an expression-free field object (for derivatives by differences)."""

    class _Y:
        def __call__(self, s, phi):
            return covariant_self(geom, X, np.real(s), np.real(phi))

        def jacobian(self, s, phi, step=1e-5):
            a = self(s + step, phi)
            b = self(s - step, phi)
            c = self(s, phi + step)
            d = self(s, phi - step)
            return ((a[0] - b[0]) / (2 * step), (c[0] - d[0]) / (2 * step),
                    (a[1] - b[1]) / (2 * step), (c[1] - d[1]) / (2 * step))

    return _Y()


def random_vector_fields(geom: ModelGeometry, n: int, seed: int = 0, center: float | None = None,
                         width: float = 0.6):
    """Seeded smooth fields: trigonometric on the torus, pole-free bumps on the sphere."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        a = rng.normal(size=6)
        th = rng.uniform(0, 2 * np.pi, size=6)
        if geom.kind == "torus":
            kx, ky = 2 * np.pi / geom.Lx, 2 * np.pi / geom.Ly
            xs = (f"{a[0]:.6f}*cos({kx:.12f}*s+{th[0]:.6f}) + {a[1]:.6f}*cos({ky:.12f}*phi+{th[1]:.6f})"
                  f" + {a[2]:.6f}*sin({kx:.12f}*s+{ky:.12f}*phi+{th[2]:.6f})")
            xp = (f"{a[3]:.6f}*cos({kx:.12f}*s+{th[3]:.6f}) + {a[4]:.6f}*sin({2 * ky:.12f}*phi+{th[4]:.6f})"
                  f" + {a[5]:.6f}*cos({kx:.12f}*s-{ky:.12f}*phi+{th[5]:.6f})")
        else:
            c = geom.s_length / 2 if center is None else center
            b = f"bump((s-{c:.12f})/{width * geom.R:.12f})"
            xs = f"{b}*({a[0]:.6f} + {a[1]:.6f}*cos(phi+{th[0]:.6f}) + {a[2]:.6f}*cos(2*phi+{th[1]:.6f}))"
            xp = f"{b}*({a[3]:.6f} + {a[4]:.6f}*sin(phi+{th[2]:.6f}))*{0.5 / geom.R:.6f}"
        out.append(VectorFieldSpec(xs, xp, f"X{k}"))
    return out


def random_directions(geom: ModelGeometry, n: int, seed: int = 0, n_phi: int | None = None):
    """Seeded smooth test functions on the geometry's grid."""
    rng = np.random.default_rng(seed)
    g = grid_for(geom)
    S, PH = np.meshgrid(g.s, g.phi, indexing="ij")
    out = []
    for k in range(n):
        a = rng.normal(size=5)
        th = rng.uniform(0, 2 * np.pi, size=3)
        if geom.kind == "torus":
            kx, ky = 2 * np.pi / geom.Lx, 2 * np.pi / geom.Ly
            v = (a[0] + a[1] * np.cos(kx * S + th[0]) + a[2] * np.sin(2 * kx * S + th[1])
                 + a[3] * np.cos(ky * PH + kx * S + th[2]))
        else:
            x = np.cos(S / geom.R)
            v = a[0] + a[1] * x + a[2] * (1.5 * x * x - 0.5) + a[3] * np.sin(S / geom.R) * np.cos(PH + th[0])
        out.append(Field(geom, v, f"v{k}"))
    return out


# ----------------------------------------------------------- E variations

def _lift(u, geom: ModelGeometry | None = None):
    """Values of u on ``geom`` (same s-grid); phi-independent fields are repeated."""
    if geom is None or geom == u.geom:
        return u.geom, u.values
    if geom.resolution[0] != u.geom.resolution[0]:
        raise ValueError("lifting needs the same s-resolution")
    if u.values.shape[1] == 1:
        return geom, np.repeat(u.values, geom.resolution[1], axis=1)
    if u.values.shape[1] != geom.resolution[1]:
        raise ValueError("cannot change the phi resolution of a phi-dependent field")
    return geom, u.values


def _vals(geom, v):
    shape = grid_for(geom).shape
    vv = v.values if isinstance(v, Field) else np.asarray(v, dtype=float)
    return np.broadcast_to(vv, shape) if vv.shape != shape else vv


def first_variation_E(geom, eps: float, h, u, v, dw: DoubleWell | None = None) -> float:
    """int eps grad u . grad v + eps^-1 W'(u) v + h v."""
    from .solver import prescribing_values

    dw = dw or canonical()
    g = grid_for(geom)
    uv, vv = _vals(geom, u), _vals(geom, v)
    us, up = g.gradient(uv)
    vs, vp = g.gradient(vv)
    gu = us * vs + g.metric_inverse_phi() * up * vp
    hv = prescribing_values(geom, h)
    return float(np.sum(g.weights * (eps * gu + dw(uv, 1) * vv / eps + hv * vv)))


def second_variation_E(geom, eps: float, h, u, v, w, dw: DoubleWell | None = None) -> float:
    """Q(v, w) = int eps grad v . grad w + eps^-1 W''(u) v w (h enters only through u)."""
    dw = dw or canonical()
    g = grid_for(geom)
    uv, vv, ww = _vals(geom, u), _vals(geom, v), _vals(geom, w)
    vs, vp = g.gradient(vv)
    ws, wp = g.gradient(ww)
    gvw = vs * ws + g.metric_inverse_phi() * vp * wp
    return float(np.sum(g.weights * (eps * gvw + dw(uv, 2) * vv * ww / eps)))


def fd_first_variation_E(geom, eps, h, u, v, t=1e-5, dw=None):
    uv, vv = _vals(geom, u), _vals(geom, v)
    return (energy(geom, eps, h, uv + t * vv, dw).total - energy(geom, eps, h, uv - t * vv, dw).total) / (2 * t)


def fd_second_variation_E(geom, eps, h, u, v, t=1e-3, dw=None):
    uv, vv = _vals(geom, u), _vals(geom, v)
    E = lambda a: energy(geom, eps, h, uv + a * vv, dw).total
    return (-E(2 * t) + 16 * E(t) - 30 * E(0.0) + 16 * E(-t) - E(-2 * t)) / (12 * t * t)


# ------------------------------------------------------- inner variations

def _frame_hessian(geom, hp, s, phi):
    r, r1 = geom.rho(s), geom.rho(s, 1)
    hs, hphi = hp.ds(s, phi), hp.dphi(s, phi)
    hss, hsp, hpp = hp.hessian(s, phi)
    return hss, hsp / r - r1 * hphi / r ** 2, hpp / r ** 2 + r1 / r * hs, (hs, hphi / r)


def inner_second_variation(geom, eps: float, h, u: Field, X: VectorFieldSpec, dw: DoubleWell | None = None,
                           n_phi: int = 32, critical: bool = True) -> float:
    """d^2/dt^2 E[u o Phi^{-t}] at t = 0 by quadrature.

    ``critical=True`` evaluates the display valid at critical points; with
    ``critical=False`` the first variation along nabla_X X is added back,
    which makes the formula exact for any u.
    """
    dw = dw or canonical()
    hp = as_prescribing(h)
    g2 = u.geom.with_resolution(u.geom.resolution[0], n_phi)
    _, uv = _lift(u, g2)
    g = grid_for(g2)
    S, PH = np.meshgrid(g.s, g.phi, indexing="ij")
    r = g2.rho(S)
    us, up = g.gradient(uv)
    p1, p2 = us, up / r
    (X1, X2), (B11, B12, B21, B22) = frame_components(g2, X, S, PH)
    H11, H12, H22, (g1, g2h) = _frame_hessian(g2, hp, S, PH)
    hv = np.real(hp(S, PH))
    K = g2.gauss_curvature(S)
    e = 0.5 * eps * (p1 * p1 + p2 * p2) + dw(uv) / eps + hv * uv

    BTp1, BTp2 = B11 * p1 + B21 * p2, B12 * p1 + B22 * p2
    Bp1, Bp2 = B11 * p1 + B12 * p2, B21 * p1 + B22 * p2
    pBp = p1 * Bp1 + p2 * Bp2
    pBBp = p1 * (B11 * Bp1 + B12 * Bp2) + p2 * (B21 * Bp1 + B22 * Bp2)
    div = B11 + B22
    trB2 = B11 * B11 + 2 * B12 * B21 + B22 * B22
    Xn2 = X1 * X1 + X2 * X2
    riem = K * (Xn2 * (p1 * p1 + p2 * p2) - (X1 * p1 + X2 * p2) ** 2)
    XHX = H11 * X1 * X1 + 2 * H12 * X1 * X2 + H22 * X2 * X2
    Xdh = X1 * g1 + X2 * g2h
    dens = (eps * (riem + BTp1 ** 2 + BTp2 ** 2 + 2 * pBBp) + uv * XHX
            + 2 * (-eps * pBp + uv * Xdh) * div + e * (-K * Xn2 - trB2 + div * div))
    total = float(np.sum(g.weights * dens))
    if not critical:
        Y = _selfcov_field(g2, X)
        (Y1, Y2), (C11, C12, C21, C22) = frame_components(g2, Y, S, PH)
        pCp = p1 * (C11 * p1 + C12 * p2) + p2 * (C21 * p1 + C22 * p2)
        total += float(np.sum(g.weights * (-eps * pCp + uv * (Y1 * g1 + Y2 * g2h) + e * (C11 + C22))))
    return total


def _rk4_flow(geom, X: VectorFieldSpec, s, phi, t: float, steps: int):
    """Flow positions and coordinate Jacobian D = dPhi^t/dx at every node."""
    if t == 0:
        one = np.ones_like(s)
        return s.copy(), phi.copy(), (one, 0 * one, 0 * one, one)

    def rhs(state):
        a, b, d11, d12, d21, d22 = state
        xs, xp = X(a, b)
        j11, j12, j21, j22 = X.jacobian(a, b)
        return (np.real(xs), np.real(xp), j11 * d11 + j12 * d21, j11 * d12 + j12 * d22,
                j21 * d11 + j22 * d21, j21 * d12 + j22 * d22)

    one = np.ones_like(s)
    state = (s.astype(float), phi.astype(float), one, 0 * one, 0 * one, one.copy())
    dt = t / steps
    for _ in range(steps):
        k1 = rhs(state)
        k2 = rhs(tuple(x + 0.5 * dt * k for x, k in zip(state, k1)))
        k3 = rhs(tuple(x + 0.5 * dt * k for x, k in zip(state, k2)))
        k4 = rhs(tuple(x + dt * k for x, k in zip(state, k3)))
        state = tuple(x + dt / 6 * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(state, k1, k2, k3, k4))
    a, b = state[0], state[1]
    if not geom.periodic_s and (np.any(a <= 0) or np.any(a >= geom.s_length)):
        raise FlowError("flow left the coordinate chart")
    return a, b, state[2:]


def flow_energy(geom, eps, h, u: Field, X: VectorFieldSpec, t: float, dw=None, n_phi: int = 32,
                steps: int | None = None) -> float:
    """E[u o Phi^{-t}] by the change of variables y = Phi^t(x)."""
    dw = dw or canonical()
    hp = as_prescribing(h)
    g2 = u.geom.with_resolution(u.geom.resolution[0], n_phi)
    _, uv = _lift(u, g2)
    g = grid_for(g2)
    S, PH = np.meshgrid(g.s, g.phi, indexing="ij")
    us, up = g.gradient(uv)
    n = steps or max(4, int(math.ceil(X.steps * abs(t) / X.t_max)))
    a, b, (d11, d12, d21, d22) = _rk4_flow(g2, X, S, PH, t, n)
    det = d11 * d22 - d12 * d21
    # du D^{-1}
    c1 = (us * d22 - up * d21) / det
    c2 = (-us * d12 + up * d11) / det
    ry = g2.rho(a)
    grad2 = c1 * c1 + c2 * c2 / ry ** 2
    dens = 0.5 * eps * grad2 + dw(uv) / eps + np.real(hp(a, b)) * uv
    jac = det * ry / g2.rho(S)
    return float(np.sum(g.weights * dens * jac))


def fd_inner_second_variation(geom, eps, h, u, X: VectorFieldSpec, dw=None, n_phi: int = 32, t=None):
    t = X.t_max / 2 if t is None else t
    E = lambda a: flow_energy(geom, eps, h, u, X, a, dw, n_phi)
    return (-E(2 * t) + 16 * E(t) - 30 * E(0.0) + 16 * E(-t) - E(-2 * t)) / (12 * t * t)


def inner_first_variation(geom, eps, h, u: Field, X: VectorFieldSpec, dw=None, n_phi: int = 32) -> float:
    """d/dt E[u o Phi^{-t}] at t = 0."""
    dw = dw or canonical()
    hp = as_prescribing(h)
    g2 = u.geom.with_resolution(u.geom.resolution[0], n_phi)
    _, uv = _lift(u, g2)
    g = grid_for(g2)
    S, PH = np.meshgrid(g.s, g.phi, indexing="ij")
    us, up = g.gradient(uv)
    p1, p2 = us, up / g2.rho(S)
    (X1, X2), (B11, B12, B21, B22) = frame_components(g2, X, S, PH)
    _, _, _, (g1, g2h) = _frame_hessian(g2, hp, S, PH)
    e = 0.5 * eps * (p1 * p1 + p2 * p2) + dw(uv) / eps + np.real(hp(S, PH)) * uv
    pBp = p1 * (B11 * p1 + B12 * p2) + p2 * (B21 * p1 + B22 * p2)
    return float(np.sum(g.weights * (-eps * pBp + uv * (X1 * g1 + X2 * g2h) + e * (B11 + B22))))


# ----------------------------------------------------- sharp functional A_h

@dataclass
class SharpHypersurface:
    """Union of parallels with Omega and the outward normal n = sigma d_s."""
    geom: ModelGeometry
    gamma: HypersurfaceSpec
    n_phi: int = 128

    @property
    def phi(self):
        return np.arange(self.n_phi) * self.geom.phi_period / self.n_phi

    @property
    def dphi(self):
        return self.geom.phi_period / self.n_phi

    def mean_curvature(self):
        """div_Sigma n per component (equals h' at critical points of A_h')."""
        return [sig * float(self.geom.rho(s0, 1) / self.geom.rho(s0)) for s0, sig in self.gamma.components]

    def area(self):
        return self.gamma.length(self.geom)


def first_variation_A(surface: SharpHypersurface, h_fn, X: VectorFieldSpec) -> float:
    """int_Sigma div_Sigma X - int_Sigma h X . n."""
    geom, hp = surface.geom, as_prescribing(h_fn)
    phi = surface.phi
    total = 0.0
    for s0, sig in surface.gamma.components:
        s = np.full_like(phi, s0)
        (X1, _), (_, _, _, B22) = frame_components(geom, X, s, phi)
        r0 = float(geom.rho(s0))
        total += surface.dphi * r0 * float(np.sum(B22 - np.real(hp(s, phi)) * sig * X1))
    return total


def second_variation_A(surface: SharpHypersurface, h_fn, X: VectorFieldSpec) -> float:
    """d^2/dt^2 A_h[Phi^t Sigma; Phi^t Omega] at t = 0 for curves on a surface.

    int_Sigma div_Sigma(nabla_X X) + (nabla_tau X . n)^2 - K(|X|^2 - (X . tau)^2)
    minus the bulk term int_Sigma div(h X) (X . n).
    """
    geom, hp = surface.geom, as_prescribing(h_fn)
    phi = surface.phi
    total = 0.0
    for s0, sig in surface.gamma.components:
        s = np.full_like(phi, s0)
        r0, r1 = float(geom.rho(s0)), float(geom.rho(s0, 1))
        (X1, X2), (B11, B12, B21, B22) = frame_components(geom, X, s, phi)
        ys, _ = covariant_self(geom, X, s, phi)
        K = geom.gauss_curvature(s)
        hv = np.real(hp(s, phi))
        xdh = X1 * hp.ds(s, phi) + X2 * hp.dphi(s, phi) / r0
        area = r1 / r0 * ys + B12 ** 2 - K * X1 ** 2
        bulk = (hv * (B11 + B22) + xdh) * sig * X1
        total += surface.dphi * r0 * float(np.sum(area - bulk))
    return total


def normal_derivative_term(surface: SharpHypersurface, X: VectorFieldSpec) -> float:
    """int_Sigma (nabla_n X . n)^2."""
    geom, phi = surface.geom, surface.phi
    total = 0.0
    for s0, _ in surface.gamma.components:
        s = np.full_like(phi, s0)
        _, (B11, _, _, _) = frame_components(geom, X, s, phi)
        total += surface.dphi * float(geom.rho(s0)) * float(np.sum(B11 ** 2))
    return total


def _antiderivative(geom, hp, s, phi, n=48):
    """F(s, phi) = int_0^s h rho ds', so that d(F dphi) = h dmu."""
    x, w = np.polynomial.legendre.leggauss(n)
    ss = 0.5 * s[..., None] * (1 + x)
    vals = np.real(hp(ss, phi[..., None])) * geom.rho(ss)
    return 0.5 * s * np.sum(w * vals, axis=-1)


def flow_A(surface: SharpHypersurface, h_fn, X: VectorFieldSpec, t: float, steps: int | None = None) -> float:
    """A_h of the flowed curves: spectral length minus the bulk integral by Stokes."""
    geom, hp = surface.geom, as_prescribing(h_fn)
    phi = surface.phi
    n = steps or max(4, int(math.ceil(X.steps * abs(t) / X.t_max)))
    k = 2 * np.pi * np.fft.fftfreq(phi.size, d=surface.dphi)
    if phi.size % 2 == 0:
        k[phi.size // 2] = 0.0
    total = 0.0
    for s0, sig in surface.gamma.components:
        a, b, _ = _rk4_flow(geom, X, np.full_like(phi, s0), phi.copy(), t, n)
        da = np.real(np.fft.ifft(1j * k * np.fft.fft(a)))
        db = 1.0 + np.real(np.fft.ifft(1j * k * np.fft.fft(b - phi)))
        length = surface.dphi * float(np.sum(np.sqrt(da ** 2 + geom.rho(a) ** 2 * db ** 2)))
        bulk = sig * surface.dphi * float(np.sum(_antiderivative(geom, hp, a, b) * db))
        total += length - bulk
    return total


def fd_first_variation_A(surface, h_fn, X: VectorFieldSpec, t=None):
    t = X.t_max / 2 if t is None else t
    A = lambda a: flow_A(surface, h_fn, X, a)
    return (-A(2 * t) + 8 * A(t) - 8 * A(-t) + A(-2 * t)) / (12 * t)


def fd_second_variation_A(surface, h_fn, X: VectorFieldSpec, t=None):
    t = X.t_max / 2 if t is None else t
    A = lambda a: flow_A(surface, h_fn, X, a)
    return (-A(2 * t) + 16 * A(t) - 30 * A(0.0) + 16 * A(-t) - A(-2 * t)) / (12 * t * t)


@dataclass
class ScalarSecondVariation:
    value: float
    critical: bool
    criticality_defect: float


def second_variation_A_scalar(surface: SharpHypersurface, h_fn, f, tol: float = 1e-6) -> ScalarSecondVariation:
    """int_Sigma |grad f|^2 - (|A|^2 + Ric(n, n) + d_n h) f^2 for X = f n.

    ``f`` is a callable of phi or an array of values on ``surface.phi``
    (one array per component, or one shared array).
    """
    geom, hp = surface.geom, as_prescribing(h_fn)
    phi = surface.phi
    k = 2 * np.pi * np.fft.fftfreq(phi.size, d=surface.dphi)
    if phi.size % 2 == 0:
        k[phi.size // 2] = 0.0
    total = 0.0
    defect = 0.0
    for idx, (s0, sig) in enumerate(surface.gamma.components):
        s = np.full_like(phi, s0)
        if callable(f):
            fv = np.asarray(f(phi), dtype=float) + 0 * phi
        else:
            arr = np.asarray(f, dtype=float)
            fv = arr[idx] if arr.ndim == 2 else arr
        df = np.real(np.fft.ifft(1j * k * np.fft.fft(fv)))
        r0, r1 = float(geom.rho(s0)), float(geom.rho(s0, 1))
        pot = (r1 / r0) ** 2 + geom.gauss_curvature(s) + sig * hp.ds(s, phi)
        total += surface.dphi * r0 * float(np.sum(df ** 2 / r0 ** 2 - pot * fv ** 2))
        defect = max(defect, float(np.abs(sig * r1 / r0 - np.real(hp(s, phi))).max()))
    return ScalarSecondVariation(total, defect <= tol, defect)


# ----------------------------------------------------------- diffuse measure

@dataclass
class DiffuseMeasure:
    density: Field
    mass: float
    discrepancy: Field

    @property
    def sup_discrepancy(self) -> float:
        return float(np.abs(self.discrepancy.values).max())


def diffuse_measure(geom, eps: float, u, dw: DoubleWell | None = None) -> DiffuseMeasure:
    dw = dw or canonical()
    g = grid_for(geom)
    uv = _vals(geom, u)
    us, up = g.gradient(uv)
    grad2 = us * us + g.metric_inverse_phi() * up * up
    dens = eps * grad2
    disc = 0.5 * eps * grad2 - dw(uv) / eps
    return DiffuseMeasure(Field(geom, dens, "density", eps), float(np.sum(g.weights * dens)),
                          Field(geom, disc, "discrepancy", eps))


# ----------------------------------------------------------- limit check

@dataclass
class LimitRow:
    eps: float
    diffuse: float
    sharp: float
    gap: float


@dataclass
class LimitTable:
    rows: list
    slope: float
    normal_term: float

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("eps,diffuse,sharp,gap\n")
            for r in self.rows:
                fh.write(",".join(repr(float(x)) for x in (r.eps, r.diffuse, r.sharp, r.gap)) + "\n")


def limit_comparison(solutions, h, X: VectorFieldSpec, surface: SharpHypersurface, e0: float,
                     dw: DoubleWell | None = None, n_phi: int = 32) -> LimitTable:
    """e0^-1 inner second variation against d2A_{2 h / e0} + int (nabla_n X . n)^2 on the limit."""
    if len(solutions) < 3:
        raise ValueError("limit_comparison needs at least three ladder solutions")
    hp = as_prescribing(h)
    hprime = hp.value * 2 / e0 if hp.is_constant else f"({hp.value})*{2 / e0!r}"
    nterm = normal_derivative_term(surface, X)
    sharp = second_variation_A(surface, hprime, X) + nterm
    rows = []
    for sol in solutions:
        u = sol.u if hasattr(sol, "u") else sol
        d = inner_second_variation(u.geom, u.eps, h, u, X, dw, n_phi) / e0
        rows.append(LimitRow(u.eps, d, sharp, abs(d - sharp)))
    slope = fit_slope([r.eps for r in rows], [r.gap for r in rows])
    return LimitTable(rows, slope, nterm)
