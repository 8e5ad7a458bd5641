"""Level sets, layer-height fits, expansion residuals and curvature estimates.

Layer analyses run along the normal geodesics of a reference curve made of
parallels. Each component carries a Gauss-Legendre fiber quadrature in the
Fermi coordinate z on (-eta, eta), where eta is the chart half-width.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .discretization import Field, grid_for
from .geometry import FermiChart, GeometryError, as_prescribing, latitude, band
from .profiles import CutoffConfig, DEFAULT_DELTA_STAR, ProfileSet, apply_cutoff


class RegularityError(RuntimeError):
    pass


class FitError(RuntimeError):
    pass


# ------------------------------------------------------------ assumptions

@dataclass
class AssumptionCheck:
    beta0: float
    c0: float
    min_eps_grad: float | None
    max_A: float | None
    max_eps_dA: float | None
    passed: bool
    witness: float | None = None


def check_structural_assumptions(geom, eps, u, thresholds=(0.1, 10.0)) -> AssumptionCheck:
    """eps |grad u| >= 1/c0 on {|u| < 1 - beta0} and the size of A = grad(grad u / |grad u|).

    For phi-independent fields the unit normal is +-d/ds, so |A| is the
    geodesic curvature |rho'/rho| of the parallels and eps |grad A| is eps
    times its s-derivative.
    """
    beta0, c0 = thresholds
    g = grid_for(geom)
    uv = u.values if isinstance(u, Field) else np.asarray(u)
    us, up = g.gradient(uv)
    grad = np.sqrt(us ** 2 + g.metric_inverse_phi() * up ** 2)
    mask = np.abs(uv) < 1.0 - beta0
    if not mask.any():
        return AssumptionCheck(beta0, c0, None, None, None, True)
    eg = eps * grad[mask]
    k = int(np.argmin(eg))
    S = np.repeat(g.s[:, None], g.shape[1], axis=1)[mask]
    if geom.kind == "torus":
        A = dA = np.zeros(S.shape)
    else:
        r, r1, r2 = geom.rho(S), geom.rho(S, 1), geom.rho(S, 2)
        A = np.abs(r1 / r)
        dA = np.abs(r2 / r - (r1 / r) ** 2)
    ok = bool(eg[k] >= 1.0 / c0)
    return AssumptionCheck(beta0, c0, float(eg[k]), float(A.max()), float(eps * dA.max()),
                           ok, None if ok else float(S[k]))


# ------------------------------------------------------------ level sets

@dataclass
class LevelCurve:
    s: np.ndarray          # s-coordinate of each point
    phi: np.ndarray        # phi-coordinate of each point
    normal_sign: np.ndarray  # sign of du/ds (phi-independent case), 0 otherwise
    H: np.ndarray          # mean curvature div(grad u / |grad u|)
    weights: np.ndarray    # arclength weights


@dataclass
class LevelSetCurve:
    tau: float
    components: list

    @property
    def H(self):
        return np.concatenate([c.H for c in self.components])


def _u_derivs(geom, uv, s):
    g = grid_for(geom)
    return g.interp_s(uv, s), g.interp_s(uv, s, 1), g.interp_s(uv, s, 2)


def extract_level_set(geom, u, tau: float, n_phi: int = 64, grad_floor: float = 1e-8) -> LevelSetCurve:
    """The level set {u = tau} with its mean curvature (Delta u - Hess u(nu, nu)) / |grad u|."""
    uv = u.values if isinstance(u, Field) else np.asarray(u)
    g = grid_for(geom)
    if uv.shape[1] > 1:
        return _level_set_2d(geom, uv, tau)
    col = uv[:, 0]
    s_nodes = g.s
    if geom.periodic_s:
        s_nodes = np.append(s_nodes, geom.s_length)
        col = np.append(col, col[0])
    f = col - tau
    comps = []
    phi = np.arange(n_phi) * geom.phi_period / n_phi
    F = lambda s: float(g.interp_s(uv[:, 0], s)) - tau
    roots = []
    for i in np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) <= 0):
        if f[i] == 0 and i > 0 and np.sign(f[i - 1]) * np.sign(f[i + 1]) > 0:
            continue
        a, b = s_nodes[i], s_nodes[i + 1]
        fa, fb = F(a), F(b)
        # a node on the level set can evaluate to round-off of either sign
        if fa * fb > 0:
            if min(abs(fa), abs(fb)) > 1e-12:
                continue
            root = a if abs(fa) < abs(fb) else b
        elif fa == 0 or fb == 0:
            root = a if fa == 0 else b
        else:
            root = brentq(F, a, b, xtol=1e-15, rtol=1e-15)
        root = float(root) % geom.s_length if geom.periodic_s else float(root)
        if any(abs(root - r) < 1e-10 for r in roots):
            continue
        roots.append(root)
        _, d1, d2 = _u_derivs(geom, uv[:, 0], np.array([root]))
        if abs(d1[0]) < grad_floor:
            raise RegularityError(f"|grad u| = {abs(d1[0]):.2e} on the level set {tau}")
        lap = d2[0] + geom.rho(root, 1) / geom.rho(root) * d1[0]
        H = (lap - d2[0]) / abs(d1[0])
        w = np.full(n_phi, float(geom.rho(root)) * geom.phi_period / n_phi)
        comps.append(LevelCurve(np.full(n_phi, root), phi, np.full(n_phi, np.sign(d1[0])),
                                np.full(n_phi, H), w))
    return LevelSetCurve(float(tau), comps)


def _level_set_2d(geom, uv, tau, newton: int = 4):
    """Contour extraction on full torus grids.

    Marching-squares points are moved onto the level set of the trigonometric
    interpolant by Newton steps along the gradient; the curvature
    div(grad u / |grad u|) is evaluated from exact interpolant derivatives.
    """
    import contourpy

    if geom.kind != "torus":
        raise GeometryError("two-dimensional level sets are supported on the torus")
    g = grid_for(geom)
    ext = lambda a: np.pad(a, ((0, 1), (0, 1)), mode="wrap")
    xs = np.append(g.s, geom.Lx)
    ys = np.append(g.phi, geom.Ly)
    gen = contourpy.contour_generator(ys, xs, ext(uv))
    d = lambda x, y, i, j: g.interp2(uv, x, y, i, j)
    comps = []
    for line in gen.lines(tau):
        pts = np.asarray(line)
        yy, xx = pts[:, 0].copy(), pts[:, 1].copy()
        for _ in range(newton):
            ux, uy = d(xx, yy, 1, 0), d(xx, yy, 0, 1)
            step = (d(xx, yy, 0, 0) - tau) / (ux * ux + uy * uy)
            xx, yy = xx - step * ux, yy - step * uy
        ux, uy = d(xx, yy, 1, 0), d(xx, yy, 0, 1)
        norm = np.hypot(ux, uy)
        if norm.min() < 1e-8:
            raise RegularityError(f"|grad u| = {norm.min():.2e} on the level set {tau}")
        uxx, uyy, uxy = d(xx, yy, 2, 0), d(xx, yy, 0, 2), d(xx, yy, 1, 1)
        H = (uxx * uy ** 2 - 2 * ux * uy * uxy + uyy * ux ** 2) / norm ** 3
        seg = np.hypot(np.diff(xx), np.diff(yy))
        w = np.zeros(len(xx))
        w[:-1] += seg / 2
        w[1:] += seg / 2
        comps.append(LevelCurve(xx, yy, np.zeros(len(xx)), H, w))
    return LevelSetCurve(float(tau), comps)


def zero_set_spec(geom, u):
    """HypersurfaceSpec of the phi-independent zero set {u = 0} (the curve Gamma)."""
    curve = extract_level_set(geom, u, 0.0)
    roots = sorted(float(c.s[0]) for c in curve.components)
    if geom.kind == "torus":
        if len(roots) != 2:
            raise FitError(f"expected two interface components, found {len(roots)}")
        return band(*roots)
    if len(roots) != 1:
        raise FitError(f"expected one interface component, found {len(roots)}")
    return latitude(roots[0])


# ----------------------------------------------------------------- fibers

@dataclass
class Fiber:
    s0: float
    sigma: float
    z: np.ndarray
    wz: np.ndarray
    rho: np.ndarray
    rho0: float


def fibers(chart: FermiChart, eps: float, n: int | None = None):
    eta = chart.z_max
    n = n or max(400, int(60 * eta / eps))
    x, w = np.polynomial.legendre.leggauss(n)
    out = []
    for c in chart.components:
        z, wz = eta * x, eta * w
        s = c.s0 + c.sigma * z
        out.append(Fiber(c.s0, c.sigma, z, wz, chart.geom.rho(s), float(chart.geom.rho(c.s0))))
    return out


def fiber_u(geom, u, fib: Fiber, der: int = 0):
    uv = u.values[:, 0] if isinstance(u, Field) else np.asarray(u).reshape(-1)
    return fib.sigma ** der * grid_for(geom).interp_s(uv, fib.s0 + fib.sigma * fib.z, der)


def _h_along(h_fn, chart, fib: Fiber, der: int = 0):
    hp = as_prescribing(h_fn)
    s = fib.s0 + fib.sigma * fib.z
    if der == 0:
        return hp(s)
    return fib.sigma * hp.ds(s)


# --------------------------------------------------------------- height fit

@dataclass
class LayerHeight:
    h: np.ndarray              # one value per component (phi-independent fields)
    residual: np.ndarray       # orthogonality residual / fiber mass
    c0_norm: float
    c1_surrogate: float


def _cutoffs(profiles: ProfileSet, eps, delta_star):
    cfg = CutoffConfig(eps, delta_star)
    return apply_cutoff(profiles.H, cfg), apply_cutoff(profiles.I, cfg)


def fit_layer_height(chart: FermiChart, profiles: ProfileSet, eps: float, u,
                     delta_star: float = DEFAULT_DELTA_STAR, h_fn=None,
                     orthogonal_to: str = "phi") -> LayerHeight:
    """Solve int r_h(z) Hbar'((z - h)/eps) dz = 0 for h on each fiber.

    ``orthogonal_to="phi"``: r_h = u - Hbar((z - h)/eps).
    ``orthogonal_to="phi_hat"``: r_h = u - Hbar - eps h_pres Ibar, which needs ``h_fn``.
    """
    if orthogonal_to not in ("phi", "phi_hat"):
        raise ValueError("orthogonal_to must be 'phi' or 'phi_hat'")
    if orthogonal_to == "phi_hat" and h_fn is None:
        raise ValueError("the phi_hat fit needs the prescribing function")
    Hb, Ib = _cutoffs(profiles, eps, delta_star)
    geom = chart.geom
    hs, res = [], []
    for fib in fibers(chart, eps):
        uz = fiber_u(geom, u, fib)
        hz = _h_along(h_fn, chart, fib) if orthogonal_to == "phi_hat" else np.zeros_like(uz)

        def G(h):
            t = (fib.z - h) / eps
            return float(fib.wz @ ((uz - Hb(t) - eps * hz * Ib(t)) * Hb(t, 1)))

        def dG(h):
            t = (fib.z - h) / eps
            r = uz - Hb(t) - eps * hz * Ib(t)
            dr = (Hb(t, 1) + eps * hz * Ib(t, 1)) / eps
            return float(fib.wz @ (dr * Hb(t, 1) - r * Hb(t, 2) / eps))

        lim = 0.3 * chart.z_max
        try:
            h = brentq(G, -lim, lim, xtol=1e-15)
        except ValueError:
            raise FitError("orthogonality functional does not change sign: interface outside the tube")
        for _ in range(3):
            d = dG(h)
            if d == 0:
                break
            h -= G(h) / d
        hs.append(h)
        res.append(abs(G(h)) / (eps * profiles.e0))
    hs = np.asarray(hs)
    return LayerHeight(hs, np.asarray(res), float(np.abs(hs).max()), float(np.abs(hs).max()))


# -------------------------------------------------------- expansion residuals

@dataclass
class LayerFit:
    h: np.ndarray
    residual: np.ndarray
    z: list
    phi: list
    phi_hat: list
    phi_tilde: list
    phi_tilde_alt: list
    norms: dict = field(default_factory=dict)


def _sup(arrs):
    return float(max(np.abs(a).max() for a in arrs))


def _c1(arrs, zs, eps):
    out = 0.0
    for a, z in zip(arrs, zs):
        d = np.abs(np.diff(a) / np.diff(z))
        out = max(out, float(np.abs(a).max() + eps * d.max()))
    return out


def expansion_coefficients(chart, h_fn, e0, comp_index):
    """(a_J, a_K, a_L) at z = 0 on one component."""
    c = chart.components[comp_index]
    k = int(np.argmin(np.abs(c.z)))
    hp = as_prescribing(h_fn)
    h0 = float(hp(c.s0))
    dzh = float(c.sigma * hp.ds(c.s0))
    aJ = c.A2[k] + c.ric[k] + 2.0 / e0 * dzh
    aK = -(h0 * c.H[k] + 2.0 * dzh)
    aL = 0.5 * h0 ** 2
    return aJ, aK, aL


def expansion_residuals(chart: FermiChart, profiles: ProfileSet, eps: float, h_fn, u,
                        h_fit: LayerHeight, delta_star: float = DEFAULT_DELTA_STAR) -> LayerFit:
    """phi = u - Hbar_eps, phi_hat = phi - eps h Ibar_eps and the second-order remainder.

    phi_tilde uses a_K = -(h H_Gamma + 2 dh/dz) and a_L = h^2 / 2; the
    alternative sign convention (-J, +K, -L) is reported as phi_tilde_alt.
    """
    Hb, Ib = _cutoffs(profiles, eps, delta_star)
    geom = chart.geom
    e0 = profiles.e0
    zs, P, Ph, Pt, Pa = [], [], [], [], []
    for k, fib in enumerate(fibers(chart, eps)):
        t = (fib.z - h_fit.h[k]) / eps
        uz = fiber_u(geom, u, fib)
        hz = _h_along(h_fn, chart, fib)
        phi = uz - Hb(t)
        phi_hat = phi - eps * hz * Ib(t)
        aJ, aK, aL = expansion_coefficients(chart, h_fn, e0, k)
        J, K, L = profiles.J(t), profiles.K(t), profiles.L(t)
        zs.append(fib.z)
        P.append(phi)
        Ph.append(phi_hat)
        Pt.append(phi_hat - eps ** 2 * (aJ * J + aK * K + aL * L))
        Pa.append(phi_hat - eps ** 2 * (-aJ * J - aK * K - aL * L))
    norms = {
        "phi_c0": _sup(P), "phi_hat_c0": _sup(Ph), "phi_tilde_c0": _sup(Pt),
        "phi_tilde_alt_c0": _sup(Pa),
        "phi_c1": _c1(P, zs, eps), "phi_hat_c1": _c1(Ph, zs, eps), "phi_tilde_c1": _c1(Pt, zs, eps),
        "h_c0": float(np.abs(h_fit.h).max()),
    }
    return LayerFit(h_fit.h, h_fit.residual, zs, P, Ph, Pt, Pa, norms)


# -------------------------------------------------------- curvature reports

def mean_curvature_report(curves_by_eps: dict, h_fn, e0: float, heights: dict | None = None,
                          charts: dict | None = None):
    """sup |H_tau - 2 h / e0| per (eps, tau) and the refined residual per eps.

    ``curves_by_eps`` maps eps -> list of LevelSetCurve. The refined residual
    uses the tau = 0 curve, the fitted height (constant along parallels, so
    its Gamma-Laplacian vanishes) and h on Gamma.
    """
    hp = as_prescribing(h_fn)
    rows, refined = [], {}
    for eps, curves in sorted(curves_by_eps.items(), reverse=True):
        for cv in curves:
            dev = 0.0
            for comp in cv.components:
                target = 2.0 / e0 * hp(comp.s, comp.phi)
                dev = max(dev, float(np.abs(comp.H - target).max()))
            rows.append({"eps": eps, "tau": cv.tau, "sup_dev": dev})
            if cv.tau == 0.0:
                refined[eps] = dev  # Delta_Gamma h = 0 for heights constant along parallels
    return {"rows": rows, "refined": refined,
            "slopes": {tau: fit_slope([r["eps"] for r in rows if r["tau"] == tau],
                                      [r["sup_dev"] for r in rows if r["tau"] == tau])
                       for tau in sorted({r["tau"] for r in rows})},
            "refined_slope": fit_slope(list(refined), list(refined.values()))}


def fit_slope(eps, values):
    eps = np.asarray(eps, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    ok = v > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[ok]), np.log(v[ok]), 1)[0])


def projected_equation_residual(chart: FermiChart, profiles: ProfileSet, eps: float, h_fn, u,
                                h_fit: LayerHeight, delta_star: float = DEFAULT_DELTA_STAR,
                                perturbation=None, n_phi: int = 64):
    """Residual of the fiber projection of the phi-equation onto Hbar'_eps.

    R = eps (e0bar + <phi, Hbar''>) (H_Gamma - Delta_Gamma h) - 2 eps h(., 0), with
    e0bar = eps^-1 int (Hbar'_eps)^2 dz and <phi, Hbar''> = eps^-1 int phi Hbar''_eps dz.
    ``perturbation`` = (delta, delta_phiphi), two callables of phi, adds a
    phi-dependent height perturbation to test the sensitivity of R.
    """
    Hb, _ = _cutoffs(profiles, eps, delta_star)
    geom = chart.geom
    hp = as_prescribing(h_fn)
    phis = np.arange(n_phi) * geom.phi_period / n_phi
    rows = []
    for k, fib in enumerate(fibers(chart, eps)):
        c = chart.components[k]
        H_gamma = float(c.H[int(np.argmin(np.abs(c.z)))])
        uz = fiber_u(geom, u, fib)
        if perturbation is None:
            dvals, dpp = np.zeros(n_phi), np.zeros(n_phi)
        else:
            dvals, dpp = perturbation[0](phis), perturbation[1](phis)
        r = np.empty(n_phi)
        for j in range(n_phi):
            hk = h_fit.h[k] + dvals[j]
            t = (fib.z - hk) / eps
            e0bar = float(fib.wz @ Hb(t, 1) ** 2) / eps
            pair = float(fib.wz @ ((uz - Hb(t)) * Hb(t, 2))) / eps
            lap_h = dpp[j] / fib.rho0 ** 2
            r[j] = eps * (e0bar + pair) * (H_gamma - lap_h) - 2 * eps * float(hp(fib.s0, phis[j]))
        rows.append(r)
    out = np.asarray(rows)
    return {"residual": out, "sup": float(np.abs(out).max()), "ratio": float(np.abs(out).max() / eps ** 2)}
