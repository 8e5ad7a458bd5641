"""Diffuse and sharp stability operators, spectra and the index lower-bound lemmas.

For phi-independent u the diffuse form
    Q(v, w) = int eps grad v . grad w + eps^-1 W''(u) v w
splits over Fourier modes in phi; every block is a dense symmetric matrix.
Modes m >= 1 carry multiplicity two (cos and sin).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretization import Field, grid_for
from .geometry import FermiChart, as_prescribing, jacobi_potential
from .layer import LayerHeight, _cutoffs, fiber_u, fibers, fit_slope
from .potential import DoubleWell, canonical
from .profiles import DEFAULT_DELTA_STAR, ProfileSet, cheb_diff, cheb_nodes


class EigenError(RuntimeError):
    pass


class DecompositionError(RuntimeError):
    pass


# ------------------------------------------------------------------ operators

@dataclass
class DiffuseOperator:
    geom: object
    eps: float
    potential: np.ndarray       # W''(u) at the nodes
    symmetric: bool             # u independent of phi

    def block(self, m: int):
        """(K_m, basis) with K_m = eps S_m + eps^-1 V_m in an L2-orthonormal basis."""
        g = grid_for(self.geom)
        S, V, basis = g.mode_problem(m, self.potential[:, 0])
        if g.kind == "torus":
            scale = math.sqrt(g.weights[0, 0] * g.shape[1])  # nodal basis with uniform mass
            return self.eps * S + V / self.eps, basis / scale
        return self.eps * S + V / self.eps, basis

    def apply(self, v):
        """-eps Lap v + eps^-1 W''(u) v for a nodal field (full grid)."""
        g = grid_for(self.geom)
        vv = v.values if isinstance(v, Field) else np.asarray(v).reshape(g.shape)
        return -self.eps * g.laplacian(vv) + self.potential * vv / self.eps

    def form(self, v, w):
        g = grid_for(self.geom)
        return float(np.sum(g.weights * w * self.apply(v)))


def assemble_diffuse(geom, eps: float, u, dw: DoubleWell | None = None) -> DiffuseOperator:
    dw = dw or canonical()
    uv = u.values if isinstance(u, Field) else np.asarray(u).reshape(grid_for(geom).shape)
    return DiffuseOperator(geom, eps, dw(uv, 2), bool(np.ptp(uv, axis=1).max() == 0 if uv.shape[1] > 1 else True))


@dataclass
class SharpOperator:
    """-Delta_Gamma - V on each circle component, Fourier collocation in phi."""
    rho0: list
    potentials: list            # values of V on the phi nodes per component
    period: float

    def matrix(self, k: int):
        V = self.potentials[k]
        n = V.size
        kk = 2 * np.pi * np.fft.fftfreq(n, d=self.period / n)
        D2 = np.real(np.fft.ifft(-(kk ** 2)[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0))
        return -D2 / self.rho0[k] ** 2 - np.diag(V)


def assemble_sharp(chart: FermiChart, h, e0: float, n_phi: int = 256) -> SharpOperator:
    phi = np.arange(n_phi) * chart.geom.phi_period / n_phi
    pots = jacobi_potential(chart, h, e0, phi)
    rho0 = [float(chart.geom.rho(c.s0)) for c in chart.components]
    return SharpOperator(rho0, [np.asarray(p, dtype=float) for p in pots], chart.geom.phi_period)


# ------------------------------------------------------------------ spectra

@dataclass
class SpectrumReport:
    tag: str
    eps: float | None
    values: np.ndarray          # raw eigenvalues, ascending
    scaled: np.ndarray          # eps^-1 lambda for diffuse, lambda for sharp
    modes: list                 # (block index m or component, multiplicity slot)
    vectors: list               # eigenvector per entry, in the block basis
    residuals: np.ndarray
    zero_threshold: float
    index: int
    nullity: int
    noise: float = 0.0          # round-off level of the scaled eigenvalues

    def to_json(self):
        return {"tag": self.tag, "eps": self.eps, "values": self.values.tolist(),
                "scaled": self.scaled.tolist(), "modes": [list(m) for m in self.modes],
                "residuals": self.residuals.tolist(), "zero_threshold": self.zero_threshold,
                "index": self.index, "nullity": self.nullity, "noise": self.noise}


def _counts(scaled, thr):
    return int(np.sum(scaled < -thr)), int(np.sum(np.abs(scaled) <= thr))


def eigs(op, count: int, zero_threshold: float | None = None, max_modes: int = 64) -> SpectrumReport:
    if count < 1:
        raise ValueError("count must be at least 1")
    if isinstance(op, SharpOperator):
        return _eigs_sharp(op, count, 1e-6 if zero_threshold is None else zero_threshold)
    thr = 10 * op.eps ** 2 if zero_threshold is None else zero_threshold
    if not op.symmetric:
        return _eigs_full(op, count, thr)
    entries = []
    noise = 0.0
    for m in range(max_modes + 1):
        K, basis = op.block(m)
        K = 0.5 * (K + K.T)
        lam, V = np.linalg.eigh(K)
        noise = max(noise, 50 * np.finfo(float).eps * np.abs(lam).max() / op.eps)
        res = np.linalg.norm(K @ V - V * lam, axis=0) / np.linalg.norm(V, axis=0)
        mult = 1 if m == 0 else 2
        for j in range(min(count, lam.size)):
            for slot in range(mult):
                entries.append((lam[j], (m, slot), V[:, j], res[j]))
        entries.sort(key=lambda e: e[0])
        if len(entries) >= count and lam[0] > entries[count - 1][0]:
            break
    else:
        raise EigenError("mode sweep did not close; increase max_modes")
    entries = entries[:count]
    vals = np.array([e[0] for e in entries])
    res = np.array([e[3] for e in entries])
    if np.any(res > 1e-8 * max(1.0, np.abs(vals).max())):
        raise EigenError(f"eigen residuals too large: {res.max():.2e}")
    scaled = vals / op.eps
    idx, nul = _counts(scaled, thr)
    return SpectrumReport("diffuse", op.eps, vals, scaled, [e[1] for e in entries],
                          [e[2] for e in entries], res, thr, idx, nul, noise)


def _eigs_full(op: DiffuseOperator, count, thr):
    """Full-grid path (cross-validation at coarse resolution), Lanczos on the weighted form."""
    from scipy.sparse.linalg import eigsh

    g = grid_for(op.geom)
    n = int(np.prod(g.shape))
    w = np.sqrt(g.weights.ravel())
    eye = np.eye(n)
    cols = np.stack([op.apply(eye[:, j].reshape(g.shape)).ravel() for j in range(n)], axis=1)
    K = (w[:, None] * cols) / w[None, :]
    K = 0.5 * (K + K.T)
    lam, V = eigsh(K, k=count, which="SA", tol=1e-13)
    order = np.argsort(lam)
    lam, V = lam[order], V[:, order]
    res = np.linalg.norm(K @ V - V * lam, axis=0)
    scaled = lam / op.eps
    idx, nul = _counts(scaled, thr)
    noise = 50 * np.finfo(float).eps * np.abs(K).sum(axis=1).max() / op.eps
    return SpectrumReport("diffuse", op.eps, lam, scaled, [(-1, j) for j in range(count)],
                          [V[:, j] / w for j in range(count)], res, thr, idx, nul, noise)


def _eigs_sharp(op: SharpOperator, count, thr):
    entries = []
    for k in range(len(op.potentials)):
        A = op.matrix(k)
        A = 0.5 * (A + A.T)
        lam, V = np.linalg.eigh(A)
        res = np.linalg.norm(A @ V - V * lam, axis=0)
        entries += [(lam[j], (k, j), V[:, j], res[j]) for j in range(lam.size)]
    entries.sort(key=lambda e: e[0])
    entries = entries[:count]
    vals = np.array([e[0] for e in entries])
    idx, nul = _counts(vals, thr)
    return SpectrumReport("sharp", None, vals, vals, [e[1] for e in entries], [e[2] for e in entries],
                          np.array([e[3] for e in entries]), thr, idx, nul)


# ---------------------------------------------------------------- comparison

@dataclass
class ComparisonTable:
    rows: list
    slopes: dict
    status: dict
    index_agree: bool
    nullity_agree: bool
    truncated: bool

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("eps,ell,diffuse,sharp,gap,noise\n")
            for r in self.rows:
                fh.write(",".join([repr(float(r["eps"])), str(r["ell"])]
                                  + [repr(float(r[k])) for k in ("diffuse", "sharp", "gap", "noise")]) + "\n")


def compare_spectra(diffuse: list, sharp: SpectrumReport, l_max: int) -> ComparisonTable:
    """Per-ell gaps |eps^-1 lambda_ell - lambda_ell(sharp)| and log-log slopes.

    Gaps at or below the eigenvalue round-off level of a ladder entry carry
    no rate information; an ell whose gaps all sit at that floor is reported
    with status "floor" instead of a slope.
    """
    if len(diffuse) < 3:
        raise ValueError("compare_spectra needs at least three ladder entries")
    n = min(l_max, sharp.values.size, *(d.values.size for d in diffuse))
    rows, slopes, status = [], {}, {}
    for ell in range(1, n + 1):
        eps, gaps, floors = [], [], []
        for d in diffuse:
            gap = abs(d.scaled[ell - 1] - sharp.values[ell - 1])
            rows.append({"eps": d.eps, "ell": ell, "diffuse": float(d.scaled[ell - 1]),
                         "sharp": float(sharp.values[ell - 1]), "gap": float(gap), "noise": d.noise})
            eps.append(d.eps)
            gaps.append(gap)
            floors.append(d.noise)
        above = [g > f for g, f in zip(gaps, floors)]
        if sum(above) >= 2:
            e = [x for x, a in zip(eps, above) if a]
            g = [x for x, a in zip(gaps, above) if a]
            slopes[ell] = fit_slope(e, g)
            status[ell] = "fitted"
        else:
            slopes[ell] = float("nan")
            status[ell] = "floor"
    last = diffuse[-1]
    return ComparisonTable(rows, slopes, status, last.index == sharp.index,
                           last.nullity == sharp.nullity, n < l_max)


# ------------------------------------------------------------- fiber toolkit

def fiber_eigenfunction(profiles: ProfileSet, k: int = 1, N: int = 400):
    """k-th eigenpair of -d^2/dt^2 + W''(H) on the line (Dirichlet at +-T)."""
    T = profiles.H.T
    t = T * cheb_nodes(N)
    D = cheb_diff(N) / T
    A = -(D @ D) + np.diag(profiles.well(profiles.H(t), 2))
    A = A[1:-1, 1:-1]
    lam, V = np.linalg.eig(A)
    order = np.argsort(lam.real)
    lam, V = lam.real[order], V.real[:, order]
    v = np.concatenate([[0.0], V[:, k], [0.0]])
    from numpy.polynomial import chebyshev as C
    from .profiles import cheb_coeffs

    c = cheb_coeffs(v)
    sign = np.sign(C.chebval(1.0 / T, c)) or 1.0

    def psi(s, der=0):
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        inside = np.abs(s) <= T
        cc = c
        for _ in range(der):
            cc = C.chebder(cc) / T
        out[inside] = sign * C.chebval(s[inside] / T, cc)
        return out

    norm = math.sqrt(float(np.sum(_cc_weights(N, T) * psi(t) ** 2)))
    return lam[k], (lambda s, der=0: psi(s, der) / norm)


def _cc_weights(N, T):
    from .profiles import clenshaw_curtis

    return clenshaw_curtis(N) * T


@dataclass
class Tube:
    """Fiber quadrature plus the profile Xi = Hbar'_eps + eps h Ibar'_eps on each fiber."""
    fibers: list
    xi: list
    xi_z: list
    u: list
    eps: float


def make_tube(chart: FermiChart, profiles: ProfileSet, eps: float, h_fn, h_fit: LayerHeight, u,
              delta_star: float = DEFAULT_DELTA_STAR, n: int | None = None) -> Tube:
    Hb, Ib = _cutoffs(profiles, eps, delta_star)
    hp = as_prescribing(h_fn)
    fibs = fibers(chart, eps, n)
    xi, xiz, us = [], [], []
    for k, fib in enumerate(fibs):
        t = (fib.z - h_fit.h[k]) / eps
        s = fib.s0 + fib.sigma * fib.z
        hz, dhz = hp(s), fib.sigma * hp.ds(s)
        xi.append(Hb(t, 1) + eps * hz * Ib(t, 1))
        xiz.append(Hb(t, 2) / eps + eps * dhz * Ib(t, 1) + hz * Ib(t, 2))
        us.append(fiber_u(chart.geom, u, fib))
    return Tube(fibs, xi, xiz, us, eps)


# ------------------------------------------------------------- decomposition

@dataclass
class NormalDecomposition:
    w_par: np.ndarray           # (components, n_phi)
    w_perp: list                # per component array (n_phi, n_z)
    xi: list
    reconstruction_error: float
    orthogonality: float


def _sample_on_tube(tube: Tube, geom, w):
    """Values of a Field on the fiber nodes, one (n_phi, n_z) array per component."""
    g = grid_for(geom)
    vals = w.values if isinstance(w, Field) else np.asarray(w).reshape(g.shape)
    return [np.stack([g.interp_s(vals[:, j], fib.s0 + fib.sigma * fib.z) for j in range(vals.shape[1])])
            for fib in tube.fibers]


def decompose(tube: Tube, w, geom=None) -> NormalDecomposition:
    """w = w_par Xi + w_perp with int w_perp Xi dz = 0 on every fiber.

    ``w`` is a Field (sampled on the fibers) or a list holding one array of
    shape (n_phi, n_z) per component.
    """
    if isinstance(w, Field):
        w = _sample_on_tube(tube, geom or w.geom, w)
    pars, perps = [], []
    rec = orth = 0.0
    for fib, xi, wk in zip(tube.fibers, tube.xi, w):
        wk = np.atleast_2d(wk)
        mass = float(fib.wz @ xi ** 2)
        if mass < 1e-8:
            raise DecompositionError(f"degenerate fiber norm {mass:.2e}")
        par = (wk @ (fib.wz * xi)) / mass
        perp = wk - par[:, None] * xi[None, :]
        rec = max(rec, float(np.abs(par[:, None] * xi + perp - wk).max()))
        orth = max(orth, float(np.abs(perp @ (fib.wz * xi)).max() / math.sqrt(mass)))
        pars.append(par)
        perps.append(perp)
    return NormalDecomposition(np.asarray(pars), perps, tube.xi, rec, orth)


def l2_split(tube: Tube, dec: NormalDecomposition, period: float):
    """(int_U w^2, eps int_Gamma w_par^2 * (fiber mass / eps), int_U w_perp^2) with the chart volume.

    Returns the total, the parallel term and the perpendicular term, plus the
    measured parallel coefficient int Xi^2 rho dz / (eps rho0), whose limit is e0.
    """
    total = par_t = perp_t = 0.0
    coeff = []
    for fib, xi, par, perp in zip(tube.fibers, tube.xi, dec.w_par, dec.w_perp):
        dphi = period / par.size
        w = par[:, None] * xi[None, :] + perp
        total += dphi * float(np.sum((w ** 2) @ (fib.wz * fib.rho)))
        perp_t += dphi * float(np.sum((perp ** 2) @ (fib.wz * fib.rho)))
        c = float(fib.wz @ (xi ** 2 * fib.rho)) / (tube.eps * fib.rho0)
        coeff.append(c)
        par_t += tube.eps * c * dphi * fib.rho0 * float(np.sum(par ** 2))
    return {"total": total, "parallel": par_t, "perpendicular": perp_t, "cross": total - par_t - perp_t,
            "parallel_coefficient": coeff}


# ------------------------------------------------------------- lemma suite

BANK = {
    "1": (lambda p: np.ones_like(p), lambda p: np.zeros_like(p)),
    "cos": (np.cos, lambda p: -np.sin(p)),
    "sin": (np.sin, np.cos),
    "cos2": (lambda p: np.cos(2 * p), lambda p: -2 * np.sin(2 * p)),
}


def _angular(f, n=256, period=2 * np.pi):
    p = np.arange(n) * period / n
    fv, dv = f[0](p), f[1](p)
    w = period / n
    return p, fv, dv, w


def _tube_form(tube: Tube, dw, a_fn, b_fn, rho_weight=True):
    """Q^U for separable fields a(phi) A(z) and b(phi) B(z), returned by parts.

    a_fn, b_fn: (A, A_z) per component. Returns per component the pair
    (int (eps A_z B_z + eps^-1 W'' A B) rho dz, int eps A B / rho dz).
    """
    out = []
    for k, fib in enumerate(tube.fibers):
        A, Az = a_fn(k)
        B, Bz = b_fn(k)
        pot = dw(tube.u[k], 2)
        radial = float(fib.wz @ ((tube.eps * Az * Bz + pot * A * B / tube.eps) * fib.rho))
        ang = float(fib.wz @ (tube.eps * A * B / fib.rho))
        out.append((radial, ang))
    return out


def _separable_q(parts, f, g, period):
    p, fv, fd, w = _angular(f, period=period)
    _, gv, gd, _ = _angular(g, period=period)
    return sum(rad * w * float(fv @ gv) + ang * w * float(fd @ gd) for rad, ang in parts)


def sharp_form(chart: FermiChart, h, e0, f, g):
    """Q_Gamma(f, g) summed over components, for functions of phi."""
    period = chart.geom.phi_period
    p, fv, fd, w = _angular(f, period=period)
    _, gv, gd, _ = _angular(g, period=period)
    pots = jacobi_potential(chart, h, e0, p)
    total = 0.0
    for c, V in zip(chart.components, pots):
        r0 = float(chart.geom.rho(c.s0))
        total += w * r0 * float(np.sum(fd * gd / r0 ** 2 - V * fv * gv))
    return total


def lemma_suite(chart: FermiChart, profiles: ProfileSet, eps: float, u, h_fn, h_fit: LayerHeight,
                bank: dict | None = None, delta_star: float = DEFAULT_DELTA_STAR):
    """Residuals r57, r58 and r59 for the fixed test bank on the tube."""
    bank = bank or BANK
    dw = profiles.well
    e0 = profiles.e0
    tube = make_tube(chart, profiles, eps, h_fn, h_fit, u, delta_star)
    period = chart.geom.phi_period
    lam1, psi = fiber_eigenfunction(profiles)

    def xi_pair(k):
        return tube.xi[k], tube.xi_z[k]

    omegas = []
    for k, fib in enumerate(tube.fibers):
        t = (fib.z - h_fit.h[k]) / eps
        ps, psz = psi(t), psi(t, 1) / eps
        xi, xiz = tube.xi[k], tube.xi_z[k]
        c = float(fib.wz @ (ps * xi)) / float(fib.wz @ xi ** 2)
        omegas.append((ps - c * xi, psz - c * xiz))

    def om_pair(k):
        return omegas[k]

    xx = _tube_form(tube, dw, xi_pair, xi_pair)
    xo = _tube_form(tube, dw, xi_pair, om_pair)
    oo = _tube_form(tube, dw, om_pair, om_pair)
    nn = []
    for k, fib in enumerate(tube.fibers):
        A, Az = omegas[k]
        nn.append((float(fib.wz @ ((eps * Az ** 2 + A ** 2 / eps) * fib.rho)),
                   float(fib.wz @ (eps * A ** 2 / fib.rho))))
    rows = {}
    for name, f in bank.items():
        q = _separable_q(xx, f, f, period)
        qg = sharp_form(chart, h_fn, e0, f, f)
        p, fv, fd, w = _angular(f, period=period)
        h1 = sum(w * float(chart.geom.rho(c.s0)) * float(np.sum(fv ** 2 + fd ** 2 / float(chart.geom.rho(c.s0)) ** 2))
                 for c in chart.components)
        # omega with the same angular factor
        q58 = _separable_q(xo, f, f, period)
        q59 = _separable_q(oo, f, f, period)
        n59 = _separable_q(nn, f, f, period)
        rows[name] = {
            "Q_diffuse": q, "Q_sharp": qg,
            "r57": abs(q - eps ** 2 * e0 * qg),
            "r58": abs(q58),
            "r58_normalized": abs(q58) / (eps * math.sqrt(h1) * math.sqrt(n59)) if n59 > 0 else 0.0,
            "r59": q59 / n59 if n59 > 0 else 0.0,
        }
    return {"eps": eps, "fiber_eigenvalue": lam1, "rows": rows}


# ---------------------------------------------------------- localization

def localization_check(report: SpectrumReport, op: DiffuseOperator, gamma, tube_width: float,
                       Lam: float, n: int = 400):
    """int_{M \\ U} w^2 / int_U w^2 for eigenfields with eps^-1 lambda <= Lam.

    U = {|s - s0| < tube_width} around every component. Integrals use
    composite Gauss-Legendre rules on the s-intervals with the eigenfield
    evaluated spectrally from its block coefficients.
    """
    geom = op.geom
    g = grid_for(geom)
    comps = sorted(s0 for s0, _ in gamma.components)
    breaks = [0.0]
    for s0 in comps:
        breaks += [s0 - tube_width, s0 + tube_width]
    breaks.append(geom.s_length)
    if geom.periodic_s:
        breaks = [b % geom.s_length for b in breaks]
        breaks = sorted(set(breaks + [0.0, geom.s_length]))
    x, w = np.polynomial.legendre.leggauss(n)
    out = []
    for lam, scaled, mode, vec in zip(report.values, report.scaled, report.modes, report.vectors):
        if scaled > Lam:
            continue
        m = mode[0]
        inside = outside = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            if b <= a:
                continue
            s = 0.5 * (b - a) * x + 0.5 * (a + b)
            ws = 0.5 * (b - a) * w
            vals = _eval_mode(g, m, vec, s)
            mid = 0.5 * (a + b)
            d = np.min([abs((mid - c + geom.s_length / 2) % geom.s_length - geom.s_length / 2)
                        if geom.periodic_s else abs(mid - c) for c in comps])
            mass = float(ws @ (vals ** 2 * geom.rho(s)))
            if d < tube_width:
                inside += mass
            else:
                outside += mass
        out.append({"scaled": float(scaled), "mode": list(mode), "ratio": outside / inside})
    return out


def _eval_mode(g, m, vec, s):
    if g.kind == "torus":
        return g.interp_s(vec, s)
    from .discretization import assoc_legendre

    P = assoc_legendre(m, g.L, np.cos(s / g.R))[0]
    return P @ vec / g.R
