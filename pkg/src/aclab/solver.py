"""Critical points of E[u] = int eps/2 |grad u|^2 + W(u)/eps + h u by Newton continuation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

from .discretization import Field, grad_dot, grid_for, integrate
from .geometry import HypersurfaceSpec, ModelGeometry, as_prescribing
from .potential import DoubleWell
from .profiles import CutoffConfig, DEFAULT_DELTA_STAR, ProfileSet, apply_cutoff

log = logging.getLogger(__name__)


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, last=None, history=None):
        super().__init__(msg)
        self.last = last
        self.history = history or []


class BifurcationError(RuntimeError):
    pass


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 60
    armijo: float = 1e-4
    min_step: float = 2.0 ** -30
    cond_limit: float = 1e8
    ladder: tuple = (0.2, 0.1, 0.05, 0.025)
    beta0: float = 0.1
    c0: float = 10.0
    h_bound: float = 10.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        lad = list(self.ladder)
        if any(b >= a for a, b in zip(lad, lad[1:])):
            raise ValueError("epsilon ladder must be strictly decreasing")


@dataclass
class SolveResult:
    u: Field
    eps: float
    iterations: int
    residual: float
    projected: int
    history: list = field(default_factory=list)
    assumptions: object = None


def resolution_for(geom: ModelGeometry, eps: float, n_phi: int = 1) -> ModelGeometry:
    """Grid size resolving a layer of width eps to round-off on the model surfaces."""
    if geom.kind == "torus":
        n = max(128, int(math.ceil(4.5 * geom.Lx / eps)))
        n = 1 << int(math.ceil(math.log2(n)))
    else:
        n = max(96, int(16.0 * geom.R / eps) + 32)
    return geom.with_resolution(n, n_phi)


def prescribing_values(geom: ModelGeometry, h) -> np.ndarray:
    g = grid_for(geom)
    if isinstance(h, Field):
        return h.values
    hp = as_prescribing(h)
    S, PH = np.meshgrid(g.s, g.phi, indexing="ij")
    return np.asarray(hp(S, PH), dtype=float)


def initial_ansatz(geom: ModelGeometry, gamma: HypersurfaceSpec, eps: float,
                   profiles: ProfileSet, delta_star: float = DEFAULT_DELTA_STAR) -> Field:
    """u0 = Hbar(d / eps) with d the signed distance to Gamma (negative in Omega)."""
    gamma.validate(geom)
    g = grid_for(geom)
    Hbar = apply_cutoff(profiles.H, CutoffConfig(eps, delta_star))
    d = gamma.signed_distance(geom, g.s)
    vals = np.repeat(Hbar(d / eps)[:, None], g.shape[1], axis=1)
    return Field(geom, vals, "ansatz", eps)


def residual(geom, eps, dw: DoubleWell, hv, u):
    g = grid_for(geom)
    return eps ** 2 * g.laplacian(u) - dw(u, 1) - eps * hv


def _lap_matrix(geom):
    key = ("lap", geom)
    if key not in _MATRIX_CACHE:
        if len(_MATRIX_CACHE) > 6:
            _MATRIX_CACHE.clear()
        _MATRIX_CACHE[key] = grid_for(geom).laplacian_matrix()
    return _MATRIX_CACHE[key]


_MATRIX_CACHE: dict = {}


def _newton_step(geom, eps, dw, u, F, cond_limit):
    """Solve J du = -F with J = eps^2 Lap - W''(u); project near-kernel modes if needed."""
    g = grid_for(geom)
    L = _lap_matrix(geom)
    J = eps ** 2 * L - np.diag(dw(u.ravel(), 2))
    lu, piv = lu_factor(J)
    anorm = np.abs(J).sum(axis=0).max()
    rcond = lapack.dgecon(lu, anorm, norm="1")[0]
    if rcond * cond_limit >= 1.0:
        return -lu_solve((lu, piv), F.ravel()).reshape(u.shape), 0
    # J is self-adjoint for the quadrature weights; symmetrize and drop small modes
    w = np.sqrt(g.weights.ravel())
    Sm = (w[:, None] * J) / w[None, :]
    Sm = 0.5 * (Sm + Sm.T)
    lam, V = np.linalg.eigh(Sm)
    keep = np.abs(lam) > np.abs(lam).max() / cond_limit
    rhs = V.T @ (w * F.ravel())
    du = V[:, keep] @ (rhs[keep] / lam[keep])
    return -(du / w).reshape(u.shape), int((~keep).sum())


def solve_critical_point(geom: ModelGeometry, eps: float, h, u0: Field, opts: SolveOptions | None = None,
                         dw: DoubleWell | None = None) -> SolveResult:
    from .potential import canonical

    opts = opts or SolveOptions()
    dw = dw or canonical()
    hv = prescribing_values(geom, h)
    if np.abs(hv).max() > opts.h_bound:
        raise ValueError(f"|h| exceeds the configured bound {opts.h_bound}")
    u = np.array(u0.values, dtype=float)
    F = residual(geom, eps, dw, hv, u)
    history = [{"iteration": 0, "residual": float(np.abs(F).max()), "damping": 0.0}]
    projected = 0
    w = grid_for(geom).weights

    def merit(F):
        return float(np.sum(w * F * F))

    for it in range(1, opts.max_iter + 1):
        if np.abs(F).max() <= opts.tol:
            break
        du, nproj = _newton_step(geom, eps, dw, u, F, opts.cond_limit)
        projected = max(projected, nproj)
        m0, t = merit(F), 1.0
        while True:
            un = u + t * du
            Fn = residual(geom, eps, dw, hv, un)
            if merit(Fn) <= (1 - 2 * opts.armijo * t) * m0 or np.abs(Fn).max() <= opts.tol:
                break
            t *= 0.5
            if t < opts.min_step:
                raise NonConvergenceError(f"line search failed at iteration {it}",
                                          Field(geom, u, "last", eps), history)
        u, F = un, Fn
        history.append({"iteration": it, "residual": float(np.abs(F).max()), "damping": t})
        log.debug("eps=%g it=%d res=%.3e step=%g", eps, it, history[-1]["residual"], t)
    else:
        if np.abs(F).max() > opts.tol:
            raise NonConvergenceError(f"no convergence in {opts.max_iter} iterations "
                                      f"(residual {np.abs(F).max():.3e})", Field(geom, u, "last", eps), history)
    sol = Field(geom, u, "u", eps)
    from .layer import check_structural_assumptions

    check = check_structural_assumptions(geom, eps, sol, (opts.beta0, opts.c0))
    return SolveResult(sol, eps, len(history) - 1, float(np.abs(F).max()), projected, history, check)


def transfer(u: Field, geom: ModelGeometry) -> Field:
    """Spectral interpolation of a phi-independent field onto another resolution."""
    if u.values.shape[1] != 1:
        raise ValueError("transfer supports phi-independent fields")
    g = grid_for(geom)
    vals = u.grid.interp_s(u.values[:, 0], g.s)
    return Field(geom, np.repeat(vals[:, None], g.shape[1], axis=1), u.name, u.eps)


def solve_ladder(geom: ModelGeometry, gamma: HypersurfaceSpec, h, profiles: ProfileSet,
                 ladder, opts: SolveOptions | None = None, delta_star: float = DEFAULT_DELTA_STAR):
    """Continuation down the ladder; each solve is warm-started from the previous one."""
    opts = opts or SolveOptions()
    out = []
    prev = None
    for eps in ladder:
        ge = resolution_for(geom, eps)
        if prev is None:
            u0 = initial_ansatz(ge, gamma, eps, profiles, delta_star)
        else:
            u0 = transfer(prev.u, ge)
        try:
            res = solve_critical_point(ge, eps, h, u0, opts, profiles.well)
        except NonConvergenceError:
            if prev is None:
                raise
            u0 = initial_ansatz(ge, gamma, eps, profiles, delta_star)
            res = solve_critical_point(ge, eps, h, u0, opts, profiles.well)
        out.append(res)
        prev = res
    return out


@dataclass
class EnergyReport:
    total: float
    gradient: float
    potential: float
    forcing: float


def energy(geom: ModelGeometry, eps: float, h, u, dw: DoubleWell | None = None) -> EnergyReport:
    from .potential import canonical

    dw = dw or canonical()
    uv = u.values if isinstance(u, Field) else np.asarray(u, dtype=float).reshape(grid_for(geom).shape)
    hv = prescribing_values(geom, h)
    grad = integrate(geom, 0.5 * eps * grad_dot(geom, uv, uv))
    pot = integrate(geom, dw(uv) / eps)
    forc = integrate(geom, hv * uv)
    return EnergyReport(grad + pot + forc, grad, pot, forc)
