"""Grids, fields, quadrature and differential operators on the model surfaces.

Torus: Fourier collocation on a uniform grid (spectral).
Sphere: Gauss-Legendre nodes in cos(theta) times a uniform phi grid, with a
Galerkin Laplacian in normalized associated Legendre functions (spectral).
A grid with a single phi node holds fields independent of phi.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, ModelGeometry, make_geometry


# --------------------------------------------------------------- Legendre

def assoc_legendre(m: int, L: int, x):
    """Normalized associated Legendre functions and their theta-derivatives.

    Columns are l = m..L; the functions are orthonormal on [-1, 1] in x = cos(theta).
    Returns (P, dP/dtheta, d2P/dtheta2) evaluated at the interior points x.
    """
    x = np.asarray(x, dtype=float)
    sin = np.sqrt(1.0 - x * x)
    n = L - m + 1
    P = np.zeros((x.size, max(n, 0)))
    if n <= 0:
        return P, P.copy(), P.copy()
    pmm = np.full(x.size, 1.0 / math.sqrt(2.0))
    for k in range(1, m + 1):
        pmm = pmm * math.sqrt((2 * k + 1) / (2 * k)) * sin
    P[:, 0] = pmm
    if n > 1:
        P[:, 1] = math.sqrt(2 * m + 3) * x * pmm
    for j in range(2, n):
        l = m + j
        a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
        b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
        P[:, j] = a * (x * P[:, j - 1] - b * P[:, j - 2])
    ls = np.arange(m, L + 1)
    dP = ls * x[:, None] * P
    c = np.sqrt(np.maximum((2 * ls + 1) / np.maximum(2 * ls - 1, 1) * (ls * ls - m * m), 0.0))
    dP[:, 1:] -= c[1:] * P[:, :-1]
    dP /= sin[:, None]
    cot = (x / sin)[:, None]
    d2P = -cot * dP - (ls * (ls + 1) - m * m / (sin * sin)[:, None]) * P
    return P, dP, d2P


# ------------------------------------------------------------------ grids

class TorusGrid:
    kind = "torus"

    def __init__(self, geom: ModelGeometry):
        nx, ny = geom.resolution
        if nx < 16 or (ny > 1 and ny < 16):
            raise GeometryError("torus grids need at least 16 nodes per periodic coordinate")
        self.geom = geom
        self.shape = (nx, ny)
        self.s = np.arange(nx) * geom.Lx / nx
        self.phi = np.arange(ny) * geom.Ly / ny
        dy = geom.Ly / ny
        self.weights = np.full(self.shape, geom.Lx / nx * dy)
        self.kx = 2 * np.pi * np.fft.fftfreq(nx, d=geom.Lx / nx)
        self.ky = 2 * np.pi * np.fft.fftfreq(ny, d=dy)

    def _odd(self, k):
        k = k.copy()
        if k.size % 2 == 0:
            k[k.size // 2] = 0.0  # drop the Nyquist mode for odd derivatives
        return k

    def derivative(self, u, axis: int, order: int = 1):
        k = self.kx if axis == 0 else self.ky
        if order % 2:
            k = self._odd(k)
        shape = [1, 1]
        shape[axis] = -1
        mult = ((1j * k) ** order).reshape(shape)
        return np.real(np.fft.ifft(mult * np.fft.fft(u, axis=axis), axis=axis))

    def laplacian(self, u):
        out = self.derivative(u, 0, 2)
        if self.shape[1] > 1:
            out = out + self.derivative(u, 1, 2)
        return out

    def gradient(self, u):
        us = self.derivative(u, 0)
        up = self.derivative(u, 1) if self.shape[1] > 1 else np.zeros_like(u)
        return us, up

    def metric_inverse_phi(self):
        return np.ones(self.shape)

    def laplacian_matrix(self):
        n = int(np.prod(self.shape))
        eye = np.eye(n).reshape(self.shape + (n,))
        cols = np.stack([self.laplacian(eye[..., j]).ravel() for j in range(n)], axis=1)
        return cols

    def second_derivative_matrix(self):
        nx = self.shape[0]
        return np.real(np.fft.ifft(-(self.kx ** 2)[:, None] * np.fft.fft(np.eye(nx), axis=0), axis=0))

    def mode_problem(self, m: int, V):
        """Stiffness, potential matrix and nodal basis for phi-mode m of a phi-independent problem."""
        k = 2 * np.pi * m / self.geom.Ly
        S = -self.second_derivative_matrix() + k * k * np.eye(self.shape[0])
        return S, np.diag(V), np.eye(self.shape[0])

    def interp_s(self, v, s_new, der: int = 0):
        v = np.asarray(v, dtype=float)
        n = v.size
        c = np.fft.fft(v) / n
        k = self.kx.copy()
        if n % 2 == 0:
            c[n // 2] *= 0.5  # split the Nyquist mode symmetrically
            c = np.append(c, c[n // 2])
            k = np.append(k, -k[n // 2])
        s_new = np.asarray(s_new, dtype=float)
        E = np.exp(1j * np.multiply.outer(s_new, k))
        return np.real(E @ ((1j * k) ** der * c))

    def interp2(self, u, x, y, dx: int = 0, dy: int = 0):
        """Trigonometric interpolant of a full-grid field (and its derivatives) at points (x, y)."""
        c = np.fft.fft2(u) / u.size
        kx, ky = self.kx.copy(), self.ky.copy()
        for axis, n in enumerate(u.shape):
            if n % 2 == 0:
                idx = [slice(None)] * 2
                idx[axis] = n // 2
                c[tuple(idx)] *= 0.5
                c = np.concatenate([c, c[tuple(idx)][None, :] if axis == 0 else c[tuple(idx)][:, None]],
                                   axis=axis)
                if axis == 0:
                    kx = np.append(kx, -kx[n // 2])
                else:
                    ky = np.append(ky, -ky[n // 2])
        Ex = np.exp(1j * np.multiply.outer(np.asarray(x, dtype=float), kx)) * (1j * kx) ** dx
        Ey = np.exp(1j * np.multiply.outer(np.asarray(y, dtype=float), ky)) * (1j * ky) ** dy
        return np.real(np.einsum("pk,kl,pl->p", Ex, c, Ey))


class SphereGrid:
    kind = "sphere"

    def __init__(self, geom: ModelGeometry):
        nl, nphi = geom.resolution
        if nl < 16 or (nphi > 1 and nphi < 16):
            raise GeometryError("sphere grids need at least 16 nodes per coordinate")
        if nphi > 1 and nphi // 2 >= nl:
            raise GeometryError("phi resolution exceeds the Legendre degree")
        self.geom = geom
        self.R = geom.R
        self.shape = (nl, nphi)
        x, w = np.polynomial.legendre.leggauss(nl)
        self.x, self.wx = x[::-1].copy(), w[::-1].copy()  # theta increasing
        self.theta = np.arccos(self.x)
        self.s = self.R * self.theta
        self.phi = np.arange(nphi) * 2 * np.pi / nphi
        self.L = nl - 1
        self.weights = np.outer(self.wx, np.full(nphi, 2 * np.pi / nphi)) * self.R ** 2
        self._tables = {}

    def table(self, m: int):
        if m not in self._tables:
            self._tables[m] = assoc_legendre(m, self.L, self.x)
        return self._tables[m]

    def _modes(self):
        nphi = self.shape[1]
        return range(nphi // 2 + 1) if nphi > 1 else range(1)

    def _apply(self, u, fn):
        """Apply fn(m, coeffs) -> nodal values per Fourier mode."""
        nphi = self.shape[1]
        uh = np.fft.rfft(u, axis=1) if nphi > 1 else u.astype(complex)
        out = np.zeros_like(uh)
        for m in self._modes():
            P = self.table(m)[0]
            c = P.T @ (self.wx[:, None] * uh[:, m:m + 1])
            out[:, m:m + 1] = fn(m, c)
        return np.fft.irfft(out, n=nphi, axis=1) if nphi > 1 else out.real

    def laplacian(self, u):
        def lap(m, c):
            ls = np.arange(m, self.L + 1)
            return self.table(m)[0] @ (-(ls * (ls + 1))[:, None] * c) / self.R ** 2
        return self._apply(u, lap)

    def gradient(self, u):
        us = self._apply(u, lambda m, c: self.table(m)[1] @ c / self.R)
        nphi = self.shape[1]
        if nphi > 1:
            uh = np.fft.rfft(u, axis=1)
            ms = np.arange(uh.shape[1]).astype(float)
            if nphi % 2 == 0:
                ms[-1] = 0.0
            up = np.fft.irfft(1j * ms * uh, n=nphi, axis=1)
        else:
            up = np.zeros_like(u)
        return us, up

    def metric_inverse_phi(self):
        rho = self.R * np.sin(self.theta)
        return np.repeat((1.0 / rho ** 2)[:, None], self.shape[1], axis=1)

    def laplacian_matrix(self):
        if self.shape[1] != 1:
            n = int(np.prod(self.shape))
            eye = np.eye(n).reshape(self.shape + (n,))
            return np.stack([self.laplacian(eye[..., j]).ravel() for j in range(n)], axis=1)
        P = self.table(0)[0]
        ls = np.arange(0, self.L + 1)
        return (P * (-(ls * (ls + 1)))) @ (P.T * self.wx) / self.R ** 2

    def mode_problem(self, m: int, V):
        """Galerkin stiffness, potential matrix and basis for mode m (orthonormal basis)."""
        P = self.table(m)[0]
        ls = np.arange(m, self.L + 1)
        S = np.diag(ls * (ls + 1.0)) / self.R ** 2
        Vm = P.T @ ((self.wx * V)[:, None] * P)
        return S, Vm, P / self.R

    def interp_s(self, v, s_new, der: int = 0):
        c = self.table(0)[0].T @ (self.wx * np.asarray(v, dtype=float))
        th = np.asarray(s_new, dtype=float) / self.R
        tabs = assoc_legendre(0, self.L, np.cos(th).ravel())
        return (tabs[der] @ c).reshape(th.shape) / self.R ** der


@functools.lru_cache(maxsize=32)
def grid_for(geom: ModelGeometry):
    if geom.kind == "torus":
        return TorusGrid(geom)
    if geom.kind == "sphere":
        return SphereGrid(geom)
    raise GeometryError("fields on revolution surfaces are not discretized; use the geometry tables")


# ------------------------------------------------------------------ fields

@dataclass
class Field:
    geom: ModelGeometry
    values: np.ndarray
    name: str = ""
    eps: float | None = None

    def __post_init__(self):
        shape = grid_for(self.geom).shape
        v = np.asarray(self.values, dtype=float)
        if v.size != shape[0] * shape[1]:
            raise ValueError(f"field has {v.size} values, grid has {shape}")
        self.values = v.reshape(shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"field {self.name!r} has non-finite values")

    @property
    def grid(self):
        return grid_for(self.geom)

    def with_values(self, values, name=None):
        return Field(self.geom, values, name or self.name, self.eps)

    def s_derivative_at(self, s, phi=0.0):
        if self.values.shape[1] != 1:
            raise ValueError("pointwise derivatives are provided for phi-independent fields only")
        d = self.grid.interp_s(self.values[:, 0], s, der=1)
        return d + np.zeros(np.shape(phi))

    def save(self, path) -> None:
        header = {"geometry": self.geom.to_config(), "shape": list(self.values.shape),
                  "name": self.name, "eps": self.eps}
        with open(path, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            fh.write(self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "Field":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            data = np.frombuffer(fh.read(), dtype="<f8")
        geom = make_geometry(header["geometry"])
        return cls(geom, data.reshape(header["shape"]), header.get("name", ""), header.get("eps"))

    def slice_csv(self, path, j: int = 0) -> None:
        g = self.grid
        np.savetxt(path, np.column_stack([g.s, self.values[:, j]]), delimiter=",",
                   header="s,value", comments="")


def field_from_function(geom: ModelGeometry, fn, name: str = "", eps=None) -> Field:
    g = grid_for(geom)
    S, PH = np.meshgrid(g.s, g.phi, indexing="ij")
    return Field(geom, fn(S, PH), name, eps)


def _values(geom, u):
    if isinstance(u, Field):
        if u.geom != geom:
            raise ValueError("field belongs to a different geometry")
        return u.values
    shape = grid_for(geom).shape
    a = np.asarray(u, dtype=float)
    if a.size == shape[0] * shape[1]:
        return a.reshape(shape)
    if a.ndim == 1 and a.size == shape[0]:
        return np.broadcast_to(a[:, None], shape)
    return np.broadcast_to(a, shape)


def laplace_beltrami(geom: ModelGeometry, u) -> Field:
    return Field(geom, grid_for(geom).laplacian(_values(geom, u)), "laplacian")


def integrate(geom: ModelGeometry, u) -> float:
    return float(np.sum(grid_for(geom).weights * _values(geom, u)))


def grad_dot(geom: ModelGeometry, u, v):
    g = grid_for(geom)
    us, up = g.gradient(_values(geom, u))
    if v is u:
        vs, vp = us, up
    else:
        vs, vp = g.gradient(_values(geom, v))
    return us * vs + g.metric_inverse_phi() * up * vp


def gradient_squared(geom: ModelGeometry, u) -> Field:
    return Field(geom, grad_dot(geom, u, u), "gradient_squared")
