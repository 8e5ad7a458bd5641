"""Double-well potentials.

Only even polynomials vanishing at +-1 are supported. The canonical choice is
W(x) = (1 - x^2)^2 / 4.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P


class WellError(ValueError):
    pass


@dataclass(frozen=True)
class DoubleWell:
    """Polynomial double well stored by its monomial coefficients (lowest first).

    ``kappa`` and ``beta`` are derived at construction: beta is the widest width
    in (0, 1) for which W'' stays positive on |x| >= 1 - beta, and kappa is the
    minimum of W'' there.
    """

    coeffs: tuple
    name: str = "polynomial"
    beta: float = field(init=False)
    kappa: float = field(init=False)

    def __post_init__(self):
        c = np.trim_zeros(np.asarray(self.coeffs, dtype=float), "b")
        if c.size < 3:
            raise WellError("a double well needs at least a quadratic term")
        object.__setattr__(self, "coeffs", tuple(float(a) for a in c))
        beta, kappa = _curvature_margin(self)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "kappa", kappa)

    @property
    def decay(self) -> float:
        """Exponential rate sqrt(W''(1)) of the heteroclinic tails."""
        return float(np.sqrt(self(1.0, 2)))

    def __call__(self, x, order: int = 0):
        return eval_w(self, x, order)

    def to_config(self):
        if self.name == "canonical":
            return {"well": "canonical"}
        return {"well": {"coeffs": list(self.coeffs)}}


def canonical() -> DoubleWell:
    return DoubleWell((0.25, 0.0, -0.5, 0.0, 0.25), name="canonical")


def from_config(spec) -> DoubleWell:
    """Build a well from ``"canonical"`` or ``{"coeffs": [...]}``."""
    if isinstance(spec, dict) and "well" in spec:
        spec = spec["well"]
    if spec == "canonical":
        return canonical()
    if isinstance(spec, dict) and "coeffs" in spec:
        return DoubleWell(tuple(spec["coeffs"]))
    raise WellError(f"unrecognized well specification: {spec!r}")


def eval_w(dw: DoubleWell, x, order: int = 0):
    """W or one of its first four derivatives, exact for the polynomial form."""
    if order not in (0, 1, 2, 3, 4):
        raise ValueError(f"unsupported derivative order {order}")
    c = np.asarray(dw.coeffs)
    if order:
        c = P.polyder(c, order)
    return P.polyval(x, c)


def _curvature_margin(dw: DoubleWell):
    # widest beta in (0, 1) with W'' > 0 on 1 - beta <= |x| <= 2
    for beta in np.linspace(0.5, 0.02, 49):
        xs = np.linspace(1.0 - beta, 2.0, 2001)
        w2 = np.minimum(eval_w(dw, xs, 2), eval_w(dw, -xs, 2))
        if w2.min() > 0:
            return float(beta), float(w2.min())
    return 0.0, float(min(eval_w(dw, 1.0, 2), eval_w(dw, -1.0, 2)))


@dataclass
class AssumptionResult:
    name: str
    passed: bool
    witness: float | None = None


def validate_well(dw: DoubleWell, samples: int = 1001) -> list[AssumptionResult]:
    """Check the structural assumptions on a symmetric sample grid.

    Failures are returned as data with a witness point, never raised.
    """
    if samples < 100:
        raise ValueError("validate_well needs at least 100 samples")
    xs = np.linspace(-2.0, 2.0, samples)
    out = []

    w = eval_w(dw, xs)
    scale = max(1.0, float(np.abs(w).max()))
    at_wells = abs(eval_w(dw, 1.0)) + abs(eval_w(dw, -1.0))
    off = np.abs(np.abs(xs) - 1.0) > 1e-9
    bad = np.flatnonzero(off & (w <= 1e-14 * scale))
    if at_wells > 1e-12:
        out.append(AssumptionResult("vanishes iff x = +-1", False, 1.0))
    elif bad.size:
        out.append(AssumptionResult("vanishes iff x = +-1", False, float(xs[bad[0]])))
    else:
        out.append(AssumptionResult("vanishes iff x = +-1", True))

    asym = np.abs(w - eval_w(dw, -xs))
    k = int(np.argmax(asym))
    out.append(AssumptionResult("even", bool(asym[k] <= 1e-12 * scale),
                                None if asym[k] <= 1e-12 * scale else float(xs[k])))

    inner = np.linspace(0.0, 1.0, samples)[1:-1]
    w1 = eval_w(dw, inner, 1)
    ok0 = abs(eval_w(dw, 0.0, 1)) < 1e-12 and abs(eval_w(dw, 0.0, 2)) > 1e-12
    badx = np.flatnonzero(inner * w1 >= 0)
    if not ok0:
        out.append(AssumptionResult("W'(0)=0, W''(0)!=0, xW'(x)<0 on (0,1)", False, 0.0))
    elif badx.size:
        out.append(AssumptionResult("W'(0)=0, W''(0)!=0, xW'(x)<0 on (0,1)", False,
                                    float(inner[badx[0]])))
    else:
        out.append(AssumptionResult("W'(0)=0, W''(0)!=0, xW'(x)<0 on (0,1)", True))

    outer = xs[np.abs(xs) >= 1.0 - dw.beta]
    w2 = eval_w(dw, outer, 2)
    j = int(np.argmin(w2))
    ok = dw.beta > 0 and w2[j] >= dw.kappa - 1e-12 and dw.kappa > 0
    out.append(AssumptionResult("W'' >= kappa > 0 near the wells", bool(ok),
                                None if ok else float(outer[j])))
    return out


def require_valid(dw: DoubleWell) -> None:
    failed = [r for r in validate_well(dw) if not r.passed]
    if failed:
        names = ", ".join(f"{r.name} (x={r.witness})" for r in failed)
        raise WellError(f"potential violates structural assumptions: {names}")
