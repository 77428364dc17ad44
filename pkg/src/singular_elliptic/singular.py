"""Closed forms for the unit-vector field x/|x| and its pointwise verification.

The field u(x) = x/|x| is smooth away from the origin with

    Du(x)          = I/|x| - x(x)x/|x|^3       (|Du| = Tr Du = 1/|x|)
    A(x/|x|) Du    = 2 I/|x| + (2(p-1)/(2-p)) x(x)x/|x|^3
    A(x/|x|)(Du,Du) = 2/|x|^2

so the cut-off is inactive (g = g' = 0) everywhere inside the unit disk, and
the flux |x|^(2-p) A(x/|x|)Du is exactly divergence-free.  This module exposes
the closed forms plus finite-difference residuals of that divergence and the
quadrature residual of the sphere-valued stationarity identity.
"""

from __future__ import annotations

import numpy as np

from .integrand import IntegrandParams
from .tensor import check_finite, fro_dot

__all__ = [
    "u_sing",
    "du_sing",
    "a_du_sing",
    "flux_sing",
    "strong_divergence_residual",
    "div_central",
    "w1p_seminorm_sing",
    "p_harmonic_residual",
]


def _radius(x):
    x = np.asarray(x, dtype=float)
    check_finite(x)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise ValueError("the singular field is undefined at the origin")
    return x, r


def u_sing(x):
    """The unit-vector field x/|x|; errors at the origin."""
    x, r = _radius(x)
    return x / r[..., None]


def du_sing(x):
    """Gradient of x/|x|: I/|x| - x(x)x/|x|^3, indexed [i, k] = d u_i/d x_k."""
    x, r = _radius(x)
    xx = np.einsum("...i,...k->...ik", x, x)
    return np.eye(2) / r[..., None, None] - xx / (r**3)[..., None, None]


def a_du_sing(params: IntegrandParams, x):
    """Closed form of A(x/|x|) Du: 2I/|x| + (2(p-1)/(2-p)) x(x)x/|x|^3."""
    x, r = _radius(x)
    beta = 2.0 * (params.p - 1.0) / (2.0 - params.p)
    xx = np.einsum("...i,...k->...ik", x, x)
    return 2.0 * np.eye(2) / r[..., None, None] + beta * xx / (r**3)[..., None, None]


def flux_sing(params: IntegrandParams, x):
    """The divergence-free matrix field |x|^(2-p) A(x/|x|) Du."""
    x, r = _radius(x)
    return (r ** (2.0 - params.p))[..., None, None] * a_du_sing(params, x)


def div_central(field, x, h: float):
    """Second-order central-difference row divergence sum_k d_k M[., k] at one point."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(2)
    for k in range(2):
        step = np.zeros(2)
        step[k] = h
        out += (field(x + step)[..., :, k] - field(x - step)[..., :, k]) / (2.0 * h)
    return out


def strong_divergence_residual(params: IntegrandParams, x, h: float):
    """Central-difference divergence of the flux at x; exactly zero in the limit.

    Requires 0 < h < |x|/4 so the stencil stays well away from the origin.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise ValueError("the flux is undefined at the origin")
    if not 0.0 < h < r / 4.0:
        raise ValueError(f"need 0 < h < |x|/4 = {r / 4.0}, got h = {h}")
    return div_central(lambda y: flux_sing(params, y), x, h)


def w1p_seminorm_sing(p: float) -> float:
    """Exact disk integral of |Du|^p for the singular field: 2 pi / (2 - p)."""
    if not (1.0 < p < 2.0):
        raise ValueError(f"the seminorm integral requires p in (1, 2), got {p}")
    return 2.0 * np.pi / (2.0 - p)


def p_harmonic_residual(p: float, phi, rule) -> float:
    """Residual of the sphere-valued stationarity identity under graded quadrature.

    Evaluates int |Du|^(p-2) Du . Dphi - int |Du|^p (u . phi) over the unit
    disk with the supplied DiskRule; both integrands are integrable for
    p in (1, 2) and the identity makes the difference vanish.
    """
    if not (1.0 < p < 2.0):
        raise ValueError(f"need p in (1, 2), got {p}")
    x = rule.nodes
    w = rule.weights
    r = np.linalg.norm(x, axis=-1)
    du = du_sing(x)
    lhs = np.sum(w * r ** (2.0 - p) * fro_dot(du, phi.dphi(x)))
    rhs = np.sum(w * r**-p * np.sum(u_sing(x) * phi.phi(x), axis=-1))
    return float(lhs - rhs)
