"""The cut-off variational integrand, its coefficient field, and all derivatives.

One parameter pack (exponent p in (1,2), a smooth even cut-off g, and the
compensating constant m_g) fixes a concrete instance of the construction:

    quad form   A(u) = Id + P(u) (x) P(u),   P(u) = I + (2p/(2-p)) u(x)u / (1+|u|^2)
    integrand   f(x, z) = (g(|z|^2) + m_g A(x/|x|)(z, z))^(p/2)
    coefficient a(u, z) = (g(|z|^2) + m_g A(u)(z, z))^((p-2)/2) A(u) z

The reduction A(u) z = z + (P.z) P (Frobenius dot) is used throughout; it keeps
every derivative a short scalar expression instead of a rank-4 contraction.

All operations broadcast over leading batch axes exactly like tensor.py.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .tensor import check_finite, fro_dot, outer

__all__ = [
    "Cutoff",
    "IntegrandParams",
    "StructureBounds",
    "smooth_bump",
    "make_params",
    "t_u",
    "bilinear_a",
    "integrand_f",
    "grad_f_z",
    "flux_f_z",
    "hess_f_zz",
    "hess_f_zz_form",
    "coeff_a",
    "d_z_coeff_a",
    "d_z_coeff_a_quad",
    "d_u_coeff_a",
    "unit_direction",
]


@dataclass(frozen=True)
class Cutoff:
    """A symmetric smooth cut-off g: R -> [0,1] with g(0)=1 and support in (-1,1).

    value/deriv/deriv2 are vectorized callables for g, g', g''.
    """

    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    deriv2: Callable[[np.ndarray], np.ndarray]
    label: str = "bump"


def smooth_bump() -> Cutoff:
    """The standard even bump g(s) = exp(1 - 1/(1-s^2)) on |s| < 1, else 0."""

    def value(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        w = 1.0 - s[m] ** 2
        out[m] = np.exp(1.0 - 1.0 / w)
        return out

    def deriv(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        sm = s[m]
        w = 1.0 - sm**2
        out[m] = np.exp(1.0 - 1.0 / w) * (-2.0 * sm / w**2)
        return out

    def deriv2(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        m = np.abs(s) < 1.0
        sm = s[m]
        w = 1.0 - sm**2
        out[m] = np.exp(1.0 - 1.0 / w) * (
            4.0 * sm**2 / w**4 - 2.0 / w**2 - 8.0 * sm**2 / w**3
        )
        return out

    return Cutoff(value=value, deriv=deriv, deriv2=deriv2, label="exp-bump")


@dataclass(frozen=True)
class IntegrandParams:
    """One fixed instance of the construction: exponent, cut-off, constant m_g."""

    p: float
    cutoff: Cutoff
    m_g: float

    @property
    def coupling(self) -> float:
        """The factor 2p/(2-p) in front of the rank-one part of P(u)."""
        return 2.0 * self.p / (2.0 - self.p)


@dataclass(frozen=True)
class StructureBounds:
    """Growth/ellipticity constants nu <= L with the Hoelder exponents."""

    nu: float
    L: float
    alpha: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.nu <= self.L):
            raise ValueError("need L >= nu > 0")


# The sup of |g'(s)| + 2|g''(s)| s depends only on the cut-off, not on p;
# cache it per cutoff label so repeated make_params calls skip the dense scan.
_SUP_CACHE: dict[tuple[str, int], float] = {}


def _cutoff_sup(cutoff: Cutoff, scan_points: int) -> float:
    key = (cutoff.label, scan_points)
    if key not in _SUP_CACHE:
        s = np.linspace(-1.0, 1.0, scan_points)
        term = np.abs(cutoff.deriv(s)) + 2.0 * np.abs(cutoff.deriv2(s)) * s
        _SUP_CACHE[key] = float(term.max())
    return _SUP_CACHE[key]


def make_params(
    p: float,
    cutoff: Cutoff | None = None,
    safety: float = 1e-3,
    scan_points: int = 1_000_001,
    fixture_path: str | Path | None = None,
) -> IntegrandParams:
    """Build the parameter pack for exponent p in (1, 2).

    m_g = (p-1)^(-1) (1 + sup_s {|g'(s)| + 2|g''(s)| s}), the sup estimated by a
    dense grid scan over [-1, 1] (the derivatives vanish outside), then inflated
    by the safety factor.  Optionally dumps the result to a JSON fixture file.
    """
    if not (1.0 < p < 2.0):
        raise ValueError(f"exponent p must lie in (1, 2), got {p}")
    if cutoff is None:
        cutoff = smooth_bump()
    sup_term = _cutoff_sup(cutoff, scan_points)
    m_g = (1.0 + sup_term) / (p - 1.0) * (1.0 + safety)
    params = IntegrandParams(p=p, cutoff=cutoff, m_g=m_g)
    if fixture_path is not None:
        payload = {
            "cutoff": cutoff.label,
            "p": p,
            "sup_term": sup_term,
            "safety": safety,
            "scan_points": scan_points,
            "m_g": m_g,
            "m_g_hex": m_g.hex(),
        }
        Path(fixture_path).write_text(json.dumps(payload, indent=2) + "\n")
    return params


def unit_direction(x):
    """x/|x| with a hard error on the origin (the integrand refuses x = 0)."""
    x = np.asarray(x, dtype=float)
    check_finite(x)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(r == 0.0):
        raise ValueError("x = 0 is outside the domain of the integrand")
    return x / r


def _p_mat(params: IntegrandParams, u):
    """P(u) = I + (2p/(2-p)) u(x)u / (1+|u|^2), a symmetric Mat2."""
    u = np.asarray(u, dtype=float)
    n2 = np.sum(u * u, axis=-1)[..., None, None]
    return np.eye(2) + params.coupling * outer(u, u) / (1.0 + n2)


def t_u(params: IntegrandParams, u, z):
    """The scalar trace-like functional: Tr(z) + (2p/(2-p)) (z.u(x)u)/(1+|u|^2).

    Equals the Frobenius dot P(u).z, which is how it is computed.
    """
    z = np.asarray(z, dtype=float)
    check_finite(u, z)
    return fro_dot(_p_mat(params, u), z)


def bilinear_a(params: IntegrandParams, u):
    """The rank-4 coefficients A[k,l,i,j] = delta_kl delta_ij + P[i,k] P[j,l]."""
    check_finite(u)
    P = _p_mat(params, u)
    eye4 = np.einsum("kl,ij->klij", np.eye(2), np.eye(2))
    return eye4 + np.einsum("...ik,...jl->...klij", P, P)


def _scalars(params: IntegrandParams, u, z):
    """Shared per-sample scalars: P, T = P.z, |z|^2, A(z,z), s = g + m_g A(z,z)."""
    z = np.asarray(z, dtype=float)
    P = _p_mat(params, u)
    T = fro_dot(P, z)
    zz = fro_dot(z, z)
    azz = zz + T * T
    s = params.cutoff.value(zz) + params.m_g * azz
    return P, T, zz, azz, s


def integrand_f(params: IntegrandParams, x, z):
    """f(x, z) = (g(|z|^2) + m_g A(x/|x|)(z, z))^(p/2); 0-homogeneous in x."""
    u = unit_direction(x)
    check_finite(z)
    _, _, _, _, s = _scalars(params, u, z)
    return s ** (params.p / 2.0)


def grad_f_z(params: IntegrandParams, x, z):
    """Exact z-gradient of f: p s^((p-2)/2) (g'(|z|^2) z + m_g A(x/|x|) z)."""
    u = unit_direction(x)
    z = np.asarray(z, dtype=float)
    check_finite(z)
    P, T, zz, _, s = _scalars(params, u, z)
    az = z + T[..., None, None] * P
    gp = params.cutoff.deriv(zz)
    factor = params.p * s ** ((params.p - 2.0) / 2.0)
    return factor[..., None, None] * (gp[..., None, None] * z + params.m_g * az)


def flux_f_z(params: IntegrandParams, x, z):
    """The homogeneous-system flux: grad_f_z / p (constant factors drop out)."""
    return grad_f_z(params, x, z) / params.p


def hess_f_zz(params: IntegrandParams, x, z, lam):
    """Quadratic form of the second z-derivative of f in direction lam.

    p s^((p-4)/2) [ s (g' |lam|^2 + 2 g'' (z.lam)^2 + m_g A(lam,lam))
                    - (2-p) (g' z.lam + m_g A(z,lam))^2 ].
    """
    u = unit_direction(x)
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    check_finite(z, lam)
    P, T, zz, _, s = _scalars(params, u, z)
    gp = params.cutoff.deriv(zz)
    gpp = params.cutoff.deriv2(zz)
    zl = fro_dot(z, lam)
    ll = fro_dot(lam, lam)
    Pl = fro_dot(P, lam)
    a_ll = ll + Pl * Pl
    a_zl = zl + T * Pl
    bracket = s * (gp * ll + 2.0 * gpp * zl * zl + params.m_g * a_ll) - (
        2.0 - params.p
    ) * (gp * zl + params.m_g * a_zl) ** 2
    return params.p * s ** ((params.p - 4.0) / 2.0) * bracket


def hess_f_zz_form(params: IntegrandParams, x, z):
    """Second z-derivative of f as a Form4 (needed by the FEM assembly).

    H[k,l,i,j] = p s^((p-4)/2) [ s (g' dd + 2 g'' z(x)z + m_g A) - (2-p) G(x)G ]
    with G = g' z + m_g A z; contracting twice with lam reproduces hess_f_zz.
    """
    u = unit_direction(x)
    z = np.asarray(z, dtype=float)
    check_finite(z)
    P, T, zz, _, s = _scalars(params, u, z)
    gp = params.cutoff.deriv(zz)[..., None, None]
    gpp = params.cutoff.deriv2(zz)
    az = z + T[..., None, None] * P
    G = gp * z + params.m_g * az
    eye4 = np.einsum("kl,ij->klij", np.eye(2), np.eye(2))
    A = eye4 + np.einsum("...ik,...jl->...klij", P, P)
    zxz = np.einsum("...ik,...jl->...klij", z, z)
    GxG = np.einsum("...ik,...jl->...klij", G, G)
    s4 = s[..., None, None, None, None]
    bracket = s4 * (
        gp[..., None, None] * eye4
        + 2.0 * gpp[..., None, None, None, None] * zxz
        + params.m_g * A
    ) - (2.0 - params.p) * GxG
    return (params.p * s ** ((params.p - 4.0) / 2.0))[
        ..., None, None, None, None
    ] * bracket


def coeff_a(params: IntegrandParams, u, z):
    """The coefficient field a(u, z) = (g(|z|^2) + m_g A(u)(z,z))^((p-2)/2) A(u) z.

    Defined for every u in R^2 (not only unit vectors); carries no g' term.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    check_finite(u, z)
    P, T, _, _, s = _scalars(params, u, z)
    az = z + T[..., None, None] * P
    return (s ** ((params.p - 2.0) / 2.0))[..., None, None] * az


def d_z_coeff_a(params: IntegrandParams, u, z):
    """z-derivative of coeff_a as a Form4 (contract with dz over [i,k]).

    D[k,l,i,j] = s^((p-4)/2) [ (p-2) Gz[i,k] (Az)[j,l] + s A[k,l,i,j] ]
    with Gz = g' z + m_g A z.  Not symmetric in general: a(u, .) is not a
    gradient field because g enters the base and m_g only the linear part.
    """
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    check_finite(u, z)
    P, T, zz, _, s = _scalars(params, u, z)
    gp = params.cutoff.deriv(zz)[..., None, None]
    az = z + T[..., None, None] * P
    Gz = gp * z + params.m_g * az
    eye4 = np.einsum("kl,ij->klij", np.eye(2), np.eye(2))
    A = eye4 + np.einsum("...ik,...jl->...klij", P, P)
    first = (params.p - 2.0) * np.einsum("...ik,...jl->...klij", Gz, az)
    s4 = s[..., None, None, None, None]
    return (s ** ((params.p - 4.0) / 2.0))[..., None, None, None, None] * (
        first + s4 * A
    )


def d_z_coeff_a_quad(params: IntegrandParams, u, z, lam):
    """Quadratic form lam . (D_z a) lam without building the rank-4 tensor."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    P, T, zz, _, s = _scalars(params, u, z)
    gp = params.cutoff.deriv(zz)
    zl = fro_dot(z, lam)
    Pl = fro_dot(P, lam)
    a_zl = zl + T * Pl
    a_ll = fro_dot(lam, lam) + Pl * Pl
    return s ** ((params.p - 4.0) / 2.0) * (
        (params.p - 2.0) * (gp * zl + params.m_g * a_zl) * a_zl + s * a_ll
    )


def d_u_coeff_a(params: IntegrandParams, u, z):
    """u-derivative of coeff_a as a rank-3 array: out[..., m, j, l] = d a[j,l] / d u_m."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    check_finite(u, z)
    P, T, _, _, s = _scalars(params, u, z)
    c = params.coupling
    n2 = np.sum(u * u, axis=-1)
    m1 = 1.0 + n2
    eye = np.eye(2)
    # dP[m, j, l] = c [ (d_jm u_l + d_lm u_j)/m1 - 2 u_m u_j u_l / m1^2 ]
    du_l = np.einsum("jm,...l->...mjl", eye, u)
    du_j = np.einsum("lm,...j->...mjl", eye, u)
    uuu = np.einsum("...m,...j,...l->...mjl", u, u, u)
    dP = c * (
        (du_l + du_j) / m1[..., None, None, None]
        - 2.0 * uuu / (m1 * m1)[..., None, None, None]
    )
    dT = np.einsum("...mjl,...jl->...m", dP, z)
    az = z + T[..., None, None] * P
    ds = 2.0 * params.m_g * T[..., None] * dT
    half = (params.p - 2.0) / 2.0
    term1 = (
        half
        * (s ** ((params.p - 4.0) / 2.0))[..., None, None, None]
        * ds[..., None, None]
        * az[..., None, :, :]
    )
    d_az = dT[..., None, None] * P[..., None, :, :] + T[..., None, None, None] * dP
    term2 = (s ** ((params.p - 2.0) / 2.0))[..., None, None, None] * d_az
    return term1 + term2
