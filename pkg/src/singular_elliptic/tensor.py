"""Fixed-size 2D tensor algebra shared by every other module.

Vectors live in R^2, gradients in R^{2x2}, and the big bilinear form in
R^{2x2x2x2}.  Everything is a plain float64 ndarray; all functions broadcast
over arbitrary leading batch axes:

    Vec2   ... x 2          component index i
    Mat2   ... x 2 x 2      indexed [i, k]: row i = component, col k = direction
    Form4  ... x 2x2x2x2    indexed [k, l, i, j]; pairs Mat2 z[i,k] with zbar[j,l]

The [i, k] matrix convention is fixed once here so that a gradient Du has
Du[i, k] = d u_i / d x_k everywhere in the package.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "v_map",
    "v_map_mat",
    "apply_form",
    "form_pair",
    "outer",
    "identity_form",
    "fro_dot",
    "fro_norm",
    "check_finite",
]


def check_finite(*arrays) -> None:
    """Raise ValueError if any input contains NaN or infinity."""
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def fro_dot(a, b):
    """Frobenius inner product over the trailing two axes."""
    return np.einsum("...ik,...ik->...", a, b)


def fro_norm(a):
    """Frobenius norm over the trailing two axes."""
    return np.sqrt(fro_dot(a, a))


def v_map(xi, p: float):
    """Weighted radial compression (1+|xi|^2)^((p-2)/4) * xi on the last axis.

    Contracts vectors toward the origin for p < 2 and is the identity at
    p = 2.  Accepts k-vectors on the trailing axis (k = 2 for points,
    k = 4 for flattened matrices).  Any p > 0 is meaningful here.
    """
    if not p > 0:
        raise ValueError(f"exponent p must be positive, got {p}")
    xi = np.asarray(xi, dtype=float)
    check_finite(xi)
    n2 = np.sum(xi * xi, axis=-1, keepdims=True)
    return (1.0 + n2) ** ((p - 2.0) / 4.0) * xi


def v_map_mat(z, p: float):
    """v_map for Mat2 arguments, with the Frobenius norm on the trailing 2x2."""
    if not p > 0:
        raise ValueError(f"exponent p must be positive, got {p}")
    z = np.asarray(z, dtype=float)
    check_finite(z)
    n2 = np.einsum("...ik,...ik->...", z, z)[..., None, None]
    return (1.0 + n2) ** ((p - 2.0) / 4.0) * z


def outer(u, v):
    """Outer product of two Vec2: outer(u, v)[i, k] = u_i v_k."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.einsum("...i,...k->...ik", u, v)


def identity_form():
    """The Form4 that acts as the identity: F[k,l,i,j] = delta_kl delta_ij."""
    eye = np.eye(2)
    return np.einsum("kl,ij->klij", eye, eye)


def apply_form(F, z):
    """Contract a Form4 with a Mat2: (F z)[j, l] = sum_{k,i} F[k,l,i,j] z[i,k]."""
    F = np.asarray(F, dtype=float)
    z = np.asarray(z, dtype=float)
    check_finite(F, z)
    return np.einsum("...klij,...ik->...jl", F, z)


def form_pair(F, z, zbar):
    """Bilinear pairing F(z, zbar) = apply_form(F, z) . zbar (Frobenius)."""
    F = np.asarray(F, dtype=float)
    z = np.asarray(z, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    check_finite(F, z, zbar)
    return np.einsum("...klij,...ik,...jl->...", F, z, zbar)
