"""Decay and oscillation probes: the quantities that detect the singularity.

Three measurements over shrinking balls B_rho(x0), each reported as a table
with a log-log least-squares slope:

  * ball energy of 1 + |V(Dw)|^2      (Morrey-type decay; slope 2 for smooth
    fields, 2-p at the singularity),
  * mean-oscillation energy of V(Dw)  (excess decay; slope ~4 at smooth
    points, no gain at the singularity),
  * sup-oscillation of w on a net     (continuity detector; a field is flagged
    discontinuous when the oscillation refuses to halve).

Slopes are measurements, not proofs: each table carries its fit residual and
callers gate on it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .fem import DiscreteField, DiskMesh, element_gradients
from .quadrature import DiskRule, build_rule
from .singular import du_sing, u_sing
from .tensor import fro_dot, v_map_mat

__all__ = [
    "FieldSampler",
    "DecayTable",
    "singular_sampler",
    "p1_sampler",
    "morrey_decay",
    "excess_decay",
    "oscillation_probe",
    "geometric_radii",
]


@dataclass
class FieldSampler:
    """Paired evaluators for a field w and its gradient Dw on the unit disk."""

    name: str
    w: Callable[[np.ndarray], np.ndarray]
    dw: Callable[[np.ndarray], np.ndarray]
    r_max: float = 1.0


def singular_sampler() -> FieldSampler:
    """The analytic unit-vector field x/|x|."""
    return FieldSampler(name="singular", w=u_sing, dw=du_sing)


def p1_sampler(field: DiscreteField) -> FieldSampler:
    """Point evaluation of a P1 field via KD-tree point location.

    Queries slightly outside the polygonal mesh (inside the true disk) are
    clamped to the nearest triangle, so probes near the boundary stay usable.
    """
    mesh = field.mesh
    tris = mesh.triangles
    P = mesh.nodes[tris]
    centroids = P.mean(axis=1)
    tree = cKDTree(centroids)
    dw_all = element_gradients(mesh, field)
    # affine maps x -> barycentric coordinates, precomputed per triangle
    T = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)  # (M,2,2)
    T_inv = np.linalg.inv(T)
    k_near = min(24, len(tris))

    def _locate(pts):
        pts = np.atleast_2d(pts)
        _, cand = tree.query(pts, k=k_near)
        cand = np.atleast_2d(cand)
        local = np.einsum("pkab,pb->pka", T_inv[cand], pts) - np.einsum(
            "pkab,pkb->pka", T_inv[cand], P[cand, 0]
        )
        lam = np.concatenate([1.0 - local.sum(axis=-1, keepdims=True), local], axis=-1)
        inside = lam.min(axis=-1) >= -1e-12
        # first candidate containing the point, else the least-violating one
        first = np.argmax(inside, axis=1)
        fallback = lam.min(axis=-1).argmax(axis=1)
        pick = np.where(inside.any(axis=1), first, fallback)
        rows = np.arange(len(pts))
        chosen = cand[rows, pick]
        bary = np.clip(lam[rows, pick], 0.0, None)
        bary /= bary.sum(axis=-1, keepdims=True)
        return chosen, bary

    def w_eval(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        tri, bary = _locate(flat)
        vals = np.einsum("pa,pai->pi", bary, field.values[tris[tri]])
        return vals.reshape(x.shape)

    def dw_eval(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        tri, _ = _locate(flat)
        return dw_all[tri].reshape(x.shape[:-1] + (2, 2))

    r_interior = np.linalg.norm(mesh.nodes[mesh.boundary], axis=1).min()
    return FieldSampler(name="p1", w=w_eval, dw=dw_eval, r_max=float(r_interior))


def geometric_radii(r_max: float, count: int = 6, ratio: float = 0.5) -> np.ndarray:
    """Decreasing geometric radius ladder starting at r_max."""
    return r_max * ratio ** np.arange(count)


@dataclass
class DecayTable:
    """(radius, quantity) pairs with the fitted log-log exponent."""

    quantity: str
    center: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    slope: float
    fit_residual: float
    running_slopes: np.ndarray
    verdict: str | None = None

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["radius", "value", "running_slope", "fitted_slope", "fit_residual"]
            )
            for r, v, rs in zip(self.radii, self.values, self.running_slopes):
                writer.writerow(
                    [
                        f"{r:.17g}",
                        f"{v:.17g}",
                        f"{rs:.17g}",
                        f"{self.slope:.17g}",
                        f"{self.fit_residual:.17g}",
                    ]
                )


def _fit_table(quantity, center, radii, values, verdict=None) -> DecayTable:
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(radii) < 4:
        raise ValueError("slope fits need at least 4 radii")
    if np.any(np.diff(radii) >= 0.0):
        raise ValueError("radii must be strictly decreasing")
    running = np.full(len(radii), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        running[1:] = np.log2(values[1:] / values[:-1]) / np.log2(radii[1:] / radii[:-1])
    if np.all(values > 0.0):
        lr = np.log2(radii)
        lv = np.log2(values)
        A = np.stack([lr, np.ones_like(lr)], axis=-1)
        coef, *_ = np.linalg.lstsq(A, lv, rcond=None)
        slope = float(coef[0])
        resid = float(np.sqrt(np.mean((A @ coef - lv) ** 2)))
    else:
        slope, resid = float("nan"), float("nan")
    return DecayTable(
        quantity=quantity,
        center=np.asarray(center, dtype=float),
        radii=radii,
        values=values,
        slope=slope,
        fit_residual=resid,
        running_slopes=running,
        verdict=verdict,
    )


def _ball_rule(center, graded: bool, n_r: int, n_theta: int) -> DiskRule:
    gamma = 4.0 if graded else 1.0
    return build_rule(n_r=n_r, n_theta=n_theta, gamma=gamma, gauss=4)


def _check_balls(sampler: FieldSampler, x0, radii) -> None:
    x0 = np.asarray(x0, dtype=float)
    if float(np.linalg.norm(x0)) + float(np.max(radii)) > sampler.r_max + 1e-12:
        raise ValueError("probe balls must stay inside the field's domain")


def morrey_decay(
    sampler: FieldSampler,
    x0,
    radii,
    p: float,
    n_r: int = 80,
    n_theta: int = 64,
) -> DecayTable:
    """Ball energies E(rho) = int_{B_rho(x0)} (1 + |V(Dw)|^2) dx and their slope."""
    _check_balls(sampler, x0, radii)
    x0 = np.asarray(x0, dtype=float)
    graded = float(np.linalg.norm(x0)) < 1e-12
    rule = _ball_rule(x0, graded, n_r, n_theta)
    values = []
    for rho in radii:
        pts = x0 + rho * rule.nodes
        V = v_map_mat(sampler.dw(pts), p)
        dens = 1.0 + fro_dot(V, V)
        values.append(rho**2 * float(np.sum(rule.weights * dens)))
    return _fit_table("morrey", x0, radii, values)


def excess_decay(
    sampler: FieldSampler,
    x0,
    radii,
    p: float,
    n_r: int = 80,
    n_theta: int = 64,
) -> DecayTable:
    """Mean-oscillation energies int_{B_rho} |V(Dw) - mean|^2 dx and slope."""
    _check_balls(sampler, x0, radii)
    x0 = np.asarray(x0, dtype=float)
    graded = float(np.linalg.norm(x0)) < 1e-12
    rule = _ball_rule(x0, graded, n_r, n_theta)
    values = []
    for rho in radii:
        pts = x0 + rho * rule.nodes
        V = v_map_mat(sampler.dw(pts), p)
        mean = np.einsum("n,nik->ik", rule.weights, V) / np.pi
        diff = V - mean
        values.append(rho**2 * float(np.sum(rule.weights * fro_dot(diff, diff))))
    return _fit_table("excess", x0, radii, values)


def oscillation_probe(
    sampler: FieldSampler,
    x0,
    radii,
    n_r_net: int = 12,
    n_theta_net: int = 24,
) -> DecayTable:
    """Sup-oscillation of w over a polar net in each ball, with a verdict.

    The verdict is a labeled heuristic: "discontinuous" when the oscillation
    never drops below half its value on the largest ball, else "continuous".
    Finite sampling cannot prove either; the net only witnesses oscillation.
    """
    _check_balls(sampler, x0, radii)
    x0 = np.asarray(x0, dtype=float)
    fractions = (np.arange(n_r_net) + 1.0) / n_r_net
    angles = 2.0 * np.pi * np.arange(n_theta_net) / n_theta_net
    F, A = np.meshgrid(fractions, angles, indexing="ij")
    net = np.stack([F * np.cos(A), F * np.sin(A)], axis=-1).reshape(-1, 2)
    values = []
    for rho in radii:
        pts = x0 + rho * net
        vals = sampler.w(pts)
        diff = vals[:, None, :] - vals[None, :, :]
        values.append(float(np.sqrt(np.sum(diff**2, axis=-1)).max()))
    values = np.asarray(values)
    if values[0] > 0.0 and values.min() > 0.5 * values[0]:
        verdict = "discontinuous (heuristic: oscillation never halved)"
    else:
        verdict = "continuous (heuristic)"
    return _fit_table("oscillation", x0, radii, values, verdict=verdict)
