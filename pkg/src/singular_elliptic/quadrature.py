"""Graded polar quadrature on the unit disk and the weak-form residual checks.

The only singularity ever integrated sits at the origin, so the rule is a
tensor product: radial cells with breakpoints (k/n_r)^gamma carrying
Gauss-Legendre points (grading clusters cells near 0; no node ever lands on
the origin), uniform midpoints in the angle.  Node weights include the polar
Jacobian r, so plain weighted sums integrate over the disk.

Sums are evaluated with numpy's fixed-order pairwise summation, which makes
every integral bit-reproducible for a fixed rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .integrand import IntegrandParams, coeff_a, grad_f_z
from .singular import du_sing, u_sing
from .tensor import fro_dot, fro_norm

__all__ = [
    "DiskRule",
    "TestFunction",
    "build_rule",
    "dump_rule",
    "load_rule",
    "integrate",
    "default_test_family",
    "annulus_bump_profile",
    "plateau_profile",
    "hat_profile",
    "weak_residual",
    "weak_residual_el",
    "singular_coeff_field",
    "singular_el_field",
]


@dataclass(frozen=True)
class DiskRule:
    """Nodes (N,2), positive weights (N,), and the construction parameters."""

    nodes: np.ndarray
    weights: np.ndarray
    n_r: int
    n_theta: int
    gamma: float
    gauss: int

    def __post_init__(self):
        r = np.linalg.norm(self.nodes, axis=-1)
        if r.min() <= 0.0 or r.max() >= 1.0:
            raise ValueError("rule nodes must lie in the open punctured disk")
        total = float(self.weights.sum())
        if abs(total - np.pi) > 1e-12 * np.pi:
            raise ValueError(f"rule weights sum to {total}, expected pi")


def build_rule(n_r: int, n_theta: int, gamma: float, gauss: int = 6) -> DiskRule:
    """Tensor rule with n_r graded radial cells, n_theta angles, gauss points per cell."""
    if n_r < 2 or n_theta < 2:
        raise ValueError("need at least 2 radial cells and 2 angles")
    if gamma < 1.0:
        raise ValueError(f"grading exponent must be >= 1, got {gamma}")
    gx, gw = np.polynomial.legendre.leggauss(gauss)
    breaks = (np.arange(n_r + 1) / n_r) ** gamma
    mid = (breaks[:-1] + breaks[1:]) / 2.0
    half = (breaks[1:] - breaks[:-1]) / 2.0
    r = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    wr = (half[:, None] * gw[None, :]).ravel() * r
    theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
    rr = np.repeat(r, n_theta)
    tt = np.tile(theta, r.size)
    nodes = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)
    weights = np.repeat(wr, n_theta) * (2.0 * np.pi / n_theta)
    return DiskRule(
        nodes=nodes, weights=weights, n_r=n_r, n_theta=n_theta, gamma=gamma, gauss=gauss
    )


def integrate(rule: DiskRule, values) -> float:
    """Weighted sum of point values over the rule."""
    return float(np.sum(rule.weights * values))


def dump_rule(rule: DiskRule, path: str | Path) -> None:
    """Write the rule as CSV (node_x, node_y, weight) for cross-checking."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_x", "node_y", "weight"])
        for (x, y), w in zip(rule.nodes, rule.weights):
            writer.writerow([f"{x:.17g}", f"{y:.17g}", f"{w:.17g}"])


def load_rule(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read back a dumped rule as (nodes, weights) arrays."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    return data[:, :2], data[:, 2]


# --- test functions -------------------------------------------------------

@dataclass
class TestFunction:
    """A vector-valued test function vanishing on the unit circle.

    phi(x) = profile(|x|) * modulation(x) * e_component with analytic gradient;
    bounded, with zero trace on the boundary, so it is admissible for the weak
    formulation.  `covers_origin` records whether the support reaches 0.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    name: str
    kind: str
    covers_origin: bool
    profile: Callable[[np.ndarray], np.ndarray]
    dprofile: Callable[[np.ndarray], np.ndarray]
    modulation: str = "one"
    component: int = 0
    _sup_cache: float | None = field(default=None, repr=False, compare=False)

    def _mod(self, x):
        if self.modulation == "one":
            return np.ones(x.shape[:-1]), np.zeros_like(x)
        idx = 0 if self.modulation == "x1" else 1
        grad = np.zeros_like(x)
        grad[..., idx] = 1.0
        return x[..., idx].copy(), grad

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        q, _ = self._mod(x)
        out = np.zeros_like(x)
        out[..., self.component] = self.profile(r) * q
        return out

    def dphi(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        safe_r = np.where(r == 0.0, 1.0, r)
        xhat = x / safe_r[..., None]
        q, dq = self._mod(x)
        radial = self.dprofile(r)[..., None] * xhat * q[..., None]
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., self.component, :] = radial + self.profile(r)[..., None] * dq
        return out

    def dphi_sup(self, n_r: int = 400, n_theta: int = 64) -> float:
        """Sup of |Dphi| estimated on a dense polar net (cached)."""
        if self._sup_cache is None:
            r = np.linspace(1e-4, 1.0 - 1e-9, n_r)
            t = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
            R, T = np.meshgrid(r, t, indexing="ij")
            pts = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1)
            self._sup_cache = float(fro_norm(self.dphi(pts)).max())
        return self._sup_cache


def annulus_bump_profile(a: float, b: float):
    """Smooth bump supported on the annulus a < r < b (avoids the origin)."""
    if not 0.0 < a < b <= 1.0:
        raise ValueError("need 0 < a < b <= 1")

    def psi(r):
        r = np.asarray(r, dtype=float)
        t = (2.0 * r - (a + b)) / (b - a)
        out = np.zeros_like(r)
        m = np.abs(t) < 1.0
        out[m] = np.exp(1.0 - 1.0 / (1.0 - t[m] ** 2))
        return out

    def dpsi(r):
        r = np.asarray(r, dtype=float)
        t = (2.0 * r - (a + b)) / (b - a)
        out = np.zeros_like(r)
        m = np.abs(t) < 1.0
        tm = t[m]
        w = 1.0 - tm**2
        out[m] = np.exp(1.0 - 1.0 / w) * (-2.0 * tm / w**2) * (2.0 / (b - a))
        return out

    return psi, dpsi


def plateau_profile(b: float, flat: float = 0.3):
    """Smooth profile equal to 1 on r <= flat*b, decaying to 0 at r = b."""
    if not 0.0 < b <= 1.0:
        raise ValueError("need 0 < b <= 1")

    def psi(r):
        r = np.asarray(r, dtype=float)
        t = r / b
        out = np.zeros_like(r)
        out[t <= flat] = 1.0
        m = (t > flat) & (t < 1.0)
        tau = (t[m] - flat) / (1.0 - flat)
        out[m] = np.exp(1.0 - 1.0 / (1.0 - tau**2))
        return out

    def dpsi(r):
        r = np.asarray(r, dtype=float)
        t = r / b
        out = np.zeros_like(r)
        m = (t > flat) & (t < 1.0)
        tau = (t[m] - flat) / (1.0 - flat)
        w = 1.0 - tau**2
        out[m] = (
            np.exp(1.0 - 1.0 / w) * (-2.0 * tau / w**2) / ((1.0 - flat) * b)
        )
        return out

    return psi, dpsi


def hat_profile(r0: float, width: float):
    """Piecewise-linear radial hat centered at r0 (r0 = 0 gives a cone at the origin)."""
    if width <= 0.0 or r0 + width > 1.0:
        raise ValueError("hat must fit inside the unit disk")

    def psi(r):
        r = np.asarray(r, dtype=float)
        return np.clip(1.0 - np.abs(r - r0) / width, 0.0, None)

    def dpsi(r):
        r = np.asarray(r, dtype=float)
        inside = (np.abs(r - r0) < width) & (np.abs(r - r0) > 0.0)
        return np.where(inside, -np.sign(r - r0) / width, 0.0)

    return psi, dpsi


def default_test_family() -> list[TestFunction]:
    """12 smooth radial bumps (6 origin-avoiding annuli, 6 origin-covering
    plateaus) x 3 modulations {1, x1, x2} x 2 components = 72 test functions."""
    annuli = [(0.3, 0.7), (0.15, 0.45), (0.5, 0.9), (0.2, 0.6), (0.35, 0.85), (0.55, 0.95)]
    plateaus = [0.35, 0.5, 0.65, 0.8, 0.9, 0.97]
    family: list[TestFunction] = []
    for a, b in annuli:
        psi, dpsi = annulus_bump_profile(a, b)
        for mod in ("one", "x1", "x2"):
            for comp in (0, 1):
                family.append(
                    TestFunction(
                        name=f"annulus[{a},{b}]*{mod}*e{comp + 1}",
                        kind="radial-bump",
                        covers_origin=False,
                        profile=psi,
                        dprofile=dpsi,
                        modulation=mod,
                        component=comp,
                    )
                )
    for b in plateaus:
        psi, dpsi = plateau_profile(b)
        for mod in ("one", "x1", "x2"):
            for comp in (0, 1):
                family.append(
                    TestFunction(
                        name=f"plateau[{b}]*{mod}*e{comp + 1}",
                        kind="radial-bump",
                        covers_origin=True,
                        profile=psi,
                        dprofile=dpsi,
                        modulation=mod,
                        component=comp,
                    )
                )
    return family


# --- weak residuals -------------------------------------------------------

def singular_coeff_field(params: IntegrandParams, rule: DiskRule):
    """a(u, Du) of the singular field evaluated on all rule nodes."""
    x = rule.nodes
    return coeff_a(params, u_sing(x), du_sing(x))


def singular_el_field(params: IntegrandParams, rule: DiskRule):
    """grad_f_z(x, Du) of the singular field evaluated on all rule nodes."""
    x = rule.nodes
    return grad_f_z(params, x, du_sing(x))


def weak_residual(
    params: IntegrandParams,
    rule: DiskRule,
    phi: TestFunction,
    flux_values: np.ndarray | None = None,
) -> float:
    """Quadrature value of int a(u, Du) . Dphi over the disk (exactly 0 in the limit).

    Pass precomputed flux_values (from singular_coeff_field) when evaluating a
    whole family on one rule.
    """
    if flux_values is None:
        flux_values = singular_coeff_field(params, rule)
    return float(np.sum(rule.weights * fro_dot(flux_values, phi.dphi(rule.nodes))))


def weak_residual_el(
    params: IntegrandParams,
    rule: DiskRule,
    phi: TestFunction,
    flux_values: np.ndarray | None = None,
) -> float:
    """Same residual with the variational flux grad_f_z(x, Du) instead of a(u, Du).

    Along the singular field the two fluxes are proportional (factor p*m_g,
    the cut-off being inactive), so this residual scales accordingly.
    """
    if flux_values is None:
        flux_values = singular_el_field(params, rule)
    return float(np.sum(rule.weights * fro_dot(flux_values, phi.dphi(rule.nodes))))
