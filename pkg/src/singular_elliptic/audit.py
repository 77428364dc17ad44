"""Sampling-based certification of the growth/ellipticity structure conditions.

Every inequality the construction is supposed to satisfy is tested on a large
deterministic sample cloud; the report carries the extremal quotients (the
empirical stand-ins nu_hat, L_hat for the analytic constants) together with
min/median margins per condition.  A pass means "no counterexample found with
positive margin", never a proof -- the margins quantify how far the cloud
stays from violating each inequality.

The x-slot enters only through unit vectors: the integrand is 0-homogeneous
in x (an invariant tested elsewhere), which removes one dimension of the
cloud.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrand import (
    IntegrandParams,
    coeff_a,
    d_z_coeff_a,
    d_z_coeff_a_quad,
    hess_f_zz,
    integrand_f,
    make_params,
)
from .tensor import fro_norm

__all__ = [
    "SampleCloud",
    "ConditionCheck",
    "AuditReport",
    "audit_integrand",
    "audit_coefficients",
    "ratio_curve",
    "fixed_directions",
]

_CHUNK = 8192


@dataclass(frozen=True)
class SampleCloud:
    """Deterministic sampling plan for (x, u, z) and the test directions."""

    n_samples: int = 100_000
    u_max: float = 3.0
    z_max: float = 50.0
    seed: int = 20240613
    n_random_dirs: int = 32

    def __post_init__(self):
        if self.n_samples < 4:
            raise ValueError("cloud needs at least the forced corner samples")

    def draw(self):
        """Sample arrays (x_unit, u, z), identical for identical seeds.

        Corner cases are forced into the first rows: z = 0, |z| = 1 (the
        cut-off edge) and |z| = z_max.
        """
        rng = np.random.default_rng(self.seed)
        n = self.n_samples
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        x = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        u_dir = rng.normal(size=(n, 2))
        u_dir /= np.linalg.norm(u_dir, axis=-1, keepdims=True)
        u = u_dir * rng.uniform(0.0, self.u_max, n)[:, None]
        z_dir = rng.normal(size=(n, 2, 2))
        z_dir /= fro_norm(z_dir)[:, None, None]
        # magnitude mixture: uniform, log-uniform, and clustered at the
        # cut-off edge |z| = 1 where g switches off
        kind = rng.integers(0, 3, n)
        mag = np.where(
            kind == 0,
            rng.uniform(0.0, self.z_max, n),
            np.where(
                kind == 1,
                np.exp(rng.uniform(np.log(1e-3), np.log(self.z_max), n)),
                rng.uniform(0.5, 1.5, n),
            ),
        )
        mag[0], mag[1], mag[2] = 0.0, 1.0, self.z_max
        z = z_dir * mag[:, None, None]
        return x, u, z

    def random_dirs(self, count: int):
        """Per-sample random unit test directions, drawn after the cloud."""
        rng = np.random.default_rng(self.seed + 1)
        lam = rng.normal(size=(count, self.n_random_dirs, 2, 2))
        return lam / fro_norm(lam)[..., None, None]


def fixed_directions() -> np.ndarray:
    """32 fixed unit Frobenius directions: 8 structured + 24 seeded random."""
    structured = []
    for i in range(2):
        for k in range(2):
            m = np.zeros((2, 2))
            m[i, k] = 1.0
            structured.append(m)
    structured.append(np.eye(2) / np.sqrt(2.0))
    structured.append(np.array([[1.0, 0.0], [0.0, -1.0]]) / np.sqrt(2.0))
    structured.append(np.array([[0.0, 1.0], [1.0, 0.0]]) / np.sqrt(2.0))
    structured.append(np.array([[0.0, 1.0], [-1.0, 0.0]]) / np.sqrt(2.0))
    rng = np.random.default_rng(987654321)
    extra = rng.normal(size=(24, 2, 2))
    extra /= fro_norm(extra)[:, None, None]
    return np.concatenate([np.array(structured), extra], axis=0)


@dataclass
class ConditionCheck:
    """Extremal quotient statistics for one audited inequality."""

    name: str
    sense: str  # "lower": min quotient must stay positive; "upper": max finite
    quotient_min: float
    quotient_median: float
    quotient_max: float
    margin: float
    passed: bool

    @staticmethod
    def lower(name, quotients_min, quotients_median, quotients_max):
        return ConditionCheck(
            name=name,
            sense="lower",
            quotient_min=quotients_min,
            quotient_median=quotients_median,
            quotient_max=quotients_max,
            margin=quotients_min,
            passed=bool(quotients_min > 0.0 and np.isfinite(quotients_min)),
        )

    @staticmethod
    def upper(name, quotients_min, quotients_median, quotients_max):
        finite = bool(np.isfinite(quotients_max) and quotients_max > 0.0)
        return ConditionCheck(
            name=name,
            sense="upper",
            quotient_min=quotients_min,
            quotient_median=quotients_median,
            quotient_max=quotients_max,
            margin=1.0 / quotients_max if finite else 0.0,
            passed=finite,
        )


@dataclass
class AuditReport:
    """Empirical constants and per-condition verdicts for one parameter pack."""

    target: str  # "integrand" or "coefficients"
    p: float
    m_g: float
    seed: int
    n_samples: int
    nu_hat: float
    L_hat: float
    conditions: list = field(default_factory=list)
    modulus_c: float | None = None

    def __post_init__(self):
        if self.nu_hat > self.L_hat:
            raise ValueError("empirical constants must satisfy nu_hat <= L_hat")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def csv_rows(self):
        rows = []
        for c in self.conditions:
            rows.append(
                [
                    self.target,
                    f"{self.p:.17g}",
                    c.name,
                    c.sense,
                    f"{c.quotient_min:.17g}",
                    f"{c.quotient_median:.17g}",
                    f"{c.quotient_max:.17g}",
                    f"{c.margin:.17g}",
                    "pass" if c.passed else "FAIL",
                ]
            )
        return rows

    def summary_text(self) -> str:
        lines = [
            f"audit target={self.target} p={self.p:.6g} m_g={self.m_g:.6g} "
            f"samples={self.n_samples} seed={self.seed}",
            f"  empirical nu_hat = {self.nu_hat:.6e}   L_hat = {self.L_hat:.6e}   "
            f"ratio = {self.L_hat / self.nu_hat:.6e}",
        ]
        if self.modulus_c is not None:
            lines.append(f"  u-continuity modulus constant = {self.modulus_c:.6e}")
        for c in self.conditions:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(
                f"  [{flag}] {c.name}: quotients [{c.quotient_min:.4e}, "
                f"{c.quotient_max:.4e}] margin {c.margin:.4e}"
            )
        return "\n".join(lines)

    def to_json(self, path: str | Path) -> None:
        payload = {
            "target": self.target,
            "p": self.p,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "nu_hat": self.nu_hat,
            "nu_hat_hex": float(self.nu_hat).hex(),
            "L_hat": self.L_hat,
            "L_hat_hex": float(self.L_hat).hex(),
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _quotient_stats(q: np.ndarray):
    q = q[np.isfinite(q)]
    return float(q.min()), float(np.median(q)), float(q.max())


def _chunks(n):
    for lo in range(0, n, _CHUNK):
        yield lo, min(lo + _CHUNK, n)


def audit_integrand(params: IntegrandParams, cloud: SampleCloud) -> AuditReport:
    """Audit p-growth and ellipticity of the integrand on the cloud.

    Checked with empirical extremal quotients:
      growth:      nu |z|^p <= f(x, z) <= L (1 + |z|)^p
      ellipticity: nu (1+|z|)^(p-2) |lam|^2 <= D_zz f (lam,lam) <= L (...)
      continuity of D_zz f in z (sampled modulus on a subset).
    """
    x, _, z = cloud.draw()
    lam_fixed = fixed_directions()
    n = cloud.n_samples
    p = params.p
    g_low, g_up, e_low, e_up = [], [], [], []
    for lo, hi in _chunks(n):
        xc = x[lo:hi, None, :]
        zc = z[lo:hi, None, :, :]
        znorm = fro_norm(z[lo:hi])
        f = integrand_f(params, x[lo:hi], z[lo:hi])
        with np.errstate(divide="ignore"):
            g_low.append(np.where(znorm > 0.0, f / znorm**p, np.inf))
        g_up.append(f / (1.0 + znorm) ** p)
        lam = np.concatenate(
            [np.broadcast_to(lam_fixed, (hi - lo, 32, 2, 2)),
             cloud.random_dirs(n)[lo:hi]],
            axis=1,
        )
        h = hess_f_zz(params, xc, zc, lam)
        weight = (1.0 + znorm[:, None]) ** (p - 2.0)  # |lam| = 1 by construction
        quot = h / weight
        e_low.append(quot.min(axis=1))
        e_up.append(quot.max(axis=1))
    g_low = np.concatenate(g_low)
    g_up = np.concatenate(g_up)
    e_low = np.concatenate(e_low)
    e_up = np.concatenate(e_up)

    # sampled z-continuity of the second derivative on a subset
    m = min(2000, n)
    rngc = np.random.default_rng(cloud.seed + 2)
    eta = rngc.normal(size=(m, 2, 2))
    eta /= fro_norm(eta)[:, None, None]
    lam_sub = lam_fixed[0]
    base = hess_f_zz(params, x[:m], z[:m], lam_sub)
    deltas = []
    for d in (1e-3, 1e-4):
        pert = hess_f_zz(params, x[:m], z[:m] + d * eta, lam_sub)
        deltas.append(float(np.max(np.abs(pert - base) / (1.0 + np.abs(base)))))
    cont_margin = (deltas[0] - deltas[1]) / deltas[0] if deltas[0] > 0.0 else 1.0

    checks = [
        ConditionCheck.lower("growth-lower f >= nu |z|^p", *_quotient_stats(g_low)),
        ConditionCheck.upper("growth-upper f <= L (1+|z|)^p", *_quotient_stats(g_up)),
        ConditionCheck.lower("ellipticity-lower D_zz f", *_quotient_stats(e_low)),
        ConditionCheck.upper("ellipticity-upper D_zz f", *_quotient_stats(e_up)),
        ConditionCheck(
            name="z-continuity of D_zz f",
            sense="lower",
            quotient_min=deltas[1],
            quotient_median=float("nan"),
            quotient_max=deltas[0],
            margin=cont_margin,
            passed=bool(cont_margin > 0.0),
        ),
    ]
    nu_hat = float(e_low.min())
    L_hat = float(max(g_up.max(), e_up.max()))
    return AuditReport(
        target="integrand",
        p=p,
        m_g=params.m_g,
        seed=cloud.seed,
        n_samples=n,
        nu_hat=nu_hat,
        L_hat=L_hat,
        conditions=checks,
    )


def audit_coefficients(params: IntegrandParams, cloud: SampleCloud) -> AuditReport:
    """Audit the coefficient field a(u, z): C^1 in z, growth, ellipticity and
    the Lipschitz-type continuity in u with modulus min{|u - ubar|, 1}."""
    _, u, z = cloud.draw()
    lam_fixed = fixed_directions()
    n = cloud.n_samples
    p = params.p
    g_up, e_low, e_up, u_cont = [], [], [], []
    u_pair = np.roll(u, 1, axis=0)
    for lo, hi in _chunks(n):
        uc = u[lo:hi, None, :]
        zc = z[lo:hi, None, :, :]
        znorm = fro_norm(z[lo:hi])
        a = coeff_a(params, u[lo:hi], z[lo:hi])
        D = d_z_coeff_a(params, u[lo:hi], z[lo:hi])
        d_norm = np.sqrt(np.einsum("nklij->n", D * D))
        growth = (fro_norm(a) + d_norm * (1.0 + znorm)) / (1.0 + znorm) ** (p - 1.0)
        g_up.append(growth)
        lam = np.concatenate(
            [np.broadcast_to(lam_fixed, (hi - lo, 32, 2, 2)),
             cloud.random_dirs(n)[lo:hi]],
            axis=1,
        )
        quad = d_z_coeff_a_quad(params, uc, zc, lam)
        weight = (1.0 + znorm[:, None]) ** (p - 2.0)
        quot = quad / weight
        e_low.append(quot.min(axis=1))
        e_up.append(quot.max(axis=1))
        a_bar = coeff_a(params, u_pair[lo:hi], z[lo:hi])
        du = np.minimum(np.linalg.norm(u[lo:hi] - u_pair[lo:hi], axis=-1), 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            u_cont.append(
                np.where(
                    du > 0.0,
                    fro_norm(a - a_bar) / (du * (1.0 + znorm) ** (p - 1.0)),
                    0.0,
                )
            )
    g_up = np.concatenate(g_up)
    e_low = np.concatenate(e_low)
    e_up = np.concatenate(e_up)
    u_cont = np.concatenate(u_cont)

    # C^1 differentiability in z: closed-form derivative vs central differences
    m = min(1000, n)
    rngc = np.random.default_rng(cloud.seed + 3)
    dz = rngc.normal(size=(m, 2, 2))
    dz /= fro_norm(dz)[:, None, None]
    eps = 1e-6 * (1.0 + fro_norm(z[:m]))[:, None, None]
    D_sub = d_z_coeff_a(params, u[:m], z[:m])
    action = np.einsum("nklij,nik->njl", D_sub, dz)
    fd = (
        coeff_a(params, u[:m], z[:m] + eps * dz)
        - coeff_a(params, u[:m], z[:m] - eps * dz)
    ) / (2.0 * eps)
    fd_err = float(np.max(fro_norm(action - fd) / (1.0 + fro_norm(fd))))

    checks = [
        ConditionCheck(
            name="C1-in-z (derivative vs finite differences)",
            sense="lower",
            quotient_min=fd_err,
            quotient_median=float("nan"),
            quotient_max=fd_err,
            margin=(1e-5 - fd_err) / 1e-5,
            passed=bool(fd_err < 1e-5),
        ),
        ConditionCheck.upper(
            "growth |a| + |D_z a|(1+|z|) <= L (1+|z|)^(p-1)", *_quotient_stats(g_up)
        ),
        ConditionCheck.lower("ellipticity-lower D_z a", *_quotient_stats(e_low)),
        ConditionCheck.upper(
            "u-continuity |a(u,.) - a(ubar,.)| with min{|u-ubar|,1}",
            *_quotient_stats(u_cont[u_cont > 0.0]),
        ),
    ]
    nu_hat = float(e_low.min())
    L_hat = float(g_up.max())
    return AuditReport(
        target="coefficients",
        p=p,
        m_g=params.m_g,
        seed=cloud.seed,
        n_samples=n,
        nu_hat=nu_hat,
        L_hat=L_hat,
        conditions=checks,
        modulus_c=float(np.nanmax(u_cont)),
    )


@dataclass
class RatioCurve:
    """nu_hat, L_hat and their ratio per exponent, with the tail diagnostic."""

    p_grid: np.ndarray
    nu_hats: np.ndarray
    L_hats: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return self.L_hats / self.nu_hats

    @property
    def tail_increasing(self) -> bool:
        """Strict increase of the ratio over the last three grid points
        (vacuously true for shorter grids)."""
        r = self.ratios
        if len(r) < 3:
            return True
        tail = r[-3:]
        return bool(np.all(np.diff(tail) > 0.0))

    def rows(self):
        return [
            [f"{p:.17g}", f"{nu:.17g}", f"{L:.17g}", f"{L / nu:.17g}"]
            for p, nu, L in zip(self.p_grid, self.nu_hats, self.L_hats)
        ]


def ratio_curve(p_grid, cloud: SampleCloud, params_for=None) -> RatioCurve:
    """Empirical ellipticity-ratio curve of the coefficient field over a p-grid.

    The grid must be increasing inside (1, 2); the ratio blowing up toward
    p = 2 is the expected diagnostic.
    """
    p_grid = np.asarray(sorted(p_grid), dtype=float)
    if np.any(p_grid <= 1.0) or np.any(p_grid >= 2.0):
        raise ValueError("the p-grid must stay strictly inside (1, 2)")
    nus, Ls = [], []
    for p in p_grid:
        params = params_for(p) if params_for is not None else make_params(p)
        rep = audit_coefficients(params, cloud)
        nus.append(rep.nu_hat)
        Ls.append(rep.L_hat)
    return RatioCurve(p_grid=p_grid, nu_hats=np.array(nus), L_hats=np.array(Ls))
