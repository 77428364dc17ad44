"""P1 finite elements on the unit disk: mesh, assembly, Newton minimization.

The mesh is a deterministic "spiderweb": ring j of n carries 6j nodes at
radius j/n, stitched to its neighbours with a two-pointer strip, plus an
origin fan.  Triangles are near-equilateral at every scale, and the 3-point
interior Gauss rule used for all integrals never touches the origin.

The energy sum_T int f(x, Dw_T) is smooth and strictly convex in the free
nodal values, so the minimizer is computed by damped Newton (exact sparse
Hessian, Armijo backtracking, diagonally preconditioned CG inner solves).
A Picard/Newton splitting handles the u-dependent coefficient system, for
which no variational structure or uniqueness is available.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .integrand import (
    IntegrandParams,
    coeff_a,
    d_z_coeff_a,
    grad_f_z,
    hess_f_zz_form,
    integrand_f,
)

__all__ = [
    "DiskMesh",
    "DiscreteField",
    "SolveLog",
    "PicardLog",
    "ConvergenceError",
    "mesh_disk",
    "interpolate_singular",
    "element_gradients",
    "energy",
    "assemble_gradient",
    "assemble_hessian",
    "minimize",
    "solve_u_dependent",
    "solve_frozen",
    "save_mesh",
    "load_mesh",
    "save_field",
    "load_field",
]

# barycentric coordinates / weights of the 3-point degree-2 triangle rule
_GAUSS_BARY = np.array(
    [[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
     [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
     [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]]
)


class ConvergenceError(RuntimeError):
    """Raised when a nonlinear solve fails; carries the log gathered so far
    and, for the fixed-point solver, the best iterate reached."""

    def __init__(self, message, log=None, field=None):
        super().__init__(message)
        self.log = log
        self.field = field


@dataclass
class DiskMesh:
    """Conforming triangulation of the unit disk."""

    nodes: np.ndarray       # (N, 2)
    triangles: np.ndarray   # (M, 3) int, positively oriented
    boundary: np.ndarray    # (N,) bool
    h: float
    _geom: dict = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def geometry(self) -> dict:
        """Cached per-triangle areas, barycentric gradients and Gauss points."""
        if self._geom is None:
            P = self.nodes[self.triangles]          # (M,3,2)
            e1 = P[:, 1] - P[:, 0]
            e2 = P[:, 2] - P[:, 0]
            area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            if np.any(area <= 0.0):
                raise ValueError("mesh contains non-positively-oriented triangles")
            # grad lambda_a = rot(P_{a+1} - P_{a+2}) / (2 area), rot(x,y) = (y,-x)
            diffs = P[:, [1, 2, 0]] - P[:, [2, 0, 1]]        # (M,3,2)
            grads = np.stack([diffs[..., 1], -diffs[..., 0]], axis=-1)
            grads /= (2.0 * area)[:, None, None]
            gauss = np.einsum("qa,mad->mqd", _GAUSS_BARY, P)  # (M,3,2)
            if np.linalg.norm(gauss, axis=-1).min() <= 1e-14:
                raise ValueError("a quadrature point landed on the origin")
            self._geom = {"area": area, "grads": grads, "gauss": gauss}
        return self._geom


@dataclass
class DiscreteField:
    """Nodal Vec2 values attached to a mesh."""

    mesh: DiskMesh
    values: np.ndarray  # (N, 2)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_nodes, 2):
            raise ValueError("field shape does not match mesh")


@dataclass
class SolveLog:
    """Per-iteration record of a Newton minimization."""

    iters: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    cg_iters: list = field(default_factory=list)
    converged: bool = False

    def append(self, it, energy, grad_norm, step, cg):
        self.iters.append(it)
        self.energies.append(energy)
        self.grad_norms.append(grad_norm)
        self.steps.append(step)
        self.cg_iters.append(cg)

    def rows(self):
        return list(zip(self.iters, self.energies, self.grad_norms, self.steps, self.cg_iters))


@dataclass
class PicardLog:
    """Per-outer-iteration record of the u-dependent fixed-point solve."""

    outers: list = field(default_factory=list)
    fp_residuals: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    converged: bool = False


# --- mesh construction ------------------------------------------------------

def _stitch(inner: np.ndarray, inner_angles, outer: np.ndarray, outer_angles):
    """Triangle strip between two concentric node rings sorted by angle."""
    m, M = len(inner), len(outer)
    tris = []
    i = k = 0
    two_pi = 2.0 * np.pi
    while i < m or k < M:
        adv_outer = k < M
        if i < m and k < M:
            next_in = inner_angles[(i + 1) % m] + (two_pi if i + 1 >= m else 0.0)
            next_out = outer_angles[(k + 1) % M] + (two_pi if k + 1 >= M else 0.0)
            adv_outer = next_out <= next_in
        if adv_outer:
            tris.append((outer[k % M], outer[(k + 1) % M], inner[i % m]))
            k += 1
        else:
            tris.append((outer[k % M], inner[(i + 1) % m], inner[i % m]))
            i += 1
    return tris


def mesh_disk(h: float, origin_node: bool = True) -> DiskMesh:
    """Quasi-uniform spiderweb triangulation with target edge length h.

    Ring j of n = round(1/h) has 6j nodes; with origin_node the center is a
    mesh vertex (fanned), otherwise the innermost hexagon is triangulated
    without it and the origin lies strictly inside an element.
    """
    if not 0.0 < h < 0.5:
        raise ValueError(f"mesh size must satisfy 0 < h < 0.5, got {h}")
    n = max(2, round(1.0 / h))
    if n > 400:
        raise MemoryError("mesh size too small for the desk-scale budget")
    nodes = []
    ring_idx = []
    ring_angles = []
    if origin_node:
        nodes.append((0.0, 0.0))
    for j in range(1, n + 1):
        mj = 6 * j
        ang = 2.0 * np.pi * np.arange(mj) / mj
        start = len(nodes)
        r = j / n
        for a in ang:
            nodes.append((r * np.cos(a), r * np.sin(a)))
        ring_idx.append(np.arange(start, start + mj))
        ring_angles.append(ang)
    nodes = np.array(nodes)
    tris = []
    if origin_node:
        first = ring_idx[0]
        for k in range(6):
            tris.append((0, first[k], first[(k + 1) % 6]))
    else:
        v = ring_idx[0]
        for k in range(1, 5):
            tris.append((v[0], v[k], v[k + 1]))
    for j in range(1, n):
        tris.extend(
            _stitch(ring_idx[j - 1], ring_angles[j - 1], ring_idx[j], ring_angles[j])
        )
    tris = np.array(tris, dtype=np.int64)
    # enforce positive orientation
    P = nodes[tris]
    cross = (P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1]) - (
        P[:, 1, 1] - P[:, 0, 1]
    ) * (P[:, 2, 0] - P[:, 0, 0])
    flip = cross < 0.0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[ring_idx[-1]] = True
    mesh = DiskMesh(nodes=nodes, triangles=tris, boundary=boundary, h=1.0 / n)
    mesh.geometry()  # validates orientation and quadrature points
    return mesh


def interpolate_singular(mesh: DiskMesh) -> DiscreteField:
    """Nodal interpolant of x/|x|; the origin node (if any) gets the symmetric
    value (0, 0) -- its patch energy vanishes in the limit for p < 2."""
    r = np.linalg.norm(mesh.nodes, axis=1)
    vals = np.zeros_like(mesh.nodes)
    m = r > 0
    vals[m] = mesh.nodes[m] / r[m, None]
    return DiscreteField(mesh=mesh, values=vals)


# --- assembly ---------------------------------------------------------------

def _values(w) -> np.ndarray:
    return np.asarray(getattr(w, "values", w), dtype=float)


def element_gradients(mesh: DiskMesh, w) -> np.ndarray:
    """Per-triangle constant gradient Dw[m, i, k] of a P1 field."""
    geom = mesh.geometry()
    vals = _values(w)
    return np.einsum("mai,mak->mik", vals[mesh.triangles], geom["grads"])


def energy(params: IntegrandParams, mesh: DiskMesh, w) -> float:
    """Discrete energy: 3-point Gauss quadrature of f(x, Dw) per triangle."""
    geom = mesh.geometry()
    dw = element_gradients(mesh, w)
    vals = integrand_f(params, geom["gauss"], dw[:, None, :, :])  # (M,3)
    return float(np.sum(geom["area"] / 3.0 * vals.sum(axis=1)))


def assemble_gradient(params: IntegrandParams, mesh: DiskMesh, w) -> np.ndarray:
    """Exact energy gradient wrt free nodal values; boundary rows are zeroed."""
    geom = mesh.geometry()
    dw = element_gradients(mesh, w)
    gf = grad_f_z(params, geom["gauss"], dw[:, None, :, :])       # (M,3,2,2)
    contrib = np.einsum("m,mqik,mak->mai", geom["area"] / 3.0, gf, geom["grads"])
    out = np.zeros((mesh.n_nodes, 2))
    np.add.at(out, mesh.triangles.ravel(), contrib.reshape(-1, 2))
    out[mesh.boundary] = 0.0
    return out


def _assemble_matrix(mesh: DiskMesh, form4: np.ndarray) -> sp.csr_matrix:
    """Assemble sum_T w_q Form4[k,l,i,j] grad_a[k] grad_b[l] into a (2N,2N) CSR."""
    geom = mesh.geometry()
    K_el = np.einsum(
        "m,mqklij,mak,mbl->maibj",
        geom["area"] / 3.0,
        form4,
        geom["grads"],
        geom["grads"],
    )  # (M,3,2,3,2)
    tris = mesh.triangles
    rows = (2 * tris[:, :, None, None, None] + np.arange(2)[None, None, :, None, None])
    cols = (2 * tris[:, None, None, :, None] + np.arange(2)[None, None, None, None, :])
    rows = np.broadcast_to(rows, K_el.shape).ravel()
    cols = np.broadcast_to(cols, K_el.shape).ravel()
    n2 = 2 * mesh.n_nodes
    return sp.coo_matrix((K_el.ravel(), (rows, cols)), shape=(n2, n2)).tocsr()


def assemble_hessian(params: IntegrandParams, mesh: DiskMesh, w) -> sp.csr_matrix:
    """Exact sparse energy Hessian (2N x 2N, symmetric positive definite on
    the free dofs by strict convexity of the integrand)."""
    geom = mesh.geometry()
    dw = element_gradients(mesh, w)
    H = hess_f_zz_form(params, geom["gauss"], dw[:, None, :, :])  # (M,3,2,2,2,2)
    return _assemble_matrix(mesh, H)


def _free_dofs(mesh: DiskMesh) -> np.ndarray:
    return np.repeat(~mesh.boundary, 2)


def minimize(
    params: IntegrandParams,
    mesh: DiskMesh,
    tol: float,
    max_iter: int = 60,
    w0: DiscreteField | None = None,
    cg_rtol: float = 1e-8,
) -> tuple[DiscreteField, SolveLog]:
    """Damped Newton minimization of the energy over fields with trace x/|x|.

    Stops when the free-gradient norm drops below tol * (1 + |energy|); the
    returned log has non-increasing energies.  Raises ConvergenceError when
    the Armijo search stalls or max_iter is exhausted.
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    if w0 is None:
        w = interpolate_singular(mesh).values.copy()
    else:
        w = _values(w0).copy()
    w[mesh.boundary] = mesh.nodes[mesh.boundary]
    free = _free_dofs(mesh)
    log = SolveLog()
    E = energy(params, mesh, w)
    for it in range(max_iter):
        g = assemble_gradient(params, mesh, w)
        gn = float(np.linalg.norm(g.ravel()[free]))
        if gn <= tol * (1.0 + abs(E)):
            log.append(it, E, gn, 0.0, 0)
            log.converged = True
            return DiscreteField(mesh=mesh, values=w), log
        K = assemble_hessian(params, mesh, w)
        K_ff = K[free][:, free]
        rhs = -g.ravel()[free]
        diag = K_ff.diagonal()
        M = sp.diags(1.0 / np.where(diag > 0.0, diag, 1.0))
        counter = {"n": 0}

        def _cb(_xk):
            counter["n"] += 1

        d_f, info = spla.cg(K_ff, rhs, rtol=cg_rtol, atol=0.0, M=M, callback=_cb)
        if info != 0:
            raise ConvergenceError(f"inner CG failed with info={info}", log)
        d = np.zeros(2 * mesh.n_nodes)
        d[free] = d_f
        slope = float(rhs @ d_f)  # = -g.d > 0 for a descent direction
        step = 1.0
        for _ in range(50):
            E_new = energy(params, mesh, w + step * d.reshape(-1, 2))
            if E_new <= E - 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            raise ConvergenceError("Armijo line search failed after 50 halvings", log)
        w = w + step * d.reshape(-1, 2)
        log.append(it, E, gn, step, counter["n"])
        E = E_new
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", log)


# --- the u-dependent coefficient system --------------------------------------

def _gauss_field(mesh: DiskMesh, v) -> np.ndarray:
    """P1 interpolation of nodal values at the Gauss points: (M,3,2)."""
    return np.einsum("qa,mai->mqi", _GAUSS_BARY, _values(v)[mesh.triangles])


def _coeff_residual_q(params, mesh, vq, w) -> np.ndarray:
    """Weak residual of div a(v(x), Dw) = 0 with v given at the Gauss points."""
    geom = mesh.geometry()
    dw = element_gradients(mesh, w)
    a_vals = coeff_a(params, vq, dw[:, None, :, :])               # (M,3,2,2)
    contrib = np.einsum("m,mqik,mak->mai", geom["area"] / 3.0, a_vals, geom["grads"])
    out = np.zeros((mesh.n_nodes, 2))
    np.add.at(out, mesh.triangles.ravel(), contrib.reshape(-1, 2))
    out[mesh.boundary] = 0.0
    return out


def _coeff_jacobian_q(params, mesh, vq, w) -> sp.csr_matrix:
    dw = element_gradients(mesh, w)
    D = d_z_coeff_a(params, vq, dw[:, None, :, :])                # (M,3,2,2,2,2)
    return _assemble_matrix(mesh, D)


def _coeff_residual(params, mesh, v, w) -> np.ndarray:
    return _coeff_residual_q(params, mesh, _gauss_field(mesh, v), w)


def solve_frozen(
    params: IntegrandParams,
    mesh: DiskMesh,
    u_at,
    tol: float = 1e-10,
    max_iter: int = 30,
    w0: DiscreteField | None = None,
) -> DiscreteField:
    """Newton solve of the frozen system div a(v(x), Dw) = 0 for a fixed map v.

    u_at is a callable evaluating v at arbitrary points (e.g. the exact
    singular map), so the freeze need not pass through nodal interpolation.
    """
    geom = mesh.geometry()
    vq = u_at(geom["gauss"])
    if w0 is None:
        w = interpolate_singular(mesh).values.copy()
    else:
        w = _values(w0).copy()
    w[mesh.boundary] = mesh.nodes[mesh.boundary]
    free = _free_dofs(mesh)
    for _ in range(max_iter):
        R = _coeff_residual_q(params, mesh, vq, w)
        rn = float(np.linalg.norm(R.ravel()[free]))
        if rn <= tol:
            return DiscreteField(mesh=mesh, values=w)
        J = _coeff_jacobian_q(params, mesh, vq, w)
        d_f = spla.spsolve(J[free][:, free].tocsc(), -R.ravel()[free])
        d = np.zeros(2 * mesh.n_nodes)
        d[free] = d_f
        step = 1.0
        for _ in range(50):
            w_try = w + step * d.reshape(-1, 2)
            rn_try = float(
                np.linalg.norm(_coeff_residual_q(params, mesh, vq, w_try).ravel()[free])
            )
            if rn_try <= (1.0 - 1e-4 * step) * rn:
                w = w_try
                break
            step *= 0.5
        else:
            raise ConvergenceError("frozen Newton line search failed")
    raise ConvergenceError(f"frozen Newton did not reach {tol} in {max_iter} iterations")


def solve_u_dependent(
    params: IntegrandParams,
    mesh: DiskMesh,
    tol: float,
    max_outer: int = 30,
    inner_iter: int = 15,
    w0: DiscreteField | None = None,
) -> tuple[DiscreteField, PicardLog]:
    """Fixed-point solve of the u-dependent system div a(w, Dw) = 0.

    Outer Picard freezes the u-slot at the current iterate; the frozen (still
    nonlinear in Dw, strictly monotone) problem is solved by Newton with a
    residual-norm line search and a direct sparse solve.  The log records the
    self-consistent fixed-point residual |R(w, w)|; no uniqueness is claimed
    and the Picard map need not contract.  Raises ConvergenceError on
    stagnation (< 1% reduction over 10 outers), attaching the log and the
    best iterate reached.
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    if w0 is None:
        w = interpolate_singular(mesh).values.copy()
    else:
        w = _values(w0).copy()
    w[mesh.boundary] = mesh.nodes[mesh.boundary]
    free = _free_dofs(mesh)
    log = PicardLog()
    history: list[float] = []
    best_w, best_fp = w.copy(), np.inf
    for outer in range(max_outer):
        fp = float(np.linalg.norm(_coeff_residual(params, mesh, w, w).ravel()[free]))
        history.append(fp)
        if fp < best_fp:
            best_w, best_fp = w.copy(), fp
        if fp <= tol:
            log.outers.append(outer)
            log.fp_residuals.append(fp)
            log.inner_iters.append(0)
            log.converged = True
            return DiscreteField(mesh=mesh, values=w), log
        if len(history) > 10 and history[-1] > 0.99 * history[-11]:
            raise ConvergenceError(
                f"Picard stagnation: residual {fp:.3e} after {outer} outer iterations",
                log,
                field=DiscreteField(mesh=mesh, values=best_w),
            )
        vq = _gauss_field(mesh, w)
        inner = 0
        for inner in range(1, inner_iter + 1):
            R = _coeff_residual_q(params, mesh, vq, w)
            rn = float(np.linalg.norm(R.ravel()[free]))
            if rn <= max(0.1 * tol, 1e-3 * fp):
                break
            J = _coeff_jacobian_q(params, mesh, vq, w)
            J_ff = J[free][:, free].tocsc()
            d_f = spla.spsolve(J_ff, -R.ravel()[free])
            d = np.zeros(2 * mesh.n_nodes)
            d[free] = d_f
            step = 1.0
            for _ in range(50):
                w_try = w + step * d.reshape(-1, 2)
                rn_try = float(
                    np.linalg.norm(
                        _coeff_residual_q(params, mesh, vq, w_try).ravel()[free]
                    )
                )
                if rn_try <= (1.0 - 1e-4 * step) * rn:
                    w = w_try
                    break
                step *= 0.5
            else:
                raise ConvergenceError("inner Newton line search failed", log)
        log.outers.append(outer)
        log.fp_residuals.append(fp)
        log.inner_iters.append(inner)
    # ran out of outer iterations while still contracting: report the best
    fp = float(np.linalg.norm(_coeff_residual(params, mesh, w, w).ravel()[free]))
    if fp < best_fp:
        best_w, best_fp = w.copy(), fp
    log.outers.append(max_outer)
    log.fp_residuals.append(best_fp)
    log.inner_iters.append(0)
    log.converged = best_fp <= tol
    return DiscreteField(mesh=mesh, values=best_w), log


# --- file formats -------------------------------------------------------------

def save_mesh(mesh: DiskMesh, path: str | Path) -> None:
    """Text format: NODES (index, x, y, boundary flag) then TRIANGLES (3 indices)."""
    lines = ["NODES"]
    for idx, ((x, y), b) in enumerate(zip(mesh.nodes, mesh.boundary)):
        lines.append(f"{idx} {x:.17g} {y:.17g} {int(b)}")
    lines.append("TRIANGLES")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path: str | Path) -> DiskMesh:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0] != "NODES":
        raise ValueError(f"malformed mesh file {path}: expected NODES header")
    i = 1
    nodes, flags = [], []
    while i < len(text) and text[i] != "TRIANGLES":
        parts = text[i].split()
        nodes.append((float(parts[1]), float(parts[2])))
        flags.append(bool(int(parts[3])))
        i += 1
    tris = [tuple(int(v) for v in line.split()) for line in text[i + 1:]]
    nodes = np.array(nodes)
    ring = np.linalg.norm(nodes[~np.array(flags)], axis=1).max() if len(nodes) else 0.0
    h = 1.0 - ring if len(nodes) else 0.1
    return DiskMesh(
        nodes=nodes,
        triangles=np.array(tris, dtype=np.int64),
        boundary=np.array(flags),
        h=h,
    )


def save_field(fld: DiscreteField, path: str | Path) -> None:
    """One nodal Vec2 per line."""
    lines = [f"{vx:.17g} {vy:.17g}" for vx, vy in fld.values]
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(mesh: DiskMesh, path: str | Path) -> DiscreteField:
    vals = np.loadtxt(path, ndmin=2)
    return DiscreteField(mesh=mesh, values=vals)
