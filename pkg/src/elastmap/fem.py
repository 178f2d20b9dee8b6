"""Total-Lagrangian P1 solver for equibiaxial stretch of the unit square."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._dual import tangent_of
from .geometry import Mesh, write_vtk
from .materials import (
    DomainError,
    MaterialModel,
    check_admissible,
    green_lagrange,
    pk_components,
)

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 4
_GROWTH_LIMIT = 5


class SolverFailure(RuntimeError):
    """Newton iteration did not converge; ``load_step`` is the failing load factor."""

    def __init__(self, message: str, load_step: float | None = None):
        super().__init__(message)
        self.load_step = load_step


@dataclass(frozen=True)
class BoundaryLoad:
    d: float = 0.2
    steps: int = 10

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.d < 0:
            raise ValueError(f"d must be non-negative, got {self.d}")


@dataclass
class FemSolution:
    u: np.ndarray  # (N, 2)
    strain_nodes: np.ndarray  # (N, 2, 2)
    strain_elements: np.ndarray  # (M, 2, 2)
    residual_norm: float
    newton_iterations: int = 0


def dirichlet_dofs(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Prescribed dof indices (node*2 + component) and their unit-load values.

    Normal components are fixed on every face; corners end up fully fixed.
    """
    b = mesh.boundary
    dofs = np.concatenate([2 * b["left"], 2 * b["right"], 2 * b["bottom"] + 1, 2 * b["top"] + 1])
    vals = np.concatenate(
        [-np.ones(len(b["left"])), np.ones(len(b["right"])), -np.ones(len(b["bottom"])), np.ones(len(b["top"]))]
    )
    order = np.argsort(dofs, kind="stable")
    return dofs[order], vals[order]


class Assembler:
    """Element kernels and sparse assembly for one mesh / material / modulus field."""

    def __init__(self, mesh: Mesh, model: MaterialModel, theta):
        self.mesh = mesh
        self.model = model
        self.theta = np.broadcast_to(np.asarray(theta, dtype=float), (mesh.n_elements,)).copy()
        self.G = mesh.shape_gradients()  # (M, 3, 2)
        self.A = mesh.areas
        conn = mesh.elements
        self.edofs = np.stack([2 * conn, 2 * conn + 1], axis=2).reshape(-1, 6)  # (a, i) -> 2a+i
        self.ndof = 2 * mesh.n_nodes
        self._rows = np.repeat(self.edofs, 6, axis=1).ravel()
        self._cols = np.tile(self.edofs, (1, 6)).ravel()

    def deformation_gradient(self, u: np.ndarray) -> np.ndarray:
        ue = u[self.mesh.elements]  # (M, 3, 2)
        return np.eye(2) + np.einsum("eai,eaJ->eiJ", ue, self.G)

    def stress(self, F: np.ndarray, theta=None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        p = pk_components(self.model, F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1], theta)
        return np.stack(p, axis=1).reshape(-1, 2, 2)

    def stress_tangent(self, F: np.ndarray) -> np.ndarray:
        """dP_iJ/dF_kL per element, shape (M, 2, 2, 2, 2), via dual numbers."""
        m = F.shape[0]
        args = (F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1])
        out = np.empty((m, 2, 2, 2, 2))
        fn = lambda a, b, c, d: pk_components(self.model, a, b, c, d, self.theta)
        for k in range(4):
            direction = [0.0] * 4
            direction[k] = 1.0
            dp = tangent_of(fn, args, direction)
            out[:, :, :, k // 2, k % 2] = np.stack(dp, axis=1).reshape(m, 2, 2)
        return out

    def stress_theta_derivative(self, F: np.ndarray) -> np.ndarray:
        """dP/dtheta_e per element (M, 2, 2)."""
        args = (F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1], self.theta)
        fn = lambda a, b, c, d, t: pk_components(self.model, a, b, c, d, t)
        dp = tangent_of(fn, args, [0.0, 0.0, 0.0, 0.0, 1.0])
        return np.stack(dp, axis=1).reshape(-1, 2, 2)

    def element_forces(self, P: np.ndarray) -> np.ndarray:
        """(M, 6) element internal force vectors from per-element stress."""
        fe = np.einsum("e,eiJ,eaJ->eai", self.A, P, self.G)
        return fe.reshape(-1, 6)

    def scatter(self, fe: np.ndarray) -> np.ndarray:
        return np.bincount(self.edofs.ravel(), weights=fe.ravel(), minlength=self.ndof)

    def residual(self, u: np.ndarray) -> np.ndarray:
        F = self.deformation_gradient(u)
        check_admissible(self.model, F)
        return self.scatter(self.element_forces(self.stress(F)))

    def tangent(self, u: np.ndarray) -> sp.csr_matrix:
        F = self.deformation_gradient(u)
        check_admissible(self.model, F)
        D = self.stress_tangent(F)
        ke = np.einsum("e,eaJ,eiJkL,ebL->eaibk", self.A, self.G, D, self.G).reshape(-1, 36)
        K = sp.coo_matrix((ke.ravel(), (self._rows, self._cols)), shape=(self.ndof, self.ndof))
        return K.tocsr()


def internal_forces(mesh: Mesh, model: MaterialModel, theta, u: np.ndarray) -> np.ndarray:
    """Assembled internal nodal forces (N, 2), reactions included."""
    return Assembler(mesh, model, theta).residual(np.asarray(u, float)).reshape(-1, 2)


def nodal_average_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Sparse (N, M) operator: area-weighted average of incident element values."""
    rows = mesh.elements.ravel()
    cols = np.repeat(np.arange(mesh.n_elements), 3)
    w = np.repeat(mesh.areas, 3)
    W = sp.coo_matrix((w, (rows, cols)), shape=(mesh.n_nodes, mesh.n_elements)).tocsr()
    totals = np.asarray(W.sum(axis=1)).ravel()
    return sp.diags(1.0 / totals) @ W


def element_strains(asm: Assembler, u: np.ndarray) -> np.ndarray:
    return green_lagrange(asm.deformation_gradient(u))


def nodal_strains(mesh: Mesh, strain_elements: np.ndarray) -> np.ndarray:
    W = nodal_average_matrix(mesh)
    flat = strain_elements.reshape(-1, 4)
    return (W @ flat).reshape(-1, 2, 2)


def _newton(asm: Assembler, u: np.ndarray, presc: np.ndarray, target: np.ndarray, free: np.ndarray):
    """Newton solve with prescribed values ``target`` on dofs ``presc``; returns (u, rnorm, iters)."""
    u = u.copy()
    du_p = target - u[presc]
    prev, rising = None, 0
    for it in range(NEWTON_MAX_ITER):
        R = asm.residual(u.reshape(-1, 2))
        r_free = np.linalg.norm(R[free])
        scale = max(np.linalg.norm(R), 1.0e-300)
        if it > 0 or not np.any(du_p):
            if r_free <= NEWTON_TOL * scale or r_free < 1e-13:
                return u, r_free, it
        rising = rising + 1 if (prev is not None and r_free > prev) else 0
        if rising >= _GROWTH_LIMIT:
            raise SolverFailure("residual grew over consecutive iterations")
        prev = r_free
        K = asm.tangent(u.reshape(-1, 2))
        rhs = -R[free]
        if np.any(du_p):
            rhs = rhs - K[free][:, presc] @ du_p
        du_f = spla.spsolve(K[free][:, free].tocsc(), rhs)
        if not np.all(np.isfinite(du_f)):
            raise SolverFailure("singular tangent")
        u[free] += du_f
        u[presc] += du_p
        du_p = np.zeros_like(du_p)
    raise SolverFailure(f"no convergence in {NEWTON_MAX_ITER} Newton iterations")


def solve_forward(
    mesh: Mesh, model: MaterialModel, modulus, load: BoundaryLoad, initial: np.ndarray | None = None
) -> FemSolution:
    """Quasi-static ramp of the equibiaxial boundary displacement with Newton per step.

    ``initial`` (a converged displacement for a nearby modulus field) is tried
    first as a warm start at full load; the ramp is the fallback.
    """
    asm = Assembler(mesh, model, modulus)
    presc, unit = dirichlet_dofs(mesh)
    free = np.setdiff1d(np.arange(asm.ndof), presc)
    u = np.zeros(asm.ndof)
    s_done = 0.0
    step = 1.0 / load.steps
    total_iters = 0
    rnorm = 0.0
    if initial is not None:
        try:
            u, rnorm, total_iters = _newton(asm, np.asarray(initial, float).ravel(), presc, load.d * unit, free)
            s_done = 1.0
        except (SolverFailure, DomainError):
            u = np.zeros(asm.ndof)
    while s_done < 1.0 - 1e-14:
        halvings = 0
        while True:
            s_next = min(1.0, s_done + step)
            try:
                u_new, rnorm, its = _newton(asm, u, presc, load.d * s_next * unit, free)
                break
            except (SolverFailure, DomainError) as exc:
                if halvings >= MAX_HALVINGS:
                    raise SolverFailure(f"load step s={s_next:.6g} failed: {exc}", load_step=s_next) from exc
                halvings += 1
                step *= 0.5
                log.info("halving load increment to %.4g after: %s", step, exc)
        total_iters += its
        u = u_new
        s_done = s_next
    u_nodes = u.reshape(-1, 2)
    eps_e = element_strains(asm, u_nodes)
    return FemSolution(
        u=u_nodes,
        strain_nodes=nodal_strains(mesh, eps_e),
        strain_elements=eps_e,
        residual_norm=float(rnorm),
        newton_iterations=total_iters,
    )


def tangent_check(
    mesh: Mesh, model: MaterialModel, modulus, u, n_directions: int = 10, step: float = 1e-6, seed: int = 0
) -> float:
    """Max relative deviation between K·du and central differences of the residual."""
    asm = Assembler(mesh, model, modulus)
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    check_admissible(model, asm.deformation_gradient(u))
    K = asm.tangent(u)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_directions):
        du = rng.standard_normal(u.shape)
        fd = (asm.residual(u + step * du) - asm.residual(u - step * du)) / (2 * step)
        kd = K @ du.ravel()
        worst = max(worst, np.linalg.norm(kd - fd) / np.linalg.norm(fd))
    return float(worst)


def write_solution_csv(path: str | Path, mesh: Mesh, sol: FemSolution) -> None:
    """Reference-data format: node,x,y,ux,uy,exx,eyy,exy."""
    e = sol.strain_nodes
    data = np.column_stack(
        [mesh.nodes, sol.u, e[:, 0, 0], e[:, 1, 1], e[:, 0, 1]]
    )
    lines = ["node,x,y,ux,uy,exx,eyy,exy"]
    for k, row in enumerate(data.tolist()):
        lines.append(f"{k}," + ",".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ReferenceData:
    nodes: np.ndarray
    u: np.ndarray  # (N, 2)
    strain: np.ndarray  # (N, 3) columns exx, eyy, exy


def read_solution_csv(path: str | Path) -> ReferenceData:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] != 8:
        raise ValueError(f"{path}: expected 8 columns, found {raw.shape[1]}")
    if not np.array_equal(raw[:, 0], np.arange(raw.shape[0])):
        raise ValueError(f"{path}: node column must be 0..N-1 in order")
    return ReferenceData(nodes=raw[:, 1:3], u=raw[:, 3:5], strain=raw[:, 5:8])


def write_solution_vtk(path: str | Path, mesh: Mesh, sol: FemSolution, modulus=None) -> None:
    e = sol.strain_nodes
    point = {"u": sol.u, "exx": e[:, 0, 0], "eyy": e[:, 1, 1], "exy": e[:, 0, 1]}
    cell = {"E": np.asarray(modulus, float)} if modulus is not None else None
    write_vtk(path, mesh, point_data=point, cell_data=cell)
