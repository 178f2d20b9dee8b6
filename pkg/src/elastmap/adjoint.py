"""Inverse-FEA baseline: discrete-adjoint gradient + projected gradient descent on E."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .fem import (
    Assembler,
    BoundaryLoad,
    SolverFailure,
    dirichlet_dofs,
    element_strains,
    nodal_average_matrix,
    solve_forward,
)
from .geometry import Mesh
from .materials import DomainError, MaterialModel
from .pinn import l2_relative_error

log = logging.getLogger(__name__)

E_MIN, E_MAX = 1.0, 5.0


class SetupError(RuntimeError):
    """Forward solve failed at the initial modulus field."""


def project(E: np.ndarray) -> np.ndarray:
    return np.clip(E, E_MIN, E_MAX)


def _strain_components(strain) -> np.ndarray:
    s = np.asarray(strain, dtype=float)
    if s.ndim == 3:
        return np.column_stack([s[:, 0, 0], s[:, 1, 1], s[:, 0, 1]])
    return s


@dataclass
class Evaluation:
    E: np.ndarray
    J: float
    strain_error_pct: float
    u: np.ndarray
    strain_nodes: np.ndarray  # (N, 3)


class StrainMisfit:
    """J(E) = sum over nodes and (xx, yy, xy) of squared nodal strain mismatch."""

    def __init__(self, mesh: Mesh, model: MaterialModel, load: BoundaryLoad, strain_ref):
        if model.kind != "neo_hookean_plane_strain":
            raise ValueError("the inverse-FEA baseline supports plane-strain Neo-Hookean only")
        self.mesh, self.model, self.load = mesh, model, load
        self.ref = _strain_components(strain_ref)
        if self.ref.shape != (mesh.n_nodes, 3):
            raise ValueError(f"reference strains must be ({mesh.n_nodes}, 3), got {self.ref.shape}")
        self.W = nodal_average_matrix(mesh)
        self.presc, _ = dirichlet_dofs(mesh)
        self.free = np.setdiff1d(np.arange(2 * mesh.n_nodes), self.presc)

    def evaluate(self, E: np.ndarray, initial: np.ndarray | None = None) -> Evaluation:
        sol = solve_forward(self.mesh, self.model, E, self.load, initial=initial)
        eps = _strain_components(sol.strain_nodes)
        r = eps - self.ref
        return Evaluation(
            E=np.array(E, dtype=float),
            J=float(np.sum(r * r)),
            strain_error_pct=l2_relative_error(eps, self.ref),
            u=sol.u,
            strain_nodes=eps,
        )

    def gradient(self, ev: Evaluation) -> np.ndarray:
        """dJ/dE_e at a converged forward state via one transposed-tangent solve."""
        asm = Assembler(self.mesh, self.model, ev.E)
        F = asm.deformation_gradient(ev.u)
        # dJ/d(element strain) through the area-weighted nodal average
        g = 2.0 * (self.W.T @ (ev.strain_nodes - self.ref))  # (M, 3): xx, yy, xy
        gxx, gyy, gxy = g[:, 0], g[:, 1], g[:, 2]
        f11, f12, f21, f22 = F[:, 0, 0], F[:, 0, 1], F[:, 1, 0], F[:, 1, 1]
        dF = np.empty_like(F)
        dF[:, 0, 0] = gxx * f11 + 0.5 * gxy * f12
        dF[:, 1, 0] = gxx * f21 + 0.5 * gxy * f22
        dF[:, 0, 1] = gyy * f12 + 0.5 * gxy * f11
        dF[:, 1, 1] = gyy * f22 + 0.5 * gxy * f21
        dJdu = asm.scatter(np.einsum("eiJ,eaJ->eai", dF, asm.G).reshape(-1, 6))
        K = asm.tangent(ev.u)
        free = self.free
        lam = np.zeros(asm.ndof)
        lam[free] = spla.spsolve(K.T[free][:, free].tocsc(), dJdu[free])
        dR = asm.element_forces(asm.stress_theta_derivative(F))  # (M, 6)
        return -np.einsum("ek,ek->e", lam[asm.edofs], dR)


def adjoint_gradient_check(
    mesh: Mesh,
    model: MaterialModel,
    load: BoundaryLoad,
    strain_ref,
    E,
    n_elements: int = 10,
    step: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative deviation of adjoint dJ/dE_e from central differences on random elements."""
    misfit = StrainMisfit(mesh, model, load, strain_ref)
    E = np.broadcast_to(np.asarray(E, dtype=float), (mesh.n_elements,)).copy()
    ev = misfit.evaluate(E)
    grad = misfit.gradient(ev)
    rng = np.random.default_rng(seed)
    picks = rng.choice(mesh.n_elements, size=min(n_elements, mesh.n_elements), replace=False)
    worst = 0.0
    for e in picks:
        Ep, Em = E.copy(), E.copy()
        Ep[e] += step
        Em[e] -= step
        fd = (misfit.evaluate(Ep).J - misfit.evaluate(Em).J) / (2 * step)
        worst = max(worst, abs(grad[e] - fd) / max(abs(fd), 1e-300))
    return float(worst)


def initial_field(spec, n_elements: int) -> np.ndarray:
    """``uniform(c)``-style number, ``("random", seed)`` tuple / ``"random:<seed>"`` string, or an array."""
    if isinstance(spec, str) and spec.startswith("random"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return np.random.default_rng(seed).uniform(E_MIN, E_MAX, n_elements)
    if isinstance(spec, tuple) and spec and spec[0] == "random":
        return np.random.default_rng(spec[1]).uniform(E_MIN, E_MAX, n_elements)
    arr = np.asarray(spec, dtype=float)
    return np.broadcast_to(arr, (n_elements,)).copy()


@dataclass
class AdjointRun:
    E_init: object = 1.0
    max_iter: int = 100
    tol: float = 1e-3  # on the L2 relative strain error (fraction, not percent)
    history: list = field(default_factory=list)  # dicts: iteration, strain_error_pct, modulus_error_pct, J
    E_best: np.ndarray | None = None
    E_final: np.ndarray | None = None
    status: str = "pending"
    accepted_steps: list = field(default_factory=list)  # (J_before, J_after) per accepted step

    def write_history_csv(self, path: str | Path) -> None:
        lines = ["iteration,strain_error_pct,modulus_error_pct"]
        for h in self.history:
            lines.append(f"{h['iteration']},{h['strain_error_pct']:.17g},{h['modulus_error_pct']:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def inverse_fea(
    mesh: Mesh,
    model: MaterialModel,
    load: BoundaryLoad,
    strain_ref,
    run: AdjointRun,
    E_truth=None,
    callback=None,
    armijo: float = 1e-4,
    max_backtracks: int = 20,
    initial_step: float = 0.5,
) -> AdjointRun:
    """Projected gradient descent with backtracking on the strain misfit.

    Iterates (initial field included) are recorded in ``run.history``, at most
    ``run.max_iter`` of them.  A forward failure at ``E_init`` raises
    :class:`SetupError`; later failures end the run with status
    ``"forward_failure"`` and the partial history.
    """
    misfit = StrainMisfit(mesh, model, load, strain_ref)
    E = project(initial_field(run.E_init, mesh.n_elements))
    try:
        ev = misfit.evaluate(E)
    except (SolverFailure, DomainError) as exc:
        raise SetupError(f"forward solve failed at the initial field: {exc}") from exc

    best_err = np.inf
    alpha = None
    run.history.clear()
    run.accepted_steps.clear()
    run.status = "max_iter"
    for it in range(run.max_iter):
        mod_err = l2_relative_error(ev.E, E_truth) if E_truth is not None else float("nan")
        run.history.append(
            {"iteration": it, "strain_error_pct": ev.strain_error_pct, "modulus_error_pct": mod_err, "J": ev.J}
        )
        if callback is not None:
            callback(it, ev.E)
        if ev.strain_error_pct < best_err:
            best_err = ev.strain_error_pct
            run.E_best = ev.E.copy()
        if ev.strain_error_pct / 100.0 < run.tol:
            run.status = "converged"
            break
        if it == run.max_iter - 1:
            break
        g = misfit.gradient(ev)
        gmax = np.max(np.abs(g))
        if gmax == 0:
            run.status = "stationary"
            break
        alpha = initial_step / gmax if alpha is None else alpha * 2.0
        accepted = None
        failures = 0
        for _ in range(max_backtracks):
            trial = project(ev.E - alpha * g)
            step = trial - ev.E
            if not np.any(step):
                break
            try:
                ev_try = misfit.evaluate(trial, initial=ev.u)
            except (SolverFailure, DomainError):
                failures += 1
                alpha *= 0.5
                continue
            if ev_try.J <= ev.J + armijo * float(g @ step):
                accepted = ev_try
                break
            alpha *= 0.5
        if accepted is None:
            run.status = "forward_failure" if failures else "line_search_failed"
            break
        run.accepted_steps.append((ev.J, accepted.J))
        ev = accepted
    run.E_final = ev.E.copy()
    if run.E_best is None:
        run.E_best = ev.E.copy()
    return run
