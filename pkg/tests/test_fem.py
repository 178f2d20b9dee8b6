import numpy as np
import pytest

from elastmap.fem import (
    Assembler,
    BoundaryLoad,
    SolverFailure,
    internal_forces,
    read_solution_csv,
    solve_forward,
    tangent_check,
    write_solution_csv,
    write_solution_vtk,
)
from elastmap.fieldgen import elemental_modulus, sample_grf
from elastmap.geometry import build_crossed_mesh
from elastmap.materials import DomainError, MaterialModel

NH = MaterialModel("neo_hookean_plane_strain", nu=0.3)
ALL_MODELS = [
    NH,
    MaterialModel("neo_hookean_plane_stress", nu=0.45),
    MaterialModel("mooney_rivlin", mu2=0.2),
    MaterialModel("gent", Jm=10.0),
]


@pytest.mark.parametrize("n", [2, 20])
def test_homogeneous_affine_solution(n):
    mesh = build_crossed_mesh(n)
    sol = solve_forward(mesh, NH, 2.0, BoundaryLoad(0.2))
    x, y = mesh.nodes.T
    assert np.max(np.abs(sol.u - np.column_stack([0.4 * x - 0.2, 0.4 * y - 0.2]))) < 1e-8
    target = np.diag([0.48, 0.48])
    assert np.max(np.abs(sol.strain_nodes - target)) < 1e-8
    assert np.max(np.abs(sol.strain_elements - target)) < 1e-8


def test_patch_test_mesh_independent():
    a = solve_forward(build_crossed_mesh(2), NH, 1.3, BoundaryLoad(0.15))
    b = solve_forward(build_crossed_mesh(20), NH, 1.3, BoundaryLoad(0.15))
    assert np.max(np.abs(a.strain_nodes.mean(0) - b.strain_nodes.mean(0))) < 1e-8
    assert np.ptp(b.strain_nodes, axis=0).max() < 1e-8


def test_unloaded_reference(mesh5):
    sol = solve_forward(mesh5, NH, 2.0, BoundaryLoad(0.0))
    assert np.all(sol.u == 0) and np.all(sol.strain_nodes == 0)


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.kind)
def test_heterogeneous_force_balance_and_convergence(model, mesh5):
    E = elemental_modulus(sample_grf(mesh5, 0.1, 2), mesh5)
    sol = solve_forward(mesh5, model, E, BoundaryLoad(0.2))
    f = internal_forces(mesh5, model, E, sol.u)
    assert np.max(np.abs(f.sum(axis=0))) < 1e-10
    asm = Assembler(mesh5, model, E)
    R = asm.residual(sol.u)
    b = mesh5.boundary
    fixed = np.concatenate([2 * b["left"], 2 * b["right"], 2 * b["bottom"] + 1, 2 * b["top"] + 1])
    free = np.setdiff1d(np.arange(R.size), fixed)
    assert np.linalg.norm(R[free]) <= 1e-10 * np.linalg.norm(R) + 1e-13


def test_homogeneous_symmetry(mesh5):
    sol = solve_forward(mesh5, MaterialModel("gent"), 1.7, BoundaryLoad(0.2))
    xy = {tuple(np.round(p, 12)): k for k, p in enumerate(mesh5.nodes)}
    swap = np.array([xy[(y, x)] for x, y in np.round(mesh5.nodes, 12)])
    assert np.max(np.abs(sol.u[:, 0] - sol.u[swap, 1])) < 1e-8


def test_nodal_average_preserves_mean(mesh5):
    E = elemental_modulus(sample_grf(mesh5, 0.1, 1), mesh5)
    sol = solve_forward(mesh5, NH, E, BoundaryLoad(0.2))
    # the area-weighted mean with nodal weights equal to the incident area sum
    w_node = np.bincount(mesh5.elements.ravel(), weights=np.repeat(mesh5.areas, 3), minlength=mesh5.n_nodes)
    lhs = np.einsum("n,nij->ij", w_node, sol.strain_nodes) / w_node.sum()
    rhs = np.einsum("e,eij->ij", mesh5.areas, sol.strain_elements) / mesh5.areas.sum()
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_tangent_check_examples(mesh5):
    rng = np.random.default_rng(0)
    E = elemental_modulus(sample_grf(mesh5, 0.1, 0), mesh5)
    u = 0.01 * rng.standard_normal((mesh5.n_nodes, 2))
    for model in ALL_MODELS:
        assert tangent_check(mesh5, model, E, u) < 1e-5
    assert tangent_check(mesh5, NH, 2.0, np.zeros((mesh5.n_nodes, 2))) < 1e-7


def test_tangent_check_inverted_element(mesh5):
    u = np.zeros((mesh5.n_nodes, 2))
    u[:, 0] = -2.0 * mesh5.nodes[:, 0]  # F11 = -1
    with pytest.raises(DomainError):
        tangent_check(mesh5, NH, 2.0, u)


def test_solver_failure_reports_load_step(mesh5):
    with pytest.raises(SolverFailure) as info:
        solve_forward(mesh5, MaterialModel("gent", Jm=0.5), 1.0, BoundaryLoad(0.2))
    assert info.value.load_step is not None and 0 < info.value.load_step <= 1


def test_warm_start_matches_ramp(mesh5):
    E = elemental_modulus(sample_grf(mesh5, 0.1, 3), mesh5)
    cold = solve_forward(mesh5, NH, E, BoundaryLoad(0.2))
    warm = solve_forward(mesh5, NH, E * 1.01, BoundaryLoad(0.2), initial=cold.u)
    ramp = solve_forward(mesh5, NH, E * 1.01, BoundaryLoad(0.2))
    assert np.max(np.abs(warm.u - ramp.u)) < 1e-10


def test_load_validation():
    with pytest.raises(ValueError):
        BoundaryLoad(0.2, 0)
    with pytest.raises(ValueError):
        BoundaryLoad(-0.1)


def test_csv_roundtrip_and_vtk(tmp_path, mesh5):
    sol = solve_forward(mesh5, NH, 2.0, BoundaryLoad(0.2))
    write_solution_csv(tmp_path / "r.csv", mesh5, sol)
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0] == "node,x,y,ux,uy,exx,eyy,exy"
    ref = read_solution_csv(tmp_path / "r.csv")
    assert np.array_equal(ref.u, sol.u)
    assert np.array_equal(ref.strain[:, 2], sol.strain_nodes[:, 0, 1])
    write_solution_vtk(tmp_path / "r.vtk", mesh5, sol, modulus=np.full(mesh5.n_elements, 2.0))
    assert "CELL_DATA 100" in (tmp_path / "r.vtk").read_text()
