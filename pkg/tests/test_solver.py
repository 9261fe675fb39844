import numpy as np
import pytest
from numpy.testing import assert_allclose

from platelab.geometry import Domain, generate_mesh
from platelab.material import IsotropicMaterial, derive_plate_tensors
from platelab.solver import (
    BoundaryLoad,
    CompatibilityError,
    SolveError,
    assemble_load,
    assemble_stiffness,
    dense_oracle_solve,
    element_operators,
    kernel_basis,
    load_from_family,
    residual_check,
    solve,
)

MAT = IsotropicMaterial(lam=1.0, mu=1.0, h=1.0)

SQUARE = Domain(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
ROT = Domain(np.array([[0.2, 0.0], [1.2, 0.4], [0.8, 1.4], [-0.2, 1.0]], float))


def _solved(domain, family, target=0.25, assumed=True, mat=MAT):
    mesh = generate_mesh(domain, target)
    load = load_from_family(mesh, family, mat)
    sys_ = assemble_stiffness(mesh, mat, assumed_shear=assumed)
    f = assemble_load(mesh, load)
    state = solve(sys_.with_load(f, load))
    return mesh, load, f, state


@pytest.mark.parametrize("assumed", [True, False])
@pytest.mark.parametrize("domain", [SQUARE, ROT])
def test_kernel_annihilated(domain, assumed):
    mesh = generate_mesh(domain, 0.25)
    sys_ = assemble_stiffness(mesh, MAT, assumed_shear=assumed)
    K = sys_.stiffness
    kb = kernel_basis(mesh)
    scale = abs(K).max()
    for k in kb:
        assert np.abs(K @ k).max() < 1e-12 * scale


def test_dense_nullity_three():
    mesh = generate_mesh(SQUARE, 0.25)
    K = assemble_stiffness(mesh, MAT).stiffness.toarray()
    w = np.linalg.eigvalsh(K)
    assert (w < 1e-10 * w[-1]).sum() == 3
    assert w[3] > 1e-8 * w[-1]


def test_pure_bending_exact_strains():
    a = 0.7
    mesh, load, f, state = _solved(SQUARE, f"pure_bending a={a}")
    ops = element_operators(mesh)
    kv = ops.curvatures(state.u)
    assert_allclose(kv[..., 0], a, atol=1e-12)
    assert_allclose(kv[..., 1], a, atol=1e-12)
    assert_allclose(kv[..., 2], 0.0, atol=1e-12)
    assert np.abs(ops.shears(state.u)).max() < 1e-12


def test_pure_bending_exact_on_skewed_quads():
    mesh, load, f, state = _solved(ROT, "pure_bending a=1.0")
    ops = element_operators(mesh)
    kv = ops.curvatures(state.u)
    assert_allclose(kv[..., :2], 1.0, atol=1e-11)
    assert np.abs(ops.shears(state.u)).max() < 1e-11


def test_twist_exact_on_structured():
    a = 0.5
    mesh, load, f, state = _solved(SQUARE, f"twist a={a}")
    ops = element_operators(mesh)
    kv = ops.curvatures(state.u)
    assert_allclose(kv[..., 0], 0.0, atol=1e-12)
    assert_allclose(kv[..., 1], 0.0, atol=1e-12)
    assert_allclose(kv[..., 2], 2.0 * a, atol=1e-12)
    assert np.abs(ops.shears(state.u)).max() < 1e-12


def test_pure_bending_work_closed_form():
    mesh, load, f, state = _solved(SQUARE, "pure_bending a=1.0")
    t = derive_plate_tensors(MAT)
    exact = 2.0 * t.rigidity * (1.0 + t.nu)  # unit area, a = 1
    assert_allclose(f @ state.u, exact, rtol=1e-13)
    assert_allclose(exact, 5.0 / 9.0)


def test_twist_work_closed_form():
    mesh, load, f, state = _solved(SQUARE, "twist a=1.0")
    t = derive_plate_tensors(MAT)
    assert_allclose(f @ state.u, 2.0 * t.rigidity * (1.0 - t.nu), rtol=1e-13)


def test_solution_normalized():
    mesh, load, f, state = _solved(SQUARE, "pure_bending a=1.0")
    sys_ = assemble_stiffness(mesh, MAT)
    assert np.abs(sys_.constraints @ state.u).max() < 1e-10


def test_reciprocity():
    mesh = generate_mesh(SQUARE, 0.25)
    sys_ = assemble_stiffness(mesh, MAT)
    l1 = load_from_family(mesh, "pure_bending a=1.0", MAT)
    l2 = load_from_family(mesh, "twist a=1.0", MAT)
    f1, f2 = assemble_load(mesh, l1), assemble_load(mesh, l2)
    u1 = solve(sys_.with_load(f1, l1)).u
    u2 = solve(sys_.with_load(f2, l2)).u
    scale = max(abs(f1 @ u1), abs(f2 @ u2))
    assert abs(f1 @ u2 - f2 @ u1) < 1e-10 * scale


def test_incompatible_load_rejected():
    mesh = generate_mesh(SQUARE, 0.25)
    nb = len(mesh.boundary_edges)
    load = BoundaryLoad(mesh, np.ones((nb, 2)), np.zeros((nb, 2, 2)))
    with pytest.raises(CompatibilityError) as err:
        assemble_load(mesh, load)
    assert abs(err.value.force_residual - 4.0) < 1e-12
    # unchecked assembly still produces a vector
    f = assemble_load(mesh, load, check=False)
    assert f.shape == (3 * mesh.n_nodes,)


def test_net_moment_rejected():
    mesh = generate_mesh(SQUARE, 0.25)
    nb = len(mesh.boundary_edges)
    m = np.zeros((nb, 2, 2))
    m[:, :, 0] = 1.0  # constant couple, nonzero integral
    load = BoundaryLoad(mesh, np.zeros((nb, 2)), m)
    with pytest.raises(CompatibilityError):
        assemble_load(mesh, load)


def test_residual_check_small():
    mesh, load, f, state = _solved(SQUARE, "pure_bending a=1.0")
    max_res, rel, worst = residual_check(state, mesh, MAT, load)
    assert rel < 1e-10
    assert 0 <= worst < mesh.n_elements


def test_state_carries_diagnostics():
    mesh, load, f, state = _solved(SQUARE, "pure_bending a=1.0")
    assert state.residual < 1e-9
    assert state.stability_ratio > 0.0
    assert state.assumed_shear is True


def test_dense_matches_sparse():
    for domain, family in ((SQUARE, "twist a=1.0"), (ROT, "pure_bending a=1.0")):
        mesh = generate_mesh(domain, 0.25)
        load = load_from_family(mesh, family, MAT)
        sys_ = assemble_stiffness(mesh, MAT)
        f = assemble_load(mesh, load)
        sys_ = sys_.with_load(f, load)
        us = solve(sys_).u
        ud = dense_oracle_solve(sys_).u
        scale = np.abs(us).max()
        assert np.abs(us - ud).max() < 1e-10 * scale


def test_dense_cap_enforced():
    mesh = generate_mesh(SQUARE, 0.05)  # 21x21 nodes -> 1323 dof
    load = load_from_family(mesh, "pure_bending a=1.0", MAT)
    sys_ = assemble_stiffness(mesh, MAT)
    sys_ = sys_.with_load(assemble_load(mesh, load), load)
    with pytest.raises(SolveError):
        dense_oracle_solve(sys_)


def test_full_integration_locks_thin():
    # thin-plate bending loses most of its work under full integration,
    # while the assumed-shear operators stay exact
    thin = IsotropicMaterial(lam=1.0, mu=1.0, h=0.01)
    t = derive_plate_tensors(thin)
    exact = 2.0 * t.rigidity * (1.0 + t.nu)
    mesh = generate_mesh(SQUARE, 1.0 / 16.0)
    for assumed, bound in ((True, 1e-10), (False, None)):
        load = load_from_family(mesh, "pure_bending a=1.0", thin)
        sys_ = assemble_stiffness(mesh, thin, assumed_shear=assumed)
        state = solve(sys_.with_load(assemble_load(mesh, load), load))
        err = abs(assemble_load(mesh, load) @ state.u - exact) / exact
        if assumed:
            assert err < bound
        else:
            assert err > 0.5


def test_element_grouping_collapses_structured():
    mesh = generate_mesh(SQUARE, 0.25)
    ops = element_operators(mesh)
    assert len(ops.groups) == 1
    assert element_operators(mesh) is ops  # cached


def test_mesh_mismatch_rejected():
    mesh1 = generate_mesh(SQUARE, 0.25)
    mesh2 = generate_mesh(SQUARE, 0.25)
    load = load_from_family(mesh1, "pure_bending a=1.0", MAT)
    with pytest.raises(ValueError):
        assemble_load(mesh2, load)
