import numpy as np
import pytest

from tumourid import fem
from tumourid.mesh import Mesh, NodalField, build_uniform, refine_bisect
from tumourid.model import ModelConfig, eval_psi_derivs

TRI = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
MASS_REF = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0


def random_mesh(seed):
    rng = np.random.default_rng(seed)
    m = build_uniform((-2, 3, -1, 1), 4)
    for _ in range(3):
        m = refine_bisect(m, rng.choice(m.n_cells, size=5, replace=False))
    return m


def test_mass_single_triangle():
    assert np.allclose(fem.assemble_mass(TRI).toarray(), MASS_REF, atol=1e-16)


def test_lumped_single_triangle():
    assert np.allclose(fem.assemble_lumped_mass(TRI).toarray(), np.eye(3) / 6, atol=1e-16)


def test_stiffness_single_triangle():
    K = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])
    assert np.allclose(fem.assemble_stiffness(TRI).toarray(), K, atol=1e-15)


def test_two_cell_square_row_sums():
    m = build_uniform((0, 1, 0, 1), 1)
    rows = np.asarray(fem.assemble_mass(m).sum(axis=1)).ravel()
    # each node carries a third of its adjacent cell areas
    counts = np.bincount(m.cells.ravel())
    assert np.allclose(rows, counts * 0.5 / 3)
    assert rows.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(4))
def test_global_identities(seed):
    m = random_mesh(seed)
    one = np.ones(m.n_nodes)
    M, ML, K = fem.assemble_mass(m), fem.assemble_lumped_mass(m), fem.assemble_stiffness(m)
    area = 10.0
    assert one @ M @ one == pytest.approx(area, rel=1e-12)
    assert ML.diagonal().sum() == pytest.approx(area, rel=1e-12)
    assert np.allclose(ML.diagonal(), np.asarray(M.sum(axis=1)).ravel(), rtol=1e-14)
    assert np.abs(K @ one).max() < 1e-12
    for A in (M, K):
        assert abs(A - A.T).max() == 0.0
    x = np.random.default_rng(seed).standard_normal((5, m.n_nodes))
    assert np.all(np.einsum("ij,ij->i", x, (K @ x.T).T) >= -1e-12)


def test_stiffness_energy_of_x():
    m = build_uniform((0, 2, 0, 2), 2)
    x = m.nodes[:, 0]
    assert x @ fem.assemble_stiffness(m) @ x == pytest.approx(4.0, rel=1e-14)


def test_weighted_stiffness():
    m = random_mesh(7)
    K = fem.assemble_stiffness(m)
    assert (fem.assemble_weighted_stiffness(m, np.ones(m.n_nodes)) != K).nnz == 0
    assert abs(fem.assemble_weighted_stiffness(m, 2.5 * np.ones(m.n_nodes)) - 2.5 * K).max() < 1e-14
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 1, (2, m.n_nodes))
    lhs = fem.assemble_weighted_stiffness(m, 2 * a + 3 * b)
    rhs = 2 * fem.assemble_weighted_stiffness(m, a) + 3 * fem.assemble_weighted_stiffness(m, b)
    assert abs(lhs - rhs).max() < 1e-12
    with pytest.raises(ValueError):
        fem.assemble_weighted_stiffness(m, -a)


def test_weighted_stiffness_single_element():
    c = np.array([0.3, 1.1, 2.0])
    K = fem.assemble_stiffness(TRI).toarray()
    assert np.allclose(fem.assemble_weighted_stiffness(TRI, c).toarray(), c.mean() * K, atol=1e-15)


def test_weighted_stiffness_jacobian(rng):
    m = random_mesh(3)
    y, w = rng.standard_normal((2, m.n_nodes))
    w = np.abs(w)
    G = fem.weighted_stiffness_jacobian(m, y)
    assert np.allclose(fem.assemble_weighted_stiffness(m, w) @ y, G @ w, atol=1e-12)


def test_weighted_mass_symmetry(rng):
    m = random_mesh(2)
    u, w = rng.standard_normal((2, m.n_nodes))
    assert np.allclose(fem.assemble_weighted_mass(m, w) @ u, fem.assemble_weighted_mass(m, u) @ w)
    assert abs(fem.assemble_weighted_mass(m, np.ones(m.n_nodes)) - fem.assemble_mass(m)).max() < 1e-15


def test_lumped_nonlinearity():
    m = random_mesh(5)
    lm = fem.lumped_masses(m)
    v = np.linspace(-1, 1, m.n_nodes)
    assert np.allclose(fem.apply_lumped_nonlinearity(m, v, lambda x: x), lm * v)
    assert np.allclose(fem.apply_lumped_nonlinearity(m, v, lambda x: 0 * x + 3.0), 3 * lm)
    cfg = ModelConfig()
    zero = fem.apply_lumped_nonlinearity(m, 0 * v, lambda x: eval_psi_derivs(x, cfg)[0])
    assert np.all(zero == 0)
    with pytest.raises(FloatingPointError, match="node 0"):
        fem.apply_lumped_nonlinearity(m, v, lambda x: np.where(x < -0.99, np.inf, x))


def test_degenerate_cell_is_assembly_error():
    m = Mesh(np.array([[0, 0], [1, 0], [2, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(fem.AssemblyError):
        fem.assemble_stiffness(m)


def test_assembly_deterministic():
    m = random_mesh(9)
    A, B = fem.assemble_mass(m), fem.assemble_mass(m)
    assert np.array_equal(A.data, B.data) and np.array_equal(A.indices, B.indices)


def test_field_generation_mismatch():
    m = build_uniform((0, 1, 0, 1), 2)
    r = refine_bisect(m, [0])
    with pytest.raises(ValueError):
        fem.apply_lumped_nonlinearity(r, NodalField(m, np.zeros(m.n_nodes)), np.abs)
