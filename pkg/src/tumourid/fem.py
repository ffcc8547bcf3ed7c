"""P1 assembly on triangular meshes.

All element integrals are exact: products of up to three P1 functions are
integrated with the closed-form barycentric moments.
"""
import weakref

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import Mesh, _values_on

__all__ = [
    "AssemblyError",
    "assemble_mass",
    "assemble_lumped_mass",
    "lumped_masses",
    "assemble_stiffness",
    "assemble_weighted_stiffness",
    "assemble_weighted_mass",
    "weighted_stiffness_jacobian",
    "apply_lumped_nonlinearity",
    "solve_mass",
    "operators",
]

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def _triple_moments():
    # int_T lam_i lam_j lam_l / |T|
    c = np.empty((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for l in range(3):
                distinct = len({i, j, l})
                c[i, j, l] = {1: 1 / 10, 2: 1 / 30, 3: 1 / 60}[distinct]
    return c


_TRIPLE = _triple_moments()


class AssemblyError(ValueError):
    pass


def _pattern(mesh):
    rows = np.repeat(mesh.cells, 3, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 3)).ravel()
    return rows, cols


def _assemble(mesh, local):
    rows, cols = _pattern(mesh)
    n = mesh.n_nodes
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sort_indices()
    return A


def _local_stiffness(mesh):
    try:
        G = mesh.basis_gradients
    except ValueError as err:
        raise AssemblyError(str(err)) from None
    return mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", G, G)


def assemble_mass(mesh):
    """Consistent mass matrix ``M_ij = int phi_i phi_j``."""
    return _assemble(mesh, mesh.areas[:, None, None] * _MASS_REF[None])


def lumped_masses(mesh):
    """Row sums of the mass matrix, i.e. a third of the adjacent cell areas."""
    lm = np.zeros(mesh.n_nodes)
    np.add.at(lm, mesh.cells, np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1))
    return lm


def assemble_lumped_mass(mesh):
    return sp.diags(lumped_masses(mesh), format="csr")


def assemble_stiffness(mesh):
    return assemble_weighted_stiffness(mesh, np.ones(mesh.n_nodes))


def assemble_weighted_stiffness(mesh, coeff):
    """Stiffness matrix with the P1 coefficient ``coeff`` integrated exactly.

    For a linear coefficient and constant gradients this is the element
    stiffness scaled by the mean of the three nodal values.
    """
    c = _values_on(coeff, mesh)
    if np.any(c < 0):
        raise ValueError(f"negative coefficient at node {int(np.argmax(c < 0))}")
    cbar = c[mesh.cells].sum(axis=1) / 3.0
    return _assemble(mesh, cbar[:, None, None] * _local_stiffness(mesh))


def weighted_stiffness_jacobian(mesh, y):
    """Matrix ``G`` with ``assemble_weighted_stiffness(mesh, w) @ y == G @ w``.

    Used to differentiate the coefficient-weighted stiffness with respect to
    its coefficient field.
    """
    Ky = np.einsum("tij,tj->ti", _local_stiffness(mesh), y[mesh.cells]) / 3.0
    # entry (i, l) for i, l in cell t equals (K_t y_t)_i / 3
    local = np.repeat(Ky[:, :, None], 3, axis=2)
    return _assemble(mesh, local)


def assemble_weighted_mass(mesh, weight):
    """``int w phi_i phi_j`` with ``w`` the P1 interpolant of nodal values.

    Symmetric in its roles: ``assemble_weighted_mass(mesh, w) @ u`` equals
    ``assemble_weighted_mass(mesh, u) @ w``.
    """
    w = _values_on(weight, mesh)
    local = np.einsum("ijl,tl->tij", _TRIPLE, w[mesh.cells]) * mesh.areas[:, None, None]
    return _assemble(mesh, local)


def apply_lumped_nonlinearity(mesh, field_, fn):
    """Lumped-integration load vector ``(fn(u), phi_i)^h``."""
    u = _values_on(field_, mesh)
    val = np.asarray(fn(u), dtype=float)
    bad = ~np.isfinite(val)
    if bad.any():
        raise FloatingPointError(f"nonlinearity is not finite at node {int(np.argmax(bad))}")
    return lumped_masses(mesh) * val


class _Ops:
    def __init__(self, mesh):
        self.M = assemble_mass(mesh)
        self.K = assemble_stiffness(mesh)
        self.lumped = lumped_masses(mesh)
        self._mass_lu = None

    @property
    def mass_lu(self):
        if self._mass_lu is None:
            self._mass_lu = splu(self.M.tocsc())
        return self._mass_lu


_CACHE = weakref.WeakKeyDictionary()


def operators(mesh: Mesh):
    """Cached mass, stiffness and lumped masses of ``mesh``."""
    ops = _CACHE.get(mesh)
    if ops is None:
        ops = _CACHE[mesh] = _Ops(mesh)
    return ops


def solve_mass(mesh, b):
    return operators(mesh).mass_lu.solve(np.asarray(b, dtype=float))
