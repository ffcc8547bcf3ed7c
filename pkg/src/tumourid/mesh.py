"""Conforming triangular meshes of rectangles and their adaptation.

Cells are stored counter-clockwise as ``(a, b, c)`` where ``a-b`` is the
refinement edge and ``c`` the newest vertex, so newest-vertex bisection needs
no extra bookkeeping.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "GeometryError",
    "Mesh",
    "NodalField",
    "RefinePolicy",
    "build_uniform",
    "refine_bisect",
    "coarsen",
    "gradient_jump_indicator",
    "doerfler_mark",
    "locate_points",
    "transfer_nodal",
    "project_function",
]


class GeometryError(ValueError):
    """A point could not be located in a mesh."""


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    cells: np.ndarray
    generation: int = 0
    parent_map: np.ndarray = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (N, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (T, 3)")
        if cells.size and (cells.min() < 0 or cells.max() >= len(nodes)):
            raise ValueError("cell references a node that does not exist")
        pm = self.parent_map
        pm = np.arange(len(cells)) if pm is None else np.asarray(pm, dtype=np.int64)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "parent_map", pm)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_cells(self):
        return len(self.cells)

    @cached_property
    def areas(self):
        p = self.nodes[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def basis_gradients(self):
        """Gradients of the three barycentric coordinates, shape ``(T, 3, 2)``."""
        p = self.nodes[self.cells]
        two_a = 2.0 * self.areas
        if np.any(two_a <= 0):
            bad = int(np.flatnonzero(two_a <= 0)[0])
            raise ValueError(f"cell {bad} is degenerate or clockwise")
        # grad lambda_i = rot90(p_{i+2} - p_{i+1}) / 2|T|
        d = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
        return np.stack([-d[..., 1], d[..., 0]], axis=-1) / two_a[:, None, None]

    @cached_property
    def _edge_data(self):
        c = self.cells
        local = np.stack([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]], axis=1)  # (T,3,2)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(flat, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_edges = inverse.reshape(-1, 3)
        edge_cells = -np.ones((len(edges), 2), dtype=np.int64)
        owner = np.repeat(np.arange(len(c)), 3)
        order = np.argsort(inverse, kind="stable")
        inv_sorted = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv_sorted[1:] != inv_sorted[:-1]
        edge_cells[inv_sorted[first], 0] = owner[order[first]]
        second = ~first
        edge_cells[inv_sorted[second], 1] = owner[order[second]]
        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            raise ValueError("an edge is shared by more than two cells")
        return edges, cell_edges, edge_cells

    @property
    def edges(self):
        """Sorted node pairs, one row per edge."""
        return self._edge_data[0]

    @property
    def cell_edges(self):
        """Edge ids of the local edges ``(v0,v1), (v1,v2), (v2,v0)``."""
        return self._edge_data[1]

    @property
    def edge_cells(self):
        """Adjacent cells per edge; the second column is -1 on the boundary."""
        return self._edge_data[2]

    @cached_property
    def boundary_nodes(self):
        bnd = self.edges[self.edge_cells[:, 1] < 0]
        return np.unique(bnd)

    @cached_property
    def _tree(self):
        return cKDTree(self.nodes[self.cells].mean(axis=1))

    def is_conforming(self):
        """Edge-adjacency audit for rectangular domains.

        Every edge with a single adjacent cell must lie on one side of the
        bounding box; anything else is a hanging node or a hole.
        """
        edges, _, edge_cells = self._edge_data
        p = self.nodes[edges[edge_cells[:, 1] < 0]]
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        tol = 1e-12 * np.max(hi - lo)
        on_side = np.zeros(len(p), dtype=bool)
        for d in range(2):
            for bound in (lo[d], hi[d]):
                on_side |= np.all(np.abs(p[:, :, d] - bound) <= tol, axis=1)
        return bool(on_side.all())

    def write_text(self, fh):
        """Write ``NODES``/``CELLS`` sections (0-based indices)."""
        fh.write(f"NODES {self.n_nodes}\n")
        for x, y in self.nodes.tolist():
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"CELLS {self.n_cells}\n")
        for i, j, k in self.cells.tolist():
            fh.write(f"{i} {j} {k}\n")


@dataclass(frozen=True, eq=False)
class NodalField:
    """One value per node of a specific mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"field has {v.shape} values, mesh has {self.mesh.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def mesh_generation(self):
        return self.mesh.generation


@dataclass(frozen=True)
class RefinePolicy:
    theta_mark: float = 0.5
    v_min: float = 0.5 * (np.pi * 0.05 / 16) ** 2
    v_max: float = 0.02
    coarsen_fraction: float = 0.05

    def __post_init__(self):
        if not 0 < self.theta_mark <= 1:
            raise ValueError("theta_mark must lie in (0, 1]")
        if not 0 < self.v_min < self.v_max:
            raise ValueError("need 0 < v_min < v_max")
        if self.coarsen_fraction < 0:
            raise ValueError("coarsen_fraction must be nonnegative")


def build_uniform(domain=(0.0, 1.0, 0.0, 1.0), n=1):
    """Diagonal split of an ``n x n`` grid over ``(x0, x1, y0, y1)``.

    The diagonal of every square is the refinement edge of both halves, which
    makes the macro mesh compatible for newest-vertex bisection.
    """
    x0, x1, y0, y1 = map(float, domain)
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not (x1 > x0 and y1 > y0):
        raise ValueError("domain rectangle has zero area")
    n = int(n)
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    p00 = (j * (n + 1) + i).ravel()
    p10 = p00 + 1
    p01 = p00 + n + 1
    p11 = p01 + 1
    lower = np.column_stack([p11, p00, p10])
    upper = np.column_stack([p00, p11, p01])
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    return Mesh(nodes, cells)


def _closure(mesh, marked):
    """Edges to bisect so that every marked cell is split and the result conforms."""
    cell_edges = mesh.cell_edges
    on = np.zeros(len(mesh.edges), dtype=bool)
    on[cell_edges[marked, 0]] = True
    while True:
        hit = on[cell_edges].any(axis=1) & ~on[cell_edges[:, 0]]
        if not hit.any():
            return on
        on[cell_edges[hit, 0]] = True


def refine_bisect(mesh, marked):
    """Newest-vertex bisection of ``marked`` cells plus conforming closure."""
    marked = np.unique(np.asarray(list(marked) if isinstance(marked, (set, frozenset))
                                  else marked, dtype=np.int64))
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.n_cells):
        raise ValueError("marked cell id out of range")
    if not marked.size:
        return Mesh(mesh.nodes, mesh.cells, mesh.generation + 1, np.arange(mesh.n_cells))

    on = _closure(mesh, marked)
    edge_ids = np.flatnonzero(on)
    mid_index = -np.ones(len(mesh.edges), dtype=np.int64)
    mid_index[edge_ids] = mesh.n_nodes + np.arange(len(edge_ids))
    e = mesh.edges[edge_ids]
    new_nodes = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[e[:, 0]] + mesh.nodes[e[:, 1]])])

    cells_out, parents = [], []
    cell_edges = mesh.cell_edges
    touched = on[cell_edges].any(axis=1)
    for t, (tri, ce) in enumerate(zip(mesh.cells, cell_edges)):
        if not touched[t]:
            cells_out.append(tri)
            parents.append(t)
            continue
        a, b, c = tri
        m = mid_index[ce[0]]
        # children (c, a, m) and (b, c, m) have refinement edges c-a and b-c
        for child, edge in (((c, a, m), ce[2]), ((b, c, m), ce[1])):
            if on[edge]:
                x, y, z = child
                mm = mid_index[edge]
                cells_out.extend([(z, x, mm), (y, z, mm)])
                parents.extend([t, t])
            else:
                cells_out.append(child)
                parents.append(t)
    return Mesh(new_nodes, np.array(cells_out, dtype=np.int64), mesh.generation + 1,
                np.array(parents, dtype=np.int64))


def coarsen(mesh, candidates, v_max=np.inf):
    """Undo bisections whose whole patch is in ``candidates``.

    A node is removed when every cell around it has it as newest vertex, the
    cells pair up as bisection siblings, all of them are candidates and each
    merged cell has area at most ``v_max``.  Returns the mesh and the
    map from new to old cells (first sibling for merged cells).
    """
    cand = np.zeros(mesh.n_cells, dtype=bool)
    cand[np.asarray(list(candidates), dtype=np.int64)] = True
    cells = mesh.cells
    newest = cells[:, 2]
    # patch of every node: all cells touching it
    touching = np.bincount(cells.ravel(), minlength=mesh.n_nodes)
    as_newest = np.bincount(newest, minlength=mesh.n_nodes)
    ok_node = (touching == as_newest) & np.isin(touching, (2, 4))
    ok_node[np.unique(newest[~cand])] = False
    merged_into = -np.ones(mesh.n_cells, dtype=np.int64)
    new_cells = {}
    nodes = mesh.nodes
    parent = mesh.parent_map

    def sibling(t, u):
        # (c, a, v) and (b, c, v) with v the midpoint of a-b
        if cells[u, 1] != cells[t, 0]:
            return False
        mid = 0.5 * (nodes[cells[t, 1]] + nodes[cells[u, 0]])
        return np.allclose(mid, nodes[cells[t, 2]], rtol=0, atol=1e-12 * (1 + np.abs(mid).max()))

    for v in np.flatnonzero(ok_node):
        patch = list(np.flatnonzero(newest == v))
        best = None
        for pairs in _matchings(patch):
            oriented = []
            for t, u in pairs:
                if sibling(t, u):
                    oriented.append((t, u))
                elif sibling(u, t):
                    oriented.append((u, t))
                else:
                    break
            else:
                # prefer the pairing recorded by the last refinement
                same = all(parent[t] == parent[u] for t, u in oriented)
                if best is None or same:
                    best = oriented
                if same:
                    break
        if best is None:
            continue
        if any(mesh.areas[t] + mesh.areas[u] > v_max for t, u in best):
            continue
        for t, u in best:
            x0, x1, _ = cells[t]
            y0 = cells[u, 0]
            new_cells[t] = (x1, y0, x0)
            merged_into[u] = t
    if not new_cells:
        return mesh, np.arange(mesh.n_cells)
    keep = merged_into < 0
    out = cells.copy()
    for t, tri in new_cells.items():
        out[t] = tri
    out = out[keep]
    old_ids = np.flatnonzero(keep)
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[out.ravel()] = True
    renum = -np.ones(mesh.n_nodes, dtype=np.int64)
    renum[used] = np.arange(used.sum())
    return Mesh(mesh.nodes[used], renum[out], mesh.generation + 1, old_ids), old_ids


def _matchings(items):
    """All perfect matchings of a short list."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for tail in _matchings(rest[:i] + rest[i + 1:]):
            yield [(first, other)] + tail


def _values_on(field_, mesh):
    if isinstance(field_, NodalField):
        if field_.mesh is not mesh and (field_.mesh.generation != mesh.generation
                                        or field_.mesh.n_nodes != mesh.n_nodes):
            raise ValueError("field does not live on this mesh generation")
        return field_.values
    v = np.asarray(field_, dtype=float)
    if v.shape != (mesh.n_nodes,):
        raise ValueError("field length does not match the mesh")
    return v


def gradient_jump_indicator(mesh, fields):
    """Per-cell sum over edges and fields of ``||[grad u . n]||^2_{L2(E)}``.

    Each interior edge adds its squared normal-gradient jump times its length
    to both adjacent cells; boundary edges add nothing.
    """
    eta = np.zeros(mesh.n_cells)
    edges, _, edge_cells = mesh._edge_data
    interior = edge_cells[:, 1] >= 0
    L, R = edge_cells[interior, 0], edge_cells[interior, 1]
    e = edges[interior]
    t = mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]]
    length = np.linalg.norm(t, axis=1)
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    G = mesh.basis_gradients
    contrib = np.zeros(len(L))
    for f in fields:
        u = _values_on(f, mesh)
        grad = np.einsum("tj,tjd->td", u[mesh.cells], G)
        jump = np.einsum("ed,ed->e", grad[L] - grad[R], normal)
        contrib += jump * jump * length
    np.add.at(eta, L, contrib)
    np.add.at(eta, R, contrib)
    return eta


def doerfler_mark(indicators, policy, cell_volumes):
    """Greedy Doerfler marking with the volume floor and coarsening candidates.

    Returns ``(refine, coarsen)`` as sorted integer arrays.
    """
    eta = np.asarray(indicators, dtype=float)
    vol = np.asarray(cell_volumes, dtype=float)
    if np.any(eta < 0):
        raise ValueError("indicators must be nonnegative")
    total = eta.sum()
    order = np.lexsort((np.arange(len(eta)), -eta))
    if total > 0:
        csum = np.cumsum(eta[order])
        n = int(np.searchsorted(csum, policy.theta_mark * total, side="left")) + 1
        chosen = order[:min(n, len(eta))]
    else:
        chosen = order[:0]
    refine = np.sort(chosen[0.5 * vol[chosen] >= policy.v_min])
    mean = total / len(eta) if len(eta) else 0.0
    coarse = np.flatnonzero((eta <= policy.coarsen_fraction * mean) & (2.0 * vol <= policy.v_max))
    coarse = np.setdiff1d(coarse, refine)
    return refine, coarse


def _barycentric(mesh, cells, pts):
    # lam_i(x) = lam_i(p0) + grad lam_i . (x - p0)
    p0 = mesh.nodes[mesh.cells[cells, 0]]
    lam = np.einsum("nid,nd->ni", mesh.basis_gradients[cells], pts - p0)
    lam[:, 0] += 1.0
    return lam


def locate_points(mesh, pts, tol=1e-10):
    """Containing cell and barycentric coordinates of each point.

    Points at most ``tol`` outside the mesh are clamped onto the nearest cell.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = len(pts)
    cell = -np.ones(n, dtype=np.int64)
    lam = np.zeros((n, 3))
    best_gap = np.full(n, np.inf)
    best_cell = np.zeros(n, dtype=np.int64)
    best_lam = np.zeros((n, 3))
    heights = 2.0 * mesh.areas[:, None] / np.linalg.norm(
        mesh.nodes[mesh.cells[:, [2, 0, 1]]] - mesh.nodes[mesh.cells[:, [1, 2, 0]]], axis=2)
    todo = np.arange(n)
    k = min(8, mesh.n_cells)
    while todo.size:
        _, cand = mesh._tree.query(pts[todo], k=k)
        cand = np.asarray(cand).reshape(len(todo), -1)
        for j in range(cand.shape[1]):
            c = cand[:, j]
            l = _barycentric(mesh, c, pts[todo])
            gap = -np.min(l * heights[c], axis=1)
            better = gap < best_gap[todo]
            best_gap[todo[better]] = gap[better]
            best_cell[todo[better]] = c[better]
            best_lam[todo[better]] = l[better]
        found = best_gap[todo] <= 0.0
        if k >= mesh.n_cells:
            break
        todo = todo[~found]
        k = min(4 * k, mesh.n_cells)
    if np.any(best_gap > tol):
        bad = int(np.flatnonzero(best_gap > tol)[0])
        raise GeometryError(f"point {pts[bad]} lies outside the mesh")
    cell[:] = best_cell
    lam = np.clip(best_lam, 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    # points strictly inside keep their exact coordinates
    inside = best_gap <= 0.0
    lam[inside] = best_lam[inside]
    return cell, lam


def _evaluate(mesh, values, pts):
    cell, lam = locate_points(mesh, pts)
    return np.einsum("ni,ni->n", values[mesh.cells[cell]], lam)


# edge-midpoint rule, exact for quadratics on triangles
_MID_BARY = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_MID_W = np.full(3, 1.0 / 3.0)


def _contained(outer_mesh, outer_cells, inner_pts, tol=1e-10):
    ok = np.ones(len(outer_cells), dtype=bool)
    for k in range(3):
        ok &= np.all(_barycentric(outer_mesh, outer_cells, inner_pts[:, k]) >= -tol, axis=1)
    return ok


def _overlay_regions(src, dst):
    """Triangles of the common refinement of two nested-compatible meshes."""
    ps = src.nodes[src.cells]
    pd = dst.nodes[dst.cells]
    ds, _ = locate_points(dst, ps.mean(axis=1))
    s_in_d = _contained(dst, ds, ps)
    sd, _ = locate_points(src, pd.mean(axis=1))
    d_in_s = _contained(src, sd, pd)
    # identical cells would be counted twice
    dup = d_in_s & s_in_d[sd] & (ds[sd] == np.arange(dst.n_cells))
    d_take = d_in_s & ~dup
    regions = np.vstack([ps[s_in_d], pd[d_take]])
    area = np.concatenate([src.areas[s_in_d], dst.areas[d_take]])
    return regions, area


def _quad_points(tris, bary):
    return np.einsum("qi,nid->nqd", bary, tris)


def transfer_nodal(field_, dst, mode="lagrange-interpolate"):
    """Move a P1 field onto ``dst`` by nodal interpolation or L2 projection."""
    src = field_.mesh
    vals = field_.values
    if mode == "lagrange-interpolate":
        if dst is src:
            return NodalField(dst, vals.copy())
        return NodalField(dst, _evaluate(src, vals, dst.nodes))
    if mode != "l2-project":
        raise ValueError(f"unknown transfer mode {mode!r}")
    from . import fem

    if dst is src:
        return NodalField(dst, vals.copy())
    regions, area = _overlay_regions(src, dst)
    if abs(area.sum() - dst.areas.sum()) > 1e-10 * dst.areas.sum():
        # meshes are not from a common bisection hierarchy: quadrature on dst
        return project_function(dst, lambda x: _evaluate(src, vals, x), subdivisions=3)
    qp = _quad_points(regions, _MID_BARY).reshape(-1, 2)
    w = (area[:, None] * _MID_W[None, :]).ravel()
    u = _evaluate(src, vals, qp)
    cell, lam = locate_points(dst, qp)
    b = np.zeros(dst.n_nodes)
    np.add.at(b, dst.cells[cell], (w * u)[:, None] * lam)
    return NodalField(dst, fem.solve_mass(dst, b))


# degree-5 Dunavant rule
_D5 = [
    (0.225, (1 / 3, 1 / 3, 1 / 3)),
    *[(0.132394152788506, p) for p in (
        (0.059715871789770, 0.470142064105115, 0.470142064105115),
        (0.470142064105115, 0.059715871789770, 0.470142064105115),
        (0.470142064105115, 0.470142064105115, 0.059715871789770))],
    *[(0.125939180544827, p) for p in (
        (0.797426985353087, 0.101286507323456, 0.101286507323456),
        (0.101286507323456, 0.797426985353087, 0.101286507323456),
        (0.101286507323456, 0.101286507323456, 0.797426985353087))],
]
_D5_W = np.array([w for w, _ in _D5])
_D5_B = np.array([b for _, b in _D5])


def _subdivide(bary, level):
    """Barycentric vertices of the ``4**level`` congruent subtriangles."""
    tris = np.array([np.eye(3)])
    for _ in range(level):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tris = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1),
            np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)])
    # quadrature points in barycentrics of the parent cell
    return np.einsum("qk,skj->sqj", bary, tris).reshape(-1, 3), len(tris)


def project_function(mesh, func, subdivisions=2):
    """L2 projection of ``func(points) -> values`` onto P1 on ``mesh``."""
    from . import fem

    bary, nsub = _subdivide(_D5_B, subdivisions)
    w = np.tile(_D5_W, nsub) / nsub
    p = mesh.nodes[mesh.cells]
    qp = np.einsum("qi,nid->nqd", bary, p)
    vals = np.asarray(func(qp.reshape(-1, 2)), dtype=float).reshape(len(p), -1)
    b = np.zeros(mesh.n_nodes)
    loc = np.einsum("nq,q,qi->ni", vals, w, bary) * mesh.areas[:, None]
    np.add.at(b, mesh.cells, loc)
    return NodalField(mesh, fem.solve_mass(mesh, b))
