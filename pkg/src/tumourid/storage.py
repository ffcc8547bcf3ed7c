"""Text persistence: trajectories, observation sets, iteration history and VTK.

Checkpoint layout (one token group per line, floats written with ``repr`` so
that reading them back is bit-exact)::

    TUMOURID <kind> <version>
    HEADER
    key value            # tau, K, parameters, model constants ...
    END
    MESH <generation>    # whenever the mesh changes
    NODES n
    x y
    CELLS m
    i j k
    STATE k t            # trajectories only
    FIELD name n
    value
"""
import csv

import numpy as np

from .forward import Params, State, Trajectory
from .mesh import Mesh, NodalField
from .model import ModelConfig
from .objective import DesiredStates

__all__ = [
    "FormatError",
    "write_trajectory",
    "read_trajectory",
    "write_desired_states",
    "read_desired_states",
    "write_history_csv",
    "write_vtk",
]

VERSION = 1
HISTORY_HEADER = ["iter", "P", "chi", "C", "J", "stationarity", "delta",
                  "step_norm", "accepted", "active_bounds"]
_MODEL_KEYS = ("eps", "beta", "s", "rho", "M_cap", "theta_g", "m0", "m1")


class FormatError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


# writing


def _write_mesh(fh, mesh):
    fh.write(f"MESH {mesh.generation}\n")
    mesh.write_text(fh)


def _write_field(fh, name, values):
    fh.write(f"FIELD {name} {len(values)}\n")
    fh.write("".join(f"{v!r}\n" for v in values.tolist()))


def _write_header(fh, kind, items):
    fh.write(f"TUMOURID {kind} {VERSION}\nHEADER\n")
    for key, val in items:
        fh.write(f"{key} {val!r}\n" if isinstance(val, float) else f"{key} {val}\n")
    fh.write("END\n")


def write_trajectory(traj, path):
    items = [("tau", float(traj.tau)), ("K", traj.K)]
    items += [(k, float(v)) for k, v in zip(("P", "chi", "C"), traj.params.as_array())]
    items += [(k, float(getattr(traj.model, k))) for k in _MODEL_KEYS]
    with open(path, "w") as fh:
        _write_header(fh, "trajectory", items)
        last = None
        for st in traj.states:
            fh.write(f"STATE {st.k} {float(st.t)!r}\n")
            if st.mesh is not last:
                _write_mesh(fh, st.mesh)
                last = st.mesh
            for name in ("phi", "mu", "sigma"):
                _write_field(fh, name, getattr(st, name))


def write_desired_states(data, path):
    """Observations plus the noise-free initial fields, all on their meshes."""
    items = [("K", data.K)] + sorted(data.meta.items())
    entries = []
    if data.phi0 is not None:
        entries.append(("phi0", data.phi0))
    if data.sigma0 is not None:
        entries.append(("sigma0", data.sigma0))
    entries += [(f"phi_Q:{k}", f) for k, f in enumerate(data.phi_Q, 1)]
    entries.append(("phi_Omega", data.phi_Omega))
    with open(path, "w") as fh:
        _write_header(fh, "data", items)
        last = None
        for name, f in entries:
            if f.mesh is not last:
                _write_mesh(fh, f.mesh)
                last = f.mesh
            _write_field(fh, name, f.values)


# reading


class _Reader:
    def __init__(self, path):
        with open(path) as fh:
            self.lines = fh.read().split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def peek(self):
        return self.lines[self.pos].split() if self.pos < len(self.lines) else None

    def next(self, expect=None):
        if self.pos >= len(self.lines):
            raise FormatError("unexpected end of file (truncated?)", self.pos + 1)
        tok = self.lines[self.pos].split()
        self.pos += 1
        if expect is not None and (not tok or tok[0] != expect):
            raise FormatError(f"expected {expect}, found {self.lines[self.pos - 1]!r}", self.pos)
        return tok

    def block(self, count, width, conv):
        start = self.pos
        if start + count > len(self.lines):
            raise FormatError(f"expected {count} rows, file ends early (truncated?)", len(self.lines) + 1)
        rows = self.lines[start:start + count]
        self.pos += count
        try:
            out = [[conv(t) for t in r.split()] for r in rows]
        except ValueError as err:
            raise FormatError(f"bad value ({err})", start + 1) from None
        for i, r in enumerate(out):
            if len(r) != width:
                raise FormatError(f"expected {width} values per row", start + i + 1)
        return out

    def header(self, kind):
        tok = self.next("TUMOURID")
        if len(tok) != 3 or tok[1] != kind:
            raise FormatError(f"not a {kind} file", self.pos)
        if tok[2] != str(VERSION):
            raise FormatError(f"unsupported version {tok[2]} (expected {VERSION})", self.pos)
        self.next("HEADER")
        items = {}
        while True:
            tok = self.next()
            if tok == ["END"]:
                return items
            if len(tok) != 2:
                raise FormatError("malformed header entry", self.pos)
            items[tok[0]] = tok[1]

    def mesh(self):
        tok = self.next("MESH")
        gen = self._int(tok, 1)
        n = self._int(self.next("NODES"), 1)
        nodes = np.array(self.block(n, 2, float), dtype=float).reshape(n, 2)
        m = self._int(self.next("CELLS"), 1)
        cells = np.array(self.block(m, 3, int), dtype=np.int64).reshape(m, 3)
        if cells.size and (cells.min() < 0 or cells.max() >= n):
            raise FormatError("cell references a missing node", self.pos)
        return Mesh(nodes, cells, generation=gen)

    def field(self, mesh, name=None):
        tok = self.next("FIELD")
        if len(tok) != 3:
            raise FormatError("malformed FIELD line", self.pos)
        if name is not None and tok[1] != name:
            raise FormatError(f"expected field {name}, found {tok[1]}", self.pos)
        n = self._int(tok, 2)
        if mesh is None:
            raise FormatError("field before any mesh", self.pos)
        if n != mesh.n_nodes:
            raise FormatError(f"field {tok[1]} has {n} values, mesh has {mesh.n_nodes} nodes", self.pos)
        vals = np.array(self.block(n, 1, float), dtype=float).reshape(n)
        return tok[1], vals

    def _int(self, tok, i):
        try:
            return int(tok[i])
        except (IndexError, ValueError):
            raise FormatError("expected an integer count", self.pos) from None


def read_trajectory(path):
    rd = _Reader(path)
    head = rd.header("trajectory")
    try:
        tau = float(head["tau"])
        K = int(head["K"])
        params = Params(*(float(head[k]) for k in ("P", "chi", "C")))
        model = ModelConfig(**{k: float(head[k]) for k in _MODEL_KEYS})
    except KeyError as err:
        raise FormatError(f"header misses {err.args[0]}") from None
    states, mesh = [], None
    while rd.peek() is not None:
        tok = rd.next("STATE")
        if len(tok) != 3:
            raise FormatError("malformed STATE line", rd.pos)
        k, t = rd._int(tok, 1), float(tok[2])
        if rd.peek() and rd.peek()[0] == "MESH":
            mesh = rd.mesh()
        vals = [rd.field(mesh, name)[1] for name in ("phi", "mu", "sigma")]
        states.append(State(mesh, *vals, k=k, t=t))
    if len(states) != K + 1:
        raise FormatError(f"header says K={K} but the file holds {len(states)} states")
    return Trajectory(states, tau, params, model)


def read_desired_states(path):
    rd = _Reader(path)
    head = rd.header("data")
    K = int(head.pop("K"))
    got, mesh = {}, None
    while rd.peek() is not None:
        if rd.peek()[0] == "MESH":
            mesh = rd.mesh()
        name, vals = rd.field(mesh)
        got[name] = NodalField(mesh, vals)
    try:
        phi_Q = [got[f"phi_Q:{k}"] for k in range(1, K + 1)]
    except KeyError as err:
        raise FormatError(f"missing observation {err.args[0]}") from None
    return DesiredStates(phi_Q, got.get("phi_Omega"), got.get("phi0"), got.get("sigma0"), head)


# history and visualization


def write_history_csv(result, path):
    """One row per outer iteration plus a final row for the returned iterate."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HISTORY_HEADER)
        for rec in result.records:
            wr.writerow([rec.it, *(repr(float(x)) for x in rec.u), repr(float(rec.J)),
                         repr(float(rec.stationarity)), repr(float(rec.delta)),
                         repr(float(np.max(np.abs(rec.step)))), int(rec.accepted),
                         rec.active_bounds])
        u = result.params.as_array()
        wr.writerow([result.n_iter, *(repr(float(x)) for x in u), repr(float(result.J)),
                     repr(float(result.stationarity)), repr(float(result.final_delta)),
                     repr(0.0), 1, result.final_active])


def write_vtk(state, path, title=None):
    """Legacy ASCII unstructured grid with point scalars ``phi``, ``mu`` and ``sigma``."""
    mesh = state.mesh
    n, m = mesh.n_nodes, mesh.n_cells
    title = title or f"tumour state k={state.k} t={float(state.t)!r}"
    parts = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    parts += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist()]
    parts.append(f"CELLS {m} {4 * m}")
    parts += [f"3 {i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    parts.append(f"CELL_TYPES {m}")
    parts += ["5"] * m
    parts.append(f"POINT_DATA {n}")
    for name in ("phi", "mu", "sigma"):
        parts += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        parts += [repr(v) for v in getattr(state, name).tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
