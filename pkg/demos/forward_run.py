"""
A single forward run
====================

Grow a tumour from the default circular seed on a 32x32 mesh, report the
tumour mass and nutrient budget over time, and write VTK snapshots that can
be opened in ParaView.

Run with ``python demos/forward_run.py [output_dir]``.
"""
import os
import sys

import numpy as np

from tumourid import fem
from tumourid.forward import Params, SolverConfig, initial_fields, simulate
from tumourid.mesh import build_uniform
from tumourid.model import ModelConfig
from tumourid.storage import write_vtk

out = sys.argv[1] if len(sys.argv) > 1 else "demo_output/forward"
os.makedirs(out, exist_ok=True)

# %%
# Mesh, model constants and initial state.  A wider interface (eps = 0.1)
# than the reference setup keeps a 32x32 mesh adequate.
mesh = build_uniform((-5.0, 5.0, -5.0, 5.0), 32)
model = ModelConfig(eps=0.1, s=1e3)
phi0, sigma0 = initial_fields(mesh, model)
print(f"{mesh.n_nodes} nodes, {mesh.n_cells} cells")

# %%
# Twenty steps of size 0.1 with proliferation P = 7, chemotaxis chi = 6 and
# consumption C = 2.
traj = simulate(phi0, sigma0, Params(7.0, 6.0, 2.0), SolverConfig(tau=0.1, K=20), model)

# %%
# The tumour volume is the measure of {phi > 0}; approximated here by the
# lumped mass of the nodes where phi is positive.  Nutrient is consumed, so
# its total only decreases.
lumped = fem.lumped_masses(mesh)
M = fem.operators(mesh).M
one = np.ones(mesh.n_nodes)
print(f"{'k':>3} {'t':>5} {'tumour area':>12} {'int phi':>10} {'int sigma':>10}")
for st in traj.states[::4]:
    area = lumped[st.phi > 0].sum()
    print(f"{st.k:3d} {st.t:5.2f} {area:12.4f} {one @ M @ st.phi:10.4f} {one @ M @ st.sigma:10.4f}")

# %%
# Snapshots for visual inspection.
for st in (traj.states[0], traj.states[10], traj.states[-1]):
    write_vtk(st, os.path.join(out, f"state_{st.k:04d}.vtk"))
print(f"VTK snapshots in {out}")
