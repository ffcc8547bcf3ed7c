"""
Checking derivatives
====================

The Gauss-Newton model is built from forward sensitivities, while the
gradient can also be obtained from one backward adjoint sweep.  Both are
exact derivatives of the discrete objective, so they agree to rounding, and
central finite differences approach them at second order.

Run with ``python demos/gradient_check.py``.
"""
import numpy as np

from tumourid.data import generate_data
from tumourid.forward import Params, SolverConfig, simulate
from tumourid.linearized import (Linearization, adjoint_simulate, all_sensitivities,
                                 gradient_adjoint, gradient_sensitivity)
from tumourid.mesh import build_uniform
from tumourid.model import ModelConfig
from tumourid.objective import ObjectiveWeights, evaluate_objective

# %%
# Observations from the true parameters (7, 6, 2) on a small problem.
model = ModelConfig(eps=0.1, s=1e3)
solver = SolverConfig(tau=0.1, K=5)
mesh = build_uniform((-5.0, 5.0, -5.0, 5.0), 16)
data, _ = generate_data(Params(7.0, 6.0, 2.0), solver, model, mesh)
w = ObjectiveWeights(beta_Q=1.0, beta_Omega=0.5)


def J(u):
    p = Params.from_array(u)
    return evaluate_objective(simulate(data.phi0, data.sigma0, p, solver, model), data, w, p)


# %%
# Derivatives at a point away from the truth.  One Linearization object
# holds the factorized step Jacobians and serves both sweeps.
u = np.array([5.0, 4.0, 3.0])
traj = simulate(data.phi0, data.sigma0, Params(*u), solver, model)
lin = Linearization(traj)
g_sens = gradient_sensitivity(traj, all_sensitivities(traj, lin), data, w, Params(*u))
g_adj = gradient_adjoint(traj, adjoint_simulate(traj, data, w, lin), Params(*u), w, lin)
print("sensitivity gradient", g_sens)
print("adjoint gradient    ", g_adj)
print(f"relative difference  {np.linalg.norm(g_adj - g_sens) / np.linalg.norm(g_sens):.2e}")

# %%
# Central differences; the error should drop by about 100 per decade of h.
prev = None
for h in (1e-1, 1e-2, 1e-3, 1e-4):
    fd = np.array([(J(u + h * e) - J(u - h * e)) / (2 * h) for e in np.eye(3)])
    err = np.linalg.norm(fd - g_sens) / np.linalg.norm(g_sens)
    rate = "" if prev is None else f"  order {np.log10(prev / err):.2f}"
    print(f"h = {h:.0e}: relative error {err:.2e}{rate}")
    prev = err
