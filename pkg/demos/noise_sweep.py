"""
Identification under observation noise
======================================

Uniform noise of amplitude delta is added to every observed phase field and
the parameters are identified again.  The optimal objective value grows
roughly like delta squared.  P stays well determined while chi and C drift
along their weakly identifiable direction; the predicted spread from the
linearized covariance is printed next to each estimate.

Takes about five minutes.  Run with ``python demos/noise_sweep.py``.
"""
import numpy as np

from tumourid import fem
from tumourid.data import NoiseSpec, generate_data
from tumourid.forward import AdmissibleBox, Params, SolverConfig, simulate
from tumourid.linearized import all_sensitivities
from tumourid.mesh import build_uniform
from tumourid.model import ModelConfig
from tumourid.objective import ObjectiveWeights, gauss_newton_system
from tumourid.optimizer import TRConfig, identify

truth = np.array([7.0, 6.0, 2.0])
model = ModelConfig(eps=0.1, s=1e3)
solver = SolverConfig(tau=0.1, K=20)
mesh = build_uniform((-5.0, 5.0, -5.0, 5.0), 32)
w = ObjectiveWeights(beta_Q=1.0)

# %%
# Linearized covariance of the estimator at the truth.  With S_k the
# sensitivities of phi^k, the Gauss-Newton matrix is H and the gradient
# noise has covariance (delta^2 / 3) sum_k tau^2 S_k' M M S_k.
clean, _ = generate_data(Params(*truth), solver, model, mesh)
traj = simulate(clean.phi0, clean.sigma0, Params(*truth), solver, model)
sens = all_sensitivities(traj)
H, _ = gauss_newton_system(sens, traj, clean, w, Params(*truth))
M = fem.operators(mesh).M
B = sum(solver.tau ** 2 * S.T @ (M @ (M @ S))
        for S in (np.column_stack([s.phi[k] for s in sens]) for k in range(1, solver.K + 1)))
Hi = np.linalg.inv(H)
print("Gauss-Newton eigenvalues", np.linalg.eigvalsh(H))

# %%
print(f"{'delta':>6} {'P':>8} {'chi':>8} {'C':>8} {'J*':>10}   predicted rel. std (P, chi, C)")
for delta in (0.05, 0.1, 0.2):
    data, _ = generate_data(Params(*truth), solver, model, mesh, NoiseSpec(delta, 12345))
    res = identify(data, Params(0, 0, 0), AdmissibleBox(), w, solver,
                   TRConfig(grad_tol=1e-6), model)
    std = np.sqrt(np.diag(Hi @ B @ Hi) * delta ** 2 / 3) / truth
    p = res.params
    print(f"{delta:6.2f} {p.P:8.4f} {p.chi:8.4f} {p.C:8.4f} {res.J:10.3e}   "
          + "  ".join(f"{100 * v:5.1f}%" for v in std))
