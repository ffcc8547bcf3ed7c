"""Tracking objective, Gauss-Newton model and the box stationarity measure."""
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .forward import Params
from .mesh import NodalField, transfer_nodal

__all__ = [
    "DesiredStates",
    "ObjectiveWeights",
    "tracking_residuals",
    "evaluate_objective",
    "gauss_newton_system",
    "model_value",
    "projected_stationarity",
]


@dataclass
class DesiredStates:
    """Observed phase fields for ``k = 1..K`` plus the final-time target.

    ``phi_Q[k-1]`` is the observation at time index ``k``.  ``phi0`` and
    ``sigma0`` are the noise-free initial fields used to restart the
    simulation during identification.
    """

    phi_Q: list
    phi_Omega: NodalField = None
    phi0: NodalField = None
    sigma0: NodalField = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.phi_Q:
            raise ValueError("need at least one observation")
        if self.phi_Omega is None:
            self.phi_Omega = self.phi_Q[-1]

    @property
    def K(self):
        return len(self.phi_Q)


@dataclass(frozen=True)
class ObjectiveWeights:
    beta_Q: float = 1.0
    beta_Omega: float = 0.0
    beta_P: float = 1e-8
    beta_chi: float = 1e-8
    beta_C: float = 1e-8
    P_d: float = 7.0
    chi_d: float = 6.0
    C_d: float = 2.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        if not self.beta_Q + self.beta_Omega > 0:
            raise ValueError("beta_Q + beta_Omega must be positive")
        if not self.beta_P + self.beta_chi + self.beta_C > 0:
            raise ValueError("beta_P + beta_chi + beta_C must be positive")

    @property
    def reg(self):
        return np.array([self.beta_P, self.beta_chi, self.beta_C])

    @property
    def targets(self):
        return np.array([self.P_d, self.chi_d, self.C_d])


def _on_mesh(field_, mesh):
    if field_.mesh is mesh:
        return field_.values
    # data from a different mesh is interpolated onto the simulation mesh
    return transfer_nodal(field_, mesh).values


def tracking_residuals(traj, data):
    """``phi^k - phi_Q^k`` for ``k = 1..K`` and ``phi^K - phi_Omega``."""
    if data.K != traj.K:
        raise ValueError(f"data has {data.K} steps, trajectory has {traj.K}")
    res = [traj.states[k].phi - _on_mesh(data.phi_Q[k - 1], traj.states[k].mesh)
           for k in range(1, traj.K + 1)]
    last = traj.states[-1]
    return res, last.phi - _on_mesh(data.phi_Omega, last.mesh)


def evaluate_objective(traj, data, w, params):
    res, res_T = tracking_residuals(traj, data)
    J = 0.0
    if w.beta_Q:
        J += 0.5 * w.beta_Q * traj.tau * sum(
            r @ (fem.operators(s.mesh).M @ r) for r, s in zip(res, traj.states[1:]))
    if w.beta_Omega:
        M = fem.operators(traj.states[-1].mesh).M
        J += 0.5 * w.beta_Omega * (res_T @ (M @ res_T))
    d = params.as_array() - w.targets
    return float(J + 0.5 * np.sum(w.reg * d * d))


def gauss_newton_system(sens, traj, data, w, params):
    """Gauss-Newton Hessian and gradient from the three sensitivity trajectories."""
    from .linearized import gradient_sensitivity

    H = np.diag(w.reg).astype(float)
    for k in range(1, traj.K + 1):
        M = fem.operators(traj.states[k].mesh).M
        S = np.column_stack([s.phi[k] for s in sens])
        weight = w.beta_Q * traj.tau + (w.beta_Omega if k == traj.K else 0.0)
        if weight:
            H += weight * (S.T @ (M @ S))
    H = 0.5 * (H + H.T)
    g = gradient_sensitivity(traj, sens, data, w, params)
    return H, g


def model_value(J0, g, H, d):
    d = np.asarray(d, dtype=float)
    return J0 + g @ d + 0.5 * d @ H @ d


def projected_stationarity(params, grad, box):
    """``|| u - Proj_box(u - grad) ||_2``; equals ``||grad||`` at interior points."""
    u = params.as_array() if isinstance(params, Params) else np.asarray(params, dtype=float)
    if not box.contains(u):
        raise ValueError("iterate lies outside the admissible box")
    proj = np.clip(u - np.asarray(grad, dtype=float), 0.0, box.upper)
    return float(np.linalg.norm(u - proj))
