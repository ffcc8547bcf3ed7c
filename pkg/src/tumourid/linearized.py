"""Exact derivatives of the discrete forward map.

Forward sensitivities differentiate every time step of the scheme with
respect to ``(P, chi, C)``; the adjoint runs the transposed recursion
backwards.  Both see the same per-step operators, so they agree to round-off.

Per step ``k`` (fixed mesh, ``pp = phi^{k-1}``)::

    A_k Sigma^k = M Sigma^{k-1} - tau C B_k Phi^{k-1} - d_k u_C
    J_k [Phi^k; Xi^k] = -[D_k Phi^{k-1} + E_k Sigma^k + a_k u_chi - b_k u_P; 0]

with ``A_k`` the nutrient matrix, ``J_k`` the Newton Jacobian of the
Cahn-Hilliard block at the converged step and the coupling blocks built in
:class:`Linearization`.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .forward import _CHSystem, nutrient_matrix
from .model import eval_df, eval_dg, eval_dh, eval_dm, eval_f, eval_g, eval_h
from .objective import tracking_residuals

__all__ = [
    "UnsupportedConfiguration",
    "SensTrajectory",
    "AdjTrajectory",
    "Linearization",
    "sensitivity_simulate",
    "all_sensitivities",
    "adjoint_simulate",
    "gradient_sensitivity",
    "gradient_adjoint",
]

UNIT_DIRECTIONS = {"P": np.array([1.0, 0.0, 0.0]),
                   "chi": np.array([0.0, 1.0, 0.0]),
                   "C": np.array([0.0, 0.0, 1.0])}


class UnsupportedConfiguration(ValueError):
    """Derivatives need one mesh shared by every time step."""


@dataclass
class SensTrajectory:
    """Sensitivities ``(Phi, Xi, Sigma)`` for one control direction, index ``k = 0..K``."""

    direction: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray


@dataclass
class AdjTrajectory:
    """Adjoint fields ``(p, q, r)`` for ``k = 1..K`` (row 0 unused).

    ``p_T`` and ``r_T`` are the terminal data at ``t = T`` that seed the
    backward recursion; the final-time misfit enters through the load at
    ``k = K`` and ``r_T`` is identically zero.
    """

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    p_T: np.ndarray
    r_T: np.ndarray


class _Step:
    __slots__ = ("A", "J", "B", "D", "E", "a", "b", "d")


class Linearization:
    """Per-step derivative operators of a trajectory on a fixed mesh.

    Operators and factorizations are built lazily and cached, so one
    instance can serve sensitivities, the adjoint and gradient assembly.
    """

    def __init__(self, traj):
        mesh = traj.fixed_mesh
        if mesh is None:
            raise UnsupportedConfiguration("derivatives need a fixed mesh sequence")
        self.traj = traj
        self.mesh = mesh
        self.n = mesh.n_nodes
        ops = fem.operators(mesh)
        self.M = ops.M
        self._steps = {}

    def step(self, k):
        st = self._steps.get(k)
        if st is not None:
            return st
        traj, mesh, M = self.traj, self.mesh, self.M
        cfg, tau, par = traj.model, traj.tau, traj.params
        pp = traj.states[k - 1].phi
        now = traj.states[k]
        sig, mu = now.sigma, now.mu

        st = _Step()
        st.A = splu(nutrient_matrix(mesh, pp, par.C, tau).tocsc())
        system = _CHSystem(mesh, pp, sig, par, tau, cfg)
        st.J = splu(system.jacobian(now.phi))
        Km = system.Km
        # d/dpp of (M_h(pp) sigma) = M_sigma diag(h'(pp))
        st.B = fem.assemble_weighted_mass(mesh, sig) @ sp.diags(eval_dh(pp))
        G = fem.weighted_stiffness_jacobian(mesh, mu + par.chi * sig)
        fp, gs = eval_f(pp), eval_g(sig, cfg)
        st.D = (tau * (G @ sp.diags(eval_dm(pp, cfg))) - M
                - (tau * par.P) * (M @ sp.diags(eval_df(pp) * gs))).tocsr()
        st.E = ((tau * par.chi) * Km - (tau * par.P) * (M @ sp.diags(fp * eval_dg(sig, cfg)))).tocsr()
        st.a = tau * (Km @ sig)
        st.b = tau * (M @ (fp * gs))
        st.d = tau * (fem.assemble_weighted_mass(mesh, eval_h(pp)) @ sig)
        self._steps[k] = st
        return st

    def sensitivities(self, U):
        """Sweep all steps for the directions in the columns of ``U`` (shape ``(3, m)``)."""
        U = np.asarray(U, dtype=float).reshape(3, -1)
        K, n, m = self.traj.K, self.n, U.shape[1]
        C, tau = self.traj.params.C, self.traj.tau
        Phi = np.zeros((K + 1, n, m))
        Xi = np.zeros((K + 1, n, m))
        Sig = np.zeros((K + 1, n, m))
        for k in range(1, K + 1):
            st = self.step(k)
            rhs = self.M @ Sig[k - 1] - (tau * C) * (st.B @ Phi[k - 1]) - np.outer(st.d, U[2])
            Sig[k] = st.A.solve(rhs)
            top = (st.D @ Phi[k - 1] + st.E @ Sig[k]
                   + np.outer(st.a, U[1]) - np.outer(st.b, U[0]))
            y = st.J.solve(-np.vstack([top, np.zeros((n, m))]))
            Phi[k], Xi[k] = y[:n], y[n:]
        return Phi, Xi, Sig

    def adjoint(self, loads):
        """Backward transposed sweep for the loads ``w_k`` on ``Phi^k``, ``k = 1..K``."""
        K, n = self.traj.K, self.n
        C, tau = self.traj.params.C, self.traj.tau
        p = np.zeros((K + 1, n))
        q = np.zeros((K + 1, n))
        r = np.zeros((K + 1, n))
        p_next = np.zeros(n)
        r_next = np.zeros(n)
        for k in range(K, 0, -1):
            st = self.step(k)
            rhs = loads[k].copy()
            if k < K:
                nxt = self.step(k + 1)
                rhs -= nxt.D.T @ p_next + (tau * C) * (nxt.B.T @ r_next)
            lam = st.J.solve(np.concatenate([rhs, np.zeros(n)]), trans="T")
            p[k], q[k] = lam[:n], lam[n:]
            r[k] = st.A.solve(self.M @ r_next - st.E.T @ p[k], trans="T")
            p_next, r_next = p[k], r[k]
        return p, q, r

    def adjoint_gradient(self, p, r):
        gP = gchi = gC = 0.0
        for k in range(1, self.traj.K + 1):
            st = self.step(k)
            gP += p[k] @ st.b
            gchi -= p[k] @ st.a
            gC -= r[k] @ st.d
        return np.array([gP, gchi, gC])


def _lin(traj, lin):
    if lin is None:
        return Linearization(traj)
    if lin.traj is not traj:
        raise ValueError("linearization belongs to a different trajectory")
    return lin


def sensitivity_simulate(traj, direction, lin=None):
    """Sensitivity trajectory for one control direction (``"P"``, ``"chi"``, ``"C"`` or a 3-vector)."""
    e = UNIT_DIRECTIONS[direction] if isinstance(direction, str) else np.asarray(direction, float)
    Phi, Xi, Sig = _lin(traj, lin).sensitivities(e[:, None])
    return SensTrajectory(e, Phi[..., 0], Xi[..., 0], Sig[..., 0])


def all_sensitivities(traj, lin=None):
    """Sensitivities for the three canonical directions in one sweep."""
    Phi, Xi, Sig = _lin(traj, lin).sensitivities(np.eye(3))
    return [SensTrajectory(np.eye(3)[i], Phi[..., i], Xi[..., i], Sig[..., i]) for i in range(3)]


def _loads(traj, data, weights):
    res, res_T = tracking_residuals(traj, data)
    M = fem.operators(traj.fixed_mesh).M
    loads = [None] + [weights.beta_Q * traj.tau * (M @ rk) for rk in res]
    loads[traj.K] = loads[traj.K] + weights.beta_Omega * (M @ res_T)
    return loads, res_T


def adjoint_simulate(traj, data, weights, lin=None):
    lin = _lin(traj, lin)
    loads, res_T = _loads(traj, data, weights)
    p, q, r = lin.adjoint(loads)
    return AdjTrajectory(p, q, r, weights.beta_Omega * res_T, np.zeros(lin.n))


def _reg_gradient(weights, params):
    return weights.reg * (params.as_array() - weights.targets)


def gradient_sensitivity(traj, sens, data, weights, params):
    """Gradient of the discrete objective assembled from sensitivities."""
    loads, _ = _loads(traj, data, weights)
    g = np.array([sum(loads[k] @ s.phi[k] for k in range(1, traj.K + 1)) for s in sens])
    return g + _reg_gradient(weights, params)


def gradient_adjoint(traj, adj, params, weights, lin=None):
    """Gradient of the discrete objective from one adjoint solve."""
    return _lin(traj, lin).adjoint_gradient(adj.p, adj.r) + _reg_gradient(weights, params)
