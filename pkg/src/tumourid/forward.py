"""Semi-implicit time stepping of the tumour model.

Each step first solves the linear nutrient equation and then the coupled
Cahn-Hilliard block for ``(phi, mu)`` with Newton's method.  Only the lumped
potential term is nonlinear in the unknowns; mobility and sources are lagged
at the previous phase field.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import fem
from .mesh import (Mesh, NodalField, RefinePolicy, coarsen, doerfler_mark,
                   gradient_jump_indicator, project_function, refine_bisect,
                   transfer_nodal, _values_on)
from .model import (ModelConfig, eval_f, eval_g, eval_h, eval_m, eval_psi, eval_psi_derivs,
                    initial_phi, initial_sigma)

__all__ = [
    "SolverError", "NewtonError",
    "Params", "AdmissibleBox", "SolverConfig", "State", "Trajectory",
    "solve_nutrient_step", "solve_ch_step_newton", "chemical_potential",
    "advance", "simulate", "initial_fields",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A linear or nonlinear solve did not reach its tolerance."""

    def __init__(self, msg, residual=np.nan, step=None):
        super().__init__(msg)
        self.residual = residual
        self.step = step


class NewtonError(SolverError):
    pass


@dataclass(frozen=True)
class Params:
    """Proliferation rate ``P``, chemotaxis ``chi`` and consumption ``C``."""

    P: float = 0.0
    chi: float = 0.0
    C: float = 0.0

    def __post_init__(self):
        for name in ("P", "chi", "C"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
            object.__setattr__(self, name, v)

    def as_array(self):
        return np.array([self.P, self.chi, self.C])

    @classmethod
    def from_array(cls, u):
        P, chi, C = (float(x) for x in u)
        return cls(P, chi, C)


@dataclass(frozen=True)
class AdmissibleBox:
    P_inf: float = 10.0
    chi_inf: float = 10.0
    C_inf: float = 10.0

    def __post_init__(self):
        if min(self.P_inf, self.chi_inf, self.C_inf) <= 0:
            raise ValueError("box upper bounds must be positive")

    @property
    def upper(self):
        return np.array([self.P_inf, self.chi_inf, self.C_inf])

    def contains(self, u, tol=0.0):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= -tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class SolverConfig:
    tau: float = 0.05
    K: int = 160
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-10
    max_halvings: int = 30
    adapt: bool = False
    policy: RefinePolicy = field(default_factory=RefinePolicy)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if int(self.K) != self.K or self.K < 0:
            raise ValueError("K must be a nonnegative integer")
        if not (self.newton_tol > 0 and self.linear_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")


@dataclass
class State:
    mesh: Mesh
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    k: int = 0
    t: float = 0.0

    def __post_init__(self):
        for name in ("phi", "mu", "sigma"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (self.mesh.n_nodes,):
                raise ValueError(f"{name} does not match the mesh")
            setattr(self, name, v)

    def field(self, name):
        return NodalField(self.mesh, getattr(self, name))


@dataclass
class Trajectory:
    states: list
    tau: float
    params: Params
    model: ModelConfig

    @property
    def K(self):
        return len(self.states) - 1

    @property
    def meshes(self):
        return [s.mesh for s in self.states]

    @property
    def fixed_mesh(self):
        """The common mesh when the mesh never changed, else ``None``."""
        m0 = self.states[0].mesh
        return m0 if all(s.mesh is m0 for s in self.states) else None

    def phi(self, k):
        return self.states[k].phi


def _dual_norm(r, lumped):
    n = len(lumped)
    return float(np.sqrt(np.sum(r[:n] ** 2 / lumped) + np.sum(r[n:] ** 2 / lumped)))


def nutrient_matrix(mesh, phi_prev, C, tau):
    ops = fem.operators(mesh)
    A = ops.M + tau * ops.K
    if C != 0.0:
        A = A + (tau * C) * fem.assemble_weighted_mass(mesh, eval_h(phi_prev))
    return A


def solve_nutrient_step(sigma_prev, phi_prev, params, tau, mesh, linear_tol=1e-10):
    """Implicit nutrient step ``(M + tau K + tau C M_h) sigma = M sigma_prev``."""
    sp_ = _values_on(sigma_prev, mesh)
    pp = _values_on(phi_prev, mesh)
    A = nutrient_matrix(mesh, pp, params.C, tau).tocsc()
    b = fem.operators(mesh).M @ sp_
    sigma = splu(A).solve(b)
    res = np.linalg.norm(A @ sigma - b) / max(np.linalg.norm(b), 1e-300)
    if not res <= linear_tol:
        raise SolverError(f"nutrient solve residual {res:.3e} exceeds {linear_tol:.1e}", res)
    return sigma


def chemical_potential(mesh, phi, cfg):
    """``mu`` with ``M mu = beta eps K phi + (beta/eps) M_L Psi'(phi)``."""
    ops = fem.operators(mesh)
    d1, _ = eval_psi_derivs(phi, cfg)
    rhs = cfg.beta * cfg.eps * (ops.K @ phi) + (cfg.beta / cfg.eps) * ops.lumped * d1
    return fem.solve_mass(mesh, rhs)


class _CHSystem:
    """Residual, Jacobian and energy merit of the Cahn-Hilliard block at one step."""

    def __init__(self, mesh, phi_prev, sigma_now, params, tau, cfg):
        ops = fem.operators(mesh)
        self.mesh, self.cfg, self.tau = mesh, cfg, tau
        self.M, self.K, self.lumped = ops.M, ops.K, ops.lumped
        self.n = mesh.n_nodes
        self.Km = fem.assemble_weighted_stiffness(mesh, eval_m(phi_prev, cfg))
        self.source = eval_f(phi_prev) * eval_g(sigma_now, cfg)
        # everything in R1 that does not depend on the unknowns
        self.r1_const = (-(self.M @ phi_prev) + params.chi * tau * (self.Km @ sigma_now)
                         - tau * params.P * (self.M @ self.source))
        self.top = sp.hstack([self.M, tau * self.Km]).tocsr()
        self._bordered = None

    def residual(self, x):
        phi, mu = x[:self.n], x[self.n:]
        cfg = self.cfg
        d1, _ = eval_psi_derivs(phi, cfg)
        r1 = self.M @ phi + self.tau * (self.Km @ mu) + self.r1_const
        r2 = (cfg.beta * cfg.eps * (self.K @ phi) + (cfg.beta / cfg.eps) * self.lumped * d1
              - self.M @ mu)
        return np.concatenate([r1, r2])

    def jacobian(self, phi, convexify=False):
        cfg = self.cfg
        _, d2 = eval_psi_derivs(phi, cfg)
        if convexify:
            d2 = np.maximum(d2, 0.0)
        lower = sp.hstack([
            cfg.beta * cfg.eps * self.K + sp.diags((cfg.beta / cfg.eps) * self.lumped * d2),
            -self.M,
        ])
        return sp.vstack([self.top, lower]).tocsc()

    def _kinv(self, w):
        # pseudo-inverse of the weighted stiffness on mean-free data
        if self._bordered is None:
            one = sp.csr_matrix(np.ones((self.n, 1)))
            self._bordered = splu(sp.bmat([[self.Km, one], [one.T, None]]).tocsc())
        return self._bordered.solve(np.append(w, 0.0))[:self.n]

    def initial_guess(self, phi_prev, params):
        # mass-consistent phase field; mu from the potential relation
        phi = phi_prev + self.tau * params.P * self.source
        return np.concatenate([phi, chemical_potential(self.mesh, phi, self.cfg)])

    def energy(self, phi):
        """Merit whose mass-constrained critical points solve the step.

        Interface energy plus the squared flux distance of the update in the
        norm induced by the lagged mobility.
        """
        cfg = self.cfg
        w = self.M @ phi + self.r1_const
        return (0.5 * cfg.beta * cfg.eps * (phi @ (self.K @ phi))
                + (cfg.beta / cfg.eps) * (self.lumped @ eval_psi(phi, cfg))
                + (w @ self._kinv(w)) / (2.0 * self.tau))

    def energy_gradient(self, phi):
        cfg = self.cfg
        d1, _ = eval_psi_derivs(phi, cfg)
        w = self.M @ phi + self.r1_const
        return (cfg.beta * cfg.eps * (self.K @ phi) + (cfg.beta / cfg.eps) * self.lumped * d1
                + self.M @ self._kinv(w) / self.tau)


def _energy_backtrack(system, x, dx, norm, solver, it):
    n = system.n
    phi = x[:n]
    grad = system.energy_gradient(phi)
    slope = grad @ dx[:n]
    alpha = 0.5
    if slope >= 0.0:
        dx = splu(system.jacobian(phi, convexify=True)).solve(-system.residual(x))
        slope = grad @ dx[:n]
        alpha = 1.0
    e0 = system.energy(phi)
    for _ in range(solver.max_halvings):
        trial = x + alpha * dx
        r_trial = system.residual(trial)
        n_trial = _dual_norm(r_trial, system.lumped)
        if n_trial < norm or (
                slope < 0 and system.energy(trial[:n]) <= e0 + 1e-4 * alpha * slope):
            return trial, r_trial, n_trial
        alpha *= 0.5
    raise NewtonError(f"line search failed at Newton iteration {it}, residual {norm:.3e}", norm)


def solve_ch_step_newton(phi_prev, sigma_now, params, tau, mesh, cfg, solver,
                         residuals=None):
    """Newton solve of the Cahn-Hilliard block; returns ``(phi, mu)``.

    The residual is measured in the lumped-mass dual norm.  A trial step is
    accepted once it lowers either that residual or (Armijo) the step energy;
    directions that do not descend the energy are replaced by the Newton
    direction of the convexified potential.  If ``residuals`` is a list,
    the residual history is appended to it.
    """
    pp = _values_on(phi_prev, mesh)
    sn = _values_on(sigma_now, mesh)
    system = _CHSystem(mesh, pp, sn, params, tau, cfg)
    n = mesh.n_nodes
    x = system.initial_guess(pp, params)
    r = system.residual(x)
    norm = _dual_norm(r, system.lumped)
    if residuals is not None:
        residuals.append(norm)
    for it in range(solver.newton_max_iter):
        if norm <= solver.newton_tol:
            break
        phi = x[:n]
        dx = splu(system.jacobian(phi)).solve(-r)
        trial = x + dx
        r_trial = system.residual(trial)
        n_trial = _dual_norm(r_trial, system.lumped)
        if not n_trial < norm:
            trial, r_trial, n_trial = _energy_backtrack(system, x, dx, norm, solver, it)
        x, r, norm = trial, r_trial, n_trial
        if residuals is not None:
            residuals.append(norm)
    if norm <= solver.newton_tol:
        return x[:n].copy(), x[n:].copy()
    raise NewtonError(f"Newton did not converge in {solver.newton_max_iter} iterations, "
                      f"residual {norm:.3e}", norm)


def _adapt(state, policy):
    mesh = state.mesh
    eta = gradient_jump_indicator(mesh, [state.phi, state.mu, state.sigma])
    if eta.sum() == 0.0:
        return mesh
    refine, coarse = doerfler_mark(eta, policy, mesh.areas)
    new = refine_bisect(mesh, refine) if refine.size else mesh
    if coarse.size:
        # coarsening candidates are the cells that survived refinement untouched
        untouched = np.zeros(mesh.n_cells, dtype=bool)
        untouched[coarse] = True
        counts = np.bincount(new.parent_map, minlength=mesh.n_cells)
        cand = np.flatnonzero(untouched[new.parent_map] & (counts[new.parent_map] == 1))
        if cand.size:
            new, _ = coarsen(new, cand, policy.v_max)
    return new


def advance(state, params, solver, cfg):
    """One time step: optional adaptation, nutrient solve, then CH solve."""
    mesh = state.mesh
    phi_prev, sigma_prev = state.phi, state.sigma
    if solver.adapt:
        new = _adapt(state, solver.policy)
        if new is not mesh:
            phi_prev = transfer_nodal(state.field("phi"), new).values
            sigma_prev = transfer_nodal(state.field("sigma"), new).values
            mesh = new
    tau = solver.tau
    sigma = solve_nutrient_step(sigma_prev, phi_prev, params, tau, mesh, solver.linear_tol)
    try:
        phi, mu = solve_ch_step_newton(phi_prev, sigma, params, tau, mesh, cfg, solver)
    except SolverError as err:
        err.step = state.k + 1
        raise
    return State(mesh, phi, mu, sigma, state.k + 1, (state.k + 1) * tau)


def initial_fields(mesh, cfg, orientation="inside-positive", subdivisions=2):
    """L2 projections of the analytic initial phase field and nutrient."""
    phi0 = project_function(mesh, lambda x: initial_phi(x, cfg, orientation), subdivisions)
    sigma0 = project_function(mesh, initial_sigma, subdivisions)
    return phi0, sigma0


def simulate(phi0, sigma0, params, solver, cfg):
    """Run ``solver.K`` steps from the initial fields and return the trajectory."""
    mesh = phi0.mesh
    sig = _values_on(sigma0, mesh)
    state = State(mesh, phi0.values, chemical_potential(mesh, phi0.values, cfg), sig, 0, 0.0)
    states = [state]
    for _ in range(int(solver.K)):
        state = advance(state, params, solver, cfg)
        states.append(state)
        log.debug("step %d t=%.3f nodes=%d", state.k, state.t, state.mesh.n_nodes)
    return Trajectory(states, solver.tau, params, cfg)
