"""Trust-region Gauss-Newton identification of ``(P, chi, C)`` over a box."""
from dataclasses import dataclass, field
import itertools
import logging

import numpy as np

from .forward import Params, SolverError, simulate
from .linearized import Linearization, all_sensitivities
from .objective import evaluate_objective, gauss_newton_system, projected_stationarity

__all__ = ["TRConfig", "IterRecord", "IdentResult", "solve_box_tr_subproblem", "identify"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TRConfig:
    delta0: float = 2.0
    delta_max: float = 10.0
    eta_accept: float = 0.1
    shrink: float = 0.5
    expand: float = 2.0
    low: float = 0.25
    high: float = 0.75
    grad_tol: float = 1e-2
    rel_step_tol: float = 1e-4
    max_outer_iters: int = 100

    def __post_init__(self):
        if not 0 < self.eta_accept < self.low < self.high:
            raise ValueError("need 0 < eta_accept < low < high")
        if not 0 < self.delta0 <= self.delta_max:
            raise ValueError("need 0 < delta0 <= delta_max")
        if not (0 < self.shrink < 1 < self.expand):
            raise ValueError("need shrink in (0,1) and expand > 1")


@dataclass
class IterRecord:
    it: int
    u: np.ndarray
    J: float
    stationarity: float
    delta: float
    step: np.ndarray
    accepted: bool
    active_bounds: str


@dataclass
class IdentResult:
    records: list = field(default_factory=list)
    params: Params = None
    J: float = np.nan
    stationarity: float = np.nan
    reason: str = ""
    final_delta: float = np.nan
    final_active: str = ""

    @property
    def n_iter(self):
        return len(self.records)

    @property
    def iterates(self):
        return np.array([r.u for r in self.records] + [self.params.as_array()])


def solve_box_tr_subproblem(H, g, center, box, delta, tol=1e-12):
    """Exact minimiser of ``g.d + d.H.d/2`` over the box intersected with ``|d|_inf <= delta``.

    Enumerates the 27 free / lower / upper activity patterns of the three
    variables and keeps the feasible stationary candidate with least model
    value, ties going to the shortest step.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    c = center.as_array() if isinstance(center, Params) else np.asarray(center, dtype=float)
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not box.contains(c):
        raise ValueError("center lies outside the admissible box")
    scale = max(1.0, np.abs(H).max())
    if np.linalg.eigvalsh(0.5 * (H + H.T)).min() < -1e-10 * scale:
        raise np.linalg.LinAlgError("model Hessian is not positive semidefinite")
    lo = np.maximum(-delta, -c)
    hi = np.minimum(delta, box.upper - c)

    best, best_val, best_norm = np.zeros(3), 0.0, 0.0
    for pattern in itertools.product((0, 1, 2), repeat=3):
        d = np.zeros(3)
        free = [i for i, s in enumerate(pattern) if s == 0]
        for i, s in enumerate(pattern):
            if s == 1:
                d[i] = lo[i]
            elif s == 2:
                d[i] = hi[i]
        if free:
            fixed = [i for i in range(3) if i not in free]
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ d[fixed])
            Hff = H[np.ix_(free, free)]
            sol, *_ = np.linalg.lstsq(Hff, rhs, rcond=None)
            if np.linalg.norm(Hff @ sol - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
                continue
            d[free] = sol
        if np.any(d < lo - tol) or np.any(d > hi + tol):
            continue
        d = np.clip(d, lo, hi)
        val = g @ d + 0.5 * d @ H @ d
        nrm = np.linalg.norm(d)
        tie = abs(val - best_val) <= 1e-14 * max(1.0, abs(best_val))
        if val < best_val and not tie or tie and nrm < best_norm:
            best, best_val, best_norm = d, val, nrm
    return best


def _active(u, box, tol=1e-12):
    names = ("P", "chi", "C")
    out = [f"{n}_min" for n, v in zip(names, u) if v <= tol]
    out += [f"{n}_max" for n, v, ub in zip(names, u, box.upper) if v >= ub - tol]
    return ";".join(out)


class _Point:
    """Forward run, sensitivities and Gauss-Newton model at one iterate."""

    def __init__(self, u, data, w, solver, cfg):
        self.u = np.asarray(u, dtype=float)
        self.params = Params.from_array(self.u)
        self.traj = simulate(data.phi0, data.sigma0, self.params, solver, cfg)
        self.J = evaluate_objective(self.traj, data, w, self.params)
        self._data, self._w = data, w
        self.H = self.g = None

    def linearize(self):
        lin = Linearization(self.traj)
        sens = all_sensitivities(self.traj, lin)
        self.H, self.g = gauss_newton_system(sens, self.traj, self._data, self._w, self.params)
        return self


def identify(data, start, box, w, solver, trc, cfg):
    """Trust-region Gauss-Newton loop on the discrete tracking problem.

    ``data`` must carry the noise-free initial fields ``phi0`` and
    ``sigma0``.  A forward failure at a trial point counts as a rejected
    step; a failure at ``start`` propagates.
    """
    u0 = start.as_array() if isinstance(start, Params) else np.asarray(start, dtype=float)
    if not box.contains(u0):
        raise ValueError("start lies outside the admissible box")
    cur = _Point(u0, data, w, solver, cfg).linearize()
    delta = trc.delta0
    result = IdentResult()
    stat = projected_stationarity(cur.u, cur.g, box)
    reason = "max_outer_iters"
    for it in range(trc.max_outer_iters):
        if stat <= trc.grad_tol:
            reason = "stationarity"
            break
        d = solve_box_tr_subproblem(cur.H, cur.g, cur.u, box, delta)
        pred = -(cur.g @ d + 0.5 * d @ cur.H @ d)
        u_try = np.clip(cur.u + d, 0.0, box.upper)
        trial = None
        if pred > 0:
            try:
                trial = _Point(u_try, data, w, solver, cfg)
                rho = (cur.J - trial.J) / pred
            except SolverError as err:
                log.info("trial point %s failed: %s", u_try, err)
                rho = -np.inf
        else:
            rho = -np.inf
        accepted = bool(rho >= trc.eta_accept)
        result.records.append(IterRecord(it, cur.u.copy(), cur.J, stat, delta, d.copy(),
                                         accepted, _active(cur.u, box)))
        log.info("it %d u=%s J=%.6e stat=%.3e delta=%.3g rho=%.3g %s", it, cur.u, cur.J,
                 stat, delta, rho, "accept" if accepted else "reject")
        step_inf = np.max(np.abs(d))
        if rho < trc.low:
            delta = trc.shrink * delta
        elif rho > trc.high and step_inf >= (1 - 1e-8) * delta:
            delta = min(trc.expand * delta, trc.delta_max)
        if pred <= 0:
            reason = "no_predicted_decrease"
            break
        if accepted:
            rel = np.linalg.norm(u_try - cur.u) / max(np.linalg.norm(cur.u), 1e-300)
            cur = trial.linearize()
            stat = projected_stationarity(cur.u, cur.g, box)
            if rel <= trc.rel_step_tol:
                reason = "small_step"
                break
    else:
        if stat <= trc.grad_tol:
            reason = "stationarity"
    result.params = cur.params
    result.J = cur.J
    result.stationarity = stat
    result.reason = reason
    result.final_delta = delta
    result.final_active = _active(cur.u, box)
    return result
