"""Synthetic observations with seeded uniform noise."""
from dataclasses import dataclass

import numpy as np

from .forward import initial_fields, simulate
from .mesh import NodalField
from .objective import DesiredStates

__all__ = ["NoiseSpec", "add_noise", "generate_data"]


@dataclass(frozen=True)
class NoiseSpec:
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("noise delta must be nonnegative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def add_noise(field_, spec, rng=None):
    """``field + xi`` with ``xi`` i.i.d. uniform on ``[-delta, delta]``.

    Without ``rng`` a fresh generator is seeded from ``spec.seed``, so equal
    inputs give equal outputs.  Pass a generator to draw several fields from
    one stream.
    """
    if spec.delta == 0:
        return NodalField(field_.mesh, field_.values.copy())
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    xi = rng.uniform(-spec.delta, spec.delta, size=field_.values.shape)
    return NodalField(field_.mesh, field_.values + xi)


def generate_data(params, solver, cfg, mesh, noise=NoiseSpec(), orientation="inside-positive"):
    """Simulate at ``params`` and record noisy phase fields for ``k = 1..K``.

    The initial fields are kept noise-free; the final-time target is the
    (noisy) observation at ``k = K``.

    Returns
    -------
    data : DesiredStates
    traj : Trajectory
        The clean trajectory the observations were taken from.
    """
    phi0, sigma0 = initial_fields(mesh, cfg, orientation)
    traj = simulate(phi0, sigma0, params, solver, cfg)
    rng = np.random.default_rng(noise.seed)
    obs = [add_noise(s.field("phi"), noise, rng) for s in traj.states[1:]]
    meta = {"P": params.P, "chi": params.chi, "C": params.C,
            "noise": float(noise.delta), "seed": int(noise.seed), "tau": float(solver.tau)}
    return DesiredStates(obs, obs[-1], phi0, sigma0, meta), traj
