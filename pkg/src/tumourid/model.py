"""Scalar ingredients of the tumour model.

Interface indicator ``f``, nutrient cut-off ``g``, tumour indicator ``h``,
mobility ``m``, the relaxed double-obstacle potential and the initial data.
Every function is vectorised over numpy arrays and also accepts scalars.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelConfig",
    "eval_f", "eval_df",
    "eval_g", "eval_dg",
    "eval_h", "eval_dh",
    "eval_m", "eval_dm",
    "max_rho", "eval_lambda_rho", "eval_dlambda_rho", "eval_Lambda_rho",
    "eval_psi", "eval_psi_derivs",
    "profile_Phi0", "initial_phi", "initial_sigma",
]


@dataclass(frozen=True)
class ModelConfig:
    """Fixed model constants (interface, potential, cut-off and mobility)."""

    eps: float = 0.05
    beta: float = 0.05
    s: float = 1.0e4
    rho: float = 1.0e-3
    M_cap: float = 10.0
    theta_g: float = 0.01
    m0: float = 1.0e-4
    m1: float = 1.0

    def __post_init__(self):
        for name in ("eps", "beta", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.s > 1:
            raise ValueError("s must be greater than 1")
        if not 0 < self.theta_g < self.M_cap / 2:
            raise ValueError("theta_g must lie in (0, M_cap/2)")
        if not 0 < self.m0 <= self.m1:
            raise ValueError("mobility bounds must satisfy 0 < m0 <= m1")


def _clip1(x):
    return np.clip(x, -1.0, 1.0)


def eval_f(x):
    """Interface indicator, 1 at x=0 and 0 for |x| >= 1."""
    return 0.5 * (np.cos(np.pi * _clip1(x)) + 1.0)


def eval_df(x):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    return np.where(inside, -0.5 * np.pi * np.sin(np.pi * _clip1(x)), 0.0)


def eval_h(x):
    """Tumour indicator, 0 for x <= -1 and 1 for x >= 1."""
    return 0.5 * (np.sin(0.5 * np.pi * _clip1(x)) + 1.0)


def eval_dh(x):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0
    return np.where(inside, 0.25 * np.pi * np.cos(0.5 * np.pi * _clip1(x)), 0.0)


def eval_g(x, cfg):
    """C^1 cut-off of the nutrient to ``[0, M_cap]`` with cubic blends of width theta."""
    x = np.asarray(x, dtype=float)
    th, M = cfg.theta_g, cfg.M_cap
    lower = x * x * (-x / th**2 + 2.0 / th)
    y = x - M
    upper = -(y**3) / th**2 - 2.0 * y * y / th + M
    return np.select(
        [x <= 0.0, x < th, x <= M - th, x < M],
        [0.0, lower, x, upper],
        default=M,
    )


def eval_dg(x, cfg):
    x = np.asarray(x, dtype=float)
    th, M = cfg.theta_g, cfg.M_cap
    lower = -3.0 * x * x / th**2 + 4.0 * x / th
    y = x - M
    upper = -3.0 * y * y / th**2 - 4.0 * y / th
    return np.select(
        [x <= 0.0, x < th, x <= M - th, x < M],
        [0.0, lower, 1.0, upper],
        default=0.0,
    )


def eval_m(x, cfg):
    """Mobility ``(m1 - m0) f(x) + m0``."""
    return (cfg.m1 - cfg.m0) * eval_f(x) + cfg.m0


def eval_dm(x, cfg):
    return (cfg.m1 - cfg.m0) * eval_df(x)


def max_rho(y, rho):
    """Regularised ``max(0, y)``: zero, then a quadratic blend on (0, rho), then ``y - rho/2``."""
    y = np.asarray(y, dtype=float)
    return np.where(y <= 0.0, 0.0, np.where(y < rho, y * y / (2.0 * rho), y - 0.5 * rho))


def _dmax_rho(y, rho):
    y = np.asarray(y, dtype=float)
    return np.where(y <= 0.0, 0.0, np.where(y < rho, y / rho, 1.0))


def _int_max_rho(y, rho):
    # antiderivative of max_rho with value 0 at y = 0
    y = np.asarray(y, dtype=float)
    return np.where(
        y <= 0.0, 0.0,
        np.where(y < rho, y**3 / (6.0 * rho),
                 rho * rho / 6.0 + 0.5 * ((y - 0.5 * rho) ** 2 - 0.25 * rho * rho)),
    )


def _check_rho(rho):
    if not rho > 0:
        raise ValueError("rho must be positive")


def eval_lambda_rho(x, rho):
    """``max_rho(0, x-1) + min_rho(0, x+1)``; odd, zero on [-1, 1]."""
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    return max_rho(x - 1.0, rho) - max_rho(-x - 1.0, rho)


def eval_dlambda_rho(x, rho):
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    return _dmax_rho(x - 1.0, rho) + _dmax_rho(-x - 1.0, rho)


def eval_Lambda_rho(x, rho):
    """Antiderivative of ``eval_lambda_rho`` normalised by ``Lambda(0) = 0``."""
    _check_rho(rho)
    x = np.asarray(x, dtype=float)
    return _int_max_rho(x - 1.0, rho) + _int_max_rho(-x - 1.0, rho)


def eval_psi(x, cfg):
    """Relaxed double-obstacle potential (used for energy diagnostics only)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 - x * x) + 0.5 * cfg.s * eval_Lambda_rho(x, cfg.rho)


def eval_psi_derivs(x, cfg):
    """Return ``(Psi'(x), Psi''(x))``."""
    x = np.asarray(x, dtype=float)
    d1 = -x + 0.5 * cfg.s * eval_lambda_rho(x, cfg.rho)
    d2 = -1.0 + 0.5 * cfg.s * eval_dlambda_rho(x, cfg.rho)
    return d1, d2


def profile_Phi0(z, s):
    """First-order optimal interface profile for the obstacle penalty ``s``.

    Odd in ``z``; a sine arc up to ``z0 = arctan(sqrt(s-1))`` followed by an
    exponential approach to ``s/(s-1)``.
    """
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    r = np.sqrt(s - 1.0)
    z0 = np.arctan(r)
    inner = np.sqrt(s / (s - 1.0)) * np.sin(np.minimum(a, z0))
    outer = (s - np.exp(r * (z0 - np.maximum(a, z0)))) / (s - 1.0)
    return np.sign(z) * np.where(a <= z0, inner, outer)


def _l8_norm(x):
    x = np.asarray(x, dtype=float)
    # scale before the 8th power to stay clear of overflow
    amax = np.max(np.abs(x), axis=-1)
    safe = np.where(amax > 0, amax, 1.0)
    return amax * np.sum((x / safe[..., None]) ** 8, axis=-1) ** 0.125


def initial_phi(x, cfg, orientation="inside-positive"):
    """Rounded-square initial phase field centred at the origin.

    ``x`` has shape ``(..., 2)``.  ``orientation="verbatim"`` evaluates
    ``Phi0((|x|_8 - 1)/eps)``, which is -1 inside the unit l8 ball;
    ``"inside-positive"`` flips the argument so the tumour (+1) sits inside.
    """
    z = (_l8_norm(x) - 1.0) / cfg.eps
    if orientation == "inside-positive":
        z = -z
    elif orientation != "verbatim":
        raise ValueError(f"unknown orientation {orientation!r}")
    return profile_Phi0(z, cfg.s)


def initial_sigma(x):
    """Uniform initial nutrient, equal to 1 everywhere."""
    x = np.asarray(x, dtype=float)
    return np.ones(x.shape[:-1])
