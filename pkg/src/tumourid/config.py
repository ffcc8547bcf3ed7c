"""Flat ``key = value`` run configuration.

Every key has a default; the defaults are the reference experiment on
``(-5, 5)^2`` with ``T = 8``.  Lines starting with ``#`` and trailing
``# ...`` comments are ignored.
"""
from dataclasses import dataclass, fields, asdict

from .forward import AdmissibleBox, Params, SolverConfig
from .mesh import RefinePolicy, build_uniform
from .model import ModelConfig
from .objective import ObjectiveWeights
from .optimizer import TRConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "serialize_config", "load_config"]


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values and violated invariants."""


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class RunConfig:
    # geometry and time
    x_min: float = -5.0
    x_max: float = 5.0
    y_min: float = -5.0
    y_max: float = 5.0
    n: int = 50
    tau: float = 0.05
    K: int = 160
    # model constants
    eps: float = 0.05
    beta: float = 0.05
    s: float = 1.0e4
    rho: float = 1.0e-3
    M_cap: float = 10.0
    theta_g: float = 0.01
    m0: float = 1.0e-4
    m1: float = 1.0
    orientation: str = "inside-positive"
    # solver
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-10
    max_halvings: int = 30
    adapt: bool = True
    theta_mark: float = 0.5
    v_min: float = RefinePolicy.v_min
    v_max: float = RefinePolicy.v_max
    coarsen_fraction: float = 0.05
    # parameters for forward / generate, and the admissible box
    P: float = 7.0
    chi: float = 6.0
    C: float = 2.0
    P_inf: float = 10.0
    chi_inf: float = 10.0
    C_inf: float = 10.0
    # objective
    beta_Q: float = 1.0
    beta_Omega: float = 0.0
    beta_P: float = 1e-8
    beta_chi: float = 1e-8
    beta_C: float = 1e-8
    P_d: float = 7.0
    chi_d: float = 6.0
    C_d: float = 2.0
    # trust region
    delta0: float = 2.0
    delta_max: float = 10.0
    eta_accept: float = 0.1
    grad_tol: float = 1e-2
    rel_step_tol: float = 1e-4
    max_outer_iters: int = 100
    # data and output
    noise: float = 0.0
    seed: int = 0
    snapshot_every: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        checks = [
            (self.x_max > self.x_min, "x_max must exceed x_min"),
            (self.y_max > self.y_min, "y_max must exceed y_min"),
            (self.n >= 1, "n must be at least 1"),
            (self.noise >= 0, "noise must be nonnegative"),
            (0 <= self.seed < 2 ** 64, "seed must be a 64-bit unsigned integer"),
            (self.snapshot_every >= 0, "snapshot_every must be nonnegative"),
            (self.orientation in ("inside-positive", "verbatim"),
             "orientation must be inside-positive or verbatim"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for build in (self.model, self.solver, self.params, self.box, self.weights, self.trc):
            try:
                build()
            except ConfigError:
                raise
            except (ValueError, TypeError) as err:
                raise ConfigError(str(err)) from None

    # component builders
    def model(self):
        return ModelConfig(self.eps, self.beta, self.s, self.rho, self.M_cap,
                           self.theta_g, self.m0, self.m1)

    def policy(self):
        return RefinePolicy(self.theta_mark, self.v_min, self.v_max, self.coarsen_fraction)

    def solver(self, adapt=None):
        return SolverConfig(self.tau, self.K, self.newton_tol, self.newton_max_iter,
                            self.linear_tol, self.max_halvings,
                            self.adapt if adapt is None else adapt, self.policy())

    def params(self):
        return Params(self.P, self.chi, self.C)

    def box(self):
        return AdmissibleBox(self.P_inf, self.chi_inf, self.C_inf)

    def weights(self):
        return ObjectiveWeights(self.beta_Q, self.beta_Omega, self.beta_P, self.beta_chi,
                                self.beta_C, self.P_d, self.chi_d, self.C_d)

    def trc(self):
        return TRConfig(self.delta0, self.delta_max, self.eta_accept, grad_tol=self.grad_tol,
                        rel_step_tol=self.rel_step_tol, max_outer_iters=self.max_outer_iters)

    def mesh(self):
        return build_uniform((self.x_min, self.x_max, self.y_min, self.y_max), self.n)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, text):
    kind = _TYPES[key]
    if kind in (float, "float"):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if kind in (int, "int"):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if kind in (bool, "bool"):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected true or false, got {text!r}")
    return text


def parse_config(text):
    """Parse a config document; missing keys keep their defaults."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r} on line {lineno}")
        if key in values:
            raise ConfigError(f"{key}: given twice")
        values[key] = _convert(key, val)
    return RunConfig(**values)


def serialize_config(cfg):
    out = []
    for key, val in asdict(cfg).items():
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = repr(val)
        out.append(f"{key} = {val}")
    return "\n".join(out) + "\n"


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())
