"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O or
file-format error.
"""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, load_config, serialize_config
from .data import NoiseSpec, generate_data
from .forward import Params, SolverError, initial_fields, simulate
from .linearized import (Linearization, adjoint_simulate, all_sensitivities,
                         gradient_adjoint, gradient_sensitivity)
from .objective import evaluate_objective
from .optimizer import identify
from .storage import (FormatError, read_desired_states, write_desired_states,
                      write_history_csv, write_trajectory, write_vtk)

log = logging.getLogger("tumourid")

DATA_FILE = "data.txt"


def _triple(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected P,CHI,C, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return vals


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None


def _params(vals):
    try:
        return Params(*vals)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _outdir(args, cfg):
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _fixed_mesh_solver(cfg):
    # derivatives are only defined on a fixed mesh sequence
    if cfg.adapt:
        log.warning("adapt = true ignored: identification runs on the fixed macro mesh")
    return cfg.solver(adapt=False)


def cmd_forward(args, cfg):
    out = _outdir(args, cfg)
    mesh = cfg.mesh()
    model = cfg.model()
    phi0, sigma0 = initial_fields(mesh, model, cfg.orientation)
    traj = simulate(phi0, sigma0, cfg.params(), cfg.solver(), model)
    write_trajectory(traj, os.path.join(out, "trajectory.txt"))
    every = cfg.snapshot_every or traj.K
    for st in traj.states:
        if st.k % every == 0 or st.k == traj.K:
            write_vtk(st, os.path.join(out, f"state_{st.k:04d}.vtk"))
    print(f"wrote {traj.K} steps to {out}")


def cmd_generate(args, cfg):
    out = _outdir(args, cfg)
    params = _params(args.params) if args.params else cfg.params()
    noise = NoiseSpec(cfg.noise if args.noise is None else args.noise,
                      cfg.seed if args.seed is None else args.seed)
    data, _ = generate_data(params, cfg.solver(), cfg.model(), cfg.mesh(), noise, cfg.orientation)
    write_desired_states(data, os.path.join(out, DATA_FILE))
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(serialize_config(cfg))
    print(f"wrote {data.K} observations (noise {noise.delta}) to {out}")


def _load_data(path):
    return read_desired_states(os.path.join(path, DATA_FILE) if os.path.isdir(path) else path)


def _run_identify(cfg, data, start):
    return identify(data, start, cfg.box(), cfg.weights(), _fixed_mesh_solver(cfg),
                    cfg.trc(), cfg.model())


def cmd_identify(args, cfg):
    data = _load_data(args.data)
    start = _params(args.start or [0.0, 0.0, 0.0])
    res = _run_identify(cfg, data, start)
    out = _outdir(args, cfg)
    write_history_csv(res, os.path.join(out, "history.csv"))
    p = res.params
    with open(os.path.join(out, "params.txt"), "w") as fh:
        fh.write(f"P = {p.P!r}\nchi = {p.chi!r}\nC = {p.C!r}\nJ = {res.J!r}\n"
                 f"iterations = {res.n_iter}\nreason = {res.reason}\n")
    print(f"P={p.P:.6g} chi={p.chi:.6g} C={p.C:.6g} J={res.J:.6e} "
          f"iterations={res.n_iter} ({res.reason})")


def cmd_gradcheck(args, cfg):
    data = _load_data(args.data)
    params = _params(args.params)
    solver, model, w = _fixed_mesh_solver(cfg), cfg.model(), cfg.weights()

    def J(u):
        p = Params.from_array(u)
        return evaluate_objective(simulate(data.phi0, data.sigma0, p, solver, model), data, w, p)

    traj = simulate(data.phi0, data.sigma0, params, solver, model)
    lin = Linearization(traj)
    g_sens = gradient_sensitivity(traj, all_sensitivities(traj, lin), data, w, params)
    g_adj = gradient_adjoint(traj, adjoint_simulate(traj, data, w, lin), params, w, lin)
    u = params.as_array()
    print(f"{'':>12} {'dJ/dP':>14} {'dJ/dchi':>14} {'dJ/dC':>14} {'rel.err':>10}")
    scale = np.linalg.norm(g_sens)
    print(f"{'sensitivity':>12} " + " ".join(f"{v:14.6e}" for v in g_sens) + f" {0.0:10.2e}")
    rel = np.linalg.norm(g_adj - g_sens) / scale
    print(f"{'adjoint':>12} " + " ".join(f"{v:14.6e}" for v in g_adj) + f" {rel:10.2e}")
    for h in args.fd_steps:
        # one-sided near the lower bound keeps the parameters admissible
        fd = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = (J(u + e) - J(u - e)) / (2 * h) if u[i] >= h else (J(u + e) - J(u)) / h
        rel = np.linalg.norm(fd - g_sens) / scale
        print(f"{'fd ' + format(h, '.0e'):>12} " + " ".join(f"{v:14.6e}" for v in fd)
              + f" {rel:10.2e}")


def cmd_noisesweep(args, cfg):
    out = _outdir(args, cfg)
    params = _params(args.params) if args.params else cfg.params()
    start = _params(args.start or [0.0, 0.0, 0.0])
    solver = _fixed_mesh_solver(cfg)
    mesh = cfg.mesh()
    rows = []
    for delta in args.deltas:
        noise = NoiseSpec(delta, cfg.seed)
        data, _ = generate_data(params, solver, cfg.model(), mesh, noise, cfg.orientation)
        res = _run_identify(cfg, data, start)
        write_history_csv(res, os.path.join(out, f"history_delta_{delta!r}.csv"))
        p = res.params
        rows.append([repr(delta), repr(p.P), repr(p.chi), repr(p.C), res.n_iter, repr(res.J)])
        print(f"delta={delta:g}: P={p.P:.5g} chi={p.chi:.5g} C={p.C:.5g} "
              f"it={res.n_iter} J={res.J:.4e}")
    with open(os.path.join(out, "noisesweep.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["delta", "P", "chi", "C", "iterations", "J"])
        wr.writerows(rows)


def build_parser():
    ap = argparse.ArgumentParser(prog="tumourid", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value configuration file")
        p.set_defaults(func=func)
        return p

    p = add("forward", cmd_forward, "single forward run with checkpoint and VTK snapshots")
    p.add_argument("--out")
    p = add("generate", cmd_generate, "synthetic observations with optional noise")
    p.add_argument("--params", type=_triple)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p = add("identify", cmd_identify, "trust-region Gauss-Newton parameter identification")
    p.add_argument("--data", required=True)
    p.add_argument("--start", type=_triple)
    p.add_argument("--out")
    p = add("gradcheck", cmd_gradcheck, "compare sensitivity, adjoint and FD gradients")
    p.add_argument("--data", required=True)
    p.add_argument("--params", type=_triple, required=True)
    p.add_argument("--fd-steps", type=_floats, default=[1e-2, 1e-3, 1e-4])
    p = add("noisesweep", cmd_noisesweep, "identification over several noise levels")
    p.add_argument("--deltas", type=_floats, required=True)
    p.add_argument("--params", type=_triple)
    p.add_argument("--start", type=_triple)
    p.add_argument("--out")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return 3
    except (OSError, FormatError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
