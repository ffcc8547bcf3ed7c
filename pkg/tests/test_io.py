import csv

import numpy as np
import pytest

from tumourid.config import ConfigError, RunConfig, parse_config, serialize_config
from tumourid.data import NoiseSpec, add_noise, generate_data
from tumourid.forward import AdmissibleBox, Params, SolverConfig, initial_fields, simulate
from tumourid.mesh import NodalField, RefinePolicy, build_uniform
from tumourid.objective import ObjectiveWeights
from tumourid.optimizer import TRConfig, identify
from tumourid.storage import (FormatError, read_desired_states, read_trajectory,
                              write_desired_states, write_history_csv, write_trajectory,
                              write_vtk)


# configuration

def test_empty_config_is_reference_setup():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert (cfg.x_min, cfg.x_max, cfg.y_min, cfg.y_max) == (-5, 5, -5, 5)
    assert cfg.tau * cfg.K == pytest.approx(8.0)
    assert (cfg.tau, cfg.K, cfg.n) == (0.05, 160, 50)
    m = cfg.model()
    assert (m.eps, m.beta, m.s, m.rho) == (0.05, 0.05, 1e4, 1e-3)
    assert (m.M_cap, m.theta_g, m.m0, m.m1) == (10, 0.01, 1e-4, 1)
    assert cfg.v_min == pytest.approx(0.5 * (np.pi * 0.05 / 16) ** 2)
    assert cfg.box() == AdmissibleBox(10, 10, 10)
    assert cfg.trc() == TRConfig()
    assert cfg.weights() == ObjectiveWeights()


def test_config_parsing():
    text = """
    # desk run
    n = 32          # cells per side
    tau = 0.1
    adapt = false
    output_dir = results
    """
    cfg = parse_config(text)
    assert (cfg.n, cfg.tau, cfg.adapt, cfg.output_dir) == (32, 0.1, False, "results")
    assert cfg.solver() == SolverConfig(tau=0.1, K=160, adapt=False, policy=cfg.policy())


@pytest.mark.parametrize("text,msg", [
    ("tau = -1", "tau must be positive"),
    ("bogus = 1", "bogus"),
    ("n = 2.5", "n"),
    ("adapt = maybe", "adapt"),
    ("eps = x", "eps"),
    ("tau 1", "line 1"),
    ("tau = 1\ntau = 2", "tau"),
    ("P = -3", "P must be"),
    ("noise = -0.1", "noise"),
    ("beta_Q = 0", r"beta_Q \+ beta_Omega"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_config_round_trip():
    cfg = parse_config("n = 12\ns = 1000.0\nbeta_Omega = 0.3\nseed = 99\nadapt = no")
    assert parse_config(serialize_config(cfg)) == cfg
    assert parse_config(serialize_config(RunConfig())) == RunConfig()


# noise

def test_noise_zero_is_identity():
    m = build_uniform((0, 1, 0, 1), 3)
    f = NodalField(m, np.linspace(0, 1, m.n_nodes))
    assert np.array_equal(add_noise(f, NoiseSpec(0.0, 1)).values, f.values)


def test_noise_bounded_and_seeded():
    m = build_uniform((0, 1, 0, 1), 10)
    f = NodalField(m, np.zeros(m.n_nodes))
    a = add_noise(f, NoiseSpec(0.1, 7))
    b = add_noise(f, NoiseSpec(0.1, 7))
    c = add_noise(f, NoiseSpec(0.1, 8))
    assert np.array_equal(a.values, b.values) and not np.array_equal(a.values, c.values)
    assert np.abs(a.values).max() <= 0.1


def test_noise_statistics():
    m = build_uniform((0, 1, 0, 1), 707)  # 708^2 ~ 5e5 nodes
    f = NodalField(m, np.zeros(m.n_nodes))
    rng = np.random.default_rng(3)
    delta = 0.2
    xi = np.concatenate([add_noise(f, NoiseSpec(delta), rng).values for _ in range(2)])
    n = xi.size
    assert n >= 10**6
    var = delta ** 2 / 3
    assert abs(xi.mean()) <= 3 * np.sqrt(var / n)
    assert xi.var() == pytest.approx(var, rel=0.05)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


def test_generate_data(desk_model):
    mesh = build_uniform((-5, 5, -5, 5), 8)
    data, traj = generate_data(Params(7, 6, 2), SolverConfig(tau=0.1, K=3), desk_model, mesh,
                               NoiseSpec(0.05, 11))
    assert data.K == 3 and data.phi_Omega is data.phi_Q[-1]
    phi0, _ = initial_fields(mesh, desk_model)
    assert np.array_equal(data.phi0.values, phi0.values)
    for k, f in enumerate(data.phi_Q, 1):
        diff = f.values - traj.states[k].phi
        assert 0 < np.abs(diff).max() <= 0.05
    assert data.meta["noise"] == 0.05 and data.meta["seed"] == 11


# checkpoints

@pytest.fixture(scope="module")
def three_steps(desk_model):
    mesh = build_uniform((-5, 5, -5, 5), 8)
    phi0, sigma0 = initial_fields(mesh, desk_model)
    return simulate(phi0, sigma0, Params(7, 6, 2), SolverConfig(tau=0.1, K=3), desk_model)


def assert_same_traj(a, b):
    assert a.K == b.K and a.tau == b.tau and a.params == b.params and a.model == b.model
    for s, t in zip(a.states, b.states):
        assert s.k == t.k and s.t == t.t
        assert np.array_equal(s.mesh.nodes, t.mesh.nodes)
        assert np.array_equal(s.mesh.cells, t.mesh.cells)
        for name in ("phi", "mu", "sigma"):
            assert np.array_equal(getattr(s, name), getattr(t, name))


def test_trajectory_round_trip(three_steps, tmp_path):
    path = tmp_path / "traj.txt"
    write_trajectory(three_steps, path)
    back = read_trajectory(path)
    assert_same_traj(three_steps, back)
    assert back.K == 3 and back.fixed_mesh is not None


def test_adaptive_trajectory_round_trip(desk_model, tmp_path):
    mesh = build_uniform((-5, 5, -5, 5), 8)
    phi0, sigma0 = initial_fields(mesh, desk_model)
    solver = SolverConfig(tau=0.1, K=2, adapt=True, policy=RefinePolicy(v_min=5e-3, v_max=0.8))
    traj = simulate(phi0, sigma0, Params(7, 6, 2), solver, desk_model)
    write_trajectory(traj, tmp_path / "t.txt")
    assert_same_traj(traj, read_trajectory(tmp_path / "t.txt"))


def _corrupt(src, dst, fn):
    lines = src.read_text().split("\n")
    dst.write_text("\n".join(fn(lines)))


def test_trajectory_format_errors(three_steps, tmp_path):
    good = tmp_path / "good.txt"
    write_trajectory(three_steps, good)
    lines = good.read_text().split("\n")
    field_line = next(i for i, l in enumerate(lines) if l.startswith("FIELD phi"))
    bad = tmp_path / "bad.txt"

    _corrupt(good, bad, lambda L: L[:field_line] + [L[field_line].replace(" 81", " 80")]
             + L[field_line + 1:])
    with pytest.raises(FormatError, match="line"):
        read_trajectory(bad)

    _corrupt(good, bad, lambda L: L[: len(L) // 2])
    with pytest.raises(FormatError, match="truncated|expected"):
        read_trajectory(bad)

    _corrupt(good, bad, lambda L: ["TUMOURID trajectory 9"] + L[1:])
    with pytest.raises(FormatError, match="version"):
        read_trajectory(bad)

    _corrupt(good, bad, lambda L: [l.replace("K 3", "K 4") for l in L])
    with pytest.raises(FormatError, match="K=4"):
        read_trajectory(bad)


def test_desired_states_round_trip(desk_model, tmp_path):
    mesh = build_uniform((-5, 5, -5, 5), 6)
    data, _ = generate_data(Params(7, 6, 2), SolverConfig(tau=0.1, K=2), desk_model, mesh,
                            NoiseSpec(0.1, 5))
    write_desired_states(data, tmp_path / "d.txt")
    back = read_desired_states(tmp_path / "d.txt")
    assert back.K == 2
    for a, b in zip(data.phi_Q + [data.phi_Omega, data.phi0, data.sigma0],
                    back.phi_Q + [back.phi_Omega, back.phi0, back.sigma0]):
        assert np.array_equal(a.values, b.values)
    assert float(back.meta["noise"]) == 0.1


# history and VTK

def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_history_without_iterations(small_problem, tmp_path):
    p = small_problem
    res = identify(p["data"], Params(7, 6, 2), AdmissibleBox(), ObjectiveWeights(),
                   p["solver"], TRConfig(), p["model"])
    write_history_csv(res, tmp_path / "h.csv")
    rows = read_csv(tmp_path / "h.csv")
    assert rows[0] == ["iter", "P", "chi", "C", "J", "stationarity", "delta", "step_norm",
                       "accepted", "active_bounds"]
    assert len(rows) == 2 and rows[1][:4] == ["0", "7.0", "6.0", "2.0"]


def test_history_rows(small_problem, tmp_path):
    p = small_problem
    res = identify(p["data"], Params(0, 0, 0), AdmissibleBox(), ObjectiveWeights(),
                   p["solver"], TRConfig(grad_tol=1e-6), p["model"])
    write_history_csv(res, tmp_path / "h.csv")
    rows = read_csv(tmp_path / "h.csv")[1:]
    assert len(rows) == res.n_iter + 1
    assert {r[8] for r in rows} <= {"0", "1"}
    assert [float(x) for x in rows[-1][1:4]] == list(res.params.as_array())
    assert rows[0][9] == "P_min;chi_min;C_min"


def test_vtk(three_steps, tmp_path):
    st = three_steps.states[-1]
    write_vtk(st, tmp_path / "a.vtk")
    write_vtk(st, tmp_path / "b.vtk")
    text = (tmp_path / "a.vtk").read_text()
    assert text == (tmp_path / "b.vtk").read_text()
    lines = text.splitlines()
    assert lines[0].startswith("# vtk DataFile") and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINTS {st.mesh.n_nodes} double" in lines
    assert f"CELLS {st.mesh.n_cells} {4 * st.mesh.n_cells}" in lines
    assert f"CELL_TYPES {st.mesh.n_cells}" in lines
    assert [l.split()[1] for l in lines if l.startswith("SCALARS")] == ["phi", "mu", "sigma"]
    i = lines.index("SCALARS sigma double 1")
    assert np.array_equal(np.array(lines[i + 2:i + 2 + st.mesh.n_nodes], float), st.sigma)
