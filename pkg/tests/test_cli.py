import csv
import io
import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from qconsensus import (
    BoundInputs,
    LinkFailureModel,
    WeightSequence,
    circulant_graph,
    complete_graph,
    monte_carlo,
    run_qc,
)
from qconsensus.bounds import mse_bound, optimize_delta, zero_rate_lb
from qconsensus.cli import (
    DESIGN_COLUMNS,
    EXIT_CONFIG,
    EXIT_NUMERIC,
    TRAJECTORY_COLUMNS,
    build_experiment,
    load_schema,
    main,
)

ROOT = Path(__file__).resolve().parents[1]

K5 = {
    "graph": {"generator": "complete", "n": 5},
    "quantizer": {"delta": 0.5},
    "weights": {"a": 0.25},
    "x0": [1, 2, 3, 4, 5],
    "max_iter": 2000,
    "trials": 50,
    "seed": 7,
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run_cli(args, tmp_path, name="out.txt"):
    out = tmp_path / name
    code = main(list(args) + ["--out", str(out)])
    return code, (out.read_text() if out.exists() else None)


def sig9(x):
    return float(format(x, ".9g"))


def read_csv(text):
    return list(csv.reader(io.StringIO(text)))


def test_run_csv_matches_library(tmp_path):
    cfg = write_config(tmp_path, K5)
    code, text = run_cli(["run", "--config", cfg], tmp_path)
    assert code == 0
    rows = read_csv(text)
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS
    exp = build_experiment(dict(K5))
    traj = run_qc(exp.consensus_config(), seed=7).trajectory
    body = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(body[:, 0], traj.iterations)
    np.testing.assert_array_equal(body[:, 1], [sig9(v) for v in traj.averages])
    np.testing.assert_array_equal(body[:, 2], [sig9(v) for v in traj.residual_norms])
    np.testing.assert_array_equal(body[:, 3], [sig9(v) for v in traj.spreads])
    assert np.all(body[:, 4] == 0)


def test_run_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, dict(K5, model={"type": "erasure", "p_fail": 0.3}))
    _, a = run_cli(["run", "--config", cfg], tmp_path, "a.csv")
    _, b = run_cli(["run", "--config", cfg], tmp_path, "b.csv")
    _, c = run_cli(["run", "--config", cfg, "--seed", "8"], tmp_path, "c.csv")
    assert a == b
    assert a != c


def test_run_all_links_failing(tmp_path):
    cfg = write_config(tmp_path, dict(K5, model={"type": "erasure", "p_fail": 1.0}))
    with pytest.warns(RuntimeWarning):
        code, text = run_cli(["run", "--config", cfg], tmp_path)
    assert code == 0
    col = {row[1] for row in read_csv(text)[1:]}
    assert col == {"3"}


def test_run_forced_saturation(tmp_path):
    cfg = write_config(tmp_path, {"graph": {"generator": "path", "n": 2}, "quantizer": {"delta": 1, "levels": 1},
                                  "weights": {"a": 0.25}, "x0": [10, -10], "b": 10})
    code, text = run_cli(["run", "--config", cfg], tmp_path)
    assert code == 0
    rows = read_csv(text)
    assert rows[1:] == [["0", "0", "0", "0", "1"]]


def test_mc_matches_library_and_schema(tmp_path):
    cfg = write_config(tmp_path, dict(K5, epsilon=0.2))
    code, text = run_cli(["mc", "--config", cfg], tmp_path)
    assert code == 0
    report = json.loads(text)
    jsonschema.validate(report, load_schema("result.schema.json"))
    jsonschema.validate(report["config"], load_schema())
    exp = build_experiment(dict(K5, epsilon=0.2))
    stats = monte_carlo(exp.consensus_config(), 50, master_seed=7, epsilon=0.2)
    assert report["mean_theta"] == sig9(stats.mean_theta)
    assert report["empirical_mse"] == sig9(stats.empirical_mse)
    assert report["saturation_frequency"] == 0.0
    assert report["eps_consensus_frequency"] == sig9(stats.eps_consensus_frequency())
    inputs = BoundInputs.from_model(LinkFailureModel.fixed(complete_graph(5)), 0.5, WeightSequence(a=0.25))
    assert report["bounds"]["mse_bound[general]"]["value"] == sig9(mse_bound(inputs).value)
    assert report["empirical_mse"] <= report["bounds"]["mse_bound[general]"]["value"]


def test_mc_single_trial_equals_run(tmp_path):
    cfg = write_config(tmp_path, dict(K5, trials=1))
    _, text = run_cli(["mc", "--config", cfg], tmp_path, "mc.json")
    _, csv_text = run_cli(["run", "--config", cfg], tmp_path, "run.csv")
    last = read_csv(csv_text)[-1]
    assert json.loads(text)["mean_theta"] == float(last[1])


def test_bounds_k4_zero_rate(tmp_path):
    code, text = run_cli(
        ["bounds", "--graph", "complete:4", "--delta", "1", "--levels", "10", "--b", "1",
         "--epsilon", "0.1", "--a", "0.1"],
        tmp_path,
    )
    assert code == 0
    report = json.loads(text)
    jsonschema.validate(report, load_schema("result.schema.json"))
    b = report["bounds"]
    assert b["zero_rate_lb"]["value"] == pytest.approx(0.63258, abs=5e-6)
    assert b["ratio_approx"]["value"] == pytest.approx(0.08)
    for key in ("eps_consensus_lb", "theta_deviation_bound", "state_sup_bound[b_ball]",
                "mse_bound[general]", "mss_bound", "i_epsilon", "mean_contraction_bound", "delta_star"):
        assert key in b


def test_bounds_disconnected_exit_code(tmp_path):
    edges = tmp_path / "two.txt"
    edges.write_text("N 4\n0 1\n2 3\n")
    code, text = run_cli(["bounds", "--graph", str(edges), "--delta", "1", "--a", "0.1", "--b", "1"], tmp_path)
    assert code == EXIT_NUMERIC
    assert text is None


def test_edge_list_relative_to_config(tmp_path):
    (tmp_path / "g.txt").write_text("0 1\n1 2\n")
    cfg = write_config(tmp_path, {"graph": {"edge_list": "g.txt"}, "quantizer": {"delta": 1},
                                  "weights": {"a": 0.1}, "x0": [1, -1, 1]})
    code, text = run_cli(["bounds", "--config", cfg], tmp_path)
    assert code == 0
    assert json.loads(text)["spectral"] == {"lambda2": 1.0, "lambdaN": 3.0}


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--graph", "complete:5", "--delta", "0.5"],                 # no weights
        ["run", "--graph", "complete:5", "--delta", "-1", "--a", "1", "--b", "1"],
        ["run", "--graph", "missing.txt", "--delta", "1", "--a", "1", "--b", "1"],
        ["run", "--graph", "complete:5", "--delta", "1", "--a", "1"],      # neither x0 nor b
        ["run", "--graph", "circulant:10", "--delta", "1", "--a", "1", "--b", "1"],
        ["run", "--graph", "complete:5", "--delta", "1", "--a", "1", "--b", "1", "--levels", "x"],
        ["run", "--config", "nowhere.json"],
        ["design", "--graph", "complete:5", "--delta", "1", "--a", "1", "--b", "1"],
    ],
)
def test_config_errors(args, tmp_path):
    assert run_cli(args, tmp_path)[0] == EXIT_CONFIG


def test_unknown_flag_is_an_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus", "1"])
    assert exc.value.code == 2


def test_qcf_initial_state_outside_ball(tmp_path):
    cfg = write_config(tmp_path, dict(K5, quantizer={"delta": 0.5, "levels": 10}, b=2))
    assert run_cli(["run", "--config", cfg], tmp_path)[0] == EXIT_CONFIG


def test_random_x0_is_seeded():
    cfg = {"graph": {"generator": "ring", "n": 6}, "quantizer": {"delta": 1}, "weights": {"a": 0.1}, "b": 2.0}
    a = build_experiment(dict(cfg, seed=1)).x0
    b = build_experiment(dict(cfg, seed=1)).x0
    c = build_experiment(dict(cfg, seed=2)).x0
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all(np.abs(a) <= 2.0)


def test_design_table(tmp_path):
    args = ["design", "--graph", "complete:5", "--delta", "0.25", "--a", "0.25", "--b", "5",
            "--epsilon", "0.1", "--p-sweep", "4000,16,256"]
    code, text = run_cli(args, tmp_path)
    assert code == 0
    rows = read_csv(text)
    assert tuple(rows[0]) == DESIGN_COLUMNS
    ps = [int(r[0]) for r in rows[1:]]
    assert ps == [16, 256, 4000]
    for r in rows[1:]:
        p = int(r[0])
        assert float(r[1]) == sig9(math.log2(2 * p + 1))
    inputs = BoundInputs.from_model(LinkFailureModel.fixed(complete_graph(5)), 0.25, WeightSequence(a=0.25),
                                    b=5.0, p=4000, epsilon=0.1)
    design = optimize_delta(inputs)
    assert float(rows[-1][2]) == sig9(design.delta_star)
    assert float(rows[-1][3]) == sig9(design.t_star)
    zero = zero_rate_lb(inputs.replace(delta=design.delta_star)).clamped
    assert float(rows[-1][4]) == sig9(zero)


def test_design_circulant_ordering(tmp_path):
    base = ["design", "--graph", "circulant:230:6", "--delta", "1", "--a", "1", "--b", "30",
            "--epsilon", "0.05", "--p-sweep", "1,16,256,4096"]
    _, coarse = run_cli(base + ["--scale", "0.01"], tmp_path, "a.csv")
    _, fine = run_cli(base + ["--scale", "0.001"], tmp_path, "b.csv")
    for r1, r2 in zip(read_csv(coarse)[1:], read_csv(fine)[1:]):
        assert float(r2[3]) >= float(r1[3])
    assert circulant_graph(230, 6).n_edges == 690


def test_shipped_schema_copies_match():
    for name in ("config.schema.json", "result.schema.json"):
        assert json.loads((ROOT / "docs" / name).read_text()) == load_schema(name)
