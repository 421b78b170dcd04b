"""End-to-end CLI runs against a throwaway config: every subcommand,
exit codes, and CLI/library agreement on the numbers."""

import csv
import json
import os

import pytest
import yaml

from pimsched.cli import main, run_eval_point
from pimsched.config import ExperimentSpec
from pimsched.schedulers import make_baseline


def small_doc(out):
    return {
        "format": "pimsched-experiment",
        "system": "toy2",
        "schedulers": ["simba", "biglittle"],
        "workload": {"pool": "toy", "pool_seed": 3, "pool_size": 2,
                     "count": 30, "frame_range": [1, 4]},
        "admit_rates": [1000.0, 4000.0],
        "seeds": [0, 1],
        "out": out,
        "sim": {"warmup_s": 0.0005},
        "train": {"steps_per_update": 60, "total_steps": 180,
                  "episode_jobs": 8, "minibatch": 64, "tree_depth": 2,
                  "frame_range": [1, 2],
                  "admit_range": [500.0, 4000.0]},
    }


@pytest.fixture()
def spec_path(tmp_path):
    doc = small_doc(str(tmp_path / "results"))
    p = tmp_path / "exp.yaml"
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def read_csv_rows(path):
    with open(path) as fh:
        return [r for r in csv.DictReader(
            line for line in fh if not line.startswith("#")
        )]


def test_eval_writes_tables_and_figures(tmp_path, spec_path):
    assert main(["eval", "--config", spec_path]) == 0
    out = tmp_path / "results"
    for name in ("eval.csv", "summary.csv", "pareto.csv",
                 "throughput.png", "pareto.png"):
        assert (out / name).exists(), name
    rows = read_csv_rows(str(out / "eval.csv"))
    assert len(rows) == 2 * 2 * 2  # schedulers x rates x seeds
    assert (out / "jobs").is_dir()
    assert len(list((out / "jobs").iterdir())) == 8
    summary = read_csv_rows(str(out / "summary.csv"))
    assert len(summary) == 4 and summary[0]["n_seeds"] == "2"


def test_eval_matches_library_call(tmp_path, spec_path):
    assert main(["eval", "--config", spec_path]) == 0
    rows = read_csv_rows(str(tmp_path / "results" / "eval.csv"))
    target = next(r for r in rows if r["scheduler"] == "simba"
                  and float(r["admit_rate"]) == 4000.0 and r["seed"] == "1")
    spec = ExperimentSpec.load(spec_path)
    metrics = run_eval_point(
        spec.build_system(), spec.build_cost_model(), spec.build_thermal_config(),
        spec.build_pool(), spec, make_baseline("simba", 1), 4000.0, 1,
    )
    assert float(target["throughput_jobs_s"]) == metrics.throughput_jobs_s
    assert float(target["mean_energy_j"]) == metrics.mean_energy_j


def test_eval_is_reproducible_byte_for_byte(tmp_path, spec_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert main(["eval", "--config", spec_path, "--out", out_a]) == 0
    assert main(["eval", "--config", spec_path, "--out", out_b]) == 0
    for name in ("eval.csv", "summary.csv", "pareto.csv"):
        with open(os.path.join(out_a, name), "rb") as fa, \
                open(os.path.join(out_b, name), "rb") as fb:
            assert fa.read() == fb.read(), name


def test_train_then_eval_with_policy(tmp_path, spec_path):
    assert main(["train", "--config", spec_path]) == 0
    out = tmp_path / "results"
    assert (out / "policy.json").exists()
    assert (out / "training.csv").exists()
    assert (out / "training_curve.png").exists()
    with open(out / "policy.json") as fh:
        doc = json.load(fh)
    assert doc["meta"]["seed"] == 0

    # now point a thermos entry at the trained policy (found in out dir)
    doc2 = small_doc(str(out))
    doc2["schedulers"] = ["simba", {"name": "thermos", "preference": [1.0, 0.0]}]
    p2 = tmp_path / "exp2.yaml"
    p2.write_text(yaml.safe_dump(doc2))
    assert main(["eval", "--config", str(p2)]) == 0
    rows = read_csv_rows(str(out / "eval.csv"))
    assert {r["scheduler"] for r in rows} == {"simba", "thermos"}


def test_eval_without_policy_fails_cleanly(tmp_path, spec_path):
    doc = small_doc(str(tmp_path / "results"))
    doc["schedulers"] = ["thermos"]
    p = tmp_path / "nopolicy.yaml"
    p.write_text(yaml.safe_dump(doc))
    assert main(["eval", "--config", str(p)]) == 1


def test_validate_passes_default_and_config(tmp_path, spec_path, capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    assert main(["validate", "--config", spec_path]) == 0


def test_missing_or_broken_config_is_exit_1(tmp_path):
    assert main(["eval", "--config", str(tmp_path / "absent.yaml")]) == 1
    assert main(["train"]) == 1  # --config required
    bad = tmp_path / "bad.yaml"
    bad.write_text("admit_rates: []\n")
    assert main(["eval", "--config", str(bad)]) == 1


def test_unstable_thermal_network_is_exit_2(tmp_path, spec_path):
    # numerically non-dissipative network: passes config validation but
    # must trip the engine's stability guard at run time
    thermal = tmp_path / "thermal.yaml"
    thermal.write_text(yaml.safe_dump({
        "format": "pimsched-thermal", "version": 1,
        "ambient_k": 298.0, "cap_per_mm2": 0.05,
        "g_ambient_per_mm2": 1e-300, "g_lateral": 0.0,
        "lateral_radius_mm": 8.0, "dt_s": 0.1,
    }))
    doc = small_doc(str(tmp_path / "results"))
    doc["thermal"] = os.path.basename(thermal)
    p = tmp_path / "exp3.yaml"
    p.write_text(yaml.safe_dump(doc))
    assert main(["eval", "--config", str(p)]) == 2


def test_gen_workloads_writes_loadable_dcgs(tmp_path, spec_path):
    out = str(tmp_path / "models")
    assert main(["gen-workloads", "--config", spec_path, "--out", out]) == 0
    files = sorted(os.listdir(out))
    assert len(files) == 2
    from pimsched.workload import parse_dcg_file
    for f in files:
        g = parse_dcg_file(os.path.join(out, f))
        assert g.n_layers >= 2


def test_gen_topology_round_trips(tmp_path):
    out = str(tmp_path)
    assert main(["gen-topology", "--out", out, "--kind", "mesh",
                 "--rows", "3", "--cols", "3",
                 "--placement", "standard:2,adc_less:2", "--n-io", "2"]) == 0
    path = os.path.join(out, "mesh_3x3.json")
    from pimsched.arch import load_topology_file
    g = load_topology_file(path)
    assert sum(1 for c in g.chiplets if not c.is_io) == 4
    assert sum(1 for c in g.chiplets if c.is_io) == 2
    assert main(["gen-topology", "--out", out, "--placement", "bogus:1"]) == 1
