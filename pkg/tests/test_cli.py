import json
import os

import numpy as np
import pytest

from riesz_kinetics import RunConfig, load_config
from riesz_kinetics.cli import main
from riesz_kinetics import runner


def micro_config(tmp_path, **over):
    base = dict(mode="sample", n_particles=150, t_final=25.0, dt_base=0.05,
                use_tree=False, seeds_per_axis=2, vgrid_per_axis=2,
                probe_grid=4, probe_max_particles=100, trace_dt_factor=4.0,
                out_dir=str(tmp_path), run_id="micro", threads=0)
    base.update(over)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def micro_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("micro")
    cfg = micro_config(tmp)
    hist = runner.run_simulate(cfg)
    runner.run_scatter(cfg, hist=None, ens=None)
    report = runner.run_rates(cfg)
    return cfg, runner.run_dir_of(cfg), report


def test_run_dir_contents(micro_run):
    _, run_dir, report = micro_run
    for name in ("ensemble.csv", "history.bin", "metadata.json", "fields.csv",
                 "wave.csv", "a_t.csv", "residual.csv", "report.json"):
        assert os.path.exists(os.path.join(run_dir, name)), name
    assert len(report["entries"]) == 9


def test_outputs_carry_config_hash(micro_run):
    cfg, run_dir, report = micro_run
    h = cfg.config_hash()
    for name in ("ensemble.csv", "fields.csv", "wave.csv", "a_t.csv",
                 "residual.csv"):
        with open(os.path.join(run_dir, name)) as f:
            assert f.readline().strip() == f"# config_hash={h}"
    assert report["config_hash"] == h
    meta = json.load(open(os.path.join(run_dir, "metadata.json")))
    assert meta["config_hash"] == h
    assert meta["config"]["n_particles"] == cfg.n_particles


def test_rerun_reproduces_outputs_byte_identically(micro_run, tmp_path):
    cfg, run_dir, _ = micro_run
    cfg2 = micro_config(tmp_path)  # same config, fresh directory
    runner.run_simulate(cfg2)
    runner.run_scatter(cfg2)
    runner.run_rates(cfg2)
    dir2 = runner.run_dir_of(cfg2)
    for name in ("ensemble.csv", "history.bin", "fields.csv", "wave.csv",
                 "a_t.csv", "residual.csv", "report.json"):
        a = open(os.path.join(run_dir, name), "rb").read()
        b = open(os.path.join(dir2, name), "rb").read()
        assert a == b, f"{name} differs between reruns"


def test_zero_amplitude_run(tmp_path):
    cfg = micro_config(tmp_path, eta=0.0, run_id="zero", n_particles=60,
                       t_final=10.0)
    runner.run_simulate(cfg)
    run_dir = runner.run_dir_of(cfg)
    from riesz_kinetics.analysis import read_csv_table
    fields = read_csv_table(os.path.join(run_dir, "fields.csv"))
    assert np.all(fields["supE"] == 0.0)
    assert np.all(fields["supGradE"] == 0.0)
    runner.run_scatter(cfg)
    report = runner.run_rates(cfg)
    assert all(e["trivial"] for e in report["entries"])


def test_scatter_without_history_fails(tmp_path):
    cfg = micro_config(tmp_path, run_id="missing")
    with pytest.raises(FileNotFoundError, match="simulate"):
        runner.run_scatter(cfg)


def test_cli_simulate_flags(tmp_path):
    rc = main(["simulate", "--preset", "ci", "--out", str(tmp_path),
               "--run-id", "clirun", "--t-final", "8", "--direct",
               "--eta", "0.0", "--alpha", "0.6"])
    assert rc == 0
    meta = json.load(open(tmp_path / "clirun" / "metadata.json"))
    assert meta["config"]["alpha"] == 0.6
    assert meta["config"]["t_final"] == 8.0
    assert meta["config"]["use_tree"] is False


def test_cli_scatter_missing_history_exit_code(tmp_path):
    rc = main(["scatter", "--out", str(tmp_path), "--run-id", "nothere"])
    assert rc == 2


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('alpha = 0.8\nn_particles = 500\nuse_tree = false\n'
                    'run_id = "fromfile"\n')
    cfg = load_config(path)
    assert cfg.alpha == 0.8 and cfg.n_particles == 500 and not cfg.use_tree
    bad = tmp_path / "bad.toml"
    bad.write_text("alpa = 0.8\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        load_config(bad)


def test_config_hash_tracks_content():
    a = RunConfig(alpha=0.75)
    b = RunConfig(alpha=0.8)
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == RunConfig(alpha=0.75).config_hash()
