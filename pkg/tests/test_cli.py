"""CLI and output-file contracts on tiny end-to-end runs."""

import csv
import math
import os

import numpy as np
import pytest

from abpinn.cli import main
from abpinn import config as cfgmod
from abpinn import experiment

TINY = """
[problem]
name = chirp
omega = 2
power = 3

[model]
mode = {mode}
subdomains = {subdomains}
layout = linspace
init_l = 4
global_width = 6
sub_width = 6

[train]
iterations = 60
freeze = 30
collocation = 16
record_every = 20
eval_points = 80
pool_size = 64

{addition}
[output]
directory = {out}
seeds = {seeds}
"""

ADD = """
[addition]
start = 20
period = 20
max_subdomains = 2
"""


def write_cfg(tmp_path, mode="abpinn", subdomains=2, seeds="0", addition=""):
    text = TINY.format(
        mode=mode, subdomains=subdomains, out=tmp_path / "out",
        seeds=seeds, addition=addition
    )
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def assert_strict_csv(path):
    header, rows = read_csv(path)
    assert all(len(r) == len(header) for r in rows)
    for r in rows:
        for cell in r[:-1] if "event" in header or "kind" in header else r:
            pass
    return header, rows


def test_run_writes_all_outputs(tmp_path):
    cfg_path = write_cfg(tmp_path)
    assert main(["run", "--config", str(cfg_path)]) == 0
    seed_dir = tmp_path / "out" / "seed_0"
    for name in ("loss_history", "solution", "error", "residual", "windows",
                 "envelope"):
        assert (seed_dir / f"{name}.csv").exists(), name
    header, rows = read_csv(seed_dir / "loss_history.csv")
    assert header == ["iter", "residual_loss", "l2_error", "subdomain_count", "event"]
    assert all(len(r) == 5 for r in rows)
    for r in rows:
        assert float(r[1]) >= 0.0 and math.isfinite(float(r[1]))
        assert math.isfinite(float(r[2]))
    assert (tmp_path / "out" / "summary.csv").exists()


def test_outputs_byte_identical_across_reruns(tmp_path):
    cfg_path = write_cfg(tmp_path)
    main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "b")])
    for name in ("loss_history", "solution", "error", "residual", "windows",
                 "envelope"):
        a = (tmp_path / "a" / "seed_0" / f"{name}.csv").read_bytes()
        b = (tmp_path / "b" / "seed_0" / f"{name}.csv").read_bytes()
        assert a == b, name


def test_pinn_envelope_all_zeros(tmp_path):
    cfg_path = write_cfg(tmp_path, mode="pinn", subdomains=0)
    main(["run", "--config", str(cfg_path)])
    header, rows = read_csv(tmp_path / "out" / "seed_0" / "envelope.csv")
    assert header[-1] == "envelope"
    assert all(float(r[-1]) == 0.0 for r in rows)


def test_addition_grows_window_snapshots(tmp_path):
    cfg_path = write_cfg(tmp_path, mode="abpinn_plus", subdomains=0, addition=ADD)
    main(["run", "--config", str(cfg_path)])
    header, rows = read_csv(tmp_path / "out" / "seed_0" / "windows.csv")
    by_iter = {}
    for r in rows:
        by_iter.setdefault(int(r[0]), []).append(r)
    iters = sorted(by_iter)
    counts = [len(by_iter[i]) for i in iters]
    assert counts[0] < counts[-1]
    assert counts == sorted(counts)
    assert counts[-1] == 2


def test_sweep_summary_marks_lowest_residual_seed(tmp_path):
    cfg_path = write_cfg(tmp_path, seeds="0,1,2")
    assert main(["sweep", "--config", str(cfg_path)]) == 0
    header, rows = read_csv(tmp_path / "out" / "summary.csv")
    assert header == ["seed", "final_residual", "final_l2", "subdomain_count",
                      "diverged", "best"]
    assert len(rows) == 3
    residuals = {int(r[0]): float(r[1]) for r in rows}
    best = [int(r[0]) for r in rows if r[5] == "1"]
    assert len(best) == 1
    assert residuals[best[0]] == min(residuals.values())


def test_validate_config_verb(tmp_path):
    good = write_cfg(tmp_path)
    assert main(["validate-config", "--config", str(good)]) == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text(good.read_text() + "\n[model2]\nx = 1\n")
    assert main(["validate-config", "--config", str(bad)]) == 1


def test_reference_generation_and_idempotence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    # a tiny grid via direct solver call exercises the CSV contract; the CLI
    # path is then checked for idempotence with the existing file
    from abpinn.spectral import SpectralConfig, save_grid, solve
    from abpinn.problems import ProblemName

    os.makedirs("references", exist_ok=True)
    grid = solve(SpectralConfig(ProblemName.ALLEN_CAHN, n_modes=128, dt=1e-3,
                                t_final=0.1, save_times=6))
    save_grid(grid, "references/allen_cahn.csv")
    before = open("references/allen_cahn.csv", "rb").read()
    assert main(["reference", "--problem", "allen_cahn"]) == 0
    assert open("references/allen_cahn.csv", "rb").read() == before  # skipped


def test_reference_default_shape(tmp_path, monkeypatch):
    from abpinn.spectral import load_grid

    monkeypatch.chdir(tmp_path)
    rc = main(["reference", "--problem", "allen_cahn", "--modes", "128",
               "--dt", "1e-3"])
    assert rc == 0
    grid = load_grid("references/allen_cahn.csv")
    assert grid.values.shape == (101, 128)
    with open("references/allen_cahn.csv") as fh:
        assert sum(1 for _ in fh) == 101 * 128 + 1


def test_reference_instability_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    rc = main(["reference", "--problem", "allen_cahn", "--modes", "128",
               "--dt", "0.5", "--t-final", "50", "--save-times", "101"])
    assert rc == 1
    assert "diverged" in capsys.readouterr().err


def test_seed_override(tmp_path):
    cfg_path = write_cfg(tmp_path, seeds="0,1")
    main(["run", "--config", str(cfg_path), "--seed", "1"])
    assert (tmp_path / "out" / "seed_1").exists()
    assert not (tmp_path / "out" / "seed_0").exists()


def test_invalid_config_run_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[problem]\nname = chirp\n")
    assert main(["run", "--config", str(bad)]) == 1


def test_shipped_configs_parse():
    import glob

    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    paths = sorted(glob.glob(os.path.join(here, "configs", "*.cfg")))
    assert len(paths) == 9
    for p in paths:
        cfgmod.load_config(p)
