from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from pame.cli import main
from pame.topology import Graph, GraphKind

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ODD_RING = str(CONFIGS / "oddring_m5.json")
SMALL = ["graph.m=9", "graph.degree=4", "data.n=10", "data.samples_per_node=30", "engine.sigma0=20"]


def test_validate_odd_ring_warns(tmp_path, capsys):
    code = main(["validate", "--config", ODD_RING, "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 2
    assert "(1, 1.08847)" in out
    report = json.loads((tmp_path / "setup_report.json").read_text())
    assert report["passed"] is False
    assert report["gamma_interval"][1] == pytest.approx(1.08847, abs=1e-5)
    assert (tmp_path / "effective_config.json").is_file()


def test_validate_even_ring_is_an_error(tmp_path, capsys):
    m = 6
    ring = Graph(m, tuple(tuple(sorted({(i - 1) % m, (i + 1) % m})) for i in range(m)), GraphKind.CUSTOM)
    ring.save(tmp_path / "ring.json")
    code = main(["validate", "--config", ODD_RING, "--out", str(tmp_path / "o"),
                 "--override", f"graph.file={json.dumps(str(tmp_path / 'ring.json'))}"])
    assert code == 1
    assert "BipartiteOrDisconnected" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path):
    code = main(["run", "--config", ODD_RING, "--out", str(tmp_path), "--quiet",
                 *sum((["--override", o] for o in SMALL[2:]), [])])
    assert code == 0
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "objective", "consensus_err", "merit", "bits", "comm_round"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "converged"
    assert summary["iters"] == len(rows) - 1
    assert summary["total_bits"] == sum(int(r[4]) for r in rows[1:])


def test_run_hits_max_iters(tmp_path):
    code = main(["run", "--config", ODD_RING, "--out", str(tmp_path), "--quiet",
                 "--override", "engine.max_iters=2"])
    assert code == 3
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "max_iters"


def test_rerun_from_effective_config_is_identical(tmp_path):
    args = sum((["--override", o] for o in SMALL), [])
    assert main(["run", "--out", str(tmp_path / "a"), "--quiet", *args]) == 0
    effective = str(tmp_path / "a" / "effective_config.json")
    assert main(["run", "--config", effective, "--out", str(tmp_path / "b"), "--quiet", "--threads", "3"]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_dpsgd_override(tmp_path):
    args = sum((["--override", o] for o in SMALL), [])
    code = main(["run", "--out", str(tmp_path), "--quiet", *args, "--override", "engine.mode=DPSGD",
                 "--override", "engine.dpsgd_lr=0.05"])
    assert code in (0, 3)
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    assert {int(r[4]) for r in rows} == {9 * 4 * 64 * 10}


def test_sweep_command(tmp_path):
    args = sum((["--override", o] for o in SMALL), [])
    code = main(["sweep", "--out", str(tmp_path), "--quiet", *args, "--override", "sweep.values=[0.2, 1.0]",
                 "--override", "sweep.seeds=[0]"])
    assert code == 0
    text = (tmp_path / "sweep_transmission_rate.csv").read_text().splitlines()
    assert len(text) == 3


def test_unknown_config_key(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "graph": {"colour": 1}\n}\n')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize(
    "args",
    [
        ["oracle", "unbiasedness", "--trials", "5000"],
        ["oracle", "srswor", "--q", "6", "--r", "3"],
        ["oracle", "gradcheck", "--loss", "linear", "--trials", "10"],
        ["oracle", "gradcheck", "--loss", "logistic", "--trials", "10"],
    ],
)
def test_oracles_pass(args, tmp_path, capsys):
    assert main([*args, "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip().endswith("pass")


def test_unknown_oracle(tmp_path, capsys):
    assert main(["oracle", "nonsense", "--out", str(tmp_path)]) == 1
    assert "UnknownOracle" in capsys.readouterr().err


def test_bad_thread_count():
    with pytest.raises(SystemExit):
        main(["run", "--threads", "0"])
