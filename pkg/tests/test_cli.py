from __future__ import annotations

import json

import pytest

from othello_lb.harness.cli import main


def test_run_writes_report(tmp_path):
    out = tmp_path / "r.json"
    rc = main(["run", "--algo", "cuckoo_digest", "--states", "3000", "--vips", "4", "--window", "0.02",
               "--repetitions", "1", "--out", str(out)])
    rep = json.loads(out.read_text())
    assert rc == 0 and rep["algorithm"] == "cuckoo_digest" and rep["counters"]["pcc_violations"] == 0


def test_run_rejects_bad_spec():
    assert main(["run", "--vips", "300"]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--algo", "maglev"])


def test_enumerate_and_stats(tmp_path, capsys):
    csv_path = tmp_path / "counts.csv"
    assert main(["enumerate", "--m", "256", "--l", "6", "--csv", str(csv_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["m"] == 256 and summary["pairs"] == 256 * 256
    rc = main(["stats", "chi2", str(csv_path)])
    res = json.loads(capsys.readouterr().out)
    assert rc == (0 if res["passed"] else 1) and res["bins"] == 64


def test_stats_verdicts(tmp_path, capsys):
    even = tmp_path / "even.csv"
    even.write_text("\n".join(["100"] * 16) + "\n")
    skew = tmp_path / "skew.csv"
    skew.write_text("bin,count\n" + "".join(f"{i},{1000 if i == 0 else 1}\n" for i in range(16)))
    assert main(["stats", "ks", str(even)]) == 0
    assert main(["stats", "chi2", str(skew), "--column", "count"]) == 1
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["stats", "chi2", str(empty)]) == 2
    capsys.readouterr()


def test_uniformity_and_loadbalance(tmp_path):
    u = tmp_path / "u.json"
    assert main(["uniformity", "--ld", "6", "--trials", "2", "--states", "48", "--keys", "4096",
                 "--out", str(u)]) == 0
    assert "rows" not in json.loads(u.read_text())
    lb = tmp_path / "lb.json"
    assert main(["loadbalance", "--dips", "8", "--rate", "20000", "--duration", "2.5", "--shock-at", "0.5",
                 "--out", str(lb), "--csv", str(tmp_path / "lb.csv")]) == 0
    assert json.loads(lb.read_text())["steady_max"] >= 1.0
