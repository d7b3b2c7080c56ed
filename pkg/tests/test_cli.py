import hashlib
import json
import subprocess
import sys

import pytest

from boundary_sim.cli import main


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_micro_writes_csv(tmp_path):
    assert run(tmp_path, "micro", "--config", "trap", "--config", "byp", "--iters", "50") == 0
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "workload,config,mean,stdev,cv,p99,min,max,n"
    assert [line.split(",")[1] for line in summary[1:]] == ["trap", "byp"]
    raw = (tmp_path / "raw.csv").read_text().splitlines()
    assert raw[0] == "workload,config,iter,cycles" and len(raw) == 101
    assert (tmp_path / "weights.txt").exists()


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(out, "pf", "--config", "nss,ret,pf_df", "--npages", "8") == 0
    assert digest(a / "summary.csv") == digest(b / "summary.csv")
    assert digest(a / "raw.csv") == digest(b / "raw.csv")


def test_json_format(tmp_path):
    assert run(tmp_path, "micro", "--iters", "5", "--format", "json") == 0
    rows = json.loads((tmp_path / "summary.json").read_text())
    assert rows[0]["config"] == "trap" and rows[0]["n"] == 5


@pytest.mark.parametrize("args", [
    ["micro", "--config", "nss,nss_ps,pf_df"],
    ["micro", "--config", "warp"],
    ["micro", "--config", "trap,ret"],
])
def test_bad_config_exits_2(tmp_path, args, capsys):
    assert run(tmp_path, *args) == 2
    assert "error" in capsys.readouterr().err


def test_bad_weights_exit_2(tmp_path):
    bad = tmp_path / "w.txt"
    bad.write_text("Bogus=1\n")
    assert run(tmp_path, "micro", "--weights", str(bad), "--iters", "2") == 2
    assert run(tmp_path, "micro", "--weights", str(tmp_path / "missing"), "--iters", "2") == 2


def test_custom_weights_are_used_and_echoed(tmp_path):
    from boundary_sim.core import default_weights_text
    text = default_weights_text().replace("DispatchLayer=350", "DispatchLayer=1000")
    assert "DispatchLayer=1000" in text
    w = tmp_path / "w.txt"
    w.write_text(text)
    out = tmp_path / "o"
    assert run(out, "micro", "--weights", str(w), "--config", "byp", "--iters", "2") == 0
    assert (out / "weights.txt").read_text() == text
    assert (out / "summary.csv").read_text().splitlines()[1].split(",")[2] == "1000.000000"


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BOUNDARY_SIM_SEED", "5")
    assert run(tmp_path / "env", "kv", "--clients", "2", "--requests", "20") == 0
    assert run(tmp_path / "flag", "kv", "--clients", "2", "--requests", "20", "--seed", "5") == 0
    assert run(tmp_path / "other", "kv", "--clients", "2", "--requests", "20", "--seed", "6") == 0
    same = digest(tmp_path / "env" / "raw.csv") == digest(tmp_path / "flag" / "raw.csv")
    differ = digest(tmp_path / "env" / "raw.csv") != digest(tmp_path / "other" / "raw.csv")
    assert same and differ


def test_compare_prints_row(tmp_path, capsys):
    assert run(tmp_path, "compare", "--against", "byp", "--against", "base", "--iters", "10") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "workload,baseline,config,improvement_pct"
    byp = lines[1].split(",")
    assert byp[:3] == ["micro:getppid:0", "trap", "byp"]
    assert 80 <= float(byp[3]) <= 85
    assert (tmp_path / "compare.csv").exists()


def test_compare_unknown_workload(tmp_path):
    assert run(tmp_path, "compare", "--against", "byp", "--workload", "tpcc") == 2


def test_sweep_writes_plots(tmp_path):
    assert run(tmp_path, "sweep", "--config", "trap", "--config", "byp",
               "--payloads", "1,64", "--iters", "3", "--plot") == 0
    for name in ("payload.svg", "latency.svg"):
        assert (tmp_path / name).read_text().lstrip().startswith("<?xml")
    first = digest(tmp_path / "payload.svg")
    assert run(tmp_path, "sweep", "--config", "trap", "--config", "byp",
               "--payloads", "1,64", "--iters", "3", "--plot") == 0
    assert digest(tmp_path / "payload.svg") == first


def test_ring_and_kv_print_tables(tmp_path, capsys):
    assert run(tmp_path, "ring", "--config", "trap", "--rows", "10") == 0
    assert capsys.readouterr().out.startswith("config,total_cycles,mean_round,cv\n")
    assert run(tmp_path, "kv", "--config", "base", "--sla", "1000000", "--loads", "1,2",
               "--requests", "10") == 0
    out = capsys.readouterr().out
    assert out.startswith("config,clients,throughput_per_mcycle,p99\n")
    assert "max load under SLA" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "boundary_sim", "micro", "--iters", "3",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "wall-clock" in proc.stderr


def test_missing_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_printed_tables_quote_labels(tmp_path, capsys):
    import csv
    assert run(tmp_path, "ring", "--config", "ret,byp,shortcut,rtc", "--rows", "5") == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[1][0] == "byp,ret,shortcut,rtc" and len(rows[1]) == 4
