import json
import subprocess
import sys

import pytest

from mfct import cli, engine
from mfct.cli import COMPARE_HEADER, compare, main, sweep_rate
from mfct.config import ScenarioConfig
from mfct.errors import ConfigError

TINY = {"rounds": 3, "field.node_count": 12}


def tiny(**changes):
    return ScenarioConfig().replace({**TINY, **changes})


def write_cfg(tmp_path, text="rounds = 3\n[field]\nnode_count = 12\n"):
    p = tmp_path / "s.toml"
    p.write_text(text)
    return p


def test_compare_single_row():
    rows = compare(tiny(), ["mfct"], [1])
    assert len(rows) == 1 and rows[0]["protocol"] == "mfct" and rows[0]["error"] is None


def test_compare_cartesian_count(tmp_path):
    rows = compare(tiny(rounds=1, **{"field.node_count": 5}), ["mfct", "ergid", "eecrp"],
                   list(range(1, 21)), rates=[1, 2, 4, 8], out_dir=tmp_path)
    assert len(rows) == 240
    lines = (tmp_path / "compare.csv").read_text().splitlines()
    assert lines[0] == ",".join(COMPARE_HEADER) and len(lines) == 241
    keys = [(r["protocol"], r["rate"], r["seed"]) for r in rows]
    assert keys == sorted(keys)
    assert len(list((tmp_path / "series").iterdir())) == 240


def test_compare_rejects_empty_inputs():
    with pytest.raises(ConfigError):
        compare(tiny(), [], [1])
    with pytest.raises(ConfigError):
        compare(tiny(), ["mfct"], [])
    with pytest.raises(ConfigError):
        compare(tiny(), ["leach"], [1])


def test_compare_is_byte_identical(tmp_path):
    cfg = tiny(rounds=20)
    compare(cfg, ["mfct", "ergid"], [1, 2], out_dir=tmp_path / "a")
    compare(cfg, ["mfct", "ergid"], [1, 2], out_dir=tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.csv"))
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_failed_pair_is_recorded(monkeypatch, tmp_path):
    real = engine.run

    def flaky(cfg, observer=None):
        if cfg.protocol == "ergid":
            raise RuntimeError("boom")
        return real(cfg, observer)

    monkeypatch.setattr(engine, "run", flaky)
    rows = compare(tiny(), ["ergid", "mfct"], [1], out_dir=tmp_path)
    failed = [r for r in rows if r["error"]]
    assert [r["protocol"] for r in failed] == ["ergid"] and "boom" in failed[0]["error"]
    assert any(r["protocol"] == "mfct" and r["report"] for r in rows)
    assert (tmp_path / "failures.csv").read_text().splitlines()[1].startswith("ergid,1,1,")
    assert (tmp_path / "compare.csv").read_text().splitlines()[1] == "ergid,1,1,,,,,,,"


def test_sweep_rate_tags(tmp_path):
    assert list(sweep_rate(tiny(rate_scenarios=[1]), ["mfct"], [1])) == [1]
    out = sweep_rate(tiny(rate_scenarios=[1, 2, 4, 8]), ["mfct"], [1], out_dir=tmp_path)
    assert list(out) == [1, 2, 4, 8]
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == ["rate_1", "rate_2", "rate_4", "rate_8"]
    sweep = (tmp_path / "sweep.csv").read_text().splitlines()
    assert [line.split(",")[2] for line in sweep[1:]] == ["1", "2", "4", "8"]
    with pytest.raises(ConfigError):
        sweep_rate(tiny(rate_scenarios=[]))


def test_run_subcommand(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["run", str(cfg), "--out-dir", str(tmp_path / "o"), "--seed", "4"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["seed"] == 4
    assert json.loads(capsys.readouterr().out)["config_hash"] == summary["config_hash"]
    assert (tmp_path / "o" / "series.csv").read_text().startswith(engine.CSV_HEADER)


def test_quiet_flag(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["compare", str(cfg), "--protocols", "mfct", "--seeds", "1-2", "--quiet",
                 "--out-dir", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out == ""
    assert len((tmp_path / "o" / "compare.csv").read_text().splitlines()) == 3


def test_compare_prints_medians(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    main(["compare", str(cfg), "--protocols", "mfct,eecrp", "--seeds", "1,2", "--out-dir", str(tmp_path / "o")])
    out = capsys.readouterr().out.splitlines()
    assert out[0].split()[:3] == ["protocol", "rate", "runs"]
    assert [line.split()[0] for line in out[1:]] == ["eecrp", "mfct"]


def test_exit_codes(tmp_path, capsys):
    bad = write_cfg(tmp_path, "[grey]\nrho = 1.5\n")
    assert main(["run", str(bad)]) == 2
    assert "grey.rho" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nope.toml")]) == 2
    broken = tmp_path / "broken.toml"
    broken.write_text("rounds = = 1")
    assert main(["run", str(broken)]) == 2


def test_runtime_error_exit_code(monkeypatch, tmp_path):
    def boom(cfg, observer=None):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(engine, "run", boom)
    assert main(["run", str(write_cfg(tmp_path)), "--out-dir", str(tmp_path / "o")]) == 1


def test_rank_subcommand(tmp_path, capsys):
    p = tmp_path / "m.csv"
    p.write_text("criterion,e,d\ndirection,benefit,cost\nweight,0.5,0.5\na,1,10\nb,2,5\n")
    assert main(["rank", str(p)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "rank,index,label,grade" and lines[1].startswith("1,1,b,1.0")
    p.write_text("criterion,e\ndirection,benefit\nweight,0.3\na,1\n")
    assert main(["rank", str(p)]) == 2


def test_dump_topology(tmp_path, capsys):
    assert main(["dump-topology", str(write_cfg(tmp_path))]) == 0
    snap = json.loads(capsys.readouterr().out)
    assert len(snap["nodes"]) == 12 and len(snap["fogs"]) == 4
    assert snap["tree"]["root"] == "cloud" and snap["clusters"]
    assert all(n["primary_ch"] is not None for n in snap["nodes"])


def test_parse_list():
    assert cli._parse_list("1-3,7") == [1, 2, 3, 7]
    assert cli._parse_list("mfct, ergid", str) == ["mfct", "ergid"]


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mfct", "run", str(write_cfg(tmp_path)), "--quiet",
                          "--out-dir", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
