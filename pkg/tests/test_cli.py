"""End-to-end command line checks, run in process via cli.main."""

import json

import pytest

from kolmolab import cli
from kolmolab.ineq import CSV_COLUMNS

TINY_OU = """\
scenario cli_ou
  catalog ou_const
  kind ou
  sim
    dt 1e-3
    paths 1000
    seed 7
  end
  experiment audit
  end
  experiment poincare
    t 1.0
    p [2.0]
  end
end
"""

TINY_MC = """\
scenario cli_mc
  catalog cubic_dissipative
  sim
    dt 2e-3
    paths 1500
    seed 7
  end
  experiment audit
  end
  experiment simulate
    s 0.0
    spans [0.5]
    paths 1500
  end
end
"""


def write_scn(tmp_path, text, name="case.scn"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_list_catalog(capsys):
    assert cli.main(["list-catalog"]) == 0
    out = capsys.readouterr().out
    for name in (
        "ou_const",
        "ou_periodic",
        "ou_convergent",
        "cubic_dissipative",
        "double_well_shifted",
    ):
        assert name in out


def test_version_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["--version"])
    assert ei.value.code == 0
    assert "kolmolab" in capsys.readouterr().out


def test_run_writes_reports(tmp_path, capsys):
    scn = write_scn(tmp_path, TINY_OU)
    code = cli.main(["run", str(scn), "--out", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert code == 0
    assert "verdict: pass" in out

    base = tmp_path / "out" / "cli_ou"
    csv = (base / "poincare.csv").read_text().splitlines()
    assert csv[0] == ",".join(CSV_COLUMNS)
    assert any(line.startswith("cli_ou,") for line in csv[1:])
    assert (base / "audit.csv").exists()

    summary = json.loads((base / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["scenario"] == "cli_ou"
    assert summary["verdict"] == "pass"
    assert {e["name"] for e in summary["experiments"]} == {"audit", "poincare"}
    assert "created_at" in summary["metadata"]


def read_outputs(base):
    csvs = {p.name: p.read_bytes() for p in sorted(base.glob("*.csv"))}
    summary = json.loads((base / "summary.json").read_text())
    summary.pop("metadata")
    return csvs, summary


def test_seeded_runs_are_reproducible(tmp_path, capsys, monkeypatch):
    scn = write_scn(tmp_path, TINY_MC)
    runs = {}
    for tag in ("a", "b"):
        code = cli.main(
            ["run", str(scn), "--seed", "7", "--out", str(tmp_path / tag)]
        )
        assert code == 0
        runs[tag] = read_outputs(tmp_path / tag / "cli_mc")
    assert runs["a"] == runs["b"]

    # worker count must not leak into results
    monkeypatch.setenv("KOLMOLAB_THREADS", "2")
    code = cli.main(["run", str(scn), "--seed", "7", "--out", str(tmp_path / "c")])
    assert code == 0
    assert read_outputs(tmp_path / "c" / "cli_mc") == runs["a"]
    capsys.readouterr()


def test_rejects_positive_r0(tmp_path, capsys):
    scn = write_scn(
        tmp_path,
        "scenario bad\n  catalog ou_const\n"
        "  constants\n    r0 1.0\n  end\nend\n",
    )
    assert cli.main(["run", str(scn), "--out", str(tmp_path / "o")]) == 2
    assert "hypothesis (iv)" in capsys.readouterr().err


def test_rejects_unknown_target(capsys):
    assert cli.main(["run", "no_such_thing"]) == 2
    assert "neither a scenario file nor a catalog entry" in capsys.readouterr().err


def test_rejects_bad_thread_env(tmp_path, capsys, monkeypatch):
    scn = write_scn(tmp_path, TINY_OU)
    monkeypatch.setenv("KOLMOLAB_THREADS", "many")
    assert cli.main(["run", str(scn), "--out", str(tmp_path / "o")]) == 2
    assert "KOLMOLAB_THREADS" in capsys.readouterr().err


def test_overclaimed_rate_fails_audit(tmp_path, capsys):
    # declaring r0 = -2 for a drift that only contracts at rate 1 must
    # surface as a failing audit, not a crash
    scn = write_scn(
        tmp_path,
        "scenario overclaim\n  catalog ou_const\n"
        "  constants\n    r0 -2.0\n  end\n"
        "  experiment audit\n  end\nend\n",
    )
    assert cli.main(["run", str(scn), "--out", str(tmp_path / "o")]) == 1
    assert "verdict: fail" in capsys.readouterr().out


def test_kind_command_on_catalog_name(capsys):
    code = cli.main(
        ["poincare", "ou_const", "--set", "t=1.0", "--set", "p=[2.0]"]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "[poincare]" in out and "verdict: pass" in out
    assert "report:" not in out  # no out dir requested, nothing written


def test_kind_command_merges_set_into_declared(tmp_path, capsys):
    scn = write_scn(tmp_path, TINY_OU)
    code = cli.main(["poincare", str(scn), "--set", "p=[4.0]"])
    out = capsys.readouterr().out
    assert code == 0
    assert "p=4" in out and "[audit]" not in out


def test_bad_set_syntax(capsys):
    assert cli.main(["poincare", "ou_const", "--set", "oops"]) == 2
    assert "KEY=VALUE" in capsys.readouterr().err
