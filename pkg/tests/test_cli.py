import json

import pytest

from pctpack import cli, verify
from pctpack.verify import Check


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        cli.main(["evaluate", "--episodes", "many"])
    assert e.value.code == 1
    assert run(capsys, "evaluate")[0] == 1
    assert run(capsys, "evaluate", "--methods", "Nope", "--episodes", "1")[0] == 1
    assert run(capsys, "evaluate", "--methods", "DBL", "--set", "colour=red")[0] == 1
    assert run(capsys, "evaluate", "--methods", "DBL", "--config", "/no/such/file")[0] == 1
    assert run(capsys, "train", "--out", "x.ckpt")[0] == 1
    assert run(capsys, "bench-large", "--integrators", "guess", "--episodes", "1")[0] == 1
    assert run(capsys, "verify", "--suite", "nope")[0] == 1
    assert run(capsys, "plan", "--value", "critic", "--episodes", "1")[0] == 1


def test_verification_failure_exits_2(capsys, monkeypatch):
    monkeypatch.setitem(verify.SUITES, "ems", lambda seed=0, **kw: Check("ems-oracle", False, "forced"))
    code, out, _ = run(capsys, "verify", "--suite", "ems")
    assert code == 2 and "[FAIL]" in out


def test_verify_quick_passes(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--suite", "reward", "--suite", "ems", "--quick",
                       "--out", str(tmp_path / "v.json"))
    assert code == 0
    assert out.count("[PASS]") == 2
    assert len(json.loads((tmp_path / "v.json").read_text())) == 2


def test_generate_evaluate_merge(capsys, tmp_path):
    seq = tmp_path / "seq.jsonl"
    assert run(capsys, "generate", "--count", "3", "--length", "80", "--out", str(seq))[0] == 0
    code, out, _ = run(capsys, "evaluate", "--methods", "DBL,LSAH", "--sequences", str(seq), "--format", "json",
                       "--out", str(tmp_path / "a"))
    assert code == 0
    rows = json.loads(out)
    assert {r["method"] for r in rows} == {"DBL", "LSAH"}
    assert run(capsys, "evaluate", "--methods", "HM", "--sequences", str(seq), "--out", str(tmp_path / "b"))[0] == 0
    code, out, _ = run(capsys, "evaluate", "--merge", str(tmp_path / "a.json"), str(tmp_path / "b.json"),
                       "--format", "csv")
    assert code == 0 and len(out.strip().splitlines()) == 4
    # results from seeds cannot be merged with results from the file
    assert run(capsys, "evaluate", "--methods", "DBL", "--episodes", "2", "--out", str(tmp_path / "c"))[0] == 0
    assert run(capsys, "evaluate", "--merge", str(tmp_path / "a.json"), str(tmp_path / "c.json"))[0] == 1


def test_train_then_evaluate_checkpoint(capsys, tmp_path):
    ck = tmp_path / "p.ckpt"
    code, out, _ = run(capsys, "train", "--updates", "2", "--set", "k_p=1", "--out", str(ck),
                       "--curve", str(tmp_path / "c.csv"))
    assert code == 0 and ck.exists()
    code, out, _ = run(capsys, "evaluate", "--methods", f"pct:{ck}", "--episodes", "1")
    assert code == 0 and "pct:" in out
    assert run(capsys, "evaluate", "--methods", f"pct:{ck}", "--set", "setting=3", "--episodes", "1")[0] == 1


def test_plan_and_benches(capsys):
    assert run(capsys, "plan", "--s", "2", "--p", "1", "--m", "4", "--episodes", "1")[0] == 0
    assert run(capsys, "plan", "--offline", "6", "--m", "8", "--episodes", "1")[0] == 0
    assert run(capsys, "bench-variants", "--s", "1", "--p", "0,1", "--m", "4", "--episodes", "1")[0] == 0
    code, out, _ = run(capsys, "bench-large", "--n-bar", "30", "--tau", "5", "--episodes", "1")
    assert code == 0 and "tau=5" in out
