import json

import numpy as np
import pytest

from pctpack.bench import (EpisodeRow, MetricRow, ResultSet, config_digest, format_table, generate_sequences,
                           metrics_from_episodes, read_sequences, report, rows_to_csv, run_experiment,
                           summarize, with_gaps, write_results, write_sequences)
from pctpack.env import EnvConfig, PackingEnv


def test_variance_and_means_by_hand():
    row = summarize("A", [0.5, 0.7], [10, 20], [0.001, 0.003])
    # population variance of {0.5, 0.7} is 0.01
    assert row.uti == pytest.approx(0.6)
    assert row.var == pytest.approx(10.0)
    assert row.num == 15 and row.time == pytest.approx(0.002)


def test_gaps():
    rows = with_gaps([MetricRow("A", 0.8, 0, 0, 0, 0, 1), MetricRow("B", 0.6, 0, 0, 0, 0, 1)])
    assert rows[0].gap == 0
    assert rows[1].gap == pytest.approx(0.25)
    with pytest.raises(ValueError):
        with_gaps([])


def test_report_refuses_mixed_sources():
    a = ResultSet("x", [MetricRow("A", 0.8, 0, 0, 0, 0, 1, "x")])
    b = ResultSet("y", [MetricRow("B", 0.7, 0, 0, 0, 0, 1, "y")])
    with pytest.raises(ValueError, match="different sequence files"):
        report(a, b)
    merged = report(a, ResultSet("x", [MetricRow("B", 0.4, 0, 0, 0, 0, 1, "x")]))
    assert [r.gap for r in merged] == [0.0, 0.5]


def test_same_seed_gives_identical_files(tmp_path):
    cfg = EnvConfig()
    d1 = write_sequences(tmp_path / "a.jsonl", cfg, generate_sequences(cfg, 3, 20, 5), 5)
    d2 = write_sequences(tmp_path / "b.jsonl", cfg, generate_sequences(cfg, 3, 20, 5), 5)
    assert d1 == d2
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    d3 = write_sequences(tmp_path / "c.jsonl", cfg, generate_sequences(cfg, 3, 20, 6), 6)
    assert d3 != d1


def test_sequence_file_round_trip(tmp_path):
    cfg = EnvConfig(setting=3)
    seqs = generate_sequences(cfg, 2, 15, 0)
    digest = write_sequences(tmp_path / "s.jsonl", cfg, seqs, 0)
    sf = read_sequences(tmp_path / "s.jsonl")
    assert sf.config == cfg and sf.sequences == seqs and sf.digest == digest
    with pytest.raises(ValueError):
        (tmp_path / "bad.jsonl").write_text(json.dumps({"format": "other"}) + "\n")
        read_sequences(tmp_path / "bad.jsonl")


def test_sequences_follow_the_online_stream():
    cfg = EnvConfig()
    seq = generate_sequences(cfg, 1, 10, 42)[0]
    env = PackingEnv(cfg, 42)
    assert seq[0] == env.item and seq[1:] == [env._draw() for _ in range(9)]


def test_sequence_and_seed_runs_agree():
    cfg = EnvConfig()
    seqs = generate_sequences(cfg, 3, 120, 0)
    a = run_experiment(["DBL"], cfg, [0, 1, 2])
    b = run_experiment(["DBL"], cfg, [0, 1, 2], seqs)
    assert [r.utilization for r in a] == [r.utilization for r in b]


def test_run_experiment_rejects_bad_method():
    with pytest.raises(ValueError):
        run_experiment(["Magic"], EnvConfig(), [0])
    with pytest.raises(ValueError):
        run_experiment(["DBL"], EnvConfig(), [0, 1], [[]])


def test_config_digest_depends_on_seeds():
    cfg = EnvConfig()
    assert config_digest(cfg, [0, 1]) != config_digest(cfg, [0, 2])
    assert config_digest(cfg, [0, 1]).startswith("seeds:")


def test_outputs(tmp_path):
    eps = [EpisodeRow("A", 0, 0, 0.5, 10, 10, 0.1), EpisodeRow("A", 1, 1, 0.7, 12, 12, 0.2),
           EpisodeRow("B", 0, 0, 0.6, 11, 11, 0.1)]
    rows = metrics_from_episodes(eps, "src")
    assert [r.method for r in rows] == ["A", "B"]
    assert rows[0].gap == 0 and rows[1].gap == 0
    table = format_table(rows)
    assert "Uti." in table and "60.0%" in table
    assert rows_to_csv(rows).splitlines()[0].startswith("method,uti,var")
    paths = write_results(tmp_path / "out" / "run", rows, eps)
    assert [p.name for p in paths] == ["run.csv", "run.json", "run.episodes.csv"]
    assert json.loads(paths[1].read_text())[0]["source"] == "src"
    assert np.isclose(eps[0].time_per_decision, 0.01)
