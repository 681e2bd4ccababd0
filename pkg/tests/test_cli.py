import json

import pytest

import run_pipegnn
import staleness
from errors import DeadlockError
from run_pipegnn import ExperimentOrchestrator, main, parse_generator

GENERATOR = "sbm:2x20:0.5:0.05"
SMALL = ["--generator", GENERATOR, "--model", "gcn", "--layers", "2", "--hidden", "4", "--epochs", "2"]


def _metrics_body(path):
    """metrics.csv with the mode column dropped"""
    return [line.split(",", 1)[1] for line in (path / "metrics.csv").read_text().splitlines()]


def test_gen_and_partition(tmp_path, capsys):
    data = tmp_path / "sbm"
    assert main(["gen", "--sbm", "3x20", "--p-in", "0.4", "--p-out", "0.01", "--seed", "2", "--out", str(data)]) == 0
    assert (data / "graph.txt").exists()
    parts = tmp_path / "parts.txt"
    assert main(["partition", "--dataset", str(data), "--parts", "3", "--chunks", "6", "--out", str(parts)]) == 0
    assert parts.read_text().splitlines()[0] == "3"
    assert (tmp_path / "parts.chunks").exists()
    assert "alpha=" in capsys.readouterr().out


def test_train_writes_run_files(tmp_path):
    out = tmp_path / "run"
    assert main(["train", *SMALL, "--mode", "pipeline", "--stages", "2", "--chunks", "2", "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("mode,epoch,train_loss")
    assert len(lines) == 3
    assert lines[1].startswith("pipeline,0,")
    config = json.loads((out / "config.json").read_text())
    assert config["stages"] == 2 and config["workers"] == 2
    assert (out / "trace.jsonl").stat().st_size > 0
    assert (out / "comm_report.csv").read_text().startswith("epoch,tag,link_class,bytes,gib")
    assert (out / "checkpoints" / "stage0.ckpt").exists()
    assert (out / "checkpoints" / "stage1.ckpt").exists()


def test_single_stage_pipeline_matches_sequential_csv(tmp_path):
    seq, pipe = tmp_path / "seq", tmp_path / "pipe"
    assert main(["train", *SMALL, "--mode", "sequential", "--out", str(seq)]) == 0
    assert main(["train", *SMALL, "--mode", "pipeline", "--stages", "1", "--chunks", "1", "--synchronous",
                 "--no-shuffle", "--out", str(pipe)]) == 0
    assert _metrics_body(seq) == _metrics_body(pipe)


def test_config_file_reproduces_run(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["train", *SMALL, "--mode", "hybrid", "--stages", "2", "--group-size", "2",
                 "--out", str(first)]) == 0
    assert main(["train", "--config", str(first / "config.json"), "--out", str(second)]) == 0
    assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()


def test_bad_configuration_exits_with_usage_error(tmp_path):
    assert main(["train", *SMALL, "--mode", "pipeline", "--group-size", "2", "--out", str(tmp_path)]) == 2
    assert main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 2
    assert main(["train", "--generator", "sbm:2:0.5", "--out", str(tmp_path)]) == 2
    assert main(["analyze", "--out", str(tmp_path)]) == 2


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    def deadlock(self, cfg, dataset=None, staleness=None):
        raise DeadlockError({0: (1, "Control")})

    monkeypatch.setattr(ExperimentOrchestrator, "run_training", deadlock)
    assert main(["train", *SMALL, "--out", str(tmp_path)]) == 3


def test_version_mismatch_exits_with_runtime_error(tmp_path, monkeypatch):
    monkeypatch.setattr(staleness, "snapshot_version", lambda epoch_number, fix_alpha: 7)
    assert main(["train", *SMALL, "--mode", "pipeline", "--stages", "2", "--chunks", "2",
                 "--out", str(tmp_path)]) == 3


def test_gen_is_deterministic(tmp_path):
    args = ["gen", "--sbm", "3x20", "--p-in", "0.4", "--p-out", "0.01", "--seed", "4", "--out"]
    assert main([*args, str(tmp_path / "a")]) == 0
    assert main([*args, str(tmp_path / "b")]) == 0
    for name in ("graph.txt", "features.f32", "labels.u32", "masks.u8", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.parametrize("p_out", ["0.4", "0.5"])
def test_gen_rejects_p_out_not_below_p_in(tmp_path, p_out):
    assert main(["gen", "--sbm", "2x10", "--p-in", "0.4", "--p-out", p_out, "--out", str(tmp_path / "d")]) == 2


def test_partition_rejects_more_parts_than_vertices(tmp_path):
    data = tmp_path / "sbm"
    assert main(["gen", "--sbm", "2x10", "--p-in", "0.5", "--p-out", "0.05", "--out", str(data)]) == 0
    assert main(["partition", "--dataset", str(data), "--parts", "21", "--out", str(tmp_path / "p.txt")]) == 2


def test_analyze_reference_table_and_crossover(tmp_path, capsys):
    assert main(["analyze", "--reference-table", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "analysis.csv").read_text().splitlines()
    assert len(rows) == 9
    assert main(["analyze", "--crossover", "--like", "physics", "--layers", "32", "--stages", "8",
                 "--out", str(tmp_path / "x")]) == 0
    assert "ordering: pipeline < graph" in capsys.readouterr().out


def test_analyze_expected_boundary(tmp_path):
    assert main(["analyze", "--expected-boundary", "1000000", "8", "2e-5", "--out", str(tmp_path)]) == 0
    header, row = (tmp_path / "analysis.csv").read_text().splitlines()
    values = dict(zip(header.split(","), row.split(",")))
    assert round(float(values["fraction_of_outside"]), 2) == 0.92


def test_compare_writes_report(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", *SMALL, "--stages", "2", "--modes", "sequential,pipeline", "--seeds", "0,1",
                 "--out", str(out)]) == 0
    assert len((out / "comparison.csv").read_text().splitlines()) == 5
    assert (out / "pipeline-seed1" / "metrics.csv").exists()
    html = (out / "compare_report.html").read_text()
    assert "Pipelined GNN Training Comparison" in html


def test_parse_generator_variants():
    assert parse_generator("er:30:0.2:5:3", seed=0).num_features == 5
    assert parse_generator("like:squirrel:0.02", seed=0).num_vertices == 104
    with pytest.raises(run_pipegnn.ConfigError):
        parse_generator("grid:3", seed=0)
