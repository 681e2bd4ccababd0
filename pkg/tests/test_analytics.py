import numpy as np
import pytest

from analytics import (CommModelInput, bubble_analysis, boundary_sweep, crossover_report, depth_sweep,
                       ideal_bubble, measured_bubble, reference_depth_ratios, reference_pipeline_table, report_row,
                       to_gib, volume_graph, volume_graph_exact, volume_graph_worst_case, volume_hybrid,
                       volume_pipeline, write_rows)
from sim_clock import TraceEvent


def test_published_pipeline_volumes_within_two_percent():
    table = reference_pipeline_table()
    assert len(table) == 8
    for row in table:
        assert row["rel_error"] < 0.02, row


def test_pipeline_volume_examples():
    reddit = volume_pipeline(CommModelInput(233000, 32, 100, num_stages=8))
    assert round(to_gib(reddit), 3) == 1.215
    squirrel = volume_pipeline(CommModelInput(5200, 32, 1000, num_stages=8, vecs=2))
    assert to_gib(squirrel) == pytest.approx(0.5425, abs=2e-4)
    assert volume_pipeline(CommModelInput(5200, 32, 1000)) == 0


def test_graph_volume_forms_agree():
    assert volume_graph(CommModelInput(8, 2, 2, alpha=0.75)) == 192
    assert volume_graph_exact([2, 2, 2], 2, 2) == 192
    assert volume_graph(CommModelInput(100, 4, 8)) == 0
    assert volume_graph_worst_case(8, 2, 2, 3) == 2 * 4 * 2 * 2 * 16


def test_hybrid_degenerates():
    pipe_only = CommModelInput(1000, 8, 16, num_stages=4, group_size=1, alpha=0.0)
    assert volume_hybrid(pipe_only) == volume_pipeline(pipe_only)
    graph_only = CommModelInput(1000, 8, 16, num_stages=1, group_size=4, alpha=1.3)
    assert volume_hybrid(graph_only) == volume_graph(graph_only)


def test_input_validation():
    with pytest.raises(ValueError):
        CommModelInput(0, 1, 1)
    with pytest.raises(ValueError):
        CommModelInput(10, 1, 1, alpha=-0.1)


def test_depth_sweep_is_linear():
    rows, r2 = depth_sweep(5200, 1000, 8, 2.22, [8, 16, 32, 64, 128], vecs=2)
    assert r2 > 0.999
    assert len({r["pipeline_bytes"] for r in rows}) == 1
    ratios = [b["graph_bytes"] / a["graph_bytes"] for a, b in zip(rows, rows[1:])]
    np.testing.assert_allclose(ratios, 2.0)
    with pytest.raises(ValueError):
        depth_sweep(100, 4, 8, 1.0, [4])


def test_reference_depth_progression_doubles():
    for ratio in reference_depth_ratios("squirrel"):
        assert abs(ratio - 2.0) / 2.0 < 0.05


@pytest.mark.parametrize("alpha,layers,best", [(0.01, 4, "graph"), (2.61, 32, "pipeline"), (0.99, 32, "pipeline")])
def test_crossover_ordering(alpha, layers, best):
    report = crossover_report(10000, layers, 64, 8, alpha)
    assert report.best == best
    assert report.comparisons[0].winner == best


def test_crossover_tie_and_hybrid():
    tie = crossover_report(1000, 7, 16, 8, 1.0)
    assert tie.ties == [("graph", "pipeline")]
    assert tie.comparisons[0].margin == 0.0
    report = crossover_report(1000, 8, 16, 16, 2.0, hybrid_stages=2, alpha_hybrid=0.5)
    assert report.ordering[0] == "hybrid"
    assert set(report.volumes) == {"graph", "pipeline", "hybrid"}


def test_boundary_sweep_grows_with_workers():
    rows = boundary_sweep(10000, 0.002, [2, 4, 8])
    alphas = [r["alpha"] for r in rows]
    assert alphas == sorted(alphas)
    assert all(0 < r["fraction_of_outside"] < 1 for r in rows)


def test_ideal_bubble():
    assert ideal_bubble(1, 4) == 0.0
    assert ideal_bubble(8, 32) == pytest.approx(7 / 39)
    with pytest.raises(ValueError):
        ideal_bubble(0, 4)


def _gpipe_trace(stages, chunks):
    """Forward then reverse backward with unit forward and double backward cost"""
    events = []
    for s in range(stages):
        for k in range(chunks):
            t = float(s + k)
            events.append(TraceEvent(s, 0, t, t + 1, "compute", k))
        fwd_end = float(stages - 1 + chunks)
        for j in range(chunks):
            t = fwd_end + 2 * (stages - 1 - s) + 2 * j
            events.append(TraceEvent(s, 0, t, t + 2, "compute", chunks - 1 - j))
    return events


@pytest.mark.parametrize("stages,chunks", [(2, 8), (4, 16), (8, 32)])
def test_measured_bubble_on_synthetic_schedule(stages, chunks):
    trace = _gpipe_trace(stages, chunks)
    assert measured_bubble(trace, stages) == pytest.approx(ideal_bubble(stages, chunks), abs=1e-9)
    analysis = bubble_analysis(trace, stages, chunks, stages)
    assert analysis.ideal_bubble == pytest.approx((stages - 1) / (chunks + stages - 1))
    assert list(analysis.per_epoch) == [0]


def test_bubble_counts_silent_workers_and_rejects_empty_trace():
    trace = [TraceEvent(0, 0, 0.0, 4.0, "compute"), TraceEvent(0, 0, 4.0, 5.0, "idle")]
    assert measured_bubble(trace, 2) == pytest.approx(0.5)
    assert measured_bubble([TraceEvent(0, 0, 0.0, 1.0, "send")]) == 0.0
    with pytest.raises(ValueError):
        bubble_analysis([])


def test_report_rows_and_csv(tmp_path):
    inp = CommModelInput(8, 2, 2, alpha=0.75)
    row = report_row("graph", inp, 192, 192)
    assert row["rel_error"] == 0.0
    assert report_row("graph", inp, 192, None)["measured_bytes"] == ""
    path = write_rows([row], tmp_path / "report.csv")
    header = path.read_text().splitlines()[0]
    assert header.startswith("mode,N,L,H")
