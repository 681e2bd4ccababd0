import math

import numpy as np
import pytest

from analytics import (CommModelInput, _r_squared, bubble_analysis, depth_sweep, ideal_bubble, volume_graph_exact,
                       volume_hybrid, volume_pipeline)
from comm_fabric import assign_groups
from engines import (HybridTrainer, TrainOptions, assign_stages, train_graph_parallel, train_hybrid,
                     train_pipeline, train_sequential)
from graph_core import generate_like
from nn_core import ModelConfig
from partition import chunk_plan_from_assignment, make_chunks, partition_from_assignment, partition_vertices, \
    replication_factor
from sim_clock import CostModel
from staleness import ABLATION_PRESETS, StalenessConfig

SYNC = StalenessConfig(shuffle_chunks=False, synchronous_mode=True)


def _model(ds, kind="gcn", layers=4, hidden=8, **kwargs):
    return ModelConfig(kind, layers, hidden, ds.num_features, ds.num_classes, **kwargs)


def _one_chunk(ds):
    return chunk_plan_from_assignment(np.zeros(ds.num_vertices, dtype=np.int64), 1)


def _round_robin_chunks(ds, k):
    return chunk_plan_from_assignment(np.arange(ds.num_vertices) % k, k)


def _rows(result):
    return [m.as_row("-") for m in result.metrics]


def _assert_same_params(a, b):
    assert sorted(a) == sorted(b)
    for name in a:
        assert np.array_equal(a[name], b[name]), name


def test_stage_assignment():
    assert assign_stages(5, 2).ranges == ((1, 3), (4, 5))
    assert assign_stages(8, 8).stage_of_layer(8) == 7
    with pytest.raises(ValueError):
        assign_stages(2, 3)


def test_single_stage_pipeline_reproduces_sequential_bitwise(sbm_small):
    cfg = _model(sbm_small)
    seq = train_sequential(sbm_small, cfg, 3, seed=0)
    pipe = train_pipeline(sbm_small, _one_chunk(sbm_small), assign_stages(4, 1), SYNC, cfg, 3, seed=0)
    assert _rows(pipe) == _rows(seq)
    _assert_same_params(pipe.params, seq.params)


@pytest.mark.parametrize("kind", ["gcn", "sage", "gcnii"])
def test_two_stage_sync_pipeline_reproduces_sequential_bitwise(sbm_small, kind):
    cfg = _model(sbm_small, kind)
    seq = train_sequential(sbm_small, cfg, 3, seed=1)
    pipe = train_pipeline(sbm_small, _one_chunk(sbm_small), assign_stages(4, 2), SYNC, cfg, 3, seed=1)
    assert [m.train_loss for m in pipe.metrics] == [m.train_loss for m in seq.metrics]
    assert [m.val_acc for m in pipe.metrics] == [m.val_acc for m in seq.metrics]
    _assert_same_params(pipe.params, seq.params)


@pytest.mark.parametrize("stages,chunks", [(2, 8), (4, 16)])
def test_chunked_sync_pipeline_reproduces_sequential_bitwise(sbm_small, stages, chunks):
    cfg = _model(sbm_small, "gcn", layers=8)
    seq = train_sequential(sbm_small, cfg, 20, seed=2)
    pipe = train_pipeline(sbm_small, make_chunks(sbm_small.graph, chunks, seed=0), assign_stages(8, stages), SYNC,
                          cfg, 20, seed=2)
    assert [m.train_loss for m in pipe.metrics] == [m.train_loss for m in seq.metrics]
    assert [m.test_acc for m in pipe.metrics] == [m.test_acc for m in seq.metrics]
    _assert_same_params(pipe.params, seq.params)


def test_threaded_runtime_matches_scheduler(sbm_small):
    cfg = _model(sbm_small)
    plan, stages = _round_robin_chunks(sbm_small, 4), assign_stages(4, 2)
    staleness = StalenessConfig(fix_alpha=2)
    det = train_pipeline(sbm_small, plan, stages, staleness, cfg, 3, seed=3)
    threaded = train_pipeline(sbm_small, plan, stages, staleness, cfg, 3, seed=3,
                              options=TrainOptions(deterministic=False))
    assert [m.train_loss for m in threaded.metrics] == [m.train_loss for m in det.metrics]
    _assert_same_params(threaded.params, det.params)
    assert [r.total for r in threaded.comm_reports] == [r.total for r in det.comm_reports]


def test_first_epoch_loss_is_log_classes(sbm_small):
    cfg = _model(sbm_small, "sage")
    result = train_pipeline(sbm_small, _round_robin_chunks(sbm_small, 4), assign_stages(4, 2),
                            StalenessConfig(), cfg, 1, seed=0)
    assert result.final.train_loss == pytest.approx(math.log(sbm_small.num_classes), rel=1e-12)


def test_graph_parallel_boundary_bytes_on_g8(g8_dataset, g8_forced_assignment):
    part = partition_from_assignment(g8_dataset.graph, g8_forced_assignment, 3)
    cfg = _model(g8_dataset, layers=2, hidden=2)
    result = train_graph_parallel(g8_dataset, part, cfg, 2, seed=0)
    for m in result.metrics:
        assert m.comm_bytes_graph == 192
        assert m.comm_bytes_pipeline == 0
        assert m.comm_bytes_weightsync > 0
    assert volume_graph_exact(part.boundary_sizes(), 2, 2) == 192
    seq = train_sequential(g8_dataset, cfg, 2, seed=0)
    assert result.metrics[0].train_loss == seq.metrics[0].train_loss


def test_graph_parallel_tracks_sequential(sbm_small):
    cfg = _model(sbm_small, "gcn")
    options = TrainOptions(optimizer="sgd", lr=0.1)
    part = partition_vertices(sbm_small.graph, 4, seed=0)
    result = train_graph_parallel(sbm_small, part, cfg, 3, seed=4, options=options)
    seq = train_sequential(sbm_small, cfg, 3, seed=4, options=options)
    np.testing.assert_allclose([m.train_loss for m in result.metrics], [m.train_loss for m in seq.metrics],
                               rtol=1e-5)
    for name in seq.params:
        np.testing.assert_allclose(result.params[name], seq.params[name], rtol=1e-4, atol=1e-6)
    for w in range(1, 4):
        _assert_same_params(result.worker_params[w], result.worker_params[0])


def test_pipeline_bytes_match_closed_form(sbm_small):
    cfg = _model(sbm_small, "gcnii")
    result = train_pipeline(sbm_small, _round_robin_chunks(sbm_small, 4), assign_stages(4, 2),
                            StalenessConfig(), cfg, 2, seed=0)
    expected = volume_pipeline(CommModelInput(200, 4, 8, num_stages=2, vecs=2))
    assert expected == 25600
    assert [m.comm_bytes_pipeline for m in result.metrics] == [expected, expected]
    assert all(m.comm_bytes_graph == 0 and m.comm_bytes_weightsync == 0 for m in result.metrics)


def test_hybrid_ledger_identity_and_replicas(sbm_small):
    cfg = _model(sbm_small, layers=4, hidden=4)
    part = partition_vertices(sbm_small.graph, 2, seed=1)
    plan = make_chunks(sbm_small.graph, 4, seed=1)
    result = train_hybrid(sbm_small, part, plan, assign_stages(4, 2), assign_groups(4, 4, 2, 2),
                          StalenessConfig(fix_alpha=2), cfg, 3, seed=5)
    graph_bytes = volume_graph_exact(part.boundary_sizes(), 4, 4)
    pipeline_bytes = volume_pipeline(CommModelInput(200, 4, 4, num_stages=2))
    for m in result.metrics:
        assert m.comm_bytes_graph == graph_bytes
        assert m.comm_bytes_pipeline == pipeline_bytes
    inp = CommModelInput(200, 4, 4, num_stages=2, group_size=2, alpha=replication_factor(part))
    assert volume_hybrid(inp) == graph_bytes + pipeline_bytes
    _assert_same_params(result.worker_params[0], result.worker_params[1])
    _assert_same_params(result.worker_params[2], result.worker_params[3])
    assert result.num_workers == 4


@pytest.mark.parametrize("stages,chunks", [(2, 8), (4, 16), (8, 32)])
def test_uniform_cost_bubble_matches_schedule(sbm_small, stages, chunks):
    cfg = _model(sbm_small, layers=stages, hidden=4)
    options = TrainOptions(cost_model=CostModel.uniform())
    result = train_pipeline(sbm_small, _round_robin_chunks(sbm_small, chunks), assign_stages(stages, stages),
                            StalenessConfig(), cfg, 1, seed=0, options=options)
    assert result.final.bubble_fraction == pytest.approx(ideal_bubble(stages, chunks), abs=1e-9)
    analysis = bubble_analysis(result.trace, stages, chunks, stages)
    assert analysis.measured_bubble == pytest.approx(analysis.ideal_bubble, abs=1e-9)


DEPTHS = [8, 16, 32, 64, 128]


def test_pipeline_bytes_do_not_depend_on_depth(sbm_small):
    measured = []
    for layers in DEPTHS:
        result = train_pipeline(sbm_small, _round_robin_chunks(sbm_small, 2), assign_stages(layers, 2),
                                StalenessConfig(), _model(sbm_small, layers=layers, hidden=4), 1, seed=0)
        measured.append(result.final.comm_bytes_pipeline)
    assert measured == [volume_pipeline(CommModelInput(200, 8, 4, num_stages=2))] * len(DEPTHS)


def test_graph_bytes_scale_linearly_with_depth(sbm_small):
    part = partition_vertices(sbm_small.graph, 2, seed=0)
    measured = [train_graph_parallel(sbm_small, part, _model(sbm_small, layers=layers, hidden=4), 1,
                                     seed=0).final.comm_bytes_graph for layers in DEPTHS]
    assert measured == [volume_graph_exact(part.boundary_sizes(), layers, 4) for layers in DEPTHS]
    assert _r_squared(DEPTHS, measured) > 0.999
    rows, r2 = depth_sweep(200, 4, 2, replication_factor(part), DEPTHS)
    assert len({r["pipeline_bytes"] for r in rows}) == 1
    assert r2 > 0.999


def test_stale_training_runs_clean_across_snapshots(sbm_small):
    cfg = _model(sbm_small, "gcnii")
    staleness = StalenessConfig(fix_alpha=3, historical_gradients=True)
    result = train_pipeline(sbm_small, make_chunks(sbm_small.graph, 4, seed=2), assign_stages(4, 2),
                            staleness, cfg, 7, seed=6, options=TrainOptions(lr=0.05))
    losses = [m.train_loss for m in result.metrics]
    assert all(np.isfinite(losses))
    assert min(losses[1:]) < losses[0]
    assert max(result.peak_stash_bytes.values()) > 0


def test_trainer_rejects_mismatched_layout(sbm_small):
    part = partition_vertices(sbm_small.graph, 3, seed=0)
    with pytest.raises(ValueError):
        HybridTrainer(sbm_small, _model(sbm_small), assign_stages(4, 2), assign_groups(4, 4, 2, 2), part,
                      _one_chunk(sbm_small), StalenessConfig(), seed=0)


def test_per_epoch_stash_peaks_cover_owned_rows(sbm_small):
    # float32 rows of width 8 (features, hidden) and 4 (classes) over all 200 vertices
    result = train_pipeline(sbm_small, _round_robin_chunks(sbm_small, 4), assign_stages(4, 2), SYNC,
                            _model(sbm_small), 3, seed=0)
    assert result.epoch_peak_stash_bytes == {0: [38400] * 3, 1: [35200] * 3}
    assert result.peak_stash_bytes == {0: 38400, 1: 35200}


@pytest.mark.slow
def test_squirrel_sized_pipeline_bytes():
    ds = generate_like("squirrel", seed=0, num_features=16)
    result = train_pipeline(ds, _round_robin_chunks(ds, 8), assign_stages(8, 8), StalenessConfig(),
                            _model(ds, layers=8, hidden=1000), 1, seed=0)
    assert result.final.comm_bytes_pipeline == 291_200_000


def _benchmark_runs(ds, seed, staleness, epochs=200):
    cfg = _model(ds, "gcnii", layers=8, hidden=64)
    return train_pipeline(ds, make_chunks(ds.graph, 16, seed=seed), assign_stages(8, 4), staleness, cfg, epochs,
                          seed=seed, options=TrainOptions(lr=0.01))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pipelined_training_matches_graph_parallel_accuracy(sbm_benchmark, seed):
    cfg = _model(sbm_benchmark, "gcnii", layers=8, hidden=64)
    part = partition_vertices(sbm_benchmark.graph, 4, seed=seed)
    graph = train_graph_parallel(sbm_benchmark, part, cfg, 200, seed=seed, options=TrainOptions(lr=0.01))
    pipe = _benchmark_runs(sbm_benchmark, seed, StalenessConfig())
    assert graph.final.test_acc >= 0.95
    assert pipe.final.test_acc >= 0.95
    assert abs(pipe.final.test_acc - graph.final.test_acc) <= 0.01


@pytest.mark.slow
def test_historical_gradients_make_validation_noisier(sbm_benchmark):
    noisier = 0
    for seed in range(3):
        tails = {}
        for name in ("all", "historical-grads"):
            result = _benchmark_runs(sbm_benchmark, seed, ABLATION_PRESETS[name])
            tails[name] = np.var([m.val_acc for m in result.metrics[-50:]])
        noisier += tails["historical-grads"] > tails["all"]
    assert noisier >= 2
