import numpy as np
import pytest

from conftest import make_graph
from graph_core import generate_er, generate_sbm
from partition import (ChunkPlan, balance_bounds, chunk_plan_from_assignment, edge_cut, expected_boundary,
                       load_assignment, make_chunks, monte_carlo_boundary, partition_from_assignment,
                       partition_vertices, random_partition, replication_factor, save_assignment,
                       shuffle_chunk_order)


def test_forced_g8_boundaries(g8, g8_forced_assignment):
    part = partition_from_assignment(g8, g8_forced_assignment, 3)
    assert [list(b) for b in part.boundary_sets] == [[3, 5], [2, 5], [2, 4]]
    assert [list(v) for v in part.inner_sets] == [[0, 1, 2], [3, 4], [5, 6, 7]]
    assert replication_factor(part) == pytest.approx(0.75)
    assert edge_cut(g8, part.assignment) == 3


def test_k4_split_into_pairs():
    k4 = make_graph(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    part = partition_from_assignment(k4, np.array([0, 0, 1, 1]), 2)
    assert replication_factor(part) == pytest.approx(1.0)


def test_single_part_has_no_boundary(g8):
    part = partition_vertices(g8, 1, seed=0)
    assert part.boundary_sizes() == [0]
    assert np.all(part.assignment == 0)


def test_boundary_vertices_are_outside_and_adjacent(sbm_small):
    part = partition_vertices(sbm_small.graph, 4, seed=1)
    for i, boundary in enumerate(part.boundary_sets):
        assert np.all(part.assignment[boundary] != i)
        for v in boundary:
            assert np.any(part.assignment[sbm_small.graph.neighbors(v)] == i)


def test_integer_balance_bounds():
    assert balance_bounds(10, 3) == (3, 4)
    assert balance_bounds(800, 8) == (95, 105)


def test_partitioner_is_balanced_and_beats_random():
    ds = generate_sbm(8, 40, 0.3, 0.01, seed=6)
    part = partition_vertices(ds.graph, 8, seed=2)
    assert part.is_balanced()
    baseline = partition_from_assignment(ds.graph, random_partition(ds.num_vertices, 8, seed=2), 8)
    assert replication_factor(part) < replication_factor(baseline)


def test_partition_rejects_too_many_parts(g8):
    with pytest.raises(ValueError):
        partition_vertices(g8, 9, seed=0)


def test_chunks_recover_disconnected_blocks():
    ds = generate_sbm(4, 30, 0.5, 0.0, seed=9)
    plan = make_chunks(ds.graph, 4, seed=3)
    majority = [np.bincount(ds.labels[chunk], minlength=4).argmax() for chunk in plan.chunks]
    assert sorted(majority) == [0, 1, 2, 3]
    assert sum(c.size for c in plan.chunks) == ds.num_vertices


def test_chunks_down_to_single_vertices(g8):
    plan = make_chunks(g8, 8, seed=0)
    assert sorted(c.tolist() for c in plan.chunks) == [[v] for v in range(8)]
    with pytest.raises(ValueError):
        make_chunks(g8, 9, seed=0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_components_split_without_boundary(two_triangles, seed):
    part = partition_vertices(two_triangles, 2, seed=seed)
    assert part.boundary_sizes() == [0, 0]
    assert sorted(v.tolist() for v in part.inner_sets) == [[0, 1, 2], [3, 4, 5]]
    assert edge_cut(two_triangles, part.assignment) == 0


@pytest.mark.parametrize("seed", range(5))
def test_boundary_sets_match_brute_force(seed):
    graph = generate_er(40, 0.1, seed=seed)
    assignment = np.random.default_rng(seed).integers(0, 4, size=40)
    part = partition_from_assignment(graph, assignment, 4)
    for i in range(4):
        expected = sorted({int(v) for u in range(40) if assignment[u] == i
                           for v in graph.neighbors(u) if assignment[v] != i})
        assert part.boundary_sets[i].tolist() == expected


def test_chunk_plan_requires_cover():
    with pytest.raises(ValueError):
        ChunkPlan(2, np.array([0, 1, 1]), [np.array([0]), np.array([1])])


def test_shuffle_is_a_seeded_permutation():
    plan = chunk_plan_from_assignment(np.arange(12) % 6, 6)
    a = shuffle_chunk_order(plan, epoch=3, seed=1)
    assert sorted(a) == list(range(6))
    assert np.array_equal(a, shuffle_chunk_order(plan, epoch=3, seed=1))
    assert list(plan.order_for_epoch(3, 1, shuffle=False)) == list(range(6))
    orders = {tuple(shuffle_chunk_order(plan, epoch=e, seed=1)) for e in range(10)}
    assert len(orders) > 1


def test_expected_boundary_fraction():
    n, m = 10 ** 6, 8
    assert round(expected_boundary(n, m, 2e-5) / (n - n / m), 2) == 0.92
    assert expected_boundary(100, 1, 0.5) == 0.0
    with pytest.raises(ValueError):
        expected_boundary(100, 4, 1.5)


def test_monte_carlo_matches_closed_form():
    sample = monte_carlo_boundary(2000, 8, 0.005, samples=20, seed=11)
    assert abs(sample.mean - expected_boundary(2000, 8, 0.005)) <= 4 * sample.stderr + 1.0


@pytest.mark.slow
def test_monte_carlo_matches_closed_form_at_scale():
    sample = monte_carlo_boundary(10000, 8, 0.002, samples=200, seed=0)
    assert abs(sample.mean - expected_boundary(10000, 8, 0.002)) <= 3 * sample.stderr + 1.0


def test_assignment_file_round_trip(tmp_path):
    assignment = random_partition(50, 4, seed=0)
    save_assignment(tmp_path / "parts.txt", 4, assignment)
    num_parts, loaded = load_assignment(tmp_path / "parts.txt")
    assert num_parts == 4
    assert np.array_equal(loaded, assignment)
    assert list(np.bincount(assignment)) == [13, 13, 12, 12]


def test_assignment_file_rejects_bad_part(tmp_path):
    (tmp_path / "bad.txt").write_text("2\n0\n5\n")
    with pytest.raises(ValueError):
        load_assignment(tmp_path / "bad.txt")


def test_shuffle_puts_every_chunk_first_equally_often():
    plan = chunk_plan_from_assignment(np.arange(8) % 4, 4)
    first = np.bincount([shuffle_chunk_order(plan, epoch=e, seed=0)[0] for e in range(10_000)], minlength=4)
    assert np.all(np.abs(first / 10_000 - 0.25) <= 0.02)
