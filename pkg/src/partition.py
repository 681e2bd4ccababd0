"""
Vertex partitioning into worker partitions and pipeline chunks, boundary sets,
replication factor and the random-graph boundary analysis
"""
import heapq
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.sparse.csgraph import shortest_path

from config import BALANCE_EPS, SEED_STREAMS, ensure_dir
from graph_core import Graph, generate_er

logger = logging.getLogger("pipegnn.partition")


@dataclass(frozen=True)
class Partition:
    """Disjoint inner sets V_i and the derived boundary sets B_i"""
    num_parts: int
    assignment: np.ndarray
    inner_sets: List[np.ndarray]
    boundary_sets: List[np.ndarray]

    @property
    def num_vertices(self) -> int:
        return int(self.assignment.size)

    def boundary_sizes(self) -> List[int]:
        return [int(b.size) for b in self.boundary_sets]

    def is_balanced(self, eps: float = BALANCE_EPS) -> bool:
        lower, upper = balance_bounds(self.num_vertices, self.num_parts, eps)
        sizes = [s.size for s in self.inner_sets]
        return min(sizes) >= lower and max(sizes) <= upper


@dataclass(frozen=True)
class ChunkPlan:
    """K disjoint vertex chunks fed through the pipeline each epoch"""
    num_chunks: int
    chunk_of: np.ndarray
    chunks: List[np.ndarray]

    def __post_init__(self):
        covered = sum(c.size for c in self.chunks)
        if covered != self.chunk_of.size or self.num_chunks != len(self.chunks):
            raise ValueError("chunks must be disjoint and cover every vertex")

    def order_for_epoch(self, epoch: int, seed: int, shuffle: bool = True) -> np.ndarray:
        if not shuffle:
            return np.arange(self.num_chunks)
        return shuffle_chunk_order(self, epoch, seed)


def balance_bounds(n: int, k: int, eps: float = BALANCE_EPS) -> Tuple[int, int]:
    """Smallest and largest part sizes allowed, relaxed to what integer sizes can meet"""
    upper = max(math.ceil(n / k), math.floor((1 + eps) * n / k))
    lower = min(n // k, math.ceil((1 - eps) * n / k))
    return lower, upper


def partition_from_assignment(graph: Graph, assignment, num_parts: Optional[int] = None) -> Partition:
    """Build a Partition from an explicit vertex -> part assignment"""
    assignment = np.asarray(assignment, dtype=np.int64)
    n = graph.num_vertices
    if assignment.shape != (n,):
        raise ValueError(f"assignment must have length {n}")
    k = int(num_parts if num_parts is not None else (assignment.max() + 1 if n else 1))
    if n and (assignment.min() < 0 or assignment.max() >= k):
        raise ValueError(f"part ids must lie in [0, {k})")

    inner = [np.flatnonzero(assignment == i) for i in range(k)]
    src, dst = graph.edge_sources(), graph.csr_neighbors
    cross = assignment[src] != assignment[dst]
    keys = np.unique(assignment[src[cross]] * n + dst[cross])
    parts, verts = keys // max(n, 1), keys % max(n, 1)
    boundary = np.split(verts, np.searchsorted(parts, np.arange(1, k)))
    return Partition(k, assignment, inner, boundary)


def replication_factor(partition: Partition) -> float:
    """Σ_i |B_i| / N (master copies excluded)"""
    if partition.num_vertices == 0:
        return 0.0
    return sum(partition.boundary_sizes()) / partition.num_vertices


def edge_cut(graph: Graph, assignment: np.ndarray) -> int:
    """Number of undirected edges whose endpoints lie in different parts"""
    src, dst = graph.edge_list()
    return int(np.count_nonzero(assignment[src] != assignment[dst]))


def random_partition(n: int, num_parts: int, seed: int) -> np.ndarray:
    """Balanced random assignment, the baseline the partitioner must beat"""
    if num_parts > n:
        raise ValueError(f"cannot split {n} vertices into {num_parts} parts")
    rng = np.random.default_rng(seed)
    return rng.permutation(np.arange(n, dtype=np.int64) % num_parts)


def _target_sizes(n: int, k: int) -> List[int]:
    base, extra = divmod(n, k)
    return [base + 1 if i < extra else base for i in range(k)]


def _spread_seeds(graph: Graph, k: int, rng: np.random.Generator) -> List[int]:
    """First seed random, each next one as far (in hops) from the chosen seeds as possible"""
    csgraph = graph.to_scipy()
    seeds = [int(rng.integers(graph.num_vertices))]
    dist = shortest_path(csgraph, unweighted=True, indices=seeds[0])
    while len(seeds) < k:
        far = np.flatnonzero(dist == dist.max())
        nxt = int(far[rng.integers(far.size)])
        seeds.append(nxt)
        dist = np.minimum(dist, shortest_path(csgraph, unweighted=True, indices=nxt))
    return seeds


def _grow_regions(graph: Graph, seeds: List[int], targets: List[int]) -> np.ndarray:
    """Round-robin greedy growth: each part claims its best-connected frontier vertex"""
    n, k = graph.num_vertices, len(seeds)
    assignment = np.full(n, -1, dtype=np.int64)
    sizes = [0] * k
    heaps: List[list] = [[] for _ in range(k)]
    conn = [dict() for _ in range(k)]
    counter = 0
    next_free = 0

    def claim(part: int, v: int) -> None:
        nonlocal counter
        assignment[v] = part
        sizes[part] += 1
        for u in graph.neighbors(v).tolist():
            if assignment[u] < 0:
                c = conn[part].get(u, 0) + 1
                conn[part][u] = c
                heapq.heappush(heaps[part], (-c, counter, u))
                counter += 1

    for part, s in enumerate(seeds):
        claim(part, s)
    remaining = n - k
    while remaining > 0:
        for part in range(k):
            if sizes[part] >= targets[part] or remaining == 0:
                continue
            v = -1
            while heaps[part]:
                _, _, u = heapq.heappop(heaps[part])
                if assignment[u] < 0:
                    v = u
                    break
            if v < 0:
                # region exhausted its component: restart from the lowest free vertex
                while assignment[next_free] >= 0:
                    next_free += 1
                v = next_free
            claim(part, v)
            remaining -= 1
    return assignment


def _refine(graph: Graph, assignment: np.ndarray, k: int, eps: float) -> int:
    """One boundary sweep moving vertices to the part holding most of their neighbors"""
    lower, upper = balance_bounds(graph.num_vertices, k, eps)
    sizes = np.bincount(assignment, minlength=k)
    moved = 0
    for v in range(graph.num_vertices):
        nbrs = graph.neighbors(v)
        own = assignment[v]
        if nbrs.size == 0 or np.all(assignment[nbrs] == own):
            continue
        counts = np.bincount(assignment[nbrs], minlength=k)
        own_count = counts[own]
        counts[own] = -1
        best = int(np.argmax(counts))
        if counts[best] > own_count and sizes[best] + 1 <= upper and sizes[own] - 1 >= lower:
            assignment[v] = best
            sizes[best] += 1
            sizes[own] -= 1
            moved += 1
    return moved


def partition_vertices(graph: Graph, num_parts: int, seed: int, eps: float = BALANCE_EPS) -> Partition:
    """Seeded greedy region growing from spread-out seeds plus one refinement sweep"""
    n = graph.num_vertices
    if num_parts < 1 or num_parts > n:
        raise ValueError(f"num_parts must lie in [1, {n}], got {num_parts}")
    if num_parts == 1:
        return partition_from_assignment(graph, np.zeros(n, dtype=np.int64), 1)
    rng = np.random.default_rng(seed)
    seeds = _spread_seeds(graph, num_parts, rng)
    assignment = _grow_regions(graph, seeds, _target_sizes(n, num_parts))
    moved = _refine(graph, assignment, num_parts, eps)
    partition = partition_from_assignment(graph, assignment, num_parts)
    logger.debug(f"Partitioned N={n} into {num_parts} parts: cut={edge_cut(graph, assignment)}, "
                 f"refinement moved {moved}, alpha={replication_factor(partition):.4f}")
    return partition


def make_chunks(graph: Graph, num_chunks: int, seed: int) -> ChunkPlan:
    """Locality-aware chunking with the same partitioner"""
    if num_chunks < 1 or num_chunks > graph.num_vertices:
        raise ValueError(f"num_chunks must lie in [1, {graph.num_vertices}], got {num_chunks}")
    part = partition_vertices(graph, num_chunks, seed)
    return ChunkPlan(num_chunks, part.assignment, part.inner_sets)


def chunk_plan_from_assignment(chunk_of, num_chunks: Optional[int] = None) -> ChunkPlan:
    chunk_of = np.asarray(chunk_of, dtype=np.int64)
    k = int(num_chunks if num_chunks is not None else chunk_of.max() + 1)
    return ChunkPlan(k, chunk_of, [np.flatnonzero(chunk_of == c) for c in range(k)])


def shuffle_chunk_order(plan: ChunkPlan, epoch: int, seed: int) -> np.ndarray:
    """Deterministic per-(seed, epoch) permutation of chunk ids"""
    rng = np.random.default_rng([seed, SEED_STREAMS["shuffle"], epoch])
    return rng.permutation(plan.num_chunks)


def expected_boundary(n: int, m: int, p: float) -> float:
    """E[|B_i|] = (n - n/m)(1 - (1-p)^(n/m)) for G(n, p) with balanced parts"""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be between 0 and 1")
    inner = n / m
    return (n - inner) * (1.0 - (1.0 - p) ** inner)


@dataclass
class BoundarySample:
    mean: float
    stderr: float
    per_sample: np.ndarray


def monte_carlo_boundary(n: int, m: int, p: float, samples: int, seed: int) -> BoundarySample:
    """Empirical mean |B_i| over seeded G(n, p) draws with a contiguous balanced partition"""
    if samples < 2:
        raise ValueError("need at least two samples")
    assignment = np.arange(n, dtype=np.int64) * m // n
    values = np.empty(samples)
    for s, child in enumerate(np.random.SeedSequence(seed).spawn(samples)):
        graph = generate_er(n, p, child)
        values[s] = np.mean(partition_from_assignment(graph, assignment, m).boundary_sizes())
    return BoundarySample(float(values.mean()), float(values.std(ddof=1) / math.sqrt(samples)), values)


def save_assignment(path, num_parts: int, assignment: np.ndarray) -> Path:
    """Text format: first line the part count, then one part id per vertex"""
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w") as f:
        f.write(f"{num_parts}\n")
        f.write("".join(f"{int(a)}\n" for a in assignment))
    return path


def load_assignment(path) -> Tuple[int, np.ndarray]:
    with open(path) as f:
        lines = f.read().split()
    if not lines:
        raise ValueError(f"{path} is empty")
    num_parts = int(lines[0])
    assignment = np.array([int(x) for x in lines[1:]], dtype=np.int64)
    if assignment.size and (assignment.min() < 0 or assignment.max() >= num_parts):
        raise ValueError(f"{path}: part id outside [0, {num_parts})")
    return num_parts, assignment
