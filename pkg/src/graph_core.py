"""
Graph and dataset representation, synthetic generators and the on-disk format
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from config import REFERENCE_DATASETS, SEED_STREAMS, ensure_dir
from errors import DatasetFormatError

logger = logging.getLogger("pipegnn.graph")

DATASET_FILES = ("graph.txt", "features.f32", "labels.u32", "masks.u8", "meta.json")
MASK_UNUSED, MASK_TRAIN, MASK_VAL, MASK_TEST = 0, 1, 2, 3


@dataclass(frozen=True)
class Graph:
    """Undirected graph in CSR form; both directions of every edge are stored"""
    num_vertices: int
    num_edges: int
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[v]:self.csr_offsets[v + 1]]

    def edge_sources(self) -> np.ndarray:
        """Source vertex of every stored (directed) adjacency entry"""
        return np.repeat(np.arange(self.num_vertices, dtype=np.int64), self.degrees)

    def edge_list(self) -> Tuple[np.ndarray, np.ndarray]:
        """Canonical undirected edges (u < v), sorted by (u, v)"""
        src = self.edge_sources()
        keep = src < self.csr_neighbors
        return src[keep], self.csr_neighbors[keep]

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(self.csr_neighbors.size, dtype=np.float64)
        return sp.csr_matrix((data, self.csr_neighbors, self.csr_offsets),
                             shape=(self.num_vertices, self.num_vertices))

    @classmethod
    def from_edges(cls, num_vertices: int, src: np.ndarray, dst: np.ndarray) -> "Graph":
        """Build a graph from possibly directed, duplicated edges (self-loops dropped)"""
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("edge endpoint arrays differ in length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_vertices):
            raise ValueError(f"edge endpoint outside [0, {num_vertices})")
        keep = src != dst
        src, dst = src[keep], dst[keep]
        keys = np.unique(np.concatenate([src * num_vertices + dst, dst * num_vertices + src]))
        rows, cols = keys // num_vertices, keys % num_vertices
        offsets = np.zeros(num_vertices + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_vertices), out=offsets[1:])
        return cls(num_vertices, int(keys.size // 2), offsets, cols.astype(np.int64))


@dataclass(frozen=True)
class Dataset:
    """Graph plus vertex features, labels and disjoint split masks"""
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = self.graph.num_vertices
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must have {n} rows, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have length {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        overlap = (self.train_mask.astype(int) + self.val_mask.astype(int) + self.test_mask.astype(int)) > 1
        if overlap.any():
            raise ValueError("train/val/test masks overlap")

    @property
    def num_vertices(self) -> int:
        return self.graph.num_vertices

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def mask_codes(self) -> np.ndarray:
        codes = np.zeros(self.num_vertices, dtype=np.uint8)
        codes[self.train_mask] = MASK_TRAIN
        codes[self.val_mask] = MASK_VAL
        codes[self.test_mask] = MASK_TEST
        return codes


@dataclass(frozen=True)
class NormAdj:
    """
    Weighted sparse propagation operator in CSR form.

    Used for the symmetric-normalized GCN operator and for the neighbor-mean
    operator of GraphSage. Scipy matrices are cached per dtype; the arrays
    themselves never change after construction.
    """
    num_vertices: int
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray
    weights: np.ndarray
    self_loops: bool
    _cache: Dict[Tuple[str, str], sp.csr_matrix] = field(default_factory=dict, repr=False, compare=False)

    def weight(self, u: int, v: int) -> float:
        lo, hi = self.csr_offsets[u], self.csr_offsets[u + 1]
        pos = lo + np.searchsorted(self.csr_neighbors[lo:hi], v)
        if pos < hi and self.csr_neighbors[pos] == v:
            return float(self.weights[pos])
        return 0.0

    def matrix(self, dtype=np.float64) -> sp.csr_matrix:
        key = ("fwd", np.dtype(dtype).str)
        if key not in self._cache:
            self._cache[key] = sp.csr_matrix(
                (self.weights.astype(dtype), self.csr_neighbors, self.csr_offsets),
                shape=(self.num_vertices, self.num_vertices))
        return self._cache[key]

    def adjoint(self, dtype=np.float64) -> sp.csr_matrix:
        """Transpose operator, with sorted column indices per row"""
        key = ("adj", np.dtype(dtype).str)
        if key not in self._cache:
            at = self.matrix(dtype).transpose().tocsr()
            at.sort_indices()
            self._cache[key] = at
        return self._cache[key]

    def rows(self, rows: np.ndarray, dtype=np.float64) -> sp.csr_matrix:
        return self.matrix(dtype)[rows]

    def adjoint_rows(self, rows: np.ndarray, dtype=np.float64) -> sp.csr_matrix:
        return self.adjoint(dtype)[rows]

    def is_symmetric(self) -> bool:
        m = self.matrix()
        return (m != m.T).nnz == 0


def normalize_adjacency(graph: Graph, self_loops: bool = True) -> NormAdj:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2, or D^-1/2 A D^-1/2 without self-loops"""
    n = graph.num_vertices
    deg = graph.degrees.astype(np.int64)
    if self_loops:
        adj = (graph.to_scipy() + sp.identity(n, format="csr")).tocsr()
        adj.sort_indices()
        deg = deg + 1
    else:
        adj = graph.to_scipy()
    offsets = adj.indptr.astype(np.int64)
    neighbors = adj.indices.astype(np.int64)
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
    # the integer product keeps weight(u, v) == weight(v, u) bit for bit
    weights = 1.0 / np.sqrt((deg[src] * deg[neighbors]).astype(np.float64))
    return NormAdj(n, offsets, neighbors, weights, self_loops)


def mean_adjacency(graph: Graph) -> NormAdj:
    """Row-normalized neighbor mean (GraphSage aggregator); isolated rows stay empty"""
    deg = graph.degrees.astype(np.float64)
    src = graph.edge_sources()
    weights = 1.0 / deg[src] if src.size else np.zeros(0)
    return NormAdj(graph.num_vertices, graph.csr_offsets.copy(), graph.csr_neighbors.copy(),
                   weights, False)


def _pairs_from_upper_index(n: int, idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map linear indices of the strict upper triangle to (i, j) with i < j"""
    rows = np.arange(n, dtype=np.int64)
    starts = rows * (2 * n - rows - 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    j = idx - starts[i] + i + 1
    return i, j


def _sample_upper(n: int, p: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    total = n * (n - 1) // 2
    count = int(rng.binomial(total, p)) if total else 0
    if count == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    idx = np.sort(rng.choice(total, size=count, replace=False)).astype(np.int64)
    return _pairs_from_upper_index(n, idx)


def generate_er(n: int, p: float, seed: int) -> Graph:
    """Erdős–Rényi G(n, p): each unordered pair kept independently with probability p"""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be between 0 and 1")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    src, dst = _sample_upper(n, p, rng)
    return Graph.from_edges(n, src, dst)


def _split_masks(groups, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded 60/20/20 split applied independently to each vertex group"""
    train, val, test = (np.zeros(n, dtype=bool) for _ in range(3))
    for members in groups:
        order = rng.permutation(np.asarray(members, dtype=np.int64))
        n_train = int(0.6 * order.size)
        n_val = int(0.2 * order.size)
        train[order[:n_train]] = True
        val[order[n_train:n_train + n_val]] = True
        test[order[n_train + n_val:]] = True
    return train, val, test


def generate_sbm(num_blocks: int, block_size: int, p_in: float, p_out: float, seed: int,
                 feature_noise: float = 0.5, extra_features: int = 4) -> Dataset:
    """
    Stochastic block model with planted labels.

    Labels are block ids; features are the one-hot block id followed by
    `extra_features` pure-noise columns, all perturbed by Gaussian noise.
    """
    for name, prob in (("p_in", p_in), ("p_out", p_out)):
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"{name} must be between 0 and 1")
    if p_in <= p_out:
        raise ValueError("p_in must be greater than p_out")
    if num_blocks < 1 or block_size < 1:
        raise ValueError("num_blocks and block_size must be positive")

    n = num_blocks * block_size
    rng = np.random.default_rng(seed)
    src_parts, dst_parts = [], []
    for b in range(num_blocks):
        i, j = _sample_upper(block_size, p_in, rng)
        src_parts.append(i + b * block_size)
        dst_parts.append(j + b * block_size)
    pair_count = block_size * block_size
    for a in range(num_blocks):
        for b in range(a + 1, num_blocks):
            count = int(rng.binomial(pair_count, p_out))
            if count == 0:
                continue
            idx = np.sort(rng.choice(pair_count, size=count, replace=False)).astype(np.int64)
            src_parts.append(idx // block_size + a * block_size)
            dst_parts.append(idx % block_size + b * block_size)
    graph = Graph.from_edges(n, np.concatenate(src_parts), np.concatenate(dst_parts))

    labels = np.arange(n, dtype=np.int64) // block_size
    feat_rng = np.random.default_rng([seed, SEED_STREAMS["features"]])
    features = np.zeros((n, num_blocks + extra_features), dtype=np.float32)
    features[np.arange(n), labels] = 1.0
    features += feature_noise * feat_rng.standard_normal(features.shape).astype(np.float32)

    split_rng = np.random.default_rng([seed, SEED_STREAMS["split"]])
    blocks = [np.arange(b * block_size, (b + 1) * block_size) for b in range(num_blocks)]
    train, val, test = _split_masks(blocks, n, split_rng)
    return Dataset(graph, features, labels, num_blocks, train, val, test)


def dataset_from_graph(graph: Graph, num_features: int, num_classes: int, seed: int) -> Dataset:
    """Wrap a bare graph with seeded Gaussian features, random labels and a 60/20/20 split"""
    if num_features < 1 or num_classes < 1:
        raise ValueError("num_features and num_classes must be positive")
    n = graph.num_vertices
    rng = np.random.default_rng([seed, SEED_STREAMS["features"]])
    features = rng.standard_normal((n, num_features)).astype(np.float32)
    labels = rng.integers(0, num_classes, size=n).astype(np.int64)
    train, val, test = _split_masks([np.arange(n)], n, np.random.default_rng([seed, SEED_STREAMS["split"]]))
    return Dataset(graph, features, labels, num_classes, train, val, test)


def generate_like(name: str, seed: int, scale: float = 1.0, num_features: Optional[int] = None) -> Dataset:
    """ER dataset with the size, average degree and label space of a reference dataset"""
    if name not in REFERENCE_DATASETS:
        raise ValueError(f"unknown reference dataset {name!r}; choose from {sorted(REFERENCE_DATASETS)}")
    if not 0.0 < scale <= 1.0:
        raise ValueError("scale must lie in (0, 1]")
    ref = REFERENCE_DATASETS[name]
    n = max(2, int(round(ref["num_vertices"] * scale)))
    p = min(1.0, ref["avg_degree"] / (n - 1))
    graph = generate_er(n, p, seed)
    return dataset_from_graph(graph, num_features or ref["num_features"], ref["num_classes"], seed)


def _require_files(path: Path) -> None:
    missing = [name for name in DATASET_FILES if not (path / name).exists()]
    if missing:
        raise DatasetFormatError(f"dataset directory {path} is missing {', '.join(missing)}")


def _read_binary(path: Path, dtype: str, expected: int, what: str) -> np.ndarray:
    data = np.fromfile(path, dtype=dtype)
    if data.size != expected:
        raise DatasetFormatError(f"{what}: expected {expected} values, found {data.size}")
    return data


def load_dataset(path) -> Dataset:
    """Load a dataset directory (graph.txt, features.f32, labels.u32, masks.u8, meta.json)"""
    path = Path(path)
    _require_files(path)
    with open(path / "meta.json") as f:
        meta = json.load(f)
    try:
        n, m = int(meta["num_vertices"]), int(meta["num_edges"])
        f_dim, c = int(meta["num_features"]), int(meta["num_classes"])
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(f"meta.json is incomplete: {e}") from e

    tokens = (path / "graph.txt").read_text().split()
    if len(tokens) < 2:
        raise DatasetFormatError("graph.txt has no 'N M' header")
    try:
        values = np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as e:
        raise DatasetFormatError(f"graph.txt contains a non-integer token: {e}") from e
    header_n, header_m = int(values[0]), int(values[1])
    if header_n != n or header_m != m:
        raise DatasetFormatError(f"graph.txt header ({header_n}, {header_m}) disagrees with meta.json ({n}, {m})")
    edges = values[2:]
    if edges.size != 2 * m:
        raise DatasetFormatError(f"graph.txt: expected {m} edge lines, found {edges.size / 2:g}")
    edges = edges.reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise DatasetFormatError("graph.txt references a vertex outside [0, N)")
    graph = Graph.from_edges(n, edges[:, 0], edges[:, 1])

    features = _read_binary(path / "features.f32", "<f4", n * f_dim, "features.f32").reshape(n, f_dim)
    labels = _read_binary(path / "labels.u32", "<u4", n, "labels.u32").astype(np.int64)
    if n and labels.max() >= c:
        raise DatasetFormatError(f"labels.u32 contains label {labels.max()} >= num_classes {c}")
    codes = _read_binary(path / "masks.u8", "u1", n, "masks.u8")
    if n and codes.max() > MASK_TEST:
        raise DatasetFormatError("masks.u8 values must be 0..3")

    dataset = Dataset(graph, features.astype(np.float32), labels, c,
                      codes == MASK_TRAIN, codes == MASK_VAL, codes == MASK_TEST)
    logger.debug(f"Loaded {path}: N={n}, |E|={graph.num_edges}, F={f_dim}, C={c}")
    return dataset


def save_dataset(dataset: Dataset, path) -> Path:
    """Write a dataset directory in the canonical format"""
    path = ensure_dir(Path(path))
    graph = dataset.graph
    src, dst = graph.edge_list()
    lines = [f"{graph.num_vertices} {graph.num_edges}"]
    lines.extend(f"{u} {v}" for u, v in zip(src.tolist(), dst.tolist()))
    (path / "graph.txt").write_text("\n".join(lines) + "\n")
    dataset.features.astype("<f4").tofile(path / "features.f32")
    dataset.labels.astype("<u4").tofile(path / "labels.u32")
    dataset.mask_codes().tofile(path / "masks.u8")
    meta = {
        "num_vertices": graph.num_vertices,
        "num_edges": graph.num_edges,
        "num_features": dataset.num_features,
        "num_classes": dataset.num_classes,
    }
    with open(path / "meta.json", "w") as f:
        json.dump(meta, f, indent=2)
    return path
