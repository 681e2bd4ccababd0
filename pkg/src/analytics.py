"""
Closed-form communication volumes, crossover between parallelism modes,
and pipeline bubble analysis
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import (BYTES_PER_VALUE, GIB, REFERENCE_DATASETS, REFERENCE_DEPTH_GRAPH_GIB,
                    REFERENCE_PIPELINE_GIB, ensure_dir)
from partition import expected_boundary
from sim_clock import TraceEvent

logger = logging.getLogger("pipegnn.analytics")

REPORT_COLUMNS = ["mode", "N", "L", "H", "S", "W", "alpha", "vecs", "predicted_bytes", "measured_bytes", "rel_error"]


@dataclass
class CommModelInput:
    num_vertices: int
    num_layers: int
    hidden: int
    num_stages: int = 1
    group_size: int = 1
    alpha: float = 0.0
    vecs: int = 1
    bytes_per_value: int = BYTES_PER_VALUE

    def __post_init__(self):
        if min(self.num_vertices, self.num_layers, self.hidden, self.num_stages,
               self.group_size, self.vecs, self.bytes_per_value) < 1:
            raise ValueError("N, L, H, S, W, vecs and bytes_per_value must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    @property
    def num_workers(self) -> int:
        return self.num_stages * self.group_size


def to_gib(nbytes: float) -> float:
    return nbytes / GIB


def volume_pipeline(inp: CommModelInput) -> int:
    """2 (S-1) N H vecs values: every vertex crosses every stage boundary once each way"""
    return 2 * (inp.num_stages - 1) * inp.num_vertices * inp.hidden * inp.vecs * inp.bytes_per_value


def volume_graph(inp: CommModelInput) -> int:
    """2 alpha L N H values, alpha N standing in for the summed boundary sizes"""
    return int(round(2 * inp.alpha * inp.num_layers * inp.num_vertices * inp.hidden * inp.bytes_per_value))


def volume_graph_exact(boundary_sizes: Iterable[int], num_layers: int, hidden: int,
                       bytes_per_value: int = BYTES_PER_VALUE) -> int:
    return 2 * bytes_per_value * num_layers * hidden * int(sum(boundary_sizes))


def volume_graph_worst_case(num_vertices: int, num_layers: int, hidden: int, num_workers: int,
                            bytes_per_value: int = BYTES_PER_VALUE) -> int:
    """Every vertex outside V_i is a boundary vertex of part i"""
    return 2 * bytes_per_value * num_layers * hidden * num_vertices * (num_workers - 1)


def volume_hybrid(inp: CommModelInput) -> int:
    return volume_graph(inp) + volume_pipeline(inp)


@dataclass
class Comparison:
    left: str
    right: str
    left_term: float
    right_term: float
    winner: str
    margin: float
    inequality: str


@dataclass
class CrossoverReport:
    volumes: Dict[str, int]
    ordering: List[str]
    ties: List[Tuple[str, str]]
    comparisons: List[Comparison]
    notes: List[str] = field(default_factory=list)

    @property
    def best(self) -> str:
        return self.ordering[0]


def _compare(left: str, right: str, left_term: float, right_term: float, inequality: str) -> Comparison:
    if np.isclose(left_term, right_term, rtol=0.0, atol=1e-12):
        winner = "tie"
    else:
        winner = left if left_term < right_term else right
    return Comparison(left, right, left_term, right_term, winner, abs(left_term - right_term), inequality)


def crossover_report(num_vertices: int, num_layers: int, hidden: int, pipeline_stages: int,
                     alpha_graph: float, hybrid_stages: Optional[int] = None,
                     alpha_hybrid: Optional[float] = None, vecs: int = 1) -> CrossoverReport:
    """
    Compare graph, pipeline and (optionally) hybrid volumes in units of N H.

    Graph beats pipeline when alpha_g L < (S_p - 1) vecs; hybrid beats graph
    when alpha_h L + (S_h - 1) vecs < alpha_g L.
    """
    N, L, H = num_vertices, num_layers, hidden
    terms = {"graph": alpha_graph * L, "pipeline": (pipeline_stages - 1) * vecs}
    volumes = {
        "graph": volume_graph(CommModelInput(N, L, H, alpha=alpha_graph, vecs=vecs)),
        "pipeline": volume_pipeline(CommModelInput(N, L, H, num_stages=pipeline_stages, vecs=vecs)),
    }
    comparisons = [_compare("graph", "pipeline", terms["graph"], terms["pipeline"],
                            "alpha_g * L  vs  (S_p - 1) * vecs")]
    if hybrid_stages is not None and alpha_hybrid is not None:
        terms["hybrid"] = alpha_hybrid * L + (hybrid_stages - 1) * vecs
        volumes["hybrid"] = volume_hybrid(CommModelInput(N, L, H, num_stages=hybrid_stages,
                                                         alpha=alpha_hybrid, vecs=vecs))
        comparisons.append(_compare("hybrid", "graph", terms["hybrid"], terms["graph"],
                                    "alpha_h * L + (S_h - 1) * vecs  vs  alpha_g * L"))
        comparisons.append(_compare("hybrid", "pipeline", terms["hybrid"], terms["pipeline"],
                                    "alpha_h * L + (S_h - 1) * vecs  vs  (S_p - 1) * vecs"))
    ordering = sorted(volumes, key=lambda mode: (terms[mode], mode))
    ties = [(c.left, c.right) for c in comparisons if c.winner == "tie"]
    notes = []
    if ordering[0] == "pipeline" and alpha_graph * L > 0:
        notes.append("Volume favours pipelining; on graphs with very light per-vertex compute the "
                     "pipeline can still run slower, since chunking lowers GPU utilisation.")
    if ordering[0] == "graph":
        notes.append("Sparse boundaries: exchanging boundary rows every layer is cheaper than "
                     "streaming every vertex through the stage boundaries.")
    return CrossoverReport(volumes, ordering, ties, comparisons, notes)


def reference_pipeline_table(num_stages: int = 8) -> List[Dict]:
    """Pipeline volumes recomputed from the reference dataset sizes, next to the published GiB"""
    rows = []
    for (name, kind), published in sorted(REFERENCE_PIPELINE_GIB.items()):
        ds = REFERENCE_DATASETS[name]
        vecs = 2 if kind == "gcnii" else 1
        predicted = volume_pipeline(CommModelInput(ds["num_vertices"], 1, ds["hidden"],
                                                   num_stages=num_stages, vecs=vecs))
        gib = to_gib(predicted)
        rows.append({"dataset": name, "model": kind, "N": ds["num_vertices"], "H": ds["hidden"],
                     "S": num_stages, "vecs": vecs, "predicted_bytes": predicted,
                     "predicted_gib": gib, "published_gib": published,
                     "rel_error": abs(gib - published) / published})
    return rows


def _r_squared(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2 or np.ptp(np.asarray(y, dtype=float)) == 0:
        return 1.0
    return float(stats.linregress(x, y).rvalue ** 2)


def depth_sweep(num_vertices: int, hidden: int, num_stages: int, alpha: float,
                depths: Sequence[int], vecs: int = 1) -> Tuple[List[Dict], float]:
    """Predicted pipeline and graph volumes per depth, plus R^2 of graph volume against L"""
    rows = []
    for L in depths:
        if num_stages > L:
            raise ValueError(f"cannot split {L} layers over {num_stages} stages")
        inp = CommModelInput(num_vertices, L, hidden, num_stages=num_stages, alpha=alpha, vecs=vecs)
        rows.append({"L": L, "pipeline_bytes": volume_pipeline(inp), "graph_bytes": volume_graph(inp)})
    return rows, _r_squared([r["L"] for r in rows], [r["graph_bytes"] for r in rows])


def reference_depth_ratios(name: str) -> List[float]:
    """Consecutive ratios of the published graph-parallel volumes as depth doubles"""
    table = REFERENCE_DEPTH_GRAPH_GIB[name]
    depths = sorted(table)
    return [table[b] / table[a] for a, b in zip(depths, depths[1:])]


def boundary_sweep(n: int, p: float, worker_counts: Sequence[int]) -> List[Dict]:
    rows = []
    for m in worker_counts:
        eb = expected_boundary(n, m, p)
        outside = n - n / m
        rows.append({"m": m, "expected_boundary": eb,
                     "fraction_of_outside": eb / outside if outside else 0.0,
                     "alpha": m * eb / n})
    return rows


# Bubbles

def ideal_bubble(num_stages: int, num_chunks: int) -> float:
    if num_stages < 1 or num_chunks < 1:
        raise ValueError("num_stages and num_chunks must be positive")
    return (num_stages - 1) / (num_chunks + num_stages - 1)


def measured_bubble(events: Sequence[TraceEvent], num_workers: Optional[int] = None) -> float:
    """Idle share of the compute span: sum over workers of (span - busy) / (workers * span)"""
    compute = [e for e in events if e.kind == "compute"]
    if not compute:
        return 0.0
    start = min(e.t_start for e in compute)
    span = max(e.t_end for e in compute) - start
    if span <= 0:
        return 0.0
    busy: Dict[int, float] = {}
    for e in compute:
        busy[e.worker] = busy.get(e.worker, 0.0) + e.duration
    # workers without any compute event count as idle for the whole span
    ids = list(range(num_workers)) if num_workers else sorted(busy)
    idle = sum(span - busy.get(w, 0.0) for w in ids)
    return idle / (len(ids) * span)


@dataclass
class BubbleAnalysis:
    measured_bubble: float
    ideal_bubble: Optional[float]
    per_epoch: Dict[int, float]


def bubble_analysis(trace: Sequence[TraceEvent], num_stages: Optional[int] = None,
                    num_chunks: Optional[int] = None, num_workers: Optional[int] = None) -> BubbleAnalysis:
    if not trace:
        raise ValueError("empty trace")
    epochs = sorted({e.epoch for e in trace})
    per_epoch = {epoch: measured_bubble([e for e in trace if e.epoch == epoch], num_workers) for epoch in epochs}
    ideal = ideal_bubble(num_stages, num_chunks) if num_stages and num_chunks else None
    return BubbleAnalysis(float(np.mean(list(per_epoch.values()))), ideal, per_epoch)


# Reports

def report_row(mode: str, inp: CommModelInput, predicted: int, measured: Optional[int]) -> Dict:
    rel = abs(measured - predicted) / predicted if measured is not None and predicted else 0.0
    return {"mode": mode, "N": inp.num_vertices, "L": inp.num_layers, "H": inp.hidden,
            "S": inp.num_stages, "W": inp.group_size, "alpha": inp.alpha, "vecs": inp.vecs,
            "predicted_bytes": predicted, "measured_bytes": "" if measured is None else measured,
            "rel_error": rel}


def write_rows(rows: List[Dict], path, columns: Optional[List[str]] = None) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path
