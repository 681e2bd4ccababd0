"""
Simulated time for worker traces and bubble analysis; never used for correctness
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from config import COST_MODEL, ensure_dir


@dataclass
class CostModel:
    """
    Compute and transfer costs in simulated seconds.

    mode "rows" charges seconds_per_row_layer for every vertex row and layer;
    mode "uniform" charges seconds_per_chunk_layer per chunk and layer
    regardless of chunk size. Backward costs backward_ratio times forward.
    """
    mode: str = COST_MODEL["mode"]
    seconds_per_row_layer: float = COST_MODEL["seconds_per_row_layer"]
    seconds_per_chunk_layer: float = COST_MODEL["seconds_per_chunk_layer"]
    backward_ratio: float = COST_MODEL["backward_ratio"]
    bandwidth: Dict[str, float] = field(default_factory=lambda: dict(COST_MODEL["bandwidth"]))

    def __post_init__(self):
        if self.mode not in ("rows", "uniform"):
            raise ValueError(f"unknown cost mode {self.mode!r}")

    @classmethod
    def uniform(cls, unit: float = 1.0, backward_ratio: float = 2.0, zero_comm: bool = True) -> "CostModel":
        bandwidth = {"intra-node": math.inf, "inter-node": math.inf} if zero_comm else dict(COST_MODEL["bandwidth"])
        return cls(mode="uniform", seconds_per_chunk_layer=unit, backward_ratio=backward_ratio, bandwidth=bandwidth)

    def compute_time(self, rows: int, layers: int, backward: bool = False) -> float:
        if layers <= 0:
            return 0.0
        base = self.seconds_per_chunk_layer * layers if self.mode == "uniform" else \
            self.seconds_per_row_layer * rows * layers
        return base * self.backward_ratio if backward else base

    def transfer_time(self, nbytes: int, link_class: str) -> float:
        bw = self.bandwidth.get(link_class, math.inf)
        if nbytes == 0 or math.isinf(bw):
            return 0.0
        return nbytes / bw


@dataclass(frozen=True)
class TraceEvent:
    worker: int
    epoch: int
    t_start: float
    t_end: float
    kind: str  # compute | send | recv | idle
    chunk: int = -1
    layer_lo: int = -1
    layer_hi: int = -1

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


class SimClock:
    """Per-worker simulated clock; events are only recorded in the training phase"""

    def __init__(self, worker: int, cost_model: CostModel):
        self.worker = worker
        self.cost = cost_model
        self.now = 0.0
        self.epoch = 0
        self.training = True
        self.events: List[TraceEvent] = []

    def _record(self, t_start: float, t_end: float, kind: str, chunk: int, lo: int, hi: int) -> None:
        self.events.append(TraceEvent(self.worker, self.epoch, t_start, t_end, kind, chunk, lo, hi))

    def compute(self, rows: int, layers: int, chunk: int, lo: int, hi: int, backward: bool = False) -> None:
        if not self.training:
            return
        duration = self.cost.compute_time(rows, layers, backward)
        self._record(self.now, self.now + duration, "compute", chunk, lo, hi)
        self.now += duration

    def send(self, nbytes: int, link_class: str, chunk: int = -1, lo: int = -1, hi: int = -1) -> float:
        """Record a send and return the simulated arrival time at the receiver"""
        if not self.training:
            return self.now
        arrival = self.now + self.cost.transfer_time(nbytes, link_class)
        self._record(self.now, arrival, "send", chunk, lo, hi)
        return arrival

    def receive(self, arrival: float, chunk: int = -1, lo: int = -1, hi: int = -1) -> None:
        if not self.training:
            return
        if arrival > self.now:
            self._record(self.now, arrival, "idle", chunk, lo, hi)
            self.now = arrival
        self._record(self.now, self.now, "recv", chunk, lo, hi)


def merge_events(clocks: Iterable[SimClock]) -> List[TraceEvent]:
    events = [e for clock in clocks for e in clock.events]
    return sorted(events, key=lambda e: (e.epoch, e.worker, e.t_start, e.t_end))


def epoch_span(events: List[TraceEvent], epoch: int) -> float:
    compute = [e for e in events if e.epoch == epoch and e.kind == "compute"]
    if not compute:
        return 0.0
    return max(e.t_end for e in compute) - min(e.t_start for e in compute)


def write_trace(events: List[TraceEvent], path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w") as f:
        for event in events:
            f.write(json.dumps(asdict(event)) + "\n")
    return path


def read_trace(path) -> List[TraceEvent]:
    events = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(TraceEvent(**json.loads(line)))
    return events


def events_for(events: List[TraceEvent], epoch: Optional[int] = None) -> List[TraceEvent]:
    return [e for e in events if epoch is None or e.epoch == epoch]
