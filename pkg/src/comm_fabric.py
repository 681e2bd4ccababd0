"""
Simulated multi-worker fabric: tagged channels, exact byte accounting,
link classes, worker grouping and the two execution runtimes
"""
import csv
import logging
import threading
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Generator, List, Optional, Tuple

import numpy as np

from config import BYTES_PER_VALUE, GIB, ID_BYTES, WATCHDOG_TIMEOUT_S, ensure_dir
from errors import ChannelClosed, CommError, DeadlockError

logger = logging.getLogger("pipegnn.fabric")


class Tag(str, Enum):
    FORWARD_EMB = "ForwardEmb"
    BACKWARD_GRAD = "BackwardGrad"
    GRAPH_BOUNDARY_FWD = "GraphBoundaryFwd"
    GRAPH_BOUNDARY_BWD = "GraphBoundaryBwd"
    WEIGHT_SYNC = "WeightSync"
    EVAL_EMB = "EvalEmb"
    CONTROL = "Control"


PIPELINE_TAGS = (Tag.FORWARD_EMB, Tag.BACKWARD_GRAD)
GRAPH_TAGS = (Tag.GRAPH_BOUNDARY_FWD, Tag.GRAPH_BOUNDARY_BWD)
LINK_CLASSES = ("intra-node", "inter-node")


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    tag: Tag
    epoch: int
    chunk: int = -1
    layer: int = -1
    vertex_ids: Optional[np.ndarray] = None
    payload: Tuple[np.ndarray, ...] = ()
    control: Optional[Dict[str, Any]] = None

    @property
    def data_bytes(self) -> int:
        if self.tag == Tag.CONTROL:
            return 0
        return sum(int(a.size) for a in self.payload) * BYTES_PER_VALUE

    @property
    def id_bytes(self) -> int:
        if self.tag == Tag.CONTROL or self.vertex_ids is None:
            return 0
        return int(self.vertex_ids.size) * ID_BYTES

    @property
    def byte_size(self) -> int:
        return self.data_bytes + self.id_bytes

    def copied(self) -> "Message":
        """Deep copy of the array payload so sender and receiver never share buffers"""
        ids = None if self.vertex_ids is None else np.array(self.vertex_ids, copy=True)
        return replace(self, vertex_ids=ids, payload=tuple(np.array(a, copy=True) for a in self.payload))


@dataclass(frozen=True)
class Recv:
    """Request yielded by a worker program: block until (src, tag) has a message for it"""
    src: int
    tag: Tag


@dataclass(frozen=True)
class GroupMap:
    num_workers: int
    workers_per_node: int
    groups: Tuple[Tuple[int, ...], ...]
    node_of: Tuple[int, ...]
    group_of: Tuple[int, ...]
    rank_in_group: Tuple[int, ...]

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def group_size(self) -> int:
        return len(self.groups[0])

    def worker(self, group: int, rank: int) -> int:
        return self.groups[group][rank]

    def link_class(self, a: int, b: int) -> str:
        return LINK_CLASSES[0] if self.node_of[a] == self.node_of[b] else LINK_CLASSES[1]

    def spanning_groups(self) -> int:
        return sum(1 for g in self.groups if len({self.node_of[w] for w in g}) > 1)


def assign_groups(num_workers: int, workers_per_node: int, num_stages: int, group_size: int) -> GroupMap:
    """
    Group workers so that groups stay inside a node whenever they fit.

    Each node is filled with as many whole groups as it can hold; the
    leftover workers of all nodes are pooled, in id order, into the remaining
    groups. Groups are numbered by their lowest worker id (group g = stage g).
    """
    if num_workers != num_stages * group_size:
        raise ValueError(f"num_workers ({num_workers}) must equal num_stages * group_size "
                         f"({num_stages} * {group_size})")
    if workers_per_node < 1 or group_size < 1:
        raise ValueError("workers_per_node and group_size must be positive")
    workers = list(range(num_workers))
    nodes = [workers[i:i + workers_per_node] for i in range(0, num_workers, workers_per_node)]
    groups: List[List[int]] = []
    if group_size <= workers_per_node:
        leftovers: List[int] = []
        for node in nodes:
            whole = len(node) // group_size
            groups.extend(node[j * group_size:(j + 1) * group_size] for j in range(whole))
            leftovers.extend(node[whole * group_size:])
        groups.extend(leftovers[i:i + group_size] for i in range(0, len(leftovers), group_size))
    else:
        groups = [workers[i:i + group_size] for i in range(0, num_workers, group_size)]
    groups.sort(key=min)

    group_of, rank_in_group = [0] * num_workers, [0] * num_workers
    for g, members in enumerate(groups):
        for r, w in enumerate(members):
            group_of[w], rank_in_group[w] = g, r
    return GroupMap(num_workers, workers_per_node, tuple(tuple(g) for g in groups),
                    tuple(w // workers_per_node for w in workers), tuple(group_of), tuple(rank_in_group))


@dataclass
class CommReport:
    epoch: int
    rows: List[Tuple[str, str, int]]  # (tag, link_class, bytes)
    id_bytes: int

    def by_tag(self) -> Dict[str, int]:
        totals: Dict[str, int] = defaultdict(int)
        for tag, _, nbytes in self.rows:
            totals[tag] += nbytes
        return dict(totals)

    def by_link(self) -> Dict[str, int]:
        totals: Dict[str, int] = defaultdict(int)
        for _, link, nbytes in self.rows:
            totals[link] += nbytes
        return dict(totals)

    @property
    def total(self) -> int:
        return sum(nbytes for _, _, nbytes in self.rows)

    def bytes_for(self, tags) -> int:
        names = {Tag(t).value for t in tags}
        return sum(nbytes for tag, _, nbytes in self.rows if tag in names)

    @property
    def pipeline_bytes(self) -> int:
        return self.bytes_for(PIPELINE_TAGS)

    @property
    def graph_bytes(self) -> int:
        return self.bytes_for(GRAPH_TAGS)

    @property
    def weightsync_bytes(self) -> int:
        return self.bytes_for([Tag.WEIGHT_SYNC])

    def to_csv_rows(self) -> List[List]:
        return [[self.epoch, tag, link, nbytes, nbytes / GIB] for tag, link, nbytes in self.rows]


class CommLedger:
    """Thread-safe per-(epoch, src, dst, tag) counters of sent and received bytes"""

    def __init__(self, group_map: Optional[GroupMap] = None):
        self.group_map = group_map
        self._lock = threading.Lock()
        self._sent: Dict[Tuple[int, int, int, str], List[int]] = defaultdict(lambda: [0, 0, 0])
        self._received: Dict[Tuple[int, int, int, str], List[int]] = defaultdict(lambda: [0, 0, 0])
        self._closed: set = set()

    def link_class(self, src: int, dst: int) -> str:
        if self.group_map is None:
            return LINK_CLASSES[0]
        return self.group_map.link_class(src, dst)

    @staticmethod
    def _bump(counter: List[int], msg: Message) -> None:
        counter[0] += msg.data_bytes
        counter[1] += msg.id_bytes
        counter[2] += 1

    def record_send(self, msg: Message) -> None:
        with self._lock:
            if msg.epoch in self._closed:
                raise CommError(f"send into closed epoch {msg.epoch}")
            self._bump(self._sent[(msg.epoch, msg.src, msg.dst, msg.tag.value)], msg)

    def record_recv(self, msg: Message) -> None:
        with self._lock:
            self._bump(self._received[(msg.epoch, msg.src, msg.dst, msg.tag.value)], msg)

    def epochs(self) -> List[int]:
        with self._lock:
            return sorted({key[0] for key in self._sent})

    def is_closed(self, epoch: int) -> bool:
        return epoch in self._closed

    def close_epoch(self, epoch: int) -> None:
        """Seal an epoch after checking bytes sent == bytes received on every channel"""
        with self._lock:
            keys = {k for k in self._sent if k[0] == epoch} | {k for k in self._received if k[0] == epoch}
            for key in sorted(keys):
                if self._sent.get(key, [0, 0, 0]) != self._received.get(key, [0, 0, 0]):
                    raise CommError(f"conservation violated on {key}: sent {self._sent.get(key)} "
                                    f"received {self._received.get(key)}")
            self._closed.add(epoch)

    def snapshot(self, epoch: int) -> Dict[Tuple[int, int, str], Tuple[int, int, int]]:
        with self._lock:
            return {(s, d, t): tuple(v) for (e, s, d, t), v in self._sent.items() if e == epoch}


def ledger_report(ledger: CommLedger, epoch: int) -> CommReport:
    """Per-epoch totals by tag and link class (data bytes; id framing reported separately)"""
    if not ledger.is_closed(epoch):
        raise CommError(f"epoch {epoch} is still open")
    totals = {(tag.value, link): 0 for tag in Tag for link in LINK_CLASSES}
    id_bytes = 0
    for (src, dst, tag), (data, ids, _) in ledger.snapshot(epoch).items():
        totals[(tag, ledger.link_class(src, dst))] += data
        id_bytes += ids
    rows = [(tag, link, nbytes) for (tag, link), nbytes in totals.items()]
    report = CommReport(epoch, rows, id_bytes)
    if sum(report.by_tag().values()) != report.total or sum(report.by_link().values()) != report.total:
        raise CommError(f"inconsistent report totals for epoch {epoch}")
    return report


def write_comm_report(reports: List[CommReport], path) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "tag", "link_class", "bytes", "gib"])
        for report in reports:
            writer.writerows(report.to_csv_rows())
    return path


class CommFabric:
    """FIFO channels per (src, dst, tag); usable from one thread or many"""

    def __init__(self, num_workers: int, ledger: CommLedger):
        self.num_workers = num_workers
        self.ledger = ledger
        self._channels: Dict[Tuple[int, int, Tag], deque] = defaultdict(deque)
        self._cond = threading.Condition()
        self._finished: set = set()

    def send(self, msg: Message, arrival: float = 0.0) -> None:
        if msg.src == msg.dst:
            raise CommError(f"worker {msg.src} cannot send to itself")
        if not (0 <= msg.dst < self.num_workers):
            raise CommError(f"unknown destination worker {msg.dst}")
        msg = msg.copied()
        with self._cond:
            if msg.src in self._finished:
                raise CommError(f"worker {msg.src} already finished")
            self._channels[(msg.src, msg.dst, msg.tag)].append((msg, arrival))
            self.ledger.record_send(msg)
            self._cond.notify_all()

    def _pop(self, dst: int, src: int, tag: Tag) -> Optional[Tuple[Message, float]]:
        queue = self._channels.get((src, dst, tag))
        if queue:
            item = queue.popleft()
            self.ledger.record_recv(item[0])
            return item
        if src in self._finished:
            raise ChannelClosed(f"worker {dst} waits on ({src}, {tag.value}) but worker {src} has finished")
        return None

    def try_recv(self, dst: int, src: int, tag: Tag) -> Optional[Tuple[Message, float]]:
        with self._cond:
            return self._pop(dst, src, tag)

    def recv(self, dst: int, src: int, tag: Tag, timeout: Optional[float] = None) -> Optional[Tuple[Message, float]]:
        """Blocking receive; returns None if nothing arrived within timeout"""
        with self._cond:
            item = self._pop(dst, src, tag)
            if item is None:
                self._cond.wait(timeout)
                item = self._pop(dst, src, tag)
            return item

    def close(self, worker: int) -> None:
        with self._cond:
            self._finished.add(worker)
            self._cond.notify_all()

    def pending(self) -> int:
        with self._cond:
            return sum(len(q) for q in self._channels.values())


WorkerProgram = Generator[Recv, Tuple[Message, float], None]


class DeterministicScheduler:
    """Runs worker programs on one thread, round-robin in worker-id order"""

    def __init__(self, fabric: CommFabric):
        self.fabric = fabric

    def _run_until_blocked(self, w: int, program: WorkerProgram, item) -> Optional[Recv]:
        while True:
            try:
                request = program.send(item)
            except StopIteration:
                self.fabric.close(w)
                return None
            item = self.fabric.try_recv(w, request.src, request.tag)
            if item is None:
                return request

    def run(self, programs: Dict[int, WorkerProgram]) -> None:
        waiting: Dict[int, Recv] = {}
        try:
            for w in sorted(programs):
                request = self._run_until_blocked(w, programs[w], None)
                if request is not None:
                    waiting[w] = request
            while waiting:
                progress = False
                for w in sorted(waiting):
                    request = waiting[w]
                    item = self.fabric.try_recv(w, request.src, request.tag)
                    if item is None:
                        continue
                    progress = True
                    nxt = self._run_until_blocked(w, programs[w], item)
                    if nxt is None:
                        del waiting[w]
                    else:
                        waiting[w] = nxt
                if not progress:
                    raise DeadlockError({w: (r.src, r.tag.value) for w, r in waiting.items()},
                                        f"{self.fabric.pending()} undelivered messages")
        finally:
            for program in programs.values():
                program.close()


class ThreadedRunner:
    """One thread per worker over blocking channels, with a deadlock watchdog"""

    def __init__(self, fabric: CommFabric, watchdog_timeout: float = WATCHDOG_TIMEOUT_S,
                 poll_interval: float = 0.05):
        self.fabric = fabric
        self.watchdog_timeout = watchdog_timeout
        self.poll_interval = poll_interval
        self._blocked: Dict[int, Tuple[int, str]] = {}
        self._lock = threading.Lock()

    def _wait(self, w: int, request: Recv) -> Tuple[Message, float]:
        waited = 0.0
        with self._lock:
            self._blocked[w] = (request.src, request.tag.value)
        try:
            while True:
                item = self.fabric.recv(w, request.src, request.tag, timeout=self.poll_interval)
                if item is not None:
                    return item
                waited += self.poll_interval
                if waited >= self.watchdog_timeout:
                    with self._lock:
                        blocked = dict(self._blocked)
                    raise DeadlockError(blocked, f"worker {w} waited {waited:.1f}s")
        finally:
            with self._lock:
                self._blocked.pop(w, None)

    def _drive(self, w: int, program: WorkerProgram) -> None:
        try:
            request = next(program)
            while True:
                request = program.send(self._wait(w, request))
        except StopIteration:
            pass
        finally:
            self.fabric.close(w)

    def run(self, programs: Dict[int, WorkerProgram]) -> None:
        errors: List[BaseException] = []
        with ThreadPoolExecutor(max_workers=max(1, len(programs))) as executor:
            futures = {executor.submit(self._drive, w, programs[w]): w for w in sorted(programs)}
            for future in as_completed(futures):
                exc = future.exception()
                if exc is not None:
                    logger.error(f"Worker {futures[future]} failed: {exc}")
                    errors.append(exc)
        if errors:
            root = [e for e in errors if not isinstance(e, ChannelClosed)]
            raise (root or errors)[0]


def run_programs(fabric: CommFabric, programs: Dict[int, WorkerProgram], deterministic: bool,
                 watchdog_timeout: float = WATCHDOG_TIMEOUT_S) -> None:
    if deterministic:
        DeterministicScheduler(fabric).run(programs)
    else:
        ThreadedRunner(fabric, watchdog_timeout).run(programs)
