"""
Training engines: the single-process sequential oracle and the distributed
pipeline / graph-parallel / hybrid engines running over the simulated fabric.

Every distributed worker is a generator program: it yields a `Recv` whenever
it needs a message and gets back `(message, arrival_time)`. The same program
runs under the deterministic round-robin scheduler and under the threaded
runtime.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from analytics import measured_bubble
from comm_fabric import (CommFabric, CommLedger, CommReport, GroupMap, Message, Recv, Tag,
                         assign_groups, ledger_report, run_programs)
from config import DEFAULT_LR, METRICS_COLUMNS, WATCHDOG_TIMEOUT_S
from errors import CommError, NumericError
from graph_core import Dataset
from nn_core import (LayerCache, ModelConfig, apply_mask, backward_local, dropout_scale, forward_rows,
                     init_params, input_forward, input_grad, layer_backward, layer_forward, layer_params,
                     linear_grads, make_optimizer, mean_loss, output_backward, output_forward, param_grads,
                     param_name, propagate_rows, propagation_operator, softmax_xent_rows, stage_param_names)
from partition import ChunkPlan, Partition, chunk_plan_from_assignment, partition_from_assignment
from sim_clock import CostModel, SimClock, TraceEvent, epoch_span, merge_events
from staleness import EmbeddingStore, StalenessConfig

logger = logging.getLogger("pipegnn.engines")


@dataclass(frozen=True)
class StageAssignment:
    """Consecutive 1-based inclusive layer ranges, one per pipeline stage"""
    ranges: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        expected = 1
        for lo, hi in self.ranges:
            if lo != expected or hi < lo:
                raise ValueError(f"stage ranges must be consecutive and non-empty, got {self.ranges}")
            expected = hi + 1

    @property
    def num_stages(self) -> int:
        return len(self.ranges)

    @property
    def num_layers(self) -> int:
        return self.ranges[-1][1]

    def stage_of_layer(self, layer: int) -> int:
        for s, (lo, hi) in enumerate(self.ranges):
            if lo <= layer <= hi:
                return s
        raise ValueError(f"layer {layer} outside 1..{self.num_layers}")


def assign_stages(num_layers: int, num_stages: int) -> StageAssignment:
    """Balanced split; the first num_layers % num_stages stages get one extra layer"""
    if num_stages < 1 or num_stages > num_layers:
        raise ValueError(f"cannot split {num_layers} layers over {num_stages} stages")
    base, extra = divmod(num_layers, num_stages)
    ranges, lo = [], 1
    for s in range(num_stages):
        hi = lo + base + (1 if s < extra else 0) - 1
        ranges.append((lo, hi))
        lo = hi + 1
    return StageAssignment(tuple(ranges))


@dataclass
class TrainOptions:
    lr: float = DEFAULT_LR
    optimizer: str = "adam"
    deterministic: bool = True
    cost_model: CostModel = field(default_factory=CostModel)
    watchdog_timeout: float = WATCHDOG_TIMEOUT_S
    workers_per_node: int = 4


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float
    comm_bytes_graph: int = 0
    comm_bytes_pipeline: int = 0
    comm_bytes_weightsync: int = 0
    wall_time_s: float = 0.0
    bubble_fraction: float = 0.0

    def as_row(self, mode: str) -> List:
        values = {"mode": mode, **self.__dict__}
        return [values[c] for c in METRICS_COLUMNS]


@dataclass
class TrainingResult:
    mode: str
    metrics: List[EpochMetrics]
    params: Dict[str, np.ndarray]
    comm_reports: List[CommReport] = field(default_factory=list)
    trace: List[TraceEvent] = field(default_factory=list)
    peak_stash_bytes: Dict[int, int] = field(default_factory=dict)
    stage_params: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)
    worker_params: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)
    num_workers: int = 1
    epoch_peak_stash_bytes: Dict[int, List[int]] = field(default_factory=dict)

    @property
    def final(self) -> Optional[EpochMetrics]:
        return self.metrics[-1] if self.metrics else None


def _accuracy(correct: np.ndarray, mask: np.ndarray) -> float:
    n = int(np.count_nonzero(mask))
    return float(np.count_nonzero(correct & mask) / n) if n else 0.0


def _log_epoch(mode: str, m: EpochMetrics) -> None:
    logger.info(f"[{mode}] epoch {m.epoch}: loss={m.train_loss:.4f} train={m.train_acc:.3f} "
                f"val={m.val_acc:.3f} test={m.test_acc:.3f} pipeline={m.comm_bytes_pipeline}B "
                f"graph={m.comm_bytes_graph}B bubble={m.bubble_fraction:.3f}")


def _check_finite(loss: float, epoch: int) -> None:
    if not np.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss} at epoch {epoch}")


# Sequential reference

def train_sequential(dataset: Dataset, model_config: ModelConfig, epochs: int, seed: int,
                     options: Optional[TrainOptions] = None) -> TrainingResult:
    """Whole-graph forward/backward each epoch; the oracle the other engines are checked against"""
    options = options or TrainOptions()
    cfg = model_config
    dtype = cfg.np_dtype
    L, rate = cfg.num_layers, cfg.dropout
    op = propagation_operator(dataset.graph, cfg.kind, cfg.self_loops)
    params = init_params(cfg, seed)
    optimizer = make_optimizer(options.optimizer, options.lr)
    X = dataset.features.astype(dtype)
    labels, train_mask = dataset.labels, dataset.train_mask
    n_train = int(np.count_nonzero(train_mask))
    N = dataset.num_vertices
    clock = SimClock(0, options.cost_model)
    gcnii = cfg.kind == "gcnii"

    def forward(epoch: int, training: bool):
        m_in = dropout_scale(seed, epoch, 0, X.shape, rate, dtype) if training else None
        x_in = apply_mask(X, m_in)
        h0, pre0 = input_forward(params["in.weight"], params["in.bias"], x_in)
        h, caches = h0, []
        for layer in range(1, L + 1):
            p = layer_params(params, cfg, layer)
            h, cache = layer_forward(cfg.kind, p, op, h, h0 if gcnii else None, layer, training,
                                     (seed, epoch), rate)
            caches.append(cache)
            if training:
                clock.compute(N, 1, 0, layer, layer)
        m_out = dropout_scale(seed, epoch, L + 1, h.shape, rate, dtype) if training else None
        x_out = apply_mask(h, m_out)
        logits = output_forward(params["out.weight"], params["out.bias"], x_out)
        return logits, (x_in, pre0, caches, x_out, m_out)

    metrics: List[EpochMetrics] = []
    for epoch in range(epochs):
        clock.epoch = epoch
        started = time.perf_counter()
        logits, (x_in, pre0, caches, x_out, m_out) = forward(epoch, True)
        row_loss, g_logits, _ = softmax_xent_rows(logits, labels, train_mask, n_train)
        loss = mean_loss(row_loss, train_mask)
        _check_finite(loss, epoch)

        grads: Dict[str, np.ndarray] = {}
        out = linear_grads(x_out, g_logits)
        grads["out.weight"], grads["out.bias"] = out["weight"], out["bias"]
        g = output_backward(params["out.weight"], g_logits, m_out)
        gh0 = None
        for layer in range(L, 0, -1):
            p = layer_params(params, cfg, layer)
            g, layer_gh0, pg = layer_backward(cfg.kind, p, op, caches[layer - 1], g)
            for what, value in pg.items():
                grads[param_name(layer, what)] = value
            if gcnii:
                gh0 = layer_gh0 if gh0 is None else gh0 + layer_gh0
            clock.compute(N, 1, 0, layer, layer, backward=True)
        total = g if gh0 is None else g + gh0
        gpre0 = total * (pre0 > 0)
        first = linear_grads(x_in, gpre0)
        grads["in.weight"], grads["in.bias"] = first["weight"], first["bias"]
        optimizer.step(params, grads)

        eval_logits, _ = forward(epoch, False)
        correct = np.argmax(eval_logits, axis=1) == labels
        elapsed = time.perf_counter() - started
        epoch_events = [e for e in clock.events if e.epoch == epoch]
        m = EpochMetrics(epoch, loss, _accuracy(correct, train_mask), _accuracy(correct, dataset.val_mask),
                         _accuracy(correct, dataset.test_mask),
                         wall_time_s=epoch_span(epoch_events, epoch) if options.deterministic else elapsed,
                         bubble_fraction=measured_bubble(epoch_events, 1))
        metrics.append(m)
        _log_epoch("sequential", m)

    return TrainingResult("sequential", metrics, params, trace=list(clock.events),
                          stage_params={0: params}, worker_params={0: params})


# Distributed engines

@dataclass
class _Pass:
    """What differs between the training pass and the inference pass"""
    training: bool
    store: EmbeddingStore
    boundary_tag: Tag
    stage_tag: Tag
    masks: Dict[int, np.ndarray]


class StageWorker:
    """One worker: a layer range of the model (its stage) over its own vertex partition (its rank)"""

    def __init__(self, worker_id: int, trainer: "HybridTrainer", fabric: CommFabric):
        self.wid = worker_id
        self.t = trainer
        self.fabric = fabric
        gm, cfg = trainer.group_map, trainer.cfg
        self.stage = gm.group_of[worker_id]
        self.rank = gm.rank_in_group[worker_id]
        self.lo, self.hi = trainer.stages.ranges[self.stage]
        self.first = self.stage == 0
        self.last = self.stage == trainer.stages.num_stages - 1
        self.group = gm.groups[self.stage]
        self.peers = [w for w in self.group if w != worker_id]
        self.prev = None if self.first else gm.worker(self.stage - 1, self.rank)
        self.next = None if self.last else gm.worker(self.stage + 1, self.rank)
        self.reporter = gm.worker(trainer.stages.num_stages - 1, 0)
        self.layers = list(range(self.lo, self.hi + 1))

        part = trainer.partition
        self.own = part.inner_sets[self.rank]
        self.owns_all = part.num_parts == 1
        self.sub_chunks = [np.intersect1d(chunk, self.own) for chunk in trainer.chunk_plan.chunks]
        # positions of each sub-chunk inside the own-row activation buffers
        self.local_rows = [np.searchsorted(self.own, sub) for sub in self.sub_chunks]
        self.ship = {peer: [np.intersect1d(sub, part.boundary_sets[gm.rank_in_group[peer]])
                            for sub in self.sub_chunks]
                     for peer in self.peers}
        dtype = cfg.np_dtype
        self.agg_rows = [trainer.op.rows(sub, dtype) for sub in self.sub_chunks]
        self.adj_rows = [trainer.op.adjoint_rows(sub, dtype) for sub in self.sub_chunks]

        self.params = {name: trainer.initial_params[name].copy()
                       for name in stage_param_names(cfg, self.lo, self.hi, self.first, self.last)}
        self.optimizer = make_optimizer(trainer.options.optimizer, trainer.options.lr)
        self.clock = SimClock(worker_id, trainer.options.cost_model)

        N, H = trainer.dataset.num_vertices, cfg.hidden
        needed = self.own if self.owns_all else np.union1d(self.own, part.boundary_sets[self.rank])
        self.emb = EmbeddingStore.for_embeddings(self.layers, N, H, dtype, trainer.staleness, expected_rows=needed)
        self.grads = EmbeddingStore.for_gradients(self.layers, N, H, dtype, trainer.staleness, expected_rows=needed)
        self.eval_store = EmbeddingStore(self.layers, N, H, dtype, fix_alpha=1, use_snapshot=False,
                                         check_versions=trainer.staleness.check_versions,
                                         expected_rows=needed, name="inference")

        n_own = self.own.size
        in_width = 2 * H if cfg.kind == "sage" else H
        self.cache_inputs = {layer: np.zeros((n_own, in_width), dtype=dtype) for layer in self.layers}
        self.cache_pre = {layer: np.zeros((n_own, H), dtype=dtype) for layer in self.layers}
        self.gpre = {layer: np.zeros((n_own, H), dtype=dtype) for layer in self.layers}
        if self.first:
            self.x_in = np.zeros((n_own, cfg.in_features), dtype=dtype)
            self.pre0 = np.zeros((n_own, H), dtype=dtype)
            self.gpre0 = np.zeros((n_own, H), dtype=dtype)
        if self.last:
            self.x_out = np.zeros((n_own, H), dtype=dtype)
            self.g_logits = np.zeros((n_own, cfg.num_classes), dtype=dtype)
            self.row_loss = np.zeros(N, dtype=np.float64)
            self.correct = np.zeros(N, dtype=bool)

        self.masks: Dict[int, np.ndarray] = {}
        self.stash: Dict[int, int] = {}
        self.peak_stash = 0
        self.epoch_peak_stash: List[int] = []
        self.metrics: List[EpochMetrics] = []

    # messaging

    def _send(self, dst: int, tag: Tag, epoch: int, chunk: int = -1, layer: int = -1,
              ids: Optional[np.ndarray] = None, payload: Tuple[np.ndarray, ...] = (),
              control: Optional[Dict] = None) -> None:
        msg = Message(self.wid, dst, tag, epoch, chunk, layer, ids, payload, control)
        arrival = self.clock.send(msg.byte_size, self.t.group_map.link_class(self.wid, dst), chunk, layer, layer)
        self.fabric.send(msg, arrival)

    def _recv(self, src: int, tag: Tag, epoch: int, chunk: Optional[int] = None):
        msg, arrival = yield Recv(src, tag)
        if msg.epoch != epoch or (chunk is not None and msg.chunk != chunk):
            raise CommError(f"worker {self.wid} expected ({tag.value}, epoch {epoch}, chunk {chunk}) "
                            f"from {src}, got epoch {msg.epoch} chunk {msg.chunk}")
        self.clock.receive(arrival, msg.chunk, msg.layer, msg.layer)
        return msg

    def _barrier(self, epoch: int):
        workers = range(self.t.group_map.num_workers)
        if self.wid == 0:
            for w in workers[1:]:
                yield from self._recv(w, Tag.CONTROL, epoch)
            for w in workers[1:]:
                self._send(w, Tag.CONTROL, epoch, control={"barrier": "release"})
        else:
            self._send(0, Tag.CONTROL, epoch, control={"barrier": "arrive"})
            yield from self._recv(0, Tag.CONTROL, epoch)

    # forward

    def _mask_rows(self, masks: Dict[int, np.ndarray], slot: int, rows: np.ndarray) -> Optional[np.ndarray]:
        mask = masks.get(slot)
        return None if mask is None else mask[rows]

    def _stage_input(self, ps: _Pass, epoch: int, k: int):
        U = self.sub_chunks[k]
        if self.first:
            x = apply_mask(self.t.features[U], self._mask_rows(ps.masks, 0, U))
            h0, pre0 = input_forward(self.params["in.weight"], self.params["in.bias"], x)
            if ps.training:
                self.x_in[self.local_rows[k]] = x
                self.pre0[self.local_rows[k]] = pre0
                self._stash(k, x.nbytes + pre0.nbytes)
            return h0, (h0 if self.t.gcnii else None)
        msg = yield from self._recv(self.prev, ps.stage_tag, epoch, k)
        if not np.array_equal(msg.vertex_ids, U):
            raise CommError(f"worker {self.wid}: chunk {k} arrived with unexpected vertex ids")
        return msg.payload[0], (msg.payload[1] if self.t.gcnii else None)

    def _exchange(self, tag: Tag, store: EmbeddingStore, epoch: int, k: int, layer: int):
        """Ship this sub-chunk's boundary rows to every peer and take theirs"""
        for peer in self.peers:
            rows = self.ship[peer][k]
            self._send(peer, tag, epoch, k, layer, rows, (store.current(layer)[rows],))
        for peer in self.peers:
            msg = yield from self._recv(peer, tag, epoch, k)
            if msg.layer != layer:
                raise CommError(f"worker {self.wid}: boundary rows for layer {msg.layer}, expected {layer}")
            store.write(layer, msg.vertex_ids, msg.payload[0])

    def _layer_rows(self, ps: _Pass, k: int, layer: int, inp: np.ndarray, h0: Optional[np.ndarray]) -> np.ndarray:
        U = self.sub_chunks[k]
        p = layer_params(self.params, self.t.cfg, layer)
        x_full = ps.store.read(layer)
        out, cache = forward_rows(p, self.agg_rows[k], x_full, x_full[U], h0)
        if ps.training:
            self.cache_inputs[layer][self.local_rows[k]] = cache.inputs
            self.cache_pre[layer][self.local_rows[k]] = cache.pre
            self._stash(k, cache.inputs.nbytes + cache.pre.nbytes)
            self.clock.compute(U.size, 1, k, layer, layer)
        return out

    def _stage_output(self, ps: _Pass, epoch: int, k: int, h: np.ndarray, h0: Optional[np.ndarray]) -> None:
        U = self.sub_chunks[k]
        if not self.last:
            payload = (h, h0) if self.t.gcnii else (h,)
            self._send(self.next, ps.stage_tag, epoch, k, self.hi, U, payload)
            return
        x_out = apply_mask(h, self._mask_rows(ps.masks, self.t.cfg.output_slot, U))
        logits = output_forward(self.params["out.weight"], self.params["out.bias"], x_out)
        if ps.training:
            labels, train_mask = self.t.dataset.labels[U], self.t.dataset.train_mask[U]
            row_loss, g_logits, _ = softmax_xent_rows(logits, labels, train_mask, self.t.num_train)
            self.x_out[self.local_rows[k]] = x_out
            self.g_logits[self.local_rows[k]] = g_logits
            self.row_loss[U] = row_loss
            self._stash(k, x_out.nbytes + g_logits.nbytes)
        else:
            self.correct[U] = np.argmax(logits, axis=1) == self.t.dataset.labels[U]

    def _forward_chunk(self, ps: _Pass, epoch: int, k: int):
        U = self.sub_chunks[k]
        h, h0 = yield from self._stage_input(ps, epoch, k)
        for layer in self.layers:
            ps.store.write(layer, U, h)
            yield from self._exchange(ps.boundary_tag, ps.store, epoch, k, layer)
            h = self._layer_rows(ps, k, layer, h, h0)
        self._stage_output(ps, epoch, k, h, h0)

    def _forward_sync(self, ps: _Pass, epoch: int, order: np.ndarray):
        """All chunks in, then layer by layer over all of them, then all chunks out"""
        hs, h0s = {}, {}
        for k in order:
            hs[k], h0s[k] = yield from self._stage_input(ps, epoch, k)
        for layer in self.layers:
            for k in order:
                ps.store.write(layer, self.sub_chunks[k], hs[k])
                yield from self._exchange(ps.boundary_tag, ps.store, epoch, k, layer)
            for k in order:
                hs[k] = self._layer_rows(ps, k, layer, hs[k], h0s[k])
        for k in order:
            self._stage_output(ps, epoch, k, hs[k], h0s[k])

    # backward

    def _grad_input(self, epoch: int, k: int):
        U = self.sub_chunks[k]
        if self.last:
            g = output_backward(self.params["out.weight"], self.g_logits[self.local_rows[k]],
                                self._mask_rows(self.masks, self.t.cfg.output_slot, U))
            return g, None
        msg = yield from self._recv(self.next, Tag.BACKWARD_GRAD, epoch, k)
        return msg.payload[0], (msg.payload[1] if self.t.gcnii else None)

    def _local_backward(self, k: int, layer: int, g: np.ndarray):
        U, L = self.sub_chunks[k], self.local_rows[k]
        p = layer_params(self.params, self.t.cfg, layer)
        local = backward_local(p, LayerCache(self.cache_inputs[layer][L], self.cache_pre[layer][L]), g)
        self.gpre[layer][L] = local.gpre
        self.grads.write(layer, U, local.gmix)
        return local

    def _propagate(self, k: int, layer: int, local, gh0: Optional[np.ndarray]):
        U = self.sub_chunks[k]
        prop = propagate_rows(self.adj_rows[k], self.grads.read(layer))
        g = input_grad(prop, local.gself, self._mask_rows(self.masks, layer, U))
        if local.gh0 is not None:
            gh0 = local.gh0 if gh0 is None else gh0 + local.gh0
        self.clock.compute(U.size, 1, k, layer, layer, backward=True)
        return g, gh0

    def _grad_output(self, epoch: int, k: int, g: np.ndarray, gh0: Optional[np.ndarray]) -> None:
        U = self.sub_chunks[k]
        if self.first:
            total = g if gh0 is None else g + gh0
            L = self.local_rows[k]
            self.gpre0[L] = total * (self.pre0[L] > 0)
        else:
            payload = (g, gh0) if self.t.gcnii else (g,)
            self._send(self.prev, Tag.BACKWARD_GRAD, epoch, k, self.lo, U, payload)
        self.stash.pop(k, None)

    def _backward_chunk(self, epoch: int, k: int):
        g, gh0 = yield from self._grad_input(epoch, k)
        for layer in reversed(self.layers):
            local = self._local_backward(k, layer, g)
            yield from self._exchange(Tag.GRAPH_BOUNDARY_BWD, self.grads, epoch, k, layer)
            g, gh0 = self._propagate(k, layer, local, gh0)
        self._grad_output(epoch, k, g, gh0)

    def _backward_sync(self, epoch: int, order: np.ndarray):
        gs, gh0s = {}, {}
        for k in order:
            gs[k], gh0s[k] = yield from self._grad_input(epoch, k)
        for layer in reversed(self.layers):
            locals_ = {}
            for k in order:
                locals_[k] = self._local_backward(k, layer, gs[k])
                yield from self._exchange(Tag.GRAPH_BOUNDARY_BWD, self.grads, epoch, k, layer)
            for k in order:
                gs[k], gh0s[k] = self._propagate(k, layer, locals_[k], gh0s[k])
        for k in order:
            self._grad_output(epoch, k, gs[k], gh0s[k])

    # parameters

    def _stash(self, k: int, nbytes: int) -> None:
        self.stash[k] = self.stash.get(k, 0) + nbytes
        held = sum(self.stash.values())
        self.peak_stash = max(self.peak_stash, held)
        self.epoch_peak_stash[-1] = max(self.epoch_peak_stash[-1], held)

    def _param_grads(self) -> Dict[str, np.ndarray]:
        """Weight gradients over this worker's own rows, from the buffers filled chunk by chunk"""
        grads: Dict[str, np.ndarray] = {}
        if self.first:
            for what, value in linear_grads(self.x_in, self.gpre0).items():
                grads[f"in.{what}"] = value
        for layer in self.layers:
            p = layer_params(self.params, self.t.cfg, layer)
            for what, value in param_grads(p, self.cache_inputs[layer], self.gpre[layer]).items():
                grads[param_name(layer, what)] = value
        if self.last:
            for what, value in linear_grads(self.x_out, self.g_logits).items():
                grads[f"out.{what}"] = value
        return grads

    def _weight_sync(self, epoch: int, grads: Dict[str, np.ndarray]):
        """Sum gradients across the group at rank 0 (rank order), then broadcast"""
        if not self.peers:
            return grads
        names = sorted(grads)
        root = self.group[0]
        if self.wid != root:
            self._send(root, Tag.WEIGHT_SYNC, epoch, payload=tuple(grads[n] for n in names))
            msg = yield from self._recv(root, Tag.WEIGHT_SYNC, epoch)
            return dict(zip(names, msg.payload))
        total = {n: grads[n].copy() for n in names}
        for peer in self.peers:
            msg = yield from self._recv(peer, Tag.WEIGHT_SYNC, epoch)
            for n, value in zip(names, msg.payload):
                total[n] += value
        for peer in self.peers:
            self._send(peer, Tag.WEIGHT_SYNC, epoch, payload=tuple(total[n] for n in names))
        return total

    # reporting

    def _report(self, epoch: int, started: float):
        if not self.last:
            return
        if self.wid != self.reporter:
            self._send(self.reporter, Tag.CONTROL, epoch,
                       control={"rows": self.own, "row_loss": self.row_loss[self.own],
                                "correct": self.correct[self.own]})
            return
        for peer in self.peers:
            msg = yield from self._recv(peer, Tag.CONTROL, epoch)
            rows = msg.control["rows"]
            self.row_loss[rows] = msg.control["row_loss"]
            self.correct[rows] = msg.control["correct"]
        ds = self.t.dataset
        loss = mean_loss(self.row_loss, ds.train_mask)
        _check_finite(loss, epoch)
        self.metrics.append(EpochMetrics(epoch, loss, _accuracy(self.correct, ds.train_mask),
                                         _accuracy(self.correct, ds.val_mask),
                                         _accuracy(self.correct, ds.test_mask),
                                         wall_time_s=time.perf_counter() - started))

    def _epoch_masks(self, epoch: int) -> Dict[int, np.ndarray]:
        cfg, N = self.t.cfg, self.t.dataset.num_vertices
        dtype, rate, seed = cfg.np_dtype, cfg.dropout, self.t.seed
        slots = [(layer, cfg.hidden) for layer in self.layers]
        if self.first:
            slots.append((0, cfg.in_features))
        if self.last:
            slots.append((cfg.output_slot, cfg.hidden))
        masks = {}
        for slot, width in slots:
            mask = dropout_scale(seed, epoch, slot, (N, width), rate, dtype)
            if mask is not None:
                masks[slot] = mask
        return masks

    def program(self, epochs: int):
        staleness = self.t.staleness
        natural = np.arange(self.t.chunk_plan.num_chunks)
        for epoch in range(epochs):
            self.clock.epoch = epoch
            self.clock.training = True
            started = time.perf_counter()
            self.epoch_peak_stash.append(0)
            yield from self._barrier(epoch)

            order = self.t.chunk_plan.order_for_epoch(epoch, self.t.seed, staleness.shuffle_chunks)
            self.masks = self._epoch_masks(epoch)
            self.emb.begin_epoch(epoch, {layer: self.masks[layer] for layer in self.layers if layer in self.masks})
            self.grads.begin_epoch(epoch)
            train = _Pass(True, self.emb, Tag.GRAPH_BOUNDARY_FWD, Tag.FORWARD_EMB, self.masks)
            if staleness.synchronous_mode:
                yield from self._forward_sync(train, epoch, order)
                yield from self._backward_sync(epoch, order[::-1])
            else:
                for k in order:
                    yield from self._forward_chunk(train, epoch, k)
                for k in order[::-1]:
                    yield from self._backward_chunk(epoch, k)

            grads = yield from self._weight_sync(epoch, self._param_grads())
            self.optimizer.step(self.params, grads)
            self.emb.end_epoch()
            self.grads.end_epoch()

            self.clock.training = False
            self.eval_store.begin_epoch(epoch)
            inference = _Pass(False, self.eval_store, Tag.EVAL_EMB, Tag.EVAL_EMB, {})
            yield from self._forward_sync(inference, epoch, natural)
            self.eval_store.end_epoch()
            yield from self._report(epoch, started)


class HybridTrainer:
    """
    S pipeline stages of G workers each. Pipeline mode is G = 1, graph
    parallel is S = 1 with a single chunk, anything else is hybrid.
    """

    def __init__(self, dataset: Dataset, model_config: ModelConfig, stages: StageAssignment,
                 group_map: GroupMap, partition: Partition, chunk_plan: ChunkPlan,
                 staleness: StalenessConfig, seed: int, options: Optional[TrainOptions] = None,
                 mode: str = "hybrid"):
        if stages.num_layers != model_config.num_layers:
            raise ValueError(f"stage ranges cover {stages.num_layers} layers, model has {model_config.num_layers}")
        if stages.num_stages != group_map.num_groups:
            raise ValueError(f"{stages.num_stages} stages but {group_map.num_groups} worker groups")
        if partition.num_parts != group_map.group_size:
            raise ValueError(f"partition has {partition.num_parts} parts, groups have {group_map.group_size} workers")
        if partition.num_vertices != dataset.num_vertices or chunk_plan.chunk_of.size != dataset.num_vertices:
            raise ValueError("partition and chunk plan must cover every vertex of the dataset")
        self.dataset = dataset
        self.cfg = model_config
        self.stages = stages
        self.group_map = group_map
        self.partition = partition
        self.chunk_plan = chunk_plan
        self.staleness = staleness
        self.seed = seed
        self.options = options or TrainOptions()
        self.mode = mode
        self.gcnii = model_config.kind == "gcnii"
        self.features = dataset.features.astype(model_config.np_dtype)
        self.num_train = int(np.count_nonzero(dataset.train_mask))
        self.op = propagation_operator(dataset.graph, model_config.kind, model_config.self_loops)
        # build the cached operators before any worker thread touches them
        self.op.matrix(model_config.np_dtype)
        self.op.adjoint(model_config.np_dtype)
        self.initial_params = init_params(model_config, seed)

    def run(self, epochs: int) -> TrainingResult:
        gm = self.group_map
        ledger = CommLedger(gm)
        fabric = CommFabric(gm.num_workers, ledger)
        workers = {w: StageWorker(w, self, fabric) for w in range(gm.num_workers)}
        logger.info(f"[{self.mode}] {gm.num_workers} workers: S={self.stages.num_stages} "
                    f"G={gm.group_size} K={self.chunk_plan.num_chunks} L={self.cfg.num_layers} "
                    f"ranges={list(self.stages.ranges)} spanning groups={gm.spanning_groups()}")
        run_programs(fabric, {w: worker.program(epochs) for w, worker in workers.items()},
                     self.options.deterministic, self.options.watchdog_timeout)

        reports = []
        for epoch in range(epochs):
            ledger.close_epoch(epoch)
            reports.append(ledger_report(ledger, epoch))
        trace = merge_events(worker.clock for worker in workers.values())
        metrics = workers[gm.worker(self.stages.num_stages - 1, 0)].metrics
        for m, report in zip(metrics, reports):
            m.comm_bytes_graph = report.graph_bytes
            m.comm_bytes_pipeline = report.pipeline_bytes
            m.comm_bytes_weightsync = report.weightsync_bytes
            epoch_events = [e for e in trace if e.epoch == m.epoch]
            m.bubble_fraction = measured_bubble(epoch_events, gm.num_workers)
            if self.options.deterministic:
                m.wall_time_s = epoch_span(epoch_events, m.epoch)
            _log_epoch(self.mode, m)

        stage_params = {s: workers[gm.worker(s, 0)].params for s in range(self.stages.num_stages)}
        params = {name: value for s in sorted(stage_params) for name, value in stage_params[s].items()}
        return TrainingResult(self.mode, metrics, params, reports, trace,
                              {w: worker.peak_stash for w, worker in workers.items()},
                              stage_params, {w: worker.params for w, worker in workers.items()},
                              gm.num_workers,
                              {w: list(worker.epoch_peak_stash) for w, worker in workers.items()})


def _single_part(dataset: Dataset) -> Partition:
    return partition_from_assignment(dataset.graph, np.zeros(dataset.num_vertices, dtype=np.int64), 1)


def train_graph_parallel(dataset: Dataset, partition: Partition, model_config: ModelConfig, epochs: int,
                         seed: int, options: Optional[TrainOptions] = None) -> TrainingResult:
    """One stage of M workers, each owning a partition and exchanging boundary rows every layer"""
    options = options or TrainOptions()
    M = partition.num_parts
    group_map = assign_groups(M, options.workers_per_node, 1, M)
    plan = chunk_plan_from_assignment(np.zeros(dataset.num_vertices, dtype=np.int64), 1)
    staleness = StalenessConfig(shuffle_chunks=False, synchronous_mode=True)
    return HybridTrainer(dataset, model_config, assign_stages(model_config.num_layers, 1), group_map,
                         partition, plan, staleness, seed, options, mode="graph").run(epochs)


def train_pipeline(dataset: Dataset, chunk_plan: ChunkPlan, stages: StageAssignment, staleness: StalenessConfig,
                   model_config: ModelConfig, epochs: int, seed: int,
                   options: Optional[TrainOptions] = None) -> TrainingResult:
    """S single-worker stages streaming K chunks forward and back"""
    options = options or TrainOptions()
    S = stages.num_stages
    group_map = assign_groups(S, options.workers_per_node, S, 1)
    return HybridTrainer(dataset, model_config, stages, group_map, _single_part(dataset), chunk_plan,
                         staleness, seed, options, mode="pipeline").run(epochs)


def train_hybrid(dataset: Dataset, partition: Partition, chunk_plan: ChunkPlan, stages: StageAssignment,
                 group_map: GroupMap, staleness: StalenessConfig, model_config: ModelConfig, epochs: int,
                 seed: int, options: Optional[TrainOptions] = None) -> TrainingResult:
    """S stages of G workers; every group holds the same G-way partition"""
    return HybridTrainer(dataset, model_config, stages, group_map, partition, chunk_plan,
                         staleness, seed, options, mode="hybrid").run(epochs)
