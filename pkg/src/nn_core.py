"""
Numeric kernels for the GCN, GraphSage and GCNII models: row-block forward
and backward passes, the softmax cross-entropy head and the optimizers.

Every engine builds on the same row-block kernels, and the dense products go
through `dense_rows`, whose result for a row never depends on which other
rows are in the block. Computing a layer chunk by chunk therefore gives
bit-identical rows to computing it on the whole graph at once.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from config import ADAM_BETAS, ADAM_EPS, DEFAULT_DROPOUT, GCNII_ALPHA, GCNII_LAMBDA, SEED_STREAMS
from errors import ShapeError
from graph_core import Graph, NormAdj, mean_adjacency, normalize_adjacency

LAYER_KINDS = ("gcn", "sage", "gcnii")


@dataclass
class ModelConfig:
    """Shape and hyper-parameters of the input projection, L graph layers and output head"""
    kind: str
    num_layers: int
    hidden: int
    in_features: int
    num_classes: int
    dropout: float = DEFAULT_DROPOUT
    gcnii_alpha: float = GCNII_ALPHA
    gcnii_lambda: float = GCNII_LAMBDA
    dtype: str = "float32"
    self_loops: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if min(self.num_layers, self.hidden, self.in_features, self.num_classes) < 1:
            raise ValueError("model dimensions must be positive")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    @property
    def vecs(self) -> int:
        """Vectors per vertex crossing a stage boundary (GCNII also ships h0)"""
        return 2 if self.kind == "gcnii" else 1

    @property
    def output_slot(self) -> int:
        return self.num_layers + 1


@dataclass
class LayerParams:
    """View onto one graph layer's parameters (arrays are shared, not copied)"""
    weight: np.ndarray
    bias: Optional[np.ndarray]
    layer_kind: str
    layer_index: int
    gcnii_alpha: float = GCNII_ALPHA
    gcnii_lambda: float = GCNII_LAMBDA

    def __post_init__(self):
        h_in, h_out = self.weight.shape
        if self.layer_kind == "sage" and h_in != 2 * h_out:
            raise ShapeError(f"sage weight must be 2H x H, got {self.weight.shape}")
        if self.layer_kind == "gcnii" and h_in != h_out:
            raise ShapeError(f"gcnii weight must be square, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (h_out,):
            raise ShapeError(f"bias must have length {h_out}")
        if not 0.0 <= self.gcnii_alpha <= 1.0:
            raise ValueError("gcnii_alpha must lie in [0, 1]")

    @property
    def beta(self) -> float:
        return math.log(self.gcnii_lambda / self.layer_index + 1.0)


@dataclass
class LayerCache:
    """Row block saved by a forward pass for the matching backward pass"""
    inputs: np.ndarray  # aggregated input (gcn), [self | neighbor mean] (sage), mixed s (gcnii)
    pre: np.ndarray
    mask: Optional[np.ndarray] = None


@dataclass
class LocalGrads:
    gpre: np.ndarray
    gmix: np.ndarray  # gradient w.r.t. the aggregated quantity, pushed through the adjoint
    gself: Optional[np.ndarray] = None
    gh0: Optional[np.ndarray] = None


def param_name(slot: Union[int, str], what: str) -> str:
    return f"{slot}.{what}" if isinstance(slot, str) else f"layer{slot}.{what}"


def propagation_operator(graph: Graph, kind: str, self_loops: bool = True) -> NormAdj:
    if kind == "sage":
        return mean_adjacency(graph)
    return normalize_adjacency(graph, self_loops=self_loops)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(cfg: ModelConfig, seed: int) -> Dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, zero output projection"""
    dtype = cfg.np_dtype
    H = cfg.hidden
    params: Dict[str, np.ndarray] = {}
    rng = np.random.default_rng([seed, SEED_STREAMS["init"], 0])
    params["in.weight"] = _glorot(rng, cfg.in_features, H, dtype)
    params["in.bias"] = np.zeros(H, dtype=dtype)
    for layer in range(1, cfg.num_layers + 1):
        rng = np.random.default_rng([seed, SEED_STREAMS["init"], layer])
        fan_in = 2 * H if cfg.kind == "sage" else H
        params[param_name(layer, "weight")] = _glorot(rng, fan_in, H, dtype)
        if cfg.kind != "gcnii":
            params[param_name(layer, "bias")] = np.zeros(H, dtype=dtype)
    params["out.weight"] = np.zeros((H, cfg.num_classes), dtype=dtype)
    params["out.bias"] = np.zeros(cfg.num_classes, dtype=dtype)
    return params


def layer_params(params: Dict[str, np.ndarray], cfg: ModelConfig, layer: int) -> LayerParams:
    return LayerParams(params[param_name(layer, "weight")], params.get(param_name(layer, "bias")),
                       cfg.kind, layer, cfg.gcnii_alpha, cfg.gcnii_lambda)


def stage_param_names(cfg: ModelConfig, first_layer: int, last_layer: int,
                      with_input: bool, with_output: bool) -> List[str]:
    names = ["in.weight", "in.bias"] if with_input else []
    for layer in range(first_layer, last_layer + 1):
        names.append(param_name(layer, "weight"))
        if cfg.kind != "gcnii":
            names.append(param_name(layer, "bias"))
    if with_output:
        names += ["out.weight", "out.bias"]
    return names


def dense_rows(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-invariant dense product x @ w (no blocked BLAS path)"""
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
    return np.einsum("ij,jk->ik", x, w)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def apply_mask(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return x if mask is None else x * mask


def dropout_scale(seed: int, epoch: int, slot: int, shape: Tuple[int, int], rate: float,
                  dtype=np.float32) -> Optional[np.ndarray]:
    """Inverted-dropout multiplier (0 or 1/(1-rate)) for one layer input over all vertices"""
    if rate <= 0.0:
        return None
    rng = np.random.default_rng([seed, SEED_STREAMS["dropout"], epoch, slot])
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) * np.dtype(dtype).type(1.0 / (1.0 - rate))


def aggregate(adj: NormAdj, h: np.ndarray) -> np.ndarray:
    """z = Â h with rows summed in ascending neighbor order"""
    if h.shape[0] != adj.num_vertices:
        raise ShapeError(f"h has {h.shape[0]} rows, operator has {adj.num_vertices}")
    return adj.matrix(h.dtype) @ h


# Row-block kernels

def forward_rows(p: LayerParams, agg_rows: sp.csr_matrix, x_full: np.ndarray, x_rows: np.ndarray,
                 h0_rows: Optional[np.ndarray] = None) -> Tuple[np.ndarray, LayerCache]:
    """Forward one layer for a block of rows; x_full holds the (dropped-out) layer input of every vertex"""
    if p.layer_kind == "gcn":
        z = agg_rows @ x_full
        pre = dense_rows(z, p.weight) + p.bias
        return relu(pre), LayerCache(z, pre)
    if p.layer_kind == "sage":
        cat = np.concatenate([x_rows, agg_rows @ x_full], axis=1)
        pre = dense_rows(cat, p.weight) + p.bias
        return relu(pre), LayerCache(cat, pre)
    if h0_rows is None:
        raise ValueError("gcnii layers need h0")
    a, beta = p.gcnii_alpha, p.beta
    s = (1.0 - a) * (agg_rows @ x_full) + a * h0_rows
    pre = (1.0 - beta) * s + beta * dense_rows(s, p.weight)
    return relu(pre), LayerCache(s.astype(x_full.dtype, copy=False), pre.astype(x_full.dtype, copy=False))


def backward_local(p: LayerParams, cache: LayerCache, grad_out: np.ndarray) -> LocalGrads:
    """Row-local part of the backward pass; the neighbor part goes through propagate_rows"""
    if grad_out.shape != cache.pre.shape:
        raise ShapeError(f"grad_out {grad_out.shape} does not match cached rows {cache.pre.shape}")
    gpre = grad_out * (cache.pre > 0)
    if p.layer_kind == "gcn":
        return LocalGrads(gpre, dense_rows(gpre, p.weight.T))
    if p.layer_kind == "sage":
        gcat = dense_rows(gpre, p.weight.T)
        h_in = p.weight.shape[1]
        return LocalGrads(gpre, np.ascontiguousarray(gcat[:, h_in:]), gself=np.ascontiguousarray(gcat[:, :h_in]))
    a, beta = p.gcnii_alpha, p.beta
    gs = (1.0 - beta) * gpre + beta * dense_rows(gpre, p.weight.T)
    gs = gs.astype(gpre.dtype, copy=False)
    return LocalGrads(gpre, ((1.0 - a) * gs).astype(gpre.dtype, copy=False),
                      gh0=(a * gs).astype(gpre.dtype, copy=False))


def propagate_rows(adjoint_rows: sp.csr_matrix, gmix_full: np.ndarray) -> np.ndarray:
    """Gather form of the adjoint SpMM: rows of Âᵀ times the full gradient buffer"""
    return adjoint_rows @ gmix_full


def input_grad(prop: np.ndarray, gself: Optional[np.ndarray], mask_rows: Optional[np.ndarray]) -> np.ndarray:
    g = prop if gself is None else prop + gself
    return apply_mask(g, mask_rows)


def param_grads(p: LayerParams, inputs: np.ndarray, gpre: np.ndarray) -> Dict[str, np.ndarray]:
    """Weight/bias gradients from (possibly row-restricted) full buffers"""
    gw = inputs.T @ gpre
    if p.layer_kind == "gcnii":
        return {"weight": (p.beta * gw).astype(gpre.dtype, copy=False)}
    return {"weight": gw, "bias": gpre.sum(axis=0)}


def input_forward(weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pre = dense_rows(x, weight) + bias
    return relu(pre), pre


def output_forward(weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dense_rows(x, weight) + bias


def output_backward(weight: np.ndarray, grad_logits: np.ndarray, mask_rows: Optional[np.ndarray]) -> np.ndarray:
    return apply_mask(dense_rows(grad_logits, weight.T), mask_rows)


def linear_grads(x: np.ndarray, gpre: np.ndarray) -> Dict[str, np.ndarray]:
    return {"weight": x.T @ gpre, "bias": gpre.sum(axis=0)}


# Full-graph layer passes

def _dropout_key(dropout_seed: Union[int, Sequence[int]]) -> Tuple[int, int]:
    if isinstance(dropout_seed, (int, np.integer)):
        return int(dropout_seed), 0
    seed, epoch = dropout_seed
    return int(seed), int(epoch)


def layer_forward(kind: str, params: LayerParams, adj: NormAdj, h_prev: np.ndarray,
                  h0: Optional[np.ndarray], layer_index: int, training: bool,
                  dropout_seed: Union[int, Sequence[int]] = 0,
                  rate: float = DEFAULT_DROPOUT) -> Tuple[np.ndarray, LayerCache]:
    """One graph layer over all vertices; dropout (when training) is applied to h_prev"""
    if kind != params.layer_kind:
        raise ValueError(f"layer kind {kind!r} does not match params ({params.layer_kind!r})")
    if h_prev.shape[0] != adj.num_vertices:
        raise ShapeError(f"h_prev has {h_prev.shape[0]} rows, graph has {adj.num_vertices}")
    if kind == "gcnii" and h0 is None:
        raise ValueError("gcnii layers need h0")
    mask = None
    if training:
        seed, epoch = _dropout_key(dropout_seed)
        mask = dropout_scale(seed, epoch, layer_index, h_prev.shape, rate, h_prev.dtype)
    x = apply_mask(h_prev, mask)
    h_next, cache = forward_rows(params, adj.matrix(h_prev.dtype), x, x, h0)
    cache.mask = mask
    return h_next, cache


def layer_backward(kind: str, params: LayerParams, adj: NormAdj, cache: LayerCache,
                   grad_out: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray], Dict[str, np.ndarray]]:
    """Reverse-mode pass of layer_forward: (grad wrt h_prev, grad wrt h0, param grads)"""
    if kind != params.layer_kind:
        raise ValueError(f"layer kind {kind!r} does not match params ({params.layer_kind!r})")
    local = backward_local(params, cache, grad_out)
    prop = propagate_rows(adj.adjoint(grad_out.dtype), local.gmix)
    grad_in = input_grad(prop, local.gself, cache.mask)
    return grad_in, local.gh0, param_grads(params, cache.inputs, local.gpre)


# Loss head

def softmax_xent_rows(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                      denom: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row loss (float64, zero off-mask), gradient rows scaled by 1/denom, correctness flags"""
    if denom <= 0:
        raise ValueError("empty mask")
    lg = logits.astype(np.float64)
    shifted = lg - lg.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    idx = np.arange(lg.shape[0])
    row_loss = np.where(mask, lse - shifted[idx, labels], 0.0)
    probs = np.exp(shifted - lse[:, None])
    probs[idx, labels] -= 1.0
    grad = (probs / denom) * mask[:, None]
    correct = np.argmax(logits, axis=1) == labels
    return row_loss, grad.astype(logits.dtype), correct


def mean_loss(row_loss: np.ndarray, mask: np.ndarray) -> float:
    return float(row_loss.sum() / np.count_nonzero(mask))


def softmax_xent(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray, int]:
    """Mean cross-entropy over masked rows, its gradient and the masked correct count"""
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[0] != mask.size:
        raise ShapeError("logits and mask disagree on the number of vertices")
    n = int(np.count_nonzero(mask))
    row_loss, grad, correct = softmax_xent_rows(logits, labels, mask, n)
    return mean_loss(row_loss, mask), grad, int(np.count_nonzero(correct & mask))


# Optimizers

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    eps: float = ADAM_EPS
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    """Bias-corrected Adam update, in place on params and state"""
    for k in params:
        if k not in grads or grads[k].shape != params[k].shape:
            raise ShapeError(f"gradient for {k} missing or mis-shaped")
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    step_size = state.lr / bc1
    for k in params:
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        state.m[k] *= state.beta1
        state.m[k] += (1.0 - state.beta1) * g
        state.v[k] *= state.beta2
        state.v[k] += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[k] * (1.0 / bc2)) + state.eps
        params[k] -= step_size * state.m[k] / denom


class Adam:
    def __init__(self, lr: float = 0.001):
        self.state = AdamState(lr=lr)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        adam_step(self.state, params, grads)


class SGD:
    """Plain gradient descent, the literal update rule of the chunk pipeline"""

    def __init__(self, lr: float = 0.001):
        self.lr = lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        for k in params:
            if k not in grads or grads[k].shape != params[k].shape:
                raise ShapeError(f"gradient for {k} missing or mis-shaped")
            params[k] -= self.lr * grads[k]


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")
