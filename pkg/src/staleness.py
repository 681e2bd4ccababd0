"""
Stale-embedding control for the asynchronous pipeline.

A worker keeps, for every layer input it aggregates over, the rows written
this epoch plus a snapshot taken at the end of epoch t whenever
t % fix_alpha == 0. Rows not yet written in the current epoch are read from
that snapshot, so during epoch t every historical read is tagged with
version fix_alpha * floor((t - 1) / fix_alpha). Version 0 is all zeros.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Optional

import numpy as np

from config import DEFAULT_FIX_ALPHA
from errors import VersionError

logger = logging.getLogger("pipegnn.staleness")


@dataclass(frozen=True)
class StalenessConfig:
    shuffle_chunks: bool = True
    fix_alpha: int = DEFAULT_FIX_ALPHA
    historical_gradients: bool = False
    synchronous_mode: bool = False
    check_versions: bool = True

    def __post_init__(self):
        if self.fix_alpha < 1:
            raise ValueError("fix_alpha must be >= 1")


# Ablation variants compared by `compare --ablation`
ABLATION_PRESETS: Dict[str, StalenessConfig] = {
    "all": StalenessConfig(),
    "no-shuffle": StalenessConfig(shuffle_chunks=False),
    "no-fix": StalenessConfig(fix_alpha=1),
    "historical-grads": StalenessConfig(historical_gradients=True),
    "none": StalenessConfig(shuffle_chunks=False, fix_alpha=1),
}


def ablation_preset(name: str, **overrides) -> StalenessConfig:
    if name not in ABLATION_PRESETS:
        raise ValueError(f"unknown ablation preset {name!r}; choose from {sorted(ABLATION_PRESETS)}")
    return replace(ABLATION_PRESETS[name], **overrides)


def snapshot_version(epoch_number: int, fix_alpha: int) -> int:
    """Version readable during 1-based epoch t"""
    return fix_alpha * ((epoch_number - 1) // fix_alpha)


class _LayerBuffer:
    def __init__(self, num_vertices: int, width: int, dtype, keep_snapshot: bool):
        self.current = np.zeros((num_vertices, width), dtype=dtype)
        self.mixed = np.zeros((num_vertices, width), dtype=dtype)
        self.snapshot = np.zeros((num_vertices, width), dtype=dtype) if keep_snapshot else None
        self.version = 0
        self.processed = np.zeros(num_vertices, dtype=bool)
        self.mask: Optional[np.ndarray] = None


class EmbeddingStore:
    """
    Per-layer row buffers with snapshot versioning.

    `read(layer)` returns the buffer the aggregation gathers from: rows
    written this epoch (after the dropout mask of that layer input) and the
    snapshot for everything else. With `use_snapshot=False` unwritten rows
    read as zero; the gradient store runs that way unless historical
    gradients are enabled.
    """

    def __init__(self, layers: Iterable[int], num_vertices: int, width: int, dtype=np.float32,
                 fix_alpha: int = DEFAULT_FIX_ALPHA, use_snapshot: bool = True,
                 check_versions: bool = True, expected_rows: Optional[np.ndarray] = None,
                 name: str = "embedding"):
        if fix_alpha < 1:
            raise ValueError("fix_alpha must be >= 1")
        self.fix_alpha = fix_alpha
        self.use_snapshot = use_snapshot
        self.check_versions = check_versions
        self.expected_rows = expected_rows
        self.name = name
        self.num_vertices = num_vertices
        self.buffers: Dict[int, _LayerBuffer] = {
            layer: _LayerBuffer(num_vertices, width, dtype, use_snapshot) for layer in layers
        }
        self.epoch_number = 0

    @classmethod
    def for_embeddings(cls, layers, num_vertices, width, dtype, config: StalenessConfig, **kwargs):
        return cls(layers, num_vertices, width, dtype, config.fix_alpha, True,
                   config.check_versions, name="embedding", **kwargs)

    @classmethod
    def for_gradients(cls, layers, num_vertices, width, dtype, config: StalenessConfig, **kwargs):
        return cls(layers, num_vertices, width, dtype, config.fix_alpha, config.historical_gradients,
                   config.check_versions, name="gradient", **kwargs)

    @property
    def expected_version(self) -> int:
        return snapshot_version(self.epoch_number, self.fix_alpha)

    def _buffer(self, layer: int) -> _LayerBuffer:
        if layer not in self.buffers:
            raise KeyError(f"{self.name} store holds no layer {layer}")
        return self.buffers[layer]

    def begin_epoch(self, epoch: int, masks: Optional[Dict[int, np.ndarray]] = None) -> None:
        """Start 0-based epoch `epoch`; masks map layer -> dropout multiplier over all vertices"""
        self.epoch_number = epoch + 1
        masks = masks or {}
        for layer, buf in self.buffers.items():
            if self.use_snapshot:
                if self.check_versions and buf.version != self.expected_version:
                    raise VersionError(f"{self.name} layer {layer}: snapshot version {buf.version}, "
                                       f"epoch {self.epoch_number} expects {self.expected_version}")
                mask = masks.get(layer)
                buf.mixed[:] = buf.snapshot if mask is None else buf.snapshot * mask
            else:
                buf.mixed[:] = 0
            buf.mask = masks.get(layer)
            buf.processed[:] = False

    def write(self, layer: int, rows: np.ndarray, values: np.ndarray) -> None:
        """Store this epoch's raw rows; the readable buffer gets them after the layer mask"""
        buf = self._buffer(layer)
        if self.check_versions and buf.processed[rows].any():
            raise VersionError(f"{self.name} layer {layer}: rows written twice in epoch {self.epoch_number}")
        buf.current[rows] = values
        buf.mixed[rows] = values if buf.mask is None else values * buf.mask[rows]
        buf.processed[rows] = True

    def current(self, layer: int) -> np.ndarray:
        return self._buffer(layer).current

    def read(self, layer: int) -> np.ndarray:
        buf = self._buffer(layer)
        if self.check_versions and self.use_snapshot and buf.version != self.expected_version:
            raise VersionError(f"{self.name} layer {layer}: read of version {buf.version} "
                               f"in epoch {self.epoch_number}")
        return buf.mixed

    def entry_versions(self, layer: int) -> np.ndarray:
        """Version of every row as the aggregation would see it now (current epoch for written rows)"""
        buf = self._buffer(layer)
        return np.where(buf.processed, self.epoch_number, buf.version if self.use_snapshot else -1)

    def processed(self, layer: int) -> np.ndarray:
        return self._buffer(layer).processed

    def end_epoch(self) -> bool:
        """Check coverage and take the snapshot when the epoch number is a multiple of fix_alpha"""
        if self.check_versions and self.expected_rows is not None:
            for layer, buf in self.buffers.items():
                if not buf.processed[self.expected_rows].all():
                    missing = int(np.count_nonzero(~buf.processed[self.expected_rows]))
                    raise VersionError(f"{self.name} layer {layer}: {missing} rows never written "
                                       f"in epoch {self.epoch_number}")
        if not self.use_snapshot or self.epoch_number % self.fix_alpha != 0:
            return False
        for buf in self.buffers.values():
            buf.snapshot[:] = buf.current
            buf.version = self.epoch_number
        logger.debug(f"{self.name} snapshot refreshed at epoch {self.epoch_number}")
        return True
