"""
Configuration for the pipelined GNN training simulator
"""
import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from errors import ConfigError

# Base paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
RUNS_DIR = BASE_DIR / "runs"
LOGS_DIR = BASE_DIR / "logs"
TEMPLATE_DIR = BASE_DIR / "templates"


def ensure_dir(path: Path) -> Path:
    """Create a directory (and parents) if missing and return it"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# Byte accounting
BYTES_PER_VALUE = 4  # every embedding/gradient value is accounted as f32
ID_BYTES = 8  # vertex-id framing, tracked separately from volume
GIB = 2 ** 30

# Partitioning
BALANCE_EPS = 0.05

# Model defaults
DEFAULT_LR = 0.001
DEFAULT_DROPOUT = 0.5
GCNII_ALPHA = 0.1
GCNII_LAMBDA = 0.5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Pipeline defaults
DEFAULT_STAGES = 8
CHUNKS_PER_STAGE = 4
DEFAULT_FIX_ALPHA = 10
WATCHDOG_TIMEOUT_S = 60.0

# Simulated time (used only for traces and bubble analysis)
COST_MODEL = {
    "mode": "rows",  # "rows": cost scales with chunk size; "uniform": fixed per chunk
    "seconds_per_row_layer": 1e-6,
    "seconds_per_chunk_layer": 1e-3,
    "backward_ratio": 2.0,
    "bandwidth": {
        "intra-node": 100e9,  # bytes per second
        "inter-node": 25e9,
    },
}

# Seed stream slots, so unrelated random draws never share a generator
SEED_STREAMS = {
    "init": 11,
    "dropout": 23,
    "shuffle": 37,
    "features": 41,
    "split": 53,
}

# Reference datasets (vertex count, edges, features, classes, replication
# factor with 8 partitions, hidden width used for the volume table; the
# published physics volumes only reproduce with H = 1000)
REFERENCE_DATASETS = {
    "squirrel": {"num_vertices": 5200, "num_edges": 396700, "num_features": 2089,
                 "num_classes": 5, "alpha": 2.22, "avg_degree": 76.3, "hidden": 1000},
    "physics": {"num_vertices": 34500, "num_edges": 495900, "num_features": 8415,
                "num_classes": 5, "alpha": 0.99, "avg_degree": 14.4, "hidden": 1000},
    "flickr": {"num_vertices": 89300, "num_edges": 899800, "num_features": 500,
               "num_classes": 7, "alpha": 2.15, "avg_degree": 10.1, "hidden": 100},
    "reddit": {"num_vertices": 233000, "num_edges": 114600000, "num_features": 602,
               "num_classes": 41, "alpha": 2.61, "avg_degree": 491.8, "hidden": 100},
}

# Published per-epoch pipeline volumes in GiB, 8 stages
REFERENCE_PIPELINE_GIB = {
    ("squirrel", "gcn"): 0.27, ("squirrel", "gcnii"): 0.54,
    ("physics", "gcn"): 0.18, ("physics", "gcnii"): 0.36,
    ("flickr", "gcn"): 0.47, ("flickr", "gcnii"): 0.93,
    ("reddit", "gcn"): 1.22, ("reddit", "gcnii"): 2.43,
}

# Published graph-parallel volumes (GiB) for GCNII at increasing depth
REFERENCE_DEPTH_GRAPH_GIB = {
    "squirrel": {8: 1.22, 16: 2.32, 32: 4.53, 64: 8.95, 128: 17.80},
    "physics": {8: 0.25, 16: 0.46, 32: 0.88, 64: 1.71, 128: 3.38},
}

# Output files
RUN_FILES = {
    "metrics": "metrics.csv",
    "trace": "trace.jsonl",
    "comm_report": "comm_report.csv",
    "config": "config.json",
    "analysis": "analysis.csv",
    "comparison": "comparison.csv",
    "series": "series.csv",
    "html": "compare_report.html",
}

METRICS_COLUMNS = [
    "mode", "epoch", "train_loss", "train_acc", "val_acc", "test_acc",
    "comm_bytes_graph", "comm_bytes_pipeline", "comm_bytes_weightsync",
    "wall_time_s", "bubble_fraction",
]

REPORT_CONFIG = {
    "title": "Pipelined GNN Training Comparison",
    "subtitle": "Per-epoch communication, accuracy and pipeline bubbles",
}


class RunConfig(BaseModel):
    """Resolved configuration of a single training run"""

    dataset: Optional[str] = None
    generator: Optional[str] = None  # e.g. "sbm:4x100:0.1:0.005" or "er:1000:0.01"
    mode: Literal["sequential", "graph", "pipeline", "hybrid"] = "pipeline"
    model: Literal["gcn", "sage", "gcnii"] = "gcnii"
    layers: int = Field(32, ge=1)
    hidden: int = Field(100, ge=1)
    epochs: int = Field(200, ge=0)
    lr: float = DEFAULT_LR
    dropout: float = DEFAULT_DROPOUT
    optimizer: Literal["adam", "sgd"] = "adam"
    seed: int = 0
    workers: Optional[int] = Field(None, ge=1)
    stages: Optional[int] = Field(None, ge=1)
    group_size: int = Field(1, ge=1)
    chunks: Optional[int] = Field(None, ge=1)
    workers_per_node: int = Field(4, ge=1)
    shuffle: bool = True
    fix_alpha: int = DEFAULT_FIX_ALPHA
    historical_grads: bool = False
    synchronous: bool = False
    deterministic: bool = True
    precision: Literal["float32", "float64"] = "float32"
    self_loops: bool = True
    gcnii_alpha: float = GCNII_ALPHA
    gcnii_lambda: float = GCNII_LAMBDA
    partition_file: Optional[str] = None
    chunk_file: Optional[str] = None
    cost_mode: Literal["rows", "uniform"] = COST_MODEL["mode"]
    watchdog_timeout: float = Field(WATCHDOG_TIMEOUT_S, gt=0)
    out: str = str(RUNS_DIR / "latest")

    @field_validator("lr")
    @classmethod
    def _positive_lr(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("lr must be positive")
        return value

    @field_validator("dropout")
    @classmethod
    def _dropout_range(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        return value

    @field_validator("fix_alpha")
    @classmethod
    def _fix_alpha_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("fix_alpha must be >= 1")
        return value

    @field_validator("gcnii_alpha")
    @classmethod
    def _gcnii_alpha_range(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("gcnii_alpha must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def _mode_consistency(self) -> "RunConfig":
        if self.dataset is None and self.generator is None:
            raise ValueError("either dataset or generator must be given")
        if self.mode == "sequential":
            if (self.workers or 1) != 1:
                raise ValueError("sequential mode requires workers == 1")
            self.workers, self.stages, self.group_size = 1, 1, 1
        elif self.mode == "graph":
            if self.stages not in (None, 1):
                raise ValueError("graph mode requires stages == 1")
            self.workers = self.workers or self.group_size
            self.stages, self.group_size = 1, self.workers
        elif self.mode == "pipeline":
            if self.group_size != 1:
                raise ValueError("pipeline mode requires group_size == 1")
            self.stages = self.stages or self.workers or DEFAULT_STAGES
            self.workers = self.workers or self.stages
            if self.stages != self.workers:
                raise ValueError(
                    f"pipeline mode requires stages == workers (got S={self.stages}, M={self.workers})")
        else:
            self.stages = self.stages or DEFAULT_STAGES
            self.workers = self.workers or self.stages * self.group_size
            if self.stages * self.group_size != self.workers:
                raise ValueError(
                    f"hybrid mode requires stages * group_size == workers "
                    f"(got S={self.stages}, G={self.group_size}, M={self.workers})")
        if self.stages > self.layers:
            raise ValueError(f"cannot split {self.layers} layers over {self.stages} stages")
        if self.chunks is None:
            self.chunks = CHUNKS_PER_STAGE * self.stages if self.mode in ("pipeline", "hybrid") else 1
        return self

    @classmethod
    def resolve(cls, config_file: Optional[Path] = None,
                overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """Merge defaults, a JSON config file and explicit overrides (highest wins)"""
        values: Dict[str, Any] = {}
        if config_file is not None:
            try:
                with open(config_file) as f:
                    values.update(json.load(f))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config file {config_file}: {e}") from e
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(str(e)) from e

    def dump(self, path: Path) -> Path:
        """Write the resolved configuration as JSON"""
        path = Path(path)
        ensure_dir(path.parent)
        with open(path, "w") as f:
            json.dump(self.model_dump(), f, indent=2, sort_keys=True)
        return path
