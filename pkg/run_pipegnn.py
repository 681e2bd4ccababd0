#!/usr/bin/env python3
"""
Main entry point for the pipelined GNN training simulator
"""
import argparse
import csv
import logging
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from pydantic import ValidationError

# Add src directory to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

from analytics import (REPORT_COLUMNS, CommModelInput, boundary_sweep, bubble_analysis, crossover_report,
                       depth_sweep, reference_pipeline_table, report_row, to_gib, volume_graph_exact,
                       volume_pipeline, write_rows)
from checkpoint import save_checkpoint
from comm_fabric import assign_groups, write_comm_report
from config import LOGS_DIR, METRICS_COLUMNS, REFERENCE_DATASETS, RUN_FILES, RunConfig, ensure_dir
from engines import (TrainingResult, TrainOptions, assign_stages, train_graph_parallel, train_hybrid,
                     train_pipeline, train_sequential)
from errors import ConfigError, DatasetFormatError, PipeGNNError
from graph_core import Dataset, dataset_from_graph, generate_er, generate_like, generate_sbm, load_dataset, save_dataset
from nn_core import ModelConfig
from partition import (ChunkPlan, Partition, chunk_plan_from_assignment, edge_cut, expected_boundary,
                       load_assignment, make_chunks, monte_carlo_boundary, partition_from_assignment,
                       partition_vertices, random_partition, replication_factor, save_assignment)
from report_generator import ReportGenerator
from sim_clock import CostModel, read_trace, write_trace
from staleness import ABLATION_PRESETS, StalenessConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
ER_DEFAULT_FEATURES, ER_DEFAULT_CLASSES = 16, 4
VARIANCE_WINDOW = 50


def parse_generator(spec: str, seed: int) -> Dataset:
    """sbm:<blocks>x<size>:<p_in>:<p_out> | er:<n>:<p>[:<features>:<classes>] | like:<name>[:<scale>]"""
    parts = spec.split(":")
    try:
        if parts[0] == "sbm" and len(parts) == 4:
            blocks, size = (int(x) for x in parts[1].split("x"))
            return generate_sbm(blocks, size, float(parts[2]), float(parts[3]), seed)
        if parts[0] == "er" and len(parts) in (3, 5):
            features, classes = (int(parts[3]), int(parts[4])) if len(parts) == 5 else \
                (ER_DEFAULT_FEATURES, ER_DEFAULT_CLASSES)
            return dataset_from_graph(generate_er(int(parts[1]), float(parts[2]), seed), features, classes, seed)
        if parts[0] == "like" and len(parts) in (2, 3):
            return generate_like(parts[1], seed, float(parts[2]) if len(parts) == 3 else 1.0)
    except ValueError as e:
        raise ConfigError(f"bad generator spec {spec!r}: {e}") from e
    raise ConfigError(f"bad generator spec {spec!r}")


def parse_int_list(text: str) -> List[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from e
    if not values:
        raise ConfigError("empty list")
    return values


@dataclass
class TrainingRun:
    config: RunConfig
    model_config: ModelConfig
    result: TrainingResult
    partition: Optional[Partition] = None
    chunk_plan: Optional[ChunkPlan] = None
    num_vertices: int = 0


class ExperimentOrchestrator:
    """Wires datasets, partitions, engines and reports together for every subcommand"""

    def __init__(self, debug: bool = False):
        self.logger = self._setup_logger(debug)

    def _setup_logger(self, debug: bool) -> logging.Logger:
        """Setup logging for the simulator"""
        logger = logging.getLogger("pipegnn")
        logger.setLevel(logging.DEBUG if debug else logging.INFO)

        if not logger.handlers:
            ensure_dir(LOGS_DIR)
            handler = logging.FileHandler(LOGS_DIR / "pipegnn.log")
            handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
            logger.addHandler(handler)
            console = logging.StreamHandler()
            console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
            logger.addHandler(console)

        return logger

    # datasets

    def load_data(self, cfg: RunConfig) -> Dataset:
        if cfg.dataset is not None:
            return load_dataset(cfg.dataset)
        return parse_generator(cfg.generator, cfg.seed)

    def cmd_gen(self, args) -> Path:
        if args.sbm:
            blocks, size = (int(x) for x in args.sbm.split("x"))
            dataset = generate_sbm(blocks, size, args.p_in, args.p_out, args.seed)
        elif args.er:
            n, p = int(args.er[0]), float(args.er[1])
            dataset = dataset_from_graph(generate_er(n, p, args.seed), args.features or ER_DEFAULT_FEATURES,
                                         args.classes or ER_DEFAULT_CLASSES, args.seed)
        elif args.like:
            dataset = generate_like(args.like, args.seed, args.scale, args.features)
        else:
            raise ConfigError("gen needs one of --sbm, --er or --like")
        path = save_dataset(dataset, args.out)
        self.logger.info(f"Dataset written to {path}: N={dataset.num_vertices} E={dataset.graph.num_edges} "
                         f"F={dataset.num_features} C={dataset.num_classes}")
        return path

    def cmd_partition(self, args) -> Dict:
        dataset = load_dataset(args.dataset)
        graph = dataset.graph
        partition = partition_vertices(graph, args.parts, args.seed)
        baseline = partition_from_assignment(graph, random_partition(graph.num_vertices, args.parts, args.seed),
                                             args.parts)
        summary = {
            "parts": args.parts,
            "alpha": replication_factor(partition),
            "edge_cut": edge_cut(graph, partition.assignment),
            "random_alpha": replication_factor(baseline),
            "random_edge_cut": edge_cut(graph, baseline.assignment),
            "balanced": partition.is_balanced(),
        }
        save_assignment(args.out, args.parts, partition.assignment)
        print(f"parts={args.parts} alpha={summary['alpha']:.4f} edge_cut={summary['edge_cut']} "
              f"(random: alpha={summary['random_alpha']:.4f} edge_cut={summary['random_edge_cut']})")
        if args.chunks:
            plan = make_chunks(graph, args.chunks, args.seed)
            save_assignment(args.chunk_out or Path(args.out).with_suffix(".chunks"), args.chunks, plan.chunk_of)
        return summary

    # training

    def _partition_for(self, cfg: RunConfig, dataset: Dataset, parts: int) -> Partition:
        if cfg.partition_file:
            num_parts, assignment = load_assignment(cfg.partition_file)
            if num_parts != parts:
                raise ConfigError(f"{cfg.partition_file} has {num_parts} parts, run needs {parts}")
            return partition_from_assignment(dataset.graph, assignment, num_parts)
        return partition_vertices(dataset.graph, parts, cfg.seed)

    def _chunks_for(self, cfg: RunConfig, dataset: Dataset) -> ChunkPlan:
        if cfg.chunk_file:
            num_chunks, chunk_of = load_assignment(cfg.chunk_file)
            return chunk_plan_from_assignment(chunk_of, num_chunks)
        return make_chunks(dataset.graph, cfg.chunks, cfg.seed)

    def run_training(self, cfg: RunConfig, dataset: Optional[Dataset] = None,
                     staleness: Optional[StalenessConfig] = None) -> TrainingRun:
        dataset = dataset or self.load_data(cfg)
        model_config = ModelConfig(cfg.model, cfg.layers, cfg.hidden, dataset.num_features, dataset.num_classes,
                                   cfg.dropout, cfg.gcnii_alpha, cfg.gcnii_lambda, cfg.precision, cfg.self_loops)
        options = TrainOptions(cfg.lr, cfg.optimizer, cfg.deterministic, CostModel(mode=cfg.cost_mode),
                               cfg.watchdog_timeout, cfg.workers_per_node)
        staleness = staleness or StalenessConfig(cfg.shuffle, cfg.fix_alpha, cfg.historical_grads, cfg.synchronous)
        self.logger.info(f"Training {cfg.model} L={cfg.layers} H={cfg.hidden} in {cfg.mode} mode "
                         f"on N={dataset.num_vertices} for {cfg.epochs} epochs")

        if cfg.mode == "sequential":
            result = train_sequential(dataset, model_config, cfg.epochs, cfg.seed, options)
            return TrainingRun(cfg, model_config, result, num_vertices=dataset.num_vertices)
        if cfg.mode == "graph":
            partition = self._partition_for(cfg, dataset, cfg.workers)
            result = train_graph_parallel(dataset, partition, model_config, cfg.epochs, cfg.seed, options)
            return TrainingRun(cfg, model_config, result, partition, num_vertices=dataset.num_vertices)

        plan = self._chunks_for(cfg, dataset)
        stages = assign_stages(cfg.layers, cfg.stages)
        if cfg.mode == "pipeline":
            result = train_pipeline(dataset, plan, stages, staleness, model_config, cfg.epochs, cfg.seed, options)
            return TrainingRun(cfg, model_config, result, None, plan, dataset.num_vertices)
        partition = self._partition_for(cfg, dataset, cfg.group_size)
        group_map = assign_groups(cfg.workers, cfg.workers_per_node, cfg.stages, cfg.group_size)
        result = train_hybrid(dataset, partition, plan, stages, group_map, staleness, model_config,
                              cfg.epochs, cfg.seed, options)
        return TrainingRun(cfg, model_config, result, partition, plan, dataset.num_vertices)

    def write_run(self, run: TrainingRun, out: Path) -> Path:
        out = ensure_dir(out)
        result = run.result
        run.config.dump(out / RUN_FILES["config"])
        with open(out / RUN_FILES["metrics"], "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_COLUMNS)
            writer.writerows(m.as_row(run.config.mode) for m in result.metrics)
        write_trace(result.trace, out / RUN_FILES["trace"])
        write_comm_report(result.comm_reports, out / RUN_FILES["comm_report"])
        for stage, params in result.stage_params.items():
            save_checkpoint(out / "checkpoints" / f"stage{stage}.ckpt", params,
                            {"stage": stage, "mode": run.config.mode, "model": run.config.model})
        if result.peak_stash_bytes:
            self.logger.info(f"Peak activation stash per worker (bytes): {result.peak_stash_bytes}")
        return out

    def cmd_train(self, cfg: RunConfig) -> TrainingRun:
        run = self.run_training(cfg)
        out = self.write_run(run, Path(cfg.out))
        final = run.result.final
        if final is not None:
            print(f"final: loss={final.train_loss:.4f} val_acc={final.val_acc:.3f} test_acc={final.test_acc:.3f}")
        self.logger.info(f"Run written to {out}")
        return run

    # analysis

    def cmd_analyze(self, args) -> List[Dict]:
        rows: List[Dict] = []
        like = REFERENCE_DATASETS.get(args.like) if args.like else None
        N = args.num_vertices or (like["num_vertices"] if like else None)
        H = args.hidden or (like["hidden"] if like else None)
        alpha = args.alpha if args.alpha is not None else (like["alpha"] if like else 0.0)

        if args.reference_table:
            rows += [{"analysis": "reference_pipeline", **r} for r in reference_pipeline_table(args.stages)]
        if args.sweep_depth:
            self._require(N, H)
            depth_rows, r2 = depth_sweep(N, H, args.stages, alpha, parse_int_list(args.sweep_depth), args.vecs)
            for r in depth_rows:
                rows.append({"analysis": "depth_sweep", "mode": args.mode, "N": N, "H": H, "S": args.stages,
                             "alpha": alpha, **r, "r_squared": r2})
        if args.crossover:
            self._require(N, H)
            report = crossover_report(N, args.layers, H, args.stages, alpha, args.hybrid_stages,
                                      args.alpha_hybrid, args.vecs)
            for c in report.comparisons:
                rows.append({"analysis": "crossover", "left": c.left, "right": c.right, "left_term": c.left_term,
                             "right_term": c.right_term, "winner": c.winner, "margin": c.margin,
                             "inequality": c.inequality})
            print(f"ordering: {' < '.join(report.ordering)}")
            for note in report.notes:
                print(f"note: {note}")
        if args.expected_boundary:
            n, m, p = int(args.expected_boundary[0]), int(args.expected_boundary[1]), float(args.expected_boundary[2])
            eb = expected_boundary(n, m, p)
            row = {"analysis": "expected_boundary", "n": n, "m": m, "p": p, "expected_boundary": eb,
                   "fraction_of_outside": eb / (n - n / m) if m > 1 else 0.0}
            if args.monte_carlo:
                sample = monte_carlo_boundary(n, m, p, args.monte_carlo, args.seed)
                row.update({"mc_mean": sample.mean, "mc_stderr": sample.stderr})
            rows.append(row)
        if args.sweep_workers:
            if not args.boundary_graph:
                raise ConfigError("--sweep-workers needs --boundary-graph N P")
            n, p = int(args.boundary_graph[0]), float(args.boundary_graph[1])
            rows += [{"analysis": "boundary_sweep", "n": n, "p": p, **r}
                     for r in boundary_sweep(n, p, parse_int_list(args.sweep_workers))]
        if args.bubble:
            analysis = bubble_analysis(read_trace(args.bubble), args.stages, args.chunks, args.workers)
            rows.append({"analysis": "bubble", "S": args.stages, "K": args.chunks,
                         "measured_bubble": analysis.measured_bubble, "ideal_bubble": analysis.ideal_bubble})
        if not rows:
            raise ConfigError("nothing to analyze: pass at least one analysis option")

        columns: List[str] = []
        for row in rows:
            columns += [k for k in row if k not in columns]
        path = write_rows(rows, Path(args.out) / RUN_FILES["analysis"], columns)
        self.logger.info(f"Analysis written to {path} ({len(rows)} rows)")
        return rows

    @staticmethod
    def _require(N, H) -> None:
        if not N or not H:
            raise ConfigError("need --num-vertices and --hidden (or --like NAME)")

    def predicted_vs_measured(self, run: TrainingRun) -> Dict:
        cfg, result, N = run.config, run.result, run.num_vertices
        boundary = run.partition.boundary_sizes() if run.partition is not None else []
        alpha = sum(boundary) / N
        inp = CommModelInput(N, cfg.layers, cfg.hidden, cfg.stages, cfg.group_size, alpha, run.model_config.vecs)
        predicted = volume_graph_exact(boundary, cfg.layers, cfg.hidden)
        if cfg.mode in ("pipeline", "hybrid"):
            predicted += volume_pipeline(inp)
        first = result.metrics[0] if result.metrics else None
        measured = first.comm_bytes_graph + first.comm_bytes_pipeline if first else None
        return report_row(cfg.mode, inp, predicted, measured)

    @staticmethod
    def _variant_config(base: RunConfig, mode: str, seed: int) -> RunConfig:
        """Same run in another mode, keeping the total worker count M of the base configuration"""
        values = base.model_dump()
        values.update(mode=mode, seed=seed)
        if mode == base.mode:
            return RunConfig(**values)
        M = base.workers
        values["chunks"] = None
        if mode == "sequential":
            values.update(workers=1, stages=None, group_size=1)
        elif mode == "graph":
            values.update(workers=M, stages=None, group_size=1)
        elif mode == "pipeline":
            values.update(workers=M, stages=M, group_size=1)
        else:
            values.update(workers=None)
        return RunConfig(**values)

    def cmd_compare(self, base: RunConfig, modes: List[str], seeds: List[int], ablation: bool) -> Dict:
        out = ensure_dir(Path(base.out))
        variants = [(name, "pipeline", preset) for name, preset in ABLATION_PRESETS.items()] \
            if ablation else [(mode, mode, None) for mode in modes]
        runs, rows, series = [], [], []
        for seed in seeds:
            dataset = None
            for name, mode, preset in variants:
                cfg = self._variant_config(base, mode, seed)
                dataset = dataset or self.load_data(cfg)
                run = self.run_training(cfg, dataset, preset)
                self.write_run(run, out / f"{name}-seed{seed}")
                metrics = run.result.metrics
                val = np.array([m.val_acc for m in metrics[-VARIANCE_WINDOW:]])
                final = run.result.final
                runs.append({"name": name, "seed": seed, "epochs": len(metrics),
                             "final_loss": final.train_loss if final else float("nan"),
                             "val_acc": final.val_acc if final else 0.0,
                             "test_acc": final.test_acc if final else 0.0,
                             "pipeline_gib": to_gib(final.comm_bytes_pipeline) if final else 0.0,
                             "graph_gib": to_gib(final.comm_bytes_graph) if final else 0.0,
                             "bubble": final.bubble_fraction if final else 0.0,
                             "val_variance": float(val.var()) if val.size else 0.0})
                rows.append({**self.predicted_vs_measured(run), "mode": name})
                series += [{"run": name, "seed": seed, "epoch": m.epoch, "train_loss": m.train_loss,
                            "val_acc": m.val_acc, "test_acc": m.test_acc} for m in metrics]

        write_rows(rows, out / RUN_FILES["comparison"], REPORT_COLUMNS)
        write_rows(series, out / RUN_FILES["series"], ["run", "seed", "epoch", "train_loss", "val_acc", "test_acc"])
        notes = []
        if ablation:
            for name in ABLATION_PRESETS:
                variances = [r["val_variance"] for r in runs if r["name"] == name]
                notes.append(f"{name}: mean validation-accuracy variance over the last {VARIANCE_WINDOW} "
                             f"epochs = {np.mean(variances):.3e}")
        ReportGenerator().generate_report(out / RUN_FILES["html"], runs, rows, REPORT_COLUMNS, notes)
        return {"runs": runs, "rows": rows}


def add_training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    parser.add_argument("--dataset", help="dataset directory")
    parser.add_argument("--generator", help="sbm:4x100:0.1:0.005 | er:1000:0.01 | like:squirrel:0.1")
    parser.add_argument("--mode", choices=["sequential", "graph", "pipeline", "hybrid"])
    parser.add_argument("--model", choices=["gcn", "sage", "gcnii"])
    parser.add_argument("--layers", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--optimizer", choices=["adam", "sgd"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--stages", type=int)
    parser.add_argument("--group-size", type=int)
    parser.add_argument("--chunks", type=int)
    parser.add_argument("--workers-per-node", type=int)
    parser.add_argument("--no-shuffle", dest="shuffle", action="store_const", const=False)
    parser.add_argument("--fix-alpha", type=int)
    parser.add_argument("--historical-grads", action="store_const", const=True)
    parser.add_argument("--synchronous", action="store_const", const=True)
    parser.add_argument("--deterministic", dest="deterministic", action="store_const", const=True)
    parser.add_argument("--concurrent", dest="deterministic", action="store_const", const=False)
    parser.add_argument("--precision", choices=["float32", "float64"])
    parser.add_argument("--no-self-loops", dest="self_loops", action="store_const", const=False)
    parser.add_argument("--partition-file")
    parser.add_argument("--chunk-file")
    parser.add_argument("--cost-mode", choices=["rows", "uniform"])
    parser.add_argument("--watchdog-timeout", type=float)
    parser.add_argument("--out")


TRAINING_FIELDS = [
    "dataset", "generator", "mode", "model", "layers", "hidden", "epochs", "lr", "dropout", "optimizer", "seed",
    "workers", "stages", "group_size", "chunks", "workers_per_node", "shuffle", "fix_alpha", "historical_grads",
    "synchronous", "deterministic", "precision", "self_loops", "partition_file", "chunk_file", "cost_mode",
    "watchdog_timeout", "out",
]


def resolve_config(args) -> RunConfig:
    return RunConfig.resolve(args.config, {name: getattr(args, name, None) for name in TRAINING_FIELDS})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Pipelined full-graph GNN training simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s gen --sbm 4x100 --p-in 0.1 --p-out 0.005 --seed 1 --out data/sbm
  %(prog)s partition --dataset data/sbm --parts 4 --out data/sbm/parts.txt
  %(prog)s train --dataset data/sbm --mode pipeline --model gcnii --layers 8 --hidden 64 --stages 4
  %(prog)s analyze --reference-table --out runs/analysis
  %(prog)s compare --generator sbm:4x100:0.1:0.005 --modes graph,pipeline --seeds 0,1,2
        """)
    parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--sbm", help="<blocks>x<block_size>")
    gen.add_argument("--p-in", type=float, default=0.1)
    gen.add_argument("--p-out", type=float, default=0.005)
    gen.add_argument("--er", nargs=2, metavar=("N", "P"))
    gen.add_argument("--like", choices=sorted(REFERENCE_DATASETS))
    gen.add_argument("--scale", type=float, default=1.0)
    gen.add_argument("--features", type=int)
    gen.add_argument("--classes", type=int)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    part = sub.add_parser("partition", help="partition a dataset's vertices")
    part.add_argument("--dataset", required=True)
    part.add_argument("--parts", type=int, required=True)
    part.add_argument("--chunks", type=int)
    part.add_argument("--chunk-out")
    part.add_argument("--seed", type=int, default=0)
    part.add_argument("--out", required=True)

    train = sub.add_parser("train", help="train one configuration")
    add_training_flags(train)

    analyze = sub.add_parser("analyze", help="closed-form volumes, crossover and bubble analysis")
    analyze.add_argument("--reference-table", action="store_true")
    analyze.add_argument("--sweep-depth", help="comma-separated depths")
    analyze.add_argument("--mode", default="pipeline", choices=["pipeline", "graph", "hybrid"])
    analyze.add_argument("--crossover", action="store_true")
    analyze.add_argument("--expected-boundary", nargs=3, metavar=("N", "M", "P"))
    analyze.add_argument("--monte-carlo", type=int, metavar="SAMPLES")
    analyze.add_argument("--sweep-workers", help="comma-separated worker counts")
    analyze.add_argument("--boundary-graph", nargs=2, metavar=("N", "P"))
    analyze.add_argument("--bubble", metavar="TRACE")
    analyze.add_argument("--like", choices=sorted(REFERENCE_DATASETS))
    analyze.add_argument("--num-vertices", type=int)
    analyze.add_argument("--hidden", type=int)
    analyze.add_argument("--layers", type=int, default=32)
    analyze.add_argument("--stages", type=int, default=8)
    analyze.add_argument("--chunks", type=int)
    analyze.add_argument("--workers", type=int)
    analyze.add_argument("--alpha", type=float)
    analyze.add_argument("--hybrid-stages", type=int)
    analyze.add_argument("--alpha-hybrid", type=float)
    analyze.add_argument("--vecs", type=int, default=1)
    analyze.add_argument("--seed", type=int, default=0)
    analyze.add_argument("--out", default="runs/analysis")

    compare = sub.add_parser("compare", help="train several modes or ablation presets and compare them")
    add_training_flags(compare)
    compare.add_argument("--modes", default="graph,pipeline")
    compare.add_argument("--seeds", default="0")
    compare.add_argument("--ablation", action="store_true", help="run the staleness ablation presets")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    orchestrator = ExperimentOrchestrator(debug=args.debug)
    logger = orchestrator.logger
    try:
        if args.command == "gen":
            orchestrator.cmd_gen(args)
        elif args.command == "partition":
            orchestrator.cmd_partition(args)
        elif args.command == "train":
            orchestrator.cmd_train(resolve_config(args))
        elif args.command == "analyze":
            orchestrator.cmd_analyze(args)
        elif args.command == "compare":
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            orchestrator.cmd_compare(resolve_config(args), modes, parse_int_list(args.seeds), args.ablation)
        return EXIT_OK
    except (ConfigError, DatasetFormatError, ValidationError, ValueError) as e:
        logger.error(f"Error: {e}")
        return EXIT_USAGE
    except PipeGNNError as e:
        # DeadlockError, NumericError, CommError, VersionError
        logger.error(f"Runtime failure ({type(e).__name__}): {e}")
        logger.debug(traceback.format_exc())
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
