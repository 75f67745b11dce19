"""Command-line experiment runner: ``run``, ``sweep`` and ``stats``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import threading
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentSpec, config_hash, load_spec, to_dict
from .data import FORMATS, dataset_stats, filter_and_split, load_dataset
from .federation import RunConfig, run_experiment
from .graph import build_global_graph, build_subgraphs

RESULT_FIELDS = (
    "type", "config_hash", "user_strategy", "item_strategy", "clients_per_round", "alpha_mode",
    "seed", "k", "test_ndcg", "test_ndcg_ci", "test_hr", "test_hr_ci", "valid_ndcg", "best_round",
    "rounds_run", "wall_time", "config",
)
ROUND_FIELDS = ("type", "config_hash", "round", "alpha", "selected", "mean_loss", "valid_ndcg", "valid_hr")


class ResultsWriter:
    """Line-delimited JSON results: one header line, then records.

    Writes go through a lock so sweep cells running on several threads
    still produce whole lines.
    """

    def __init__(self, path=None):
        self._lock = threading.Lock()
        if path is None:
            self._fh, self._own = sys.stdout, False
        else:
            path = Path(path)
            if path.parent and not path.parent.exists():
                path.parent.mkdir(parents=True, exist_ok=True)
            self._fh, self._own = open(path, "w"), True
        self.write({"type": "header", "format": "fedgraph-results", "version": 1,
                    "result_fields": list(RESULT_FIELDS), "round_fields": list(ROUND_FIELDS)})

    def write(self, record: dict) -> None:
        line = json.dumps(record, separators=(", ", ": "))
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self):
        if self._own:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_results(records, path) -> None:
    with ResultsWriter(path) as w:
        for rec in records:
            w.write(rec)


def cell_payload(spec: ExperimentSpec, cfg: RunConfig) -> dict:
    """Everything needed to re-run one cell: dataset, preprocessing, run config."""
    return {"dataset": to_dict(spec.dataset), "preprocessing": to_dict(spec.preprocessing),
            "run": to_dict(cfg)}


def result_record(payload: dict, cfg: RunConfig, report, wall_time: float) -> dict:
    k = cfg.eval_k
    nd, hr = report.test[f"ndcg@{k}"], report.test[f"hr@{k}"]
    values = {
        "type": "result",
        "config_hash": config_hash(payload),
        "user_strategy": cfg.aggregation.user_strategy,
        "item_strategy": cfg.aggregation.item_strategy,
        "clients_per_round": cfg.clients_per_round,
        "alpha_mode": cfg.aggregation.alpha_mode,
        "seed": cfg.seed,
        "k": k,
        "test_ndcg": nd.mean,
        "test_ndcg_ci": nd.ci95_halfwidth,
        "test_hr": hr.mean,
        "test_hr_ci": hr.ci95_halfwidth,
        "valid_ndcg": report.valid[f"ndcg@{k}"].mean if report.valid else None,
        "best_round": report.best_round,
        "rounds_run": len(report.rounds),
        "wall_time": round(wall_time, 3),
        "config": payload,
    }
    return {name: values[name] for name in RESULT_FIELDS}


def round_record(chash: str, rec: dict, k: int) -> dict:
    values = {"type": "round", "config_hash": chash, "round": rec["round"], "alpha": rec["alpha"],
              "selected": rec["selected"], "mean_loss": rec["mean_loss"],
              "valid_ndcg": rec.get(f"valid_ndcg@{k}"), "valid_hr": rec.get(f"valid_hr@{k}")}
    return {name: values[name] for name in ROUND_FIELDS}


class Runner:
    """Loads the dataset once and reuses subgraphs across sweep cells."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        path = Path(spec.dataset.path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        pp = spec.preprocessing
        raw = load_dataset(path, spec.dataset.format)
        self.ds = filter_and_split(raw, pp.rating_threshold, pp.min_interactions, pp.split, pp.seed)
        self.graph = build_global_graph(self.ds)
        self._subgraphs = {}

    def subgraphs(self, cfg: RunConfig):
        key = (cfg.max_neighbors, cfg.edge_scope)
        if key not in self._subgraphs:
            self._subgraphs[key] = build_subgraphs(self.graph, cfg.max_neighbors, cfg.edge_scope)
        return self._subgraphs[key]

    def run_cell(self, cfg: RunConfig, writer: ResultsWriter, log_rounds: bool = True) -> dict:
        payload = cell_payload(self.spec, cfg)
        chash = config_hash(payload)

        def on_round(rec):
            if log_rounds:
                writer.write(round_record(chash, rec, cfg.eval_k))

        t0 = time.perf_counter()
        report = run_experiment(self.ds, cfg, on_round=on_round, subgraphs=self.subgraphs(cfg))
        record = result_record(payload, cfg, report, time.perf_counter() - t0)
        writer.write(record)
        return record


def _apply_cli_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    run = spec.run
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if getattr(args, "k", None) is not None:
        run = dataclasses.replace(run, eval_k=args.k)
    spec = dataclasses.replace(spec, run=run)
    spec.validate()
    return spec


def cmd_run(args) -> int:
    spec = _apply_cli_overrides(load_spec(args.config), args)
    runner = Runner(spec)
    with ResultsWriter(args.out) as w:
        rec = runner.run_cell(spec.run, w, log_rounds=not args.no_round_log)
    print(f"ndcg@{rec['k']}={rec['test_ndcg']:.4f}±{rec['test_ndcg_ci']:.4f} "
          f"hr@{rec['k']}={rec['test_hr']:.4f}±{rec['test_hr_ci']:.4f} best_round={rec['best_round']}",
          file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    spec = _apply_cli_overrides(load_spec(args.config), args)
    runner = Runner(spec)
    cells = spec.cells()
    with ResultsWriter(args.out) as w:
        for n, cfg in enumerate(cells, 1):
            rec = runner.run_cell(cfg, w, log_rounds=not args.no_round_log)
            print(f"[{n}/{len(cells)}] {rec['user_strategy']}/{rec['item_strategy']} "
                  f"clients={rec['clients_per_round']} alpha={rec['alpha_mode']} seed={rec['seed']} "
                  f"ndcg={rec['test_ndcg']:.4f} hr={rec['test_hr']:.4f}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    path = Path(args.dataset)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    st = dataset_stats(load_dataset(path, args.format))
    print(f"users\t{st.n_users:,}")
    print(f"items\t{st.n_items:,}")
    print(f"interactions\t{st.n_edges:,}")
    # truncated, not rounded, to match how published dataset tables report it
    print(f"sparsity\t{math.floor(st.sparsity * 1e4) / 100:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedgraph", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="cutoff for ndcg@k / hr@k")
    p.add_argument("--out", help="results file (default: stdout)")
    p.add_argument("--no-round-log", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every cell of the config's sweep grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--no-round-log", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stats", help="print dataset statistics (unfiltered)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", default="movielens-tab", choices=FORMATS)
    p.set_defaults(func=cmd_stats)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedgraph: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"fedgraph: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
