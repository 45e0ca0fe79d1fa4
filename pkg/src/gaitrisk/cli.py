"""Command-line entry point.

Commands: gen-data, train, eval, ablate, inspect. One JSON config file
drives everything; --seed/--out flags override it. Exit codes: 0 success,
1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    default_experiment_config,
    load_experiment_config,
    save_experiment_config,
)
from .data import Group, load_index, read_sequence, split_subjects

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_experiment_config(args.config)
    else:
        cfg = default_experiment_config()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.training.seed = args.seed
    if args.out is not None:
        cfg.out_dir = Path(args.out)
    cfg.validate()
    return cfg


def _load_split_index(cfg: ExperimentConfig):
    index_path = Path(cfg.data_dir) / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(
            f"dataset index not found at {index_path}; run gen-data first")
    index = load_index(index_path)
    return split_subjects(index, cfg.train_fraction, cfg.seed)


def cmd_gen_data(args) -> int:
    from .synthetic import generate_dataset

    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else Path(cfg.data_dir)
    index = generate_dataset(cfg.generator.n_subjects,
                             cfg.generator.class_distribution,
                             cfg.seed, out,
                             frames_range=(cfg.generator.frames_min,
                                           cfg.generator.frames_max),
                             progress=not args.quiet)
    n_risk = sum(1 for s in index.subjects if s.group is Group.EXPERIMENTAL)
    n_control = sum(1 for s in index.subjects if s.group is Group.CONTROL)
    print(f"generated {len(index.subjects)} subjects "
          f"({n_risk} at-risk / {n_control} control), "
          f"{len(index.sequences)} sequences -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train

    cfg = _resolve_config(args)
    if args.steps is not None:
        cfg.training.steps = args.steps
        if cfg.training.decay_step >= args.steps > 0:
            cfg.training.decay_step = max(int(args.steps * 0.8), 0)
    cfg.validate()
    index = _load_split_index(cfg)
    result = train(cfg.training, cfg.model, index, cfg.out_dir,
                   resume_from=args.from_checkpoint, quiet=args.quiet)
    if result.log_rows:
        step, lr, ce, tri, total = result.log_rows[-1]
        print(f"finished {cfg.training.steps} steps: ce={ce:.4f} tri={tri:.4f} "
              f"total={total:.4f} -> {result.final_checkpoint}")
    else:
        print(f"no steps run; wrote initial checkpoint -> "
              f"{result.final_checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import (evaluate, grading_histogram, write_histogram,
                             write_metrics_csv, write_roc)
    from .training import SequenceStore, load_checkpoint

    cfg = _resolve_config(args)
    if args.view is not None:
        cfg.evaluation.view = args.view
        cfg.evaluation.validate()
    checkpoint = args.checkpoint or str(Path(cfg.out_dir) / "checkpoint_final.gckp")
    params, _, extras = load_checkpoint(checkpoint, expect_model=cfg.model)
    index = _load_split_index(cfg)
    report, scores = evaluate(params, cfg.model, index, SequenceStore(index),
                              threshold=cfg.evaluation.threshold,
                              view_id=cfg.evaluation.view)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / "metrics.csv")
    write_roc(report, out / "roc.tsv")
    try:
        hist = grading_histogram(scores, index)
        write_histogram(hist, out / "grading_histogram.tsv")
    except ValueError:
        pass  # no risk-labeled sequences in this slice
    print(f"evaluated {len(scores)} sequences: acc={report.acc:.2f}% "
          f"prec={report.prec:.2f}% recall={report.recall:.2f}% "
          f"f1={report.f1:.2f}% auc={report.auc:.4f}")
    print(f"reports -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from dataclasses import replace
    from .evaluation import ablation_runner, write_ablation_tables

    cfg = _resolve_config(args)
    index = _load_split_index(cfg)
    train_cfg = replace(cfg.training, steps=cfg.ablation.steps,
                        decay_step=max(int(cfg.ablation.steps * 0.8), 0),
                        checkpoint_every=0)
    out = Path(cfg.out_dir)
    cells = ablation_runner(index, cfg.model, train_cfg, out / "ablation",
                            temporal_kernels=cfg.ablation.temporal_kernels,
                            triplet_options=cfg.ablation.triplet,
                            threshold=cfg.evaluation.threshold)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_tables(cells, out / "ablation_temporal_kernel.csv",
                          out / "ablation_triplet.csv",
                          out / "ablation_cells.csv")
    print(f"ablation grid of {len(cells)} cells -> {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    seq = read_sequence(args.path)
    m = seq.meta
    print(f"file: {args.path}")
    print(f"frames: {seq.num_frames} x {seq.frames.shape[1]} x "
          f"{seq.frames.shape[2]}")
    print(f"subject: {m.subject_id}  view: {m.view_id}  attire: {m.attire}  "
          f"direction: {m.direction}")
    frame = seq.frames[min(args.frame, seq.num_frames - 1)]
    rows = ["".join("#" if v else "." for v in row) for row in frame[::2, :]]
    print("\n".join(rows))
    return EXIT_OK


def cmd_init_config(args) -> int:
    cfg = default_experiment_config()
    path = args.path or "experiment.json"
    save_experiment_config(cfg, path)
    print(f"wrote default config -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitrisk",
        description="Gait-based depression-risk screening experiments")
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override the root seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the recognition model")
    p.add_argument("--steps", type=int, help="override training steps")
    p.add_argument("--from-checkpoint", help="resume from a checkpoint file")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", help="checkpoint path "
                   "(default: <out>/checkpoint_final.gckp)")
    p.add_argument("--view", type=int, help="restrict evaluation to one view")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the temporal-kernel x triplet grid")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("inspect", help="print a sequence file header and preview")
    p.add_argument("path")
    p.add_argument("--frame", type=int, default=0)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("init-config", help="write the default config file")
    p.add_argument("path", nargs="?")
    p.set_defaults(fn=cmd_init_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
