
import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

# Reference mode: single-threaded BLAS keeps repeated runs bit-identical.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from langgraph.graph import END, StateGraph

from core import __version__
from core.analysis import verify_decomposition
from core.arch_dsl import (KNOWN_ARCHS, REFERENCE_MEGAMULTS, compression_ratio, cost_table, count_mults,
                           display_megamults, parse_arch, round_megamults, rounded_compression_ratio)
from core.checkpoint import load_checkpoint, save_checkpoint
from core.datasets import SplitConfig, load_dataset
from core.distill import DistillConfig, NoiseConfig, merge_teachers
from core.distill import distill as run_distill
from core.errors import MissingPathError, ToolkitError
from core.metrics import evaluate, improvement
from core.sweep import load_grid, read_grid, run_sweep
from core.teacher import export_logits, load_logits, teacher_tag_for, train_teacher, write_logits
from core.training import TrainConfig
from nodes.config_check_node import ConfigCheckNode
from nodes.data_node import DataNode
from nodes.distill_node import DistillNode
from nodes.evaluate_node import EvaluateNode
from nodes.export_node import ExportLogitsNode
from nodes.logger_node import LoggerNode
from nodes.seed_controller import SeedControllerNode
from nodes.state_schema import PipelineState, initial_state
from nodes.teacher_node import TeacherNode
from utils.config_loader import DATA_DIR_ENV, ExperimentConfig, default_data_dir, load_config, parse_config

EXIT_TOOLKIT_ERROR = 2
EXIT_INTERNAL_ERROR = 1


def build_pipeline_graph(log_path: str = ""):
    """
    Constructs the LangGraph StateGraph for one experiment.

    Graph structure:
    ConfigCheck -> Data -> Teacher -> ExportLogits -> SeedController
        -> [Distill -> Evaluate -> SeedController]* -> Manifest -> END
    """
    seed_controller = SeedControllerNode()

    workflow = StateGraph(PipelineState)

    workflow.add_node("config_check", ConfigCheckNode().process)
    workflow.add_node("data", DataNode().process)
    workflow.add_node("teacher", TeacherNode().process)
    workflow.add_node("export_logits", ExportLogitsNode().process)
    workflow.add_node("seed_controller", seed_controller.process)
    workflow.add_node("distill", DistillNode().process)
    workflow.add_node("evaluate", EvaluateNode().process)
    workflow.add_node("manifest", LoggerNode(log_path).process)

    workflow.set_entry_point("config_check")

    workflow.add_edge("config_check", "data")
    workflow.add_edge("data", "teacher")
    workflow.add_edge("teacher", "export_logits")
    workflow.add_edge("export_logits", "seed_controller")

    workflow.add_conditional_edges(
        "seed_controller",
        seed_controller.route,
        {
            "distill": "distill",
            "manifest": "manifest",
        }
    )

    workflow.add_edge("distill", "evaluate")
    workflow.add_edge("evaluate", "seed_controller")
    workflow.add_edge("manifest", END)

    return workflow.compile()


def run_pipeline(cfg: ExperimentConfig, log_path: str = "", progress: bool = True) -> Path:
    """Teacher, logit export, one distillation per seed, evaluation and manifest; returns the artifact directory."""
    graph = build_pipeline_graph(log_path)
    final_state = graph.invoke(initial_state(cfg, progress),
                               config={'recursion_limit': 10 + 3 * len(cfg.seeds)})
    return Path(final_state['artifact_dir'])


def prepare_logits(cfg: ExperimentConfig, progress: bool = True) -> PipelineState:
    """Runs the pipeline up to the logit cache (reusing finished stages) without distilling."""
    state = initial_state(cfg, progress)
    for node in (ConfigCheckNode(), DataNode(), TeacherNode(), ExportLogitsNode()):
        state = node.process(state)
    return state


def parse_input_shape(text: str) -> Sequence[int]:
    try:
        dims = [int(part) for part in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxWxC or a unit count, got {text!r}") from None
    if len(dims) not in (1, 3) or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected HxWxC or a unit count, got {text!r}")
    return dims[0] if len(dims) == 1 else tuple(dims)


def resolve_arch(text: str):
    return parse_arch(KNOWN_ARCHS.get(text, text))


def data_dir_from(args) -> Path:
    configured = args.data_dir or default_data_dir(args.dataset)
    if configured is None:
        raise MissingPathError(f"no --data-dir given and {DATA_DIR_ENV} is not set")
    return Path(configured)


def load_splits(args) -> dict:
    return load_dataset(args.dataset, data_dir_from(args), SplitConfig(args.validation_count, args.split_seed),
                        args.train_limit, args.test_limit)


def train_config_from(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, patience=args.patience, batch_size=args.batch_size,
                       optimizer=args.optimizer, learning_rate=args.learning_rate, weight_decay=args.weight_decay)


def cmd_analyze(args) -> int:
    spec = resolve_arch(args.arch)
    report = count_mults(spec, args.input)
    rows = cost_table(spec, report)
    if args.format == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["layer", "output_shape", "params", "mults"])
        for row in rows:
            writer.writerow([row['layer'], row['output_shape'], row['params'], row['mults']])
        writer.writerow(["total", "", report.total_params, report.total_mults])
    else:
        print(f"{'layer':<18} {'output':>12} {'params':>12} {'mults':>14}")
        for row in rows:
            print(f"{row['layer']:<18} {row['output_shape']:>12} {row['params']:>12} {row['mults']:>14}")
        print(f"{'total':<18} {'':>12} {report.total_params:>12} {report.total_mults:>14}")
        print(f"megamults: {round_megamults(report.total_mults)}")

    if args.teacher:
        teacher = count_mults(resolve_arch(args.teacher), args.input)
        ratio = compression_ratio(teacher.total_mults, report.total_mults)
        storage = teacher.total_params / report.total_params if report.total_params else float("nan")
        shown_teacher = shown_megamults(args.teacher, teacher.total_mults, args.input)
        shown_student = shown_megamults(args.arch, report.total_mults, args.input)
        rounded = rounded_compression_ratio(shown_teacher, shown_student)
        if args.format == "csv":
            writer.writerow(["teacher", "", teacher.total_params, teacher.total_mults])
            writer.writerow(["compression_ratio", "", repr(storage), repr(ratio)])
            writer.writerow(["rounded_compression_ratio", "", "", repr(rounded)])
        else:
            print(f"teacher mults: {teacher.total_mults} ({shown_teacher:g}M)")
            print(f"compression ratio (mults): {ratio:.2f}")
            print(f"compression ratio (rounded mults): {shown_teacher:g}/{shown_student:g} = {rounded:.2f}")
            print(f"compression ratio (params): {storage:.2f}")
    return 0


def shown_megamults(arch: str, mults: int, input_shape) -> float:
    """Display figure of a cost; named CIFAR-10 architectures keep their published figure."""
    reference = REFERENCE_MEGAMULTS.get(arch) if input_shape == (32, 32, 3) else None
    return display_megamults(mults, reference)


def cmd_train_teacher(args) -> int:
    spec = resolve_arch(args.arch)
    splits = load_splits(args)
    params, metrics = train_teacher(spec, splits['train'], splits['validation'], train_config_from(args),
                                    args.seed, progress=not args.quiet)
    metrics.test_error = evaluate(params, spec, splits['test'])
    save_checkpoint(params, args.out)
    if args.metrics:
        metrics.write_csv(args.metrics)
        metrics.write_summary(Path(args.metrics).with_suffix(".json"))
    print(f"Teacher checkpoint written to {args.out} (test error {metrics.test_error:.4f})")
    return 0


def cmd_export_logits(args) -> int:
    params = load_checkpoint(args.ckpt)
    splits = load_splits(args)
    export_logits(params, params.spec, splits[args.split], args.out, args.tag or teacher_tag_for(params.spec, None))
    return 0


def cmd_distill(args) -> int:
    noise = NoiseConfig(args.sigma, args.alpha, args.target, args.sharing, args.sigma_random)
    cfg = DistillConfig(resolve_arch(args.arch), noise, train_config_from(args), args.seed)
    splits = load_splits(args)
    params, metrics = run_distill(cfg, load_logits(args.logits), splits['train'], splits['validation'],
                                  splits['test'], progress=not args.quiet)
    if args.out:
        save_checkpoint(params, args.out)
    metrics.baseline_error = args.baseline_error
    if args.metrics:
        metrics.write_csv(args.metrics)
        metrics.write_summary(Path(args.metrics).with_suffix(".json"))
    shown_error = 'n/a' if metrics.test_error is None else f"{metrics.test_error:.4f}"
    print(f"Student test error: {shown_error}")
    if metrics.improvement_pct is not None:
        print(f"Improvement over baseline: {metrics.improvement_pct:.2f}%")
    return 0


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    splits = load_splits(args)
    error = evaluate(params, params.spec, splits[args.split])
    print(f"{args.split} error rate: {error!r}")
    if args.baseline_error:
        print(f"improvement over baseline: {100.0 * improvement(args.baseline_error, error):.2f}%")
    return 0


def cmd_sweep(args) -> int:
    grid_path = Path(args.grid)
    base = read_grid(grid_path).get('base')
    if base:
        cfg = parse_config(str(grid_path.parent / base))
    elif args.config:
        cfg = parse_config(args.config)
    else:
        raise MissingPathError(f"{grid_path} names no base config and no --config was given")
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])
    state = prepare_logits(cfg, progress=not args.quiet)
    logit_set = load_logits(args.logits) if args.logits else state['logit_set']
    grid = load_grid(grid_path, cfg.distill_config(cfg.seeds[0]), cfg.seeds)
    if args.seed is not None:
        grid.seeds = [args.seed]
    splits = state['splits']
    run_sweep(grid, logit_set, splits['train'], splits['validation'], splits['test'], args.out,
              progress=not args.quiet)
    return 0


def cmd_verify_decomposition(args) -> int:
    report = verify_decomposition(args.trials, args.seed)
    print(json.dumps(report, indent=2))
    return 0 if report['passed'] else EXIT_TOOLKIT_ERROR


def cmd_run(args, settings: dict) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])
    artifact_dir = run_pipeline(cfg, settings.get('log_path') or "", progress=not args.quiet)
    print(f"\nArtifacts in {artifact_dir}")
    return 0


def cmd_merge_logits(args) -> int:
    merged = merge_teachers(load_logits(args.first), load_logits(args.second), args.tag)
    write_logits(merged, args.out)
    print(f"Merged {len(merged)} logit records into {args.out}")
    return 0


def cmd_dag(args) -> int:
    from generate_dag import write_dag

    write_dag(Path(args.out))
    return 0


def add_data_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--dataset', choices=["mnist", "cifar10"], default="mnist")
    parser.add_argument('--data-dir', '--mnist-dir', '--cifar-dir', dest='data_dir', type=str,
                        help=f'Dataset directory (default: ${DATA_DIR_ENV})')
    parser.add_argument('--validation-count', type=int, default=10000)
    parser.add_argument('--split-seed', type=int, default=0)
    parser.add_argument('--train-limit', type=int, default=0, help='Use only the first N training samples')
    parser.add_argument('--test-limit', type=int, default=0, help='Use only the first N test samples')


def add_training_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--epochs', type=int, default=15)
    parser.add_argument('--patience', type=int, default=5)
    parser.add_argument('--batch-size', type=int, default=64)
    parser.add_argument('--optimizer', choices=["adam", "sgd"], default="adam")
    parser.add_argument('--learning-rate', '--lr', type=float, default=0.001)
    parser.add_argument('--weight-decay', type=float, default=0.0)
    parser.add_argument('--metrics', type=str, help='Write per-epoch metrics CSV (summary JSON alongside)')


def parse_sigma_range(text: str):
    try:
        lo, hi = (float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Noisy-teacher knowledge distillation toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_toolkit.py analyze "FC800-FC800-FC10" --input 28x28x1
  python run_toolkit.py analyze student2 --input 32x32x3 --teacher nin_teacher --format csv
  python run_toolkit.py run --config configs/mnist.cfg --seed 3
  python run_toolkit.py sweep --grid configs/sweep_mnist_sigma.yaml --out results/mnist_sigma.csv
  python run_toolkit.py verify-decomposition --trials 1000
        """
    )
    parser.add_argument('--settings', type=str, default='config.yaml',
                        help='Toolkit settings file (default: config.yaml, optional)')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='Override the seed(s) of the command or config')
    common.add_argument('--quiet', action='store_true', help='Disable progress bars')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('analyze', parents=[common], help='Per-layer shapes, parameters and multiplications')
    p.add_argument('arch', help='Architecture string or a known name (e.g. nin_teacher)')
    p.add_argument('--input', type=parse_input_shape, required=True, help='HxWxC, or a unit count')
    p.add_argument('--teacher', type=str, help='Teacher architecture for the compression ratio')
    p.add_argument('--format', choices=["plain", "csv"], default="plain")

    p = sub.add_parser('train-teacher', parents=[common], help='Train a teacher on hard labels')
    p.add_argument('--arch', required=True)
    p.add_argument('--out', required=True, help='Checkpoint path')
    add_data_options(p)
    add_training_options(p)

    p = sub.add_parser('export-logits', parents=[common], help='Write a teacher logit cache')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--split', choices=["train", "validation", "test"], default="train")
    p.add_argument('--out', required=True)
    p.add_argument('--tag', type=str, default="")
    add_data_options(p)

    p = sub.add_parser('distill', parents=[common], help='Train a student from a logit cache')
    p.add_argument('--arch', required=True)
    p.add_argument('--logits', required=True)
    p.add_argument('--sigma', type=float, default=0.5)
    p.add_argument('--alpha', type=float, default=0.5)
    p.add_argument('--target', choices=["teacher", "student", "none"], default="teacher")
    p.add_argument('--sharing', choices=["sample", "batch"], default="sample")
    p.add_argument('--sigma-random', type=parse_sigma_range, help='Draw sigma uniformly from lo,hi per mini-batch')
    p.add_argument('--out', type=str, help='Checkpoint path')
    p.add_argument('--baseline-error', type=float, help='Report the improvement over this error rate')
    add_data_options(p)
    add_training_options(p)

    p = sub.add_parser('eval', parents=[common], help='Error rate of a checkpoint')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--split', choices=["train", "validation", "test"], default="test")
    p.add_argument('--baseline-error', type=float, help='Report the improvement over this error rate')
    add_data_options(p)

    p = sub.add_parser('sweep', parents=[common], help='Run a parameter sweep into a CSV table')
    p.add_argument('--grid', required=True, help='Sweep grid (YAML)')
    p.add_argument('--out', required=True, help='CSV path')
    p.add_argument('--config', type=str, help='Base experiment config when the grid names none')
    p.add_argument('--logits', type=str, help='Use this logit cache instead of the base config teacher')

    p = sub.add_parser('verify-decomposition', parents=[common], help='Check the noisy-loss decomposition numerically')
    p.add_argument('--trials', type=int, default=1000)

    p = sub.add_parser('run', parents=[common], help='Full pipeline from an experiment config')
    p.add_argument('--config', required=True)

    p = sub.add_parser('merge-logits', parents=[common], help='Average two teachers\' logit caches')
    p.add_argument('first')
    p.add_argument('second')
    p.add_argument('--out', required=True)
    p.add_argument('--tag', type=str, default="merged")

    p = sub.add_parser('dag', parents=[common], help='Render the pipeline graph')
    p.add_argument('--out', type=str, default='docs/pipeline_dag')

    return parser


def load_settings(path: str) -> dict:
    if not Path(path).exists():
        return {}
    settings = load_config(path)
    if settings.get('data_dir'):
        os.environ.setdefault(DATA_DIR_ENV, str(settings['data_dir']))
    return settings


def dispatch(args, settings: dict) -> int:
    if args.seed is None and settings.get('seed') is not None:
        args.seed = int(settings['seed'])
    if args.command in ('train-teacher', 'distill', 'verify-decomposition') and args.seed is None:
        args.seed = 0
    handlers = {
        'analyze': cmd_analyze,
        'train-teacher': cmd_train_teacher,
        'export-logits': cmd_export_logits,
        'distill': cmd_distill,
        'eval': cmd_eval,
        'sweep': cmd_sweep,
        'verify-decomposition': cmd_verify_decomposition,
        'merge-logits': cmd_merge_logits,
        'dag': cmd_dag,
    }
    if args.command == 'run':
        return cmd_run(args, settings)
    return handlers[args.command](args)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse CLI arguments and run one command; failures end in a single `error: <category>: ...` line."""
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args, load_settings(args.settings))
    except ToolkitError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {exc.category}: {message}", file=sys.stderr)
        return EXIT_TOOLKIT_ERROR
    except OSError as exc:
        print(f"error: io: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_TOOLKIT_ERROR
    except ValueError as exc:
        print(f"error: invalid-value: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_TOOLKIT_ERROR
    except Exception as exc:
        print(f"error: internal: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


if __name__ == '__main__':
    sys.exit(main())
