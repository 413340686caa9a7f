"""
Command-line entry point.

Exit codes: 0 on success, 1 on a usage or configuration error, 2 on a runtime
failure. Messages for codes 1 and 2 go to stderr.
"""
import argparse
import sys
from typing import Dict, List, Optional

from gncformer import __version__
from gncformer.checkpoint import load_checkpoint
from gncformer.config import TASK_KINDS, ModelConfig, TaskSpec, build_train_config, describe_options, load_config
from gncformer.exceptions import ConfigError, GncformerError
from gncformer.gnconv import dimension_schedule
from gncformer.gradcheck import MODULES, run_grad_checks
from gncformer.harness.ablation import ABLATION_KINDS, run_ablation
from gncformer.harness.metrics import evaluate
from gncformer.harness.tasks import encoder_input, generate_task
from gncformer.harness.train import train
from gncformer.model import greedy_decode
from gncformer.params import count_config_parameters, format_table, overhead_table, write_table_csv
from gncformer.utils import package_config

FUSION_CHOICES = ('internal', 'serial', 'parallel', 'none')


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad arguments."""

    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def _options_epilog() -> str:
    lines = ['config file keys (key = value, # starts a comment):']
    for key, default, help_text in describe_options():
        lines.append(f'  {key:<18} default {default!r:<20} {help_text}')
    return '\n'.join(lines)


def build_parser() -> CliParser:
    parser = CliParser(prog='gncformer', description='GNCformer enhanced self-attention toolkit.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('train', help='Train a model on a synthetic task.', epilog=_options_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--config', help='Training config file of key = value lines; defaults when omitted.')
    p.add_argument('--order', type=int, help='Override the interaction order.')
    p.add_argument('--fusion', choices=FUSION_CHOICES, help='Override the fusion mode.')
    p.add_argument('--esa', choices=tuple(package_config().ablations.placement),
                   help='Where enhanced self-attention is used.')
    p.add_argument('--seed', type=int, help='Override the training seed.')

    p = sub.add_parser('eval', help='Evaluate a checkpoint on the validation split of a task.')
    p.add_argument('--checkpoint', required=True, help='Checkpoint file.')
    p.add_argument('--task-seed', type=int, required=True, help='Seed of the task dataset.')
    p.add_argument('--task', choices=TASK_KINDS, default='copy', help='Task kind (default: copy).')
    p.add_argument('--min-length', type=int, default=TaskSpec.min_len, help='Shortest source.')
    p.add_argument('--max-length', type=int, default=TaskSpec.max_len, help='Longest source.')
    p.add_argument('--samples', type=int, default=TaskSpec.num_samples, help='Dataset size.')

    p = sub.add_parser('decode', help='Greedy-decode one source sequence.')
    p.add_argument('--checkpoint', required=True, help='Checkpoint file.')
    p.add_argument('--source', required=True,
                   help='Space-separated source tokens, e.g. "5 9 3". With an encoder ESA the source plus EOS '
                        'must be at least (kernel_size - 1) / 2 tokens long.')
    p.add_argument('--max-steps', type=int, help='Decoding cap (default: max_len - 1).')

    p = sub.add_parser('analyze-params', help='Parameter counts and ESA overhead.')
    p.add_argument('--dim', type=int, default=256, help='Model dimension (default: 256).')
    p.add_argument('--order', type=int, default=5, help='Interaction order (default: 5).')
    p.add_argument('--kernel', type=int, default=32, help='Depthwise kernel width (default: 32).')
    p.add_argument('--layers', type=int, default=6, help='Encoder and decoder layers (default: 6).')
    p.add_argument('--heads', type=int, default=4, help='Attention heads (default: 4).')
    p.add_argument('--orders', type=int, nargs='+', help='Also tabulate these orders.')
    p.add_argument('--csv', help='Write the order table as CSV.')

    p = sub.add_parser(
        'grad-check', help='Finite-difference gradient checks.',
        description='Reports per check the worst entrywise error |analytic - numeric| / '
                    '(max(|analytic|, |numeric|) + 1 percent of the largest gradient magnitude).',
    )
    p.add_argument('--module', choices=MODULES, help='Check one module only.')
    p.add_argument('--trials', type=int, default=20, help='Random shapes per primitive (default: 20).')
    p.add_argument('--seed', type=int, default=0, help='Seed (default: 0).')

    p = sub.add_parser('ablate', help='Train every cell of an ablation grid.')
    p.add_argument('--kind', choices=ABLATION_KINDS, required=True, help='Ablation grid.')
    p.add_argument('--config', help='Base training config file.')
    p.add_argument('--output-dir', default='runs/ablation', help='Output directory (default: runs/ablation).')
    p.add_argument('--threads', type=int, default=1, help='Cells trained concurrently (default: 1).')

    p = sub.add_parser('schedule', help='Print the split widths of g^nConv.')
    p.add_argument('--dim', type=int, required=True, help='Model dimension.')
    p.add_argument('--order', type=int, required=True, help='Interaction order.')
    return parser


def _train_config(path: Optional[str], overrides: Dict):
    if path:
        return load_config(path, overrides)
    return build_train_config(overrides)


def cmd_train(args) -> int:
    overrides = {}
    if args.order is not None:
        overrides['order'] = args.order
    if args.fusion is not None:
        overrides['fusion_mode'] = args.fusion
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.esa is not None:
        overrides.update(package_config().ablations.placement[args.esa])
    config = _train_config(args.config, overrides)
    result = train(config)
    print(f'final step {result.final.step}: token accuracy {result.final.token_acc:.4f}, '
          f'sequence accuracy {result.final.seq_acc:.4f}, edit rate {result.final.edit_rate:.4f}')
    print(f'best token accuracy {result.best.token_acc:.4f} at step {result.best.step}')
    print(f'checkpoint: {result.checkpoint_path}')
    print(f'metrics: {result.metrics_path}')
    return 0


def _load(path: str):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as e:
        raise FileNotFoundError(f'checkpoint not found: {path}') from e


def cmd_eval(args) -> int:
    model = _load(args.checkpoint)
    spec = TaskSpec(kind=args.task, vocab_size=min(model.config.source_vocab, model.config.target_vocab),
                    min_len=args.min_length, max_len=args.max_length, num_samples=args.samples,
                    seed=args.task_seed)
    data = generate_task(spec)
    result = evaluate(model, data.valid)
    print(f'examples: {len(data.valid)}')
    print(f'token accuracy: {result.token_acc:.4f}')
    print(f'sequence accuracy: {result.seq_acc:.4f}')
    print(f'edit rate: {result.edit_rate:.4f}')
    return 0


def cmd_decode(args) -> int:
    try:
        source = [int(t) for t in args.source.split()]
    except ValueError as e:
        raise UsageError(f'--source must be space-separated integers, got {args.source!r}') from e
    if args.max_steps is not None and args.max_steps < 1:
        raise UsageError(f'--max-steps must be >= 1, got {args.max_steps}')
    model = _load(args.checkpoint)
    max_steps = model.config.max_len - 1 if args.max_steps is None else args.max_steps
    print(' '.join(str(t) for t in greedy_decode(model, encoder_input(source), max_steps)))
    return 0


def cmd_analyze_params(args) -> int:
    config = ModelConfig.preset('reference', model_dim=args.dim, order=args.order, kernel_size=args.kernel,
                                encoder_layers=args.layers, decoder_layers=args.layers, heads=args.heads)
    report = count_config_parameters(config)
    per_layer = next(iter(report.esa_overhead.values()), 0)
    print(f'schedule: {" ".join(str(w) for w in dimension_schedule(config.model_dim, config.order))}')
    print(f'per-layer ESA overhead: {per_layer:,}')
    print(f'ESA layers: {len(report.esa_overhead)}')
    print(f'total delta: {report.delta:,}')
    print(f'total parameters: {report.total:,} (plain attention baseline {report.baseline_total:,})')
    if args.orders:
        table = overhead_table(config, args.orders)
        print()
        print(format_table(table))
        if args.csv:
            write_table_csv(table, args.csv)
            print(f'Order table written to {args.csv}', file=sys.stderr)
    return 0


def cmd_grad_check(args) -> int:
    results = run_grad_checks(args.module, trials=args.trials, seed=args.seed)
    for result in results:
        print(result.format())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f'gradient check failed: {", ".join(failed)}', file=sys.stderr)
        return 2
    return 0


def cmd_ablate(args) -> int:
    base = _train_config(args.config, {})
    table = run_ablation(args.kind, base, args.output_dir, threads=args.threads)
    columns = ['cell', 'total_params', 'delta_params', 'token_acc', 'seq_acc', 'edit_rate', 'rank']
    print(table[columns].to_string(index=False))
    return 0


def cmd_schedule(args) -> int:
    print(' '.join(str(w) for w in dimension_schedule(args.dim, args.order)))
    return 0


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'decode': cmd_decode,
    'analyze-params': cmd_analyze_params,
    'grad-check': cmd_grad_check,
    'ablate': cmd_ablate,
    'schedule': cmd_schedule,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse ``argv`` (``sys.argv[1:]`` when omitted) and run the chosen command.

    :return: Exit code.
    :rtype: int
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f'error: {e}', file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help and --version
        return e.code if isinstance(e.code, int) else 0

    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f'error: {e}', file=sys.stderr)
        return 1
    except (GncformerError, OSError, ValueError) as e:
        print(f'error: {e}', file=sys.stderr)
        return 2
