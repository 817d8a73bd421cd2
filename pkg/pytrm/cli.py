"""
Command-line front end: one subcommand per pipeline stage.

    pytrm --config lab.ini --seed 0 gen-manifests
    pytrm --config lab.ini collect
    pytrm --config lab.ini evaluate --cost trm --manifest hard100 --budget 50
"""
import argparse
import logging
import sys

from pytrm import settings
from pytrm.artifact_handler import LOG_FORMAT
from pytrm.config import RunConfig
from pytrm.exceptions import PyTRMException
from pytrm.lab import Lab

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(prog='pytrm', description='Trajectory reachability metric lab.')
    parser.add_argument('--config', help='key = value config file (INI sections).')
    parser.add_argument('--seed', type=int, help='Global seed; overrides [run] seed.')
    parser.add_argument('--workers', type=int, help='Episode-level worker processes.')
    parser.add_argument('--output-dir', help='Output root; overrides [run] output_dir.')
    parser.add_argument('--verbose', action='store_true', help='Log at DEBUG level.')
    sub = parser.add_subparsers(dest='command', metavar='command')

    p = sub.add_parser('gen-manifests', help='Generate start-goal manifests.')
    p.add_argument('--kinds', nargs='+', choices=settings.MANIFEST_KINDS, default=list(settings.MANIFEST_KINDS))

    sub.add_parser('collect', help='Collect and encode exploration trajectories.')
    sub.add_parser('train-wm', help='Train and freeze the latent dynamics.')
    sub.add_parser('fit-probe', help='Fit the linear XY probe.')

    p = sub.add_parser('train-trm', help='Train a reachability head.')
    p.add_argument('--regime', choices=settings.SAMPLER_REGIMES)
    p.add_argument('--pairs', type=int)
    p.add_argument('--delta-max', type=int)
    p.add_argument('--source-rows', type=int)
    p.add_argument('--shuffle-labels', action='store_true')

    p = sub.add_parser('evaluate', help='Closed-loop evaluation of one terminal cost.')
    p.add_argument('--cost', required=True, choices=settings.COST_KINDS)
    p.add_argument('--manifest', choices=settings.MANIFEST_KINDS, help='Default: [evaluate] manifests.')
    p.add_argument('--budget', type=int, help='Default: [evaluate] budgets.')
    p.add_argument('--lambda', dest='lam', type=float, help='Hybrid weight.')
    p.add_argument('--head', help='Head label for trm / hybrid costs.')
    p.add_argument('--diagnostic', action='store_true', help='Allow oracle costs.')

    p = sub.add_parser('stress', help='Evaluate under the enlarged CEM search.')
    p.add_argument('--cost', default='raw_mse', choices=settings.COST_KINDS)
    p.add_argument('--manifest', choices=settings.MANIFEST_KINDS)
    p.add_argument('--budget', type=int)
    p.add_argument('--diagnostic', action='store_true')

    p = sub.add_parser('scsa', help='Same-candidate selection audit.')
    p.add_argument('--manifest', choices=settings.MANIFEST_KINDS)

    sub.add_parser('ablate-horizon', help='Train and evaluate the pair-sampling ablation grid.')

    p = sub.add_parser('sweep-lambda', help='Hybrid weight sweep for true and shuffled heads.')
    p.add_argument('--lambdas', nargs='+', type=float)

    sub.add_parser('report', help='Render report tables from all runs.')
    return parser


def configure_logging(verbose):
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)


def load_config(args):
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    run = {}
    if args.seed is not None:
        run['seed'] = args.seed
    if args.workers is not None:
        run['workers'] = args.workers
    if args.output_dir is not None:
        run['output_dir'] = args.output_dir
    return config.with_overrides(run=run) if run else config


def dispatch(lab, args):
    command = args.command
    if command == 'gen-manifests':
        lab.gen_manifests(tuple(args.kinds))
    elif command == 'collect':
        lab.collect()
    elif command == 'train-wm':
        lab.train_wm()
    elif command == 'fit-probe':
        lab.fit_probe()
    elif command == 'train-trm':
        lab.train_trm(args.regime, args.pairs, args.delta_max, args.shuffle_labels, args.source_rows)
    elif command == 'evaluate':
        manifests = [args.manifest] if args.manifest else lab.config.manifests()
        budgets = [args.budget] if args.budget is not None else lab.config.budgets()
        for manifest in manifests:
            for budget in budgets:
                lab.evaluate(args.cost, manifest, budget, head=args.head, lam=args.lam, diagnostic=args.diagnostic)
    elif command == 'stress':
        lab.stress(args.manifest, args.budget, args.cost, args.diagnostic)
    elif command == 'scsa':
        lab.scsa(args.manifest)
    elif command == 'ablate-horizon':
        lab.ablate_horizon()
    elif command == 'sweep-lambda':
        lab.sweep_lambda(args.lambdas)
    elif command == 'report':
        for path in lab.report():
            print(path)


def main(argv=None):
    """Run one subcommand.

    :param list argv: Arguments without the program name. (Optional, default ``sys.argv[1:]``)
    :return: Exit status.
    :rtype: ``int``
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return settings.EXIT_CONFIG if e.code else settings.EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return settings.EXIT_CONFIG

    configure_logging(args.verbose)
    try:
        lab = Lab(load_config(args))
        dispatch(lab, args)
    except PyTRMException as e:
        logger.error('%s failed: %s', args.command, e.message)
        return e.exit_code
    except Exception:
        logger.exception('%s failed unexpectedly', args.command)
        return settings.EXIT_ERROR
    return settings.EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
