#==============================================================================
# PREAMBLE
#==============================================================================

# Import system libraries
import os
import sys
import argparse
import logging

# Add the project path so that classes and tools can be read
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if project_root not in sys.path:
    sys.path.append(project_root)

# Import custom libraries
from classes.Experiment import ExperimentPipeline
from classes.Sweep import ABLATIONS
from tools.charts import COST_AXES
from tools.errors import CfxError, ConfigError
from tools.utils import TOOL_VERSION, load_config, setup_logging

logger = logging.getLogger("cfx")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _sizes(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="cfx", description='Model extraction through counterfactual explanations')
    parser.add_argument('--version', action='version', version=f'%(prog)s {TOOL_VERSION}')
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p):
        p.add_argument('--config', required=True, help='JSON experiment configuration')
        p.add_argument('--out-dir', default=None, help='Output root (default: $CFX_OUT_DIR, then output.dir)')
        return p

    def with_sweep(p):
        p.add_argument('--jobs', type=int, default=None, help='Parallel sweep cells')
        p.add_argument('--runs', type=int, default=None, help='Runs per query size')
        p.add_argument('--sizes', type=_sizes, default=None, help='Query sizes, e.g. 1,2,4,8')
        p.add_argument('--seed', type=int, default=None, help='Base seed of the sweep')
        return p

    with_config(sub.add_parser('train-cloud', help='Train and save the cloud model'))
    with_sweep(with_config(sub.add_parser('sweep', help='Run the strategy sweep')))
    ablate = with_sweep(with_config(sub.add_parser('ablate', help='Run one ablation study')))
    ablate.add_argument('ablation', help=f'One of {", ".join(ABLATIONS)}')

    plot = sub.add_parser('plot', help='Render an aggregates CSV as SVG')
    plot.add_argument('results_csv')
    plot.add_argument('out_svg')
    plot.add_argument('--cost-axis', choices=sorted(COST_AXES), default='queries')
    plot.add_argument('--title', default=None)

    lemma = with_config(sub.add_parser('lemma-check', help='Extract random linear models from one CF pair'))
    lemma.add_argument('--seed', type=int, default=None, help='Seed of the random models')
    lemma.add_argument('--models', type=int, default=20)

    diagnose = with_config(sub.add_parser('diagnose', help='Boundary shift of single-query substitutes and leakage'))
    diagnose.add_argument('--seeds', type=int, default=30, help='Single-query draws per strategy')
    return parser


def run(args):
    if args.command == 'plot':
        logger.info('Rendering %s...', args.out_svg)
        ExperimentPipeline.plot(args.results_csv, args.out_svg, args.cost_axis, args.title)
        return EXIT_OK

    logger.info('Importing JSON configuration file...')
    pipeline = ExperimentPipeline(load_config(args.config), args.out_dir)

    if args.command == 'train-cloud':
        pipeline.train_cloud()
    elif args.command == 'sweep':
        pipeline.apply_overrides(args.runs, args.sizes, args.seed, args.jobs)
        pipeline.sweep()
    elif args.command == 'ablate':
        if args.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {args.ablation!r}; expected one of {ABLATIONS}", "ablation")
        pipeline.apply_overrides(args.runs, args.sizes, args.seed, args.jobs)
        pipeline.ablate(args.ablation)
    elif args.command == 'lemma-check':
        pipeline.apply_overrides(seed=args.seed)
        _, passed = pipeline.lemma_check(n_models=args.models)
        if not passed:
            return EXIT_RUNTIME
    elif args.command == 'diagnose':
        pipeline.diagnose(seeds=args.seeds)
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are configuration errors here
        if exc.code:
            return EXIT_CONFIG
        raise
    setup_logging(args.verbose)
    try:
        return run(args)
    except ConfigError as exc:
        logger.error('Configuration error: %s', exc)
        return EXIT_CONFIG
    except (CfxError, OSError, RuntimeError, ValueError) as exc:
        logger.error('%s', exc)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
