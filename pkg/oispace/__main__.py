"""Command line entry point: `python3 -m oispace <command> --config FILE`"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import argparse
import sys

from barnapy import logging

from . import __version__
from . import acceptance
from . import config
from . import pipeline
from .general import FormatError, InputError, NumericError


# Exit codes
exit_ok = 0
exit_usage = 1
exit_stage = 2
exit_verify = 3


commands = {
    'gen': pipeline.cmd_gen,
    'train': pipeline.cmd_train,
    'capture': pipeline.cmd_capture,
    'fit': pipeline.cmd_fit,
    'intervene': pipeline.cmd_intervene,
    'report': pipeline.cmd_report,
    'all': pipeline.cmd_all,
    'verify': pipeline.cmd_verify,
}


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        raise UsageError('{}: {}'.format(self.prog, message))


def make_parser():
    parser = ArgumentParser(
        prog='oispace',
        description='Ordering-ID subspace workbench: generate data, '
        'train a toy model, find and intervene on its OI subspace, '
        'and report.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command')
    for name in commands:
        cmd = sub.add_parser(name, help='Run stage: {}'.format(name)
                             if name in pipeline.stages else None)
        cmd.add_argument('--config', required=True, metavar='PATH',
                         help='Experiment configuration (YAML)')
        cmd.add_argument('--seed', type=int, help='Override the seed')
        cmd.add_argument('--out', metavar='DIR',
                         help='Override the output directory')
        cmd.add_argument('--jobs', type=int, help='Override torch threads')
    return parser


def load_config(args):
    if args.jobs is not None and args.jobs < 1:
        raise UsageError('--jobs: Not a positive integer: {}'.format(
            args.jobs))
    cfg = config.load(args.config, seed=args.seed)
    return cfg.with_overrides(output=args.out, jobs=args.jobs)


def run(args):
    """Run a command.  Returns the exit code; lets exceptions through."""
    logger = logging.getLogger('main')
    parser = make_parser()
    args = parser.parse_args(args)
    if args.command is None:
        raise UsageError('No command given.  Commands: {}'.format(
            ', '.join(commands)))
    logger.info('Loading configuration from: {}', args.config)
    cfg = load_config(args)
    logger.info('Configuration hash: {}', cfg.hash())
    cfg.log(logger)
    pipeline.setup_runtime(cfg)
    result = commands[args.command](cfg)
    if args.command == 'verify':
        print(acceptance.summary_text(result, cfg.hash()), end='')
        if acceptance.failures(result):
            return exit_verify
    return exit_ok


def main(args=None):
    if args is None:
        args = sys.argv[1:]
    logging.default_config()
    logger = logging.getLogger('main')
    logger.info('OISpace {}', __version__)
    logging.log_runtime_environment(logger)
    try:
        return run(args)
    except pipeline.StageError as e:
        logger.error('{}', e)
        return exit_stage
    except (UsageError, config.ConfigError) as e:
        logger.error('{}', e)
        print(e, file=sys.stderr)
        return exit_usage
    except (InputError, FormatError, NumericError) as e:
        logger.error('{}: {}', type(e).__qualname__, e)
        return exit_usage


if __name__ == '__main__':
    sys.exit(main())
