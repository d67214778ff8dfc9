#!/usr/bin/env python3
"""
sharpbench command line
Main entry point for training runs, comparisons and verification suites
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

from config import Config
from exceptions import (CheckpointError, ConfigError, DataError, NumericError,
                        PreconditionError, TrainingAborted)
from utils import __version__, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

LOG_FILE = 'sharpbench.log'


def _int_list(text: str) -> List[int]:
    return [int(part) for part in text.split(',') if part.strip()]


def _float_list(text: str) -> List[float]:
    return [float(part) for part in text.split(',') if part.strip()]


def _name_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(',') if part.strip()]


def _rate_map(text: str) -> Dict[float, float]:
    """'0.8=0.01,0.6=0.02' -> {0.8: 0.01, 0.6: 0.02}; an empty string clears the defaults"""
    mapping = {}
    for part in _name_list(text):
        rate, _, rho = part.partition('=')
        try:
            mapping[float(rate)] = float(rho)
        except ValueError:
            raise ConfigError(f"bad rate=rho entry {part!r}")
    return mapping


def load_config(args) -> Config:
    cfg = Config.load(args.config, args.overrides)
    errors = cfg.validate()
    if errors:
        raise ConfigError('; '.join(errors))
    setup_logging(log_file=os.path.join(cfg['run.output_dir'], LOG_FILE))
    print('# effective config')
    print(cfg.to_text(), end='')
    return cfg


def cmd_run(args) -> int:
    from harness import train

    cfg = load_config(args)
    history, best = train(cfg, output_dir=cfg['run.output_dir'])
    print(f"epochs run: {len(history)}")
    print(f"best epoch: {best.best_epoch} (valid accuracy {best.valid_acc:.4f})")
    if history:
        print(f"final train 0-1 loss: {history[-1].train_01:.4f}")
    print(f"artifacts: {cfg['run.output_dir']}")
    return EXIT_OK


def _print_table(frame):
    if frame.empty:
        print('(no completed cells)')
    else:
        print(frame.to_string(index=False))


def cmd_compare(args) -> int:
    from harness import compare_trainers

    cfg = load_config(args)
    result = compare_trainers(cfg, _name_list(args.families), _int_list(args.seeds), args.workers)
    _print_table(result.summary)
    return _grid_exit(result)


def cmd_noise_sweep(args) -> int:
    from harness import noise_sweep

    cfg = load_config(args)
    families = _name_list(args.families) if args.families else None
    rho_by_rate = _rate_map(args.rho_by_rate) if args.rho_by_rate is not None else None
    result = noise_sweep(cfg, _float_list(args.rates), _int_list(args.seeds), families, args.workers,
                         rho_by_rate)
    _print_table(result.summary)
    return _grid_exit(result)


def _grid_exit(result) -> int:
    for failure in result.failures:
        print(f"failed cell {failure.keys}: {failure.error}")
    if result.failures and result.summary.empty:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_counterexample(args) -> int:
    from losses import counterexample_eval

    report = counterexample_eval(args.K, args.delta)
    print(f"K={report.K} delta={report.delta}")
    print(f"ce_A  = {report.ce_A:.6f}")
    print(f"ce_B  = {report.ce_B:.6f}")
    print(f"phi_A = {report.phi_A:.6f}")
    print(f"phi_B = {report.phi_B:.6f}")
    print(f"CE adversary prefers: {report.ce_prefers}")
    print(f"phi adversary prefers: {report.phi_prefers}")
    return EXIT_OK


def _print_report(report) -> int:
    for line in report.lines():
        print(line)
    print('all checks passed' if report.passed else 'verification FAILED')
    return EXIT_OK if report.passed else EXIT_VERIFICATION_FAILED


def cmd_check_grad(args) -> int:
    from checks import check_gradients

    return _print_report(check_gradients(args.seed, args.models))


def cmd_check_bounds(args) -> int:
    from checks import check_bounds, check_counterexample

    report = check_bounds(args.seed, args.draws, _float_list(args.mus), phi_offset=args.phi_offset)
    report.results.extend(check_counterexample().results)
    return _print_report(report)


def cmd_inspect_checkpoint(args) -> int:
    from storage import inspect_checkpoint

    for key, value in inspect_checkpoint(args.path).items():
        print(f"{key}: {value}")
    return EXIT_OK


def cmd_fetch_idx(args) -> int:
    from datasets import MNIST_BASE_URL, fetch_idx

    for path in fetch_idx(args.base_url or MNIST_BASE_URL, dest_dir=args.dest):
        print(path)
    return EXIT_OK


def cmd_serve(args) -> int:
    from web_app import app

    if args.results_dir:
        app.config['RESULTS_DIR'] = args.results_dir
    logger.info(f"Results API on http://{args.host}:{args.port} over {app.config['RESULTS_DIR']}")
    app.run(host=args.host, port=args.port, debug=False, use_reloader=False)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sharpbench', description='Desk-scale SAM / BiSAM training lab')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest='command', required=True)

    def with_config(sub):
        sub.add_argument('--config', '-c', help='flat key = value config file')
        sub.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                         help='override one config key; may repeat')
        return sub

    with_config(commands.add_parser('run', help='train one configuration')).set_defaults(handler=cmd_run)

    compare = with_config(commands.add_parser('compare', help='compare families over seeds'))
    compare.add_argument('--families', default='sgd,sam,bisam-log')
    compare.add_argument('--seeds', default='0,1')
    compare.add_argument('--workers', type=int)
    compare.set_defaults(handler=cmd_compare)

    sweep = with_config(commands.add_parser('noise-sweep', help='train under label-noise rates'))
    sweep.add_argument('--rates', default='0,0.2,0.4,0.6,0.8')
    sweep.add_argument('--seeds', default='0,1')
    sweep.add_argument('--families')
    sweep.add_argument('--workers', type=int)
    sweep.add_argument('--rho-by-rate', metavar='RATE=RHO,...',
                       help='per-rate optim.rho overrides (default 0.8=0.01)')
    sweep.set_defaults(handler=cmd_noise_sweep)

    counter = commands.add_parser('counterexample', help='CE vs lower-bound adversary on two outputs')
    counter.add_argument('--K', type=int, default=10)
    counter.add_argument('--delta', type=float, default=0.01)
    counter.set_defaults(handler=cmd_counterexample)

    grad = commands.add_parser('check-grad', help='finite-difference gradient suite')
    grad.add_argument('--seed', type=int, default=0)
    grad.add_argument('--models', type=int, default=100)
    grad.set_defaults(handler=cmd_check_grad)

    bounds = commands.add_parser('check-bounds', help='lower-bound and log-sum-exp suites')
    bounds.add_argument('--seed', type=int, default=0)
    bounds.add_argument('--draws', type=int, default=10_000)
    bounds.add_argument('--mus', default='0.1,1,10')
    bounds.add_argument('--phi-offset', type=float, default=0.0, help=argparse.SUPPRESS)
    bounds.set_defaults(handler=cmd_check_bounds)

    inspect = commands.add_parser('inspect-checkpoint', help='print a checkpoint header')
    inspect.add_argument('path')
    inspect.set_defaults(handler=cmd_inspect_checkpoint)

    fetch = commands.add_parser('fetch-idx', help='download MNIST IDX files')
    fetch.add_argument('--dest', default='data')
    fetch.add_argument('--base-url')
    fetch.set_defaults(handler=cmd_fetch_idx)

    serve = commands.add_parser('serve', help='read-only results API')
    serve.add_argument('--host', default='0.0.0.0')
    serve.add_argument('--port', type=int, default=5000)
    serve.add_argument('--results-dir')
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    setup_logging()
    args = build_parser().parse_args(argv)

    try:
        return args.handler(args)
    except (ConfigError, PreconditionError, DataError, CheckpointError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAborted, NumericError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
