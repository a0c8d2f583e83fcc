#!/usr/bin/env python3
"""
Command-line interface for the alcohol policy simulation.
"""

import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .config import apply_environment, apply_overrides, load_config
from .errors import ConfigError, DomainError, MupsimError, NumericError, ValidationError
from .pipeline import Pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='mupsim',
        description='Simulate minimum unit prices and volumetric alcohol taxes on a household scanner panel',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate the synthetic panel and run every stage
  mupsim generate --seed 7
  mupsim estimate-quality
  mupsim estimate-quantity
  mupsim calibrate-supply
  mupsim calibrate-tax
  mupsim simulate --replications 20

  # One scenario with solver traces
  mupsim simulate --scenario mup --trace

  # Check the invariants of the output directory
  mupsim validate --out out

Scenarios:
  low-uniform, high-uniform, low-progressive, high-progressive,
  mup, mup+low-progressive

Environment:
  MUPSIM_SEED, MUPSIM_OUT, MUPSIM_DATA, MUPSIM_VAT_RATE, MUPSIM_MUP_RATE,
  MUPSIM_REPLICATIONS, MUPSIM_EXTERNAL_COST override the configuration file.
"""
    )

    parser.add_argument(
        'command',
        choices=['generate', 'estimate-quality', 'estimate-quantity', 'calibrate-supply',
                 'calibrate-tax', 'simulate', 'report', 'validate'],
        help='Pipeline stage to run'
    )

    parser.add_argument(
        '--config',
        type=str,
        help='JSON configuration file (default: built-in defaults)'
    )

    parser.add_argument(
        '--seed',
        type=int,
        help='Root seed of the generator and the Monte Carlo replications'
    )

    parser.add_argument(
        '--scenario',
        action='append',
        default=[],
        help='Scenario to simulate (repeatable; default: all configured scenarios)'
    )

    parser.add_argument(
        '--out',
        type=str,
        help='Output directory for models, calibrations and reports'
    )

    parser.add_argument(
        '--data',
        type=str,
        help='Directory of the panel tables'
    )

    parser.add_argument(
        '--trace',
        action='store_true',
        help='Write solver iteration traces'
    )

    parser.add_argument(
        '--replications',
        type=int,
        help='Number of Monte Carlo replications'
    )

    parser.add_argument(
        '--laspeyres',
        action='store_true',
        help='Use Laspeyres price indices in the share system'
    )

    parser.add_argument(
        '-v', '--verbose',
        action='store_true',
        help='Enable debug logging and tracebacks'
    )

    parser.add_argument(
        '--version',
        action='version',
        version=f'%(prog)s {__version__}'
    )
    return parser


def configure(args: argparse.Namespace):
    """Configuration file, then MUPSIM_ environment variables, then flags."""
    config = apply_environment(load_config(args.config))
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.out:
        overrides['out_dir'] = args.out
    if args.data:
        overrides['data_dir'] = args.data
    if args.trace:
        overrides['trace'] = True
    if args.replications is not None:
        overrides['policy.replications'] = args.replications
    if args.laspeyres:
        overrides['policy.laspeyres'] = True
    return apply_overrides(config, overrides) if overrides else config


def run(args: argparse.Namespace) -> int:
    pipeline = Pipeline(configure(args))
    command = args.command
    if command == 'generate':
        for path in pipeline.generate():
            print(f"Wrote {path}")
    elif command == 'estimate-quality':
        for category, model in pipeline.estimate_quality().items():
            print(f"{category}: alpha={model.alpha:.4f} sigma={model.sigma:.4f} "
                  f"converged={model.diagnostics.get('converged')}")
    elif command == 'estimate-quantity':
        model = pipeline.estimate_quantity()
        print(f"Share system estimated (max restriction violation {model.check_constraints():.2e})")
    elif command == 'calibrate-supply':
        for category, summary in pipeline.calibrate_supply().items():
            print(f"{category}: mean margin {summary['mean_margin_pct']:.1f}% "
                  f"FOC residual {summary['foc_residual']:.2e}")
    elif command == 'calibrate-tax':
        for name, values in pipeline.calibrate_tax().items():
            if 'base_rate' in values:
                print(f"{name}: base rate {values['base_rate']:.5f} EUR per degree-liter")
    elif command == 'simulate':
        tables = pipeline.simulate(args.scenario)
        print_summary(tables['impacts_pure_alcohol'])
    elif command == 'report':
        print(f"Wrote {pipeline.report()}")
    elif command == 'validate':
        failures = pipeline.validate()
        if failures:
            raise ValidationError(failures)
        print("All invariants hold")
    return EXIT_OK


def print_summary(table):
    """Print the total ethanol change of each scenario."""
    print("=" * 60)
    print("Change in pure alcohol purchases (%)")
    print("=" * 60)
    rows = table[table['statistic'] == 'dE_pct:all']
    for record in rows.itertuples(index=False):
        print(f"  {record.scenario:<22} {record.point:8.2f}   [{record.lo95:.2f}, {record.hi95:.2f}]")
    print("=" * 60)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s | %(levelname)-8s | %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        return run(args)
    except ValidationError as e:
        code = EXIT_VALIDATION
        error = e
    except ConfigError as e:
        code = EXIT_CONFIG
        error = e
    except (NumericError, DomainError) as e:
        code = EXIT_NUMERIC
        error = e
    except MupsimError as e:
        code = EXIT_NUMERIC
        error = e
    print(f"Error: {error}", file=sys.stderr)
    if args.verbose:
        import traceback
        traceback.print_exception(type(error), error, error.__traceback__)
    return code


def entry_point():
    """Console-script wrapper that exits with the status code."""
    sys.exit(main())


if __name__ == '__main__':
    entry_point()
