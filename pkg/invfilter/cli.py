"""
Command-line module for invfilter

Subcommands simulate, filter, compare, optimize-horizon, stationary and presets.
Exit code 0 on success, 2 on configuration errors, 3 on numerical failures.
"""

import argparse
import logging
import sys
from typing import List, Optional, Sequence

import numpy as np

from invfilter.config import (
    FILTER_NAMES,
    ExperimentConfig,
    FilterParams,
    load_scenario_config,
    preset_names,
)
from invfilter.constants import (
    APPLICATION_PREFIX,
    DEFAULT_BURN_IN,
    DEFAULT_RETAINED,
    EXIT_CONFIG_ERROR,
    EXIT_NUMERICAL_ERROR,
    EXIT_OK,
    MEKF_BURN_IN,
)
from invfilter.errors import NumericalError
from invfilter.harness import Harness

logger = logging.getLogger(f"{APPLICATION_PREFIX}.cli")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", required=True, help="preset name or path of a JSON scenario file"
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--debug", action="store_true", help="log at DEBUG level")


def _add_filter_params(parser: argparse.ArgumentParser) -> None:
    defaults = FilterParams()
    parser.add_argument("--trajectories", type=int, default=None)
    parser.add_argument("--k1", type=float, default=defaults.k1)
    parser.add_argument("--k2", type=float, default=defaults.k2)
    parser.add_argument("--k", type=float, default=defaults.k)
    parser.add_argument("--lam", type=float, default=defaults.lam)
    parser.add_argument("--particles", type=int, default=defaults.particles)
    parser.add_argument("--centered", action="store_true")
    parser.add_argument("--obs-inflation", type=float, default=defaults.obs_inflation)
    parser.add_argument("--qw-form", choices=["printed", "adjoint"], default=defaults.qw_form)


def _add_chain_options(parser: argparse.ArgumentParser, chains: int) -> None:
    parser.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN)
    parser.add_argument("--retained", type=int, default=DEFAULT_RETAINED)
    parser.add_argument("--chains", type=int, default=chains)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invfilter", description="Invariant filters on matrix Lie groups"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="write truth and observation CSVs")
    _add_common(simulate)
    simulate.add_argument("--trajectories", type=int, default=None)

    run = sub.add_parser("filter", help="Monte-Carlo run of one filter")
    _add_common(run)
    _add_filter_params(run)
    run.add_argument("--filter", choices=FILTER_NAMES, default="iekf")

    compare = sub.add_parser("compare", help="several filters on shared trajectories")
    _add_common(compare)
    _add_filter_params(compare)
    compare.add_argument(
        "--filter", choices=FILTER_NAMES, action="append", dest="filters", required=True
    )

    optimize = sub.add_parser("optimize-horizon", help="grid search of the horizon gain")
    _add_common(optimize)
    _add_chain_options(optimize, chains=500)
    optimize.add_argument("--k-range", type=float, nargs=2, default=(0.02, 0.5))
    optimize.add_argument("--lam-range", type=float, nargs=2, default=(5e-4, 0.1))
    optimize.add_argument("--k-points", type=int, default=10)
    optimize.add_argument("--lam-points", type=int, default=10)
    optimize.add_argument("--tune-mekf", action="store_true")
    optimize.add_argument("--mekf-burn-in", type=int, default=MEKF_BURN_IN)

    stationary = sub.add_parser("stationary", help="stationary law of the fixed-gain error")
    _add_common(stationary)
    _add_chain_options(stationary, chains=1000)
    stationary.add_argument("--k1", type=float, default=FilterParams().k1)
    stationary.add_argument("--k2", type=float, default=FilterParams().k2)
    stationary.add_argument("--k", type=float, default=FilterParams().k)
    stationary.add_argument("--lam", type=float, default=FilterParams().lam)
    stationary.add_argument("--prior-std", type=float, default=None)

    presets = sub.add_parser("presets", help="list the named scenarios")
    presets.add_argument("--debug", action="store_true")
    return parser


def _params(args: argparse.Namespace) -> FilterParams:
    return FilterParams(
        k1=args.k1,
        k2=args.k2,
        k=args.k,
        lam=args.lam,
        particles=args.particles,
        centered=args.centered,
        obs_inflation=args.obs_inflation,
        qw_form=args.qw_form,
    )


def _experiment(args: argparse.Namespace, filter_name: str) -> ExperimentConfig:
    return ExperimentConfig(
        scenario=load_scenario_config(args.config),
        filter=filter_name,
        params=_params(args),
        n_trajectories=args.trajectories,
        seed=args.seed,
    )


def _grid(bounds: Sequence[float], points: int) -> List[float]:
    low, high = bounds
    if points < 1 or low <= 0 or high < low:
        raise ValueError(f"invalid log grid {low}..{high} with {points} points")
    return [float(v) for v in np.geomspace(low, high, points)]


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "presets":
        for name in preset_names():
            print(name)
        return

    harness = Harness(args.out, debug=args.debug)
    if args.command == "simulate":
        harness.simulate_cmd(load_scenario_config(args.config), args.trajectories, args.seed)
    elif args.command == "filter":
        report = harness.run_experiment(_experiment(args, args.filter))
        print(f"{report.filter_name}: final rmse {report.final_rmse:.6g}")
    elif args.command == "compare":
        reports = harness.compare_filters([_experiment(args, name) for name in args.filters])
        for report in reports:
            print(f"{report.filter_name}: final rmse {report.final_rmse:.6g}")
    elif args.command == "optimize-horizon":
        optimum = harness.optimize_horizon_cmd(
            load_scenario_config(args.config),
            _grid(args.k_range, args.k_points),
            _grid(args.lam_range, args.lam_points),
            burn_in=args.burn_in,
            n_traj=args.chains,
            retained=args.retained,
            seed=args.seed,
            tune_mekf=args.tune_mekf,
            mekf_burn_in=args.mekf_burn_in,
        )
        print(f"k={optimum['k']:.6g} lambda={optimum['lambda']:.6g} rmse={optimum['rmse']:.6g}")
    elif args.command == "stationary":
        params = FilterParams(k1=args.k1, k2=args.k2, k=args.k, lam=args.lam)
        summary = harness.stationary_cmd(
            load_scenario_config(args.config),
            params,
            burn_in=args.burn_in,
            n_traj=args.chains,
            retained=args.retained,
            seed=args.seed,
            prior_std=args.prior_std,
        )
        print(f"stationary rmse {summary['rmse']:.6g}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        _dispatch(args)
    except (NumericalError, np.linalg.LinAlgError) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL_ERROR
    except (FileNotFoundError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
