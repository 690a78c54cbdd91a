"""Command-line entry point: `python -m zrp_diffusion <subcommand> ...`"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pydantic

from . import io
from .chain import ChainModel, stationary_residual
from .config import (AbsorptionStatsConfig, ChainConfig, CompareConfig, DynkinConfig,
                     FellerConfig, PlotConfig, SimulateDiffusionConfig, SimulateZrpConfig,
                     TraceRatesConfig, VerifySuperharmonicConfig, configure_logging,
                     parse_floats, parse_grid, parse_sites)
from .diffusion import DiffusionControls, FaceCache, simulate_diffusion_ensemble
from .errors import ContractViolation, EmptyRegion, ValidationError
from .harness import (absorption_stats, compare_laws, dynkin_residual, feller_smoke_test,
                      horizon_sweep, support_monotonicity_check)
from .superharmonic import SupharmSpec, vanishing_check, verify_supharmonic
from .testfunctions import Polynomial, TestFunction
from .trace import kernel_check, trace_rates, trace_stationarity_residual
from .zrp import default_rates, initial_configuration, simulate_zrp_ensemble, table_rates

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONTRACT = 2


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """Usage errors print the usage text and exit 1 instead of argparse's 2"""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def load_chain(path: Path) -> ChainModel:
    return ChainModel.from_config(ChainConfig.from_file(path))


def _config(cls, args: argparse.Namespace, **fields):
    """Build a run config, leaving unset options to the model defaults"""
    common = {name: getattr(args, name, None) for name in ("seed", "threads", "numeric_policy")}
    values = {k: v for k, v in {**common, **fields}.items() if v is not None}
    return cls(**values)


def cmd_trace_rates(args) -> int:
    cfg = _config(TraceRatesConfig, args, chain=args.chain, face=args.face, out=args.out)
    chain = load_chain(cfg.chain)
    policy = cfg.policy()
    model = trace_rates(chain, cfg.face)
    report = model.to_dict()
    report["checks"] = {
        "stationary_residual": stationary_residual(chain),
        "trace_stationarity_residual": trace_stationarity_residual(chain, cfg.face),
        "kernel": kernel_check(chain, cfg.face, policy),
    }
    io.write_json(cfg.out, report)
    return EXIT_OK


def cmd_simulate_zrp(args) -> int:
    cfg = _config(SimulateZrpConfig, args, chain=args.chain, n=args.n, t=args.t, grid=args.grid,
                  replicas=args.replicas, x0=args.x0, max_events=args.max_events,
                  rates_table=args.rates_table, out=args.out)
    chain = load_chain(cfg.chain)
    if cfg.rates_table is not None:
        family = table_rates(chain, io.read_json(cfg.rates_table))
    else:
        family = default_rates(chain)
    x0 = cfg.x0 if cfg.x0 is not None else tuple(np.full(chain.p, 1.0 / chain.p))
    eta0 = initial_configuration(x0, cfg.n)
    ensemble = simulate_zrp_ensemble(chain, family, eta0, cfg.t, cfg.grid,
                                     cfg.seed, cfg.replicas, cfg.threads, cfg.max_events)
    io.write_zrp(cfg.out, ensemble,
                 {"b": chain.b, "eta0": ",".join(str(v) for v in eta0.eta), "rates": family.kind})
    return EXIT_OK


def cmd_simulate_diffusion(args) -> int:
    cfg = _config(SimulateDiffusionConfig, args, chain=args.chain, x0=args.x0, t=args.t,
                  dt=args.dt, eps_abs=args.eps_abs, x_ref=args.x_ref, dt_floor=args.dt_floor,
                  grid=args.grid, replicas=args.replicas, out=args.out,
                  absorptions_out=args.absorptions_out)
    chain = load_chain(cfg.chain)
    controls = DiffusionControls(dt_base=cfg.dt, eps_abs=cfg.eps_abs, x_ref=cfg.x_ref,
                                 dt_floor=cfg.dt_floor)
    ensemble = simulate_diffusion_ensemble(chain, cfg.x0, cfg.t, controls, cfg.seed,
                                           cfg.replicas, grid=cfg.grid, threads=cfg.threads,
                                           cache=FaceCache(chain, cfg.policy()))
    extra = {"b": chain.b, "dt": cfg.dt, "eps_abs": cfg.eps_abs, "x_ref": cfg.x_ref,
             "x0": ",".join(repr(v) for v in cfg.x0)}
    io.write_diffusion(cfg.out, ensemble, extra)
    absorptions = cfg.absorptions_out or cfg.out.with_name("absorptions.csv")
    io.write_absorptions(absorptions, ensemble.records, cfg.seed, chain.p)
    return EXIT_OK


def cmd_verify_superharmonic(args) -> int:
    cfg = _config(VerifySuperharmonicConfig, args, chain=args.chain, a=args.a, d=args.d,
                  gamma=args.gamma, eps=args.eps, grid_density=args.grid_density, out=args.out)
    chain = load_chain(cfg.chain)
    spec = SupharmSpec(cfg.a, cfg.gamma, chain.b)
    try:
        report = verify_supharmonic(spec, chain, cfg.d, cfg.eps, cfg.grid_density, cfg.policy())
    except EmptyRegion as e:
        logger.warning("empty region: %s", e)
        io.write_json(cfg.out, {"a": [s + 1 for s in cfg.a], "d": [s + 1 for s in cfg.d],
                                "epsilon": cfg.eps, "empty": True, "reason": str(e)})
        return EXIT_OK
    report["empty"] = False
    if len(cfg.a) < chain.p:
        report["vanishing"] = vanishing_check(spec, chain, seed=cfg.seed)
    io.write_json(cfg.out, report)
    if not report["ok"]:
        worst = report["max_value"]
        raise ContractViolation("no grid point in the region" if worst is None else
                                f"generator of F_A reaches {worst:.3g} > {report['tolerance']:g}")
    return EXIT_OK


def _zrp_by_n(tables: Sequence[io.EnsembleTable]) -> Dict[int, io.EnsembleTable]:
    by_n: Dict[int, io.EnsembleTable] = {}
    for table in tables:
        if table.N is None:
            raise ValidationError("ZRP CSV is missing its n= header")
        if table.N in by_n:
            raise ValidationError(f"two ZRP ensembles with N={table.N}")
        by_n[table.N] = table
    return by_n


def cmd_compare(args) -> int:
    cfg = _config(CompareConfig, args, zrp=args.zrp, diff=args.diff,
                  checkpoints=args.checkpoints, out=args.out, n_resamples=args.n_resamples,
                  min_replicas=args.min_replicas, threshold=args.threshold)
    zrp = _zrp_by_n([io.read_ensemble(path) for path in cfg.zrp])
    diffusion = io.read_ensemble(cfg.diff)
    report = compare_laws(zrp, diffusion, cfg.checkpoints, seed=cfg.seed,
                          n_resamples=cfg.n_resamples, min_replicas=cfg.min_replicas,
                          threshold=cfg.threshold)
    io.write_json(cfg.out, report)
    return EXIT_OK


def cmd_absorption_stats(args) -> int:
    cfg = _config(AbsorptionStatsConfig, args, chain=args.chain, absorptions=args.absorptions,
                  diff=args.diff, q_grid=args.q_grid, horizon=args.horizon, out=args.out)
    chain = load_chain(cfg.chain)
    records = io.read_absorptions(cfg.absorptions, p=chain.p)
    horizon = cfg.horizon
    support = None
    if cfg.diff is not None:
        table = io.read_ensemble(cfg.diff)
        support = support_monotonicity_check(table, "diffusion")
        horizon = horizon or float(table.sample_times[-1])
    summary = absorption_stats(records, chain, cfg.q_grid, horizon)
    if horizon:
        summary["horizon_sweep"] = horizon_sweep(records, [horizon / 4, horizon / 2, horizon])
    if support is not None:
        summary["support_monotonicity"] = support
    io.write_json(cfg.out, summary)
    if summary["violation"] or (support is not None and not support["ok"]):
        raise ContractViolation("absorption statistics violate the bound or support monotonicity")
    return EXIT_OK


def _test_function(cfg: DynkinConfig, chain: ChainModel) -> TestFunction:
    if cfg.function == "constant":
        return Polynomial.constant(chain.p)
    if cfg.function == "product-squares":
        return Polynomial.product_squares(chain.p)
    if cfg.function == "fa":
        if not cfg.a:
            raise ValidationError("--function fa needs --a")
        return SupharmSpec(cfg.a, cfg.gamma, chain.b).function
    if cfg.polynomial is None:
        raise ValidationError("--function polynomial needs --polynomial")
    return Polynomial.from_spec(io.read_json(cfg.polynomial))


def cmd_dynkin(args) -> int:
    cfg = _config(DynkinConfig, args, chain=args.chain, paths=args.paths, function=args.function,
                  a=args.a, gamma=args.gamma, polynomial=args.polynomial, delta=args.delta,
                  t=args.t, out=args.out)
    chain = load_chain(cfg.chain)
    table = io.read_ensemble(cfg.paths)
    n_particles = table.N if table.kind == "zrp" else None
    result = dynkin_residual(table, FaceCache(chain, cfg.policy()), _test_function(cfg, chain),
                             cfg.delta, cfg.t, n_particles=n_particles)
    result["function"] = cfg.function
    io.write_json(cfg.out, result)
    if not result["ok"]:
        raise ContractViolation(f"Dynkin residual {result['mean']:.3g} outside {result['ci']}")
    return EXIT_OK


def cmd_feller(args) -> int:
    cfg = _config(FellerConfig, args, chain=args.chain, x0=args.x0, h=args.h, t=args.t,
                  dt=args.dt, eps_abs=args.eps_abs, replicas=args.replicas, out=args.out)
    chain = load_chain(cfg.chain)
    controls = DiffusionControls(dt_base=cfg.dt, eps_abs=cfg.eps_abs)
    report = feller_smoke_test(chain, cfg.x0, cfg.h, cfg.t, controls, cfg.replicas, cfg.seed,
                               threads=cfg.threads, cache=FaceCache(chain, cfg.policy()))
    if not report["monotone"]:
        logger.warning("distances do not decrease along the perturbation ladder")
    io.write_json(cfg.out, report)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_paths, plot_report

    cfg = _config(PlotConfig, args, input=args.input, kind=args.kind, out=args.out,
                  max_paths=args.max_paths)
    if cfg.kind == "paths":
        plot_paths(io.read_ensemble(cfg.input), cfg.out, cfg.max_paths)
    else:
        plot_report(io.read_json(cfg.input), cfg.out)
    return EXIT_OK


def build_parser() -> CliParser:
    common = CliParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="replica worker threads")
    common.add_argument("--numeric-policy", type=Path, help="JSON file of tolerances")
    common.add_argument("--log-level", help="logging level (default from environment)")

    parser = CliParser(prog="zrp_diffusion", parents=[common],
                       description="Condensing zero-range process and its absorbed simplex diffusion")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    def add(name: str, handler: Callable[[argparse.Namespace], int], help_text: str):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(handler=handler)
        return p

    p = add("trace-rates", cmd_trace_rates, "trace of the chain on a face")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--face", type=parse_sites, required=True)
    p.add_argument("--out", type=Path)

    p = add("simulate-zrp", cmd_simulate_zrp, "simulate the rescaled zero-range process")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--grid", type=parse_grid, required=True)
    p.add_argument("--replicas", type=int)
    p.add_argument("--x0", type=parse_floats)
    p.add_argument("--max-events", type=int)
    p.add_argument("--rates-table", type=Path,
                   help="JSON list of rows g_i(0..L) per site; the 1 + b/n tail applies beyond L")
    p.add_argument("--out", type=Path, required=True)

    p = add("simulate-diffusion", cmd_simulate_diffusion, "simulate the absorbed diffusion")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--x0", type=parse_floats, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dt", type=float)
    p.add_argument("--eps-abs", type=float)
    p.add_argument("--x-ref", type=float)
    p.add_argument("--dt-floor", type=float)
    p.add_argument("--grid", type=parse_grid)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--absorptions-out", type=Path)

    p = add("verify-superharmonic", cmd_verify_superharmonic, "grid check of the sign of L F_A")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--a", type=parse_sites, required=True)
    p.add_argument("--d", type=parse_sites, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--grid-density", type=int)
    p.add_argument("--out", type=Path)

    p = add("compare", cmd_compare, "compare ZRP and diffusion marginals")
    p.add_argument("--zrp", type=Path, nargs="+", required=True)
    p.add_argument("--diff", type=Path, required=True)
    p.add_argument("--checkpoints", type=parse_floats, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-resamples", type=int)
    p.add_argument("--min-replicas", type=int)
    p.add_argument("--threshold", type=float)

    p = add("absorption-stats", cmd_absorption_stats, "absorption times against the bound")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--absorptions", type=Path, required=True)
    p.add_argument("--diff", type=Path)
    p.add_argument("--q-grid", type=parse_floats)
    p.add_argument("--horizon", type=float)
    p.add_argument("--out", type=Path)

    p = add("dynkin", cmd_dynkin, "Dynkin martingale residual of a stored ensemble")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--paths", type=Path, required=True)
    p.add_argument("--function", choices=["constant", "product-squares", "fa", "polynomial"])
    p.add_argument("--a", type=parse_sites)
    p.add_argument("--gamma", type=float)
    p.add_argument("--polynomial", type=Path)
    p.add_argument("--delta", type=float)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", type=Path)

    p = add("feller", cmd_feller, "continuity in the starting point")
    p.add_argument("--chain", type=Path, required=True)
    p.add_argument("--x0", type=parse_floats, required=True)
    p.add_argument("--h", type=parse_floats)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dt", type=float)
    p.add_argument("--eps-abs", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out", type=Path)

    p = add("plot", cmd_plot, "PNG figure of an ensemble or a comparison report")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--kind", choices=["paths", "report"])
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-paths", type=int)
    return parser


def dispatch(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_INVALID
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    try:
        configure_logging(getattr(args, "log_level", None))
        return args.handler(args)
    except ContractViolation as e:
        logger.error("contract violation: %s", e)
        return EXIT_CONTRACT
    except pydantic.ValidationError as e:
        logger.error("invalid configuration:\n%s", e)
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    except (ValidationError, ValueError, OSError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_INVALID


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
