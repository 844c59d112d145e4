"""Command-line entry point: ``aoi-fbl {train,simulate,compare,reproduce,export-policy}``.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 solver did not
converge, 4 reproduction outside tolerance.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .experiment_io import (
    ConfigError,
    QTableError,
    ResultRecord,
    export_plot_data,
    export_results,
    load_qtable,
    load_scenarios,
    save_qtable,
)
from .fbl import InfeasibleError
from .mdp import MdpSpec, extract_policy, train
from .simulation import POLICY_NAMES, make_policy, monte_carlo

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_CONVERGED, EXIT_TOLERANCE = 0, 1, 2, 3, 4

logger = logging.getLogger("aoi_fbl")


class CliError(Exception):
    pass


def _scenario(args, parser):
    path = args.config or os.environ.get("AOI_FBL_CONFIG")
    try:
        scenarios = {sc.name: sc for sc in load_scenarios(path)}
    except (ConfigError, OSError) as exc:
        raise CliError(str(exc)) from None
    if args.scenario not in scenarios:
        parser.error(f"unknown scenario {args.scenario!r} (available: {', '.join(scenarios)})")
    return scenarios[args.scenario]


def _mdp_kwargs(args) -> dict:
    return {"a_max": args.a_max, "gamma": args.gamma, "l_max": args.l_max, "eps_min": args.eps_min}


def _fmt_metrics(m) -> str:
    return (
        f"delta_D_mean={m.delta_D_mean:.6g} var_D={m.var_D:.6g} "
        f"delta_mean_abs_A={m.delta_mean_abs_A:.6g} var_abs_A={m.var_abs_A:.6g} feasible={str(m.feasible).lower()}"
    )


def cmd_train(args, parser) -> int:
    sc = _scenario(args, parser)
    spec = MdpSpec(specs=tuple(sc.specs), n_max=sc.n_max, eps_max=sc.eps_max, **_mdp_kwargs(args))
    q = train(spec, init=args.init)
    try:
        save_qtable(q, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    print(f"sweeps_used={q.sweeps_used} converged={str(q.converged).lower()} last_delta={q.deltas[-1]:.3g}")
    return EXIT_OK if q.converged else EXIT_NOT_CONVERGED


def _results_format(path: str) -> str:
    return "json" if path.lower().endswith(".json") else "csv"


def cmd_simulate(args, parser) -> int:
    if args.policy == "mdp" and not args.qtable:
        parser.error("--policy mdp requires --qtable")
    sc = _scenario(args, parser)
    sc = dataclasses.replace(
        sc,
        trials=args.trials if args.trials is not None else sc.trials,
        periods=args.periods if args.periods is not None else sc.periods,
    )
    if args.policy == "mdp":
        q = load_qtable(args.qtable)
        policy = make_policy("mdp", sc, a_max=q.spec.a_max, gamma=q.spec.gamma, q_table=q)
        try:
            policy.fit()
        except ValueError as exc:
            raise CliError(f"{args.qtable}: {exc}") from None
    else:
        policy = make_policy(args.policy, sc).fit()
    metrics = monte_carlo(sc, policy, args.seed, estimator=args.estimator)
    n1 = int(policy.predict([list(sc.initial_ages)])[0, 0])
    record = ResultRecord(sc.name, args.policy, metrics, n1, args.seed)
    export_results([record], _results_format(args.out), args.out)
    if not metrics.feasible:
        print(f"warning: {args.policy} is infeasible in {sc.name}: {metrics.infeasible_reason}", file=sys.stderr)
    print(f"{sc.name} {args.policy} n1_at_A0={n1} {_fmt_metrics(metrics)}")
    return EXIT_OK


def _cached_mdp(sc, out_dir: Path, args):
    cache = out_dir / f"qtable_{sc.name}.json"
    policy = make_policy("mdp", sc)
    fp = policy.mdp_spec().fingerprint()
    if cache.exists():
        try:
            q = load_qtable(cache, expected=fp)
            return make_policy("mdp", sc, q_table=q).fit()
        except QTableError:
            logger.info("ignoring stale cache %s", cache)
    policy.fit()
    if not policy.q_table_.converged:
        raise CliError(f"value iteration did not converge for {sc.name}")
    save_qtable(policy.q_table_, cache)
    return policy


def cmd_compare(args, parser) -> int:
    from .experiments import compare_policies

    sc = _scenario(args, parser)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mdp_policy = _cached_mdp(sc, out, args)
    runs = compare_policies(sc, args.seed, mdp_policy=mdp_policy, estimator=args.estimator, keep_states=True)
    records = [r.record for r in runs.values()]
    export_results(records, "csv", out / "results.csv")
    export_results(records, "json", out / "results.json")
    export_plot_data("state_scatter", {n: r.record.metrics.state_counts for n, r in runs.items()}, out / "scatter.csv")
    states = mdp_policy.q_table_.spec.states()
    a_max = sc.a_max
    os_n1 = runs["onestep"].policy.predict(states)[:, 0].reshape(a_max, a_max)
    export_plot_data("policy_surface", (mdp_policy.policy_table_, os_n1), out / "policy_surface.csv")
    for name, run in runs.items():
        m = run.record.metrics
        tag = "" if m.feasible else "  [N/A: infeasible]"
        print(f"{sc.name} {name:<8} n1_at_A0={run.record.n1_at_A0} {_fmt_metrics(m)}{tag}")
    return EXIT_OK


def cmd_reproduce(args, parser) -> int:
    from .experiments import compare_policies, format_report, mc_cells, table2_cells, write_report

    tables = sorted(set(args.tables))
    path = args.config or os.environ.get("AOI_FBL_CONFIG")
    scenarios = load_scenarios(path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    if 2 in tables:
        cells += table2_cells(scenarios)
    if 3 in tables or 4 in tables:
        runs = {}
        for sc in scenarios:
            runs[sc.name] = compare_policies(sc, args.seed, mdp_policy=_cached_mdp(sc, out, args), estimator=args.estimator)
            export_results([r.record for r in runs[sc.name].values()], "csv", out / f"results_{sc.name}.csv")
        cells += mc_cells(tables, runs)
    write_report(
        cells,
        out,
        {"seed": args.seed, "tables": tables, "tool_version": __version__, "estimator_D": args.estimator},
    )
    print(format_report(cells))
    failed = [c for c in cells if c.status == "fail"]
    print(f"\n{len(cells)} cells, {len(failed)} outside tolerance; report written to {out / 'report.csv'}")
    return EXIT_TOLERANCE if failed else EXIT_OK


def cmd_export_policy(args, parser) -> int:
    expected = None
    if args.scenario:
        sc = _scenario(args, parser)
        expected = make_policy("mdp", sc, a_max=args.a_max, gamma=args.gamma).mdp_spec()
    q = load_qtable(args.qtable, expected=expected)
    table = extract_policy(q)
    export_plot_data("policy_surface", (table,), args.out)
    print(f"wrote {q.spec.a_max ** 2} states to {args.out}")
    return EXIT_OK


def _add_common(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", required=True, help="scenario name in the config file")
    p.add_argument("--config", default=None, help="scenario JSON file (default: $AOI_FBL_CONFIG or bundled scenarios)")


def _add_mdp(p):
    p.add_argument("--gamma", type=float, default=0.9, help="discount factor")
    p.add_argument("--a-max", type=int, default=8, help="age truncation of the MDP")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoi-fbl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", help="solve the MDP and save the Q-table", formatter_class=defaults)
    _add_common(p)
    p.add_argument("--out", required=True, help="Q-table output path (JSON)")
    _add_mdp(p)
    p.add_argument("--l-max", type=int, default=100, help="maximal number of value-iteration sweeps")
    p.add_argument("--eps-min", type=float, default=1e-5, help="convergence threshold on the state values")
    p.add_argument("--init", choices=("one_step", "zero"), default="one_step", help="initial value function")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="Monte-Carlo run of one policy", formatter_class=defaults)
    _add_common(p)
    p.add_argument("--policy", choices=POLICY_NAMES, required=True)
    p.add_argument("--qtable", default=None, help="trained Q-table (required for --policy mdp)")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--trials", type=int, default=None, help="trials (default: scenario value, 500)")
    p.add_argument("--periods", type=int, default=None, help="periods per trial (default: scenario value, 500)")
    p.add_argument("--estimator", choices=("conditional", "realized"), default="conditional", help="estimator of D")
    p.add_argument("--out", required=True, help="result file (.csv or .json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run all four policies with common random numbers", formatter_class=defaults)
    _add_common(p)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--estimator", choices=("conditional", "realized"), default="conditional", help="estimator of D")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reproduce", help="reproduce the reference tables", formatter_class=defaults)
    _add_common(p, scenario=False)
    p.add_argument("--tables", type=int, nargs="+", choices=(2, 3, 4), default=[2, 3, 4], help="tables to reproduce")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--estimator", choices=("conditional", "realized"), default="conditional", help="estimator of D")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("export-policy", help="write the policy surface of a Q-table", formatter_class=defaults)
    p.add_argument("--qtable", required=True, help="trained Q-table")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--scenario", default=None, help="check the table against this scenario")
    p.add_argument("--config", default=None, help="scenario JSON file")
    _add_mdp(p)
    p.set_defaults(func=cmd_export_policy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, parser)
    except (CliError, QTableError, ConfigError, InfeasibleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
