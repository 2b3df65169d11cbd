"""Command-line surface: fit user models, impute effects, run studies, sweep.

Every subcommand takes ``--seed`` and is fully reproducible: repeating a
command with the same inputs and seed rewrites byte-identical CSVs.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import environment, fitting, sweep as sweep_mod
from .bandit import PriorSpec, posterior_update, save_posterior
from .config import load_config_file, study_config_from_doc, sweep_config_from_doc
from .study import (
    mean_cumulative_quality,
    percentile25_cumulative_quality,
    run_study,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brushbandit",
        description=(
            "Simulation test bed for a burden-aware message-nudging bandit "
            "on toothbrushing outcomes."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit-env", help="fit per-user brushing models from a session CSV")
    p_fit.add_argument("sessions", help="session CSV path")
    p_fit.add_argument("-o", "--output", required=True, help="output model CSV")
    p_fit.add_argument(
        "--column-map", nargs="*", default=[], metavar="FIELD=COLUMN",
        help="rename input columns, e.g. user_id=participant duration=brush_sec",
    )
    p_fit.add_argument("--restarts", type=int, default=50)
    p_fit.add_argument("--max-iterations", type=int, default=500)
    p_fit.add_argument("--seed", type=int, default=0)

    p_imp = sub.add_parser("impute-effects", help="attach drawn effect sizes to a model pool")
    p_imp.add_argument("models", help="model CSV from fit-env")
    p_imp.add_argument("-o", "--output", required=True)
    p_imp.add_argument("--seed", type=int, default=0)

    p_pool = sub.add_parser("synth-pool", help="generate a synthetic user-model pool")
    p_pool.add_argument("-o", "--output", required=True)
    p_pool.add_argument("-n", "--n-users", type=int, default=13)
    p_pool.add_argument("--seed", type=int, default=0)

    p_run = sub.add_parser("run-study", help="simulate one study and print its criteria")
    p_run.add_argument("--config", required=True, help="JSON config file")
    p_run.add_argument("--models", required=True, help="model CSV")
    p_run.add_argument("--xi1", type=float, help="override cost weight xi1")
    p_run.add_argument("--xi2", type=float, help="override cost weight xi2")
    p_run.add_argument("--E", type=float, dest="effect_shrink_e",
                       help="override effect shrink factor")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--trial", type=int, default=0, help="trial index for seeding")
    p_run.add_argument("-o", "--output", help="directory for decision/user CSVs")

    p_sweep = sub.add_parser("sweep", help="Monte Carlo grid sweep over (xi1, xi2) x E")
    p_sweep.add_argument("--config", required=True, help="JSON config file")
    p_sweep.add_argument("--models", required=True, help="model CSV")
    p_sweep.add_argument("-o", "--output", required=True, help="output directory")
    p_sweep.add_argument("--seed", type=int, help="override the config seed")
    p_sweep.add_argument("--workers", type=int, help="override worker count")

    p_rep = sub.add_parser("report", help="re-emit CSV/SVG artifacts from a sweep directory")
    p_rep.add_argument("directory", help="directory containing trials.csv")

    return parser


def _parse_column_map(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(
                f"column-map entries must look like field=column, got {pair!r}"
            )
        key, _, value = pair.partition("=")
        out[key] = value
    return out


def _cmd_fit_env(args) -> int:
    sessions = fitting.load_sessions(args.sessions, _parse_column_map(args.column_map))
    if not sessions:
        raise ValueError(f"no sessions parsed from {args.sessions}")
    config = fitting.FitConfig(
        restarts=args.restarts, max_iterations=args.max_iterations
    )
    models = fitting.fit_all_users(sessions, config, seed=args.seed)
    environment.save_models(args.output, models)
    print(f"fit {len(models)} user models -> {args.output}")
    return 0


def _cmd_impute_effects(args) -> int:
    models = environment.load_models(args.models)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    models = environment.attach_effect_sizes(models, rng)
    environment.save_models(args.output, models)
    print(f"imputed effect sizes for {len(models)} users -> {args.output}")
    return 0


def _cmd_synth_pool(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence([args.seed]))
    models = environment.make_synthetic_pool(args.n_users, rng)
    environment.save_models(args.output, models)
    print(f"wrote {len(models)} synthetic user models -> {args.output}")
    return 0


def _cmd_run_study(args) -> int:
    doc = load_config_file(args.config)
    config = study_config_from_doc(doc, seed=args.seed)
    cost = config.cost_params
    if args.xi1 is not None:
        cost = replace(cost, xi1=args.xi1)
    if args.xi2 is not None:
        cost = replace(cost, xi2=args.xi2)
    config = replace(config, cost_params=cost)
    if args.effect_shrink_e is not None:
        config = replace(config, effect_shrink_e=args.effect_shrink_e)
    models = environment.load_models(args.models)
    result = run_study(config, models, PriorSpec(), trial_index=args.trial)
    print(
        f"users={config.n_users} t={config.t_decisions} "
        f"xi1={config.cost_params.xi1:g} xi2={config.cost_params.xi2:g} "
        f"E={config.effect_shrink_e:g} seed={config.master_seed} "
        f"mean_cumulative_quality={mean_cumulative_quality(result):.6f} "
        f"p25_cumulative_quality={percentile25_cumulative_quality(result):.6f} "
        f"mean_quality={float(result.qualities.mean()):.6f} "
        f"mean_surrogate_reward={float(result.rewards.mean()):.6f}"
    )
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        result.write_decision_log_csv(outdir / "decision_log.csv")
        result.write_user_summary_csv(outdir / "user_summary.csv")
        save_posterior(
            outdir / "posterior.txt", posterior_update(PriorSpec(), result.records)
        )
        print(f"wrote decision_log.csv, user_summary.csv, posterior.txt -> {outdir}")
    return 0


def _cmd_sweep(args) -> int:
    doc = load_config_file(args.config)
    config = sweep_config_from_doc(doc, seed=args.seed)
    if args.workers is not None:
        config = replace(config, workers=args.workers)
    models = environment.load_models(args.models)
    result = sweep_mod.run_sweep(config, models, PriorSpec())
    written = sweep_mod.write_sweep_outputs(result, args.output)
    for e in config.e_values:
        for criterion in (1, 2):
            xi1, xi2 = result.argmax(e, criterion)
            stats = result.cell(e, xi1, xi2)
            print(
                f"E={e:g} criterion {criterion}: best xi1={xi1:g} xi2={xi2:g} "
                f"mean={stats.mean(criterion):.6g} se={stats.std_error(criterion):.6g}"
            )
    print(f"wrote {len(written)} files -> {args.output}")
    return 0


def _cmd_report(args) -> int:
    written = sweep_mod.report(args.directory)
    print(f"re-emitted {len(written)} files -> {args.directory}")
    return 0


_COMMANDS = {
    "fit-env": _cmd_fit_env,
    "impute-effects": _cmd_impute_effects,
    "synth-pool": _cmd_synth_pool,
    "run-study": _cmd_run_study,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
