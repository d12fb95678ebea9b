"""Command-line experiment runner.

Subcommands:
  theory     solve one deterministic problem and print its prediction
  simulate   run one seeded empirical trial and print exact errors
  sweep      run a parameter sweep (theory overlaying Monte-Carlo trials)
  rho-curve  trace the alignment strength R(rho) over a similarity grid
  compare    multi-task vs separate formulation over a task-count grid
  preset     run a packaged figure preset by name (fig2a ... fig7)
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from ..generr import prediction_from_solution, solve_R_of_rho
from ..model import generate_ensemble
from ..quadrature import QuadratureGrid
from ..theory import (
    solve_general,
    solve_infinite_T,
    solve_separate_asymptotic,
    solve_symmetric,
)
from ..train import solve_multitask, solve_separate
from .configfile import load_document
from .sweep import compare_formulations, run_rho_curve, run_sweep

PRESETS = ("fig2a", "fig2b", "fig4a", "fig4b", "fig5a", "fig5b", "fig6", "fig7")


def _default_workers() -> int:
    env = os.environ.get("MTL_ASY_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _add_common(p: argparse.ArgumentParser, config_required: bool = True):
    p.add_argument("--config", type=Path, required=config_required,
                   help="experiment document (YAML)")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help="concurrent Monte-Carlo workers (env MTL_ASY_WORKERS)")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--trials", type=int, default=None, help="Monte-Carlo trials")
    p.add_argument("--no-theory", action="store_true", help="skip theory solves")
    p.add_argument("--no-sim", action="store_true", help="skip simulation trials")
    p.add_argument("--quad-order", type=int, default=None,
                   help="Gauss-Hermite order per dimension (default 48)")


def _apply_overrides(args, config, sweep):
    if args.seed is not None:
        config = config.replace(seed=args.seed)
        sweep = replace(sweep, base=config) if sweep is not None else None
    if sweep is not None:
        changes = {}
        if args.out is not None:
            changes["outputs"] = str(args.out)
        if args.trials is not None:
            changes["trials"] = args.trials
        if args.no_theory:
            changes["emit_theory"] = False
        if args.no_sim:
            changes["emit_simulation"] = False
        if args.quad_order is not None:
            changes["quad_order"] = args.quad_order
        changes["workers"] = args.workers
        sweep = replace(sweep, **changes)
    return config, sweep


def _print_solution(tag, sol, preds):
    print(f"[{tag}] value={sol.value:.8f} converged={sol.converged} "
          f"residual={sol.residual:.2e}")
    for t, pred in enumerate(preds):
        q = sol.q[min(t, sol.q.size - 1)]
        r = sol.r[min(t, sol.r.size - 1)]
        eta = sol.eta[min(t, sol.eta.size - 1)]
        print(f"  task {t}: q*={q:.6f} r*={r:.6f} eta*={eta:.6f} "
              f"c1={pred.c1:.6f} c2={pred.c2:.6f} gen_error={pred.gen_error:.6f}")


def cmd_theory(args) -> int:
    _, config, sweep = load_document(args.config)
    config, _ = _apply_overrides(args, config, sweep)
    grid = QuadratureGrid(args.quad_order or 48)
    alphas = config.alphas
    kappas = config.kappas
    source = args.source
    if source == "auto":
        source = "theorem1" if config.is_symmetric else "theorem2"
    if source == "theorem2":
        sol = solve_general(alphas, kappas, config.rho, config.gamma1, config.gamma2,
                            config.loss_kind, config.model_kind, grid)
        preds = [prediction_from_solution(sol, alphas[t], kappas[t], config.rho,
                                          config.model_kind, source, task=t)
                 for t in range(config.num_tasks)]
    else:
        if source == "theorem1":
            sol = solve_symmetric(config.num_tasks, alphas[0], kappas[0], config.rho,
                                  config.gamma1, config.gamma2, config.loss_kind,
                                  config.model_kind, grid)
        elif source == "lemma1":
            sol = solve_infinite_T(alphas[0], kappas[0], config.rho, config.gamma1,
                                   config.gamma2, config.loss_kind, config.model_kind,
                                   grid)
        elif source == "separate":
            R = args.R
            if R is None:
                R = solve_R_of_rho(alphas[0], kappas[0], config.rho, config.gamma1,
                                   config.gamma2, config.loss_kind, config.model_kind,
                                   grid)
                print(f"solved R(rho) = {R:.6f}")
            sol = solve_separate_asymptotic(alphas[0], kappas[0], config.rho,
                                            config.gamma1, config.gamma2, float(R),
                                            config.loss_kind, config.model_kind, grid)
        else:
            raise SystemExit(f"unknown source {source}")
        preds = [prediction_from_solution(sol, alphas[0], kappas[0], config.rho,
                                          config.model_kind, source)]
    _print_solution(source, sol, preds)
    return 0


def cmd_simulate(args) -> int:
    from ..generr import empirical_gen_error, empirical_overlaps

    _, config, sweep = load_document(args.config)
    config, _ = _apply_overrides(args, config, sweep)
    ensemble = generate_ensemble(config, config.seed)
    if args.separate_R is not None:
        model = solve_separate(ensemble, config, args.separate_R)
        tag = f"separate R={args.separate_R}"
    else:
        model = solve_multitask(ensemble, config)
        tag = "multi-task"
    print(f"[{tag}] objective={model.objective_value:.8f} "
          f"grad_norm={model.grad_norm:.2e} iterations={model.iterations}")
    for t in range(config.num_tasks):
        err = empirical_gen_error(model, ensemble, t, config.model_kind)
        q_hat, r_hat = empirical_overlaps(model, ensemble, t)
        print(f"  task {t}: gen_error={err:.6f} q_hat={q_hat:.6f} r_hat={r_hat:.6f}")
    return 0


def cmd_sweep(args) -> int:
    run, config, sweep = load_document(args.config)
    if sweep is None:
        raise SystemExit("the config document has no sweep section")
    _, sweep = _apply_overrides(args, config, sweep)
    rows = run_sweep(sweep)
    print(f"wrote {len(rows)} rows to {Path(sweep.outputs) / 'sweep.csv'}")
    return 0


def cmd_rho_curve(args) -> int:
    _, config, sweep = load_document(args.config)
    config, sweep = _apply_overrides(args, config, sweep)
    if sweep is None or sweep.axis != "rho":
        raise SystemExit("rho-curve needs a sweep section with axis: rho")
    values = run_rho_curve(config, sweep.grid, sweep.outputs,
                           quad_order=sweep.quad_order)
    for rho, R in values:
        print(f"rho={rho:.3f}  R={R:.6f}")
    print(f"wrote {Path(sweep.outputs) / 'rho_curve.csv'}")
    return 0


def cmd_compare(args) -> int:
    _, config, sweep = load_document(args.config)
    _, sweep = _apply_overrides(args, config, sweep)
    if sweep is None:
        raise SystemExit("compare needs a sweep section with axis: T")
    report, gaps, shrinks = compare_formulations(sweep)
    for value, gap in gaps:
        print(f"T={int(value):3d}  |multi-task - separate| = {gap:.6f}")
    print(f"gap shrinks with T: {shrinks}")
    print(f"wrote {report}")
    return 0


def cmd_preset(args) -> int:
    name = args.name
    if name not in PRESETS:
        raise SystemExit(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    ref = resources.files("mtl_asymptotics.bench") / "presets" / f"{name}.yaml"
    with resources.as_file(ref) as path:
        if args.dump:
            sys.stdout.write(Path(path).read_text())
            return 0
        run, config, sweep = load_document(path)
        config, sweep = _apply_overrides(args, config, sweep)
        if run == "sweep":
            rows = run_sweep(sweep)
            print(f"wrote {len(rows)} rows to {Path(sweep.outputs) / 'sweep.csv'}")
        elif run == "rho-curve":
            run_rho_curve(config, sweep.grid, sweep.outputs,
                          quad_order=sweep.quad_order)
            print(f"wrote {Path(sweep.outputs) / 'rho_curve.csv'}")
        else:
            report, _, shrinks = compare_formulations(sweep)
            print(f"wrote {report} (gap shrinks: {shrinks})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtl-asymptotics",
        description="Multi-task learning: empirical training vs asymptotic predictions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", help="solve one deterministic problem")
    _add_common(p)
    p.add_argument("--source", default="auto",
                   choices=("auto", "theorem1", "lemma1", "theorem2", "separate"))
    p.add_argument("--R", type=float, default=None,
                   help="alignment strength for --source separate")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="run one empirical trial")
    _add_common(p)
    p.add_argument("--separate-R", type=float, default=None,
                   help="train the separate formulation at this R instead")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("rho-curve", help="solve R(rho) over a grid")
    _add_common(p)
    p.set_defaults(func=cmd_rho_curve)

    p = sub.add_parser("compare", help="multi-task vs separate formulation")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("preset", help="run a packaged figure preset")
    p.add_argument("name", help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--dump", action="store_true", help="print the preset YAML")
    _add_common(p, config_required=False)
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
