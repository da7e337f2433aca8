"""Command-line surface: simulate, run, evaluate, export, serve.

Failures print a machine-readable JSON object to stderr and exit nonzero.
All randomness derives from the run seed via labeled splitting, so repeated
invocations with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import artifact as artifact_io
from . import evaluation, seqdes, service
from .config import ConfigError, RunConfig, load_config
from .domain import TreatmentCondition, load_county_features_csv
from .evaluation import (LearningCurvePoint, TruthTable, factorial_slices,
                         write_assignment_csv, write_factorial_csv,
                         write_learning_curve_csv)
from .simulator import (LinearTruthSimulator, OudSimulator, SimConfig,
                        load_linear_truth_json, load_oud_params_json)
from .util import derive_seed


def _apply_thread_cap() -> None:
    cap = os.environ.get("POLICY_SURROGATE_THREADS", "").strip()
    if not cap:
        return
    try:
        import numba
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
    except (ImportError, ValueError):
        pass


def _build_simulator(cfg: RunConfig):
    if cfg.simulator_kind == "linear":
        return LinearTruthSimulator(load_linear_truth_json(cfg.params_json))
    return OudSimulator(load_oud_params_json(cfg.params_json), cfg.sim)


def _build_truth(cfg: RunConfig, simulator, county_ids) -> TruthTable:
    if cfg.truth == "analytic":
        return TruthTable.from_simulator(simulator, county_ids, cfg.grid)
    return TruthTable.from_holdout(simulator, county_ids, cfg.grid,
                                   cfg.holdout_replicates,
                                   derive_seed(cfg.seed, "holdout"))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.budget is not None:
        overrides["budget"] = args.budget
    if args.out is not None:
        overrides["output_dir"] = Path(args.out)
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if args.noise is not None:
        overrides["noise"] = args.noise
    if args.response is not None:
        overrides["response"] = args.response
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    counties = load_county_features_csv(cfg.county_csv)
    simulator = _build_simulator(cfg)
    truth = _build_truth(cfg, simulator, [c.county_id for c in counties])
    problem = evaluation.WorkflowProblem(
        counties=tuple(counties), grid=cfg.grid, simulator=simulator,
        truth=truth, plan=cfg.plan, budget=cfg.budget,
        replicates_per_step=cfg.replicates_per_step, settings=cfg.settings(),
        acquisition=cfg.acquisition)
    step_fn = seqdes.step if cfg.strategy == "two-stage" else seqdes.exhaustive_step
    state = evaluation.execute(problem, cfg.seed, step_fn=step_fn,
                               plateau_window=cfg.plateau_window,
                               plateau_tol=cfg.plateau_tol)
    out_dir = artifact_io.save_run_artifact(cfg.output_dir, cfg.to_json_dict(),
                                            state, truth)
    final = evaluation.evaluate_state(state, truth)
    print(json.dumps({
        "artifact": str(out_dir),
        "budget_used": state.budget_used,
        "iterations": state.iteration,
        "rel_error": final.rel_error,
        "mse": final.mse,
    }, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    condition = TreatmentCondition(args.n, args.b)
    if args.mode == "linear":
        sim = LinearTruthSimulator(load_linear_truth_json(args.params))
    else:
        sim_cfg = SimConfig(horizon_years=args.horizon,
                            steps_per_year=args.steps_per_year,
                            cohort_size=args.cohort, rng_seed=args.seed)
        sim = OudSimulator(load_oud_params_json(args.params), sim_cfg)
    observations = sim.run(args.county, condition, args.replicates, args.seed)
    for obs in observations:
        print(json.dumps({"county_id": obs.county_id, "n": obs.condition.n,
                          "b": obs.condition.b, "outcome": obs.outcome,
                          "seed": obs.replicate_seed}, sort_keys=True))
    return 0


def _curve_points_from_artifact(art) -> list[LearningCurvePoint]:
    init = art.init_summary
    points = [LearningCurvePoint(init.budget_used, init.rel_error, init.mse)]
    for row in artifact_io.read_history_rows(art.directory):
        if row["rel_error"] == "":
            continue
        points.append(LearningCurvePoint(int(row["budget_used"]),
                                         float(row["rel_error"]),
                                         float(row["mse"])))
    return points


def cmd_evaluate(args) -> int:
    art = artifact_io.load_run_artifact(args.artifact)
    points = _curve_points_from_artifact(art)
    if args.eval_every > 1:
        head, tail = points[:1], points[1:]
        kept = [p for i, p in enumerate(tail) if (i + 1) % args.eval_every == 0]
        if tail and (not kept or kept[-1] is not tail[-1]):
            kept.append(tail[-1])
        points = head + kept
    out_dir = Path(args.out) if args.out else art.directory
    out_dir.mkdir(parents=True, exist_ok=True)
    write_learning_curve_csv(out_dir / "learning_curve.csv", points)
    preds = evaluation.predict_table(art.surrogate, art.counties, art.grid,
                                     art.response_kind)
    final = evaluation.score_table(preds, art.truth)
    print(json.dumps({
        "learning_curve": str(out_dir / "learning_curve.csv"),
        "points": len(points),
        "rel_error": final.rel_error,
        "mse": final.mse,
        "cells": final.n_cells,
        "excluded_zero_truth_cells": final.n_excluded,
    }, sort_keys=True))
    return 0


def cmd_export(args) -> int:
    art = artifact_io.load_run_artifact(args.artifact)
    out_dir = Path(args.out) if args.out else art.directory
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    rows = artifact_io.coefficient_table(art.surrogate, art.counties, art.seed)
    coef_path = out_dir / artifact_io.COEFFICIENTS_FILE
    artifact_io.write_coefficients_csv(coef_path, rows,
                                       art.surrogate.output_names)
    written.append(str(coef_path))

    county_id = args.county or art.county_ids[0]
    slices = factorial_slices(art.truth, county_id, art.grid)
    fact_path = out_dir / "factorial.csv"
    write_factorial_csv(fact_path, slices)
    written.append(str(fact_path))

    if args.summaries:
        doc = json.loads(Path(args.summaries).read_text(encoding="utf-8"))
        summaries = [evaluation.CountySummaryFeatures(county_id=cid, **feats)
                     for cid, feats in doc.items()]
        prototypes = [p for p in (args.prototypes or "").split(",") if p]
        mapping = evaluation.assign_prototypes(summaries, prototypes)
        asg_path = out_dir / "assignment.csv"
        write_assignment_csv(asg_path, mapping)
        written.append(str(asg_path))

    print(json.dumps({"written": written}, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    service.serve(args.artifact, host=args.host, port=args.port,
                  cors_origins=tuple(args.cors_origin))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="policy-surrogate",
        description="Surrogate-driven estimation of county-level treatment "
                    "effects with two-stage sequential design")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full sequential-design experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--budget", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--strategy", choices=["two-stage", "one-stage"])
    p_run.add_argument("--noise", choices=["hetero", "homo"])
    p_run.add_argument("--response", choices=["main", "interaction"])
    p_run.set_defaults(fn=cmd_run)

    p_sim = sub.add_parser("simulate", help="raw replicates for one county-condition")
    p_sim.add_argument("--params", required=True, help="county parameter JSON")
    p_sim.add_argument("--mode", choices=["oud", "linear"], default="oud")
    p_sim.add_argument("--county", required=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--b", type=int, required=True)
    p_sim.add_argument("--replicates", type=int, default=1)
    p_sim.add_argument("--horizon", type=int, default=5)
    p_sim.add_argument("--steps-per-year", type=int, default=12)
    p_sim.add_argument("--cohort", type=int, default=20_000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.set_defaults(fn=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="metrics and learning curve from an artifact")
    p_eval.add_argument("--artifact", required=True)
    p_eval.add_argument("--eval-every", type=int, default=1)
    p_eval.add_argument("--out")
    p_eval.set_defaults(fn=cmd_evaluate)

    p_exp = sub.add_parser("export", help="emit coefficient/factorial/assignment tables")
    p_exp.add_argument("--artifact", required=True)
    p_exp.add_argument("--out")
    p_exp.add_argument("--county")
    p_exp.add_argument("--summaries", help="county trend-summary JSON for matching")
    p_exp.add_argument("--prototypes", help="comma-separated prototype county ids")
    p_exp.set_defaults(fn=cmd_export)

    p_srv = sub.add_parser("serve", help="start the what-if HTTP service")
    p_srv.add_argument("--artifact", required=True)
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8787)
    p_srv.add_argument("--cors-origin", action="append",
                       default=None, help="allowed origin (repeatable)")
    p_srv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "cors_origin", None) is None and args.command == "serve":
        args.cors_origin = ["*"]
    try:
        return args.fn(args)
    except Exception as exc:  # fail with machine-readable context
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
