"""Command-line entry points.

Subcommands: ``generate``, ``train``, ``eval``, ``solve``, ``trace``, and the
``analyze`` family.  Every command takes ``--seed`` where randomness is
involved and is reproducible under it.  Invalid inputs exit nonzero with a
single machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .errors import GeoCspError
from .generator import generate_dataset
from .inference import (
    InferenceConfig,
    oracle_dataset,
    run_dataset,
)
from .model import build_batch_graph
from .numerics import pca
from .persistence import (
    format_float,
    generator_config,
    inference_config,
    load_checkpoint,
    load_config,
    problem_from_record,
    read_dataset,
    save_checkpoint,
    train_config,
    write_dataset,
    write_metrics_csv,
    write_stats,
    write_trace_jsonl,
)
from .solver import emit_solver_log, solve
from .training import evaluate_predictions, train


def _load_problem(path: str):
    return problem_from_record(json.loads(Path(path).read_text()))


def _eval_report_payload(report) -> dict:
    return {
        "point_accuracy": report.point_accuracy,
        "complete_accuracy": report.complete_accuracy,
        "n_problems": report.n_problems,
        "n_points": report.n_points,
        "depth_success": {str(k): list(v) for k, v in report.depth_success.items()},
        "count_success": {str(k): list(v) for k, v in report.count_success.items()},
        "error_histogram": {str(k): v for k, v in report.error_histogram.items()},
    }


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> None:
    cfg = generator_config(
        load_config(args.config)["generator"],
        {
            "seed": args.seed,
            "grid_side": args.grid_side,
            "preset": args.preset,
        },
    )
    problems, stats = generate_dataset(cfg, args.count)
    write_dataset(problems, args.out, seed=cfg.seed)
    if args.stats:
        write_stats(stats, args.stats)
    if args.verify:
        read_dataset(args.out, verify=True)
    print(f"wrote {len(problems)} problems to {args.out}")


def cmd_train(args) -> None:
    config = load_config(args.config)
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "dim": args.dim,
        "cell": args.cell,
        "init_mode": args.init,
        "grid_side": args.grid_side,
    }
    cfg = train_config(config["train"], overrides)
    problems = read_dataset(args.data)
    if args.grid_side is None:
        cfg = dataclasses.replace(cfg, grid_side=problems[0].grid_side)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(problems, cfg)
    meta = {
        "ema": True,
        "epoch": result.report.rows[-1].epoch if result.report.rows else 0,
        "best_val_point_acc": result.report.best_val_point_acc,
        "best_val_complete_acc": result.report.best_val_complete_acc,
        "epochs_to_target": result.report.epochs_to_target,
        "target_accuracy": result.report.target_accuracy,
        "init_mode": cfg.init_mode,
        "cell": cfg.cell,
        "seed": cfg.seed,
    }
    with_params = result.params
    with_params.load_arrays(result.best_ema_arrays)
    save_checkpoint(out_dir / "best_ema.ckpt", with_params, training_meta=meta)
    with_params.load_arrays(result.ema_arrays)
    save_checkpoint(out_dir / "final_ema.ckpt", with_params, training_meta={**meta, "best": False})
    write_metrics_csv(result.report.rows, out_dir / "metrics.csv")
    (out_dir / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"checkpoints and metrics written to {out_dir}")


def cmd_eval(args) -> None:
    params, _ = load_checkpoint(args.ckpt)
    problems = read_dataset(args.data)
    cfg = InferenceConfig(
        iterations=args.iters, resamples=args.resamples, seed=args.seed, batch_size=args.batch_size
    )
    if args.best_oracle:
        preds = oracle_dataset(problems, params, cfg)
    else:
        preds = run_dataset(problems, params, cfg)
    report = evaluate_predictions(problems, preds)
    _write_json(_eval_report_payload(report), args.out)


def cmd_solve(args) -> None:
    problem = _load_problem(args.problem)
    if args.cot:
        text = emit_solver_log(problem)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return
    assignment, info = solve(problem)
    payload = {
        "assignment": {v: list(p) for v, p in assignment.items()},
        "point_depth": info.point_depth,
        "max_depth": info.max_depth,
    }
    _write_json(payload, args.out)


def cmd_trace(args) -> None:
    params, _ = load_checkpoint(args.ckpt)
    problem = _load_problem(args.problem)
    cfg = InferenceConfig(iterations=args.iters, resamples=1, trace=True, seed=args.seed)
    pred = run_dataset([problem], params, cfg)[0]
    write_trace_jsonl(pred.trace, args.out)
    print(f"trace with {len(pred.trace.decoded_points)} records written to {args.out}")


def _collect_probe_dataset(params, problems, iters, seed, target):
    cfg = InferenceConfig(iterations=iters, resamples=1, trace=True, seed=seed, batch_size=64)
    states, labels = [], []
    kind_index = {"M": 0, "R": 1, "S": 2, "T": 3}
    for start in range(0, len(problems), cfg.batch_size):
        batch = problems[start : start + cfg.batch_size]
        graph = build_batch_graph(batch, require_labels=False)
        from .inference import problem_stream
        from .model import forward, init_state

        rngs = [problem_stream(seed, start + i, 0) for i in range(len(batch))]
        out = forward(
            graph, params, init_state(graph, params.dim, rngs), iters,
            record_trace=True, record_constraint_states=True,
        )
        for t in range(1, iters + 1):
            z_t = out.trace_constraint_hidden[t]
            decode_t = out.trace_decodes[t]
            for row, (pi, ci) in enumerate(graph.constraint_meta):
                problem = batch[pi]
                constraint = problem.constraints[ci]
                if target == "kind":
                    labels.append(kind_index[constraint.kind])
                elif target == "iteration":
                    labels.append(t - 1)
                else:  # satisfied
                    lo, hi = graph.unknown_slices[pi]
                    decoded = {
                        v: (int(k) % problem.grid_side, int(k) // problem.grid_side)
                        for v, k in zip(problem.unknowns, decode_t[lo:hi])
                    }
                    from .geometry import check_constraint

                    assignment = {**problem.fixed, **decoded}
                    labels.append(int(check_constraint(constraint, assignment)))
                states.append(z_t[row])
    return np.asarray(states), np.asarray(labels)


def cmd_analyze(args) -> None:
    mode = args.mode
    if mode in ("failure", "manhattan"):
        params, _ = load_checkpoint(args.ckpt)
        problems = read_dataset(args.data)
        cfg = InferenceConfig(iterations=args.iters, resamples=args.resamples, seed=args.seed)
        preds = run_dataset(problems, params, cfg)
        if mode == "failure":
            breakdown = analysis.failure_analysis(problems, preds)
            payload = {
                "depth_success": {str(k): list(v) for k, v in breakdown.depth_success.items()},
                "count_success": {str(k): list(v) for k, v in breakdown.count_success.items()},
            }
            _write_json(payload, args.out)
        else:
            hist = analysis.manhattan_histogram(analysis.prediction_errors(problems, preds))
            _write_json({str(k): v for k, v in hist.items()}, args.out)
    elif mode == "pca":
        params, _ = load_checkpoint(args.ckpt)
        coords, ratios = pca(params.w.data, args.components)
        ids = list(range(len(coords)))
        analysis.export_embeddings(coords, ids, args.out)
        print(f"explained variance ratios: {[round(float(r), 6) for r in ratios]}")
    elif mode == "curvature":
        params, _ = load_checkpoint(args.ckpt)
        coords, _ = pca(params.w.data, 3)
        kappas, mean = analysis.curvature(coords, k=args.k_neighbors)
        _write_json({"mean_curvature": mean, "per_point": [float(k) for k in kappas]}, args.out)
    elif mode == "2dness":
        params, _ = load_checkpoint(args.ckpt)
        value = analysis.local_2dness(params.w.data, params.grid_side)
        _write_json({"local_2dness": value}, args.out)
    elif mode == "projmetrics":
        problem = _load_problem(args.problem)
        from .persistence import read_trace_jsonl

        records = read_trace_jsonl(args.trace)
        rows = []
        for record in records:
            coords = {v: tuple(map(float, p)) for v, p in record["points"].items()}
            coords.update({v: (float(p[0]), float(p[1])) for v, p in problem.fixed.items()})
            metrics = analysis.projection_metrics(coords, list(problem.constraints))
            rows.append((record["iteration"], metrics.scores))
        with Path(args.out).open("w") as fh:
            fh.write("iteration," + ",".join(analysis.METRIC_NAMES) + "\n")
            for iteration, scores in rows:
                values = ",".join(format_float(scores[m]) for m in analysis.METRIC_NAMES)
                fh.write(f"{iteration},{values}\n")
        print(f"wrote {len(rows)} metric rows to {args.out}")
    elif mode == "probe":
        params, _ = load_checkpoint(args.ckpt)
        problems = read_dataset(args.data)
        states, labels = _collect_probe_dataset(params, problems, args.iters, args.seed, args.target)
        _, report = analysis.train_probe(
            states,
            labels,
            balance=args.target == "satisfied",
            ordinal_tolerance=args.target == "iteration",
            seed=args.seed,
        )
        payload = {
            "target": args.target,
            "accuracy": report.accuracy,
            "balanced_accuracy": report.balanced_accuracy,
            "per_class": {str(k): v for k, v in report.per_class.items()},
            "within_1": report.within_1,
            "within_2": report.within_2,
            "train_size": report.train_size,
            "test_size": report.test_size,
        }
        _write_json(payload, args.out)
    elif mode == "coordprobe":
        params, _ = load_checkpoint(args.ckpt)
        r2x, r2y = analysis.coord_probe(params.w.data, params.grid_side, seed=args.seed)
        _write_json({"r2_x": r2x, "r2_y": r2y}, args.out)
    elif mode == "export":
        params, _ = load_checkpoint(args.ckpt)
        if args.problem:
            problem = _load_problem(args.problem)
            graph = build_batch_graph([problem], require_labels=False)
            from .inference import problem_stream
            from .model import forward, init_state

            out = forward(
                graph,
                params,
                init_state(graph, params.dim, [problem_stream(args.seed, 0, 0)]),
                args.iters,
                record_unknown_states=True,
            )
            ids = [
                (v, t)
                for t in range(len(out.trace_unknown_hidden))
                for v in problem.unknowns
            ]
            vectors = np.concatenate(out.trace_unknown_hidden, axis=0)
            analysis.export_embeddings(vectors, ids, args.out)
        else:
            ids = list(range(params.w.data.shape[0]))
            analysis.export_embeddings(params.w.data, ids, args.out)
        print(f"embeddings written to {args.out}")
    else:  # pragma: no cover - argparse restricts choices
        raise GeoCspError(f"unknown analyze mode {mode!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geocsp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a dataset of solvable problems")
    p.add_argument("--config")
    p.add_argument("--preset", choices=["training", "test", "desk-training", "desk-test"])
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-side", type=int, dest="grid_side")
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the message-passing model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--cell", choices=["lstm", "rnn"])
    p.add_argument("--init", choices=["random", "grid"])
    p.add_argument("--grid-side", type=int, dest="grid_side")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--resamples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=256, dest="batch_size")
    p.add_argument("--best-oracle", action="store_true", dest="best_oracle")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="solve one problem exactly")
    p.add_argument("--problem", required=True)
    p.add_argument("--cot", action="store_true", help="emit the solver log instead of JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("trace", help="record per-iteration predictions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("analyze", help="post-hoc analyses")
    p.add_argument(
        "mode",
        choices=[
            "failure",
            "manhattan",
            "pca",
            "curvature",
            "2dness",
            "projmetrics",
            "probe",
            "coordprobe",
            "export",
        ],
    )
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--problem")
    p.add_argument("--trace")
    p.add_argument("--out")
    p.add_argument("--iters", type=int, default=15)
    p.add_argument("--resamples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--k-neighbors", type=int, default=8, dest="k_neighbors")
    p.add_argument("--target", choices=["kind", "satisfied", "iteration"], default="kind")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (GeoCspError, OSError, ValueError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(payload) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
