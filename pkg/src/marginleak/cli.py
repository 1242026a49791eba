"""Command-line interface.

Subcommands: train, verify-kkt, attack reconstruct, attack membership,
check-dist, experiment margin, experiment reconstruct.  Exit codes: 0 on
success, 2 for usage errors and malformed files, 1 for runtime failures.
The MARGINLEAK_OUT_DIR environment variable supplies the default output
directory.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import experiment, kkt, membership, reconstruct, training
from .distributions import (
    DistributionSpec,
    check_assumption,
    read_dataset_csv,
    sample,
    write_dataset_csv,
)
from .errors import FileFormatError, MarginLeakError
from .model import load_network, save_network, to_piecewise_linear

OUT_DIR_ENV = "MARGINLEAK_OUT_DIR"


def _out_dir(args) -> Path:
    raw = getattr(args, "out_dir", None) or os.environ.get(OUT_DIR_ENV) or "."
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--loss", choices=training.LOSS_KINDS, default="exponential")
    p.add_argument("--init-scale", type=float, default=1e-4)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--lr-growth", type=float, default=1.02)
    p.add_argument("--max-steps", type=int, default=4000)
    p.add_argument("--loss-target", type=float, default=1e-5)
    p.add_argument("--kkt-target", type=float, default=5e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--ensure-active-neuron", action="store_true")


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        width=args.width,
        loss_kind=args.loss,
        init_scale=args.init_scale,
        learning_rate=args.learning_rate,
        lr_growth=args.lr_growth,
        max_steps=args.max_steps,
        loss_target=args.loss_target,
        kkt_residual_target=args.kkt_target,
        rng_seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        ensure_active_neuron=args.ensure_active_neuron,
    )


def _cmd_train(args) -> int:
    data = read_dataset_csv(args.data)
    net, trace = training.train(data, _train_config(args))
    out = _out_dir(args)
    model_path = Path(args.out_model) if args.out_model else out / "model.json"
    trace_path = Path(args.out_trace) if args.out_trace else out / "trace.csv"
    save_network(net, model_path)
    training.write_trace_csv(trace, trace_path)
    final = trace.final()
    print(
        f"trained {net.width} neurons for {final.step} steps: "
        f"loss={final.loss:.3e} min_margin={final.min_margin:.4g} "
        f"kkt_residual={final.kkt_residual:.3e} stop={trace.stop_reason}"
    )
    print(f"wrote {model_path} and {trace_path}")
    return 0


def _cmd_verify_kkt(args) -> int:
    net = load_network(args.model)
    data = read_dataset_csv(args.data)
    report = kkt.analyze(net, data, support_slack=args.slack, loss_kind=args.loss)
    out_path = Path(args.out) if args.out else _out_dir(args) / "kkt_report.json"
    kkt.write_report(report, out_path)
    print(
        f"margin={report.margin:.6g} support={len(report.support_indices)}/{data.size} "
        f"stationarity_residual={report.stationarity_residual:.3e}"
    )
    print(f"wrote {out_path}")
    return 0


def _cmd_attack_reconstruct(args) -> int:
    net = load_network(args.model)
    if args.margin is not None:
        m = args.margin
    elif args.data is not None:
        m, _ = kkt.margin(net, read_dataset_csv(args.data))
    else:
        raise FileFormatError("attack reconstruct needs --margin or --data")
    pl = to_piecewise_linear(net)
    candidates = reconstruct.build_candidate_set(pl, m)
    out_path = Path(args.out) if args.out else _out_dir(args) / "candidates.csv"
    reconstruct.write_candidates_csv(candidates, out_path)
    note = " (degenerate: fewer than 3 breakpoints)" if candidates.degenerate else ""
    print(f"margin={m:.6g} candidates={len(candidates)}{note}")
    print(f"wrote {out_path}")
    return 0


def _read_scores_csv(path) -> list[tuple[str, float]]:
    lines = [
        ln for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.startswith("#")
    ]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or header[:2] != ["point_id", "score"]:
        raise FileFormatError("scores file must have header point_id,score")
    out = []
    for row in reader:
        try:
            out.append((row[0], float(row[1])))
        except (IndexError, ValueError) as exc:
            raise FileFormatError(f"bad scores row {row!r}") from exc
    if not out:
        raise FileFormatError("scores file has no rows")
    return out


def _cmd_attack_membership(args) -> int:
    if args.scores is not None:
        scored = _read_scores_csv(args.scores)
    elif args.model is not None and args.points is not None:
        net = load_network(args.model)
        data = read_dataset_csv(args.points)
        values = membership.membership_scores(net, data.points)
        scored = [(f"point-{i}", float(s)) for i, s in enumerate(values)]
    else:
        raise FileFormatError(
            "attack membership needs --scores, or --model with --points"
        )

    if args.rule == "known-margin":
        if args.margin is None:
            raise FileFormatError("known-margin rule needs --margin")
        threshold, comparison = args.margin / 2.0, "ge"
    elif args.rule == "bounded-margin":
        if args.threshold is None:
            raise FileFormatError("bounded-margin rule needs --threshold")
        threshold, comparison = args.threshold, "gt"
    else:  # leaked-points
        alpha = max(s for _, s in scored)
        if alpha == 0.0:
            raise MarginLeakError("all scores are zero; leaked-points rule undefined")
        threshold, comparison = alpha / 2.0, "ge"

    out_path = Path(args.out) if args.out else _out_dir(args) / "verdicts.csv"
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point_id", "score", "verdict", "rule", "threshold"])
        n_members = 0
        for pid, score in scored:
            member = score >= threshold if comparison == "ge" else score > threshold
            n_members += member
            writer.writerow([pid, repr(score), int(member), args.rule, repr(threshold)])
    print(
        f"rule={args.rule} threshold={threshold:.6g} "
        f"members={n_members}/{len(scored)}"
    )
    print(f"wrote {out_path}")
    return 0


def _cmd_check_dist(args) -> int:
    means = tuple(
        tuple(float(tok) for tok in chunk.split(",")) for chunk in (args.mean or [])
    )
    weights = (
        tuple(float(tok) for tok in args.weights.split(",")) if args.weights else ()
    )
    try:
        spec = DistributionSpec(args.kind, args.dim, means, weights, args.seed)
    except ValueError as exc:
        raise FileFormatError(str(exc)) from exc
    batch = sample(spec, args.n)
    report = check_assumption(batch.points)
    doc = dataclasses.asdict(report)
    print(json.dumps(doc, indent=1))
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def _cmd_experiment_margin(args) -> int:
    cfg = experiment.config_from_file(args.config)
    out = Path(args.out_dir) if args.out_dir else (
        cfg.out_dir or _out_dir(argparse.Namespace(out_dir=None))
    )
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = experiment.run_margin_experiment(cfg, log=print)
    meta = (
        f"generated={time.strftime('%Y-%m-%dT%H:%M:%S')} "
        f"wall_time_s={time.perf_counter() - t0:.1f} "
        f"dims={list(cfg.dims)} seeds={list(cfg.seeds)} width={cfg.width} "
        f"n_train={cfg.n_train} n_test={cfg.n_test} slack={cfg.margin_slack} "
        f"train={cfg.train}"
    )
    experiment.write_margin_results_csv(result, out / "results.csv", meta)
    experiment.write_margin_plot_csv(result, out / "plot_margin.csv", meta)
    print(f"wrote {out / 'results.csv'} and {out / 'plot_margin.csv'}")
    return 0


def _cmd_experiment_reconstruct(args) -> int:
    cfg = experiment.config_from_file(args.config, overrides={"dims": (1,)})
    out = Path(args.out_dir) if args.out_dir else (
        cfg.out_dir or _out_dir(argparse.Namespace(out_dir=None))
    )
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    reports = experiment.run_reconstruction_sweep(cfg, log=print)
    meta = (
        f"generated={time.strftime('%Y-%m-%dT%H:%M:%S')} "
        f"wall_time_s={time.perf_counter() - t0:.1f} "
        f"seeds={list(cfg.seeds)} n_train={cfg.n_train} train={cfg.train}"
    )
    experiment.write_reconstruction_csv(reports, out / "recon_results.csv", meta)
    for rep in reports:
        reconstruct.write_candidates_csv(
            rep.candidates, out / f"candidates_seed{rep.seed}.csv"
        )
    print(f"wrote {out / 'recon_results.csv'}")
    return 0


def _cmd_sample_dataset(args) -> int:
    # Convenience for producing CLI inputs: sample a labeled mixture dataset.
    from .distributions import label_by_component, two_gaussian_mixture
    from .model import LabeledDataset

    spec = two_gaussian_mixture(args.dim, args.mean_coord, rng_seed=args.seed)
    batch = sample(spec, args.n)
    data = LabeledDataset(batch.points, label_by_component(batch.components))
    out_path = Path(args.out) if args.out else _out_dir(args) / "dataset.csv"
    write_dataset_csv(data, out_path)
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marginleak",
        description="Margin-level privacy attacks on two-layer ReLU networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network on a dataset CSV")
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.add_argument("--out-model")
    p.add_argument("--out-trace")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("verify-kkt", help="estimate duals and stationarity residual")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--slack", type=float, default=kkt.DEFAULT_SUPPORT_SLACK)
    p.add_argument("--loss", choices=training.LOSS_KINDS, default="logistic")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_verify_kkt)

    attack = sub.add_parser("attack", help="run a privacy attack")
    attack_sub = attack.add_subparsers(dest="attack_kind", required=True)

    p = attack_sub.add_parser("reconstruct", help="univariate candidate-set attack")
    p.add_argument("--model", required=True)
    p.add_argument("--margin", type=float)
    p.add_argument("--data", help="derive the margin from this dataset instead")
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_attack_reconstruct)

    p = attack_sub.add_parser("membership", help="threshold |Phi(x)| verdicts")
    p.add_argument("--rule", choices=membership.RULES, required=True)
    p.add_argument("--model")
    p.add_argument("--points", help="dataset CSV of query points")
    p.add_argument("--scores", help="CSV point_id,score of precomputed scores")
    p.add_argument("--margin", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_attack_membership)

    p = sub.add_parser("check-dist", help="near-orthogonality report for a sampler")
    p.add_argument("--kind", choices=("uniform-sphere", "gaussian", "gaussian-mixture"),
                   required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean", action="append",
                   help="comma-separated mean vector; repeat for mixtures")
    p.add_argument("--weights", help="comma-separated mixture weights")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_check_dist)

    p = sub.add_parser("sample-dataset", help="write a labeled two-Gaussian dataset")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mean-coord", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_sample_dataset)

    exp = sub.add_parser("experiment", help="run a configured sweep")
    exp_sub = exp.add_subparsers(dest="experiment_kind", required=True)

    p = exp_sub.add_parser("margin", help="margin-fraction sweep over dimensions")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_experiment_margin)

    p = exp_sub.add_parser("reconstruct", help="univariate reconstruction sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_experiment_reconstruct)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MarginLeakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
