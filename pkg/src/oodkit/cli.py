"""Command-line surface: split, fit, score, eval, sweep, toy-train, report.

Every command is deterministic given its inputs and --seed (default
2019), writes complete artifacts or exits nonzero, and never touches its
input files. The OODKIT_THREADS environment variable caps internal
worker counts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import contrastive, evaluation, lof, ssd, synthetic
from .embeddings import load_embeddings
from .errors import OodkitError, ParameterError
from .manifest import SubsetFilter, load_manifest, save_manifest, filter_indices
from .splitting import stratified_group_split

DEFAULT_SEED = 2019


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(part for part in text.split(",") if part)


def _ratios(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {text!r}") from None


def _epsilon(text: str):
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"epsilon must be a number or 'auto', got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None


def _check_outputs_distinct(inputs, outputs) -> None:
    resolved_in = {Path(p).resolve() for p in inputs if p}
    for out in outputs:
        if out and Path(out).resolve() in resolved_in:
            raise ParameterError(f"refusing to overwrite input file {out}")


def _filter_args(parser: argparse.ArgumentParser, prefix: str, default_split: str | None) -> None:
    dash = f"--{prefix}-" if prefix else "--"
    parser.add_argument(f"{dash}classes", type=_csv_list, default=(),
                        help="comma-separated class labels (empty = no restriction)")
    parser.add_argument(f"{dash}sources", type=_csv_list, default=(),
                        help="comma-separated source sites (empty = no restriction)")
    parser.add_argument(f"{dash}split", default=default_split,
                        help="split name, or 'any' for no restriction")


def _filter_from(args, prefix: str) -> SubsetFilter:
    attr = (prefix + "_") if prefix else ""
    split = getattr(args, f"{attr}split")
    if split in ("any", "", None):
        split = None
    return SubsetFilter.make(
        getattr(args, f"{attr}classes"), getattr(args, f"{attr}sources"), split
    )


def _load_detector_model(path: str):
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == lof.MODEL_MAGIC:
        return lof.load_lof_model(path)
    if magic == ssd.STATS_MAGIC:
        return ssd.load_gaussian_stats(path)
    raise ParameterError(f"{path}: unrecognized model container (magic {magic!r})")


def cmd_split(args) -> int:
    _check_outputs_distinct([args.manifest], [args.out])
    manifest = load_manifest(args.manifest)
    assignment = stratified_group_split(manifest, args.ratios, args.seed)
    save_manifest(manifest.with_splits(assignment.assignment), args.out)
    for warning in assignment.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print("stratum (class, source): train/val/test groups")
    for key in sorted(assignment.stratum_group_counts):
        counts = assignment.stratum_group_counts[key]
        print(f"  {key[0]},{key[1]}: {counts[0]}/{counts[1]}/{counts[2]}")
    print(f"wrote {args.out}")
    return 0


def cmd_fit(args) -> int:
    _check_outputs_distinct([args.embeddings, args.manifest], [args.out])
    embeddings = load_embeddings(args.embeddings)
    manifest = load_manifest(args.manifest)
    flt = _filter_from(args, "")
    idx = filter_indices(manifest, flt.classes, flt.sources, flt.split)
    from .embeddings import EmbeddingMatrix

    train = EmbeddingMatrix(embeddings.data[idx], normalized=embeddings.normalized)
    if args.detector == "lof":
        model = lof.fit_lof(train, args.k, args.metric)
        lof.save_lof_model(model, args.out)
        print(f"fit lof (K={args.k}, metric={args.metric}) on {train.n} samples -> {args.out}")
    else:
        stats = ssd.fit_gaussian(train, args.epsilon)
        ssd.save_gaussian_stats(stats, args.out)
        print(f"fit ssd (epsilon={stats.epsilon!r}) on {train.n} samples -> {args.out}")
    return 0


def cmd_score(args) -> int:
    _check_outputs_distinct([args.model, args.embeddings, args.manifest], [args.out])
    model = _load_detector_model(args.model)
    embeddings = load_embeddings(args.embeddings)
    manifest = load_manifest(args.manifest)
    flt = _filter_from(args, "")
    idx = filter_indices(manifest, flt.classes, flt.sources, flt.split)
    rows = embeddings.data[idx]
    if isinstance(model, lof.LofModel):
        scores = lof.lof_score_batch(rows, model)
    else:
        scores = ssd.mahalanobis_score_batch(rows, model)
    ids = manifest.sample_ids()
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("sample_id,score\n")
        for i, score in zip(idx, scores):
            fh.write(f"{ids[i]},{float(score)!r}\n")
    print(f"scored {len(idx)} samples -> {args.out}")
    return 0


def _eval_config(args, detector_spec) -> evaluation.ExperimentConfig:
    return evaluation.ExperimentConfig(
        name=args.name,
        detector=detector_spec,
        fit_filter=_filter_from(args, "fit"),
        id_filter=_filter_from(args, "id"),
        ood_filter=_filter_from(args, "ood"),
        embeddings_path=str(args.embeddings),
        manifest_path=str(args.manifest),
    )


def cmd_eval(args) -> int:
    _check_outputs_distinct([args.model, args.embeddings, args.manifest], [args.out])
    model = _load_detector_model(args.model)
    embeddings = load_embeddings(args.embeddings)
    manifest = load_manifest(args.manifest)
    if isinstance(model, lof.LofModel):
        spec = evaluation.DetectorSpec(kind="lof", k=model.k, metric=model.metric)
        config = _eval_config(args, spec)
        report = evaluation.evaluate_lof_model(model, manifest, embeddings, config)
    else:
        spec = evaluation.DetectorSpec(kind="ssd", epsilon=model.epsilon)
        config = _eval_config(args, spec)
        report = evaluation.evaluate_gaussian_stats(model, manifest, embeddings, config)
    evaluation.write_report(report, args.out)
    print(f"auroc {report.auroc!r} (n_id={report.n_id}, n_ood={report.n_ood}) -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    _check_outputs_distinct([args.embeddings, args.manifest], [args.csv])
    embeddings = load_embeddings(args.embeddings)
    manifest = load_manifest(args.manifest)
    spec = evaluation.DetectorSpec(kind="lof", k=args.ks[0], metric=args.metric)
    base = _eval_config(args, spec)
    reports = evaluation.k_sweep(base, args.ks, manifest, embeddings)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, report in zip(args.ks, reports):
        evaluation.write_report(report, out_dir / f"{args.name}_k{k}.json")
        print(f"K = {k}: auroc {report.auroc!r}")
    if args.csv:
        evaluation.write_reports_table([r.to_dict() for r in reports], args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_toy_train(args) -> int:
    _check_outputs_distinct([args.samples], [args.out_params, args.out_curve])
    if args.samples:
        samples = np.loadtxt(args.samples, delimiter=",", ndmin=2)
    else:
        id_points, _ = synthetic.make_two_cluster_data(seed=args.seed)
        samples = id_points
    params = contrastive.ToyEncoderParams.initialize(
        samples.shape[1], args.hidden, args.embed_dim, seed=args.seed
    )
    result = contrastive.train_toy_encoder(
        samples,
        noise_scale=args.noise_scale,
        params=params,
        lr=args.lr,
        epochs=args.epochs,
        batch_n=args.batch_n,
        tau=args.tau,
        seed=args.seed,
    )
    contrastive.save_encoder_params(result.params, args.out_params)
    if args.out_curve:
        contrastive.write_training_curve(args.out_curve, result.epoch_losses)
    print(
        f"trained {args.epochs} epochs: first loss {result.epoch_losses[0]:.4f}, "
        f"last loss {result.epoch_losses[-1]:.4f} -> {args.out_params}"
    )
    return 0


def cmd_report(args) -> int:
    _check_outputs_distinct(args.inputs, [args.out])
    dicts = [evaluation.load_report(p) for p in args.inputs]
    evaluation.write_reports_table(dicts, args.out)
    print(f"aggregated {len(dicts)} report(s) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodkit",
        description="Unsupervised OOD scoring over embeddings: detectors, splits, and AUROC protocols.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="assign leakage-free stratified splits to a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", type=_ratios, default=(0.8, 0.05, 0.15),
                   help="train,val,test ratios (default 0.8,0.05,0.15)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="fit a detector on a filtered selection")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--detector", choices=("lof", "ssd"), required=True)
    p.add_argument("--k", type=_positive_int, default=10, help="LOF neighborhood size")
    p.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    p.add_argument("--epsilon", type=_epsilon, default=None,
                   help="ssd covariance regularization; 'auto' = 1e-3*trace/d (default)")
    _filter_args(p, "", "train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score a filtered selection with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    _filter_args(p, "", None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="score ID and OOD selections and report AUROC")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--name", default="experiment")
    _filter_args(p, "fit", "train")
    _filter_args(p, "id", "test")
    _filter_args(p, "ood", None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="fit and evaluate LOF across a list of K values")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ks", type=_int_list, required=True, help="comma-separated K values")
    p.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    p.add_argument("--name", default="sweep")
    _filter_args(p, "fit", "train")
    _filter_args(p, "id", "test")
    _filter_args(p, "ood", None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--csv", default=None, help="optional aggregate CSV table path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("toy-train", help="train the toy contrastive encoder")
    p.add_argument("--samples", default=None,
                   help="CSV of input vectors; omitted = built-in two-cluster data")
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--batch-n", type=_positive_int, default=32)
    p.add_argument("--tau", type=float, default=contrastive.DEFAULT_TEMPERATURE)
    p.add_argument("--hidden", type=_positive_int, default=16)
    p.add_argument("--embed-dim", type=_positive_int, default=8)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-params", required=True)
    p.add_argument("--out-curve", default=None)
    p.set_defaults(func=cmd_toy_train)

    p = sub.add_parser("report", help="aggregate evaluation reports into a CSV table")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OodkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
