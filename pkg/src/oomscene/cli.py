"""Batch pipeline driver: synthesize, build, select, encode, cluster, train,
predict, evaluate, and ablate — all on manifest files and model bundles.

Every subcommand is deterministic for fixed seeds and inputs; output files
contain no timestamps, so repeat runs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .bundle import (
    ModelBundle,
    PipelineConfig,
    config_from_file,
    config_from_pairs,
    load_bundle,
    save_bundle,
    selection_hash,
    write_descriptor_file,
)
from .descriptor_hard import encode_hard_manifest
from .descriptor_soft import (
    encode_soft_manifest,
    fit_codebook,
    fit_pca,
    training_patch_samples,
)
from .ensemble import predict_batch, train_ensemble
from .errors import CompatibilityError, PipelineError
from .ingest import HARD, DatasetManifest, parse_manifest, write_manifest
from .occurrence import (
    ClassPrior,
    build_occurrence_model,
    build_posterior_model,
    select_objects,
)
from .synth import (
    DomainShift,
    generate,
    hidden_topics,
    planted_spec,
)
from .topics import assign_topics_batch, fit_topics


# ---------------------------------------------------------------- metrics

def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true, int), np.asarray(y_pred, int)):
        if t >= 0:
            cm[t, p] += 1
    return cm


def per_class_accuracy(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Recall per class; NaN where a class has no labeled samples."""
    cm = confusion_matrix(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(support > 0, np.diag(cm) / np.maximum(support, 1), np.nan)


def class_mean_accuracy(y_true, y_pred, n_classes: int) -> float:
    """Average classification accuracy over the classes that have samples."""
    acc = per_class_accuracy(y_true, y_pred, n_classes)
    valid = ~np.isnan(acc)
    if not valid.any():
        return float("nan")
    return float(acc[valid].mean())


# ------------------------------------------------------------- pipeline

def _build_prior(manifest: DatasetManifest, config: PipelineConfig) -> ClassPrior:
    if config.prior == "uniform":
        return ClassPrior.uniform(len(manifest.classes))
    if config.prior == "empirical":
        return ClassPrior.empirical(manifest)
    raise ValueError(f"unknown prior {config.prior!r}")


def encode_with_bundle(bundle: ModelBundle, manifest: DatasetManifest) -> np.ndarray:
    """Encode a manifest with the bundle's frozen components."""
    if bundle.selection is None:
        raise CompatibilityError("bundle has no object selection; run select-objects")
    if manifest.mode != bundle.config.mode:
        raise CompatibilityError(
            f"manifest is {manifest.mode}-mode, bundle expects {bundle.config.mode}"
        )
    if bundle.config.mode == HARD:
        return encode_hard_manifest(manifest, bundle.posterior, bundle.selection,
                                    bundle.layout)
    if bundle.pca is None or bundle.codebook is None:
        raise CompatibilityError("soft-mode bundle is missing PCA or codebook; run train")
    return encode_soft_manifest(
        manifest, bundle.posterior, bundle.selection, bundle.pca, bundle.codebook,
        ssr=bundle.config.vlad_ssr, l2_normalize=bundle.config.vlad_l2,
    )


def _check_compatible(bundle: ModelBundle, manifest: DatasetManifest) -> None:
    if manifest.vocabulary.names != bundle.vocabulary.names:
        raise CompatibilityError("manifest vocabulary differs from the bundle's")
    if manifest.classes.names != bundle.classes.names:
        raise CompatibilityError("manifest classes differ from the bundle's")


def _train_labels(manifest: DatasetManifest) -> np.ndarray:
    labels = manifest.labels()
    if np.any(labels < 0):
        bad = [r.image_id for r in manifest.records if r.scene_class is None]
        raise PipelineError(f"training manifest has unlabeled records: {bad[:3]}...")
    return labels


def fit_pipeline(train: DatasetManifest, config: PipelineConfig,
                 log=lambda msg: None) -> ModelBundle:
    """Run the full training pipeline and return a complete bundle."""
    t0 = time.perf_counter()

    def stage(name, detail=""):
        nonlocal t0
        now = time.perf_counter()
        log(f"[train] {name}: {now - t0:.3f}s{(' (' + detail + ')') if detail else ''}")
        t0 = now

    labels = _train_labels(train)
    occurrence = build_occurrence_model(train, config.threshold_grid())
    stage("occurrence model", f"{occurrence.n_objects} objects x {occurrence.n_classes} classes")
    prior = _build_prior(train, config)
    posterior = build_posterior_model(occurrence, prior, config.fallback)
    stage("posterior model")
    selection = select_objects(posterior, config.object_count, config.phi_aggregation)
    stage("object selection", f"kept {len(selection.selected)}")
    layout = config.pyramid_layout()

    pca = codebook = None
    if config.mode == HARD:
        X = encode_hard_manifest(train, posterior, selection, layout)
    else:
        samples = training_patch_samples(train, posterior, selection)
        pca = fit_pca(samples, config.pca_dim)
        codebook = fit_codebook(pca.project(samples), config.codebook_size, config.seed)
        stage("pca + codebook", f"{samples.shape[0]} patches")
        X = encode_soft_manifest(train, posterior, selection, pca, codebook,
                                 ssr=config.vlad_ssr, l2_normalize=config.vlad_l2)
    stage("encoding", f"{X.shape[0]} descriptors of dim {X.shape[1]}")

    topics = fit_topics(X, config.topic_count, config.seed)
    stage("topic clustering", f"{config.topic_count} topics")
    ens = train_ensemble(X, labels, len(train.classes), topics, config.sgd_grid(),
                         config.folds, config.global_cv)
    stage("ensemble training", f"{ens.n_classes} classes x {ens.n_topics} topics")

    return ModelBundle(
        config=config,
        vocabulary=train.vocabulary,
        classes=train.classes,
        occurrence=occurrence,
        posterior=posterior,
        layout=layout,
        selection=selection,
        pca=pca,
        codebook=codebook,
        topics=topics,
        ensemble=ens,
    )


def evaluate_bundle(bundle: ModelBundle, test: DatasetManifest, pooling="average"):
    """Returns (labels_pred, scores, labels_true)."""
    _check_compatible(bundle, test)
    if bundle.ensemble is None:
        raise CompatibilityError("bundle has no trained ensemble")
    X = encode_with_bundle(bundle, test)
    pred, scores = predict_batch(bundle.ensemble, X, pooling=pooling)
    return pred, scores, test.labels()


# ------------------------------------------------------------ csv output

def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _write_predictions(path, manifest, pred, scores):
    header = ["image_id", "predicted_class"] + [f"score_{n}" for n in manifest.classes.names]
    rows = []
    for rec, p, s in zip(manifest.records, pred, scores):
        rows.append([rec.image_id, manifest.classes.names[int(p)]] + [_fmt(v) for v in s])
    _write_csv(path, header, rows)


def _write_metrics(path, manifest, pred, y_true):
    n_cls = len(manifest.classes)
    labeled = y_true >= 0
    rows = []
    if labeled.any():
        acc = per_class_accuracy(y_true, pred, n_cls)
        support = confusion_matrix(y_true, pred, n_cls).sum(axis=1)
        for c, name in enumerate(manifest.classes.names):
            value = "n/a" if np.isnan(acc[c]) else _fmt(acc[c])
            rows.append([name, value, int(support[c])])
        mean = class_mean_accuracy(y_true, pred, n_cls)
        rows.append(["CLASS_MEAN", _fmt(mean), int(labeled.sum())])
    else:
        for name in manifest.classes.names:
            rows.append([name, "n/a", 0])
        rows.append(["CLASS_MEAN", "n/a", 0])
    _write_csv(path, ["class", "accuracy", "support"], rows)
    return rows


def _write_confusion(path, manifest, pred, y_true):
    cm = confusion_matrix(y_true, pred, len(manifest.classes))
    header = ["true\\pred"] + list(manifest.classes.names)
    rows = [[name] + [int(v) for v in cm[i]] for i, name in enumerate(manifest.classes.names)]
    _write_csv(path, header, rows)


# ------------------------------------------------------------- commands

def _config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = config_from_file(args.config, base=cfg)
    if getattr(args, "set", None):
        cfg = config_from_pairs(args.set, base=cfg)
    if getattr(args, "profile", None):
        cfg = cfg.with_profile(args.profile)
    return cfg


def cmd_synth(args) -> int:
    shift = DomainShift(score_offset=args.offset, score_scale=args.scale,
                        dropout=args.dropout)
    spec = planted_spec(args.classes, args.objects, args.topics,
                        args.images_per_class, shift=shift, seed=args.seed)
    source, target = generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(source, out / "source.txt")
    write_manifest(target, out / "target.txt")
    for name, manifest in (("source", source), ("target", target)):
        rows = [
            [rec.image_id, int(t)]
            for rec, t in zip(manifest.records, hidden_topics(manifest))
        ]
        _write_csv(out / f"{name}_topics.csv", ["image_id", "hidden_topic"], rows)
    print(f"wrote {out / 'source.txt'} ({len(source)} records) and "
          f"{out / 'target.txt'} ({len(target)} records)")
    return 0


def cmd_build_oom(args) -> int:
    config = _config_from_args(args)
    train = parse_manifest(args.train, mode=config.mode)
    occurrence = build_occurrence_model(train, config.threshold_grid())
    posterior = build_posterior_model(occurrence, _build_prior(train, config),
                                      config.fallback)
    bundle = ModelBundle(
        config=config,
        vocabulary=train.vocabulary,
        classes=train.classes,
        occurrence=occurrence,
        posterior=posterior,
        layout=config.pyramid_layout(),
    )
    save_bundle(bundle, args.out)
    print(f"wrote {args.out}: occurrence model over {occurrence.n_objects} objects, "
          f"{occurrence.n_classes} classes, {len(occurrence.grid)} thresholds")
    return 0


def cmd_inspect(args) -> int:
    bundle = load_bundle(args.bundle)
    obj = bundle.vocabulary.index(args.object)
    rows = []
    for t, theta in enumerate(bundle.posterior.grid.values):
        for c, cls in enumerate(bundle.classes.names):
            rows.append([f"{theta:.6f}", cls,
                         _fmt(bundle.posterior.posteriors[obj, c, t])])
    _write_csv(args.out, ["theta", "class", "probability"], rows)
    print(f"wrote {args.out}: posterior curves for {args.object!r}")
    return 0


def cmd_select_objects(args) -> int:
    bundle = load_bundle(args.bundle)
    selection = select_objects(bundle.posterior, args.count,
                               bundle.config.phi_aggregation)
    bundle.selection = selection
    # descriptor space changed: everything fitted on it is stale
    bundle.pca = bundle.codebook = bundle.topics = bundle.ensemble = None
    save_bundle(bundle, args.out)
    if args.csv:
        rows = [
            [bundle.vocabulary.names[i], _fmt(selection.scores[i]), rank]
            for rank, i in enumerate(selection.selected)
        ]
        _write_csv(args.csv, ["object", "discriminability", "rank"], rows)
    print(f"wrote {args.out}: selected {len(selection.selected)} objects")
    return 0


def cmd_encode(args) -> int:
    bundle = load_bundle(args.bundle)
    manifest = parse_manifest(args.manifest, mode=bundle.config.mode)
    _check_compatible(bundle, manifest)
    X = encode_with_bundle(bundle, manifest)
    ids = [r.image_id for r in manifest.records]
    if args.format == "csv":
        rows = [[rid] + [repr(float(v)) for v in row] for rid, row in zip(ids, X)]
        _write_csv(args.out, ["image_id"] + [f"d{i}" for i in range(X.shape[1])], rows)
    else:
        write_descriptor_file(args.out, X, ids, bundle.layout,
                              selection_hash(bundle.vocabulary, bundle.selection))
    print(f"wrote {args.out}: {X.shape[0]} descriptors of dim {X.shape[1]}")
    return 0


def cmd_cluster(args) -> int:
    bundle = load_bundle(args.bundle)
    manifest = parse_manifest(args.manifest, mode=bundle.config.mode)
    _check_compatible(bundle, manifest)
    X = encode_with_bundle(bundle, manifest)
    topics = fit_topics(X, args.topics, bundle.config.seed)
    bundle.topics = topics
    bundle.ensemble = None  # stale against new topics
    save_bundle(bundle, args.out)
    if args.csv:
        labels, dists = assign_topics_batch(topics, X)
        rows = [
            [rec.image_id, int(l), _fmt(d)]
            for rec, l, d in zip(manifest.records, labels, dists)
        ]
        _write_csv(args.csv, ["image_id", "topic", "distance"], rows)
    print(f"wrote {args.out}: {args.topics} topics "
          f"(inertia {topics.inertia:.6f}, {topics.iterations_run} iterations)")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    train = parse_manifest(args.train, mode=config.mode)
    bundle = fit_pipeline(train, config, log=print)
    save_bundle(bundle, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_predict(args) -> int:
    bundle = load_bundle(args.bundle)
    manifest = parse_manifest(args.manifest, mode=bundle.config.mode)
    pred, scores, _ = evaluate_bundle(bundle, manifest, pooling=args.pooling)
    _write_predictions(args.out, manifest, pred, scores)
    print(f"wrote {args.out}: {len(pred)} predictions")
    return 0


def cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    test = parse_manifest(args.test, mode=bundle.config.mode)
    pred, scores, y_true = evaluate_bundle(bundle, test, pooling=args.pooling)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    _write_predictions(f"{prefix}_predictions.csv", test, pred, scores)
    rows = _write_metrics(f"{prefix}_metrics.csv", test, pred, y_true)
    _write_confusion(f"{prefix}_confusion.csv", test, pred, y_true)
    mean_row = rows[-1]
    print(f"class-mean accuracy: {mean_row[1]} over {mean_row[2]} labeled images")
    return 0


def cmd_ablate(args) -> int:
    config = _config_from_args(args)
    train = parse_manifest(args.train, mode=config.mode)
    test = parse_manifest(args.test, mode=config.mode)
    labels = _train_labels(train)
    occurrence = build_occurrence_model(train, config.threshold_grid())
    posterior = build_posterior_model(occurrence, _build_prior(train, config),
                                      config.fallback)
    layout = config.pyramid_layout()
    object_counts = args.objects_list or [config.object_count]
    topic_counts = args.topics_list or sorted({1, config.topic_count})
    y_true = test.labels()

    rows = []
    for r in object_counts:
        selection = select_objects(posterior, r, config.phi_aggregation)
        if config.mode == HARD:
            X_tr = encode_hard_manifest(train, posterior, selection, layout)
            X_te = encode_hard_manifest(test, posterior, selection, layout)
        else:
            samples = training_patch_samples(train, posterior, selection)
            pca = fit_pca(samples, config.pca_dim)
            codebook = fit_codebook(pca.project(samples), config.codebook_size,
                                    config.seed)
            X_tr = encode_soft_manifest(train, posterior, selection, pca, codebook,
                                        config.vlad_ssr, config.vlad_l2)
            X_te = encode_soft_manifest(test, posterior, selection, pca, codebook,
                                        config.vlad_ssr, config.vlad_l2)
        for d in topic_counts:
            topics = fit_topics(X_tr, d, config.seed)
            ens = train_ensemble(X_tr, labels, len(train.classes), topics,
                                 config.sgd_grid(), config.folds, config.global_cv)
            for pooling in ("average", "max"):
                pred, _ = predict_batch(ens, X_te, pooling=pooling)
                acc = class_mean_accuracy(y_true, pred, len(test.classes))
                rows.append([r, d, pooling, _fmt(acc)])
                print(f"[ablate] objects={r} topics={d} pooling={pooling}: {_fmt(acc)}")
    _write_csv(args.out, ["objects", "topics", "pooling", "class_mean_accuracy"], rows)
    print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------- parser

def _add_config_args(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--profile", choices=("snapstore", "mit67"),
                   help="published object-count operating point")


def _int_list(text):
    return [int(p) for p in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oomscene",
        description="Scene recognition from object detection scores via "
                    "occurrence statistics, semantic descriptors, and "
                    "latent-topic classifier ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate planted source/target manifests")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--objects", type=int, default=40)
    p.add_argument("--topics", type=int, default=3)
    p.add_argument("--images-per-class", type=int, default=100)
    p.add_argument("--offset", type=float, default=0.15)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-oom", help="build occurrence + posterior models")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_build_oom)

    p = sub.add_parser("inspect", help="dump one object's posterior curves as CSV")
    p.add_argument("--bundle", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("select-objects", help="pick the most discriminant objects")
    p.add_argument("--bundle", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write per-object scores")
    p.set_defaults(func=cmd_select_objects)

    p = sub.add_parser("encode", help="encode a manifest with a bundle's models")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("cluster", help="fit latent topics over encoded descriptors")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write per-image topic assignments")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", help="run the full training pipeline")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict classes for a manifest")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pooling", choices=("average", "max"), default="average")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a bundle on a labeled manifest")
    p.add_argument("--bundle", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--pooling", choices=("average", "max"), default="average")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep object counts, topics, and pooling")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--objects-list", type=_int_list, metavar="R1,R2,...")
    p.add_argument("--topics-list", type=_int_list, metavar="D1,D2,...")
    _add_config_args(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
