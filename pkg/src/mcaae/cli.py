"""Command-line pipeline: train, fit-classifier, analyze-attractors, eval,
decide.

Every subcommand reads one flat config file, derives all randomness from
the single seed, and writes a deterministic artifact set (plus the
resolved config) into --out. Exit codes: 0 success, 2 bad config or
input, 3 numeric failure during training or evaluation.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import autoencoder as ae_mod
from . import data as data_mod
from . import dynamics, mca, metrics
from .config import RunConfig, load_config, write_resolved_config
from .errors import McaaeError, TrainingError, ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

# fixed sub-seed tags so each pipeline stage gets an independent stream
_TAG_TRAIN_DATA = 0
_TAG_MODEL_INIT = 1
_TAG_TRAIN_LOOP = 2
_TAG_CLASSIFIER = 3
_TAG_TEST_DATA = 4
_TAG_EVAL_IN = 300
_TAG_OOD_DATA = 100  # + dataset index
_TAG_EVAL_OUT = 301  # + dataset index
_TAG_PAIRING = 200  # + dataset index
_TAG_BASIN = 400


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, *tags)))


def _stage_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence((seed, *tags)).generate_state(1, dtype=np.uint64)[0])


def _load_file_dataset(cfg: RunConfig) -> data_mod.ImageDataset:
    if cfg.dataset_kind == "idx":
        ds = data_mod.load_idx(cfg.dataset_images_path, cfg.dataset_labels_path)
    else:
        ds = data_mod.load_image_dir(cfg.dataset_dir)
    return data_mod.preprocess_dataset(ds, cfg.dataset_image_size)


def build_train_dataset(cfg: RunConfig) -> data_mod.ImageDataset:
    rng = _rng(cfg.seed, _TAG_TRAIN_DATA)
    if cfg.dataset_kind == "synthetic":
        return data_mod.synth_generate(
            cfg.dataset_synth_kind, cfg.dataset_n_per_class, cfg.dataset_image_size, rng
        )
    full = _load_file_dataset(cfg)
    return data_mod.subsample_per_class(full, cfg.dataset_n_per_class, rng)


def build_test_dataset(cfg: RunConfig) -> data_mod.ImageDataset:
    """Held-out in-distribution samples: fresh draws for synthetic data,
    the complement of the training subsample for file-backed data."""
    if cfg.dataset_kind == "synthetic":
        return data_mod.synth_generate(
            cfg.dataset_synth_kind,
            cfg.dataset_test_n_per_class,
            cfg.dataset_image_size,
            _rng(cfg.seed, _TAG_TEST_DATA),
        )
    full = _load_file_dataset(cfg)
    train_idx = data_mod.subsample_indices_per_class(
        full.labels, cfg.dataset_n_per_class, _rng(cfg.seed, _TAG_TRAIN_DATA)
    )
    pool = np.setdiff1d(np.arange(len(full)), train_idx)
    held_out = full.subset(pool, name=f"{full.name}-test")
    return data_mod.subsample_per_class(
        held_out, cfg.dataset_test_n_per_class, _rng(cfg.seed, _TAG_TEST_DATA)
    )


def build_ood_dataset(cfg: RunConfig, spec: str, index: int) -> data_mod.ImageDataset:
    """OOD spec: a synthetic kind name, 'idx:IMAGES:LABELS' or 'dir:PATH'."""
    if spec.startswith("idx:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValidationError(f"bad OOD spec {spec!r}, want idx:IMAGES:LABELS")
        ds = data_mod.load_idx(parts[1], parts[2])
        return data_mod.preprocess_dataset(ds, cfg.dataset_image_size)
    if spec.startswith("dir:"):
        ds = data_mod.load_image_dir(spec[4:])
        return data_mod.preprocess_dataset(ds, cfg.dataset_image_size)
    return data_mod.synth_generate(
        spec,
        cfg.dataset_test_n_per_class,
        cfg.dataset_image_size,
        _rng(cfg.seed, _TAG_OOD_DATA + index),
    )


def _write_loss_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, f"{loss:.17g}"])


def _finish(out_dir: Path, cfg: RunConfig) -> int:
    write_resolved_config(out_dir / "config.resolved", cfg)
    return EXIT_OK


# --------------------------------------------------------------------------
# Subcommands


def cmd_train(cfg: RunConfig, out_dir: Path) -> int:
    ds = build_train_dataset(cfg)
    model = ae_mod.build_autoencoder(
        cfg.dataset_image_size**2,
        _rng(cfg.seed, _TAG_MODEL_INIT),
        hidden_widths=cfg.model_hidden_widths,
        latent_dim=cfg.model_latent_dim,
    )
    train_cfg = ae_mod.TrainConfig(
        epochs=cfg.train_epochs,
        batch_size=cfg.train_batch_size,
        learning_rate=cfg.train_learning_rate,
        keep_prob=cfg.train_keep_prob,
        seed=_stage_seed(cfg.seed, _TAG_TRAIN_LOOP),
    )
    aug_cfg = ae_mod.AugmentationConfig(
        cfg.augment_blur_sigma,
        cfg.augment_noise_std,
        cfg.augment_brightness,
        cfg.augment_contrast,
    )
    history = ae_mod.train(model, ds.images, train_cfg, aug_cfg)
    ae_mod.save_autoencoder(out_dir, model)
    _write_loss_csv(out_dir / "loss.csv", history)
    data_mod.write_manifest(out_dir / "dataset.manifest", ds)
    return _finish(out_dir, cfg)


def cmd_fit_classifier(cfg: RunConfig, out_dir: Path, ae_dir: Path) -> int:
    model = ae_mod.load_autoencoder(ae_dir)
    ds = build_train_dataset(cfg)
    train_cfg = ae_mod.TrainConfig(
        epochs=cfg.classifier_epochs,
        batch_size=cfg.train_batch_size,
        learning_rate=cfg.train_learning_rate,
        keep_prob=cfg.train_keep_prob,
        seed=0,
    )
    clf, history = mca.train_classifier(
        model,
        ds.images,
        ds.labels,
        cfg.infer_n_recursions,
        train_cfg,
        _rng(cfg.seed, _TAG_CLASSIFIER),
    )
    mca.save_classifier(out_dir / "classifier.mcae", clf)
    _write_loss_csv(out_dir / "classifier_loss.csv", history)
    return _finish(out_dir, cfg)


def cmd_analyze_attractors(cfg: RunConfig, out_dir: Path, ae_dir: Path) -> int:
    model = ae_mod.load_autoencoder(ae_dir)
    ds = build_train_dataset(cfg)
    n = len(ds) if cfg.analyze_max_samples == 0 else min(len(ds), cfg.analyze_max_samples)
    shape = ds.image_shape

    with open(out_dir / "attractors.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "sample_id",
                "label",
                "residual",
                "orbit_final_residual",
                "spectral_radius",
                "spectral_converged",
                "basin_fraction",
            ]
        )
        for i in range(n):
            x = ds.images[i].reshape(-1)
            report = dynamics.fixed_point_residual(model, x)
            orbit = dynamics.iterate(model, x, None, cfg.analyze_orbit_k)
            spectral = dynamics.jacobian_spectral_radius(model, x)
            basin = dynamics.basin_probe(
                model,
                x,
                None,
                cfg.analyze_basin_radius,
                cfg.analyze_basin_trials,
                cfg.analyze_orbit_k,
                _rng(cfg.seed, _TAG_BASIN, i),
            )
            writer.writerow(
                [
                    i,
                    int(ds.labels[i]),
                    f"{report.residual:.17g}",
                    f"{orbit.residuals[-1]:.17g}" if orbit.residuals else "0",
                    f"{spectral.radius_estimate:.17g}",
                    int(spectral.converged),
                    f"{basin:.17g}",
                ]
            )
            if i < cfg.analyze_strips:
                dynamics.write_orbit_strip(out_dir / f"orbit_{i}.pgm", orbit, shape)
                dynamics.write_orbit_csv(out_dir / f"orbit_{i}.csv", orbit)
    return _finish(out_dir, cfg)


def _entropies_for(cfg, model, clf, images, seed_tag) -> mca.McaBatchResult:
    return mca.mca_predict_dataset(
        model,
        clf,
        images,
        cfg.infer_m_inferences,
        cfg.infer_n_recursions,
        cfg.train_keep_prob,
        _stage_seed(cfg.seed, seed_tag),
    )


def cmd_eval(cfg: RunConfig, out_dir: Path, ae_dir: Path, clf_path: Path) -> int:
    model = ae_mod.load_autoencoder(ae_dir)
    clf = mca.load_classifier(clf_path)
    d_in = build_test_dataset(cfg)
    in_result = _entropies_for(cfg, model, clf, d_in.images, _TAG_EVAL_IN)

    rows = []
    entropy_dump = []
    out_entropy_sets: dict[str, np.ndarray] = {}
    for i, label in enumerate(d_in.labels):
        entropy_dump.append(
            (d_in.name, i, in_result.entropies[i], int(label), int(in_result.predicted_labels[i]))
        )

    if cfg.eval_ood:
        for i, spec in enumerate(cfg.eval_ood):
            d_out = build_ood_dataset(cfg, spec, i)
            pairing = data_mod.make_ood_pairing(
                d_in, d_out, cfg.eval_target_total, _rng(cfg.seed, _TAG_PAIRING + i)
            )
            out_result = _entropies_for(
                cfg, model, clf, pairing.out_samples.images, _TAG_EVAL_OUT + i
            )
            neg = in_result.entropies[pairing.in_indices]
            rows.append(metrics.metric_row(d_in.name, d_out.name, out_result.entropies, neg))
            out_entropy_sets[d_out.name] = out_result.entropies
            for j, label in enumerate(pairing.out_samples.labels):
                entropy_dump.append(
                    (
                        d_out.name,
                        int(pairing.out_indices[j]),
                        out_result.entropies[j],
                        int(label),
                        int(out_result.predicted_labels[j]),
                    )
                )
    else:
        # uncertainty mode: positives are the misclassified in-dist samples
        wrong = in_result.predicted_labels != d_in.labels
        if not wrong.any() or wrong.all():
            raise TrainingError(
                "uncertainty mode needs both correct and incorrect predictions"
            )
        rows.append(
            metrics.metric_row(
                d_in.name, d_in.name, in_result.entropies[wrong], in_result.entropies[~wrong]
            )
        )

    hists = metrics.EntropyHistogramSet(in_result.entropies, out_entropy_sets)
    payload: dict = {
        "rows": rows,
        "settings": {
            "m_inferences": cfg.infer_m_inferences,
            "n_recursions": cfg.infer_n_recursions,
            "keep_prob": cfg.train_keep_prob,
            "seed": cfg.seed,
        },
    }
    if len(out_entropy_sets) >= 1:
        reference = cfg.eval_reference_out or next(iter(out_entropy_sets))
        summary = metrics.td_od(hists, reference)
        payload["td_od"] = {"td": summary.td, "od": summary.od, "reference": reference}

    metrics.write_report_csv(out_dir / "report.csv", rows)
    metrics.write_report_json(out_dir / "report.json", payload)
    metrics.write_histograms_csv(out_dir / "histograms.csv", hists, cfg.eval_bins)
    with open(out_dir / "entropies.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "sample_id", "entropy", "true_label", "predicted_label"])
        for name, sid, entropy, label, pred in entropy_dump:
            writer.writerow([name, sid, f"{entropy:.17g}", label, pred])
    return _finish(out_dir, cfg)


def cmd_decide(cfg: RunConfig, out_dir: Path, ae_dir: Path, clf_path: Path) -> int:
    if cfg.threshold is None:
        raise ValidationError("decide needs a threshold (infer.threshold or --threshold)")
    model = ae_mod.load_autoencoder(ae_dir)
    clf = mca.load_classifier(clf_path)
    d_in = build_test_dataset(cfg)
    result = _entropies_for(cfg, model, clf, d_in.images, _TAG_EVAL_IN)
    mca.write_predictions_csv(
        out_dir / "predictions.csv", result, d_in.labels, cfg.threshold
    )
    accepted = int((result.entropies <= cfg.threshold).sum())
    print(f"accepted {accepted}/{len(d_in)} samples at threshold {cfg.threshold}")
    return _finish(out_dir, cfg)


# --------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcaae",
        description="Recursive dropout-autoencoder uncertainty pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_ae=False, needs_clf=False):
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--n-recursions", type=int, default=None)
        p.add_argument("--m-inferences", type=int, default=None)
        p.add_argument("--threshold", type=float, default=None)
        if needs_ae:
            p.add_argument("--ae", required=True, help="directory with the autoencoder checkpoint pair")
        if needs_clf:
            p.add_argument("--clf", required=True, help="classifier checkpoint file")

    common(sub.add_parser("train", help="train the denoising autoencoder"))
    common(sub.add_parser("fit-classifier", help="train the latent classifier"), needs_ae=True)
    common(
        sub.add_parser("analyze-attractors", help="orbit/fixed-point/spectral/basin report"),
        needs_ae=True,
    )
    common(sub.add_parser("eval", help="OOD and uncertainty metrics"), needs_ae=True, needs_clf=True)
    common(sub.add_parser("decide", help="threshold accept/reject per sample"), needs_ae=True, needs_clf=True)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_recursions is not None:
        cfg.infer_n_recursions = args.n_recursions
    if args.m_inferences is not None:
        cfg.infer_m_inferences = args.m_inferences
    if args.threshold is not None:
        cfg.infer_threshold = args.threshold
    cfg.validate()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "train":
        return cmd_train(cfg, out_dir)
    if args.command == "fit-classifier":
        return cmd_fit_classifier(cfg, out_dir, Path(args.ae))
    if args.command == "analyze-attractors":
        return cmd_analyze_attractors(cfg, out_dir, Path(args.ae))
    if args.command == "eval":
        return cmd_eval(cfg, out_dir, Path(args.ae), Path(args.clf))
    return cmd_decide(cfg, out_dir, Path(args.ae), Path(args.clf))


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (McaaeError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
