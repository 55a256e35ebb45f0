"""Session fixtures for the reference pipeline run.

The reference model (2000-epoch denoiser on the bars-vs-blobs task) is
expensive, so its artifacts are cached under tests/_artifacts keyed by the
resolved configuration; reruns load the checkpoint instead of retraining.
Everything is derived from the shipped CLI code paths so the acceptance
tests exercise the real pipeline.
"""

from dataclasses import dataclass
from hashlib import sha1
from pathlib import Path

import numpy as np
import pytest

from mcaae import cli
from mcaae.autoencoder import TrainConfig, build_autoencoder, load_autoencoder
from mcaae.config import parse_config_text, write_resolved_config
from mcaae.data import synth_generate
from mcaae.mca import load_classifier, mca_predict_dataset, train_classifier

ARTIFACTS = Path(__file__).parent / "_artifacts"

REFERENCE_CONFIG = """
seed = 7
dataset.kind = synthetic
dataset.synth_kind = bars-vs-blobs
dataset.n_per_class = 250
dataset.test_n_per_class = 100
dataset.image_size = 64
model.latent_dim = 10
model.hidden_widths = 256,64
train.epochs = 2000
train.batch_size = 64
train.learning_rate = 0.0001
train.keep_prob = 0.67
augment.blur_sigma = 0.2,0.6
augment.noise_std = 0.02,0.05
augment.brightness = -0.03,0.03
augment.contrast = 0.98,1.02
classifier.epochs = 500
infer.m_inferences = 20
infer.n_recursions = 2
eval.ood = triangles,checkers
eval.reference_out = triangles
"""

ABLATION_SEEDS = list(range(10))
ABLATION_CLASSIFIER_EPOCHS = 200
ABLATION_EVAL_PER_CLASS = 100  # 200 in-dist vs 200 per OOD set


def _config_digest(cfg) -> str:
    tmp = ARTIFACTS / "config.tmp"
    ARTIFACTS.mkdir(exist_ok=True)
    write_resolved_config(tmp, cfg)
    digest = sha1(tmp.read_bytes()).hexdigest()[:12]
    tmp.unlink()
    return digest


def reference_config():
    return parse_config_text(REFERENCE_CONFIG)


@dataclass
class ReferenceBundle:
    cfg: object
    model: object  # trained autoencoder
    images: np.ndarray  # training images
    labels: np.ndarray
    history: list[float]
    train_dir: Path

    def initial_model(self):
        """The untrained model exactly as cmd_train initialized it."""
        return build_autoencoder(
            self.cfg.dataset_image_size**2,
            cli._rng(self.cfg.seed, cli._TAG_MODEL_INIT),
            hidden_widths=self.cfg.model_hidden_widths,
            latent_dim=self.cfg.model_latent_dim,
        )


def build_reference(train_dir: Path) -> None:
    cfg = reference_config()
    train_dir.parent.mkdir(parents=True, exist_ok=True)
    train_dir.mkdir(exist_ok=True)
    assert cli.cmd_train(cfg, train_dir) == 0


@pytest.fixture(scope="session")
def reference() -> ReferenceBundle:
    cfg = reference_config()
    root = ARTIFACTS / f"reference-{_config_digest(cfg)}"
    train_dir = root / "train"
    if not (train_dir / "autoencoder.enc.mcae").exists():
        build_reference(train_dir)
    model = load_autoencoder(train_dir)
    ds = cli.build_train_dataset(cfg)
    history = [
        float(line.split(",")[1])
        for line in (train_dir / "loss.csv").read_text().splitlines()[1:]
    ]
    return ReferenceBundle(cfg, model, ds.images, ds.labels, history, train_dir)


@pytest.fixture(scope="session")
def reference_classifier(reference):
    """The 500-epoch latent classifier at the configured recursion depth."""
    clf_path = reference.train_dir.parent / "classifier.mcae"
    if not clf_path.exists():
        assert (
            cli.cmd_fit_classifier(reference.cfg, clf_path.parent, reference.train_dir)
            == 0
        )
    return load_classifier(clf_path)


def _ablation_classifier(reference, n_recursions, seed):
    cfg = reference.cfg
    train_cfg = TrainConfig(
        epochs=ABLATION_CLASSIFIER_EPOCHS,
        batch_size=cfg.train_batch_size,
        learning_rate=cfg.train_learning_rate,
        keep_prob=cfg.train_keep_prob,
        seed=0,
    )
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 900 + seed, n_recursions)))
    clf, _ = train_classifier(
        reference.model, reference.images, reference.labels, n_recursions, train_cfg, rng
    )
    return clf


def _eval_set(cfg, kind, per_class, seed, tag):
    return synth_generate(
        kind, per_class, cfg.dataset_image_size,
        np.random.default_rng(np.random.SeedSequence((cfg.seed, tag, seed))),
    )


@pytest.fixture(scope="session")
def ablation(reference):
    """Per-seed entropy populations for the recursion ablation and the
    TD/OD separation direction (one shared backbone; the seed varies the
    classifier training, inference masks and evaluation draws)."""
    cfg = reference.cfg
    cache = reference.train_dir.parent / "ablation.npz"
    if cache.exists():
        data = dict(np.load(cache))
        return data

    m, keep = cfg.infer_m_inferences, cfg.train_keep_prob
    data = {}
    for seed in ABLATION_SEEDS:
        d_in = _eval_set(cfg, cfg.dataset_synth_kind, ABLATION_EVAL_PER_CLASS, seed, 11)
        d_tri = _eval_set(cfg, "triangles", 2 * ABLATION_EVAL_PER_CLASS, seed, 12)
        d_chk = _eval_set(cfg, "checkers", 2 * ABLATION_EVAL_PER_CLASS, seed, 13)
        for n_rec, tag in ((2, "n2"), (0, "n0")):
            clf = _ablation_classifier(reference, n_rec, seed)
            base = np.random.SeedSequence((cfg.seed, 800 + seed, n_rec)).generate_state(1)[0]
            sets = [("in", d_in), ("tri", d_tri)] + ([("chk", d_chk)] if n_rec == 2 else [])
            for name, ds in sets:
                result = mca_predict_dataset(
                    reference.model, clf, ds.images, m, n_rec, keep, int(base)
                )
                data[f"{tag}_{name}_{seed}"] = result.entropies
    np.savez(cache, **data)
    return data
