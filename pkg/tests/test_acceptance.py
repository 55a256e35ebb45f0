"""Acceptance suite: one test per criterion, each printing a PASS/FAIL
line, plus the reference-run property checks that share the cached
session fixtures (see conftest.py)."""

import struct
import time

import mpmath
import numpy as np
import pytest
from scipy.optimize import linprog

from mcaae import cli
from mcaae.autoencoder import (
    AugmentationConfig,
    augment_batch,
    build_autoencoder,
    load_autoencoder,
    reconstruct,
)
from mcaae.checkpoint import network_to_bytes
from mcaae.config import parse_config_text
from mcaae.data import load_idx, read_pgm, synth_generate, write_pgm
from mcaae.dynamics import basin_probe, iterate, power_iteration_radius
from mcaae.errors import ValidationError
from mcaae.mca import (
    build_latent_classifier,
    latent_codes,
    mca_predict,
    mca_predict_dataset,
    normalized_entropy,
    predict_proba,
    run_masks_for_sample,
)
from mcaae.metrics import EntropyHistogramSet, auroc, fpr_at_95_tpr, td_od, wasserstein1
from mcaae.nncore import backward, forward, forward_value, init_network, sample_dropout_mask
from mcaae.ssim import ssim

from conftest import ABLATION_SEEDS


def report(criterion: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\n[criterion {criterion:2d}] {status}  {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# --------------------------------------------------------------------------
# 1. gradient correctness


def test_criterion_1_gradient_correctness():
    started = time.perf_counter()
    rng = np.random.default_rng(20240)
    worst = 0.0
    for _ in range(20):
        n_layers = int(rng.integers(1, 4))
        widths = [int(rng.integers(2, 9)) for _ in range(n_layers + 1)]
        acts = [["relu", "sigmoid", "identity"][rng.integers(3)] for _ in range(n_layers)]
        eligible = [bool(rng.integers(2)) for _ in range(n_layers - 1)] + [False]
        net = init_network(widths, acts, rng, eligible)
        x = rng.random(widths[0])
        target = rng.random(widths[-1])
        mask = sample_dropout_mask(net, 0.6, rng) if any(eligible) else None

        def loss_value():
            return 0.5 * np.sum((forward_value(net, x, mask) - target) ** 2)

        trace = forward(net, x, mask)
        analytic = backward(net, trace, trace.output - target, mask).arrays()
        h = 1e-5
        for arr, grad in zip(net.parameter_arrays(), analytic):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                down = loss_value()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                scale = max(abs(gflat[i]), abs(numeric), 1e-4)
                worst = max(worst, abs(gflat[i] - numeric) / scale)
    elapsed = time.perf_counter() - started
    report(
        1,
        worst <= 1e-4 and elapsed < 60,
        f"max relative gradient error {worst:.2e} over 20 networks in {elapsed:.1f}s",
    )


# --------------------------------------------------------------------------
# 2. metric oracle equivalence


def _auroc_pairwise(pos, neg):
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else (0.5 if p == n else 0.0)
    return wins / (len(pos) * len(neg))


def _fpr95_scan(pos, neg):
    best = None
    for t in np.unique(np.concatenate([pos, neg]))[::-1]:
        if np.mean(pos >= t) >= 0.95:
            best = t
            break
    if best is None:
        best = min(pos.min(), neg.min())
    return np.mean(neg >= best)


def _wasserstein_lp(a, b):
    na, nb = len(a), len(b)
    cost = np.abs(np.subtract.outer(a, b)).reshape(-1)
    rows = []
    for i in range(na):
        r = np.zeros((na, nb))
        r[i] = 1.0
        rows.append(r.reshape(-1))
    for j in range(nb):
        c = np.zeros((na, nb))
        c[:, j] = 1.0
        rows.append(c.reshape(-1))
    b_eq = np.concatenate([np.full(na, 1 / na), np.full(nb, 1 / nb)])
    res = linprog(cost, A_eq=np.array(rows), b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.success
    return res.fun


def test_criterion_2_metric_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(777)
    auroc_exact = fpr_exact = True
    for _ in range(200):
        n_pos = int(rng.integers(1, 101))
        n_neg = int(rng.integers(1, 101))
        decimals = int(rng.integers(1, 4))  # coarser rounding -> more ties
        pos = np.round(rng.random(n_pos), decimals)
        neg = np.round(rng.random(n_neg), decimals)
        auroc_exact &= auroc(pos, neg) == _auroc_pairwise(pos, neg)
        fpr_exact &= fpr_at_95_tpr(pos, neg) == _fpr95_scan(pos, neg)

    axioms_ok = True
    for _ in range(20):
        a = rng.random(int(rng.integers(1, 8)))
        b = rng.random(int(rng.integers(1, 8)))
        c = rng.random(int(rng.integers(1, 8)))
        axioms_ok &= abs(wasserstein1(a, b) - wasserstein1(b, a)) <= 1e-12
        axioms_ok &= wasserstein1(a, b) >= 0.0
        axioms_ok &= wasserstein1(a, np.copy(rng.permutation(a))) == 0.0
        axioms_ok &= (
            wasserstein1(a, b) + wasserstein1(b, c) >= wasserstein1(a, c) - 1e-12
        )

    transport_ok = True
    for _ in range(10):
        a = rng.random(int(rng.integers(1, 6)))
        b = rng.random(int(rng.integers(1, 6)))
        transport_ok &= abs(wasserstein1(a, b) - _wasserstein_lp(a, b)) <= 1e-9

    elapsed = time.perf_counter() - started
    report(
        2,
        auroc_exact and fpr_exact and axioms_ok and transport_ok and elapsed < 60,
        "auroc==pairwise and fpr95==scan on 200 populations; "
        f"W1 axioms and transport LP agree; {elapsed:.1f}s",
    )


# --------------------------------------------------------------------------
# 3. entropy kernel


def test_criterion_3_entropy_kernel():
    # exact boundary values where the uniform distribution is representable
    # (power-of-two class counts); other class counts are off by ~1e-16 in
    # the *input*, so they are checked to 1e-12
    exact_ok = (
        normalized_entropy(np.array([0.5, 0.5])) == 1.0
        and normalized_entropy(np.full(4, 0.25)) == 1.0
        and all(
            normalized_entropy(np.eye(c)[0]) == 0.0 for c in range(2, 13)
        )
    )
    near_ok = all(
        abs(normalized_entropy(np.full(c, 1.0 / c)) - 1.0) <= 1e-12 for c in range(2, 13)
    )
    with mpmath.workdps(50):
        oracle = float(
            -(
                mpmath.mpf("0.9") * mpmath.log(mpmath.mpf("0.9"))
                + mpmath.mpf("0.1") * mpmath.log(mpmath.mpf("0.1"))
            )
            / mpmath.log(2)
        )
    value = normalized_entropy(np.array([0.9, 0.1]))
    binary_ok = abs(value - oracle) <= 1e-12 and abs(value - 0.46900) <= 1e-5
    report(
        3,
        exact_ok and near_ok and binary_ok,
        f"boundaries exact, H(0.9, 0.1) = {value:.6f} vs oracle {oracle:.6f}",
    )


# --------------------------------------------------------------------------
# 4. fixed-point emergence on the reference run


def _residuals(model, images):
    flat = images.reshape(len(images), -1)
    recon = reconstruct(model, flat)
    return np.linalg.norm(recon - flat, axis=1)


def test_criterion_4_fixed_point_emergence(reference):
    initial = np.median(_residuals(reference.initial_model(), reference.images))
    final = np.median(_residuals(reference.model, reference.images))
    report(
        4,
        final < 0.1 * initial,
        f"median residual {final:.3f} vs {initial:.3f} at initialization "
        f"(ratio {final / initial:.3f}, threshold 0.1)",
    )


# --------------------------------------------------------------------------
# 5. attractor criterion via the Jacobian spectral radius


def test_criterion_5_attractor_spectral_radius(reference):
    # estimator must be trusted on known linear maps first
    rng = np.random.default_rng(5150)
    calibration = [
        (lambda x: 0.5 * x, 2, 0.5),
        (lambda x, d=np.array([0.9, 0.2]): d * x, 2, 0.9),
    ]
    for _ in range(3):
        dim = int(rng.integers(3, 7))
        rest = rng.uniform(0.05, 0.5, dim - 1)
        top = rest.max() + rng.uniform(0.2, 0.4)
        diag = np.concatenate([[top], rest]) * rng.choice([-1.0, 1.0], dim)
        calibration.append((lambda x, d=diag: d * x, dim, top))
    for fn, dim, expected in calibration:
        got = power_iteration_radius(fn, np.zeros(dim), seed=3).radius_estimate
        assert abs(got - expected) <= 1e-3, f"estimator off: {got} vs {expected}"

    flat = reference.images.reshape(len(reference.images), -1)
    below = 0
    for i in range(len(flat)):
        rep = power_iteration_radius(
            lambda p: reconstruct(reference.model, p),
            flat[i],
            max_iters=150,
            tol=1e-4,
            seed=0,
        )
        below += rep.radius_estimate < 1.0
    fraction = below / len(flat)
    report(
        5,
        fraction >= 0.80,
        f"spectral radius < 1 at {below}/{len(flat)} training samples "
        f"({fraction:.1%}, threshold 80%)",
    )


# --------------------------------------------------------------------------
# 6. recursion ablation direction


def test_criterion_6_recursion_ablation_direction(ablation):
    wins = 0
    pairs = []
    for seed in ABLATION_SEEDS:
        with_rec = auroc(ablation[f"n2_tri_{seed}"], ablation[f"n2_in_{seed}"])
        without = auroc(ablation[f"n0_tri_{seed}"], ablation[f"n0_in_{seed}"])
        wins += with_rec >= without
        pairs.append(f"{with_rec:.3f}/{without:.3f}")
    report(
        6,
        wins >= 8,
        f"AUROC N=2 >= N=0 in {wins}/10 seeds (n2/n0 per seed: {', '.join(pairs)})",
    )


# --------------------------------------------------------------------------
# 7. entropy separation direction (TD vs OD)


def test_criterion_7_entropy_separation_direction(ablation):
    wins = 0
    values = []
    for seed in ABLATION_SEEDS:
        hists = EntropyHistogramSet(
            ablation[f"n2_in_{seed}"],
            {
                "triangles": ablation[f"n2_tri_{seed}"],
                "checkers": ablation[f"n2_chk_{seed}"],
            },
        )
        summary = td_od(hists, "triangles")
        wins += summary.td > summary.od
        values.append(f"{summary.td:.3f}>{summary.od:.3f}")
    report(7, wins >= 8, f"TD > OD in {wins}/10 seeds ({', '.join(values)})")


# --------------------------------------------------------------------------
# 8. mask schedule contract


def test_criterion_8_mask_schedule_contract():
    rng = np.random.default_rng(88)
    model = build_autoencoder(64, rng, hidden_widths=(16, 8), latent_dim=4)
    clf = build_latent_classifier(4, 2, rng)
    observed = []
    m, n = 20, 3
    mca_predict(
        model, clf, rng.random(64), m, n, rng, keep_prob=0.6,
        step_observer=lambda run, step, mask_id: observed.append((run, step, mask_id)),
    )
    per_run_ids = {}
    for run, _, mask_id in observed:
        per_run_ids.setdefault(run, set()).add(mask_id)
    constant_within = all(len(ids) == 1 for ids in per_run_ids.values())
    fresh_across = len({ids.pop() for ids in per_run_ids.values()}) == m
    all_steps_seen = len(observed) == m * n

    # the batched path derives its masks from (seed, sample, run) and must
    # also resample across runs
    batched_ids = {
        run_masks_for_sample(model, 31337, 0, run, 0.6).fingerprint() for run in range(m)
    }
    report(
        8,
        constant_within and fresh_across and all_steps_seen and len(batched_ids) == m,
        f"mask frozen within each of {m} runs, resampled across runs "
        "(per-sample and batched paths)",
    )


# --------------------------------------------------------------------------
# 9. pipeline determinism


DETERMINISM_CONFIG = """
seed = 5
dataset.kind = synthetic
dataset.synth_kind = bars-vs-blobs
dataset.n_per_class = 10
dataset.test_n_per_class = 6
dataset.image_size = 16
model.latent_dim = 4
model.hidden_widths = 32,16
train.epochs = 20
train.batch_size = 8
train.learning_rate = 0.002
classifier.epochs = 30
infer.m_inferences = 5
infer.n_recursions = 2
eval.ood = triangles
eval.target_total = 12
"""


def test_criterion_9_pipeline_determinism(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(DETERMINISM_CONFIG)
    outputs = []
    for tag in ("a", "b"):
        base = tmp_path / tag
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(base / "train")]) == 0
        assert cli.main([
            "fit-classifier", "--config", str(cfg_path),
            "--out", str(base / "clf"), "--ae", str(base / "train"),
        ]) == 0
        assert cli.main([
            "eval", "--config", str(cfg_path), "--out", str(base / "eval"),
            "--ae", str(base / "train"), "--clf", str(base / "clf" / "classifier.mcae"),
        ]) == 0
        outputs.append(base)
    files = [
        "train/autoencoder.enc.mcae",
        "train/autoencoder.dec.mcae",
        "train/loss.csv",
        "clf/classifier.mcae",
        "eval/report.csv",
        "eval/report.json",
        "eval/histograms.csv",
        "eval/entropies.csv",
    ]
    identical = all(
        (outputs[0] / f).read_bytes() == (outputs[1] / f).read_bytes() for f in files
    )
    report(9, identical, f"{len(files)} artifacts byte-identical across two runs")


# --------------------------------------------------------------------------
# 10. format golden files


def test_criterion_10_format_golden_files(tmp_path):
    # IDX pair with one 255-pixel and label 3
    img_path, lbl_path = tmp_path / "i.idx", tmp_path / "l.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x803, 1, 1, 1) + b"\xff")
    lbl_path.write_bytes(struct.pack(">II", 0x801, 1) + b"\x03")
    ds = load_idx(img_path, lbl_path)
    idx_ok = ds.images.shape == (1, 1, 1) and ds.images[0, 0, 0] == 1.0 and ds.labels[0] == 3

    write_pgm(tmp_path / "g.pgm", np.array([[0.0, 1.0]]))
    pgm_ok = (tmp_path / "g.pgm").read_bytes() == b"P5\n2 1\n255\n\x00\xff"
    pgm_ok &= np.array_equal(read_pgm(tmp_path / "g.pgm"), np.array([[0.0, 1.0]]))

    rng = np.random.default_rng(10)
    net = init_network([6, 5, 4], ["relu", "sigmoid"], rng)
    from mcaae.checkpoint import load_network, save_network

    save_network(tmp_path / "net.mcae", net)
    back = load_network(tmp_path / "net.mcae")
    ckpt_ok = network_to_bytes(back) == network_to_bytes(net)
    report(10, idx_ok and pgm_ok and ckpt_ok, "IDX, PGM and checkpoint round trips exact")


# --------------------------------------------------------------------------
# reference-run properties (shared fixtures, not numbered criteria)


def test_reference_loss_history_trend(reference):
    history = np.asarray(reference.history)
    moving = np.convolve(history, np.ones(50) / 50, mode="valid")
    assert moving[-1] < moving[0]
    assert history[-1] < 0.1 * history[0], (
        f"final loss {history[-1]:.4f} vs initial {history[0]:.4f}"
    )


def test_reference_denoising_property(reference):
    rng = np.random.default_rng(404)
    clean = reference.images
    corrupted = augment_batch(clean, AugmentationConfig(), rng)
    restored = reconstruct(reference.model, corrupted.reshape(len(clean), -1)).reshape(
        clean.shape
    )
    improved = ssim(restored, clean) > ssim(corrupted, clean)
    assert improved.mean() >= 0.90, f"denoising improved only {improved.mean():.1%}"


def test_reference_orbit_convergence(reference):
    # residuals settle: non-increasing from step 2 on, final below first
    ok = 0
    for i in range(10):
        orbit = iterate(reference.model, reference.images[i].reshape(-1), None, 7)
        r = orbit.residuals
        ok += all(r[j + 1] <= r[j] + 1e-9 for j in range(1, 6)) and r[-1] < r[0]
    assert ok >= 9, f"orbit convergence held on {ok}/10 training samples"


def test_reference_basin_fraction_monotone_in_radius(reference):
    x = reference.images[0].reshape(-1)
    fractions = []
    for k, radius in enumerate((0.05, 0.1, 0.2, 0.35, 0.5)):
        fractions.append(
            basin_probe(
                reference.model, x, None, radius, 20, 7,
                np.random.default_rng(600 + k),
            )
        )
    inversions = sum(
        fractions[i + 1] > fractions[i] + 1e-12 for i in range(len(fractions) - 1)
    )
    assert inversions <= 1, f"basin fractions {fractions} not monotone in radius"


def test_reference_classifier_training_accuracy(reference, reference_classifier):
    z = latent_codes(
        reference.model,
        reference.images.reshape(len(reference.images), -1),
        reference.cfg.infer_n_recursions,
        None,
    )
    predicted = predict_proba(reference_classifier, z).argmax(axis=1)
    accuracy = (predicted == reference.labels).mean()
    assert accuracy >= 0.95, f"training accuracy {accuracy:.1%}"


def test_reference_mean_entropy_separates_ood(reference, reference_classifier):
    cfg = reference.cfg
    d_in = synth_generate("bars-vs-blobs", 100, 64, np.random.default_rng(71))
    d_out = synth_generate("triangles", 200, 64, np.random.default_rng(72))
    ent_in = mca_predict_dataset(
        reference.model, reference_classifier, d_in.images, 20, 2, cfg.train_keep_prob, 81
    ).entropies
    ent_out = mca_predict_dataset(
        reference.model, reference_classifier, d_out.images, 20, 2, cfg.train_keep_prob, 82
    ).entropies
    assert ent_in.mean() < ent_out.mean(), (
        f"mean in-dist entropy {ent_in.mean():.3f} vs OOD {ent_out.mean():.3f}"
    )


def test_reference_ood_residuals_higher_at_first_iterate(reference):
    train_res = np.median(_residuals(reference.model, reference.images[:200]))
    triangles = synth_generate("triangles", 200, 64, np.random.default_rng(73))
    ood_res = np.median(_residuals(reference.model, triangles.images))
    assert train_res < ood_res, f"median residuals: train {train_res:.3f}, ood {ood_res:.3f}"


def test_reference_indistinguishable_populations_score_half(reference, reference_classifier):
    cfg = reference.cfg
    a = synth_generate("bars-vs-blobs", 100, 64, np.random.default_rng(74))
    b = synth_generate("bars-vs-blobs", 100, 64, np.random.default_rng(75))
    ent_a = mca_predict_dataset(
        reference.model, reference_classifier, a.images, 20, 2, cfg.train_keep_prob, 83
    ).entropies
    ent_b = mca_predict_dataset(
        reference.model, reference_classifier, b.images, 20, 2, cfg.train_keep_prob, 84
    ).entropies
    value = auroc(ent_a, ent_b)
    assert abs(value - 0.5) <= 0.05, f"AUROC between identical generators {value:.3f}"
