"""Detection statistics: closed forms, search optimality, null-model calibration."""

import math

import numpy as np
import pytest
import torch

from gandetect.acgan import (
    GANConfig,
    MLPDiscriminator,
    MLPGenerator,
    GANModel,
    generate,
    train_acgan,
)
from gandetect.classifier import ClassifierModel, TrainConfig, predict_batch, train_classifier
from gandetect.data import LabeledImage, make_splits
from gandetect.detect import (
    DetectionScores,
    DetectorConfig,
    GMMNullModel,
    SearchBudget,
    calibrate_threshold,
    detect,
    fit_all_ad,
    fuse_log,
    latent_search_batch,
    p_value,
    robust_classify,
    robust_classify_batch,
    score_discriminator,
    score_discriminator_batch,
    score_generator,
    score_internal,
    score_internal_batch,
    score_realness_batch,
    select_component_count,
)
from gandetect.errors import CapabilityError, ValidationError


def mlp_gan(latent_dim, data_shape, class_count, seed, modeled_layer=0):
    torch.manual_seed(seed)
    g = MLPGenerator(latent_dim, class_count, data_shape, hidden=32)
    d = MLPDiscriminator(data_shape, class_count, hidden=32, feature_width=16)
    return GANModel(
        generator=g,
        discriminator=d,
        data_shape=tuple(data_shape),
        latent_dim=latent_dim,
        class_count=class_count,
        preset="mlp",
        modeled_layer=modeled_layer,
    )


# ------------------------------------------------------------------ s_d fusion


def test_fuse_log_closed_forms():
    assert fuse_log(1.0, 1.0) == 0.0
    assert fuse_log(0.5, 0.5) == pytest.approx(-2 * math.log(2), abs=1e-12)
    assert fuse_log(0.0, 0.7) == float("-inf")
    assert fuse_log(0.7, 0.0) == float("-inf")
    with pytest.raises(ValidationError):
        fuse_log(-0.1, 0.5)


def test_fuse_log_additivity_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.uniform(1e-12, 1.0, size=2)
        assert abs(fuse_log(a, b) - (math.log(a) + math.log(b))) <= 1e-9


def test_sentinel_orders_below_every_finite_score():
    assert fuse_log(0.0, 1.0) < -1e300


# ---------------------------------------------------- discriminator statistics


def test_score_discriminator_matches_numpy_forward():
    gan = mlp_gan(4, (6,), 3, seed=0)
    rng = np.random.default_rng(1)
    xs = rng.random((5, 6)).astype(np.float32)
    preds = np.array([0, 2, 1, 0, 2])

    sd = {k: v.detach().numpy().astype(np.float64) for k, v in gan.discriminator.state_dict().items()}

    def leaky(v):
        return np.where(v > 0, v, 0.2 * v)

    f = leaky(xs.astype(np.float64) @ sd["trunk.1.weight"].T + sd["trunk.1.bias"])
    f = leaky(f @ sd["trunk.3.weight"].T + sd["trunk.3.bias"])
    real_logit = f @ sd["real_head.weight"].T + sd["real_head.bias"]
    s_r_oracle = 1.0 / (1.0 + np.exp(-real_logit[:, 0]))
    cls_logit = f @ sd["class_head.weight"].T + sd["class_head.bias"]
    e = np.exp(cls_logit - cls_logit.max(axis=1, keepdims=True))
    post = e / e.sum(axis=1, keepdims=True)

    rows = score_discriminator_batch(gan, xs, preds)
    for i, (s_r, s_c, s_d) in enumerate(rows):
        assert s_r == pytest.approx(s_r_oracle[i], abs=1e-6)
        assert s_c == pytest.approx(post[i, preds[i]], abs=1e-6)
        assert s_d == pytest.approx(math.log(s_r) + math.log(s_c), abs=1e-9)

    one = score_discriminator(gan, xs[0], 0)
    assert one[0] == pytest.approx(rows[0][0], abs=1e-6)
    assert one[1] == pytest.approx(rows[0][1], abs=1e-6)


def test_score_discriminator_requires_conditional():
    gan = mlp_gan(4, (6,), None, seed=0)
    xs = np.zeros((2, 6), dtype=np.float32)
    with pytest.raises(CapabilityError):
        score_discriminator_batch(gan, xs, np.array([0, 0]))
    assert score_realness_batch(gan, xs).shape == (2,)


def test_score_discriminator_validates_class():
    gan = mlp_gan(4, (6,), 3, seed=0)
    with pytest.raises(ValidationError):
        score_discriminator(gan, np.zeros(6, dtype=np.float32), 3)


# ------------------------------------------------------------- latent search


def test_planted_latent_is_recovered_via_warm_start():
    gan = mlp_gan(2, (5,), None, seed=2)
    z0 = np.array([0.3, -0.5], dtype=np.float32)
    x = generate(gan, z0)
    result = score_generator(gan, x, None, SearchBudget(restarts=4, steps=50),
                             seed=0, warm_starts=z0[None])
    assert result.value <= 1e-3
    assert result.value >= 0.0
    assert all(result.value <= init + 1e-12 for init in result.init_objectives)


def test_search_result_never_worse_than_any_initialization():
    gan = mlp_gan(3, (7,), None, seed=3)
    x = np.random.default_rng(0).random(7).astype(np.float32)
    result = score_generator(gan, x, None, SearchBudget(restarts=8, steps=120), seed=1)
    assert result.init_objectives and len(result.init_objectives) == 8
    assert result.value <= min(result.init_objectives) + 1e-12
    trace = result.trace
    assert len(trace) == 121
    assert all(b2 <= b1 + 1e-12 for b1, b2 in zip(trace, trace[1:]))
    assert result.value == pytest.approx(trace[-1], abs=1e-12)


def test_search_matches_dense_grid_on_1d_latent():
    gan = mlp_gan(1, (3,), None, seed=4)
    x = np.array([0.4, -0.2, 0.7], dtype=np.float32)
    grid = np.linspace(-1.0, 1.0, 10001, dtype=np.float32)[:, None]
    with torch.no_grad():
        recon = gan.generator(torch.as_tensor(grid), None).numpy()
    grid_min = float(((recon - x) ** 2).sum(axis=1).min())
    result = score_generator(gan, x, None, SearchBudget(restarts=8, steps=500), seed=0)
    assert abs(result.value - grid_min) / max(grid_min, 1e-12) < 0.01, (result.value, grid_min)


def test_search_deterministic_given_seed():
    gan = mlp_gan(3, (7,), 2, seed=5)
    xs = np.random.default_rng(1).random((3, 7)).astype(np.float32)
    labels = np.array([0, 1, 1])
    budget = SearchBudget(restarts=3, steps=40)
    a = latent_search_batch(gan, xs, labels, budget, seed=9)
    b = latent_search_batch(gan, xs, labels, budget, seed=9)
    assert [r.value for r in a] == [r.value for r in b]
    assert all(np.array_equal(ra.best_z, rb.best_z) for ra, rb in zip(a, b))


def test_search_label_handling():
    cond = mlp_gan(2, (4,), 3, seed=6)
    x = np.zeros(4, dtype=np.float32)
    with pytest.raises(ValidationError):
        score_generator(cond, x, None, SearchBudget(restarts=1, steps=1))
    with pytest.raises(ValidationError):
        score_generator(cond, x, 7, SearchBudget(restarts=1, steps=1))
    uncond = mlp_gan(2, (4,), None, seed=6)
    with pytest.raises(CapabilityError):
        score_generator(uncond, x, 1, SearchBudget(restarts=1, steps=1))
    with pytest.raises(ValidationError):
        SearchBudget(restarts=0).validated()


# ------------------------------------------------------------------ null model


def gaussian_scores(n, seed, mean=(0.6, 0.5), cov=((0.02, 0.005), (0.005, 0.01))):
    rng = np.random.default_rng(seed)
    return rng.multivariate_normal(mean, cov, size=n)


def test_single_gaussian_fit_recovers_mean():
    data = gaussian_scores(400, seed=0)
    model = fit_all_ad(data, component_count=1, seed=0)
    se = data.std(axis=0, ddof=1) / math.sqrt(len(data))
    assert np.all(np.abs(model.means[0] - data.mean(axis=0)) <= 3 * se)
    assert model.weights.sum() == pytest.approx(1.0, abs=1e-9)
    for cov in model.covariances:
        assert np.allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_single_component_pvalue_orders_like_mahalanobis():
    data = gaussian_scores(300, seed=1)
    model = fit_all_ad(data, component_count=1, seed=0)
    test_points = gaussian_scores(50, seed=2)
    inv = np.linalg.inv(model.covariances[0])
    diff = test_points - model.means[0]
    maha = np.einsum("ij,jk,ik->i", diff, inv, diff)
    # Ascending log-density is descending Mahalanobis distance.
    logp = model.logpdf(test_points)
    assert np.array_equal(np.argsort(logp), np.argsort(-maha))
    # Empirical p-values follow the same ordering up to rank ties.
    ps = p_value(model, test_points)
    by_maha = ps[np.argsort(maha)]
    assert np.all(np.diff(by_maha) <= 0)


def test_calibration_pvalues_nearly_uniform():
    data = gaussian_scores(500, seed=3)
    model = fit_all_ad(data, component_count=1, seed=0)
    ps = np.sort(p_value(model, data))
    grid = (np.arange(1, 501)) / 500.0
    ks = np.max(np.maximum(np.abs(ps - grid), np.abs(ps - (np.arange(500)) / 500.0)))
    assert ks < 0.1, ks


def test_pvalue_endpoints():
    data = gaussian_scores(200, seed=4)
    model = fit_all_ad(data, component_count=1, seed=0)
    far = np.array([[50.0, -50.0]])
    assert p_value(model, far)[0] == pytest.approx(1.0 / 201.0, abs=1e-12)
    mode = model.means[0][None]
    assert p_value(model, mode)[0] > 0.95
    all_ps = p_value(model, data)
    assert np.all((all_ps > 0) & (all_ps <= 1.0))


def test_fit_all_ad_validation():
    with pytest.raises(ValidationError):
        fit_all_ad(gaussian_scores(49, seed=0))
    with pytest.raises(ValidationError):
        fit_all_ad(np.zeros(100))
    with pytest.raises(ValidationError):
        fit_all_ad(gaussian_scores(100, seed=0), component_count=0)
    model = fit_all_ad(gaussian_scores(100, seed=0), component_count=1)
    with pytest.raises(ValidationError):
        model.logpdf(np.zeros((2, 3)))


def test_component_selection_prefers_true_structure():
    rng = np.random.default_rng(5)
    parts = [rng.multivariate_normal(m, np.eye(2) * 0.01, size=220)
             for m in ((0, 0), (3, 0), (0, 3))]
    data = np.vstack(parts)
    assert select_component_count(data, candidates=(1, 3), seed=0) == 3
    with pytest.raises(ValidationError):
        select_component_count(gaussian_scores(40, seed=0), candidates=(1,), seed=0)


# ------------------------------------------------------- thresholds and verdicts


def test_threshold_flag_rates_on_held_out_clean():
    rng = np.random.default_rng(6)
    clean, held = rng.normal(-3, 1, size=2000), rng.normal(-3, 1, size=2000)
    thr = calibrate_threshold("d-ad", clean, 0.05)
    assert abs((held < thr).mean() - 0.05) <= 0.02

    g_clean, g_held = rng.gamma(2.0, 1.0, size=2000), rng.gamma(2.0, 1.0, size=2000)
    g_thr = calibrate_threshold("g-ad", g_clean, 0.05)
    assert abs((g_held > g_thr).mean() - 0.05) <= 0.02

    assert calibrate_threshold("all-ad", np.zeros(10), 0.05) == 0.05
    with pytest.raises(ValidationError):
        calibrate_threshold("d-ad", clean, 1.5)
    with pytest.raises(ValidationError):
        calibrate_threshold("knn", clean, 0.05)


def test_detect_verdicts_and_capability():
    base = dict(s_r=0.9, s_c=0.8, s_d=fuse_log(0.9, 0.8), predicted_class=1, layer=0)
    scores = DetectionScores(**base, s_g=4.0, p_value=0.01)
    assert detect(scores, DetectorConfig(method="d-ad"), threshold=-1.0) == "clean"
    assert detect(scores, DetectorConfig(method="d-ad"), threshold=0.0) == "attack"
    assert detect(scores, DetectorConfig(method="g-ad"), threshold=3.0) == "attack"
    assert detect(scores, DetectorConfig(method="g-ad"), threshold=5.0) == "clean"
    assert detect(scores, DetectorConfig(method="all-ad"), threshold=0.05) == "attack"

    bare = DetectionScores(**base)
    with pytest.raises(CapabilityError):
        detect(bare, DetectorConfig(method="g-ad"), threshold=1.0)
    with pytest.raises(CapabilityError):
        detect(bare, DetectorConfig(method="all-ad"), threshold=0.05)
    with pytest.raises(ValidationError):
        DetectorConfig(method="svm").validated()
    with pytest.raises(ValidationError):
        DetectorConfig(method="d-ad", target_fpr=0.0).validated()


def test_sentinel_always_flags_under_finite_threshold():
    scores = DetectionScores(s_r=0.0, s_c=0.5, s_d=fuse_log(0.0, 0.5),
                             predicted_class=0, layer=0)
    assert detect(scores, DetectorConfig(method="d-ad"), threshold=-1e12) == "attack"


# ------------------------------------------------------------- layer scoring


def blob_images(n_per_class, seed):
    rng = np.random.default_rng(seed)
    images = []
    for c in (0, 1):
        for _ in range(n_per_class):
            img = rng.normal(0.1, 0.03, size=(1, 8, 8)).clip(0, 1)
            if c == 0:
                img[0, :4, :4] += 0.7
            else:
                img[0, 4:, 4:] += 0.7
            images.append(LabeledImage(img.clip(0, 1).astype(np.float32), c))
    return images


@pytest.fixture(scope="module")
def victim_and_gans():
    split = make_splits(blob_images(40, seed=0), (0.7, 0.15, 0.15), seed=0)
    clf = train_classifier(split, TrainConfig(epochs=6, batch_size=16, channels=(4, 4, 8, 8), fc_width=16), seed=0)
    xs = np.stack([s.pixels for s in split.train])
    ys = np.array([s.label for s in split.train])
    image_gan = train_acgan(xs, ys, 2, GANConfig(epochs=4, batch_size=16, preset="mlp", mlp_hidden=64), seed=0)
    from gandetect.classifier import extract_features_batch

    feats = extract_features_batch(clf, xs, "penultimate")
    feat_gan = train_acgan(feats, ys, 2, GANConfig(epochs=4, batch_size=16, mlp_hidden=64), seed=0,
                           modeled_layer=3)
    return clf, image_gan, feat_gan, xs


def test_score_internal_k0_is_bitwise_identical(victim_and_gans):
    clf, image_gan, _, xs = victim_and_gans
    sample = xs[:6]
    preds, _ = predict_batch(clf, sample)
    direct = score_discriminator_batch(image_gan, sample, preds)
    via_internal = score_internal_batch(clf, image_gan, sample, 0)
    for row, scores in zip(direct, via_internal):
        assert scores.s_r == row[0] and scores.s_c == row[1] and scores.s_d == row[2]
        assert scores.layer == 0
    one = score_internal(clf, image_gan, sample[0], "input")
    assert one.s_r == pytest.approx(direct[0][0], abs=1e-6)
    assert one.s_c == pytest.approx(direct[0][1], abs=1e-6)


def test_score_internal_feature_layer(victim_and_gans):
    clf, _, feat_gan, xs = victim_and_gans
    rows = score_internal_batch(clf, feat_gan, xs[:4], "penultimate",
                                budget=SearchBudget(restarts=2, steps=10), seed=0)
    for scores in rows:
        assert scores.layer == 3
        assert scores.s_g is not None and scores.s_g >= 0
        assert scores.predicted_class in (0, 1)
        assert scores.s_d <= 0


def test_score_internal_layer_mismatch(victim_and_gans):
    clf, image_gan, feat_gan, xs = victim_and_gans
    with pytest.raises(ValidationError):
        score_internal_batch(clf, feat_gan, xs[:2], 0)
    with pytest.raises(ValidationError):
        score_internal_batch(clf, image_gan, xs[:2], "penultimate")


# -------------------------------------------------------- robust classification


def test_robust_classify_argmax_and_capability(victim_and_gans):
    _, image_gan, _, xs = victim_and_gans
    labels = robust_classify_batch(image_gan, xs[:8])
    from gandetect.acgan import discriminate_batch

    _, post = discriminate_batch(image_gan, xs[:8])
    assert np.array_equal(labels, post.argmax(axis=1))
    assert robust_classify(image_gan, xs[0]) == labels[0]

    uncond = mlp_gan(2, (1, 8, 8), None, seed=7)
    with pytest.raises(CapabilityError):
        robust_classify(uncond, xs[0])


def test_robust_classify_uniform_posterior_breaks_ties_low():
    gan = mlp_gan(2, (4,), 3, seed=8)
    with torch.no_grad():
        gan.discriminator.class_head.weight.zero_()
        gan.discriminator.class_head.bias.zero_()
    label = robust_classify(gan, np.ones(4, dtype=np.float32))
    assert label == 0


def test_robust_classify_invariant_to_uniform_logit_shift():
    gan = mlp_gan(2, (4,), 3, seed=9)
    xs = np.random.default_rng(0).random((6, 4)).astype(np.float32)
    before = robust_classify_batch(gan, xs)
    with torch.no_grad():
        gan.discriminator.class_head.bias += 7.5
    after = robust_classify_batch(gan, xs)
    assert np.array_equal(before, after)
