"""Staged experiment pipeline over on-disk artifacts.

Each stage reads what earlier stages wrote, so any stage can be re-run in
isolation; a missing input names the stage that produces it.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import numpy as np

from .acgan import GANConfig, GANModel, gan_from_state, gan_state, train_acgan
from .artifacts import (
    RunPaths,
    check_same_dataset,
    load_npz,
    load_torch,
    make_meta,
    read_csv,
    run_paths,
    save_npz,
    save_torch,
    write_csv,
)
from .attacks import (
    attack_set_arrays,
    craft_attack_set,
    records_from_arrays,
    successful,
)
from .classifier import (
    ClassifierModel,
    TrainConfig,
    classifier_from_state,
    classifier_state,
    extract_features_batch,
    predict_batch,
    train_classifier,
)
from .config import ExperimentConfig, config_hash
from .data import (
    DatasetSplit,
    dataset_hash,
    load_dataset,
    load_split,
    save_split,
    split_arrays,
    split_train_holdout,
)
from .detect import (
    DetectionScores,
    DetectorConfig,
    calibrate_threshold,
    detect,
    fit_all_ad,
    latent_search_batch,
    p_value,
    robust_classify_batch,
    score_discriminator_batch,
    score_realness_batch,
    select_component_count,
)
from .errors import CapabilityError, MissingArtifactError, ValidationError
from .evaluation import accuracy_report, auc, pauc, roc_curve, tsne_layer_figure

PREDICT_CHUNK = 256
SEARCH_CHUNK = 64

DETECTION_HEADER = ["dataset", "attack", "method", "layer", "pauc", "auc", "n_attack", "n_clean"]
ROBUST_HEADER = ["dataset", "attack", "layer", "n", "rc_accuracy", "attacked_accuracy"]


def _dataset_root(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.dataset.root)
    return root if root.is_absolute() else Path(cfg.output_dir) / root


def _predict_all(model: ClassifierModel, xs: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [predict_batch(model, xs[i : i + PREDICT_CHUNK])[0] for i in range(0, len(xs), PREDICT_CHUNK)]
    )


def _features_at(model: ClassifierModel, xs: np.ndarray, layer: int) -> np.ndarray:
    if layer == 0:
        return xs
    return np.concatenate(
        [extract_features_batch(model, xs[i : i + PREDICT_CHUNK], layer)
         for i in range(0, len(xs), PREDICT_CHUNK)]
    )


# ------------------------------------------------------------------ stage: data


def prepare_data(cfg: ExperimentConfig) -> DatasetSplit:
    """Locate (or synthesize) the dataset files and persist a stratified split."""
    paths = run_paths(cfg.output_dir)
    root = _dataset_root(cfg)
    if cfg.dataset.format == "idx":
        files = {
            "train_images": root / "train-images-idx3-ubyte",
            "train_labels": root / "train-labels-idx1-ubyte",
            "test_images": root / "t10k-images-idx3-ubyte",
            "test_labels": root / "t10k-labels-idx1-ubyte",
        }
        missing = [p for p in files.values() if not p.exists()]
        if missing and cfg.dataset.synthesize is not None:
            from .synth import write_mnist_style

            n_train, n_test = cfg.dataset.synthesize
            write_mnist_style(root, n_train, n_test, seed=cfg.seed)
            missing = []
        if missing:
            raise ValidationError(
                f"dataset files not found under {root}: "
                + ", ".join(p.name for p in missing)
            )
        train_samples = load_dataset(files["train_images"], "idx-mnist", files["train_labels"])
        test_samples = load_dataset(files["test_images"], "idx-mnist", files["test_labels"])
    else:
        train_dir = root / "train"
        test_file = root / "test_batch.bin"
        if (not test_file.exists() or not train_dir.exists()) and cfg.dataset.synthesize:
            from .synth import write_cifar_style

            n_train, n_test = cfg.dataset.synthesize
            write_cifar_style(root, n_train, n_test, seed=cfg.seed)
        if not train_dir.exists() or not test_file.exists():
            raise ValidationError(f"dataset batches not found under {root}")
        train_samples = load_dataset(train_dir, "cifar-binary")
        test_samples = load_dataset(test_file, "cifar-binary")

    train, holdout = split_train_holdout(train_samples, cfg.dataset.holdout_fraction, cfg.seed)
    labels = [s.label for s in train_samples] + [s.label for s in test_samples]
    split = DatasetSplit(train=train, val=holdout, test=test_samples,
                         class_count=int(max(labels)) + 1, seed=cfg.seed)
    ds_hash = dataset_hash(split)
    meta = make_meta(config_hash(cfg), cfg.seed, "prepare-data", ds_hash,
                     counts={"train": len(train), "val": len(holdout), "test": len(test_samples)})
    paths.split.parent.mkdir(parents=True, exist_ok=True)
    save_split(split, paths.split, meta)
    print(f"prepare-data: {len(train)} train / {len(holdout)} holdout / "
          f"{len(test_samples)} test samples, {split.class_count} classes")
    return split


def _load_split_artifact(paths: RunPaths):
    if not paths.split.exists():
        raise MissingArtifactError("dataset split", "prepare-data")
    return load_split(paths.split)


def _load_classifier_artifact(paths: RunPaths):
    state, meta = load_torch(paths.classifier, "classifier checkpoint", "train-classifier")
    return classifier_from_state(state), meta


def _load_gan_artifact(paths: RunPaths, layer: int, unconditional: bool = False):
    kind = "unconditional acgan" if unconditional else "acgan"
    state, meta = load_torch(paths.gan(layer, unconditional),
                             f"{kind} for tap {layer}", "train-acgan")
    return gan_from_state(state), meta


def _load_conditional_gan(paths: RunPaths, layer: int) -> GANModel:
    """Load the class-conditional model for a tap, explaining the failure
    mode where only the unconditional ablation exists."""
    if not paths.gan(layer).exists() and paths.gan(layer, unconditional=True).exists():
        raise CapabilityError(
            f"tap {layer} only has an unconditional model (acgan.unconditional_layers); "
            f"this method needs the class posterior — train with acgan.layers including {layer}"
        )
    gan, _ = _load_gan_artifact(paths, layer)
    if not gan.conditional:
        raise CapabilityError(
            f"checkpoint {paths.gan(layer)} holds an unconditional model; "
            f"this method needs the class posterior"
        )
    return gan


# -------------------------------------------------------------- stage: training


def train_classifier_stage(cfg: ExperimentConfig) -> ClassifierModel:
    paths = run_paths(cfg.output_dir)
    split, split_meta = _load_split_artifact(paths)
    tc = TrainConfig(epochs=cfg.classifier.epochs, batch_size=cfg.classifier.batch_size,
                     lr=cfg.classifier.lr, channels=cfg.classifier.channels,
                     fc_width=cfg.classifier.fc_width)
    model = train_classifier(split, tc, seed=cfg.seed)
    meta = make_meta(config_hash(cfg), cfg.seed, "train-classifier",
                     split_meta.get("dataset_hash"),
                     test_accuracy=model.train_log.get("test_accuracy"))
    save_torch(paths.classifier, classifier_state(model), meta)
    print(f"train-classifier: clean test accuracy "
          f"{model.train_log.get('test_accuracy', float('nan')):.4f}")
    return model


def _gan_seed(seed: int, layer: int, unconditional: bool) -> int:
    return seed + 100 + 10 * layer + (1 if unconditional else 0)


def train_acgan_stage(cfg: ExperimentConfig, layer: int | None = None,
                      unconditional: bool = False) -> list:
    paths = run_paths(cfg.output_dir)
    split, split_meta = _load_split_artifact(paths)
    clf, _ = _load_classifier_artifact(paths)
    arrays = split_arrays(split)
    train_x, train_y = arrays["train"]

    if layer is None:
        jobs = [(k, False) for k in cfg.acgan.layers]
        jobs += [(k, True) for k in cfg.acgan.unconditional_layers]
    else:
        listed = cfg.acgan.unconditional_layers if unconditional else cfg.acgan.layers
        if layer not in listed:
            block = "acgan.unconditional_layers" if unconditional else "acgan.layers"
            raise ValidationError(f"tap {layer} is not listed in {block}")
        jobs = [(layer, unconditional)]

    trained = []
    for k, uncond in jobs:
        feats = _features_at(clf, train_x, k)
        gcfg = GANConfig(
            epochs=cfg.acgan.epochs,
            batch_size=cfg.acgan.batch_size,
            lr=cfg.acgan.lr,
            latent_dim=cfg.acgan.latent_dim,
            conditional=not uncond,
            mlp_hidden=cfg.acgan.mlp_hidden,
            g_base_channels=cfg.acgan.g_base_channels,
            d_base_channels=cfg.acgan.d_base_channels,
            instance_noise=cfg.acgan.instance_noise,
        )
        model = train_acgan(
            feats,
            None if uncond else train_y,
            None if uncond else split.class_count,
            gcfg,
            seed=_gan_seed(cfg.seed, k, uncond),
            modeled_layer=k,
        )
        meta = make_meta(config_hash(cfg), cfg.seed, "train-acgan",
                         split_meta.get("dataset_hash"), layer=k, unconditional=uncond,
                         warnings=model.train_log.get("warnings", []))
        save_torch(paths.gan(k, uncond), gan_state(model), meta)
        label = "unconditional" if uncond else "conditional"
        epochs_log = model.train_log.get("epochs", [])
        last = {key: round(v, 4) for key, v in epochs_log[-1].items()} if epochs_log else {}
        print(f"train-acgan: tap {k} ({label}, {model.preset}) final losses {last}")
        for warning in model.train_log.get("warnings", []):
            print(f"train-acgan: warning: {warning}")
        trained.append(model)
    return trained


# --------------------------------------------------------------- stage: attacks


def craft_attacks_stage(cfg: ExperimentConfig) -> dict:
    paths = run_paths(cfg.output_dir)
    split, split_meta = _load_split_artifact(paths)
    clf, _ = _load_classifier_artifact(paths)
    results = {}
    for block in cfg.attacks:
        spec = block.to_spec()
        records = craft_attack_set(clf, split.test, spec, limit=block.limit)
        n_ok = len(successful(records))
        meta = make_meta(config_hash(cfg), cfg.seed, "craft-attacks",
                         split_meta.get("dataset_hash"), attack=block.name,
                         attempted=len(records), succeeded=n_ok,
                         spec={f.name: getattr(spec, f.name) for f in fields(spec)})
        save_npz(paths.attack_set(block.name), attack_set_arrays(records), meta)
        header = ["record_id", "true_label", "original_prediction", "target",
                  "success", "linf", "l2", "target_posterior", "iterations"]
        rows = [[i, r.true_label, r.original_prediction, r.target, r.success,
                 r.linf, r.l2, r.target_posterior, r.iterations]
                for i, r in enumerate(records)]
        write_csv(paths.attack_csv(block.name), header, rows, meta)
        print(f"craft-attacks: {block.name}: {n_ok}/{len(records)} succeeded "
              f"({n_ok / len(records):.1%})")
        results[block.name] = records
    return results


def _load_attack_records(paths: RunPaths, name: str):
    arrays, meta = load_npz(paths.attack_set(name), f"attack set `{name}`", "craft-attacks")
    return records_from_arrays(arrays), meta


# --------------------------------------------------------------- stage: scoring


def _latent_values(gan: GANModel, feats: np.ndarray, preds: np.ndarray, budget,
                   seed: int) -> np.ndarray:
    values = []
    for i, start in enumerate(range(0, len(feats), SEARCH_CHUNK)):
        chunk = feats[start : start + SEARCH_CHUNK]
        labels = preds[start : start + SEARCH_CHUNK] if gan.conditional else None
        results = latent_search_batch(gan, chunk, labels, budget, seed=seed + i)
        values.extend(r.value for r in results)
    return np.array(values, dtype=np.float64)


def _sample_rows(cfg: ExperimentConfig, layer: int, set_stats: dict, thresholds: dict):
    """Per-sample score rows for one layer: id, statistics, and the
    calibrated verdict of every configured method (blank where a method's
    statistic was not computed for this layer)."""
    methods = list(cfg.detector.methods)
    header = ["sample_id", "layer", "predicted_class", "s_r", "s_c", "s_g", "s_d",
              "p_value", "label"] + [f"verdict_{m}" for m in methods]
    configs = {m: DetectorConfig(method=m, layer=layer) for m in methods}
    rows = []
    for name, stats in set_stats.items():
        label = "clean" if name in ("calibration", "clean") else "attack"
        s_g = stats.get("s_g")
        p = stats.get("p")
        for i in range(len(stats["s_r"])):
            scored = DetectionScores(
                s_r=float(stats["s_r"][i]),
                s_c=float(stats["s_c"][i]),
                s_d=float(stats["s_d"][i]),
                predicted_class=int(stats["pred"][i]),
                layer=layer,
                s_g=None if s_g is None else float(s_g[i]),
                p_value=None if p is None else float(p[i]),
            )
            row = [f"{name}-{i:04d}", layer, scored.predicted_class, scored.s_r,
                   scored.s_c, "" if s_g is None else scored.s_g, scored.s_d,
                   "" if p is None else scored.p_value, label]
            for m in methods:
                threshold = thresholds.get(m)
                stat_ready = ((m == "d-ad")
                              or (m == "g-ad" and s_g is not None)
                              or (m == "all-ad" and p is not None))
                row.append(detect(scored, configs[m], threshold)
                           if stat_ready and threshold is not None else "")
            rows.append(row)
    return header, rows


def score_stage(cfg: ExperimentConfig) -> dict:
    paths = run_paths(cfg.output_dir)
    split, split_meta = _load_split_artifact(paths)
    clf, _ = _load_classifier_artifact(paths)
    arrays = split_arrays(split)
    budget = cfg.detector.budget.to_budget()

    cal_x = arrays["val"][0]
    if cfg.detector.calibration_count is not None:
        cal_x = cal_x[: cfg.detector.calibration_count]
    clean_x = arrays["test"][0]
    if cfg.detector.clean_count is not None:
        clean_x = clean_x[: cfg.detector.clean_count]

    sets = {"calibration": cal_x, "clean": clean_x}
    attack_metas = {}
    for block in cfg.attacks:
        records, meta = _load_attack_records(paths, block.name)
        attack_metas[f"attacks-{block.name}"] = meta
        hits = successful(records)
        if not hits:
            raise ValidationError(f"attack set `{block.name}` has no successful records to score")
        sets[block.name] = np.stack([r.adversarial for r in hits])
    check_same_dataset({"split": split_meta, **attack_metas})

    want_g = "g-ad" in cfg.detector.methods
    want_all = "all-ad" in cfg.detector.methods
    out = {}
    for k in cfg.detector.layers:
        gan = _load_conditional_gan(paths, k)
        payload, set_stats = {}, {}
        for name, xs in sets.items():
            preds = _predict_all(clf, xs)
            feats = _features_at(clf, xs, k)
            disc = score_discriminator_batch(gan, feats, preds)
            stats = {
                "s_r": np.array([t[0] for t in disc], dtype=np.float64),
                "s_c": np.array([t[1] for t in disc], dtype=np.float64),
                "s_d": np.array([t[2] for t in disc], dtype=np.float64),
                "pred": preds.astype(np.int64),
            }
            if want_g and k in cfg.detector.g_ad_layers:
                stats["s_g"] = _latent_values(gan, feats, preds, budget,
                                              seed=cfg.seed + 1000 * (k + 1))
            set_stats[name] = stats

        thresholds = {
            "d-ad": calibrate_threshold("d-ad", set_stats["calibration"]["s_d"],
                                        cfg.detector.target_fpr),
            "all-ad": cfg.detector.target_fpr,
        }
        if "s_g" in set_stats["calibration"]:
            thresholds["g-ad"] = calibrate_threshold("g-ad", set_stats["calibration"]["s_g"],
                                                     cfg.detector.target_fpr)

        gmm_info = {}
        if want_all:
            feature_names = ["s_r", "s_c"]
            if cfg.detector.include_generator_statistic:
                feature_names.append("s_g")
            cal_vec = np.column_stack([set_stats["calibration"][f] for f in feature_names])
            components = cfg.detector.gmm_components
            if cfg.detector.select_components:
                components = select_component_count(cal_vec, seed=cfg.seed)
            null = fit_all_ad(cal_vec, component_count=components, seed=cfg.seed,
                              feature_names=tuple(feature_names))
            for name, stats in set_stats.items():
                vec = np.column_stack([stats[f] for f in feature_names])
                stats["p"] = p_value(null, vec)
            gmm_info = {"components": components, "converged": null.converged,
                        "warnings": null.warnings, "features": feature_names}
            for warning in null.warnings:
                print(f"score: tap {k}: warning: {warning}")

        for name, stats in set_stats.items():
            for key, arr in stats.items():
                payload[f"{name}__{key}"] = arr
        meta = make_meta(config_hash(cfg), cfg.seed, "score", split_meta.get("dataset_hash"),
                         layer=k, sets=sorted(sets), thresholds=thresholds, gmm=gmm_info,
                         counts={name: len(xs) for name, xs in sets.items()})
        save_npz(paths.scores(k), payload, meta)
        write_csv(paths.scores_csv(k), *_sample_rows(cfg, k, set_stats, thresholds), meta)
        med = {name: round(float(np.median(stats["s_d"])), 3)
               for name, stats in set_stats.items()}
        print(f"score: tap {k}: median s_d {med}")
        out[k] = set_stats

    for k in cfg.acgan.unconditional_layers:
        gan, _ = _load_gan_artifact(paths, k, unconditional=True)
        payload = {}
        for name, xs in sets.items():
            feats = _features_at(clf, xs, k)
            payload[f"{name}__s_r"] = score_realness_batch(gan, feats)
        meta = make_meta(config_hash(cfg), cfg.seed, "score", split_meta.get("dataset_hash"),
                         layer=k, sets=sorted(sets), unconditional=True)
        save_npz(paths.uncond_scores(k), payload, meta)
        print(f"score: tap {k}: unconditional baseline realness scored")
    return out


# -------------------------------------------------------------- stage: evaluate


def evaluate_stage(cfg: ExperimentConfig) -> list:
    paths = run_paths(cfg.output_dir)
    attack_names = [a.name for a in cfg.attacks]
    rows, metas = [], {}

    for k in cfg.detector.layers:
        arrays, meta = load_npz(paths.scores(k), "scores", "score")
        metas[f"scores-layer{k}"] = meta
        for attack in attack_names:
            pairs = []
            if "d-ad" in cfg.detector.methods:
                pairs.append(("d-ad", f"{attack}__s_d", "clean__s_d", "low"))
            if "g-ad" in cfg.detector.methods and f"{attack}__s_g" in arrays:
                pairs.append(("g-ad", f"{attack}__s_g", "clean__s_g", "high"))
            if "all-ad" in cfg.detector.methods and f"{attack}__p" in arrays:
                pairs.append(("all-ad", f"{attack}__p", "clean__p", "low"))
            for method, a_key, c_key, orientation in pairs:
                curve = roc_curve(arrays[a_key], arrays[c_key], orientation=orientation)
                rows.append([cfg.dataset.name, attack, method, k,
                             pauc(curve, cfg.evaluate.fpr_max), auc(curve),
                             len(arrays[a_key]), len(arrays[c_key])])

    for k in cfg.acgan.unconditional_layers:
        arrays, meta = load_npz(paths.uncond_scores(k), "unconditional scores", "score")
        metas[f"uncond-scores-layer{k}"] = meta
        for attack in attack_names:
            curve = roc_curve(arrays[f"{attack}__s_r"], arrays["clean__s_r"], orientation="low")
            rows.append([cfg.dataset.name, attack, "uncond-d", k,
                         pauc(curve, cfg.evaluate.fpr_max), auc(curve),
                         len(arrays[f"{attack}__s_r"]), len(arrays["clean__s_r"])])

    check_same_dataset(metas)
    ds_hash = next(iter(metas.values())).get("dataset_hash")
    rows.sort(key=lambda r: (r[1], r[2], r[3]))
    meta = make_meta(config_hash(cfg), cfg.seed, "evaluate", ds_hash)
    write_csv(paths.detection_csv, DETECTION_HEADER, rows, meta)
    print(f"evaluate: wrote {len(rows)} detection cells to {paths.detection_csv}")
    return rows


# ------------------------------------------------- stage: robust classification


def robust_classify_stage(cfg: ExperimentConfig) -> list:
    paths = run_paths(cfg.output_dir)
    if not cfg.robust_classify.attacks:
        raise ValidationError("robust_classify.attacks is empty; nothing to correct")
    clf, _ = _load_classifier_artifact(paths)
    k = cfg.robust_classify.layer
    gan = _load_conditional_gan(paths, k)
    rows, metas = [], {}
    for name in cfg.robust_classify.attacks:
        records, meta = _load_attack_records(paths, name)
        metas[f"attacks-{name}"] = meta
        hits = successful(records)
        if not hits:
            raise ValidationError(f"attack set `{name}` has no successful records to correct")
        adv = np.stack([r.adversarial for r in hits])
        truth = np.array([r.true_label for r in hits], dtype=np.int64)
        corrected = robust_classify_batch(gan, _features_at(clf, adv, k))
        report = accuracy_report(truth, corrected)
        attacked_acc = float((_predict_all(clf, adv) == truth).mean())
        rows.append([cfg.dataset.name, name, k, report.count, report.accuracy, attacked_acc])
        print(f"robust-classify: {name}: corrected accuracy {report.accuracy:.4f} "
              f"over {report.count} records (attacked classifier: {attacked_acc:.4f})")
    check_same_dataset(metas)
    ds_hash = next(iter(metas.values())).get("dataset_hash")
    rows.sort(key=lambda r: r[1])
    meta = make_meta(config_hash(cfg), cfg.seed, "robust-classify", ds_hash)
    write_csv(paths.robust_csv, ROBUST_HEADER, rows, meta)
    return rows


# ------------------------------------------------------------- stage: visualize


def visualize_stage(cfg: ExperimentConfig) -> dict:
    paths = run_paths(cfg.output_dir)
    if not cfg.visualize.layers:
        raise ValidationError("visualize.layers is empty; nothing to draw")
    split, _ = _load_split_artifact(paths)
    clf, _ = _load_classifier_artifact(paths)
    gans = {k: _load_conditional_gan(paths, k) for k in cfg.visualize.layers}
    records, _ = _load_attack_records(paths, cfg.visualize.attack)

    a, b, count = cfg.visualize.source_class, cfg.visualize.target_class, cfg.visualize.count
    test_x, test_y = split_arrays(split)["test"]
    clean_a = test_x[test_y == a][:count]
    clean_b = test_x[test_y == b][:count]
    attacked = [r.adversarial for r in successful(records)
                if r.true_label == a and r.target == b][:count]
    if len(attacked) < 5:
        raise ValidationError(
            f"attack set `{cfg.visualize.attack}` has only {len(attacked)} successful "
            f"{a}->{b} records; targets follow the next-class rule, so pick "
            f"target_class = source_class + 1 (mod class count)"
        )
    groups = {"clean_source": clean_a, "clean_target": clean_b, "attacked": np.stack(attacked)}
    written = tsne_layer_figure(clf, groups, gans, cfg.visualize.layers, paths.figures_dir,
                                cfg.dataset.name, seed=cfg.seed, fmt=cfg.visualize.format)
    for k, files in written.items():
        print(f"visualize: tap {k}: {files['figure'].name} + {files['coordinates'].name}")
    return written


# ---------------------------------------------------------------- stage: report


def report_stage(cfg: ExperimentConfig) -> dict:
    paths = run_paths(cfg.output_dir)
    det_rows, det_meta = read_csv(paths.detection_csv, "detection table", "evaluate")
    rc_rows, rc_meta = read_csv(paths.robust_csv, "robust-classification table",
                                "robust-classify")
    split_meta = _load_split_artifact(paths)[1]
    check_same_dataset({"detection": det_meta, "robust": rc_meta, "split": split_meta})

    ds_hash = det_meta.get("dataset_hash")
    meta = make_meta(config_hash(cfg), cfg.seed, "report", ds_hash)
    write_csv(paths.table1, DETECTION_HEADER,
              [[row[col] for col in DETECTION_HEADER] for row in det_rows], meta)
    write_csv(paths.table2, ROBUST_HEADER,
              [[row[col] for col in ROBUST_HEADER] for row in rc_rows], meta)
    print(f"report: {paths.table1} ({len(det_rows)} cells), "
          f"{paths.table2} ({len(rc_rows)} cells)")
    return {"table1": paths.table1, "table2": paths.table2}


STAGES = (
    "prepare-data",
    "train-classifier",
    "train-acgan",
    "craft-attacks",
    "score",
    "evaluate",
    "visualize",
    "robust-classify",
    "report",
)


def run_stage(name: str, cfg: ExperimentConfig, layer: int | None = None,
              unconditional: bool = False):
    if name == "prepare-data":
        return prepare_data(cfg)
    if name == "train-classifier":
        return train_classifier_stage(cfg)
    if name == "train-acgan":
        return train_acgan_stage(cfg, layer=layer, unconditional=unconditional)
    if name == "craft-attacks":
        return craft_attacks_stage(cfg)
    if name == "score":
        return score_stage(cfg)
    if name == "evaluate":
        return evaluate_stage(cfg)
    if name == "visualize":
        return visualize_stage(cfg)
    if name == "robust-classify":
        return robust_classify_stage(cfg)
    if name == "report":
        return report_stage(cfg)
    raise ValidationError(f"unknown stage {name!r}")


def run_all(cfg: ExperimentConfig) -> dict:
    """Every stage in dependency order."""
    for name in STAGES:
        result = run_stage(name, cfg)
    return result
