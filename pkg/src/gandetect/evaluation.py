"""ROC/pAUC evaluation, accuracy tables, and layer-separability figures."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ValidationError


@dataclass
class ROCCurve:
    """Threshold-sweep ROC; points run from (0, 0) to (1, 1)."""

    points: np.ndarray  # (k, 2) columns fpr, tpr
    orientation: str    # "high" or "low": which direction means anomalous

    @property
    def fpr(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def tpr(self) -> np.ndarray:
        return self.points[:, 1]


def _as_scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{name} scores must form a nonempty 1-D list")
    if np.isnan(arr).any():
        raise ValidationError(f"{name} scores contain NaN")
    return arr


def roc_curve(anomalous_scores, clean_scores, orientation: str = "high") -> ROCCurve:
    """Sweep every distinct score as a threshold; ties share one threshold.

    ``orientation="high"`` means larger scores look more anomalous;
    ``"low"`` means smaller scores do (s_r, s_d, p-values).
    """
    a = _as_scores(anomalous_scores, "anomalous")
    c = _as_scores(clean_scores, "clean")
    if orientation == "low":
        a, c = -a, -c
    elif orientation != "high":
        raise ValidationError(f"unknown orientation {orientation!r}")

    thresholds = np.unique(np.concatenate([a, c]))[::-1]
    points = [(0.0, 0.0)]
    for t in thresholds:
        points.append((float((c >= t).mean()), float((a >= t).mean())))
    return ROCCurve(points=np.array(points, dtype=np.float64), orientation=orientation)


def pauc(curve: ROCCurve, fpr_max: float = 0.2) -> float:
    """Unnormalized trapezoidal area under TPR for FPR in [0, fpr_max]."""
    if not 0.0 < fpr_max <= 1.0:
        raise ValidationError("fpr_max must lie in (0, 1]")
    pts = curve.points
    x, y = pts[:, 0], pts[:, 1]
    if fpr_max >= x[-1]:
        region_x, region_y = x, y
    else:
        idx = int(np.searchsorted(x, fpr_max, side="right"))
        x0, y0 = pts[idx - 1]
        x1, y1 = pts[idx]
        yb = y0 if x1 == x0 else y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0)
        region_x = np.concatenate([x[:idx], [fpr_max]])
        region_y = np.concatenate([y[:idx], [yb]])
    return float(np.trapezoid(region_y, region_x))


def auc(curve: ROCCurve) -> float:
    return pauc(curve, 1.0)


@dataclass
class EvalRow:
    """One detection-table cell."""

    dataset: str
    attack: str
    method: str
    layer: int
    pauc: float
    auc: float
    n_attack: int
    n_clean: int


@dataclass
class RCAccuracy:
    """Robust-classification accuracy over an attack set."""

    accuracy: float
    count: int
    per_class: dict = field(default_factory=dict)


def accuracy_report(true_labels, corrected_labels) -> RCAccuracy:
    """Fraction of attacked inputs whose corrected label is the true one."""
    truth = np.asarray(true_labels, dtype=np.int64)
    corrected = np.asarray(corrected_labels, dtype=np.int64)
    if truth.shape != corrected.shape or truth.ndim != 1:
        raise ValidationError(
            f"label lists misaligned: {truth.shape} ground truth vs {corrected.shape} corrected"
        )
    if truth.size == 0:
        raise ValidationError("no records to evaluate")
    hits = truth == corrected
    per_class = {}
    for c in np.unique(truth):
        mask = truth == c
        per_class[int(c)] = float(hits[mask].mean())
    return RCAccuracy(accuracy=float(hits.mean()), count=int(truth.size), per_class=per_class)


# -------------------------------------------------------------- t-SNE figures

TSNE_PERPLEXITY = 30.0
TSNE_ITERATIONS = 1000

GROUP_COLORS = {"clean_source": "tab:blue", "clean_target": "tab:green", "attacked": "tab:orange"}


def tsne_embed(features: np.ndarray, seed: int, perplexity: float = TSNE_PERPLEXITY,
               iterations: int = TSNE_ITERATIONS) -> np.ndarray:
    """Seeded 2-D t-SNE of row vectors."""
    from sklearn.manifold import TSNE

    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) < 5:
        raise ValidationError("need a 2-D feature matrix with at least 5 rows to embed")
    perplexity = min(perplexity, (len(features) - 1) / 3.0)
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        max_iter=iterations,
        random_state=seed,
        init="pca",
    )
    return tsne.fit_transform(features)


def tsne_layer_figure(classifier, groups: dict, gans: dict, layers, out_dir, dataset_name: str,
                      seed: int, fmt: str = "png", perplexity: float = TSNE_PERPLEXITY,
                      iterations: int = TSNE_ITERATIONS) -> dict:
    """One scatter per layer of the discriminator's penultimate activations.

    ``groups`` maps group name (clean_source / clean_target / attacked) to an
    image batch; ``gans`` maps tap index to the model trained on that tap.
    Every figure gets a CSV sidecar with the embedded coordinates.
    """
    from .acgan import discriminator_features
    from .classifier import extract_features_batch

    for name, xs in groups.items():
        if len(xs) == 0:
            raise ValidationError(f"sample group {name!r} is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = {}
    for layer in layers:
        layer_idx = classifier.tap_index(layer)
        if layer_idx not in gans:
            raise ValidationError(f"no trained model for tap {layer_idx}; train one first")
        gan = gans[layer_idx]
        names, feats = [], []
        for name, xs in groups.items():
            h = xs if layer_idx == 0 else extract_features_batch(classifier, xs, layer_idx)
            feats.append(discriminator_features(gan, h))
            names.extend([name] * len(xs))
        coords = tsne_embed(np.vstack(feats), seed=seed, perplexity=perplexity,
                            iterations=iterations)

        base = out_dir / f"{dataset_name}_{layer_idx}_tsne"
        fig_path = base.with_suffix(f".{fmt}")
        csv_path = base.with_suffix(".csv")
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["group", "x", "y"])
            for name, (cx, cy) in zip(names, coords):
                writer.writerow([name, np.format_float_scientific(cx), np.format_float_scientific(cy)])

        fig, ax = plt.subplots(figsize=(5, 5))
        for name in groups:
            mask = np.array([n == name for n in names])
            ax.scatter(coords[mask, 0], coords[mask, 1], s=12,
                       c=GROUP_COLORS.get(name, "tab:gray"), label=name)
        ax.set_title(f"{dataset_name} tap {layer_idx}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(fig_path, dpi=120)
        plt.close(fig)
        written[layer_idx] = {"figure": fig_path, "coordinates": csv_path}
    return written


def group_centroid_distance(coords: np.ndarray, names: list, group_a: str, group_b: str) -> float:
    """Distance between two groups' embedding centroids."""
    names = np.asarray(names)
    a = coords[names == group_a]
    b = coords[names == group_b]
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("both groups must be present in the embedding")
    return float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))
