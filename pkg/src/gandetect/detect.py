"""Detection statistics, their fusion, and decision rules.

Four statistics describe how anomalous an input looks to a trained
conditional GAN, always conditioned on the victim classifier's decision
``ĉ`` for that input:

* ``s_r``: the discriminator's realness output D(x);
* ``s_c``: the discriminator's class posterior at ĉ;
* ``s_g``: the class-conditional reconstruction loss
  ``min_z ||x - G(z|ĉ)||^2`` found by gradient search over the latent;
* ``s_d = log s_r + log s_c``: their log fusion (low = anomalous).

``All-AD`` instead fits a Gaussian mixture to clean (s_r, s_c) vectors
and flags inputs whose empirical p-value under that null is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .acgan import GANModel, sample_latent
from .classifier import ClassifierModel, extract_features_batch, predict_batch
from .errors import CapabilityError, NumericError, ValidationError

NEG_INF = float("-inf")

ORIENTATIONS = {"s_r": "low", "s_c": "low", "s_d": "low", "s_g": "high", "p_value": "low"}


@dataclass
class DetectionScores:
    s_r: float
    s_c: float | None
    s_d: float
    predicted_class: int
    layer: int
    s_g: float | None = None
    p_value: float | None = None


@dataclass(frozen=True)
class SearchBudget:
    restarts: int = 8
    steps: int = 500
    step_size: float = 0.05

    def validated(self) -> "SearchBudget":
        if self.restarts < 1 or self.steps < 0 or self.step_size <= 0:
            raise ValidationError(f"invalid latent search budget {self}")
        return self


@dataclass(frozen=True)
class DetectorConfig:
    method: str  # "d-ad", "g-ad", or "all-ad"
    layer: int = 0
    budget: SearchBudget = SearchBudget()
    component_count: int = 5
    target_fpr: float = 0.05

    def validated(self) -> "DetectorConfig":
        if self.method not in ("d-ad", "g-ad", "all-ad"):
            raise ValidationError(f"unknown detection method {self.method!r}")
        self.budget.validated()
        if self.component_count < 1:
            raise ValidationError("component count must be >= 1")
        if not 0 < self.target_fpr < 1:
            raise ValidationError("target false-positive rate must lie in (0, 1)")
        return self


def fuse_log(s_r: float, s_c: float) -> float:
    """log s_r + log s_c, with a -inf sentinel when either factor is zero."""
    if s_r < 0 or s_c < 0:
        raise ValidationError("probabilities cannot be negative")
    if s_r == 0.0 or s_c == 0.0:
        return NEG_INF
    return math.log(s_r) + math.log(s_c)


def score_discriminator(gan: GANModel, x: np.ndarray, predicted_class: int):
    """(s_r, s_c, s_d) from one discriminator forward pass."""
    values = score_discriminator_batch(gan, x[None], np.array([predicted_class]))
    return values[0]


def score_discriminator_batch(gan: GANModel, xs: np.ndarray, predicted_classes: np.ndarray):
    if not gan.conditional:
        raise CapabilityError("class posterior s_c requires a conditional model")
    predicted_classes = np.asarray(predicted_classes, dtype=np.int64)
    if predicted_classes.min() < 0 or predicted_classes.max() >= gan.class_count:
        raise ValidationError(f"predicted class outside 0..{gan.class_count - 1}")
    from .acgan import discriminate_batch

    realness, posterior = discriminate_batch(gan, xs)
    s_c = posterior[np.arange(len(xs)), predicted_classes]
    return [(float(r), float(c), fuse_log(float(r), float(c))) for r, c in zip(realness, s_c)]


def score_realness_batch(gan: GANModel, xs: np.ndarray) -> np.ndarray:
    """Realness D(x) alone; the statistic available to unconditional models."""
    from .acgan import discriminate_batch

    realness, _ = discriminate_batch(gan, xs)
    return realness


@dataclass
class LatentSearchResult:
    value: float                 # best squared reconstruction error found
    best_z: np.ndarray
    init_objectives: list        # objective at every initialization point
    trace: list                  # best-so-far objective after each step

    def __float__(self):
        return self.value


def _search_labels(gan: GANModel, labels, n: int):
    if gan.conditional:
        if labels is None:
            raise ValidationError("conditional model requires the decided class")
        arr = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,)).copy()
        if arr.min() < 0 or arr.max() >= gan.class_count:
            raise ValidationError(f"class label outside 0..{gan.class_count - 1}")
        return torch.nn.functional.one_hot(torch.as_tensor(arr), gan.class_count).float()
    if labels is not None:
        raise CapabilityError("unconditional model takes no class label")
    return None


def latent_search_batch(gan: GANModel, xs: np.ndarray, labels, budget: SearchBudget,
                        seed: int, warm_starts: np.ndarray | None = None,
                        record: bool = False):
    """Minimize ``||x - G(z|c)||^2`` over z for a batch of inputs.

    All restarts of all samples advance together under plain gradient
    descent on the per-sample mean squared error, with the step size
    decayed harmonically to a tenth of its initial value and z clamped
    to the latent prior's support [-1, 1] after every step. Reported
    objectives are squared L2 norms (sums, not means).
    """
    budget = budget.validated()
    xs = np.asarray(xs, dtype=np.float32)
    if tuple(xs.shape[1:]) != gan.data_shape:
        raise ValidationError(f"batch shape {xs.shape} does not match data shape {gan.data_shape}")
    n = len(xs)
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    r = budget.restarts
    extra = 0 if warm_starts is None else len(warm_starts)

    # z layout: sample-major, its restarts (plus warm starts) contiguous
    z0 = sample_latent(gan.latent_dim, n * r, rng).reshape(n, r, gan.latent_dim)
    if extra:
        warm = np.asarray(warm_starts, dtype=np.float32)
        if warm.shape != (extra, gan.latent_dim):
            raise ValidationError(f"warm starts must have shape (k, {gan.latent_dim})")
        z0 = np.concatenate([z0, np.broadcast_to(warm, (n, extra, gan.latent_dim))], axis=1)
        r += extra

    z = torch.as_tensor(z0.reshape(n * r, gan.latent_dim).copy())
    x_rep = torch.as_tensor(np.repeat(xs, r, axis=0))
    onehot = _search_labels(gan, None if labels is None else np.repeat(labels, r), n * r)
    dims = tuple(range(1, xs.ndim))
    denom = float(np.prod(gan.data_shape))

    gan.generator.eval()
    best_val = np.full(n * r, np.inf)
    best_z = z0.reshape(n * r, -1).copy()
    traces: list[list] = [[] for _ in range(n)] if record else []
    init_objectives = None

    z = z.requires_grad_(True)
    for step in range(budget.steps + 1):
        recon = gan.generator(z, onehot)
        sq_err = ((recon - x_rep) ** 2).sum(dim=dims)
        obj = sq_err.detach().numpy()
        if not np.all(np.isfinite(obj)):
            raise NumericError("latent search objective became non-finite")
        if step == 0:
            init_objectives = obj.reshape(n, r).copy()
        improved = obj < best_val
        best_val[improved] = obj[improved]
        best_z[improved] = z.detach().numpy()[improved]
        if record:
            per_sample = best_val.reshape(n, r).min(axis=1)
            for i in range(n):
                traces[i].append(float(per_sample[i]))
        if step == budget.steps:
            break
        loss = (sq_err / denom).sum()
        grad = torch.autograd.grad(loss, z)[0]
        lr = budget.step_size / (1.0 + 9.0 * step / max(1, budget.steps))
        with torch.no_grad():
            z -= lr * grad
            z.clamp_(-1.0, 1.0)

    best_val = best_val.reshape(n, r)
    best_z = best_z.reshape(n, r, -1)
    winners = best_val.argmin(axis=1)
    results = []
    for i in range(n):
        results.append(
            LatentSearchResult(
                value=float(best_val[i, winners[i]]),
                best_z=best_z[i, winners[i]].copy(),
                init_objectives=[float(v) for v in init_objectives[i]],
                trace=traces[i] if record else [],
            )
        )
    return results


def score_generator(gan: GANModel, x: np.ndarray, predicted_class, budget: SearchBudget,
                    seed: int = 0, warm_starts: np.ndarray | None = None,
                    record: bool = True) -> LatentSearchResult:
    """Class-conditional reconstruction loss for one input."""
    labels = None if predicted_class is None else np.array([predicted_class])
    (result,) = latent_search_batch(gan, x[None], labels, budget, seed,
                                    warm_starts=warm_starts, record=record)
    return result


# ------------------------------------------------------------------- All-AD


@dataclass
class GMMNullModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    component_count: int
    fit_log_likelihood: float
    calibration_logpdf: np.ndarray  # sorted ascending
    feature_names: tuple
    converged: bool = True
    warnings: list = field(default_factory=list)

    def logpdf(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vectors.shape[1] != self.means.shape[1]:
            raise ValidationError(
                f"score vector has {vectors.shape[1]} features, null model has {self.means.shape[1]}"
            )
        parts = np.empty((len(vectors), self.component_count))
        d = self.means.shape[1]
        for k in range(self.component_count):
            chol = np.linalg.cholesky(self.covariances[k])
            diff = vectors - self.means[k]
            y = np.linalg.solve(chol, diff.T).T
            maha = (y**2).sum(axis=1)
            logdet = 2.0 * np.log(np.diag(chol)).sum()
            parts[:, k] = math.log(self.weights[k]) - 0.5 * (d * math.log(2 * math.pi) + logdet + maha)
        top = parts.max(axis=1, keepdims=True)
        return (top[:, 0] + np.log(np.exp(parts - top).sum(axis=1)))


def fit_all_ad(calibration_vectors: np.ndarray, component_count: int = 5, seed: int = 0,
               feature_names=("s_r", "s_c")) -> GMMNullModel:
    """Fit the clean-score null model and cache its calibration densities."""
    from sklearn.mixture import GaussianMixture

    vectors = np.asarray(calibration_vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValidationError("calibration scores must form a 2-D array")
    if len(vectors) < 50:
        raise ValidationError(f"need at least 50 calibration samples, got {len(vectors)}")
    if component_count < 1:
        raise ValidationError("component count must be >= 1")

    gmm = GaussianMixture(
        n_components=component_count,
        covariance_type="full",
        reg_covar=1e-6,
        random_state=seed,
        n_init=1,
        max_iter=200,
    )
    import warnings as _warnings

    notes = []
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")  # convergence is surfaced via the flag below
        gmm.fit(vectors)
    if not gmm.converged_:
        notes.append("EM did not converge within max iterations; using best-so-far fit")

    model = GMMNullModel(
        weights=gmm.weights_.copy(),
        means=gmm.means_.copy(),
        covariances=gmm.covariances_.copy(),
        component_count=component_count,
        fit_log_likelihood=float(gmm.score(vectors) * len(vectors)),
        calibration_logpdf=np.array([]),
        feature_names=tuple(feature_names),
        converged=bool(gmm.converged_),
        warnings=notes,
    )
    model.calibration_logpdf = np.sort(model.logpdf(vectors))
    return model


def select_component_count(calibration_vectors: np.ndarray, candidates=(1, 3, 5, 10),
                           seed: int = 0, val_fraction: float = 0.25) -> int:
    """Pick the candidate whose fit scores held-out clean data best."""
    vectors = np.asarray(calibration_vectors, dtype=np.float64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(vectors))
    n_val = max(1, int(len(vectors) * val_fraction))
    val, train = vectors[order[:n_val]], vectors[order[n_val:]]
    best, best_ll = None, -np.inf
    for k in sorted(candidates):
        if len(train) < 50 or len(train) < k * 2:
            continue
        model = fit_all_ad(train, component_count=k, seed=seed)
        ll = float(model.logpdf(val).mean())
        if ll > best_ll:
            best, best_ll = k, ll
    if best is None:
        raise ValidationError("not enough calibration data for any candidate component count")
    return best


def p_value(null: GMMNullModel, vectors: np.ndarray) -> np.ndarray:
    """Empirical p-value with +1 smoothing; low density maps to low p."""
    if null.calibration_logpdf.size == 0:
        raise ValidationError("null model has no calibration densities")
    logp = null.logpdf(vectors)
    n = len(null.calibration_logpdf)
    ranks = np.searchsorted(null.calibration_logpdf, logp, side="right")
    return (1.0 + ranks) / (n + 1.0)


# -------------------------------------------------------------- thresholds


def calibrate_threshold(method: str, clean_values: np.ndarray, target_fpr: float) -> float:
    """Threshold flagging ≈ target_fpr of clean data for the given method."""
    if not 0 < target_fpr < 1:
        raise ValidationError("target false-positive rate must lie in (0, 1)")
    clean_values = np.asarray(clean_values, dtype=np.float64)
    if method == "d-ad":
        return float(np.quantile(clean_values, target_fpr))
    if method == "g-ad":
        return float(np.quantile(clean_values, 1.0 - target_fpr))
    if method == "all-ad":
        return float(target_fpr)
    raise ValidationError(f"unknown detection method {method!r}")


def detect(scores: DetectionScores, config: DetectorConfig, threshold: float) -> str:
    """'attack' or 'clean' for one scored sample under the configured method."""
    config = config.validated()
    if config.method == "d-ad":
        return "attack" if scores.s_d < threshold else "clean"
    if config.method == "g-ad":
        if scores.s_g is None:
            raise CapabilityError("g-ad requires s_g; run the latent search")
        return "attack" if scores.s_g > threshold else "clean"
    if scores.p_value is None:
        raise CapabilityError("all-ad requires a p-value; fit the null model")
    return "attack" if scores.p_value < threshold else "clean"


# ------------------------------------------------------------ layer scoring


def score_internal_batch(classifier: ClassifierModel, gan: GANModel, xs: np.ndarray,
                         layer, budget: SearchBudget | None = None, seed: int = 0,
                         batch_size: int = 256) -> list[DetectionScores]:
    """Score inputs at an internal tap; the decided class always comes from
    the classifier's full forward pass on the raw input."""
    layer_idx = classifier.tap_index(layer)
    if gan.modeled_layer != layer_idx:
        raise ValidationError(
            f"model was trained on tap {gan.modeled_layer}, scoring requested tap {layer_idx}"
        )
    preds = np.concatenate(
        [predict_batch(classifier, xs[i : i + batch_size])[0] for i in range(0, len(xs), batch_size)]
    )
    feats = (
        xs
        if layer_idx == 0
        else np.concatenate(
            [extract_features_batch(classifier, xs[i : i + batch_size], layer_idx)
             for i in range(0, len(xs), batch_size)]
        )
    )
    disc = score_discriminator_batch(gan, feats, preds)
    s_g = None
    if budget is not None:
        results = latent_search_batch(gan, feats, preds, budget, seed)
        s_g = [r.value for r in results]
    return [
        DetectionScores(
            s_r=disc[i][0],
            s_c=disc[i][1],
            s_d=disc[i][2],
            predicted_class=int(preds[i]),
            layer=layer_idx,
            s_g=None if s_g is None else s_g[i],
        )
        for i in range(len(xs))
    ]


def score_internal(classifier: ClassifierModel, gan: GANModel, x: np.ndarray,
                   layer, budget: SearchBudget | None = None, seed: int = 0) -> DetectionScores:
    return score_internal_batch(classifier, gan, x[None], layer, budget, seed)[0]


# -------------------------------------------------------- robust classifier


def robust_classify_batch(gan: GANModel, xs: np.ndarray) -> np.ndarray:
    """Corrected labels: argmax of the discriminator's class posterior."""
    if not gan.conditional:
        raise CapabilityError("robust classification requires a conditional model")
    from .acgan import discriminate_batch

    _, posterior = discriminate_batch(gan, xs)
    return posterior.argmax(axis=1)


def robust_classify(gan: GANModel, x: np.ndarray) -> int:
    return int(robust_classify_batch(gan, x[None])[0])
