"""Targeted adversarial example crafting.

Two attacks are implemented against the victim classifier:

* fast gradient sign: a single step of size epsilon against the
  cross-entropy toward the target class, clipped back to [0, 1];
* an L2 attack that minimizes ``||x' - x||^2 + c * f(x')`` with
  ``f(x') = max(max_{i != t} Z_i - Z_t, -kappa)`` under a tanh
  change of variables, binary-searching the trade-off constant c and
  keeping the smallest-distortion iterate that fools the model.

Success is judged in one of two modes: ``low`` accepts any adversarial
the model labels as the target class, ``high`` additionally requires the
target posterior to exceed a confidence threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .classifier import ClassifierModel, CrossEntropyTarget, _param_dtype, input_gradient, predict_batch
from .data import LabeledImage
from .errors import EmptySetError, ValidationError

ATTACK_SET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "cw-l2"            # "fgsm" or "cw-l2"
    mode: str = "low"              # "low" or "high"
    epsilon: float = 0.3           # fgsm step size
    kappa: float = 14.0            # cw margin
    posterior_threshold: float = 0.9
    c_range: tuple = (1e-3, 1e2)
    outer_steps: int = 9
    inner_steps: int = 200
    lr: float = 0.01
    record_traces: bool = False

    def validated(self) -> "AttackSpec":
        if self.kind not in ("fgsm", "cw-l2"):
            raise ValidationError(f"unknown attack kind {self.kind!r}")
        if self.mode not in ("low", "high"):
            raise ValidationError(f"unknown confidence mode {self.mode!r}")
        if self.kind == "fgsm" and self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.kind == "cw-l2":
            if self.kappa < 0:
                raise ValidationError("kappa must be >= 0")
            lo, hi = self.c_range
            if not 0 < lo < hi:
                raise ValidationError(f"invalid c range {self.c_range}")
            if self.outer_steps < 1 or self.inner_steps < 1:
                raise ValidationError("outer and inner step counts must be >= 1")
        if not 0 < self.posterior_threshold < 1:
            raise ValidationError("posterior threshold must lie in (0, 1)")
        return self


@dataclass
class AttackRecord:
    original: np.ndarray
    adversarial: np.ndarray
    true_label: int
    original_prediction: int
    target: int
    kind: str
    mode: str
    success: bool
    linf: float                    # fgsm: pre-clip step size; cw: final sup norm
    l2: float                      # measured on the returned adversarial
    target_posterior: float
    iterations: int
    detail: dict = field(default_factory=dict)


def _success_mask(logits: np.ndarray, targets: np.ndarray, spec: AttackSpec) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    hit = p.argmax(axis=1) == targets
    if spec.mode == "high":
        hit &= p[np.arange(len(targets)), targets] > spec.posterior_threshold
    return hit


def _target_posteriors(model: ClassifierModel, xs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    _, posteriors = predict_batch(model, xs)
    return posteriors[np.arange(len(targets)), targets]


def fgsm_targeted(model: ClassifierModel, x: np.ndarray, target: int, spec: AttackSpec) -> AttackRecord:
    """One signed-gradient step toward the target class."""
    spec = replace(spec, kind="fgsm").validated()
    grad = input_gradient(model, x, CrossEntropyTarget(target=int(target)))
    # float64 keeps the recorded pre-clip step at exactly epsilon
    step = -spec.epsilon * np.sign(grad.astype(np.float64))
    adv = np.clip(x.astype(np.float64) + step, 0.0, 1.0).astype(np.float32)
    pred0, post0 = predict_batch(model, x[None].astype(np.float32))
    logits_adv = model.net(torch.as_tensor(adv[None], dtype=_param_dtype(model))).detach().numpy()
    success = bool(_success_mask(logits_adv, np.array([target]), spec)[0])
    return AttackRecord(
        original=x.astype(np.float32),
        adversarial=adv,
        true_label=-1,
        original_prediction=int(pred0[0]),
        target=int(target),
        kind="fgsm",
        mode=spec.mode,
        success=success,
        linf=float(np.abs(step).max()),
        l2=float(np.linalg.norm((adv - x).ravel())),
        target_posterior=float(_target_posteriors(model, adv[None], np.array([target]))[0]),
        iterations=1,
        detail={"epsilon": spec.epsilon},
    )


def _atanh_box(xs: torch.Tensor) -> torch.Tensor:
    return torch.atanh((2.0 * xs - 1.0) * (1.0 - 1e-6))


def cw_l2_targeted(model: ClassifierModel, xs: np.ndarray, targets: np.ndarray,
                   spec: AttackSpec) -> list[AttackRecord]:
    """Batched L2 attack; one record per input, in order.

    Each outer step restarts the perturbation at zero with the constant c
    at the geometric midpoint of the surviving bracket, then tightens the
    bracket on (any) success. Every inner iterate is tested and the
    smallest-L2 success across the whole search is returned.
    """
    spec = replace(spec, kind="cw-l2").validated()
    xs = np.asarray(xs, dtype=np.float32)
    targets = np.asarray(targets, dtype=np.int64)
    if len(xs) != len(targets):
        raise ValidationError("inputs and targets differ in length")
    if len(xs) == 0:
        return []
    n = len(xs)
    dtype = _param_dtype(model)
    model.net.eval()

    x_t = torch.as_tensor(xs, dtype=dtype)
    t_t = torch.as_tensor(targets)
    kappa = torch.tensor(float(spec.kappa), dtype=dtype)
    dims = tuple(range(1, xs.ndim))

    preds0, _ = predict_batch(model, xs)
    with torch.no_grad():
        logits0 = model.net(x_t).numpy()
    already = _success_mask(logits0, targets, spec)

    best_adv = xs.copy()
    best_l2sq = np.full(n, np.inf)
    best_c = np.full(n, np.nan)
    best_l2sq[already] = 0.0
    best_c[already] = 0.0

    lo = np.full(n, spec.c_range[0])
    hi = np.full(n, spec.c_range[1])
    active = ~already
    traces: list[list] = [[] for _ in range(n)]
    iterations = 0

    w0 = _atanh_box(x_t)
    onehot = torch.nn.functional.one_hot(t_t, model.class_count).to(dtype)

    last_attempt = xs.copy()
    for _outer in range(spec.outer_steps):
        if not active.any():
            break
        c = np.sqrt(lo * hi)
        c_t = torch.as_tensor(c, dtype=dtype)
        active_t = torch.as_tensor(active)
        w = w0.clone().requires_grad_(True)
        opt = torch.optim.Adam([w], lr=spec.lr)
        hit_this_c = np.zeros(n, dtype=bool)

        for _inner in range(spec.inner_steps):
            adv = (torch.tanh(w) + 1.0) / 2.0
            l2sq = ((adv - x_t) ** 2).sum(dim=dims)
            logits = model.net(adv)
            target_z = (logits * onehot).sum(dim=1)
            other_z = (logits - onehot * 1e9).max(dim=1).values
            f = torch.maximum(other_z - target_z, -kappa)
            loss = (l2sq + c_t * f)[active_t].sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
            iterations += 1

            with torch.no_grad():
                adv_np = adv.detach().numpy()
                l2_np = l2sq.detach().numpy()
                hits = _success_mask(logits.detach().numpy(), targets, spec) & active
                hit_this_c |= hits
                better = hits & (l2_np < best_l2sq)
                if better.any():
                    best_adv[better] = adv_np[better]
                    best_l2sq[better] = l2_np[better]
                    best_c[better] = c[better]
                last_attempt[active] = adv_np[active]
            if spec.record_traces:
                for i in np.flatnonzero(active):
                    traces[i].append(
                        (float(l2_np[i]), None if math.isinf(best_l2sq[i]) else float(best_l2sq[i]))
                    )

        hi[hit_this_c] = c[hit_this_c]
        lo[active & ~hit_this_c] = c[active & ~hit_this_c]

    never_hit = np.isinf(best_l2sq)
    best_adv[never_hit] = last_attempt[never_hit]
    adv_final = best_adv.astype(np.float32)
    final_posteriors = _target_posteriors(model, adv_final, targets)
    with torch.no_grad():
        final_logits = model.net(torch.as_tensor(adv_final, dtype=dtype)).numpy()
    final_success = _success_mask(final_logits, targets, spec)
    final_success[already] = True

    records = []
    for i in range(n):
        delta = adv_final[i] - xs[i]
        detail = {"c": None if math.isnan(best_c[i]) else float(best_c[i]), "kappa": spec.kappa}
        if spec.record_traces:
            detail["trace"] = traces[i]
        records.append(
            AttackRecord(
                original=xs[i],
                adversarial=adv_final[i],
                true_label=-1,
                original_prediction=int(preds0[i]),
                target=int(targets[i]),
                kind="cw-l2",
                mode=spec.mode,
                success=bool(final_success[i]),
                linf=float(np.abs(delta).max()),
                l2=float(np.linalg.norm(delta.ravel())),
                target_posterior=float(final_posteriors[i]),
                iterations=0 if already[i] else iterations,
                detail=detail,
            )
        )
    return records


def next_class_targets(labels: np.ndarray, class_count: int) -> np.ndarray:
    """Deterministic target rule: each label attacks the next class."""
    return (np.asarray(labels, dtype=np.int64) + 1) % class_count


def craft_attack_set(model: ClassifierModel, samples: list[LabeledImage], spec: AttackSpec,
                     limit: int | None = None, batch_size: int = 256) -> list[AttackRecord]:
    """Attack the correctly classified subset of ``samples``.

    Misclassified inputs are dropped first; attacking nothing is an error.
    Targets follow the next-class rule. ``limit`` caps how many inputs are
    attacked (taken in order after filtering).
    """
    spec = spec.validated()
    if not samples:
        raise EmptySetError("no samples supplied to attack")
    xs = np.stack([s.pixels for s in samples])
    ys = np.array([s.label for s in samples], dtype=np.int64)
    preds = np.concatenate(
        [predict_batch(model, xs[i : i + batch_size])[0] for i in range(0, len(xs), batch_size)]
    )
    keep = preds == ys
    if not keep.any():
        raise EmptySetError("no correctly classified samples to attack")
    xs, ys = xs[keep], ys[keep]
    if limit is not None:
        xs, ys = xs[:limit], ys[:limit]
    targets = next_class_targets(ys, model.class_count)

    records: list[AttackRecord] = []
    if spec.kind == "fgsm":
        for i in range(len(xs)):
            rec = fgsm_targeted(model, xs[i], int(targets[i]), spec)
            rec.true_label = int(ys[i])
            records.append(rec)
    else:
        for i in range(0, len(xs), batch_size):
            batch = cw_l2_targeted(model, xs[i : i + batch_size], targets[i : i + batch_size], spec)
            for j, rec in enumerate(batch):
                rec.true_label = int(ys[i + j])
            records.extend(batch)
    return records


def successful(records: list[AttackRecord]) -> list[AttackRecord]:
    return [r for r in records if r.success]


def attack_set_arrays(records: list[AttackRecord]) -> dict:
    """Columnar view of an attack set, ready for ``.npz`` persistence."""
    if not records:
        raise EmptySetError("attack set is empty")
    return {
        "format_version": np.array(ATTACK_SET_FORMAT_VERSION),
        "originals": np.stack([r.original for r in records]),
        "adversarials": np.stack([r.adversarial for r in records]),
        "true_labels": np.array([r.true_label for r in records], dtype=np.int64),
        "original_predictions": np.array([r.original_prediction for r in records], dtype=np.int64),
        "targets": np.array([r.target for r in records], dtype=np.int64),
        "success": np.array([r.success for r in records]),
        "linf": np.array([r.linf for r in records]),
        "l2": np.array([r.l2 for r in records]),
        "target_posterior": np.array([r.target_posterior for r in records]),
        "iterations": np.array([r.iterations for r in records], dtype=np.int64),
        "kind": np.array([r.kind for r in records]),
        "mode": np.array([r.mode for r in records]),
    }


def records_from_arrays(data) -> list[AttackRecord]:
    from .errors import CheckpointVersionError

    version = int(data["format_version"])
    if version != ATTACK_SET_FORMAT_VERSION:
        raise CheckpointVersionError("attack set", version, ATTACK_SET_FORMAT_VERSION)
    n = len(data["targets"])
    return [
        AttackRecord(
            original=data["originals"][i],
            adversarial=data["adversarials"][i],
            true_label=int(data["true_labels"][i]),
            original_prediction=int(data["original_predictions"][i]),
            target=int(data["targets"][i]),
            kind=str(data["kind"][i]),
            mode=str(data["mode"][i]),
            success=bool(data["success"][i]),
            linf=float(data["linf"][i]),
            l2=float(data["l2"][i]),
            target_posterior=float(data["target_posterior"][i]),
            iterations=int(data["iterations"][i]),
        )
        for i in range(n)
    ]
