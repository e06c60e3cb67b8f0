"""The three-term training loss and the ramp-up schedule for its balance weight.

- soft_margin_cls_loss: multi-label soft-margin classification loss on logits.
- reconstruction_loss: mean L1 gap between two normalized, label-masked CAM
  stacks (the consistency term between the single-image and merged tiled CAMs).
- alpha_at: per-step linear ramp of the reconstruction weight.
- total_loss: cls + p_cls + alpha * re, bundled with its components.

The losses are defined once as autodiff graphs; the public functions evaluate
the graph and the *_grad variants differentiate it, so the analytic gradients
checked against finite differences are exactly the ones training uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cams import GROUND_TRUTH, NORM_EPS, CAMStack, LabelVector
from .errors import ContractError

# Floor inside -log so saturated predictions cannot produce infinities.
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    """The loss components of one step plus the alpha in effect."""

    cls: float
    p_cls: float
    re: float
    alpha: float
    total: float

    def __post_init__(self):
        for name in ("cls", "p_cls", "re", "alpha", "total"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"LossBreakdown.{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class AlphaSchedule:
    """Linear ramp of the reconstruction weight.

    alpha_max is reached after ramp_end_fraction of all training steps and
    held constant afterwards.
    """

    alpha_max: float = 4.0
    ramp_end_fraction: float = 0.5

    def __post_init__(self):
        if self.alpha_max < 0:
            raise ContractError(f"alpha_max must be >= 0, got {self.alpha_max}")
        if not (0.0 < self.ramp_end_fraction <= 1.0):
            raise ContractError(
                f"ramp_end_fraction must be in (0, 1], got {self.ramp_end_fraction}"
            )


def _as_multi_hot(y, num_classes):
    if isinstance(y, LabelVector):
        if y.kind != GROUND_TRUTH:
            raise ContractError("classification losses need ground-truth labels")
        y = y.values
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != num_classes:
        raise ContractError(
            f"label length {y.shape[-1]} does not match logit length {num_classes}"
        )
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ContractError("labels must be multi-hot (entries 0 or 1)")
    return y


def cls_loss_graph(logits: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    """Tape-level soft-margin loss; mean over classes (and batch, if present)."""
    p = ad.sigmoid(logits)
    p_true = p * y + (1.0 - p) * (1.0 - y)
    return ad.mean(-ad.log(p_true + LOG_FLOOR))


def soft_margin_cls_loss(logits, y) -> float:
    """Multi-label soft-margin loss of sigmoid(logits) against multi-hot y.

    Accepts a length-C vector or a (B, C) batch; batches reduce by the mean.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim not in (1, 2):
        raise ContractError(f"logits must be (C,) or (B, C), got shape {logits.shape}")
    y = _as_multi_hot(y, logits.shape[-1])
    if y.shape != logits.shape:
        raise ContractError(f"label shape {y.shape} does not match logits {logits.shape}")
    return float(cls_loss_graph(ad.Tensor(logits), y).data)


def soft_margin_cls_loss_grad(logits, y) -> np.ndarray:
    """Analytic gradient of soft_margin_cls_loss with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    y = _as_multi_hot(y, logits.shape[-1])
    t = ad.Tensor(logits, requires_grad=True)
    cls_loss_graph(t, y).backward()
    return t.grad


def normalize_graph(raw: ad.Tensor) -> ad.Tensor:
    """Differentiable max-normalization over the trailing two (spatial) axes.

    Matches cams.normalize_array operation for operation so the training path
    and the numpy path agree bitwise: clamp negatives, divide by the spatial
    max plus NORM_EPS.
    """
    clamped = ad.relu(raw)
    peak = ad.amax(clamped, axis=(-2, -1), keepdims=True)
    return clamped / (peak + NORM_EPS)


def re_loss_graph(a_s: ad.Tensor, a_re: ad.Tensor, mask: np.ndarray) -> ad.Tensor:
    """Tape-level masked mean-L1 gap; mask broadcasts over the spatial axes."""
    diff = (a_s - a_re) * mask
    return ad.mean(ad.abs_(diff))


def reconstruction_loss(a_s: CAMStack, a_re: CAMStack, y) -> float:
    """Mean absolute difference of two normalized stacks on label-present classes.

    Both stacks are masked to the classes with y[c] = 1; the mean runs over the
    full C*h*w extent, so absent classes contribute zeros, not dropped terms.
    """
    _check_re_inputs(a_s, a_re)
    mask = _re_mask(a_s, y)
    return float(re_loss_graph(ad.Tensor(a_s.maps), ad.Tensor(a_re.maps), mask).data)


def reconstruction_loss_grads(a_s: CAMStack, a_re: CAMStack, y):
    """Analytic gradients of reconstruction_loss w.r.t. both stacks' maps."""
    _check_re_inputs(a_s, a_re)
    mask = _re_mask(a_s, y)
    t_s = ad.Tensor(a_s.maps, requires_grad=True)
    t_r = ad.Tensor(a_re.maps, requires_grad=True)
    re_loss_graph(t_s, t_r, mask).backward()
    return t_s.grad, t_r.grad


def _check_re_inputs(a_s, a_re):
    if not (a_s.normalized and a_re.normalized):
        raise ContractError("reconstruction_loss expects normalized CAM stacks")
    if a_s.maps.shape != a_re.maps.shape:
        raise ContractError(
            f"stack shapes differ: {a_s.maps.shape} vs {a_re.maps.shape}"
        )


def _re_mask(a_s, y):
    y = _as_multi_hot(y, a_s.num_classes)
    return y[:, None, None]


def alpha_at(step: int, total_steps: int, sched: AlphaSchedule) -> float:
    """Reconstruction weight at a given 0-based step of total_steps."""
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not (0 <= step <= total_steps):
        raise ContractError(f"step must be in [0, {total_steps}], got {step}")
    ramp_steps = sched.ramp_end_fraction * total_steps
    return sched.alpha_max * min(1.0, step / ramp_steps)


def total_loss(cls: float, p_cls: float, re: float, alpha: float) -> LossBreakdown:
    """Combine the three terms: total = cls + p_cls + alpha * re."""
    for name, v in (("cls", cls), ("p_cls", p_cls), ("re", re), ("alpha", alpha)):
        if not np.isfinite(v):
            raise ContractError(f"total_loss got non-finite {name}={v}")
        if v < 0:
            raise ContractError(f"total_loss components must be >= 0, got {name}={v}")
    return LossBreakdown(
        cls=float(cls),
        p_cls=float(p_cls),
        re=float(re),
        alpha=float(alpha),
        total=float(cls + p_cls + alpha * re),
    )
