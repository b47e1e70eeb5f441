"""Training losses as plain numeric functions with analytic gradients.

Every function returns ``(value, gradients)`` where the gradients are taken
with respect to the predicted quantities; targets are constants.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
SMOOTH_L1_BETA = 1.0


def focal_loss(p, y, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA):
    """Elementwise focal loss and dL/dp for probabilities ``p`` in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("focal loss needs probabilities strictly inside (0, 1)")
    pos = y == 1
    pt = np.where(pos, p, 1.0 - p)
    at = np.where(pos, alpha, 1.0 - alpha)
    q = 1.0 - pt
    logpt = np.log(pt)
    loss = -at * q**gamma * logpt
    # d/dpt of -(1-pt)^g log(pt) = g (1-pt)^(g-1) log(pt) - (1-pt)^g / pt
    dpt = at * (gamma * q ** (gamma - 1) * logpt - q**gamma / pt) if gamma != 0 else -at / pt
    grad = np.where(pos, dpt, -dpt)
    return loss, grad


def smooth_l1(x, beta: float = SMOOTH_L1_BETA):
    """Elementwise smooth L1 and its derivative."""
    if beta <= 0:
        raise DomainError("beta must be positive")
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax < beta
    loss = np.where(quad, 0.5 * x * x / beta, ax - 0.5 * beta)
    grad = np.where(quad, x / beta, np.sign(x))
    return loss, grad


def cross_entropy(logits, target):
    """Softmax cross-entropy per row and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.int64)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=-1, keepdims=True)
    logp = z - m - np.log(s)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, t]
    grad = e / s
    grad[rows, t] -= 1.0
    return loss, grad


def binary_cross_entropy(p, y):
    """BCE on probabilities; ``p`` may touch 0 or 1 where it agrees with ``y``."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    pos = y == 1
    pt = np.where(pos, p, 1.0 - p)
    with np.errstate(divide="ignore"):
        loss = -np.log(pt)
        grad = np.where(pos, -1.0 / p, 1.0 / (1.0 - p))
    return loss, grad


@dataclass
class BoxPrediction:
    """Per-point (or per-proposal) bin-based regression outputs.

    ``bin_logits`` holds three [P, n_bins] arrays for (x, y, yaw);
    ``residuals`` is [P, 7] ordered like :attr:`BoxTargets.residuals`.
    """

    bin_logits: tuple
    residuals: np.ndarray


def box_regression_terms(pred: BoxPrediction, bins, residuals, beta: float = SMOOTH_L1_BETA):
    """Per-row bin loss and residual loss, with gradients.

    ``bins`` is [P, 3] and ``residuals`` [P, 7] (targets). Returns
    ``(l_bin [P], l_res [P], grads)`` with grads matching ``pred``'s layout.
    """
    bins = np.asarray(bins, dtype=np.int64).reshape(-1, 3)
    tgt = np.asarray(residuals, dtype=np.float64).reshape(-1, 7)
    res = np.asarray(pred.residuals, dtype=np.float64).reshape(-1, 7)
    l_bin = np.zeros(len(bins))
    logit_grads = []
    for a in range(3):
        ce, g = cross_entropy(pred.bin_logits[a], bins[:, a])
        l_bin += ce
        logit_grads.append(g)
    sl, sg = smooth_l1(res - tgt, beta)
    l_bin += sl[:, :3].sum(axis=1)
    l_res = sl[:, 3:].sum(axis=1)
    return l_bin, l_res, BoxPrediction(tuple(logit_grads), sg)


def _scale(bp: BoxPrediction, w):
    w = np.asarray(w, dtype=np.float64)
    return BoxPrediction(tuple(g * w[:, None] for g in bp.bin_logits), bp.residuals * w[:, None])


def regression_loss(pred: BoxPrediction, bins, residuals, mask, beta: float = SMOOTH_L1_BETA):
    """Mean of bin + residual loss over rows where ``mask`` is set.

    Zero (with zero gradient) when no row is selected.
    """
    mask = np.asarray(mask, dtype=bool)
    l_bin, l_res, g = box_regression_terms(pred, bins, residuals, beta)
    npos = int(mask.sum())
    if npos == 0:
        return 0.0, _scale(g, np.zeros(len(mask)))
    w = mask / npos
    return float(np.sum((l_bin + l_res) * w)), _scale(g, w)


@dataclass
class ProposalLoss:
    reg: float
    focal: float
    total: float
    grad_seg: np.ndarray
    grad_box: BoxPrediction


def proposal_loss(seg_prob, fg_label, pred: BoxPrediction, bins, residuals,
                  alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA, beta: float = SMOOTH_L1_BETA) -> ProposalLoss:
    """Proposal-stage loss: mean focal segmentation loss plus regression
    averaged over foreground points."""
    fl, fg = focal_loss(seg_prob, fg_label, alpha, gamma)
    n = max(len(fl), 1)
    reg, greg = regression_loss(pred, bins, residuals, np.asarray(fg_label) == 1, beta)
    focal = float(fl.sum() / n)
    return ProposalLoss(reg, focal, reg + focal, fg / n, greg)


@dataclass
class RefineLoss:
    cls: float
    reg: float
    total: float
    grad_score: np.ndarray
    grad_box: BoxPrediction


def refine_loss(scores, labels, pred: BoxPrediction, bins, residuals, beta: float = SMOOTH_L1_BETA) -> RefineLoss:
    """Confidence BCE averaged over all anchors plus regression averaged over
    positive proposals (targets already in canonical coordinates)."""
    labels = np.asarray(labels)
    if len(labels) < 1:
        raise DomainError("refinement loss needs at least one anchor")
    bce, gb = binary_cross_entropy(scores, labels)
    na = len(labels)
    cls = float(bce.sum() / na)
    reg, greg = regression_loss(pred, bins, residuals, labels == 1, beta)
    return RefineLoss(cls, reg, cls + reg, gb / na, greg)


def overall_loss(l_pg: float, l_refine: float) -> float:
    return l_pg + l_refine
