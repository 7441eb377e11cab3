"""Structured SVM learning of the segmentation CRF weights.

Margin-rescaled hinge, minimised by projected stochastic subgradient
descent::

    reg/2 ||l||^2 + 1/N sum_n max_y [loss(y_n, y) + E_l(y_n) - E_l(y)]

with ``E_l(y) = l @ psi(y) / n``, the CRF energy per box pixel, so that it
shares the scale of the average label error. That loss decomposes over
nodes, so loss-augmented inference is ordinary MAP with shifted unaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_consistent_length, check_is_fitted

from .segmentation import (
    N_WEIGHTS,
    SPATIAL_GUARD,
    TEMPORAL_GUARD,
    SegParams,
    SegProblem,
    solve,
)

logger = logging.getLogger(__name__)


def hamming_box_loss(pred, gt) -> float:
    """Fraction of box pixels whose labels disagree."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in shape")
    if pred.size == 0:
        raise ValueError("empty box")
    return float(np.mean(pred.astype(bool) != gt.astype(bool)))


def _loss_offset(gt):
    gt = np.asarray(gt, dtype=np.int64).ravel()
    off = np.zeros((gt.size, 2))
    off[np.arange(gt.size), 1 - gt] = -1.0
    return off


def loss_augmented_map(problem: SegProblem, gt, lambdas=None) -> np.ndarray:
    """Most violating labeling: MAP of ``E(y) / n - loss(gt, y)``.

    Scaled by the node count ``n`` this is ``E(y)`` minus one per
    mislabelled node.
    """
    return solve(problem, lambdas, unary_offset=_loss_offset(gt))


def project_guard(lambdas, temporal=True) -> np.ndarray:
    """Euclidean projection onto ``{l : A l >= 0}`` for the pairwise guards.

    The dual of the projection is the non-negative least-squares problem
    ``min_{mu >= 0} ||A^T mu + l||``, and the projection is ``l + A^T mu``.
    """
    lam = np.asarray(lambdas, dtype=float).copy()
    A = np.vstack([SPATIAL_GUARD] + ([TEMPORAL_GUARD] if temporal else []))
    if np.all(A @ lam >= 0):
        return lam
    mu, _ = nnls(A.T, -lam)
    out = lam + A.T @ mu
    # clear round-off so the guard holds exactly
    out[np.abs(out) < 1e-14] = 0.0
    return out


@dataclass
class LearnConfig:
    reg: float = 1e-3
    step: float = 1.0
    epochs: int = 50
    project: bool = True
    seed: int = 0
    train_temporal: bool = True


def _hinge(problem, gt, lam):
    y_hat = loss_augmented_map(problem, gt, lam)
    n = len(gt)
    psi_gt = problem.features(gt) / n
    psi_hat = problem.features(y_hat) / n
    value = hamming_box_loss(y_hat, gt) + lam @ (psi_gt - psi_hat)
    if value <= 0:
        return 0.0, np.zeros(N_WEIGHTS), gt
    return value, psi_gt - psi_hat, y_hat


def ssvm_objective(problems, gts, lambdas, reg) -> float:
    lam = np.asarray(lambdas, dtype=float)
    hinge = np.mean([_hinge(p, g, lam)[0] for p, g in zip(problems, gts)])
    return 0.5 * reg * float(lam @ lam) + float(hinge)


def ssvm_train(problems, gts, config: LearnConfig | None = None, init=None,
               validation=None) -> SegParams:
    """Projected subgradient S-SVM; returns the best-validation weights.

    ``validation`` is an optional ``(problems, gts)`` pair; the training set
    is used when omitted. Weights are returned only if their training
    objective does not exceed that of the zero vector.
    """
    config = config or LearnConfig()
    problems = list(problems)
    gts = [np.asarray(g, dtype=np.int64).ravel() for g in gts]
    if not problems:
        raise ValueError("ssvm_train needs at least one example")
    if len(problems) != len(gts):
        raise ValueError("one ground truth per example required")
    base = problems[0].params
    temporal = config.train_temporal and any(len(p.t_i) for p in problems)
    lam = np.array(base.lambdas if init is None else init, dtype=float)
    if config.project:
        lam = project_guard(lam, temporal)
    val_p, val_g = validation if validation is not None else (problems, gts)
    val_g = [np.asarray(g, dtype=np.int64).ravel() for g in val_g]

    def val_loss(l):
        return float(np.mean([hamming_box_loss(solve(p, l), g) for p, g in zip(val_p, val_g)]))

    rng = np.random.default_rng(config.seed)
    best_lam, best_val = lam.copy(), val_loss(lam)
    t = 0
    for epoch in range(config.epochs):
        for n in rng.permutation(len(problems)):
            t += 1
            _, sub, _ = _hinge(problems[n], gts[n], lam)
            grad = config.reg * lam + sub
            if not temporal:
                grad[7:] = 0.0
            lam = lam - config.step / np.sqrt(t) * grad
            if config.project:
                lam = project_guard(lam, temporal)
        v = val_loss(lam)
        logger.debug("epoch %d validation loss %.4f", epoch, v)
        if v < best_val:
            best_lam, best_val = lam.copy(), v
        if best_val == 0.0:
            break
    zero = np.zeros(N_WEIGHTS)
    if ssvm_objective(problems, gts, best_lam, config.reg) > ssvm_objective(problems, gts, zero, config.reg):
        best_lam = zero
    return base.with_lambdas(best_lam)


class SegmentationSSVM(BaseEstimator):
    """Scikit-learn style wrapper around :func:`ssvm_train`.

    ``X`` is a list of :class:`SegProblem`, ``y`` the matching list of
    ground-truth box labelings (flattened node order).
    """

    def __init__(self, reg=1e-3, step=1.0, epochs=50, project=True, seed=0):
        self.reg = reg
        self.step = step
        self.epochs = epochs
        self.project = project
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        check_consistent_length(X, y)
        cfg = LearnConfig(self.reg, self.step, self.epochs, self.project, self.seed)
        val = (X_val, y_val) if X_val is not None else None
        self.params_ = ssvm_train(X, y, cfg, validation=val)
        self.coef_ = self.params_.lambdas
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return [solve(p, self.coef_) for p in X]

    def score(self, X, y):
        """One minus the mean box Hamming loss."""
        pred = self.predict(X)
        return 1.0 - float(np.mean([hamming_box_loss(p, np.ravel(g)) for p, g in zip(pred, y)]))
