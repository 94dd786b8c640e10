"""Evaluation metrics and the harmony scorer.

* Boundary Gradient Difference: mean Sobel magnitude on the inner boundary
  ring minus the outer ring, in absolute value.
* Frechet distance between Gaussian feature statistics.
* A logistic-regression harmony scorer over a small vector of boundary
  statistics, evaluated under three mask configurations (original, dilated,
  eroded) and averaged.
"""

from __future__ import annotations

import functools
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, MetricUndefinedError, NumericError, ScorerFormatError
from .imagecore import as_image, as_mask, dilate, erode, sobel_gradient_magnitude, to_grayscale

logger = logging.getLogger(__name__)

BGD_MARGIN = 3
FEATURE_WIDTHS = (1, 3, 5)
MASK_JITTER = 2
SCORER_VERSION = 1
_VAR_EPS = 1e-6


@dataclass(frozen=True)
class BoundaryRings:
    inner: np.ndarray
    outer: np.ndarray
    margin: int


def boundary_rings(omega, w: int) -> BoundaryRings:
    """``inner = omega minus erode(omega, w)``, ``outer = dilate(omega, w) minus omega``.

    Dilation is clipped to the grid, so a region touching the border has no
    outer ring beyond it.
    """
    omega = as_mask(omega)
    if int(w) != w or w < 1:
        raise ContractError(f"ring width must be a positive integer, got {w}")
    inner = omega & ~erode(omega, w)
    outer = dilate(omega, w) & ~omega
    return BoundaryRings(inner, outer, int(w))


def _ring_means(values, rings):
    if not rings.inner.any() or not rings.outer.any():
        raise MetricUndefinedError(
            f"boundary ring empty at w={rings.margin} (inner {rings.inner.sum()}, outer {rings.outer.sum()} px)")
    return values[rings.inner].mean(), values[rings.outer].mean()


def bgd_abs(img, omega, w: int = BGD_MARGIN) -> float:
    """Boundary Gradient Difference on ``[0, 1]`` grayscale intensities."""
    img = as_image(img)
    omega = as_mask(omega, img.shape[:2])
    g = sobel_gradient_magnitude(to_grayscale(img))
    g_in, g_out = _ring_means(g, boundary_rings(omega, w))
    return float(abs(g_in - g_out))


# --- Frechet distance -------------------------------------------------------


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int


def feature_stats(features: Sequence) -> FeatureStats:
    """Sample mean and unbiased covariance of a list of feature vectors."""
    try:
        x = np.asarray(features, dtype=np.float64)
    except ValueError as exc:
        raise ContractError("feature vectors have mismatched dimensions") from exc
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ContractError(f"features must form an (n, k) array, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ContractError("need at least two feature vectors")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (x.shape[0] - 1)
    return FeatureStats(mean, (cov + cov.T) / 2, x.shape[0])


def _psd_sqrt(m, name):
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    _check_eigs(vals, name)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def _check_eigs(vals, name):
    scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
    if vals.size and vals.min() < -1e-10 * scale:
        pos = vals[vals > 0]
        cond = float(vals.max() / pos.min()) if pos.size else float("inf")
        raise NumericError(f"{name} is not positive semidefinite (min eigenvalue {vals.min():.3e})", cond)


def trace_sqrt_product(cov_a, cov_b) -> float:
    """``trace((cov_a @ cov_b) ** 0.5)`` via the symmetric form ``A^1/2 B A^1/2``."""
    root_a = _psd_sqrt(cov_a, "covariance a")
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    _check_eigs(vals, "covariance product")
    return float(np.sqrt(np.clip(vals, 0, None)).sum())


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    mu_a, mu_b = np.atleast_1d(a.mean), np.atleast_1d(b.mean)
    cov_a, cov_b = np.atleast_2d(a.covariance), np.atleast_2d(b.covariance)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape or cov_a.shape != (mu_a.size, mu_a.size):
        raise ContractError("feature statistics have mismatched dimensions")
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * trace_sqrt_product(cov_a, cov_b)
    # rounding can push identical statistics a hair below zero
    return float(max(value, 0.0))


def image_descriptor(img) -> np.ndarray:
    """Cheap global descriptor used when no deep features are available.

    Per-channel mean and standard deviation, mean gradient magnitude and the
    gradient-magnitude spread.
    """
    img = as_image(img)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    g = sobel_gradient_magnitude(to_grayscale(img))
    return np.concatenate([img.mean(axis=(0, 1)), img.std(axis=(0, 1)), [g.mean(), g.std()]])


# --- harmony scorer ---------------------------------------------------------

FEATURE_NAMES = tuple(
    name
    for w in FEATURE_WIDTHS
    for name in (f"bgd_w{w}", f"ring_dr_w{w}", f"ring_dg_w{w}", f"ring_db_w{w}", f"ring_logvar_w{w}")
) + ("global_color_l2",)


def boundary_features(img, omega) -> np.ndarray:
    """Sixteen boundary statistics, in :data:`FEATURE_NAMES` order.

    Per ring width: BGD, absolute inner-minus-outer mean colour per channel,
    log ratio of inner to outer gray variance. Then the L2 distance between
    the mean colours inside and outside ``omega``. Gray images are treated as
    three equal channels.
    """
    img = as_image(img)
    omega = as_mask(omega, img.shape[:2])
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    gray = to_grayscale(img)
    grad = sobel_gradient_magnitude(gray)
    feats = []
    for w in FEATURE_WIDTHS:
        rings = boundary_rings(omega, w)
        g_in, g_out = _ring_means(grad, rings)
        color_diff = np.abs(img[rings.inner].mean(axis=0) - img[rings.outer].mean(axis=0))
        log_var = np.log(gray[rings.inner].var() + _VAR_EPS) - np.log(gray[rings.outer].var() + _VAR_EPS)
        feats.extend([abs(g_in - g_out), *color_diff, log_var])
    inside = img[omega].mean(axis=0)
    outside = img[~omega].mean(axis=0)
    feats.append(float(np.linalg.norm(inside - outside)))
    return np.asarray(feats, dtype=np.float64)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class HarmonyScorer:
    """Logistic model on standardised :func:`boundary_features`."""

    weights: np.ndarray
    bias: float = 0.0
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURE_NAMES)))
    feature_scale: np.ndarray = field(default_factory=lambda: np.ones(len(FEATURE_NAMES)))
    training_accuracy: Optional[float] = None

    @classmethod
    def untrained(cls) -> "HarmonyScorer":
        return cls(np.zeros(len(FEATURE_NAMES)))

    def predict_features(self, feats) -> np.ndarray:
        x = (np.atleast_2d(feats) - self.feature_mean) / self.feature_scale
        return _sigmoid(x @ self.weights + self.bias)

    def score(self, img, omega) -> float:
        """Single-mask probability that the region is harmonious."""
        return float(self.predict_features(boundary_features(img, omega))[0])

    def to_dict(self) -> dict:
        return {
            "version": SCORER_VERSION,
            "feature_spec": {"names": list(FEATURE_NAMES), "widths": list(FEATURE_WIDTHS)},
            "standardization": {"mean": self.feature_mean.tolist(), "scale": self.feature_scale.tolist()},
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HarmonyScorer":
        if not isinstance(doc, dict) or doc.get("version") != SCORER_VERSION:
            found = doc.get("version") if isinstance(doc, dict) else None
            raise ScorerFormatError(f"unsupported scorer version {found!r}, expected {SCORER_VERSION}")
        try:
            names = tuple(doc["feature_spec"]["names"])
            weights = np.asarray(doc["weights"], dtype=np.float64)
            mean = np.asarray(doc["standardization"]["mean"], dtype=np.float64)
            scale = np.asarray(doc["standardization"]["scale"], dtype=np.float64)
            bias = float(doc["bias"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScorerFormatError(f"malformed scorer document: {exc}") from exc
        if names != FEATURE_NAMES:
            raise ScorerFormatError("scorer was trained on a different feature set")
        if not (weights.shape == mean.shape == scale.shape == (len(FEATURE_NAMES),)):
            raise ScorerFormatError("scorer arrays have the wrong length")
        return cls(weights, bias, mean, scale)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "HarmonyScorer":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ScorerFormatError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def fit_logistic(x, y, epochs: int = 500, learning_rate: float = 0.5, l2: float = 1e-3):
    """Full-batch gradient descent on the mean logistic loss, from zero weights.

    Returns ``(weights, bias)``. ``x`` is expected to be standardised.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.zeros(x.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(int(epochs)):
        p = _sigmoid(x @ w + b)
        err = p - y
        w -= learning_rate * (x.T @ err / n + l2 * w)
        b -= learning_rate * err.mean()
    return w, b


def train_scorer(positives, negatives, epochs: int = 500, learning_rate: float = 0.5,
                 seed: int = 0, l2: float = 1e-3) -> HarmonyScorer:
    """Fit a scorer on ``(image, mask)`` pairs; positives are harmonious.

    Training is deterministic. ``seed`` only fixes the order in which samples
    are stacked, which full-batch descent does not depend on beyond rounding.
    """
    positives, negatives = list(positives), list(negatives)
    if not positives or not negatives:
        raise ContractError("training needs at least one positive and one negative sample")
    feats = np.array([boundary_features(img, m) for img, m in positives + negatives])
    labels = np.r_[np.ones(len(positives)), np.zeros(len(negatives))]
    order = np.random.default_rng(seed).permutation(len(labels))
    feats, labels = feats[order], labels[order]
    return train_scorer_on_features(feats, labels, epochs, learning_rate, l2)


def train_scorer_on_features(feats, labels, epochs=500, learning_rate=0.5, l2=1e-3) -> HarmonyScorer:
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if set(np.unique(labels)) != {0.0, 1.0}:
        raise ContractError("labels must contain both classes (0 and 1)")
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale[scale < 1e-12] = 1.0
    w, b = fit_logistic((feats - mean) / scale, labels, epochs, learning_rate, l2)
    scorer = HarmonyScorer(w, b, mean, scale)
    pred = scorer.predict_features(feats) >= 0.5
    scorer.training_accuracy = float((pred == (labels == 1)).mean())
    logger.info("harmony scorer trained on %d samples, accuracy %.3f", len(labels), scorer.training_accuracy)
    return scorer


def _has_rings(omega) -> bool:
    return bool(omega.any() and (~omega).any())


def jittered_masks(omega, delta: int = MASK_JITTER):
    """Original, dilated and eroded masks; a degenerate variant falls back to ``omega``."""
    omega = as_mask(omega)
    variants = [omega, dilate(omega, delta), erode(omega, delta)]
    return [m if _has_rings(m) else omega for m in variants]


def harmony_score(scorer: HarmonyScorer, img, omega, delta: int = MASK_JITTER) -> float:
    """Mean scorer output over the original, dilated and eroded masks."""
    img = as_image(img)
    masks = jittered_masks(as_mask(omega, img.shape[:2]), delta)
    feats = np.array([boundary_features(img, m) for m in masks])
    return float(scorer.predict_features(feats).mean())


def roc_auc(scores_pos, scores_neg) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ContractError("AUC needs both classes")
    ranks = rankdata(np.r_[pos, neg])
    return float((ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2) / (pos.size * neg.size))


@functools.lru_cache(maxsize=4)
def default_scorer(seed: int = 0, n_per_class: int = 200) -> HarmonyScorer:
    """Scorer trained on the built-in synthetic corpus; cached per seed."""
    from .synthetic import scorer_training_set

    pos, neg = scorer_training_set(np.random.default_rng(seed), n_per_class)
    return train_scorer(pos, neg, seed=seed)
