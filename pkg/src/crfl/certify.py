"""Prediction certification by parameter smoothing: a fixed ensemble of
Gaussian-perturbed model copies, majority votes, Hoeffding calibration of the
top-two vote frequencies, and per-sample certified radii."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .analysis import (  # noqa: F401  (re-exported as part of this module's surface)
    AttackerProfile,
    RadiusContext,
    RadiusOutcome,
    certified_radius,
    radius_detail,
)
from .data import SampleSet
from .errors import ConfigurationError
from .model import ModelParams
from .numerics import std_normal_cdf  # noqa: F401  (re-exported)
from .rng import stream


@dataclass
class SmoothedModelEnsemble:
    """M noisy copies of the base model, regenerable bitwise from the seed.

    The same ensemble is reused for every test sample: noise is drawn once,
    not per query.
    """

    base: ModelParams
    sigma: float
    size: int
    noise_seed: int
    members: np.ndarray  # (M, d, C)

    @property
    def num_classes(self) -> int:
        return self.base.num_classes


def build_ensemble(base: ModelParams, sigma: float, size: int, seed: int) -> SmoothedModelEnsemble:
    """Materialize base + N(0, sigma^2 I) per copy; sigma = 0 gives identical copies."""
    if size < 1:
        raise ConfigurationError("ensemble size must be at least 1")
    if sigma < 0:
        raise ConfigurationError("smoothing sigma must be non-negative")
    shape = (size, base.dim, base.num_classes)
    if sigma == 0.0:
        members = np.broadcast_to(base.weights, shape).copy()
    else:
        members = base.weights[None, :, :] + stream(seed, "ensemble").normal(0.0, sigma, size=shape)
    members.setflags(write=False)
    return SmoothedModelEnsemble(base, float(sigma), int(size), int(seed), members)


@dataclass(frozen=True)
class VoteCounts:
    """Ensemble votes per class; counts sum to the ensemble size."""

    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if (counts < 0).any() or int(counts.sum()) != self.total:
            raise ConfigurationError("vote counts must be non-negative and sum to the total")


def vote_counts(features: np.ndarray, ensemble: SmoothedModelEnsemble) -> VoteCounts:
    """Class votes for one sample across all ensemble members."""
    if features.shape != (ensemble.base.dim,):
        raise ConfigurationError("feature dimension does not match the ensemble")
    logits = np.tensordot(features, ensemble.members, axes=([0], [1]))  # (M, C)
    preds = np.argmax(logits, axis=1)
    return VoteCounts(np.bincount(preds, minlength=ensemble.num_classes), ensemble.size)


def vote_counts_matrix(features: np.ndarray, ensemble: SmoothedModelEnsemble) -> np.ndarray:
    """(n, C) vote counts for a whole test matrix, one member at a time."""
    n = features.shape[0]
    counts = np.zeros((n, ensemble.num_classes), dtype=np.int64)
    rows = np.arange(n)
    for member in ensemble.members:
        preds = np.argmax(features @ member, axis=1)
        counts[rows, preds] += 1
    return counts


def hoeffding_bounds(
    p_hat_a: float, p_hat_b: float, num_samples: int, alpha: float
) -> tuple[float, float]:
    """One-sided Hoeffding bounds on the top-two vote frequencies:
    p_hat -+ sqrt(log(1/alpha) / (2 M)), clamped to [0, 1]."""
    if not (0.0 <= p_hat_b <= p_hat_a <= 1.0):
        raise ConfigurationError("need 0 <= p_hat_b <= p_hat_a <= 1")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError("alpha must lie in (0, 1)")
    if num_samples < 1:
        raise ConfigurationError("need at least one sample")
    margin = math.sqrt(math.log(1.0 / alpha) / (2.0 * num_samples))
    return max(p_hat_a - margin, 0.0), min(p_hat_b + margin, 1.0)


@dataclass(frozen=True)
class CertificationResult:
    """Certified prediction for one test sample; prediction None means ABSTAIN."""

    sample_id: int
    true_label: int
    prediction: Optional[int]
    p_hat_a: float
    p_hat_b: float
    p_a_lower: float
    p_b_upper: float
    rad: float
    saturated: bool = False

    def __post_init__(self):
        abstained = self.prediction is None
        if abstained != (self.p_a_lower <= self.p_b_upper) or abstained != (self.rad == 0.0):
            raise ConfigurationError("ABSTAIN, crossed bounds, and rad = 0 must coincide")

    @property
    def abstained(self) -> bool:
        return self.prediction is None


def _top_two(counts: np.ndarray) -> tuple[int, int]:
    # ties break to the lower class index in both slots
    order = sorted(range(counts.shape[0]), key=lambda c: (-int(counts[c]), c))
    return order[0], order[1]


def _result_from_counts(
    counts: VoteCounts,
    true_label: int,
    ctx: RadiusContext,
    alpha: float,
    sample_id: int,
) -> CertificationResult:
    if counts.counts.shape[0] < 2:
        raise ConfigurationError("certification needs at least two classes")
    c_a, c_b = _top_two(counts.counts)
    p_hat_a = counts.counts[c_a] / counts.total
    p_hat_b = counts.counts[c_b] / counts.total
    lower, upper = hoeffding_bounds(p_hat_a, p_hat_b, counts.total, alpha)
    if lower > upper:
        outcome = radius_detail(lower, upper, ctx)
        return CertificationResult(
            sample_id, true_label, c_a, p_hat_a, p_hat_b, lower, upper,
            outcome.value, outcome.saturated,
        )
    return CertificationResult(
        sample_id, true_label, None, p_hat_a, p_hat_b, lower, upper, 0.0, False
    )


def certify_sample(
    features: np.ndarray,
    true_label: int,
    ensemble: SmoothedModelEnsemble,
    ctx: RadiusContext,
    alpha: float,
    sample_id: int = 0,
) -> CertificationResult:
    """Vote, calibrate the top-two frequencies, and either certify with a
    radius or abstain with radius zero."""
    return _result_from_counts(
        vote_counts(features, ensemble), true_label, ctx, alpha, sample_id
    )


def certify_set(
    test: SampleSet,
    ensemble: SmoothedModelEnsemble,
    ctx: RadiusContext,
    alpha: float,
) -> list[CertificationResult]:
    """Certify every sample; results are ordered by sample index."""
    all_counts = vote_counts_matrix(test.features, ensemble)
    return [
        _result_from_counts(
            VoteCounts(all_counts[i], ensemble.size), int(test.labels[i]), ctx, alpha, i
        )
        for i in range(len(test))
    ]


def certified_accuracy(results: Sequence[CertificationResult], r: float) -> float:
    """Fraction predicted correctly with radius >= r; abstentions never count."""
    if not results:
        raise ConfigurationError("need at least one certification result")
    hits = sum(
        1
        for res in results
        if not res.abstained and res.prediction == res.true_label and res.rad >= r
    )
    return hits / len(results)


def certified_rate(results: Sequence[CertificationResult], r: float) -> float:
    """Fraction certified with radius >= r; abstentions never count, even at r = 0."""
    if not results:
        raise ConfigurationError("need at least one certification result")
    hits = sum(1 for res in results if not res.abstained and res.rad >= r)
    return hits / len(results)


def critical_radius(results: Sequence[CertificationResult]) -> float:
    """Largest certified radius in the batch (0 when everything abstained)."""
    rads = [res.rad for res in results if not res.abstained]
    return max(rads) if rads else 0.0
