"""Group-wise competition scores from stitched-composite inference.

A mini-batch is partitioned into contiguous groups of m samples.  Each
group is stitched into one composite image, resized back to the model's
native input resolution, normalized like any training input, and pushed
through the classifier without a tape.  The posterior probability of each
member's true class is its raw score q_i; normalizing the raw scores
within the group gives the competition score s_i = q_i / sum_j q_j.

Scoring is strictly detached: no tape records, no parameter writes, no
optimizer state.  ``params_hash`` exists so tests can assert this exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .imageops import (
    GridLayout,
    Normalization,
    _assemble_grid,
    _normalize_batch,
    _resize_batch,
    bilinear_resize,
    channel_normalize,
    stitch,
)
from .model import Classifier, softmax, softmax_rows
from .tensor import Tensor

__all__ = [
    "GroupSpec",
    "NSResult",
    "partition_groups",
    "group_ns_scores",
    "batch_ns_scores",
    "params_hash",
]

# Probability floor: posteriors entering score extraction are kept at
# least this far from 0 and 1, and a raw-score sum below it falls back to
# neutral uniform scores.  Exact softmax cannot reach either boundary,
# but float rounding can when one group member dominates by ~1e17.
_DEGENERATE_FLOOR = 1e-12

LEFTOVER_GROUP_ID = -1


@dataclass(frozen=True)
class GroupSpec:
    """One competition group: a grid layout plus member batch positions."""

    layout: GridLayout
    members: tuple[int, ...]

    def __post_init__(self):
        if len(self.members) != self.layout.group_size:
            raise ConfigError(
                f"group of {len(self.members)} members does not fill "
                f"a {self.layout} grid"
            )
        if len(set(self.members)) != len(self.members):
            raise ConfigError("group members must be distinct")
        if any(i < 0 for i in self.members):
            raise ConfigError("group members must be non-negative batch positions")


@dataclass(frozen=True)
class NSResult:
    """Per-sample raw scores, competition scores, and group membership."""

    raw: np.ndarray        # q_i, in (0, 1); leftovers carry the neutral 1/m
    score: np.ndarray      # s_i, in (0, 1), summing to 1 within each group
    group_ids: np.ndarray  # group index per sample; -1 marks leftovers
    groups: tuple[GroupSpec, ...]
    leftover: tuple[int, ...]


def partition_groups(batch_size: int, layout: GridLayout
                     ) -> tuple[list[GroupSpec], tuple[int, ...]]:
    """Split batch positions [0, B) into contiguous groups of m.

    The batch is assumed already shuffled, so contiguous runs are an
    unbiased grouping.  When m does not divide B the trailing remainder is
    returned as a leftover set that competes with nobody.
    """
    m = layout.group_size
    if m < 2:
        raise ConfigError(f"group size must be at least 2, got {m}")
    if batch_size < 1:
        raise ConfigError("batch must be non-empty")
    full = batch_size // m
    groups = [
        GroupSpec(layout, tuple(range(g * m, (g + 1) * m)))
        for g in range(full)
    ]
    return groups, tuple(range(full * m, batch_size))


def group_ns_scores(group: GroupSpec, samples, labels, model: Classifier,
                    normalization: Normalization | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Raw and normalized competition scores for one group.

    ``samples`` is anything indexable by batch position yielding HxWxC
    tensors; ``labels`` likewise yields integer classes.
    """
    h0, w0, _ = model.config.input_shape
    members = [_as_tensor(samples[i]) for i in group.members]
    composite = stitch(members, group.layout)
    resized = bilinear_resize(composite, (h0, w0))
    if normalization is not None:
        resized = channel_normalize(resized, normalization)
    probs = softmax(model.forward(resized))
    return _scores_from_posterior(
        _bound_posterior(probs.values[np.newaxis]),
        np.array([[int(labels[i]) for i in group.members]]),
        model.config.class_count,
    )


def batch_ns_scores(images: np.ndarray, labels: np.ndarray, model: Classifier,
                    layout: GridLayout,
                    normalization: Normalization | None = None) -> NSResult:
    """Score a whole batch; one composite forward pass per full group.

    ``images`` is a [B, H, W, C] stack in batch order.  All groups are
    stitched and resized as one array and pushed through a single batched
    forward, which is arithmetically the per-group pipeline.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeError(f"expected [B,H,W,C] images, got shape {images.shape}")
    batch = images.shape[0]
    groups, leftover = partition_groups(batch, layout)
    m = layout.group_size
    h0, w0, _ = model.config.input_shape

    raw = np.full(batch, 1.0 / m)
    score = np.full(batch, 1.0 / m)
    group_ids = np.full(batch, LEFTOVER_GROUP_ID, dtype=np.int64)

    if groups:
        g = len(groups)
        members = images[:g * m].reshape((g, m) + images.shape[1:])
        composites = _assemble_grid(members, layout)
        resized = _resize_batch(composites, (h0, w0))
        if normalization is not None:
            resized = _normalize_batch(resized, normalization)
        logits = model.forward_batch(Tensor(resized)).values
        posteriors = _bound_posterior(softmax_rows(logits))
        member_labels = np.asarray(labels[:g * m], dtype=np.int64).reshape(g, m)
        q, s = _scores_from_posterior(posteriors, member_labels,
                                      model.config.class_count)
        raw[:g * m] = q.reshape(-1)
        score[:g * m] = s.reshape(-1)
        group_ids[:g * m] = np.repeat(np.arange(g, dtype=np.int64), m)

    return NSResult(raw=raw, score=score, group_ids=group_ids,
                    groups=tuple(groups), leftover=leftover)


def _bound_posterior(posteriors: np.ndarray) -> np.ndarray:
    """Keep probabilities strictly inside (0, 1).

    A confident model can emit a posterior whose float value is exactly
    0.0 or 1.0; downstream normalization would then round a dominated
    member's score onto the boundary, which the weighting stage rejects.
    """
    return np.clip(posteriors, _DEGENERATE_FLOOR, 1.0 - _DEGENERATE_FLOOR)


def _scores_from_posterior(posteriors: np.ndarray, member_labels: np.ndarray,
                           class_count: int) -> tuple[np.ndarray, np.ndarray]:
    """q and s per member from [G, K] posteriors and [G, m] labels."""
    if member_labels.min(initial=0) < 0 or \
            member_labels.max(initial=0) >= class_count:
        raise ConfigError("label out of range for the model's class count")
    g, m = member_labels.shape
    q = posteriors[np.arange(g)[:, None], member_labels]
    denom = q.sum(axis=1, keepdims=True)
    safe = denom >= _DEGENERATE_FLOOR
    s = np.where(safe, q / np.where(safe, denom, 1.0), 1.0 / m)
    return q, s


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def params_hash(model: Classifier) -> str:
    """SHA-256 over all parameter bytes; equality means bit-identical state."""
    digest = hashlib.sha256()
    for p in model.parameters:
        digest.update(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
    return digest.hexdigest()
