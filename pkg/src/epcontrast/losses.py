"""Contrastive losses over paired embeddings: exact values and gradients.

Three pair schemes share one softmax core:

* point loss — positives are matched point indices (i, i) across the two
  views, negatives all cross-view pairs (i, j), i != j;
* asymmetric-granularity loss — view-1 points are queries, view-2 segment
  means are keys; the positive for point i is its own segment, negatives
  are all other segments;
* channel loss — the columns (channel maps) of the two embeddings are
  contrasted, with the *absolute* similarity on negative channel pairs so
  that minimizing the loss pushes distinct channels toward orthogonality.

Each anchor contributes -log(exp(s_pos/tau) / sum exp(s_neg/tau)); by
default the positive is excluded from the denominator, exactly as the pair
sets are written, and a flag restores the conventional softmax form. The
combined objective is the asymmetric-granularity loss plus ``lam`` times
the channel loss.

Every loss has a brute-force twin (:func:`brute_force_loss`) that walks
the pair sets with plain Python loops and no shared code path; tests pit
the two against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyNegativeSetError, PartitionError, ShapeError
from .numcore import (
    DEFAULT_EPS,
    as_matrix,
    col_l2_normalize,
    matmul_nt,
    row_l2_normalize,
)
from .superpoint import SegmentAssignment

KINDS = ("pc", "ag", "cc", "ep")


@dataclass(frozen=True)
class LossConfig:
    """Temperature, weighting, and pair-handling switches shared by all losses.

    ``reduction`` is "sum" (the losses as written) or "mean" (per positive,
    which keeps the learning rate independent of scene size).
    ``neg_sample_count`` enables per-anchor uniform negative sampling for
    the point loss; None means full enumeration.
    """

    tau: float = 1.0
    lam: float = 0.1
    normalize_rows: bool = True
    normalize_channels: bool = True
    include_positive_in_denominator: bool = False
    reduction: str = "mean"
    neg_sample_count: int | None = None
    symmetric_ag: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        if self.neg_sample_count is not None and self.neg_sample_count < 1:
            raise ValueError(
                f"neg_sample_count must be >= 1 when set, got {self.neg_sample_count}"
            )


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_f1: np.ndarray
    grad_f2: np.ndarray


class EvalCounter:
    """Counts similarity evaluations inside the brute-force oracles."""

    def __init__(self):
        self.count = 0

    def bump(self, k: int = 1):
        self.count += k


def count_pairs(kind: str, n: int, m: int, c: int) -> tuple[int, int]:
    """(positive, negative) pair counts for a scheme at the given sizes."""
    if min(n, m, c) < 1:
        raise ValueError(f"sizes must be >= 1, got n={n}, m={m}, c={c}")
    kind = kind.lower()
    if kind == "pc":
        return n, n * n - n
    if kind == "ag":
        return n, n * (m - 1)
    if kind == "cc":
        return c, c * c - c
    raise ValueError(f"unknown pair scheme {kind!r}")


# ---------------------------------------------------------------------------
# shared softmax core
# ---------------------------------------------------------------------------


def _anchor_terms(pos, den, mask, include_positive):
    """Per-anchor -log softmax terms plus the weights needed for backward.

    pos: (A,) positive scores (already divided by tau).
    den: (A, K) candidate denominator scores (already scaled, abs applied
         where the scheme demands it); only entries with mask True count.
    Returns (terms, neg_weights, pos_weights) where weights are softmax
    masses over the denominator set (pos_weights is zero when the positive
    is excluded).
    """
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise EmptyNegativeSetError(f"anchor {bad} has an empty negative set")
    masked = np.where(mask, den, -np.inf)
    hi = masked.max(axis=1)
    if include_positive:
        hi = np.maximum(hi, pos)
    e = np.exp(masked - hi[:, None])  # excluded entries exp(-inf) -> exactly 0
    denom = e.sum(axis=1)
    if include_positive:
        pos_e = np.exp(pos - hi)
        denom = denom + pos_e
        pos_w = pos_e / denom
    else:
        pos_w = np.zeros_like(pos)
    terms = hi + np.log(denom) - pos
    neg_w = e / denom[:, None]
    return terms, neg_w, pos_w


def _reduce(terms: np.ndarray, reduction: str) -> tuple[float, float]:
    """Loss value and the factor scaling each per-anchor gradient."""
    if reduction == "sum":
        return float(terms.sum()), 1.0
    return float(terms.mean()), 1.0 / terms.shape[0]


def _rownorm_backward(x, grad_hat, eps=DEFAULT_EPS):
    """Backward of row L2 normalization; rows at or below the eps floor
    see the constant-denominator Jacobian."""
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    denom = np.maximum(norms, eps)
    xhat = x / denom[:, None]
    out = grad_hat.copy()
    live = norms > eps
    dots = np.einsum("ij,ij->i", grad_hat, xhat)
    out[live] -= dots[live, None] * xhat[live]
    return out / denom[:, None]


def _colnorm_backward(x, grad_hat, eps=DEFAULT_EPS):
    return _rownorm_backward(x.T, grad_hat.T, eps).T


# ---------------------------------------------------------------------------
# segment pooling
# ---------------------------------------------------------------------------


def segment_pool(f: np.ndarray, seg: SegmentAssignment) -> np.ndarray:
    """M x C matrix of per-segment mean embeddings."""
    f = as_matrix(f, "embedding")
    if seg.segment_of.shape[0] != f.shape[0]:
        raise ShapeError(
            f"segment assignment covers {seg.segment_of.shape[0]} points, "
            f"embedding has {f.shape[0]} rows"
        )
    sizes = seg.sizes
    if np.any(sizes == 0):
        raise PartitionError("segment assignment has an empty segment")
    sums = np.zeros((seg.num_segments, f.shape[1]))
    np.add.at(sums, seg.segment_of, f)
    return sums / sizes[:, None]


def segment_pool_backward(grad_pooled: np.ndarray, seg: SegmentAssignment) -> np.ndarray:
    """Distribute each segment's gradient equally over its member points."""
    sizes = seg.sizes
    return grad_pooled[seg.segment_of] / sizes[seg.segment_of][:, None]


# ---------------------------------------------------------------------------
# the losses
# ---------------------------------------------------------------------------


def _sample_negative_mask(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Per anchor, k distinct negatives drawn uniformly from the n-1 others."""
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        picks = rng.choice(n - 1, size=k, replace=False)
        picks = picks + (picks >= i)  # skip the anchor itself
        mask[i, picks] = True
    return mask


def point_infonce(
    f1: np.ndarray,
    f2: np.ndarray,
    cfg: LossConfig,
    rng: np.random.Generator | None = None,
) -> LossOutput:
    """Point-level contrastive loss between matched views.

    Positives are the matched indices (i, i); negatives all (i, j) with
    j != i, or a per-anchor uniform sample of ``cfg.neg_sample_count`` of
    them when sampling is enabled. Gradients are exact for whichever
    denominator was actually used.
    """
    f1 = as_matrix(f1, "f1")
    f2 = as_matrix(f2, "f2")
    if f1.shape != f2.shape:
        raise ShapeError(f"view embeddings differ: {f1.shape} vs {f2.shape}")
    n = f1.shape[0]
    if n < 2:
        raise EmptyNegativeSetError("point loss needs N >= 2 for a negative set")

    h1 = row_l2_normalize(f1) if cfg.normalize_rows else f1
    h2 = row_l2_normalize(f2) if cfg.normalize_rows else f2
    scores = matmul_nt(h1, h2) / cfg.tau

    k = cfg.neg_sample_count
    if k is not None and k < n - 1:
        if rng is None:
            raise ValueError("negative sampling requires a random stream")
        mask = _sample_negative_mask(n, k, rng)
    else:
        mask = ~np.eye(n, dtype=bool)

    pos = np.diagonal(scores).copy()
    terms, neg_w, pos_w = _anchor_terms(
        pos, scores, mask, cfg.include_positive_in_denominator
    )
    value, scale = _reduce(terms, cfg.reduction)

    dscores = neg_w  # zero outside the mask already
    np.fill_diagonal(dscores, dscores.diagonal() + pos_w - 1.0)
    dscores *= scale / cfg.tau

    gh1 = dscores @ h2
    gh2 = dscores.T @ h1
    g1 = _rownorm_backward(f1, gh1) if cfg.normalize_rows else gh1
    g2 = _rownorm_backward(f2, gh2) if cfg.normalize_rows else gh2
    return LossOutput(value, g1, g2)


def _ag_directional(fq, fk, seg, cfg):
    """Queries fq (points) against pooled keys from fk (segments)."""
    pooled = segment_pool(fk, seg)
    hq = row_l2_normalize(fq) if cfg.normalize_rows else fq
    hk = row_l2_normalize(pooled) if cfg.normalize_rows else pooled
    scores = matmul_nt(hq, hk) / cfg.tau

    n, m = scores.shape
    own = seg.segment_of
    mask = np.ones((n, m), dtype=bool)
    mask[np.arange(n), own] = False

    pos = scores[np.arange(n), own].copy()
    terms, neg_w, pos_w = _anchor_terms(
        pos, scores, mask, cfg.include_positive_in_denominator
    )
    value, scale = _reduce(terms, cfg.reduction)

    dscores = neg_w
    dscores[np.arange(n), own] += pos_w - 1.0
    dscores *= scale / cfg.tau

    ghq = dscores @ hk
    ghk = dscores.T @ hq
    gq = _rownorm_backward(fq, ghq) if cfg.normalize_rows else ghq
    gpooled = _rownorm_backward(pooled, ghk) if cfg.normalize_rows else ghk
    gk = segment_pool_backward(gpooled, seg)
    return LossOutput(value, gq, gk)


def ag_contrast(
    f1: np.ndarray,
    f2: np.ndarray,
    seg: SegmentAssignment,
    cfg: LossConfig,
) -> LossOutput:
    """Asymmetric-granularity loss: view-1 points vs view-2 segment means.

    Directional by construction; ``cfg.symmetric_ag`` averages the two
    directions instead. With singleton segments (M == N, identity ids)
    this reduces bitwise to :func:`point_infonce`.
    """
    f1 = as_matrix(f1, "f1")
    f2 = as_matrix(f2, "f2")
    if f1.shape != f2.shape:
        raise ShapeError(f"view embeddings differ: {f1.shape} vs {f2.shape}")
    if seg.segment_of.shape[0] != f1.shape[0]:
        raise ShapeError(
            f"segment assignment covers {seg.segment_of.shape[0]} points, "
            f"embeddings have {f1.shape[0]} rows"
        )
    if seg.num_segments < 2:
        raise EmptyNegativeSetError(
            "segment loss needs M >= 2 so every point has a negative segment"
        )
    fwd = _ag_directional(f1, f2, seg, cfg)
    if not cfg.symmetric_ag:
        return fwd
    rev = _ag_directional(f2, f1, seg, cfg)
    return LossOutput(
        0.5 * (fwd.value + rev.value),
        0.5 * (fwd.grad_f1 + rev.grad_f2),
        0.5 * (fwd.grad_f2 + rev.grad_f1),
    )


def channel_contrast(f1: np.ndarray, f2: np.ndarray, cfg: LossConfig) -> LossOutput:
    """Channel-map contrastive loss pushing distinct channels orthogonal.

    Negative pairs enter the denominator through the absolute similarity,
    so both correlated and anti-correlated channel pairs are penalized;
    the positive numerator keeps its sign. The subgradient of |x| at 0 is
    taken to be 0.
    """
    f1 = as_matrix(f1, "f1")
    f2 = as_matrix(f2, "f2")
    if f1.shape != f2.shape:
        raise ShapeError(f"view embeddings differ: {f1.shape} vs {f2.shape}")
    c = f1.shape[1]
    if c < 2:
        raise EmptyNegativeSetError("channel loss needs C >= 2 for a negative set")

    h1 = col_l2_normalize(f1) if cfg.normalize_channels else f1
    h2 = col_l2_normalize(f2) if cfg.normalize_channels else f2
    gram = h1.T @ h2  # (C, C): gram[i, j] = c1_i . c2_j
    scores = gram / cfg.tau

    mask = ~np.eye(c, dtype=bool)
    pos = np.diagonal(scores).copy()
    den = np.abs(scores)
    terms, neg_w, pos_w = _anchor_terms(
        pos, den, mask, cfg.include_positive_in_denominator
    )
    value, scale = _reduce(terms, cfg.reduction)

    dgram = neg_w * np.sign(gram)  # |.| backward; neg_w is 0 off the mask
    np.fill_diagonal(dgram, pos_w - 1.0)
    dgram *= scale / cfg.tau

    gh1 = h2 @ dgram.T
    gh2 = h1 @ dgram
    g1 = _colnorm_backward(f1, gh1) if cfg.normalize_channels else gh1
    g2 = _colnorm_backward(f2, gh2) if cfg.normalize_channels else gh2
    return LossOutput(value, g1, g2)


def ep_contrast(
    f1: np.ndarray,
    f2: np.ndarray,
    seg: SegmentAssignment,
    cfg: LossConfig,
) -> LossOutput:
    """Combined objective: segment loss plus ``cfg.lam`` times the channel loss."""
    ag = ag_contrast(f1, f2, seg, cfg)
    if cfg.lam == 0.0:
        return ag
    cc = channel_contrast(f1, f2, cfg)
    return LossOutput(
        ag.value + cfg.lam * cc.value,
        ag.grad_f1 + cfg.lam * cc.grad_f1,
        ag.grad_f2 + cfg.lam * cc.grad_f2,
    )


def channel_abs_cosine_mean(f: np.ndarray) -> float:
    """Mean |cosine| between distinct channel maps of one embedding.

    The redundancy metric the channel loss is meant to drive down.
    """
    f = as_matrix(f, "embedding")
    c = f.shape[1]
    if c < 2:
        raise ShapeError("need at least two channels to compare")
    h = col_l2_normalize(f)
    gram = np.abs(h.T @ h)
    off = gram[~np.eye(c, dtype=bool)]
    return float(off.mean())


# ---------------------------------------------------------------------------
# brute-force oracles: plain loops, no vectorization, no sampling
# ---------------------------------------------------------------------------


def _bf_dot(a, b, counter):
    if counter is not None:
        counter.bump()
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    return total


def _bf_row_normalize(rows, eps=DEFAULT_EPS):
    out = []
    for row in rows:
        sq = 0.0
        for v in row:
            sq += v * v
        norm = math.sqrt(sq)
        d = norm if norm > eps else eps
        out.append([v / d for v in row])
    return out


def _bf_pc(f1, f2, cfg, counter):
    n = len(f1)
    if n < 2:
        raise EmptyNegativeSetError("point loss needs N >= 2 for a negative set")
    if cfg.normalize_rows:
        f1 = _bf_row_normalize(f1)
        f2 = _bf_row_normalize(f2)
    total = 0.0
    for i in range(n):
        pos = _bf_dot(f1[i], f2[i], counter) / cfg.tau
        den = 0.0
        for j in range(n):
            if j == i:
                continue
            den += math.exp(_bf_dot(f1[i], f2[j], counter) / cfg.tau)
        if cfg.include_positive_in_denominator:
            den += math.exp(pos)
        total += math.log(den) - pos
    return total / n if cfg.reduction == "mean" else total


def _bf_ag(f1, f2, seg, cfg, counter):
    n = len(f1)
    m = seg.num_segments
    if m < 2:
        raise EmptyNegativeSetError(
            "segment loss needs M >= 2 so every point has a negative segment"
        )
    members: list[list[int]] = [[] for _ in range(m)]
    for i, alpha in enumerate(seg.segment_of):
        members[int(alpha)].append(i)
    c = len(f2[0])
    pooled = []
    for alpha in range(m):
        row = [0.0] * c
        for i in members[alpha]:
            for k in range(c):
                row[k] += f2[i][k]
        pooled.append([v / len(members[alpha]) for v in row])
    if cfg.normalize_rows:
        f1 = _bf_row_normalize(f1)
        pooled = _bf_row_normalize(pooled)
    total = 0.0
    for i in range(n):
        own = int(seg.segment_of[i])
        pos = _bf_dot(f1[i], pooled[own], counter) / cfg.tau
        den = 0.0
        for beta in range(m):
            if beta == own:
                continue
            den += math.exp(_bf_dot(f1[i], pooled[beta], counter) / cfg.tau)
        if cfg.include_positive_in_denominator:
            den += math.exp(pos)
        total += math.log(den) - pos
    return total / n if cfg.reduction == "mean" else total


def _bf_cc(f1, f2, cfg, counter):
    n = len(f1)
    c = len(f1[0])
    if c < 2:
        raise EmptyNegativeSetError("channel loss needs C >= 2 for a negative set")
    cols1 = [[f1[i][k] for i in range(n)] for k in range(c)]
    cols2 = [[f2[i][k] for i in range(n)] for k in range(c)]
    if cfg.normalize_channels:
        cols1 = _bf_row_normalize(cols1)
        cols2 = _bf_row_normalize(cols2)
    total = 0.0
    for i in range(c):
        pos = _bf_dot(cols1[i], cols2[i], counter) / cfg.tau
        den = 0.0
        for j in range(c):
            if j == i:
                continue
            den += math.exp(abs(_bf_dot(cols1[i], cols2[j], counter)) / cfg.tau)
        if cfg.include_positive_in_denominator:
            den += math.exp(pos)
        total += math.log(den) - pos
    return total / c if cfg.reduction == "mean" else total


def brute_force_loss(
    kind: str,
    f1: np.ndarray,
    f2: np.ndarray,
    seg: SegmentAssignment | None = None,
    cfg: LossConfig = LossConfig(),
    counter: EvalCounter | None = None,
) -> float:
    """Reference value for a loss, computed with explicit pair loops.

    Sampling is never applied; ``counter`` (if given) tallies one bump per
    similarity evaluation, matching :func:`count_pairs`. Inputs are capped
    at oracle scale (N <= 256, C <= 64, M <= 64).
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    f1 = as_matrix(f1, "f1")
    if f1.shape[0] > 256 or f1.shape[1] > 64 or (seg is not None and seg.num_segments > 64):
        raise ValueError(
            f"oracle scale is N <= 256, C <= 64, M <= 64; got N={f1.shape[0]}, "
            f"C={f1.shape[1]}, M={seg.num_segments if seg else 1}"
        )
    a = f1.tolist()
    b = as_matrix(f2, "f2").tolist()
    if kind == "pc":
        return _bf_pc(a, b, cfg, counter)
    if kind == "ag":
        if seg is None:
            raise ValueError("segment loss needs a segment assignment")
        return _bf_ag(a, b, seg, cfg, counter)
    if kind == "cc":
        return _bf_cc(a, b, cfg, counter)
    if seg is None:
        raise ValueError("combined loss needs a segment assignment")
    return _bf_ag(a, b, seg, cfg, counter) + cfg.lam * _bf_cc(a, b, cfg, counter)
