"""Empirical verification of the pair-count / memory scaling claims.

Memory is *accounted*, not probed from the allocator: a loss evaluation
materializes one float64 buffer entry per similarity it scores (positives
plus negatives; exponentiation reuses the buffer), so

    accounted_bytes = 8 * (positive_count + negative_count).

That makes the figures deterministic and platform-independent: quadratic
in N for the point loss, linear in N for the segment loss at fixed M, and
independent of N for the channel loss at fixed C. Wall times are medians
over repeated runs of the full loss (value and gradients) on random
embeddings. An optional byte budget rejects configurations whose
accounted buffer would not fit, which is how the infeasibility of
full-enumeration point-level contrast at scale is reproduced.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, DomainError
from .losses import LossConfig, ag_contrast, channel_contrast, count_pairs, point_infonce
from .rng import substream
from .superpoint import SegmentAssignment

BYTES_PER_ENTRY = 8


@dataclass(frozen=True)
class BenchRow:
    kind: str
    n: int
    m: int
    c: int
    positives: int
    negatives: int
    accounted_bytes: int
    wall_time_s: float


@dataclass(frozen=True)
class BenchReport:
    kind: str
    m: int
    c: int
    rows: tuple[BenchRow, ...]
    pair_exponent: float | None
    byte_exponent: float | None

    def csv_lines(self) -> list[str]:
        lines = ["kind,n,m,c,positives,negatives,accounted_bytes,wall_time_s"]
        for r in self.rows:
            lines.append(
                f"{r.kind},{r.n},{r.m},{r.c},{r.positives},{r.negatives},"
                f"{r.accounted_bytes},{r.wall_time_s:.6f}"
            )
        return lines

    def table_lines(self) -> list[str]:
        header = (
            f"{'N':>8} {'M':>6} {'C':>4} {'positives':>10} {'negatives':>12} "
            f"{'bytes':>14} {'median s':>10}"
        )
        lines = [
            f"loss kind: {self.kind}",
            "accounting: 8 bytes per scored similarity (positives + negatives),",
            "exponent buffers reuse the similarity buffer",
            header,
        ]
        for r in self.rows:
            lines.append(
                f"{r.n:>8} {r.m:>6} {r.c:>4} {r.positives:>10} {r.negatives:>12} "
                f"{r.accounted_bytes:>14} {r.wall_time_s:>10.4f}"
            )
        pair = "n/a" if self.pair_exponent is None else f"{self.pair_exponent:.3f}"
        byte = "n/a" if self.byte_exponent is None else f"{self.byte_exponent:.3f}"
        lines.append(f"log-log exponent vs N: negative pairs {pair}, accounted bytes {byte}")
        return lines


def accounted_bytes(kind: str, n: int, m: int, c: int) -> int:
    pos, neg = count_pairs(kind, n, m, c)
    return BYTES_PER_ENTRY * (pos + neg)


def fit_exponent(sizes, measurements) -> float:
    """Least-squares slope of log(measurement) against log(size)."""
    sizes = np.asarray(sizes, dtype=np.float64)
    values = np.asarray(measurements, dtype=np.float64)
    if sizes.shape != values.shape or sizes.ndim != 1:
        raise DomainError("sizes and measurements must be 1-D and equally long")
    if sizes.size < 4:
        raise DomainError(f"need at least 4 points to fit an exponent, got {sizes.size}")
    if np.any(sizes <= 0) or np.any(values <= 0):
        raise DomainError("sizes and measurements must be strictly positive")
    ly = np.log(values)
    if np.all(ly == ly[0]):
        return 0.0
    lx = np.log(sizes)
    lx = lx - lx.mean()
    return float(np.dot(lx, ly - ly.mean()) / np.dot(lx, lx))


def _balanced_segments(n: int, m: int) -> SegmentAssignment:
    return SegmentAssignment(np.arange(n, dtype=np.int64) % m, m)


def _run_once(kind: str, n: int, m: int, c: int, rng: np.random.Generator) -> float:
    f1 = rng.normal(size=(n, c))
    f2 = rng.normal(size=(n, c))
    cfg = LossConfig(reduction="mean")
    start = time.perf_counter()
    if kind == "pc":
        point_infonce(f1, f2, cfg)
    elif kind == "ag":
        ag_contrast(f1, f2, _balanced_segments(n, m), cfg)
    else:
        channel_contrast(f1, f2, cfg)
    return time.perf_counter() - start


def bench_loss(
    kind: str,
    sizes: list[int],
    m: int = 32,
    c: int = 32,
    repeats: int = 3,
    seed: int = 0,
    byte_budget: int | None = None,
    measure: bool = True,
) -> BenchReport:
    """Scaling report for one loss kind over ascending point counts.

    Counts and accounted bytes come from the pair formulas; wall times are
    medians over ``repeats`` full evaluations (skipped when ``measure`` is
    False). A configuration whose accounted bytes exceed ``byte_budget``
    raises :class:`BudgetError` naming the offending size.
    """
    kind = kind.lower()
    if kind not in ("pc", "ag", "cc"):
        raise ValueError(f"bench kind must be pc/ag/cc, got {kind!r}")
    if not sizes or list(sizes) != sorted(sizes):
        raise ValueError("sizes must be a non-empty ascending list")
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    rows = []
    for n in sizes:
        pos, neg = count_pairs(kind, n, m, c)
        nbytes = BYTES_PER_ENTRY * (pos + neg)
        if byte_budget is not None and nbytes > byte_budget:
            raise BudgetError(
                f"{kind} at N={n} (M={m}, C={c}) needs {nbytes} accounted bytes, "
                f"budget is {byte_budget}"
            )
        if measure:
            times = [
                _run_once(kind, n, m, c, substream(seed, n, r)) for r in range(repeats)
            ]
            wall = float(np.median(times))
        else:
            wall = 0.0
        rows.append(BenchRow(kind, n, m, c, pos, neg, nbytes, wall))
    pair_exp = byte_exp = None
    if len(sizes) >= 4:
        pair_exp = fit_exponent(sizes, [r.negatives for r in rows])
        byte_exp = fit_exponent(sizes, [r.accounted_bytes for r in rows])
    return BenchReport(kind, m, c, tuple(rows), pair_exp, byte_exp)
