"""Rater quality control.

Participants are screened on first-trial ratings with two complementary
rules and the union of both flag sets is excluded:

* low agreement with the consensus (Spearman correlation against the
  per-image median, flagged below ``Q1 - 1.5 * IQR``), and
* systematic deviation (median absolute deviation from the consensus,
  flagged above ``Q3 + 1.5 * IQR``).

Quartiles use the linear interpolation rule (type 7). The consensus is
computed once over all participants and is not recomputed after
exclusions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ComputationError
from .ingest import RatingsTable, first_trial_filter
from .ranking import average_ranks

__all__ = [
    "QcReport",
    "consensus_median",
    "spearman_rho",
    "flag_correlation_outliers",
    "flag_mad_outliers",
    "run_qc",
]

MIN_COMMON_IMAGES = 3
MIN_PARTICIPANTS = 4


def consensus_median(table: RatingsTable) -> dict[str, float]:
    """Per-image median rating over all participants (first trials only)."""
    out: dict[str, float] = {}
    for image_id, records in sorted(table.by_image().items()):
        out[image_id] = float(np.median([r.rating for r in records]))
    return out


def spearman_rho(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average ranks for ties.

    Computed as the Pearson correlation of the rank vectors. Raises
    :class:`ComputationError` when either rank vector is constant, since
    the correlation is undefined in that case.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ComputationError("spearman_rho expects two 1-d arrays of equal length")
    if x.shape[0] < MIN_COMMON_IMAGES:
        raise ComputationError(
            f"spearman_rho needs at least {MIN_COMMON_IMAGES} pairs, got {x.shape[0]}"
        )
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise ComputationError("spearman_rho undefined: a rank vector is constant")
    return float((rx @ ry) / denom)


def _fences(values: np.ndarray) -> tuple[float, float]:
    q1 = float(np.quantile(values, 0.25))
    q3 = float(np.quantile(values, 0.75))
    iqr = q3 - q1
    return q1 - 1.5 * iqr, q3 + 1.5 * iqr


def flag_correlation_outliers(rhos: dict[str, float]) -> tuple[set[str], float]:
    """Participants whose consensus correlation falls below the lower fence."""
    if len(rhos) < MIN_PARTICIPANTS:
        raise ComputationError(
            f"correlation screening needs at least {MIN_PARTICIPANTS} participants"
        )
    values = np.array(list(rhos.values()), dtype=np.float64)
    lower, _ = _fences(values)
    flagged = {pid for pid, rho in rhos.items() if rho < lower}
    return flagged, lower


def flag_mad_outliers(scores: dict[str, float]) -> tuple[set[str], float]:
    """Participants whose median absolute deviation exceeds the upper fence."""
    if len(scores) < MIN_PARTICIPANTS:
        raise ComputationError(
            f"deviation screening needs at least {MIN_PARTICIPANTS} participants"
        )
    values = np.array(list(scores.values()), dtype=np.float64)
    _, upper = _fences(values)
    flagged = {pid for pid, s in scores.items() if s > upper}
    return flagged, upper


@dataclass(frozen=True)
class QcReport:
    """Outcome of the screening pass.

    ``rho`` is ``None`` for participants with fewer than three rated
    images; such participants cannot be assessed by the correlation rule
    and are only subject to the deviation rule.
    """

    rho: dict[str, float | None]
    mad: dict[str, float]
    corr_threshold: float
    mad_threshold: float
    corr_flagged: frozenset[str]
    mad_flagged: frozenset[str]
    excluded: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "excluded", self.corr_flagged | self.mad_flagged)


def run_qc(table: RatingsTable) -> tuple[QcReport, RatingsTable]:
    """Apply the first-trial filter and both screening rules.

    Returns the report together with the filtered table with all flagged
    participants removed.
    """
    filtered = first_trial_filter(table)
    consensus = consensus_median(filtered)
    by_participant = filtered.by_participant()

    rho: dict[str, float | None] = {}
    mad: dict[str, float] = {}
    for pid in sorted(by_participant):
        records = by_participant[pid]
        own = np.array([r.rating for r in records], dtype=np.float64)
        cons = np.array([consensus[r.image_id] for r in records], dtype=np.float64)
        mad[pid] = float(np.median(np.abs(own - cons)))
        if own.shape[0] >= MIN_COMMON_IMAGES:
            try:
                rho[pid] = spearman_rho(own, cons)
            except ComputationError:
                # Constant ratings carry no rank signal; leave the
                # correlation undefined rather than failing the run.
                rho[pid] = None
        else:
            rho[pid] = None

    defined = {pid: v for pid, v in rho.items() if v is not None}
    corr_flagged, corr_threshold = flag_correlation_outliers(defined)
    mad_flagged, mad_threshold = flag_mad_outliers(mad)

    report = QcReport(
        rho=rho,
        mad=mad,
        corr_threshold=corr_threshold,
        mad_threshold=mad_threshold,
        corr_flagged=frozenset(corr_flagged),
        mad_flagged=frozenset(mad_flagged),
    )
    cleaned = filtered.without_participants(report.excluded)
    return report, cleaned
