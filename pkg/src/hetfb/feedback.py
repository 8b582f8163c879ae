"""CQI computation and best-M selection with per-cluster scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, SystemConfig

__all__ = [
    "FeedbackReport",
    "cqi_subband_avg_rate",
    "best_m_select",
    "cluster_feedback_quota",
    "subband_reports",
]


@dataclass(frozen=True)
class FeedbackReport:
    """One user's reported (subband index, CQI) pairs, best first."""

    user: int
    cluster: int
    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple((int(i), float(v)) for i, v in self.entries))
        indices = [i for i, _ in self.entries]
        if len(set(indices)) != len(indices):
            raise ValueError("reported subband indices must be distinct")


def cqi_subband_avg_rate(gains: np.ndarray, snr_per_subcarrier: float) -> float:
    """Average rate (bits/s/Hz) over one subband's subcarrier gains."""
    gains = np.asarray(gains)
    if gains.size == 0:
        raise ValueError("a subband must contain at least one subcarrier")
    return float(np.mean(np.log2(1.0 + snr_per_subcarrier * np.abs(gains) ** 2)))


def best_m_select(cqis, m: int) -> list[tuple[int, float]]:
    """The m largest CQI values with their indices, descending.

    Ties break toward the lower index so results are reproducible.
    """
    cqis = np.asarray(cqis, dtype=float)
    if not 1 <= m <= cqis.size:
        raise ValueError(f"m must lie in [1, {cqis.size}], got {m}")
    order = sorted(range(cqis.size), key=lambda i: (-cqis[i], i))
    return [(i, float(cqis[i])) for i in order[:m]]


def cluster_feedback_quota(sys: SystemConfig, g: int) -> int:
    """Number of CQI values a user in cluster ``g`` reports."""
    return (sys.eta_max // sys.clusters[g].subband_size) * sys.best_m


def subband_reports(realization: ChannelRealization, sys: SystemConfig) -> list[FeedbackReport]:
    """Best-M feedback from a subband fading draw (CQI = squared gain)."""
    if realization.granularity != "subband":
        raise ValueError("subband_reports requires subband granularity")
    reports = []
    for g, gains in enumerate(realization.gains):
        quota = cluster_feedback_quota(sys, g)
        for k in range(gains.shape[0]):
            cqis = np.abs(gains[k]) ** 2
            reports.append(
                FeedbackReport(
                    user=sys.user_offset(g) + k,
                    cluster=g,
                    entries=tuple(best_m_select(cqis, quota)),
                )
            )
    return reports
