"""Per-resource-block opportunistic selection and outage accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import SystemConfig
from .feedback import FeedbackReport

__all__ = [
    "ScheduleDecision",
    "TransmissionOutcome",
    "schedule",
    "realize_fixed_rate",
    "realize_variable_rate",
]


@dataclass(frozen=True)
class ScheduleDecision:
    """Selected user and reported CQI per resource block (-1/NaN = idle)."""

    user: np.ndarray  # (num_rbs,) int, -1 where no user reported
    cqi: np.ndarray  # (num_rbs,) float, NaN where no user reported

    @property
    def scheduled(self) -> np.ndarray:
        return self.user >= 0


@dataclass(frozen=True)
class TransmissionOutcome:
    """Attempted rate, success flag and goodput per resource block.

    The success flag is meaningful on scheduled blocks only; blocks in
    scheduling outage carry zero attempted rate and zero goodput.
    """

    attempted: np.ndarray
    success: np.ndarray
    goodput: np.ndarray


def schedule(reports: list[FeedbackReport], sys: SystemConfig) -> ScheduleDecision:
    """Argmax of reported CQI per block; ties go to the lowest user id.

    Each report covers the ``subband_size`` blocks of its cluster's
    subband grid; blocks nobody reported are left idle.
    """
    n = sys.num_rbs
    best_cqi = np.full(n, -np.inf)
    best_user = np.full(n, -1, dtype=int)
    for rep in sorted(reports, key=lambda r: r.user):
        eta = sys.clusters[rep.cluster].subband_size
        for subband, value in rep.entries:
            lo = subband * eta
            for block in range(lo, lo + eta):
                if value > best_cqi[block]:
                    best_cqi[block] = value
                    best_user[block] = rep.user
    cqi = np.where(best_user >= 0, best_cqi, np.nan)
    return ScheduleDecision(user=best_user, cqi=cqi)


def _attempt(decision: ScheduleDecision, actual_cqi: np.ndarray, rate, threshold):
    scheduled = decision.scheduled
    blocks = np.arange(decision.user.size)
    actual = np.where(
        scheduled, actual_cqi[np.where(scheduled, decision.user, 0), blocks], np.nan
    )
    attempted = np.where(scheduled, rate, 0.0)
    success = scheduled & (actual > threshold)
    goodput = np.where(success, attempted, 0.0)
    return TransmissionOutcome(attempted=attempted, success=success, goodput=goodput)


def realize_fixed_rate(
    decision: ScheduleDecision, actual_cqi: np.ndarray, beta0: float, snr: float
) -> TransmissionOutcome:
    """Transmit at log2(1+snr*beta0); outage when the actual CQI <= beta0.

    ``actual_cqi`` is the (num_users, num_rbs) block view of the actual
    channel quality.
    """
    if beta0 < 0:
        raise ValueError("beta0 must be nonnegative")
    rate = math.log2(1.0 + snr * beta0)
    return _attempt(decision, actual_cqi, rate, beta0)


def realize_variable_rate(
    decision: ScheduleDecision, actual_cqi: np.ndarray, beta1: float, snr: float
) -> TransmissionOutcome:
    """Transmit at log2(1+snr*beta1*reported); outage when actual <= beta1*reported."""
    if not 0.0 <= beta1 <= 1.0:
        raise ValueError("beta1 must lie in [0, 1]")
    reported = np.where(decision.scheduled, decision.cqi, 0.0)
    rate = np.log2(1.0 + snr * beta1 * reported)
    return _attempt(decision, actual_cqi, rate, beta1 * reported)
