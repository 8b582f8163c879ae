"""Channel generation and the feedback-imperfection model.

Two channel models are supported:

* a general correlated model: each user's frequency response is the DFT of
  L i.i.d. complex Gaussian taps weighted by a normalized power delay
  profile, giving correlated subcarrier gains;
* a multi-cluster subband fading model: users are grouped into clusters by
  coherence bandwidth, the response is flat within a subband of
  ``subband_size`` resource blocks and i.i.d. across subbands and users.

Imperfections (estimation error plus feedback delay) follow a first-order
Gauss-Markov evolution: the scheduler sees an outdated estimate ``h_hat``
while transmission happens over ``h_tilde = alpha*(h_hat + w) +
sqrt(1-alpha^2)*eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .specfun import bessel_i0e

__all__ = [
    "Cluster",
    "SystemConfig",
    "CorrelatedChannelConfig",
    "ImpairmentParams",
    "ChannelRealization",
    "pdp_exponential",
    "subcarrier_correlation",
    "gen_correlated_channel",
    "gen_subband_fading",
    "apply_impairments",
    "conditional_pdf_actual",
]

_PDP_NORM_TOL = 1e-12


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# Configuration types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cluster:
    """One group of users sharing a coherence bandwidth."""

    subband_size: int  # resource blocks per subband (eta)
    num_users: int

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.subband_size):
            raise ValueError(f"subband_size must be a power of two, got {self.subband_size}")
        if self.num_users < 0:
            raise ValueError("num_users must be nonnegative")


@dataclass(frozen=True)
class SystemConfig:
    """Static description of one multi-cluster downlink experiment.

    ``best_m`` is the base feedback amount of the coarsest cluster; finer
    clusters scale it by ``eta_max / subband_size`` so that every cluster
    reports the same fraction of its subbands.  ``snr`` is linear.
    """

    num_rbs: int
    clusters: tuple[Cluster, ...]
    best_m: int
    snr: float

    def __post_init__(self) -> None:
        if self.num_rbs < 1:
            raise ValueError("num_rbs must be >= 1")
        if not self.clusters:
            raise ValueError("at least one cluster is required")
        object.__setattr__(self, "clusters", tuple(self.clusters))
        sizes = [c.subband_size for c in self.clusters]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("cluster subband sizes must be strictly increasing")
        if sizes[-1] > self.num_rbs or self.num_rbs % sizes[-1] != 0:
            raise ValueError("the largest subband size must divide num_rbs")
        if any(self.num_rbs % s != 0 for s in sizes):
            raise ValueError("every subband size must divide num_rbs")
        if self.num_users < 1:
            raise ValueError("total number of users must be >= 1")
        if not 1 <= self.best_m <= self.m_full:
            raise ValueError(
                f"best_m must lie in [1, {self.m_full}] for this configuration"
            )
        if not self.snr > 0:
            raise ValueError("snr must be positive (linear scale)")

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    @property
    def num_users(self) -> int:
        return sum(c.num_users for c in self.clusters)

    @property
    def eta_max(self) -> int:
        return self.clusters[-1].subband_size

    @property
    def m_full(self) -> int:
        """Feedback amount at which every subband of every user is reported."""
        return self.num_rbs // self.eta_max

    @property
    def report_prob(self) -> float:
        """Probability that a given user reports a given subband."""
        return self.eta_max * self.best_m / self.num_rbs

    def num_subbands(self, g: int) -> int:
        return self.num_rbs // self.clusters[g].subband_size

    def user_offset(self, g: int) -> int:
        """Global id of the first user in cluster ``g``."""
        return sum(c.num_users for c in self.clusters[:g])


@dataclass(frozen=True)
class CorrelatedChannelConfig:
    """Tap-domain description of the correlated subcarrier model."""

    num_subcarriers: int
    subcarriers_per_rb: int
    pdp: tuple[float, ...]  # tap powers sigma_l^2, normalized to 1

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.num_subcarriers):
            raise ValueError("num_subcarriers must be a power of two")
        if self.subcarriers_per_rb < 1 or self.num_subcarriers % self.subcarriers_per_rb:
            raise ValueError("subcarriers_per_rb must divide num_subcarriers")
        object.__setattr__(self, "pdp", tuple(float(p) for p in self.pdp))
        if len(self.pdp) < 1:
            raise ValueError("at least one tap is required")
        if abs(sum(self.pdp) - 1.0) > _PDP_NORM_TOL:
            raise ValueError("tap powers must sum to 1")

    @property
    def num_taps(self) -> int:
        return len(self.pdp)

    @property
    def num_rbs(self) -> int:
        return self.num_subcarriers // self.subcarriers_per_rb


@dataclass(frozen=True)
class ImpairmentParams:
    """Estimation-error variance and delay correlation of the feedback."""

    est_error_var: float  # sigma_w^2
    delay_corr: float  # alpha

    def __post_init__(self) -> None:
        if not 0.0 <= self.est_error_var < 1.0:
            raise ValueError("est_error_var must lie in [0, 1)")
        if not 0.0 <= self.delay_corr <= 1.0:
            raise ValueError("delay_corr must lie in [0, 1]")
        if self._denom <= 0.0:
            raise ValueError(
                "degenerate impairments (delay_corr=1 with est_error_var=0); "
                "use the perfect-feedback path instead"
            )

    @property
    def _denom(self) -> float:
        a = self.delay_corr
        return a * a * self.est_error_var + 1.0 - a * a

    @property
    def alpha_w(self) -> float:
        """Composite impairment scale; recomputed on access, never cached."""
        return math.sqrt(2.0 / self._denom)

    @property
    def estimate_var(self) -> float:
        """Variance of the channel estimate h_hat (so h keeps unit variance)."""
        return 1.0 - self.est_error_var


# ---------------------------------------------------------------------------
# Channel realizations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelRealization:
    """Per-user complex gains for one fading draw.

    ``gains`` holds one array per cluster, shaped (users, granules); the
    granule is a subcarrier for the correlated model and a subband for the
    subband fading model.
    """

    granularity: str  # "subcarrier" | "subband"
    gains: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if self.granularity not in ("subcarrier", "subband"):
            raise ValueError(f"unknown granularity {self.granularity!r}")
        object.__setattr__(self, "gains", tuple(self.gains))

    def block_gains(self, sys: SystemConfig) -> np.ndarray:
        """Resource-block view (num_users, num_rbs); subband model only."""
        if self.granularity != "subband":
            raise ValueError("block view is defined for subband granularity only")
        parts = []
        for cluster, g in zip(sys.clusters, self.gains):
            parts.append(np.repeat(g, cluster.subband_size, axis=1))
        return np.concatenate(parts, axis=0)


def _complex_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    z = rng.standard_normal(shape + (2,))
    return math.sqrt(0.5) * (z[..., 0] + 1j * z[..., 1])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def pdp_exponential(num_taps: int, decay: float) -> np.ndarray:
    """Exponentially decaying tap powers, normalized to unit total power."""
    if num_taps < 1:
        raise ValueError("num_taps must be >= 1")
    if not decay > 0:
        raise ValueError("decay must be positive")
    l = np.arange(num_taps)
    scale = -math.expm1(-1.0 / decay) / (-math.expm1(-num_taps / decay))
    return scale * np.exp(-l / decay)


def subcarrier_correlation(pdp, n1: int, n2: int, num_subcarriers: int) -> complex:
    """Correlation between the gains at subcarriers n1 and n2."""
    pdp = np.asarray(pdp, dtype=float)
    l = np.arange(pdp.size)
    return complex(np.sum(pdp * np.exp(-2j * math.pi * l * (n2 - n1) / num_subcarriers)))


def gen_correlated_channel(
    cfg: CorrelatedChannelConfig, num_users: int, seed
) -> ChannelRealization:
    """Draw subcarrier gains for ``num_users`` users of one cluster.

    Deterministic given (cfg, num_users, seed).
    """
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    rng = np.random.default_rng(seed)
    taps = _complex_normal(rng, (num_users, cfg.num_taps))
    gains = _correlated_gains(cfg, taps)
    return ChannelRealization("subcarrier", (gains,))


def _dft_phases(cfg: CorrelatedChannelConfig) -> np.ndarray:
    l = np.arange(cfg.num_taps)[:, None]
    n = np.arange(cfg.num_subcarriers)[None, :]
    return np.exp(-2j * math.pi * l * n / cfg.num_subcarriers)


def _correlated_gains(cfg: CorrelatedChannelConfig, taps: np.ndarray) -> np.ndarray:
    """Map i.i.d. unit taps (..., L) to subcarrier gains (..., Nc)."""
    sigma = np.sqrt(np.asarray(cfg.pdp))
    return (taps * sigma) @ _dft_phases(cfg)


def gen_subband_fading(sys: SystemConfig, seed) -> ChannelRealization:
    """Draw i.i.d. unit-variance subband gains for every user and cluster."""
    rng = np.random.default_rng(seed)
    gains = []
    for g in range(sys.num_clusters):
        shape = (sys.clusters[g].num_users, sys.num_subbands(g))
        gains.append(_complex_normal(rng, shape))
    return ChannelRealization("subband", tuple(gains))


def apply_impairments(
    realization: ChannelRealization, imp: ImpairmentParams, seed
) -> tuple[ChannelRealization, ChannelRealization]:
    """Derive (estimated, actual) gains from a unit-variance fading draw.

    The input draw supplies the normalized estimate: ``h_hat`` is the draw
    scaled to variance 1-sigma_w^2, so that ``h = h_hat + w`` has unit
    variance.  The actual channel evolves by the Gauss-Markov step
    ``h_tilde = alpha*(h_hat+w) + sqrt(1-alpha^2)*eps`` with fresh i.i.d.
    noise per user and subband.  Deterministic given (realization, imp,
    seed).
    """
    rng = np.random.default_rng(seed)
    a = imp.delay_corr
    sd_est = math.sqrt(imp.estimate_var)
    sd_err = math.sqrt(imp.est_error_var)
    sd_innov = math.sqrt(1.0 - a * a)
    est, actual = [], []
    for gains in realization.gains:
        h_hat = sd_est * gains
        w = sd_err * _complex_normal(rng, gains.shape)
        eps = _complex_normal(rng, gains.shape)
        est.append(h_hat)
        actual.append(a * (h_hat + w) + sd_innov * eps)
    return (
        ChannelRealization(realization.granularity, tuple(est)),
        ChannelRealization(realization.granularity, tuple(actual)),
    )


def conditional_pdf_actual(x: float, chi_hat: float, imp: ImpairmentParams) -> float:
    """Density of the actual CQI given the reported estimate ``chi_hat``.

    Noncentral-exponential law of |h_tilde|^2 given |h_hat|^2; evaluated
    through the scaled Bessel function so large arguments cannot overflow.
    """
    if x < 0 or chi_hat < 0:
        raise ValueError("CQI values must be nonnegative")
    aw2 = imp.alpha_w**2
    a = imp.delay_corr
    bessel_arg = aw2 * a * math.sqrt(chi_hat * x)
    exponent = -0.5 * aw2 * (math.sqrt(x) - a * math.sqrt(chi_hat)) ** 2
    return 0.5 * aw2 * bessel_i0e(bessel_arg) * math.exp(exponent)
