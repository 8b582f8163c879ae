"""Accuracy-contracted scalar special functions.

Every closed-form expression in the analytic and goodput engines reduces to
four primitives: the exponential integral E1, the modified Bessel function
I0 (plus an exponentially scaled variant), the first-order Marcum-Q
function, and the Gaussian hypergeometric series 2F1 restricted to
arguments strictly inside [0, 1).  All routines are pure scalar functions
of their inputs and are safe to call concurrently.

Algorithms
----------
E1        ascending series for x <= 1, continued fraction (modified Lentz)
          for x > 1; the scaled variant exp(x)*E1(x) never overflows.
I0        all-positive power series up to the asymptotic crossover, then
          the large-argument expansion of the scaled function exp(-x)*I0(x).
Marcum Q1 series of Poisson terms times regularized upper-gamma tails,
          swept both ways from the Poisson mode with a certified
          truncation bound on the neglected probability mass.
2F1       plain power series; callers guarantee z < 1 strictly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "AccuracySpec",
    "DEFAULT_ACCURACY",
    "ConvergenceError",
    "exp_integral_e1",
    "exp_integral_e1_scaled",
    "bessel_i0",
    "bessel_i0e",
    "marcum_q1",
    "gauss_2f1",
]

_EULER_GAMMA = 0.5772156649015328606065


class ConvergenceError(RuntimeError):
    """A series or continued fraction failed to reach its tolerance."""


@dataclass(frozen=True)
class AccuracySpec:
    """Series cutoff (relative) and result guarantee (absolute)."""

    rel_tol: float = 1e-12
    abs_tol: float = 1e-10

    def __post_init__(self) -> None:
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")


DEFAULT_ACCURACY = AccuracySpec()

# Crossover between the ascending series and the continued fraction for E1.
_E1_SERIES_MAX = 1.0
# Crossover between the power series and the asymptotic expansion for I0.
_I0_SERIES_MAX = 18.0
# math.exp overflows just above this argument.
_EXP_OVERFLOW = 709.0


# ---------------------------------------------------------------------------
# Exponential integral
# ---------------------------------------------------------------------------


def _e1_series(x: float, rel_tol: float) -> float:
    # E1(x) = -gamma - ln x + sum_{k>=1} (-1)^{k+1} x^k / (k * k!)
    total = -_EULER_GAMMA - math.log(x)
    power = 1.0  # x^k / k!
    k = 0
    while True:
        k += 1
        power *= x / k
        contrib = power / k if k % 2 else -power / k
        total += contrib
        if abs(contrib) <= rel_tol * max(abs(total), 1e-30):
            return total
        if k > 500:
            raise ConvergenceError(f"E1 series stalled at x={x!r}")


def _e1_cf(x: float, rel_tol: float) -> float:
    # exp(x)*E1(x) = 1/(x+1- 1/(x+3- 4/(x+5- 9/(...)))), modified Lentz.
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for k in range(1, 20000):
        a = -float(k * k)
        b += 2.0
        d = b + a * d
        if d == 0.0:
            d = tiny
        c = b + a / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < rel_tol:
            return h
    raise ConvergenceError(f"E1 continued fraction stalled at x={x!r}")


def exp_integral_e1(x: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """Exponential integral E1(x) = int_x^inf exp(-t)/t dt for x > 0."""
    if not x > 0:
        raise ValueError(f"exp_integral_e1 requires x > 0, got {x!r}")
    if x <= _E1_SERIES_MAX:
        return _e1_series(x, acc.rel_tol)
    return math.exp(-x) * _e1_cf(x, acc.rel_tol)


def exp_integral_e1_scaled(x: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """exp(x) * E1(x), finite for arbitrarily large x."""
    if not x > 0:
        raise ValueError(f"exp_integral_e1_scaled requires x > 0, got {x!r}")
    if x <= _E1_SERIES_MAX:
        return math.exp(x) * _e1_series(x, acc.rel_tol)
    return _e1_cf(x, acc.rel_tol)


# ---------------------------------------------------------------------------
# Modified Bessel function of order zero
# ---------------------------------------------------------------------------


def _i0_series(x: float, rel_tol: float) -> float:
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if term <= rel_tol * total:
            return total
        if k > 1000:
            raise ConvergenceError(f"I0 series stalled at x={x!r}")


def _i0e_asymptotic(x: float, rel_tol: float) -> float:
    # exp(-x)*I0(x) ~ (2 pi x)^{-1/2} * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
    total = 1.0
    term = 1.0
    prev = math.inf
    for k in range(1, 60):
        term *= (2 * k - 1) ** 2 / (8.0 * k * x)
        if term >= prev:
            break  # divergent tail reached; best accuracy already attained
        total += term
        prev = term
        if term <= rel_tol * total:
            break
    return total / math.sqrt(2.0 * math.pi * x)


def bessel_i0(x: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """Modified Bessel function I0(x) for x >= 0 (inf on overflow)."""
    if x < 0:
        raise ValueError(f"bessel_i0 requires x >= 0, got {x!r}")
    if x <= _I0_SERIES_MAX:
        return _i0_series(x, acc.rel_tol)
    if x > _EXP_OVERFLOW:
        return math.inf
    return math.exp(x) * _i0e_asymptotic(x, acc.rel_tol)


def bessel_i0e(x: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """Exponentially scaled exp(-x)*I0(x); finite for all x >= 0."""
    if x < 0:
        raise ValueError(f"bessel_i0e requires x >= 0, got {x!r}")
    if x <= _I0_SERIES_MAX:
        return math.exp(-x) * _i0_series(x, acc.rel_tol)
    return _i0e_asymptotic(x, acc.rel_tol)


# ---------------------------------------------------------------------------
# Regularized incomplete gamma (helper for Marcum Q)
# ---------------------------------------------------------------------------


def _regularized_gamma_q(a: float, x: float, rel_tol: float = 1e-14) -> float:
    """Upper regularized incomplete gamma Q(a, x) for a > 0, x >= 0."""
    if x == 0.0:
        return 1.0
    log_prefix = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # series for the lower function P(a, x)
        ap = a
        delt = 1.0 / a
        total = delt
        for _ in range(10000):
            ap += 1.0
            delt *= x / ap
            total += delt
            if abs(delt) < abs(total) * rel_tol:
                return 1.0 - total * math.exp(log_prefix)
        raise ConvergenceError("incomplete gamma series stalled")
    # continued fraction for Q(a, x), modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < rel_tol:
            return h * math.exp(log_prefix)
    raise ConvergenceError("incomplete gamma continued fraction stalled")


# ---------------------------------------------------------------------------
# Marcum Q of order one
# ---------------------------------------------------------------------------

_MARCUM_TAIL_TOL = 1e-13


def marcum_q1(a: float, b: float, acc: AccuracySpec = DEFAULT_ACCURACY) -> float:
    """First-order Marcum-Q function Q1(a, b) for a, b >= 0.

    Q1(a, b) = int_b^inf t exp(-(t^2+a^2)/2) I0(a t) dt.  Evaluated as
    sum_k Pois(k; a^2/2) * Q(k+1, b^2/2), swept in both directions from
    the Poisson mode; the neglected mass on either side is certified to
    stay below the truncation tolerance because the gamma tails are in
    [0, 1].  Absolute error is bounded well inside 1e-9 for all inputs.
    """
    if a < 0 or b < 0:
        raise ValueError(f"marcum_q1 requires a, b >= 0, got ({a!r}, {b!r})")
    s = 0.5 * a * a
    t = 0.5 * b * b
    if t < 1e-250:
        return 1.0  # 1 - Q1 <= 1 - exp(-t) < 1e-250
    if s == 0.0:
        return math.exp(-t)
    k0 = int(s)
    log_s = math.log(s)
    log_t = math.log(t)

    # anchor values at the mode
    p = math.exp(k0 * log_s - s - math.lgamma(k0 + 1))
    g = _regularized_gamma_q(k0 + 1.0, t)
    # pg(k) = exp(-t) t^k / k!, the increment of the gamma tail
    pg = math.exp(k0 * log_t - t - math.lgamma(k0 + 1))

    total = p * g

    # upward sweep: k = k0+1, k0+2, ...
    pk, gk, pgk = p, g, pg
    k = k0
    while True:
        k += 1
        pk *= s / k
        pgk *= t / k
        gk = min(gk + pgk, 1.0)
        total += pk * gk
        if k > s:
            r = s / (k + 1)
            if pk * r / (1.0 - r) < _MARCUM_TAIL_TOL:
                break
        if k - k0 > 10**7:
            raise ConvergenceError("marcum_q1 upward sweep stalled")

    # downward sweep: k = k0-1, ..., 0
    pk, gk, pgk = p, g, pg
    k = k0
    while k > 0:
        pk *= k / s
        gk = max(gk - pgk, 0.0)
        # a flushed-to-zero increment stays zero (k/t may overflow)
        pgk = pgk * (k / t) if pgk > 0.0 else 0.0
        k -= 1
        total += pk * gk
        if k * pk < _MARCUM_TAIL_TOL:
            break

    return min(max(total, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Gaussian hypergeometric series
# ---------------------------------------------------------------------------


def gauss_2f1(
    a: float, b: float, c: float, z: float, acc: AccuracySpec = DEFAULT_ACCURACY
) -> float:
    """2F1(a, b; c; z) by power series for 0 <= z < 1."""
    if z < 0 or z >= 1:
        raise ValueError(f"gauss_2f1 requires 0 <= z < 1, got z={z!r}")
    if c <= 0 and c == int(c):
        raise ValueError(f"gauss_2f1 pole: c={c!r} is a nonpositive integer")
    if z == 0:
        return 1.0
    term = 1.0
    total = 1.0
    for k in range(200000):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        total += term
        if abs(term) <= acc.rel_tol * abs(total):
            return total
    raise ConvergenceError(f"2F1 series stalled at z={z!r} (z too close to 1)")
