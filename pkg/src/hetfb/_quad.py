"""Checked adaptive quadrature shared by the analytic and goodput engines."""

from __future__ import annotations

import math

from scipy.integrate import quad

__all__ = ["QuadratureError", "quad_checked"]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


def quad_checked(
    f,
    a: float,
    b: float,
    *,
    points=None,
    epsabs: float = 1e-11,
    epsrel: float = 1e-10,
    limit: int = 300,
    abs_fail: float = 1e-7,
) -> float:
    """scipy.integrate.quad with an explicit failure contract.

    Raises QuadratureError instead of warning when the reported error
    estimate exceeds ``abs_fail`` or the result is not finite.
    """
    out = quad(f, a, b, points=points, epsabs=epsabs, epsrel=epsrel, limit=limit, full_output=1)
    value, abserr = out[0], out[1]
    if len(out) >= 4 and abserr > abs_fail:
        raise QuadratureError(f"quadrature did not converge: {out[3]}")
    if not math.isfinite(value) or abserr > max(abs_fail, 1e-6 * abs(value)):
        raise QuadratureError(
            f"quadrature error estimate {abserr!r} too large for value {value!r}"
        )
    return value
