"""Derivatives of log-gamma for real arguments > 0.

Upward recurrence to x >= 10, then the Stirling-type asymptotic series.
Absolute error is below 1e-13 over the range used by the estimator.
"""

import math

_SHIFT = 10.0

# B_{2k} / (2k) for k = 1..7
_DIGAMMA_COEFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_{2k} for k = 1..7
_TRIGAMMA_COEFS = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def digamma(x: float) -> float:
    if x <= 0:
        raise ValueError(f"digamma defined here only for x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_COEFS:
        series += c * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    if x <= 0:
        raise ValueError(f"trigamma defined here only for x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for c in _TRIGAMMA_COEFS:
        series += c * power
        power *= inv2
    return acc + inv + 0.5 * inv2 + series


def dlgamma(order: int, x: float) -> float:
    """``order``-th derivative of log Gamma at ``x`` (order 0, 1 or 2)."""
    if order == 0:
        return math.lgamma(x)
    if order == 1:
        return digamma(x)
    if order == 2:
        return trigamma(x)
    raise ValueError("only orders 0, 1, 2 are implemented")
