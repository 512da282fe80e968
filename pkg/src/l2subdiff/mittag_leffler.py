"""Mittag-Leffler function ``E_alpha(x)`` on the negative half-line.

Three evaluation routes are used:

* the power series ``sum x^n / Gamma(alpha n + 1)`` for ``|x| <= 5``, summed
  in double precision with compensation when its terms stay moderate, and in
  extended precision (mpmath) when they do not;
* the asymptotic series ``-sum_{n>=1} x^(-n) / Gamma(1 - alpha n)`` for large
  ``|x|``, used only when optimal truncation reaches double precision;
* otherwise the real-line integral over the spectral density,

      E_alpha(-y) = sin(alpha pi)/(alpha pi)
                    * int_0^inf exp(-(u y)^(1/alpha)) / (u^2 + 2 u cos(alpha pi) + 1) du,

  which follows from ``E_alpha(-t^alpha) = int_0^inf exp(-s t) K_alpha(s) ds``
  after the substitution ``s = u^(1/alpha)``.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate, special

__all__ = ["ml_neg", "ml_series", "ml_asymptotic", "ml_integral", "SERIES_SWITCH"]

SERIES_SWITCH = 5.0
# series terms may exceed the result by this factor before switching precision
_CONDITION_LIMIT = 1e3


def _check(alpha: float, x: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if x > 0:
        raise ValueError("only x <= 0 is supported")


def _series_peak(alpha: float, x: float) -> tuple[int, float]:
    """Index and natural log of the largest series term ``|x|^n / Gamma(alpha n + 1)``."""
    lx = math.log(-x)
    # terms grow while (alpha n)^alpha < |x| roughly; search around that index
    guess = int(math.exp(lx / alpha) / alpha)
    best_n, best = 0, 0.0
    for n in range(max(0, guess - 50), guess + 51):
        val = n * lx - math.lgamma(alpha * n + 1.0)
        if val > best:
            best_n, best = n, val
    return best_n, best


def _series_double(alpha: float, x: float) -> tuple[float, float]:
    """Neumaier-compensated power series; returns ``(value, sum |terms|)``.

    Gives up (``nan, inf``) when the largest term is too big for double precision.
    """
    _, log_peak = _series_peak(alpha, x)
    if log_peak > math.log(1e15):
        return math.nan, math.inf
    s = 0.0
    c = 0.0
    abs_sum = 0.0
    n = 0
    prev = math.inf
    lx = math.log(-x) if x != 0 else -math.inf
    while True:
        # |x|^n / Gamma(alpha n + 1) through logs to avoid overflow in Gamma
        mag = math.exp(n * lx - math.lgamma(alpha * n + 1.0)) if n else 1.0
        term = mag if n % 2 == 0 else -mag
        t = s + term
        if abs(s) >= abs(term):
            c += (s - t) + term
        else:
            c += (term - t) + s
        s = t
        abs_sum += mag
        n += 1
        if mag < prev and mag < 1e-17 * max(abs(s + c), 1e-300):
            break
        prev = mag
        if n > 20000:
            raise RuntimeError("Mittag-Leffler series did not converge")
    return s + c, abs_sum


def ml_series(alpha: float, x: float, extended: bool | None = None) -> float:
    """Power series; ``extended=None`` picks mpmath precision from the conditioning."""
    _check(alpha, x)
    if x == 0:
        return 1.0
    value, abs_sum = _series_double(alpha, x)
    cond = abs_sum / abs(value) if value != 0 else math.inf
    if extended is False or (extended is None and cond < _CONDITION_LIMIT):
        return value
    peak_n, log_peak = _series_peak(alpha, x)
    if peak_n > 50000:
        raise ValueError(f"power series impractical for alpha={alpha}, x={x}")
    digits = 30 + int(log_peak / math.log(10.0))
    with mpmath.workdps(digits):
        a = mpmath.mpf(alpha)
        z = mpmath.mpf(x)
        return float(mpmath.nsum(lambda n: z**n * mpmath.rgamma(a * n + 1), [0, mpmath.inf]))


def ml_asymptotic(alpha: float, x: float) -> tuple[float, float]:
    """Optimally truncated asymptotic series; returns ``(value, error estimate)``."""
    _check(alpha, x)
    if x == 0:
        raise ValueError("asymptotic series needs x < 0")
    s = 0.0
    prev = math.inf
    err = math.inf
    lx = math.log(-x)
    for n in range(1, 400):
        arg = 1.0 - alpha * n
        sign = float(special.gammasgn(arg))
        if arg <= 0 and arg == math.floor(arg):
            continue  # 1/Gamma vanishes at the poles
        # |x^(-n) / Gamma(arg)| through logs; both factors over/underflow separately
        mag = math.exp(-n * lx - float(special.gammaln(arg)))
        if mag > prev:
            err = prev
            break
        s -= (-1.0) ** n * sign * mag
        prev = mag
        err = mag
        if mag < 1e-18 * abs(s):
            break
    return s, err


def ml_integral(alpha: float, x: float) -> float:
    """Spectral-density integral, valid for every ``alpha in (0, 1)`` and ``x < 0``."""
    _check(alpha, x)
    if x == 0:
        return 1.0
    if alpha == 1.0:
        return math.exp(x)
    y = -x
    cos_a = math.cos(alpha * math.pi)
    inv_a = 1.0 / alpha

    # v = u y moves the exponential decay to v = O(1); the rational factor peaks at v = y
    def integrand(v: float) -> float:
        w = v / y
        return math.exp(-(v**inv_a)) / (w * w + 2.0 * w * cos_a + 1.0)

    # beyond v_max the exponential is below 1e-300
    v_max = 700.0**alpha
    breaks = sorted({0.0, min(1.0, v_max), min(y, v_max), v_max})
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi > lo:
            total += integrate.quad(integrand, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)[0]
    return math.sin(alpha * math.pi) / (alpha * math.pi) * total / y


def _ml_scalar(alpha: float, x: float) -> float:
    _check(alpha, x)
    if x == 0:
        return 1.0
    if alpha == 1.0:
        return math.exp(x)
    if -x <= SERIES_SWITCH:
        value, abs_sum = _series_double(alpha, x)
        if abs_sum < _CONDITION_LIMIT * abs(value):
            return value
        # ill-conditioned series (small alpha): the integral is accurate everywhere
        return ml_integral(alpha, x)
    value, err = ml_asymptotic(alpha, x)
    if err < 1e-15 * abs(value):
        return value
    return ml_integral(alpha, x)


def ml_neg(alpha: float, x):
    """``E_alpha(x)`` for ``alpha in (0, 1]`` and ``x <= 0`` (scalar or array)."""
    if np.ndim(x) == 0:
        return _ml_scalar(float(alpha), float(x))
    arr = np.asarray(x, dtype=float)
    out = np.empty_like(arr)
    flat = out.reshape(-1)
    for i, xi in enumerate(arr.reshape(-1)):
        flat[i] = _ml_scalar(float(alpha), float(xi))
    return out
