"""Exponent bookkeeping for the iteration norms, in exact rational arithmetic.

For dimension n and loss parameter delta:

    p_*   = 2(n-1)/(n-3) + delta      (slightly above the endpoint Strichartz exponent)
    p_**  = 2n/(n-2) - delta
    1/p_*** = (1/2) (1/2 + 1/p_**)

and the admissible truncation window for the angular exponent sigma is

    (n+1)/((n-1)(n-3)) < sigma < 1/2,

which is nonempty exactly when n >= 6.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import ParameterError


@dataclass(frozen=True)
class ExponentSet:
    n: int
    delta: Fraction
    p_star: Fraction
    p_sstar: Fraction
    p_ssstar: Fraction


def exponents(n: int, delta=Fraction(1, 100)) -> ExponentSet:
    """Exact (p_*, p_**, p_***) for dimension n; needs n > 3."""
    if n <= 3:
        raise ParameterError(f"p_* is undefined for n={n} (needs n > 3)")
    d = Fraction(delta)
    p_star = Fraction(2 * (n - 1), n - 3) + d
    p_sstar = Fraction(2 * n, n - 2) - d
    inv_ppp = Fraction(1, 2) * (Fraction(1, 2) + 1 / p_sstar)
    return ExponentSet(n=n, delta=d, p_star=p_star, p_sstar=p_sstar, p_ssstar=1 / inv_ppp)


def sigma_window(n: int) -> tuple:
    """Exact (lower, upper) bounds for sigma; the window is nonempty iff n >= 6."""
    if n <= 3:
        raise ParameterError(f"sigma window is undefined for n={n} (needs n > 3)")
    return Fraction(n + 1, (n - 1) * (n - 3)), Fraction(1, 2)


def validate_sigma(n: int, sigma: float) -> None:
    """Enforce the window for n >= 6; any sigma in (0, 1/2) is allowed below that."""
    if not 0.0 < sigma < 0.5:
        raise ParameterError(f"sigma={sigma} outside (0, 1/2)")
    if n >= 6:
        lo, hi = sigma_window(n)
        if not float(lo) < sigma < float(hi):
            raise ParameterError(
                f"sigma={sigma} outside the admissible window ({lo}, {hi}) for n={n}")
