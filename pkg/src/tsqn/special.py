"""Normal distribution and chi-squared helpers."""

import math

import numpy as np
from scipy import optimize, special

from .errors import DomainError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def std_normal_cdf(x):
    """Standard normal CDF through ``erfc``; accurate in both tails."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def std_normal_sf(x):
    """Upper tail ``1 - Phi(x)`` without cancellation."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def chi2_quantile(p: float, dof: int, tol: float = 1e-10) -> float:
    """Quantile of the chi-squared law by inverting the regularized incomplete gamma.

    Args:
        p: Probability level in (0, 1).
        dof: Degrees of freedom, a positive integer.
        tol: Absolute tolerance on the returned quantile.

    Raises:
        DomainError: ``p`` outside (0, 1) or ``dof < 1``.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"chi2_quantile needs 0 < p < 1, got {p!r}")
    if int(dof) != dof or dof < 1:
        raise DomainError(f"chi2_quantile needs a positive integer dof, got {dof!r}")
    k = 0.5 * dof
    # work on whichever tail is small to keep relative precision
    if p <= 0.5:
        def fn(x):
            return special.gammainc(k, 0.5 * x) - p
    else:
        q = 1.0 - p

        def fn(x):
            return q - special.gammaincc(k, 0.5 * x)

    hi = max(1.0, 2.0 * dof)
    while fn(hi) < 0.0:
        hi *= 2.0
    return float(optimize.brentq(fn, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))
