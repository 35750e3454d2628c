"""Saturation functions and the conditional moments of a saturated output.

For a saturation ``S`` with observable band ``[l, u]`` and clamp values
``L``/``U``, and additive noise ``e`` with CDF ``F`` and density ``f``::

    G(x)     = E[S(x + e)]
    G'(x)    = F(u-x) - F(l-x) + (l-L) f(l-x) + (U-u) f(u-x)
    sigma(x) = E[(S(x + e) - G(x))^2]

Gaussian noise uses closed forms built from truncated normal moments;
tabulated noise integrates the piecewise-linear interpolated density exactly.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AssumptionViolation, ConfigError
from .special import std_normal_cdf, std_normal_pdf, std_normal_sf

BOUNDS_TOL = 1e-8
GRID_HALF_POINTS = 2048
_FD_STEP = 1e-5
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
TINY = sys.float_info.min
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class SaturationSpec:
    """Saturation ``S(x) = L if x < l; x if l <= x <= u; U if x > u``.

    ``l`` may be ``-inf`` and ``u`` may be ``+inf``; the matching clamp value
    is then irrelevant and must itself be infinite.
    """

    l: float
    u: float
    L: float
    U: float

    def __post_init__(self):
        l, u, L, U = (float(v) for v in (self.l, self.u, self.L, self.U))
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "U", U)
        if any(math.isnan(v) for v in (l, u, L, U)):
            raise ConfigError("saturation thresholds must not be NaN")
        if not (L <= l <= u <= U):
            raise ConfigError(
                f"threshold ordering L <= l <= u <= U violated: L={L}, l={l}, u={u}, U={U}",
                code="E_ORDER",
            )
        if math.isfinite(l) and not math.isfinite(L):
            raise ConfigError("finite lower threshold needs a finite lower clamp value")
        if math.isfinite(u) and not math.isfinite(U):
            raise ConfigError("finite upper threshold needs a finite upper clamp value")
        if l == math.inf or u == -math.inf:
            raise ConfigError("l may only be -inf and u may only be +inf")

    @classmethod
    def linear(cls) -> "SaturationSpec":
        return cls(-math.inf, math.inf, -math.inf, math.inf)

    @classmethod
    def binary(cls, threshold: float = 0.0) -> "SaturationSpec":
        return cls(threshold, threshold, 0.0, 1.0)

    @classmethod
    def censored(cls, lower: float, upper: float) -> "SaturationSpec":
        return cls(lower, upper, lower, upper)

    @property
    def is_linear(self) -> bool:
        return self.l == -math.inf and self.u == math.inf

    @property
    def is_censored(self) -> bool:
        """Clamp values coincide with the thresholds (classical Tobit form)."""
        return self.L == self.l and self.U == self.u

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.l, self.u, self.L, self.U)


@dataclass(frozen=True)
class NoiseModel:
    """Conditional noise law.

    Use :meth:`gaussian` or :meth:`tabulated` to build one. ``eta`` is the
    moment guard of the noise assumption and is only carried along.
    """

    kind: str
    variance: float = 1.0
    grid: tuple = field(default=(), repr=False)
    cdf: tuple = field(default=(), repr=False)
    pdf: tuple = field(default=(), repr=False)
    eta: float = 1.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError("moment guard eta must be positive")
        if self.kind == "gaussian":
            if not (self.variance > 0 and math.isfinite(self.variance)):
                raise ConfigError(f"gaussian noise needs variance > 0, got {self.variance}")
        elif self.kind == "tabulated":
            x = np.asarray(self.grid, dtype=float)
            F = np.asarray(self.cdf, dtype=float)
            f = np.asarray(self.pdf, dtype=float)
            if x.ndim != 1 or x.size < 2 or F.shape != x.shape or f.shape != x.shape:
                raise ConfigError("tabulated noise needs equal-length grid, cdf and pdf arrays")
            if np.any(np.diff(x) <= 0):
                raise ConfigError("tabulated grid must be strictly increasing")
            if np.any(np.diff(F) < 0):
                raise ConfigError("tabulated CDF must be nondecreasing")
            if abs(F[0]) > 1e-6 or abs(F[-1] - 1.0) > 1e-6:
                raise ConfigError("tabulated CDF must run from 0 to 1")
            if np.any(f < 0):
                raise ConfigError("tabulated pdf must be nonnegative")
            mass = float(np.trapezoid(f, x))
            if abs(mass - 1.0) > 1e-6:
                raise ConfigError(f"tabulated pdf integrates to {mass}, not 1")
        else:
            raise ConfigError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def gaussian(cls, variance: float = 1.0, eta: float = 1.0) -> "NoiseModel":
        return cls("gaussian", variance=float(variance), eta=eta)

    @classmethod
    def tabulated(cls, grid, cdf, pdf, eta: float = 1.0) -> "NoiseModel":
        return cls(
            "tabulated",
            variance=math.nan,
            grid=tuple(float(v) for v in grid),
            cdf=tuple(float(v) for v in cdf),
            pdf=tuple(float(v) for v in pdf),
            eta=eta,
        )

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def full_support(self) -> bool:
        """Density positive on the whole real line."""
        return self.kind == "gaussian"

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "gaussian":
            return (-math.inf, math.inf)
        return (self.grid[0], self.grid[-1])

    @cached_property
    def _table(self):
        # the law is the interpolated density normalized to unit mass; its CDF
        # is piecewise quadratic and replaces the (validated) cdf column
        x = np.asarray(self.grid)
        f = np.asarray(self.pdf)
        cum = np.concatenate(([0.0], np.cumsum(np.diff(x) * (f[1:] + f[:-1]) / 2)))
        return x, f / cum[-1], cum / cum[-1]

    def _table_cdf(self, z):
        x, f, cum = self._table
        z = np.asarray(z, dtype=float)
        i = np.clip(np.searchsorted(x, z, side="right") - 1, 0, x.size - 2)
        h = x[i + 1] - x[i]
        d = np.clip(z - x[i], 0.0, h)
        val = cum[i] + f[i] * d + (f[i + 1] - f[i]) * d * d / (2 * h)
        return np.where(z <= x[0], 0.0, np.where(z >= x[-1], 1.0, val))

    def F(self, z):
        if self.kind == "gaussian":
            return std_normal_cdf(np.asarray(z, dtype=float) / self.std)
        return self._table_cdf(z)

    def Fbar(self, z):
        """Survival function ``1 - F(z)``."""
        if self.kind == "gaussian":
            return std_normal_sf(np.asarray(z, dtype=float) / self.std)
        return 1.0 - self._table_cdf(z)

    def f(self, z):
        if self.kind == "gaussian":
            return std_normal_pdf(np.asarray(z, dtype=float) / self.std) / self.std
        x, f, _ = self._table
        return np.interp(z, x, f, left=0.0, right=0.0)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.std, size=size)
        # inverse CDF: locate the knot interval, then solve its quadratic
        x, f, cum = self._table
        u = rng.uniform(size=size)
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, x.size - 2)
        h = x[i + 1] - x[i]
        slope = (f[i + 1] - f[i]) / h
        r = u - cum[i]
        disc = np.sqrt(np.maximum(f[i] ** 2 + 2 * slope * r, 0.0))
        # rationalized root of slope/2 d^2 + f_i d = r
        den = f[i] + disc
        d = np.divide(2 * r, den, out=np.zeros_like(r), where=den > 0)
        return x[i] + np.clip(d, 0.0, h)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "variance": self.variance, "eta": self.eta}
        return {
            "kind": "tabulated",
            "grid": list(self.grid),
            "cdf": list(self.cdf),
            "pdf": list(self.pdf),
            "eta": self.eta,
        }


@dataclass(frozen=True)
class LinkBounds:
    """Extremes of ``G'`` on ``[-M, M]``.

    ``rho`` is ``None`` when the Lipschitz constant was not requested.
    ``underflow`` marks a lower bound that is positive in exact arithmetic
    but below the smallest normal double; ``g_lo`` is then ``TINY``.
    """

    g_lo: float
    g_hi: float
    M: float
    rho: float | None = None
    underflow: bool = False


def saturate(x, spec: SaturationSpec):
    """Apply the saturation function (scalar or array)."""
    if np.ndim(x) == 0:
        x = float(x)
        if x < spec.l:
            return spec.L
        if x > spec.u:
            return spec.U
        return x
    x = np.asarray(x, dtype=float)
    return np.where(x < spec.l, spec.L, np.where(x > spec.u, spec.U, x))


# ---------------------------------------------------------------------------
# Gaussian closed forms


def _gauss_band_moments(a, b, s2: float, order: int):
    """``I_j = int_a^b z^j f(z) dz`` for ``N(0, s2)``, ``j = 0..order``.

    Uses ``I_j = s2 * ((j-1) I_{j-2} + a^{j-1} f(a) - b^{j-1} f(b))``.
    Infinite endpoints contribute zero boundary terms.
    """
    sd = math.sqrt(s2)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    za, zb = a / sd, b / sd
    # mass by the tail that avoids cancellation
    mass = np.where(a > 0, std_normal_sf(za) - std_normal_sf(zb), std_normal_cdf(zb) - std_normal_cdf(za))
    fa = np.where(np.isfinite(a), std_normal_pdf(za) / sd, 0.0)
    fb = np.where(np.isfinite(b), std_normal_pdf(zb) / sd, 0.0)
    af = np.where(np.isfinite(a), a, 0.0)
    bf = np.where(np.isfinite(b), b, 0.0)
    out = [mass, s2 * (fa - fb)]
    for j in range(2, order + 1):
        out.append(s2 * ((j - 1) * out[j - 2] + af ** (j - 1) * fa - bf ** (j - 1) * fb))
    return out[: order + 1]


def _scalar_band_moments(a: float, b: float, s2: float, order: int) -> list[float]:
    """Scalar twin of :func:`_gauss_band_moments` on the ``math`` module."""
    sd = math.sqrt(s2)
    za, zb = a / sd, b / sd
    if a > 0:
        mass = 0.5 * (math.erfc(za / _SQRT2) - math.erfc(zb / _SQRT2))
    else:
        mass = 0.5 * (math.erfc(-zb / _SQRT2) - math.erfc(-za / _SQRT2))
    fin_a, fin_b = math.isfinite(a), math.isfinite(b)
    fa = _INV_SQRT_2PI * math.exp(-0.5 * za * za) / sd if fin_a else 0.0
    fb = _INV_SQRT_2PI * math.exp(-0.5 * zb * zb) / sd if fin_b else 0.0
    af = a if fin_a else 0.0
    bf = b if fin_b else 0.0
    out = [mass, s2 * (fa - fb)]
    for j in range(2, order + 1):
        out.append(s2 * ((j - 1) * out[j - 2] + af ** (j - 1) * fa - bf ** (j - 1) * fb))
    return out[: order + 1]


def _scalar_tails(x: float, spec: SaturationSpec, sd: float) -> tuple[float, float]:
    p_lo = 0.5 * math.erfc(-(spec.l - x) / (sd * _SQRT2)) if math.isfinite(spec.l) else 0.0
    p_hi = 0.5 * math.erfc((spec.u - x) / (sd * _SQRT2)) if math.isfinite(spec.u) else 0.0
    return p_lo, p_hi


def _scalar_mean(x: float, spec: SaturationSpec, s2: float) -> float:
    I = _scalar_band_moments(spec.l - x, spec.u - x, s2, 1)
    p_lo, p_hi = _scalar_tails(x, spec, math.sqrt(s2))
    return _clamp_part(spec.L, p_lo, 0.0, 1) + x * I[0] + I[1] + _clamp_part(spec.U, p_hi, 0.0, 1)


def _scalar_central(x: float, spec: SaturationSpec, s2: float, power: int) -> float:
    G = _scalar_mean(x, spec, s2)
    I = _scalar_band_moments(spec.l - x, spec.u - x, s2, power)
    d = x - G
    band = sum(math.comb(power, j) * d ** (power - j) * I[j] for j in range(power + 1))
    p_lo, p_hi = _scalar_tails(x, spec, math.sqrt(s2))
    return _clamp_part(spec.L, p_lo, G, power) + band + _clamp_part(spec.U, p_hi, G, power)


def _scalar_deriv(x: float, spec: SaturationSpec, s2: float) -> float:
    sd = math.sqrt(s2)
    out = _scalar_band_moments(spec.l - x, spec.u - x, s2, 0)[0]
    if math.isfinite(spec.l) and spec.l > spec.L:
        z = (spec.l - x) / sd
        out += (spec.l - spec.L) * _INV_SQRT_2PI * math.exp(-0.5 * z * z) / sd
    if math.isfinite(spec.u) and spec.U > spec.u:
        z = (spec.u - x) / sd
        out += (spec.U - spec.u) * _INV_SQRT_2PI * math.exp(-0.5 * z * z) / sd
    return max(out, 0.0)


def _tail_terms(x, spec: SaturationSpec, noise: NoiseModel):
    """Probability of clamping low and high, ``F(l-x)`` and ``1-F(u-x)``."""
    x = np.asarray(x, dtype=float)
    p_lo = noise.F(spec.l - x) if math.isfinite(spec.l) else np.zeros_like(x)
    p_hi = noise.Fbar(spec.u - x) if math.isfinite(spec.u) else np.zeros_like(x)
    return np.asarray(p_lo, dtype=float), np.asarray(p_hi, dtype=float)


def _clamp_part(value: float, prob, center, power: int):
    if not math.isfinite(value):
        return 0.0
    return (value - center) ** power * prob


def _gauss_mean(x, spec, noise):
    x = np.asarray(x, dtype=float)
    I = _gauss_band_moments(spec.l - x, spec.u - x, noise.variance, 1)
    p_lo, p_hi = _tail_terms(x, spec, noise)
    return _clamp_part(spec.L, p_lo, 0.0, 1) + x * I[0] + I[1] + _clamp_part(spec.U, p_hi, 0.0, 1)


def _gauss_central(x, spec, noise, power: int, mean=None):
    x = np.asarray(x, dtype=float)
    G = _gauss_mean(x, spec, noise) if mean is None else mean
    I = _gauss_band_moments(spec.l - x, spec.u - x, noise.variance, power)
    d = x - G
    band = sum(math.comb(power, j) * d ** (power - j) * I[j] for j in range(power + 1))
    p_lo, p_hi = _tail_terms(x, spec, noise)
    return _clamp_part(spec.L, p_lo, G, power) + band + _clamp_part(spec.U, p_hi, G, power)


# ---------------------------------------------------------------------------
# Tabulated noise by quadrature


# The interpolated density is piecewise linear, so every integrand below is a
# polynomial of degree <= 5 between table knots and 4-point Gauss-Legendre on
# each knot interval integrates it exactly.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def _tab_band(x: float, spec: SaturationSpec, noise: NoiseModel, weight):
    """``int_{l}^{u} weight(t) f(t - x) dt`` restricted to the noise support.

    ``weight`` must be a polynomial of degree at most 4 (vectorized).
    """
    lo_s, hi_s = noise.support
    lo = max(spec.l, lo_s + x)
    hi = min(spec.u, hi_s + x)
    if not hi > lo:
        return 0.0
    knots = np.asarray(noise.grid) + x
    edges = np.concatenate(([lo], knots[(knots > lo) & (knots < hi)], [hi]))
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = mid[:, None] + half[:, None] * _GL_NODES
    vals = weight(t) * noise.f(t - x)
    return float(np.sum(half * (vals @ _GL_WEIGHTS)))


def _tab_mean(x: float, spec, noise):
    p_lo, p_hi = (float(v) for v in _tail_terms(x, spec, noise))
    band = _tab_band(x, spec, noise, lambda t: t)
    return _clamp_part(spec.L, p_lo, 0.0, 1) + band + _clamp_part(spec.U, p_hi, 0.0, 1)


def _tab_central(x: float, spec, noise, power: int, mean=None):
    G = _tab_mean(x, spec, noise) if mean is None else mean
    p_lo, p_hi = (float(v) for v in _tail_terms(x, spec, noise))
    band = _tab_band(x, spec, noise, lambda t: (t - G) ** power)
    return _clamp_part(spec.L, p_lo, G, power) + band + _clamp_part(spec.U, p_hi, G, power)


def _elementwise(fn, x, *args):
    if np.ndim(x) == 0:
        return fn(float(x), *args)
    x = np.asarray(x, dtype=float)
    return np.array([fn(float(v), *args) for v in x.ravel()]).reshape(x.shape)


# ---------------------------------------------------------------------------
# Public link functions


def g_mean(x, spec: SaturationSpec, noise: NoiseModel):
    """Conditional mean ``G(x) = E[S(x + e)]`` of the saturated output."""
    if isinstance(x, float) and noise.kind == "gaussian" and not spec.is_linear:
        return _scalar_mean(x, spec, noise.variance)
    if spec.is_linear:
        # E[x + e] = x exactly; the noise is centered
        return float(x) if np.ndim(x) == 0 else np.asarray(x, dtype=float).copy()
    if noise.kind == "gaussian":
        if np.ndim(x) == 0:
            return _scalar_mean(float(x), spec, noise.variance)
        out = _gauss_mean(x, spec, noise)
        return float(out) if np.ndim(x) == 0 else out
    return _elementwise(_tab_mean, x, spec, noise)


def g_deriv(x, spec: SaturationSpec, noise: NoiseModel):
    """Derivative ``G'(x)``; nonnegative."""
    if (isinstance(x, float) or np.ndim(x) == 0) and noise.kind == "gaussian" and not spec.is_linear:
        return _scalar_deriv(float(x), spec, noise.variance)
    x_arr = np.asarray(x, dtype=float)
    if spec.is_linear:
        out = np.ones_like(x_arr)
    else:
        if noise.kind == "gaussian":
            band = _gauss_band_moments(spec.l - x_arr, spec.u - x_arr, noise.variance, 0)[0]
        else:
            band = np.asarray(noise.F(spec.u - x_arr) - noise.F(spec.l - x_arr), dtype=float)
        out = band
        if math.isfinite(spec.l) and spec.l > spec.L:
            out = out + (spec.l - spec.L) * noise.f(spec.l - x_arr)
        if math.isfinite(spec.u) and spec.U > spec.u:
            out = out + (spec.U - spec.u) * noise.f(spec.u - x_arr)
        out = np.maximum(out, 0.0)
    return float(out) if np.ndim(x) == 0 else out


def g_second(x, spec: SaturationSpec, noise: NoiseModel, h: float = _FD_STEP):
    """``G''(x)`` by a centered difference of :func:`g_deriv`."""
    x = np.asarray(x, dtype=float)
    out = (np.asarray(g_deriv(x + h, spec, noise)) - np.asarray(g_deriv(x - h, spec, noise))) / (2 * h)
    return float(out) if out.ndim == 0 else out


def sigma_var(x, spec: SaturationSpec, noise: NoiseModel):
    """Conditional variance ``E[(S(x + e) - G(x))^2]``."""
    if spec.is_linear and noise.kind == "gaussian":
        return noise.variance if np.ndim(x) == 0 else np.full(np.shape(x), noise.variance)
    if noise.kind == "gaussian":
        if np.ndim(x) == 0:
            return max(_scalar_central(float(x), spec, noise.variance, 2), 0.0)
        out = np.maximum(_gauss_central(x, spec, noise, 2), 0.0)
        return float(out) if np.ndim(x) == 0 else out
    return _elementwise(lambda v: max(_tab_central(v, spec, noise, 2), 0.0), x)


def central_moment4(x, spec: SaturationSpec, noise: NoiseModel):
    """Fourth central moment ``E[(S(x + e) - G(x))^4]``."""
    if noise.kind == "gaussian":
        if np.ndim(x) == 0:
            return max(_scalar_central(float(x), spec, noise.variance, 4), 0.0)
        out = np.maximum(_gauss_central(x, spec, noise, 4), 0.0)
        return float(out) if np.ndim(x) == 0 else out
    return _elementwise(lambda v: max(_tab_central(v, spec, noise, 4), 0.0), x)


def innovation_moments(x, spec: SaturationSpec, noise: NoiseModel):
    """``(E[w^2], E[(w^2 - E[w^2])^2])`` for ``w = S(x + e) - G(x)``."""
    v = sigma_var(x, spec, noise)
    spread = np.maximum(np.asarray(central_moment4(x, spec, noise)) - np.asarray(v) ** 2, 0.0)
    if np.ndim(x) == 0:
        return float(v), float(spread)
    return v, spread


# ---------------------------------------------------------------------------
# Bounds of G' on [-M, M]


def _golden(fn, a: float, b: float, tol: float = BOUNDS_TOL) -> tuple[float, float]:
    """Minimize a unimodal ``fn`` on ``[a, b]``; returns ``(x, fn(x))``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    x = 0.5 * (a + b)
    return x, fn(x)


def _grid_extreme(fn, xs: np.ndarray, vals: np.ndarray, sign: float) -> float:
    """Grid minimum of ``sign*fn`` refined by golden section in its bracket."""
    i = int(np.argmin(sign * vals))
    best = float(sign * vals[i])
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    if hi > lo:
        _, v = _golden(lambda t: sign * float(fn(t)), float(lo), float(hi))
        best = min(best, v)
    return sign * best


def lipschitz_constant(M: float, spec: SaturationSpec, noise: NoiseModel) -> float:
    """``sup |G''|`` on ``[-M, M]``: grid of step ``M/2048`` plus golden refinement."""
    if spec.is_linear:
        return 0.0
    xs = np.linspace(-M, M, 2 * GRID_HALF_POINTS + 1)
    vals = np.abs(g_second(xs, spec, noise))
    return float(_grid_extreme(lambda t: abs(g_second(t, spec, noise)), xs, vals, -1.0))


def g_bounds(M: float, spec: SaturationSpec, noise: NoiseModel, *, lipschitz: bool = True) -> LinkBounds:
    """Infimum and supremum of ``G'`` over ``[-M, M]``.

    For Gaussian noise with ``L = l`` and ``U = u`` the derivative is the
    probability of the band ``[l-x, u-x]``, which is unimodal with its peak at
    ``(l+u)/2``; other cases use a grid search refined by golden section.

    Raises:
        AssumptionViolation: ``G'`` vanishes somewhere on ``[-M, M]``.
    """
    M = float(M)
    if not (M > 0 and math.isfinite(M)):
        raise ConfigError(f"g_bounds needs a finite M > 0, got {M}")
    if spec.is_linear:
        return LinkBounds(1.0, 1.0, M, 0.0 if lipschitz else None)
    if noise.kind == "gaussian" and spec.is_censored:
        ends = [float(g_deriv(-M, spec, noise)), float(g_deriv(M, spec, noise))]
        g_lo = min(ends)
        if math.isfinite(spec.l) and math.isfinite(spec.u):
            g_hi = float(g_deriv(min(max(0.5 * (spec.l + spec.u), -M), M), spec, noise))
        else:
            g_hi = max(ends)
    else:
        xs = np.linspace(-M, M, 2 * GRID_HALF_POINTS + 1)
        vals = np.asarray(g_deriv(xs, spec, noise))
        fn = lambda t: g_deriv(t, spec, noise)  # noqa: E731
        g_lo = _grid_extreme(fn, xs, vals, 1.0)
        g_hi = _grid_extreme(fn, xs, vals, -1.0)
    underflow = False
    if g_lo <= 0.0:
        # Gaussian noise keeps G' > 0 whenever U > L; a zero here is underflow
        if noise.full_support and spec.U > spec.L and g_hi > 0.0:
            g_lo, underflow = TINY, True
        else:
            raise AssumptionViolation(
                f"G' is not bounded away from zero on [-{M}, {M}] (inf = {g_lo:.3g})"
            )
    rho = lipschitz_constant(M, spec, noise) if lipschitz else None
    return LinkBounds(float(g_lo), float(g_hi), M, rho, underflow)
