"""Monte Carlo confidence intervals for the estimation error at a fixed data length.

The parameter is drawn uniformly on the domain and the noise i.i.d.; the
regressors and saturations are a fixed deterministic design. Replication
``i`` draws from the substream ``SeedSequence(seed, spawn_key=(i,))``, so the
error sample does not depend on execution order.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import ConfidenceReport
from .errors import ConfigError, DomainError, TSQNError
from .estimator import EstimatorConfig
from .links import NoiseModel, SaturationSpec
from .simulation import gen_observations
from .trace import final_estimate


class QuantileDegradationWarning(UserWarning):
    """A corrected quantile level fell outside (0, 1); the sample extreme was used."""


@dataclass(frozen=True, eq=False)
class McDesign:
    regressors: np.ndarray
    specs: tuple
    noise: NoiseModel
    estimator: EstimatorConfig
    K: int = 2000
    seed: int = 0

    def __post_init__(self):
        phis = np.array(self.regressors, dtype=float, copy=True)
        if phis.ndim != 2 or phis.shape[1] != self.estimator.dim:
            raise ConfigError("regressors must be an (n, m) array matching the estimator dimension")
        phis.setflags(write=False)
        object.__setattr__(self, "regressors", phis)
        specs = self.specs
        if isinstance(specs, SaturationSpec):
            specs = (specs,) * phis.shape[0]
        specs = tuple(specs)
        if len(specs) != phis.shape[0]:
            raise ConfigError("one saturation spec per regressor is required")
        object.__setattr__(self, "specs", specs)
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if self.estimator.noise != self.noise:
            raise ConfigError("the estimator must use the design's noise model")
        # traces are not needed inside replications
        object.__setattr__(self, "estimator", replace(self.estimator, track_eigen=False))

    @property
    def n(self) -> int:
        return self.regressors.shape[0]

    @property
    def m(self) -> int:
        return self.regressors.shape[1]


def replication_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def replicate_one(design: McDesign, i: int, seed: int | None = None) -> np.ndarray:
    """Error ``theta - theta_hat_n`` of replication ``i``."""
    rng = replication_rng(design.seed if seed is None else seed, i)
    theta = design.estimator.domain.sample_uniform(rng)
    records = gen_observations(design.regressors, theta, list(design.specs), design.noise, rng=rng)
    try:
        theta_hat = final_estimate(design.estimator, records)
    except TSQNError as exc:
        raise type(exc)(f"replication {i}: {exc}") from exc
    return theta - theta_hat


def _chunk(args) -> np.ndarray:
    design, seed, idx = args
    return np.array([replicate_one(design, i, seed) for i in idx])


def replicate_errors(design: McDesign, workers: int = 1, seed: int | None = None, K: int | None = None) -> np.ndarray:
    """``(K, m)`` matrix of estimation errors over independent replications.

    Args:
        design: Fixed design.
        workers: Processes to spread replications over.
        seed: Overrides ``design.seed`` (fresh scenario draws use another seed).
        K: Overrides ``design.K``.
    """
    K = design.K if K is None else K
    seed = design.seed if seed is None else seed
    if workers <= 1:
        return _chunk((design, seed, range(K))).reshape(K, design.m)
    bounds = np.linspace(0, K, workers * 4 + 1).astype(int)
    jobs = [(design, seed, range(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_chunk, jobs))
    return np.concatenate(parts).reshape(K, design.m)


def empirical_quantile(samples, p: float) -> float:
    """Smallest sample value ``v`` with ``F_K(v) >= p``.

    ``p <= 0`` gives the minimum and ``p >= 1`` the maximum.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("empirical_quantile needs at least one sample")
    if p <= 0:
        return float(x[0])
    if p >= 1:
        return float(x[-1])
    # guard against p*K landing a hair above an integer
    idx = math.ceil(p * x.size - 1e-9) - 1
    return float(x[min(max(idx, 0), x.size - 1)])


def hoeffding_margin(K: int, t: float) -> float:
    """``sqrt((ln 2 - ln t) / (2K))``."""
    return math.sqrt((math.log(2.0) - math.log(t)) / (2.0 * K))


def mc_interval(errors, alpha: float, t: float, estimate=None) -> ConfidenceReport:
    """Per-component interval for the error, valid with probability ``>= 1 - alpha - t``.

    Endpoints are the empirical quantiles at ``alpha/2 - v`` and
    ``1 - alpha/2 + v`` with ``v`` the Hoeffding margin. If ``estimate`` is
    given, the report also carries the parameter interval
    ``estimate + [lower, upper]``.
    """
    if not (alpha > 0 and t > 0):
        raise DomainError("alpha and t must be positive")
    if alpha + t >= 1:
        raise DomainError(f"alpha + t must be < 1 (got {alpha + t})")
    E = np.asarray(errors, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    K = E.shape[0]
    v = hoeffding_margin(K, t)
    p_lo, p_hi = alpha / 2 - v, 1 - alpha / 2 + v
    if p_lo <= 0 or p_hi >= 1:
        warnings.warn(
            f"corrected quantile levels ({p_lo:.4g}, {p_hi:.4g}) leave (0, 1); interval spans the sample range",
            QuantileDegradationWarning,
            stacklevel=2,
        )
    lower = [empirical_quantile(E[:, j], p_lo) for j in range(E.shape[1])]
    upper = [empirical_quantile(E[:, j], p_hi) for j in range(E.shape[1])]
    meta = {"K": K, "alpha": alpha, "t": t, "upsilon": v, "levels": [p_lo, p_hi], "target": "error"}
    center = None
    if estimate is not None:
        est = np.asarray(estimate, dtype=float)
        center = est.tolist()
        meta["parameter_lower"] = (est + np.asarray(lower)).tolist()
        meta["parameter_upper"] = (est + np.asarray(upper)).tolist()
    return ConfidenceReport("monte_carlo", lower, upper, 1.0 - alpha - t, center, meta)


def coverage(design: McDesign, report: ConfidenceReport, n_fresh: int, seed: int, workers: int = 1) -> np.ndarray:
    """Fraction of fresh replications whose error lands in each component's interval."""
    fresh = replicate_errors(design, workers=workers, seed=seed, K=n_fresh)
    lo, hi = np.asarray(report.lower), np.asarray(report.upper)
    return np.mean((fresh >= lo) & (fresh <= hi), axis=0)


__all__ = [
    "McDesign",
    "QuantileDegradationWarning",
    "coverage",
    "empirical_quantile",
    "hoeffding_margin",
    "mc_interval",
    "replicate_errors",
    "replicate_one",
]
