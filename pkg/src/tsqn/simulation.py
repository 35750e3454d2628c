"""Data generation for saturated regression experiments.

Regressors follow ``phi_{k+1} = A phi_k + u_k`` where the first input
component is ``first_scale * N(0, 1)`` and the remaining ones are
``rest_c / k^decay * N(0, 1)`` (scale ``rest_c`` at ``k = 0``). With
``decay = 1/4`` the excitation of those components dies out and the
information matrix is not persistently exciting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .estimator import AdaptiveMu, EstimatorConfig, ObservationRecord
from .geometry import Box, DomainSet
from .links import NoiseModel, SaturationSpec, saturate
from .trace import RunTrace, run_estimator

BENCHMARK_A_DIAG = (0.3, 0.5, 0.1, 0.01, 0.9, 0.95, 0.5, 0.4, 0.6, 0.1)
BENCHMARK_THETA = (-1.2, 0.5, 1.0, -0.5, 1.5, -1.0, 1.8, 0.8, -1.8, 0.4)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    A: np.ndarray
    theta_true: np.ndarray
    domain: DomainSet
    spec: SaturationSpec | tuple = field(default_factory=lambda: SaturationSpec.censored(0.0, 15.0))
    noise: NoiseModel = field(default_factory=NoiseModel.gaussian)
    n: int = 10_000
    seed: int = 0
    first_scale: float = 1.0
    rest_c: float = 5.0
    decay: float = 0.25
    phi0: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        m = A.shape[0]
        if A.shape != (m, m):
            raise ConfigError("state matrix A must be square")
        if m > 0 and np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
            raise ConfigError("state matrix A must have spectral radius < 1")
        theta = np.asarray(self.theta_true, dtype=float).ravel()
        if theta.shape != (m,) or self.domain.dim != m:
            raise ConfigError("theta_true, A and the domain disagree on the dimension")
        if not self.domain.interior(theta):
            raise ConfigError("theta_true must be an interior point of the domain")
        if self.n < 0:
            raise ConfigError("n must be >= 0")
        phi0 = np.zeros(m) if self.phi0 is None else np.asarray(self.phi0, dtype=float).ravel()
        if isinstance(self.spec, (list, tuple)) and len(self.spec) != self.n:
            raise ConfigError("a per-step saturation schedule needs exactly n entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "theta_true", theta)
        object.__setattr__(self, "phi0", phi0)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def specs(self) -> list[SaturationSpec]:
        if isinstance(self.spec, SaturationSpec):
            return [self.spec] * self.n
        return list(self.spec)

    def streams(self) -> tuple[np.random.Generator, np.random.Generator]:
        """Independent generators for the inputs and for the noise."""
        ss_in, ss_noise = np.random.SeedSequence(self.seed).spawn(2)
        return np.random.default_rng(ss_in), np.random.default_rng(ss_noise)


def benchmark_scenario(seed: int = 0, n: int = 10_000) -> ScenarioConfig:
    """The ten-dimensional diminishing-excitation benchmark."""
    return ScenarioConfig(
        A=np.diag(BENCHMARK_A_DIAG),
        theta_true=np.array(BENCHMARK_THETA),
        domain=Box.symmetric(10, 2.0),
        spec=SaturationSpec.censored(0.0, 15.0),
        noise=NoiseModel.gaussian(1.0),
        n=n,
        seed=seed,
    )


def input_scales(config: ScenarioConfig) -> np.ndarray:
    """``(n, m)`` array of input standard deviations."""
    k = np.arange(config.n, dtype=float)
    rest = config.rest_c / np.where(k > 0, k, 1.0) ** config.decay
    scales = np.repeat(rest[:, None], config.m, axis=1)
    scales[:, 0] = config.first_scale
    return scales


def gen_regressors(config: ScenarioConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """``phi_0 .. phi_{n-1}`` as an ``(n, m)`` array."""
    if rng is None:
        rng = config.streams()[0]
    n, m = config.n, config.m
    u = rng.standard_normal((n, m)) * input_scales(config)
    phis = np.empty((n, m))
    phi = config.phi0.copy()
    for k in range(n):
        phis[k] = phi
        phi = config.A @ phi + u[k]
    return phis


def gen_observations(regressors, theta, specs, noise: NoiseModel, seed=None, rng=None) -> list[ObservationRecord]:
    """``y_{k+1} = S_k(phi_k^T theta + e_{k+1})`` with i.i.d. noise."""
    regressors = np.asarray(regressors, dtype=float)
    n = regressors.shape[0]
    if isinstance(specs, SaturationSpec):
        specs = [specs] * n
    if len(specs) != n:
        raise ConfigError("one saturation spec per regressor is required")
    if rng is None:
        rng = np.random.default_rng(seed)
    e = noise.sample(rng, n)
    v = regressors @ np.asarray(theta, dtype=float) + e
    return [ObservationRecord(regressors[k].copy(), specs[k], float(saturate(v[k], specs[k]))) for k in range(n)]


def scenario_records(config: ScenarioConfig) -> list[ObservationRecord]:
    rng_in, rng_noise = config.streams()
    phis = gen_regressors(config, rng_in)
    return gen_observations(phis, config.theta_true, config.specs(), config.noise, rng=rng_noise)


def default_estimator_config(scenario: ScenarioConfig, **overrides) -> EstimatorConfig:
    kw = dict(domain=scenario.domain, noise=scenario.noise, mu_policy=AdaptiveMu())
    kw.update(overrides)
    return EstimatorConfig(**kw)


def run_experiment(scenario: ScenarioConfig, est_config: EstimatorConfig | None = None) -> RunTrace:
    """Generate the scenario's data and run both estimator layers over it."""
    if est_config is None:
        est_config = default_estimator_config(scenario)
    records = scenario_records(scenario)
    _, trace = run_estimator(est_config, records, theta_true=scenario.theta_true, seed=scenario.seed)
    return trace


@dataclass
class ExperimentCurves:
    """Error norms and running-average regret of both layers."""

    err_bar: np.ndarray
    err_hat: np.ndarray
    avg_regret_bar: np.ndarray
    avg_regret_hat: np.ndarray


def experiment_curves(trace: RunTrace) -> ExperimentCurves:
    truth = trace.true_means()
    n = np.arange(1, len(trace) + 1)
    r_hat = (truth - trace.column("y_hat")) ** 2
    r_bar = (truth - trace.column("y_hat_bar")) ** 2
    return ExperimentCurves(
        err_bar=trace.error_norms("preliminary"),
        err_hat=trace.error_norms("accelerated"),
        avg_regret_bar=np.cumsum(r_bar) / n,
        avg_regret_hat=np.cumsum(r_hat) / n,
    )


def log_grid(n: int, points: int = 10, start: int = 10) -> np.ndarray:
    """Distinct integer step counts spaced evenly in log scale up to ``n``."""
    return np.unique(np.round(np.geomspace(start, n, points)).astype(int))


__all__ = [
    "ExperimentCurves",
    "ScenarioConfig",
    "default_estimator_config",
    "experiment_curves",
    "gen_observations",
    "gen_regressors",
    "input_scales",
    "log_grid",
    "benchmark_scenario",
    "run_experiment",
    "scenario_records",
]

