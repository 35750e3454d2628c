"""Per-step run log shared by the simulator, the CLI and the diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import EstimatorConfig, EstimatorState, ObservationRecord, StepReport, new_state, update
from .links import g_mean


@dataclass(eq=False)
class RunTrace:
    """Ordered step reports of one estimator run.

    ``theta_true`` is set only in simulation mode; regret and the
    ``true_theta`` plug-in need it.
    """

    config: EstimatorConfig
    steps: list[StepReport] = field(default_factory=list)
    theta_true: np.ndarray | None = None
    lambda0: float = float("nan")
    logdet_P0_inv: float = float("nan")
    logdet_P0_bar_inv: float = float("nan")
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, report: StepReport) -> None:
        if report.k != len(self.steps):
            raise ValueError(f"trace expects step {len(self.steps)}, got {report.k}")
        self.steps.append(report)

    @property
    def m(self) -> int:
        return self.config.dim

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    @property
    def phis(self) -> np.ndarray:
        return np.array([s.phi for s in self.steps]).reshape(len(self.steps), self.m)

    def estimate(self, n: int, layer: str = "accelerated") -> np.ndarray:
        """Estimate after ``n`` steps (``n = 0`` gives the initial value)."""
        if n == 0:
            return self.config.theta0.copy() if layer == "accelerated" else self.config.theta0_bar.copy()
        s = self.steps[n - 1]
        return (s.theta_hat if layer == "accelerated" else s.theta_bar).copy()

    def error_norms(self, layer: str = "accelerated") -> np.ndarray:
        """``||theta_{k+1} - theta||`` for every step (simulation mode)."""
        if self.theta_true is None:
            raise ValueError("error norms need the true parameter")
        key = "theta_hat" if layer == "accelerated" else "theta_bar"
        est = np.array([getattr(s, key) for s in self.steps]).reshape(len(self.steps), self.m)
        return np.linalg.norm(est - self.theta_true, axis=1)

    def true_means(self) -> np.ndarray:
        if self.theta_true is None:
            raise ValueError("true conditional means need the true parameter")
        noise = self.config.noise
        return np.array([g_mean(float(s.phi @ self.theta_true), s.spec, noise) for s in self.steps])


def run_estimator(
    config: EstimatorConfig,
    records,
    theta_true=None,
    seed: int | None = None,
    state: EstimatorState | None = None,
) -> tuple[EstimatorState, RunTrace]:
    """Stream records through a fresh (or given) state, logging every step."""
    state = new_state(config) if state is None else state
    trace = RunTrace(
        config,
        theta_true=None if theta_true is None else np.asarray(theta_true, dtype=float),
        lambda0=state.lambda0,
        logdet_P0_inv=state.logdet_P_inv,
        logdet_P0_bar_inv=state.logdet_P_bar_inv,
        seed=seed,
    )
    for rec in records:
        trace.append(update(state, rec))
    return state, trace


def final_estimate(config: EstimatorConfig, records) -> np.ndarray:
    """Accelerated estimate after all records, without keeping a trace."""
    state = new_state(config)
    for rec in records:
        update(state, rec)
    return state.theta_hat.copy()


__all__ = ["ObservationRecord", "RunTrace", "final_estimate", "run_estimator"]
