"""Regret, excitation diagnostics and confidence statements for a finished run."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ModeError, RankDeficiencyError
from .estimator import ObservationRecord
from .geometry import Box
from .links import g_deriv, g_mean, innovation_moments, lipschitz_constant, sigma_var
from .special import chi2_quantile
from .trace import RunTrace

PLUGINS = ("true_theta", "estimate", "worst_case")
WORST_CASE_GRID = 401


@dataclass
class ConfidenceReport:
    """Componentwise intervals plus everything needed to reproduce them."""

    method: str
    lower: list[float]
    upper: list[float]
    confidence: float
    center: list[float] | None = None
    metadata: dict = field(default_factory=dict)

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return (theta >= np.asarray(self.lower)) & (theta <= np.asarray(self.upper))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# regret and innovations


def _truth(trace: RunTrace) -> np.ndarray:
    if trace.theta_true is None:
        raise ModeError("this diagnostic needs the true parameter (simulation mode)")
    return trace.theta_true


def regret(trace: RunTrace, k: int, layer: str = "accelerated") -> float:
    """``R_k = (G(phi_k^T theta) - y_hat_{k+1})^2`` for step ``k`` (0-based)."""
    theta = _truth(trace)
    s = trace.steps[k]
    best = g_mean(float(s.phi @ theta), s.spec, trace.config.noise)
    pred = s.y_hat if layer == "accelerated" else s.y_hat_bar
    return (best - pred) ** 2


def cumulative_regret(trace: RunTrace, n: int, layer: str = "accelerated") -> float:
    """Sum of the regrets of the first ``n`` steps."""
    _truth(trace)
    return float(sum(regret(trace, k, layer) for k in range(n)))


def innovation(record: ObservationRecord, theta, noise) -> float:
    """``w_{k+1} = y_{k+1} - G(phi_k^T theta)``."""
    return float(record.y) - g_mean(float(np.asarray(record.phi) @ np.asarray(theta)), record.spec, noise)


# ---------------------------------------------------------------------------
# excitation


def _info_eigs(trace: RunTrace, n: int) -> tuple[float, float]:
    if not 1 <= n <= len(trace):
        raise DomainError(f"n must lie in 1..{len(trace)}")
    s = trace.steps[n - 1]
    if math.isnan(s.info_lam_min):
        w = np.linalg.eigvalsh(trace.lambda0 * np.eye(trace.m) + trace.phis[:n].T @ trace.phis[:n])
        return float(w[0]), float(w[-1])
    return s.info_lam_min, s.info_lam_max


def excitation_ratio(trace: RunTrace, n: int) -> float:
    """``log lambda_max(n) / lambda_min(n)`` of ``sum phi phi^T + lambda0 I``; tends to 0 iff the rate bound forces convergence."""
    lo, hi = _info_eigs(trace, n)
    return math.log(hi) / lo


def iterated_log_rate(trace: RunTrace, n: int) -> tuple[float, float]:
    """``(n / lambda_min(n), log log n / n)``.

    The first entry stays bounded when excitation grows linearly, in which
    case the squared error decays like the second.
    """
    lo, _ = _info_eigs(trace, n)
    return n / lo, math.log(math.log(max(n, 3))) / n


def excitation_profile(trace: RunTrace, grid) -> dict:
    """Ratios on a grid of step counts and whether they shrink overall."""
    ratios = [excitation_ratio(trace, int(n)) for n in grid]
    return {"n": [int(n) for n in grid], "ratio": ratios, "decreasing": bool(ratios[-1] < ratios[0])}


def rate_statistic(trace: RunTrace, n: int) -> float:
    """``||theta_tilde_n||^2 lambda_min(n) / log lambda_max(n)``; bounded under the rate theorem."""
    theta = _truth(trace)
    lo, hi = _info_eigs(trace, n)
    err = trace.estimate(n) - theta
    return float(err @ err) * lo / math.log(hi)


def regret_statistic(trace: RunTrace, n: int) -> float:
    """Cumulative regret over ``log lambda_max(n)``."""
    _, hi = _info_eigs(trace, n)
    return cumulative_regret(trace, n) / math.log(hi)


# ---------------------------------------------------------------------------
# asymptotic intervals


def information_sum(trace: RunTrace, n: int, theta_plugin) -> np.ndarray:
    """``sum_{k<n} G'(phi^T theta)^2 / sigma(phi^T theta) phi phi^T``."""
    theta = np.asarray(theta_plugin, dtype=float)
    noise = trace.config.noise
    S = np.zeros((trace.m, trace.m))
    for s in trace.steps[:n]:
        x = float(s.phi @ theta)
        v = sigma_var(x, s.spec, noise)
        if v <= 0.0:
            # no spread left in the output, so no information either
            continue
        S += g_deriv(x, s.spec, noise) ** 2 / v * np.outer(s.phi, s.phi)
    return 0.5 * (S + S.T)


def qhat(trace: RunTrace, n: int, theta_plugin) -> np.ndarray:
    """Inverse of the plug-in information sum.

    Raises:
        RankDeficiencyError: smallest eigenvalue of the sum is <= 1e-10;
            ``null_directions`` holds the offending eigenvectors as columns.
    """
    S = information_sum(trace, n, theta_plugin)
    w, V = np.linalg.eigh(S)
    bad = w <= 1e-10
    if np.any(bad):
        raise RankDeficiencyError(
            f"information sum is singular along {int(bad.sum())} direction(s): {V[:, bad].T.round(6).tolist()}",
            null_directions=V[:, bad],
        )
    Q = (V / w) @ V.T
    return 0.5 * (Q + Q.T)


def asymptotic_ci(trace: RunTrace, n: int, alpha: float, dof: int | None = None) -> ConfidenceReport:
    """Componentwise intervals ``theta_hat_j +- sqrt(Qhat_jj * chi2_{1-alpha}(dof))``.

    With the default ``dof = m`` each interval is the shadow of the joint
    ``1 - alpha`` ellipsoid, so all components are covered simultaneously.
    ``dof = 1`` gives marginal ``1 - alpha`` intervals.
    """
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    theta_hat = trace.estimate(n)
    Q = qhat(trace, n, theta_hat)
    d = trace.m if dof is None else dof
    q = chi2_quantile(1.0 - alpha, d)
    half = np.sqrt(np.diag(Q) * q)
    return ConfidenceReport(
        method="asymptotic",
        lower=(theta_hat - half).tolist(),
        upper=(theta_hat + half).tolist(),
        confidence=1.0 - alpha,
        center=theta_hat.tolist(),
        metadata={
            "n": n,
            "alpha": alpha,
            "dof": d,
            "chi2_quantile": q,
            "plugin": "estimate",
            "qhat_diag": np.diag(Q).tolist(),
        },
    )


# ---------------------------------------------------------------------------
# finite-sample Lyapunov bound


def _worst_quadratic(D, center, A) -> float:
    """``sup_{theta in D} (theta - center)^T A (theta - center)``.

    Exact for boxes (a convex function peaks at a vertex). For balls the
    triangle bound ``(||c - center||_A + r sqrt(lambda_max A))^2`` is used.
    """
    if isinstance(D, Box):
        V = D.vertices() - center
        return float(np.max(np.einsum("ij,jk,ik->i", V, A, V)))
    d = D.center - center
    return float((math.sqrt(max(d @ A @ d, 0.0)) + D.radius * math.sqrt(np.linalg.eigvalsh(A)[-1])) ** 2)


def _worst_linear_sq(D, phi, center) -> float:
    """``sup_{theta in D} (phi^T (theta - center))^2``."""
    if isinstance(D, Box):
        a, b = phi * D.lower, phi * D.upper
        hi, lo = np.maximum(a, b).sum(), np.minimum(a, b).sum()
    else:
        mid, r = phi @ D.center, D.radius * np.linalg.norm(phi)
        hi, lo = mid + r, mid - r
    c = phi @ center
    return float(max((hi - c) ** 2, (lo - c) ** 2))


def _moments(trace: RunTrace, N: int, plugin: str, theta_plugin):
    """Per-step ``E_k[w^2]`` and ``E_k[(w^2 - E_k w^2)^2]`` for steps ``0..N``."""
    noise = trace.config.noise
    var, spread = np.empty(N + 1), np.empty(N + 1)
    for k, s in enumerate(trace.steps[: N + 1]):
        if plugin == "worst_case":
            xs = np.linspace(-s.M, s.M, WORST_CASE_GRID) if s.M > 0 else np.zeros(1)
            v, sp = innovation_moments(xs, s.spec, noise)
            var[k], spread[k] = float(np.max(v)), float(np.max(sp))
        else:
            var[k], spread[k] = innovation_moments(float(s.phi @ theta_plugin), s.spec, noise)
    return var, spread


def lyapunov_constants(trace: RunTrace, N: int, alpha: float, tau: float = 0.1, plugin: str = "estimate") -> dict:
    """Every constant of the finite-sample error bound for ``theta_tilde_{N+1}``.

    Steps ``0..N`` of the trace enter the suprema and infima. The conditional
    moments of the innovation are evaluated at the chosen plug-in parameter.

    Raises:
        ConfigError: initial log-determinants not above 1, or bad alpha/tau.
        ModeError: ``plugin="true_theta"`` without simulation truth.
    """
    if plugin not in PLUGINS:
        raise ConfigError(f"plugin must be one of {PLUGINS}")
    if not 0 < alpha < 0.5:
        raise DomainError("the finite-sample bound needs 0 < alpha < 1/2")
    if not tau > 0:
        raise DomainError("tau must be positive")
    if not 0 <= N < len(trace):
        raise DomainError(f"N must lie in 0..{len(trace) - 1}")
    if not (trace.logdet_P0_inv > 1 and trace.logdet_P0_bar_inv > 1):
        raise ConfigError(
            "the bound assumes log|P0^-1| > 1 and log|P0_bar^-1| > 1 "
            f"(got {trace.logdet_P0_inv:.4g}, {trace.logdet_P0_bar_inv:.4g})"
        )
    cfg = trace.config
    steps = trace.steps[: N + 1]
    if plugin == "true_theta":
        theta = _truth(trace)
    elif plugin == "estimate":
        theta = trace.estimate(N + 1)
    else:
        theta = None

    var, spread = _moments(trace, N, plugin, theta)
    mu = np.array([s.mu for s in steps])
    beta = np.array([s.beta for s in steps])
    beta_bar = np.array([s.beta_bar for s in steps])
    a = np.array([s.a for s in steps])
    a_bar = np.array([s.a_bar for s in steps])
    g_hi = np.array([s.g_hi for s in steps])
    phi_sq = np.array([float(s.phi @ s.phi) for s in steps])

    # rho: Lipschitz constant of G' on [-M, M] with M the largest M_k seen
    M_max = max(s.M for s in steps)
    specs = {s.spec for s in steps}
    rho = max(lipschitz_constant(M_max, sp, cfg.noise) for sp in specs) if M_max > 0 else 0.0

    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        sigma_b = float(np.max(var / mu))
        sigma_a = float(np.max(var))
        sigma_b_bar = float(np.max(spread / mu**2))
        sigma_a_bar = float(np.max(spread))
        Phi = float(np.max(beta**2 * phi_sq / mu))
        Phi_bar = float(np.max(beta_bar**2 * phi_sq))
        gamma = float(np.max(g_hi**2 / (mu * a_bar**2 * beta_bar**2)))
        Psi = float(np.max(3.0 * rho**2 * phi_sq / (2.0 * mu * (a + a_bar) * beta_bar**2)))
        if rho == 0.0:
            Psi = 0.0
        delta0 = float(np.max(1.0 / a))  # mu_k + beta_k^2 phi^T P_k phi

    # lambda_N from the eigenvalues before each step and log-determinants after it
    ld = np.array([s.logdet_P_inv for s in steps])
    ld_bar = np.array([s.logdet_P_bar_inv for s in steps])
    lam_p = np.array([s.lam_min_P_inv_prev for s in steps])
    lam_pb = np.array([s.lam_min_P_bar_inv_prev for s in steps])
    if np.any(np.isnan(lam_p)) or np.any(np.isnan(lam_pb)):
        raise ConfigError("the bound needs a trace recorded with track_eigen=True")
    lambda_N = float(
        min(np.min(lam_pb / ld_bar ** (2 + tau)), np.min(lam_p / (ld + ld_bar) ** (2 + tau)))
    )

    P0_inv = np.linalg.inv(cfg.P0)
    P0_bar_inv = np.linalg.inv(cfg.P0_bar)
    if theta is None:
        V0 = _worst_quadratic(cfg.domain, cfg.theta0, P0_inv)
        V0_bar = _worst_quadratic(cfg.domain, cfg.theta0_bar, P0_bar_inv)
        lin0 = _worst_linear_sq(cfg.domain, steps[0].phi, cfg.theta0_bar)
    else:
        d, d_bar = theta - cfg.theta0, theta - cfg.theta0_bar
        V0 = float(d @ P0_inv @ d)
        V0_bar = float(d_bar @ P0_bar_inv @ d_bar)
        lin0 = float(steps[0].phi @ d_bar) ** 2
    c0 = 1.5 / mu[0] * g_hi[0] ** 2 * lin0

    odds = (1.0 - alpha) / alpha
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        Gamma = (
            V0
            + sigma_b * trace.logdet_P0_inv
            + (Phi * np.trace(cfg.P0) * sigma_b_bar / (2.0 * sigma_b) if sigma_b_bar > 0 else 0.0)
            + 18.0 * sigma_b * odds
        )
        Gamma_bar = (
            V0_bar
            + sigma_a * trace.logdet_P0_bar_inv
            + (Phi_bar * np.trace(cfg.P0_bar) * sigma_a_bar / (2.0 * sigma_a) if sigma_a_bar > 0 else 0.0)
            + 10.0 * sigma_a * odds
        )
        if Psi == 0.0:
            C = 0.0
        else:
            C = 4.0 * Psi * (sigma_a + Gamma_bar + 1.0) ** (2 + tau) + 2.0 * Psi * (
                sigma_b + 6.0 * gamma * sigma_a + Gamma + 6.0 * gamma * Gamma_bar + 1.0
            ) ** (2 + tau)
        core = sigma_b * steps[-1].logdet_P_inv + (C / lambda_N if C else 0.0) + Gamma
    return {
        "N": N,
        "alpha": alpha,
        "tau": tau,
        "plugin": plugin,
        "sigma_b": sigma_b,
        "sigma_a": sigma_a,
        "sigma_b_bar": sigma_b_bar,
        "sigma_a_bar": sigma_a_bar,
        "Phi": Phi,
        "Phi_bar": Phi_bar,
        "gamma": gamma,
        "Psi": Psi,
        "rho": rho,
        "lambda_N": lambda_N,
        "delta0": delta0,
        "c0": float(c0),
        "V0": V0,
        "V0_bar": V0_bar,
        "Gamma": float(Gamma),
        "Gamma_bar": float(Gamma_bar),
        "C": float(C),
        "logdet_P_inv_final": steps[-1].logdet_P_inv,
        "core": float(core),
        "P_diag_final": steps[-1].P_diag.tolist(),
        "regret_bound": float(2.0 * delta0 * core),
    }


def lyapunov_bound(trace: RunTrace, N: int, alpha: float, tau: float = 0.1, plugin: str = "estimate") -> ConfidenceReport:
    """Finite-sample componentwise intervals, each valid with probability ``>= 1 - 2 alpha``.

    The squared error of component ``j`` is bounded by
    ``P_{N+1,jj} (sigma_b log|P_{N+1}^{-1}| + C / lambda_N + Gamma + c0)``.
    """
    c = lyapunov_constants(trace, N, alpha, tau, plugin)
    sq = np.asarray(c["P_diag_final"]) * (c["core"] + c["c0"])
    half = np.sqrt(sq)
    theta_hat = trace.estimate(N + 1)
    return ConfidenceReport(
        method="lyapunov",
        lower=(theta_hat - half).tolist(),
        upper=(theta_hat + half).tolist(),
        confidence=1.0 - 2.0 * alpha,
        center=theta_hat.tolist(),
        metadata={"squared_error_bound": sq.tolist(), "constants": c},
    )


__all__ = [
    "ConfidenceReport",
    "asymptotic_ci",
    "cumulative_regret",
    "excitation_profile",
    "excitation_ratio",
    "information_sum",
    "innovation",
    "iterated_log_rate",
    "lyapunov_bound",
    "lyapunov_constants",
    "qhat",
    "rate_statistic",
    "regret",
    "regret_statistic",
]
