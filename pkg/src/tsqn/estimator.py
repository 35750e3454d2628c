"""Two-step quasi-Newton (TSQN) recursive estimator for saturated observations.

Each record ``(phi_k, S_k, y_{k+1})`` goes through two layers:

1. a conservative preliminary layer whose scalar gain uses the worst-case
   bounds of ``G'`` over ``|x| <= M_k``;
2. an accelerated layer whose gain is the secant slope of ``G`` between the
   preliminary and accelerated predictions, regularized by ``mu_k``.

Both layers keep ``P`` and ``P^{-1}`` in step through rank-one updates and
project onto the domain in the metric of the updated ``P^{-1}``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .geometry import Ball, Box, DomainSet, domain_from_dict, q_project, sup_abs_inner
from .links import NoiseModel, SaturationSpec, g_bounds, g_deriv, g_mean, sigma_var

Y_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class ObservationRecord:
    """One step of data: regressor ``phi_k``, saturation ``S_k`` and output ``y_{k+1}``."""

    phi: np.ndarray
    spec: SaturationSpec
    y: float


@dataclass(frozen=True)
class ConstantMu:
    value: float = 1.0

    def __post_init__(self):
        if not (self.value > 0 and math.isfinite(self.value)):
            raise ConfigError("constant mu must be positive and finite")


@dataclass(frozen=True)
class AdaptiveMu:
    """``mu_k = clip(sigma(phi_k^T theta_hat_k), mu_min, mu_max)``.

    The floor matters in practice. Deep in a clamped region ``sigma`` is tiny
    while the secant gain, taken against a still inaccurate preliminary
    estimate, need not be, and a near-zero ``mu`` then collapses ``P`` in a
    few steps and freezes the estimate. Such steps carry almost no
    information, so flooring ``mu`` there leaves the limit behaviour intact.
    """

    mu_min: float = 0.05
    mu_max: float = 1e6

    def __post_init__(self):
        if not (0 < self.mu_min <= self.mu_max < math.inf):
            raise ConfigError("adaptive mu needs 0 < mu_min <= mu_max < inf")


MuPolicy = ConstantMu | AdaptiveMu


def _spd(name: str, P, m: int) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim == 0:
        P = float(P) * np.eye(m)
    if P.shape != (m, m) or not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ConfigError(f"{name} must be a symmetric {m}x{m} matrix")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise ConfigError(f"{name} must be positive definite")
    return 0.5 * (P + P.T)


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    domain: DomainSet
    noise: NoiseModel
    mu_policy: MuPolicy = field(default_factory=AdaptiveMu)
    P0_bar: np.ndarray | float = 100.0
    P0: np.ndarray | float = 100.0
    theta0_bar: np.ndarray | None = None
    theta0: np.ndarray | None = None
    beta_tie_epsilon: float = 1e-12
    M_inflation: float = 1.05
    beta_uses_updated_bar: bool = True
    resync_every: int = 1000
    track_eigen: bool = True
    projection_method: str = "bvls"

    def __post_init__(self):
        m = self.domain.dim
        center = self.domain.center
        for name in ("theta0_bar", "theta0"):
            v = getattr(self, name)
            v = center.copy() if v is None else np.asarray(v, dtype=float).ravel()
            if v.shape != (m,):
                raise ConfigError(f"{name} must have length {m}")
            if not self.domain.contains(v):
                raise ConfigError(f"{name} = {v.tolist()} lies outside the parameter domain")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "P0_bar", _spd("P0_bar", self.P0_bar, m))
        object.__setattr__(self, "P0", _spd("P0", self.P0, m))
        if self.M_inflation < 1.0:
            raise ConfigError("M_inflation must be >= 1")
        if self.beta_tie_epsilon < 0:
            raise ConfigError("beta_tie_epsilon must be >= 0")
        if self.resync_every < 1:
            raise ConfigError("resync_every must be >= 1")

    @property
    def dim(self) -> int:
        return self.domain.dim

    def to_dict(self) -> dict:
        mu = (
            {"policy": "constant", "value": self.mu_policy.value}
            if isinstance(self.mu_policy, ConstantMu)
            else {"policy": "adaptive", "min": self.mu_policy.mu_min, "max": self.mu_policy.mu_max}
        )
        return {
            "domain": self.domain.to_dict(),
            "noise": self.noise.to_dict(),
            "mu": mu,
            "P0_bar": self.P0_bar.tolist(),
            "P0": self.P0.tolist(),
            "theta0_bar": self.theta0_bar.tolist(),
            "theta0": self.theta0.tolist(),
            "beta_tie_epsilon": self.beta_tie_epsilon,
            "M_inflation": self.M_inflation,
            "beta_uses_updated_bar": self.beta_uses_updated_bar,
            "resync_every": self.resync_every,
            "projection_method": self.projection_method,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Gains:
    beta_bar: float = math.nan
    a_bar: float = math.nan
    beta: float = math.nan
    a: float = math.nan
    mu: float = math.nan


@dataclass(eq=False)
class EstimatorState:
    """Mutable state of both layers. Updated by one owner, in record order."""

    config: EstimatorConfig
    theta_bar: np.ndarray
    P_bar: np.ndarray
    P_bar_inv: np.ndarray
    theta_hat: np.ndarray
    P: np.ndarray
    P_inv: np.ndarray
    info: np.ndarray
    lambda0: float
    logdet_P_inv: float
    logdet_P_bar_inv: float
    k: int = 0
    last_gains: Gains = field(default_factory=Gains)

    def copy(self) -> "EstimatorState":
        return EstimatorState(
            self.config,
            self.theta_bar.copy(),
            self.P_bar.copy(),
            self.P_bar_inv.copy(),
            self.theta_hat.copy(),
            self.P.copy(),
            self.P_inv.copy(),
            self.info.copy(),
            self.lambda0,
            self.logdet_P_inv,
            self.logdet_P_bar_inv,
            self.k,
            Gains(**vars(self.last_gains)),
        )


@dataclass
class Step1Result:
    M: float
    g_lo: float
    g_hi: float
    beta_bar: float
    a_bar: float
    theta_bar_prev: np.ndarray
    pre_projection: np.ndarray
    y_hat_bar: float
    underflow: bool


@dataclass
class Step2Result:
    beta: float
    a: float
    mu: float
    tie: bool
    theta_hat_prev: np.ndarray
    pre_projection: np.ndarray
    y_hat: float


@dataclass
class StepReport:
    """Everything produced while processing one record."""

    k: int
    phi: np.ndarray
    spec: SaturationSpec
    y: float
    y_hat: float
    y_hat_bar: float
    residual: float
    theta_bar_prev: np.ndarray
    theta_hat_prev: np.ndarray
    theta_bar: np.ndarray
    theta_hat: np.ndarray
    theta_bar_pre_projection: np.ndarray
    theta_hat_pre_projection: np.ndarray
    M: float
    g_lo: float
    g_hi: float
    beta_bar: float
    a_bar: float
    beta: float
    a: float
    mu: float
    tie: bool
    P_diag: np.ndarray
    logdet_P_inv: float
    logdet_P_bar_inv: float
    lam_min_P_inv_prev: float = math.nan
    lam_min_P_bar_inv_prev: float = math.nan
    info_lam_min: float = math.nan
    info_lam_max: float = math.nan


def new_state(config: EstimatorConfig) -> EstimatorState:
    """Initial state; the information accumulator starts at ``lambda0 I`` with ``lambda0 > ||P0^{-1}||``."""
    m = config.dim
    P0_inv = np.linalg.inv(config.P0)
    P0_bar_inv = np.linalg.inv(config.P0_bar)
    lambda0 = float(np.linalg.norm(P0_inv, 2)) * (1 + 1e-6)
    return EstimatorState(
        config=config,
        theta_bar=config.theta0_bar.copy(),
        P_bar=config.P0_bar.copy(),
        P_bar_inv=0.5 * (P0_bar_inv + P0_bar_inv.T),
        theta_hat=config.theta0.copy(),
        P=config.P0.copy(),
        P_inv=0.5 * (P0_inv + P0_inv.T),
        info=lambda0 * np.eye(m),
        lambda0=lambda0,
        logdet_P_inv=float(np.linalg.slogdet(P0_inv)[1]),
        logdet_P_bar_inv=float(np.linalg.slogdet(P0_bar_inv)[1]),
    )


def _check_record(state: EstimatorState, phi, y: float, spec: SaturationSpec) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).ravel()
    if phi.shape != (state.config.dim,):
        raise DataError(f"step {state.k}: regressor has length {phi.size}, expected {state.config.dim}")
    if not np.all(np.isfinite(phi)):
        raise DataError(f"step {state.k}: regressor is not finite")
    if not (spec.L - Y_RANGE_TOL <= y <= spec.U + Y_RANGE_TOL) or math.isnan(y):
        raise DataError(f"step {state.k}: output y={y} outside clamp range [{spec.L}, {spec.U}]", code="E_RANGE")
    return phi


def step1_update(state: EstimatorState, phi, y: float, spec: SaturationSpec) -> Step1Result:
    """Preliminary layer: worst-case scalar gain, projection in ``P_bar_{k+1}^{-1}``."""
    return _step1(state, _check_record(state, phi, y, spec), y, spec)


def _step1(state: EstimatorState, phi: np.ndarray, y: float, spec: SaturationSpec) -> Step1Result:
    cfg = state.config
    M = sup_abs_inner(phi, cfg.domain) * cfg.M_inflation
    if M > 0:
        b = g_bounds(M, spec, cfg.noise, lipschitz=False)
        g_lo, g_hi, underflow = b.g_lo, b.g_hi, b.underflow
    else:
        # phi = 0: the update below is zero whatever the gain
        g_lo = g_hi = float(g_deriv(0.0, spec, cfg.noise))
        underflow = False
    Pphi = state.P_bar @ phi
    s = float(phi @ Pphi)
    beta_bar = min(g_lo, 1.0 / (2.0 * g_hi * s + 1.0))
    a_bar = 1.0 / (1.0 + beta_bar**2 * s)
    y_hat_bar = g_mean(float(phi @ state.theta_bar), spec, cfg.noise)
    pre = state.theta_bar + a_bar * beta_bar * (y - y_hat_bar) * Pphi

    P_new = state.P_bar - (a_bar * beta_bar**2) * (Pphi[:, None] * Pphi)
    state.P_bar = 0.5 * (P_new + P_new.T)
    state.P_bar_inv = state.P_bar_inv + beta_bar**2 * (phi[:, None] * phi)
    state.logdet_P_bar_inv += math.log1p(beta_bar**2 * s)
    prev = state.theta_bar
    state.theta_bar = q_project(pre, state.P_bar_inv, cfg.domain, Q_inv=state.P_bar, method=cfg.projection_method)
    state.last_gains.beta_bar = beta_bar
    state.last_gains.a_bar = a_bar
    return Step1Result(M, g_lo, g_hi, beta_bar, a_bar, prev, pre, y_hat_bar, underflow)


def step2_update(
    state: EstimatorState, phi, y: float, spec: SaturationSpec, theta_bar_ref=None
) -> Step2Result:
    """Accelerated layer: secant gain against the preliminary estimate.

    Args:
        theta_bar_ref: Preliminary estimate entering the secant slope. Defaults
            to the current ``state.theta_bar``, i.e. the estimate just produced
            by :func:`step1_update` for this record.
    """
    return _step2(state, _check_record(state, phi, y, spec), y, spec, theta_bar_ref)


_SECANT_NEAR = 1e-3
_GL3_NODES = (-math.sqrt(0.6), 0.0, math.sqrt(0.6))
_GL3_WEIGHTS = (5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0)


def _secant(xh: float, xb: float, g_h: float, spec: SaturationSpec, noise: NoiseModel) -> float:
    """``(G(xb) - G(xh)) / (xb - xh)``, clipped at zero.

    Close gaps cancel catastrophically in the numerator, so there the same
    quotient is taken as the mean of ``G'`` over the gap (3-point
    Gauss-Legendre, error of order ``gap^6``).
    """
    d = xb - xh
    if abs(d) < _SECANT_NEAR * max(1.0, abs(xh)):
        mid = 0.5 * (xh + xb)
        beta = sum(w * float(g_deriv(mid + 0.5 * d * t, spec, noise)) for t, w in zip(_GL3_NODES, _GL3_WEIGHTS))
    else:
        beta = (g_mean(xb, spec, noise) - g_h) / d
    # G is nondecreasing; clip roundoff below zero
    return max(beta, 0.0)


def _step2(state: EstimatorState, phi: np.ndarray, y: float, spec: SaturationSpec, theta_bar_ref=None) -> Step2Result:
    cfg = state.config
    noise = cfg.noise
    ref = state.theta_bar if theta_bar_ref is None else np.asarray(theta_bar_ref, dtype=float)
    xh = float(phi @ state.theta_hat)
    xb = float(phi @ ref)
    y_hat = g_mean(xh, spec, noise)
    tie = abs(xh - xb) <= cfg.beta_tie_epsilon * max(1.0, abs(xh))
    if tie:
        beta = float(g_deriv(xh, spec, noise))
    else:
        beta = _secant(xh, xb, y_hat, spec, noise)
    if isinstance(cfg.mu_policy, ConstantMu):
        mu = cfg.mu_policy.value
    else:
        mu = min(max(sigma_var(xh, spec, noise), cfg.mu_policy.mu_min), cfg.mu_policy.mu_max)
    Pphi = state.P @ phi
    s = float(phi @ Pphi)
    a = 1.0 / (mu + beta**2 * s)
    pre = state.theta_hat + a * beta * (y - y_hat) * Pphi

    P_new = state.P - (a * beta**2) * (Pphi[:, None] * Pphi)
    state.P = 0.5 * (P_new + P_new.T)
    state.P_inv = state.P_inv + (beta**2 / mu) * (phi[:, None] * phi)
    state.logdet_P_inv += math.log1p(beta**2 * s / mu)
    prev = state.theta_hat
    state.theta_hat = q_project(pre, state.P_inv, cfg.domain, Q_inv=state.P, method=cfg.projection_method)
    g = state.last_gains
    g.beta, g.a, g.mu = beta, a, mu
    return Step2Result(beta, a, mu, tie, prev, pre, y_hat)


def _resync(state: EstimatorState) -> None:
    """Recompute ``P`` from the additively accumulated ``P^{-1}``."""
    for inv_name, mat_name, ld_name in (
        ("P_inv", "P", "logdet_P_inv"),
        ("P_bar_inv", "P_bar", "logdet_P_bar_inv"),
    ):
        Pi = getattr(state, inv_name)
        Pi = 0.5 * (Pi + Pi.T)
        setattr(state, inv_name, Pi)
        P = np.linalg.inv(Pi)
        setattr(state, mat_name, 0.5 * (P + P.T))
        setattr(state, ld_name, float(np.linalg.slogdet(Pi)[1]))


def update(state: EstimatorState, record: ObservationRecord) -> StepReport:
    """Run both layers on one record and return the step report."""
    cfg = state.config
    phi = _check_record(state, record.phi, record.y, record.spec)
    lam_p = lam_pb = math.nan
    if cfg.track_eigen:
        lam_p = float(np.linalg.eigvalsh(state.P_inv)[0])
        lam_pb = float(np.linalg.eigvalsh(state.P_bar_inv)[0])
    bar_before = state.theta_bar
    r1 = _step1(state, phi, record.y, record.spec)
    ref = None if cfg.beta_uses_updated_bar else bar_before
    r2 = _step2(state, phi, record.y, record.spec, theta_bar_ref=ref)
    state.info = state.info + (phi[:, None] * phi)
    lo = hi = math.nan
    if cfg.track_eigen:
        w = np.linalg.eigvalsh(state.info)
        lo, hi = float(w[0]), float(w[-1])
    state.k += 1
    if state.k % cfg.resync_every == 0:
        _resync(state)
    return StepReport(
        k=state.k - 1,
        phi=phi,
        spec=record.spec,
        y=float(record.y),
        y_hat=r2.y_hat,
        y_hat_bar=r1.y_hat_bar,
        residual=float(record.y) - r2.y_hat,
        theta_bar_prev=r1.theta_bar_prev,
        theta_hat_prev=r2.theta_hat_prev,
        theta_bar=state.theta_bar.copy(),
        theta_hat=state.theta_hat.copy(),
        theta_bar_pre_projection=r1.pre_projection,
        theta_hat_pre_projection=r2.pre_projection,
        M=r1.M,
        g_lo=r1.g_lo,
        g_hi=r1.g_hi,
        beta_bar=r1.beta_bar,
        a_bar=r1.a_bar,
        beta=r2.beta,
        a=r2.a,
        mu=r2.mu,
        tie=r2.tie,
        P_diag=np.diag(state.P).copy(),
        logdet_P_inv=state.logdet_P_inv,
        logdet_P_bar_inv=state.logdet_P_bar_inv,
        lam_min_P_inv_prev=lam_p,
        lam_min_P_bar_inv_prev=lam_pb,
        info_lam_min=lo,
        info_lam_max=hi,
    )


def predict(state: EstimatorState, phi, spec: SaturationSpec) -> float:
    """Adaptive predictor ``G(phi^T theta_hat_k)``."""
    return g_mean(float(np.asarray(phi, dtype=float) @ state.theta_hat), spec, state.config.noise)


# ---------------------------------------------------------------------------
# checkpoints

_MATRICES = ("P_bar", "P_bar_inv", "P", "P_inv", "info")
_VECTORS = ("theta_bar", "theta_hat")
_SCALARS = ("lambda0", "logdet_P_inv", "logdet_P_bar_inv")


def _hex(a) -> list:
    return [float(v).hex() for v in np.asarray(a, dtype=float).ravel()]


def state_to_json(state: EstimatorState) -> str:
    """Serialize with hexadecimal floats so the round trip is bit-exact."""
    m = state.config.dim
    doc = {
        "format": "tsqn-state",
        "version": 1,
        "config_hash": state.config.config_hash(),
        "m": m,
        "k": state.k,
        "last_gains": {k: float(v).hex() for k, v in vars(state.last_gains).items()},
    }
    for name in _MATRICES + _VECTORS:
        doc[name] = _hex(getattr(state, name))
    for name in _SCALARS:
        doc[name] = float(getattr(state, name)).hex()
    return json.dumps(doc, sort_keys=True)


def state_from_json(text: str, config: EstimatorConfig) -> EstimatorState:
    doc = json.loads(text)
    if doc.get("format") != "tsqn-state" or doc.get("version") != 1:
        raise ConfigError("not a version-1 TSQN state checkpoint", code="E_SCHEMA")
    if doc["config_hash"] != config.config_hash():
        raise ConfigError("checkpoint was written under a different estimator config", code="E_SCHEMA")
    m = doc["m"]

    def arr(name, shape):
        return np.array([float.fromhex(v) for v in doc[name]]).reshape(shape)

    return EstimatorState(
        config=config,
        theta_bar=arr("theta_bar", (m,)),
        P_bar=arr("P_bar", (m, m)),
        P_bar_inv=arr("P_bar_inv", (m, m)),
        theta_hat=arr("theta_hat", (m,)),
        P=arr("P", (m, m)),
        P_inv=arr("P_inv", (m, m)),
        info=arr("info", (m, m)),
        lambda0=float.fromhex(doc["lambda0"]),
        logdet_P_inv=float.fromhex(doc["logdet_P_inv"]),
        logdet_P_bar_inv=float.fromhex(doc["logdet_P_bar_inv"]),
        k=int(doc["k"]),
        last_gains=Gains(**{k: float.fromhex(v) for k, v in doc["last_gains"].items()}),
    )


__all__ = [
    "AdaptiveMu",
    "Ball",
    "Box",
    "ConstantMu",
    "EstimatorConfig",
    "EstimatorState",
    "ObservationRecord",
    "StepReport",
    "domain_from_dict",
    "new_state",
    "predict",
    "state_from_json",
    "state_to_json",
    "step1_update",
    "step2_update",
    "update",
]
