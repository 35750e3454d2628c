"""Parameter domains and projection in a weighted norm.

``q_project`` returns ``argmin_{y in D} (x - y)^T Q (x - y)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import ConfigError, DomainError, NumericFailure

MEMBERSHIP_TOL = 1e-12
DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise ConfigError("box bounds must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("box bounds must be finite (compact domain)")
        if np.any(lo >= hi):
            raise ConfigError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, m: int, half_width: float) -> "Box":
        return cls(-half_width * np.ones(m), half_width * np.ones(m))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool((x >= self.lower - tol).all() and (x <= self.upper + tol).all())

    def interior(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x > self.lower) and np.all(x < self.upper))

    def vertices(self) -> np.ndarray:
        if self.dim > 20:
            raise DomainError("vertex enumeration limited to dimension <= 20")
        return np.array(list(itertools.product(*zip(self.lower, self.upper))))

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).ravel()
        if c.size == 0 or not np.all(np.isfinite(c)):
            raise ConfigError("ball center must be a finite nonempty vector")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ConfigError("ball radius must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) <= self.radius + tol)

    def interior(self, x) -> bool:
        return bool(np.linalg.norm(np.asarray(x, dtype=float) - self.center) < self.radius)

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        d = rng.standard_normal(self.dim)
        d /= np.linalg.norm(d)
        return self.center + self.radius * rng.uniform() ** (1.0 / self.dim) * d

    def to_dict(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


DomainSet = Box | Ball


def domain_from_dict(d: dict) -> DomainSet:
    kind = d.get("kind")
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    raise ConfigError(f"unknown domain kind {kind!r}")


def sup_abs_inner(phi, D: DomainSet) -> float:
    """``max_{x in D} |phi^T x|``."""
    phi = np.asarray(phi, dtype=float)
    if isinstance(D, Ball):
        return float(abs(phi @ D.center) + D.radius * np.linalg.norm(phi))
    a = phi * D.lower
    b = phi * D.upper
    # phi^T x is linear, so both extremes sit on vertices chosen per coordinate
    hi = np.maximum(a, b).sum()
    lo = np.minimum(a, b).sum()
    return float(max(hi, -lo))


def _check_metric(Q: np.ndarray) -> None:
    w = np.linalg.eigvalsh(Q)
    if not (w[0] > 1e-12 * w[-1] and w[-1] > 0):
        raise DomainError(f"projection metric is not positive definite (eigenvalues {w[0]:.3g}..{w[-1]:.3g})")


def _project_ball(x, Q, D: Ball) -> np.ndarray:
    z = x - D.center
    if z @ z <= D.radius**2:
        return x.copy()
    # KKT: y - c = (Q + nu I)^{-1} Q z, with nu >= 0 fixed by ||y - c|| = r
    lam, V = np.linalg.eigh(Q)
    w = V.T @ z

    def excess(nu):
        return np.sum((lam * w / (lam + nu)) ** 2) - D.radius**2

    if excess(0.0) <= 0:
        # on the sphere up to roundoff
        nu = 0.0
    else:
        hi = 1.0
        while excess(hi) > 0:
            hi *= 2.0
        nu = optimize.brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    y = D.center + V @ (lam * w / (lam + nu))
    # pull back onto the sphere against roundoff
    r = np.linalg.norm(y - D.center)
    if r > D.radius:
        y = D.center + (y - D.center) * (D.radius / r)
    return y


def _project_box_dykstra(x, Q, D: Box, Q_inv) -> np.ndarray:
    """Dykstra's alternating projections onto the coordinate slabs in the Q-metric.

    Projecting onto ``{lo_i <= y_i <= hi_i}`` in the Q-norm moves along
    ``Q^{-1} e_i``.
    """
    m = D.dim
    if Q_inv is None:
        Q_inv = np.linalg.inv(Q)
    cols = [Q_inv[:, i] / Q_inv[i, i] for i in range(m)]
    y = x.copy()
    incr = np.zeros((m, m))
    for it in range(DYKSTRA_MAX_ITER):
        y_start = y.copy()
        for i in range(m):
            z = y + incr[i]
            v = z[i]
            step = 0.0
            if v > D.upper[i]:
                step = v - D.upper[i]
            elif v < D.lower[i]:
                step = v - D.lower[i]
            y_new = z - step * cols[i] if step else z
            incr[i] = z - y_new
            y = y_new
        d = y - y_start
        if math.sqrt(max(d @ Q @ d, 0.0)) < DYKSTRA_TOL:
            return y
    d = y - y_start
    raise NumericFailure(
        f"Dykstra projection hit the {DYKSTRA_MAX_ITER} iteration cap",
        achieved=math.sqrt(max(d @ Q @ d, 0.0)),
    )


def _project_box_bvls(x, Q, D: Box) -> np.ndarray:
    """Exact box projection as bounded least squares ``min ||R (y - x)||``, ``Q = R^T R``."""
    R = linalg.cholesky(Q, lower=False)
    res = optimize.lsq_linear(R, R @ x, bounds=(D.lower, D.upper), method="bvls", tol=1e-13)
    if res.status < 0:
        raise NumericFailure(f"bounded least squares failed: {res.message}", achieved=float(res.optimality))
    return res.x


def q_project(x, Q, D: DomainSet, Q_inv=None, method: str = "bvls") -> np.ndarray:
    """Projection of ``x`` onto ``D`` in the norm ``||v||_Q^2 = v^T Q v``.

    Balls are solved through the secular equation of the KKT system. Boxes
    with diagonal ``Q`` separate into a componentwise clamp. A box with a full
    ``Q`` goes to bounded-variable least squares, or to Dykstra's alternating
    projections when ``method="dykstra"`` (slow once ``Q`` is ill-conditioned).

    Args:
        x: Point to project.
        Q: Symmetric positive definite metric.
        D: Box or ball.
        Q_inv: Optional precomputed inverse of ``Q`` for the Dykstra path.
        method: ``"bvls"`` or ``"dykstra"``.

    Raises:
        DomainError: ``Q`` not positive definite.
        NumericFailure: the box solver did not converge.
    """
    x = np.asarray(x, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if D.contains(x, tol=0.0):
        return x.copy()
    _check_metric(Q)
    if isinstance(D, Ball):
        return _project_ball(x, Q, D)
    if np.count_nonzero(Q - np.diag(np.diag(Q))) == 0:
        return np.clip(x, D.lower, D.upper)
    if method == "dykstra":
        y = _project_box_dykstra(x, Q, D, Q_inv)
    elif method == "bvls":
        y = _project_box_bvls(x, Q, D)
    else:
        raise ConfigError(f"unknown projection method {method!r}")
    # Dykstra ends on one slab; clear the residual violation of the others
    return np.clip(y, D.lower, D.upper)


def q_norm(v, Q) -> float:
    v = np.asarray(v, dtype=float)
    return math.sqrt(max(float(v @ Q @ v), 0.0))
