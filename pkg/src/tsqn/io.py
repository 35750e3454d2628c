"""Configuration, dataset, trace and report files.

Configs and reports are JSON; datasets and traces are CSV. Floats are written
with ``repr`` (shortest round-trip form) and infinities as ``inf``/``-inf``,
so every numeric field survives a write/read cycle unchanged.

Dataset columns: ``k, phi_0 .. phi_{m-1}, l, u, L, U, y``.

Trace columns, one row per step ``k`` (0-based, the record ``phi_k, y_{k+1}``):

* ``k``, ``phi_j``, ``l, u, L, U``, ``y``: the record itself;
* ``y_hat_bar``, ``y_hat``: predictions of both layers made before the step;
* ``theta_bar_j``, ``theta_hat_j``: estimates after the step;
* ``M, g_lo, g_hi, beta_bar, a_bar``: preliminary-layer gain terms;
* ``beta, a, mu, tie``: accelerated-layer gain terms (``tie`` 1 when the
  derivative replaced the secant slope);
* ``logdet_P_inv, logdet_P_bar_inv``: log-determinants after the step;
* ``P_diag_j``: diagonal of the accelerated-layer ``P`` after the step;
* ``info_lam_min, info_lam_max``: extreme eigenvalues of
  ``lambda0 I + sum phi phi^T`` (``nan`` when not tracked);
* ``err_bar, err_hat``: error norms, only when the true parameter is known;
* with ``exact=True``, ``theta_bar_j_hex`` and ``theta_hat_j_hex`` carry
  the estimates as hexadecimal floats.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import ConfidenceReport, _jsonable
from .errors import AssumptionViolation, ConfigError, DataError
from .estimator import AdaptiveMu, ConstantMu, EstimatorConfig, ObservationRecord
from .geometry import Box, DomainSet, domain_from_dict, sup_abs_inner
from .links import NoiseModel, SaturationSpec, g_bounds
from .simulation import BENCHMARK_A_DIAG, BENCHMARK_THETA, ScenarioConfig
from .trace import RunTrace

SCHEMA_VERSION = 1
SPEC_COLUMNS = ("l", "u", "L", "U")


def fmt(v) -> str:
    """Shortest round-trip text for a number; bools are written as 0 or 1."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# configuration


@dataclass(eq=False)
class RunConfig:
    """Everything a CLI command needs, parsed from one JSON document."""

    seed: int
    domain: DomainSet
    spec: SaturationSpec
    noise: NoiseModel
    estimator: EstimatorConfig
    scenario: ScenarioConfig | None = None
    mc: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        """Hash of the whole config except the seed, estimator overrides included."""
        raw = {k: v for k, v in self.raw.items() if k != "seed"}
        blob = json.dumps({"raw": raw, "estimator": self.estimator.to_dict()}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        raw = dict(self.raw, seed=int(seed))
        return parse_config(raw)


def _mu_policy(d: dict | None):
    if d is None:
        return AdaptiveMu()
    policy = d.get("policy", "adaptive")
    if policy == "constant":
        return ConstantMu(float(d.get("value", 1.0)))
    if policy == "adaptive":
        return AdaptiveMu(float(d.get("min", AdaptiveMu.mu_min)), float(d.get("max", AdaptiveMu.mu_max)))
    raise ConfigError(f"unknown mu policy {policy!r}")


def _domain(d: dict) -> DomainSet:
    if d.get("kind") == "box" and "half_width" in d:
        return Box.symmetric(int(d["dim"]), float(d["half_width"]))
    return domain_from_dict(d)


def _noise(d: dict | None) -> NoiseModel:
    if d is None:
        return NoiseModel.gaussian()
    kind = d.get("kind", "gaussian")
    if kind == "gaussian":
        return NoiseModel.gaussian(float(d.get("variance", 1.0)), float(d.get("eta", 1.0)))
    if kind == "tabulated":
        return NoiseModel.tabulated(d["grid"], d["cdf"], d["pdf"], float(d.get("eta", 1.0)))
    raise ConfigError(f"unknown noise kind {kind!r}")


def _spec(d: dict | None) -> SaturationSpec:
    if d is None:
        return SaturationSpec.censored(0.0, 15.0)
    return SaturationSpec(*(float(d[c]) for c in SPEC_COLUMNS))


def parse_config(doc: dict) -> RunConfig:
    """Build a :class:`RunConfig` from a decoded JSON document.

    A ``"scenario": {"preset": "benchmark"}`` entry expands to the ten-dimensional
    diminishing-excitation benchmark; explicit keys override the preset.
    """
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}", code="E_SCHEMA"
        )
    try:
        seed = int(doc.get("seed", 0))
        sc = dict(doc.get("scenario") or {})
        preset = sc.pop("preset", None)
        if preset not in (None, "benchmark"):
            raise ConfigError(f"unknown scenario preset {preset!r}")
        if preset == "benchmark":
            sc.setdefault("A_diag", list(BENCHMARK_A_DIAG))
            sc.setdefault("theta_true", list(BENCHMARK_THETA))
        dom = doc.get("domain")
        if dom is None:
            if preset != "benchmark":
                raise ConfigError("config needs a 'domain' entry")
            dom = {"kind": "box", "dim": 10, "half_width": 2.0}
        domain = _domain(dom)
        spec = _spec(doc.get("spec"))
        noise = _noise(doc.get("noise"))
        est = dict(doc.get("estimator") or {})
        mu = _mu_policy(est.pop("mu", None))
        allowed = {
            "P0", "P0_bar", "theta0", "theta0_bar", "beta_tie_epsilon", "M_inflation",
            "beta_uses_updated_bar", "resync_every", "track_eigen", "projection_method",
        }  # fmt: skip
        unknown = set(est) - allowed
        if unknown:
            raise ConfigError(f"unknown estimator keys {sorted(unknown)}", code="E_SCHEMA")
        estimator = EstimatorConfig(domain=domain, noise=noise, mu_policy=mu, **est)
        scenario = None
        if sc:
            if "A_diag" in sc:
                A = np.diag(sc.pop("A_diag"))
            else:
                A = np.asarray(sc.pop("A"), dtype=float)
            phi0 = sc.pop("phi0", None)
            scenario = ScenarioConfig(
                A=A,
                theta_true=np.asarray(sc.pop("theta_true"), dtype=float),
                domain=domain,
                spec=spec,
                noise=noise,
                n=int(sc.pop("n", 10_000)),
                seed=seed,
                first_scale=float(sc.pop("first_scale", 1.0)),
                rest_c=float(sc.pop("rest_c", 5.0)),
                decay=float(sc.pop("decay", 0.25)),
                phi0=None if phi0 is None else np.asarray(phi0, dtype=float),
            )
            if sc:
                raise ConfigError(f"unknown scenario keys {sorted(sc)}", code="E_SCHEMA")
    except KeyError as exc:
        raise ConfigError(f"config is missing the key {exc}", code="E_SCHEMA") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config: {exc}", code="E_SCHEMA") from exc
    return RunConfig(
        seed=seed,
        domain=domain,
        spec=spec,
        noise=noise,
        estimator=estimator,
        scenario=scenario,
        mc=dict(doc.get("mc") or {}),
        ci=dict(doc.get("ci") or {}),
        raw=dict(doc),
    )


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", code="E_SCHEMA") from exc
    return parse_config(doc)


# ---------------------------------------------------------------------------
# datasets


def dataset_header(m: int) -> list[str]:
    return ["k", *(f"phi_{j}" for j in range(m)), *SPEC_COLUMNS, "y"]


def dataset_text(records) -> str:
    records = list(records)
    m = len(records[0].phi) if records else 0
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dataset_header(m))
    for k, r in enumerate(records):
        w.writerow([k, *(fmt(v) for v in r.phi), *(fmt(v) for v in r.spec.as_tuple()), fmt(r.y)])
    return buf.getvalue()


def write_dataset(records, path) -> None:
    _atomic_write(path, dataset_text(records))


def _cell(text: str, line: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}: column {col!r} is not a number ({text!r})", code="E_NUMERIC") from None
    if math.isnan(v):
        raise DataError(f"line {line}: column {col!r} is nan", code="E_NUMERIC")
    return v


def load_dataset(path) -> list[ObservationRecord]:
    """Read and check a dataset file.

    Raises:
        DataError: with code ``E_SCHEMA`` (bad header or row length),
            ``E_NUMERIC`` (non-numeric cell), ``E_INDEX`` (``k`` not
            contiguous from 0), ``E_ORDER`` (thresholds violate
            ``L <= l <= u <= U``) or ``E_RANGE`` (``y`` outside ``[L, U]``).
    """
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}", code="E_IO") from exc
    with fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None:
            return []
        m = len(header) - 6
        if m < 1 or header != dataset_header(m):
            raise DataError(f"line 1: expected header k, phi_0.., l, u, L, U, y; got {header}", code="E_SCHEMA")
        out = []
        for line, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} cells, got {len(row)}", code="E_SCHEMA")
            vals = [_cell(t, line, c) for t, c in zip(row, header)]
            if vals[0] != len(out):
                raise DataError(f"line {line}: k = {row[0]} but {len(out)} was expected", code="E_INDEX")
            phi = np.array(vals[1 : m + 1])
            if not np.all(np.isfinite(phi)):
                raise DataError(f"line {line}: regressor entries must be finite", code="E_NUMERIC")
            l, u, L, U = vals[m + 1 : m + 5]
            if not (L <= l <= u <= U):
                raise DataError(
                    f"line {line}: thresholds violate L <= l <= u <= U (ordering assumption): {L}, {l}, {u}, {U}",
                    code="E_ORDER",
                )
            try:
                spec = SaturationSpec(l, u, L, U)
            except ConfigError as exc:
                raise DataError(f"line {line}: {exc}", code="E_ORDER") from exc
            y = vals[-1]
            if not (L <= y <= U):
                raise DataError(f"line {line}: y = {y} outside [{L}, {U}]", code="E_RANGE")
            out.append(ObservationRecord(phi, spec, y))
    return out


# ---------------------------------------------------------------------------
# traces


def trace_header(m: int, with_truth: bool, exact: bool) -> list[str]:
    cols = ["k", *(f"phi_{j}" for j in range(m)), *SPEC_COLUMNS, "y", "y_hat_bar", "y_hat"]
    cols += [f"theta_bar_{j}" for j in range(m)] + [f"theta_hat_{j}" for j in range(m)]
    cols += ["M", "g_lo", "g_hi", "beta_bar", "a_bar", "beta", "a", "mu", "tie"]
    cols += ["logdet_P_inv", "logdet_P_bar_inv", *(f"P_diag_{j}" for j in range(m))]
    cols += ["info_lam_min", "info_lam_max"]
    if with_truth:
        cols += ["err_bar", "err_hat"]
    if exact:
        cols += [f"theta_bar_{j}_hex" for j in range(m)] + [f"theta_hat_{j}_hex" for j in range(m)]
    return cols


def trace_text(trace: RunTrace, exact: bool = False) -> str:
    m = trace.m
    truth = trace.theta_true
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(m, truth is not None, exact))
    for s in trace.steps:
        row = [s.k, *map(fmt, s.phi), *map(fmt, s.spec.as_tuple()), fmt(s.y), fmt(s.y_hat_bar), fmt(s.y_hat)]
        row += [*map(fmt, s.theta_bar), *map(fmt, s.theta_hat)]
        row += [fmt(v) for v in (s.M, s.g_lo, s.g_hi, s.beta_bar, s.a_bar, s.beta, s.a, s.mu, s.tie)]
        row += [fmt(s.logdet_P_inv), fmt(s.logdet_P_bar_inv), *map(fmt, s.P_diag)]
        row += [fmt(s.info_lam_min), fmt(s.info_lam_max)]
        if truth is not None:
            row += [fmt(np.linalg.norm(s.theta_bar - truth)), fmt(np.linalg.norm(s.theta_hat - truth))]
        if exact:
            row += [float(v).hex() for v in s.theta_bar] + [float(v).hex() for v in s.theta_hat]
        w.writerow(row)
    return buf.getvalue()


def write_trace(trace: RunTrace, path, exact: bool = False) -> None:
    _atomic_write(path, trace_text(trace, exact))


def read_trace(path) -> dict[str, np.ndarray]:
    """Columns of a trace CSV as float arrays (hex columns decoded exactly)."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read trace {path}: {exc}", code="E_IO") from exc
    if not rows:
        raise DataError(f"{path}: empty trace file", code="E_SCHEMA")
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        conv = float.fromhex if name.endswith("_hex") else float
        try:
            out[name] = np.array([conv(r[j]) for r in body], dtype=float)
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}: column {name!r} is malformed ({exc})", code="E_NUMERIC") from exc
    return out


# ---------------------------------------------------------------------------
# reports


def report_text(report) -> str:
    if isinstance(report, ConfidenceReport):
        report = report.to_dict()
    elif hasattr(report, "to_dict"):
        report = report.to_dict()
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def write_report(report, path) -> None:
    _atomic_write(path, report_text(report))


def read_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    """Pass/fail per standing assumption, with the witnesses that decided it."""

    checks: list[dict] = field(default_factory=list)

    def add(self, assumption: int, name: str, passed: bool, **witness) -> None:
        self.checks.append({"assumption": assumption, "check": name, "passed": bool(passed), "witness": witness})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def failures(self) -> list[dict]:
        return [c for c in self.checks if not c["passed"]]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def validate(records, config: EstimatorConfig, theta=None) -> ValidationReport:
    """Check a dataset against the standing assumptions of the estimator.

    * 1: regressors finite and bounded (``max ||phi||``), ``theta`` (if
      given) an interior point of the domain;
    * 2: threshold ordering, the clamp gap ``c`` and the sups of ``l_k^+``
      and ``u_k^-`` all finite;
    * 3: the derivative bounds over ``|x| <= M`` are positive and finite for
      ``M = M_inflation * max_k M_k``. Bounds that only underflow in double
      precision pass with a note.
    """
    records = list(records)
    rep = ValidationReport()
    D = config.domain
    if records:
        phis = np.array([r.phi for r in records])
        norms = np.linalg.norm(phis, axis=1)
        rep.add(1, "bounded_regressors", bool(np.all(np.isfinite(norms))), max_phi_norm=float(norms.max()))
    else:
        rep.add(1, "bounded_regressors", True, max_phi_norm=0.0)
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
        rep.add(1, "theta_interior", D.interior(theta), theta=theta.tolist())

    bad_order = [k for k, r in enumerate(records) if not (r.spec.L <= r.spec.l <= r.spec.u <= r.spec.U)]
    rep.add(2, "ordering", not bad_order, violations=bad_order[:20])
    gaps, l_plus, u_minus = [0.0], [0.0], [0.0]
    for r in records:
        s = r.spec
        if s.l > s.L:
            gaps.append(s.l - s.L)
        if s.U > s.u:
            gaps.append(s.U - s.u)
        l_plus.append(max(s.l, 0.0))
        u_minus.append(max(-s.u, 0.0))
    c, lp, um = max(gaps), max(l_plus), max(u_minus)
    rep.add(2, "bounded_gaps", all(math.isfinite(v) for v in (c, lp, um)), c=c, l_plus_sup=lp, u_minus_sup=um)

    M_run = max((sup_abs_inner(r.phi, D) for r in records), default=0.0)
    M = config.M_inflation * M_run
    specs = sorted({r.spec for r in records}, key=lambda s: s.as_tuple())
    worst_lo, worst_hi, notes, ok = math.inf, 0.0, [], True
    for s in specs:
        try:
            b = g_bounds(M, s, config.noise, lipschitz=False) if M > 0 else None
        except AssumptionViolation as exc:
            ok = False
            notes.append(f"{s.as_tuple()}: {exc}")
            continue
        if b is None:
            continue
        worst_lo, worst_hi = min(worst_lo, b.g_lo), max(worst_hi, b.g_hi)
        if b.underflow:
            notes.append(f"{s.as_tuple()}: lower bound underflows double precision at M={M:.6g}")
    if not math.isfinite(worst_hi):
        ok = False
    rep.add(3, "link_bounds", ok, M=M, g_lo=worst_lo if specs and M > 0 else None, g_hi=worst_hi, notes=notes)
    return rep


__all__ = [
    "RunConfig",
    "SCHEMA_VERSION",
    "ValidationReport",
    "dataset_text",
    "fmt",
    "load_config",
    "load_dataset",
    "parse_config",
    "read_report",
    "read_trace",
    "report_text",
    "trace_text",
    "validate",
    "write_dataset",
    "write_report",
    "write_trace",
]
