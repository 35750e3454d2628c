"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines
inline; they are also echoed to the terminal when output is captured.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from tsqn.cli import main
from tsqn.diagnostics import (
    asymptotic_ci,
    cumulative_regret,
    lyapunov_bound,
    lyapunov_constants,
    rate_statistic,
    regret_statistic,
)
from tsqn.estimator import ConstantMu, EstimatorConfig, ObservationRecord, new_state, update
from tsqn.geometry import Ball, Box, q_norm, q_project
from tsqn.links import NoiseModel, SaturationSpec, g_deriv, g_mean, sigma_var
from tsqn.montecarlo import McDesign, coverage, mc_interval, replicate_errors
from tsqn.simulation import experiment_curves, gen_observations, log_grid, benchmark_scenario, run_experiment
from tsqn.trace import run_estimator

from oracles import grid_projection_2d, hand_constants, quad_mean, quad_var, regularized_wls, stein_deriv

GAUSS = NoiseModel.gaussian(1.0)
CENS = SaturationSpec.censored(0.0, 15.0)
LINEAR = SaturationSpec.linear()
BINARY = SaturationSpec.binary()
SEEDS = range(10)


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def benchmark_runs():
    return [run_experiment(benchmark_scenario(seed=s)) for s in SEEDS]


class TestAcceptance:
    def test_01_link_oracles(self, capsys):
        xs = np.linspace(-10.0, 10.0, 401)
        spec = CENS.as_tuple()
        t0 = time.perf_counter()
        got = np.array([(g_mean(x, CENS, GAUSS), g_deriv(x, CENS, GAUSS), sigma_var(x, CENS, GAUSS)) for x in xs])
        elapsed = time.perf_counter() - t0
        ref = np.array([(quad_mean(x, spec), stein_deriv(x, spec), quad_var(x, spec)) for x in xs])
        h = 1e-5
        fd = np.array([(g_mean(x + h, CENS, GAUSS) - g_mean(x - h, CENS, GAUSS)) / (2 * h) for x in xs])
        oracle_err = float(np.max(np.abs(got - ref)))
        fd_err = float(np.max(np.abs(got[:, 1] - fd)))
        ok = oracle_err <= 1e-8 and fd_err <= 1e-6 and elapsed < 10.0
        verdict(capsys, 1, ok, f"max oracle err {oracle_err:.2e}, FD err {fd_err:.2e}, {elapsed:.2f} s")

    def test_02_degenerate_reductions(self, capsys):
        s2 = 2.5
        noise = NoiseModel.gaussian(s2)
        xs = np.linspace(-7.0, 7.0, 101)
        linear_exact = all(
            g_mean(x, LINEAR, noise) == x and g_deriv(x, LINEAR, noise) == 1.0 and sigma_var(x, LINEAR, noise) == s2
            for x in xs
        )
        p = stats.norm.cdf(xs)
        got = np.array([(g_mean(x, BINARY, GAUSS), g_deriv(x, BINARY, GAUSS), sigma_var(x, BINARY, GAUSS)) for x in xs])
        ref = np.column_stack([p, stats.norm.pdf(xs), p * (1 - p)])
        err = float(np.max(np.abs(got - ref)))
        verdict(capsys, 2, linear_exact and err <= 1e-12, f"linear exact={linear_exact}, binary max err {err:.2e}")

    def test_03_linear_wls(self, capsys):
        rng = np.random.default_rng(3)
        m, n, s2 = 3, 50, 1.0
        theta = np.array([0.7, -1.2, 0.4])
        phis = rng.standard_normal((n, m))
        ys = phis @ theta + rng.normal(scale=math.sqrt(s2), size=n)
        P0 = 10.0 * np.eye(m)
        cfg = EstimatorConfig(Box.symmetric(m, 1e6), NoiseModel.gaussian(s2), mu_policy=ConstantMu(s2), P0=P0, P0_bar=P0)
        t0 = time.perf_counter()
        st = new_state(cfg)
        est = []
        for k in range(n):
            update(st, ObservationRecord(phis[k], LINEAR, ys[k]))
            est.append(st.theta_hat.copy())
        elapsed = time.perf_counter() - t0
        err = max(
            float(np.max(np.abs(est[k] - regularized_wls(np.linalg.inv(P0), np.zeros(m), phis[: k + 1], ys[: k + 1], s2))))
            for k in range(n)
        )
        verdict(capsys, 3, err <= 1e-8 and elapsed < 1.0, f"max err {err:.2e} over {n} steps, {elapsed:.3f} s")

    def test_04_inverse_recursion(self, capsys):
        m, n = 10, 10_000
        rng = np.random.default_rng(4)
        theta = rng.uniform(-1, 1, m)
        phis = rng.normal(size=(n, m)) + 0.5
        records = gen_observations(phis, theta, CENS, GAUSS, rng=rng)
        cfg = EstimatorConfig(Box.symmetric(m, 2.0), GAUSS, P0=10.0, P0_bar=10.0, track_eigen=False)
        t0 = time.perf_counter()
        st = new_state(cfg)
        worst, min_eig = 0.0, math.inf
        for rec in records:
            before = st.P_inv.copy()
            r = update(st, rec)
            delta = st.P_inv - before - (r.beta**2 / r.mu) * np.outer(rec.phi, rec.phi)
            worst = max(worst, float(np.linalg.norm(delta)))
            if st.k % 500 == 0:
                min_eig = min(min_eig, float(np.linalg.eigvalsh(st.P)[0]))
        elapsed = time.perf_counter() - t0
        min_eig = min(min_eig, float(np.linalg.eigvalsh(st.P)[0]))
        ok = worst < 1e-7 and min_eig > 0 and elapsed < 30.0
        verdict(capsys, 4, ok, f"max Frobenius residual {worst:.2e}, min eig(P) {min_eig:.2e}, {elapsed:.1f} s")

    def test_05_benchmark_reproduction(self, capsys, benchmark_runs):
        grid = log_grid(10_000, start=100)
        n = 10_000
        monotone = better_err = better_regret = 0
        for trace in benchmark_runs:
            c = experiment_curves(trace)
            e = c.err_hat[grid - 1]
            monotone += int(np.sum(np.diff(e) > 0) <= 1)
            better_err += int(c.err_hat[-1] <= c.err_bar[-1])
            better_regret += int(
                cumulative_regret(trace, n, "accelerated") <= cumulative_regret(trace, n, "preliminary")
            )
        ok = monotone == len(SEEDS) and better_err >= 8 and better_regret >= 8
        verdict(
            capsys, 5, ok,
            f"(a) {monotone}/10 monotone, (b) {better_err}/10 error ordering, (c) {better_regret}/10 regret ordering",
        )  # fmt: skip

    def test_06_rate_and_regret_diagnostics(self, capsys, benchmark_runs):
        rate_ratio = [rate_statistic(t, 10_000) / rate_statistic(t, 1000) for t in benchmark_runs]
        regret_ratio = [regret_statistic(t, 10_000) / regret_statistic(t, 1000) for t in benchmark_runs]
        ok = max(rate_ratio) <= 3 and max(regret_ratio) <= 3
        verdict(capsys, 6, ok, f"worst rate ratio {max(rate_ratio):.2f}, worst regret ratio {max(regret_ratio):.2f}")

    def test_07_asymptotic_ci_coverage(self, capsys):
        theta = np.array([1.0, -0.5])
        n, reps = 2000, 500
        cfg = EstimatorConfig(Box.symmetric(2, 2.0), GAUSS, track_eigen=False)
        hits = np.zeros(2)
        censored = 0.0
        t0 = time.perf_counter()
        for r in range(reps):
            rng = np.random.default_rng([7, r])
            phis = rng.standard_normal((n, 2))
            records = gen_observations(phis, theta, CENS, GAUSS, rng=rng)
            censored += np.mean([rec.y in (0.0, 15.0) for rec in records]) / reps
            _, trace = run_estimator(cfg, records, theta_true=theta)
            rep = asymptotic_ci(trace, n, 0.05, dof=1)
            hits += rep.contains(theta)
        elapsed = time.perf_counter() - t0
        cov = hits / reps
        ok = bool(np.all((cov >= 0.92) & (cov <= 0.98))) and elapsed < 300
        verdict(
            capsys, 7, ok,
            f"coverage {cov[0]:.3f}/{cov[1]:.3f}, censored fraction {censored:.2f}, {elapsed:.0f} s",
        )  # fmt: skip

    def test_08_monte_carlo_coverage(self, capsys):
        rng = np.random.default_rng(8)
        phis = rng.normal(size=(150, 2)) + 1.0
        est = EstimatorConfig(Box.symmetric(2, 2.0), GAUSS, P0=10.0, P0_bar=10.0)
        design = McDesign(phis, CENS, GAUSS, est, K=2000, seed=8)
        t0 = time.perf_counter()
        rep = mc_interval(replicate_errors(design), 0.05, 0.05)
        cov = coverage(design, rep, n_fresh=500, seed=10_008)
        elapsed = time.perf_counter() - t0
        ok = bool(np.all(cov >= 0.88)) and elapsed < 600
        verdict(capsys, 8, ok, f"coverage {cov[0]:.3f}/{cov[1]:.3f} at nominal 0.90, {elapsed:.0f} s")

    def test_09_finite_sample_bound(self, capsys):
        N, alpha = 10, 0.05

        def scalar_trace(seed):
            rng = np.random.default_rng(seed)
            theta = np.array([0.8])
            phis = rng.normal(size=(N + 2, 1)) + 1.0
            records = gen_observations(phis, theta, CENS, GAUSS, rng=rng)
            cfg = EstimatorConfig(Box.symmetric(1, 2.0), GAUSS, P0=0.1, P0_bar=0.1)
            return run_estimator(cfg, records, theta_true=theta)[1]

        trace = scalar_trace(16)
        got = lyapunov_constants(trace, N, alpha, tau=0.1, plugin="true_theta")
        ref = hand_constants(trace, N, alpha, 0.1)
        rel = max(abs(got[k] - v) / max(abs(v), 1e-300) for k, v in ref.items() if abs(v) > 1e-12)
        held = 0
        reps = 500
        for seed in range(reps):
            t = scalar_trace(1000 + seed)
            bound = lyapunov_bound(t, N, alpha, plugin="true_theta").metadata["squared_error_bound"]
            err = t.estimate(N + 1) - t.theta_true
            held += int(np.all(err**2 <= np.asarray(bound)))
        freq = held / reps
        ok = rel <= 1e-9 and freq >= 1 - 2 * alpha
        verdict(capsys, 9, ok, f"max relative constant err {rel:.2e}, bound held in {freq:.3f} of {reps}")

    def test_10_projection_properties(self, capsys):
        rng = np.random.default_rng(10)
        worst_nonexp = worst_feas = worst_idem = 0.0
        for _ in range(10_000):
            m = int(rng.integers(1, 6))
            U, _ = np.linalg.qr(rng.standard_normal((m, m)))
            Q = U @ np.diag(np.exp(rng.uniform(0, np.log(100.0), m))) @ U.T
            if rng.random() < 0.5:
                lo = rng.uniform(-3, 0, m)
                D = Box(lo, lo + rng.uniform(0.5, 4, m))
            else:
                D = Ball(rng.normal(size=m), float(rng.uniform(0.3, 3)))
            x, y = rng.normal(scale=5, size=(2, m))
            px, py = q_project(x, Q, D), q_project(y, Q, D)
            worst_nonexp = max(worst_nonexp, q_norm(px - py, Q) - q_norm(x - y, Q))
            if isinstance(D, Box):
                viol = float(np.max(np.maximum(D.lower - px, px - D.upper)))
            else:
                viol = float(np.linalg.norm(px - D.center) - D.radius)
            worst_feas = max(worst_feas, viol)
            worst_idem = max(worst_idem, float(np.max(np.abs(q_project(px, Q, D) - px))))
        grid_err = 0.0
        for _ in range(20):
            a = rng.uniform(0.2, 0.9) * rng.choice([-1, 1])
            Q = np.array([[1.0, a], [a, 1.0]]) * rng.uniform(0.5, 3)
            lo = rng.uniform(-2, 0, 2)
            D = Box(lo, lo + rng.uniform(0.5, 2, 2))
            x = rng.normal(scale=3, size=2)
            ref = grid_projection_2d(x, Q, D.lower, D.upper)
            grid_err = max(grid_err, float(np.max(np.abs(q_project(x, Q, D) - ref))))
        ok = worst_nonexp <= 1e-9 and worst_feas <= 1e-12 and worst_idem <= 1e-10 and grid_err <= 2e-3
        verdict(
            capsys, 10, ok,
            f"non-expansive excess {worst_nonexp:.1e}, feasibility {worst_feas:.1e}, "
            f"idempotence {worst_idem:.1e}, grid oracle {grid_err:.1e}",
        )  # fmt: skip

    def test_11_determinism(self, capsys, tmp_path, monkeypatch):
        monkeypatch.delenv("TSQN_SEED", raising=False)
        config = str(Path(__file__).resolve().parents[1] / "configs" / "small.json")
        for d in ("a", "b"):
            assert main(["simulate", "--config", config, "--out", str(tmp_path / d), "--exact"]) == 0
        capsys.readouterr()
        same = all(
            (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("dataset.csv", "trace.csv")
        )
        verdict(capsys, 11, same, "dataset.csv and trace.csv byte-identical across two runs")
