import math

import numpy as np
import pytest
from scipy import stats

from tsqn.errors import ConfigError, DataError
from tsqn.estimator import (
    AdaptiveMu,
    ConstantMu,
    EstimatorConfig,
    ObservationRecord,
    new_state,
    predict,
    state_from_json,
    state_to_json,
    step1_update,
    step2_update,
    update,
)
from tsqn.geometry import Ball, Box
from tsqn.links import NoiseModel, SaturationSpec, g_bounds
from tsqn.simulation import gen_observations
from tsqn.trace import final_estimate, run_estimator

from oracles import quad_mean, regularized_wls

GAUSS = NoiseModel.gaussian(1.0)
LINEAR = SaturationSpec.linear()
CENS = SaturationSpec.censored(0.0, 15.0)
BINARY = SaturationSpec.binary()


def scalar_config(**kw):
    base = dict(domain=Box([-10.0], [10.0]), noise=GAUSS, mu_policy=ConstantMu(1.0), P0_bar=1.0, P0=1.0)
    base.update(kw)
    return EstimatorConfig(**base)


def random_run(seed, m=3, n=300, spec=CENS, mu_policy=None, domain=None):
    rng = np.random.default_rng(seed)
    domain = Box.symmetric(m, 2.0) if domain is None else domain
    theta = rng.uniform(-1.5, 1.5, m)
    phis = rng.normal(scale=2.0, size=(n, m)) + 3.0 / math.sqrt(m)
    records = gen_observations(phis, theta, [spec] * n, GAUSS, rng=rng)
    cfg = EstimatorConfig(domain, GAUSS, mu_policy=mu_policy or AdaptiveMu(), P0_bar=10.0, P0=10.0)
    return cfg, records, theta


def hand_recursion(records, P_bar, P, tb, th, mu, domain_hw):
    """Scalar linear-spec recursion written out directly from the update formulas."""
    out = []
    for phi, y in records:
        s = phi * P_bar * phi
        beta_bar = min(1.0, 1.0 / (2.0 * s + 1.0))
        a_bar = 1.0 / (1.0 + beta_bar**2 * s)
        tb = tb + a_bar * beta_bar * P_bar * phi * (y - phi * tb)
        P_bar = P_bar - a_bar * beta_bar**2 * (P_bar * phi) ** 2
        tb = min(max(tb, -domain_hw), domain_hw)
        s = phi * P * phi
        a = 1.0 / (mu + s)
        th = th + a * P * phi * (y - phi * th)
        P = P - a * (P * phi) ** 2
        th = min(max(th, -domain_hw), domain_hw)
        out.append((tb, P_bar, th, P))
    return out


class TestConfig:
    def test_defaults(self):
        cfg = EstimatorConfig(Box.symmetric(3, 2.0), GAUSS)
        st = new_state(cfg)
        assert np.array_equal(st.theta_hat, np.zeros(3))
        assert np.array_equal(st.P, 100.0 * np.eye(3))
        assert st.k == 0

    def test_theta0_outside_rejected(self):
        with pytest.raises(ConfigError):
            EstimatorConfig(Box.symmetric(2, 1.0), GAUSS, theta0=[2.0, 0.0])

    def test_non_spd_rejected(self):
        with pytest.raises(ConfigError):
            EstimatorConfig(Box.symmetric(2, 1.0), GAUSS, P0=np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_mu_window(self):
        with pytest.raises(ConfigError):
            AdaptiveMu(mu_min=2.0, mu_max=1.0)
        with pytest.raises(ConfigError):
            ConstantMu(0.0)

    def test_lambda0_exceeds_prior_norm(self):
        P0 = np.diag([0.5, 4.0])
        st = new_state(EstimatorConfig(Box.symmetric(2, 1.0), GAUSS, P0=P0))
        assert st.lambda0 > np.linalg.norm(np.linalg.inv(P0), 2)
        assert np.allclose(st.info, st.lambda0 * np.eye(2))

    def test_config_hash_tracks_content(self):
        a = EstimatorConfig(Box.symmetric(2, 1.0), GAUSS)
        b = EstimatorConfig(Box.symmetric(2, 1.0), GAUSS)
        c = EstimatorConfig(Box.symmetric(2, 1.0), GAUSS, P0=50.0)
        assert a.config_hash() == b.config_hash() != c.config_hash()


class TestStep1:
    def test_scalar_example(self):
        st = new_state(scalar_config())
        r = step1_update(st, [1.0], 2.0, LINEAR)
        assert (r.g_lo, r.g_hi) == (1.0, 1.0)
        assert r.beta_bar == pytest.approx(1 / 3, abs=1e-15)
        assert r.a_bar == pytest.approx(0.9, abs=1e-15)
        assert st.theta_bar[0] == pytest.approx(0.6, abs=1e-15)
        assert st.P_bar[0, 0] == pytest.approx(0.9, abs=1e-15)

    def test_zero_regressor(self):
        st = new_state(EstimatorConfig(Box.symmetric(2, 1.0), GAUSS, theta0_bar=[0.3, -0.2]))
        P_before = st.P_bar.copy()
        step1_update(st, [0.0, 0.0], 7.0, CENS)
        assert np.array_equal(st.P_bar, P_before)
        assert np.array_equal(st.theta_bar, [0.3, -0.2])

    def test_inverse_consistency(self):
        cfg, records, _ = random_run(1, n=50)
        st = new_state(cfg)
        for rec in records:
            step1_update(st, rec.phi, rec.y, rec.spec)
            assert np.linalg.norm(st.P_bar_inv - np.linalg.inv(st.P_bar)) <= 1e-9 * np.linalg.norm(st.P_bar_inv)

    def test_gain_bounds_censored(self):
        cfg, records, _ = random_run(2, n=100)
        st = new_state(cfg)
        for rec in records:
            s = float(rec.phi @ st.P_bar @ rec.phi)
            r = step1_update(st, rec.phi, rec.y, rec.spec)
            b = g_bounds(r.M, rec.spec, GAUSS, lipschitz=False)
            assert 0 < r.beta_bar <= b.g_lo
            assert r.beta_bar <= 1.0 / (2.0 * b.g_hi * s + 1.0) + 1e-15

    def test_y_out_of_range(self):
        st = new_state(scalar_config())
        with pytest.raises(DataError) as exc:
            step1_update(st, [1.0], 16.0, CENS)
        assert exc.value.code == "E_RANGE"
        assert "step 0" in str(exc.value)

    def test_regressor_length(self):
        with pytest.raises(DataError):
            step1_update(new_state(scalar_config()), [1.0, 2.0], 1.0, LINEAR)


class TestStep2:
    def test_tie_branch_uses_derivative(self):
        st = new_state(EstimatorConfig(Box.symmetric(1, 5.0), GAUSS, theta0=[1.0], theta0_bar=[1.0]))
        r = step2_update(st, [2.0], 3.0, CENS, theta_bar_ref=st.theta_hat.copy())
        assert r.tie
        assert r.beta == pytest.approx(stats.norm.cdf(13.0) - stats.norm.cdf(-2.0), abs=1e-14)

    def test_secant_branch(self):
        st = new_state(EstimatorConfig(Box.symmetric(1, 5.0), GAUSS, theta0=[1.0]))
        r = step2_update(st, [2.0], 3.0, CENS, theta_bar_ref=np.array([2.0]))
        expected = (quad_mean(4.0, CENS.as_tuple()) - quad_mean(2.0, CENS.as_tuple())) / 2.0
        assert not r.tie
        assert r.beta == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("gap", [2e-12, 1e-9, 1e-6, 1e-4])
    def test_near_tie_secant_is_stable(self, gap):
        st = new_state(EstimatorConfig(Box.symmetric(1, 5.0), GAUSS))
        r = step2_update(st, [1.0], 1.0, BINARY, theta_bar_ref=np.array([gap]))
        # series of (Phi(g) - 1/2) / g; the direct quotient cancels here too
        exact = stats.norm.pdf(0.0) * (1 - gap**2 / 6 + gap**4 / 40)
        assert not r.tie
        assert r.beta == pytest.approx(exact, abs=1e-14)
        assert r.beta <= stats.norm.pdf(0.0)

    def test_linear_gain_is_one(self):
        st = new_state(scalar_config())
        step1_update(st, [1.0], 2.0, LINEAR)
        r = step2_update(st, [1.0], 2.0, LINEAR)
        assert r.beta == pytest.approx(1.0, abs=1e-12)

    def test_adaptive_mu_is_clipped_variance(self):
        cfg = EstimatorConfig(Box.symmetric(1, 20.0), GAUSS, mu_policy=AdaptiveMu(0.05, 1e6), theta0=[7.5])
        st = new_state(cfg)
        r = step2_update(st, [1.0], 7.0, CENS)
        assert r.mu == pytest.approx(1.0, abs=1e-9)
        st = new_state(EstimatorConfig(Box.symmetric(1, 20.0), GAUSS, mu_policy=AdaptiveMu(0.05, 1e6), theta0=[-15.0]))
        assert step2_update(st, [1.0], 0.0, CENS).mu == 0.05

    def test_inverse_recursion_each_step(self):
        cfg, records, _ = random_run(3, n=200)
        st = new_state(cfg)
        for rec in records:
            step1_update(st, rec.phi, rec.y, rec.spec)
            before = st.P_inv.copy()
            r = step2_update(st, rec.phi, rec.y, rec.spec)
            delta = st.P_inv - before - (r.beta**2 / r.mu) * np.outer(rec.phi, rec.phi)
            assert np.linalg.norm(delta) <= 1e-9
            assert np.linalg.norm(st.P_inv @ st.P - np.eye(3)) <= 1e-8


class TestUpdate:
    def test_composition_matches_manual_layers(self):
        cfg, records, _ = random_run(4, n=30)
        a, b = new_state(cfg), new_state(cfg)
        for rec in records:
            rep = update(a, rec)
            step1_update(b, rec.phi, rec.y, rec.spec)
            r2 = step2_update(b, rec.phi, rec.y, rec.spec)
            assert np.array_equal(a.theta_hat, b.theta_hat)
            assert np.array_equal(a.theta_bar, b.theta_bar)
            assert rep.beta == r2.beta and rep.y_hat == r2.y_hat
        assert a.k == 30

    def test_prediction_is_pre_step_predictor(self):
        cfg, records, _ = random_run(5, n=20)
        st = new_state(cfg)
        for rec in records:
            yhat = predict(st, rec.phi, rec.spec)
            assert update(st, rec).y_hat == yhat

    def test_hand_recursion_three_steps(self):
        data = [(1.0, 2.0), (-0.5, 0.3), (2.0, 1.5)]
        cfg = scalar_config(P0_bar=2.0, P0=3.0, mu_policy=ConstantMu(0.7))
        st = new_state(cfg)
        expected = hand_recursion(data, 2.0, 3.0, 0.0, 0.0, 0.7, 10.0)
        for (phi, y), (tb, Pb, th, P) in zip(data, expected):
            update(st, ObservationRecord(np.array([phi]), LINEAR, y))
            assert st.theta_bar[0] == pytest.approx(tb, abs=1e-12)
            assert st.P_bar[0, 0] == pytest.approx(Pb, abs=1e-12)
            assert st.theta_hat[0] == pytest.approx(th, abs=1e-12)
            assert st.P[0, 0] == pytest.approx(P, abs=1e-12)

    def test_hand_recursion_with_projection(self):
        data = [(1.0, 30.0), (1.0, 30.0)]
        st = new_state(scalar_config(P0=50.0, P0_bar=50.0))
        expected = hand_recursion(data, 50.0, 50.0, 0.0, 0.0, 1.0, 10.0)
        for (phi, y), (tb, _, th, _) in zip(data, expected):
            update(st, ObservationRecord(np.array([phi]), LINEAR, y))
            assert (st.theta_bar[0], st.theta_hat[0]) == pytest.approx((tb, th), abs=1e-12)
        assert st.theta_hat[0] == 10.0

    @pytest.mark.parametrize("mu", [1.0, 0.3])
    def test_linear_reduces_to_regularized_wls(self, mu):
        rng = np.random.default_rng(6)
        m, n = 3, 400
        theta = np.array([0.5, -1.0, 2.0])
        phis = rng.normal(size=(n, m))
        ys = phis @ theta + rng.normal(size=n)
        P0 = np.diag([5.0, 2.0, 1.0])
        cfg = EstimatorConfig(Box.symmetric(m, 1e3), GAUSS, mu_policy=ConstantMu(mu), P0=P0, P0_bar=P0)
        st = new_state(cfg)
        for k in range(n):
            update(st, ObservationRecord(phis[k], LINEAR, ys[k]))
            if k in (0, 9, 99, n - 1):
                ref = regularized_wls(np.linalg.inv(P0), np.zeros(m), phis[: k + 1], ys[: k + 1], mu)
                assert np.max(np.abs(st.theta_hat - ref)) < 1e-8

    def test_info_accumulator(self):
        cfg, records, _ = random_run(7, n=40)
        st = new_state(cfg)
        for rec in records:
            update(st, rec)
        phis = np.array([r.phi for r in records])
        assert np.allclose(st.info, st.lambda0 * np.eye(3) + phis.T @ phis, atol=1e-9)

    def test_updated_bar_flag(self):
        cfg, records, _ = random_run(8, n=50)
        from dataclasses import replace

        alt = replace(cfg, beta_uses_updated_bar=False)
        a = final_estimate(cfg, records)
        b = final_estimate(alt, records)
        assert np.all(np.isfinite(b)) and not np.array_equal(a, b)


class TestInvariants:
    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("spec", [CENS, BINARY], ids=["censored", "binary"])
    def test_randomized_run(self, seed, spec):
        domain = Box.symmetric(4, 2.0) if seed % 2 else Ball(np.zeros(4), 2.5)
        cfg, records, _ = random_run(seed, m=4, n=400, spec=spec, domain=domain)
        st = new_state(cfg)
        for rec in records:
            P_prev, Pb_prev = st.P.copy(), st.P_bar.copy()
            rep = update(st, rec)
            assert domain.contains(st.theta_hat) and domain.contains(st.theta_bar)
            assert np.linalg.eigvalsh(st.P)[0] > 0 and np.linalg.eigvalsh(st.P_bar)[0] > 0
            assert np.linalg.eigvalsh(P_prev - st.P)[0] >= -1e-10 * np.linalg.norm(P_prev)
            assert np.linalg.eigvalsh(Pb_prev - st.P_bar)[0] >= -1e-10 * np.linalg.norm(Pb_prev)
            assert 0 < rep.beta_bar <= rep.g_lo
            assert 0 <= rep.beta <= rep.g_hi + 1e-12
        assert np.linalg.norm(st.P_inv @ st.P - np.eye(4)) < 1e-7

    def test_logdets_track_matrices(self):
        cfg, records, _ = random_run(9, n=500)
        st = new_state(cfg)
        for rec in records:
            update(st, rec)
        assert st.logdet_P_inv == pytest.approx(np.linalg.slogdet(st.P_inv)[1], abs=1e-8)
        assert st.logdet_P_bar_inv == pytest.approx(np.linalg.slogdet(st.P_bar_inv)[1], abs=1e-8)


class TestPredict:
    def test_linear(self):
        st = new_state(EstimatorConfig(Box.symmetric(2, 2.0), GAUSS, theta0=[1.0, -0.5]))
        assert predict(st, [2.0, 4.0], LINEAR) == 0.0
        assert predict(st, [1.0, 1.0], LINEAR) == 0.5

    def test_binary(self):
        st = new_state(EstimatorConfig(Box.symmetric(2, 2.0), GAUSS, theta0=[1.0, -0.5]))
        v = predict(st, [1.0, 1.0], BINARY)
        assert 0 <= v <= 1
        assert v == pytest.approx(1 - stats.norm.cdf(-0.5), abs=1e-14)

    def test_zero_regressor_censored(self):
        st = new_state(EstimatorConfig(Box.symmetric(2, 2.0), GAUSS))
        assert predict(st, [0.0, 0.0], CENS) == pytest.approx(quad_mean(0.0, CENS.as_tuple()), abs=1e-10)


class TestCheckpoint:
    def test_round_trip_bit_exact(self):
        cfg, records, _ = random_run(10, n=60)
        st = new_state(cfg)
        for rec in records[:30]:
            update(st, rec)
        back = state_from_json(state_to_json(st), cfg)
        for name in ("theta_bar", "theta_hat", "P", "P_inv", "P_bar", "P_bar_inv", "info"):
            assert np.array_equal(getattr(back, name), getattr(st, name))
        assert back.k == st.k and back.logdet_P_inv == st.logdet_P_inv
        for rec in records[30:]:
            update(st, rec)
            update(back, rec)
        assert np.array_equal(back.theta_hat, st.theta_hat)

    def test_config_mismatch(self):
        cfg, _, _ = random_run(11, n=1)
        text = state_to_json(new_state(cfg))
        with pytest.raises(ConfigError):
            state_from_json(text, EstimatorConfig(cfg.domain, GAUSS, P0=1.0))

    def test_bad_format(self):
        with pytest.raises(ConfigError):
            state_from_json('{"format": "other"}', scalar_config())


class TestTrace:
    def test_run_estimator_matches_final_estimate(self):
        cfg, records, theta = random_run(12, n=80)
        state, trace = run_estimator(cfg, records, theta_true=theta)
        assert len(trace) == 80
        assert np.array_equal(trace.estimate(80), final_estimate(cfg, records))
        assert np.array_equal(trace.estimate(0), cfg.theta0)
        assert trace.error_norms().shape == (80,)

    def test_deterministic(self):
        cfg, records, _ = random_run(13, n=50)
        assert np.array_equal(final_estimate(cfg, records), final_estimate(cfg, records))
