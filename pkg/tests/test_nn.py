import math

import numpy as np
import pytest

from gradutils import (
    check_policy_gradients,
    check_value_gradients,
    fd_gradients,
    max_rel_error,
    policy_loss_and_grads,
)
from mimicforge import nn
from mimicforge.checkpoint import load_checkpoint, save_checkpoint


class TestNormalize:
    def test_first_sample_with_update_is_zero(self):
        norm = nn.RunningNorm.zeros(4)
        x = np.array([3.0, -1.0, 0.5, 100.0])
        out = nn.normalize(x, norm, update=True)
        assert np.allclose(out, 0.0)

    def test_constant_stream_stays_zero(self):
        norm = nn.RunningNorm.zeros(3)
        x = np.array([2.0, 2.0, -5.0])
        for _ in range(50):
            out = nn.normalize(x, norm, update=True)
            assert np.allclose(out, 0.0)

    def test_gaussian_stream_standardizes(self):
        rng = np.random.default_rng(0)
        norm = nn.RunningNorm.zeros(2)
        xs = rng.normal(3.0, 2.0, size=(100_000, 2))
        outs = nn.normalize(xs, norm, update=True)
        fresh = nn.normalize(xs, norm, update=False)
        assert abs(fresh.mean()) < 0.05
        assert abs(fresh.std() - 1.0) < 0.05
        assert abs(outs.mean()) < 0.05

    def test_clipping(self):
        norm = nn.RunningNorm.zeros(1)
        nn.normalize(np.array([[0.0], [1.0]]), norm, update=True)
        out = nn.normalize(np.array([1000.0]), norm, update=False)
        assert out[0] == 10.0

    def test_width_mismatch(self):
        norm = nn.RunningNorm.zeros(3)
        with pytest.raises(ValueError, match="width"):
            nn.normalize(np.zeros(4), norm)

    def test_merge_matches_bulk(self):
        rng = np.random.default_rng(1)
        xs = rng.normal(size=(1000, 3))
        bulk = nn.RunningNorm.zeros(3)
        bulk.update(xs)
        merged = nn.RunningNorm.zeros(3)
        for chunk in np.array_split(xs, 7):
            part = nn.RunningNorm.zeros(3)
            part.update(chunk)
            merged.merge(part)
        assert merged.count == bulk.count
        assert np.allclose(merged.mean, bulk.mean, atol=1e-12)
        assert np.allclose(merged.m2, bulk.m2, atol=1e-9)

    def test_count_monotone(self):
        norm = nn.RunningNorm.zeros(1)
        prev = 0
        for i in range(10):
            nn.normalize(np.array([[float(i)]]), norm, update=True)
            assert norm.count > prev
            prev = norm.count


def tiny_policy():
    spec = nn.MlpSpec(goal_dim=1, rest_dim=0, action_dim=1,
                      goal_widths=(1, 1), trunk_widths=(1,))
    return nn.PolicyNet(spec), spec


class TestForward:
    def test_zero_params_zero_mean(self):
        net, spec = tiny_policy()
        params = {k: np.zeros_like(v) for k, v in
                  net.init_params(np.random.default_rng(0)).items()}
        mean, std, _ = net.mean_std(params, np.array([[2.0]]))
        assert mean[0, 0] == 0.0
        assert std[0] == 1.0  # log_std zeroed too

    def test_softsign_closed_form(self):
        net, spec = tiny_policy()
        params = net.init_params(np.random.default_rng(0))
        for k in params:
            params[k] = np.ones_like(params[k])
        params["log_std"][:] = 0.0
        # leaky(2)=2 through two 1-wide encoder layers (+1 bias each):
        # genc0: 2*1+1=3 -> leaky 3; genc1: 3+1=4 -> 4; trunk0: 4+1=5
        # -> softsign(5)=5/6; head: 5/6+1
        mean, _, _ = net.mean_std(params, np.array([[2.0]]))
        assert mean[0, 0] == pytest.approx(5.0 / 6.0 + 1.0, abs=1e-12)

    def test_softsign_of_two_is_two_thirds(self):
        assert nn._softsign(np.array([2.0]))[0] == pytest.approx(2.0 / 3.0)
        assert nn._softsign_grad(np.array([0.0]))[0] == 1.0

    def test_value_linear_fixture(self):
        spec = nn.MlpSpec(goal_dim=1, rest_dim=1, action_dim=1,
                          goal_widths=(1, 1), trunk_widths=(1,))
        net = nn.ValueNet(spec)
        params = net.init_params(np.random.default_rng(0))
        for k in params:
            params[k] = np.zeros_like(params[k])
        # Only the head weight set: value = w . trunk_out = 0 -> then bias 5
        params["head.b"][:] = 5.0
        v, _ = net.value(params, np.array([[2.0, 3.0]]))
        assert v[0] == pytest.approx(5.0)

    def test_forward_deterministic(self):
        rng = np.random.default_rng(42)
        spec = nn.MlpSpec(goal_dim=6, rest_dim=8, action_dim=3)
        net = nn.PolicyNet(spec)
        params = net.init_params(rng)
        obs = rng.normal(size=(5, spec.obs_dim))
        a, _, _ = net.mean_std(params, obs)
        b, _, _ = net.mean_std(params, obs)
        assert np.array_equal(a, b)

    def test_std_is_observation_independent(self):
        rng = np.random.default_rng(3)
        spec = nn.MlpSpec(goal_dim=4, rest_dim=4, action_dim=2)
        net = nn.PolicyNet(spec)
        params = net.init_params(rng)
        _, std1, _ = net.mean_std(params, rng.normal(size=(1, 8)))
        _, std2, _ = net.mean_std(params, rng.normal(size=(1, 8)))
        assert np.array_equal(std1, std2)
        assert np.allclose(std1, 0.3)

    def test_non_finite_activation_reports_layer(self):
        net, spec = tiny_policy()
        params = net.init_params(np.random.default_rng(0))
        params["genc0.W"][:] = np.inf
        with pytest.raises(FloatingPointError, match="genc0"):
            net.forward(params, np.array([[1.0]]))


class TestGaussianHead:
    def test_sample_zero_std_is_mean(self):
        rng = np.random.default_rng(0)
        mean = np.array([1.0, -2.0])
        a = nn.sample_action(mean, np.array([0.0, 0.0]), rng)
        assert np.allclose(a, mean)

    def test_sample_statistics(self):
        rng = np.random.default_rng(1)
        std = np.array([0.5, 2.0])
        draws = np.array([nn.sample_action(np.zeros(2), std, rng)
                          for _ in range(100_000)])
        assert np.all(np.abs(draws.std(axis=0) - std) / std < 0.03)

    def test_sample_reproducible(self):
        a = nn.sample_action(np.zeros(3), np.ones(3), np.random.default_rng(7))
        b = nn.sample_action(np.zeros(3), np.ones(3), np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_log_prob_at_mean(self):
        for d in (1, 3, 6):
            lp = nn.log_prob(np.zeros((1, d)), np.ones(d), np.zeros((1, d)))
            assert lp[0] == pytest.approx(-0.5 * d * math.log(2 * math.pi))

    def test_log_prob_sigma_shift(self):
        mean = np.zeros((1, 4))
        std = np.full(4, 0.7)
        base = nn.log_prob(mean, std, mean)[0]
        shifted = mean.copy()
        shifted[0, 2] += std[2]
        assert nn.log_prob(mean, std, shifted)[0] - base == pytest.approx(-0.5)

    def test_log_prob_gradients_fd(self):
        rng = np.random.default_rng(5)
        mean = rng.normal(size=(3, 2))
        log_std = rng.normal(size=2) * 0.3
        action = rng.normal(size=(3, 2))
        coeff = rng.normal(size=3)
        dmean, dlog_std = nn.log_prob_grads(mean, np.exp(log_std), action, coeff)
        eps = 1e-6

        def loss(m, ls):
            return float((coeff * nn.log_prob(m, np.exp(ls), action)).sum())

        for i in range(3):
            for j in range(2):
                m = mean.copy()
                m[i, j] += eps
                hi = loss(m, log_std)
                m[i, j] -= 2 * eps
                lo = loss(m, log_std)
                assert dmean[i, j] == pytest.approx((hi - lo) / (2 * eps), rel=1e-5, abs=1e-8)
        for j in range(2):
            ls = log_std.copy()
            ls[j] += eps
            hi = loss(mean, ls)
            ls[j] -= 2 * eps
            lo = loss(mean, ls)
            assert dlog_std[j] == pytest.approx((hi - lo) / (2 * eps), rel=1e-5, abs=1e-8)


class TestBackprop:
    def test_linear_net_analytic(self):
        # Single linear layer, squared loss: dL/dW = 2 x^T (xW + b - y)
        spec = nn.MlpSpec(goal_dim=1, rest_dim=2, action_dim=1,
                          goal_widths=(1, 1), trunk_widths=(1,))
        net = nn.ValueNet(spec)
        rng = np.random.default_rng(0)
        params = net.init_params(rng)
        obs = rng.normal(size=(6, 3))
        returns = rng.normal(size=6)
        v, cache = net.value(params, obs)
        grads = net.backward(params, cache, (2.0 * (v - returns))[:, None])
        numeric = fd_gradients(
            lambda p: float(((net.value(p, obs)[0] - returns) ** 2).sum()), params)
        assert max_rel_error(grads, numeric) < 1e-6

    def test_backward_without_cache_is_error(self):
        net, _ = tiny_policy()
        params = net.init_params(np.random.default_rng(0))
        with pytest.raises(RuntimeError, match="cache"):
            net.backward(params, None, np.zeros((1, 1)))

    def test_policy_gradcheck_sample_seeds(self):
        for seed in range(5):
            assert check_policy_gradients(seed) < 1e-4

    def test_value_gradcheck_sample_seeds(self):
        for seed in range(5):
            assert check_value_gradients(seed) < 1e-4


class TestAdam:
    def test_converges_on_quadratic(self):
        params = {"x": np.array([5.0, -3.0])}
        opt = nn.Adam(lr=0.1)
        for _ in range(500):
            opt.step(params, {"x": 2 * params["x"]})
        assert np.abs(params["x"]).max() < 1e-3

    def test_ignores_internal_keys(self):
        params = {"x": np.array([1.0])}
        opt = nn.Adam(lr=0.1)
        opt.step(params, {"x": np.array([0.0]), "_dobs_rest": np.array([9.0])})
        assert params["x"][0] == 1.0


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        spec = nn.MlpSpec(goal_dim=4, rest_dim=5, action_dim=2)
        pol = nn.PolicyNet(spec).init_params(rng)
        val = nn.ValueNet(spec).init_params(rng)
        norm = nn.RunningNorm.zeros(9)
        norm.update(rng.normal(size=(50, 9)))
        p = tmp_path / "ckpt_000001.bin"
        digest = save_checkpoint(p, pol, val, norm, {"obs_hash": "abc"})
        pol2, val2, norm2, meta = load_checkpoint(p)
        assert meta["obs_hash"] == "abc"
        assert meta["content_hash"] == digest
        for k in pol:
            assert np.array_equal(pol[k], pol2[k])
        for k in val:
            assert np.array_equal(val[k], val2[k])
        assert norm2.count == norm.count
        assert np.array_equal(norm2.mean, norm.mean)
        assert np.array_equal(norm2.m2, norm.m2)

    def test_params_hash_changes_with_content(self):
        a = {"w": np.array([1.0, 2.0])}
        b = {"w": np.array([1.0, 2.000001])}
        assert nn.params_hash(a) != nn.params_hash(b)
        assert nn.params_hash(a) == nn.params_hash({"w": np.array([1.0, 2.0])})
