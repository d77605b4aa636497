import math

import numpy as np
import pytest

from mimicforge import assets, nn, trainer
from mimicforge.control import ControlConfig
from mimicforge.sim import SimParams
from mimicforge.skeleton import default_link_map


def brute_force_gae(rewards, values, gamma, lam, bootstrap):
    """Double-loop oracle: exponentially weighted n-step advantages."""
    T = len(rewards)
    vals = list(values) + [bootstrap]
    adv = np.zeros(T)
    for t in range(T):
        acc = 0.0
        for k in range(1, T - t + 1):
            a_k = -vals[t] + sum(gamma**i * rewards[t + i] for i in range(k))
            a_k += gamma**k * vals[t + k]
            weight = (1 - lam) * lam ** (k - 1) if t + k < T else lam ** (k - 1)
            acc += weight * a_k
        adv[t] = acc
    return adv


class TestGAE:
    def test_lambda_zero_is_one_step_td(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=6)
        v = rng.normal(size=6)
        dones = np.zeros(6, bool)
        dones[-1] = True
        boot = 0.7
        adv, ret = trainer.compute_gae(r, v, dones, 0.9, 0.0, bootstrap=boot)
        expected = r + 0.9 * np.append(v[1:], boot) - v
        assert np.allclose(adv, expected, atol=1e-12)
        assert np.allclose(ret, adv + v)

    def test_lambda_one_zero_values_is_reward_to_go(self):
        r = np.array([1.0, 2.0, 3.0])
        v = np.zeros(3)
        dones = np.array([False, False, True])
        adv, _ = trainer.compute_gae(r, v, dones, 0.5, 1.0)
        expected = np.array([1 + 0.5 * 2 + 0.25 * 3, 2 + 0.5 * 3, 3.0])
        assert np.allclose(adv, expected, atol=1e-12)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(1000):
            T = int(rng.integers(1, 9))
            r = rng.normal(size=T)
            v = rng.normal(size=T)
            gamma = rng.uniform(0.5, 0.999)
            lam = rng.uniform(0.0, 1.0)
            terminal = bool(rng.integers(2))
            boot = 0.0 if terminal else float(rng.normal())
            dones = np.zeros(T, bool)
            dones[-1] = True
            adv, ret = trainer.compute_gae(r, v, dones, gamma, lam, bootstrap=boot)
            expected = brute_force_gae(r, v, gamma, lam, boot)
            assert np.abs(adv - expected).max() < 1e-10
            assert np.allclose(ret, adv + v, atol=1e-12)

    def test_interior_done_rejected(self):
        dones = np.array([False, True, False])
        with pytest.raises(ValueError, match="interior"):
            trainer.compute_gae(np.zeros(3), np.zeros(3), dones, 0.9, 0.9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            trainer.compute_gae(np.zeros(3), np.zeros(2), np.zeros(3, bool), 0.9, 0.9)


class TestRandomizeEnv:
    def setup_method(self):
        self.rcfg = trainer.RandomizationConfig()
        self.base = SimParams()

    def test_iteration_zero_backlash_is_zero(self):
        p = trainer.randomize_env(self.base, self.rcfg, 0,
                                  np.random.default_rng(0), 12)
        assert np.all(np.asarray(p.backlash_halfwidth) == 0.0)

    def test_ramp_reaches_five_degrees(self):
        rng = np.random.default_rng(0)
        tops = []
        for _ in range(200):
            p = trainer.randomize_env(self.base, self.rcfg,
                                      self.rcfg.backlash_ramp_iters, rng, 12)
            tops.append(np.max(p.backlash_halfwidth))
        assert max(tops) <= math.radians(5.0) + 1e-12
        assert max(tops) > math.radians(4.5)  # upper bound actually reachable

    def test_half_ramp(self):
        rng = np.random.default_rng(1)
        tops = [np.max(trainer.randomize_env(self.base, self.rcfg, 50, rng, 12)
                       .backlash_halfwidth) for _ in range(200)]
        assert max(tops) <= math.radians(2.5) + 1e-12

    def test_friction_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = trainer.randomize_env(self.base, self.rcfg, 10, rng, 12)
            assert 0.05 <= p.friction_coef <= 0.5
            assert 3e3 <= p.youngs_modulus <= 3e5

    def test_youngs_log_uniform_hits_soft_decade(self):
        rng = np.random.default_rng(3)
        draws = [trainer.randomize_env(self.base, self.rcfg, 10, rng, 12)
                 .youngs_modulus for _ in range(500)]
        soft = sum(1 for e in draws if e < 3e4)
        assert 0.3 < soft / len(draws) < 0.7  # log-uniform: half below midpoint

    def test_all_disabled_uses_nominals(self):
        rcfg = trainer.RandomizationConfig(backlash=False, friction=False,
                                           youngs=False)
        p = trainer.randomize_env(self.base, rcfg, 100,
                                  np.random.default_rng(0), 12)
        assert p.friction_coef == 0.25
        assert p.youngs_modulus == 3e4
        assert float(np.max(p.backlash_halfwidth)) == 0.0

    def test_scalar_backlash_mode(self):
        rcfg = trainer.RandomizationConfig(per_joint_backlash=False)
        p = trainer.randomize_env(SimParams(), rcfg, 100,
                                  np.random.default_rng(0), 12)
        assert np.isscalar(p.backlash_halfwidth) or p.backlash_halfwidth.ndim == 0

    def test_negative_iteration_rejected(self):
        with pytest.raises(ValueError):
            trainer.randomize_env(self.base, self.rcfg, -1,
                                  np.random.default_rng(0), 12)


class TestStartPoseBuffer:
    def make_state(self, tag: float):
        from mimicforge.sim import SimState
        return SimState(
            base_pos=np.array([tag, 0.0, 0.1]), base_quat=np.array([1.0, 0, 0, 0]),
            base_lin_vel=np.zeros(3), base_ang_vel=np.zeros(3),
            joint_q=np.zeros(2), joint_qd=np.zeros(2),
            backlash_anchor=np.zeros(2), contact_force=np.zeros((0, 3)),
            penetration=np.zeros(0), torso_acc=np.zeros(3),
            link_quat=np.zeros((1, 4)), link_omega=np.zeros((1, 3)))

    def test_stores_new_frames(self):
        buf = trainer.StartPoseBuffer()
        assert buf.consider(3, 0.5, self.make_state(1.0))
        assert len(buf) == 1

    def test_improvement_replaces(self):
        buf = trainer.StartPoseBuffer()
        buf.consider(3, 0.5, self.make_state(1.0))
        assert buf.consider(3, 0.3, self.make_state(2.0))
        assert buf.entries[3][0] == 0.3
        assert buf.entries[3][1].base_pos[0] == 2.0

    def test_worse_sum_ignored(self):
        buf = trainer.StartPoseBuffer()
        buf.consider(3, 0.5, self.make_state(1.0))
        assert not buf.consider(3, 0.9, self.make_state(2.0))
        assert buf.entries[3][1].base_pos[0] == 1.0

    def test_sums_nonincreasing_under_updates(self):
        rng = np.random.default_rng(0)
        buf = trainer.StartPoseBuffer()
        history = {}
        for _ in range(500):
            frame = int(rng.integers(10))
            s = float(rng.uniform(0, 1))
            buf.consider(frame, s, self.make_state(s))
            prev = history.get(frame, np.inf)
            assert buf.entries[frame][0] <= prev
            history[frame] = buf.entries[frame][0]

    def test_pick_start_default(self):
        buf = trainer.StartPoseBuffer()
        frame, state = trainer.pick_start(buf, None, 1.0, np.random.default_rng(0))
        assert frame == 0 and state is None

    def test_pick_start_zero_prob(self):
        buf = trainer.StartPoseBuffer()
        buf.consider(5, 0.1, self.make_state(1.0))
        for _ in range(20):
            frame, state = trainer.pick_start(buf, None, 0.0,
                                              np.random.default_rng(0))
            assert frame == 0 and state is None

    def test_pick_start_singleton(self):
        buf = trainer.StartPoseBuffer()
        buf.consider(5, 0.1, self.make_state(7.0))
        for i in range(10):
            frame, state = trainer.pick_start(buf, None, 1.0,
                                              np.random.default_rng(i))
            assert frame == 5
            assert state.base_pos[0] == 7.0


@pytest.fixture(scope="module")
def balance_setup():
    agent = assets.load_bundled_skeleton("biped9")
    actor = assets.load_bundled_skeleton("actor9")
    clip = assets.make_balance_clip(actor, duration=2.0)
    return trainer.TrainSetup(
        agent=agent, actor=actor, clip=clip,
        link_map=default_link_map(agent, actor),
        sim=SimParams(), control=ControlConfig(),
        randomization=trainer.RandomizationConfig(),
        train=trainer.TrainConfig(iterations=2, steps_per_iter=192, workers=2,
                                  seed=11, minibatch=64, epochs=2),
    )


def collect_once(setup, explore_prob=None, steps=128, seed=3):
    cfg = setup.train
    if explore_prob is not None:
        from dataclasses import replace
        cfg = replace(cfg, explore_prob=explore_prob)
    obs_spec = trainer._setup_obs_spec(setup)
    spec = nn.MlpSpec(goal_dim=obs_spec.goal_width,
                      rest_dim=obs_spec.width - obs_spec.goal_width,
                      action_dim=setup.agent.dof_count)
    rng = np.random.default_rng(0)
    bundle = trainer.PolicyBundle(
        spec=spec, policy=nn.PolicyNet(spec).init_params(rng),
        value=nn.ValueNet(spec).init_params(rng),
        normalizer=nn.RunningNorm.zeros(spec.obs_dim))
    factory = trainer._make_env_factory(setup, trainer._nominal_params(setup),
                                        obs_spec, setup.weights())
    batch = trainer.collect_rollouts(
        bundle, factory, cfg, np.random.SeedSequence((seed, 0)), steps)
    return bundle, batch


class TestCollect:
    def test_explore_prob_zero_all_false(self, balance_setup):
        _, batch = collect_once(balance_setup, explore_prob=0.0)
        assert not batch.explored.any()

    def test_explore_prob_one_all_true(self, balance_setup):
        _, batch = collect_once(balance_setup, explore_prob=1.0)
        assert batch.explored.all()

    def test_explored_fraction_binomial(self, balance_setup):
        _, batch = collect_once(balance_setup, explore_prob=0.3, steps=6000)
        frac = batch.explored.mean()
        assert 0.27 <= frac <= 0.33

    def test_no_transition_after_done(self, balance_setup):
        _, batch = collect_once(balance_setup, steps=256)
        for sl in batch.episode_slices():
            dones = batch.dones[sl]
            assert dones[-1]
            assert not dones[:-1].any()

    def test_step_budget_respected(self, balance_setup):
        _, batch = collect_once(balance_setup, steps=100)
        assert batch.size == 100

    def test_transitions_view(self, balance_setup):
        _, batch = collect_once(balance_setup, steps=64)
        ts = batch.transitions()
        assert len(ts) == 64
        assert ts[0].obs.shape == batch.obs[0].shape
        assert isinstance(ts[0].explored, bool)

    def test_deterministic_across_worker_split(self, balance_setup):
        # Same logical workers, inline: quotas and seeds fully determine data.
        setup = balance_setup
        args1 = [(setup, 0, w, 96, trainer._nominal_params(setup),)
                 for w in range(2)]
        obs_spec = trainer._setup_obs_spec(setup)
        spec = nn.MlpSpec(goal_dim=obs_spec.goal_width,
                          rest_dim=obs_spec.width - obs_spec.goal_width,
                          action_dim=setup.agent.dof_count)
        rng = np.random.default_rng(0)
        bundle = trainer.PolicyBundle(
            spec=spec, policy=nn.PolicyNet(spec).init_params(rng),
            value=nn.ValueNet(spec).init_params(rng),
            normalizer=nn.RunningNorm.zeros(spec.obs_dim))

        def run_once():
            parts = []
            for w in range(2):
                args = (setup, 0, w, 96, trainer._nominal_params(setup),
                        bundle.spec, bundle.policy, bundle.value,
                        bundle.normalizer, [])
                parts.append(trainer._collect_worker(args))
            return trainer.RolloutBatch.concatenate(parts)

        a, b = run_once(), run_once()
        assert np.array_equal(a.obs, b.obs)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)


class TestPPOUpdate:
    def make_bundle(self, obs_dim=6, action_dim=2, seed=0):
        spec = nn.MlpSpec(goal_dim=3, rest_dim=obs_dim - 3, action_dim=action_dim,
                          goal_widths=(8, 6), trunk_widths=(8, 8, 8))
        rng = np.random.default_rng(seed)
        return trainer.PolicyBundle(
            spec=spec, policy=nn.PolicyNet(spec).init_params(rng),
            value=nn.ValueNet(spec).init_params(rng),
            normalizer=nn.RunningNorm.zeros(obs_dim))

    def make_batch(self, bundle, n=32, explored=None, rewards=None, seed=1):
        rng = np.random.default_rng(seed)
        pnet, _ = bundle.nets()
        obs = rng.normal(size=(n, bundle.spec.obs_dim))
        mean, std, _ = pnet.mean_std(bundle.policy, obs)
        actions = mean + std * rng.standard_normal(mean.shape)
        logp = nn.log_prob(mean, std, actions)
        if explored is None:
            explored = np.ones(n, bool)
        if rewards is None:
            rewards = rng.normal(size=n)
        return trainer.RolloutBatch(
            obs=obs, actions=actions, log_probs=logp, rewards=rewards,
            values=np.zeros(n), dones=np.ones(n, bool),
            explored=np.asarray(explored, bool),
            episode_lengths=[1] * n, episode_reasons=["fall"] * n,
            episode_returns=list(np.asarray(rewards, float)),
            episode_seconds=[0.1] * n, bootstraps=[0.0] * n,
            raw_stats=nn.RunningNorm.zeros(bundle.spec.obs_dim),
            start_candidates=[])

    def test_identity_params_ratio_one(self):
        bundle = self.make_bundle()
        batch = self.make_batch(bundle)
        cfg = trainer.TrainConfig(epochs=0, seed=0)  # no updates: just stats
        stats = trainer.ppo_update(bundle, (nn.Adam(0), nn.Adam(0)), batch, cfg,
                                   np.random.default_rng(0))
        assert stats["kl"] == pytest.approx(0.0, abs=1e-12)
        assert stats["clip_fraction"] == 0.0

    def test_zero_advantage_leaves_policy_unchanged(self):
        bundle = self.make_bundle()
        batch = self.make_batch(bundle, rewards=np.zeros(32))
        before = {k: v.copy() for k, v in bundle.policy.items()}
        cfg = trainer.TrainConfig(epochs=3, minibatch=16, seed=0)
        trainer.ppo_update(bundle, (nn.Adam(1e-2), nn.Adam(0.0)), batch, cfg,
                           np.random.default_rng(0))
        # All advantages equal (zero) -> normalized to zero -> no policy grad.
        for k in before:
            assert np.allclose(bundle.policy[k], before[k])

    def test_hand_built_two_transition_loss(self):
        bundle = self.make_bundle()
        batch = self.make_batch(bundle, n=2, rewards=np.array([1.0, -1.0]))
        cfg = trainer.TrainConfig(epochs=0, gamma=0.99, lam=0.95, seed=0)
        stats = trainer.ppo_update(bundle, (nn.Adam(0), nn.Adam(0)), batch, cfg,
                                   np.random.default_rng(0))
        # Single-step terminal episodes, V=0: adv = rewards; normalized to ±1.
        # Ratio is exactly 1, so the surrogate is -mean(adv_n) = 0.
        assert stats["policy_loss"] == pytest.approx(0.0, abs=1e-9)
        v, _ = bundle.nets()[1].value(bundle.value, batch.obs)
        expected_vloss = float(np.mean((v - batch.rewards) ** 2))
        assert stats["value_loss"] == pytest.approx(expected_vloss, rel=1e-9)

    def test_policy_loss_ignores_non_explored(self):
        bundle = self.make_bundle()
        explored = np.zeros(32, bool)
        batch = self.make_batch(bundle, explored=explored)
        before = {k: v.copy() for k, v in bundle.policy.items()}
        cfg = trainer.TrainConfig(epochs=2, minibatch=16, seed=0)
        trainer.ppo_update(bundle, (nn.Adam(1e-2), nn.Adam(1e-3)), batch, cfg,
                           np.random.default_rng(0))
        for k in before:
            assert np.array_equal(bundle.policy[k], before[k])

    def test_filter_noop_when_all_explored(self):
        # Removing non-explored transitions changes nothing when all explored.
        bundle_a = self.make_bundle(seed=5)
        bundle_b = self.make_bundle(seed=5)
        batch = self.make_batch(bundle_a)
        assert batch.explored.all()
        cfg = trainer.TrainConfig(epochs=2, minibatch=16, seed=0)
        trainer.ppo_update(bundle_a, (nn.Adam(1e-3), nn.Adam(1e-3)), batch, cfg,
                           np.random.default_rng(7))
        trainer.ppo_update(bundle_b, (nn.Adam(1e-3), nn.Adam(1e-3)), batch, cfg,
                           np.random.default_rng(7))
        for k in bundle_a.policy:
            assert np.array_equal(bundle_a.policy[k], bundle_b.policy[k])

    def test_nonfinite_restores_params(self):
        bundle = self.make_bundle()
        batch = self.make_batch(bundle)
        batch.rewards[0] = np.nan
        before_p = {k: v.copy() for k, v in bundle.policy.items()}
        cfg = trainer.TrainConfig(epochs=1, minibatch=16, seed=0)
        stats = trainer.ppo_update(bundle, (nn.Adam(1e-3), nn.Adam(1e-3)),
                                   batch, cfg, np.random.default_rng(0))
        assert stats["aborted"]
        for k in before_p:
            assert np.array_equal(bundle.policy[k], before_p[k])


class TestRunTraining:
    def test_zero_iterations_header_and_initial_checkpoint(self, balance_setup,
                                                           tmp_path):
        from dataclasses import replace
        setup = replace(balance_setup,
                        train=replace(balance_setup.train, iterations=0))
        res = trainer.run_training(setup, tmp_path / "run")
        lines = res.metrics_path.read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("iteration,return,")
        assert (tmp_path / "run" / "ckpt_000000.bin").exists()

    def test_two_iterations_deterministic(self, balance_setup, tmp_path):
        r1 = trainer.run_training(balance_setup, tmp_path / "a")
        r2 = trainer.run_training(balance_setup, tmp_path / "b")
        assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()
        a = (tmp_path / "a" / "ckpt_000002.bin").read_bytes()
        b = (tmp_path / "b" / "ckpt_000002.bin").read_bytes()
        assert a == b

    def test_parallel_jobs_match_sequential(self, balance_setup, tmp_path):
        r1 = trainer.run_training(balance_setup, tmp_path / "seq", jobs=1)
        r2 = trainer.run_training(balance_setup, tmp_path / "par", jobs=2)
        assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()
