import numpy as np
import pytest

from mimicforge import assets, trainer
from mimicforge.control import ControlConfig
from mimicforge.episode import TERMINAL_REASONS, EpisodeRunner
from mimicforge.sim import SimParams, Simulator
from mimicforge.skeleton import default_link_map


@pytest.fixture(scope="module")
def parts():
    agent = assets.load_bundled_skeleton("biped9")
    actor = assets.load_bundled_skeleton("actor9")
    clip = assets.make_balance_clip(actor, duration=3.0)
    link_map = default_link_map(agent, actor)
    setup = trainer.TrainSetup(
        agent=agent, actor=actor, clip=clip, link_map=link_map,
        sim=SimParams(), control=ControlConfig(),
        randomization=trainer.RandomizationConfig(),
        train=trainer.TrainConfig(seed=0),
    )
    return setup


def make_env(setup, rng_seed=0, sensor_noise=True):
    obs_spec = trainer._setup_obs_spec(setup)
    sim = Simulator(setup.agent, trainer._nominal_params(setup))
    return EpisodeRunner(
        sim, setup.clip, setup.bound_map(), setup.control, setup.weights(),
        obs_spec, np.random.default_rng(rng_seed), sensor_noise=sensor_noise,
    ), obs_spec


class TestEpisode:
    def test_reset_obs_width(self, parts):
        env, spec = make_env(parts)
        obs = env.reset()
        assert obs.shape == (spec.width,)
        assert np.all(np.isfinite(obs))

    def test_feedback_closure(self, parts):
        # The observation at tick t carries exactly the action emitted at
        # tick t-1 and the actuator inputs it produced.
        env, spec = make_env(parts, sensor_noise=False)
        env.reset()
        rng = np.random.default_rng(1)
        for _ in range(5):
            action = 0.1 * rng.normal(size=12)
            obs, _, _, _ = env.step(action)
            got_action = obs[spec.block_slice("prev_action")]
            got_act = obs[spec.block_slice("prev_actuator")]
            assert np.array_equal(got_action, action)
            assert np.array_equal(got_act, env.actuator.integrated_positions)

    def test_reward_decomposition_identity(self, parts):
        env, _ = make_env(parts)
        env.reset()
        rng = np.random.default_rng(2)
        for _ in range(100):
            _, total, done, info = env.step(0.05 * rng.normal(size=12))
            b = info.breakdown
            expected = b.r_link - b.r_collision + b.r_ground - b.r_limit
            if info.reason == "fall":
                expected -= env.weights.fall_penalty
            assert total == pytest.approx(expected, abs=1e-12)
            if done:
                env.reset()

    def test_terminates_at_clip_end(self, parts):
        env, _ = make_env(parts, sensor_noise=False)
        env.reset()
        ticks = 0
        while True:
            _, _, done, info = env.step(np.zeros(12))
            ticks += 1
            if done:
                break
        assert info.reason == "clip_end"
        assert ticks == int(3.0 * 64)

    def test_divergence_on_forced_drift(self, parts):
        env, _ = make_env(parts)
        env.reset()
        for _ in range(500):
            _, _, done, info = env.step(np.full(12, 3.0))  # hard constant drive
            if done:
                break
        assert done
        assert info.reason in TERMINAL_REASONS

    def test_stepping_after_done_raises(self, parts):
        env, _ = make_env(parts)
        env.reset()
        for _ in range(500):
            _, _, done, _ = env.step(np.full(12, 3.0))
            if done:
                break
        with pytest.raises(RuntimeError, match="reset"):
            env.step(np.zeros(12))

    def test_restart_from_snapshot_resets_integrator(self, parts):
        env, _ = make_env(parts)
        env.reset()
        snap = None
        for _ in range(50):
            _, _, done, info = env.step(np.zeros(12))
            if info.state is not None:
                snap = info.state
        assert snap is not None
        env.reset(start_frame=7, start_state=snap)
        assert np.array_equal(env.actuator.integrated_positions, env.state.joint_q)
        assert np.array_equal(env.state.backlash_anchor, env.state.joint_q)
        assert env.state.time == 0.0

    def test_start_pose_candidates_only_below_threshold(self, parts):
        env, _ = make_env(parts)
        env.reset()
        for _ in range(30):
            _, _, done, info = env.step(np.zeros(12))
            if info.state is not None:
                assert info.below_threshold
                assert float(info.dists.max()) < env.start_pose_threshold
            if done:
                break
