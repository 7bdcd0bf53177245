import dataclasses
import math

import numpy as np
import pytest

import oracles
from magpo_lab import tabular as T
from magpo_lab.envs import ConfigError, EnvSpec, make_env
from magpo_lab.trainer import (AdvantageBatch, Collector, FixedGuider, Nets, TrainConfig, TrajectoryBatch,
                               checkpoint_steps, collect, effective_config, gae, guider_loss,
                               guider_loss_terms, init_train_state, learner_loss, learner_loss_terms,
                               make_minibatch, run_training, train_step, value_loss)
from magpo_lab.verify import random_minibatch
from magpo_lab import autodiff as ad

# double-sum oracle (tests/oracles.py) on rng(3) data, gamma .99, lambda .9
FROZEN_GAE = np.array([
    [1.7073876785517608, -0.11866451822861457],
    [0.19161584103741502, 3.0816336715957715],
    [0.6025012590946754, 3.7803029170337368],
    [-3.1566191372635184, 4.311186502128486],
    [-1.7989548098088077, 5.053164288412146],
])

# scalar loop oracles on the fixture below
FROZEN_GUIDER_LOSS = 1.26658387614926
FROZEN_LEARNER_LOSS = 2.8799669971799213


def _gae_inputs():
    rng = np.random.default_rng(3)
    r = rng.standard_normal((5, 2))
    v = rng.standard_normal((5, 2))
    d = np.zeros((5, 2))
    d[2, 0] = 1.0
    lv = rng.standard_normal(2)
    return r, v, d, lv


def _batch(r, v, d, lv):
    T_, E = r.shape
    z = np.zeros((T_, E, 1))
    return TrajectoryBatch(states=z, obs=z[..., None], actions=np.zeros((T_, E, 1), int),
                           guider_logp=z, learner_logp=z, rewards=r, values=v, dones=d, last_value=lv)


def test_gae_matches_frozen_double_sum():
    r, v, d, lv = _gae_inputs()
    adv = gae(_batch(r, v, d, lv), 0.99, 0.9).advantages
    np.testing.assert_allclose(adv, FROZEN_GAE, atol=1e-12)
    np.testing.assert_allclose(oracles.gae_double_sum(r, v, d, lv, 0.99, 0.9), FROZEN_GAE, atol=1e-12)


def test_gae_returns_and_normalization():
    r, v, d, lv = _gae_inputs()
    raw = gae(_batch(r, v, d, lv), 0.99, 0.9)
    np.testing.assert_allclose(raw.returns, raw.advantages + v)
    norm = gae(_batch(r, v, d, lv), 0.99, 0.9, normalize=True)
    assert abs(norm.advantages.mean()) < 1e-12
    assert abs(norm.advantages.std() - 1.0) < 1e-6
    np.testing.assert_array_equal(norm.returns, raw.returns)


def test_gae_lambda_zero_is_td_error():
    r, v, d, lv = _gae_inputs()
    adv = gae(_batch(r, v, d, lv), 0.9, 0.0).advantages
    nxt = np.vstack([v[1:], lv[None]])
    np.testing.assert_allclose(adv, r + 0.9 * nxt * (1 - d) - v, atol=1e-14)


@pytest.fixture
def loss_setup():
    cfg = TrainConfig(hidden=(8,), delta=1.5, aux_weight=2.0)
    spec = EnvSpec(num_agents=2, num_actions=3, obs_dim=4, horizon=5, state_dim=3)
    rng = np.random.default_rng(2024)
    nets = Nets.for_env(spec, cfg)
    params = {k: v.data + 0.8 * rng.standard_normal(v.data.size) for k, v in nets.init(rng).items()}
    mb = random_minibatch(nets, 16, 3, 4, rng)
    return cfg, nets, params, mb


def _floored(nets, params, mb, cfg):
    fl = math.log(cfg.prob_floor)
    lmu = np.maximum(nets.guider.log_probs(params["guider"], mb.g_in).value, fl)
    lpi = np.maximum(nets.learner.log_probs(params["learner"], mb.l_in).value, fl)
    return lmu, lpi


def test_guider_loss_matches_oracle(loss_setup):
    cfg, nets, params, mb = loss_setup
    val, stats = guider_loss(mb, params["guider"], params["learner"], nets, cfg)
    assert abs(float(val.value) - FROZEN_GUIDER_LOSS) < 1e-10
    lmu, lpi = _floored(nets, params, mb, cfg)
    live = oracles.guider_loss_scalar(lmu, lpi, mb.actions, mb.old_logp, mb.adv, cfg.clip_eps, cfg.delta)
    assert abs(float(val.value) - live) < 1e-10
    # the fixture exercises both masked and unmasked terms
    assert 0.0 < stats["mask_rate"] < 1.0


def test_learner_loss_matches_oracle(loss_setup):
    cfg, nets, params, mb = loss_setup
    val, _ = learner_loss(mb, params["learner"], params["guider"], nets, cfg)
    assert abs(float(val.value) - FROZEN_LEARNER_LOSS) < 1e-10
    lmu, lpi = _floored(nets, params, mb, cfg)
    live = oracles.learner_loss_scalar(lpi, lmu, mb.actions, mb.old_logp, mb.adv, cfg.clip_eps, cfg.aux_weight)
    assert abs(float(val.value) - live) < 1e-10


def test_double_clip_stays_in_range(loss_setup):
    cfg, nets, params, mb = loss_setup
    _, stats = guider_loss(mb, params["guider"], params["learner"], nets, cfg)
    dc = stats["double_clip"]
    assert dc.min() >= 1 - cfg.clip_eps - 1e-15 and dc.max() <= 1 + cfg.clip_eps + 1e-15


def test_mask_is_zero_inside_band():
    # guider == learner everywhere: ratio 1, mask 0, KL term 0
    cfg = TrainConfig(delta=1.5)
    rng = np.random.default_rng(0)
    B, n, A = 10, 2, 3
    logp = np.log(rng.dirichlet(np.ones(A), size=(B, n)))
    actions = rng.integers(0, A, size=(B, n))
    old = np.take_along_axis(logp, actions[..., None], axis=2)[..., 0]
    mb = type("MB", (), dict(actions=actions, old_logp=old, adv=rng.standard_normal(B)))
    loss, stats = guider_loss_terms(ad.leaf(logp), logp, mb, cfg)
    assert stats["mask_rate"] == 0.0
    assert stats["kl_guider_learner"] == pytest.approx(0.0, abs=1e-15)
    # with all ratios at 1 the surrogate is the advantage itself
    assert float(loss.value) == pytest.approx(-mb.adv.mean(), abs=1e-14)


def test_ctds_degenerates_to_plain_clipped_surrogate(loss_setup):
    cfg, nets, params, mb = loss_setup
    ctds = effective_config("CTDS", cfg)
    assert ctds.delta == math.inf and ctds.aux_weight == 0.0
    lmu, lpi = _floored(nets, params, mb, cfg)
    loss, stats = guider_loss_terms(ad.leaf(lmu), lpi, mb, ctds)
    assert stats["mask_rate"] == 0.0
    la = np.take_along_axis(lmu, mb.actions[..., None], axis=2)[..., 0]
    r = np.exp(la - mb.old_logp)
    A = mb.adv[:, None]
    plain = -np.mean(np.minimum(r * A, np.clip(r, 0.8, 1.2) * A))
    assert float(loss.value) == pytest.approx(plain, abs=1e-12)
    # learner side is pure distillation
    l_loss, l_stats = learner_loss_terms(ad.leaf(lpi), lmu, mb, ctds)
    assert float(l_loss.value) == pytest.approx(l_stats["kl_learner_guider"], abs=1e-12)


def test_value_loss_trivial_cases(loss_setup):
    cfg, nets, params, mb = loss_setup
    v = nets.critic.value(params["critic"], mb.states).value
    for c in (0.0, 0.7, -2.0):
        mb.returns = v + c
        assert float(value_loss(mb, params["critic"], nets, cfg).value) == pytest.approx(cfg.value_coef * c * c,
                                                                                         abs=1e-12)


def test_loss_gradients_match_finite_differences(loss_setup):
    cfg, nets, params, mb = loss_setup
    rng = np.random.default_rng(5)
    for key, fn in [("guider", lambda p: guider_loss(mb, p, params["learner"], nets, cfg)[0]),
                    ("learner", lambda p: learner_loss(mb, p, params["guider"], nets, cfg)[0]),
                    ("critic", lambda p: value_loss(mb, p, nets, cfg))]:
        x = params[key].copy()
        _, g = ad.value_and_grad(fn, x)
        for i in rng.choice(x.size, 20, replace=False):
            xp, xm = x.copy(), x.copy()
            xp[i] += 1e-5
            xm[i] -= 1e-5
            fd = (float(fn(xp).value) - float(fn(xm).value)) / 2e-5
            assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), abs(g[i]), 1e-6), (key, i)


def test_collect_shapes_and_logps():
    cfg = TrainConfig(hidden=(16,), rollout_length=128, num_envs=8)
    col = Collector("CoordSum-3x10", cfg)
    nets = Nets.for_env(col.env.spec, cfg)
    params = {k: v.data for k, v in nets.init(np.random.default_rng(0)).items()}
    b = collect(col, nets, params, cfg)
    assert b.actions.shape == (128, 8, 3)
    assert b.states.shape[:2] == (128, 8) and b.obs.shape[:3] == (128, 8, 3)
    assert b.rewards.shape == b.values.shape == b.dones.shape == (128, 8)
    assert b.last_value.shape == (8,)
    assert np.all(b.guider_logp <= 0) and np.all(b.guider_logp >= math.log(cfg.prob_floor))
    # learner-driven rollout records the learner's own log-probs as behaviour
    b2 = collect(col, nets, params, cfg, behaviour="learner")
    np.testing.assert_array_equal(b2.guider_logp, b2.learner_logp)


def test_deterministic_fixed_guider_is_followed():
    A = 5
    c0 = np.zeros((2, A)); c0[:, 4] = 1
    c1 = np.zeros((2, A, A)); c1[..., 2] = 1
    c2 = np.zeros((2, A, A, A)); c2[..., 1] = 1
    fixed = FixedGuider(T.TabularGuider([c0, c1, c2], (0, 1, 2)), 2)
    cfg = TrainConfig(hidden=(8,), rollout_length=4, num_envs=3)
    col = Collector("Didactic-3x5-t10", cfg)
    nets = Nets.for_env(col.env.spec, cfg)
    params = {k: v.data for k, v in nets.init(np.random.default_rng(0)).items()}
    b = collect(col, nets, params, cfg, fixed_guider=fixed)
    assert np.all(b.actions == np.array([4, 2, 1]))
    np.testing.assert_array_equal(b.guider_logp, 0.0)
    np.testing.assert_array_equal(b.rewards, 0.0)  # 4 + 2 + 1 != 10


def test_ordering_permutes_actions_back():
    cfg = TrainConfig(hidden=(8,), rollout_length=2, num_envs=2, ordering=(2, 0, 1))
    col = Collector("CoordSum-3x4", cfg)
    nets = Nets.for_env(col.env.spec, cfg)
    assert nets.ordering == (2, 0, 1)
    # agent ids in the learner input follow the agent, not the position
    x = nets.learner_x(np.zeros((1, 3, col.env.spec.obs_dim)))
    ids = x[0, :, -3:]
    np.testing.assert_array_equal(np.argmax(ids, axis=1), [2, 0, 1])
    with pytest.raises(ConfigError):
        Nets.for_env(col.env.spec, dataclasses.replace(cfg, ordering=(0, 0, 1)))


def test_zero_lr_leaves_params_unchanged():
    cfg = TrainConfig(hidden=(8,), rollout_length=8, num_envs=2, lr=0.0, ppo_epochs=2)
    col = Collector("CoordSum-3x4", cfg)
    nets = Nets.for_env(col.env.spec, cfg)
    state = init_train_state(nets, cfg)
    before = {k: v.copy() for k, v in state.params.items()}
    batch = collect(col, nets, state.params, cfg)
    state, metrics = train_step(state, batch, nets, cfg)
    for k in before:
        np.testing.assert_array_equal(state.params[k], before[k])
    assert {"guider_loss", "learner_loss", "value_loss", "mask_rate"} <= set(metrics)


def test_ippo_and_ctce_train_their_nets_only():
    cfg = TrainConfig(hidden=(8,), rollout_length=8, num_envs=2)
    for alg, frozen in (("IPPO", "guider"), ("CTCE", "learner")):
        col = Collector("CoordSum-3x4", cfg)
        nets = Nets.for_env(col.env.spec, cfg)
        state = init_train_state(nets, cfg)
        before = state.params[frozen].copy()
        batch = collect(col, nets, state.params, cfg, behaviour="learner" if alg == "IPPO" else "guider")
        state, _ = train_step(state, batch, nets, cfg, alg)
        np.testing.assert_array_equal(state.params[frozen], before)


def test_checkpoint_steps():
    assert checkpoint_steps(0, 10) == [0]
    assert checkpoint_steps(100, 3) == [0, 50, 100]


def test_zero_budget_gives_single_checkpoint():
    res = run_training("MAGPO", "CoordSum-3x4", TrainConfig(hidden=(8,), eval_episodes=4), 0, 5)
    assert res.steps == [0] and len(res.returns) == 1 and len(res.returns[0]) == 4


def test_unknown_algorithm():
    with pytest.raises(ConfigError):
        run_training("PPO", "CoordSum-3x4", TrainConfig(), 10)


def test_training_is_deterministic(tmp_path):
    cfg = TrainConfig(hidden=(8,), rollout_length=16, num_envs=2, eval_episodes=4, seed=3)
    a = run_training("MAGPO", "CoordSum-3x4", cfg, 96, 3, out_dir=tmp_path / "a")
    b = run_training("MAGPO", "CoordSum-3x4", cfg, 96, 3, out_dir=tmp_path / "b")
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
    assert (tmp_path / "a/params.bin").read_bytes() == (tmp_path / "b/params.bin").read_bytes()
    c = run_training("MAGPO", "CoordSum-3x4", dataclasses.replace(cfg, seed=4), 96, 3)
    assert not np.array_equal(a.params["learner"].data, c.params["learner"].data)
    assert a.steps == [0, 48, 96]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(delta=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1e-3})
    assert TrainConfig.from_dict({"prob_floor": "1e-08"}).prob_floor == 1e-8


def _exact_success(res, cfg):
    env = make_env("Didactic-3x5-t10", 1)
    r = env.reset(seed=0)
    nets = Nets.for_env(env.spec, cfg)
    p = nets.learner.probs(res.params["learner"].data, nets.learner_x(r.obs))[0]
    from magpo_lab.envs import didactic_game
    return T.success_probability(didactic_game(10), T.joint_from_factors(p[:, None, :].repeat(2, axis=1)))


@pytest.mark.slow
def test_neural_magpo_beats_distillation_on_didactic():
    cfg = TrainConfig(seed=0)
    m = run_training("MAGPO", "Didactic-3x5-t10", cfg, 20000, 2)
    c = run_training("CTDS", "Didactic-3x5-t10", cfg, 20000, 2, fixed_guider=FixedGuider(T.didactic_teacher(), 2))
    sm, sc = _exact_success(m, cfg), _exact_success(c, cfg)
    assert sc == pytest.approx(0.5, abs=0.05)
    assert sm > sc + 0.2
