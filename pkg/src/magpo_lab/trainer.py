"""Practical guided policy optimization with neural policies, plus the CTDS,
independent-PPO and joint-policy (CTCE) baselines.

Data layout: every per-agent array is stored in *position* order, i.e.
column ``j`` belongs to agent ``ordering[j]``, the j-th agent to act in the
guider's autoregressive chain.  Joint actions are permuted back to agent
order only when they are handed to the environment.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from . import autodiff as ad
from .envs import ConfigError, make_env
from .nets import (Adam, ParamVector, PolicyNet, ValueNet, clip_grad_norm, guider_input_dim,
                   guider_inputs, guider_position_input, learner_input_dim, learner_inputs,
                   save_checkpoint)

ALGORITHMS = ("MAGPO", "CTDS", "IPPO", "CTCE")

STREAMS = {"env": 0, "init": 1, "shuffle": 2, "action": 3, "eval": 4, "bootstrap": 5}


def stream(seed, name):
    """Independent generator for one named use of randomness."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.9
    rollout_length: int = 128
    ppo_epochs: int = 4
    num_minibatches: int = 4
    clip_eps: float = 0.2
    delta: float = 1.5
    aux_weight: float = 1.0
    lr: float = 5e-4
    value_coef: float = 0.1
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    num_envs: int = 8
    seed: int = 0
    ordering: tuple | None = None
    hidden: tuple = (64, 64)
    normalize_advantage: bool = True
    prob_floor: float = 1e-8
    eval_episodes: int = 32
    eval_greedy: bool = False
    share_ids: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if not self.delta > 1.0:
            raise ConfigError("delta must exceed 1")
        if self.clip_eps <= 0 or self.lr < 0 or self.aux_weight < 0 or self.entropy_coef < 0:
            raise ConfigError("clip_eps must be positive; lr, aux_weight, entropy_coef nonnegative")
        for name in ("rollout_length", "ppo_epochs", "num_minibatches", "num_envs", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.ordering is not None:
            self.ordering = tuple(int(i) for i in self.ordering)
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        for f in dataclasses.fields(cls):
            # YAML 1.1 reads forms such as 1e-08 as strings
            if f.type == "float" and isinstance(d.get(f.name), str):
                try:
                    d[f.name] = float(d[f.name])
                except ValueError as exc:
                    raise ConfigError(f"train.{f.name}: {d[f.name]!r} is not a number") from exc
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["ordering"] = None if self.ordering is None else list(self.ordering)
        if math.isinf(self.delta):
            d["delta"] = "inf"
        return d


def effective_config(algorithm, cfg: TrainConfig) -> TrainConfig:
    """CTDS and CTCE drop the double clip; CTDS also drops the RL aux term."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    if algorithm == "CTDS":
        return dataclasses.replace(cfg, delta=math.inf, aux_weight=0.0)
    if algorithm == "CTCE":
        return dataclasses.replace(cfg, delta=math.inf)
    return cfg


# ---------------------------------------------------------------------------
# networks bundle
# ---------------------------------------------------------------------------


@dataclass
class Nets:
    guider: PolicyNet
    learner: PolicyNet
    critic: ValueNet
    num_agents: int
    num_actions: int
    ordering: tuple
    share_ids: bool = True

    @classmethod
    def for_env(cls, spec, cfg: TrainConfig):
        n, A = spec.num_agents, spec.num_actions
        ordering = cfg.ordering or tuple(range(n))
        if sorted(ordering) != list(range(n)):
            raise ConfigError(f"ordering {ordering} is not a permutation of 0..{n - 1}")
        return cls(
            guider=PolicyNet(guider_input_dim(spec.state_dim, n, A), cfg.hidden, A, "gelu"),
            learner=PolicyNet(learner_input_dim(spec.obs_dim, n, cfg.share_ids), cfg.hidden, A, "relu"),
            critic=ValueNet(spec.state_dim, cfg.hidden, "relu"),
            num_agents=n, num_actions=A, ordering=tuple(ordering), share_ids=cfg.share_ids,
        )

    def init(self, rng):
        return {"guider": self.guider.init(rng), "learner": self.learner.init(rng),
                "critic": self.critic.init(rng)}

    def learner_x(self, obs_pos):
        # agent ids are one-hot over *agent* index, so undo the position permutation
        if not self.share_ids:
            return obs_pos
        B, n, _ = obs_pos.shape
        ids = np.zeros((B, n, n))
        ids[:, np.arange(n), np.asarray(self.ordering)] = 1.0
        return np.concatenate([obs_pos, ids], axis=2)


class FixedGuider:
    """A frozen tabular autoregressive guider for tabular-game environments.

    The environment's global state must be a one-hot of the game state (plus
    an optional trailing step feature).
    """

    def __init__(self, tabular_guider, num_states):
        self.table = tabular_guider
        self.num_states = num_states

    def _s(self, states):
        return np.argmax(states[:, : self.num_states], axis=1)

    def position_probs(self, states, prior, position):
        c = self.table.conds[position]
        idx = (self._s(states),) + tuple(prior[:, k] for k in range(position))
        return c[idx]

    def all_log_probs(self, states, actions_pos):
        s = self._s(states)
        rows = []
        for j, c in enumerate(self.table.conds):
            idx = (s,) + tuple(actions_pos[:, k] for k in range(j))
            rows.append(c[idx])
        return np.log(np.maximum(np.stack(rows, axis=1), 1e-300))


# ---------------------------------------------------------------------------
# rollout storage
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryBatch:
    states: np.ndarray  # (T, E, state_dim)
    obs: np.ndarray  # (T, E, n, obs_dim), position order
    actions: np.ndarray  # (T, E, n), position order
    guider_logp: np.ndarray  # (T, E, n) behaviour log-prob of the taken action
    learner_logp: np.ndarray  # (T, E, n)
    rewards: np.ndarray  # (T, E)
    values: np.ndarray  # (T, E)
    dones: np.ndarray  # (T, E)
    last_value: np.ndarray  # (E,)

    @property
    def num_samples(self):
        return self.rewards.size


@dataclass
class AdvantageBatch:
    advantages: np.ndarray  # (T, E), normalized when requested
    returns: np.ndarray  # (T, E)


def _floor_log(logp, floor):
    return np.maximum(logp, math.log(floor))


class Collector:
    """Keeps the training environments alive across rollouts."""

    def __init__(self, env_name, cfg: TrainConfig, env_kwargs=None):
        self.env = make_env(env_name, num_envs=cfg.num_envs, **(env_kwargs or {}))
        self.last = self.env.reset(seed=int(stream(cfg.seed, "env").integers(2**31)))
        self.action_rng = stream(cfg.seed, "action")

    def collect(self, nets: Nets, params, cfg: TrainConfig, behaviour="guider", fixed_guider=None):
        return collect(self, nets, params, cfg, behaviour, fixed_guider)


def sample_guider(nets, params, states, rng, fixed_guider=None, greedy=False):
    """Autoregressive joint sample; returns (actions_pos, log-probs) shaped (E, n)."""
    E = states.shape[0]
    n, A = nets.num_agents, nets.num_actions
    acts = np.zeros((E, n), dtype=np.int64)
    logp = np.zeros((E, n))
    for j in range(n):
        if fixed_guider is not None:
            p = fixed_guider.position_probs(states, acts, j)
        else:
            x = guider_position_input(states, acts[:, :j], j, n, A)
            p = np.exp(nets.guider.log_probs(params["guider"], x).value)
        acts[:, j] = np.argmax(p, axis=1) if greedy else _kernels.sample_categorical(p, rng.random(E))
        logp[:, j] = np.log(np.maximum(p[np.arange(E), acts[:, j]], 1e-300))
    return acts, logp


def _to_agent_order(actions_pos, ordering):
    out = np.empty_like(actions_pos)
    out[:, list(ordering)] = actions_pos
    return out


def collect(collector: Collector, nets: Nets, params, cfg: TrainConfig, behaviour="guider",
            fixed_guider=None) -> TrajectoryBatch:
    """Roll out ``cfg.rollout_length`` steps in every environment.

    ``behaviour`` picks the acting policy: the autoregressive guider, or the
    decentralized learner (independent-PPO baseline).  Both policies'
    log-probabilities of the taken actions are recorded.
    """
    env = collector.env
    T, E = cfg.rollout_length, env.num_envs
    n, order = nets.num_agents, list(nets.ordering)
    sd, od = env.spec.state_dim, env.spec.obs_dim
    out = dict(states=np.zeros((T, E, sd)), obs=np.zeros((T, E, n, od)),
               actions=np.zeros((T, E, n), dtype=np.int64), guider_logp=np.zeros((T, E, n)),
               learner_logp=np.zeros((T, E, n)), rewards=np.zeros((T, E)),
               values=np.zeros((T, E)), dones=np.zeros((T, E)))
    rng = collector.action_rng
    last = collector.last
    for t in range(T):
        states = last.state
        obs_pos = last.obs[:, order]
        l_logp_all = _floor_log(nets.learner.log_probs(params["learner"], nets.learner_x(obs_pos)).value,
                                cfg.prob_floor)
        if behaviour == "guider":
            acts, g_logp = sample_guider(nets, params, states, rng, fixed_guider)
            g_logp = _floor_log(g_logp, cfg.prob_floor)
        else:
            p = np.exp(l_logp_all)
            acts = _kernels.sample_categorical(p, rng.random((E, n)))
            g_logp = None
        l_logp = np.take_along_axis(l_logp_all, acts[..., None], axis=2)[..., 0]
        out["states"][t] = states
        out["obs"][t] = obs_pos
        out["actions"][t] = acts
        out["learner_logp"][t] = l_logp
        out["guider_logp"][t] = l_logp if g_logp is None else g_logp
        out["values"][t] = nets.critic.value(params["critic"], states).value
        try:
            last = env.step(_to_agent_order(acts, order))
        except Exception as exc:
            raise RuntimeError(f"environment fault at rollout step {t}: {exc}") from exc
        out["rewards"][t] = last.reward
        out["dones"][t] = last.done
    collector.last = last
    last_value = nets.critic.value(params["critic"], last.state).value
    return TrajectoryBatch(last_value=last_value, **out)


def gae(batch: TrajectoryBatch, gamma, gae_lambda, normalize=False) -> AdvantageBatch:
    """Generalized advantage estimates; no bootstrapping across ``done``."""
    adv = _kernels.gae(batch.rewards, batch.values, batch.dones, batch.last_value, gamma, gae_lambda)
    returns = adv + batch.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return AdvantageBatch(adv, returns)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class Minibatch:
    g_in: np.ndarray  # (B, n, guider_in)
    l_in: np.ndarray  # (B, n, learner_in)
    states: np.ndarray  # (B, state_dim)
    actions: np.ndarray  # (B, n)
    old_logp: np.ndarray  # (B, n) behaviour policy at collection
    adv: np.ndarray  # (B,)
    returns: np.ndarray  # (B,)
    fixed_guider_logp: np.ndarray | None = None  # (B, n, A) when the guider is frozen


def make_minibatch(batch: TrajectoryBatch, advs: AdvantageBatch, nets: Nets, idx=None,
                   fixed_guider=None) -> Minibatch:
    N = batch.num_samples
    n = nets.num_agents
    idx = np.arange(N) if idx is None else idx
    states = batch.states.reshape(N, -1)[idx]
    actions = batch.actions.reshape(N, n)[idx]
    obs = batch.obs.reshape(N, n, -1)[idx]
    fixed = None if fixed_guider is None else fixed_guider.all_log_probs(states, actions)
    return Minibatch(
        g_in=guider_inputs(states, actions, n, nets.num_actions),
        l_in=nets.learner_x(obs),
        states=states,
        actions=actions,
        old_logp=batch.guider_logp.reshape(N, n)[idx],
        adv=advs.advantages.reshape(N)[idx],
        returns=advs.returns.reshape(N)[idx],
        fixed_guider_logp=fixed,
    )


def _entropy(logp: ad.Tensor):
    return ad.neg(ad.tsum(ad.exp(logp) * logp, axis=-1))


def guider_loss_terms(log_mu: ad.Tensor, log_pi: np.ndarray, mb: Minibatch, cfg: TrainConfig):
    """Double-clipped surrogate plus ratio-masked KL(guider || learner).

    ``log_mu`` is the (differentiable) guider log-distribution, ``log_pi``
    the learner's, held constant.  Both are already floored.
    """
    eps, delta = cfg.clip_eps, cfg.delta
    la_mu = ad.take(log_mu, mb.actions)  # (B, n)
    la_pi = np.take_along_axis(log_pi, mb.actions[..., None], axis=2)[..., 0]
    ratio = ad.exp(la_mu - mb.old_logp)
    gl_ratio = ad.exp(la_mu - la_pi)
    inner = ad.clip(gl_ratio, 1.0 / delta, delta) * np.exp(la_pi - mb.old_logp)
    dclip = ad.clip(inner, 1.0 - eps, 1.0 + eps)
    A = mb.adv[:, None]
    surr = ad.minimum(ratio * A, dclip * A)
    mask = ((gl_ratio.value <= 1.0 / delta) | (gl_ratio.value >= delta)).astype(np.float64)
    kl = ad.tsum(ad.exp(log_mu) * (log_mu - log_pi), axis=-1)  # (B, n)
    loss = ad.mean(ad.neg(surr) + kl * mask)
    if cfg.entropy_coef:
        loss = loss - cfg.entropy_coef * ad.mean(_entropy(log_mu))
    stats = {
        "mask_rate": float(mask.mean()),
        "ratio": float(ratio.value.mean()),
        "guider_learner_ratio": float(gl_ratio.value.mean()),
        "kl_guider_learner": float(kl.value.mean()),
        "double_clip": dclip.value,
    }
    return loss, stats


def learner_loss_terms(log_pi: ad.Tensor, log_mu: np.ndarray, mb: Minibatch, cfg: TrainConfig,
                       kl_coef=1.0):
    """KL(learner || guider) distillation minus the weighted clipped RL term."""
    eps = cfg.clip_eps
    la_pi = ad.take(log_pi, mb.actions)
    ratio = ad.exp(la_pi - mb.old_logp)
    A = mb.adv[:, None]
    surr = ad.minimum(ratio * A, ad.clip(ratio, 1.0 - eps, 1.0 + eps) * A)
    kl = ad.tsum(ad.exp(log_pi) * (log_pi - log_mu), axis=-1)
    loss = ad.mean(kl * kl_coef - surr * cfg.aux_weight)
    if cfg.entropy_coef:
        loss = loss - cfg.entropy_coef * ad.mean(_entropy(log_pi))
    stats = {"kl_learner_guider": float(kl.value.mean()), "learner_ratio": float(ratio.value.mean())}
    return loss, stats


def _guider_logp(nets, phi, mb, cfg):
    if mb.fixed_guider_logp is not None:
        return ad.Tensor(_floor_log(mb.fixed_guider_logp, cfg.prob_floor))
    return ad.maximum(nets.guider.log_probs(phi, mb.g_in), math.log(cfg.prob_floor))


def _learner_logp(nets, theta, mb, cfg):
    return ad.maximum(nets.learner.log_probs(theta, mb.l_in), math.log(cfg.prob_floor))


def guider_loss(mb: Minibatch, phi, theta, nets: Nets, cfg: TrainConfig):
    """Guider objective at parameters ``phi``; the learner ``theta`` is constant."""
    log_pi = _learner_logp(nets, ad.stop_gradient(theta).value, mb, cfg).value
    return guider_loss_terms(_guider_logp(nets, phi, mb, cfg), log_pi, mb, cfg)


def learner_loss(mb: Minibatch, theta, phi, nets: Nets, cfg: TrainConfig, kl_coef=1.0):
    """Learner objective at parameters ``theta``; the guider ``phi`` is constant."""
    log_mu = _guider_logp(nets, ad.stop_gradient(phi).value, mb, cfg).value
    return learner_loss_terms(_learner_logp(nets, theta, mb, cfg), log_mu, mb, cfg, kl_coef)


def value_loss(mb: Minibatch, psi, nets: Nets, cfg: TrainConfig):
    v = nets.critic.value(psi, mb.states)
    return cfg.value_coef * ad.mean(ad.square(v - mb.returns))


# ---------------------------------------------------------------------------
# update
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    params: dict  # name -> ndarray
    opts: dict  # name -> Adam
    shuffle_rng: np.random.Generator
    updates: int = 0


def init_train_state(nets: Nets, cfg: TrainConfig) -> TrainState:
    init = nets.init(stream(cfg.seed, "init"))
    params = {k: v.data for k, v in init.items()}
    opts = {k: Adam(v.size, cfg.lr) for k, v in params.items()}
    return TrainState(params, opts, stream(cfg.seed, "shuffle"))


def _trained_nets(algorithm, fixed_guider):
    if algorithm == "IPPO":
        return ("learner", "critic")
    if algorithm == "CTCE":
        return ("guider", "critic")
    if fixed_guider is not None:
        return ("learner", "critic")
    return ("guider", "learner", "critic")


def train_step(state: TrainState, batch: TrajectoryBatch, nets: Nets, cfg: TrainConfig,
               algorithm="MAGPO", fixed_guider=None):
    """Epochs of shuffled minibatch updates on one on-policy batch."""
    cfg = effective_config(algorithm, cfg)
    advs = gae(batch, cfg.gamma, cfg.gae_lambda, cfg.normalize_advantage)
    full = make_minibatch(batch, advs, nets, fixed_guider=fixed_guider)
    N = batch.num_samples
    which = _trained_nets(algorithm, fixed_guider)
    kl_coef = 0.0 if algorithm == "IPPO" else 1.0
    logs = {}

    def log(key, val):
        logs.setdefault(key, []).append(val)

    for _ in range(cfg.ppo_epochs):
        perm = state.shuffle_rng.permutation(N)
        for idx in np.array_split(perm, cfg.num_minibatches):
            mb = _subset(full, idx)
            p = state.params
            grads = {}
            if "guider" in which:
                stash = {}

                def gl(x):
                    loss, st = guider_loss(mb, x, p["learner"], nets, cfg)
                    stash.update(st)
                    return loss

                val, grads["guider"] = ad.value_and_grad(gl, p["guider"])
                log("guider_loss", val)
                for k in ("mask_rate", "ratio", "kl_guider_learner"):
                    log(k, stash[k])
            if "learner" in which:
                stash = {}

                def ll(x):
                    loss, st = learner_loss(mb, x, p["guider"], nets, cfg, kl_coef)
                    stash.update(st)
                    return loss

                val, grads["learner"] = ad.value_and_grad(ll, p["learner"])
                log("learner_loss", val)
                log("kl_learner_guider", stash["kl_learner_guider"])
            val, grads["critic"] = ad.value_and_grad(lambda x: value_loss(mb, x, nets, cfg), p["critic"])
            log("value_loss", val)
            new = dict(p)
            for k, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(f"non-finite gradient for {k} at update {state.updates}")
                g, norm = clip_grad_norm(g, cfg.max_grad_norm)
                log(f"{k}_grad_norm", norm)
                new[k] = state.opts[k].step(p[k], g)
            state.params = new
    state.updates += 1
    metrics = {k: float(np.mean(v)) for k, v in logs.items()}
    return state, metrics


def _subset(mb: Minibatch, idx):
    return Minibatch(**{f.name: (None if getattr(mb, f.name) is None else getattr(mb, f.name)[idx])
                        for f in dataclasses.fields(Minibatch)})


# ---------------------------------------------------------------------------
# evaluation and the outer loop
# ---------------------------------------------------------------------------


def evaluate(env_name, nets: Nets, params, cfg: TrainConfig, rng, use_guider=False,
             fixed_guider=None, env_kwargs=None):
    """Undiscounted returns of ``cfg.eval_episodes`` parallel episodes."""
    env = make_env(env_name, num_envs=cfg.eval_episodes, **(env_kwargs or {}))
    res = env.reset(seed=int(rng.integers(2**31)))
    E, n, order = env.num_envs, nets.num_agents, list(nets.ordering)
    total = np.zeros(E)
    for _ in range(env.horizon):
        if use_guider:
            acts, _ = sample_guider(nets, params, res.state, rng, fixed_guider, cfg.eval_greedy)
        else:
            p = nets.learner.probs(params["learner"], nets.learner_x(res.obs[:, order]))
            if cfg.eval_greedy:
                acts = np.argmax(p, axis=2)
            else:
                acts = _kernels.sample_categorical(p, rng.random((E, n)))
        res = env.step(_to_agent_order(acts, order))
        total += res.reward
    return total


def checkpoint_steps(budget, num_checkpoints):
    if budget <= 0:
        return [0]
    return sorted(set(int(round(x)) for x in np.linspace(0, budget, num_checkpoints)))


@dataclass
class TrainingResult:
    algorithm: str
    env_name: str
    seed: int
    steps: list = field(default_factory=list)
    returns: list = field(default_factory=list)  # one array of episode returns per checkpoint
    records: list = field(default_factory=list)
    params: dict = field(default_factory=dict)


def run_training(algorithm, env_name, cfg: TrainConfig, budget, num_checkpoints=122, out_dir=None,
                 fixed_guider=None, env_kwargs=None, evaluate_guider=False) -> TrainingResult:
    """Collect / advantage / update until ``budget`` environment steps.

    Evaluation happens at evenly spaced step counts.  Each checkpoint appends
    one JSON line to ``out_dir/metrics.jsonl`` (when given) as soon as it is
    computed, so an aborted run keeps every finished checkpoint.
    """
    effective_config(algorithm, cfg)  # validates the name
    collector = Collector(env_name, cfg, env_kwargs)
    nets = Nets.for_env(collector.env.spec, cfg)
    state = init_train_state(nets, cfg)
    eval_rng = stream(cfg.seed, "eval")
    behaviour = "learner" if algorithm == "IPPO" else "guider"
    use_guider = evaluate_guider or algorithm == "CTCE"
    targets = checkpoint_steps(budget, num_checkpoints)
    per_update = cfg.rollout_length * cfg.num_envs

    result = TrainingResult(algorithm, env_name, cfg.seed)
    metrics_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = (out_dir / "metrics.jsonl").open("w")

    pending = []
    steps = 0
    k = 0
    try:
        while True:
            while k < len(targets) and targets[k] <= steps:
                rets = evaluate(env_name, nets, state.params, cfg, eval_rng, use_guider,
                                fixed_guider, env_kwargs)
                rec = _record(targets[k], rets, pending, state.updates)
                pending = []
                result.steps.append(targets[k])
                result.returns.append(rets)
                result.records.append(rec)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    metrics_fh.flush()
                k += 1
            if k >= len(targets):
                break
            batch = collector.collect(nets, state.params, cfg, behaviour, fixed_guider)
            state, m = train_step(state, batch, nets, cfg, algorithm, fixed_guider)
            m["rollout_return_per_step"] = float(batch.rewards.mean())
            pending.append(m)
            steps += per_update
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    result.params = {name: ParamVector(v.copy(), shapes)
                     for name, v, shapes in ((nm, state.params[nm], getattr(nets, nm).shapes)
                                             for nm in ("guider", "learner", "critic"))}
    if out_dir is not None:
        save_checkpoint(out_dir / "params.bin", result.params, cfg.seed, steps)
    return result


def _record(step, returns, pending, updates):
    rec = {"step": int(step), "updates": int(updates),
           "returns": [float(r) for r in returns],
           "mean_return": float(np.mean(returns))}
    if pending:
        keys = sorted(set().union(*pending))
        rec["train"] = {key: float(np.mean([m[key] for m in pending if key in m])) for key in keys}
    return rec
