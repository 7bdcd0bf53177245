"""Cooperative environments: CoordSum, the sum-to-target didactic game and
random tabular Markov games.

All environments here are batched: one object advances ``num_envs``
independent instances in lock-step, with automatic reset on episode end.
Observations are shaped ``(E, n_agents, obs_dim)`` and global states
``(E, state_dim)``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class ConfigError(ValueError):
    """Invalid environment or experiment configuration."""


@dataclass(frozen=True)
class EnvSpec:
    num_agents: int
    num_actions: int
    obs_dim: int
    horizon: int
    state_dim: int

    def __post_init__(self):
        if self.num_agents < 1:
            raise ConfigError(f"num_agents must be >= 1, got {self.num_agents}")
        if self.num_actions < 2:
            raise ConfigError(f"num_actions must be >= 2, got {self.num_actions}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.obs_dim < 1 or self.state_dim < 1:
            raise ConfigError("observation and state dimensions must be positive")


@dataclass
class StepResult:
    obs: np.ndarray  # (E, n, obs_dim)
    state: np.ndarray  # (E, state_dim)
    reward: np.ndarray  # (E,) one shared scalar per joint step
    done: np.ndarray  # (E,) bool
    info: dict = field(default_factory=dict)


def _check_actions(actions, num_envs, num_agents, num_actions):
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (num_envs, num_agents):
        raise ValueError(f"expected joint actions of shape {(num_envs, num_agents)}, got {actions.shape}")
    if actions.min() < 0 or actions.max() >= num_actions:
        raise ValueError(f"action out of range [0, {num_actions - 1}]")
    return actions


# ---------------------------------------------------------------------------
# CoordSum
# ---------------------------------------------------------------------------


class CoordSum:
    """Agents pick integers that must sum to a shared target.

    An opponent guesses agent 1's action by majority vote over the history of
    agent-1 actions seen for the current target.  A correct sum scores 2.0
    when the guess misses and 1.0 when it hits; a wrong sum scores 0.0.

    Targets are drawn uniformly from ``[0, max_target]`` at every step.  Vote
    ties go to the lowest action, so an empty history guesses 0.  The history
    is wiped on reset unless ``persistent_history`` is set.
    """

    def __init__(self, num_agents, num_actions, num_envs=1, horizon=100,
                 max_target=None, persistent_history=False):
        if max_target is None:
            max_target = num_actions - 1
        if max_target < 0:
            raise ConfigError("max_target must be nonnegative")
        self.num_agents = num_agents
        self.num_actions = num_actions
        self.num_envs = num_envs
        self.max_target = max_target
        self.persistent_history = persistent_history
        self.spec = EnvSpec(num_agents, num_actions, max_target + 2, horizon, max_target + 2)
        self.targets = np.zeros(num_envs, dtype=np.int64)
        self.steps = np.ones(num_envs, dtype=np.int64)
        self.counts = np.zeros((num_envs, max_target + 1, num_actions), dtype=np.int64)
        self.rng = np.random.default_rng(0)

    @property
    def horizon(self):
        return self.spec.horizon

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps[:] = 1
        self.counts[:] = 0
        self.targets[:] = self.rng.integers(0, self.max_target + 1, size=self.num_envs)
        return StepResult(self._obs(), self._state(), np.zeros(self.num_envs),
                          np.zeros(self.num_envs, dtype=bool))

    def guess(self):
        """Current majority-vote guesses of agent 1's action, per instance."""
        hist = self.counts[np.arange(self.num_envs), self.targets]
        return np.argmax(hist, axis=1)

    def step(self, actions):
        actions = _check_actions(actions, self.num_envs, self.num_agents, self.num_actions)
        rewards, guesses = _kernels.coordsum_step(self.targets, actions, self.counts)
        done = self.steps >= self.horizon
        self.steps += 1
        self.targets[:] = self.rng.integers(0, self.max_target + 1, size=self.num_envs)
        if done.any():
            self.steps[done] = 1
            if not self.persistent_history:
                self.counts[done] = 0
        return StepResult(self._obs(), self._state(), rewards, done, {"guess": guesses})

    def _state(self):
        state = np.zeros((self.num_envs, self.max_target + 2))
        state[np.arange(self.num_envs), self.targets] = 1.0
        state[:, -1] = self.steps / self.horizon
        return state

    def _obs(self):
        # every agent sees the same target/step observation
        return np.repeat(self._state()[:, None, :], self.num_agents, axis=1)


# ---------------------------------------------------------------------------
# Tabular games
# ---------------------------------------------------------------------------


@dataclass
class DecGame:
    """Exact tables of a small cooperative Markov game.

    ``P`` has shape ``(S, A, ..., A, S)`` and ``R`` shape ``(S, A, ..., A)``
    with one action axis per agent.  ``obs_index[i, s]`` is agent i's
    (deterministic) observation of state s.
    """

    P: np.ndarray
    R: np.ndarray
    rho: np.ndarray
    gamma: float
    obs_index: np.ndarray

    def __post_init__(self):
        S = self.P.shape[0]
        if self.P.shape[-1] != S or self.R.shape != self.P.shape[:-1]:
            raise ConfigError("inconsistent transition/reward table shapes")
        if not np.allclose(self.P.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
            raise ConfigError("transition rows must sum to 1")
        if abs(self.rho.sum() - 1.0) > 1e-12:
            raise ConfigError("initial distribution must sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")

    @property
    def num_states(self):
        return self.P.shape[0]

    @property
    def num_agents(self):
        return self.R.ndim - 1

    @property
    def num_actions(self):
        return self.R.shape[1]

    def joint_actions(self):
        """All joint actions in row-major order."""
        return list(itertools.product(range(self.num_actions), repeat=self.num_agents))


def didactic_game(target, num_agents=3, num_actions=5, gamma=0.9):
    """One-shot sum game: reward 1 iff the agents' integers sum to ``target``.

    State 0 is the decision state; state 1 absorbs with zero reward, so the
    discounted value from state 0 equals the success probability.
    """
    if not 0 <= target <= num_agents * (num_actions - 1):
        raise ConfigError(f"target {target} unreachable with {num_agents} agents "
                          f"and actions 0..{num_actions - 1}")
    shape = (num_actions,) * num_agents
    grids = np.indices(shape).sum(axis=0)
    R = np.zeros((2,) + shape)
    R[0] = (grids == target).astype(float)
    P = np.zeros((2,) + shape + (2,))
    P[..., 1] = 1.0
    rho = np.array([1.0, 0.0])
    obs_index = np.tile(np.arange(2), (num_agents, 1))
    return DecGame(P, R, rho, gamma, obs_index)


MAX_JOINT_ENTRIES = 100_000


def random_decgame(states, agents, actions, seed, gamma=0.9):
    """Random fully observable game with rewards in [0, 1]."""
    if states * actions**agents > MAX_JOINT_ENTRIES:
        raise ConfigError(f"{states}*{actions}^{agents} joint entries exceeds "
                          f"the enumeration budget of {MAX_JOINT_ENTRIES}")
    rng = np.random.default_rng(seed)
    shape = (states,) + (actions,) * agents
    P = rng.random(shape + (states,))
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.random(shape)
    rho = rng.random(states)
    rho /= rho.sum()
    obs_index = np.tile(np.arange(states), (agents, 1))
    return DecGame(P, R, rho, gamma, obs_index)


class TabularGameEnv:
    """Batched simulator for a :class:`DecGame` with a fixed horizon.

    States and observations are one-hot encoded; the global state also
    carries the normalized step count when ``horizon > 1``.
    """

    def __init__(self, game: DecGame, horizon=1, num_envs=1):
        self.game = game
        self.num_envs = num_envs
        self.num_agents = game.num_agents
        self.num_actions = game.num_actions
        S = game.num_states
        self.num_obs = int(game.obs_index.max()) + 1
        self._with_step = horizon > 1
        extra = 1 if self._with_step else 0
        self.spec = EnvSpec(game.num_agents, game.num_actions, self.num_obs + extra, horizon, S + extra)
        self._Pflat = game.P.reshape(S, -1, S)
        self._Rflat = game.R.reshape(S, -1)
        self._mult = game.num_actions ** np.arange(game.num_agents - 1, -1, -1)
        self.states = np.zeros(num_envs, dtype=np.int64)
        self.steps = np.ones(num_envs, dtype=np.int64)
        self.rng = np.random.default_rng(0)

    @property
    def horizon(self):
        return self.spec.horizon

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps[:] = 1
        self.states[:] = self._draw(np.broadcast_to(self.game.rho, (self.num_envs, self.game.num_states)))
        return StepResult(self._obs(), self._state(), np.zeros(self.num_envs),
                          np.zeros(self.num_envs, dtype=bool))

    def _draw(self, probs):
        return _kernels.sample_categorical(probs, self.rng.random(probs.shape[0]))

    def step(self, actions):
        actions = _check_actions(actions, self.num_envs, self.num_agents, self.num_actions)
        joint = actions @ self._mult
        rewards = self._Rflat[self.states, joint]
        nxt = self._draw(self._Pflat[self.states, joint])
        done = self.steps >= self.horizon
        self.steps += 1
        if done.any():
            self.steps[done] = 1
            fresh = self._draw(np.broadcast_to(self.game.rho, (self.num_envs, self.game.num_states)))
            nxt = np.where(done, fresh, nxt)
        self.states[:] = nxt
        return StepResult(self._obs(), self._state(), rewards, done)

    def _state(self):
        st = np.zeros((self.num_envs, self.spec.state_dim))
        st[np.arange(self.num_envs), self.states] = 1.0
        if self._with_step:
            st[:, -1] = self.steps / self.horizon
        return st

    def _obs(self):
        obs = np.zeros((self.num_envs, self.num_agents, self.spec.obs_dim))
        idx = self.game.obs_index[:, self.states].T  # (E, n)
        e, i = np.meshgrid(np.arange(self.num_envs), np.arange(self.num_agents), indexing="ij")
        obs[e, i, idx] = 1.0
        if self._with_step:
            obs[:, :, -1] = (self.steps / self.horizon)[:, None]
        return obs


# ---------------------------------------------------------------------------
# name registry
# ---------------------------------------------------------------------------

_COORDSUM = re.compile(r"^CoordSum-(\d+)x(\d+)$")
_DIDACTIC = re.compile(r"^Didactic-(\d+)x(\d+)-t(\d+)$")
_RANDGAME = re.compile(r"^RandGame-(\d+)s(\d+)a(\d+)n-seed(\d+)$")


def make_env(name, num_envs=1, **kwargs):
    """Build a batched environment from its task name.

    Recognized names: ``CoordSum-<agents>x<actions>``,
    ``Didactic-<agents>x<actions>-t<target>`` and
    ``RandGame-<states>s<agents>a<actions>n-seed<k>``.  Extra keyword
    arguments go to the environment constructor (e.g. ``horizon``).
    """
    if m := _COORDSUM.match(name):
        return CoordSum(int(m[1]), int(m[2]), num_envs=num_envs, **kwargs)
    if m := _DIDACTIC.match(name):
        game = didactic_game(int(m[3]), int(m[1]), int(m[2]))
        return TabularGameEnv(game, horizon=1, num_envs=num_envs)
    if m := _RANDGAME.match(name):
        game = random_decgame(int(m[1]), int(m[2]), int(m[3]), int(m[4]))
        return TabularGameEnv(game, horizon=kwargs.get("horizon", 20), num_envs=num_envs)
    raise ConfigError(f"unknown environment name {name!r}")


def task_suite(name):
    """Environment family of a task name (``CoordSum``, ``Didactic``, ...)."""
    return name.split("-", 1)[0]
