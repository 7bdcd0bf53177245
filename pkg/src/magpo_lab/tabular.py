"""Exact guided policy optimization on small tabular games.

Policies are dense tables.  A factorized learner stores one row per
(agent, state); an autoregressive guider stores, for position ``j`` in the
agent ordering, a table of shape ``(S, A, ..., A, A)`` with ``j`` prefix axes
(the actions of earlier positions) followed by its own action axis.

Joint tables always use the natural agent order on their action axes:
``joint[s, a_0, a_1, ..., a_{n-1}]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .envs import ConfigError, DecGame

# floor for log(0); keeps zero-probability entries at ~exp(-708) instead of -inf
TINY = np.finfo(np.float64).tiny


class MonotonicityError(AssertionError):
    """Raised when an iterate decreases the objective beyond tolerance."""


def _log(p):
    return np.log(np.maximum(p, TINY))


@dataclass
class TabularLearner:
    probs: np.ndarray  # (n, S, A)

    @property
    def num_agents(self):
        return self.probs.shape[0]

    @property
    def num_states(self):
        return self.probs.shape[1]

    @property
    def num_actions(self):
        return self.probs.shape[2]

    @classmethod
    def uniform(cls, num_agents, num_states, num_actions):
        return cls(np.full((num_agents, num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def random(cls, num_agents, num_states, num_actions, rng):
        return cls(rng.dirichlet(np.ones(num_actions), size=(num_agents, num_states)))

    def joint(self):
        return joint_from_factors(self.probs)


@dataclass
class TabularGuider:
    conds: list  # conds[j]: (S,) + (A,) * j + (A,)
    ordering: tuple

    @property
    def num_agents(self):
        return len(self.conds)

    def log_joint(self):
        """Log of the induced joint, natural agent order."""
        n = len(self.conds)
        S = self.conds[0].shape[0]
        A = self.conds[0].shape[-1]
        out = np.zeros((S,) + (A,) * n)
        for j, c in enumerate(self.conds):
            out = out + _log(c).reshape(c.shape + (1,) * (n - j - 1))
        return _to_natural(out, self.ordering)

    def joint(self):
        n = len(self.conds)
        S = self.conds[0].shape[0]
        A = self.conds[0].shape[-1]
        out = np.ones((S,) + (A,) * n)
        for j, c in enumerate(self.conds):
            out = out * c.reshape(c.shape + (1,) * (n - j - 1))
        return _to_natural(out, self.ordering)


@dataclass
class ValueTables:
    V: np.ndarray  # (S,)
    Q: np.ndarray  # (S, A, ..., A)


def _natural_ordering(n, ordering):
    if ordering is None:
        return tuple(range(n))
    ordering = tuple(int(i) for i in ordering)
    if sorted(ordering) != list(range(n)):
        raise ConfigError(f"ordering {ordering} is not a permutation of 0..{n - 1}")
    return ordering


def _to_ordered(joint, ordering):
    """Permute action axes so that axis 1+j holds agent ordering[j]."""
    return np.transpose(joint, (0,) + tuple(1 + i for i in ordering))


def _to_natural(joint, ordering):
    inv = np.argsort(ordering)
    return np.transpose(joint, (0,) + tuple(1 + int(j) for j in inv))


def joint_from_factors(probs):
    """Product distribution from per-agent rows ``probs[i, s, a]``."""
    n, S, A = probs.shape
    out = np.ones((S,) + (A,) * n)
    for i in range(n):
        shape = [S] + [1] * n
        shape[1 + i] = A
        out = out * probs[i].reshape(shape)
    return out


def kl_rows(p, q, axis_start=1):
    """KL(p || q) reduced over every axis from ``axis_start`` on."""
    axes = tuple(range(axis_start, p.ndim))
    return np.where(p > 0, p * (_log(p) - _log(q)), 0.0).sum(axis=axes)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def policy_eval(game: DecGame, policy) -> ValueTables:
    """Exact V and Q of a learner (or any joint table) by a linear solve."""
    joint = policy.joint() if hasattr(policy, "joint") else np.asarray(policy)
    S = game.num_states
    pflat = joint.reshape(S, -1)
    P = game.P.reshape(S, -1, S)
    R = game.R.reshape(S, -1)
    P_pi = np.einsum("sa,sat->st", pflat, P)
    r_pi = (pflat * R).sum(axis=1)
    M = np.eye(S) - game.gamma * P_pi
    try:
        V = np.linalg.solve(M, r_pi)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("singular Bellman system") from exc
    Q = game.R + game.gamma * np.einsum("...t,t->...", game.P, V)
    return ValueTables(V, Q)


def v_rho(game: DecGame, policy) -> float:
    return float(game.rho @ policy_eval(game, policy).V)


def subset_q(Q, learner: TabularLearner, ordering, m):
    """Q over the first ``m`` agents of ``ordering``, others marginalized.

    Result has shape ``(S,) + (A,) * m`` with axes in ordering order.
    """
    n = learner.num_agents
    out = _to_ordered(Q, ordering)
    for pos in range(n - 1, m - 1, -1):
        row = learner.probs[ordering[pos]]  # (S, A)
        out = np.einsum("s...a,sa->s...", out, row)
    return out


def multiagent_advantages(game, learner, ordering=None, values=None):
    """Per-position advantages ``A^{i_j}(s, a^{i_{1:j-1}}, a^{i_j})``.

    Entry ``j`` has shape ``(S,) + (A,) * (j + 1)`` in ordering order.
    """
    ordering = _natural_ordering(learner.num_agents, ordering)
    values = values or policy_eval(game, learner)
    qs = [subset_q(values.Q, learner, ordering, m) for m in range(learner.num_agents + 1)]
    return [qs[j + 1] - qs[j][..., None] for j in range(learner.num_agents)]


def advantage_decomposition_check(game, learner, ordering=None):
    """Largest gap between the joint advantage and the sum of per-agent ones."""
    ordering = _natural_ordering(learner.num_agents, ordering)
    vt = policy_eval(game, learner)
    n = learner.num_agents
    joint_adv = _to_ordered(vt.Q, ordering) - vt.V.reshape((-1,) + (1,) * n)
    total = np.zeros_like(joint_adv)
    for j, adv in enumerate(multiagent_advantages(game, learner, ordering, vt)):
        total = total + adv.reshape(adv.shape + (1,) * (n - j - 1))
    return float(np.abs(joint_adv - total).max())


# ---------------------------------------------------------------------------
# the four steps
# ---------------------------------------------------------------------------


def backtrack(learner: TabularLearner, ordering=None) -> TabularGuider:
    """Guider whose conditionals ignore the prefix and copy the learner."""
    n, S, A = learner.probs.shape
    ordering = _natural_ordering(n, ordering)
    conds = []
    for j, agent in enumerate(ordering):
        row = learner.probs[agent].reshape((S,) + (1,) * j + (A,))
        conds.append(np.broadcast_to(row, (S,) + (A,) * (j + 1)).copy())
    return TabularGuider(conds, ordering)


def guider_from_log_joint(log_joint, ordering) -> TabularGuider:
    """Autoregressive conditionals of a joint given in natural agent order."""
    n = log_joint.ndim - 1
    A = log_joint.shape[-1]
    lj = _to_ordered(log_joint, ordering)
    lj = lj - logsumexp(lj, axis=tuple(range(1, n + 1)), keepdims=True)
    marg = [None] * (n + 1)
    marg[n] = lj
    for m in range(n - 1, -1, -1):
        marg[m] = logsumexp(marg[m + 1], axis=-1)
    conds = []
    for j in range(n):
        with np.errstate(invalid="ignore"):
            c = np.exp(marg[j + 1] - marg[j][..., None])
        bad = ~np.isfinite(c).all(axis=-1)
        if bad.any():
            # prefix of zero mass: any conditional induces the same joint
            c[bad] = 1.0 / A
        conds.append(c / c.sum(axis=-1, keepdims=True))
    return TabularGuider(conds, tuple(ordering))


def pmd_guider_update(game, learner, eta, ordering=None) -> TabularGuider:
    """Closed-form mirror-descent guider: joint ∝ π_k · exp(η Q^{π_k}).

    Computed in log space, then split into autoregressive conditionals by
    exact marginalization.
    """
    if eta <= 0:
        raise ConfigError("eta must be positive")
    ordering = _natural_ordering(learner.num_agents, ordering)
    Q = policy_eval(game, learner).Q
    log_joint = _log(learner.joint()) + eta * Q
    return guider_from_log_joint(log_joint, ordering)


def kl_project_learner(guider: TabularGuider, init: TabularLearner, sweeps=1, tol=1e-13,
                       max_sweeps=10_000) -> TabularLearner:
    """Project a guider onto factorized policies by minimizing KL(π || μ).

    Block-coordinate descent on the joint KL: each agent's row is replaced by
    the exact minimizer with every other agent held fixed, visiting agents in
    the guider's ordering and starting from ``init``.  Each block step can
    only lower the KL.  ``sweeps=None`` repeats until rows move by less than
    ``tol``.
    """
    n = guider.num_agents
    ordering = guider.ordering
    log_mu = guider.log_joint()
    probs = init.probs.copy()
    done = 0
    while True:
        old = probs.copy()
        for agent in ordering:
            # E over the other agents of log μ, as a function of this agent's action
            t = log_mu
            for other in range(n - 1, -1, -1):
                if other == agent:
                    continue
                t = np.moveaxis(t, 1 + other, -1)
                t = np.einsum("s...a,sa->s...", t, probs[other])
                # after contracting, remaining axes keep their relative order
            logits = t  # (S, A)
            probs[agent] = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        done += 1
        if sweeps is not None and done >= sweeps:
            break
        if sweeps is None and (np.abs(probs - old).max() < tol or done >= max_sweeps):
            break
    return TabularLearner(probs)


def sequential_agent_update(game, learner, eta, ordering=None) -> TabularLearner:
    """Per-agent sequential advantage-weighted mirror step.

    ``π^{i_j} ∝ π_k^{i_j} exp(η E_{prefix ~ π_{k+1}} A^{i_j}(s, prefix, ·))``,
    agents visited in ``ordering``, each using the already-updated rows of
    earlier agents for the prefix distribution.
    """
    n, S, A = learner.probs.shape
    ordering = _natural_ordering(n, ordering)
    advs = multiagent_advantages(game, learner, ordering)
    new = learner.probs.copy()
    for j, agent in enumerate(ordering):
        expected = advs[j]  # (S,) + (A,)*j + (A,)
        for pos in range(j - 1, -1, -1):
            # contract the last prefix axis (position pos) with the new row
            expected = np.einsum("s...pa,sp->s...a", expected, new[ordering[pos]])
        logits = _log(learner.probs[agent]) + eta * expected
        new[agent] = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    return TabularLearner(new)


def magpo_tabular_iterate(game, learner, eta, iters, ordering=None, check=True, tol=1e-9):
    """Run the collect/guide/project/backtrack loop exactly.

    Returns ``[(learner_k, V_rho(learner_k)) for k = 0..iters]``.  With
    ``check`` set, a decrease larger than ``tol`` raises
    :class:`MonotonicityError`.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    ordering = _natural_ordering(learner.num_agents, ordering)
    history = [(learner, v_rho(game, learner))]
    for _ in range(iters):
        prev, prev_v = history[-1]
        # guider backtracked onto the learner, so the PMD anchor is π_k itself
        guider = pmd_guider_update(game, prev, eta, ordering)
        nxt = kl_project_learner(guider, prev)
        v = v_rho(game, nxt)
        if check and v < prev_v - tol:
            raise MonotonicityError(f"V_rho dropped from {prev_v!r} to {v!r}")
        history.append((nxt, v))
    return history


def sequential_update_equivalence_check(game, learner, eta, ordering=None):
    """Max row-wise total variation between the projected PMD guider and the
    per-agent sequential advantage update."""
    ordering = _natural_ordering(learner.num_agents, ordering)
    via_guider = kl_project_learner(pmd_guider_update(game, learner, eta, ordering), learner)
    direct = sequential_agent_update(game, learner, eta, ordering)
    return float(0.5 * np.abs(via_guider.probs - direct.probs).sum(axis=-1).max())


def pmd_objective(Q, anchor_joint, candidate_joint, eta):
    """Per-state ``η <Q, μ> - KL(μ || anchor)`` for joint tables."""
    S = Q.shape[0]
    q = Q.reshape(S, -1)
    mu = candidate_joint.reshape(S, -1)
    return eta * (q * mu).sum(axis=1) - kl_rows(mu, anchor_joint.reshape(S, -1))


def success_probability(game, joint, state=0):
    """Probability of a positive reward at ``state`` under a joint table."""
    return float((joint[state] * (game.R[state] > 0)).sum())


def didactic_teacher(target=10, num_actions=5, num_states=2):
    """Non-factorizable three-agent guider for the one-shot sum game.

    Agent 0 picks 3 or 4 with equal odds, agent 1 always picks 3 and agent 2
    completes the sum, ``clip(target - a0 - a1, 0, A - 1)``.  Every state
    gets the same conditionals.
    """
    A = num_actions
    if A < 5:
        raise ConfigError("the teacher needs actions 0..4")
    c0 = np.zeros((num_states, A))
    c0[:, 3] = c0[:, 4] = 0.5
    c1 = np.zeros((num_states, A, A))
    c1[..., 3] = 1.0
    c2 = np.zeros((num_states, A, A, A))
    a0, a1 = np.meshgrid(np.arange(A), np.arange(A), indexing="ij")
    last = np.clip(target - a0 - a1, 0, A - 1)
    c2[:, a0, a1, last] = 1.0
    return TabularGuider([c0, c1, c2], (0, 1, 2))
