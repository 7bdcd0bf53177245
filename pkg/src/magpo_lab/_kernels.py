"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin.  Set ``MAGPO_LAB_NO_NUMBA=1`` before
import to force the numpy path (useful for debugging and for the benchmark
that compares both).  The two paths are required to agree bit-for-bit.
"""

import os

import numpy as np

_DISABLED = os.environ.get("MAGPO_LAB_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------


def gae_numpy(rewards, values, dones, last_value, gamma, lam):
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(last_value)
    next_value = last_value
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv


def sample_categorical_numpy(probs, uniforms):
    cdf = np.cumsum(probs, axis=-1)
    # guard against round-off leaving the last cdf entry just below u
    idx = (uniforms[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1).astype(np.int64)


def coordsum_step_numpy(targets, actions, counts):
    E = targets.shape[0]
    rows = np.arange(E)
    hist = counts[rows, targets]
    guess = np.argmax(hist, axis=1)
    first = actions[:, 0]
    hit = actions.sum(axis=1) == targets
    rewards = np.where(hit, np.where(guess == first, 1.0, 2.0), 0.0)
    counts[rows, targets, first] += 1
    return rewards, guess


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu_numpy(x):
    x2 = x * x
    th = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))
    out = 0.5 * x * (1.0 + th)
    deriv = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * (_GELU_C * (1.0 + 0.134145 * x2))
    return out, deriv


def pairwise_win_rate_numpy(x, y):
    gt = (x[:, None] > y[None, :]).sum()
    eq = (x[:, None] == y[None, :]).sum()
    return (gt + 0.5 * eq) / (x.shape[0] * y.shape[0])


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _gae_jit(rewards, values, dones, last_value, gamma, lam):
    T, E = rewards.shape
    adv = np.zeros_like(rewards)
    for e in range(E):
        running = 0.0
        next_value = last_value[e]
        for t in range(T - 1, -1, -1):
            nonterminal = 1.0 - dones[t, e]
            delta = rewards[t, e] + gamma * next_value * nonterminal - values[t, e]
            running = delta + gamma * lam * nonterminal * running
            adv[t, e] = running
            next_value = values[t, e]
    return adv


@njit(cache=True)
def _sample_categorical_jit(probs, uniforms):
    B, K = probs.shape
    out = np.empty(B, dtype=np.int64)
    for b in range(B):
        c = 0.0
        k = 0
        u = uniforms[b]
        while k < K - 1:
            c += probs[b, k]
            if u < c:
                break
            k += 1
        out[b] = k
    return out


@njit(cache=True)
def _coordsum_step_jit(targets, actions, counts):
    E, n = actions.shape
    A = counts.shape[2]
    rewards = np.zeros(E)
    guess = np.zeros(E, dtype=np.int64)
    for e in range(E):
        tgt = targets[e]
        best = 0
        for a in range(1, A):
            if counts[e, tgt, a] > counts[e, tgt, best]:
                best = a
        guess[e] = best
        s = 0
        for i in range(n):
            s += actions[e, i]
        if s == tgt:
            rewards[e] = 1.0 if best == actions[e, 0] else 2.0
        counts[e, tgt, actions[e, 0]] += 1
    return rewards, guess


@njit(cache=True)
def _gelu_jit(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    deriv = np.empty_like(flat)
    for k in range(flat.size):
        v = flat[k]
        v2 = v * v
        th = np.tanh(_GELU_C * (v + 0.044715 * v2 * v))
        out[k] = 0.5 * v * (1.0 + th)
        deriv[k] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * (_GELU_C * (1.0 + 0.134145 * v2))
    return out.reshape(x.shape), deriv.reshape(x.shape)


@njit(cache=True)
def _pairwise_win_rate_jit(x, y):
    acc = 0.0
    for i in range(x.shape[0]):
        for j in range(y.shape[0]):
            if x[i] > y[j]:
                acc += 1.0
            elif x[i] == y[j]:
                acc += 0.5
    return acc / (x.shape[0] * y.shape[0])


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def gae(rewards, values, dones, last_value, gamma, lam):
    """Backward GAE recursion over arrays shaped ``(T, E)``."""
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    dones = np.ascontiguousarray(dones, dtype=np.float64)
    last_value = np.ascontiguousarray(last_value, dtype=np.float64)
    if HAVE_NUMBA:
        return _gae_jit(rewards, values, dones, last_value, float(gamma), float(lam))
    return gae_numpy(rewards, values, dones, last_value, gamma, lam)


def sample_categorical(probs, uniforms):
    """Inverse-CDF sampling, one draw per row of ``probs``."""
    probs = np.ascontiguousarray(probs, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if HAVE_NUMBA:
        flat = _sample_categorical_jit(probs.reshape(-1, probs.shape[-1]), uniforms.reshape(-1))
        return flat.reshape(uniforms.shape)
    return sample_categorical_numpy(probs, uniforms)


def coordsum_step(targets, actions, counts):
    """Score one joint step for a batch of CoordSum instances.

    ``counts`` (E, M+1, A) is updated in place after the guess is taken.
    Returns ``(rewards, guesses)``.
    """
    if HAVE_NUMBA:
        return _coordsum_step_jit(targets, actions, counts)
    return coordsum_step_numpy(targets, actions, counts)


def gelu(x):
    """tanh-approximated GELU and its derivative, in one pass."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if HAVE_NUMBA:
        return _gelu_jit(x)
    return gelu_numpy(x)


def pairwise_win_rate(x, y):
    """P(X > Y) over all pairs, ties counted as one half."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if HAVE_NUMBA:
        return _pairwise_win_rate_jit(x, y)
    return pairwise_win_rate_numpy(x, y)
