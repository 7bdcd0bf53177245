"""Slow, direct re-implementations used as references by the tests.

Nothing here imports the package's numerical code; each routine computes
its quantity the long way (explicit loops, enumeration, iterative solvers).
"""

import itertools
import math

import numpy as np


def iterative_policy_eval(P, R, joint, gamma, tol=1e-13, max_iter=100_000):
    """V by repeated Bellman backups over explicitly enumerated joint actions."""
    S = P.shape[0]
    n = R.ndim - 1
    A = R.shape[1]
    V = np.zeros(S)
    for _ in range(max_iter):
        new = np.zeros(S)
        for s in range(S):
            for a in itertools.product(range(A), repeat=n):
                p = joint[(s,) + a]
                if p == 0.0:
                    continue
                new[s] += p * (R[(s,) + a] + gamma * sum(P[(s,) + a + (t,)] * V[t] for t in range(S)))
        if np.max(np.abs(new - V)) < tol:
            return new
        V = new
    return V


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def pmd_projected_ascent(q, anchor, eta, steps=40_000, lr=0.005):
    """Maximize eta<q, mu> - KL(mu || anchor) over the simplex by projected gradient ascent."""
    mu = np.full(q.size, 1.0 / q.size)
    for _ in range(steps):
        grad = eta * q - (np.log(np.maximum(mu, 1e-300)) - np.log(anchor)) - 1.0
        mu = project_simplex(mu + lr * grad)
        mu = np.maximum(mu, 1e-15)
        mu /= mu.sum()
    return mu


def gae_double_sum(rewards, values, dones, last_value, gamma, lam):
    """A_t = sum_l (gamma lam)^l delta_{t+l}, truncated at the first done."""
    T, E = rewards.shape
    adv = np.zeros((T, E))
    for e in range(E):
        for t in range(T):
            total = 0.0
            for l in range(T - t):
                k = t + l
                nxt = last_value[e] if k == T - 1 else values[k + 1, e]
                delta = rewards[k, e] + gamma * nxt * (1.0 - dones[k, e]) - values[k, e]
                total += (gamma * lam) ** l * delta
                if dones[k, e]:
                    break
            adv[t, e] = total
    return adv


def guider_loss_scalar(log_mu, log_pi, actions, old_logp, adv, eps, delta):
    """Term-by-term guider objective with plain floats.

    ``log_mu``/``log_pi`` are (B, n, A) already floored log-distributions.
    """
    B, n, A = log_mu.shape
    total = 0.0
    for b in range(B):
        for j in range(n):
            a = actions[b, j]
            mu_a, pi_a, old_a = math.exp(log_mu[b, j, a]), math.exp(log_pi[b, j, a]), math.exp(old_logp[b, j])
            r = mu_a / old_a
            g = mu_a / pi_a
            inner = min(max(g, 1.0 / delta), delta) * pi_a / old_a
            dclip = min(max(inner, 1.0 - eps), 1.0 + eps)
            surr = min(r * adv[b], dclip * adv[b])
            mask = 1.0 if (g <= 1.0 / delta or g >= delta) else 0.0
            kl = sum(math.exp(log_mu[b, j, k]) * (log_mu[b, j, k] - log_pi[b, j, k]) for k in range(A))
            total += -surr + mask * kl
    return total / (B * n)


def learner_loss_scalar(log_pi, log_mu, actions, old_logp, adv, eps, aux_weight):
    B, n, A = log_pi.shape
    total = 0.0
    for b in range(B):
        for j in range(n):
            a = actions[b, j]
            r = math.exp(log_pi[b, j, a] - old_logp[b, j])
            clipped = min(max(r, 1.0 - eps), 1.0 + eps)
            surr = min(r * adv[b], clipped * adv[b])
            kl = sum(math.exp(log_pi[b, j, k]) * (log_pi[b, j, k] - log_mu[b, j, k]) for k in range(A))
            total += kl - aux_weight * surr
    return total / (B * n)


def iqm_by_hand(scores):
    """IQM via the rank-interval overlap definition, with Python fractions."""
    from fractions import Fraction

    x = sorted(scores)
    n = len(x)
    lo, hi = Fraction(n, 4), Fraction(3 * n, 4)
    acc = Fraction(0)
    for k, v in enumerate(x):
        w = max(Fraction(0), min(Fraction(k + 1), hi) - max(Fraction(k), lo))
        acc += w * Fraction(v)
    return float(acc / (hi - lo))


def poi_enumerate(a_by_task, b_by_task):
    """Mean over tasks of the fraction of (a, b) seed pairs with a > b (ties 1/2)."""
    per_task = []
    for t in sorted(set(a_by_task) & set(b_by_task)):
        wins = 0.0
        pairs = 0
        for x in a_by_task[t]:
            for y in b_by_task[t]:
                wins += 1.0 if x > y else (0.5 if x == y else 0.0)
                pairs += 1
        per_task.append(wins / pairs)
    return sum(per_task) / len(per_task)


def kl_factorized_to_joint(p_rows, joint):
    """KL(prod_i p_i || joint) for one state, by enumeration."""
    n = len(p_rows)
    A = len(p_rows[0])
    total = 0.0
    for a in itertools.product(range(A), repeat=n):
        q = math.prod(p_rows[i][a[i]] for i in range(n))
        if q > 0:
            total += q * (math.log(q) - math.log(joint[a]))
    return total
